import hashlib
import json

import numpy as np
import pytest
from hypothesis import given, strategies as st

from binqc.controls import ControlSequence
from binqc.errors import ArtifactExistsError, ConfigError, FormatError, InfeasibleConstraintError
from binqc.pipeline import (PipelineError, RunConfig, build_instance, config_from_values, load_config,
                            read_controls, run_pipeline, write_controls)


def _digest(path):
    return hashlib.sha256(path.read_bytes()).hexdigest()


@given(n=st.integers(1, 5), t=st.integers(1, 30), t_f=st.floats(0.1, 50.0), seed=st.integers(0, 2 ** 31))
def test_controls_csv_round_trip_is_bitwise(n, t, t_f, seed, tmp_path_factory):
    u = ControlSequence(np.random.default_rng(seed).uniform(size=(n, t)), t_f)
    path = tmp_path_factory.mktemp("csv") / "u.csv"
    write_controls(path, u)
    back = read_controls(path, t_f)
    assert np.array_equal(back.values, u.values) and back.t_f == u.t_f
    if t > 1:
        assert read_controls(path).t_f == pytest.approx(t_f, rel=1e-14)


def test_controls_csv_header(tmp_path):
    write_controls(tmp_path / "u.csv", ControlSequence.from_active([0, 1], 2, 1.0))
    assert (tmp_path / "u.csv").read_text().splitlines() == ["step,t_start,u_1,u_2", "1,0,1,0", "2,0.5,0,1"]


@pytest.mark.parametrize("text, line", [
    ("", 1),
    ("step,t,u_1\n1,0,1\n", 1),
    ("step,t_start,u_1\n1,0,1\n2,0.5\n", 3),
    ("step,t_start,u_1\n1,0,1\n3,0.5,0\n", 3),
    ("step,t_start,u_1\n1,0,abc\n", 2),
])
def test_controls_csv_errors(tmp_path, text, line):
    (tmp_path / "u.csv").write_text(text)
    with pytest.raises(FormatError, match=f"line {line}"):
        read_controls(tmp_path / "u.csv", 1.0)


def _write_config(tmp_path, text):
    p = tmp_path / "run.ini"
    p.write_text(text)
    return p


def test_config_parses_every_section(tmp_path):
    cfg = load_config(_write_config(tmp_path, """
[instance]
instance = NOT6
T = 30
alpha = 0.01
t_minup = 4
[relax]
method = admm
beta = 0.25
max_outer = 7
memory = 5
[round]
method = mt
time_limit = 3
[improve]
enabled = yes
r0 = 6
eta = 0.01
"""))
    assert (cfg.instance, cfg.T, cfg.alpha, cfg.t_minup) == ("NOT6", 30, 0.01, 4)
    assert (cfg.relax_method, cfg.beta, cfg.admm_max_outer, cfg.qn.memory) == ("admm", 0.25, 7, 5)
    assert (cfg.round_method, cfg.time_limit, cfg.tr.r0, cfg.tr.eta) == ("mt", 3.0, 6, 0.01)
    inst = build_instance(cfg)
    assert inst.params.n_steps == 30 and inst.params.t_minup == 4


@pytest.mark.parametrize("text, match", [
    ("[instance]\ninstanse = Energy2\n", "unknown key"),
    ("[solver]\nx = 1\n", "unknown section"),
    ("[instance]\nT = many\n", "T"),
    ("[round]\nmethod = greedy\n", "round method"),
    ("[improve]\nmode = constrained\n", "constrained improvement"),
    ("[improve]\nr0 = 1\n", "r0"),
    ("[relax]\nsos1_mode = sideways\n", "sos1_mode"),
])
def test_config_errors(tmp_path, text, match):
    with pytest.raises(ConfigError, match=match):
        load_config(_write_config(tmp_path, text))


def test_instance_consistency_checks():
    with pytest.raises(ConfigError, match="two controllers"):
        build_instance(config_from_values({("instance", "instance"): "CircuitH2",
                                           ("relax", "sos1_mode"): "substituted"}))
    with pytest.raises(ConfigError, match="qubits"):
        build_instance(config_from_values({("instance", "instance"): "CNOT10", ("instance", "q"): 3}))
    assert build_instance(config_from_values({("instance", "q"): 4})).name == "Energy4"


def test_energy2_full_run(tmp_path):
    res = run_pipeline(RunConfig(), tmp_path)
    names = sorted(p.name for p in tmp_path.iterdir())
    assert names == ["improve.csv", "improve.json", "plot_improve_history.csv", "plot_objective_tv.csv",
                     "plot_relax_history.csv", "relax.csv", "relax.json", "round.csv", "round.json", "summary.json"]
    summary = json.loads((tmp_path / "summary.json").read_text())
    assert summary["status"] == "ok" and set(summary["stages"]) == {"relax", "round", "improve"}
    for rep in summary["stages"].values():
        for key in ("objective", "tv_value", "sos1_penalty", "iterations", "wall_seconds", "status"):
            assert rep[key] is not None
    assert summary["stages"]["round"]["bound_certificates"]["deviation_margin"] >= 0
    assert res.controls["improve"].is_binary()
    assert read_controls(tmp_path / "round.csv", 2.0) == res.controls["round"]


def test_improve_off_gives_two_stage_artifacts(tmp_path):
    cfg = RunConfig(improve=False)
    run_pipeline(cfg, tmp_path)
    assert sorted(p.name for p in tmp_path.glob("*.csv") if not p.name.startswith("plot_")) == ["relax.csv",
                                                                                                 "round.csv"]
    assert not (tmp_path / "improve.json").exists()


def test_rerun_is_bitwise_identical(tmp_path):
    cfg = RunConfig(instance="CircuitH2", seed=4, round_method="mt")
    run_pipeline(cfg, tmp_path / "a")
    run_pipeline(cfg, tmp_path / "b")
    for name in ("relax.csv", "round.csv", "improve.csv"):
        assert _digest(tmp_path / "a" / name) == _digest(tmp_path / "b" / name)


def test_no_overwrite_without_force(tmp_path):
    run_pipeline(RunConfig(improve=False), tmp_path)
    before = _digest(tmp_path / "relax.csv")
    with pytest.raises(ArtifactExistsError):
        run_pipeline(RunConfig(improve=False, x0=0.3), tmp_path)
    assert _digest(tmp_path / "relax.csv") == before
    run_pipeline(RunConfig(improve=False, x0=0.3), tmp_path, force=True)
    assert _digest(tmp_path / "relax.csv") != before


def test_stages_one_at_a_time_match_full_run(tmp_path):
    cfg = RunConfig()
    run_pipeline(cfg, tmp_path / "full")
    for stage in ("relax", "round", "improve"):
        run_pipeline(cfg, tmp_path / "split", stages=(stage,))
    assert not (tmp_path / "split" / "summary.json").exists()
    for name in ("relax.csv", "round.csv", "improve.csv"):
        assert _digest(tmp_path / "full" / name) == _digest(tmp_path / "split" / name)


def test_missing_input_stage(tmp_path):
    with pytest.raises(FileNotFoundError, match="relax"):
        run_pipeline(RunConfig(), tmp_path, stages=("round",))


def test_stage_failure_keeps_partial_artifacts(tmp_path):
    cfg = config_from_values({("instance", "t_minup"): 50, ("round", "method"): "mt"})
    with pytest.raises(PipelineError) as info:
        run_pipeline(cfg, tmp_path)
    assert isinstance(info.value.__cause__, InfeasibleConstraintError)
    failure = json.loads((tmp_path / "failure.json").read_text())
    assert failure["stage"] == "round" and failure["error"] == "InfeasibleConstraintError"
    assert (tmp_path / "relax.csv").exists() and not (tmp_path / "round.csv").exists()
    assert json.loads((tmp_path / "summary.json").read_text())["status"] == "failed"


def test_cnot_rounding_without_one_active_rule(tmp_path):
    res = run_pipeline(RunConfig(instance="CNOT5", improve=False), tmp_path)
    u = res.controls["round"]
    assert u.shape == (2, 100) and u.is_binary()
    assert json.loads((tmp_path / "round.json").read_text())["extra"]["expanded"] is True


def test_warm_start_from_previous_controls(tmp_path):
    first = run_pipeline(RunConfig(instance="NOT6", improve=False), tmp_path / "a")
    cfg = config_from_values({("instance", "instance"): "NOT6", ("relax", "warm_start"): str(tmp_path / "a" / "relax.csv"),
                              ("improve", "enabled"): False})
    second = run_pipeline(cfg, tmp_path / "b")
    assert second.reports["relax"].objective <= first.reports["relax"].objective + 1e-12
    assert second.reports["relax"].iterations <= 2


def test_warm_start_shape_mismatch(tmp_path):
    write_controls(tmp_path / "w.csv", ControlSequence.constant(2, 7, 2.0))
    cfg = config_from_values({("relax", "warm_start"): str(tmp_path / "w.csv")})
    with pytest.raises(PipelineError, match="shape"):
        run_pipeline(cfg, tmp_path / "o")
