"""Relax -> round -> improve pipeline with on-disk artifacts.

Each stage writes its controls (CSV) and its report (JSON) into the run
directory; ``summary.json`` aggregates the reports. Existing artifacts are
never overwritten unless ``force`` is set. On a stage failure the artifacts of
earlier stages stay in place and ``failure.json`` records what went wrong.
"""
from __future__ import annotations

import configparser
import csv
import dataclasses
import json
import logging
import math
import time
from dataclasses import dataclass, field
from pathlib import Path
from typing import Optional

import numpy as np

from . import report as rp
from .alb import ConstrainedMode, TrustRegionConfig, TvMode, alb_improve
from .controls import ControlSequence
from .errors import ArtifactExistsError, BinqcError, ConfigError, FormatError
from .instances import (InstanceParams, QuantumInstance, build_named, collapse_combinations, combination_weights,
                        expand_combinations)
from .objectives import PenaltyConfig, Sos1Mode
from .relax import AdmmConfig, QuasiNewtonConfig, admm_solve, pgrape_solve
from .rounding import (MaxSwitching, MinUpTime, Unconstrained, cia_solve, round_report, satisfies,
                       sum_up_rounding)

log = logging.getLogger(__name__)

STAGES = ("relax", "round", "improve")
ROUND_METHODS = ("sur", "mt", "ms")


# -- configuration ----------------------------------------------------------------------------

def _bool(text):
    t = text.strip().lower()
    if t in ("1", "yes", "true", "on"):
        return True
    if t in ("0", "no", "false", "off"):
        return False
    raise ValueError(f"not a boolean: {text!r}")


# section -> key -> parser; keys in [instance] mirror the parameter table
_SCHEMA = {
    "instance": {"instance": str, "q": int, "t_f": float, "T": int, "alpha": float, "t_minup": int,
                 "s_max": int, "rho": float, "target": str, "seed": int},
    "relax": {"method": str, "sos1_mode": str, "x0": float, "warm_start": str, "beta": float, "delta": float, "max_outer": int,
              "memory": int, "max_iterations": int, "projected_gradient_tol": float},
    "round": {"method": str, "time_limit": float},
    "improve": {"enabled": _bool, "mode": str, "r0": int, "r_bar": int, "eta": float, "max_outer": int,
                "time_limit": float},
}


@dataclass
class RunConfig:
    instance: str = "Energy2"
    q: Optional[int] = None
    t_f: Optional[float] = None
    T: Optional[int] = None
    alpha: Optional[float] = None
    t_minup: Optional[int] = None
    s_max: Optional[int] = None
    rho: Optional[float] = None
    target: Optional[str] = None
    seed: Optional[int] = None
    relax_method: str = "pgrape"
    sos1_mode: Optional[str] = None
    x0: float = 0.5
    warm_start: Optional[str] = None        # controls CSV to start from instead of the constant x0
    beta: float = 0.5
    delta: float = 1e-6
    admm_max_outer: int = 100
    qn: QuasiNewtonConfig = field(default_factory=QuasiNewtonConfig)
    round_method: str = "sur"
    time_limit: float = 60.0
    improve: bool = True
    improve_mode: Optional[str] = None      # tv | constrained; None picks from the rounding method
    tr: TrustRegionConfig = field(default_factory=TrustRegionConfig)

    def validate(self):
        if self.relax_method not in ("pgrape", "admm"):
            raise ConfigError(f"relax method must be pgrape or admm, got {self.relax_method!r}")
        if self.round_method not in ROUND_METHODS:
            raise ConfigError(f"round method must be one of {ROUND_METHODS}, got {self.round_method!r}")
        if self.improve_mode not in (None, "tv", "constrained"):
            raise ConfigError(f"improve mode must be tv or constrained, got {self.improve_mode!r}")
        if self.improve_mode == "constrained" and self.round_method == "sur":
            raise ConfigError("constrained improvement needs round method mt or ms")
        if self.sos1_mode is not None:
            try:
                Sos1Mode(self.sos1_mode)
            except ValueError:
                raise ConfigError(f"unknown sos1_mode {self.sos1_mode!r}") from None
        if not self.time_limit > 0:
            raise ConfigError("time_limit must be positive")
        return self

    def to_dict(self) -> dict:
        return dataclasses.asdict(self)


def load_config(path) -> RunConfig:
    """Parse an INI-style run file. Unknown sections or keys are errors."""
    cp = configparser.ConfigParser(interpolation=None)
    cp.optionxform = str
    try:
        with open(path, encoding="utf-8") as fh:
            cp.read_file(fh)
    except configparser.Error as exc:
        raise ConfigError(f"{path}: {exc}") from None
    values = {}
    for section in cp.sections():
        if section not in _SCHEMA:
            raise ConfigError(f"{path}: unknown section [{section}]")
        for key, raw in cp.items(section):
            if key not in _SCHEMA[section]:
                raise ConfigError(f"{path}: unknown key {key!r} in [{section}]")
            try:
                values[(section, key)] = _SCHEMA[section][key](raw)
            except ValueError as exc:
                raise ConfigError(f"{path}: [{section}] {key}: {exc}") from None
    return config_from_values(values)


def config_from_values(values: dict) -> RunConfig:
    cfg = RunConfig()
    qn, tr = {}, {}
    for (section, key), val in values.items():
        if section == "instance":
            setattr(cfg, key, val)
        elif section == "relax":
            if key == "method":
                cfg.relax_method = val
            elif key == "max_outer":
                cfg.admm_max_outer = val
            elif key in ("memory", "max_iterations", "projected_gradient_tol"):
                qn[key] = val
            else:
                setattr(cfg, key, val)
        elif section == "round":
            if key == "method":
                cfg.round_method = val
            else:
                cfg.time_limit = val
        elif section == "improve":
            if key == "enabled":
                cfg.improve = val
            elif key == "mode":
                cfg.improve_mode = val
            elif key == "time_limit":
                tr["subproblem_time_limit"] = val
            else:
                tr[key] = val
    try:
        cfg.qn = QuasiNewtonConfig(**qn)
        cfg.tr = TrustRegionConfig(**tr)
    except ValueError as exc:
        raise ConfigError(str(exc)) from None
    return cfg.validate()


def build_instance(cfg: RunConfig) -> QuantumInstance:
    """The configured instance, with any parameter-table overrides applied."""
    name = cfg.instance
    if cfg.q is not None and name.rstrip("0123456789") == "Energy":
        name = f"Energy{cfg.q}"
    if name in ("CNOT", "NOT") and cfg.t_f is not None:
        name = f"{name}{cfg.t_f:g}"
    try:
        inst = build_named(name, target=cfg.target, seed=cfg.seed, rho=cfg.rho)
    except ValueError as exc:
        raise ConfigError(str(exc)) from None
    if cfg.q is not None and cfg.q != inst.n_qubits:
        raise ConfigError(f"{inst.name} has {inst.n_qubits} qubits, config says q={cfg.q}")
    p = inst.params
    params = InstanceParams(p.t_f if cfg.t_f is None else cfg.t_f, p.n_steps if cfg.T is None else cfg.T,
                            p.alpha if cfg.alpha is None else cfg.alpha,
                            p.t_minup if cfg.t_minup is None else cfg.t_minup,
                            p.s_max if cfg.s_max is None else cfg.s_max,
                            p.rho if cfg.rho is None else cfg.rho)
    mode = inst.sos1_mode if cfg.sos1_mode is None else Sos1Mode(cfg.sos1_mode)
    if mode is Sos1Mode.SUBSTITUTED and inst.n_controllers != 2:
        raise ConfigError(f"substituted SOS1 mode needs two controllers; {inst.name} has {inst.n_controllers}")
    return dataclasses.replace(inst, params=params, sos1_mode=mode)


# -- controls CSV -------------------------------------------------------------------------------

def write_controls(path, controls: ControlSequence) -> None:
    """``step,t_start,u_1..u_N``, one row per step, 17 significant digits."""
    n, t = controls.shape
    dt = controls.dt
    with open(path, "w", newline="", encoding="utf-8") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(["step", "t_start"] + [f"u_{j + 1}" for j in range(n)])
        for k in range(t):
            w.writerow([k + 1, f"{k * dt:.17g}"] + [f"{x:.17g}" for x in controls.values[:, k]])


def read_controls(path, t_f: Optional[float] = None) -> ControlSequence:
    """Inverse of :func:`write_controls`. ``t_f`` is inferred from the step starts when not given."""
    with open(path, newline="", encoding="utf-8") as fh:
        rows = list(csv.reader(fh))
    if not rows:
        raise FormatError("empty controls file", 1)
    header = rows[0]
    n = len(header) - 2
    if n < 1 or header[:2] != ["step", "t_start"] or header[2:] != [f"u_{j + 1}" for j in range(n)]:
        raise FormatError(f"bad header {','.join(header)!r}", 1)
    starts, cols = [], []
    for i, row in enumerate(rows[1:], start=2):
        if len(row) != n + 2:
            raise FormatError(f"expected {n + 2} fields, got {len(row)}", i)
        try:
            if int(row[0]) != i - 1:
                raise FormatError(f"step {row[0]} out of order", i)
            starts.append(float(row[1]))
            cols.append([float(x) for x in row[2:]])
        except ValueError as exc:
            raise FormatError(str(exc), i) from None
    if not cols:
        raise FormatError("no control rows", 2)
    t = len(cols)
    if t_f is None:
        if t < 2:
            raise FormatError("cannot infer t_f from a single step; pass t_f", 2)
        t_f = starts[1] * t
    dt = t_f / t
    if not np.allclose(starts, dt * np.arange(t), rtol=1e-12, atol=1e-12 * t_f):
        raise FormatError(f"step starts do not match t_f={t_f} with {t} steps", 2)
    return ControlSequence(np.array(cols).T, t_f)


# -- artifacts ---------------------------------------------------------------------------------

def _dump(obj) -> str:
    return json.dumps(obj, sort_keys=True, indent=2, ensure_ascii=False, default=_json_default) + "\n"


def _json_default(o):
    if isinstance(o, (np.floating, np.integer)):
        return o.item()
    if isinstance(o, np.ndarray):
        return o.tolist()
    if isinstance(o, Path):
        return str(o)
    if dataclasses.is_dataclass(o):
        return dataclasses.asdict(o)
    raise TypeError(f"not JSON serialisable: {type(o).__name__}")


def _clean(obj):
    # JSON has no inf/nan; keep them readable as strings
    if isinstance(obj, float) and not math.isfinite(obj):
        return str(obj)
    if isinstance(obj, dict):
        return {k: _clean(v) for k, v in obj.items()}
    if isinstance(obj, (list, tuple)):
        return [_clean(v) for v in obj]
    return obj


class RunDirectory:
    def __init__(self, root, force: bool = False):
        self.root = Path(root)
        self.force = force
        self.root.mkdir(parents=True, exist_ok=True)

    def path(self, name) -> Path:
        return self.root / name

    def claim(self, names):
        """Fail before doing any work if an artifact exists and ``force`` is off."""
        if self.force:
            return
        taken = [n for n in names if (self.root / n).exists()]
        if taken:
            raise ArtifactExistsError(f"{self.root}: would overwrite {', '.join(taken)} (use --force)")

    def write_json(self, name, obj):
        self.claim([name])
        self.path(name).write_text(_dump(_clean(obj)), encoding="utf-8")

    def write_controls(self, name, controls):
        self.claim([name])
        write_controls(self.path(name), controls)

    def write_rows(self, name, header, rows):
        self.claim([name])
        with open(self.path(name), "w", newline="", encoding="utf-8") as fh:
            w = csv.writer(fh, lineterminator="\n")
            w.writerow(header)
            for r in rows:
                w.writerow([f"{x:.17g}" if isinstance(x, float) else x for x in r])


STAGE_FILES = {"relax": ("relax.csv", "relax.json", "plot_relax_history.csv"),
               "round": ("round.csv", "round.json"),
               "improve": ("improve.csv", "improve.json", "plot_improve_history.csv")}
SUMMARY_FILES = ("summary.json", "plot_objective_tv.csv")


# -- stages ------------------------------------------------------------------------------------

def _expanded(instance):
    return instance.sos1_mode is Sos1Mode.OFF


def _rounding_constraint(cfg, instance):
    if cfg.round_method == "mt":
        return MinUpTime(instance.params.t_minup)
    if cfg.round_method == "ms":
        return MaxSwitching(instance.params.s_max)
    return Unconstrained()


def run_relax(cfg: RunConfig, instance: QuantumInstance):
    p = instance.params
    x0 = ControlSequence.constant(instance.n_controllers, p.n_steps, p.t_f, cfg.x0)
    if cfg.warm_start:
        warm = read_controls(cfg.warm_start, p.t_f)
        if warm.shape != x0.shape:
            raise ConfigError(f"warm start {cfg.warm_start} has shape {warm.shape}, instance needs {x0.shape}")
        x0 = warm
    penalty = PenaltyConfig(rho=p.rho, sos1_mode=instance.sos1_mode)
    if cfg.relax_method == "pgrape":
        return pgrape_solve(instance, penalty=penalty, x0=x0, config=cfg.qn)
    admm = AdmmConfig(beta=cfg.beta, alpha=p.alpha, delta=cfg.delta, max_outer=cfg.admm_max_outer, inner=cfg.qn)
    return admm_solve(instance, penalty=penalty, config=admm, x0=x0)


def run_round(cfg: RunConfig, instance: QuantumInstance, u_c: ControlSequence):
    """Round ``u_c``. Problems without the one-active rule are rounded over their on/off patterns."""
    work, w = instance, u_c
    if _expanded(instance):
        work, w = expand_combinations(instance), combination_weights(u_c)
    constraint = _rounding_constraint(cfg, instance)
    start = time.perf_counter()
    if cfg.round_method == "sur":
        u_b, status, extra = sum_up_rounding(w), rp.CONVERGED, {}
    else:
        res = cia_solve(w, constraint, cfg.time_limit)
        u_b, status = res.controls, res.status
        extra = {"cia_objective": res.objective, "nodes": res.nodes}
    wall = time.perf_counter() - start
    extra.update(method=cfg.round_method, constraint=str(constraint), switches=u_b.switch_counts().tolist(),
                 expanded=_expanded(instance))
    rep = round_report("round", work, w, u_b, status, wall, extra)
    out = collapse_combinations(u_b, instance.n_controllers) if _expanded(instance) else u_b
    return out, rep


def improve_mode(cfg: RunConfig, instance: QuantumInstance):
    mode = cfg.improve_mode or ("tv" if cfg.round_method == "sur" else "constrained")
    if mode == "tv":
        return TvMode(instance.params.alpha)
    return ConstrainedMode(_rounding_constraint(cfg, instance))


def run_improve(cfg: RunConfig, instance: QuantumInstance, u_b: ControlSequence):
    work, w = instance, u_b
    if _expanded(instance):
        work, w = expand_combinations(instance), combination_weights(u_b)
    u, rep = alb_improve(work, None, w, improve_mode(cfg, instance), cfg.tr)
    rep.extra["expanded"] = _expanded(instance)
    mode = improve_mode(cfg, instance)
    if isinstance(mode, ConstrainedMode) and not satisfies(u, mode.constraint):
        raise AssertionError("improvement left the constrained set")
    out = collapse_combinations(u, instance.n_controllers) if _expanded(instance) else u
    return out, rep


@dataclass
class PipelineResult:
    reports: dict
    controls: dict
    status: str
    out_dir: Path


def run_pipeline(cfg: RunConfig, out_dir, force: bool = False, stages=STAGES, inputs: Optional[dict] = None):
    """Run ``stages`` in order, persisting each one.

    Controls for a stage's input come from ``inputs`` or, failing that, from
    the previous stage's CSV in ``out_dir``. Only a full run writes
    ``summary.json`` and the objective/TV plot data.
    """
    cfg.validate()
    run = RunDirectory(out_dir, force)
    full = tuple(stages) == STAGES
    stages = [s for s in STAGES if s in stages and (s != "improve" or cfg.improve or not full)]
    run.claim([f for s in stages for f in STAGE_FILES[s]] + (list(SUMMARY_FILES) if full else [])
              + ["failure.json"])
    instance = build_instance(cfg)
    controls = dict(inputs or {})
    reports, current = {}, None
    try:
        for stage in stages:
            current = stage
            log.info("%s: stage %s", instance.name, stage)
            if stage == "relax":
                u, rep = run_relax(cfg, instance)
            elif stage == "round":
                u, rep = run_round(cfg, instance, _input(controls, "relax", run, instance))
            else:
                u, rep = run_improve(cfg, instance, _input(controls, "round", run, instance))
            controls[stage] = u
            reports[stage] = rep
            csv_name, json_name = STAGE_FILES[stage][:2]
            run.write_controls(csv_name, u)
            run.write_json(json_name, rep.to_dict())
            if stage in ("relax", "improve"):
                _write_history(run, stage, rep)
    except (BinqcError, ArithmeticError, ValueError, AssertionError) as exc:
        failure = {"stage": current, "error": type(exc).__name__, "message": str(exc)}
        run.write_json("failure.json", failure)
        if full:
            _write_summary(run, cfg, instance, reports, "failed", failure)
        raise PipelineError(failure) from exc
    if full:
        _write_summary(run, cfg, instance, reports, "ok", None)
    return PipelineResult(reports, controls, "ok", run.root)


class PipelineError(BinqcError):
    def __init__(self, failure: dict):
        super().__init__(f"stage {failure['stage']} failed: {failure['error']}: {failure['message']}")
        self.failure = failure


def _input(controls, stage, run, instance):
    if stage in controls:
        return controls[stage]
    path = run.path(STAGE_FILES[stage][0])
    if not path.exists():
        raise FileNotFoundError(f"{path} not found; run the {stage} stage first")
    return read_controls(path, instance.params.t_f)


def _write_history(run, stage, rep):
    hist = rep.extra.get("history", [])
    if stage == "relax":
        if hist and isinstance(hist[0], dict):
            rows = [(h["iteration"], h["objective"], h["tv"], h["residual"]) for h in hist]
            run.write_rows(STAGE_FILES[stage][2], ["iteration", "objective", "tv", "residual"], rows)
        else:
            run.write_rows(STAGE_FILES[stage][2], ["iteration", "penalized_objective"],
                           [(i + 1, float(v)) for i, v in enumerate(hist)])
    else:
        rows = [(h["outer"], h["radius"], h["predicted"], h["actual"]) for h in hist]
        run.write_rows(STAGE_FILES[stage][2], ["outer", "radius", "predicted_decrease", "actual_decrease"], rows)


def _write_summary(run, cfg, instance, reports, status, failure):
    summary = {"instance": instance.name, "status": status, "failure": failure, "config": cfg.to_dict(),
               "stages": {k: v.to_dict() for k, v in reports.items()}}
    run.write_json("summary.json", summary)
    run.write_rows("plot_objective_tv.csv", ["stage", "objective", "tv"],
                   [(k, v.objective, v.tv_value) for k, v in reports.items()])
