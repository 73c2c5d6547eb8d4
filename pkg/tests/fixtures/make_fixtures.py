"""Regenerate the frozen regression fixtures. Run once; commit the outputs.

    python3 tests/fixtures/make_fixtures.py
"""
import json
from pathlib import Path

import numpy as np

from binqc.controls import ControlSequence
from binqc.instances import build_cnot_instance, build_energy_instance
from binqc.objectives import adjoint_gradient, evaluate
from binqc.oracles import fd_gradient, gradient_error_ratio
from binqc.pipeline import write_controls
from binqc.relax import pgrape_solve

HERE = Path(__file__).parent


def main():
    energy = build_energy_instance(2)
    u, rep = pgrape_solve(energy)
    write_controls(HERE / "energy2_pgrape.csv", u)
    (HERE / "energy2_pgrape.json").write_text(json.dumps({"objective": rep.objective}, indent=1) + "\n")

    cnot = build_cnot_instance(5)
    half = ControlSequence.constant(2, cnot.params.n_steps, cnot.params.t_f)
    g = adjoint_gradient(cnot, half)
    # freeze only after the independent check agrees
    assert gradient_error_ratio(g, fd_gradient(cnot, half)) <= 1.0
    np.savetxt(HERE / "cnot5_gradient_half.txt", g, fmt="%.17g")

    rng = np.random.default_rng(7)
    t = cnot.params.n_steps
    u_hat = rng.integers(0, 2, (2, t)).astype(float)
    u_bar = u_hat.copy()
    cols = rng.choice(t, 5, replace=False)
    u_bar[:, cols] = 1.0 - u_bar[:, cols]
    f_hat = evaluate(cnot, ControlSequence(u_hat, cnot.params.t_f))
    f_bar = evaluate(cnot, ControlSequence(u_bar, cnot.params.t_f))
    np.savetxt(HERE / "cnot5_pair.txt", np.vstack([u_hat, u_bar]), fmt="%d")
    (HERE / "cnot5_pair.json").write_text(json.dumps({"actual_decrease": f_hat - f_bar}, indent=1) + "\n")


if __name__ == "__main__":
    main()
