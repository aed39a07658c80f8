"""Smoke test for the `cbl` extension module.

Build and run from the repository root:

    cargo build --release -p cbl-python
    cp target/release/libcbl.so python/cbl.abi3.so
    python3 python/smoke_test.py

or install with `pip install ./crates/python` (needs maturin).
"""

import math
import os
import sys
import tempfile

sys.path.insert(0, os.path.dirname(os.path.abspath(__file__)))

import cbl  # noqa: E402


def main():
    g = cbl.Grid(32)
    y = g.nodes()
    assert len(g) == 33 and abs(sum(g.weights()) - 2.0) < 1e-12

    # Poisson round trip on a smooth profile.
    ps = cbl.PoissonSolver(g, 3)
    omega = [complex((1 - t * t) * math.exp(t), math.sin(2 * t)) for t in y]
    psi = ps.solve(omega)
    back = ps.laplacian(psi)
    err = max(abs(a - b) for a, b, t in zip(back, omega, y) if abs(t) < 1)
    assert err < 1e-8, err
    gap = max(abs(a - b) for a, b in zip(psi, ps.solve_green(omega)))
    assert gap < 1e-8, gap
    assert cbl.greens_gk(2, 1.0, 0.3) == 0.0

    jk = cbl.Jk(g, 2)
    value, _, _ = jk.norm_estimate()
    assert 0.1 < value < 10, value
    assert jk.adjoint_defect() < 1e-4

    w = [0.01 * math.sin(math.pi * (t + 1)) for t in y]
    base = cbl.BaseFlow.from_w(g, w, delta0=math.inf)
    norms = cbl.kernel_norms(g, base, 4)
    assert len(norms["k1"]) == 4 and all(v > 0 for v in norms["k1"])

    theta = [complex(math.sin(math.pi * (t + 1) / 2), 0) for t in y]
    assert cbl.energy_theta(g, 1, theta, 1e-2) > 0

    d = cbl.linear_decay(cbl.Grid(48), 1e-2, 1, horizon=6.0)
    assert d["rate"] > 0 and d["r_squared"] > 0.9, d["rate"]

    r = cbl.budget_run(1e-2, 1e-2, n_y=32, k_max=4, horizon=0.2)
    assert r["classification"] == "stable", r["classification"]

    with tempfile.TemporaryDirectory() as tmp:
        code, out = cbl.run_experiment(
            "verify-greens", '{"n_y": 32, "k": [1], "samples": 5}', out=os.path.join(tmp, "g")
        )
        assert code == 0, code
        text, rc = cbl.report(out)
        assert rc == 0 and "PASS" in text
    try:
        cbl.run_experiment("verify-greens", '{"n_y": 31}')
    except ValueError as e:
        assert "n_y" in str(e)
    else:
        raise AssertionError("odd n_y accepted")
    try:
        cbl.Grid(3)
    except cbl.CblError:
        pass
    else:
        raise AssertionError("tiny grid accepted")
    print("smoke test ok")


if __name__ == "__main__":
    main()
