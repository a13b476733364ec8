"""Smoke test for the `ofo` extension module.

Build and install first:
    maturin develop -m crates/python/Cargo.toml
"""

from pathlib import Path

import ofo

ROOT = Path(__file__).resolve().parent.parent


def main():
    trace = ofo.run_plant("toy", [-0.8, -0.5], [[1.0, 0.0], [0.0, 1.0]], 0.01, 1000.0, 100)
    hit = next(k for k, phi in zip(trace["k"], trace["phi"]) if abs(phi + 1.625) <= 1e-3)
    assert 77 <= hit <= 87, hit
    print(f"toy fixed: within tolerance at iteration {hit}")

    adaptive = ofo.run_plant("toy", [-0.8, -0.5], [[1.0, 0.0], [0.0, 1.0]], 0.01, 1000.0, 100, mode="sdp-full")
    hit = next(k for k, phi in zip(adaptive["k"], adaptive["phi"]) if abs(phi + 1.625) <= 1e-3)
    assert hit <= 10, hit
    print(f"toy adaptive: within tolerance at iteration {hit}")

    w, active = ofo.solve_qp([[1.0, 0.0], [0.0, 1.0]], [-2.0, 0.5], [[1.0, 0.0]], [1.0])
    assert abs(w[0] - 1.0) < 1e-9 and abs(w[1] + 0.5) < 1e-9 and active == [0]
    print(f"qp: w = {w}, active = {active}")

    delta, p, t = ofo.adapt_metric([[1.0, 0.0], [0.0, 1.0]], [[0.0, 0.0], [0.0, 0.0]], 5.0)
    assert abs(delta[0][0] - 4.0) < 1e-9 and p == 0.0 and t == 5.0
    print(f"metric update with zero sensitivity: p = {p}, t = {t}")

    alpha = ofo.adapt_step(1.0, -2.0, 0.25, 0.5, 1e-6, 10.0)
    assert abs(alpha - 1.0) < 1e-12
    print(f"step: {alpha}")

    summary = ofo.run_scenario(str(ROOT / "configs" / "cstr_validation.toml"))
    ratio = summary["runs"]["adaptive"]["ratio"]
    print(f"cstr validation: adaptive error ratio {ratio:.3f}")
    assert ratio <= 1.0

    cstr = ofo.run_plant("cstr", [350.15, 10.15], [[1.0, 0.0], [0.0, 1.0]], 120.0, 1000.0, 30,
                         mode="sdp-full", step_adaptation=True, reference=1.2)
    assert min(min(y) for y in cstr["y"]) >= 0.0
    print(f"cstr: final cB = {cstr['y'][-1][1]:.4f}")
    print("smoke test passed")


if __name__ == "__main__":
    main()
