"""Smoke test for the hyperwalk extension.

Build first with `pip install -e crates/py --no-build-isolation`, then run
`python python/smoke_test.py`.
"""

import math

import hyperwalk as hw


def close(a, b, tol):
    assert abs(a - b) <= tol, f"{a} vs {b} (tol {tol})"


def uniform_free_group():
    m = hw.Measure.uniform(depth=6)
    assert len(m.atoms) == 4 and m.alpha == 1.0

    c = hw.Cocycle.solve(m)
    close(c.ell, 0.5, 1e-9)
    close(c.sigma_sq(), 0.75, 1e-9)
    assert c.sup_norm < 1e-9

    lambdas = [i * 0.025 for i in range(-8, 9)]
    lap = hw.Laplace(m, lambdas, [100, 200])
    assert lap.values(0)[8] == 0.0
    close(lap.curvature(0.5)["c"], 0.375, 0.01)

    rate = lap.rate(1, [0.5, 0.6])
    close(rate["values"][0], 0.0, 1e-9)
    assert rate["values"][1] > 0.0


def biased_free_group():
    m = hw.Measure.biased(depth=6, bias=0.4)
    c = hw.Cocycle.solve(m, seed=1)
    assert c.ell > 0.5
    assert c.residual < 1e-8

    trace = c.trace([0, 2, 1, 3, 0, 0])
    assert trace["m"][0] == 0.0
    assert all(b1 >= b0 for b0, b1 in zip(trace["bracket"], trace["bracket"][1:]))

    occ = c.occupation(200, 20, 200, seed=3)
    close(occ["estimate"]["estimate"], c.sigma_sq(), 0.05)

    path = hw.sample_path(m, 20, seed=7, targets=["a^inf"])
    assert len(path["kappa"]) == 21


def inequalities():
    assert hw.freedman_f(0.0) == 0.0
    assert hw.scalar_inequality([-1.0, 2.0], [0.5, 0.5], 0.5, 1.0)["margin"] >= 0.0
    assert hw.freedman_base([-0.5, 0.5], [0.5, 0.5], 1.0)["margin"] >= 0.0
    assert hw.fuzz_scalar(500, seed=1)["violations"] == 0
    assert hw.fuzz_base(500, seed=1)["violations"] == 0
    close(hw.azuma_bound(100, 0.3, 1.0), 2.0 * math.exp(-100 * 0.09 / 8.0), 1e-12)


def errors():
    try:
        hw.Measure.custom([("a", 0.5), ("b", 0.4)])
    except ValueError:
        pass
    else:
        raise AssertionError("probabilities not summing to 1 were accepted")


def pipeline():
    report = hw.run(preset="uniform", stages=["solve-psi"])
    outcomes = {a["name"]: a["outcome"] for a in report["assertions"]}
    assert outcomes and all(o == "pass" for o in outcomes.values()), outcomes
    assert report == hw.run(preset="uniform", workers=3, stages=["solve-psi"])


if __name__ == "__main__":
    for check in (uniform_free_group, biased_free_group, inequalities, errors, pipeline):
        check()
        print(f"ok {check.__name__}")
