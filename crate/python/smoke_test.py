"""Smoke test for the switchstab Python bindings.

Build and install the extension first:

    pip install --no-build-isolation -e crates/python

then run `python python/smoke_test.py`.
"""

import math

import switchstab_py as ss


def close(a, b, tol):
    return abs(a - b) <= tol


def main():
    system, chain, observation, cert, reference = ss.builtin_example(1)

    pi = chain.invariant_distribution()
    assert all(close(p, 0.5, 1e-12) for p in pi), pi

    assert close(observation.mean(), 1 / 0.3, 1e-9)
    assert close(observation.prob(2), 0.21, 1e-12)

    ok, residuals = ss.check_condp(system, cert)
    assert ok and len(residuals) == 4, residuals
    method, lhs = ss.condzeta_lhs(chain, observation, cert.zeta)
    assert method == "geometric" and lhs < 0, (method, lhs)
    _, general = ss.condzeta_lhs(chain, observation, cert.zeta, force_general=True)
    assert close(lhs, general, 1e-8)
    rate = ss.ergodic_rate(chain, observation, cert.zeta)
    assert close(rate, lhs / observation.mean(), 1e-12)

    k = cert.gains()
    assert close(k[0][0][0], reference[0][0][0], 5e-4)

    report = ss.monte_carlo(system, chain, observation, reference, [1.0, -1.0], horizon=200, trials=20, seed=1)
    assert 0.0 <= report["converged_fraction"] <= 1.0
    assert report["empirical_rate"] < 0

    new_cert, gains = ss.synthesize(system, chain, observation)
    ok, _ = ss.check_condp(system, new_cert)
    assert ok and len(gains) == 2

    feasible, _ = ss.fixed_gain_feasibility(system, chain, reference, observation)
    assert feasible

    system2, chain2, uniform, cert2, reference2 = ss.builtin_example(2)
    diag = ss.check_theorem2(chain2, 5, cert2.zeta)
    assert diag["pass"], diag
    assert chain2.monotonicity(50)[0]

    custom = ss.ModeChain([[0.1, 0.9], [0.9, 0.1]], 1)
    assert not custom.monotonicity(10)[0]

    try:
        ss.ModeChain([[1.0, 0.0], [0.0, 1.0]], 1)
    except ss.SwitchstabError as e:
        assert "irreducible" in str(e)
    else:
        raise AssertionError("identity chain accepted")

    checks = ss.reproduce_example(2)
    assert all(passed for _, passed, _ in checks), checks

    path = chain.sample_path(10, 3)
    assert path[0] == 1 and set(path) <= {1, 2}
    assert not math.isnan(ss.eta_exponent(chain, observation, cert.zeta, 1000, 1))
    print("smoke test passed")


if __name__ == "__main__":
    main()
