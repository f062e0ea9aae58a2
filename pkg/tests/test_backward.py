import numpy as np
import pytest
from hypothesis import given, strategies as st

from singbsde import (Domain, Driver, ExitInfo, ExitProfile, profile_v, IndependentDiffusion, InvalidParameterError,
                      NumericalError, RegressionConfig, RegressionDegeneracyError, SubDomain,
                      TerminalSpec, TimeGrid, brownian, canonical_driver, implicit_driver_step,
                      joint_exit, lsmc_solve, simulate_paths, terminal_payoff, terminal_payoffs,
                      theta_step, truncated_profile, truncation_ladder)

I02 = Domain.interval(0.0, 2.0)


def _exit(idx, exited=True, state=0.0):
    return ExitInfo(exited, idx, 0.01 * idx, np.array([state]))


def zero_driver(q=2.0):
    return Driver(q=q, eta=1.0, eval=lambda t, y, z=None: np.zeros_like(np.asarray(y, dtype=float)))


def test_terminal_payoff_examples():
    assert terminal_payoff(TerminalSpec.constant(5), _exit(9)) == 5
    g = lambda x: np.where(np.asarray(x)[..., 0] <= 0.0, np.inf, 1.0)
    assert terminal_payoff(TerminalSpec.markovian(g, 10), _exit(9, state=0.0)) == 10
    assert terminal_payoff(TerminalSpec.markovian(g, 10), _exit(9, state=2.0)) == 1
    assert terminal_payoff(TerminalSpec.xi2(7), _exit(9), _exit(3)) == 0
    assert terminal_payoff(TerminalSpec.xi1(7), _exit(9), _exit(3)) == 7
    assert terminal_payoff(TerminalSpec.constant(5), _exit(9, exited=False)) == 0
    with pytest.raises(InvalidParameterError):
        terminal_payoff(TerminalSpec.xi1(7), _exit(9))


def test_xi_payoffs_are_complementary():
    b = simulate_paths(brownian(1), [1.0], TimeGrid(8.0, 200), 2000, 1, I02)
    b = joint_exit(b, IndependentDiffusion(brownian(1), [1.0], I02), 2)
    total = terminal_payoffs(TerminalSpec.xi1(4.0), b) + terminal_payoffs(TerminalSpec.xi2(4.0), b)
    ok = b.exit_S.exited
    np.testing.assert_array_equal(total[ok], 4.0)
    np.testing.assert_array_equal(total[~ok], 0.0)
    for p in range(0, b.n_paths, 101):
        assert terminal_payoffs(TerminalSpec.xi1(4.0), b)[p] == terminal_payoff(
            TerminalSpec.xi1(4.0), b.exit_S[p], b.exit_tau[p])


def test_implicit_step_examples():
    f = canonical_driver(2)
    assert implicit_driver_step(1.1, f, 0.1, 0.0) == pytest.approx(1.0, abs=1e-13)
    assert implicit_driver_step(0.0, f, 0.1, 0.0) == 0.0
    assert implicit_driver_step(0.7, f, 0.0, 0.0) == 0.7


@given(st.floats(1.1, 6), st.floats(0.0, 1e3), st.floats(1e-4, 1.0))
def test_implicit_step_solves_equation(q, c, dt):
    y = implicit_driver_step(c, canonical_driver(q), dt, 0.0)
    assert 0 <= y <= c
    assert y + dt * y**q == pytest.approx(c, rel=1e-10, abs=1e-12)


def test_implicit_step_failure_carries_context():
    bad = Driver(q=2.0, eta=1.0, eval=lambda t, y, z=None: np.full_like(np.asarray(y, float), np.nan))
    with pytest.raises(NumericalError, match=r"c=1\.5.*dt=0\.1.*t=0\.3"):
        implicit_driver_step(1.5, bad, 0.1, 0.3)


@given(st.floats(1.1, 6), st.floats(0.01, 1e4), st.integers(1, 50))
def test_theta_step_is_exact_flow(q, k, n):
    f = canonical_driver(q)
    dt = 1.0 / n
    y = np.array([k])
    for i in range(n):
        y = theta_step(y, f, dt, 1.0 - (i + 1) * dt)
    assert y[0] == pytest.approx(truncated_profile(q, 1.0, k, 0.0), rel=1e-10)


def test_deterministic_horizon_value(horizon_bundle):
    field = lsmc_solve(horizon_bundle, canonical_driver(2), TerminalSpec.constant(10))
    assert field.y0 == pytest.approx(1 / 1.1, rel=0.01)


def test_implicit_scheme_is_first_order(horizon_bundle):
    reg = RegressionConfig(scheme="implicit")
    field = lsmc_solve(horizon_bundle, canonical_driver(2), TerminalSpec.constant(10), reg)
    # backward Euler overshoots the exact flow by O(dt)
    assert field.y0 == pytest.approx(1 / 1.1, rel=0.05)
    assert field.y0 > 1 / 1.1


def test_zero_volatility_matches_ode():
    c = brownian(1, sigma=0.0)
    b = simulate_paths(c, [0.0], TimeGrid(1.0, 50), 20, 0, Domain.whole_space(1))
    for spec in (TerminalSpec.constant(3.0), TerminalSpec.markovian(lambda x: np.full(len(x), 2.0), 5.0)):
        f = lsmc_solve(b, canonical_driver(3), spec)
        k = min(spec.k, 2.0) if spec.kind == "markovian" else spec.k
        assert f.y0 == pytest.approx(truncated_profile(3, 1.0, k, 0.0), rel=1e-12)
        assert f.y0_stderr <= 1e-12


def test_zero_terminal_zero_driver_is_exactly_zero(interval_bundle):
    f = lsmc_solve(interval_bundle, zero_driver(), TerminalSpec.constant(0.0))
    assert f.y0 == 0.0


def test_values_at_exit_equal_payoff(interval_bundle):
    b = interval_bundle
    f = lsmc_solve(b, canonical_driver(3), TerminalSpec.constant(5.0))
    for i in (3, 40, 120):
        y = f.values_at(b, i)
        at = b.exit_S.index == i
        np.testing.assert_array_equal(y[at], 5.0)
        assert np.all(np.isnan(y[b.exit_S.index < i]))
        live = y[b.exit_S.index > i]
        assert np.all((live >= 0) & (live <= 5.0))


def test_values_at_zero_reproduces_y0(interval_bundle):
    b = interval_bundle
    f = lsmc_solve(b, canonical_driver(3), TerminalSpec.constant(5.0))
    assert np.mean(f.values_at(b, 0)) == f.y0


def test_field_is_deterministic(interval_bundle):
    a = lsmc_solve(interval_bundle, canonical_driver(3), TerminalSpec.constant(5.0))
    b = lsmc_solve(interval_bundle, canonical_driver(3), TerminalSpec.constant(5.0))
    assert a.y0 == b.y0
    np.testing.assert_array_equal(a.values_at(interval_bundle, 17), b.values_at(interval_bundle, 17))


def test_exit_value_near_oracle(interval_bundle):
    # 4000 paths and 200 steps: a loose version of the full-scale check
    f = lsmc_solve(interval_bundle, canonical_driver(3), TerminalSpec.constant(5.0),
                   RegressionConfig(on_degenerate="reduce"))
    assert f.y0 == pytest.approx(1.0924824421652568, rel=0.1)


def test_degeneracy_names_the_step():
    b = simulate_paths(brownian(1), [1.0], TimeGrid(8.0, 100), 40, 1, I02)
    with pytest.raises(RegressionDegeneracyError, match="step"):
        lsmc_solve(b, canonical_driver(3), TerminalSpec.constant(5.0), RegressionConfig(degree=3))
    f = lsmc_solve(b, canonical_driver(3), TerminalSpec.constant(5.0),
                   RegressionConfig(degree=3, on_degenerate="reduce"))
    assert 0 <= f.y0 <= 5


def test_regression_config_validation():
    with pytest.raises(InvalidParameterError):
        RegressionConfig(degree=-1)
    with pytest.raises(InvalidParameterError):
        RegressionConfig(basis="splines")
    with pytest.raises(InvalidParameterError):
        RegressionConfig(ridge=-1.0)
    with pytest.raises(InvalidParameterError):
        RegressionConfig(invdist_floor=-0.1)


def test_ridge_shrinks_but_solves(interval_bundle):
    f = lsmc_solve(interval_bundle, canonical_driver(3), TerminalSpec.constant(5.0),
                   RegressionConfig(ridge=1e-6, on_degenerate="reduce"))
    assert 0.9 < f.y0 < 1.3


def test_deterministic_ladder(horizon_bundle):
    lad = truncation_ladder(horizon_bundle, canonical_driver(2), TerminalSpec.constant, [1, 10, 100, 1000])
    np.testing.assert_allclose(lad.y0_sequence, [0.5, 1 / 1.1, 1 / 1.01, 1 / 1.001], rtol=1e-10)
    assert lad.monotone_ok


def test_repeated_rung_has_zero_increment(interval_bundle):
    lad = truncation_ladder(interval_bundle, canonical_driver(3), TerminalSpec.constant, [5, 5, 10],
                            RegressionConfig(on_degenerate="reduce"))
    assert lad.increments[0] == 0.0


def test_ladder_validation(horizon_bundle):
    with pytest.raises(InvalidParameterError):
        truncation_ladder(horizon_bundle, canonical_driver(2), TerminalSpec.constant, [1])
    with pytest.raises(InvalidParameterError):
        truncation_ladder(horizon_bundle, canonical_driver(2), TerminalSpec.constant, [10, 1])


def test_xi2_with_tau_first_is_zero():
    b = simulate_paths(brownian(1), [1.0], TimeGrid(8.0, 200), 1000, 4, I02)
    b = joint_exit(b, SubDomain(Domain.interval(0.5, 1.5)), 0)
    lad = truncation_ladder(b, canonical_driver(3), TerminalSpec.xi2, [5, 50],
                            RegressionConfig(on_degenerate="reduce"))
    np.testing.assert_array_equal(lad.y0_sequence, 0.0)


def test_xi1_dominated_by_constant():
    b = simulate_paths(brownian(1), [1.0], TimeGrid(8.0, 200), 3000, 6, I02, True)
    b = joint_exit(b, IndependentDiffusion(brownian(1), [1.0], I02, True), 7)
    reg = RegressionConfig(on_degenerate="reduce")
    a = lsmc_solve(b, canonical_driver(3), TerminalSpec.xi1(10.0), reg)
    c = lsmc_solve(b, canonical_driver(3), TerminalSpec.constant(10.0), reg)
    assert a.y0 <= c.y0 + 3 * np.hypot(a.y0_stderr, c.y0_stderr)


def test_z_of_constant_solution_is_small(horizon_bundle):
    reg = RegressionConfig(estimate_z=True, scheme="implicit")
    f = lsmc_solve(horizon_bundle, zero_driver(), TerminalSpec.constant(2.0), reg)
    assert f.y0 == pytest.approx(2.0, rel=1e-12)
    z = f.z_at(horizon_bundle, 5)
    live = horizon_bundle.exit_S.index > 5
    # Y = 2 is constant, so the centred target vanishes
    assert np.max(np.abs(z[live])) < 1e-10


def test_z_requires_estimation(interval_bundle):
    f = lsmc_solve(interval_bundle, canonical_driver(3), TerminalSpec.constant(2.0),
                   RegressionConfig(on_degenerate="reduce"))
    with pytest.raises(InvalidParameterError):
        f.z_at(interval_bundle, 0)


def test_invdist_top_rung_near_profile(interval_bundle):
    reg = RegressionConfig(basis="poly_invdist", on_degenerate="reduce")
    exact = profile_v(1.0, ExitProfile.finite(40.0, 2.0, 3.0))
    y = lsmc_solve(interval_bundle, canonical_driver(3), TerminalSpec.constant(40.0), reg).y0
    assert abs(y - exact) / exact < 0.05
