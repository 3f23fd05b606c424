import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from qtrend.errors import ConvergenceError, DimensionError
from qtrend.solver import (CouplingTerm, InnerControls, QuantileSpec, WeightMask, check_loss,
                           count_knots, objective, project_noncrossing, prox_check, soft_threshold,
                           solve_block)

from oracles import (brute_monotone_projection, dense_diff, dense_objective, grid_argmin,
                     lp_reference, rho)

ADMM = InnerControls(method="admm")


def test_check_loss_examples():
    assert check_loss([1.0, -1.0], 0.5) == 1.0
    assert check_loss([1.0, -1.0], 0.1) == pytest.approx(1.0, abs=1e-15)
    assert check_loss([1.0, -1.0], 0.5, WeightMask([0, 1])) == 0.5


def test_check_loss_matches_direct_summation(rng):
    r = rng.normal(size=200)
    for tau in (0.05, 0.3, 0.9):
        assert check_loss(r, tau) == pytest.approx(float(np.sum(rho(r, tau))), rel=1e-13)


@pytest.mark.parametrize("tau", [0.0, 1.0, -0.2])
def test_check_loss_rejects_bad_levels(tau):
    with pytest.raises(ValueError):
        check_loss([1.0], tau)


def test_prox_check_examples():
    assert prox_check(0.0, 0.3, 2.0) == 0.0
    assert prox_check(2.0, 0.5, 1.0) == pytest.approx(1.5)
    assert prox_check(-1.0, 0.1, 1.0) == pytest.approx(-0.1)


@given(v=st.floats(-5, 5), tau=st.floats(0.01, 0.99), c=st.floats(0.01, 3))
@settings(max_examples=60, deadline=None)
def test_prox_check_against_scalar_grid(v, tau, c):
    f = lambda x: c * rho(x, tau) + 0.5 * (x - v) ** 2
    assert prox_check(v, tau, c) == pytest.approx(grid_argmin(f, -10, 10), abs=1e-6)


def test_soft_threshold_examples(rng):
    np.testing.assert_array_equal(soft_threshold(np.array([3.0, -0.5]), 1.0), [2.0, 0.0])
    v = rng.normal(size=7)
    np.testing.assert_array_equal(soft_threshold(v, 0.0), v)
    for x in rng.normal(scale=2, size=20):
        f = lambda z: 0.7 * np.abs(z) + 0.5 * (z - x) ** 2
        assert soft_threshold(x, 0.7) == pytest.approx(grid_argmin(f, -10, 10), abs=1e-6)


def test_projection_examples():
    np.testing.assert_array_equal(project_noncrossing([1.0, 2.0, 3.0]), [1, 2, 3])
    np.testing.assert_allclose(project_noncrossing([3.0, 1.0, 2.0]), [2, 2, 2])
    np.testing.assert_allclose(project_noncrossing([2.0, 1.0]), [1.5, 1.5])


def test_projection_is_idempotent_and_monotone(rng):
    for _ in range(50):
        v = rng.normal(size=rng.integers(1, 8))
        p = project_noncrossing(v)
        assert np.all(np.diff(p) >= 0)
        np.testing.assert_array_equal(project_noncrossing(p), p)


def test_projection_beats_every_point_of_a_monotone_grid(rng):
    grid = np.linspace(-2, 2, 17)
    for J in range(1, 7):
        v = np.clip(rng.normal(size=J), -2, 2)
        p = project_noncrossing(v)
        _, best = brute_monotone_projection(v, grid)
        assert np.sum((p - v) ** 2) <= best + 1e-12


def test_count_knots_examples(rng):
    t = np.arange(30.0)
    assert count_knots(0.5 * t ** 2 - t + 3, 2) == 0
    y = rng.normal(size=20)
    assert count_knots(y, 2) == 17
    kink = np.where(t < 12, t, 12 + 3 * (t - 12))
    assert count_knots(kink, 1) == int(np.count_nonzero(np.abs(dense_diff(30, 2) @ kink) > 1e-9)) == 1


def test_zero_penalty_interpolates(rng):
    y = rng.normal(size=30)
    fit = solve_block(y, QuantileSpec((0.3,), (0.0,)))
    np.testing.assert_allclose(fit.theta[:, 0], y, atol=1e-7)
    assert fit.objective == pytest.approx(0.0, abs=1e-6)


def test_huge_first_order_penalty_gives_the_sample_median():
    fit = solve_block([1.0, 2.0, 100.0], QuantileSpec((0.5,), (1e6,), k=0))
    np.testing.assert_allclose(fit.theta[:, 0], 2.0, atol=1e-6)


@pytest.mark.parametrize("method", ["ipm", "admm"])
@pytest.mark.parametrize("k", [0, 1, 2])
def test_matches_dense_lp(method, k, rng):
    y = np.cumsum(rng.normal(size=18))
    taus, lams = (0.1, 0.5, 0.9), (1.0, 2.0, 0.5)
    ref, _ = lp_reference(y, taus, lams, k)
    fit = solve_block(y, QuantileSpec(taus, lams, k), controls=InnerControls(method=method))
    assert fit.objective == pytest.approx(ref, rel=1e-6, abs=1e-9)
    assert dense_objective(y, fit.theta, taus, lams, k) == pytest.approx(fit.objective, rel=1e-12)


def test_masked_lp_agreement(rng):
    y = rng.normal(size=20)
    w = np.ones(20)
    w[[3, 8, 9]] = 0
    ref, _ = lp_reference(np.where(w > 0, y, 0.0), (0.5,), (1.5,), 2, w=w)
    fit = solve_block(y, QuantileSpec((0.5,), (1.5,)), WeightMask(w))
    assert fit.objective == pytest.approx(ref, rel=1e-6)


def test_objective_matches_dense_evaluation(rng):
    y, th = rng.normal(size=25), np.sort(rng.normal(size=(25, 2)), axis=1)
    spec = QuantileSpec((0.2, 0.8), (1.0, 3.0), 1)
    assert objective(y, th, spec) == pytest.approx(dense_objective(y, th, spec.taus, spec.lambdas, 1))


def test_perturbation_certificate(rng):
    y = np.sin(np.linspace(0, 6, 60)) + rng.normal(scale=0.3, size=60)
    spec = QuantileSpec((0.3,), (2.0,))
    fit = solve_block(y, spec)
    f0 = objective(y, fit.theta, spec)
    for _ in range(100):
        d = rng.normal(size=(60, 1))
        d /= np.linalg.norm(d)
        assert objective(y, fit.theta + 1e-3 * d, spec) >= f0 - 1e-9 * max(1.0, abs(f0))


@pytest.mark.parametrize("method", ["ipm", "admm"])
def test_masked_values_have_no_influence(method, rng):
    y = rng.normal(size=80)
    w = np.ones(80)
    w[10:15] = 0
    spec = QuantileSpec((0.25, 0.75), (3.0, 3.0))
    ctl = InnerControls(method=method)
    a = solve_block(y, spec, WeightMask(w), controls=ctl)
    y2 = y.copy()
    y2[10:15] += 1e3
    b = solve_block(y2, spec, WeightMask(w), controls=ctl)
    np.testing.assert_allclose(a.theta, b.theta, atol=1e-6)


def test_nan_in_masked_position_is_accepted(rng):
    y = rng.normal(size=40)
    y[5] = np.nan
    fit = solve_block(y, QuantileSpec((0.5,), (2.0,)), WeightMask.from_missing(y))
    assert np.all(np.isfinite(fit.theta))


def test_unmasked_nan_is_rejected():
    with pytest.raises(ValueError):
        solve_block([1.0, np.nan, 2.0, 3.0, 4.0], QuantileSpec((0.5,), (1.0,)))


def _admm_trace(rng):
    y = np.cumsum(rng.normal(size=120))
    ctl = InnerControls(method="admm", record_objective=True, polish=False, adapt=False)
    fit = solve_block(y, QuantileSpec((0.2, 0.5), (5.0, 5.0)), controls=ctl)
    return np.asarray(fit.objective_trace), fit


@pytest.mark.xfail(strict=True, reason="ADMM is not a descent method: the feasible iterate's "
                   "objective rises by up to ~0.7% between iterations on this instance")
def test_admm_objective_trace_is_monotone_after_burn_in(rng):
    tr, _ = _admm_trace(rng)
    assert np.max(np.diff(tr[10:])) <= 1e-6 * abs(tr[-1])


def test_admm_objective_trace_settles_at_the_optimum(rng):
    tr, fit = _admm_trace(rng)
    assert tr.size > 10 and tr[-1] < tr[10]
    tail = tr[-50:]
    assert np.ptp(tail) <= 1e-6 * abs(tr[-1])
    assert fit.objective == pytest.approx(solve_block(
        np.cumsum(np.random.default_rng(12345).normal(size=120)),
        QuantileSpec((0.2, 0.5), (5.0, 5.0))).objective, rel=1e-6)


def test_coupling_pulls_toward_anchor(rng):
    y = rng.normal(size=40)
    spec = QuantileSpec((0.5,), (1.0,))
    anchor = np.full((40, 1), 5.0)
    loose = solve_block(y, spec)
    tight = solve_block(y, spec, coupling=CouplingTerm(anchor, np.zeros((40, 1)), 1e4))
    assert np.max(np.abs(tight.theta - 5.0)) < 1e-2
    assert np.max(np.abs(loose.theta - 5.0)) > 1.0


def test_coupled_ipm_and_admm_agree(rng):
    y = rng.normal(size=50)
    spec = QuantileSpec((0.25, 0.75), (2.0, 2.0))
    cp = CouplingTerm(rng.normal(size=(50, 2)), rng.normal(scale=0.1, size=(50, 2)), 0.7)
    a = solve_block(y, spec, coupling=cp)
    b = solve_block(y, spec, coupling=cp, controls=ADMM)
    np.testing.assert_allclose(a.theta, b.theta, atol=1e-4)


def test_spec_validation():
    with pytest.raises(ValueError):
        QuantileSpec((0.5, 0.3), (1.0,))
    with pytest.raises(DimensionError):
        QuantileSpec((0.1, 0.5), (1.0, 2.0, 3.0))
    with pytest.raises(ValueError):
        QuantileSpec((0.5,), (-1.0,))
    with pytest.raises(DimensionError):
        solve_block([1.0, 2.0, 3.0], QuantileSpec((0.5,), (1.0,)))


def test_non_convergence_carries_residuals(rng):
    y = rng.normal(size=60)
    with pytest.raises(ConvergenceError) as info:
        solve_block(y, QuantileSpec((0.5,), (3.0,)), controls=InnerControls(ipm_max_iter=2))
    assert info.value.iterations == 2
    assert info.value.primal_residual > 0


def test_warm_start_reaches_same_optimum(rng):
    y = rng.normal(size=60)
    spec = QuantileSpec((0.1, 0.9), (2.0, 2.0))
    cold = solve_block(y, spec)
    warm = solve_block(y, spec, warm_start=cold)
    assert warm.objective == pytest.approx(cold.objective, rel=1e-7)
