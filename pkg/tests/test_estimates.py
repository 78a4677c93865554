import math
from dataclasses import replace

import numpy as np
import pytest

from fracpme.estimates import (
    BUILTIN_TEST_FUNCTIONS,
    TestFunction,
    WindowError,
    bump,
    bump_derivative,
    euclidean_rate,
    fit_smoothing_exponent,
    fundamental_bound_check,
    green_moment_series,
    hyperbolic_longtime_check,
    hyperbolic_threshold_exponent,
    is_nonincreasing,
    sample_triples,
    smoothing_window,
    theta1,
    wds_residual,
    weighted_smoothing_check,
)
from fracpme.green import green_function, power_tail_datum, weighted_norm
from fracpme.manifold import DomainError, ModelManifold
from fracpme.semigroup import SolverConfig, evolve, geometric_times
from fracpme.spectral import FractionalOperator, indicator, spectral_setup

R3 = ModelManifold.euclidean(3)
H3 = ModelManifold.hyperbolic(3)
TIMES = geometric_times(1e-3, 20.0, 1.1)


@pytest.fixture(scope="module")
def op():
    return FractionalOperator(0.5, spectral_setup(R3, 1e5, 320, 1.04))


@pytest.fixture(scope="module")
def G(op):
    return green_function(op)


@pytest.fixture(scope="module")
def run(op):
    return evolve(op, 2.0, indicator(op.grid, 1.0), SolverConfig(times=TIMES))


@pytest.fixture(scope="module")
def zero_run(op):
    return evolve(op, 2.0, np.zeros(op.grid.n_nodes), SolverConfig(times=TIMES))


def test_exponent_arithmetic():
    assert theta1(3, 0.5, 2.0) == pytest.approx(0.25)
    assert euclidean_rate(3, 0.5, 2.0) == pytest.approx(0.75)
    assert euclidean_rate(2, 0.5, 3.0) == pytest.approx(0.4)
    assert hyperbolic_threshold_exponent(3, 2.0, 1.0) == pytest.approx(2.0)
    assert hyperbolic_threshold_exponent(3, 2.0, 4.0) == pytest.approx(4.0)


def test_bump_and_derivative():
    x = np.linspace(-1.2, 1.2, 2401)
    assert bump(np.array([0.0]))[0] == pytest.approx(math.exp(-1))
    assert not bump(x)[np.abs(x) >= 1].any()
    num = np.gradient(bump(x), x)
    assert np.max(np.abs(num - bump_derivative(x))) < 1e-4
    tf = TestFunction(1.0, 2.0, 0.5)
    assert tf.time(2.6) == 0.0 and tf.space(0.0) == pytest.approx(math.exp(-1))


def test_wds_zero_trajectory(zero_run):
    assert not wds_residual(zero_run).any()


def test_wds_small_on_run(run):
    res = wds_residual(run)
    assert res.shape == (len(BUILTIN_TEST_FUNCTIONS),)
    # q = 1.1 is coarse for bumps in time; the reference check uses a finer grid
    assert np.all(np.abs(res) < 0.5)


def test_wds_support_errors(run):
    with pytest.raises(DomainError):
        wds_residual(run, [TestFunction(1.0, 19.0, 3.0)])
    with pytest.raises(DomainError):
        wds_residual(run, [TestFunction(1e6, 1.0, 0.5)])


def test_green_moment_zero_and_initial(run, zero_run, G):
    assert not green_moment_series(zero_run, G).any()
    series = green_moment_series(run, G)
    direct = float(np.sum(run.profiles[0] * G.values * run.grid.volume_weights))
    assert series[0] == direct
    assert series[1] == pytest.approx(direct, rel=2e-3)


@pytest.mark.parametrize("rho", [0.0, 1.0, 2.0])
def test_green_moment_nonincreasing(run, G, rho):
    assert is_nonincreasing(green_moment_series(run, G, rho))


def test_green_moment_methods_agree(run, G):
    k = [5, 40, 90]
    pot = green_moment_series(replace(run, profiles=run.profiles[k], times=run.times[k]), G, 1.0)
    quad = green_moment_series(replace(run, profiles=run.profiles[k], times=run.times[k]), G, 1.0, "quadrature")
    # the quadrature crosses the jump of the datum; on a coarse grid it agrees to a few percent
    assert np.allclose(pot, quad, rtol=0.03)
    with pytest.raises(ValueError):
        green_moment_series(run, G, 1.0, method="bogus")


def test_is_nonincreasing():
    assert is_nonincreasing(np.array([3.0, 2.0, 2.0, 1.0]))
    assert not is_nonincreasing(np.array([3.0, 2.0, 2.1]))
    assert is_nonincreasing(np.array([1.0, 1.0 + 1e-8]))


def test_sample_triples_ordered(run):
    triples = sample_triples(run)
    assert len(triples) == 20
    t = run.times
    for k0, k1, k in triples:
        assert 0 < t[k0] <= t[k1] <= t[k]
        assert t[k] / t[k0] <= 10.0 * 1.1


def test_fundamental_bound_passes(run, G):
    rep = fundamental_bound_check(run, G)
    assert rep.passed, rep.violations
    assert np.all(rep.lower <= rep.middle + 1e-3 * np.abs(rep.middle))


def test_fundamental_bound_degenerate_triple(run, G):
    rep = fundamental_bound_check(run, G, [(30, 30, 60)])
    assert rep.lower[0] == 0.0 and rep.middle[0] == 0.0 and rep.passed


def test_fundamental_bound_negative_control(run, G):
    triples = sample_triples(run)
    target = next(tr for tr in triples if tr[0] != tr[1] and sum(tr[0] in t for t in triples) == 1)
    bad = run.profiles.copy()
    bad[target[0]] *= 0.9
    rep = fundamental_bound_check(replace(run, profiles=bad), G, triples)
    assert rep.violations == [target]


def test_fundamental_bound_rejects_unordered(run, G):
    with pytest.raises(DomainError):
        fundamental_bound_check(run, G, [(40, 30, 60)])
    with pytest.raises(DomainError):
        fundamental_bound_check(run, G, [(0, 30, 60)])


def test_smoothing_exponent(run):
    window = smoothing_window(run, decades=1.5)
    rep = fit_smoothing_exponent(run, window)
    assert rep.target_exponent == -0.75
    assert abs(rep.fitted_exponent + 0.75) < 0.08 and rep.spread < 2.0 and rep.verdict
    with pytest.raises(WindowError):
        fit_smoothing_exponent(run, (1.0, 3.0))


def test_smoothing_scaling_invariance(op):
    # u -> a u with t -> a^{-(m-1)} t maps discrete solutions onto each other
    alpha = 4.0
    u0 = indicator(op.grid, 1.0).values
    base = evolve(op, 2.0, u0, SolverConfig(times=geometric_times(0.1, 10.0, 1.2)))
    scaled = evolve(op, 2.0, alpha * u0, SolverConfig(times=base.times[1:] / alpha))
    ra = fit_smoothing_exponent(base, (0.5, 10.0)).ratio_series
    rb = fit_smoothing_exponent(scaled, (0.5 / alpha, 10.0 / alpha)).ratio_series
    assert np.allclose(ra, rb, rtol=1e-8)


def test_hyperbolic_horizon_error():
    op = FractionalOperator(0.5, spectral_setup(H3, 10.0, 128))
    tr = evolve(op, 2.0, indicator(op.grid, 1.0), SolverConfig(times=geometric_times(1e-3, 1.0, 1.3),
                                                               boundary_cap=None))
    with pytest.raises(WindowError, match="needs horizon"):
        hyperbolic_longtime_check(tr)


def test_hyperbolic_short_horizon_report():
    op = FractionalOperator(0.5, spectral_setup(H3, 12.0, 192))
    mass = indicator(op.grid, 1.0).integral()
    horizon = 5.0
    t_star = math.exp(2.0) / mass
    tr = evolve(op, 2.0, indicator(op.grid, 1.0), SolverConfig(times=geometric_times(1e-3, horizon * t_star, 1.1),
                                                               boundary_cap=None))
    rep = hyperbolic_longtime_check(tr, horizon=horizon)
    assert rep.notes["t_star"] == pytest.approx(t_star)
    assert rep.notes["bounded"] and rep.notes["euclidean_ratio_decays"]
    assert rep.target_exponent == -1.0


def test_weighted_missing_norm(run):
    with pytest.raises(DomainError):
        weighted_smoothing_check(run, None)
    with pytest.raises(ValueError):
        weighted_smoothing_check(run, 1.0, regime="medium")


def test_weighted_window_too_short(run, G):
    with pytest.raises(WindowError):
        weighted_smoothing_check(run, 1e6, regime="short")


def test_weighted_checks_on_l1_datum(run, G):
    # for integrable data the weighted norm is dominated by a multiple of the L^1 norm
    nrm = weighted_norm(run.u0, G).total
    assert nrm <= run.lp_norms(1)[0] * max(1.0, float(G.values[run.grid.nodes >= 1.0].max()))
    short = weighted_smoothing_check(run, nrm, "short", decades=1.0)
    long = weighted_smoothing_check(run, nrm, "long")
    assert short.verdict and long.verdict
    assert long.fit_window[0] == pytest.approx(1.0 / nrm)


def test_weighted_short_power_tail():
    op = FractionalOperator(0.5, spectral_setup(R3, 1e5, 320, 1.04))
    G = green_function(op)
    u0 = power_tail_datum(op.grid, 2.0)
    nrm = weighted_norm(u0, G).total
    tr = evolve(op, 2.0, u0, SolverConfig(times=geometric_times(1e-3, 1.0, 1.1), boundary_cap=None))
    rep = weighted_smoothing_check(tr, nrm, "short")
    assert rep.verdict, rep.ratio_series
