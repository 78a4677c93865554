import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st
from scipy import linalg

from fracpme.green import power_tail_datum
from fracpme.manifold import DomainError, ModelManifold
from fracpme.semigroup import (
    NewtonError,
    SolverConfig,
    _newton,
    check_lp_nonexpansivity,
    check_order_preservation,
    check_scheme_comparison,
    check_time_monotonicity,
    evolve,
    geometric_times,
    implicit_euler_step,
    monotone_approximation,
    refine_times,
    truncate_height_first,
    truncate_radius_first,
)
from fracpme.spectral import FractionalOperator, indicator, spectral_setup

R3 = ModelManifold.euclidean(3)
H3 = ModelManifold.hyperbolic(3)
CFG = SolverConfig(times=geometric_times(1e-3, 10.0, 1.2))


@pytest.fixture(scope="module")
def op():
    return FractionalOperator(0.5, spectral_setup(R3, 1e5, 320, 1.04))


@pytest.fixture(scope="module")
def op_h3():
    return FractionalOperator(0.5, spectral_setup(H3, 12.0, 256))


@pytest.fixture(scope="module")
def ball_run(op):
    return evolve(op, 2.0, indicator(op.grid, 1.0), CFG)


def test_geometric_times_constant_ratio():
    t = geometric_times(1e-3, 50.0, 1.1)
    assert t[0] == 1e-3 and t[-1] == 50.0
    ratios = t[1:] / t[:-1]
    assert np.allclose(ratios, ratios[0], rtol=1e-12)
    assert ratios[0] <= 1.1
    with pytest.raises(DomainError):
        geometric_times(1.0, 0.5)
    with pytest.raises(DomainError):
        geometric_times(1e-3, 1.0, 1.0)


def test_refine_times_halves_steps():
    t = geometric_times(0.1, 1.0, 1.5)
    fine = refine_times(t)
    assert np.array_equal(fine[1::2], t)
    h = np.diff(np.concatenate([[0.0], t]))
    hf = np.diff(np.concatenate([[0.0], fine]))
    assert np.allclose(hf[0::2], h / 2) and np.allclose(hf[1::2], h / 2)


def test_solver_config_rejects_bad_grid():
    with pytest.raises(DomainError):
        SolverConfig(times=np.array([0.1, 0.1, 0.2]))
    with pytest.raises(DomainError):
        SolverConfig(times=np.array([0.0, 1.0]))


def test_step_zero_is_fixed_point(op):
    z = np.zeros(op.grid.n_nodes)
    assert np.array_equal(implicit_euler_step(op, 2.0, 0.1, z).values, z)


def test_step_validation(op):
    u = indicator(op.grid, 1.0)
    with pytest.raises(DomainError):
        implicit_euler_step(op, 2.0, 0.0, u)
    with pytest.raises(DomainError):
        implicit_euler_step(op, 1.0, 0.1, u)
    with pytest.raises(DomainError):
        implicit_euler_step(op, 0.5, 0.1, u)


def test_linear_diagnostic_is_resolvent(op):
    u = indicator(op.grid, 2.0).values
    cfg = SolverConfig(linear_diagnostic=True)
    v, it = _newton(op.matrix, 1.0, 0.3, u, cfg)
    exact = linalg.solve(np.eye(u.size) + 0.3 * op.matrix, u)
    assert it == 1
    assert np.max(np.abs(v - exact)) < 1e-10


def test_newton_residual_contract(op):
    u = indicator(op.grid, 1.0).values
    h = 0.05
    v = implicit_euler_step(op, 2.0, h, u).values
    res = h * op.matrix @ v**2 + v - u
    assert np.max(np.abs(res)) <= 1e-10 * np.max(u)
    assert v.min() >= 0.0


def test_newton_stall_raises(op):
    u = indicator(op.grid, 1.0).values
    with pytest.raises(NewtonError) as info:
        _newton(op.matrix, 3.0, 10.0, u, SolverConfig(newton_max_iter=1))
    assert info.value.residual > 0


def test_small_step_first_order(op):
    # for smooth data the update is -h L^s(u^m) + O(h^2)
    g = op.grid
    u = np.exp(-(g.nodes**2))
    drift = op.matrix @ u**2
    errs = []
    for h in (1e-3, 5e-4, 2.5e-4):
        v = implicit_euler_step(op, 2.0, h, u).values
        errs.append(np.max(np.abs(v - (u - h * drift))))
    assert 3.5 < errs[0] / errs[1] < 4.5 and 3.5 < errs[1] / errs[2] < 4.5
    v = implicit_euler_step(op, 2.0, 1e-3, u).values
    assert np.max(np.abs(v - u)) == pytest.approx(1e-3 * np.max(np.abs(drift)), rel=0.01)


def test_zero_datum_trajectory(op):
    tr = evolve(op, 2.0, np.zeros(op.grid.n_nodes), CFG)
    assert tr.status == "ok"
    assert not tr.profiles.any()
    for p in (1, 2, np.inf):
        assert not check_lp_nonexpansivity(tr, p).series.any()
    assert check_time_monotonicity(tr).passed


def test_evolve_rejects_bad_datum(op):
    with pytest.raises(DomainError):
        evolve(op, 2.0, -indicator(op.grid, 1.0).values, CFG)
    bad = np.ones(op.grid.n_nodes)
    bad[3] = np.nan
    with pytest.raises(DomainError):
        evolve(op, 2.0, bad, CFG)


def test_newton_failure_carries_time(op):
    cfg = SolverConfig(times=np.array([1.0, 2.0]), newton_max_iter=1)
    with pytest.raises(NewtonError) as info:
        evolve(op, 3.0, indicator(op.grid, 1.0), cfg)
    assert info.value.time == 1.0


def test_boundary_cap_flags_contamination():
    op = FractionalOperator(0.5, spectral_setup(R3, 20.0, 128))
    tr = evolve(op, 2.0, indicator(op.grid, 1.0), SolverConfig(times=geometric_times(1e-3, 50.0, 1.3)))
    assert tr.status == "boundary_contamination"
    assert tr.times[-1] < 50.0
    assert tr.boundary_mass_fraction[-1] > 1e-4


def test_ball_run_mass_and_sup(ball_run):
    tr = ball_run
    assert tr.status == "ok"
    clean = tr.boundary_mass_fraction < 1e-6
    mass = tr.lp_norms(1)
    assert clean.sum() > 20
    assert np.all(np.abs(mass[clean] / mass[0] - 1) < 0.005)
    assert tr.profiles.min() >= 0.0
    for p in (1, 2, np.inf):
        assert check_lp_nonexpansivity(tr, p).passed
    assert tr.summary_table().shape == (tr.times.size, 6)


def test_ball_run_time_monotone(ball_run):
    rep = check_time_monotonicity(ball_run)
    assert rep.passed, rep.detail
    scaled = ball_run.times * ball_run.lp_norms(np.inf)
    assert np.all(np.diff(scaled) >= -1e-8 * scaled.max())
    with pytest.raises(DomainError):
        check_time_monotonicity(ball_run, m=1.0)


def test_time_monotonicity_detects_drop(ball_run):
    from dataclasses import replace

    bad = ball_run.profiles.copy()
    bad[-1] *= 0.9
    rep = check_time_monotonicity(replace(ball_run, profiles=bad))
    assert not rep.passed and "t=10" in rep.detail


def test_order_preservation_nested_balls(op, ball_run):
    v = evolve(op, 2.0, indicator(op.grid, 2.0), CFG)
    rep = check_order_preservation(ball_run, v)
    assert rep.passed and rep.worst <= 1e-12
    same = check_order_preservation(ball_run, ball_run)
    assert same.passed and not same.series.any()


def test_order_preservation_crossing_data(op):
    g = op.grid
    u0 = 2.0 * indicator(g, 0.5).values
    v0 = indicator(g, 1.5).values
    rep = check_order_preservation(evolve(op, 2.0, u0, CFG), evolve(op, 2.0, v0, CFG))
    assert "data ordered: False" in rep.detail
    assert rep.passed
    assert np.all(np.diff(rep.series) <= 1e-10 * rep.series[0])


def test_order_preservation_requires_shared_times(op, ball_run):
    other = evolve(op, 2.0, indicator(op.grid, 1.0), SolverConfig(times=geometric_times(1e-3, 1.0, 1.5)))
    with pytest.raises(ValueError):
        check_order_preservation(ball_run, other)


@settings(max_examples=8, deadline=None)
@given(st.floats(0.2, 3.0), st.floats(1.0, 3.0), st.floats(1e-3, 2.0))
def test_scheme_comparison_random(R, height, h):
    op = FractionalOperator(0.5, spectral_setup(H3, 8.0, 96))
    u = indicator(op.grid, R).values
    v = height * indicator(op.grid, R * 1.3).values
    assert check_scheme_comparison(op, 2.0, h, u, v)


def test_hyperbolic_run_properties(op_h3):
    tr = evolve(op_h3, 2.0, indicator(op_h3.grid, 1.0), SolverConfig(times=geometric_times(1e-3, 20.0, 1.2),
                                                                      boundary_cap=None))
    for p in (1, 2, np.inf):
        assert check_lp_nonexpansivity(tr, p).passed
    assert check_time_monotonicity(tr).passed
    # mass leaks through the Dirichlet wall faster than on flat space but never grows
    assert tr.lp_norms(1)[-1] <= tr.lp_norms(1)[0]


def test_step_halving_first_order(op):
    u = indicator(op.grid, 1.0).values
    t = geometric_times(1e-3, 1.0, 1.2)
    finals = []
    for _ in range(4):
        finals.append(evolve(op, 2.0, u, SolverConfig(times=t)).lp_norms(np.inf)[-1])
        t = refine_times(t)
    d = np.diff(finals)
    ratios = d[:-1] / d[1:]
    assert np.all((ratios >= 1.5) & (ratios <= 3.0)), ratios


def test_truncations():
    op = FractionalOperator(0.5, spectral_setup(R3, 1e3, 128, 1.05))
    g = op.grid
    u = power_tail_datum(g, 2.0).values
    a = truncate_radius_first(u, g, 10.0)
    b = truncate_radius_first(u, g, 100.0)
    assert np.all(a <= b) and not a[g.nodes >= 10.0].any()
    c = truncate_height_first(u, g, 10.0)
    assert np.all(c <= u) and not c[g.nodes >= 10.0].any()
    assert np.array_equal(c[g.nodes < 5.0], u[g.nodes < 5.0])


def test_monotone_approximation_small():
    op = FractionalOperator(0.5, spectral_setup(R3, 1e5, 320, 1.04))
    u = power_tail_datum(op.grid, 2.0).values
    rep = monotone_approximation(op, 2.0, u, (10.0, 100.0, 1000.0), SolverConfig(times=geometric_times(1e-3, 5.0, 1.3)))
    assert rep.ordered and rep.worst_order_violation <= 1e-12
    assert rep.decrement_ratio <= 1.01
    assert rep.limit_agreement < 1e-3
    with pytest.raises(DomainError):
        monotone_approximation(op, 2.0, u, (10.0, 2e5))
