import math
import warnings

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from fracpme.manifold import (
    ApproximationWarning,
    DomainError,
    ModelManifold,
    ball_volume,
    build_grid,
    custom_warping,
    euclidean_ball_volume,
    sectional_curvature_radial,
    sphere_area,
    unit_sphere_area,
    warping_eval,
)

R3 = ModelManifold.euclidean(3)
H3 = ModelManifold.hyperbolic(3)


def test_warping_eval_examples():
    assert warping_eval(R3, 2.0) == (2.0, 1.0, 0.0)
    psi, dpsi, ddpsi = warping_eval(H3, 1.0)
    assert psi == pytest.approx(1.1752011936438014, rel=1e-14)
    assert dpsi == pytest.approx(1.5430806348152437, rel=1e-14)
    assert ddpsi == pytest.approx(psi, rel=1e-14)
    psi, dpsi, ddpsi = warping_eval(H3, 1e-8)
    assert psi == pytest.approx(1e-8) and dpsi == pytest.approx(1.0) and ddpsi == pytest.approx(1e-8)


def test_negative_radius_rejected():
    with pytest.raises(DomainError):
        warping_eval(R3, -1.0)
    with pytest.raises(DomainError):
        sphere_area(H3, -0.1)


@pytest.mark.parametrize("r", [0.1, 1.0, 3.0, 7.5])
def test_curvature_space_forms(r):
    assert sectional_curvature_radial(R3, r) == 0.0
    assert sectional_curvature_radial(H3, r) == pytest.approx(-1.0, rel=1e-12)
    assert sectional_curvature_radial(ModelManifold.hyperbolic(3, 4.0), r) == pytest.approx(-4.0, rel=1e-12)


def test_curvature_custom_and_pole_warning():
    m = ModelManifold.custom(3, "r_plus_r3")
    assert sectional_curvature_radial(m, 1.0) == pytest.approx(-3.0)
    with pytest.warns(ApproximationWarning):
        k0 = sectional_curvature_radial(H3, 0.0)
    assert k0 == pytest.approx(-1.0, rel=1e-4)


def test_custom_warping_admissibility():
    with pytest.raises(DomainError):
        custom_warping("bad", lambda r: r + 1.0, lambda r: np.ones_like(r), lambda r: np.zeros_like(r))
    with pytest.raises(DomainError):
        ModelManifold.custom(3, "no_such_warping")
    with pytest.raises(DomainError):
        ModelManifold(1)


def test_volumes_and_areas():
    assert ball_volume(R3, 1.0) == pytest.approx(4 * math.pi / 3, rel=1e-14)
    assert ball_volume(R3, 2.0) == pytest.approx(8 * ball_volume(R3, 1.0), rel=1e-14)
    assert ball_volume(H3, 1.0) == pytest.approx(math.pi * (math.sinh(2) - 2), rel=1e-12)
    assert ball_volume(H3, 1.0) == pytest.approx(5.110933, abs=1e-6)
    assert sphere_area(R3, 1.0) == pytest.approx(4 * math.pi)
    assert sphere_area(H3, 1.0) == pytest.approx(17.355387, abs=1e-6)
    assert sphere_area(H3, 0.0) == 0.0
    assert unit_sphere_area(2) == pytest.approx(4 * math.pi)
    assert euclidean_ball_volume(2, 1.0) == pytest.approx(math.pi)


@settings(max_examples=25, deadline=None)
@given(st.floats(0.05, 6.0), st.floats(1.01, 2.0))
def test_bishop_gromov_direction(R, factor):
    for N in (2, 3, 4):
        e, h = ModelManifold.euclidean(N), ModelManifold.hyperbolic(N)
        assert ball_volume(e, R * factor) / (R * factor) ** N == pytest.approx(ball_volume(e, R) / R**N, rel=1e-12)
        assert ball_volume(h, R * factor) / (R * factor) ** N >= ball_volume(h, R) / R**N * (1 - 1e-12)
        assert ball_volume(h, R) >= euclidean_ball_volume(N, R) * (1 - 1e-12)


def test_grid_weights_match_volumes():
    g = build_grid(R3, 1.0, 100)
    assert g.volume_weights.sum() == pytest.approx(4 * math.pi / 3, abs=1e-10)
    g = build_grid(H3, 10.0, 512)
    exact = math.pi * (math.sinh(20.0) - 20.0)
    assert g.volume_weights.sum() == pytest.approx(exact, rel=1e-8)
    assert np.all(g.volume_weights > 0)
    assert np.all(np.diff(g.nodes) > 0) and g.nodes[0] > 0 and g.nodes[-1] < g.r_max


def test_graded_spacing_ratio():
    g = build_grid(R3, 50.0, 64, grading=1.05)
    ratio = g.widths[1:] / g.widths[:-1]
    assert np.allclose(ratio, 1.05, rtol=1e-10)


@pytest.mark.parametrize("kwargs", [dict(r_max=-1.0, n=32), dict(r_max=1.0, n=8), dict(r_max=1.0, n=32, grading=3.0)])
def test_grid_validation(kwargs):
    with pytest.raises(DomainError):
        build_grid(R3, **kwargs)


def test_partial_weights_exact_ball():
    g = build_grid(H3, 8.0, 200)
    for R in (0.37, 1.0, 4.123):
        assert g.partial_weights(R).sum() == pytest.approx(ball_volume(H3, R), rel=1e-10)


def test_midpoint_volume_refinement_order():
    """A crude sum of node-sampled shell areas converges at second order to the ball volume."""
    errs = []
    for n in (32, 64, 128):
        g = build_grid(H3, 3.0, n)
        approx = float(np.sum(4 * math.pi * np.sinh(g.nodes) ** 2 * g.widths))
        errs.append(abs(approx - ball_volume(H3, 3.0)))
    assert errs[0] / errs[1] > 3.5 and errs[1] / errs[2] > 3.5
    with warnings.catch_warnings():
        warnings.simplefilter("error")
        build_grid(ModelManifold.custom(3, "sinh_cosh"), 5.0, 64)
