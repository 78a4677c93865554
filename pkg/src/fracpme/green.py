"""Fractional Green functions, potentials and Green-weighted norms.

The Green function with pole at the origin is ``G = L^{-s} delta_0`` with the
unit-mass discrete Dirac of the first cell.  On space forms ``G(x, x0)``
depends only on the geodesic distance, which lets us evaluate Green moments
centred off the pole by an angular quadrature over spheres around the origin.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from typing import Callable, Sequence

import numpy as np
from scipy import integrate, optimize, special

from .fitting import PowerFit, loglog_fit
from .manifold import (
    DomainError,
    ModelManifold,
    RadialGrid,
    build_grid,
    sectional_curvature_radial,
)
from .spectral import (
    FieldLike,
    FractionalOperator,
    RadialField,
    _vals,
    assemble_laplacian,
    decompose,
    dirac,
    indicator,
)

ANGULAR_NODES = 96


class UnsupportedOperation(NotImplementedError):
    pass


class CurvaturePreconditionError(ValueError):
    def __init__(self, radius: float, curvature: float, bound: float):
        super().__init__(
            f"sectional curvature {curvature:.6g} at r={radius:.6g} exceeds the required bound {bound:.6g}"
        )
        self.radius = radius


# ----------------------------------------------------------------------------
# closed forms and quadrature oracles
# ----------------------------------------------------------------------------


def riesz_green(N: int, s: float, r) -> np.ndarray:
    """Whole-space kernel of ``(-Delta)^{-s}`` on ``R^N``."""
    c = math.gamma(N / 2 - s) / (4**s * math.pi ** (N / 2) * math.gamma(s))
    return c * np.asarray(r, dtype=float) ** (2 * s - N)


def hyperbolic3_green(s: float, r) -> np.ndarray:
    """Kernel of ``(-Delta)^{-s}`` on ``H^3`` (curvature -1) via the Bessel-K identity."""
    r = np.asarray(r, dtype=float)
    nu = 1.5 - s
    pref = 2.0 / (math.gamma(s) * (4 * math.pi) ** 1.5)
    return pref * (r / 2.0) ** (-nu) * special.kv(nu, r) * r / np.sinh(r)


def euclidean_heat_kernel(N: int, t: float, r) -> np.ndarray:
    return (4 * math.pi * t) ** (-N / 2) * np.exp(-np.asarray(r, dtype=float) ** 2 / (4 * t))


def hyperbolic3_heat_kernel(t: float, r) -> np.ndarray:
    r = np.asarray(r, dtype=float)
    ratio = np.where(r > 0, r / np.sinh(np.where(r > 0, r, 1.0)), 1.0)
    return (4 * math.pi * t) ** -1.5 * ratio * np.exp(-t - r**2 / (4 * t))


def green_by_subordination(kernel: Callable[[float, float], float], s: float, r: float) -> float:
    """``(1/Gamma(s)) int_0^inf k(t, r) t^{s-1} dt`` by adaptive quadrature in ``log t``."""
    def f(x: float) -> float:
        t = math.exp(x)
        return float(kernel(t, r)) * t**s

    centre = math.log(max(r * r / 4.0, 1e-12))
    val, err = integrate.quad(f, centre - 60.0, centre + 80.0, points=[centre], limit=500,
                              epsabs=0.0, epsrel=1e-11)
    return val / math.gamma(s)


# ----------------------------------------------------------------------------
# Green profiles
# ----------------------------------------------------------------------------


@dataclass(frozen=True, eq=False)
class GreenProfile:
    grid: RadialGrid
    values: np.ndarray
    s: float

    @property
    def manifold(self) -> ModelManifold:
        return self.grid.manifold

    def __call__(self, d) -> np.ndarray:
        """Green function at geodesic distance ``d`` from the pole.

        Log-log interpolation between nodes; the pole-cell value below the
        first node; linear decay to the Dirichlet zero beyond the last node.
        """
        d = np.asarray(d, dtype=float)
        r = self.grid.nodes
        G = self.values
        out = np.empty_like(d)
        lo = d <= r[0]
        hi = d >= r[-1]
        mid = ~(lo | hi)
        out[lo] = G[0]
        out[mid] = np.exp(np.interp(np.log(d[mid]), np.log(r), np.log(G)))
        out[hi] = G[-1] * np.clip((self.grid.r_max - d[hi]) / (self.grid.r_max - r[-1]), 0.0, 1.0)
        return out


def green_function(op: FractionalOperator) -> GreenProfile:
    G = op.potential(dirac(op.grid)).values
    return GreenProfile(op.grid, G, op.s)


def green_function_spectral_sum(op: FractionalOperator) -> GreenProfile:
    """``sum_j lambda_j^{-s} phi_j(0) phi_j``; second route to :func:`green_function`."""
    d = op.decomposition
    phi = d.eigenfunctions
    G = phi @ (d.eigenvalues ** (-op.s) * phi[0])
    return GreenProfile(op.grid, G, op.s)


def closed_form_green(m: ModelManifold, s: float, r) -> np.ndarray | None:
    """Whole-space closed form on the supported space forms, else ``None``."""
    if m.warping.kind == "euclidean":
        return riesz_green(m.dimension, s, r)
    if m.warping.kind == "hyperbolic" and m.dimension == 3:
        c = m.warping.curvature
        k = math.sqrt(c)
        # rescaling of H^3 with curvature -c
        return k ** (3 - 2 * s) * hyperbolic3_green(s, k * np.asarray(r, dtype=float))
    return None


def green_ball_integral(G: GreenProfile, R: float) -> float:
    if not 0 < R < G.grid.r_max:
        raise DomainError(f"ball radius {R} outside (0, {G.grid.r_max})")
    return float(G.values @ G.grid.partial_weights(R))


def ball_integral_growth(G: GreenProfile, radii: Sequence[float]) -> PowerFit:
    vals = [green_ball_integral(G, R) for R in radii]
    return loglog_fit(radii, vals)


# ----------------------------------------------------------------------------
# potentials of indicators (two-sided bounds)
# ----------------------------------------------------------------------------


@dataclass(frozen=True)
class PotentialReport:
    sigma: float
    radii: np.ndarray
    potential: np.ndarray
    lower_ratio: np.ndarray
    upper_ratio: np.ndarray

    @property
    def lower_spread(self) -> float:
        return float(self.lower_ratio.max() / self.lower_ratio.min())

    @property
    def upper_spread(self) -> float:
        return float(self.upper_ratio.max() / self.upper_ratio.min())

    @property
    def passed(self) -> bool:
        both = np.concatenate([self.lower_ratio, self.upper_ratio])
        return bool(np.all(np.isfinite(both)) and np.all(both > 0))


def _sample_indices(grid: RadialGrid, radii) -> np.ndarray:
    radii = np.asarray(radii, dtype=float)
    return np.clip(np.searchsorted(grid.nodes, radii), 0, grid.n_nodes - 1)


def potential_two_sided_check(op: FractionalOperator, sigma: float, radii, G: GreenProfile | None = None
                              ) -> PotentialReport:
    grid = op.grid
    if not 0 < sigma < grid.r_max / 2:
        raise DomainError(f"sigma must lie in (0, r_max/2), got {sigma}")
    G = G or green_function(op)
    chi = indicator(grid, sigma)
    mass = chi.integral()
    P = op.potential(chi).values
    idx = _sample_indices(grid, radii)
    r = grid.nodes[idx]
    N = grid.manifold.dimension
    g = G.values[idx]
    lower = P[idx] / (mass * np.minimum(1.0, r ** (N - 2 * op.s)) * g)
    upper = P[idx] / (sigma**N * g)
    return PotentialReport(sigma, r, P[idx], lower, upper)


def dirac_limit_errors(op: FractionalOperator, sigmas: Sequence[float], r: float,
                       G: GreenProfile | None = None) -> np.ndarray:
    """Relative error of the normalised potential ``L^{-s}(chi_sigma / |B_sigma|)`` against ``G`` at ``r``."""
    G = G or green_function(op)
    i = int(_sample_indices(op.grid, [r])[0])
    errs = []
    for sigma in sigmas:
        chi = indicator(op.grid, sigma)
        P = op.potential(chi).values[i] / chi.integral()
        errs.append(abs(P - G.values[i]) / G.values[i])
    return np.array(errs)


# ----------------------------------------------------------------------------
# Green moments centred off the pole
# ----------------------------------------------------------------------------


def _require_space_form(m: ModelManifold) -> None:
    if not m.is_space_form:
        raise UnsupportedOperation("off-centre Green moments need a space form (distance-only Green function)")


def geodesic_distance(m: ModelManifold, rho: float, r, theta) -> np.ndarray:
    """Distance between points at radii ``rho`` and ``r`` separated by angle ``theta``."""
    _require_space_form(m)
    r = np.asarray(r, dtype=float)
    theta = np.asarray(theta, dtype=float)
    sin2 = np.sin(0.5 * theta) ** 2
    if m.warping.kind == "euclidean":
        return np.sqrt((rho - r) ** 2 + 4.0 * rho * r * sin2)
    k = math.sqrt(m.warping.curvature)
    X = 2.0 * np.sinh(0.5 * k * (rho - r)) ** 2 + 2.0 * np.sinh(k * rho) * np.sinh(k * r) * sin2
    return (2.0 / k) * np.arcsinh(np.sqrt(0.5 * X))


def _cap_angle(m: ModelManifold, rho: float, r: np.ndarray, radius: float = 1.0) -> np.ndarray:
    """Angle ``theta*`` with ``d(rho, r, theta*) = radius``; 0 if the sphere misses the ball, pi if inside."""
    if m.warping.kind == "euclidean":
        num = radius**2 - (rho - r) ** 2
        den = 4.0 * rho * r
    else:
        k = math.sqrt(m.warping.curvature)
        num = (math.cosh(k * radius) - 1.0) - 2.0 * np.sinh(0.5 * k * (rho - r)) ** 2
        den = 2.0 * np.sinh(k * rho) * np.sinh(k * r)
    with np.errstate(divide="ignore", invalid="ignore"):
        x = np.where(den > 0, num / den, np.where(num > 0, np.inf, -np.inf))
    x = np.clip(x, 0.0, 1.0)
    return 2.0 * np.arcsin(np.sqrt(x))


def _sphere_normaliser(N: int) -> float:
    return math.sqrt(math.pi) * math.gamma((N - 1) / 2) / math.gamma(N / 2)


def _cap_fraction(N: int, theta: np.ndarray) -> np.ndarray:
    """Normalised area of the spherical cap of angular radius ``theta`` on S^{N-1}."""
    s2 = np.sin(theta) ** 2
    half = 0.5 * special.betainc((N - 1) / 2, 0.5, s2)
    return np.where(theta <= 0.5 * math.pi, half, 1.0 - half)


def _angular_mean(G: GreenProfile, rho: float, r: np.ndarray, lo: np.ndarray, hi: np.ndarray,
                  n_nodes: int, cluster: bool = False) -> np.ndarray:
    """``(1/Z) int_lo^hi G(d(rho, r, theta)) sin^{N-2}(theta) dtheta`` per radius."""
    m = G.manifold
    N = m.dimension
    x, wq = special.roots_legendre(n_nodes)
    y = 0.5 * (x + 1.0)  # in [0, 1]
    wy = 0.5 * wq
    span = (hi - lo)[:, None]
    if cluster:
        # theta = lo + span * y^2 concentrates nodes near the (near-singular) pole of the cap
        theta = lo[:, None] + span * y[None, :] ** 2
        jac = span * 2.0 * y[None, :]
    else:
        theta = lo[:, None] + span * y[None, :]
        jac = span * np.ones_like(y)[None, :]
    d = geodesic_distance(m, rho, r[:, None], theta)
    vals = G(d) * np.sin(theta) ** (N - 2) * jac
    return (vals @ wy) / _sphere_normaliser(N)


def offcenter_green_moment(G: GreenProfile, u: FieldLike, rho: float, n_nodes: int = ANGULAR_NODES) -> float:
    """``int u(x) G(x, x0) dmu`` for ``x0`` at distance ``rho`` from the pole."""
    if rho < 0:
        raise DomainError(f"offset must be >= 0, got {rho}")
    vals = _vals(u)
    grid = G.grid
    if rho == 0:
        return float(np.sum(vals * G.values * grid.volume_weights))
    _require_space_form(grid.manifold)
    r = grid.nodes
    theta_star = _cap_angle(grid.manifold, rho, r)
    near = _angular_mean(G, rho, r, np.zeros_like(r), theta_star, n_nodes, cluster=True)
    far = _angular_mean(G, rho, r, theta_star, np.full_like(r, math.pi), n_nodes)
    return float(np.sum(vals * (near + far) * grid.volume_weights))


@dataclass(frozen=True)
class WeightedNormResult:
    inner: float
    outer: float
    rho: float

    @property
    def total(self) -> float:
        return self.inner + self.outer


def weighted_norm(u: FieldLike, G: GreenProfile, rho: float = 0.0, n_nodes: int = ANGULAR_NODES
                  ) -> WeightedNormResult:
    """``||u||_{L^1_{x0,G}}`` split into the ``B_1(x0)`` part and the Green-weighted remainder."""
    if rho < 0:
        raise DomainError(f"offset must be >= 0, got {rho}")
    vals = np.abs(_vals(u))
    grid = G.grid
    if rho == 0:
        inner_w = grid.partial_weights(1.0)
        inner = float(vals @ inner_w)
        outer = float(vals @ ((grid.volume_weights - inner_w) * G.values))
        return WeightedNormResult(inner, outer, 0.0)
    _require_space_form(grid.manifold)
    N = grid.manifold.dimension
    r = grid.nodes
    theta_star = _cap_angle(grid.manifold, rho, r)
    frac_in = _cap_fraction(N, theta_star)
    far = _angular_mean(G, rho, r, theta_star, np.full_like(r, math.pi), n_nodes)
    w = grid.volume_weights
    return WeightedNormResult(float(np.sum(vals * frac_in * w)), float(np.sum(vals * far * w)), float(rho))


def default_rho_sample(grid: RadialGrid) -> tuple[float, ...]:
    if not grid.manifold.is_space_form:
        return (0.0,)
    half = grid.r_max / 2
    return tuple(rho for rho in (0.0, 1.0, 2.0, 4.0, 8.0) if rho < half) + (half,)


def sup_weighted_norm(u: FieldLike, G: GreenProfile, rhos: Sequence[float] | None = None) -> float:
    rhos = default_rho_sample(G.grid) if rhos is None else rhos
    return max(weighted_norm(u, G, rho).total for rho in rhos)


# ----------------------------------------------------------------------------
# data classes
# ----------------------------------------------------------------------------


def power_tail_datum(grid: RadialGrid, a: float) -> RadialField:
    """``1`` on ``B_1`` and ``r^{-a}`` outside (``u_a`` on R^N, ``w_a`` on H^N)."""
    if not a > 0:
        raise DomainError(f"decay exponent must be > 0, got {a}")
    r = grid.nodes
    return RadialField(grid, np.where(r <= 1.0, 1.0, np.maximum(r, 1.0) ** (-a)))


def decay_threshold(m: ModelManifold, s: float) -> float:
    """Decay rate above which the power-tail datum belongs to the weighted space."""
    return s if m.warping.kind == "hyperbolic" else 2 * s


@dataclass(frozen=True)
class DecayClassReport:
    a: float
    threshold: float
    truncation_radii: np.ndarray
    outer_integrals: np.ndarray
    l1_integrals: np.ndarray
    tail_exponent: float
    weighted_norms: dict = field(default_factory=dict)

    @property
    def increment_ratios(self) -> np.ndarray:
        inc = np.diff(self.outer_integrals)
        return inc[1:] / inc[:-1]

    @property
    def l1_increment_ratios(self) -> np.ndarray:
        inc = np.diff(self.l1_integrals)
        return inc[1:] / inc[:-1]

    @property
    def member(self) -> bool:
        """Convergent Green-weighted tail: radial density decays faster than ``1/r``."""
        return self.tail_exponent < -1.0

    @property
    def l1_member(self) -> bool:
        return bool(self.l1_increment_ratios[-1] < 1.0)


def decay_class_report(a: float, G: GreenProfile, truncation_radii: Sequence[float] | None = None,
                       fit_window: tuple[float, float] | None = None,
                       rhos: Sequence[float] | None = None) -> DecayClassReport:
    grid = G.grid
    m = grid.manifold
    u = power_tail_datum(grid, a)
    if truncation_radii is None:
        if m.warping.kind == "hyperbolic":
            truncation_radii = grid.r_max * np.array([0.2, 0.35, 0.5, 0.65])
        else:
            truncation_radii = grid.r_max * np.array([1 / 16, 1 / 8, 1 / 4, 1 / 2])
    radii = np.asarray(truncation_radii, dtype=float)
    outside = grid.volume_weights - grid.partial_weights(1.0)
    outer, l1 = [], []
    for R in radii:
        inside = grid.partial_weights(R) / grid.volume_weights
        outer.append(float(np.sum(u.values * G.values * outside * inside)))
        l1.append(float(np.sum(u.values * grid.volume_weights * inside)))
    if fit_window is None:
        fit_window = (2.0, grid.r_max / 2) if m.warping.kind == "hyperbolic" else (grid.r_max / 64, grid.r_max / 4)
    r = grid.nodes
    sel = (r >= fit_window[0]) & (r <= fit_window[1])
    density = u.values * G.values * m.sphere_constant * m.warping.psi(r) ** (m.dimension - 1)
    tail = loglog_fit(r[sel], density[sel]).slope
    norms = {}
    if rhos is not None:
        norms = {float(rho): weighted_norm(u, G, rho).total for rho in rhos}
    return DecayClassReport(float(a), decay_threshold(m, G.s), radii, np.array(outer), np.array(l1),
                            float(tail), norms)


def bump_sum_datum(grid: RadialGrid, J: int) -> RadialField:
    """Unit-volume annuli ``{|r - e^j| < delta_j}``, ``j = 1..J`` (radial stand-in for disjoint unit balls)."""
    if math.exp(J) + 1 >= grid.r_max:
        raise DomainError(f"J={J} needs r_max > e^J + 1 = {math.exp(J) + 1:.4g}")
    m = grid.manifold
    from .manifold import ball_volume

    def shell(c: float, delta: float) -> float:
        lo = max(c - delta, 0.0)
        inner = ball_volume(m, lo) if lo > 0 else 0.0
        return ball_volume(m, c + delta) - inner

    vals = np.zeros(grid.n_nodes)
    for j in range(1, J + 1):
        c = math.exp(j)
        delta = optimize.brentq(lambda d: shell(c, d) - 1.0, 1e-12, 1.0, xtol=1e-15, rtol=1e-14)
        vals += (grid.partial_weights(c + delta) - grid.partial_weights(c - delta)) / grid.volume_weights
    return RadialField(grid, vals)


@dataclass(frozen=True)
class BumpSumReport:
    J: np.ndarray
    l1: np.ndarray
    weighted: np.ndarray
    outer: np.ndarray

    @property
    def weighted_increments(self) -> np.ndarray:
        return np.diff(self.weighted)


def bump_sum_report(G: GreenProfile, J_values: Sequence[int], rho: float = 0.0) -> BumpSumReport:
    rows = []
    for J in J_values:
        u = bump_sum_datum(G.grid, J)
        wn = weighted_norm(u, G, rho)
        rows.append((J, u.integral(), wn.total, wn.outer))
    arr = np.array(rows, dtype=float)
    return BumpSumReport(arr[:, 0].astype(int), arr[:, 1], arr[:, 2], arr[:, 3])


# ----------------------------------------------------------------------------
# comparison with the space form and norm equivalence
# ----------------------------------------------------------------------------


@dataclass(frozen=True)
class ComparisonReport:
    c: float
    radii: np.ndarray
    pointwise_ratio_max: float
    ball_radii: np.ndarray
    ball_ratio_max: float
    tol: float
    G_m: GreenProfile
    G_ref: GreenProfile

    @property
    def passed(self) -> bool:
        return self.pointwise_ratio_max <= 1 + self.tol and self.ball_ratio_max <= 1 + self.tol


def space_form(dimension: int, c: float) -> ModelManifold:
    return ModelManifold.euclidean(dimension) if c == 0 else ModelManifold.hyperbolic(dimension, c)


def green_comparison_check(m: ModelManifold, c: float, s: float, r_max: float, n: int,
                           grading: float = 1.0, ball_radii: Sequence[float] | None = None,
                           tol: float = 1e-3) -> ComparisonReport:
    """``G_m <= G_{M_c}`` pointwise and for ball integrals, on identical grids."""
    grid_m = build_grid(m, r_max, n, grading)
    for r in grid_m.nodes:
        K = sectional_curvature_radial(m, float(r))
        if K > -c + 1e-12 * max(1.0, abs(c)):
            raise CurvaturePreconditionError(float(r), K, -c)
    ref = space_form(m.dimension, c)
    grid_ref = build_grid(ref, r_max, n, grading)
    G_m = green_function(FractionalOperator(s, decompose(assemble_laplacian(grid_m))))
    G_ref = green_function(FractionalOperator(s, decompose(assemble_laplacian(grid_ref))))
    pointwise = float(np.max(G_m.values / G_ref.values))
    if ball_radii is None:
        ball_radii = np.linspace(0.1, 0.9, 9) * r_max
    ball = np.array([green_ball_integral(G_m, R) / green_ball_integral(G_ref, R) for R in ball_radii])
    return ComparisonReport(c, grid_m.nodes, pointwise, np.asarray(ball_radii, float), float(ball.max()),
                            tol, G_m, G_ref)


def quasi_potential_bracket(op: FractionalOperator, G: GreenProfile | None = None) -> tuple[float, float]:
    """``(1/c2, 1/c1)`` where ``c1 <= P/omega <= c2`` for ``P = L^{-s} chi_{B_1/2}``.

    ``omega`` is the weight of the pole-centred norm: 1 on ``B_1``, ``G`` outside.
    """
    G = G or green_function(op)
    grid = op.grid
    P = op.potential(indicator(grid, 0.5)).values
    inner = grid.partial_weights(1.0) / grid.volume_weights
    omega = inner + (1.0 - inner) * G.values
    ratio = P / omega
    return 1.0 / float(ratio.max()), 1.0 / float(ratio.min())


@dataclass(frozen=True)
class NormEquivalenceResult:
    norm: float
    potential_pairing: float
    bracket: tuple[float, float]

    @property
    def ratio(self) -> float:
        return self.norm / self.potential_pairing

    @property
    def passed(self) -> bool:
        lo, hi = self.bracket
        return lo * (1 - 1e-9) <= self.ratio <= hi * (1 + 1e-9)


def norm_equivalence_check(u: FieldLike, op: FractionalOperator, G: GreenProfile | None = None,
                           bracket: tuple[float, float] | None = None) -> NormEquivalenceResult:
    vals = _vals(u)
    if np.min(vals, initial=0.0) < 0:
        raise DomainError("norm equivalence needs a nonnegative function")
    G = G or green_function(op)
    grid = op.grid
    norm = weighted_norm(vals, G, 0.0).total
    P = op.potential(indicator(grid, 0.5)).values
    pairing = float(np.sum(vals * P * grid.volume_weights))
    bracket = bracket or quasi_potential_bracket(op, G)
    return NormEquivalenceResult(norm, pairing, bracket)
