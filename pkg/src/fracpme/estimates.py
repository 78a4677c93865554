"""Audits of the smoothing and Green-moment inequalities on computed trajectories."""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from typing import Sequence

import numpy as np
from scipy.integrate import trapezoid

from .fitting import loglog_fit
from .green import GreenProfile, UnsupportedOperation, offcenter_green_moment
from .manifold import DomainError
from .semigroup import Trajectory
from .spectral import RadialField


class WindowError(ValueError):
    pass


def theta1(N: int, s: float, m: float) -> float:
    return 1.0 / (2 * s + N * (m - 1))


def euclidean_rate(N: int, s: float, m: float) -> float:
    """Decay exponent ``N theta_1`` of the L^1 -> L^inf smoothing effect."""
    return N * theta1(N, s, m)


def hyperbolic_threshold_exponent(N: int, m: float, c: float) -> float:
    return (N - 1) * (m - 1) * math.sqrt(c)


@dataclass(frozen=True)
class SmoothingReport:
    regime: str
    fit_window: tuple[float, float]
    fitted_exponent: float
    stderr: float
    target_exponent: float
    times: np.ndarray
    ratio_series: np.ndarray
    verdict: bool
    notes: dict = field(default_factory=dict)

    @property
    def spread(self) -> float:
        return float(self.ratio_series.max() / self.ratio_series.min())


def _window(traj: Trajectory, lo: float, hi: float) -> np.ndarray:
    t = traj.times
    sel = (t >= lo * (1 - 1e-12)) & (t <= hi * (1 + 1e-12)) & (t > 0)
    return sel


def _fit_linf(traj: Trajectory, sel: np.ndarray):
    return loglog_fit(traj.times[sel], traj.lp_norms(np.inf)[sel])


# ----------------------------------------------------------------------------
# weak dual formulation
# ----------------------------------------------------------------------------


def bump(x) -> np.ndarray:
    x = np.asarray(x, dtype=float)
    out = np.zeros_like(x)
    inside = np.abs(x) < 1
    out[inside] = np.exp(-1.0 / (1.0 - x[inside] ** 2))
    return out


def bump_derivative(x) -> np.ndarray:
    x = np.asarray(x, dtype=float)
    out = np.zeros_like(x)
    inside = np.abs(x) < 1
    xi = x[inside]
    out[inside] = np.exp(-1.0 / (1.0 - xi**2)) * (-2.0 * xi / (1.0 - xi**2) ** 2)
    return out


@dataclass(frozen=True)
class TestFunction:
    """``bump(r / sigma) * bump((t - t_c) / tau)``."""

    __test__ = False

    sigma: float
    t_c: float
    tau: float

    def space(self, r) -> np.ndarray:
        return bump(np.asarray(r) / self.sigma)

    def time(self, t) -> np.ndarray:
        return bump((np.asarray(t) - self.t_c) / self.tau)

    def time_derivative(self, t) -> np.ndarray:
        return bump_derivative((np.asarray(t) - self.t_c) / self.tau) / self.tau


BUILTIN_TEST_FUNCTIONS = (
    TestFunction(sigma=1.0, t_c=1.0, tau=0.5),
    TestFunction(sigma=2.0, t_c=5.0, tau=3.0),
    TestFunction(sigma=0.5, t_c=0.2, tau=0.15),
)


def wds_residual(traj: Trajectory, test_functions: Sequence[TestFunction] = BUILTIN_TEST_FUNCTIONS
                 ) -> np.ndarray:
    """Normalised residual of the weak dual identity for each test function.

    ``int int d_t psi L^{-s}u dmu dt - int int u^m psi dmu dt`` by trapezoidal
    quadrature in time, divided by ``int int u^m |psi|``.
    """
    grid = traj.grid
    t = traj.times
    w = grid.volume_weights
    out = []
    for tf in test_functions:
        if tf.t_c - tf.tau < 0 or tf.t_c + tf.tau > t[-1]:
            raise DomainError(f"test function time support [{tf.t_c - tf.tau}, {tf.t_c + tf.tau}] "
                              f"outside the trajectory [0, {t[-1]}]")
        if tf.sigma >= grid.r_max:
            raise DomainError(f"test function radius {tf.sigma} exceeds the grid")
        chi = tf.space(grid.nodes)
        pot_chi = traj.op.potential(RadialField(grid, chi)).values
        pairing = traj.profiles @ (pot_chi * w)  # <L^{-s} u(t), chi>
        um = traj.profiles**traj.m @ (chi * w)
        lhs = trapezoid(tf.time_derivative(t) * pairing, t)
        rhs = trapezoid(tf.time(t) * um, t)
        norm = trapezoid(np.abs(tf.time(t)) * um, t)
        out.append(0.0 if norm == 0 else (lhs - rhs) / norm)
    return np.array(out)


# ----------------------------------------------------------------------------
# Green moments
# ----------------------------------------------------------------------------


def green_moment_series(traj: Trajectory, G: GreenProfile, rho: float = 0.0, method: str = "potential"
                        ) -> np.ndarray:
    """``int u(t) G(., x0) dmu`` at every recorded time, ``x0`` at distance ``rho``.

    ``method="potential"`` evaluates the moment as ``(L^{-s} u(t))(x0)``
    (interpolated between nodes), ``"quadrature"`` by angular quadrature.
    """
    if rho == 0:
        return traj.profiles @ (G.values * traj.grid.volume_weights)
    if method == "quadrature":
        return np.array([offcenter_green_moment(G, p, rho) for p in traj.profiles])
    if method != "potential":
        raise ValueError(f"unknown method {method!r}")
    if not traj.grid.manifold.is_space_form:
        raise UnsupportedOperation("off-centre moments need a space form")
    d = traj.op.decomposition
    pots = d.function_matrix(lambda lam: lam ** (-traj.op.s)) @ traj.profiles.T
    r = traj.grid.nodes
    i = int(np.clip(np.searchsorted(r, rho), 1, r.size - 1))
    a = (rho - r[i - 1]) / (r[i] - r[i - 1])
    return (1 - a) * pots[i - 1] + a * pots[i]


def is_nonincreasing(series: np.ndarray, rel_slack: float = 1e-6) -> bool:
    scale = max(float(np.max(np.abs(series))), 1e-300)
    return bool(np.all(np.diff(series) <= rel_slack * scale))


@dataclass(frozen=True)
class FundamentalBoundReport:
    triples: list
    lower: np.ndarray
    middle: np.ndarray
    upper: np.ndarray
    slack: float

    @property
    def violations(self) -> list:
        bad = (self.lower > self.middle + self.slack * np.abs(self.middle)) | (
            self.middle > self.upper * (1 + self.slack))
        return [tr for tr, b in zip(self.triples, bad) if b]

    @property
    def passed(self) -> bool:
        return not self.violations


def sample_triples(traj: Trajectory, count: int = 20, span: float = 10.0) -> list[tuple[int, int, int]]:
    """Deterministic index triples ``k0 <= k1 <= k`` with ``t_k / t_k0`` up to ``span``."""
    t = traj.times
    pos = np.flatnonzero(t > 0)
    k_first, k_last = int(pos[0]), int(t.size - 1)
    k_hi = int(np.searchsorted(t, t[k_last] / span))
    starts = np.unique(np.linspace(k_first, max(k_first, k_hi), count).round().astype(int))
    triples = []
    for j, k0 in enumerate(starts):
        k_end = min(int(np.searchsorted(t, t[k0] * span)), k_last)
        k1 = k0 + (j % 3) * (k_end - k0) // 3
        k = k_end if j % 2 == 0 else (k1 + k_end) // 2
        triples.append((int(k0), int(k1), int(max(k, k1))))
    while len(triples) < count:
        k0 = triples[len(triples) % len(triples)][0]
        triples.append((k0, k0, min(k0 + 1, k_last)))
    return triples[:count]


def fundamental_bound_check(traj: Trajectory, G: GreenProfile, triples: Sequence[tuple[int, int, int]] | None = None,
                            slack: float = 1e-3) -> FundamentalBoundReport:
    """Both sides of the Green-moment inequality with explicit constants, ``x0`` at the pole.

    ``triples`` are index triples ``(k0, k1, k)`` into ``traj.times`` with ``0 < t_k0 <= t_k1 <= t_k``.
    """
    m = traj.m
    t = traj.times
    triples = list(triples) if triples is not None else sample_triples(traj)
    moments = traj.profiles @ (G.values * traj.grid.volume_weights)
    centre = traj.profiles[:, 0]
    lo, mid, up = [], [], []
    for k0, k1, k in triples:
        t0, t1, tt = t[k0], t[k1], t[k]
        if not 0 < t0 <= t1 <= tt:
            raise DomainError(f"triple ({t0}, {t1}, {tt}) is not ordered")
        lo.append((t0 / t1) ** (m / (m - 1)) * (t1 - t0) * centre[k0] ** m)
        mid.append(moments[k0] - moments[k1])
        up.append((m - 1) * tt ** (m / (m - 1)) / t0 ** (1 / (m - 1)) * centre[k] ** m)
    return FundamentalBoundReport(list(triples), np.array(lo), np.array(mid), np.array(up), slack)


# ----------------------------------------------------------------------------
# smoothing rates
# ----------------------------------------------------------------------------


def fit_smoothing_exponent(traj: Trajectory, window: tuple[float, float], tol: float = 0.08) -> SmoothingReport:
    lo, hi = window
    if hi / lo < math.sqrt(10):
        raise WindowError(f"window [{lo}, {hi}] is shorter than half a decade")
    N = traj.grid.manifold.dimension
    s = traj.op.s
    m = traj.m
    target = euclidean_rate(N, s, m)
    sel = _window(traj, lo, hi)
    fit = _fit_linf(traj, sel)
    mass0 = traj.lp_norms(1)[0]
    ratio = traj.lp_norms(np.inf)[sel] * traj.times[sel] ** target / mass0 ** (2 * s * theta1(N, s, m))
    verdict = abs(fit.slope + target) <= tol and ratio.max() / ratio.min() < 2.0
    return SmoothingReport("euclidean_S1", (lo, hi), fit.slope, fit.stderr, -target, traj.times[sel], ratio,
                           bool(verdict))


def smoothing_window(traj: Trajectory, decades: float = 1.0, start_factor: float = 2.0) -> tuple[float, float]:
    """Window starting ``start_factor * ||u0||_1^{-(m-1)}`` and spanning ``decades`` (clipped to the run)."""
    t_star = traj.lp_norms(1)[0] ** (-(traj.m - 1))
    lo = start_factor * t_star
    hi = min(lo * 10**decades, traj.times[-1])
    return lo, hi


def hyperbolic_longtime_check(traj: Trajectory, c: float = 1.0, horizon: float = 50.0,
                              late_window: tuple[float, float] | None = None, bound_factor: float = 2.0,
                              slope_cap: float = -0.9) -> SmoothingReport:
    N = traj.grid.manifold.dimension
    m, s = traj.m, traj.op.s
    mass0 = traj.lp_norms(1)[0]
    t_star = math.exp(hyperbolic_threshold_exponent(N, m, c)) * mass0 ** (-(m - 1))
    if traj.times[-1] < horizon * t_star * (1 - 1e-12):
        raise WindowError(f"trajectory ends at {traj.times[-1]:.4g}; needs horizon {horizon * t_star:.4g}")
    sel = _window(traj, t_star, horizon * t_star)
    tt = traj.times[sel]
    linf = traj.lp_norms(np.inf)[sel]
    ratio = linf * tt ** (1 / (m - 1)) / np.log(tt * mass0 ** (m - 1)) ** (s / (m - 1))
    bounded = bool(ratio.max() <= bound_factor * ratio[0])
    euclid = linf * tt ** euclidean_rate(N, s, m)
    euclid_decays = bool(euclid[-1] < euclid[0])
    if late_window is None:
        late_window = (traj.times[-1] / 10, traj.times[-1])
    late = _fit_linf(traj, _window(traj, *late_window))
    verdict = bounded and euclid_decays and late.slope <= slope_cap
    notes = {"t_star": t_star, "bounded": bounded, "euclidean_ratio_decays": euclid_decays,
             "late_window": late_window, "late_slope": late.slope, "late_stderr": late.stderr}
    return SmoothingReport("hyperbolic_longtime", (t_star, horizon * t_star), late.slope, late.stderr,
                           -1.0 / (m - 1), tt, ratio, bool(verdict), notes)


def weighted_smoothing_check(traj: Trajectory, weighted_norm_u0: float | None, regime: str = "short",
                             decades: float | None = None, bound_factor: float = 3.0) -> SmoothingReport:
    """Ratio series against the weighted-data smoothing bounds.

    ``regime="short"``: ``||u||_inf / (||u0||^{2 s theta_1} t^{-N theta_1} v ||u0||)``
    on ``decades`` (default 1) before ``t_w = ||u0||^{-(m-1)}``; ``regime="long"``:
    ``||u||_inf t^{1/m} / ||u0||^{1/m}`` from ``t_w`` to the end of the run
    (or ``decades`` past ``t_w``).
    """
    if weighted_norm_u0 is None:
        raise DomainError("weighted norm of the datum is required")
    N = traj.grid.manifold.dimension
    m, s = traj.m, traj.op.s
    nrm = float(weighted_norm_u0)
    th = theta1(N, s, m)
    t_w = nrm ** (-(m - 1))
    if regime == "short":
        lo, hi = t_w / 10 ** (1.0 if decades is None else decades), t_w
        sel = _window(traj, lo, hi)
        tt = traj.times[sel]
        bound = np.maximum(nrm ** (2 * s * th) * tt ** (-N * th), nrm)
        ratio = traj.lp_norms(np.inf)[sel] / bound
        name, target = "weighted_short", -N * th
    elif regime == "long":
        lo = t_w
        hi = traj.times[-1] if decades is None else min(t_w * 10**decades, traj.times[-1])
        sel = _window(traj, lo, hi)
        tt = traj.times[sel]
        ratio = traj.lp_norms(np.inf)[sel] * tt ** (1 / m) / nrm ** (1 / m)
        name, target = "weighted_long", -1.0 / m
    else:
        raise ValueError(f"unknown regime {regime!r}")
    if sel.sum() < 3:
        raise WindowError(f"window [{lo:.4g}, {hi:.4g}] holds fewer than 3 recorded times")
    fit = loglog_fit(tt, traj.lp_norms(np.inf)[sel])
    verdict = bool(np.all(np.isfinite(ratio)) and ratio.max() <= bound_factor * np.median(ratio))
    return SmoothingReport(name, (lo, hi), fit.slope, fit.stderr, target, tt, ratio, verdict,
                           {"weighted_norm": nrm, "threshold_time": t_w})
