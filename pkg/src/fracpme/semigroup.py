"""Implicit-Euler discretisation of ``u_t + L^s(u^m) = 0`` and its property checks.

Each step solves ``h L^s(v^m) + v = u_k`` by damped Newton in the ``v`` variable
with iterates projected onto ``v >= 0``.  ``L^s`` is applied as a dense matrix
built once from the eigendecomposition.
"""

from __future__ import annotations

import logging
from dataclasses import dataclass, field
from functools import cached_property
from typing import Callable, Sequence

import numpy as np
from scipy import linalg

from .manifold import DomainError
from .spectral import FractionalOperator, RadialField, dirac

log = logging.getLogger(__name__)


class NewtonError(RuntimeError):
    def __init__(self, message: str, residual: float, time: float | None = None):
        super().__init__(message)
        self.residual = residual
        self.time = time


class MonotonicityError(AssertionError):
    pass


def geometric_times(t_min: float, t_max: float, q: float = 1.1) -> np.ndarray:
    """``t_min q'^k``, ``k = 0..K``, with ``q' <= q`` chosen so the last stamp is exactly ``t_max``.

    A constant ratio keeps the discrete scaling symmetry of the scheme; a
    clipped final step would break discrete time monotonicity.
    """
    if not 0 < t_min < t_max:
        raise DomainError(f"need 0 < t_min < t_max, got {t_min}, {t_max}")
    if not q > 1:
        raise DomainError(f"ratio q must exceed 1, got {q}")
    k = int(np.ceil(np.log(t_max / t_min) / np.log(q) - 1e-9))
    k = max(k, 1)
    times = t_min * (t_max / t_min) ** (np.arange(k + 1) / k)
    times[-1] = t_max
    return times


def refine_times(times: np.ndarray) -> np.ndarray:
    """Insert the midpoint of every step (halves all ``h_k``, keeps the old stamps)."""
    full = np.concatenate([[0.0], times])
    mids = 0.5 * (full[:-1] + full[1:])
    out = np.empty(2 * times.size)
    out[0::2] = mids
    out[1::2] = times
    return out


@dataclass(frozen=True)
class SolverConfig:
    times: np.ndarray = field(default_factory=lambda: geometric_times(1e-3, 50.0, 1.1))
    newton_tol: float = 1e-10
    newton_max_iter: int = 50
    damping: float = 0.5
    positivity_floor: float = 0.0
    boundary_cap: float | None = 1e-4
    linear_diagnostic: bool = False

    def __post_init__(self) -> None:
        t = np.asarray(self.times, dtype=float)
        if t.ndim != 1 or t.size == 0 or t[0] <= 0 or np.any(np.diff(t) <= 0):
            raise DomainError("time grid must be positive and strictly increasing")
        object.__setattr__(self, "times", t)


def _residual(A: np.ndarray, h: float, m: float, v: np.ndarray, u_k: np.ndarray) -> np.ndarray:
    return h * (A @ v**m) + v - u_k


def implicit_euler_step(
    op: FractionalOperator,
    m: float,
    h: float,
    u_k: RadialField | np.ndarray,
    cfg: SolverConfig | None = None,
) -> RadialField:
    """Solve ``h L^s(v^m) + v = u_k`` for ``v >= 0``."""
    cfg = cfg or SolverConfig()
    v, _ = _newton(op.matrix, m, h, np.asarray(getattr(u_k, "values", u_k), dtype=float), cfg)
    return RadialField(op.grid, v)


def _newton(A: np.ndarray, m: float, h: float, u_k: np.ndarray, cfg: SolverConfig) -> tuple[np.ndarray, int]:
    if not h > 0:
        raise DomainError(f"time step must be > 0, got {h}")
    if m < 1 or (m == 1 and not cfg.linear_diagnostic):
        raise DomainError(f"nonlinearity exponent must exceed 1 (m=1 only in diagnostic mode), got {m}")
    scale = float(np.max(np.abs(u_k), initial=0.0))
    if scale == 0.0:
        return np.zeros_like(u_k), 0
    target = cfg.newton_tol * scale
    v = u_k.copy()
    F = _residual(A, h, m, v, u_k)
    res = float(np.max(np.abs(F)))
    it = 0
    while res > target:
        if it >= cfg.newton_max_iter:
            raise NewtonError(f"Newton stalled after {it} iterations", res / scale)
        J = (h * m) * A * (v ** (m - 1.0))[None, :]
        J[np.diag_indices_from(J)] += 1.0
        dv = linalg.solve(J, -F, check_finite=False)
        alpha = 1.0
        while True:
            trial = np.maximum(v + alpha * dv, cfg.positivity_floor)
            F_trial = _residual(A, h, m, trial, u_k)
            res_trial = float(np.max(np.abs(F_trial)))
            if res_trial < res or alpha < 1e-6:
                break
            alpha *= cfg.damping
        if res_trial >= res:
            raise NewtonError("line search failed to reduce the residual", res / scale)
        v, F, res = trial, F_trial, res_trial
        it += 1
    return v, it


@dataclass(frozen=True, eq=False)
class Trajectory:
    """Nonnegative discrete solution curve; ``times[0] = 0`` holds the datum."""

    op: FractionalOperator
    m: float
    times: np.ndarray
    profiles: np.ndarray
    newton_iterations: np.ndarray
    status: str = "ok"

    @property
    def grid(self):
        return self.op.grid

    @property
    def u0(self) -> RadialField:
        return RadialField(self.grid, self.profiles[0])

    def profile(self, k: int) -> RadialField:
        return RadialField(self.grid, self.profiles[k])

    def lp_norms(self, p: float) -> np.ndarray:
        P = np.abs(self.profiles)
        if p == np.inf:
            return P.max(axis=1)
        return (P**p @ self.grid.volume_weights) ** (1.0 / p)

    @cached_property
    def green_at_origin(self) -> np.ndarray:
        return self.op.potential(dirac(self.grid)).values

    @cached_property
    def weighted_rho0(self) -> np.ndarray:
        """``||u(t)||_{L^1_{x0,G}}`` with ``x0`` at the pole."""
        grid = self.grid
        inner = grid.partial_weights(1.0)
        outer = (grid.volume_weights - inner) * self.green_at_origin
        return np.abs(self.profiles) @ (inner + outer)

    @cached_property
    def boundary_mass_fraction(self) -> np.ndarray:
        return boundary_mass_fraction(self.profiles, self.grid)

    def summary_table(self) -> np.ndarray:
        """Columns: t, L1, L2, Linf, weighted_rho0, boundary_mass_fraction."""
        return np.column_stack([
            self.times, self.lp_norms(1), self.lp_norms(2), self.lp_norms(np.inf),
            self.weighted_rho0, self.boundary_mass_fraction,
        ])


def boundary_mass_fraction(profiles: np.ndarray, grid) -> np.ndarray:
    P = np.atleast_2d(np.abs(profiles))
    outer = grid.volume_weights * (grid.nodes >= 0.5 * grid.r_max)
    total = P @ grid.volume_weights
    with np.errstate(invalid="ignore", divide="ignore"):
        frac = np.where(total > 0, (P @ outer) / total, 0.0)
    return frac


def evolve(
    op: FractionalOperator,
    m: float,
    u0: RadialField | np.ndarray,
    cfg: SolverConfig | None = None,
    progress: Callable[[int, float], None] | None = None,
) -> Trajectory:
    cfg = cfg or SolverConfig()
    vals = np.asarray(getattr(u0, "values", u0), dtype=float)
    if not np.all(np.isfinite(vals)):
        raise DomainError("initial datum must be finite")
    if np.min(vals, initial=0.0) < -1e-12 * np.max(np.abs(vals), initial=0.0):
        raise DomainError("initial datum must be nonnegative")
    vals = np.maximum(vals, 0.0)
    A = op.matrix
    times = np.concatenate([[0.0], cfg.times])
    profiles = [vals]
    iters = [0]
    status = "ok"
    for k in range(1, times.size):
        h = times[k] - times[k - 1]
        try:
            v, it = _newton(A, m, h, profiles[-1], cfg)
        except NewtonError as exc:
            exc.time = float(times[k])
            raise
        profiles.append(v)
        iters.append(it)
        if progress is not None:
            progress(k, float(times[k]))
        if cfg.boundary_cap is not None:
            frac = float(boundary_mass_fraction(v, op.grid)[0])
            if frac > cfg.boundary_cap:
                log.warning("boundary mass fraction %.3e exceeds cap at t=%.4g", frac, times[k])
                status = "boundary_contamination"
                break
    n = len(profiles)
    return Trajectory(op, float(m), times[:n], np.array(profiles), np.array(iters), status)


# ----------------------------------------------------------------------------
# property checks
# ----------------------------------------------------------------------------


@dataclass(frozen=True)
class CheckReport:
    name: str
    passed: bool
    worst: float
    detail: str = ""
    series: np.ndarray | None = None


def check_lp_nonexpansivity(traj: Trajectory, p: float, slack: float = 1e-10) -> CheckReport:
    norms = traj.lp_norms(p)
    growth = norms[1:] - norms[:-1] * (1.0 + slack)
    worst = float(np.max(growth / np.maximum(norms[:-1], 1e-300), initial=-np.inf))
    ok = bool(np.all(growth <= 0.0))
    k = int(np.argmax(growth)) + 1 if growth.size else 0
    detail = "" if ok else f"norm grew at t={traj.times[k]:.6g}"
    return CheckReport(f"L{p}-nonexpansive", ok, worst, detail, norms)


def check_order_preservation(traj_u: Trajectory, traj_v: Trajectory) -> CheckReport:
    """Pointwise order (when the data are ordered) and the L^1 T-contraction."""
    if traj_u.times.shape != traj_v.times.shape or not np.allclose(traj_u.times, traj_v.times):
        raise ValueError("trajectories must share their time stamps")
    U, V = traj_u.profiles, traj_v.profiles
    w = traj_u.grid.volume_weights
    scale = max(float(np.max(np.abs(U))), float(np.max(np.abs(V))), 1e-300)
    tol = 1e-12 * scale
    data_ordered = bool(np.all(U[0] <= V[0] + tol))
    excess = np.max(U - V, axis=1)
    pos_part = np.maximum(U - V, 0.0) @ w
    contraction = bool(np.all(pos_part <= pos_part[0] * (1 + 1e-10) + tol * w.sum()))
    ordered = bool(np.all(excess <= tol)) if data_ordered else True
    worst = float(np.max(excess)) / scale if data_ordered else float(np.max(pos_part - pos_part[0]))
    detail = f"data ordered: {data_ordered}; T-contraction: {contraction}"
    return CheckReport("order-preservation", ordered and contraction, worst, detail, pos_part)


def check_time_monotonicity(traj: Trajectory, m: float | None = None) -> CheckReport:
    """``t^{1/(m-1)} u(t, r)`` nondecreasing at every node."""
    m = traj.m if m is None else m
    if not m > 1:
        raise DomainError("time monotonicity needs m > 1")
    scaled = traj.times[:, None] ** (1.0 / (m - 1.0)) * traj.profiles
    tol = 1e-8 * float(np.max(traj.profiles, initial=0.0))
    drop = scaled[:-1] - scaled[1:]
    worst = float(np.max(drop, initial=0.0))
    ok = worst <= tol
    detail = ""
    if not ok:
        k, i = np.unravel_index(int(np.argmax(drop)), drop.shape)
        detail = f"decrease at t={traj.times[k + 1]:.6g}, r={traj.grid.nodes[i]:.6g}"
    return CheckReport("time-monotonicity", ok, worst, detail)


def check_scheme_comparison(op: FractionalOperator, m: float, h: float, u_k: np.ndarray,
                            v_k: np.ndarray, cfg: SolverConfig | None = None) -> bool:
    """One-step comparison: ``u_k <= v_k`` implies ``u_{k+1} <= v_{k+1}``."""
    cfg = cfg or SolverConfig()
    u1, _ = _newton(op.matrix, m, h, np.asarray(u_k, float), cfg)
    v1, _ = _newton(op.matrix, m, h, np.asarray(v_k, float), cfg)
    tol = 1e-12 * max(float(np.max(np.abs(v1))), 1e-300)
    return bool(np.all(u1 <= v1 + tol))


# ----------------------------------------------------------------------------
# monotone approximation of heavy-tailed data
# ----------------------------------------------------------------------------


def truncate_radius_first(datum: np.ndarray, grid, n: float, level_height: float | None = None) -> np.ndarray:
    """``chi_{B_n} (u0 ^ n)``: the truncation used to approximate non-L^1 data."""
    cap = n if level_height is None else level_height
    return np.minimum(datum, cap) * (grid.nodes < n)


def truncate_height_first(datum: np.ndarray, grid, n: float) -> np.ndarray:
    """A second monotone sequence: soft radial cut-off ``u0 * min(1, (2 - 2r/n)_+)``
    with height cap ``n**2``."""
    cut = np.clip(2.0 - 2.0 * grid.nodes / n, 0.0, 1.0)
    return np.minimum(datum, n * n) * cut


@dataclass(frozen=True, eq=False)
class MonotoneApproximationReport:
    levels: tuple[float, ...]
    trajectories: tuple[Trajectory, ...]
    alternative: tuple[Trajectory, ...]
    ordered: bool
    worst_order_violation: float
    weighted_decrements: np.ndarray
    datum_decrements: np.ndarray
    decrement_ratio: float
    limit_disagreement: np.ndarray

    @property
    def limit_agreement(self) -> float:
        return float(np.max(self.limit_disagreement))


def _weighted_rho0(values: np.ndarray, traj_or_grid, green: np.ndarray) -> np.ndarray:
    grid = traj_or_grid
    inner = grid.partial_weights(1.0)
    outer = (grid.volume_weights - inner) * green
    return np.abs(np.atleast_2d(values)) @ (inner + outer)


def monotone_approximation(
    op: FractionalOperator,
    m: float,
    datum: np.ndarray,
    levels: Sequence[float],
    cfg: SolverConfig | None = None,
) -> MonotoneApproximationReport:
    """Run the truncated data ``chi_{B_n}(u0 ^ n)`` and a second monotone sequence.

    Checks pointwise ordering between consecutive levels, the weighted
    decrement bound, and compares the top levels of both sequences in
    relative ``L^inf``.
    """
    cfg = cfg or SolverConfig()
    grid = op.grid
    levels = tuple(sorted(float(n) for n in levels))
    if levels[-1] > grid.r_max:
        raise DomainError(f"truncation radius {levels[-1]} exceeds the grid")
    trajs = tuple(evolve(op, m, truncate_radius_first(datum, grid, n), cfg) for n in levels)
    alt = tuple(evolve(op, m, truncate_height_first(datum, grid, n), cfg) for n in levels)

    green = op.potential(dirac(grid)).values
    worst = 0.0
    w_dec = []
    d_dec = []
    for a, b in zip(trajs[:-1], trajs[1:]):
        diff = a.profiles - b.profiles
        scale = max(float(np.max(b.profiles)), 1e-300)
        worst = max(worst, float(np.max(diff)) / scale)
        w_dec.append(_weighted_rho0(b.profiles - a.profiles, grid, green))
        d_dec.append(float(_weighted_rho0(b.profiles[0] - a.profiles[0], grid, green)[0]))
    w_dec = np.array(w_dec)
    d_dec = np.array(d_dec)
    ratio = float(np.max(w_dec.max(axis=1) / np.maximum(d_dec, 1e-300))) if d_dec.size else 0.0
    top, top_alt = trajs[-1].profiles, alt[-1].profiles
    sup = np.maximum(np.max(np.abs(top), axis=1), 1e-300)
    disagreement = np.max(np.abs(top - top_alt), axis=1) / sup
    return MonotoneApproximationReport(
        levels, trajs, alt, worst <= 1e-12, worst, w_dec, d_dec, ratio, disagreement
    )
