"""Discrete radial Laplace-Beltrami operator and its functional calculus.

The operator is the cell-centred finite-volume discretisation of
``-psi^{1-N} (psi^{N-1} f')'`` with zero flux at the pole and a homogeneous
Dirichlet condition at ``r_max``.  Written as ``L = W^{-1} K`` with ``W`` the
diagonal of cell volumes and ``K`` a symmetric tridiagonal stiffness matrix,
``L`` is self-adjoint for ``<f, g>_w = sum f_i g_i w_i``.  The similarity
``W^{1/2} L W^{-1/2}`` is a plain symmetric tridiagonal matrix, so every
operator function is exact up to one dense eigensolve.
"""

from __future__ import annotations

import logging
import math
import warnings
from dataclasses import dataclass
from functools import cached_property
from typing import Callable, Iterable, Sequence, Union

import numpy as np
from scipy import integrate, linalg

from .manifold import DomainError, ModelManifold, RadialGrid, ball_volume, build_grid

log = logging.getLogger(__name__)


class EigensolverError(RuntimeError):
    pass


class QuadratureError(RuntimeError):
    pass


@dataclass(frozen=True, eq=False)
class RadialField:
    """Grid function on a :class:`RadialGrid`."""

    grid: RadialGrid
    values: np.ndarray

    def __post_init__(self) -> None:
        vals = np.asarray(self.values, dtype=float)
        if vals.shape != (self.grid.n_nodes,):
            raise ValueError(f"expected {self.grid.n_nodes} values, got shape {vals.shape}")
        object.__setattr__(self, "values", vals)

    @classmethod
    def from_function(cls, grid: RadialGrid, fn: Callable[[np.ndarray], np.ndarray]) -> RadialField:
        return cls(grid, np.asarray(fn(grid.nodes), dtype=float) * np.ones(grid.n_nodes))

    def integral(self) -> float:
        return float(self.values @ self.grid.volume_weights)

    def norm(self, p: float) -> float:
        if p == np.inf:
            return float(np.max(np.abs(self.values))) if self.values.size else 0.0
        return float((np.abs(self.values) ** p @ self.grid.volume_weights) ** (1.0 / p))

    def inner(self, other: RadialField) -> float:
        return float(np.sum(self.values * other.values * self.grid.volume_weights))

    def tol_neg(self) -> float:
        return 1e-12 * float(np.max(np.abs(self.values), initial=0.0))

    def is_nonnegative(self) -> bool:
        return bool(np.min(self.values, initial=0.0) >= -self.tol_neg())

    def __add__(self, other: RadialField) -> RadialField:
        return RadialField(self.grid, self.values + other.values)

    def __sub__(self, other: RadialField) -> RadialField:
        return RadialField(self.grid, self.values - other.values)

    def __mul__(self, alpha: float) -> RadialField:
        return RadialField(self.grid, alpha * self.values)

    __rmul__ = __mul__


FieldLike = Union[RadialField, np.ndarray]


def _vals(f: FieldLike) -> np.ndarray:
    return f.values if isinstance(f, RadialField) else np.asarray(f, dtype=float)


def indicator(grid: RadialGrid, R: float) -> RadialField:
    """Volume-fraction indicator of the ball ``B_R``: exact integral, unit value inside."""
    return RadialField(grid, grid.partial_weights(R) / grid.volume_weights)


def dirac(grid: RadialGrid, i: int = 0) -> RadialField:
    """Unit-mass discrete Dirac ``e_i / w_i``."""
    vals = np.zeros(grid.n_nodes)
    vals[i] = 1.0 / grid.volume_weights[i]
    return RadialField(grid, vals)


@dataclass(frozen=True, eq=False)
class LaplacianOperator:
    """``L = W^{-1} K`` representing ``-Delta`` on the radial grid."""

    grid: RadialGrid
    stiffness_diag: np.ndarray
    stiffness_off: np.ndarray

    def stiffness(self) -> np.ndarray:
        K = np.diag(self.stiffness_diag)
        K += np.diag(self.stiffness_off, 1) + np.diag(self.stiffness_off, -1)
        return K

    def dense(self) -> np.ndarray:
        return self.stiffness() / self.grid.volume_weights[:, None]

    def apply(self, f: FieldLike) -> RadialField:
        v = _vals(f)
        Kv = self.stiffness_diag * v
        Kv[:-1] += self.stiffness_off * v[1:]
        Kv[1:] += self.stiffness_off * v[:-1]
        return RadialField(self.grid, Kv / self.grid.volume_weights)

    def symmetric_tridiagonal(self) -> tuple[np.ndarray, np.ndarray]:
        w = self.grid.volume_weights
        return self.stiffness_diag / w, self.stiffness_off / np.sqrt(w[:-1] * w[1:])


def assemble_laplacian(grid: RadialGrid, m: ModelManifold | None = None) -> LaplacianOperator:
    if m is not None and m is not grid.manifold and m != grid.manifold:
        raise ValueError("grid was built on a different manifold")
    r = grid.nodes
    A = grid.face_areas
    # interior faces k = 1..n-1 sit between nodes k-1 and k
    trans = A[1:-1] / np.diff(r)
    diag = np.zeros(grid.n_nodes)
    diag[:-1] += trans
    diag[1:] += trans
    # Dirichlet: ghost value 0 at r_max
    diag[-1] += A[-1] / (grid.r_max - r[-1])
    return LaplacianOperator(grid, diag, -trans)


@dataclass(frozen=True, eq=False)
class SpectralDecomposition:
    """Eigenpairs of ``L``; ``vectors`` are orthonormal in the plain inner product.

    The w-orthonormal eigenfunctions are ``phi = vectors / sqrt(w)``.
    """

    grid: RadialGrid
    eigenvalues: np.ndarray
    vectors: np.ndarray

    @cached_property
    def sqrt_w(self) -> np.ndarray:
        return np.sqrt(self.grid.volume_weights)

    @cached_property
    def eigenfunctions(self) -> np.ndarray:
        return self.vectors / self.sqrt_w[:, None]

    def coefficients(self, f: FieldLike) -> np.ndarray:
        """``<f, phi_j>_w`` for all j."""
        return self.vectors.T @ (self.sqrt_w * _vals(f))

    def synthesize(self, coeffs: np.ndarray) -> RadialField:
        return RadialField(self.grid, (self.vectors @ coeffs) / self.sqrt_w)

    def apply_function(self, fn: Callable[[np.ndarray], np.ndarray], f: FieldLike) -> RadialField:
        return self.synthesize(fn(self.eigenvalues) * self.coefficients(f))

    def function_matrix(self, fn: Callable[[np.ndarray], np.ndarray]) -> np.ndarray:
        """Dense matrix of ``fn(L)`` acting on nodal values."""
        V = self.vectors
        M = (V * fn(self.eigenvalues)) @ V.T
        return M * (self.sqrt_w[None, :] / self.sqrt_w[:, None])

    def orthonormality_residual(self) -> float:
        V = self.vectors
        return float(np.max(np.abs(V.T @ V - np.eye(V.shape[1]))))


def decompose(L: LaplacianOperator) -> SpectralDecomposition:
    d, e = L.symmetric_tridiagonal()
    try:
        lam, V = linalg.eigh_tridiagonal(d, e, lapack_driver="stemr")
    except (linalg.LinAlgError, ValueError) as exc:
        raise EigensolverError(
            f"tridiagonal eigensolve failed (n={d.size}, diag range [{d.min():.3e}, {d.max():.3e}], "
            f"max |offdiag| {np.abs(e).max():.3e}): {exc}"
        ) from exc
    if not np.all(np.isfinite(lam)) or lam[0] <= 0:
        raise EigensolverError(f"operator is not positive definite: lambda_1 = {lam[0]:.3e}")
    return SpectralDecomposition(L.grid, lam, V)


def spectral_setup(m: ModelManifold, r_max: float, n: int, grading: float = 1.0) -> SpectralDecomposition:
    grid = build_grid(m, r_max, n, grading)
    return decompose(assemble_laplacian(grid))


def apply_heat(d: SpectralDecomposition, t: float, f: FieldLike) -> RadialField:
    if t < 0:
        raise DomainError(f"heat semigroup needs t >= 0, got {t}")
    if t == 0:
        return RadialField(d.grid, _vals(f).copy())
    return d.apply_function(lambda lam: np.exp(-lam * t), f)


def heat_kernel(d: SpectralDecomposition, t: float, i: int, j: int) -> float:
    """Kernel of ``e^{-tL}`` against the measure ``w``."""
    if t <= 0:
        raise DomainError(f"heat kernel needs t > 0, got {t}")
    phi = d.eigenfunctions
    return float(np.sum(np.exp(-d.eigenvalues * t) * phi[i] * phi[j]))


def heat_kernel_column(d: SpectralDecomposition, t: float, j: int = 0) -> np.ndarray:
    if t <= 0:
        raise DomainError(f"heat kernel needs t > 0, got {t}")
    phi = d.eigenfunctions
    return phi @ (np.exp(-d.eigenvalues * t) * phi[j])


@dataclass(frozen=True, eq=False)
class FractionalOperator:
    s: float
    decomposition: SpectralDecomposition

    def __post_init__(self) -> None:
        if not 0.0 < self.s < 1.0:
            raise DomainError(f"fractional exponent must lie in (0, 1), got {self.s}")

    @property
    def grid(self) -> RadialGrid:
        return self.decomposition.grid

    def power(self, f: FieldLike, sign: int = 1) -> RadialField:
        return apply_fractional_power(self, sign, f)

    def potential(self, f: FieldLike) -> RadialField:
        return apply_fractional_power(self, -1, f)

    @cached_property
    def matrix(self) -> np.ndarray:
        """Dense ``L^s``."""
        s = self.s
        return self.decomposition.function_matrix(lambda lam: lam**s)

    @cached_property
    def inverse_matrix(self) -> np.ndarray:
        """Dense ``L^{-s}``."""
        s = self.s
        return self.decomposition.function_matrix(lambda lam: lam ** (-s))


def apply_fractional_power(op: FractionalOperator, sign: int, f: FieldLike) -> RadialField:
    """``L^{+s} f`` for ``sign = +1`` and ``L^{-s} f`` for ``sign = -1``."""
    if sign not in (1, -1):
        raise ValueError(f"sign must be +1 or -1, got {sign}")
    p = sign * op.s
    return op.decomposition.apply_function(lambda lam: lam**p, f)


def subordination_identity_check(s: float, lam: float) -> float:
    """Relative error between ``lam^{-s}`` and its heat-semigroup integral.

    Evaluates ``(1/Gamma(s)) int_0^inf e^{-t lam} t^{s-1} dt`` after the
    substitution ``t = e^x / lam`` which removes the endpoint singularity.
    """
    if not lam > 0:
        raise DomainError(f"lambda must be > 0, got {lam}")
    if not 0 < s < 1:
        raise DomainError(f"s must lie in (0, 1), got {s}")

    def integrand(x: float) -> float:
        return math.exp(s * x - math.exp(x)) if x < 700 else 0.0

    # integrand peaks at x = log(s) and decays like e^{s x} to the left
    lo = math.log(s) - 40.0 / s
    hi = math.log(s) + 6.0
    val, err = integrate.quad(integrand, lo, hi, epsabs=0.0, epsrel=1e-13, limit=400,
                              points=[math.log(s)])
    if err > 1e-11 * abs(val):
        raise QuadratureError(f"subordination quadrature reached only {err / abs(val):.2e} relative")
    approx = lam ** (-s) * val / math.gamma(s)
    exact = lam ** (-s)
    return abs(approx - exact) / exact


@dataclass(frozen=True)
class FaberKrahnReport:
    radii: np.ndarray
    lambda1: np.ndarray
    volumes: np.ndarray
    products: np.ndarray
    skipped: tuple[float, ...]

    @property
    def constant(self) -> float:
        return float(np.min(self.products))


def faber_krahn_check(m: ModelManifold, radii: Sequence[float], grid: RadialGrid) -> FaberKrahnReport:
    """``lambda_1(B_R) vol(B_R)^{2/N}`` for Dirichlet problems on sub-balls of ``grid``."""
    L = assemble_laplacian(grid)
    N = m.dimension
    rows = []
    skipped = []
    for R in radii:
        if not 0 < R < grid.r_max:
            raise DomainError(f"radius {R} outside (0, {grid.r_max})")
        k = grid.index_below(R)
        if k < 8:
            warnings.warn(f"R={R} spans only {k} cells; skipped", RuntimeWarning)
            skipped.append(float(R))
            continue
        R_eff = float(grid.cell_edges[k])
        sub = L.stiffness_diag[:k].copy()
        # the sub-ball boundary sits on the face at edges[k]; Dirichlet ghost there
        sub[-1] += L.stiffness_off[k - 1] + grid.face_areas[k] / (R_eff - grid.nodes[k - 1])
        w = grid.volume_weights[:k]
        d = sub / w
        e = L.stiffness_off[: k - 1] / np.sqrt(w[:-1] * w[1:])
        lam1 = float(linalg.eigh_tridiagonal(d, e, eigvals_only=True, select="i", select_range=(0, 0))[0])
        vol = ball_volume(m, R_eff)
        rows.append((R_eff, lam1, vol, lam1 * vol ** (2.0 / N)))
    arr = np.array(rows, dtype=float).reshape(-1, 4)
    return FaberKrahnReport(arr[:, 0], arr[:, 1], arr[:, 2], arr[:, 3], tuple(skipped))


@dataclass(frozen=True)
class GaussianBoundReport:
    eps: float
    constant: float
    n_used: int
    n_skipped: int


def gaussian_bound_check(
    d: SpectralDecomposition,
    times: Iterable[float],
    radii: Iterable[float],
    eps: float = 0.5,
    floor: float = 1e-10,
) -> GaussianBoundReport:
    """Sup of ``k(t, 0, r) t^{N/2} exp(r^2 / ((4+eps) t))`` over the samples.

    Samples whose kernel value is below ``floor * k(t, 0, 0)`` are outside the
    range the discrete kernel resolves and are skipped.
    """
    if not eps > 0:
        raise DomainError(f"eps must be > 0, got {eps}")
    grid = d.grid
    N = grid.manifold.dimension
    radii = np.asarray(list(radii), dtype=float)
    idx = np.clip(np.searchsorted(grid.nodes, radii), 0, grid.n_nodes - 1)
    sup = 0.0
    used = skipped = 0
    for t in times:
        col = heat_kernel_column(d, t, 0)
        k0 = col[0]
        for i in idx:
            k = col[i]
            if k < floor * k0:
                skipped += 1
                continue
            r = grid.nodes[i]
            sup = max(sup, k * t ** (N / 2.0) * math.exp(r * r / ((4.0 + eps) * t)))
            used += 1
    return GaussianBoundReport(eps, sup, used, skipped)
