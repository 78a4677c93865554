"""Rotationally symmetric model manifolds and the radial finite-volume grid.

A model manifold is ``[0, inf) x S^{N-1}`` with metric ``dr^2 + psi(r)^2 dtheta^2``.
Everything downstream only sees the warping ``psi``, the dimension ``N`` and
the radial measure ``omega_{N-1} psi(r)^{N-1} dr``.
"""

from __future__ import annotations

import math
import warnings
from dataclasses import dataclass, field
from typing import Callable

import numpy as np
from scipy import integrate, special

WarpFn = Callable[[np.ndarray], np.ndarray]


class DomainError(ValueError):
    """Argument outside the domain of a geometric operation."""


class GridConstructionError(RuntimeError):
    pass


class ApproximationWarning(UserWarning):
    """Result is a numerical limit rather than an exact evaluation."""


@dataclass(frozen=True)
class Warping:
    """Warping function with its first two derivatives.

    ``kind`` is ``"euclidean"``, ``"hyperbolic"`` or ``"custom"``; ``curvature``
    is the parameter ``c`` of the hyperbolic family and 0 otherwise.
    """

    kind: str
    psi: WarpFn
    dpsi: WarpFn
    ddpsi: WarpFn
    curvature: float = 0.0
    name: str = ""


def euclidean_warping() -> Warping:
    return Warping(
        kind="euclidean",
        psi=lambda r: np.asarray(r, dtype=float) * 1.0,
        dpsi=lambda r: np.ones_like(np.asarray(r, dtype=float)),
        ddpsi=lambda r: np.zeros_like(np.asarray(r, dtype=float)),
        name="euclidean",
    )


def hyperbolic_warping(c: float = 1.0) -> Warping:
    if not c > 0:
        raise DomainError(f"hyperbolic curvature parameter must be > 0, got {c}")
    k = math.sqrt(c)
    return Warping(
        kind="hyperbolic",
        psi=lambda r: np.sinh(k * np.asarray(r, dtype=float)) / k,
        dpsi=lambda r: np.cosh(k * np.asarray(r, dtype=float)),
        ddpsi=lambda r: k * np.sinh(k * np.asarray(r, dtype=float)),
        curvature=float(c),
        name=f"hyperbolic(c={c:g})",
    )


def custom_warping(name: str, psi: WarpFn, dpsi: WarpFn, ddpsi: WarpFn) -> Warping:
    """Wrap user callables; all three derivatives must be analytic."""
    zero = np.array(0.0)
    if abs(float(psi(zero))) > 1e-12 or abs(float(dpsi(zero)) - 1.0) > 1e-12:
        raise DomainError(f"warping {name!r} is not admissible: need psi(0)=0, psi'(0)=1")
    return Warping(kind="custom", psi=psi, dpsi=dpsi, ddpsi=ddpsi, name=name)


# Named test warpings reachable from experiment configs.
BUILTIN_WARPINGS: dict[str, Callable[[], Warping]] = {
    "sinh_cosh": lambda: custom_warping(
        "sinh_cosh",
        lambda r: np.sinh(r) * np.cosh(r),
        lambda r: np.cosh(2.0 * np.asarray(r, dtype=float)),
        lambda r: 2.0 * np.sinh(2.0 * np.asarray(r, dtype=float)),
    ),
    "r_plus_r3": lambda: custom_warping(
        "r_plus_r3",
        lambda r: np.asarray(r, dtype=float) + np.asarray(r, dtype=float) ** 3,
        lambda r: 1.0 + 3.0 * np.asarray(r, dtype=float) ** 2,
        lambda r: 6.0 * np.asarray(r, dtype=float),
    ),
}


def unit_sphere_area(n: int) -> float:
    """Area of the unit sphere S^{n} embedded in R^{n+1}."""
    return 2.0 * math.pi ** ((n + 1) / 2.0) / math.gamma((n + 1) / 2.0)


@dataclass(frozen=True)
class ModelManifold:
    dimension: int
    warping: Warping = field(default_factory=euclidean_warping)

    def __post_init__(self) -> None:
        if int(self.dimension) != self.dimension or self.dimension < 2:
            raise DomainError(f"dimension must be an integer >= 2, got {self.dimension}")

    @classmethod
    def euclidean(cls, dimension: int) -> ModelManifold:
        return cls(dimension, euclidean_warping())

    @classmethod
    def hyperbolic(cls, dimension: int, c: float = 1.0) -> ModelManifold:
        return cls(dimension, hyperbolic_warping(c))

    @classmethod
    def custom(cls, dimension: int, name: str) -> ModelManifold:
        try:
            return cls(dimension, BUILTIN_WARPINGS[name]())
        except KeyError:
            raise DomainError(
                f"unknown custom warping {name!r}; known: {sorted(BUILTIN_WARPINGS)}"
            ) from None

    @property
    def is_space_form(self) -> bool:
        return self.warping.kind in ("euclidean", "hyperbolic")

    @property
    def sphere_constant(self) -> float:
        """omega_{N-1}, the area of the unit (N-1)-sphere."""
        return unit_sphere_area(self.dimension - 1)

    @property
    def label(self) -> str:
        return f"{self.warping.name}^{self.dimension}"


def warping_eval(m: ModelManifold, r: float) -> tuple[float, float, float]:
    if r < 0:
        raise DomainError(f"radius must be >= 0, got {r}")
    w = m.warping
    r_arr = np.array(float(r))
    return float(w.psi(r_arr)), float(w.dpsi(r_arr)), float(w.ddpsi(r_arr))


def sectional_curvature_radial(m: ModelManifold, r: float) -> float:
    """Radial sectional curvature ``-psi''(r) / psi(r)``.

    At ``r = 0`` the quotient is 0/0; the limit ``-psi'''(0)`` is returned from
    a one-sided difference of ``psi''`` and an ``ApproximationWarning`` is issued.
    """
    if r < 0:
        raise DomainError(f"radius must be >= 0, got {r}")
    if r == 0:
        h = 1e-5
        d3 = (warping_eval(m, h)[2] - warping_eval(m, 0.0)[2]) / h
        warnings.warn("curvature at the pole is a finite-difference limit", ApproximationWarning)
        return -d3
    psi, _, ddpsi = warping_eval(m, r)
    return -ddpsi / psi


def sphere_area(m: ModelManifold, r: float) -> float:
    if r < 0:
        raise DomainError(f"radius must be >= 0, got {r}")
    return m.sphere_constant * warping_eval(m, r)[0] ** (m.dimension - 1)


def ball_volume(m: ModelManifold, R: float) -> float:
    if not R > 0:
        raise DomainError(f"ball radius must be > 0, got {R}")
    N = m.dimension
    w = m.warping
    if w.kind == "euclidean":
        return m.sphere_constant * R**N / N
    val, _ = integrate.quad(lambda r: float(w.psi(np.array(r))) ** (N - 1), 0.0, R,
                            epsabs=0.0, epsrel=1e-13, limit=200)
    return m.sphere_constant * val


def euclidean_ball_volume(N: int, R: float) -> float:
    return unit_sphere_area(N - 1) * R**N / N


_GL_X, _GL_W = special.roots_legendre(8)


@dataclass(frozen=True, eq=False)
class RadialGrid:
    """Cell-centred radial grid on ``[0, r_max]``.

    ``volume_weights[i]`` is the manifold volume of the i-th spherical shell and
    ``face_areas[k]`` the area of the sphere at ``cell_edges[k]``.
    """

    manifold: ModelManifold
    r_max: float
    cell_edges: np.ndarray
    nodes: np.ndarray
    volume_weights: np.ndarray
    face_areas: np.ndarray
    grading: float = 1.0

    @property
    def n_nodes(self) -> int:
        return self.nodes.size

    @property
    def widths(self) -> np.ndarray:
        return np.diff(self.cell_edges)

    def index_below(self, R: float) -> int:
        """Number of cells lying entirely inside ``[0, R]``."""
        return int(np.searchsorted(self.cell_edges, R, side="right")) - 1

    def partial_weights(self, R: float) -> np.ndarray:
        """Volume of each cell intersected with the ball ``B_R``."""
        out = np.zeros(self.n_nodes)
        k = self.index_below(R)
        out[:k] = self.volume_weights[:k]
        if 0 <= k < self.n_nodes and R > self.cell_edges[k]:
            out[k] = _shell_volume(self.manifold, self.cell_edges[k], R)
        return out


def _shell_volume(m: ModelManifold, a: float, b: float) -> float:
    return float(_shell_volumes(m, np.array([a]), np.array([b]))[0])


def _shell_volumes(m: ModelManifold, lo: np.ndarray, hi: np.ndarray) -> np.ndarray:
    half = 0.5 * (hi - lo)
    mid = 0.5 * (hi + lo)
    pts = mid[:, None] + half[:, None] * _GL_X[None, :]
    vals = m.warping.psi(pts) ** (m.dimension - 1)
    return m.sphere_constant * half * (vals @ _GL_W)


def graded_edges(r_max: float, n: int, grading: float) -> np.ndarray:
    if grading == 1.0:
        return np.linspace(0.0, r_max, n + 1)
    widths = grading ** np.arange(n)
    widths *= r_max / widths.sum()
    edges = np.concatenate([[0.0], np.cumsum(widths)])
    edges[-1] = r_max
    return edges


def build_grid(m: ModelManifold, r_max: float, n: int, grading: float = 1.0) -> RadialGrid:
    """Build the cell-centred grid; cells grow geometrically by ``grading``."""
    if not r_max > 0:
        raise DomainError(f"r_max must be > 0, got {r_max}")
    if n < 16:
        raise DomainError(f"need at least 16 cells, got {n}")
    if not 1.0 <= grading <= 2.0:
        raise DomainError(f"grading must lie in [1, 2], got {grading}")
    edges = graded_edges(float(r_max), int(n), float(grading))
    with np.errstate(over="ignore", invalid="ignore"):
        probe = m.warping.psi(np.linspace(0.0, r_max, 4 * n + 1))
        weights = _shell_volumes(m, edges[:-1], edges[1:])
        faces = m.sphere_constant * m.warping.psi(edges) ** (m.dimension - 1)
    if not (np.all(np.isfinite(probe)) and np.all(np.isfinite(weights)) and np.all(np.isfinite(faces))):
        raise GridConstructionError(f"warping {m.warping.name} is not finite on [0, {r_max}]")
    if np.any(weights <= 0):
        raise GridConstructionError("non-positive cell volume; warping must be positive for r > 0")
    faces[0] = 0.0
    nodes = 0.5 * (edges[:-1] + edges[1:])
    return RadialGrid(m, float(r_max), edges, nodes, weights, faces, float(grading))
