"""Power-law fits in log-log coordinates."""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np


@dataclass(frozen=True)
class PowerFit:
    slope: float
    stderr: float
    intercept: float
    n: int

    def predict(self, x: np.ndarray) -> np.ndarray:
        return np.exp(self.intercept) * np.asarray(x, dtype=float) ** self.slope


def loglog_fit(x, y, weights=None) -> PowerFit:
    """Weighted least squares for ``log y = a + b log x``; returns ``b`` with its stderr."""
    x = np.asarray(x, dtype=float)
    y = np.asarray(y, dtype=float)
    if x.size < 3:
        raise ValueError(f"need at least 3 points for a slope fit, got {x.size}")
    if np.any(x <= 0) or np.any(y <= 0):
        raise ValueError("log-log fit needs positive data")
    lx, ly = np.log(x), np.log(y)
    w = np.ones_like(lx) if weights is None else np.asarray(weights, dtype=float)
    X = np.column_stack([np.ones_like(lx), lx])
    sw = np.sqrt(w)
    coef, *_ = np.linalg.lstsq(X * sw[:, None], ly * sw, rcond=None)
    resid = ly - X @ coef
    dof = max(x.size - 2, 1)
    sigma2 = float(np.sum(w * resid**2) / dof)
    cov = sigma2 * np.linalg.inv((X * w[:, None]).T @ X)
    return PowerFit(float(coef[1]), float(np.sqrt(cov[1, 1])), float(coef[0]), int(x.size))
