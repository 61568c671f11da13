"""Gaussian kernel density estimation on fixed grids.

The selection criterion and the distributional quality measures both operate
on densities evaluated over equally spaced grids; this module provides the
grid type and the estimator.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

_SQRT_2PI = np.sqrt(2.0 * np.pi)


@dataclass(frozen=True)
class DensityGrid:
    """Kernel-density ordinates on an equally spaced grid.

    ``window`` marks the evaluation window around the censoring ``limit``
    when the grid was built for the smoothness criterion; both are optional
    for general-purpose grids (e.g. divergence computations).
    """

    abscissae: np.ndarray
    ordinates: np.ndarray
    window: tuple[float, float] | None = None
    limit: float | None = None
    bandwidth: float | None = field(default=None, compare=False)

    def __post_init__(self) -> None:
        x = np.asarray(self.abscissae, dtype=float)
        f = np.asarray(self.ordinates, dtype=float)
        if x.ndim != 1 or x.size < 2:
            raise ValueError("grid needs at least two abscissae")
        if f.shape != x.shape:
            raise ValueError("ordinates shape does not match abscissae")
        steps = np.diff(x)
        if np.any(steps <= 0):
            raise ValueError("abscissae must be strictly increasing")
        step = steps[0]
        if np.any(np.abs(steps - step) > 1e-12 * max(abs(step), 1.0)):
            raise ValueError("abscissae must be equally spaced")
        if np.any(f < -1e-300):
            raise ValueError("ordinates must be nonnegative")
        object.__setattr__(self, "abscissae", x)
        object.__setattr__(self, "ordinates", f)

    @property
    def step(self) -> float:
        return float(self.abscissae[1] - self.abscissae[0])


def uniform_grid(lo: float, hi: float, step: float) -> np.ndarray:
    """Equally spaced abscissae from ``lo`` to ``hi`` inclusive."""
    if step <= 0:
        raise ValueError("step must be positive")
    n = int(round((hi - lo) / step))
    if n < 1:
        raise ValueError("grid window is degenerate")
    return lo + step * np.arange(n + 1)


def silverman_bandwidth(values: np.ndarray) -> float:
    """Rule-of-thumb bandwidth 0.9 * min(sd, IQR/1.34) * n^(-1/5)."""
    v = np.asarray(values, dtype=float)
    n = v.size
    if n < 2:
        return 1.0
    sd = float(np.std(v, ddof=1))
    iqr = float(np.subtract(*np.percentile(v, [75, 25])))
    spread = min(sd, iqr / 1.34) if iqr > 0 else sd
    if spread <= 0:
        spread = max(abs(float(np.mean(v))), 1.0) * 1e-3
    return 0.9 * spread * n ** (-0.2)


def kde(values: np.ndarray, abscissae: np.ndarray, bandwidth: float) -> DensityGrid:
    """Gaussian-kernel density of ``values`` evaluated at ``abscissae``.

    The kernel standard deviation is ``bandwidth`` itself. Evaluation is
    chunked over the data so that large samples do not allocate an
    n-by-grid matrix at once.
    """
    v = np.asarray(values, dtype=float).ravel()
    x = np.asarray(abscissae, dtype=float)
    if v.size == 0:
        raise ValueError("kde needs a nonempty sample")
    if bandwidth <= 0:
        raise ValueError("bandwidth must be positive")
    out = np.zeros(x.size)
    chunk = max(1, int(2e7) // max(x.size, 1))
    for start in range(0, v.size, chunk):
        block = v[start : start + chunk]
        z = (x[:, None] - block[None, :]) / bandwidth
        out += np.exp(-0.5 * z * z).sum(axis=1)
    out /= v.size * bandwidth * _SQRT_2PI
    return DensityGrid(abscissae=x, ordinates=out, bandwidth=bandwidth)
