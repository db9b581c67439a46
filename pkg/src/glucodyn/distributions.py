"""Distributional representations of a series: ECDF, quantile profiles, KDEs.

A subject's time series is collapsed into the distribution of time spent at
each level.  Three channels are built per subject: glucose (mg/dL), speed
(mg/dL/min), and acceleration (mg/dL/min^2), the latter two from derivatives
of the smoothed trajectory.  Quantile functions are evaluated on a fixed
interior probability grid ``p_g = g / (G + 1)``, ``g = 1..G`` (default
``G = 100``), which is also the Riemann grid used by the regression design.

All kernels are standard Gaussian; the univariate bandwidth rule is
Silverman's ``0.9 * min(sd, IQR/1.34) * n**(-1/5)``, and the multivariate rule
scales the sample covariance by ``n**(-2/(m+4))``.
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np
from scipy.linalg import cholesky, solve_triangular

from .cgm import GlucoseSeries
from .errors import BandwidthError, ConfigurationError, InsufficientDataError
from .smoothing import SmoothedTrajectory, derivative_series, evaluate

CHANNELS = ("glucose", "speed", "acceleration")
DEFAULT_GRID_SIZE = 100
DEFAULT_KDE_GRID = 512
DEFAULT_MULTI_KDE_GRID = {2: 64, 3: 48}
GRID_EXTENT_BANDWIDTHS = 4.0


def probability_grid(grid_size: int = DEFAULT_GRID_SIZE) -> np.ndarray:
    """Interior grid g/(G+1), g=1..G; avoids p in {0, 1}."""
    if grid_size < 1:
        raise ConfigurationError("grid_size must be >= 1")
    return np.arange(1, grid_size + 1) / (grid_size + 1)


class Ecdf:
    """Right-continuous empirical CDF, queryable at scalars or arrays."""

    def __init__(self, values):
        data = np.sort(np.asarray(values, dtype=float))
        if data.size == 0:
            raise InsufficientDataError("ecdf needs at least one value")
        if not np.all(np.isfinite(data)):
            raise InsufficientDataError("ecdf values must be finite")
        self.sorted_values = data
        self.n = int(data.size)

    def __call__(self, x):
        pos = np.searchsorted(self.sorted_values, np.asarray(x, dtype=float), side="right")
        out = pos / self.n
        return float(out) if np.ndim(x) == 0 else out


def ecdf(values) -> Ecdf:
    return Ecdf(values)


@dataclass(frozen=True)
class QuantileProfile:
    """A quantile function on the fixed probability grid; values nondecreasing."""

    grid: np.ndarray
    values: np.ndarray
    channel: str

    def __post_init__(self):
        grid = np.asarray(self.grid, dtype=float)
        values = np.asarray(self.values, dtype=float)
        if grid.shape != values.shape:
            raise ConfigurationError("grid and values must align")
        if not np.all(np.isfinite(values)):
            raise ConfigurationError("quantile values must be finite")
        if np.any(np.diff(values) < 0):
            raise ConfigurationError("quantile values must be nondecreasing")
        grid.setflags(write=False)
        values.setflags(write=False)
        object.__setattr__(self, "grid", grid)
        object.__setattr__(self, "values", values)


def quantile_profile(
    values, grid_size: int = DEFAULT_GRID_SIZE, channel: str = "glucose"
) -> QuantileProfile:
    """Inf-definition quantiles: smallest data value whose ECDF reaches p."""
    data = np.sort(np.asarray(values, dtype=float))
    if data.size == 0:
        raise InsufficientDataError("quantile_profile needs at least one value")
    grid = probability_grid(grid_size)
    heights = np.arange(1, data.size + 1) / data.size
    idx = np.searchsorted(heights, grid, side="left")
    return QuantileProfile(grid=grid, values=data[idx], channel=channel)


@dataclass(frozen=True)
class DensityEstimate:
    """Univariate KDE evaluated on a support grid."""

    grid: np.ndarray
    density: np.ndarray
    bandwidth: float

    def __post_init__(self):
        if self.bandwidth <= 0:
            raise BandwidthError("bandwidth must be positive")
        if np.any(np.asarray(self.density) < 0):
            raise ConfigurationError("density values must be nonnegative")

    def mass(self) -> float:
        return float(np.trapezoid(self.density, self.grid))


def silverman_bandwidth(values: np.ndarray) -> float:
    """0.9 * min(sd, IQR/1.34) * n^(-1/5), skipping degenerate spread measures."""
    n = values.size
    if n < 2 or np.unique(values).size < 2:
        raise BandwidthError(
            "silverman bandwidth needs >= 2 distinct values; pass an explicit bandwidth"
        )
    sd = float(np.std(values, ddof=1))
    q75, q25 = np.percentile(values, [75.0, 25.0])
    iqr = float(q75 - q25)
    candidates = [c for c in (sd, iqr / 1.34) if c > 0]
    return 0.9 * min(candidates) * n ** (-0.2)


def kde_univariate(
    values,
    bandwidth: float | str = "silverman",
    grid_size: int = DEFAULT_KDE_GRID,
    grid=None,
) -> DensityEstimate:
    """Gaussian KDE on a grid spanning the data +/- 4 bandwidths."""
    data = np.asarray(values, dtype=float)
    if data.size == 0:
        raise InsufficientDataError("kde needs at least one value")
    if bandwidth == "silverman":
        h = silverman_bandwidth(data)
    else:
        h = float(bandwidth)
        if h <= 0:
            raise BandwidthError("bandwidth must be positive")
    if grid is None:
        grid = np.linspace(
            data.min() - GRID_EXTENT_BANDWIDTHS * h,
            data.max() + GRID_EXTENT_BANDWIDTHS * h,
            grid_size,
        )
    else:
        grid = np.asarray(grid, dtype=float)
    z = (grid[:, None] - data[None, :]) / h
    density = np.exp(-0.5 * z * z).sum(axis=1) / (data.size * h * math.sqrt(2 * math.pi))
    return DensityEstimate(grid=grid, density=density, bandwidth=h)


@dataclass(frozen=True)
class MultivariateDensityGrid:
    """m-dimensional Gaussian KDE on a rectangular grid (m in {2, 3})."""

    axes: tuple[np.ndarray, ...]
    density: np.ndarray
    bandwidth_matrix: np.ndarray

    def mass(self) -> float:
        total = self.density
        for axis_values in reversed(self.axes):
            total = np.trapezoid(total, axis_values, axis=-1)
        return float(total)


def _check_spd(h: np.ndarray) -> np.ndarray:
    h = np.asarray(h, dtype=float)
    if h.ndim != 2 or h.shape[0] != h.shape[1]:
        raise ConfigurationError("bandwidth matrix must be square")
    if not np.allclose(h, h.T, rtol=1e-10, atol=0):
        raise ConfigurationError("bandwidth matrix must be symmetric")
    try:
        return cholesky(h, lower=True)
    except np.linalg.LinAlgError as exc:
        raise ConfigurationError("bandwidth matrix must be positive definite") from exc


def auto_bandwidth_matrix(points: np.ndarray) -> np.ndarray:
    """Covariance-scaled rule H = n^(-2/(m+4)) * S, diagonal fallback if S singular."""
    n, m = points.shape
    if n < 2:
        raise BandwidthError("auto bandwidth needs >= 2 points")
    scale = n ** (-2.0 / (m + 4))
    cov = np.cov(points, rowvar=False, ddof=1)
    h = scale * cov
    try:
        cholesky(h, lower=True)
        return h
    except np.linalg.LinAlgError:
        pass
    diag = scale * np.diag(np.diag(cov))
    if np.any(np.diag(diag) <= 0):
        raise BandwidthError(
            "points are degenerate along some coordinate; pass an explicit bandwidth matrix"
        )
    return diag


def kde_multivariate(
    points,
    bandwidth_matrix="auto",
    grids=None,
    grid_sizes=None,
) -> MultivariateDensityGrid:
    """Evaluate (1/n) sum_i K_H(x - x_i) with Gaussian K on a product grid."""
    pts = np.atleast_2d(np.asarray(points, dtype=float))
    n, m = pts.shape
    if m not in (2, 3):
        raise ConfigurationError(f"multivariate KDE supports 2 or 3 dimensions, got {m}")
    if isinstance(bandwidth_matrix, str):
        if bandwidth_matrix != "auto":
            raise ConfigurationError(f"unknown bandwidth rule {bandwidth_matrix!r}")
        h = auto_bandwidth_matrix(pts)
    else:
        h = np.asarray(bandwidth_matrix, dtype=float)
    chol_h = _check_spd(h)

    if grids is None:
        sizes = grid_sizes or [DEFAULT_MULTI_KDE_GRID[m]] * m
        if np.isscalar(sizes):
            sizes = [int(sizes)] * m
        grids = []
        for k in range(m):
            sigma = math.sqrt(h[k, k])
            grids.append(
                np.linspace(
                    pts[:, k].min() - GRID_EXTENT_BANDWIDTHS * sigma,
                    pts[:, k].max() + GRID_EXTENT_BANDWIDTHS * sigma,
                    int(sizes[k]),
                )
            )
    grids = tuple(np.asarray(g, dtype=float) for g in grids)
    if len(grids) != m:
        raise ConfigurationError(f"need {m} per-axis grids, got {len(grids)}")

    mesh = np.meshgrid(*grids, indexing="ij")
    nodes = np.stack([g.ravel() for g in mesh], axis=1)  # (N, m)
    det_root = float(np.prod(np.diag(chol_h)))
    norm = (2 * math.pi) ** (-m / 2.0) / (n * det_root)

    # ||L^-1 (x - p_i)||^2 expanded through whitened coordinates, chunked over nodes
    white_nodes = solve_triangular(chol_h, nodes.T, lower=True).T  # (N, m)
    white_points = solve_triangular(chol_h, pts.T, lower=True).T  # (n, m)
    point_sq = np.einsum("ij,ij->i", white_points, white_points)
    density = np.empty(nodes.shape[0])
    chunk = max(1, int(4_000_000 / max(n, 1)))
    for start in range(0, nodes.shape[0], chunk):
        block = white_nodes[start : start + chunk]
        sq = np.einsum("ij,ij->i", block, block)
        quad = sq[:, None] + point_sq[None, :] - 2.0 * block @ white_points.T
        density[start : start + chunk] = np.exp(-0.5 * np.maximum(quad, 0.0)).sum(axis=1)
    density *= norm
    return MultivariateDensityGrid(
        axes=grids,
        density=density.reshape([g.size for g in grids]),
        bandwidth_matrix=h,
    )


def build_channels(
    series: GlucoseSeries,
    traj: SmoothedTrajectory,
    grid_size: int = DEFAULT_GRID_SIZE,
    use_raw_glucose: bool = False,
) -> dict[str, QuantileProfile]:
    """Quantile profiles of glucose, speed, and acceleration for one subject.

    The glucose channel uses the smoothed values at the reading times so all
    three channels derive from one trajectory; ``use_raw_glucose`` switches the
    glucose channel back to the raw readings for comparison.
    """
    t = series.times
    level = series.glucose if use_raw_glucose else evaluate(traj, t, 0)
    speed, accel = derivative_series(traj, t)
    return {
        "glucose": quantile_profile(level, grid_size, channel="glucose"),
        "speed": quantile_profile(speed, grid_size, channel="speed"),
        "acceleration": quantile_profile(accel, grid_size, channel="acceleration"),
    }
