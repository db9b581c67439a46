"""Definition-direct reference computations for cross-checking the fast paths.

Everything here recomputes a quantity straight from its definition through a
deliberately different route (full pairwise matrices, linear scans, plain
Python accumulation) and is used only by the test suite.  Keep these
implementations independent of :mod:`glucodyn.metrics` and
:mod:`glucodyn.distributions`; agreement between the two routes is part of the
package's verification contract.
"""

from __future__ import annotations

import math

import numpy as np

from .cgm import GlucoseSeries
from .errors import InsufficientDataError

ORACLE_METRICS = ("auc", "mage", "conga1", "modd", "tar")


def oracle_auc(series: GlucoseSeries) -> float:
    t, g = series.times, series.glucose
    total = 0.0
    for i in range(len(t) - 1):
        total += 0.5 * (g[i] + g[i + 1]) * (t[i + 1] - t[i]) / 60.0
    return total


def _sample_sd(values) -> float:
    n = len(values)
    mean = math.fsum(values) / n
    return math.sqrt(math.fsum((v - mean) ** 2 for v in values) / (n - 1))


def oracle_mage_turning_points(series: GlucoseSeries) -> list[int]:
    """Interior extrema found by scanning to the nearest differing neighbors."""
    g = series.glucose
    n = len(g)
    points: list[int] = []
    for i in range(1, n - 1):
        if g[i] == g[i - 1]:
            continue  # not the first index of its plateau run
        j = i + 1
        while j < n and g[j] == g[i]:
            j += 1
        if j == n:
            continue  # plateau runs to the end: no right neighbor
        left, right = g[i - 1], g[j]
        if (left < g[i] and right < g[i]) or (left > g[i] and right > g[i]):
            points.append(i)
    return points


def oracle_mage(series: GlucoseSeries) -> float:
    if len(series.glucose) < 3:
        raise InsufficientDataError("mage needs at least 3 readings")
    tp = oracle_mage_turning_points(series)
    if len(tp) < 2:
        return 0.0
    sd = _sample_sd(series.glucose)
    amplitudes = [
        abs(series.glucose[b] - series.glucose[a]) for a, b in zip(tp, tp[1:])
    ]
    qualifying = [a for a in amplitudes if a > sd]
    return math.fsum(qualifying) / len(qualifying) if qualifying else 0.0


def _all_pairs_lagged(series: GlucoseSeries, lag_minutes: float) -> np.ndarray:
    """Lagged differences via the full pairwise distance matrix."""
    t, g = series.times, series.glucose
    window = series.nominal_interval / 2.0
    dist = np.abs(t[None, :] - (t[:, None] - lag_minutes))  # dist[j, i]
    best = np.argmin(dist, axis=1)  # first minimum = earliest reading on ties
    rows = np.arange(t.size)
    ok = (dist[rows, best] <= window) & (best != rows)
    return g[ok] - g[best[ok]]


def oracle_conga(series: GlucoseSeries, n_hours: float = 1.0) -> float:
    if series.span_minutes <= 60.0 * n_hours:
        raise InsufficientDataError("span too short for conga")
    diffs = _all_pairs_lagged(series, 60.0 * n_hours)
    if diffs.size < 2:
        raise InsufficientDataError("no lagged pairs")
    return _sample_sd(diffs.tolist())


def oracle_modd(series: GlucoseSeries) -> float:
    if series.span_minutes <= 1440.0:
        raise InsufficientDataError("span too short for modd")
    diffs = _all_pairs_lagged(series, 1440.0)
    if diffs.size == 0:
        raise InsufficientDataError("no 24 h pairs")
    return math.fsum(abs(d) for d in diffs.tolist()) / diffs.size


def oracle_tar(series: GlucoseSeries, threshold: float = 140.0) -> float:
    """Time above threshold accumulated segment by segment via crossing times."""
    t, g = series.times, series.glucose
    above = 0.0
    for i in range(len(t) - 1):
        t0, t1, g0, g1 = t[i], t[i + 1], g[i], g[i + 1]
        seg = t1 - t0
        if g0 > threshold and g1 > threshold:
            above += seg
        elif g0 > threshold and g1 <= threshold:
            tc = t0 + seg * (threshold - g0) / (g1 - g0)
            above += tc - t0
        elif g0 <= threshold and g1 > threshold:
            tc = t0 + seg * (threshold - g0) / (g1 - g0)
            above += t1 - tc
    return above / (t[-1] - t[0])


def oracle_metric(name: str, series: GlucoseSeries, **kwargs) -> float:
    """Dispatch by metric name; ``name`` must be one of ORACLE_METRICS."""
    if name == "auc":
        return oracle_auc(series)
    if name == "mage":
        return oracle_mage(series)
    if name == "conga1":
        return oracle_conga(series, kwargs.get("n_hours", 1.0))
    if name == "modd":
        return oracle_modd(series)
    if name == "tar":
        return oracle_tar(series, kwargs.get("threshold", 140.0))
    raise ValueError(f"unknown metric {name!r}; expected one of {ORACLE_METRICS}")


def oracle_quantiles(values, grid_size: int = 100) -> np.ndarray:
    """Inf-definition quantiles by linear scan over the sorted sample."""
    data = sorted(float(v) for v in values)
    n = len(data)
    out = []
    for g in range(1, grid_size + 1):
        p = g / (grid_size + 1)
        for j in range(n):
            if (j + 1) / n >= p:
                out.append(data[j])
                break
    return np.asarray(out)


def oracle_ecdf(values, probe: float) -> float:
    """Naive O(n) counting ECDF."""
    data = [float(v) for v in values]
    return sum(1 for v in data if v <= probe) / len(data)


def oracle_tensor_design_row(
    bu_values: np.ndarray, bp_values: np.ndarray, dp: float
) -> np.ndarray:
    """Riemann-sum design entries by explicit triple loop (grid x K x L)."""
    n_grid, k0 = bu_values.shape
    _, l0 = bp_values.shape
    w = np.zeros(k0 * l0)
    for k in range(k0):
        for l in range(l0):
            acc = 0.0
            for g in range(n_grid):
                acc += bu_values[g, k] * bp_values[g, l] * dp
            w[k * l0 + l] = acc
    return w
