"""Classic CGM variability indexes: AUC, MAGE, CONGA(n), MODD, TAR.

Conventions (documented here once, used consistently everywhere):

* ``mean`` is the arithmetic mean of the readings; ``auc`` is the trapezoidal
  integral over hours, so both the integral and the time-average convention
  are available.
* standard deviations are sample SDs (``ddof=1``).
* MAGE turning points come from a local-extremum scan of the raw series with
  plateau runs collapsed to their first index; an excursion qualifies when its
  amplitude strictly exceeds one within-series SD.
* CONGA/MODD match a reading to the one closest to ``t - lag`` within half the
  nominal sampling interval (ties resolved to the earlier reading).
* TAR is the exact fraction of monitored time the piecewise-linear interpolant
  is strictly above the threshold; the default threshold of 140 mg/dL is the
  conventional post-prandial upper bound and is configurable.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .cgm import GlucoseSeries
from .errors import InsufficientDataError

DEFAULT_HYPER_THRESHOLD_MGDL = 140.0


@dataclass(frozen=True)
class MetricPanel:
    """The variability indexes reported per subject (modd is None below 24 h)."""

    subject_id: str
    mean: float
    sd: float
    auc: float
    mage: float
    conga1: float
    modd: float | None
    tar: float
    threshold_hyper: float

    FIELDS = ("mean", "sd", "auc", "mage", "conga1", "modd", "tar", "threshold_hyper")


def series_mean(series: GlucoseSeries) -> float:
    return float(np.mean(series.glucose))


def series_sd(series: GlucoseSeries) -> float:
    return float(np.std(series.glucose, ddof=1))


def auc(series: GlucoseSeries) -> float:
    """Trapezoidal area under the glucose curve, in mg/dL * h."""
    if series.n < 2:
        raise InsufficientDataError("auc needs at least 2 readings")
    return float(np.trapezoid(series.glucose, series.times / 60.0))


def _plateau_starts(glucose: np.ndarray) -> np.ndarray:
    """Indices of the first reading of each constant run."""
    keep = np.concatenate(([True], np.diff(glucose) != 0))
    return np.flatnonzero(keep)


def mage_turning_points(series: GlucoseSeries) -> np.ndarray:
    """Indices of interior local extrema (first index of a plateau run)."""
    if series.n < 3:
        raise InsufficientDataError("mage needs at least 3 readings")
    starts = _plateau_starts(series.glucose)
    compact = series.glucose[starts]
    if compact.size < 3:
        return np.array([], dtype=int)
    d = np.diff(compact)
    turn = np.flatnonzero(d[:-1] * d[1:] < 0) + 1
    return starts[turn]


def mage(series: GlucoseSeries) -> float:
    """Mean amplitude of excursions between consecutive turning points > 1 SD."""
    tp = mage_turning_points(series)
    if tp.size < 2:
        return 0.0
    amplitudes = np.abs(np.diff(series.glucose[tp]))
    threshold = series_sd(series)
    qualifying = amplitudes[amplitudes > threshold]
    return float(np.mean(qualifying)) if qualifying.size else 0.0


def _lagged_pairs(series: GlucoseSeries, lag_minutes: float) -> np.ndarray:
    """Differences G(t) - G(t - lag) over readings with a match within half an interval."""
    t, g = series.times, series.glucose
    window = series.nominal_interval / 2.0
    targets = t - lag_minutes
    pos = np.searchsorted(t, targets)
    left = np.clip(pos - 1, 0, t.size - 1)
    right = np.clip(pos, 0, t.size - 1)
    dist_left = np.abs(t[left] - targets)
    dist_right = np.abs(t[right] - targets)
    best = np.where(dist_left <= dist_right, left, right)  # ties keep the earlier reading
    best_dist = np.minimum(dist_left, dist_right)
    valid = (best_dist <= window) & (best != np.arange(t.size))
    return g[valid] - g[best[valid]]


def conga(series: GlucoseSeries, n_hours: float = 1.0) -> float:
    """SD of differences between readings n_hours apart (CONGA(n))."""
    if n_hours <= 0:
        raise InsufficientDataError("conga lag must be positive")
    if series.span_minutes <= 60.0 * n_hours:
        raise InsufficientDataError(
            f"conga({n_hours:g}) needs a span longer than {n_hours:g} h"
        )
    diffs = _lagged_pairs(series, 60.0 * n_hours)
    if diffs.size < 2:
        raise InsufficientDataError(
            f"conga({n_hours:g}): no lagged pairs within the matching window"
        )
    return float(np.std(diffs, ddof=1))


def modd(series: GlucoseSeries) -> float:
    """Mean absolute difference between readings 24 h apart."""
    if series.span_minutes <= 1440.0:
        raise InsufficientDataError("modd needs a span longer than 24 h")
    diffs = _lagged_pairs(series, 1440.0)
    if diffs.size == 0:
        raise InsufficientDataError("modd: no 24 h pairs within the matching window")
    return float(np.mean(np.abs(diffs)))


def tar(series: GlucoseSeries, threshold: float = DEFAULT_HYPER_THRESHOLD_MGDL) -> float:
    """Fraction of monitored time the linear interpolant exceeds the threshold.

    Crossing times are solved exactly on each segment, so the result is the
    exact time fraction for the piecewise-linear trace, not a sample count.
    """
    t, g = series.times, series.glucose
    dt = np.diff(t)
    g0, g1 = g[:-1], g[1:]
    above0, above1 = g0 > threshold, g1 > threshold
    frac = np.zeros_like(dt)
    frac[above0 & above1] = 1.0
    cross = above0 ^ above1
    if np.any(cross):
        x = (threshold - g0[cross]) / (g1[cross] - g0[cross])
        frac[cross] = np.where(above1[cross], 1.0 - x, x)
    return float(np.sum(frac * dt) / np.sum(dt))


def metric_panel(
    series: GlucoseSeries,
    threshold_hyper: float = DEFAULT_HYPER_THRESHOLD_MGDL,
    conga_hours: float = 1.0,
) -> MetricPanel:
    """Compute the full panel; MODD is flagged absent for series up to 24 h."""
    try:
        modd_value: float | None = modd(series)
    except InsufficientDataError:
        modd_value = None
    return MetricPanel(
        subject_id=series.subject_id,
        mean=series_mean(series),
        sd=series_sd(series),
        auc=auc(series),
        mage=mage(series),
        conga1=conga(series, conga_hours),
        modd=modd_value,
        tar=tar(series, threshold_hyper),
        threshold_hyper=float(threshold_hyper),
    )


def panels_csv(panels: list[MetricPanel]) -> str:
    """Render panels as CSV, one row per subject (full float precision)."""
    lines = ["subject_id," + ",".join(MetricPanel.FIELDS)]
    for p in panels:
        cells = [p.subject_id]
        for name in MetricPanel.FIELDS:
            v = getattr(p, name)
            cells.append("" if v is None else repr(float(v)))
        lines.append(",".join(cells))
    return "\n".join(lines) + "\n"
