"""Cohort assembly: smooth every series, build channels and metric panels.

This is the glue between raw parsed inputs and the regression layer; heavy
per-subject work fans out over a thread pool (numpy releases the GIL in the
underlying LAPACK calls).
"""

from __future__ import annotations

from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field

from .cgm import GlucoseSeries, SubjectRecord
from .distributions import QuantileProfile, build_channels
from .metrics import DEFAULT_HYPER_THRESHOLD_MGDL, MetricPanel, metric_panel
from .smoothing import SmoothedTrajectory, fit_spline


@dataclass(frozen=True)
class SmoothingOptions:
    knots_per_day: int = 6
    lambda_smooth: float | str = "auto"
    degree: int = 3


@dataclass
class Cohort:
    subject_ids: list[str]
    profiles: dict[str, dict[str, QuantileProfile]]
    panels: dict[str, MetricPanel]
    records: list[SubjectRecord]
    trajectories: dict[str, SmoothedTrajectory] = field(default_factory=dict)

    def records_by_id(self) -> dict[str, SubjectRecord]:
        return {r.subject_id: r for r in self.records}


def _process_subject(
    series: GlucoseSeries,
    smoothing: SmoothingOptions,
    grid_size: int,
    threshold_hyper: float,
    conga_hours: float,
    use_raw_glucose: bool,
):
    traj = fit_spline(
        series,
        knots_per_day=smoothing.knots_per_day,
        lambda_smooth=smoothing.lambda_smooth,
        degree=smoothing.degree,
    )
    profiles = build_channels(
        series, traj, grid_size=grid_size, use_raw_glucose=use_raw_glucose
    )
    panel = metric_panel(series, threshold_hyper=threshold_hyper, conga_hours=conga_hours)
    return series.subject_id, traj, profiles, panel


def build_cohort(
    series: list[GlucoseSeries],
    records: list[SubjectRecord],
    smoothing: SmoothingOptions = SmoothingOptions(),
    grid_size: int = 100,
    threshold_hyper: float = DEFAULT_HYPER_THRESHOLD_MGDL,
    conga_hours: float = 1.0,
    use_raw_glucose: bool = False,
    threads: int | None = None,
) -> Cohort:
    """Smooth, summarize, and index every subject; order follows the input."""
    def work(s: GlucoseSeries):
        return _process_subject(
            s, smoothing, grid_size, threshold_hyper, conga_hours, use_raw_glucose
        )

    if threads is not None and threads <= 1:
        results = [work(s) for s in series]
    else:
        with ThreadPoolExecutor(max_workers=threads) as pool:
            results = list(pool.map(work, series))

    profiles: dict[str, dict[str, QuantileProfile]] = {}
    panels: dict[str, MetricPanel] = {}
    trajectories: dict[str, SmoothedTrajectory] = {}
    for sid, traj, channel_profiles, panel in results:
        profiles[sid] = channel_profiles
        panels[sid] = panel
        trajectories[sid] = traj
    return Cohort(
        subject_ids=[s.subject_id for s in series],
        profiles=profiles,
        panels=panels,
        records=records,
        trajectories=trajectories,
    )
