"""Deterministic synthetic-cohort generation for desk-scale validation.

Each subject gets a 5-minute-sampled trace: a baseline level plus smooth meal
bumps plus stationary AR(1) noise, clipped to the sensor range.  Meal bumps
use the squared raised cosine ``A * cos(pi*u/2)**4`` on ``|u| <= 1`` so the
latent curve has a continuous second derivative and analytic speed and
acceleration are available for oracle checks.  Randomness comes from the
counter-based Philox generator with per-subject spawn keys, so a scenario's
output is byte-identical across runs and platforms for a fixed seed.

Outcome links combine covariates with three per-subject signals:

* ``glucose_mean``    mean of the realized (noisy, clipped) readings, which is
  exactly the integral of the subject's empirical glucose quantile function;
* ``speed_mean_abs``  mean absolute latent first derivative at reading times;
* ``accel_mean_abs``  mean absolute latent second derivative at reading times.
"""

from __future__ import annotations

import json
import math
from dataclasses import dataclass, field, asdict
from pathlib import Path

import numpy as np

from .cgm import (
    CalibrationLog,
    GlucoseSeries,
    SubjectRecord,
    SENSOR_MAX_MGDL,
    SENSOR_MIN_MGDL,
)
from .errors import ScenarioError


@dataclass(frozen=True)
class OutcomeLink:
    """Linear recipe for one synthetic outcome."""

    name: str
    intercept: float = 0.0
    age: float = 0.0
    fpg_baseline: float = 0.0
    hba1c_baseline: float = 0.0
    glucose_mean: float = 0.0
    speed_mean_abs: float = 0.0
    accel_mean_abs: float = 0.0
    noise_sd: float = 0.0
    missing_rate: float = 0.0

    def __post_init__(self):
        if not self.name:
            raise ScenarioError("outcome link needs a name")
        if self.noise_sd < 0 or not (0.0 <= self.missing_rate < 1.0):
            raise ScenarioError(f"outcome {self.name!r}: bad noise_sd or missing_rate")


@dataclass(frozen=True)
class CohortScenario:
    """Generator parameters; a fixed seed yields byte-identical output."""

    n_subjects: int
    days: int = 2
    seed: int = 0
    sampling_interval: float = 5.0
    baseline_mean: float = 105.0
    baseline_sd: float = 12.0
    meals_per_day: int = 3
    meal_amplitude_range: tuple[float, float] = (25.0, 65.0)
    meal_width_range: tuple[float, float] = (45.0, 110.0)
    meal_time_jitter: float = 45.0
    noise_sd: float = 3.0
    noise_ar: float = 0.7
    age_range: tuple[float, float] = (30.0, 70.0)
    outcome_links: tuple[OutcomeLink, ...] = ()

    def __post_init__(self):
        if self.n_subjects < 1 or self.days < 1:
            raise ScenarioError("need n_subjects >= 1 and days >= 1")
        if self.sampling_interval <= 0:
            raise ScenarioError("sampling_interval must be positive")
        if not (0.0 <= self.noise_ar < 1.0):
            raise ScenarioError("noise_ar must be in [0, 1)")
        for lo, hi in (self.meal_amplitude_range, self.meal_width_range, self.age_range):
            if not (math.isfinite(lo) and math.isfinite(hi) and lo <= hi):
                raise ScenarioError("ranges must be finite with lo <= hi")
        if self.meal_width_range[0] <= 0 and self.meals_per_day > 0:
            raise ScenarioError("meal widths must be positive")
        if self.noise_sd < 0 or self.baseline_sd < 0:
            raise ScenarioError("standard deviations must be >= 0")


def pulse_value(u: np.ndarray) -> np.ndarray:
    """Squared raised cosine cos(pi*u/2)**4 on |u| <= 1, zero outside."""
    inside = np.abs(u) <= 1.0
    theta = 0.5 * math.pi * np.where(inside, u, 0.0)
    return np.where(inside, np.cos(theta) ** 4, 0.0)


def pulse_speed(u: np.ndarray) -> np.ndarray:
    inside = np.abs(u) <= 1.0
    theta = 0.5 * math.pi * np.where(inside, u, 0.0)
    return np.where(inside, -2.0 * math.pi * np.cos(theta) ** 3 * np.sin(theta), 0.0)


def pulse_accel(u: np.ndarray) -> np.ndarray:
    inside = np.abs(u) <= 1.0
    theta = 0.5 * math.pi * np.where(inside, u, 0.0)
    c, s = np.cos(theta), np.sin(theta)
    return np.where(inside, -(math.pi**2) * c**2 * (c**2 - 3.0 * s**2), 0.0)


@dataclass(frozen=True)
class SynthCohort:
    series: list[GlucoseSeries]
    records: list[SubjectRecord]
    calibration: list[CalibrationLog]
    signals: dict[str, dict[str, float]] = field(default_factory=dict)


def _subject_rng(seed: int, index: int) -> np.random.Generator:
    return np.random.Generator(
        np.random.Philox(np.random.SeedSequence(entropy=seed, spawn_key=(index,)))
    )


def generate_subject(
    scenario: CohortScenario, index: int
) -> tuple[GlucoseSeries, SubjectRecord, CalibrationLog, dict[str, float]]:
    rng = _subject_rng(scenario.seed, index)
    sid = f"S{index:04d}"
    horizon = scenario.days * 1440.0
    t = np.arange(0.0, horizon + scenario.sampling_interval / 2, scenario.sampling_interval)

    age = rng.uniform(*scenario.age_range)
    baseline = rng.normal(scenario.baseline_mean, scenario.baseline_sd)
    width = rng.uniform(*scenario.meal_width_range)

    level = np.full_like(t, baseline)
    speed = np.zeros_like(t)
    accel = np.zeros_like(t)
    for day in range(scenario.days):
        for meal in range(scenario.meals_per_day):
            center = (
                day * 1440.0
                + (meal + 1) * 1440.0 / (scenario.meals_per_day + 1)
                + rng.uniform(-scenario.meal_time_jitter, scenario.meal_time_jitter)
            )
            amplitude = rng.uniform(*scenario.meal_amplitude_range)
            u = (t - center) / width
            level += amplitude * pulse_value(u)
            speed += (amplitude / width) * pulse_speed(u)
            accel += (amplitude / width**2) * pulse_accel(u)

    if scenario.noise_sd > 0:
        shocks = rng.normal(0.0, 1.0, size=t.size)
        noise = np.empty_like(t)
        noise[0] = scenario.noise_sd * shocks[0]
        scale = scenario.noise_sd * math.sqrt(1.0 - scenario.noise_ar**2)
        for k in range(1, t.size):
            noise[k] = scenario.noise_ar * noise[k - 1] + scale * shocks[k]
        readings = level + noise
    else:
        readings = level.copy()

    clipped = (readings < SENSOR_MIN_MGDL) | (readings > SENSOR_MAX_MGDL)
    if clipped.mean() > 0.5:
        raise ScenarioError(
            f"subject {sid}: {clipped.mean():.0%} of samples clipped to the sensor "
            "range; scenario parameters are implausible"
        )
    readings = np.clip(readings, SENSOR_MIN_MGDL, SENSOR_MAX_MGDL)

    glucose_mean = float(np.mean(readings))
    speed_mean_abs = float(np.mean(np.abs(speed)))
    accel_mean_abs = float(np.mean(np.abs(accel)))
    fpg = 0.8 * glucose_mean + 8.0 + rng.normal(0.0, 5.0)
    hba1c = 3.0 + 0.025 * glucose_mean + rng.normal(0.0, 0.15)

    signals = {
        "age": float(age),
        "fpg_baseline": float(fpg),
        "hba1c_baseline": float(hba1c),
        "glucose_mean": glucose_mean,
        "speed_mean_abs": speed_mean_abs,
        "accel_mean_abs": accel_mean_abs,
    }
    outcomes: dict[str, float | None] = {}
    for link in scenario.outcome_links:
        truth = (
            link.intercept
            + link.age * age
            + link.fpg_baseline * fpg
            + link.hba1c_baseline * hba1c
            + link.glucose_mean * glucose_mean
            + link.speed_mean_abs * speed_mean_abs
            + link.accel_mean_abs * accel_mean_abs
        )
        signals[f"truth_{link.name}"] = float(truth)
        value: float | None = truth + (
            rng.normal(0.0, link.noise_sd) if link.noise_sd > 0 else 0.0
        )
        if link.missing_rate > 0 and rng.uniform() < link.missing_rate:
            value = None
        outcomes[link.name] = None if value is None else float(value)

    series = GlucoseSeries(
        subject_id=sid,
        times=t,
        glucose=readings,
        nominal_interval=scenario.sampling_interval,
        metadata={"start_timestamp": None, "midnight_offset_min": 0.0, "gaps": ()},
    )
    record = SubjectRecord(
        subject_id=sid, age=float(age), fpg_baseline=float(fpg),
        hba1c_baseline=float(hba1c), outcomes=outcomes,
    )
    log = CalibrationLog(subject_id=sid, counts=(3,) * scenario.days)
    return series, record, log, signals


def generate_cohort(scenario: CohortScenario) -> SynthCohort:
    """Generate all subjects; reproducible and parallel-safe via per-subject streams."""
    series, records, logs, signals = [], [], [], {}
    for index in range(scenario.n_subjects):
        s, r, log, sig = generate_subject(scenario, index)
        series.append(s)
        records.append(r)
        logs.append(log)
        signals[s.subject_id] = sig
    return SynthCohort(series=series, records=records, calibration=logs, signals=signals)


def scenario_to_dict(scenario: CohortScenario) -> dict:
    raw = asdict(scenario)
    raw["outcome_links"] = [asdict(link) for link in scenario.outcome_links]
    return raw


def scenario_from_dict(raw: dict) -> CohortScenario:
    data = dict(raw)
    links = data.pop("outcome_links", data.pop("outcomes", []))
    try:
        parsed_links = tuple(OutcomeLink(**entry) for entry in links)
        for key in ("meal_amplitude_range", "meal_width_range", "age_range"):
            if key in data:
                data[key] = tuple(data[key])
        return CohortScenario(**data, outcome_links=parsed_links)
    except TypeError as exc:
        raise ScenarioError(f"bad scenario config: {exc}") from exc


def load_scenario(path: str | Path) -> CohortScenario:
    """Read a scenario from a JSON config file (documented keys = field names)."""
    with open(path, "r", encoding="utf-8") as fh:
        try:
            raw = json.load(fh)
        except json.JSONDecodeError as exc:
            raise ScenarioError(f"scenario config is not valid JSON: {exc}") from exc
    if not isinstance(raw, dict):
        raise ScenarioError("scenario config must be a JSON object")
    return scenario_from_dict(raw)
