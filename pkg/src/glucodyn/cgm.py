"""Ingestion, validation, and serialization of raw CGM records and subject tables.

File formats
------------
CGM CSV          header ``subject_id,timestamp,glucose_mgdl``; one reading per
                 row; timestamps are either real minutes or ISO-8601 strings.
Subject CSV      header ``subject_id,age,fpg_baseline,hba1c_baseline,<outcomes...>``;
                 an empty outcome cell means the outcome is missing.
Calibration CSV  header ``subject_id,date,n_checks``; ``date`` is a 1-based
                 monitored-day index or an ISO date; one row per monitored day.
"""

from __future__ import annotations

import csv
import math
from dataclasses import dataclass, field
from datetime import datetime
from pathlib import Path
from typing import Iterable, Mapping, TextIO

import numpy as np

from .errors import CgmParseError, RangeError, SeriesValidationError

SENSOR_MIN_MGDL = 40.0
SENSOR_MAX_MGDL = 400.0
MIN_SPAN_MINUTES = 2880.0  # two days of monitoring
MIN_DAILY_CALIBRATIONS = 3
DEFAULT_INTERVAL_MINUTES = 5.0

CGM_HEADER = ("subject_id", "timestamp", "glucose_mgdl")
SUBJECT_HEADER_PREFIX = ("subject_id", "age", "fpg_baseline", "hba1c_baseline")
CALIBRATION_HEADER = ("subject_id", "date", "n_checks")

RULE_MIN_DURATION = "min-duration"


@dataclass(frozen=True, eq=False)
class GlucoseSeries:
    """One subject's CGM record: times in minutes since first reading, mg/dL values.

    Immutable after construction; the arrays are marked read-only so instances
    can be shared freely across threads.
    """

    subject_id: str
    times: np.ndarray
    glucose: np.ndarray
    nominal_interval: float = DEFAULT_INTERVAL_MINUTES
    metadata: Mapping[str, object] = field(default_factory=dict)

    def __post_init__(self):
        times = np.ascontiguousarray(self.times, dtype=float)
        glucose = np.ascontiguousarray(self.glucose, dtype=float)
        if times.ndim != 1 or glucose.ndim != 1 or times.size != glucose.size:
            raise SeriesValidationError(
                f"subject {self.subject_id!r}: times and glucose must be 1-d and equally long"
            )
        if times.size < 2:
            raise SeriesValidationError(
                f"subject {self.subject_id!r}: a series needs at least 2 readings"
            )
        if not np.all(np.isfinite(times)) or not np.all(np.isfinite(glucose)):
            raise SeriesValidationError(
                f"subject {self.subject_id!r}: non-finite time or glucose value"
            )
        diffs = np.diff(times)
        if np.any(diffs <= 0):
            where = int(np.argmax(diffs <= 0))
            raise SeriesValidationError(
                f"subject {self.subject_id!r}: timestamps not strictly increasing "
                f"at position {where + 1} (t={times[where + 1]!r})"
            )
        bad = (glucose < SENSOR_MIN_MGDL) | (glucose > SENSOR_MAX_MGDL)
        if np.any(bad):
            where = int(np.argmax(bad))
            raise RangeError(
                f"subject {self.subject_id!r}: glucose {glucose[where]!r} at "
                f"t={times[where]!r} outside sensor range "
                f"[{SENSOR_MIN_MGDL:g}, {SENSOR_MAX_MGDL:g}] mg/dL"
            )
        times.setflags(write=False)
        glucose.setflags(write=False)
        object.__setattr__(self, "times", times)
        object.__setattr__(self, "glucose", glucose)
        object.__setattr__(self, "nominal_interval", float(self.nominal_interval))

    @property
    def n(self) -> int:
        return int(self.times.size)

    @property
    def span_minutes(self) -> float:
        return float(self.times[-1] - self.times[0])

    def data_equal(self, other: "GlucoseSeries") -> bool:
        """Bit-identical comparison of the data fields (metadata excluded)."""
        return (
            self.subject_id == other.subject_id
            and self.nominal_interval == other.nominal_interval
            and self.times.shape == other.times.shape
            and bool(np.all(self.times == other.times))
            and bool(np.all(self.glucose == other.glucose))
        )


@dataclass(frozen=True)
class SubjectRecord:
    """Scalar covariates and (possibly missing) named outcomes for one subject."""

    subject_id: str
    age: float
    fpg_baseline: float
    hba1c_baseline: float
    outcomes: Mapping[str, float | None] = field(default_factory=dict)

    def __post_init__(self):
        for name in ("age", "fpg_baseline", "hba1c_baseline"):
            v = getattr(self, name)
            if not math.isfinite(v):
                raise SeriesValidationError(
                    f"subject {self.subject_id!r}: covariate {name} must be finite, got {v!r}"
                )
        for name, v in self.outcomes.items():
            if v is not None and not math.isfinite(v):
                raise SeriesValidationError(
                    f"subject {self.subject_id!r}: outcome {name} must be finite or missing"
                )

    def covariate(self, name: str) -> float:
        return float(getattr(self, name))


@dataclass(frozen=True)
class CalibrationLog:
    """Per-monitored-day counts of capillary glucose checks (day 1 first)."""

    subject_id: str
    counts: tuple[int, ...]

    def __post_init__(self):
        if any(c < 0 for c in self.counts):
            raise SeriesValidationError(
                f"subject {self.subject_id!r}: calibration counts must be >= 0"
            )


@dataclass(frozen=True)
class ValidationReport:
    subject_id: str
    valid: bool
    violations: tuple[str, ...]


def _parse_timestamp(raw: str, line: int) -> tuple[float, datetime | None]:
    """Return (minutes, wall_clock_or_None). Accepts real minutes or ISO-8601."""
    text = raw.strip()
    try:
        return float(text), None
    except ValueError:
        pass
    try:
        dt = datetime.fromisoformat(text.replace("Z", "+00:00"))
    except ValueError:
        raise CgmParseError(f"unparseable timestamp {raw!r}", line=line) from None
    return math.nan, dt  # minutes filled in once the subject's origin is known


def _read_rows(stream: TextIO, expected_header: tuple[str, ...], what: str):
    reader = csv.reader(stream)
    try:
        header = next(reader)
    except StopIteration:
        raise CgmParseError(f"empty {what} file", line=1) from None
    if tuple(h.strip() for h in header[: len(expected_header)]) != expected_header:
        raise CgmParseError(
            f"{what} header must start with {','.join(expected_header)!r}, "
            f"got {','.join(header)!r}",
            line=1,
        )
    return header, reader


def parse_cgm_csv(
    source: str | Path | TextIO,
    nominal_interval: float = DEFAULT_INTERVAL_MINUTES,
) -> list[GlucoseSeries]:
    """Parse a CGM CSV into one time-sorted series per subject.

    Times are normalized to minutes since each subject's first reading.  The
    original wall-clock start (when ISO timestamps are given) is kept in
    ``metadata["start_timestamp"]``; sampling gaps larger than 3x the nominal
    interval are recorded in ``metadata["gaps"]`` and never interpolated.
    """
    if isinstance(source, (str, Path)):
        with open(source, "r", encoding="utf-8", newline="") as fh:
            return parse_cgm_csv(fh, nominal_interval=nominal_interval)

    _, reader = _read_rows(source, CGM_HEADER, "CGM")
    per_subject: dict[str, list[tuple[float, datetime | None, float, int]]] = {}
    for line, row in enumerate(reader, start=2):
        if not row or (len(row) == 1 and not row[0].strip()):
            continue
        if len(row) != 3:
            raise CgmParseError(f"expected 3 fields, got {len(row)}", line=line)
        sid = row[0].strip()
        if not sid:
            raise CgmParseError("empty subject_id", line=line)
        minutes, wall = _parse_timestamp(row[1], line)
        try:
            value = float(row[2])
        except ValueError:
            raise CgmParseError(f"unparseable glucose {row[2]!r}", line=line) from None
        if not math.isfinite(value):
            raise CgmParseError(f"non-finite glucose {row[2]!r}", line=line)
        if value < SENSOR_MIN_MGDL or value > SENSOR_MAX_MGDL:
            raise RangeError(
                f"line {line}: subject {sid!r}: glucose {value:g} outside sensor "
                f"range [{SENSOR_MIN_MGDL:g}, {SENSOR_MAX_MGDL:g}] mg/dL"
            )
        per_subject.setdefault(sid, []).append((minutes, wall, value, line))

    out: list[GlucoseSeries] = []
    for sid, rows in per_subject.items():
        numeric = [r for r in rows if r[1] is None]
        stamped = [r for r in rows if r[1] is not None]
        if numeric and stamped:
            raise CgmParseError(
                f"subject {sid!r} mixes numeric-minute and ISO timestamps "
                f"(e.g. lines {numeric[0][3]} and {stamped[0][3]})"
            )
        start_timestamp = None
        midnight_offset = 0.0
        if stamped:
            stamped.sort(key=lambda r: r[1])
            origin = stamped[0][1]
            start_timestamp = origin.isoformat()
            midnight_offset = origin.hour * 60.0 + origin.minute + origin.second / 60.0
            rows = [
                ((wall - origin).total_seconds() / 60.0, wall, value, line)
                for _, wall, value, line in stamped
            ]
        else:
            rows.sort(key=lambda r: r[0])
            origin_min = rows[0][0]
            rows = [(m - origin_min, None, value, line) for m, _, value, line in rows]

        times = np.array([r[0] for r in rows], dtype=float)
        values = np.array([r[2] for r in rows], dtype=float)
        dup = np.flatnonzero(np.diff(times) == 0)
        if dup.size:
            i = int(dup[0])
            raise SeriesValidationError(
                f"subject {sid!r}: duplicate timestamp at t={times[i]!r} "
                f"(lines {rows[i][3]} and {rows[i + 1][3]})"
            )
        gap_at = np.flatnonzero(np.diff(times) > 3.0 * nominal_interval)
        metadata = {
            "start_timestamp": start_timestamp,
            "midnight_offset_min": midnight_offset,
            "gaps": tuple(
                (int(i), float(times[i + 1] - times[i])) for i in gap_at
            ),
        }
        out.append(
            GlucoseSeries(
                subject_id=sid,
                times=times,
                glucose=values,
                nominal_interval=nominal_interval,
                metadata=metadata,
            )
        )
    return out


def write_cgm_csv(series: Iterable[GlucoseSeries], target: str | Path | TextIO) -> None:
    """Serialize series to the canonical CGM CSV (minutes, full float precision)."""
    if isinstance(target, (str, Path)):
        with open(target, "w", encoding="utf-8", newline="") as fh:
            write_cgm_csv(series, fh)
            return
    writer = csv.writer(target, lineterminator="\n")
    writer.writerow(CGM_HEADER)
    for s in series:
        for t, g in zip(s.times, s.glucose):
            writer.writerow([s.subject_id, repr(float(t)), repr(float(g))])


def parse_subject_csv(source: str | Path | TextIO) -> list[SubjectRecord]:
    """Parse the subject covariate/outcome table; empty cells are missing outcomes."""
    if isinstance(source, (str, Path)):
        with open(source, "r", encoding="utf-8", newline="") as fh:
            return parse_subject_csv(fh)
    header, reader = _read_rows(source, SUBJECT_HEADER_PREFIX, "subject")
    outcome_names = [h.strip() for h in header[len(SUBJECT_HEADER_PREFIX):]]
    records: list[SubjectRecord] = []
    seen: set[str] = set()
    for line, row in enumerate(reader, start=2):
        if not row or (len(row) == 1 and not row[0].strip()):
            continue
        if len(row) != len(header):
            raise CgmParseError(
                f"expected {len(header)} fields, got {len(row)}", line=line
            )
        sid = row[0].strip()
        if sid in seen:
            raise CgmParseError(f"duplicate subject_id {sid!r}", line=line)
        seen.add(sid)
        try:
            age, fpg, a1c = (float(row[i]) for i in (1, 2, 3))
        except ValueError:
            raise CgmParseError("unparseable covariate", line=line) from None
        outcomes: dict[str, float | None] = {}
        for name, cell in zip(outcome_names, row[4:]):
            cell = cell.strip()
            if not cell:
                outcomes[name] = None
            else:
                try:
                    outcomes[name] = float(cell)
                except ValueError:
                    raise CgmParseError(
                        f"unparseable outcome {name}={cell!r}", line=line
                    ) from None
        records.append(
            SubjectRecord(
                subject_id=sid,
                age=age,
                fpg_baseline=fpg,
                hba1c_baseline=a1c,
                outcomes=outcomes,
            )
        )
    return records


def write_subject_csv(
    records: Iterable[SubjectRecord],
    outcome_names: list[str],
    target: str | Path | TextIO,
) -> None:
    if isinstance(target, (str, Path)):
        with open(target, "w", encoding="utf-8", newline="") as fh:
            write_subject_csv(records, outcome_names, fh)
            return
    writer = csv.writer(target, lineterminator="\n")
    writer.writerow(list(SUBJECT_HEADER_PREFIX) + outcome_names)
    for r in records:
        row = [r.subject_id, repr(r.age), repr(r.fpg_baseline), repr(r.hba1c_baseline)]
        for name in outcome_names:
            v = r.outcomes.get(name)
            row.append("" if v is None else repr(float(v)))
        writer.writerow(row)


def parse_calibration_csv(source: str | Path | TextIO) -> dict[str, CalibrationLog]:
    """Parse per-day calibration counts; days ordered by index or by date."""
    if isinstance(source, (str, Path)):
        with open(source, "r", encoding="utf-8", newline="") as fh:
            return parse_calibration_csv(fh)
    _, reader = _read_rows(source, CALIBRATION_HEADER, "calibration")
    raw: dict[str, list[tuple[object, int]]] = {}
    for line, row in enumerate(reader, start=2):
        if not row or (len(row) == 1 and not row[0].strip()):
            continue
        if len(row) != 3:
            raise CgmParseError(f"expected 3 fields, got {len(row)}", line=line)
        sid = row[0].strip()
        date_cell = row[1].strip()
        key: object
        try:
            key = int(date_cell)
        except ValueError:
            try:
                key = datetime.fromisoformat(date_cell).date()
            except ValueError:
                raise CgmParseError(
                    f"unparseable date {date_cell!r}", line=line
                ) from None
        try:
            n = int(row[2])
        except ValueError:
            raise CgmParseError(f"unparseable n_checks {row[2]!r}", line=line) from None
        if n < 0:
            raise CgmParseError(f"negative n_checks {n}", line=line)
        raw.setdefault(sid, []).append((key, n))
    logs: dict[str, CalibrationLog] = {}
    for sid, entries in raw.items():
        kinds = {type(k) for k, _ in entries}
        if len(kinds) > 1:
            raise CgmParseError(f"subject {sid!r} mixes day indexes and dates")
        entries.sort(key=lambda e: e[0])  # type: ignore[arg-type]
        logs[sid] = CalibrationLog(subject_id=sid, counts=tuple(n for _, n in entries))
    return logs


def write_calibration_csv(
    logs: Iterable[CalibrationLog], target: str | Path | TextIO
) -> None:
    if isinstance(target, (str, Path)):
        with open(target, "w", encoding="utf-8", newline="") as fh:
            write_calibration_csv(logs, fh)
            return
    writer = csv.writer(target, lineterminator="\n")
    writer.writerow(CALIBRATION_HEADER)
    for log in logs:
        for day, n in enumerate(log.counts, start=1):
            writer.writerow([log.subject_id, day, n])


def monitored_days(series: GlucoseSeries) -> int:
    """Calendar days touched by the monitoring window.

    The day boundary is local midnight of the first reading; when the series
    has no wall-clock origin, the first reading is taken to sit at midnight.
    """
    offset = float(series.metadata.get("midnight_offset_min", 0.0) or 0.0)
    return max(1, math.ceil((offset + series.span_minutes) / 1440.0))


def validate_series(
    series: GlucoseSeries, log: CalibrationLog | None = None
) -> ValidationReport:
    """Apply the monitoring-protocol rules; the outcome is the report, never a raise.

    A series is valid iff it spans at least 2 days and, when a calibration log
    is supplied, every monitored day has at least 3 capillary checks.
    """
    violations: list[str] = []
    if series.span_minutes < MIN_SPAN_MINUTES:
        violations.append(RULE_MIN_DURATION)
    if log is not None:
        for day in range(1, monitored_days(series) + 1):
            count = log.counts[day - 1] if day - 1 < len(log.counts) else 0
            if count < MIN_DAILY_CALIBRATIONS:
                violations.append(f"calibration-day-{day}")
    return ValidationReport(
        subject_id=series.subject_id,
        valid=not violations,
        violations=tuple(violations),
    )
