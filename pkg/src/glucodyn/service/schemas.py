"""Pydantic request/response models for the HTTP service.

File contents travel as CSV text inside the JSON payloads, so each request is
self-contained and the service stays stateless; the CLI is just a client that
moves these payloads between disk and the service.
"""

from __future__ import annotations

from typing import Literal

from pydantic import BaseModel, Field


class SmoothingConfig(BaseModel):
    knots_per_day: int = 6
    lambda_smooth: float | Literal["auto"] = "auto"
    degree: int = 3


class SynthRequest(BaseModel):
    scenario: dict = Field(description="Scenario config; keys mirror the scenario fields")


class SynthResponse(BaseModel):
    cgm_csv: str
    subjects_csv: str
    calibration_csv: str
    n_subjects: int
    outcome_names: list[str]


class ValidateRequest(BaseModel):
    cgm_csv: str
    calibration_csv: str | None = None


class SeriesReport(BaseModel):
    subject_id: str
    valid: bool
    violations: list[str]


class ValidateResponse(BaseModel):
    reports: list[SeriesReport]
    all_valid: bool


class MetricsRequest(BaseModel):
    cgm_csv: str
    threshold_hyper: float = 140.0
    conga_hours: float = 1.0
    threads: int | None = None


class MetricPanelModel(BaseModel):
    subject_id: str
    mean: float
    sd: float
    auc: float
    mage: float
    conga1: float
    modd: float | None
    tar: float
    threshold_hyper: float


class MetricsResponse(BaseModel):
    panels: list[MetricPanelModel]
    csv_text: str


class GlucodensityRequest(BaseModel):
    cgm_csv: str
    grid_size: int = 100
    smoothing: SmoothingConfig = SmoothingConfig()
    use_raw_glucose: bool = False
    include_densities: bool = False
    density_grid_size: int = 512
    threads: int | None = None


class DensityModel(BaseModel):
    grid: list[float]
    density: list[float]
    bandwidth: float


class SubjectChannels(BaseModel):
    subject_id: str
    grid: list[float]
    glucose: list[float]
    speed: list[float]
    acceleration: list[float]
    densities: dict[str, DensityModel] | None = None


class GlucodensityResponse(BaseModel):
    subjects: list[SubjectChannels]
    grid_size: int


class HeatmapRequest(BaseModel):
    cgm_csv: str
    subject_id: str | None = None
    channel_x: str = "glucose"
    channel_y: str = "speed"
    smoothing: SmoothingConfig = SmoothingConfig()
    grid_size_x: int = 64
    grid_size_y: int = 64
    bandwidth: list[list[float]] | Literal["auto"] = "auto"


class HeatmapResponse(BaseModel):
    subject_id: str
    x_grid: list[float]
    y_grid: list[float]
    density: list[list[float]]
    csv_text: str


class FitOptions(BaseModel):
    k0: int = 8
    l0: int = 8
    criterion: Literal["gcv", "ubre"] = "gcv"
    scale: float | None = None
    include_metrics: bool = False
    grid_size: int = 100
    threshold_hyper: float = 140.0
    smoothing: SmoothingConfig = SmoothingConfig()
    threads: int | None = None


class FitRequest(BaseModel):
    cgm_csv: str
    subjects_csv: str
    outcome: str
    model: int = 3
    options: FitOptions = FitOptions()


class FitResponse(BaseModel):
    model: dict
    diagnostics: dict
    n_used: int


class LadderRequest(BaseModel):
    cgm_csv: str
    subjects_csv: str
    outcomes: list[str] | None = None
    models: list[int] = [1, 2, 3, 4, 5]
    options: FitOptions = FitOptions()


class LadderResponse(BaseModel):
    result: dict
    table_csv: str
    coefficient_csv: dict[str, str]
    markdown: str


class PredictRequest(BaseModel):
    model: dict
    cgm_csv: str
    subjects_csv: str
    smoothing: SmoothingConfig = SmoothingConfig()
    threads: int | None = None


class PredictionRow(BaseModel):
    subject_id: str
    value: float


class PredictResponse(BaseModel):
    predictions: list[PredictionRow]
    clamped: int


class ReportRequest(BaseModel):
    result: dict


class ReportResponse(BaseModel):
    markdown: str


class HealthResponse(BaseModel):
    status: str
    version: str
