"""FastAPI service wrapping the analysis pipeline.

Every endpoint is stateless: inputs arrive as CSV text or JSON structures in
the request body and results return the same way, so the service can sit
behind any client (the bundled CLI talks to it in-process by default).
"""

from __future__ import annotations

import io
from concurrent.futures import ThreadPoolExecutor

import numpy as np
from fastapi import FastAPI, Request
from fastapi.responses import JSONResponse

from .. import __version__
from ..cgm import (
    parse_calibration_csv,
    parse_cgm_csv,
    parse_subject_csv,
    validate_series,
    write_calibration_csv,
    write_cgm_csv,
    write_subject_csv,
)
from ..distributions import kde_multivariate, kde_univariate
from ..errors import ConfigurationError, GlucodynError
from ..metrics import metric_panel, panels_csv
from ..pipeline import SmoothingOptions, build_cohort
from ..regression import (
    build_design,
    fit,
    ladder_spec,
    model_from_dict,
    model_to_dict,
    predict,
    run_model_ladder,
)
from ..simulate import generate_cohort, scenario_from_dict
from ..smoothing import evaluate, fit_spline
from ..tables import (
    coefficient_csv,
    heatmap_csv,
    ladder_csv,
    ladder_from_dict,
    ladder_markdown,
    ladder_to_dict,
)
from . import schemas


def _smoothing_options(config: schemas.SmoothingConfig) -> SmoothingOptions:
    return SmoothingOptions(
        knots_per_day=config.knots_per_day,
        lambda_smooth=config.lambda_smooth,
        degree=config.degree,
    )


def _parse_series(csv_text: str):
    return parse_cgm_csv(io.StringIO(csv_text))


def create_app() -> FastAPI:
    app = FastAPI(title="glucodyn", version=__version__)

    @app.exception_handler(GlucodynError)
    async def domain_error_handler(request: Request, exc: GlucodynError):
        return JSONResponse(
            status_code=422,
            content={"error": type(exc).__name__, "detail": str(exc)},
        )

    @app.get("/v1/health", response_model=schemas.HealthResponse)
    def health() -> schemas.HealthResponse:
        return schemas.HealthResponse(status="ok", version=__version__)

    @app.post("/v1/synth", response_model=schemas.SynthResponse)
    def synth(req: schemas.SynthRequest) -> schemas.SynthResponse:
        scenario = scenario_from_dict(req.scenario)
        cohort = generate_cohort(scenario)
        cgm_buf, subj_buf, cal_buf = io.StringIO(), io.StringIO(), io.StringIO()
        write_cgm_csv(cohort.series, cgm_buf)
        outcome_names = [link.name for link in scenario.outcome_links]
        write_subject_csv(cohort.records, outcome_names, subj_buf)
        write_calibration_csv(cohort.calibration, cal_buf)
        return schemas.SynthResponse(
            cgm_csv=cgm_buf.getvalue(),
            subjects_csv=subj_buf.getvalue(),
            calibration_csv=cal_buf.getvalue(),
            n_subjects=len(cohort.series),
            outcome_names=outcome_names,
        )

    @app.post("/v1/validate", response_model=schemas.ValidateResponse)
    def validate(req: schemas.ValidateRequest) -> schemas.ValidateResponse:
        series = _parse_series(req.cgm_csv)
        logs = (
            parse_calibration_csv(io.StringIO(req.calibration_csv))
            if req.calibration_csv
            else {}
        )
        reports = [
            validate_series(s, logs.get(s.subject_id)) for s in series
        ]
        return schemas.ValidateResponse(
            reports=[
                schemas.SeriesReport(
                    subject_id=r.subject_id,
                    valid=r.valid,
                    violations=list(r.violations),
                )
                for r in reports
            ],
            all_valid=all(r.valid for r in reports),
        )

    @app.post("/v1/metrics", response_model=schemas.MetricsResponse)
    def metrics(req: schemas.MetricsRequest) -> schemas.MetricsResponse:
        series = _parse_series(req.cgm_csv)

        def panel_for(s):
            return metric_panel(
                s, threshold_hyper=req.threshold_hyper, conga_hours=req.conga_hours
            )

        if req.threads is not None and req.threads <= 1:
            panels = [panel_for(s) for s in series]
        else:
            with ThreadPoolExecutor(max_workers=req.threads) as pool:
                panels = list(pool.map(panel_for, series))
        return schemas.MetricsResponse(
            panels=[
                schemas.MetricPanelModel(
                    subject_id=p.subject_id, mean=p.mean, sd=p.sd, auc=p.auc,
                    mage=p.mage, conga1=p.conga1, modd=p.modd, tar=p.tar,
                    threshold_hyper=p.threshold_hyper,
                )
                for p in panels
            ],
            csv_text=panels_csv(panels),
        )

    @app.post("/v1/glucodensity", response_model=schemas.GlucodensityResponse)
    def glucodensity(req: schemas.GlucodensityRequest) -> schemas.GlucodensityResponse:
        series = _parse_series(req.cgm_csv)
        records = []  # profiles only; no covariates needed here
        cohort = build_cohort(
            series,
            records,
            smoothing=_smoothing_options(req.smoothing),
            grid_size=req.grid_size,
            use_raw_glucose=req.use_raw_glucose,
            threads=req.threads,
        )
        subjects = []
        for s in series:
            profiles = cohort.profiles[s.subject_id]
            densities = None
            if req.include_densities:
                densities = {}
                for channel, profile in profiles.items():
                    traj = cohort.trajectories[s.subject_id]
                    if channel == "glucose":
                        values = s.glucose if req.use_raw_glucose else evaluate(traj, s.times, 0)
                    elif channel == "speed":
                        values = evaluate(traj, s.times, 1)
                    else:
                        values = evaluate(traj, s.times, 2)
                    estimate = kde_univariate(values, grid_size=req.density_grid_size)
                    densities[channel] = schemas.DensityModel(
                        grid=estimate.grid.tolist(),
                        density=estimate.density.tolist(),
                        bandwidth=estimate.bandwidth,
                    )
            subjects.append(
                schemas.SubjectChannels(
                    subject_id=s.subject_id,
                    grid=profiles["glucose"].grid.tolist(),
                    glucose=profiles["glucose"].values.tolist(),
                    speed=profiles["speed"].values.tolist(),
                    acceleration=profiles["acceleration"].values.tolist(),
                    densities=densities,
                )
            )
        return schemas.GlucodensityResponse(subjects=subjects, grid_size=req.grid_size)

    @app.post("/v1/heatmap", response_model=schemas.HeatmapResponse)
    def heatmap(req: schemas.HeatmapRequest) -> schemas.HeatmapResponse:
        series = _parse_series(req.cgm_csv)
        by_id = {s.subject_id: s for s in series}
        sid = req.subject_id or series[0].subject_id
        if sid not in by_id:
            raise ConfigurationError(f"unknown subject {sid!r}")
        s = by_id[sid]
        smoothing = _smoothing_options(req.smoothing)
        traj = fit_spline(
            s,
            knots_per_day=smoothing.knots_per_day,
            lambda_smooth=smoothing.lambda_smooth,
            degree=smoothing.degree,
        )
        deriv_order = {"glucose": 0, "speed": 1, "acceleration": 2}
        for channel in (req.channel_x, req.channel_y):
            if channel not in deriv_order:
                raise ConfigurationError(f"unknown channel {channel!r}")
        x = evaluate(traj, s.times, deriv_order[req.channel_x])
        y = evaluate(traj, s.times, deriv_order[req.channel_y])
        points = np.column_stack([x, y])
        bandwidth = req.bandwidth if isinstance(req.bandwidth, str) else np.asarray(req.bandwidth)
        grid = kde_multivariate(
            points, bandwidth, grid_sizes=[req.grid_size_x, req.grid_size_y]
        )
        return schemas.HeatmapResponse(
            subject_id=sid,
            x_grid=grid.axes[0].tolist(),
            y_grid=grid.axes[1].tolist(),
            density=grid.density.tolist(),
            csv_text=heatmap_csv(grid.axes[0], grid.axes[1], grid.density),
        )

    def _prepare_cohort(cgm_csv: str, subjects_csv: str, options: schemas.FitOptions):
        series = _parse_series(cgm_csv)
        records = parse_subject_csv(io.StringIO(subjects_csv))
        return build_cohort(
            series,
            records,
            smoothing=_smoothing_options(options.smoothing),
            grid_size=options.grid_size,
            threshold_hyper=options.threshold_hyper,
            threads=options.threads,
        )

    @app.post("/v1/fit", response_model=schemas.FitResponse)
    def fit_endpoint(req: schemas.FitRequest) -> schemas.FitResponse:
        cohort = _prepare_cohort(req.cgm_csv, req.subjects_csv, req.options)
        spec = ladder_spec(
            req.model,
            k0=req.options.k0,
            l0=req.options.l0,
            criterion=req.options.criterion,
            scale=req.options.scale,
            include_metrics=req.options.include_metrics,
        )
        design = build_design(
            cohort.profiles, cohort.records, spec, req.outcome, panels=cohort.panels
        )
        model = fit(design, spec)
        return schemas.FitResponse(
            model=model_to_dict(model),
            diagnostics=model.diagnostics.as_dict(),
            n_used=design.n,
        )

    @app.post("/v1/ladder", response_model=schemas.LadderResponse)
    def ladder(req: schemas.LadderRequest) -> schemas.LadderResponse:
        cohort = _prepare_cohort(req.cgm_csv, req.subjects_csv, req.options)
        result = run_model_ladder(
            cohort.profiles,
            cohort.records,
            cohort.panels,
            outcomes=req.outcomes,
            model_ids=tuple(req.models),
            k0=req.options.k0,
            l0=req.options.l0,
            criterion=req.options.criterion,
            include_metrics=req.options.include_metrics,
        )
        return schemas.LadderResponse(
            result=ladder_to_dict(result),
            table_csv=ladder_csv(result),
            coefficient_csv={
                outcome: coefficient_csv(result, outcome) for outcome in result.outcomes
            },
            markdown=ladder_markdown(result),
        )

    @app.post("/v1/predict", response_model=schemas.PredictResponse)
    def predict_endpoint(req: schemas.PredictRequest) -> schemas.PredictResponse:
        model = model_from_dict(req.model)
        series = _parse_series(req.cgm_csv)
        records = parse_subject_csv(io.StringIO(req.subjects_csv))
        cohort = build_cohort(
            series,
            records,
            smoothing=_smoothing_options(req.smoothing),
            grid_size=model.grid_size,
            threads=req.threads,
        )
        result = predict(model, cohort.profiles, records, panels=cohort.panels)
        return schemas.PredictResponse(
            predictions=[
                schemas.PredictionRow(subject_id=sid, value=float(v))
                for sid, v in zip(result.subject_ids, result.values)
            ],
            clamped=result.clamped,
        )

    @app.post("/v1/report", response_model=schemas.ReportResponse)
    def report(req: schemas.ReportRequest) -> schemas.ReportResponse:
        result = ladder_from_dict(req.result)
        return schemas.ReportResponse(markdown=ladder_markdown(result))

    return app


app = create_app()
