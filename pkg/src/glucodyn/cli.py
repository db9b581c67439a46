"""Command-line client for the analysis service.

Each subcommand reads local files, sends one request to the HTTP service, and
writes the response to disk.  By default the service runs in-process (the
request still passes through the full HTTP layer via an ASGI transport); pass
``--server URL`` or set ``GLUCODYN_SERVER`` to talk to a remote instance.

Exit codes: 0 success, 1 validation or data failure, 2 usage error.  All
outputs are written atomically (temp file + rename) and every run leaves a
JSON manifest next to its outputs; volatile fields (timestamps, timings) live
under the manifest's ``timing`` key so the data outputs stay byte-identical
across reruns with the same inputs.
"""

from __future__ import annotations

import asyncio
import hashlib
import json
import os
import sys
import tempfile
import time
from datetime import datetime, timezone
from pathlib import Path

import click
import httpx

from . import __version__

DEFAULT_TIMEOUT = 3600.0


class ServiceClient:
    """POSTs payloads either in-process (ASGI) or to a remote server."""

    def __init__(self, server: str | None):
        self.server = server

    def post(self, path: str, payload: dict) -> dict:
        if self.server:
            with httpx.Client(base_url=self.server, timeout=DEFAULT_TIMEOUT) as client:
                response = client.post(path, json=payload)
        else:
            response = asyncio.run(self._post_in_process(path, payload))
        if response.status_code == 422:
            body = response.json()
            detail = body.get("detail", body)
            if isinstance(detail, dict):
                detail = detail.get("detail", json.dumps(detail))
            raise click.ClickException(f"{body.get('error', 'error')}: {detail}")
        if response.status_code >= 400:
            raise click.ClickException(
                f"service returned HTTP {response.status_code}: {response.text[:500]}"
            )
        return response.json()

    @staticmethod
    async def _post_in_process(path: str, payload: dict) -> httpx.Response:
        from .service.app import create_app

        transport = httpx.ASGITransport(app=create_app())
        async with httpx.AsyncClient(
            transport=transport, base_url="http://glucodyn", timeout=DEFAULT_TIMEOUT
        ) as client:
            return await client.post(path, json=payload)


def atomic_write(path: Path, text: str) -> None:
    path.parent.mkdir(parents=True, exist_ok=True)
    fd, tmp = tempfile.mkstemp(dir=path.parent, prefix=f".{path.name}.", suffix=".tmp")
    try:
        with os.fdopen(fd, "w", encoding="utf-8") as fh:
            fh.write(text)
        os.replace(tmp, path)
    except BaseException:
        if os.path.exists(tmp):
            os.unlink(tmp)
        raise


def _config_hash(payload: dict) -> str:
    return hashlib.sha256(
        json.dumps(payload, sort_keys=True, default=str).encode()
    ).hexdigest()


def write_manifest(
    directory: Path,
    subcommand: str,
    inputs: list[str],
    payload: dict,
    warnings: dict,
    timings: dict[str, float],
) -> None:
    manifest = {
        "run": {
            "subcommand": subcommand,
            "inputs": inputs,
            "config_hash": _config_hash(payload),
            "tool_version": __version__,
            "warnings": warnings,
        },
        "timing": {
            "created_utc": datetime.now(timezone.utc).isoformat(),
            "stages_seconds": timings,
        },
    }
    atomic_write(directory / "run_manifest.json", json.dumps(manifest, indent=2) + "\n")


def _load_json_config(path: str | None) -> dict:
    if not path:
        return {}
    with open(path, "r", encoding="utf-8") as fh:
        config = json.load(fh)
    if not isinstance(config, dict):
        raise click.ClickException("config file must hold a JSON object")
    return config


def _fit_options(config: dict, threads: int | None, **flags) -> dict:
    """Effective fit options: package defaults < config file < explicit flags."""
    options: dict = {}
    for key in (
        "k0", "l0", "criterion", "scale", "include_metrics",
        "grid_size", "threshold_hyper", "smoothing",
    ):
        if key in config:
            options[key] = config[key]
    for key, value in flags.items():
        if value is not None:
            options[key] = value
    smoothing = dict(config.get("smoothing", {}))
    for key in ("knots_per_day", "lambda_smooth", "degree"):
        if flags.get(key) is not None:
            smoothing[key] = flags[key]
        options.pop(key, None)
    if smoothing:
        options["smoothing"] = smoothing
    if threads is not None:
        options["threads"] = threads
    return options


@click.group()
@click.version_option(version=__version__, prog_name="glucodyn")
@click.option(
    "--server",
    envvar="GLUCODYN_SERVER",
    default=None,
    help="Base URL of a running service; default runs the service in-process.",
)
@click.option(
    "--threads",
    type=int,
    default=None,
    help="Worker threads for per-subject stages (default: logical cores).",
)
@click.pass_context
def main(ctx: click.Context, server: str | None, threads: int | None):
    """Glucose analytics pipeline: synth -> validate -> metrics/glucodensity -> fit/ladder -> report."""
    ctx.ensure_object(dict)
    ctx.obj["client"] = ServiceClient(server)
    ctx.obj["threads"] = threads


@main.command()
@click.option("--config", "config_path", required=True, type=click.Path(exists=True))
@click.option("--out-dir", required=True, type=click.Path(file_okay=False))
@click.option("--seed", type=int, default=None, help="Override the scenario seed.")
@click.pass_context
def synth(ctx, config_path: str, out_dir: str, seed: int | None):
    """Generate a synthetic cohort and write its three CSV files."""
    scenario = _load_json_config(config_path)
    if seed is not None:
        scenario["seed"] = seed
    payload = {"scenario": scenario}
    started = time.perf_counter()
    body = ctx.obj["client"].post("/v1/synth", payload)
    request_s = time.perf_counter() - started
    out = Path(out_dir)
    started = time.perf_counter()
    atomic_write(out / "cgm.csv", body["cgm_csv"])
    atomic_write(out / "subjects.csv", body["subjects_csv"])
    atomic_write(out / "calibration.csv", body["calibration_csv"])
    write_manifest(
        out, "synth", [config_path], payload, {},
        {"request": request_s, "write": time.perf_counter() - started},
    )
    click.echo(
        f"wrote {body['n_subjects']} subjects to {out} "
        f"(outcomes: {', '.join(body['outcome_names']) or 'none'})"
    )


@main.command()
@click.option("--cgm", "cgm_path", required=True, type=click.Path(exists=True))
@click.option("--calibration", "calibration_path", type=click.Path(exists=True))
@click.option("--out", "out_path", type=click.Path(), default=None)
@click.pass_context
def validate(ctx, cgm_path: str, calibration_path: str | None, out_path: str | None):
    """Check series against the monitoring protocol; exit 1 on any violation."""
    payload = {"cgm_csv": Path(cgm_path).read_text(encoding="utf-8")}
    inputs = [cgm_path]
    if calibration_path:
        payload["calibration_csv"] = Path(calibration_path).read_text(encoding="utf-8")
        inputs.append(calibration_path)
    started = time.perf_counter()
    body = ctx.obj["client"].post("/v1/validate", payload)
    request_s = time.perf_counter() - started
    for report in body["reports"]:
        status = "valid" if report["valid"] else "INVALID: " + ", ".join(report["violations"])
        click.echo(f"{report['subject_id']}: {status}")
    if out_path:
        atomic_write(Path(out_path), json.dumps(body, indent=2) + "\n")
        write_manifest(
            Path(out_path).parent, "validate", inputs, payload,
            {"invalid_series": sum(1 for r in body["reports"] if not r["valid"])},
            {"request": request_s},
        )
    if not body["all_valid"]:
        sys.exit(1)


@main.command()
@click.option("--cgm", "cgm_path", required=True, type=click.Path(exists=True))
@click.option("--out", "out_path", required=True, type=click.Path())
@click.option("--threshold-hyper", type=float, default=140.0, show_default=True)
@click.option("--conga-hours", type=float, default=1.0, show_default=True)
@click.pass_context
def metrics(ctx, cgm_path: str, out_path: str, threshold_hyper: float, conga_hours: float):
    """Compute the variability-metric panel, one CSV row per subject."""
    payload = {
        "cgm_csv": Path(cgm_path).read_text(encoding="utf-8"),
        "threshold_hyper": threshold_hyper,
        "conga_hours": conga_hours,
        "threads": ctx.obj["threads"],
    }
    started = time.perf_counter()
    body = ctx.obj["client"].post("/v1/metrics", payload)
    request_s = time.perf_counter() - started
    atomic_write(Path(out_path), body["csv_text"])
    write_manifest(
        Path(out_path).parent, "metrics", [cgm_path], payload, {},
        {"request": request_s},
    )
    click.echo(f"wrote {len(body['panels'])} metric rows to {out_path}")


@main.command()
@click.option("--cgm", "cgm_path", required=True, type=click.Path(exists=True))
@click.option("--out-dir", required=True, type=click.Path(file_okay=False))
@click.option("--grid-size", type=int, default=100, show_default=True)
@click.option("--knots-per-day", type=int, default=6, show_default=True)
@click.option("--lambda-smooth", default="auto", show_default=True)
@click.option("--raw-glucose", is_flag=True, help="Use raw readings for the glucose channel.")
@click.option("--densities", is_flag=True, help="Also emit univariate density grids.")
@click.pass_context
def glucodensity(
    ctx, cgm_path: str, out_dir: str, grid_size: int, knots_per_day: int,
    lambda_smooth: str, raw_glucose: bool, densities: bool,
):
    """Write per-subject JSON with glucose/speed/acceleration quantile profiles."""
    try:
        lam: float | str = float(lambda_smooth)
    except ValueError:
        lam = lambda_smooth
    payload = {
        "cgm_csv": Path(cgm_path).read_text(encoding="utf-8"),
        "grid_size": grid_size,
        "smoothing": {"knots_per_day": knots_per_day, "lambda_smooth": lam},
        "use_raw_glucose": raw_glucose,
        "include_densities": densities,
        "threads": ctx.obj["threads"],
    }
    started = time.perf_counter()
    body = ctx.obj["client"].post("/v1/glucodensity", payload)
    request_s = time.perf_counter() - started
    out = Path(out_dir)
    started = time.perf_counter()
    for subject in body["subjects"]:
        atomic_write(
            out / f"{subject['subject_id']}.json",
            json.dumps(subject, indent=2) + "\n",
        )
    write_manifest(
        out, "glucodensity", [cgm_path], payload, {},
        {"request": request_s, "write": time.perf_counter() - started},
    )
    click.echo(f"wrote {len(body['subjects'])} subject profiles to {out}")


@main.command()
@click.option("--cgm", "cgm_path", required=True, type=click.Path(exists=True))
@click.option("--out", "out_path", required=True, type=click.Path())
@click.option("--subject", "subject_id", default=None, help="Default: first subject.")
@click.option("--x", "channel_x", default="glucose", show_default=True)
@click.option("--y", "channel_y", default="speed", show_default=True)
@click.option("--grid-size-x", type=int, default=64, show_default=True)
@click.option("--grid-size-y", type=int, default=64, show_default=True)
@click.pass_context
def heatmap(
    ctx, cgm_path: str, out_path: str, subject_id: str | None,
    channel_x: str, channel_y: str, grid_size_x: int, grid_size_y: int,
):
    """Write a 2-D channel density grid as CSV for external plotting."""
    payload = {
        "cgm_csv": Path(cgm_path).read_text(encoding="utf-8"),
        "subject_id": subject_id,
        "channel_x": channel_x,
        "channel_y": channel_y,
        "grid_size_x": grid_size_x,
        "grid_size_y": grid_size_y,
    }
    started = time.perf_counter()
    body = ctx.obj["client"].post("/v1/heatmap", payload)
    request_s = time.perf_counter() - started
    atomic_write(Path(out_path), body["csv_text"])
    write_manifest(
        Path(out_path).parent, "heatmap", [cgm_path], payload, {},
        {"request": request_s},
    )
    click.echo(f"wrote {channel_x} x {channel_y} density for {body['subject_id']} to {out_path}")


def _smoothing_flags(fn):
    fn = click.option("--knots-per-day", type=int, default=None)(fn)
    fn = click.option("--lambda-smooth", default=None)(fn)
    return fn


@main.command()
@click.option("--cgm", "cgm_path", required=True, type=click.Path(exists=True))
@click.option("--subjects", "subjects_path", required=True, type=click.Path(exists=True))
@click.option("--outcome", required=True)
@click.option("--model", type=click.IntRange(1, 5), default=3, show_default=True)
@click.option("--k0", type=int, default=None)
@click.option("--l0", type=int, default=None)
@click.option("--criterion", type=click.Choice(["gcv", "ubre"]), default=None)
@click.option("--scale", type=float, default=None, help="Known error variance for UBRE.")
@click.option("--include-metrics", is_flag=True, default=None)
@click.option("--grid-size", type=int, default=None)
@click.option("--config", "config_path", type=click.Path(exists=True), default=None)
@click.option("--out-model", required=True, type=click.Path())
@click.option("--out-diagnostics", required=True, type=click.Path())
@_smoothing_flags
@click.pass_context
def fit(
    ctx, cgm_path: str, subjects_path: str, outcome: str, model: int,
    k0, l0, criterion, scale, include_metrics, grid_size, config_path,
    out_model: str, out_diagnostics: str, knots_per_day, lambda_smooth,
):
    """Fit one scalar-on-distribution model and write model + diagnostics JSON."""
    if lambda_smooth is not None:
        try:
            lambda_smooth = float(lambda_smooth)
        except ValueError:
            pass
    config = _load_json_config(config_path)
    options = _fit_options(
        config, ctx.obj["threads"], k0=k0, l0=l0, criterion=criterion, scale=scale,
        include_metrics=include_metrics, grid_size=grid_size,
        knots_per_day=knots_per_day, lambda_smooth=lambda_smooth,
    )
    payload = {
        "cgm_csv": Path(cgm_path).read_text(encoding="utf-8"),
        "subjects_csv": Path(subjects_path).read_text(encoding="utf-8"),
        "outcome": outcome,
        "model": model,
        "options": options,
    }
    started = time.perf_counter()
    body = ctx.obj["client"].post("/v1/fit", payload)
    request_s = time.perf_counter() - started
    atomic_write(Path(out_model), json.dumps(body["model"], indent=2) + "\n")
    atomic_write(Path(out_diagnostics), json.dumps(body["diagnostics"], indent=2) + "\n")
    write_manifest(
        Path(out_model).parent, "fit", [cgm_path, subjects_path], payload,
        {}, {"request": request_s},
    )
    diag = body["diagnostics"]
    click.echo(
        f"model ({model}) on {outcome}: n={body['n_used']} "
        f"adjusted R^2={diag['r2_adj']:.6g} edf={diag['edf']:.6g}"
    )


@main.command()
@click.option("--cgm", "cgm_path", required=True, type=click.Path(exists=True))
@click.option("--subjects", "subjects_path", required=True, type=click.Path(exists=True))
@click.option("--outcomes", default=None, help="Comma-separated; default: all outcomes.")
@click.option("--models", default="1,2,3,4,5", show_default=True)
@click.option("--k0", type=int, default=None)
@click.option("--l0", type=int, default=None)
@click.option("--criterion", type=click.Choice(["gcv", "ubre"]), default=None)
@click.option("--include-metrics", is_flag=True, default=None)
@click.option("--grid-size", type=int, default=None)
@click.option("--config", "config_path", type=click.Path(exists=True), default=None)
@click.option("--out-dir", required=True, type=click.Path(file_okay=False))
@_smoothing_flags
@click.pass_context
def ladder(
    ctx, cgm_path: str, subjects_path: str, outcomes, models, k0, l0, criterion,
    include_metrics, grid_size, config_path, out_dir: str, knots_per_day, lambda_smooth,
):
    """Fit the five-model comparison and write the summary + coefficient tables."""
    if lambda_smooth is not None:
        try:
            lambda_smooth = float(lambda_smooth)
        except ValueError:
            pass
    config = _load_json_config(config_path)
    options = _fit_options(
        config, ctx.obj["threads"], k0=k0, l0=l0, criterion=criterion,
        include_metrics=include_metrics, grid_size=grid_size,
        knots_per_day=knots_per_day, lambda_smooth=lambda_smooth,
    )
    payload = {
        "cgm_csv": Path(cgm_path).read_text(encoding="utf-8"),
        "subjects_csv": Path(subjects_path).read_text(encoding="utf-8"),
        "outcomes": [o.strip() for o in outcomes.split(",")] if outcomes else None,
        "models": [int(m) for m in models.split(",")],
        "options": options,
    }
    started = time.perf_counter()
    body = ctx.obj["client"].post("/v1/ladder", payload)
    request_s = time.perf_counter() - started
    out = Path(out_dir)
    started = time.perf_counter()
    atomic_write(out / "ladder.csv", body["table_csv"])
    atomic_write(out / "ladder.json", json.dumps(body["result"], indent=2) + "\n")
    for outcome, text in body["coefficient_csv"].items():
        atomic_write(out / f"coefficients_{outcome}.csv", text)
    write_manifest(
        out, "ladder", [cgm_path, subjects_path], payload, {},
        {"request": request_s, "write": time.perf_counter() - started},
    )
    click.echo(body["table_csv"].rstrip())


@main.command()
@click.option("--ladder", "ladder_path", required=True, type=click.Path(exists=True),
              help="ladder.json produced by the ladder subcommand.")
@click.option("--out", "out_path", required=True, type=click.Path())
@click.pass_context
def report(ctx, ladder_path: str, out_path: str):
    """Render the comparison and coefficient tables as Markdown."""
    with open(ladder_path, "r", encoding="utf-8") as fh:
        result = json.load(fh)
    payload = {"result": result}
    started = time.perf_counter()
    body = ctx.obj["client"].post("/v1/report", payload)
    request_s = time.perf_counter() - started
    atomic_write(Path(out_path), body["markdown"])
    write_manifest(
        Path(out_path).parent, "report", [ladder_path], payload, {},
        {"request": request_s},
    )
    click.echo(f"wrote report to {out_path}")


@main.command()
@click.option("--host", default="127.0.0.1", show_default=True)
@click.option("--port", type=int, default=8000, show_default=True)
def serve(host: str, port: int):
    """Run the HTTP service (the other subcommands can then use --server)."""
    import uvicorn

    uvicorn.run("glucodyn.service.app:app", host=host, port=port)


if __name__ == "__main__":
    main()
