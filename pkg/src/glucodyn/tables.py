"""Rendering of comparison and coefficient tables (CSV, Markdown, dicts).

Summary tables print numbers with 6 significant digits; machine-readable JSON
forms keep full precision.
"""

from __future__ import annotations

import math

import numpy as np

from .regression import FitDiagnostics, LadderEntry, LadderResult


def _fmt(x: float) -> str:
    if x is None or not math.isfinite(x):
        return ""
    return f"{x:.6g}"


def ladder_csv(result: LadderResult) -> str:
    """Comparison table: one row per outcome, one adjusted-R^2 column per model."""
    model_ids = sorted({mid for by_model in result.entries.values() for mid in by_model})
    lines = ["outcome," + ",".join(f"model_{m}" for m in model_ids)]
    for outcome in result.outcomes:
        row = [outcome]
        for mid in model_ids:
            entry = result.entries[outcome].get(mid)
            row.append(_fmt(entry.diagnostics.r2_adj) if entry else "")
        lines.append(",".join(row))
    return "\n".join(lines) + "\n"


def _stars(coef: float, se: float) -> str:
    if se <= 0 or not math.isfinite(se):
        return ""
    z = abs(coef) / se
    if z > 2.576:
        return "***"
    if z > 1.960:
        return "**"
    if z > 1.645:
        return "*"
    return ""


def coefficient_csv(result: LadderResult, outcome: str) -> str:
    """Linear-term coefficients (SE, significance stars) by model for one outcome."""
    by_model = result.entries[outcome]
    model_ids = sorted(by_model)
    names: list[str] = []
    for entry in by_model.values():
        for name in ["intercept", *entry.linear_names]:
            if name not in names:
                names.append(name)
    lines = ["term," + ",".join(f"model_{m}" for m in model_ids)]
    for name in names:
        row = [name]
        for mid in model_ids:
            entry = by_model[mid]
            cell = ""
            if name == "intercept":
                cell = _fmt_entry_term(entry, None)
            elif name in entry.linear_names:
                cell = _fmt_entry_term(entry, entry.linear_names.index(name))
            row.append(cell)
        lines.append(",".join(row))
    for stat in ("r2_adj", "log_likelihood", "ubre", "edf", "n"):
        row = [stat]
        for mid in model_ids:
            row.append(_fmt(float(getattr(by_model[mid].diagnostics, stat))))
        lines.append(",".join(row))
    return "\n".join(lines) + "\n"


def _fmt_entry_term(entry: LadderEntry, index: int | None) -> str:
    if index is None:
        coef, se = entry.intercept, entry.intercept_se
    else:
        coef, se = float(entry.linear_coefs[index]), float(entry.linear_se[index])
    return f"{coef:.6g} ({se:.6g}){_stars(coef, se)}"


def ladder_markdown(result: LadderResult) -> str:
    """Markdown report: comparison table plus one coefficient table per outcome."""
    model_ids = sorted({mid for by_model in result.entries.values() for mid in by_model})
    out = ["# Model comparison", "", "Adjusted R^2 by outcome and model.", ""]
    header = "| outcome | " + " | ".join(f"model ({m})" for m in model_ids) + " |"
    rule = "|" + "---|" * (len(model_ids) + 1)
    out += [header, rule]
    for outcome in result.outcomes:
        cells = [
            _fmt(result.entries[outcome][m].diagnostics.r2_adj)
            if m in result.entries[outcome]
            else ""
            for m in model_ids
        ]
        out.append("| " + outcome + " | " + " | ".join(cells) + " |")
    for outcome in result.outcomes:
        out += ["", f"## {outcome}: linear terms and fit statistics", ""]
        by_model = result.entries[outcome]
        names: list[str] = []
        for entry in by_model.values():
            for name in ["intercept", *entry.linear_names]:
                if name not in names:
                    names.append(name)
        out.append("| term | " + " | ".join(f"model ({m})" for m in model_ids) + " |")
        out.append("|" + "---|" * (len(model_ids) + 1))
        for name in names:
            cells = []
            for mid in model_ids:
                entry = by_model[mid]
                if name == "intercept":
                    cells.append(_fmt_entry_term(entry, None))
                elif name in entry.linear_names:
                    cells.append(_fmt_entry_term(entry, entry.linear_names.index(name)))
                else:
                    cells.append("")
            out.append("| " + name + " | " + " | ".join(cells) + " |")
        for stat in ("r2_adj", "log_likelihood", "ubre", "edf", "n"):
            cells = [
                _fmt(float(getattr(by_model[m].diagnostics, stat))) for m in model_ids
            ]
            out.append("| " + stat + " | " + " | ".join(cells) + " |")
    return "\n".join(out) + "\n"


def ladder_to_dict(result: LadderResult) -> dict:
    """Full-precision JSON form of a ladder run."""
    return {
        "outcomes": list(result.outcomes),
        "models": {
            outcome: {
                str(mid): {
                    "diagnostics": entry.diagnostics.as_dict(),
                    "intercept": entry.intercept,
                    "intercept_se": entry.intercept_se,
                    "linear": [
                        {"name": name, "coef": float(c), "se": float(s)}
                        for name, c, s in zip(
                            entry.linear_names, entry.linear_coefs, entry.linear_se
                        )
                    ],
                }
                for mid, entry in by_model.items()
            }
            for outcome, by_model in result.entries.items()
        },
    }


def ladder_from_dict(raw: dict) -> LadderResult:
    entries: dict[str, dict[int, LadderEntry]] = {}
    for outcome, by_model in raw["models"].items():
        per_model: dict[int, LadderEntry] = {}
        for mid, entry in by_model.items():
            d = entry["diagnostics"]
            per_model[int(mid)] = LadderEntry(
                model_id=int(mid),
                diagnostics=FitDiagnostics(
                    n=int(d["n"]),
                    edf=float(d["edf"]),
                    rss=float(d["rss"]),
                    tss=float(d["tss"]),
                    r2_adj=float(d["r2_adj"]),
                    log_likelihood=float(d["log_likelihood"]),
                    gcv=float(d["gcv"]),
                    ubre=float(d["ubre"]),
                    sigma2=float(d["sigma2"]),
                ),
                intercept=float(entry["intercept"]),
                intercept_se=float(entry["intercept_se"]),
                linear_names=[e["name"] for e in entry["linear"]],
                linear_coefs=np.asarray([e["coef"] for e in entry["linear"]]),
                linear_se=np.asarray([e["se"] for e in entry["linear"]]),
            )
        entries[outcome] = per_model
    return LadderResult(outcomes=list(raw["outcomes"]), entries=entries)


def heatmap_csv(x_grid, y_grid, density) -> str:
    """2-D density grid as CSV: header row holds the y grid, first column the x grid."""
    lines = ["x\\y," + ",".join(repr(float(v)) for v in y_grid)]
    for x_value, row in zip(x_grid, density):
        lines.append(
            repr(float(x_value)) + "," + ",".join(repr(float(v)) for v in row)
        )
    return "\n".join(lines) + "\n"
