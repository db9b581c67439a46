"""Scalar-on-distribution penalized additive regression.

The outcome is modeled as a linear function of scalar covariates plus, per
distributional channel, the integral of a smooth bivariate surface evaluated
along the channel's quantile function:

    R = a0 + x' a + sum_j  integral F_j(Q_j(p), p) dp

Each surface is a tensor product of cubic B-splines (K0 x L0 coefficients),
the integral is a Riemann sum over the fixed probability grid, and roughness
is controlled by second-order difference penalties with Kronecker structure,
one smoothing weight per direction, selected by GCV (or UBRE with a known
scale).  The five-model comparison adds covariates, classic CGM metrics, and
the glucose/speed/acceleration channels cumulatively.
"""

from __future__ import annotations

import math
from dataclasses import dataclass
from typing import Mapping, Sequence

import numpy as np
from scipy.interpolate import BSpline
from scipy.linalg import cho_factor, cho_solve

from .cgm import SubjectRecord
from .distributions import QuantileProfile, probability_grid
from .errors import ConfigurationError, DiagnosticsError, FitError
from .metrics import MetricPanel

MODEL_SCHEMA_VERSION = 1
LAMBDA_GRID = np.logspace(-5.0, 7.0, 21)
COORDINATE_SWEEPS = 2
RIDGE_JITTER = 1e-10
RCOND_LIMIT = 1e-12
U_RANGE_PADDING = 0.05
DEFAULT_COVARIATES = ("age", "fpg_baseline", "hba1c_baseline")
CLASSIC_METRIC_TERMS = ("auc", "mage", "conga1", "tar")

# channels and classic metrics added per rung of the five-model comparison
MODEL_LADDER: dict[int, tuple[tuple[str, ...], tuple[str, ...]]] = {
    1: ((), ()),
    2: ((), CLASSIC_METRIC_TERMS),
    3: (("glucose",), ()),
    4: (("glucose", "speed"), ()),
    5: (("glucose", "speed", "acceleration"), ()),
}


@dataclass(frozen=True)
class ModelSpec:
    """What goes into one fit: linear terms, channels, basis sizes, criterion."""

    covariates: tuple[str, ...] = DEFAULT_COVARIATES
    channels: tuple[str, ...] = ()
    metrics: tuple[str, ...] = ()
    k0: int = 8
    l0: int = 8
    penalty_order: tuple[int, int] = (2, 2)
    criterion: str = "gcv"
    scale: float | None = None  # known error variance, required for "ubre"

    def __post_init__(self):
        if self.k0 < 4 or self.l0 < 4:
            raise ConfigurationError("basis sizes k0 and l0 must be >= 4")
        if len(set(self.channels)) != len(self.channels):
            raise ConfigurationError("channels must be distinct")
        if self.criterion not in ("gcv", "ubre"):
            raise ConfigurationError("criterion must be 'gcv' or 'ubre'")
        if self.criterion == "ubre" and (self.scale is None or self.scale <= 0):
            raise ConfigurationError("criterion 'ubre' needs a positive known scale")
        if min(self.penalty_order) < 1 or max(self.penalty_order) >= min(self.k0, self.l0):
            raise ConfigurationError("penalty orders must be >= 1 and below basis size")


def ladder_spec(
    model_id: int,
    k0: int = 8,
    l0: int = 8,
    criterion: str = "gcv",
    scale: float | None = None,
    include_metrics: bool = False,
) -> ModelSpec:
    """ModelSpec for one rung of the five-model comparison.

    ``include_metrics`` keeps the classic-metric linear terms in the
    distributional models (3)-(5) instead of dropping them.
    """
    if model_id not in MODEL_LADDER:
        raise ConfigurationError(f"model id must be 1..5, got {model_id}")
    channels, metric_terms = MODEL_LADDER[model_id]
    if include_metrics and model_id >= 3:
        metric_terms = CLASSIC_METRIC_TERMS
    return ModelSpec(
        channels=channels, metrics=metric_terms, k0=k0, l0=l0,
        criterion=criterion, scale=scale,
    )


def difference_matrix(size: int, order: int = 2) -> np.ndarray:
    """(size - order) x size finite-difference matrix, rows like [1, -2, 1, 0...]."""
    return np.diff(np.eye(size), n=order, axis=0)


def penalty_matrix(
    k0: int,
    l0: int,
    lambda_u: float,
    lambda_p: float,
    order: tuple[int, int] = (2, 2),
) -> np.ndarray:
    """Kronecker-structured roughness penalty on the raveled (k, l) coefficients."""
    if lambda_u < 0 or lambda_p < 0:
        raise ConfigurationError("smoothing weights must be >= 0")
    du = difference_matrix(k0, order[0])
    dp = difference_matrix(l0, order[1])
    return lambda_u * np.kron(du.T @ du, np.eye(l0)) + lambda_p * np.kron(
        np.eye(k0), dp.T @ dp
    )


def helmert_contrasts(size: int) -> np.ndarray:
    """Orthonormal basis of the complement of the constant vector."""
    c = np.zeros((size, size - 1))
    for j in range(1, size):
        c[:j, j - 1] = 1.0
        c[j, j - 1] = -float(j)
        c[:, j - 1] /= math.sqrt(j * (j + 1))
    return c


def basis_knots(lo: float, hi: float, n_basis: int, degree: int = 3) -> np.ndarray:
    """Clamped knot vector with n_basis - degree - 1 equally spaced interior knots."""
    interior = np.linspace(lo, hi, n_basis - degree + 1)[1:-1]
    return np.concatenate([np.full(degree + 1, lo), interior, np.full(degree + 1, hi)])


def riemann_tensor_entries(
    bu_values: np.ndarray, bp_values: np.ndarray, dp: float
) -> np.ndarray:
    """Riemann-sum entries sum_g BU[g,k] * BP[g,l] * dp, raveled in (k, l) order."""
    return (np.einsum("gk,gl->kl", bu_values, bp_values) * dp).ravel()


@dataclass(frozen=True)
class TensorBasis:
    """Per-channel basis descriptor, fixed at training time."""

    channel: str
    k0: int
    l0: int
    degree: int
    u_knots: np.ndarray
    p_knots: np.ndarray
    u_range: tuple[float, float]

    @classmethod
    def from_values(
        cls, channel: str, pooled_values: np.ndarray, k0: int, l0: int, degree: int = 3
    ) -> "TensorBasis":
        lo = float(np.min(pooled_values))
        hi = float(np.max(pooled_values))
        width = hi - lo
        if width <= 0:
            pad = max(1e-6, 1e-3 * abs(lo))
        else:
            pad = U_RANGE_PADDING * width
        lo, hi = lo - pad, hi + pad
        return cls(
            channel=channel,
            k0=k0,
            l0=l0,
            degree=degree,
            u_knots=basis_knots(lo, hi, k0, degree),
            p_knots=basis_knots(0.0, 1.0, l0, degree),
            u_range=(lo, hi),
        )

    def p_basis_values(self, grid: np.ndarray) -> np.ndarray:
        return BSpline.design_matrix(grid, self.p_knots, self.degree).toarray()

    def design_rows(
        self, quantile_values: np.ndarray, p_values: np.ndarray, dp: float
    ) -> tuple[np.ndarray, int]:
        """Riemann-sum design vector(s); out-of-range values clamped and counted."""
        q = np.asarray(quantile_values, dtype=float)
        lo, hi = self.u_range
        clamped = int(np.sum((q < lo) | (q > hi)))
        q = np.clip(q, lo, hi)
        bu = BSpline.design_matrix(q, self.u_knots, self.degree).toarray()
        return riemann_tensor_entries(bu, p_values, dp), clamped


@dataclass
class ChannelBlock:
    basis: TensorBasis
    columns: slice
    col_means: np.ndarray


@dataclass
class DesignMatrix:
    """Assembled design: intercept + linear terms + centered tensor blocks."""

    x: np.ndarray
    y: np.ndarray
    subject_ids: list[str]
    linear_names: list[str]  # includes "intercept" first
    blocks: list[ChannelBlock]
    grid_size: int
    clamped: int = 0

    @property
    def n(self) -> int:
        return int(self.x.shape[0])


def _linear_row(
    record: SubjectRecord,
    panel: MetricPanel | None,
    spec: ModelSpec,
) -> list[float]:
    row = [record.covariate(name) for name in spec.covariates]
    for name in spec.metrics:
        if panel is None:
            raise ConfigurationError(
                f"model uses classic metric {name!r} but no metric panel was given"
            )
        value = getattr(panel, name)
        if value is None:
            raise ConfigurationError(
                f"subject {record.subject_id!r}: metric {name!r} is unavailable"
            )
        row.append(float(value))
    return row


def build_design(
    profiles: Mapping[str, Mapping[str, QuantileProfile]],
    records: Sequence[SubjectRecord],
    spec: ModelSpec,
    outcome: str,
    panels: Mapping[str, MetricPanel] | None = None,
    bases: Sequence[TensorBasis] | None = None,
) -> DesignMatrix:
    """Assemble the design matrix and response for one outcome.

    Subjects with a missing outcome are dropped.  When ``bases`` is omitted the
    per-channel value ranges (with 5% padding) and knots are derived from the
    pooled training quantiles; passing stored bases reuses them and clamps
    out-of-range values (counted in ``clamped``).
    """
    kept: list[SubjectRecord] = []
    for record in records:
        if outcome not in record.outcomes or record.outcomes[outcome] is None:
            continue
        if any(
            record.subject_id not in profiles
            or channel not in profiles[record.subject_id]
            for channel in spec.channels
        ):
            raise ConfigurationError(
                f"subject {record.subject_id!r} lacks a required channel profile"
            )
        kept.append(record)
    if not kept:
        raise FitError(f"no subjects with outcome {outcome!r}")

    ids = [r.subject_id for r in kept]
    y = np.array([float(r.outcomes[outcome]) for r in kept])
    linear_names = ["intercept", *spec.covariates, *spec.metrics]
    linear = np.array(
        [
            [1.0, *_linear_row(r, panels.get(r.subject_id) if panels else None, spec)]
            for r in kept
        ]
    )

    grid_size = None
    for sid in ids:
        for channel in spec.channels:
            size = profiles[sid][channel].values.size
            if grid_size is None:
                grid_size = size
            elif size != grid_size:
                raise ConfigurationError(
                    f"subject {sid!r} channel {channel!r}: grid size {size} != {grid_size}"
                )
    if grid_size is None:
        grid_size = 0

    parts = [linear]
    blocks: list[ChannelBlock] = []
    col = linear.shape[1]
    clamped_total = 0
    if spec.channels:
        grid = probability_grid(grid_size)
        dp = 1.0 / (grid_size + 1)
        basis_by_channel = {b.channel: b for b in bases} if bases else None
        for channel in spec.channels:
            if basis_by_channel is not None:
                if channel not in basis_by_channel:
                    raise ConfigurationError(f"no stored basis for channel {channel!r}")
                basis = basis_by_channel[channel]
            else:
                pooled = np.concatenate(
                    [profiles[sid][channel].values for sid in ids]
                )
                basis = TensorBasis.from_values(channel, pooled, spec.k0, spec.l0)
            p_values = basis.p_basis_values(grid)
            rows = np.empty((len(ids), basis.k0 * basis.l0))
            for i, sid in enumerate(ids):
                rows[i], clamped = basis.design_rows(
                    profiles[sid][channel].values, p_values, dp
                )
                clamped_total += clamped
            means = rows.mean(axis=0)
            rows -= means
            parts.append(rows)
            blocks.append(
                ChannelBlock(
                    basis=basis,
                    columns=slice(col, col + rows.shape[1]),
                    col_means=means,
                )
            )
            col += rows.shape[1]

    x = np.hstack(parts)
    if not np.all(np.isfinite(x)):
        raise FitError("design matrix contains non-finite entries")
    return DesignMatrix(
        x=x,
        y=y,
        subject_ids=ids,
        linear_names=linear_names,
        blocks=blocks,
        grid_size=grid_size,
        clamped=clamped_total,
    )


@dataclass(frozen=True)
class FitDiagnostics:
    n: int
    edf: float
    rss: float
    tss: float
    r2_adj: float
    log_likelihood: float
    gcv: float
    ubre: float
    sigma2: float

    def as_dict(self) -> dict:
        return {
            "n": self.n,
            "edf": self.edf,
            "rss": self.rss,
            "tss": self.tss,
            "r2_adj": self.r2_adj,
            "log_likelihood": self.log_likelihood,
            "gcv": self.gcv,
            "ubre": self.ubre,
            "sigma2": self.sigma2,
        }


@dataclass(frozen=True)
class ChannelTerm:
    basis: TensorBasis
    theta: np.ndarray
    lambda_u: float
    lambda_p: float
    col_means: np.ndarray


@dataclass(frozen=True)
class DistRegressionModel:
    """Fitted model: linear coefficients plus one tensor surface per channel."""

    spec: ModelSpec
    intercept: float
    intercept_se: float
    linear_names: list[str]
    linear_coefs: np.ndarray
    linear_se: np.ndarray
    channel_terms: dict[str, ChannelTerm]
    diagnostics: FitDiagnostics
    grid_size: int
    n_train: int


class _PenalizedSystem:
    """Reduced-coordinate normal equations with per-channel Kronecker penalties.

    Tensor coefficients that depend on p alone add the same constant to every
    subject (the probability grid is shared), so each block is fit in the
    orthogonal complement of those directions: theta = kron(C, I_l0) beta with
    C the Helmert contrasts over the u index.  This keeps the penalized system
    nonsingular without changing any prediction.
    """

    def __init__(self, design: DesignMatrix, spec: ModelSpec):
        self.design = design
        self.spec = spec
        self.n_linear = len(design.linear_names)
        pieces = [design.x[:, : self.n_linear]]
        self.block_slices: list[slice] = []
        self.penalty_u: list[np.ndarray] = []
        self.penalty_p: list[np.ndarray] = []
        self.reducers: list[np.ndarray] = []
        col = self.n_linear
        for block in design.blocks:
            k0, l0 = block.basis.k0, block.basis.l0
            contrasts = helmert_contrasts(k0)
            reducer = np.kron(contrasts, np.eye(l0))
            du = difference_matrix(k0, spec.penalty_order[0])
            dp = difference_matrix(l0, spec.penalty_order[1])
            self.penalty_u.append(
                np.kron(contrasts.T @ du.T @ du @ contrasts, np.eye(l0))
            )
            self.penalty_p.append(
                np.kron(np.eye(k0 - 1), dp.T @ dp)
            )
            pieces.append(design.x[:, block.columns] @ reducer)
            width = (k0 - 1) * l0
            self.block_slices.append(slice(col, col + width))
            self.reducers.append(reducer)
            col += width
        self.x = np.hstack(pieces)
        self.y = design.y
        self.xtx = self.x.T @ self.x
        self.xty = self.x.T @ self.y
        self.p = self.x.shape[1]
        self.n = self.x.shape[0]
        if self.n < self.n_linear:
            raise FitError(
                f"{self.n} rows cannot identify {self.n_linear} unpenalized terms"
            )

    def penalized_matrix(self, lams: np.ndarray) -> np.ndarray:
        a = self.xtx.copy()
        for j, sl in enumerate(self.block_slices):
            a[sl, sl] += lams[2 * j] * self.penalty_u[j] + lams[2 * j + 1] * self.penalty_p[j]
        return a

    def solve(self, lams: np.ndarray):
        """Return (psi, rss, edf) or None when the system cannot be factored."""
        a = self.penalized_matrix(lams)
        factor = None
        for jitter in (0.0, RIDGE_JITTER):
            try:
                # jitter is relative to each diagonal entry so that columns of
                # very different scale are perturbed proportionally
                factor = cho_factor(a + jitter * np.diag(np.diag(a)), lower=True)
                break
            except np.linalg.LinAlgError:
                continue
        if factor is None:
            return None
        psi = cho_solve(factor, self.xty)
        resid = self.y - self.x @ psi
        rss = float(resid @ resid)
        edf = float(np.trace(cho_solve(factor, self.xtx)))
        return psi, rss, edf, factor

    def criterion_value(self, rss: float, edf: float) -> float:
        if self.spec.criterion == "ubre":
            scale = float(self.spec.scale)
            return rss / self.n - scale + 2.0 * scale * edf / self.n
        denom = self.n - edf
        if denom <= 0:
            return math.inf
        return self.n * rss / denom**2


def _select_lambdas(system: _PenalizedSystem) -> np.ndarray:
    n_lam = 2 * len(system.block_slices)
    lams = np.ones(n_lam)
    if n_lam == 0:
        return lams
    for _ in range(COORDINATE_SWEEPS):
        for idx in range(n_lam):
            best_value = math.inf
            best_lam = lams[idx]
            for candidate in LAMBDA_GRID:
                lams[idx] = candidate
                solved = system.solve(lams)
                if solved is None:
                    continue
                value = system.criterion_value(solved[1], solved[2])
                if math.isfinite(value) and value < best_value:
                    best_value = value
                    best_lam = candidate
            if not math.isfinite(best_value):
                raise FitError("smoothing-parameter search produced no finite criterion")
            lams[idx] = best_lam
    return lams


def _rcond(a: np.ndarray) -> float:
    """Reciprocal condition after diagonal equilibration.

    Columns of the design differ in units by orders of magnitude (covariates
    vs. Riemann-sum entries), so the raw eigenvalue ratio measures units, not
    rank; scaling to unit diagonal makes the estimate detect genuine
    deficiency (a zero diagonal is an exactly dead direction).
    """
    diag = np.diag(a)
    if np.any(diag <= 0):
        return 0.0
    d = 1.0 / np.sqrt(diag)
    eigs = np.linalg.eigvalsh(a * d[:, None] * d[None, :])
    top = float(eigs[-1])
    if top <= 0:
        return 0.0
    return max(float(eigs[0]), 0.0) / top


def _compute_diagnostics(n: int, edf: float, rss: float, tss: float) -> FitDiagnostics:
    if n <= edf + 1:
        raise DiagnosticsError(f"n={n} too small for edf={edf:.2f}")
    sigma2 = rss / n
    r2_adj = 1.0 - (rss / (n - edf)) / (tss / (n - 1)) if tss > 0 else 0.0
    if sigma2 > 0:
        loglik = -0.5 * n * (math.log(2 * math.pi * sigma2) + 1.0)
    else:
        loglik = math.inf
    denom = n - edf
    gcv = n * rss / denom**2
    ubre = rss / n - sigma2 + 2.0 * sigma2 * edf / n
    return FitDiagnostics(
        n=n, edf=edf, rss=rss, tss=tss, r2_adj=r2_adj,
        log_likelihood=loglik, gcv=gcv, ubre=ubre, sigma2=sigma2,
    )


def fit(design: DesignMatrix, spec: ModelSpec) -> DistRegressionModel:
    """Penalized least squares with GCV/UBRE-selected smoothing weights."""
    system = _PenalizedSystem(design, spec)
    lams = _select_lambdas(system)
    solved = system.solve(lams)
    if solved is None:
        raise FitError("penalized normal equations could not be factored")
    psi, rss, edf, factor = solved
    # Rank deficiency of X'X + sum_j lam_j P_j over positive weights does not
    # depend on their magnitude (the null space is an intersection of null
    # spaces), so the guard is evaluated at unit weights; this keeps very
    # stiff but legitimate smoothing levels from masquerading as deficiency.
    unit = np.where(np.asarray(lams) > 0, 1.0, 0.0)
    if _rcond(system.penalized_matrix(unit)) < RCOND_LIMIT:
        worst = _diagnose_deficient_channel(system, unit)
        raise FitError(
            f"penalized system is rank deficient (rcond < {RCOND_LIMIT:g})"
            + (f"; weakest channel: {worst}" if worst else "")
        )

    y = design.y
    tss = float(np.sum((y - y.mean()) ** 2))
    diag = _compute_diagnostics(system.n, edf, rss, tss)

    # Bayesian-style covariance sigma2_resid * A^-1 for the linear-term SEs
    sigma2_resid = rss / max(system.n - edf, 1e-12)
    cov_linear = sigma2_resid * cho_solve(factor, np.eye(system.p))[: system.n_linear, : system.n_linear]
    linear_se = np.sqrt(np.maximum(np.diag(cov_linear), 0.0))

    channel_terms: dict[str, ChannelTerm] = {}
    for j, block in enumerate(design.blocks):
        beta = psi[system.block_slices[j]]
        theta = system.reducers[j] @ beta
        channel_terms[block.basis.channel] = ChannelTerm(
            basis=block.basis,
            theta=theta,
            lambda_u=float(lams[2 * j]),
            lambda_p=float(lams[2 * j + 1]),
            col_means=block.col_means,
        )
    return DistRegressionModel(
        spec=spec,
        intercept=float(psi[0]),
        intercept_se=float(linear_se[0]),
        linear_names=list(design.linear_names[1:]),
        linear_coefs=psi[1 : system.n_linear].copy(),
        linear_se=linear_se[1:],
        channel_terms=channel_terms,
        diagnostics=diag,
        grid_size=design.grid_size,
        n_train=system.n,
    )


def _diagnose_deficient_channel(system: _PenalizedSystem, lams: np.ndarray) -> str | None:
    worst_name, worst_rcond = None, math.inf
    a = system.penalized_matrix(lams)
    for j, sl in enumerate(system.block_slices):
        r = _rcond(a[sl, sl])
        if r < worst_rcond:
            worst_rcond = r
            worst_name = system.design.blocks[j].basis.channel
    return worst_name


@dataclass(frozen=True)
class PredictionResult:
    subject_ids: list[str]
    values: np.ndarray
    clamped: int


def predict(
    model: DistRegressionModel,
    profiles: Mapping[str, Mapping[str, QuantileProfile]],
    records: Sequence[SubjectRecord],
    panels: Mapping[str, MetricPanel] | None = None,
) -> PredictionResult:
    """Evaluate the fitted model; out-of-range quantile values are clamped and counted."""
    grid = probability_grid(model.grid_size) if model.channel_terms else None
    dp = 1.0 / (model.grid_size + 1) if model.channel_terms else 0.0
    p_values = {
        channel: term.basis.p_basis_values(grid)
        for channel, term in model.channel_terms.items()
    }
    values = np.empty(len(records))
    clamped_total = 0
    for i, record in enumerate(records):
        pred = model.intercept
        row = _linear_row(
            record, panels.get(record.subject_id) if panels else None, model.spec
        )
        pred += float(np.dot(model.linear_coefs, row))
        for channel, term in model.channel_terms.items():
            subject_profiles = profiles.get(record.subject_id)
            if subject_profiles is None or channel not in subject_profiles:
                raise ConfigurationError(
                    f"subject {record.subject_id!r} lacks channel {channel!r}"
                )
            profile = subject_profiles[channel]
            if profile.values.size != model.grid_size:
                raise ConfigurationError(
                    f"channel {channel!r}: grid size {profile.values.size} != "
                    f"model grid {model.grid_size}"
                )
            w, clamped = term.basis.design_rows(profile.values, p_values[channel], dp)
            clamped_total += clamped
            pred += float(np.dot(w - term.col_means, term.theta))
        values[i] = pred
    return PredictionResult(
        subject_ids=[r.subject_id for r in records],
        values=values,
        clamped=clamped_total,
    )


def fitted_values(model: DistRegressionModel, design: DesignMatrix) -> np.ndarray:
    """Fitted values on the design the model was trained on."""
    coef = np.concatenate(
        [
            [model.intercept],
            model.linear_coefs,
            *[
                model.channel_terms[b.basis.channel].theta
                for b in design.blocks
            ],
        ]
    )
    return design.x @ coef


def diagnostics(model: DistRegressionModel, design: DesignMatrix) -> FitDiagnostics:
    """Recompute fit diagnostics for a model against the design it was fit on."""
    system = _PenalizedSystem(design, model.spec)
    lams = []
    for block in design.blocks:
        term = model.channel_terms[block.basis.channel]
        lams.extend([term.lambda_u, term.lambda_p])
    solved = system.solve(np.asarray(lams, dtype=float))
    if solved is None:
        raise FitError("penalized normal equations could not be factored")
    _, _, edf, _ = solved
    resid = design.y - fitted_values(model, design)
    rss = float(resid @ resid)
    tss = float(np.sum((design.y - design.y.mean()) ** 2))
    return _compute_diagnostics(design.n, edf, rss, tss)


def model_to_dict(model: DistRegressionModel) -> dict:
    return {
        "schema_version": MODEL_SCHEMA_VERSION,
        "criterion": model.spec.criterion,
        "grid_size": model.grid_size,
        "n_train": model.n_train,
        "intercept": model.intercept,
        "intercept_se": model.intercept_se,
        "covariates": list(model.spec.covariates),
        "metrics": list(model.spec.metrics),
        "linear": [
            {"name": name, "coef": float(c), "se": float(s)}
            for name, c, s in zip(model.linear_names, model.linear_coefs, model.linear_se)
        ],
        "channels": [
            {
                "channel": channel,
                "k0": term.basis.k0,
                "l0": term.basis.l0,
                "degree": term.basis.degree,
                "u_knots": term.basis.u_knots.tolist(),
                "p_knots": term.basis.p_knots.tolist(),
                "u_range": list(term.basis.u_range),
                "lambda_u": term.lambda_u,
                "lambda_p": term.lambda_p,
                "theta": term.theta.tolist(),
                "col_means": term.col_means.tolist(),
            }
            for channel, term in model.channel_terms.items()
        ],
        "diagnostics": model.diagnostics.as_dict(),
    }


def model_from_dict(raw: Mapping) -> DistRegressionModel:
    if raw.get("schema_version") != MODEL_SCHEMA_VERSION:
        raise ConfigurationError(
            f"unsupported model schema version {raw.get('schema_version')!r}"
        )
    channels = tuple(entry["channel"] for entry in raw["channels"])
    k0 = raw["channels"][0]["k0"] if raw["channels"] else 8
    l0 = raw["channels"][0]["l0"] if raw["channels"] else 8
    spec = ModelSpec(
        covariates=tuple(raw["covariates"]),
        channels=channels,
        metrics=tuple(raw["metrics"]),
        k0=k0,
        l0=l0,
        criterion=raw["criterion"],
        scale=None if raw["criterion"] == "gcv" else 1.0,
    )
    terms: dict[str, ChannelTerm] = {}
    for entry in raw["channels"]:
        basis = TensorBasis(
            channel=entry["channel"],
            k0=int(entry["k0"]),
            l0=int(entry["l0"]),
            degree=int(entry["degree"]),
            u_knots=np.asarray(entry["u_knots"], dtype=float),
            p_knots=np.asarray(entry["p_knots"], dtype=float),
            u_range=(float(entry["u_range"][0]), float(entry["u_range"][1])),
        )
        terms[entry["channel"]] = ChannelTerm(
            basis=basis,
            theta=np.asarray(entry["theta"], dtype=float),
            lambda_u=float(entry["lambda_u"]),
            lambda_p=float(entry["lambda_p"]),
            col_means=np.asarray(entry["col_means"], dtype=float),
        )
    diag_raw = raw["diagnostics"]
    diag = FitDiagnostics(
        n=int(diag_raw["n"]),
        edf=float(diag_raw["edf"]),
        rss=float(diag_raw["rss"]),
        tss=float(diag_raw["tss"]),
        r2_adj=float(diag_raw["r2_adj"]),
        log_likelihood=float(diag_raw["log_likelihood"]),
        gcv=float(diag_raw["gcv"]),
        ubre=float(diag_raw["ubre"]),
        sigma2=float(diag_raw["sigma2"]),
    )
    linear = raw["linear"]
    return DistRegressionModel(
        spec=spec,
        intercept=float(raw["intercept"]),
        intercept_se=float(raw.get("intercept_se", 0.0)),
        linear_names=[e["name"] for e in linear],
        linear_coefs=np.asarray([e["coef"] for e in linear], dtype=float),
        linear_se=np.asarray([e["se"] for e in linear], dtype=float),
        channel_terms=terms,
        diagnostics=diag,
        grid_size=int(raw["grid_size"]),
        n_train=int(raw["n_train"]),
    )


@dataclass(frozen=True)
class LadderEntry:
    model_id: int
    diagnostics: FitDiagnostics
    intercept: float
    intercept_se: float
    linear_names: list[str]
    linear_coefs: np.ndarray
    linear_se: np.ndarray


@dataclass(frozen=True)
class LadderResult:
    outcomes: list[str]
    entries: dict[str, dict[int, LadderEntry]]  # outcome -> model_id -> entry

    def r2_table(self) -> dict[str, dict[int, float]]:
        return {
            outcome: {mid: e.diagnostics.r2_adj for mid, e in by_model.items()}
            for outcome, by_model in self.entries.items()
        }


def run_model_ladder(
    profiles: Mapping[str, Mapping[str, QuantileProfile]],
    records: Sequence[SubjectRecord],
    panels: Mapping[str, MetricPanel],
    outcomes: Sequence[str] | None = None,
    model_ids: Sequence[int] = (1, 2, 3, 4, 5),
    k0: int = 8,
    l0: int = 8,
    criterion: str = "gcv",
    include_metrics: bool = False,
) -> LadderResult:
    """Fit the five-model comparison for each outcome; missing outcomes drop subjects."""
    if outcomes is None:
        names: list[str] = []
        for record in records:
            for name in record.outcomes:
                if name not in names:
                    names.append(name)
        outcomes = names
    if not outcomes:
        raise FitError("no outcomes to fit")
    entries: dict[str, dict[int, LadderEntry]] = {}
    for outcome in outcomes:
        per_model: dict[int, LadderEntry] = {}
        for model_id in model_ids:
            spec = ladder_spec(
                model_id, k0=k0, l0=l0, criterion=criterion,
                include_metrics=include_metrics,
            )
            design = build_design(profiles, records, spec, outcome, panels=panels)
            model = fit(design, spec)
            per_model[model_id] = LadderEntry(
                model_id=model_id,
                diagnostics=model.diagnostics,
                intercept=model.intercept,
                intercept_se=model.intercept_se,
                linear_names=list(model.linear_names),
                linear_coefs=model.linear_coefs.copy(),
                linear_se=model.linear_se.copy(),
            )
        entries[outcome] = per_model
    return LadderResult(outcomes=list(outcomes), entries=entries)
