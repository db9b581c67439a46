"""Penalized B-spline smoothing of glucose trajectories.

Fits minimize ``sum_j (y_j - s(t_j))^2 + lambda * int s''(t)^2 dt`` with an
equally spaced cubic B-spline basis (default 6 knots per day).  The curvature
penalty is the exact integrated-squared-second-derivative Gram matrix, and the
normal equations are solved through their banded Cholesky factorization.
``lambda="auto"`` picks the weight by GCV over a fixed log-spaced grid.
"""

from __future__ import annotations

import json
import math
from dataclasses import dataclass

import numpy as np
from scipy.interpolate import BSpline
from scipy.linalg import solveh_banded

from .cgm import GlucoseSeries
from .errors import ConfigurationError, DomainError, SingularFitError

DEFAULT_KNOTS_PER_DAY = 6
DEFAULT_DEGREE = 3
AUTO_LAMBDA_GRID = np.logspace(-6.0, 6.0, 41)
RCOND_LIMIT = 1e-12


@dataclass(frozen=True)
class SmoothedTrajectory:
    """B-spline representation of a smoothed series, evaluable to 2nd derivatives."""

    knots: np.ndarray
    degree: int
    coefficients: np.ndarray
    lambda_smooth: float
    domain: tuple[float, float]

    def __post_init__(self):
        knots = np.asarray(self.knots, dtype=float)
        coef = np.asarray(self.coefficients, dtype=float)
        n_basis = knots.size - self.degree - 1
        if coef.size != n_basis:
            raise ConfigurationError(
                f"coefficient count {coef.size} != knots - degree - 1 = {n_basis}"
            )
        if np.any(np.diff(knots) < 0):
            raise ConfigurationError("knot vector must be nondecreasing")
        knots.setflags(write=False)
        coef.setflags(write=False)
        object.__setattr__(self, "knots", knots)
        object.__setattr__(self, "coefficients", coef)

    @property
    def n_basis(self) -> int:
        return int(self.coefficients.size)

    def to_json(self) -> str:
        return json.dumps(
            {
                "knots": self.knots.tolist(),
                "degree": self.degree,
                "coefficients": self.coefficients.tolist(),
                "lambda_smooth": self.lambda_smooth,
                "domain": list(self.domain),
            }
        )

    @classmethod
    def from_json(cls, text: str) -> "SmoothedTrajectory":
        raw = json.loads(text)
        return cls(
            knots=np.asarray(raw["knots"], dtype=float),
            degree=int(raw["degree"]),
            coefficients=np.asarray(raw["coefficients"], dtype=float),
            lambda_smooth=float(raw["lambda_smooth"]),
            domain=(float(raw["domain"][0]), float(raw["domain"][1])),
        )


def uniform_knots(lo: float, hi: float, spacing: float, degree: int) -> np.ndarray:
    """Clamped knot vector with equally spaced interior knots."""
    if not (hi > lo) or spacing <= 0:
        raise ConfigurationError("degenerate knot configuration")
    span = hi - lo
    n_interior = int(math.floor(span / spacing - 1e-9))
    interior = lo + spacing * np.arange(1, n_interior + 1)
    return np.concatenate(
        [np.full(degree + 1, lo), interior, np.full(degree + 1, hi)]
    )


def curvature_penalty(knots: np.ndarray, degree: int) -> np.ndarray:
    """Exact Gram matrix of integrated products of second basis derivatives.

    The integrand is piecewise polynomial of degree 2*(degree-2), so a fixed
    Gauss-Legendre rule per knot span integrates it exactly.
    """
    if degree < 2:
        raise ConfigurationError("curvature penalty needs degree >= 2")
    n_basis = knots.size - degree - 1
    d2 = BSpline(knots, np.eye(n_basis), degree).derivative(2)
    xg, wg = np.polynomial.legendre.leggauss(max(2, degree - 1))
    penalty = np.zeros((n_basis, n_basis))
    breaks = np.unique(knots)
    for a, b in zip(breaks[:-1], breaks[1:]):
        half = 0.5 * (b - a)
        nodes = half * xg + 0.5 * (a + b)
        values = d2(nodes)  # (q, n_basis)
        penalty += (values * (half * wg)[:, None]).T @ values
    return penalty


def _upper_banded(matrix: np.ndarray, bandwidth: int) -> np.ndarray:
    """Upper banded storage understood by scipy.linalg.solveh_banded."""
    n = matrix.shape[0]
    ab = np.zeros((bandwidth + 1, n))
    for d in range(bandwidth + 1):
        ab[bandwidth - d, d:] = np.diagonal(matrix, offset=d)
    return ab


def _banded_solve(system: np.ndarray, bandwidth: int, rhs: np.ndarray) -> np.ndarray:
    return solveh_banded(_upper_banded(system, bandwidth), rhs)


def _rcond(system: np.ndarray) -> float:
    eigs = np.linalg.eigvalsh(system)
    top = float(eigs[-1])
    if top <= 0:
        return 0.0
    return max(float(eigs[0]), 0.0) / top


def fit_spline(
    series: GlucoseSeries,
    knots_per_day: int = DEFAULT_KNOTS_PER_DAY,
    lambda_smooth: float | str = "auto",
    degree: int = DEFAULT_DEGREE,
) -> SmoothedTrajectory:
    """Fit the penalized spline to one series.

    ``lambda_smooth`` may be a nonnegative weight or ``"auto"`` to minimize
    ``GCV(lambda) = n * RSS / (n - tr(H))^2`` over a 41-point log grid spanning
    1e-6..1e6.
    """
    if knots_per_day < 4:
        raise ConfigurationError("knots_per_day must be >= 4")
    if degree < 1:
        raise ConfigurationError("degree must be >= 1")
    t, y = series.times, series.glucose
    spacing = 1440.0 / knots_per_day
    knots = uniform_knots(float(t[0]), float(t[-1]), spacing, degree)
    n_basis = knots.size - degree - 1
    if t.size < n_basis:
        raise SingularFitError(
            f"{t.size} observations cannot identify {n_basis} basis coefficients; "
            "reduce knots_per_day (the unpenalized fit is singular)"
        )
    design = BSpline.design_matrix(t, knots, degree).toarray()
    gram = design.T @ design
    moment = design.T @ y
    penalty = curvature_penalty(knots, degree)
    bandwidth = degree

    def solve_for(lam: float):
        system = gram + lam * penalty
        try:
            coef = _banded_solve(system, bandwidth, moment)
            edf_matrix = _banded_solve(system, bandwidth, gram)
        except np.linalg.LinAlgError:
            return None
        except ValueError:
            return None
        resid = y - design @ coef
        return coef, float(resid @ resid), float(np.trace(edf_matrix)), system

    if lambda_smooth == "auto":
        best = None
        best_lam = None
        for lam in AUTO_LAMBDA_GRID:
            solved = solve_for(float(lam))
            if solved is None:
                continue
            _, rss, edf, _ = solved
            denom = t.size - edf
            if denom <= 0:
                continue
            gcv = t.size * rss / denom**2
            if math.isfinite(gcv) and (best is None or gcv < best):
                best, best_lam = gcv, float(lam)
        if best_lam is None:
            raise SingularFitError("GCV grid produced no usable fit")
        lam = best_lam
    else:
        lam = float(lambda_smooth)
        if lam < 0:
            raise ConfigurationError("lambda_smooth must be >= 0")

    solved = solve_for(lam)
    if solved is None or _rcond(solved[3]) < RCOND_LIMIT:
        raise SingularFitError(
            f"penalized normal equations are numerically singular at lambda={lam:g}"
        )
    coef = solved[0]
    return SmoothedTrajectory(
        knots=knots,
        degree=degree,
        coefficients=coef,
        lambda_smooth=lam,
        domain=(float(t[0]), float(t[-1])),
    )


def _check_domain(traj: SmoothedTrajectory, t: np.ndarray) -> None:
    lo, hi = traj.domain
    slack = 1e-9 * max(1.0, abs(lo), abs(hi))
    if np.any(t < lo - slack) or np.any(t > hi + slack):
        bad = t[(t < lo - slack) | (t > hi + slack)]
        raise DomainError(
            f"evaluation point {float(bad.flat[0]):g} outside domain [{lo:g}, {hi:g}]"
        )


def evaluate(traj: SmoothedTrajectory, t, deriv: int = 0):
    """Evaluate the smoothed curve or one of its derivatives; no extrapolation."""
    if deriv < 0 or deriv > traj.degree:
        raise ConfigurationError(
            f"derivative order {deriv} unavailable for degree {traj.degree}"
        )
    arr = np.atleast_1d(np.asarray(t, dtype=float))
    _check_domain(traj, arr)
    lo, hi = traj.domain
    clipped = np.clip(arr, lo, hi)  # absorb roundoff at the closed endpoints
    spline = BSpline(traj.knots, traj.coefficients, traj.degree)
    if deriv:
        spline = spline.derivative(deriv)
    values = spline(clipped)
    return float(values[0]) if np.isscalar(t) or np.ndim(t) == 0 else values


def derivative_series(
    traj: SmoothedTrajectory, times
) -> tuple[np.ndarray, np.ndarray]:
    """Speed and acceleration of the smoothed curve at the given times."""
    if traj.degree < 3:
        raise ConfigurationError("acceleration needs a spline of degree >= 3")
    times = np.asarray(times, dtype=float)
    return evaluate(traj, times, 1), evaluate(traj, times, 2)
