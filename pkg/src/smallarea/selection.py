"""Leave-one-out cross-validation for the smoothing factor.

Each held-out problem drops one area's loss term (zeroing its weight)
while keeping the full penalty and any benchmark constraints, so the
held-out coordinate is predicted by smoothness and constraints alone.
The score of a grid point is the weighted mean squared gap between those
predictions and the Bayes estimates; the selected gamma minimizes it,
with ties broken toward the smallest value.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np
from scipy.linalg import cho_factor, cho_solve, LinAlgError

from .estimators import ConstraintSet, UnitLevelLayout, _gamma_value, _omega_matrix, _phi_vector, _vector
from .exceptions import NumericalError, ValidationError

__all__ = [
    "CvCurve",
    "cross_validate",
    "cross_validate_unit",
    "default_gamma_grid",
    "loo_solution",
]

_KKT_CONDITION_LIMIT = 1e12


@dataclass(frozen=True)
class CvCurve:
    """Cross-validation scores over a gamma grid.

    ``failed_areas[k]`` lists the areas whose held-out solve was singular
    at grid point k; such points score +inf but do not abort the search.
    """

    grid: np.ndarray
    scores: np.ndarray
    gamma_hat: float
    failed_areas: tuple[tuple[int, ...], ...] = ()

    def __post_init__(self):
        grid = np.asarray(self.grid, dtype=float)
        scores = np.asarray(self.scores, dtype=float)
        if grid.ndim != 1 or grid.size == 0:
            raise ValidationError("grid must be a nonempty 1-d array")
        if np.any(grid <= 0) or np.any(np.diff(grid) <= 0):
            raise ValidationError("grid must be strictly positive and strictly increasing")
        if scores.shape != grid.shape:
            raise ValidationError("scores must align with the grid")
        if np.any(np.isnan(scores)):
            raise ValidationError("scores may not be NaN")
        finite = np.isfinite(scores)
        if not np.any(finite):
            raise ValidationError("at least one grid point must have a finite score")
        best = int(np.argmin(scores))
        if self.gamma_hat != grid[best]:
            raise ValidationError("gamma_hat must attain the minimum score (smallest-gamma tie-break)")
        failed = self.failed_areas or tuple(() for _ in range(grid.size))
        if len(failed) != grid.size:
            raise ValidationError("failed_areas must align with the grid")
        object.__setattr__(self, "grid", grid)
        object.__setattr__(self, "scores", scores)
        object.__setattr__(self, "failed_areas", tuple(tuple(f) for f in failed))


def default_gamma_grid(low: float = 1e-4, high: float = 1e2, num: int = 40) -> np.ndarray:
    """Logarithmic grid of candidate smoothing factors."""
    if not (0 < low < high) or num < 1:
        raise ValidationError("need 0 < low < high and num >= 1")
    return np.geomspace(low, high, num)


def loo_solution(
    theta_bayes, phi, omega, gamma, index: int, constraints: ConstraintSet | None = None
) -> np.ndarray:
    """Solve the smoothing problem with area ``index``'s loss term dropped.

    The drop is implemented by zeroing that entry of the weight vector;
    the penalty and any constraints still act on the whole vector.  The
    system is solvable at gamma > 0 unless the held-out area is isolated
    in the similarity graph and untouched by every constraint.
    """
    theta = _vector(theta_bayes, "theta_bayes")
    m = theta.shape[0]
    p = _phi_vector(phi, m)
    w = _omega_matrix(omega, m)
    g = _gamma_value(gamma)
    if g <= 0:
        raise ValidationError("held-out solves require gamma > 0")
    if not (0 <= index < m):
        raise ValidationError(f"area index {index} out of range [0, {m})")

    p_held = p.copy()
    p_held[index] = 0.0
    sigma = g * w
    sigma[np.diag_indices_from(sigma)] += p_held
    rhs = p_held * theta

    if constraints is None:
        try:
            solution = cho_solve(cho_factor(sigma, lower=True), rhs)
        except LinAlgError:
            raise NumericalError(
                f"held-out area {index} is unidentified at gamma={g:g}"
            ) from None
    else:
        if constraints.n_parameters != m:
            raise ValidationError(
                f"constraints are over {constraints.n_parameters} parameters, expected {m}"
            )
        k = constraints.n_constraints
        kkt = np.zeros((m + k, m + k))
        kkt[:m, :m] = sigma
        kkt[:m, m:] = constraints.M.T
        kkt[m:, :m] = constraints.M
        cond = np.linalg.cond(kkt)
        if not np.isfinite(cond) or cond > _KKT_CONDITION_LIMIT:
            raise NumericalError(
                f"held-out area {index} is unidentified at gamma={g:g}"
            )
        solution = np.linalg.solve(kkt, np.concatenate((rhs, constraints.t)))[:m]
    if not np.all(np.isfinite(solution)):
        raise NumericalError(f"held-out area {index} is unidentified at gamma={g:g}")
    return solution


def cross_validate(
    theta_bayes, phi, omega, grid, constraints: ConstraintSet | None = None
) -> CvCurve:
    """Score every gamma on the grid by exact leave-one-out.

    V(gamma) = (1/m) sum_i phi_i (d_i^{(-i)} - theta_i)^2 over the m
    held-out solves.  Grid points where some held-out solve is singular
    score +inf and record the failing areas; if every point is infeasible
    the search fails.
    """
    theta = _vector(theta_bayes, "theta_bayes")
    m = theta.shape[0]
    p = _phi_vector(phi, m)
    w = _omega_matrix(omega, m)
    grid = np.unique(np.asarray(grid, dtype=float))
    if grid.size == 0:
        raise ValidationError("gamma grid must be nonempty")
    if np.any(grid <= 0) or not np.all(np.isfinite(grid)):
        raise ValidationError("gamma grid entries must be positive finite reals")

    scores = np.empty(grid.size)
    failures: list[tuple[int, ...]] = []
    for k, g in enumerate(grid):
        total = 0.0
        failed: list[int] = []
        for i in range(m):
            try:
                held = loo_solution(theta, p, w, g, i, constraints)
            except NumericalError:
                failed.append(i)
                continue
            total += p[i] * (held[i] - theta[i]) ** 2
        scores[k] = np.inf if failed else total / m
        failures.append(tuple(failed))
    if not np.any(np.isfinite(scores)):
        raise NumericalError("all grid points infeasible")
    gamma_hat = float(grid[int(np.argmin(scores))])
    return CvCurve(grid, scores, gamma_hat, tuple(failures))


def cross_validate_unit(
    layout: UnitLevelLayout,
    theta_area_bayes,
    theta_unit_bayes,
    omega_area,
    omega_unit,
    grid_area,
    grid_unit,
) -> tuple[CvCurve, CvCurve]:
    """Pick the (area, unit) smoothing pair over the product grid.

    The joint score of a pair is the sum of the two levels' held-out
    scores.  The two tiers share no loss or penalty terms, so the score
    is additively separable: searching the product grid reduces to two
    independent one-level searches, and the returned curves' minimizers
    jointly minimize the product-grid score.
    """
    curve_area = cross_validate(theta_area_bayes, layout.phi, omega_area, grid_area)
    curve_unit = cross_validate(theta_unit_bayes, layout.xi, omega_unit, grid_unit)
    return curve_area, curve_unit
