"""Closed-form smoothed and benchmarked estimators.

Given unconstrained Bayes estimates theta, positive loss weights phi and a
smoothness penalty matrix omega, the smoothed estimator minimizes

    (d - theta)' Phi (d - theta) + gamma d' omega d

and the benchmarked estimator minimizes the same objective subject to
linear constraints M d = t.  Both have closed forms; all solves factor the
symmetric positive-definite matrix Sigma = Phi + gamma * omega instead of
forming any inverse.  Unit-level (two-tier) and multivariate problems
reduce to the same machinery through block stacking.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np
from scipy.linalg import block_diag, cho_factor, cho_solve, LinAlgError

from .exceptions import NumericalError, ValidationError
from .similarity import SmoothnessMatrix

__all__ = [
    "BenchmarkedEstimate",
    "ConstraintSet",
    "LossWeights",
    "SmoothedEstimate",
    "StackedProblem",
    "UnitLevelLayout",
    "benchmarked_estimate",
    "benchmarked_estimate_single",
    "penalized_objective",
    "smoothed_estimate",
    "stack_multivariate",
    "unit_level_benchmarked",
    "unit_level_smoothed",
]

# Constraint Gram matrices with condition numbers beyond this are treated
# as rank deficient.
_CONDITION_LIMIT = 1e12

# Benchmarked results must satisfy ||M d - t||_inf <= _RESIDUAL_TOL * (1 + ||t||_inf).
_RESIDUAL_TOL = 1e-8


def _vector(x, name: str, size: int | None = None) -> np.ndarray:
    v = np.asarray(x, dtype=float)
    if v.ndim != 1:
        raise ValidationError(f"{name} must be one-dimensional, got shape {v.shape}")
    if size is not None and v.shape[0] != size:
        raise ValidationError(f"{name} has length {v.shape[0]}, expected {size}")
    if not np.all(np.isfinite(v)):
        raise ValidationError(f"{name} contains non-finite entries")
    return v


def _phi_vector(phi, size: int) -> np.ndarray:
    v = phi.phi if isinstance(phi, LossWeights) else _vector(phi, "phi", size)
    if v.shape[0] != size:
        raise ValidationError(f"phi has length {v.shape[0]}, expected {size}")
    if np.any(v <= 0):
        raise ValidationError("loss weights must be strictly positive")
    return v


def _omega_matrix(omega, size: int) -> np.ndarray:
    w = omega.omega if isinstance(omega, SmoothnessMatrix) else np.asarray(omega, dtype=float)
    if w.ndim != 2 or w.shape != (size, size):
        raise ValidationError(f"penalty matrix has shape {w.shape}, expected ({size}, {size})")
    if not np.all(np.isfinite(w)):
        raise ValidationError("penalty matrix contains non-finite entries")
    if not np.array_equal(w, w.T):
        raise ValidationError("penalty matrix must be symmetric")
    return w


def _gamma_value(gamma) -> float:
    g = float(gamma)
    if not np.isfinite(g) or g < 0:
        raise ValidationError(f"gamma must be a finite nonnegative real, got {gamma!r}")
    return g


@dataclass(frozen=True)
class LossWeights:
    """Strictly positive per-area loss weights (the diagonal of Phi)."""

    phi: np.ndarray

    def __post_init__(self):
        v = _vector(self.phi, "phi")
        if np.any(v <= 0):
            raise ValidationError("loss weights must be strictly positive")
        object.__setattr__(self, "phi", v)

    def __len__(self) -> int:
        return self.phi.shape[0]


@dataclass(frozen=True)
class ConstraintSet:
    """Linear benchmark constraints M d = t with M of full row rank."""

    M: np.ndarray
    t: np.ndarray

    def __post_init__(self):
        M = np.asarray(self.M, dtype=float)
        if M.ndim != 2:
            raise ValidationError(f"constraint matrix must be 2-d, got shape {M.shape}")
        k, m = M.shape
        if k < 1:
            raise ValidationError("at least one constraint row is required")
        if k > m:
            raise ValidationError(
                f"{k} constraints on {m} parameters cannot have full row rank"
            )
        if not np.all(np.isfinite(M)):
            raise ValidationError("constraint matrix contains non-finite entries")
        t = _vector(self.t, "t", k)
        s = np.linalg.svd(M, compute_uv=False)
        if s[-1] <= s[0] * 1e-12 or s[0] == 0.0:
            raise ValidationError("constraint matrix is rank deficient")
        object.__setattr__(self, "M", M)
        object.__setattr__(self, "t", t)

    @property
    def n_constraints(self) -> int:
        return self.M.shape[0]

    @property
    def n_parameters(self) -> int:
        return self.M.shape[1]


@dataclass(frozen=True)
class UnitLevelLayout:
    """Shape and weights of a two-tier problem: areas partitioned into units.

    ``units_per_area[i]`` units belong to area i, in stacking order; unit
    weights ``xi`` run over all units in that same order.  ``gamma_area``
    and ``gamma_unit`` are the two smoothing factors.
    """

    units_per_area: tuple[int, ...]
    phi: np.ndarray
    xi: np.ndarray
    gamma_area: float
    gamma_unit: float

    def __post_init__(self):
        counts = tuple(int(n) for n in self.units_per_area)
        if len(counts) == 0 or any(n < 1 for n in counts):
            raise ValidationError("every area must contain at least one unit")
        phi = _phi_vector(self.phi, len(counts))
        xi = _vector(self.xi, "xi", sum(counts))
        if np.any(xi <= 0):
            raise ValidationError("unit loss weights must be strictly positive")
        ga = _gamma_value(self.gamma_area)
        gu = _gamma_value(self.gamma_unit)
        object.__setattr__(self, "units_per_area", counts)
        object.__setattr__(self, "phi", phi)
        object.__setattr__(self, "xi", xi)
        object.__setattr__(self, "gamma_area", ga)
        object.__setattr__(self, "gamma_unit", gu)

    @property
    def n_areas(self) -> int:
        return len(self.units_per_area)

    @property
    def n_units(self) -> int:
        return int(sum(self.units_per_area))

    def area_slices(self) -> list[slice]:
        """Slice of the unit axis owned by each area, in order."""
        offsets = np.concatenate(([0], np.cumsum(self.units_per_area)))
        return [slice(int(a), int(b)) for a, b in zip(offsets[:-1], offsets[1:])]


@dataclass(frozen=True)
class SmoothedEstimate:
    values: np.ndarray
    objective_value: float

    def __post_init__(self):
        if not (np.all(np.isfinite(self.values)) and np.isfinite(self.objective_value)):
            raise NumericalError("estimate contains non-finite values")


@dataclass(frozen=True)
class BenchmarkedEstimate:
    values: np.ndarray
    objective_value: float
    constraint_residual: float

    def __post_init__(self):
        if not (np.all(np.isfinite(self.values)) and np.isfinite(self.objective_value)):
            raise NumericalError("estimate contains non-finite values")


@dataclass(frozen=True)
class StackedProblem:
    """A multivariate problem flattened to a single vector problem."""

    theta_bayes: np.ndarray
    phi: np.ndarray
    omega: np.ndarray


def penalized_objective(delta, theta_bayes, phi, omega, gamma) -> float:
    """Value of (d - theta)' Phi (d - theta) + gamma d' omega d."""
    d = np.asarray(delta, dtype=float)
    theta = _vector(theta_bayes, "theta_bayes", d.shape[0])
    p = _phi_vector(phi, d.shape[0])
    w = _omega_matrix(omega, d.shape[0])
    g = _gamma_value(gamma)
    r = d - theta
    return float(r @ (p * r) + g * (d @ w @ d))


def _sigma_factor(p: np.ndarray, w: np.ndarray, gamma: float):
    """Cholesky factor of Sigma = Phi + gamma * omega (positive definite)."""
    sigma = gamma * w
    sigma[np.diag_indices_from(sigma)] += p
    try:
        return cho_factor(sigma, lower=True)
    except LinAlgError as exc:  # cannot happen for phi > 0, psd omega
        raise NumericalError(f"smoothing system is not positive definite: {exc}") from exc


def _constrained_solve(cho, p_theta: np.ndarray, M: np.ndarray, t: np.ndarray) -> np.ndarray:
    """Minimizer of the penalized objective subject to M d = t.

    Uses the factored Sigma: the unconstrained solution is adjusted along
    Sigma^{-1} M' by multipliers solving the k x k Gram system.
    """
    base = cho_solve(cho, p_theta)
    sinv_mt = cho_solve(cho, M.T)
    gram = M @ sinv_mt
    gram = 0.5 * (gram + gram.T)
    cond = np.linalg.cond(gram)
    if not np.isfinite(cond) or cond > _CONDITION_LIMIT:
        raise NumericalError("degenerate or redundant constraints")
    multipliers = np.linalg.solve(gram, t - M @ base)
    return base + sinv_mt @ multipliers


def _check_residual(values: np.ndarray, M: np.ndarray, t: np.ndarray) -> float:
    residual = float(np.max(np.abs(M @ values - t)))
    bound = _RESIDUAL_TOL * (1.0 + float(np.max(np.abs(t))))
    if residual > bound:
        raise NumericalError(
            f"benchmark residual {residual:.3e} exceeds tolerance {bound:.3e}"
        )
    return residual


def smoothed_estimate(theta_bayes, phi, omega, gamma) -> SmoothedEstimate:
    """Smoothed estimator: the solution of (Phi + gamma*omega) d = Phi theta.

    gamma = 0 returns theta_bayes unchanged (exactly; the solve is skipped).
    Constant vectors pass through untouched for any gamma because the
    all-ones vector lies in the penalty's kernel.
    """
    theta = _vector(theta_bayes, "theta_bayes")
    m = theta.shape[0]
    p = _phi_vector(phi, m)
    w = _omega_matrix(omega, m)
    g = _gamma_value(gamma)
    if g == 0.0:
        values = theta.copy()
    else:
        values = cho_solve(_sigma_factor(p, w, g), p * theta)
    return SmoothedEstimate(values, penalized_objective(values, theta, p, w, g))


def benchmarked_estimate(theta_bayes, phi, omega, gamma, constraints: ConstraintSet) -> BenchmarkedEstimate:
    """Benchmarked estimator: minimizes the penalized objective under M d = t.

    Equals the smoothed estimator plus an adjustment proportional to the
    constraint discrepancy t - M d_smooth, mapped through Sigma^{-1} M'.
    """
    theta = _vector(theta_bayes, "theta_bayes")
    m = theta.shape[0]
    p = _phi_vector(phi, m)
    w = _omega_matrix(omega, m)
    g = _gamma_value(gamma)
    if not isinstance(constraints, ConstraintSet):
        raise ValidationError("constraints must be a ConstraintSet")
    if constraints.n_parameters != m:
        raise ValidationError(
            f"constraints are over {constraints.n_parameters} parameters, expected {m}"
        )
    cho = _sigma_factor(p, w, g)
    values = _constrained_solve(cho, p * theta, constraints.M, constraints.t)
    residual = _check_residual(values, constraints.M, constraints.t)
    return BenchmarkedEstimate(values, penalized_objective(values, theta, p, w, g), residual)


def benchmarked_estimate_single(theta_bayes, phi, omega, gamma, w, t) -> BenchmarkedEstimate:
    """Single weighted-mean benchmark sum_i w_i d_i = t, specialized form.

    Agrees with :func:`benchmarked_estimate` for the 1 x m constraint
    matrix w' to within roundoff; the multiplier is the scalar
    (t - w' d_smooth) / (w' Sigma^{-1} w).
    """
    theta = _vector(theta_bayes, "theta_bayes")
    m = theta.shape[0]
    p = _phi_vector(phi, m)
    om = _omega_matrix(omega, m)
    g = _gamma_value(gamma)
    wv = _vector(w, "w", m)
    if np.any(wv < 0):
        raise ValidationError("benchmark weights must be nonnegative")
    if not np.any(wv != 0):
        raise ValidationError("benchmark weight vector must be nonzero")
    t = float(t)
    if not np.isfinite(t):
        raise ValidationError("benchmark target must be finite")
    cho = _sigma_factor(p, om, g)
    base = cho_solve(cho, p * theta)
    sinv_w = cho_solve(cho, wv)
    denom = float(wv @ sinv_w)
    if not np.isfinite(denom) or denom <= 0:
        raise NumericalError("degenerate or redundant constraints")
    values = base + ((t - wv @ base) / denom) * sinv_w
    residual = _check_residual(values, wv[np.newaxis, :], np.array([t]))
    return BenchmarkedEstimate(values, penalized_objective(values, theta, p, om, g), residual)


def unit_level_smoothed(
    layout: UnitLevelLayout, theta_area_bayes, theta_unit_bayes, omega_area, omega_unit
) -> tuple[SmoothedEstimate, SmoothedEstimate]:
    """Smooth area- and unit-level estimates of a two-tier problem.

    The stacked problem is block-diagonal across the two tiers, so it
    decouples into two independent solves with the tier's own weights and
    smoothing factor.
    """
    m, n = layout.n_areas, layout.n_units
    theta_a = _vector(theta_area_bayes, "theta_area_bayes", m)
    theta_u = _vector(theta_unit_bayes, "theta_unit_bayes", n)
    area = smoothed_estimate(theta_a, layout.phi, _omega_matrix(omega_area, m), layout.gamma_area)
    unit = smoothed_estimate(theta_u, layout.xi, _omega_matrix(omega_unit, n), layout.gamma_unit)
    return area, unit


def _check_block_sparsity(layout: UnitLevelLayout, unit_weights: np.ndarray) -> None:
    outside = np.ones_like(unit_weights, dtype=bool)
    for i, sl in enumerate(layout.area_slices()):
        outside[i, sl] = False
    if np.any(unit_weights[outside] != 0.0):
        rows, cols = np.nonzero(outside & (unit_weights != 0.0))
        raise ValidationError(
            f"unit weight at (area {rows[0]}, unit {cols[0]}) falls outside that "
            "area's block; units are strictly nested within areas"
        )


def unit_level_benchmarked(
    layout: UnitLevelLayout,
    theta_area_bayes,
    theta_unit_bayes,
    omega_area,
    omega_unit,
    eta,
    t_area,
    unit_weights,
) -> BenchmarkedEstimate:
    """Benchmark a two-tier problem: the eta-weighted mean of the area
    estimates hits ``t_area``, and within each area the weighted mean of
    the unit estimates equals the area estimate.

    Returns the stacked length-(m + N) estimate, areas first.  The
    constraint matrix is [[eta', 0], [-I, W]] with W holding the per-area
    unit weights in its block-sparse rows.
    """
    m, n = layout.n_areas, layout.n_units
    theta_a = _vector(theta_area_bayes, "theta_area_bayes", m)
    theta_u = _vector(theta_unit_bayes, "theta_unit_bayes", n)
    w_a = _omega_matrix(omega_area, m)
    w_u = _omega_matrix(omega_unit, n)
    eta = _vector(eta, "eta", m)
    t_area = float(t_area)
    if not np.isfinite(t_area):
        raise ValidationError("t_area must be finite")
    weights = np.asarray(unit_weights, dtype=float)
    if weights.shape != (m, n):
        raise ValidationError(f"unit_weights has shape {weights.shape}, expected ({m}, {n})")
    if not np.all(np.isfinite(weights)):
        raise ValidationError("unit_weights contains non-finite entries")
    _check_block_sparsity(layout, weights)

    M = np.zeros((m + 1, m + n))
    M[0, :m] = eta
    M[1:, :m] = -np.eye(m)
    M[1:, m:] = weights
    t = np.concatenate(([t_area], np.zeros(m)))
    constraints = ConstraintSet(M, t)  # rejects rank deficiency (e.g. eta = 0)

    phi_stack = np.concatenate((layout.phi, layout.xi))
    theta_stack = np.concatenate((theta_a, theta_u))
    # Sigma and the effective penalty are block-diagonal with each tier's
    # own gamma already folded in; the stacked solve then uses gamma = 1.
    omega_eff = block_diag(layout.gamma_area * w_a, layout.gamma_unit * w_u)
    cho = _sigma_factor(phi_stack, omega_eff, 1.0)
    values = _constrained_solve(cho, phi_stack * theta_stack, constraints.M, constraints.t)
    residual = _check_residual(values, constraints.M, constraints.t)
    objective = penalized_objective(values, theta_stack, phi_stack, omega_eff, 1.0)
    return BenchmarkedEstimate(values, objective, residual)


def stack_multivariate(per_component) -> StackedProblem:
    """Stack p univariate problems sharing the same areas into one.

    ``per_component`` is a sequence of (theta_bayes, phi, omega) triples.
    Parameters are ordered component-major: all areas of component 1, then
    all areas of component 2, and so on.  The stacked penalty is
    block-diagonal, so a single solve of the stacked problem reproduces
    the p independent solves.
    """
    triples = list(per_component)
    if not triples:
        raise ValidationError("at least one component is required")
    thetas, phis, omegas = [], [], []
    m = None
    for c, (theta, phi, omega) in enumerate(triples):
        theta = _vector(theta, f"theta_bayes[{c}]")
        if m is None:
            m = theta.shape[0]
        elif theta.shape[0] != m:
            raise ValidationError(
                f"component {c} has {theta.shape[0]} areas, expected {m}"
            )
        thetas.append(theta)
        phis.append(_phi_vector(phi, m))
        omegas.append(_omega_matrix(omega, m))
    return StackedProblem(
        theta_bayes=np.concatenate(thetas),
        phi=np.concatenate(phis),
        omega=block_diag(*omegas),
    )
