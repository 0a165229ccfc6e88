"""Bundled fixtures and the synthetic data generator.

Two fixtures ship with the package: the public US state border list (50
states plus DC, postal codes, one edge per line) and a 51-area synthetic
dataset shaped like a state-level poverty-rate survey, produced by
:func:`synthetic_saipe_like` under a fixed seed.  The synthetic data
stands in for survey microdata that cannot be redistributed.
"""

from __future__ import annotations

from importlib.resources import files
from pathlib import Path

import numpy as np

from .fay_herriot import AreaDataset
from .pipeline import CsvSchema
from .similarity import build_omega, load_adjacency, read_edge_list

__all__ = [
    "FIXTURE_SCHEMA",
    "FIXTURE_SEED",
    "US_CENSUS_REGIONS",
    "US_STATE_LABELS",
    "synthetic_dataset_path",
    "synthetic_saipe_like",
    "us_state_borders_path",
]

US_STATE_LABELS: tuple[str, ...] = (
    "AK", "AL", "AR", "AZ", "CA", "CO", "CT", "DC", "DE", "FL", "GA", "HI",
    "IA", "ID", "IL", "IN", "KS", "KY", "LA", "MA", "MD", "ME", "MI", "MN",
    "MO", "MS", "MT", "NC", "ND", "NE", "NH", "NJ", "NM", "NV", "NY", "OH",
    "OK", "OR", "PA", "RI", "SC", "SD", "TN", "TX", "UT", "VA", "VT", "WA",
    "WI", "WV", "WY",
)

_REGIONS = {
    "Northeast": ("CT", "MA", "ME", "NH", "NJ", "NY", "PA", "RI", "VT"),
    "Midwest": ("IA", "IL", "IN", "KS", "MI", "MN", "MO", "ND", "NE", "OH", "SD", "WI"),
    "South": ("AL", "AR", "DC", "DE", "FL", "GA", "KY", "LA", "MD", "MS",
              "NC", "OK", "SC", "TN", "TX", "VA", "WV"),
    "West": ("AK", "AZ", "CA", "CO", "HI", "ID", "MT", "NM", "NV", "OR",
             "UT", "WA", "WY"),
}

US_CENSUS_REGIONS: dict[str, str] = {
    state: region for region, states in _REGIONS.items() for state in states
}

FIXTURE_SEED = 7

FIXTURE_SCHEMA = CsvSchema(
    covariates=("tax_poverty_rate", "nonfiler_rate", "foodstamp_rate"),
    benchmark_weight="benchmark_weight",
    group="group",
)


def us_state_borders_path() -> Path:
    """Path to the bundled US state border edge list."""
    return Path(str(files("smallarea").joinpath("data", "us_state_borders.txt")))


def synthetic_dataset_path() -> Path:
    """Path to the bundled 51-area synthetic dataset CSV."""
    return Path(str(files("smallarea").joinpath("data", "synthetic_states.csv")))


def synthetic_saipe_like(seed: int = FIXTURE_SEED) -> AreaDataset:
    """Generate a 51-area dataset shaped like a state poverty-rate survey.

    Covariates mimic administrative predictors (a tax-based poverty
    pseudo-estimate, a non-filer rate, a food-assistance rate) and are
    drawn as smooth random fields over the state border graph, so
    neighboring states resemble each other the way real state-level
    predictors do.  Responses follow the two-level normal model with a
    graph-correlated area effect and sampling variances that shrink with
    a population-like size variable.  That size variable doubles as the
    benchmark weight column, and each state carries its census region as
    the group label.  The bundled CSV is this function's output at the
    default seed.
    """
    rng = np.random.Generator(np.random.Philox(seed))
    m = len(US_STATE_LABELS)
    edges = read_edge_list(us_state_borders_path())
    laplacian = 0.5 * build_omega(load_adjacency(edges, US_STATE_LABELS)).omega
    # unit-variance draws from a Markov random field on the border graph
    prec_chol = np.linalg.cholesky(np.eye(m) + 2.0 * laplacian)

    def smooth_field() -> np.ndarray:
        f = np.linalg.solve(prec_chol.T, rng.standard_normal(m))
        return f / f.std()

    child_pop = np.round(rng.lognormal(mean=6.3, sigma=0.9, size=m), 1)
    tax_poverty = np.clip(13.0 + 4.0 * smooth_field(), 3.0, 30.0)
    nonfiler = np.clip(11.0 + 3.5 * smooth_field(), 3.0, 25.0)
    foodstamp = np.clip(0.5 * tax_poverty + 2.0 + 1.5 * smooth_field(), 1.0, 25.0)

    beta = np.array([2.5, 0.55, 0.25, 0.35])
    sigma_u = 1.3
    X = np.column_stack([np.ones(m), tax_poverty, nonfiler, foodstamp])
    theta = X @ beta + sigma_u * smooth_field()

    D = np.clip(900.0 / child_pop, 0.2, 8.0)
    y = theta + np.sqrt(D) * rng.standard_normal(m)

    return AreaDataset(
        labels=US_STATE_LABELS,
        y=y,
        D=D,
        covariates=np.column_stack([tax_poverty, nonfiler, foodstamp]),
        covariate_names=FIXTURE_SCHEMA.covariates,
        intercept=True,
        groups=tuple(US_CENSUS_REGIONS[s] for s in US_STATE_LABELS),
        benchmark_weights=child_pop,
    )
