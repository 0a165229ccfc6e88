"""Data ingestion, run configuration, and the end-to-end estimation pipeline.

A run proceeds fit -> (optional) cross-validation -> smoothed and
benchmarked estimates -> (optional) bootstrap MSE, then writes a report:
``estimates.csv`` (one row per area), ``cv_curve.csv``, ``bootstrap_mse.csv``
and ``metadata.json`` in the output directory.  Everything is driven by a
flat key/value config file (``key = value`` lines, ``#`` comments); unknown
keys are rejected.  Floats are written with 17 significant digits, so a
fixed seed yields byte-identical outputs and loading a written dataset
reproduces it exactly.

Config keys (see README for details):

  area_csv, edge_list, output_dir, seed,
  label_column, y_column, d_column, covariate_columns, phi_column,
  group_column, benchmark_weight_column, add_intercept,
  benchmark_target, benchmark_matrix_csv, benchmark_targets_csv,
  benchmark_provenance,
  gamma | gamma_grid (lo,hi,n),
  gibbs_iterations, gibbs_burn, gibbs_thin,
  bootstrap_replicates, bootstrap_gamma_policy,
  bootstrap_gibbs_iterations, bootstrap_gibbs_burn, bootstrap_gibbs_thin
"""

from __future__ import annotations

import csv
import json
from contextlib import contextmanager
from dataclasses import dataclass, field, replace
from pathlib import Path

import numpy as np
import scipy

from . import __version__
from .bootstrap import BootstrapConfig, bootstrap_mse
from .estimators import (
    ConstraintSet,
    benchmarked_estimate,
    benchmarked_estimate_single,
    smoothed_estimate,
)
from .exceptions import NumericalError, ValidationError
from .fay_herriot import AreaDataset, GibbsConfig, gibbs_fit
from .selection import CvCurve, cross_validate, default_gamma_grid
from .similarity import build_omega, load_adjacency, read_edge_list

__all__ = [
    "CsvSchema",
    "EstimateReport",
    "PLOT_KINDS",
    "RunConfig",
    "emit_plot_data",
    "load_area_csv",
    "read_report",
    "run_pipeline",
    "write_area_csv",
]

PLOT_KINDS = ("scatter_constrained_vs_bayes", "scatter_by_group", "mse_by_area")

_GAMMA_POLICIES = ("fixed", "re-cross-validate")


def _fmt(x: float) -> str:
    """Fixed 17-significant-digit float formatting (round-trips float64)."""
    return format(float(x), ".17g")


@contextmanager
def _stage(name: str):
    """Tag validation/numerical errors with the pipeline stage they came from."""
    try:
        yield
    except (ValidationError, NumericalError) as exc:
        raise type(exc)(f"[stage {name}] {exc}") from exc


@dataclass(frozen=True)
class CsvSchema:
    """Column-name mapping for area CSV files.

    ``covariates`` must name at least one column.  When ``phi`` is absent
    the loader defaults the loss weights to 1/D, the inverse sampling
    variance (all D must then be positive).
    """

    label: str = "label"
    y: str = "y"
    d: str = "D"
    covariates: tuple[str, ...] = ()
    phi: str | None = None
    benchmark_weight: str | None = None
    group: str | None = None
    add_intercept: bool = True

    def __post_init__(self):
        object.__setattr__(self, "covariates", tuple(self.covariates))
        if len(self.covariates) == 0:
            raise ValidationError("schema must name at least one covariate column")


def _parse_cell(raw: str, column: str, row: int) -> float:
    try:
        return float(raw)
    except (TypeError, ValueError):
        raise ValidationError(
            f"non-numeric value {raw!r} in column {column!r}, row {row}"
        ) from None


def load_area_csv(path: str | Path, schema: CsvSchema) -> AreaDataset:
    """Read and validate an area-level CSV into an AreaDataset.

    Row order defines area indexing and must match the label universe of
    any edge list used alongside.  Missing columns, non-numeric cells
    (reported with row and column), negative D, and duplicate labels are
    all rejected.
    """
    path = Path(path)
    if not path.exists():
        raise ValidationError(f"area CSV not found: {path}")
    with open(path, "r", encoding="utf-8", newline="") as fh:
        reader = csv.DictReader(fh)
        header = reader.fieldnames or []
        needed = [schema.label, schema.y, schema.d, *schema.covariates]
        for opt in (schema.phi, schema.benchmark_weight, schema.group):
            if opt is not None:
                needed.append(opt)
        for col in needed:
            if col not in header:
                raise ValidationError(f"missing column {col!r} in {path}")
        rows = list(reader)
    if not rows:
        raise ValidationError(f"area CSV {path} has no data rows")

    labels = tuple(r[schema.label] for r in rows)
    y = np.array([_parse_cell(r[schema.y], schema.y, i + 2) for i, r in enumerate(rows)])
    D = np.array([_parse_cell(r[schema.d], schema.d, i + 2) for i, r in enumerate(rows)])
    cov = np.column_stack(
        [
            np.array([_parse_cell(r[c], c, i + 2) for i, r in enumerate(rows)])
            for c in schema.covariates
        ]
    )
    phi = None
    if schema.phi is not None:
        phi = np.array([_parse_cell(r[schema.phi], schema.phi, i + 2) for i, r in enumerate(rows)])
    elif np.any(D < 0):
        phi = None  # let the dataset's own check report the negative variance
    elif np.any(D == 0):
        raise ValidationError(
            "cannot default loss weights to 1/D with a zero sampling variance; "
            f"supply a phi column (column {schema.d!r} has zero entries)"
        )
    else:
        phi = 1.0 / D
    weights = None
    if schema.benchmark_weight is not None:
        weights = np.array(
            [_parse_cell(r[schema.benchmark_weight], schema.benchmark_weight, i + 2) for i, r in enumerate(rows)]
        )
    groups = None
    if schema.group is not None:
        groups = tuple(r[schema.group] for r in rows)
    return AreaDataset(
        labels=labels,
        y=y,
        D=D,
        covariates=cov,
        covariate_names=schema.covariates,
        intercept=schema.add_intercept,
        groups=groups,
        phi=phi,
        benchmark_weights=weights,
    )


def write_area_csv(data: AreaDataset, path: str | Path, schema: CsvSchema | None = None) -> Path:
    """Write an AreaDataset back to CSV (17-digit floats, exact round trip)."""
    if schema is None:
        schema = CsvSchema(
            covariates=data.covariate_names,
            phi="phi" if data.phi is not None else None,
            benchmark_weight="benchmark_weight" if data.benchmark_weights is not None else None,
            group="group" if data.groups is not None else None,
            add_intercept=data.intercept,
        )
    path = Path(path)
    header = [schema.label, schema.y, schema.d, *schema.covariates]
    if schema.phi is not None:
        header.append(schema.phi)
    if schema.benchmark_weight is not None:
        header.append(schema.benchmark_weight)
    if schema.group is not None:
        header.append(schema.group)
    with open(path, "w", encoding="utf-8", newline="") as fh:
        writer = csv.writer(fh, lineterminator="\n")
        writer.writerow(header)
        for i, lab in enumerate(data.labels):
            row = [lab, _fmt(data.y[i]), _fmt(data.D[i])]
            row += [_fmt(v) for v in data.covariates[i]]
            if schema.phi is not None:
                row.append(_fmt(data.phi[i]))
            if schema.benchmark_weight is not None:
                row.append(_fmt(data.benchmark_weights[i]))
            if schema.group is not None:
                row.append(data.groups[i])
            writer.writerow(row)
    return path


# ---------------------------------------------------------------------------
# Run configuration


_CONFIG_DEFAULTS: dict[str, str | None] = {
    "area_csv": None,
    "edge_list": None,
    "output_dir": "out",
    "seed": "0",
    "label_column": "label",
    "y_column": "y",
    "d_column": "D",
    "covariate_columns": None,
    "phi_column": "",
    "group_column": "",
    "benchmark_weight_column": "",
    "add_intercept": "true",
    "benchmark_target": "",
    "benchmark_matrix_csv": "",
    "benchmark_targets_csv": "",
    "benchmark_provenance": "",
    "gamma": "",
    "gamma_grid": "",
    "gibbs_iterations": "10000",
    "gibbs_burn": "2000",
    "gibbs_thin": "1",
    "bootstrap_replicates": "0",
    "bootstrap_gamma_policy": "fixed",
    "bootstrap_gibbs_iterations": "2000",
    "bootstrap_gibbs_burn": "500",
    "bootstrap_gibbs_thin": "1",
}

_REQUIRED_KEYS = ("area_csv", "edge_list", "covariate_columns")


def _parse_bool(raw: str, key: str) -> bool:
    low = raw.strip().lower()
    if low in ("true", "yes", "1"):
        return True
    if low in ("false", "no", "0"):
        return False
    raise ValidationError(f"config key {key!r}: expected true/false, got {raw!r}")


def _parse_grid_spec(raw: str) -> np.ndarray:
    parts = [p.strip() for p in raw.split(",")]
    if len(parts) != 3:
        raise ValidationError(f"gamma_grid must be 'low,high,n', got {raw!r}")
    try:
        low, high, num = float(parts[0]), float(parts[1]), int(parts[2])
    except ValueError:
        raise ValidationError(f"gamma_grid must be 'low,high,n', got {raw!r}") from None
    return default_gamma_grid(low, high, num)


@dataclass(frozen=True)
class RunConfig:
    """Everything a pipeline run needs; see the module docstring for the
    config-file key names."""

    area_csv: Path
    edge_list: Path
    schema: CsvSchema
    output_dir: Path = Path("out")
    seed: int = 0
    gamma: float | None = None
    gamma_grid: np.ndarray | None = None
    benchmark_target: float | None = None
    benchmark_matrix_csv: Path | None = None
    benchmark_targets_csv: Path | None = None
    benchmark_provenance: str = ""
    gibbs: GibbsConfig = field(default_factory=GibbsConfig)
    bootstrap_replicates: int = 0
    bootstrap_gamma_policy: str = "fixed"
    bootstrap_gibbs: GibbsConfig = field(default_factory=lambda: GibbsConfig(n_iter=2000, n_burn=500))

    def __post_init__(self):
        if (self.gamma is None) == (self.gamma_grid is None):
            raise ValidationError("exactly one of a fixed gamma or a gamma grid must be chosen")
        if self.gamma is not None and not (np.isfinite(self.gamma) and self.gamma >= 0):
            raise ValidationError(f"gamma must be a finite nonnegative real, got {self.gamma!r}")
        uses_weight = self.schema.benchmark_weight is not None
        uses_matrix = self.benchmark_matrix_csv is not None
        if uses_weight and uses_matrix:
            raise ValidationError(
                "choose one benchmark form: a weight column or a constraint matrix file"
            )
        if uses_weight:
            if self.benchmark_target is None or not np.isfinite(self.benchmark_target):
                raise ValidationError("a finite benchmark_target is required with a weight column")
        if uses_matrix and self.benchmark_targets_csv is None:
            raise ValidationError("benchmark_matrix_csv requires benchmark_targets_csv")
        if self.bootstrap_replicates < 0:
            raise ValidationError("bootstrap_replicates must be >= 0")
        if self.bootstrap_gamma_policy not in _GAMMA_POLICIES:
            raise ValidationError(
                f"bootstrap_gamma_policy must be one of {_GAMMA_POLICIES}"
            )
        if (
            self.bootstrap_replicates > 0
            and self.bootstrap_gamma_policy == "re-cross-validate"
            and self.gamma_grid is None
        ):
            raise ValidationError(
                "bootstrap_gamma_policy = re-cross-validate requires a gamma_grid"
            )

    @classmethod
    def from_file(cls, path: str | Path) -> "RunConfig":
        """Parse a flat key/value config file.  Unknown keys are errors."""
        path = Path(path)
        if not path.exists():
            raise ValidationError(f"config file not found: {path}")
        values = dict(_CONFIG_DEFAULTS)
        with open(path, "r", encoding="utf-8") as fh:
            for lineno, raw in enumerate(fh, start=1):
                line = raw.strip()
                if not line or line.startswith("#"):
                    continue
                if "=" not in line:
                    raise ValidationError(f"{path}:{lineno}: expected 'key = value'")
                key, _, value = line.partition("=")
                key = key.strip()
                if key not in _CONFIG_DEFAULTS:
                    raise ValidationError(f"{path}:{lineno}: unknown config key {key!r}")
                values[key] = value.strip()
        missing = [k for k in _REQUIRED_KEYS if not values[k]]
        if missing:
            raise ValidationError(f"config {path} missing required keys: {', '.join(missing)}")

        def maybe(key: str) -> str | None:
            return values[key] or None

        schema = CsvSchema(
            label=values["label_column"],
            y=values["y_column"],
            d=values["d_column"],
            covariates=tuple(c.strip() for c in values["covariate_columns"].split(",") if c.strip()),
            phi=maybe("phi_column"),
            benchmark_weight=maybe("benchmark_weight_column"),
            group=maybe("group_column"),
            add_intercept=_parse_bool(values["add_intercept"], "add_intercept"),
        )
        base = path.parent

        def resolve(key: str) -> Path | None:
            raw = maybe(key)
            if raw is None:
                return None
            p = Path(raw)
            return p if p.is_absolute() else base / p

        gamma = float(values["gamma"]) if values["gamma"] else None
        grid = _parse_grid_spec(values["gamma_grid"]) if values["gamma_grid"] else None
        seed = int(values["seed"])
        return cls(
            area_csv=resolve("area_csv"),
            edge_list=resolve("edge_list"),
            schema=schema,
            output_dir=resolve("output_dir"),
            seed=seed,
            gamma=gamma,
            gamma_grid=grid,
            benchmark_target=float(values["benchmark_target"]) if values["benchmark_target"] else None,
            benchmark_matrix_csv=resolve("benchmark_matrix_csv"),
            benchmark_targets_csv=resolve("benchmark_targets_csv"),
            benchmark_provenance=values["benchmark_provenance"],
            gibbs=GibbsConfig(
                n_iter=int(values["gibbs_iterations"]),
                n_burn=int(values["gibbs_burn"]),
                thin=int(values["gibbs_thin"]),
                seed=seed,
            ),
            bootstrap_replicates=int(values["bootstrap_replicates"]),
            bootstrap_gamma_policy=values["bootstrap_gamma_policy"],
            bootstrap_gibbs=GibbsConfig(
                n_iter=int(values["bootstrap_gibbs_iterations"]),
                n_burn=int(values["bootstrap_gibbs_burn"]),
                thin=int(values["bootstrap_gibbs_thin"]),
                seed=seed,
            ),
        )


# ---------------------------------------------------------------------------
# Report


@dataclass(frozen=True)
class EstimateReport:
    """Per-area estimate table plus the CV curve and bootstrap summaries."""

    labels: tuple[str, ...]
    y: np.ndarray
    D: np.ndarray
    theta_bayes: np.ndarray
    theta_smoothed: np.ndarray
    theta_benchmarked: np.ndarray
    groups: tuple[str, ...] | None
    cv: CvCurve | None
    mse: np.ndarray | None
    bias: np.ndarray | None
    metadata: dict

    def __post_init__(self):
        m = len(self.labels)
        for name in ("y", "D", "theta_bayes", "theta_smoothed", "theta_benchmarked"):
            v = getattr(self, name)
            if np.asarray(v).shape != (m,):
                raise ValidationError(f"report column {name} must have {m} rows")
        bench = self.metadata.get("benchmark")
        if bench is not None:
            residual = self.metadata.get("constraint_residual")
            if residual is None:
                raise ValidationError("benchmarked reports must record the constraint residual")
            t = np.atleast_1d(np.asarray(bench["target"], dtype=float))
            if residual > 1e-8 * (1.0 + float(np.max(np.abs(t)))):
                raise ValidationError(f"recorded constraint residual {residual} exceeds tolerance")

    @property
    def m(self) -> int:
        return len(self.labels)


def _load_benchmark_matrix(config: RunConfig, m: int) -> ConstraintSet:
    M_rows = []
    with open(config.benchmark_matrix_csv, "r", encoding="utf-8") as fh:
        for lineno, raw in enumerate(fh, start=1):
            line = raw.strip()
            if not line or line.startswith("#"):
                continue
            try:
                M_rows.append([float(v) for v in line.split(",")])
            except ValueError:
                raise ValidationError(
                    f"{config.benchmark_matrix_csv}:{lineno}: non-numeric entry"
                ) from None
    t_rows = []
    with open(config.benchmark_targets_csv, "r", encoding="utf-8") as fh:
        for lineno, raw in enumerate(fh, start=1):
            line = raw.strip()
            if not line or line.startswith("#"):
                continue
            try:
                t_rows.append(float(line))
            except ValueError:
                raise ValidationError(
                    f"{config.benchmark_targets_csv}:{lineno}: non-numeric entry"
                ) from None
    M = np.asarray(M_rows, dtype=float)
    if M.ndim != 2 or M.shape[1] != m:
        raise ValidationError(
            f"benchmark matrix must have {m} columns, got shape {M.shape}"
        )
    if len(t_rows) != M.shape[0]:
        raise ValidationError(
            f"benchmark matrix has {M.shape[0]} rows but {len(t_rows)} targets"
        )
    return ConstraintSet(M, np.asarray(t_rows))


def _prepare_inputs(config: RunConfig):
    """Load stage: dataset, penalty matrix, loss weights, and constraints."""
    data = load_area_csv(config.area_csv, config.schema)
    edges = read_edge_list(config.edge_list)
    spec = load_adjacency(edges, data.labels)
    omega = build_omega(spec)
    phi = data.phi

    constraints = None
    single_weights = None
    bench_meta = None
    if config.schema.benchmark_weight is not None:
        raw = data.benchmark_weights
        if np.any(raw < 0) or raw.sum() <= 0:
            raise ValidationError("benchmark weight column must be nonnegative with a positive sum")
        single_weights = raw / raw.sum()
        constraints = ConstraintSet(single_weights[np.newaxis, :], np.array([config.benchmark_target]))
        bench_meta = {
            "kind": "weighted-mean",
            "target": config.benchmark_target,
            "weight_column_sum": float(raw.sum()),
            "provenance": config.benchmark_provenance,
        }
    elif config.benchmark_matrix_csv is not None:
        constraints = _load_benchmark_matrix(config, data.m)
        bench_meta = {
            "kind": "matrix",
            "target": [float(v) for v in constraints.t],
            "provenance": config.benchmark_provenance,
        }
    return data, omega, phi, constraints, single_weights, bench_meta


def _constrained_fit(theta, phi, omega, gamma, constraints, single_weights):
    """Benchmarked estimate via the single-constraint route when the
    benchmark is one weighted mean, the general route otherwise."""
    if single_weights is not None:
        return benchmarked_estimate_single(
            theta, phi, omega, gamma, single_weights, float(constraints.t[0])
        )
    return benchmarked_estimate(theta, phi, omega, gamma, constraints)


def _base_metadata(config: RunConfig) -> dict:
    return {
        "smallarea_version": __version__,
        "numpy_version": np.__version__,
        "scipy_version": scipy.__version__,
        "seed": config.seed,
        "gibbs": {
            "n_iter": config.gibbs.n_iter,
            "n_burn": config.gibbs.n_burn,
            "thin": config.gibbs.thin,
        },
    }


def run_pipeline(config: RunConfig) -> EstimateReport:
    """Execute the full pipeline and write the report files.

    Deterministic for a fixed config and seed: the sampler, the
    cross-validation and every bootstrap replicate derive their streams
    from the master seed.
    """
    with _stage("load"):
        data, omega, phi, constraints, single_weights, bench_meta = _prepare_inputs(config)

    with _stage("gibbs"):
        summary = gibbs_fit(data, config.gibbs)
    theta = summary.theta_bayes

    curve = None
    if config.gamma_grid is not None:
        with _stage("cross-validation"):
            curve = cross_validate(theta, phi, omega, config.gamma_grid, constraints)
        gamma = curve.gamma_hat
        gamma_source = "cross-validation"
    else:
        gamma = float(config.gamma)
        gamma_source = "fixed"

    with _stage("estimate"):
        smoothed = smoothed_estimate(theta, phi, omega, gamma)
        if constraints is not None:
            bench = _constrained_fit(theta, phi, omega, gamma, constraints, single_weights)
            theta_bm = bench.values
            residual = bench.constraint_residual
        else:
            theta_bm = smoothed.values
            residual = None

    metadata = _base_metadata(config)
    metadata.update(
        {
            "m": data.m,
            "gamma": gamma,
            "gamma_source": gamma_source,
            "gamma_grid": None if config.gamma_grid is None else [float(g) for g in config.gamma_grid],
            "benchmark": bench_meta,
            "constraint_residual": residual,
            "bootstrap": None,
        }
    )

    mse = bias = None
    if config.bootstrap_replicates > 0:
        with _stage("bootstrap"):
            boot_cfg = BootstrapConfig(
                n_replicates=config.bootstrap_replicates,
                seed=config.seed,
                gamma_policy=config.bootstrap_gamma_policy,
                gibbs=config.bootstrap_gibbs,
            )

            def replicate_pipeline(y_star: np.ndarray, chain_seed: int) -> np.ndarray:
                star = replace(data, y=y_star)
                star_summary = gibbs_fit(star, replace(config.bootstrap_gibbs, seed=chain_seed))
                star_theta = star_summary.theta_bayes
                if boot_cfg.gamma_policy == "re-cross-validate":
                    star_gamma = cross_validate(
                        star_theta, phi, omega, config.gamma_grid, constraints
                    ).gamma_hat
                else:
                    star_gamma = gamma
                if constraints is not None:
                    return _constrained_fit(
                        star_theta, phi, omega, star_gamma, constraints, single_weights
                    ).values
                return smoothed_estimate(star_theta, phi, omega, star_gamma).values

            report = bootstrap_mse(data, theta_bm, replicate_pipeline, boot_cfg)
            mse, bias = report.mse, report.bias
            metadata["bootstrap"] = {
                "n_replicates": boot_cfg.n_replicates,
                "gamma_policy": boot_cfg.gamma_policy,
                "failed": list(report.failed),
                "gibbs": {
                    "n_iter": config.bootstrap_gibbs.n_iter,
                    "n_burn": config.bootstrap_gibbs.n_burn,
                    "thin": config.bootstrap_gibbs.thin,
                },
            }

    result = EstimateReport(
        labels=data.labels,
        y=data.y,
        D=data.D,
        theta_bayes=theta,
        theta_smoothed=smoothed.values,
        theta_benchmarked=theta_bm,
        groups=data.groups,
        cv=curve,
        mse=mse,
        bias=bias,
        metadata=metadata,
    )
    with _stage("write"):
        write_report(result, config.output_dir)
    return result


def fit_only(config: RunConfig) -> Path:
    """Gibbs stage alone; writes fit.csv and metadata.json."""
    with _stage("load"):
        data, _, _, _, _, _ = _prepare_inputs(config)
    with _stage("gibbs"):
        summary = gibbs_fit(data, config.gibbs)
    out = Path(config.output_dir)
    out.mkdir(parents=True, exist_ok=True)
    target = out / "fit.csv"
    with open(target, "w", encoding="utf-8", newline="") as fh:
        writer = csv.writer(fh, lineterminator="\n")
        writer.writerow(["label", "y", "D", "theta_bayes", "ess"])
        for i, lab in enumerate(data.labels):
            writer.writerow(
                [lab, _fmt(data.y[i]), _fmt(data.D[i]), _fmt(summary.theta_bayes[i]), _fmt(summary.ess[i])]
            )
    meta = _base_metadata(config)
    meta["sigma_u2_mean"] = summary.sigma_u2_mean
    _write_json(meta, out / "metadata.json")
    return target


def cv_only(config: RunConfig) -> Path:
    """Gibbs plus cross-validation; writes cv_curve.csv and metadata.json."""
    if config.gamma_grid is None:
        raise ValidationError("the cv command requires a gamma_grid (not a fixed gamma)")
    with _stage("load"):
        data, omega, phi, constraints, _, _ = _prepare_inputs(config)
    with _stage("gibbs"):
        summary = gibbs_fit(data, config.gibbs)
    with _stage("cross-validation"):
        curve = cross_validate(summary.theta_bayes, phi, omega, config.gamma_grid, constraints)
    out = Path(config.output_dir)
    out.mkdir(parents=True, exist_ok=True)
    target = out / "cv_curve.csv"
    _write_cv_curve(curve, target)
    meta = _base_metadata(config)
    meta["gamma"] = curve.gamma_hat
    meta["gamma_source"] = "cross-validation"
    _write_json(meta, out / "metadata.json")
    return target


# ---------------------------------------------------------------------------
# Report I/O


def _write_json(obj: dict, path: Path) -> None:
    with open(path, "w", encoding="utf-8") as fh:
        json.dump(obj, fh, indent=2, sort_keys=True)
        fh.write("\n")


def _write_cv_curve(curve: CvCurve, path: Path) -> None:
    with open(path, "w", encoding="utf-8", newline="") as fh:
        writer = csv.writer(fh, lineterminator="\n")
        writer.writerow(["gamma", "score", "failed_areas"])
        for g, s, failed in zip(curve.grid, curve.scores, curve.failed_areas):
            writer.writerow([_fmt(g), _fmt(s) if np.isfinite(s) else "inf", ";".join(map(str, failed))])


def write_report(report: EstimateReport, out_dir: str | Path) -> Path:
    """Write estimates.csv, cv_curve.csv, bootstrap_mse.csv, metadata.json."""
    out = Path(out_dir)
    out.mkdir(parents=True, exist_ok=True)
    with open(out / "estimates.csv", "w", encoding="utf-8", newline="") as fh:
        writer = csv.writer(fh, lineterminator="\n")
        writer.writerow(["label", "y", "D", "theta_bayes", "theta_smoothed", "theta_benchmarked", "group"])
        for i, lab in enumerate(report.labels):
            writer.writerow(
                [
                    lab,
                    _fmt(report.y[i]),
                    _fmt(report.D[i]),
                    _fmt(report.theta_bayes[i]),
                    _fmt(report.theta_smoothed[i]),
                    _fmt(report.theta_benchmarked[i]),
                    "" if report.groups is None else report.groups[i],
                ]
            )
    if report.cv is not None:
        _write_cv_curve(report.cv, out / "cv_curve.csv")
    if report.mse is not None:
        with open(out / "bootstrap_mse.csv", "w", encoding="utf-8", newline="") as fh:
            writer = csv.writer(fh, lineterminator="\n")
            writer.writerow(["label", "mse", "bias"])
            for i, lab in enumerate(report.labels):
                writer.writerow([lab, _fmt(report.mse[i]), _fmt(report.bias[i])])
    _write_json(report.metadata, out / "metadata.json")
    return out


def read_report(out_dir: str | Path) -> EstimateReport:
    """Reconstruct a report from the files written by :func:`write_report`."""
    out = Path(out_dir)
    est = out / "estimates.csv"
    if not est.exists():
        raise ValidationError(f"no estimates.csv under {out}; run the pipeline first")
    with open(est, "r", encoding="utf-8", newline="") as fh:
        rows = list(csv.DictReader(fh))
    if not rows:
        raise ValidationError(f"{est} has no data rows")
    labels = tuple(r["label"] for r in rows)
    cols = {
        name: np.array([float(r[name]) for r in rows])
        for name in ("y", "D", "theta_bayes", "theta_smoothed", "theta_benchmarked")
    }
    groups = tuple(r["group"] for r in rows)
    if all(g == "" for g in groups):
        groups = None
    metadata = {}
    meta_path = out / "metadata.json"
    if meta_path.exists():
        with open(meta_path, "r", encoding="utf-8") as fh:
            metadata = json.load(fh)
    mse = bias = None
    boot_path = out / "bootstrap_mse.csv"
    if boot_path.exists():
        with open(boot_path, "r", encoding="utf-8", newline="") as fh:
            boot_rows = list(csv.DictReader(fh))
        mse = np.array([float(r["mse"]) for r in boot_rows])
        bias = np.array([float(r["bias"]) for r in boot_rows])
    curve = None
    cv_path = out / "cv_curve.csv"
    if cv_path.exists():
        with open(cv_path, "r", encoding="utf-8", newline="") as fh:
            cv_rows = list(csv.DictReader(fh))
        grid = np.array([float(r["gamma"]) for r in cv_rows])
        scores = np.array([np.inf if r["score"] == "inf" else float(r["score"]) for r in cv_rows])
        failed = tuple(
            tuple(int(i) for i in r["failed_areas"].split(";") if i) for r in cv_rows
        )
        curve = CvCurve(grid, scores, float(grid[int(np.argmin(scores))]), failed)
    return EstimateReport(
        labels=labels,
        y=cols["y"],
        D=cols["D"],
        theta_bayes=cols["theta_bayes"],
        theta_smoothed=cols["theta_smoothed"],
        theta_benchmarked=cols["theta_benchmarked"],
        groups=groups,
        cv=curve,
        mse=mse,
        bias=bias,
        metadata=metadata,
    )


def emit_plot_data(report: EstimateReport, kind: str, out_dir: str | Path) -> Path:
    """Write tidy plot-ready CSV for one figure kind; no rendering happens.

    ``scatter_constrained_vs_bayes``: one row per area with the Bayes and
    constrained estimates.  ``scatter_by_group``: one row per area per
    series (smoothed, benchmarked) with the group label.  ``mse_by_area``:
    one row per area with bootstrap MSE and bias.
    """
    if kind not in PLOT_KINDS:
        raise ValidationError(f"unknown plot kind {kind!r}; choose from {PLOT_KINDS}")
    out = Path(out_dir)
    out.mkdir(parents=True, exist_ok=True)
    target = out / f"plot_{kind}.csv"
    with open(target, "w", encoding="utf-8", newline="") as fh:
        writer = csv.writer(fh, lineterminator="\n")
        if kind == "scatter_constrained_vs_bayes":
            writer.writerow(["label", "bayes", "constrained"])
            for i, lab in enumerate(report.labels):
                writer.writerow([lab, _fmt(report.theta_bayes[i]), _fmt(report.theta_benchmarked[i])])
        elif kind == "scatter_by_group":
            if report.groups is None:
                raise ValidationError("scatter_by_group requires group labels in the report")
            writer.writerow(["label", "group", "series", "bayes", "value"])
            for series, values in (
                ("smoothed", report.theta_smoothed),
                ("benchmarked", report.theta_benchmarked),
            ):
                for i, lab in enumerate(report.labels):
                    writer.writerow(
                        [lab, report.groups[i], series, _fmt(report.theta_bayes[i]), _fmt(values[i])]
                    )
        else:  # mse_by_area
            if report.mse is None:
                raise ValidationError("mse_by_area requires bootstrap results in the report")
            writer.writerow(["label", "mse", "bias"])
            for i, lab in enumerate(report.labels):
                writer.writerow([lab, _fmt(report.mse[i]), _fmt(report.bias[i])])
    return target
