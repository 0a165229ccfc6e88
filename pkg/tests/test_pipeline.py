import json

import numpy as np
import pytest

from smallarea import (
    AreaDataset,
    CsvSchema,
    NumericalError,
    RunConfig,
    ValidationError,
    emit_plot_data,
    load_area_csv,
    read_report,
    run_pipeline,
    write_area_csv,
)
from smallarea.datasets import (
    FIXTURE_SCHEMA,
    US_STATE_LABELS,
    synthetic_dataset_path,
    synthetic_saipe_like,
    us_state_borders_path,
)
from smallarea.pipeline import cv_only, fit_only


def small_area_csv(tmp_path, m=8, seed=0, zero_d=False):
    rng = np.random.Generator(np.random.Philox(400 + seed))
    x = rng.normal(size=m)
    D = np.zeros(m) if zero_d else rng.uniform(0.5, 2.0, size=m)
    y = 10.0 + 1.5 * x + rng.normal(0.0, 1.0, size=m)
    data = AreaDataset(
        labels=tuple(f"r{i}" for i in range(m)),
        y=y,
        D=D,
        covariates=x[:, None],
        covariate_names=("x",),
        benchmark_weights=rng.uniform(1.0, 5.0, size=m),
        groups=tuple("AB"[i % 2] for i in range(m)),
    )
    path = tmp_path / "areas.csv"
    write_area_csv(data, path)
    edge_path = tmp_path / "edges.txt"
    lines = [f"r{i},r{i+1}" for i in range(m - 1)]
    edge_path.write_text("\n".join(lines) + "\n")
    return data, path, edge_path


def write_config(tmp_path, area_csv, edge_list, **overrides):
    values = {
        "area_csv": area_csv.name,
        "edge_list": edge_list.name,
        "covariate_columns": "x",
        "output_dir": "out",
        "seed": "3",
        "gamma": "0.5",
        "gibbs_iterations": "400",
        "gibbs_burn": "100",
    }
    values.update({k: str(v) for k, v in overrides.items()})
    path = tmp_path / "run.cfg"
    path.write_text("\n".join(f"{k} = {v}" for k, v in values.items()) + "\n")
    return path


class TestLoadAreaCsv:
    def test_well_formed_three_rows(self, tmp_path):
        path = tmp_path / "a.csv"
        path.write_text("label,y,D,x\na,1.0,0.5,0.1\nb,2.0,0.5,0.2\nc,3.0,0.5,0.3\n")
        data = load_area_csv(path, CsvSchema(covariates=("x",)))
        assert data.m == 3
        assert data.labels == ("a", "b", "c")
        np.testing.assert_allclose(data.phi, 2.0)  # defaults to 1/D

    def test_missing_column_named(self, tmp_path):
        path = tmp_path / "a.csv"
        path.write_text("label,y,x\na,1.0,0.1\n")
        with pytest.raises(ValidationError, match="missing column 'D'"):
            load_area_csv(path, CsvSchema(covariates=("x",)))

    def test_non_numeric_cell_reports_row_and_column(self, tmp_path):
        path = tmp_path / "a.csv"
        path.write_text("label,y,D,x\na,1.0,0.5,0.1\nb,oops,0.5,0.2\n")
        with pytest.raises(ValidationError, match="'oops' in column 'y', row 3"):
            load_area_csv(path, CsvSchema(covariates=("x",)))

    def test_negative_d_rejected(self, tmp_path):
        path = tmp_path / "a.csv"
        path.write_text("label,y,D,x\na,1.0,-0.5,0.1\nb,1.0,0.5,0.2\n")
        with pytest.raises(ValidationError, match="negative sampling variance"):
            load_area_csv(path, CsvSchema(covariates=("x",)))

    def test_duplicate_label_rejected(self, tmp_path):
        path = tmp_path / "a.csv"
        path.write_text("label,y,D,x\na,1.0,0.5,0.1\na,1.0,0.5,0.2\n")
        with pytest.raises(ValidationError, match="duplicate label"):
            load_area_csv(path, CsvSchema(covariates=("x",)))

    def test_zero_d_without_phi_column_rejected(self, tmp_path):
        path = tmp_path / "a.csv"
        path.write_text("label,y,D,x\na,1.0,0.0,0.1\nb,1.0,0.5,0.2\n")
        with pytest.raises(ValidationError, match="phi column"):
            load_area_csv(path, CsvSchema(covariates=("x",)))

    def test_explicit_phi_column(self, tmp_path):
        path = tmp_path / "a.csv"
        path.write_text("label,y,D,x,w\na,1.0,0.0,0.1,2.0\nb,1.0,0.5,0.2,3.0\n")
        data = load_area_csv(path, CsvSchema(covariates=("x",), phi="w"))
        np.testing.assert_allclose(data.phi, [2.0, 3.0])

    def test_round_trip_exact(self, tmp_path):
        data, path, _ = small_area_csv(tmp_path)
        schema = CsvSchema(
            covariates=("x",), benchmark_weight="benchmark_weight", group="group"
        )
        loaded = load_area_csv(path, schema)
        rewritten = tmp_path / "b.csv"
        write_area_csv(loaded, rewritten, schema)
        again = load_area_csv(rewritten, schema)
        assert again.labels == loaded.labels
        assert np.array_equal(again.y, loaded.y)
        assert np.array_equal(again.D, loaded.D)
        assert np.array_equal(again.covariates, loaded.covariates)
        assert np.array_equal(again.benchmark_weights, loaded.benchmark_weights)
        assert again.groups == loaded.groups


class TestSyntheticFixture:
    def test_fixture_matches_generator_output(self):
        shipped = load_area_csv(synthetic_dataset_path(), FIXTURE_SCHEMA)
        fresh = synthetic_saipe_like()
        assert shipped.labels == fresh.labels == US_STATE_LABELS
        assert np.array_equal(shipped.y, fresh.y)
        assert np.array_equal(shipped.D, fresh.D)
        assert np.array_equal(shipped.covariates, fresh.covariates)
        assert shipped.groups == fresh.groups

    def test_fixture_labels_match_border_fixture(self):
        shipped = load_area_csv(synthetic_dataset_path(), FIXTURE_SCHEMA)
        border_labels = set()
        for line in us_state_borders_path().read_text().splitlines():
            line = line.strip()
            if line and not line.startswith("#"):
                a, b = line.split(",")[:2]
                border_labels.update((a, b))
        assert border_labels <= set(shipped.labels)
        assert np.all(shipped.D > 0)


class TestRunConfig:
    def test_unknown_key_rejected(self, tmp_path):
        _, area, edges = small_area_csv(tmp_path)
        cfg = write_config(tmp_path, area, edges)
        cfg.write_text(cfg.read_text() + "mystery_knob = 7\n")
        with pytest.raises(ValidationError, match="unknown config key 'mystery_knob'"):
            RunConfig.from_file(cfg)

    def test_missing_required_keys(self, tmp_path):
        cfg = tmp_path / "run.cfg"
        cfg.write_text("area_csv = a.csv\n")
        with pytest.raises(ValidationError, match="missing required keys"):
            RunConfig.from_file(cfg)

    def test_gamma_and_grid_both_set_rejected(self, tmp_path):
        _, area, edges = small_area_csv(tmp_path)
        cfg = write_config(tmp_path, area, edges, gamma_grid="0.01,10,5")
        with pytest.raises(ValidationError, match="exactly one"):
            RunConfig.from_file(cfg)

    def test_neither_gamma_nor_grid_rejected(self, tmp_path):
        _, area, edges = small_area_csv(tmp_path)
        cfg = write_config(tmp_path, area, edges, gamma="")
        with pytest.raises(ValidationError, match="exactly one"):
            RunConfig.from_file(cfg)

    def test_grid_spec_parsing(self, tmp_path):
        _, area, edges = small_area_csv(tmp_path)
        cfg = write_config(tmp_path, area, edges, gamma="", gamma_grid="0.01,10,5")
        config = RunConfig.from_file(cfg)
        assert config.gamma is None
        assert config.gamma_grid.shape == (5,)
        assert config.gamma_grid[0] == pytest.approx(0.01)
        assert config.gamma_grid[-1] == pytest.approx(10.0)

    def test_weight_benchmark_requires_target(self, tmp_path):
        _, area, edges = small_area_csv(tmp_path)
        cfg = write_config(tmp_path, area, edges, benchmark_weight_column="benchmark_weight")
        with pytest.raises(ValidationError, match="benchmark_target"):
            RunConfig.from_file(cfg)

    def test_recv_policy_requires_grid(self, tmp_path):
        _, area, edges = small_area_csv(tmp_path)
        cfg = write_config(
            tmp_path,
            area,
            edges,
            bootstrap_replicates="2",
            bootstrap_gamma_policy="re-cross-validate",
        )
        with pytest.raises(ValidationError, match="re-cross-validate requires"):
            RunConfig.from_file(cfg)


class TestRunPipeline:
    def test_gamma_zero_no_benchmark_passes_bayes_through(self, tmp_path):
        _, area, edges = small_area_csv(tmp_path)
        cfg = write_config(tmp_path, area, edges, gamma="0.0")
        report = run_pipeline(RunConfig.from_file(cfg))
        assert np.array_equal(report.theta_smoothed, report.theta_bayes)
        assert np.array_equal(report.theta_benchmarked, report.theta_bayes)
        assert (tmp_path / "out" / "estimates.csv").exists()
        assert report.metadata["benchmark"] is None

    def test_already_attained_benchmark_is_noop(self, tmp_path):
        data, area, edges = small_area_csv(tmp_path)
        plain_cfg = write_config(tmp_path, area, edges, output_dir="out1")
        plain = run_pipeline(RunConfig.from_file(plain_cfg))
        w = data.benchmark_weights / data.benchmark_weights.sum()
        attained = float(w @ plain.theta_smoothed)
        bench_cfg = write_config(
            tmp_path,
            area,
            edges,
            output_dir="out2",
            benchmark_weight_column="benchmark_weight",
            benchmark_target=repr(attained),
        )
        bench = run_pipeline(RunConfig.from_file(bench_cfg))
        np.testing.assert_allclose(bench.theta_benchmarked, plain.theta_smoothed, atol=1e-10)
        np.testing.assert_allclose(bench.theta_smoothed, plain.theta_smoothed, atol=0)

    def test_weighted_mean_benchmark_hits_target(self, tmp_path):
        data, area, edges = small_area_csv(tmp_path)
        cfg = write_config(
            tmp_path,
            area,
            edges,
            benchmark_weight_column="benchmark_weight",
            benchmark_target="11.0",
            gamma="",
            gamma_grid="0.01,10,8",
        )
        report = run_pipeline(RunConfig.from_file(cfg))
        w = data.benchmark_weights / data.benchmark_weights.sum()
        assert float(w @ report.theta_benchmarked) == pytest.approx(11.0, abs=1e-8)
        assert report.metadata["constraint_residual"] <= 1e-8 * 12.0
        assert report.cv is not None
        assert report.metadata["gamma"] == report.cv.gamma_hat

    def test_matrix_benchmark_route(self, tmp_path):
        data, area, edges = small_area_csv(tmp_path)
        m = data.m
        M = np.zeros((2, m))
        M[0, : m // 2] = 1.0 / (m // 2)
        M[1, m // 2 :] = 1.0 / (m - m // 2)
        (tmp_path / "M.csv").write_text(
            "\n".join(",".join(repr(float(v)) for v in row) for row in M) + "\n"
        )
        (tmp_path / "t.csv").write_text("10.0\n12.0\n")
        cfg = write_config(
            tmp_path,
            area,
            edges,
            benchmark_matrix_csv="M.csv",
            benchmark_targets_csv="t.csv",
        )
        report = run_pipeline(RunConfig.from_file(cfg))
        np.testing.assert_allclose(M @ report.theta_benchmarked, [10.0, 12.0], atol=1e-8)

    def test_degenerate_matrix_benchmark_fails_numerically(self, tmp_path):
        data, area, edges = small_area_csv(tmp_path)
        m = data.m
        w = np.full(m, 1.0 / m)
        M = np.vstack([w, w])
        M[1, 0] += 1e-8
        (tmp_path / "M.csv").write_text(
            "\n".join(",".join(repr(float(v)) for v in row) for row in M) + "\n"
        )
        (tmp_path / "t.csv").write_text("10.0\n10.0\n")
        cfg = write_config(
            tmp_path,
            area,
            edges,
            benchmark_matrix_csv="M.csv",
            benchmark_targets_csv="t.csv",
        )
        with pytest.raises(NumericalError, match=r"\[stage estimate\] degenerate"):
            run_pipeline(RunConfig.from_file(cfg))

    def test_byte_identical_reruns(self, tmp_path):
        _, area, edges = small_area_csv(tmp_path)
        names = ("estimates.csv", "cv_curve.csv", "bootstrap_mse.csv", "metadata.json")
        blobs = []
        for out in ("outA", "outB"):
            cfg = write_config(
                tmp_path,
                area,
                edges,
                output_dir=out,
                gamma="",
                gamma_grid="0.01,10,6",
                benchmark_weight_column="benchmark_weight",
                benchmark_target="11.0",
                bootstrap_replicates="8",
                bootstrap_gibbs_iterations="200",
                bootstrap_gibbs_burn="50",
            )
            run_pipeline(RunConfig.from_file(cfg))
            blobs.append({n: (tmp_path / out / n).read_bytes() for n in names})
        assert blobs[0] == blobs[1]

    def test_bootstrap_with_refitted_gamma_per_replicate(self, tmp_path):
        _, area, edges = small_area_csv(tmp_path)
        cfg = write_config(
            tmp_path,
            area,
            edges,
            gamma="",
            gamma_grid="0.01,10,4",
            bootstrap_replicates="3",
            bootstrap_gamma_policy="re-cross-validate",
            bootstrap_gibbs_iterations="200",
            bootstrap_gibbs_burn="50",
        )
        report = run_pipeline(RunConfig.from_file(cfg))
        assert report.metadata["bootstrap"]["gamma_policy"] == "re-cross-validate"
        assert np.all(np.isfinite(report.mse))

    def test_bootstrap_stage_produces_mse_table(self, tmp_path):
        _, area, edges = small_area_csv(tmp_path)
        cfg = write_config(
            tmp_path,
            area,
            edges,
            bootstrap_replicates="5",
            bootstrap_gibbs_iterations="200",
            bootstrap_gibbs_burn="50",
        )
        report = run_pipeline(RunConfig.from_file(cfg))
        assert report.mse.shape == (8,)
        assert np.all(report.mse >= 0)
        assert report.metadata["bootstrap"]["n_replicates"] == 5

    def test_stage_name_attached_to_errors(self, tmp_path):
        _, area, edges = small_area_csv(tmp_path)
        edges.write_text("r0,zzz\n")
        cfg = write_config(tmp_path, area, edges)
        with pytest.raises(ValidationError, match=r"\[stage load\] unknown label"):
            run_pipeline(RunConfig.from_file(cfg))

    def test_isolated_areas_break_cv_without_a_covering_benchmark(self, tmp_path):
        # the US border graph leaves AK and HI isolated: without a benchmark
        # touching them, every held-out problem for those areas is singular
        cfg = tmp_path / "run.cfg"
        cfg.write_text(
            "\n".join(
                [
                    f"area_csv = {synthetic_dataset_path()}",
                    f"edge_list = {us_state_borders_path()}",
                    "covariate_columns = tax_poverty_rate,nonfiler_rate,foodstamp_rate",
                    "gamma_grid = 0.001,10,4",
                    "gibbs_iterations = 300",
                    "gibbs_burn = 100",
                    f"output_dir = {tmp_path / 'out'}",
                ]
            )
            + "\n"
        )
        with pytest.raises(NumericalError, match="all grid points infeasible"):
            run_pipeline(RunConfig.from_file(cfg))

    def test_population_benchmark_makes_isolated_areas_identifiable(self, tmp_path):
        cfg = tmp_path / "run.cfg"
        cfg.write_text(
            "\n".join(
                [
                    f"area_csv = {synthetic_dataset_path()}",
                    f"edge_list = {us_state_borders_path()}",
                    "covariate_columns = tax_poverty_rate,nonfiler_rate,foodstamp_rate",
                    "benchmark_weight_column = benchmark_weight",
                    "benchmark_target = 15.0",
                    "gamma_grid = 0.001,10,4",
                    "gibbs_iterations = 300",
                    "gibbs_burn = 100",
                    f"output_dir = {tmp_path / 'out'}",
                ]
            )
            + "\n"
        )
        report = run_pipeline(RunConfig.from_file(cfg))
        assert np.all(np.isfinite(report.cv.scores))
        assert report.cv.failed_areas == ((),) * 4


class TestFitAndCvCommands:
    def test_fit_only_writes_bayes_table(self, tmp_path):
        _, area, edges = small_area_csv(tmp_path)
        cfg = write_config(tmp_path, area, edges)
        path = fit_only(RunConfig.from_file(cfg))
        text = path.read_text().splitlines()
        assert text[0] == "label,y,D,theta_bayes,ess"
        assert len(text) == 9

    def test_cv_only_requires_grid(self, tmp_path):
        _, area, edges = small_area_csv(tmp_path)
        cfg = write_config(tmp_path, area, edges)
        with pytest.raises(ValidationError, match="gamma_grid"):
            cv_only(RunConfig.from_file(cfg))

    def test_cv_only_writes_curve(self, tmp_path):
        _, area, edges = small_area_csv(tmp_path)
        cfg = write_config(tmp_path, area, edges, gamma="", gamma_grid="0.01,10,5")
        path = cv_only(RunConfig.from_file(cfg))
        rows = path.read_text().splitlines()
        assert rows[0] == "gamma,score,failed_areas"
        assert len(rows) == 6


class TestReportIo:
    def _run(self, tmp_path, **overrides):
        _, area, edges = small_area_csv(tmp_path)
        cfg = write_config(tmp_path, area, edges, **overrides)
        config = RunConfig.from_file(cfg)
        return run_pipeline(config), config

    def test_read_report_round_trip(self, tmp_path):
        report, config = self._run(
            tmp_path,
            gamma="",
            gamma_grid="0.01,10,5",
            bootstrap_replicates="4",
            bootstrap_gibbs_iterations="200",
            bootstrap_gibbs_burn="50",
        )
        loaded = read_report(config.output_dir)
        assert loaded.labels == report.labels
        assert np.array_equal(loaded.theta_benchmarked, report.theta_benchmarked)
        assert np.array_equal(loaded.mse, report.mse)
        assert np.array_equal(loaded.cv.grid, report.cv.grid)
        assert loaded.metadata == json.loads(json.dumps(report.metadata))

    def test_plot_data_scatter(self, tmp_path):
        report, config = self._run(tmp_path)
        path = emit_plot_data(report, "scatter_constrained_vs_bayes", config.output_dir)
        rows = path.read_text().splitlines()
        assert rows[0] == "label,bayes,constrained"
        assert len(rows) == 9

    def test_plot_data_by_group(self, tmp_path):
        report, config = self._run(tmp_path, group_column="group")
        path = emit_plot_data(report, "scatter_by_group", config.output_dir)
        rows = path.read_text().splitlines()
        assert rows[0] == "label,group,series,bayes,value"
        assert len(rows) == 17  # two series, eight areas

    def test_plot_data_group_requires_groups(self, tmp_path):
        report, config = self._run(tmp_path)
        stripped = type(report)(
            labels=report.labels,
            y=report.y,
            D=report.D,
            theta_bayes=report.theta_bayes,
            theta_smoothed=report.theta_smoothed,
            theta_benchmarked=report.theta_benchmarked,
            groups=None,
            cv=None,
            mse=None,
            bias=None,
            metadata=report.metadata,
        )
        with pytest.raises(ValidationError, match="group"):
            emit_plot_data(stripped, "scatter_by_group", config.output_dir)

    def test_plot_data_mse_requires_bootstrap(self, tmp_path):
        report, config = self._run(tmp_path)
        with pytest.raises(ValidationError, match="bootstrap"):
            emit_plot_data(report, "mse_by_area", config.output_dir)

    def test_plot_data_mse(self, tmp_path):
        report, config = self._run(
            tmp_path,
            bootstrap_replicates="4",
            bootstrap_gibbs_iterations="200",
            bootstrap_gibbs_burn="50",
        )
        path = emit_plot_data(report, "mse_by_area", config.output_dir)
        rows = path.read_text().splitlines()
        assert rows[0] == "label,mse,bias"
        assert len(rows) == 9
        assert all(float(r.split(",")[1]) >= 0 for r in rows[1:])
