"""Metric and reporting tests. Constant models make every metric a short
hand computation; identity normalization stats keep the numbers raw."""

import numpy as np
import pytest

from cyclereg.data import Dataset, NormStats
from cyclereg.evaluation import (
    MetricsReport,
    REPORT_COLUMNS,
    aggregate_reports,
    config_digest,
    cycle_reconstruction_error,
    evaluate_pair,
    improvement_vs_baseline,
    mae,
    relative_error_ratio,
    reports_to_csv,
    run_experiment,
    run_single,
)
from cyclereg.models import ModelPair, build_mlp, mlp_spec
from cyclereg.training import TrainingPlan, TrainResult


def const_model(values, dim_in=1):
    values = np.atleast_1d(np.asarray(values, dtype=float))
    m = build_mlp(mlp_spec([dim_in, values.size], seed=0, batchnorm=False))
    m.params["layer0.w"][:] = 0.0
    m.params["layer0.b"][:] = values
    return m


def identity_stats(dim_x, dim_y):
    return NormStats(np.zeros(dim_x), np.ones(dim_x),
                     np.zeros(dim_y), np.ones(dim_y))


def tiny_dataset(task, x_test, y_test):
    x_test = np.asarray(x_test, dtype=float)
    y_test = np.asarray(y_test, dtype=float)
    empty_x = np.zeros((0, x_test.shape[1]))
    empty_y = np.zeros((0, y_test.shape[1]))
    return Dataset(task=task, seed=0, dim_x=x_test.shape[1],
                   dim_y=y_test.shape[1],
                   stats=identity_stats(x_test.shape[1], y_test.shape[1]),
                   x_train=empty_x, y_train=empty_y,
                   x_val=empty_x, y_val=empty_y,
                   x_test=x_test, y_test=y_test)


class TestScalarMetrics:
    def test_mae_value(self):
        assert mae([[0.0], [2.0]], [[1.0], [1.0]]) == 1.0

    def test_mae_shape_mismatch(self):
        with pytest.raises(ValueError, match="shapes differ"):
            mae(np.zeros((2, 1)), np.zeros((3, 1)))

    def test_relative_error_ratio(self):
        assert relative_error_ratio(0.5, 0.25) == 2.0
        assert relative_error_ratio(0.5, 0.0) is None

    def test_improvement(self):
        assert improvement_vs_baseline(0.3, 0.6) == pytest.approx(0.5)
        assert improvement_vs_baseline(0.3, 0.0) is None


class TestEvaluatePair:
    # phi(x) = 0.5, psi(y) = 0.25 on x_test = [0, 2], y_test = [1, 1]
    def setup_method(self):
        self.pair = ModelPair(const_model(0.5), const_model(0.25))
        self.ds = tiny_dataset("x_squared", [[0.0], [2.0]], [[1.0], [1.0]])

    def test_paired_strategy_values(self):
        rep = evaluate_pair(self.pair, self.ds, "baseline")
        assert rep.forward_direct == pytest.approx(0.5, abs=1e-15)
        assert rep.forward_error == rep.forward_direct
        assert rep.backward_direct == pytest.approx(1.0, abs=1e-15)
        # phi(psi(y)) = 0.5 so the cycle error is |1 - 0.5|
        assert rep.backward_error == pytest.approx(0.5, abs=1e-15)
        # generator check: 0.25^2 = 0.0625, |1 - 0.0625|
        assert rep.backward_solution == pytest.approx(0.9375, abs=1e-15)

    def test_jcm_forward_is_input_reconstruction(self):
        rep = evaluate_pair(self.pair, self.ds, "jcm")
        # psi(phi(x)) = 0.25 against x = [0, 2]
        assert rep.forward_error == pytest.approx(1.0, abs=1e-15)
        assert rep.forward_direct == pytest.approx(0.5, abs=1e-15)

    def test_cycle_reconstruction_helper_agrees(self):
        rep = evaluate_pair(self.pair, self.ds, "ucm")
        assert cycle_reconstruction_error(self.pair, self.ds.y_test) == \
            pytest.approx(rep.backward_error, abs=1e-15)

    def test_unknown_generator_gives_no_solution_error(self):
        ds = tiny_dataset("csv", [[0.0], [2.0]], [[1.0], [1.0]])
        rep = evaluate_pair(self.pair, ds, "baseline")
        assert rep.backward_solution is None

    def test_solution_error_drops_undefined_rows(self):
        # spring with a proposed negative mass: sqrt of a negative ratio,
        # every row lands outside the generator domain
        pair = ModelPair(const_model(0.5, dim_in=2),
                         const_model([1.0, -1.0], dim_in=1))
        ds = tiny_dataset("spring", [[1.0, 1.0]], [[0.2]])
        rep = evaluate_pair(pair, ds, "baseline")
        assert rep.backward_solution is None
        assert rep.backward_error is not None

    def test_diverged_result_keeps_metrics_empty(self):
        res = TrainResult("diverged", [], (0, 0))
        rep = evaluate_pair(self.pair, self.ds, "ucm", res, seed=7)
        assert rep.status == "diverged"
        assert rep.seed == 7
        assert rep.forward_error is None
        assert rep.backward_error is None
        assert rep.final_loss_total is None


class TestAggregation:
    def make(self, seed, fwd, bwd, status="ok"):
        return MetricsReport("sin", "ucm", seed, status, 5,
                             forward_error=fwd, backward_error=bwd)

    def test_median_min_max_over_converged(self):
        reps = [self.make(0, 0.1, 0.4), self.make(1, 0.2, 0.2),
                self.make(2, 0.4, 0.1),
                self.make(3, None, None, status="diverged")]
        agg = aggregate_reports(reps)
        assert agg["n_runs"] == 4
        assert agg["n_converged"] == 3
        assert agg["convergence_rate"] == pytest.approx(0.75)
        assert agg["forward_error"]["median"] == pytest.approx(0.2)
        assert agg["forward_error"]["min"] == pytest.approx(0.1)
        assert agg["forward_error"]["max"] == pytest.approx(0.4)

    def test_no_converged_runs(self):
        agg = aggregate_reports([self.make(0, None, None, status="diverged")])
        assert agg["convergence_rate"] == 0.0
        assert agg["forward_error"] is None


class TestEmission:
    def test_csv_columns_and_empty_cells(self, tmp_path):
        reps = [MetricsReport("sin", "ucm", 0, "ok", 3, forward_error=0.125,
                              backward_error=0.5),
                MetricsReport("sin", "ucm", 1, "diverged", 1)]
        path = tmp_path / "reports.csv"
        reports_to_csv(path, reps)
        lines = path.read_text().strip().split("\n")
        assert lines[0] == ",".join(REPORT_COLUMNS)
        first = dict(zip(REPORT_COLUMNS, lines[1].split(",")))
        assert float(first["forward_error"]) == 0.125
        second = dict(zip(REPORT_COLUMNS, lines[2].split(",")))
        assert second["status"] == "diverged"
        assert second["forward_error"] == ""

    def test_config_digest_is_order_insensitive(self):
        a = config_digest({"task": "sin", "n": 100, "hidden": (8, 8)})
        b = config_digest({"hidden": [8, 8], "n": 100, "task": "sin"})
        assert a == b
        assert config_digest({"task": "sin", "n": 101}) != a


class TestOrchestration:
    PLAN = TrainingPlan(strategy="baseline", epochs=2, batch_fraction=0.25)

    def test_run_single_populates_report(self):
        out = run_single("sin", 60, self.PLAN, hidden=(8,))
        rep = out.report
        assert rep.status == "ok"
        assert rep.epochs_run == 2
        assert rep.task == "sin" and rep.strategy == "baseline"
        for f in ("forward_error", "backward_error", "forward_direct",
                  "backward_direct", "backward_solution", "final_loss_total"):
            assert isinstance(getattr(rep, f), float), f
        assert rep.wall_ms_total > 0
        assert not out.dataset.decoupled

    def test_jcm_decouples_by_default(self):
        plan = TrainingPlan(strategy="jcm", epochs=1, batch_fraction=0.25)
        out = run_single("sin", 60, plan, hidden=(8,))
        assert out.dataset.decoupled

    def test_run_experiment_spans_seeds(self):
        reports, agg = run_experiment("sin", 60, self.PLAN, seeds=[0, 1],
                                      hidden=(8,))
        assert [r.seed for r in reports] == [0, 1]
        assert agg["n_runs"] == 2
        # different seeds draw different data and inits
        assert reports[0].forward_error != reports[1].forward_error
