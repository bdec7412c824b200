import numpy as np
import pytest

from src.core.exceptions import InvalidInputError
from src.evaluation import monitors
from src.models.schemas import CheckStatus
from src.optim import costa
from src.optim.costa import RunTrace


@pytest.fixture
def exterior_trace(exterior_ball, run_config):
    return costa.run_costa(exterior_ball, run_config(iterations=30, deterministic=True))


class TestFeasibilityMonitor:

    def test_feasible_run(self, exterior_ball, exterior_trace):
        report = monitors.feasibility_monitor(exterior_ball, exterior_trace, 1e-6)
        assert report.status == CheckStatus.PASS
        assert report.violations == 0

    def test_infeasible_iterate(self, exterior_ball, run_config):
        trace = RunTrace(method="costa", config=run_config(), iterates=[np.array([0.0, 1.0]), np.array([0.5, 0.0])])
        report = monitors.feasibility_monitor(exterior_ball, trace, 1e-6)
        assert report.status == CheckStatus.FAIL
        assert report.violations == 1
        assert report.value == pytest.approx(0.75)


class TestDescentMonitor:

    def test_deterministic_quadratic(self, noiseless_quadratic, run_config):
        trace = costa.run_costa(noiseless_quadratic, run_config(iterations=50, deterministic=True))
        report = monitors.descent_monitor(trace, L=1.0)
        assert report.status == CheckStatus.PASS

    def test_stochastic_run_is_skipped(self, quadratic, run_config):
        trace = costa.run_costa(quadratic, run_config(iterations=3))
        assert monitors.descent_monitor(trace).status == CheckStatus.SKIPPED

    def test_increase_is_flagged(self, run_config, make_record):
        trace = RunTrace(
            method="costa", config=run_config(deterministic=True), initial_objective=0.0,
            records=[make_record(1, tracking_err=0.0, objective_est=1.0)],
        )
        report = monitors.descent_monitor(trace)
        assert report.status == CheckStatus.FAIL
        assert report.value == pytest.approx(1.0)

    def test_modulus_condition_skips_steps(self, run_config, make_record):
        trace = RunTrace(
            method="costa", config=run_config(deterministic=True), initial_objective=0.0,
            records=[make_record(1, tracking_err=0.0, objective_est=1.0)],
        )
        report = monitors.descent_monitor(trace, L=100.0)
        assert report.status == CheckStatus.SKIPPED
        assert "1 skipped" in report.message


class TestDualBoundMonitor:

    def test_exterior_run(self, exterior_ball, exterior_trace):
        report = monitors.dual_bound_monitor(exterior_ball, exterior_trace, L=2.0, omega=0.5)
        assert report.status in (CheckStatus.PASS, CheckStatus.FAIL)
        assert report.threshold > 0
        if report.status == CheckStatus.FAIL:
            assert "estimation failure" in report.message

    def test_needs_L(self, exterior_ball, exterior_trace):
        report = monitors.dual_bound_monitor(exterior_ball, exterior_trace, L=None)
        assert report.status == CheckStatus.SKIPPED
        assert "metadata required" in report.message

    def test_unconstrained_run(self, noiseless_quadratic, run_config):
        trace = costa.run_costa(noiseless_quadratic, run_config(iterations=5, deterministic=True))
        report = monitors.dual_bound_monitor(noiseless_quadratic, trace, L=1.0)
        assert report.status == CheckStatus.SKIPPED


class TestTrackingMonitor:

    def test_dyadic_windows(self):
        means = monitors.dyadic_window_means([[4.0, 2.0, 2.0, 1.0, 1.0, 1.0, 1.0]])
        assert means == pytest.approx([4.0, 2.0, 1.0])

    def test_seed_average(self):
        means = monitors.dyadic_window_means([[4.0, 2.0, 2.0], [2.0, None, 0.0]])
        assert means == pytest.approx([3.0, 1.5])

    def test_no_errors(self):
        with pytest.raises(InvalidInputError):
            monitors.dyadic_window_means([[None, None]])

    def test_shrinking_errors_pass(self, run_config, make_record):
        traces = [
            RunTrace(method="costa", config=run_config(seed=s),
                     records=[make_record(t, tracking_err=1.0 / t) for t in range(1, 17)])
            for s in range(3)
        ]
        assert monitors.tracking_monitor(traces).status == CheckStatus.PASS

    def test_growing_errors_fail(self, run_config, make_record):
        trace = RunTrace(method="costa", config=run_config(),
                         records=[make_record(t, tracking_err=float(t)) for t in range(1, 9)])
        report = monitors.tracking_monitor([trace])
        assert report.status == CheckStatus.FAIL
        assert report.violations == 3

    def test_untracked_runs_are_skipped(self, run_config, make_record):
        trace = RunTrace(method="costa", config=run_config(), records=[make_record(1)])
        assert monitors.tracking_monitor([trace]).status == CheckStatus.SKIPPED


class TestWarmStartMonitor:

    def test_short_trace(self, exterior_ball, run_config):
        trace = costa.run_costa(exterior_ball, run_config(iterations=1, deterministic=True))
        assert monitors.warm_start_monitor(exterior_ball, trace).status == CheckStatus.SKIPPED

    def test_compares_inner_iterations(self, exterior_ball, exterior_trace):
        report = monitors.warm_start_monitor(exterior_ball, exterior_trace)
        assert report.status in (CheckStatus.PASS, CheckStatus.FAIL)
        assert "warm" in report.message


class TestRunMonitors:

    def test_exact_oracles_add_tracking(self, exterior_ball, exterior_trace):
        reports = monitors.run_monitors(exterior_ball, exterior_trace, L=2.0)
        assert [r.name for r in reports] == ["feasibility", "descent", "dual_bound", "warm_start", "tracking"]
        assert reports[-1].value <= 1e-9

    def test_held_out_samples_add_tracking(self, quadratic, run_config):
        trace = costa.run_costa(quadratic, run_config(iterations=16, tracking_samples=8))
        reports = monitors.run_monitors(quadratic, trace, L=1.0)
        assert reports[-1].name == "tracking"
        assert reports[-1].status != CheckStatus.SKIPPED

    def test_no_tracking_without_estimates(self, quadratic, run_config):
        trace = costa.run_costa(quadratic, run_config(iterations=8))
        names = [r.name for r in monitors.run_monitors(quadratic, trace, L=1.0)]
        assert "tracking" not in names
