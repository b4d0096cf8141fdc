"""Task service dispatching a RunConfig task to the numeric modules."""

import logging
from dataclasses import dataclass, field

import numpy as np

from mfcontrol.analysis import MeanFieldSystem, analyze_system
from mfcontrol.cli_config import (
    AnalyzeTask,
    ExactctrlTask,
    ReproTask,
    RunConfig,
    SimulateTask,
    SynthesizeTask,
    WbsdeTask,
)
from mfcontrol.config import Settings
from mfcontrol.controls import ControlSignal
from mfcontrol.core import GaussianLaw
from mfcontrol.exactctrl import HermiteTarget, assemble_exact_control, verify_exact_pathwise
from mfcontrol.moments import integrate_moments
from mfcontrol.services.report_service import ReportService
from mfcontrol.services.repro_service import RESULT_COLUMNS, ReproService
from mfcontrol.simulate import empirical_compare, simulate_particles
from mfcontrol.synthesis import steer_to_gaussian
from mfcontrol.wbsde import Wbsde1DParams, backward_reachable_set_1d

EXIT_OK = 0
EXIT_FAILURE = 1
EXIT_NEGATIVE_VERDICT = 2


@dataclass
class TaskOutcome:
    """Exit status plus the lines echoed to the terminal."""

    exit_code: int = EXIT_OK
    lines: list[str] = field(default_factory=list)


class TaskService:
    """Service running one configured task and writing its artifacts."""

    def __init__(
        self,
        settings: Settings,
        report_service: ReportService,
        repro_service: ReproService,
    ):
        """Initialize the task service.

        Args:
            settings: Process settings (tolerances, memory guards)
            report_service: Writer for the run's artifacts
            repro_service: Catalog runner used by repro tasks
        """
        self.settings = settings
        self.report_service = report_service
        self.repro_service = repro_service
        self.logger = logging.getLogger(__name__)

    def run(self, config: RunConfig, seed: int, n_workers: int, strict: bool) -> TaskOutcome:
        task = config.task
        self.logger.info(f"Running task '{task.kind}' with seed {seed}")
        if isinstance(task, AnalyzeTask):
            return self._analyze(self._system(config), task, strict)
        if isinstance(task, SynthesizeTask):
            return self._synthesize(self._system(config), task)
        if isinstance(task, ExactctrlTask):
            return self._exactctrl(self._system(config), task, seed)
        if isinstance(task, SimulateTask):
            return self._simulate(self._system(config), task, seed, n_workers)
        if isinstance(task, WbsdeTask):
            return self._wbsde(task)
        return self._repro(task, seed, n_workers)

    @staticmethod
    def _system(config: RunConfig) -> MeanFieldSystem:
        assert config.system is not None  # enforced by RunConfig
        return config.system

    def _analyze(self, sys: MeanFieldSystem, task: AnalyzeTask, strict: bool) -> TaskOutcome:
        report = analyze_system(sys, settings=self.settings)
        self.report_service.write_json("report.json", {"report": report.model_dump(mode="json")})
        verdict = getattr(report, task.strict_verdict)
        outcome = TaskOutcome(
            lines=[
                f"l2_terminal_controllable: {report.l2_terminal_controllable}",
                f"etcnl_necessary: {report.etcnl_necessary}",
                f"etcnl_sufficient: {report.etcnl_sufficient}",
                f"assumption_gramian_holds: {report.assumption_gramian_holds}",
            ]
        )
        if strict and verdict is False:
            self.logger.warning(f"Verdict {task.strict_verdict} is negative")
            outcome.exit_code = EXIT_NEGATIVE_VERDICT
        return outcome

    def _synthesize(self, sys: MeanFieldSystem, task: SynthesizeTask) -> TaskOutcome:
        target = GaussianLaw(mean=task.target.mean, covariance=task.target.covariance)
        plan = steer_to_gaussian(sys, target, grid_points=task.grid_points, settings=self.settings)
        self.report_service.write_json(
            "control.json",
            {
                "control": plan.control.model_dump(mode="json"),
                "initial_state": plan.initial_state.tolist(),
                "samples": plan.control.sampled_table(task.table_points),
            },
        )
        self.report_service.write_json(
            "report.json",
            {
                "mean_residual": plan.mean_residual,
                "covariance_residual": plan.covariance_residual,
                "predicted_mean": plan.predicted_mean.tolist(),
                "predicted_covariance": plan.predicted_covariance.tolist(),
            },
        )
        path = integrate_moments(
            sys, GaussianLaw.point(plan.initial_state), plan.control, task.grid_points,
            settings=self.settings,
        )
        self.report_service.write_table("moments", path.csv_header(), path.to_csv_rows())
        return TaskOutcome(
            lines=[
                f"mean residual: {plan.mean_residual:.3e}",
                f"covariance residual: {plan.covariance_residual:.3e}",
            ]
        )

    def _exactctrl(self, sys: MeanFieldSystem, task: ExactctrlTask, seed: int) -> TaskOutcome:
        target = HermiteTarget(coefficients=task.coefficients, T_prime=task.T_prime)
        grid = np.linspace(0.0, sys.T, task.n_steps + 1)
        control, plan = assemble_exact_control(
            sys, task.x0, target, grid, task.n_paths, seed=seed, settings=self.settings
        )
        exactness = verify_exact_pathwise(
            sys, task.x0, control, target, grid, task.n_paths, seed,
            fit_order=task.fit_order, settings=self.settings,
        )
        self.report_service.write_json(
            "report.json",
            {"plan": plan.model_dump(mode="json"), "exactness": exactness.model_dump(mode="json")},
        )
        self.report_service.write_json("control.json", {"mean_control": plan.u0.model_dump(mode="json")})

        mean = control.empirical_mean()
        spread = control.values.std(axis=0)
        columns = (
            ["t"]
            + [f"mean_u_{i + 1}" for i in range(control.dim)]
            + [f"std_u_{i + 1}" for i in range(control.dim)]
        )
        rows = [
            [float(t), *map(float, mean[j]), *map(float, spread[j])]
            for j, t in enumerate(control.grid[:-1])
        ]
        self.report_service.write_table("exact_control", columns, rows)
        order = "n/a" if exactness.fitted_order is None else f"{exactness.fitted_order:.3f}"
        return TaskOutcome(
            lines=[
                f"Y2(0) residual: {plan.y2_identity_residual:.3e}",
                f"terminal RMS error: {exactness.rms_error:.3e} "
                f"({exactness.relative_rms:.2%} of target RMS)",
                f"fitted order: {order}",
            ]
        )

    def _simulate(
        self, sys: MeanFieldSystem, task: SimulateTask, seed: int, n_workers: int
    ) -> TaskOutcome:
        if task.steer_to is not None:
            target = GaussianLaw(mean=task.steer_to.mean, covariance=task.steer_to.covariance)
            plan = steer_to_gaussian(sys, target, settings=self.settings)
            initial = GaussianLaw.point(plan.initial_state)
            control = plan.control
        else:
            assert task.x0 is not None  # enforced by SimulateTask
            covariance = task.x0_covariance or np.zeros((sys.d, sys.d))
            initial = GaussianLaw(mean=task.x0, covariance=covariance)
            control = (
                ControlSignal.piecewise_constant(task.control_values, sys.T)
                if task.control_values
                else ControlSignal.zero(sys.n, sys.T)
            )

        ensemble = simulate_particles(
            sys, initial, control, K=task.n_steps, N=task.n_particles,
            seed=seed, n_workers=n_workers, settings=self.settings,
        )
        predicted = integrate_moments(sys, initial, control, 2, settings=self.settings)
        comparison = empirical_compare(ensemble, sys.T, predicted.terminal_law())
        self.report_service.write_table(
            "ensemble_summary", ensemble.summary_header(), ensemble.summary_rows()
        )
        self.report_service.write_json(
            "report.json",
            {
                "comparison": comparison.model_dump(mode="json"),
                "predicted_mean": predicted.terminal_mean.tolist(),
                "predicted_covariance": predicted.terminal_covariance.tolist(),
                "recorded_times": ensemble.recorded_times.tolist(),
            },
        )
        return TaskOutcome(
            lines=[
                f"mean error: {comparison.mean_error:.3e}",
                f"covariance error: {comparison.cov_error_frobenius:.3e}",
                f"W2 to predicted law: {comparison.w2_gaussian:.3e}",
            ]
        )

    def _wbsde(self, task: WbsdeTask) -> TaskOutcome:
        params = Wbsde1DParams(
            a1=task.a1,
            a2=task.a2,
            b=task.b,
            T=task.T,
            mu=GaussianLaw.scalar(task.mu_mean, task.mu_variance),
        )
        reach = backward_reachable_set_1d(params, task.s)
        sigma_grid = np.linspace(0.0, reach.sigma_max, task.sigma_points)
        rows = reach.boundary_rows(sigma_grid)
        self.report_service.write_table("boundary", ["sigma", "y_min", "y_max"], rows)
        self.report_service.write_json("report.json", {"reachable_set": reach.model_dump(mode="json")})
        return TaskOutcome(
            lines=[
                f"sigma_max: {float(reach.sigma_max)!r}",
                f"y range at sigma=0: [{float(rows[0][1])!r}, {float(rows[0][2])!r}]",
            ]
        )

    def _repro(self, task: ReproTask, seed: int, n_workers: int) -> TaskOutcome:
        results = self.repro_service.run(task.case, seed, n_workers)
        self.report_service.write_table("repro", RESULT_COLUMNS, [r.row() for r in results])
        lines = ["=" * 60, f"{'case':<22} {'quantity':<22} {'status':>8}", "=" * 60]
        for r in results:
            lines.append(f"{r.case_id:<22} {r.quantity:<22} {'PASS' if r.passed else 'FAIL':>8}")
        lines.append("=" * 60)
        failed = sum(not r.passed for r in results)
        lines.append(f"{len(results) - failed}/{len(results)} checks passed")
        return TaskOutcome(
            exit_code=EXIT_FAILURE if failed else EXIT_OK,
            lines=lines,
        )
