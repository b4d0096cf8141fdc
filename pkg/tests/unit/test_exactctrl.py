"""Unit tests for the exact pathwise control construction."""

import numpy as np
import pytest
from pydantic import ValidationError

from mfcontrol.analysis import MeanFieldSystem
from mfcontrol.config import Settings
from mfcontrol.errors import (
    CapacityError,
    InvalidInputError,
    SynthesisUnavailableError,
    UnsupportedDegreeError,
)
from mfcontrol.exactctrl import (
    HermiteTarget,
    assemble_exact_control,
    bsde_residual,
    convergence_ladder,
    hermite_polynomial,
    representation_control,
    solve_y1_hermite,
    split_mean_control,
    verify_exact_pathwise,
)
from mfcontrol.simulate import brownian_increments


@pytest.fixture
def actuated_system() -> MeanFieldSystem:
    """Scalar system driven only through B1."""
    return MeanFieldSystem(d=1, n=1, T=1.0, B1=[[1.0]])


class TestHermitePolynomial:
    """Tests for the time-space Hermite recurrence."""

    def test_low_degrees(self) -> None:
        """Test H2 = x^2 - t and H3 = x^3 - 3tx."""
        x = np.array([-1.5, 0.0, 0.7, 2.0])
        t = 0.4

        np.testing.assert_allclose(hermite_polynomial(0, x, t), np.ones(4))
        np.testing.assert_allclose(hermite_polynomial(1, x, t), x)
        np.testing.assert_allclose(hermite_polynomial(2, x, t), x**2 - t)
        np.testing.assert_allclose(hermite_polynomial(3, x, t), x**3 - 3 * t * x)

    def test_negative_degree_rejected(self) -> None:
        """Test that a negative degree raises."""
        with pytest.raises(InvalidInputError):
            hermite_polynomial(-1, [0.0], 1.0)


class TestHermiteTarget:
    """Tests for Hermite target construction and evaluation."""

    def test_ragged_rows_are_padded(self) -> None:
        """Test that shorter coefficient rows are padded with zeros."""
        target = HermiteTarget(coefficients=[[1.0], [0.0, 2.0]], T_prime=0.5)

        assert target.coefficients.shape == (2, 2)
        assert target.dim == 2
        assert target.degree == 1
        np.testing.assert_allclose(target.mean, [1.0, 0.0])

    def test_degree_above_six_rejected(self) -> None:
        """Test that degree 7 is unsupported."""
        with pytest.raises(UnsupportedDegreeError):
            HermiteTarget(coefficients=[[0.0] * 8], T_prime=0.5)

    def test_non_positive_horizon_rejected(self) -> None:
        """Test that T' must be positive."""
        with pytest.raises(ValidationError):
            HermiteTarget(coefficients=[[1.0, 1.0]], T_prime=0.0)

    def test_evaluate_and_martingale(self) -> None:
        """Test evaluation of 1 + 2 H1 + 3 H2 at W(T') = 1."""
        target = HermiteTarget(coefficients=[[1.0, 2.0, 3.0]], T_prime=0.5)

        np.testing.assert_allclose(target.evaluate([1.0]), [[4.5]])
        np.testing.assert_allclose(target.martingale([1.0], 0.5), [[3.5]])
        np.testing.assert_allclose(target.martingale([0.0], 0.0), [[0.0]])

    def test_martingale_integrand(self) -> None:
        """Test that the integrand is 2 + 6 W before T' and zero after."""
        target = HermiteTarget(coefficients=[[1.0, 2.0, 3.0]], T_prime=0.5)

        np.testing.assert_allclose(target.martingale_integrand([1.0], 0.25), [[8.0]])
        np.testing.assert_allclose(target.martingale_integrand([1.0], 0.5), [[0.0]])

    def test_deterministic_target(self) -> None:
        """Test a degree-0 target."""
        target = HermiteTarget.deterministic([1.0, -2.0], T_prime=0.3)

        assert target.degree == 0
        np.testing.assert_allclose(target.evaluate([0.3, -1.0]), [[1.0, -2.0], [1.0, -2.0]])
        np.testing.assert_allclose(target.martingale_integrand([0.3], 0.1), [[0.0, 0.0]])


class TestFluctuationBsde:
    """Tests for the closed-form fluctuation BSDE."""

    def test_control_noise_rejected(self) -> None:
        """Test that D2 != 0 is outside the exact construction."""
        sys = MeanFieldSystem(d=1, n=1, T=1.0, B1=[[1.0]], D2=[[0.5]])
        target = HermiteTarget(coefficients=[[0.0, 1.0]], T_prime=0.5)

        with pytest.raises(InvalidInputError):
            solve_y1_hermite(sys, target)

    def test_dimension_mismatch_rejected(self, actuated_system: MeanFieldSystem) -> None:
        """Test that the target dimension must match the state."""
        target = HermiteTarget(coefficients=[[0.0, 1.0], [0.0, 1.0]], T_prime=0.5)

        with pytest.raises(InvalidInputError):
            solve_y1_hermite(actuated_system, target)

    def test_fluctuation_has_zero_sample_mean(self) -> None:
        """Test that the mean of Y1 over 10^4 paths stays within 4 standard errors of 0."""
        sys = MeanFieldSystem(d=1, n=1, T=1.0, A1=[[0.5]], B1=[[1.0]])
        target = HermiteTarget(coefficients=[[0.3, 1.0, 0.5, 0.2]], T_prime=0.5)
        pair = solve_y1_hermite(sys, target)
        K, n_paths = 100, 10_000
        W = np.cumsum(brownian_increments(23, n_paths, K, 1.0 / K), axis=1)
        stop = K // 2

        for step in (10, 30, 50, 70, 90):
            t = step / K
            y = pair.y(t, W[:, min(step, stop) - 1])

            assert y.shape == (n_paths, 1)
            assert abs(y.mean()) <= 4.0 * y.std() / np.sqrt(n_paths)

    def test_linear_target_residual_is_first_order(self) -> None:
        """Test that the discrete BSDE residual is O(dt) for a linear target."""
        sys = MeanFieldSystem(d=1, n=1, T=1.0, A1=[[0.5]], B1=[[1.0]])
        target = HermiteTarget(coefficients=[[0.0, 1.0]], T_prime=0.5)
        pair = solve_y1_hermite(sys, target)
        K = 1000
        grid = np.linspace(0.0, 1.0, K + 1)
        dW = brownian_increments(11, 200, K, 1.0 / K)

        residual = bsde_residual(pair, grid, dW)

        assert residual.shape == (200, 1)
        assert np.sqrt(np.mean(residual**2)) <= 5.0 / K

    def test_quadratic_target_residual_is_quadratic_variation_gap(self) -> None:
        """Test that with A1 = 0 the residual equals sum(dW^2) - T'."""
        sys = MeanFieldSystem(d=1, n=1, T=1.0, B1=[[1.0]])
        target = HermiteTarget(coefficients=[[0.0, 0.0, 1.0]], T_prime=0.5)
        pair = solve_y1_hermite(sys, target)
        K = 200
        grid = np.linspace(0.0, 1.0, K + 1)
        dW = brownian_increments(5, 100, K, 1.0 / K)

        residual = bsde_residual(pair, grid, dW)

        expected = np.sum(dW[:, : K // 2] ** 2, axis=1) - 0.5
        np.testing.assert_allclose(residual[:, 0], expected, atol=1e-12)


class TestRepresentationControl:
    """Tests for the representation control v."""

    def test_integrates_to_target(self) -> None:
        """Test that v vanishes before T' and integrates to the target."""
        v = representation_control([1.0, 2.0], T_prime=0.5, T=1.0, grid_spec=11)

        assert v.values.shape == (2, 10, 1)
        np.testing.assert_allclose(v.values[:, :5], 0.0)
        np.testing.assert_allclose(v.values[:, 5:, 0], [[2.0] * 5, [4.0] * 5])
        np.testing.assert_allclose(v.integral(), [[1.0], [2.0]])

    def test_horizon_order_checked(self) -> None:
        """Test that T' must be strictly before T."""
        with pytest.raises(InvalidInputError):
            representation_control([1.0], T_prime=1.0, T=1.0, grid_spec=11)

    def test_misaligned_horizon_rejected(self) -> None:
        """Test that T' off the grid raises."""
        with pytest.raises(InvalidInputError):
            representation_control([1.0], T_prime=0.55, T=1.0, grid_spec=11)


class TestSplitMeanControl:
    """Tests for splitting v into fluctuation and mean parts."""

    def test_integral_properties(self) -> None:
        """Test that fluctuations come from v and the mean part hits E[xi]."""
        v = representation_control([1.0, 3.0], T_prime=0.5, T=1.0, grid_spec=11)

        u = split_mean_control([[1.0]], [[1.0]], v, [4.0], T=1.0)

        assert u.mean_signal is not None
        np.testing.assert_allclose(u.mean_signal.evaluate(0.3), [2.0])
        np.testing.assert_allclose(u.integral(), [[1.0], [3.0]])

    def test_rank_deficient_b1_rejected(self) -> None:
        """Test that B1 without full row rank raises."""
        v = representation_control([1.0], T_prime=0.5, T=1.0, grid_spec=11)

        with pytest.raises(SynthesisUnavailableError):
            split_mean_control([[0.0]], [[1.0]], v, [0.0], T=1.0)


class TestAssembleExactControl:
    """Tests for assembling and verifying the exact control."""

    def test_linear_target_is_exact(self, actuated_system: MeanFieldSystem) -> None:
        """Test that a linear target is hit to machine precision."""
        target = HermiteTarget(coefficients=[[0.5, 1.0]], T_prime=0.5)

        control, plan = assemble_exact_control(
            actuated_system, [0.2], target, 201, n_paths=50, seed=3
        )
        report = verify_exact_pathwise(
            actuated_system, [0.2], control, target, 201, 50, 3
        )

        assert plan.y2_identity_residual <= 1e-9
        assert plan.seed == 3
        assert control.values.shape == (50, 200, 1)
        assert report.rms_error <= 1e-10
        assert report.coarse_rms_error is not None
        assert report.fitted_order is None

    def test_drift_keeps_error_small(self) -> None:
        """Test a linear target through drift, mean-field and mean-control terms."""
        sys = MeanFieldSystem(
            d=1, n=1, T=1.0, A1=[[0.3]], A2=[[-0.2]], B1=[[1.0]], B2=[[0.5]]
        )
        target = HermiteTarget(coefficients=[[1.0, 1.0]], T_prime=0.5)

        control, plan = assemble_exact_control(sys, [0.0], target, 1001, n_paths=100, seed=9)
        report = verify_exact_pathwise(
            sys, [0.0], control, target, 1001, 100, 9, fit_order=False
        )

        assert plan.y2_identity_residual <= 1e-6
        assert report.relative_rms <= 0.02
        assert report.fitted_order is None

    def test_quadratic_target_converges_at_half_order(
        self, actuated_system: MeanFieldSystem
    ) -> None:
        """Test the quadratic variation error of a degree-2 target."""
        target = HermiteTarget(coefficients=[[0.0, 0.0, 1.0]], T_prime=0.5)

        control, _ = assemble_exact_control(
            actuated_system, [0.0], target, 1001, n_paths=400, seed=21
        )
        report = verify_exact_pathwise(
            actuated_system, [0.0], control, target, 1001, 400, 21
        )

        expected_rms = np.sqrt(2 * 0.5 * 1e-3)
        assert 0.7 * expected_rms <= report.rms_error <= 1.3 * expected_rms
        assert report.fitted_order is not None
        assert 0.25 <= report.fitted_order <= 0.75

    def test_verify_checks_seed_and_mean(self, actuated_system: MeanFieldSystem) -> None:
        """Test that verification rejects a control built for other paths."""
        target = HermiteTarget(coefficients=[[0.0, 1.0]], T_prime=0.5)
        control, _ = assemble_exact_control(
            actuated_system, [0.0], target, 101, n_paths=10, seed=1
        )

        with pytest.raises(InvalidInputError):
            verify_exact_pathwise(actuated_system, [0.0], control, target, 101, 10, 2)
        with pytest.raises(InvalidInputError):
            verify_exact_pathwise(actuated_system, [0.0], control, target, 101, 11, 1)
        with pytest.raises(InvalidInputError):
            verify_exact_pathwise(actuated_system, [0.0], control, target, 201, 10, 1)

    def test_rank_deficient_b1_rejected(self) -> None:
        """Test that a system without B1 actuation has no compensation."""
        sys = MeanFieldSystem(d=1, n=1, T=1.0, B2=[[1.0]])
        target = HermiteTarget(coefficients=[[0.0, 1.0]], T_prime=0.5)

        with pytest.raises(SynthesisUnavailableError):
            assemble_exact_control(sys, [0.0], target, 101, n_paths=10, seed=1)

    def test_late_horizon_rejected(self, actuated_system: MeanFieldSystem) -> None:
        """Test that T' at the horizon raises."""
        target = HermiteTarget(coefficients=[[0.0, 1.0]], T_prime=1.0)

        with pytest.raises(InvalidInputError):
            assemble_exact_control(actuated_system, [0.0], target, 101, n_paths=10, seed=1)

    def test_capacity_guard(self, actuated_system: MeanFieldSystem) -> None:
        """Test that oversize path arrays raise before allocation."""
        target = HermiteTarget(coefficients=[[0.0, 1.0]], T_prime=0.5)
        small = Settings(_env_file=None, max_path_floats=1000)

        with pytest.raises(CapacityError):
            assemble_exact_control(
                actuated_system, [0.0], target, 101, n_paths=100, seed=1, settings=small
            )


class TestConvergenceLadder:
    """Tests for the nested-grid convergence ladder."""

    def test_rungs_and_order(self, actuated_system: MeanFieldSystem) -> None:
        """Test the ladder for a quadratic target."""
        target = HermiteTarget(coefficients=[[0.0, 0.0, 1.0]], T_prime=0.5)

        ladder = convergence_ladder(
            actuated_system, [0.0], target, [0.01, 0.0025, 0.005], n_paths=400, seed=4
        )

        assert ladder.dts == [0.0025, 0.005, 0.01]
        assert len(ladder.rows()) == 3
        assert ladder.rms_errors[0] < ladder.rms_errors[2]
        assert ladder.fitted_order is not None
        assert 0.25 <= ladder.fitted_order <= 0.75

    def test_step_must_divide_horizon(self, actuated_system: MeanFieldSystem) -> None:
        """Test that a step not dividing T raises."""
        target = HermiteTarget(coefficients=[[0.0, 1.0]], T_prime=0.5)

        with pytest.raises(InvalidInputError):
            convergence_ladder(actuated_system, [0.0], target, [0.3], n_paths=10, seed=1)
