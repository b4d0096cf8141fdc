"""Unit tests for the particle simulator."""

import numpy as np
import pytest

from mfcontrol.analysis import MeanFieldSystem
from mfcontrol.config import Settings
from mfcontrol.controls import ControlSignal
from mfcontrol.core import GaussianLaw
from mfcontrol.errors import CapacityError, InvalidInputError
from mfcontrol.moments import integrate_moments
from mfcontrol.simulate import (
    INITIAL_STATE_STREAM,
    brownian_increments,
    coarsen_increments,
    empirical_compare,
    euler_maruyama,
    simulate_particles,
    standard_normals,
)


class TestRandomStreams:
    """Test suite for the counter-based random streams."""

    def test_rows_depend_only_on_path_index(self) -> None:
        """A block starting at path 2 reproduces rows 2.. of the full draw."""
        full = brownian_increments(11, 5, 10, 0.01)
        tail = brownian_increments(11, 3, 10, 0.01, first_path=2)

        np.testing.assert_array_equal(full[2:], tail)

    def test_increment_scale(self) -> None:
        """Increments are sqrt(dt) times standard normals."""
        np.testing.assert_allclose(
            brownian_increments(4, 2, 3, 0.25), 0.5 * standard_normals(4, 2, 3)
        )

    def test_streams_and_seeds_differ(self) -> None:
        """Different streams or seeds give different draws."""
        base = standard_normals(1, 2, 4)

        assert not np.array_equal(base, standard_normals(1, 2, 4, stream=INITIAL_STATE_STREAM))
        assert not np.array_equal(base, standard_normals(2, 2, 4))

    def test_negative_seed_rejected(self) -> None:
        """Seeds are nonnegative."""
        with pytest.raises(InvalidInputError):
            standard_normals(-1, 1, 1)

    def test_coarsen_sums_groups(self) -> None:
        """Coarsening adds consecutive increments."""
        dW = np.arange(8.0).reshape(2, 4)

        np.testing.assert_array_equal(coarsen_increments(dW, 2), [[1.0, 5.0], [9.0, 13.0]])

    def test_coarsen_needs_divisible_steps(self) -> None:
        """The step count must be a multiple of the factor."""
        with pytest.raises(InvalidInputError):
            coarsen_increments(np.zeros((1, 5)), 2)


class TestEulerMaruyama:
    """Test suite for the Euler-Maruyama kernel."""

    def test_deterministic_decay(self) -> None:
        """Without noise the scheme is (1 - dt)^K."""
        sys = MeanFieldSystem(d=1, n=1, T=1.0, A1=[[-1.0]])
        grid = np.linspace(0.0, 1.0, 5)

        states = euler_maruyama(
            sys,
            np.ones((1, 1)),
            grid,
            np.zeros((1, 4)),
            np.zeros((4, 1)),
            np.zeros((5, 1)),
            record=[0, 2, 4],
        )

        assert states.shape == (1, 3, 1)
        np.testing.assert_allclose(states[0, :, 0], [1.0, 0.75**2, 0.75**4])

    def test_mean_control_enters_through_both_loadings(self) -> None:
        """u = E[u] acts through B1 + B2 and D1 + D2 when no paths are given."""
        sys = MeanFieldSystem(
            d=1, n=1, T=1.0, B1=[[1.0]], B2=[[2.0]], D1=[[0.5]], D2=[[0.5]]
        )
        grid = np.array([0.0, 1.0])
        dW = np.array([[2.0]])

        states = euler_maruyama(
            sys, np.zeros((1, 1)), grid, dW, np.ones((1, 1)), np.zeros((2, 1))
        )

        assert states[0, -1, 0] == pytest.approx(3.0 + 2.0)


class TestSimulateParticles:
    """Test suite for simulate_particles."""

    def test_independent_of_threads_and_blocks(self, default_settings: Settings) -> None:
        """Ensembles agree bit for bit across block sizes and thread counts."""
        sys = MeanFieldSystem(
            d=1, n=1, T=1.0, A1=[[-0.5]], A2=[[0.3]], B2=[[1.0]], C=[[0.2]], D2=[[1.0]]
        )
        control = ControlSignal.constant([1.0], 1.0)
        law = GaussianLaw.scalar(1.0, 0.5)
        small_blocks = Settings(_env_file=None, particle_block_size=7)

        single = simulate_particles(
            sys, law, control, K=10, N=50, seed=5, n_workers=1,
            settings=default_settings,
        )
        threaded = simulate_particles(
            sys, law, control, K=10, N=50, seed=5, n_workers=3,
            settings=small_blocks,
        )

        np.testing.assert_array_equal(single.states, threaded.states)
        assert single.recorded_times.size == 11

    def test_terminal_law_matches_moments(
        self, scalar_noise_system: MeanFieldSystem, default_settings: Settings
    ) -> None:
        """x0 + 2 W(T) has mean x0 and variance 4."""
        ensemble = simulate_particles(
            scalar_noise_system,
            [1.0],
            ControlSignal.constant([2.0], 1.0),
            K=50,
            N=20_000,
            seed=1,
            settings=default_settings,
        )

        comparison = empirical_compare(ensemble, 1.0, GaussianLaw.scalar(1.0, 4.0))

        assert comparison.n_samples == 20_000
        assert comparison.mean_error <= 0.07
        assert comparison.cov_error_frobenius <= 0.2
        assert abs(comparison.fourth_moment_excess[0]) <= 0.15

    def test_weak_error_shrinks_as_step_halves(self, default_settings: Settings) -> None:
        """|empirical Var(T) - ODE Var(T)| decreases over K = 10, 20, 40."""
        sys = MeanFieldSystem(d=1, n=1, T=1.0, A1=[[1.0]], D2=[[1.0]])
        law = GaussianLaw.scalar(0.0, 1.0)
        control = ControlSignal.constant([1.0], 1.0)
        exact = integrate_moments(sys, law, control, 2, settings=default_settings)
        target = exact.terminal_law()

        errors = [
            empirical_compare(
                simulate_particles(
                    sys, law, control, K=K, N=100_000, seed=3, settings=default_settings
                ),
                1.0,
                target,
            ).cov_error_frobenius
            for K in (10, 20, 40)
        ]

        assert target.variance == pytest.approx(np.exp(2.0) + 0.5 * (np.exp(2.0) - 1.0))
        assert errors[0] > errors[1] > errors[2]
        assert errors[0] > 0.5

    def test_snapshots_under_memory_guard(self, scalar_noise_system: MeanFieldSystem) -> None:
        """A tight guard keeps only strided snapshots."""
        tight = Settings(_env_file=None, max_path_floats=1000, max_snapshots=3)
        ensemble = simulate_particles(
            scalar_noise_system, [0.0], ControlSignal.zero(1, 1.0), K=10, N=100,
            seed=0, settings=tight,
        )

        np.testing.assert_allclose(ensemble.recorded_times, [0.0, 0.5, 1.0])
        assert ensemble.states_at(0.5).shape == (100, 1)
        with pytest.raises(InvalidInputError, match="not recorded"):
            ensemble.states_at(0.3)
        with pytest.raises(InvalidInputError, match="not on the simulation grid"):
            ensemble.states_at(0.33)

    def test_capacity_exceeded(self, scalar_noise_system: MeanFieldSystem) -> None:
        """Even the snapshots may not fit."""
        tiny = Settings(_env_file=None, max_path_floats=100, max_snapshots=3)

        with pytest.raises(CapacityError):
            simulate_particles(
                scalar_noise_system, [0.0], ControlSignal.zero(1, 1.0), K=10, N=100,
                seed=0, settings=tiny,
            )

    @pytest.mark.parametrize("K,N", [(0, 10), (10, 1)])
    def test_invalid_sizes(
        self, scalar_noise_system: MeanFieldSystem, K: int, N: int
    ) -> None:
        """At least one step and two particles."""
        with pytest.raises(InvalidInputError):
            simulate_particles(scalar_noise_system, [0.0], ControlSignal.zero(1, 1.0), K=K, N=N)

    def test_summary_and_raw_rows(
        self, scalar_noise_system: MeanFieldSystem, default_settings: Settings
    ) -> None:
        """Summary has one row per recorded time; raw dumps respect the limit."""
        ensemble = simulate_particles(
            scalar_noise_system, [0.0], ControlSignal.zero(1, 1.0), K=4, N=3,
            seed=0, settings=default_settings,
        )

        assert ensemble.summary_header() == ["t", "mean_1", "cov_11"]
        rows = ensemble.summary_rows()
        assert len(rows) == 5
        assert rows[-1][1:] == [0.0, 0.0]
        assert len(ensemble.raw_rows(max_floats=100)) == 15
        with pytest.raises(CapacityError):
            ensemble.raw_rows(max_floats=10)

    def test_degenerate_ensemble_comparison(
        self, scalar_noise_system: MeanFieldSystem, default_settings: Settings
    ) -> None:
        """Identical particles: zero covariance and zero excess kurtosis."""
        ensemble = simulate_particles(
            scalar_noise_system, [2.0], ControlSignal.zero(1, 1.0), K=4, N=10,
            seed=0, settings=default_settings,
        )

        comparison = empirical_compare(ensemble, 1.0, GaussianLaw.point([2.0]))

        assert comparison.w2_gaussian == 0.0
        assert comparison.fourth_moment_excess == [0.0]
        with pytest.raises(InvalidInputError):
            empirical_compare(ensemble, 1.0, GaussianLaw.point([2.0, 0.0]))
