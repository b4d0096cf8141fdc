"""Euler-Maruyama particle simulation with deterministic mean-field closure.

E[X(t)] and E[u(t)] in the coefficients are taken from the moment ODEs, so
particles are i.i.d. and can be simulated block by block on a thread pool.

Randomness is counter-based: path i of a (seed, stream) pair draws from a
Philox generator whose counter starts at path index i, so every increment is
a function of (seed, stream, path, step) alone and ensembles are identical for
any block size or thread count.
"""

import logging
from collections.abc import Sequence
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass

import numpy as np
from numpy.typing import ArrayLike, NDArray
from pydantic import BaseModel, ConfigDict
from scipy import stats

from mfcontrol.analysis import MeanFieldSystem
from mfcontrol.config import Settings, get_settings
from mfcontrol.controls import ControlSignal
from mfcontrol.core import FloatArray, GaussianLaw, gaussian_w2, psd_sqrt
from mfcontrol.errors import CapacityError, InvalidInputError
from mfcontrol.moments import mean_path

logger = logging.getLogger(__name__)

BROWNIAN_STREAM = 0
INITIAL_STATE_STREAM = 1
GRID_MATCH_TOL = 1e-12


def _stream_key(seed: int, stream: int) -> NDArray[np.uint64]:
    if seed < 0:
        raise InvalidInputError(f"seed must be nonnegative, got {seed}")
    return np.random.SeedSequence([seed, stream]).generate_state(2, np.uint64)


def standard_normals(
    seed: int, n_paths: int, n_draws: int, stream: int = BROWNIAN_STREAM, first_path: int = 0
) -> FloatArray:
    """(n_paths, n_draws) standard normals; row i depends only on (seed, stream, first_path + i)."""
    key = _stream_key(seed, stream)
    out = np.empty((n_paths, n_draws))
    for i in range(n_paths):
        bit_generator = np.random.Philox(counter=[0, 0, first_path + i, 0], key=key)
        out[i] = np.random.Generator(bit_generator).standard_normal(n_draws)
    return out


def brownian_increments(
    seed: int,
    n_paths: int,
    n_steps: int,
    dt: float,
    stream: int = BROWNIAN_STREAM,
    first_path: int = 0,
) -> FloatArray:
    """Brownian increments on a uniform grid, shape (n_paths, n_steps)."""
    return standard_normals(seed, n_paths, n_steps, stream, first_path) * np.sqrt(dt)


def coarsen_increments(dW: FloatArray, factor: int) -> FloatArray:
    """Sum consecutive groups of factor increments (same paths, coarser grid)."""
    n_paths, n_steps = dW.shape
    if factor < 1 or n_steps % factor:
        raise InvalidInputError(f"{n_steps} steps cannot be coarsened by {factor}")
    return dW.reshape(n_paths, n_steps // factor, factor).sum(axis=2)


def euler_maruyama(
    sys: MeanFieldSystem,
    X0: FloatArray,
    grid: FloatArray,
    dW: FloatArray,
    u_mean: FloatArray,
    mean_states: FloatArray,
    u_paths: FloatArray | None = None,
    record: Sequence[int] | None = None,
) -> FloatArray:
    """Euler-Maruyama pass with the mean-field terms supplied by the closure.

    Args:
        sys: System coefficients
        X0: Initial states (n_paths, d)
        grid: Time grid (K + 1,)
        dW: Brownian increments (n_paths, K)
        u_mean: E[u] on each step (K, n)
        mean_states: E[X] at each grid point (K + 1, d)
        u_paths: Per-path control on each step (n_paths, K, n); None means u = E[u]
        record: Grid indices to store (default: terminal only)

    Returns:
        States at the recorded indices, shape (n_paths, len(record), d)
    """
    K = grid.size - 1
    record = [K] if record is None else list(record)
    slots = {index: k for k, index in enumerate(record)}
    out = np.empty((X0.shape[0], len(record), sys.d))
    dts = np.diff(grid)

    # Mean-field and E[u] contributions are deterministic per step
    drift_shift = mean_states[:-1] @ sys.A2.T + u_mean @ sys.B2.T
    noise_shift = mean_states[:-1] @ sys.C.T + u_mean @ sys.D2.T
    if u_paths is None:
        drift_shift = drift_shift + u_mean @ sys.B1.T
        noise_shift = noise_shift + u_mean @ sys.D1.T

    X = np.array(X0, dtype=float, copy=True)
    if 0 in slots:
        out[:, slots[0]] = X
    for j in range(K):
        drift = X @ sys.A1.T + drift_shift[j]
        noise = np.broadcast_to(noise_shift[j], X.shape)
        if u_paths is not None:
            drift = drift + u_paths[:, j] @ sys.B1.T
            noise = noise + u_paths[:, j] @ sys.D1.T
        X = X + drift * dts[j] + noise * dW[:, j : j + 1]
        if j + 1 in slots:
            out[:, slots[j + 1]] = X
    return out


@dataclass(frozen=True)
class ParticleEnsemble:
    """Simulated particles at the recorded grid indices."""

    grid: FloatArray
    record_indices: tuple[int, ...]
    states: FloatArray  # (n_particles, len(record_indices), d)
    seed: int
    dt: float
    scheme: str = "euler-maruyama"

    @property
    def n_particles(self) -> int:
        return int(self.states.shape[0])

    @property
    def dim(self) -> int:
        return int(self.states.shape[2])

    @property
    def recorded_times(self) -> FloatArray:
        return self.grid[list(self.record_indices)]

    def states_at(self, t: float) -> FloatArray:
        """Particles at grid time t.

        Raises:
            InvalidInputError: If t is not a grid time or was not recorded
        """
        index = int(np.argmin(np.abs(self.grid - t)))
        if abs(self.grid[index] - t) > GRID_MATCH_TOL * max(1.0, abs(t)):
            raise InvalidInputError(f"t={t} is not on the simulation grid")
        if index not in self.record_indices:
            raise InvalidInputError(
                f"t={t} was not recorded; raise max_snapshots or the path budget"
            )
        return self.states[:, self.record_indices.index(index)]

    def summary_header(self) -> list[str]:
        d = self.dim
        return (
            ["t"]
            + [f"mean_{i + 1}" for i in range(d)]
            + [f"cov_{i + 1}{j + 1}" for i in range(d) for j in range(d)]
        )

    def summary_rows(self) -> list[list[float]]:
        rows = []
        for k, t in enumerate(self.recorded_times):
            X = self.states[:, k]
            cov = np.atleast_2d(np.cov(X, rowvar=False))
            rows.append([float(t), *map(float, X.mean(axis=0)), *map(float, cov.ravel())])
        return rows

    def raw_rows(self, max_floats: int) -> list[list[float]]:
        """[particle, t, x_1..x_d] rows for every recorded state.

        Raises:
            CapacityError: If the dump would exceed max_floats values
        """
        if self.states.size > max_floats:
            raise CapacityError(
                f"raw dump of {self.states.size} values exceeds the limit {max_floats}"
            )
        return [
            [float(i), float(t), *map(float, self.states[i, k])]
            for i in range(self.n_particles)
            for k, t in enumerate(self.recorded_times)
        ]


class LawComparison(BaseModel):
    """Empirical Gaussian fit of an ensemble slice against a target law."""

    model_config = ConfigDict(frozen=True)

    t: float
    n_samples: int
    mean_error: float
    cov_error_frobenius: float
    w2_gaussian: float
    fourth_moment_excess: list[float]


def _record_indices(n_particles: int, K: int, d: int, settings: Settings) -> list[int]:
    if n_particles * (K + 1) * d <= settings.max_path_floats:
        return list(range(K + 1))
    stride = int(np.ceil(K / (settings.max_snapshots - 1)))
    indices = sorted({*range(0, K + 1, stride), K})
    if n_particles * len(indices) * d > settings.max_path_floats:
        raise CapacityError(
            f"{n_particles} particles x {len(indices)} snapshots exceed "
            f"{settings.max_path_floats} stored values"
        )
    return indices


def simulate_particles(
    sys: MeanFieldSystem,
    initial: GaussianLaw | ArrayLike,
    control: ControlSignal,
    K: int,
    N: int,
    seed: int | None = None,
    n_workers: int | None = None,
    settings: Settings | None = None,
) -> ParticleEnsemble:
    """Simulate N i.i.d. particles on a uniform grid of K steps.

    Args:
        sys: System coefficients
        initial: Gaussian initial law or a deterministic point
        control: Deterministic control (mean gain honoured)
        K: Number of Euler steps
        N: Number of particles
        seed: Random seed (settings default when None)
        n_workers: Threads over particle blocks (settings default when None)
        settings: Source of defaults and memory guards

    Returns:
        ParticleEnsemble, identical for a fixed seed regardless of n_workers

    Raises:
        InvalidInputError: If K < 1 or N < 2
        CapacityError: If the stored states exceed the memory guard
    """
    settings = settings or get_settings()
    seed = settings.default_seed if seed is None else seed
    n_workers = n_workers or settings.n_workers
    if K < 1 or N < 2:
        raise InvalidInputError(f"need K >= 1 and N >= 2, got K={K}, N={N}")
    law = initial if isinstance(initial, GaussianLaw) else GaussianLaw.point(initial)
    if law.dim != sys.d:
        raise InvalidInputError(f"initial law has dimension {law.dim}, system has {sys.d}")

    grid = np.linspace(0.0, sys.T, K + 1)
    dt = sys.T / K
    means = mean_path(sys, law.mean, control, grid, settings=settings)
    u_mean = control.sample(grid[:-1]) + means[:-1] @ control.gain(sys.d).T
    record = _record_indices(N, K, sys.d, settings)
    root = psd_sqrt(law.covariance)
    block = settings.particle_block_size

    def run_block(start: int) -> FloatArray:
        count = min(block, N - start)
        X0 = law.mean + standard_normals(
            seed, count, sys.d, stream=INITIAL_STATE_STREAM, first_path=start
        ) @ root.T
        dW = brownian_increments(seed, count, K, dt, first_path=start)
        return euler_maruyama(sys, X0, grid, dW, u_mean, means, record=record)

    logger.info(
        f"Simulating {N} particles x {K} steps in blocks of {block} on {n_workers} threads"
    )
    with ThreadPoolExecutor(max_workers=n_workers) as executor:
        blocks = list(executor.map(run_block, range(0, N, block)))

    return ParticleEnsemble(
        grid=grid,
        record_indices=tuple(record),
        states=np.concatenate(blocks, axis=0),
        seed=seed,
        dt=dt,
    )


def empirical_compare(e: ParticleEnsemble, t: float, target: GaussianLaw) -> LawComparison:
    """Fit mean/covariance at time t and compare with target.

    Raises:
        InvalidInputError: If t is off-grid or dimensions disagree
    """
    if target.dim != e.dim:
        raise InvalidInputError(f"target has dimension {target.dim}, ensemble has {e.dim}")
    X = e.states_at(t)
    mean = X.mean(axis=0)
    cov = np.atleast_2d(np.cov(X, rowvar=False))
    cov = 0.5 * (cov + cov.T)
    fit = GaussianLaw(mean=mean, covariance=cov)

    excess = []
    for k in range(e.dim):
        column = X[:, k]
        if np.ptp(column) == 0.0:
            excess.append(0.0)
        else:
            excess.append(float(stats.kurtosis(column, fisher=True)))

    return LawComparison(
        t=float(t),
        n_samples=e.n_particles,
        mean_error=float(np.linalg.norm(mean - target.mean)),
        cov_error_frobenius=float(np.linalg.norm(cov - target.covariance)),
        w2_gaussian=gaussian_w2(fit, target),
        fourth_moment_excess=excess,
    )
