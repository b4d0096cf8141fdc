"""Pathwise exact control of the mean-field SDE with D1 = D2 = 0.

Targets are polynomials in W(T') (Hermite martingale basis), so every stage
has a closed form:

    Y1(t) = e^{-A1 (T-t)} M(t ^ T'),   M the centered Hermite martingale
    Z1(t) = e^{-A1 (T-t)} dM/dW         (zero after T')
    Y2    = deterministic backward mean path from E[xi] under u0
    Z2    = -C Y2

The stochastic integral eta of Psi (Z1 + Z2) dW up to T' is spread evenly over
[T', T], and u2 = B1^T (B1 B1^T)^{-1} Phi(t) v(t) compensates it. The
assembled control is u = u2 - E[u2] + u0 with E[u2] = 0.

Z2 keeps acting after T'. Its contribution on a grid step is added to v one
step later, so the share of the final step is missing and the terminal error
is O(sqrt(dt)) whenever C Y2 does not vanish on [T', T].
"""

import logging
from abc import ABC, abstractmethod
from dataclasses import dataclass

import numpy as np
from numpy.typing import ArrayLike
from pydantic import BaseModel, ConfigDict, field_validator

from mfcontrol.analysis import MeanFieldSystem
from mfcontrol.config import Settings, get_settings
from mfcontrol.controls import ControlSignal, StochasticControlPath
from mfcontrol.core import (
    FloatArray,
    Matrix,
    Vector,
    matrix_exponential,
    rank_with_tolerance,
)
from mfcontrol.errors import (
    CapacityError,
    InvalidInputError,
    SynthesisUnavailableError,
    UnsupportedDegreeError,
)
from mfcontrol.moments import GridSpec, mean_path, resolve_grid
from mfcontrol.simulate import brownian_increments, coarsen_increments, euler_maruyama
from mfcontrol.synthesis import initial_state_for_mean, mean_steering_u0

logger = logging.getLogger(__name__)

MAX_HERMITE_DEGREE = 6
ALIGNMENT_TOL = 1e-9
MACHINE_PRECISION_ERROR = 1e-10


def hermite_polynomial(k: int, x: ArrayLike, t: float) -> FloatArray:
    """H_k(x, t) with H_0 = 1, H_1 = x, H_{k+1} = x H_k - k t H_{k-1}."""
    if k < 0:
        raise InvalidInputError(f"degree must be nonnegative, got {k}")
    x_ = np.asarray(x, dtype=float)
    previous, current = np.ones_like(x_), x_.copy()
    if k == 0:
        return previous
    for j in range(1, k):
        previous, current = current, x_ * current - j * t * previous
    return current


class HermiteTarget(BaseModel):
    """xi_i = sum_k c[i, k] H_k(W(T'), T')."""

    model_config = ConfigDict(arbitrary_types_allowed=True, frozen=True)

    coefficients: Matrix
    T_prime: float

    @field_validator("coefficients", mode="before")
    @classmethod
    def pad_coefficients(cls, value: object) -> object:
        if isinstance(value, list) and value and all(isinstance(row, list) for row in value):
            width = max(len(row) for row in value)
            if width - 1 > MAX_HERMITE_DEGREE:
                raise UnsupportedDegreeError(
                    f"Hermite degree {width - 1} exceeds {MAX_HERMITE_DEGREE}"
                )
            return [list(row) + [0.0] * (width - len(row)) for row in value]
        return value

    @field_validator("coefficients")
    @classmethod
    def check_degree(cls, value: FloatArray) -> FloatArray:
        if value.shape[1] - 1 > MAX_HERMITE_DEGREE:
            raise UnsupportedDegreeError(
                f"Hermite degree {value.shape[1] - 1} exceeds {MAX_HERMITE_DEGREE}"
            )
        return value

    @field_validator("T_prime")
    @classmethod
    def check_time(cls, value: float) -> float:
        if not value > 0:
            raise ValueError(f"T_prime must be positive, got {value}")
        return value

    @property
    def dim(self) -> int:
        return int(self.coefficients.shape[0])

    @property
    def degree(self) -> int:
        return int(self.coefficients.shape[1]) - 1

    @property
    def mean(self) -> FloatArray:
        return self.coefficients[:, 0].copy()

    def _basis(self, w: FloatArray, t: float) -> FloatArray:
        return np.stack([hermite_polynomial(k, w, t) for k in range(self.degree + 1)])

    def evaluate(self, w_T_prime: ArrayLike) -> FloatArray:
        """xi for each W(T') value, shape (N, d)."""
        w = np.atleast_1d(np.asarray(w_T_prime, dtype=float))
        return self._basis(w, self.T_prime).T @ self.coefficients.T

    def martingale(self, w: ArrayLike, t: float) -> FloatArray:
        """E[xi | F_t] - E[xi], w = W(t ^ T')."""
        s = min(t, self.T_prime)
        basis = self._basis(np.atleast_1d(np.asarray(w, dtype=float)), s)
        return basis[1:].T @ self.coefficients[:, 1:].T

    def martingale_integrand(self, w: ArrayLike, t: float) -> FloatArray:
        """d/dW of the martingale: sum_k k c_k H_{k-1}(W(t), t), zero from T' on."""
        w_ = np.atleast_1d(np.asarray(w, dtype=float))
        if t >= self.T_prime or self.degree == 0:
            return np.zeros((w_.size, self.dim))
        basis = self._basis(w_, t)
        weights = self.coefficients[:, 1:] * np.arange(1, self.degree + 1)
        return basis[:-1].T @ weights.T

    @classmethod
    def deterministic(cls, value: ArrayLike, T_prime: float) -> "HermiteTarget":
        c = np.atleast_1d(np.asarray(value, dtype=float))
        return cls(coefficients=c[:, None], T_prime=T_prime)


class BsdePair(ABC):
    """Closed-form (Y, Z) evaluable at (t, W(t))."""

    @abstractmethod
    def y(self, t: float, w: ArrayLike) -> FloatArray:
        """Y(t) for each path value w, shape (N, d)."""

    @abstractmethod
    def z(self, t: float, w: ArrayLike) -> FloatArray:
        """Z(t) for each path value w, shape (N, d)."""


class HermiteBsdePair(BsdePair):
    """Fluctuation pair Y1 = e^{-A1 (T-t)} M, terminal value xi - E[xi]."""

    def __init__(self, A1: FloatArray, T: float, target: HermiteTarget):
        self.A1 = A1
        self.T = T
        self.target = target

    def _flow(self, t: float) -> FloatArray:
        return matrix_exponential(self.A1, -(self.T - t))

    def y(self, t: float, w: ArrayLike) -> FloatArray:
        """w must be W(t ^ T')."""
        return self.target.martingale(w, t) @ self._flow(t).T

    def z(self, t: float, w: ArrayLike) -> FloatArray:
        return self.target.martingale_integrand(w, t) @ self._flow(t).T


class DeterministicBsdePair(BsdePair):
    """Mean pair: Y2 tabulated on a grid, Z2 = -C Y2."""

    def __init__(self, grid: FloatArray, values: FloatArray, C: FloatArray):
        self.grid = grid
        self.values = values
        self.C = C

    def at(self, t: float) -> FloatArray:
        return np.array(
            [np.interp(t, self.grid, self.values[:, i]) for i in range(self.values.shape[1])]
        )

    def y(self, t: float, w: ArrayLike) -> FloatArray:
        n = np.atleast_1d(np.asarray(w)).size
        return np.tile(self.at(t), (n, 1))

    def z(self, t: float, w: ArrayLike) -> FloatArray:
        return self.y(t, w) @ (-self.C).T

    @property
    def z_values(self) -> FloatArray:
        """Z2 on the grid, shape (len(grid), d)."""
        return self.values @ (-self.C).T


def _check_noise_free_control(sys: MeanFieldSystem) -> None:
    if np.any(sys.D1) or np.any(sys.D2):
        raise InvalidInputError("exact control needs D1 = D2 = 0")


def solve_y1_hermite(sys: MeanFieldSystem, target: HermiteTarget) -> HermiteBsdePair:
    """Closed-form fluctuation BSDE for a Hermite target."""
    _check_noise_free_control(sys)
    if target.dim != sys.d:
        raise InvalidInputError(f"target has dimension {target.dim}, system has {sys.d}")
    return HermiteBsdePair(sys.A1, sys.T, target)


def solve_y2_deterministic(
    sys: MeanFieldSystem,
    xi_mean: ArrayLike,
    u0: ControlSignal,
    grid_spec: GridSpec = 101,
    settings: Settings | None = None,
) -> DeterministicBsdePair:
    """Deterministic pair ending at E[xi]: Y2(0) by the variation-of-constants integral,
    then the mean ODE forward on the grid."""
    grid = resolve_grid(grid_spec, sys.T)
    y0 = initial_state_for_mean(sys, u0, xi_mean, settings=settings)
    values = mean_path(sys, y0, u0, grid, settings=settings)
    return DeterministicBsdePair(grid, values, sys.C)


def _uniform_grid(grid_spec: GridSpec, T: float) -> tuple[FloatArray, float]:
    grid = resolve_grid(grid_spec, T)
    steps = np.diff(grid)
    dt = float(steps[0])
    if np.max(np.abs(steps - dt)) > ALIGNMENT_TOL * dt:
        raise InvalidInputError("exact control needs a uniform grid")
    return grid, dt


def _aligned_index(T_prime: float, grid: FloatArray, dt: float) -> int:
    index = int(round(T_prime / dt))
    if abs(grid[min(index, grid.size - 1)] - T_prime) > ALIGNMENT_TOL * max(1.0, T_prime):
        raise InvalidInputError(f"T'={T_prime} is not a grid time (dt={dt})")
    return index


def representation_control(
    target_value: ArrayLike, T_prime: float, T: float, grid_spec: GridSpec
) -> StochasticControlPath:
    """v = target / (T - T') on [T', T], zero before; integrates to target per path.

    target_value is (N,) for d = 1 or (N, d).

    Raises:
        InvalidInputError: If T' >= T or T' is not a grid time
    """
    values = np.asarray(target_value, dtype=float)
    if values.ndim == 1:
        values = values[:, None]
    if T_prime >= T:
        raise InvalidInputError(f"T'={T_prime} must be strictly before T={T}")
    grid, dt = _uniform_grid(grid_spec, T)
    j_prime = _aligned_index(T_prime, grid, dt)
    K = grid.size - 1
    path = np.zeros((values.shape[0], K, values.shape[1]))
    path[:, j_prime:] = (values / (T - T_prime))[:, None, :]
    return StochasticControlPath(grid=grid, values=path)


def _right_inverse(M: FloatArray) -> FloatArray:
    return M.T @ np.linalg.inv(M @ M.T)


def split_mean_control(
    B1: ArrayLike, B2: ArrayLike, v: StochasticControlPath, xi_mean: ArrayLike, T: float
) -> StochasticControlPath:
    """u = B1^+ (v - E[v]) + B^+ E[xi] / T with B = B1 + B2.

    Then the integral of B1 (u - E[u]) is that of v - E[v] and the integral
    of B E[u] is E[xi].

    Raises:
        SynthesisUnavailableError: If B1 or B1 + B2 has rank below d
    """
    B1_ = np.atleast_2d(np.asarray(B1, dtype=float))
    B = B1_ + np.atleast_2d(np.asarray(B2, dtype=float))
    d = B1_.shape[0]
    for name, M in (("B1", B1_), ("B1 + B2", B)):
        rank, _ = rank_with_tolerance(M)
        if rank < d:
            raise SynthesisUnavailableError(f"rank({name}) = {rank} < {d}")
    mean_part = _right_inverse(B) @ np.atleast_1d(np.asarray(xi_mean, dtype=float)) / T
    fluctuation = (v.values - v.mean_values()[None]) @ _right_inverse(B1_).T
    return StochasticControlPath(
        grid=v.grid,
        values=fluctuation + mean_part,
        seed=v.seed,
        mean_signal=ControlSignal.constant(mean_part, T),
    )


class ExactControlPlan(BaseModel):
    """Per-stage diagnostics of the assembled exact control."""

    model_config = ConfigDict(arbitrary_types_allowed=True, frozen=True)

    T_prime: float
    dt: float
    n_paths: int
    seed: int
    u0: ControlSignal
    y1_initial: Vector
    y2_initial: Vector
    y2_identity_residual: float
    y2_terminal_residual: float
    representation_residual: float
    compensation_gain: Matrix


class ExactnessReport(BaseModel):
    """Terminal error statistics of X(T) - xi over the simulated paths."""

    model_config = ConfigDict(frozen=True)

    n_paths: int
    dt: float
    max_error: float
    rms_error: float
    target_rms: float
    relative_rms: float
    coarse_rms_error: float | None = None
    fitted_order: float | None = None


@dataclass(frozen=True)
class _ExactStages:
    y1: HermiteBsdePair
    y2: DeterministicBsdePair
    u0: ControlSignal
    y1_initial: FloatArray
    y2_initial: FloatArray


def _prepare_stages(
    sys: MeanFieldSystem,
    x0: ArrayLike,
    target: HermiteTarget,
    grid: FloatArray,
    settings: Settings,
) -> _ExactStages:
    y1 = solve_y1_hermite(sys, target)
    y1_initial = y1.y(0.0, [0.0])[0]
    u0 = mean_steering_u0(sys, x0, target.mean, y1_initial, settings=settings)
    y2 = solve_y2_deterministic(sys, target.mean, u0, grid, settings=settings)
    return _ExactStages(y1=y1, y2=y2, u0=u0, y1_initial=y1_initial, y2_initial=y2.values[0])


def _check_capacity(n_paths: int, n_steps: int, width: int, settings: Settings) -> None:
    if n_paths * n_steps * width > settings.max_path_floats:
        raise CapacityError(
            f"{n_paths} paths x {n_steps} steps x {width} exceeds "
            f"{settings.max_path_floats} stored values"
        )


def _build_control(
    sys: MeanFieldSystem,
    target: HermiteTarget,
    stages: _ExactStages,
    grid: FloatArray,
    dt: float,
    dW: FloatArray,
) -> tuple[FloatArray, FloatArray]:
    """Adapted control values (N, K, n) and eta - integral of the spread part of v (N, d)."""
    n_paths, K = dW.shape
    j_prime = _aligned_index(target.T_prime, grid, dt)
    W = np.concatenate([np.zeros((n_paths, 1)), np.cumsum(dW, axis=1)], axis=1)
    z2 = stages.y2.z_values

    # eta = sum over steps before T' of Psi(t_j) (Z1 + Z2)(t_j) dW_j
    eta = np.zeros((n_paths, sys.d))
    for j in range(j_prime):
        psi = matrix_exponential(sys.A1, -grid[j])
        z = stages.y1.z(grid[j], W[:, j]) + z2[j]
        eta += (z @ psi.T) * dW[:, j : j + 1]

    v = np.zeros((n_paths, K, sys.d))
    v[:, j_prime:] = (eta / (sys.T - target.T_prime))[:, None, :]
    representation_gap = eta - v.sum(axis=1) * dt
    # Z2 after T', one step late
    for j in range(j_prime + 1, K):
        psi = matrix_exponential(sys.A1, -grid[j - 1])
        v[:, j] += (psi @ z2[j - 1])[None, :] * dW[:, j - 1 : j] / dt

    gain = _right_inverse(sys.B1)
    u2 = np.empty((n_paths, K, sys.n))
    for j in range(K):
        u2[:, j] = v[:, j] @ (gain @ matrix_exponential(sys.A1, grid[j])).T
    u0 = stages.u0.sample(grid[:-1])
    return u2 + u0[None], representation_gap


def assemble_exact_control(
    sys: MeanFieldSystem,
    x0: ArrayLike,
    target: HermiteTarget,
    grid_spec: GridSpec,
    n_paths: int,
    seed: int | None = None,
    settings: Settings | None = None,
) -> tuple[StochasticControlPath, ExactControlPlan]:
    """Adapted control steering x0 to the Hermite target on every sampled path.

    Args:
        sys: System with D1 = D2 = 0 and rank(B1) = d
        x0: Initial state
        target: Hermite target with T' < T on the grid
        grid_spec: Uniform simulation grid (point count or times)
        n_paths: Number of Brownian paths
        seed: Key of the increment stream shared with verify_exact_pathwise

    Returns:
        The sampled control (E[u] = u0 attached) and stage diagnostics

    Raises:
        InvalidInputError: On D != 0, misaligned T', or T' >= T
        SynthesisUnavailableError: If rank(B1) < d or the mean Gramian is singular
    """
    settings = settings or get_settings()
    seed = settings.default_seed if seed is None else seed
    grid, dt = _uniform_grid(grid_spec, sys.T)
    if target.T_prime >= sys.T:
        raise InvalidInputError(f"T'={target.T_prime} must be strictly before T={sys.T}")
    rank_B1, _ = rank_with_tolerance(sys.B1)
    if rank_B1 < sys.d:
        raise SynthesisUnavailableError(f"rank(B1) = {rank_B1} < {sys.d}: no compensation")
    if sys.n != sys.d:
        logger.warning(f"B1 is {sys.d}x{sys.n}: using its right inverse for compensation")
    K = grid.size - 1
    _check_capacity(n_paths, K, max(sys.n, sys.d), settings)

    x = np.atleast_1d(np.asarray(x0, dtype=float))
    stages = _prepare_stages(sys, x, target, grid, settings)
    dW = brownian_increments(seed, n_paths, K, dt)
    values, representation_gap = _build_control(sys, target, stages, grid, dt, dW)

    identity = x - stages.y1_initial
    plan = ExactControlPlan(
        T_prime=target.T_prime,
        dt=dt,
        n_paths=n_paths,
        seed=seed,
        u0=stages.u0,
        y1_initial=stages.y1_initial,
        y2_initial=stages.y2_initial,
        y2_identity_residual=float(np.max(np.abs(stages.y2_initial - identity))),
        y2_terminal_residual=float(np.max(np.abs(stages.y2.values[-1] - target.mean))),
        representation_residual=float(np.max(np.abs(representation_gap))),
        compensation_gain=_right_inverse(sys.B1),
    )
    logger.info(
        f"Assembled exact control on {n_paths} paths, dt={dt:.3e}: "
        f"Y2(0) residual {plan.y2_identity_residual:.3e}"
    )
    path = StochasticControlPath(grid=grid, values=values, seed=seed, mean_signal=stages.u0)
    return path, plan


def _terminal_errors(
    sys: MeanFieldSystem,
    x: FloatArray,
    target: HermiteTarget,
    grid: FloatArray,
    dt: float,
    dW: FloatArray,
    u_paths: FloatArray,
    u0: ControlSignal,
    settings: Settings,
) -> tuple[FloatArray, FloatArray]:
    j_prime = _aligned_index(target.T_prime, grid, dt)
    W_T_prime = dW[:, :j_prime].sum(axis=1)
    xi = target.evaluate(W_T_prime)
    means = mean_path(sys, x, u0, grid, settings=settings)
    X0 = np.tile(x, (dW.shape[0], 1))
    X_T = euler_maruyama(
        sys, X0, grid, dW, u0.sample(grid[:-1]), means, u_paths=u_paths
    )[:, -1]
    return np.linalg.norm(X_T - xi, axis=1), xi


def verify_exact_pathwise(
    sys: MeanFieldSystem,
    x0: ArrayLike,
    control: StochasticControlPath,
    target: HermiteTarget,
    grid_spec: GridSpec,
    n_paths: int,
    seed: int,
    fit_order: bool = True,
    settings: Settings | None = None,
) -> ExactnessReport:
    """Replay the control's Brownian increments through Euler-Maruyama and compare X(T) with xi.

    With fit_order the construction is repeated on the grid coarsened by 2
    (same Brownian paths) and the order is log2 of the RMS error ratio.

    Raises:
        InvalidInputError: If control, grid, path count or seed disagree
    """
    settings = settings or get_settings()
    grid, dt = _uniform_grid(grid_spec, sys.T)
    if control.grid.shape != grid.shape or np.max(np.abs(control.grid - grid)) > ALIGNMENT_TOL * dt:
        raise InvalidInputError("control was sampled on a different grid")
    if control.n_paths != n_paths or control.seed != seed:
        raise InvalidInputError(
            f"control holds {control.n_paths} paths for seed {control.seed}, "
            f"asked to verify {n_paths} paths for seed {seed}"
        )
    if control.mean_signal is None:
        raise InvalidInputError("control carries no closed-form mean u0")
    x = np.atleast_1d(np.asarray(x0, dtype=float))
    K = grid.size - 1
    dW = brownian_increments(seed, n_paths, K, dt)
    errors, xi = _terminal_errors(
        sys, x, target, grid, dt, dW, control.values, control.mean_signal, settings
    )
    rms = float(np.sqrt(np.mean(errors**2)))
    target_rms = float(np.sqrt(np.mean(np.sum(xi**2, axis=1))))

    coarse_rms = order = None
    j_prime = int(round(target.T_prime / dt))
    if fit_order and K % 2 == 0 and j_prime % 2 == 0:
        coarse_grid = grid[::2]
        coarse_dW = coarsen_increments(dW, 2)
        stages = _prepare_stages(sys, x, target, coarse_grid, settings)
        coarse_u, _ = _build_control(sys, target, stages, coarse_grid, 2 * dt, coarse_dW)
        coarse_errors, _ = _terminal_errors(
            sys, x, target, coarse_grid, 2 * dt, coarse_dW, coarse_u, stages.u0, settings
        )
        coarse_rms = float(np.sqrt(np.mean(coarse_errors**2)))
        if rms > MACHINE_PRECISION_ERROR * max(1.0, target_rms):
            order = float(np.log2(coarse_rms / rms))

    report = ExactnessReport(
        n_paths=n_paths,
        dt=dt,
        max_error=float(np.max(errors)),
        rms_error=rms,
        target_rms=target_rms,
        relative_rms=rms / target_rms if target_rms > 0 else rms,
        coarse_rms_error=coarse_rms,
        fitted_order=order,
    )
    logger.info(
        f"Pathwise check on {n_paths} paths: max {report.max_error:.3e}, "
        f"RMS {rms:.3e} ({report.relative_rms:.2%} of target RMS)"
    )
    return report


class ConvergenceLadder(BaseModel):
    """RMS terminal error per step size with the fitted log-log slope."""

    model_config = ConfigDict(frozen=True)

    dts: list[float]
    rms_errors: list[float]
    max_errors: list[float]
    target_rms: float
    fitted_order: float | None

    def rows(self) -> list[list[float]]:
        return [[dt, rms, mx] for dt, rms, mx in zip(self.dts, self.rms_errors, self.max_errors)]


def convergence_ladder(
    sys: MeanFieldSystem,
    x0: ArrayLike,
    target: HermiteTarget,
    dts: list[float],
    n_paths: int,
    seed: int | None = None,
    settings: Settings | None = None,
) -> ConvergenceLadder:
    """Terminal errors on nested grids driven by the same Brownian paths.

    Increments are drawn at the finest step and summed for the coarser ones,
    so every rung sees identical W.

    Raises:
        InvalidInputError: If a step does not divide T or is not a multiple of the finest
    """
    settings = settings or get_settings()
    seed = settings.default_seed if seed is None else seed
    x = np.atleast_1d(np.asarray(x0, dtype=float))
    ordered = sorted(dts)
    finest = ordered[0]
    K_fine = int(round(sys.T / finest))
    if abs(K_fine * finest - sys.T) > ALIGNMENT_TOL * sys.T:
        raise InvalidInputError(f"dt={finest} does not divide T={sys.T}")
    _check_capacity(n_paths, K_fine, max(sys.n, sys.d), settings)
    dW_fine = brownian_increments(seed, n_paths, K_fine, finest)

    rms_errors, max_errors = [], []
    target_rms = 0.0
    for dt in ordered:
        factor = int(round(dt / finest))
        if abs(factor * finest - dt) > ALIGNMENT_TOL * dt:
            raise InvalidInputError(f"dt={dt} is not a multiple of {finest}")
        dW = coarsen_increments(dW_fine, factor)
        grid = np.linspace(0.0, sys.T, dW.shape[1] + 1)
        stages = _prepare_stages(sys, x, target, grid, settings)
        u, _ = _build_control(sys, target, stages, grid, dt, dW)
        errors, xi = _terminal_errors(sys, x, target, grid, dt, dW, u, stages.u0, settings)
        rms_errors.append(float(np.sqrt(np.mean(errors**2))))
        max_errors.append(float(np.max(errors)))
        target_rms = float(np.sqrt(np.mean(np.sum(xi**2, axis=1))))
        logger.debug(f"dt={dt:.2e}: RMS error {rms_errors[-1]:.3e}")

    order = None
    floor = MACHINE_PRECISION_ERROR * max(1.0, target_rms)
    if len(ordered) >= 2 and min(rms_errors) > floor:
        order = float(np.polyfit(np.log(ordered), np.log(rms_errors), 1)[0])
    return ConvergenceLadder(
        dts=ordered,
        rms_errors=rms_errors,
        max_errors=max_errors,
        target_rms=target_rms,
        fitted_order=order,
    )


def bsde_residual(pair: HermiteBsdePair, grid: ArrayLike, dW: FloatArray) -> FloatArray:
    """Per-path residual of Y(T) - Y(0) = int A1 Y dt + int Z dW on a grid.

    Both integrals use left-point sums; the result has shape (N, d).
    """
    times = np.asarray(grid, dtype=float)
    n_paths, K = dW.shape
    W = np.concatenate([np.zeros((n_paths, 1)), np.cumsum(dW, axis=1)], axis=1)
    T_prime = pair.target.T_prime

    def w_stopped(j: int) -> FloatArray:
        index = int(np.searchsorted(times, min(times[j], T_prime), side="right")) - 1
        return W[:, index]

    total = np.zeros((n_paths, pair.target.dim))
    for j in range(K):
        Y = pair.y(times[j], w_stopped(j))
        step = times[j + 1] - times[j]
        total += Y @ pair.A1.T * step + pair.z(times[j], W[:, j]) * dW[:, j : j + 1]
    return pair.y(times[-1], w_stopped(K)) - pair.y(times[0], w_stopped(0)) - total
