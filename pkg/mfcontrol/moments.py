"""First and second moments of the controlled mean-field SDE.

For a deterministic control u = v(t) + K E[X] + L X (K from the signal's mean
gain, L an optional state feedback used when checking reductions) the mean m
and covariance P solve

    m' = (F + Fbar) m + (B1 + B2) v
    P' = F P + P F^T + S P S^T + h h^T,   h = (S + Sbar) m + (D1 + D2) v

with F = A1 + B1 L, Fbar = A2 + B1 K + B2 (K + L), S = C1 + D1 L and
Sbar = C2 + D1 K + D2 (K + L). For a MeanFieldSystem C1 = 0 and C2 = C.
The covariance is propagated directly (not the raw second moment).
"""

import logging
from collections.abc import Callable, Sequence
from dataclasses import dataclass

import numpy as np
from numpy.typing import ArrayLike
from pydantic import BaseModel, ConfigDict, model_validator
from scipy.integrate import solve_ivp

from mfcontrol.analysis import FullSystem, MeanFieldSystem
from mfcontrol.config import Settings, get_settings
from mfcontrol.controls import ControlSegment, ControlSignal
from mfcontrol.core import (
    FloatArray,
    GaussianLaw,
    adaptive_integral,
    matrix_exponential,
    symmetry_scale,
)
from mfcontrol.errors import InfeasibleMeanError, InvalidInputError, NumericError

logger = logging.getLogger(__name__)

GridSpec = int | Sequence[float] | FloatArray

SERIES_THRESHOLD = 1e-6
GRID_TOL = 1e-12
PSD_PATH_TOL = 1e-8


@dataclass(frozen=True)
class MomentPath:
    """Mean and covariance trajectories on a time grid."""

    grid: FloatArray
    means: FloatArray  # (len(grid), d)
    covariances: FloatArray  # (len(grid), d, d)

    @property
    def dim(self) -> int:
        return int(self.means.shape[1])

    @property
    def terminal_mean(self) -> FloatArray:
        return self.means[-1]

    @property
    def terminal_covariance(self) -> FloatArray:
        return self.covariances[-1]

    @property
    def second_moments(self) -> FloatArray:
        """E[X X^T] = Cov + m m^T along the grid."""
        return self.covariances + np.einsum("ti,tj->tij", self.means, self.means)

    def terminal_law(self) -> GaussianLaw:
        return GaussianLaw(mean=self.terminal_mean, covariance=self.terminal_covariance)

    def csv_header(self) -> list[str]:
        d = self.dim
        return (
            ["t"]
            + [f"mean_{i + 1}" for i in range(d)]
            + [f"cov_{i + 1}{j + 1}" for i in range(d) for j in range(d)]
        )

    def to_csv_rows(self) -> list[list[float]]:
        return [
            [float(t), *map(float, m), *map(float, P.ravel())]
            for t, m, P in zip(self.grid, self.means, self.covariances)
        ]


class Scalar1DSystem(BaseModel):
    """dx = (a1 x + a2 E[x] + b E[u]) dt + delta E[u] dW."""

    model_config = ConfigDict(frozen=True)

    a1: float
    a2: float
    b: float
    delta: float
    T: float

    @model_validator(mode="after")
    def check_horizon(self) -> "Scalar1DSystem":
        if not self.T > 0:
            raise ValueError(f"horizon T must be positive, got {self.T}")
        return self

    def to_system(self) -> MeanFieldSystem:
        return MeanFieldSystem(
            d=1, n=1, T=self.T, A1=self.a1, A2=self.a2, B2=self.b, D2=self.delta
        )


@dataclass(frozen=True)
class _ClosedLoop:
    F: FloatArray
    Fbar: FloatArray
    S: FloatArray
    Sbar: FloatArray
    B: FloatArray
    D: FloatArray

    @property
    def mean_generator(self) -> FloatArray:
        return self.F + self.Fbar


def _closed_loop(
    sys: MeanFieldSystem | FullSystem,
    control: ControlSignal,
    feedback: FloatArray | None,
) -> _ClosedLoop:
    d, n = sys.d, sys.n
    if control.dim != n:
        raise InvalidInputError(f"control dimension {control.dim} != n={n}")
    if abs(control.horizon - sys.T) > GRID_TOL * max(sys.T, 1.0):
        raise InvalidInputError(f"control horizon {control.horizon} != T={sys.T}")
    K = control.gain(d)
    L = np.zeros((n, d)) if feedback is None else np.atleast_2d(feedback)
    if L.shape != (n, d):
        raise InvalidInputError(f"feedback gain must be {n}x{d}, got {L.shape}")

    if isinstance(sys, FullSystem):
        A1, A2, C1, C2 = sys.A1_0, sys.A2_0, sys.C1_0, sys.C2_0
    else:
        A1, A2, C1, C2 = sys.A1, sys.A2, np.zeros((d, d)), sys.C

    return _ClosedLoop(
        F=A1 + sys.B1 @ L,
        Fbar=A2 + sys.B1 @ K + sys.B2 @ (K + L),
        S=C1 + sys.D1 @ L,
        Sbar=C2 + sys.D1 @ K + sys.D2 @ (K + L),
        B=sys.B1 + sys.B2,
        D=sys.D1 + sys.D2,
    )


def resolve_grid(grid_spec: GridSpec, T: float) -> FloatArray:
    """Turn a point count or explicit times into a validated grid on [0, T]."""
    if isinstance(grid_spec, (int, np.integer)):
        if grid_spec < 2:
            raise InvalidInputError("a grid needs at least 2 points")
        return np.linspace(0.0, T, int(grid_spec))
    grid = np.asarray(grid_spec, dtype=float)
    if grid.ndim != 1 or grid.size < 2:
        raise InvalidInputError("a grid needs at least 2 points")
    if abs(grid[0]) > GRID_TOL or abs(grid[-1] - T) > GRID_TOL * max(T, 1.0):
        raise InvalidInputError(f"grid must run from 0 to T={T}")
    if np.any(np.diff(grid) <= 0):
        raise InvalidInputError("grid must be strictly increasing")
    return grid


def _solve_segments(
    rhs: Callable[[float, FloatArray, ControlSegment], FloatArray],
    y0: FloatArray,
    control: ControlSignal,
    grid: FloatArray,
    settings: Settings,
) -> FloatArray:
    """Integrate segment by segment, restarting at every control breakpoint."""
    out = np.empty((grid.size, y0.size))
    out[0] = y0
    y = y0
    for seg in control.segments:
        inside = np.flatnonzero((grid > seg.t_start) & (grid <= seg.t_end + GRID_TOL))
        t_eval = np.union1d(grid[inside], [seg.t_end])
        sol = solve_ivp(
            lambda t, state, seg=seg: rhs(t, state, seg),
            (seg.t_start, seg.t_end),
            y,
            method="DOP853",
            t_eval=t_eval,
            rtol=settings.ode_rtol,
            atol=settings.ode_atol,
        )
        if sol.status < 0:
            raise NumericError(
                f"moment ODE failed on [{seg.t_start}, {seg.t_end}]: {sol.message}"
            )
        for idx in inside:
            out[idx] = sol.y[:, int(np.argmin(np.abs(sol.t - grid[idx])))]
        y = sol.y[:, -1]
    return out


def integrate_moments(
    sys: MeanFieldSystem | FullSystem,
    x0_law: GaussianLaw,
    control: ControlSignal,
    grid_spec: GridSpec,
    feedback: ArrayLike | None = None,
    settings: Settings | None = None,
) -> MomentPath:
    """Solve the moment ODEs for a deterministic control.

    Args:
        sys: Reduced system, or a full system together with feedback
        x0_law: Gaussian law of X(0)
        control: Deterministic control signal on [0, T]
        grid_spec: Number of uniform points, or explicit increasing times
        feedback: Optional state-feedback gain L (u gains L X)
        settings: Source of ODE tolerances

    Returns:
        MomentPath on the requested grid

    Raises:
        InvalidInputError: If dimensions or grid are inconsistent
        NumericError: If the ODE solver fails or the covariance loses PSD-ness
    """
    settings = settings or get_settings()
    d = sys.d
    if x0_law.dim != d:
        raise InvalidInputError(f"initial law has dimension {x0_law.dim}, system has {d}")
    grid = resolve_grid(grid_spec, sys.T)
    loop = _closed_loop(
        sys, control, None if feedback is None else np.asarray(feedback, dtype=float)
    )
    gen = loop.mean_generator
    coupling = loop.S + loop.Sbar

    def rhs(t: float, state: FloatArray, seg: ControlSegment) -> FloatArray:
        m = state[:d]
        P = state[d:].reshape(d, d)
        v = seg.evaluate(t)
        h = coupling @ m + loop.D @ v
        dm = gen @ m + loop.B @ v
        dP = loop.F @ P + P @ loop.F.T + loop.S @ P @ loop.S.T + np.outer(h, h)
        return np.concatenate([dm, dP.ravel()])

    y0 = np.concatenate([x0_law.mean, x0_law.covariance.ravel()])
    states = _solve_segments(rhs, y0, control, grid, settings)

    means = states[:, :d]
    covariances = states[:, d:].reshape(-1, d, d)
    covariances = 0.5 * (covariances + np.transpose(covariances, (0, 2, 1)))
    for t, P in zip(grid, covariances):
        lowest = float(np.linalg.eigvalsh(P)[0])
        if lowest < -PSD_PATH_TOL * symmetry_scale(P):
            raise NumericError(f"covariance lost positivity at t={t}: {lowest:.3e}")
    logger.debug(
        f"Integrated moments on {grid.size} points, terminal mean {means[-1]}"
    )
    return MomentPath(grid=grid, means=means, covariances=covariances)


def mean_path(
    sys: MeanFieldSystem,
    x0: ArrayLike,
    control: ControlSignal,
    grid_spec: GridSpec,
    settings: Settings | None = None,
) -> FloatArray:
    """E[X(t)] on the grid, shape (len(grid), d)."""
    settings = settings or get_settings()
    grid = resolve_grid(grid_spec, sys.T)
    loop = _closed_loop(sys, control, None)
    gen = loop.mean_generator

    def rhs(t: float, m: FloatArray, seg: ControlSegment) -> FloatArray:
        return gen @ m + loop.B @ seg.evaluate(t)

    x = np.atleast_1d(np.asarray(x0, dtype=float))
    return _solve_segments(rhs, x, control, grid, settings)


def terminal_covariance(
    sys: MeanFieldSystem,
    control: ControlSignal,
    x0: ArrayLike | None = None,
    x0_cov: ArrayLike | None = None,
    settings: Settings | None = None,
) -> FloatArray:
    """Cov(T) by adaptive quadrature of the variation-of-constants formula.

    Cov(T) = e^{T A1} Cov0 e^{T A1^T} + integral of e^{(T-t) A1} h h^T e^{(T-t) A1^T},
    h(t) = (C + D K) m(t) + D v(t). The mean is only needed when C + D K is
    non-zero; x0 defaults to the origin.
    """
    settings = settings or get_settings()
    d, T = sys.d, sys.T
    loop = _closed_loop(sys, control, None)
    coupling = loop.S + loop.Sbar
    x = np.zeros(d) if x0 is None else np.atleast_1d(np.asarray(x0, dtype=float))

    mean_at: Callable[[float], FloatArray] | None = None
    if np.any(coupling):
        mean_at = _dense_mean(sys, x, control, settings)

    total = np.zeros((d, d))
    if x0_cov is not None:
        E = matrix_exponential(loop.F, T)
        total += E @ np.atleast_2d(np.asarray(x0_cov, dtype=float)) @ E.T

    for seg in control.segments:

        def integrand(t: float, seg: ControlSegment = seg) -> FloatArray:
            h = loop.D @ seg.evaluate(t)
            if mean_at is not None:
                h = h + coupling @ mean_at(t)
            E = matrix_exponential(loop.F, T - t)
            Eh = E @ h
            return np.outer(Eh, Eh)

        total += adaptive_integral(
            integrand,
            seg.t_start,
            seg.t_end,
            rel_tol=settings.quadrature_rel_tol,
            max_subintervals=settings.quadrature_max_subintervals,
        )
    return 0.5 * (total + total.T)


def _dense_mean(
    sys: MeanFieldSystem, x0: FloatArray, control: ControlSignal, settings: Settings
) -> Callable[[float], FloatArray]:
    loop = _closed_loop(sys, control, None)
    gen = loop.mean_generator
    pieces = []
    y = x0
    for seg in control.segments:
        sol = solve_ivp(
            lambda t, m, seg=seg: gen @ m + loop.B @ seg.evaluate(t),
            (seg.t_start, seg.t_end),
            y,
            method="DOP853",
            dense_output=True,
            rtol=settings.ode_rtol,
            atol=settings.ode_atol,
        )
        if sol.status < 0:
            raise NumericError(f"mean ODE failed: {sol.message}")
        pieces.append((seg.t_end, sol.sol))
        y = sol.y[:, -1]

    def mean_at(t: float) -> FloatArray:
        for t_end, interpolant in pieces:
            if t <= t_end:
                return interpolant(t)
        return pieces[-1][1](t)

    return mean_at


def _series_or_exact(x: float, exact: Callable[[], float], series: Callable[[], float]) -> float:
    return series() if abs(x) < SERIES_THRESHOLD else exact()


def psi_factor(a2: float, T: float) -> float:
    """(e^{-a2 T} - e^{-2 a2 T}) / (2 a2), continuous at a2 = 0 with value T/2."""
    if not T > 0:
        raise InvalidInputError(f"T must be positive, got {T}")
    x = a2 * T
    return _series_or_exact(
        x,
        exact=lambda: float(-np.exp(-x) * np.expm1(-x) / (2.0 * a2)),
        series=lambda: 0.5 * T * (1.0 - 1.5 * x + 7.0 / 6.0 * x * x),
    )


def _growth_factor(a2: float, T: float) -> float:
    """Integral of e^{2 a2 t} over [0, T]."""
    x = a2 * T
    return _series_or_exact(
        x,
        exact=lambda: float(np.expm1(2.0 * x) / (2.0 * a2)),
        series=lambda: T * (1.0 + x + 2.0 / 3.0 * x * x),
    )


def mean_gap(s: Scalar1DSystem, x0: float, alpha: float) -> float:
    """alpha - x0 e^{(a1+a2) T}: what the control has to add to the free mean."""
    return alpha - x0 * float(np.exp((s.a1 + s.a2) * s.T))


def min_reachable_variance_1d(s: Scalar1DSystem, x0: float, alpha: float) -> float:
    """Smallest Var(x(T)) among deterministic controls with E[x(T)] = alpha.

    Raises:
        InfeasibleMeanError: If b = 0 and alpha differs from the free mean
    """
    gap = mean_gap(s, x0, alpha)
    if abs(gap) <= GRID_TOL * max(abs(alpha), 1.0):
        return 0.0
    if s.b == 0.0:
        raise InfeasibleMeanError(
            f"b=0: mean is pinned to {alpha - gap}, cannot reach {alpha}"
        )
    g = gap / (s.T * s.b)
    return (
        s.delta**2
        * psi_factor(s.a2, s.T)
        * 4.0
        / (1.0 + float(np.exp(-s.a2 * s.T)))
        * g**2
    )


def scalar_family_variance(s: Scalar1DSystem, x0: float, alpha: float, zeta: float) -> float:
    """Var(x(T)) produced by the two-piece scalar control family for a given zeta."""
    if s.b == 0.0:
        raise InvalidInputError("the scalar control family needs b != 0")
    g = mean_gap(s, x0, alpha) / (s.T * s.b)
    e = float(np.exp(s.a2 * s.T))
    return s.delta**2 * psi_factor(s.a2, s.T) * ((g - zeta) ** 2 + e * (g + zeta) ** 2)


def null_reach_lower_bound_1d(s: Scalar1DSystem, x0: float) -> float:
    """Lower bound of E[x(T)^2] over deterministic controls started at x0.

    D^2 / (B^2 h + D^2) e^{2 (a1 + a2) T} x0^2 with h the integral of
    e^{2 a2 t} over [0, T] (h = T when a2 = 0).

    Raises:
        InvalidInputError: If delta = 0
    """
    if s.delta == 0.0:
        raise InvalidInputError("the null-reach bound needs a non-zero noise loading")
    h = _growth_factor(s.a2, s.T)
    D2 = s.delta**2
    return D2 / (s.b**2 * h + D2) * float(np.exp(2.0 * (s.a1 + s.a2) * s.T)) * x0**2
