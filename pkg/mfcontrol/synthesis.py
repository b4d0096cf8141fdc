"""Constructive controls: covariance steering, mean matching and the scalar family."""

import logging

import numpy as np
from numpy.typing import ArrayLike
from pydantic import BaseModel, ConfigDict

from mfcontrol.analysis import (
    MeanFieldSystem,
    absorb_mean_diffusion,
    check_etcnl,
    deterministic_gramian,
)
from mfcontrol.config import Settings, get_settings
from mfcontrol.controls import ControlSegment, ControlSignal, ExpProfile
from mfcontrol.core import (
    FloatArray,
    GaussianLaw,
    Matrix,
    Vector,
    adaptive_integral,
    matrix_exponential,
    psd_spectral_decomposition,
    rank_with_tolerance,
)
from mfcontrol.errors import (
    InfeasibleVarianceError,
    InvalidInputError,
    NotReducibleError,
    SynthesisUnavailableError,
)
from mfcontrol.moments import (
    Scalar1DSystem,
    integrate_moments,
    mean_gap,
    min_reachable_variance_1d,
    psi_factor,
)

logger = logging.getLogger(__name__)


class SteeringPlan(BaseModel):
    """Initial state plus control that realize a target Gaussian law at T."""

    model_config = ConfigDict(arbitrary_types_allowed=True, frozen=True)

    control: ControlSignal
    initial_state: Vector
    target: GaussianLaw
    predicted_mean: Vector
    predicted_covariance: Matrix
    mean_residual: float
    covariance_residual: float


def _right_inverse(D: FloatArray) -> FloatArray:
    """D^T (D D^T)^{-1}."""
    return D.T @ np.linalg.inv(D @ D.T)


def synthesize_covariance_control(sys: MeanFieldSystem, Sigma: ArrayLike) -> ControlSignal:
    """Switched control with terminal covariance Sigma from a deterministic start.

    On [(k-1) T/d, k T/d) the control is
    D^T (D D^T)^{-1} sqrt(d mu_k / T) e^{(t - T) A1} zeta_k, where (mu_k, zeta_k)
    are the eigenpairs of Sigma and D = D1 + D2. A term C E[X] in the diffusion
    is cancelled by a mean gain -N with D N = C.

    Raises:
        SynthesisUnavailableError: If rank(D1 + D2) < d or C is not in its range
    """
    d, T = sys.d, sys.T
    if np.any(sys.D1) or np.any(sys.B1):
        logger.warning(
            "Synthesis uses D1 + D2 and B1 + B2; exact only for deterministic controls"
        )
    D = sys.D
    rank_D, _ = rank_with_tolerance(D)
    if rank_D < d:
        report = check_etcnl(sys)
        raise SynthesisUnavailableError(
            f"rank(D1 + D2) = {rank_D} < d = {d}: covariance steering unavailable",
            report=report,
        )

    mean_gain = None
    if np.any(sys.C):
        try:
            _, N = absorb_mean_diffusion(sys)
        except NotReducibleError as e:
            raise SynthesisUnavailableError(str(e), report=check_etcnl(sys)) from e
        mean_gain = -N

    spectral = psd_spectral_decomposition(Sigma)
    right_inverse = _right_inverse(D)
    segments = []
    for k, (mu, zeta) in enumerate(spectral.pairs):
        segments.append(
            ControlSegment(
                t_start=k * T / d,
                t_end=T if k == d - 1 else (k + 1) * T / d,
                form=ExpProfile(
                    P=right_inverse,
                    G=sys.A1,
                    t_ref=T,
                    w=np.sqrt(d * mu / T) * zeta,
                ),
            )
        )
    logger.info(f"Synthesized {d}-segment covariance control")
    return ControlSignal(segments=segments, mean_gain=mean_gain)


def initial_state_for_mean(
    sys: MeanFieldSystem,
    control: ControlSignal,
    alpha: ArrayLike,
    settings: Settings | None = None,
) -> FloatArray:
    """x with E[X(T)] = alpha when started at x under the given control.

    x = e^{-T A} alpha - integral of e^{-s A} (B1 + B2) v(s) ds, A the mean
    generator including the control's mean gain.
    """
    settings = settings or get_settings()
    target = np.atleast_1d(np.asarray(alpha, dtype=float))
    if target.shape != (sys.d,):
        raise InvalidInputError(f"alpha must have length {sys.d}")
    B = sys.B
    A = sys.A_mean + B @ control.gain(sys.d)

    x = matrix_exponential(A, -sys.T) @ target
    for seg in control.segments:

        def integrand(s: float, seg: ControlSegment = seg) -> FloatArray:
            return matrix_exponential(A, -s) @ (B @ seg.evaluate(s))

        x = x - adaptive_integral(
            integrand,
            seg.t_start,
            seg.t_end,
            rel_tol=settings.quadrature_rel_tol,
            max_subintervals=settings.quadrature_max_subintervals,
        )
    return x


def steer_to_gaussian(
    sys: MeanFieldSystem,
    target: GaussianLaw,
    grid_points: int = 101,
    settings: Settings | None = None,
) -> SteeringPlan:
    """Covariance control plus matching initial state, checked on the moment ODEs."""
    if target.dim != sys.d:
        raise InvalidInputError(f"target has dimension {target.dim}, system has {sys.d}")
    control = synthesize_covariance_control(sys, target.covariance)
    x = initial_state_for_mean(sys, control, target.mean, settings=settings)
    path = integrate_moments(
        sys, GaussianLaw.point(x), control, grid_points, settings=settings
    )
    mean_residual = float(np.max(np.abs(path.terminal_mean - target.mean)))
    covariance_residual = float(
        np.linalg.norm(path.terminal_covariance - target.covariance)
    )
    logger.info(
        f"Steering plan residuals: mean {mean_residual:.3e}, covariance {covariance_residual:.3e}"
    )
    return SteeringPlan(
        control=control,
        initial_state=x,
        target=target,
        predicted_mean=path.terminal_mean,
        predicted_covariance=path.terminal_covariance,
        mean_residual=mean_residual,
        covariance_residual=covariance_residual,
    )


def scalar_mean_control_family(
    s: Scalar1DSystem, x0: float, alpha: float, zeta: float
) -> ControlSignal:
    """v(t) = e^{(a1+a2)(t-T)} (g -/+ zeta) on the first/second half of [0, T].

    g = (alpha - x0 e^{(a1+a2) T}) / (T b) makes E[x(T)] = alpha for every zeta.

    Raises:
        InvalidInputError: If b = 0
    """
    if s.b == 0.0:
        raise InvalidInputError("the scalar control family needs b != 0")
    g = mean_gap(s, x0, alpha) / (s.T * s.b)
    rate = s.a1 + s.a2

    def half(t_start: float, t_end: float, w: float) -> ControlSegment:
        return ControlSegment(
            t_start=t_start,
            t_end=t_end,
            form=ExpProfile(P=[[1.0]], G=[[rate]], t_ref=s.T, w=[w]),
        )

    return ControlSignal(
        segments=[half(0.0, s.T / 2, g - zeta), half(s.T / 2, s.T, g + zeta)]
    )


def optimal_zeta(s: Scalar1DSystem, x0: float, alpha: float) -> float:
    """zeta minimizing the family's terminal variance: g (1 - e^{a2 T}) / (1 + e^{a2 T})."""
    if s.b == 0.0:
        raise InvalidInputError("the scalar control family needs b != 0")
    g = mean_gap(s, x0, alpha) / (s.T * s.b)
    e = float(np.exp(s.a2 * s.T))
    return g * (1.0 - e) / (1.0 + e)


def zeta_for_variance(s: Scalar1DSystem, x0: float, alpha: float, beta2: float) -> float:
    """Larger zeta whose family member has terminal variance beta2.

    Raises:
        InfeasibleVarianceError: If beta2 is below min_reachable_variance_1d,
            or positive while delta = 0
    """
    if beta2 < 0:
        raise InfeasibleVarianceError(f"variance must be nonnegative, got {beta2}")
    bound = min_reachable_variance_1d(s, x0, alpha)
    if beta2 < bound * (1.0 - 1e-12):
        raise InfeasibleVarianceError(
            f"variance {beta2} is below the reachable bound {bound}"
        )
    if s.delta == 0.0:
        if beta2 > 0.0:
            raise InfeasibleVarianceError("no noise: only zero variance is reachable")
        return optimal_zeta(s, x0, alpha)

    g = mean_gap(s, x0, alpha) / (s.T * s.b)
    e = float(np.exp(s.a2 * s.T))
    scale = s.delta**2 * psi_factor(s.a2, s.T)
    discriminant = (1.0 + e) * beta2 / scale - 4.0 * e * g * g
    root = float(np.sqrt(max(discriminant, 0.0)))
    return (-g * (e - 1.0) + root) / (1.0 + e)


def mean_steering_u0(
    sys: MeanFieldSystem,
    x0: ArrayLike,
    xi_mean: ArrayLike,
    y1_0: ArrayLike,
    settings: Settings | None = None,
) -> ControlSignal:
    """Deterministic control bringing the backward mean path to x0 - y1_0 at time 0.

    u0(t) = -(B1 + B2)^T e^{-t (A1 + A2)^T} G2^{-1} r with
    r = -e^{-T (A1 + A2)} xi_mean + x0 - y1_0 and G2 the mean Gramian.

    Raises:
        SynthesisUnavailableError: If the mean Gramian is singular
    """
    d = sys.d
    A, B = sys.A_mean, sys.B
    G2 = deterministic_gramian(A, B, sys.T, settings=settings)
    rank_G2, _ = rank_with_tolerance(G2)
    if rank_G2 < d:
        raise SynthesisUnavailableError(
            f"mean Gramian has rank {rank_G2} < {d}: the mean cannot be steered"
        )
    r = (
        -matrix_exponential(A, -sys.T) @ np.atleast_1d(np.asarray(xi_mean, dtype=float))
        + np.atleast_1d(np.asarray(x0, dtype=float))
        - np.atleast_1d(np.asarray(y1_0, dtype=float))
    )
    w = np.linalg.solve(G2, r)
    return ControlSignal(
        segments=[
            ControlSegment(
                t_start=0.0,
                t_end=sys.T,
                form=ExpProfile(P=-B.T, G=-A.T, t_ref=0.0, w=w),
            )
        ]
    )
