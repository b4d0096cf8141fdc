"""One-dimensional BSDE with a Gaussian terminal law.

For deterministic z the time-s law of Y is N(y(s), sigma(s)) with

    sigma(s) = e^{-2 a1 (T-s)} Var(mu) - int_s^T e^{-2 a1 (r-s)} z(r)^2 dr
    y(s)     = e^{-(a1+a2)(T-s)} mean(mu) - b int_s^T e^{-(a1+a2)(r-s)} z(r) dr

z signals are piecewise exponentials, so every integral above is evaluated
segment by segment in closed form.
"""

import logging
from typing import Literal

import numpy as np
from numpy.typing import ArrayLike
from pydantic import BaseModel, ConfigDict, model_validator

from mfcontrol.core import GaussianLaw
from mfcontrol.errors import InfeasibleVarianceError, InvalidInputError

logger = logging.getLogger(__name__)

SERIES_THRESHOLD = 1e-6
BOUNDARY_TOL = 1e-12


def f_factor(a2: float, s: float) -> float:
    """(1 - e^{-2 a2 s}) / (2 a2), equal to s when a2 = 0."""
    if s < 0:
        raise InvalidInputError(f"f_factor needs s >= 0, got {s}")
    x = a2 * s
    if abs(x) < SERIES_THRESHOLD:
        return s * (1.0 - x + 2.0 / 3.0 * x * x)
    return float(-np.expm1(-2.0 * x) / (2.0 * a2))


def _exp_integral(rate: float, u0: float, u1: float) -> float:
    """Integral of e^{rate u} over [u0, u1]."""
    width = u1 - u0
    x = rate * width
    if abs(x) < SERIES_THRESHOLD:
        return float(np.exp(rate * u0)) * width * (1.0 + x / 2.0 + x * x / 6.0)
    return float(np.exp(rate * u0) * np.expm1(x) / rate)


class Wbsde1DParams(BaseModel):
    """Coefficients a1, a2, b, horizon T and terminal law mu of the scalar BSDE."""

    model_config = ConfigDict(frozen=True)

    a1: float
    a2: float
    b: float
    T: float
    mu: GaussianLaw

    @model_validator(mode="after")
    def check_params(self) -> "Wbsde1DParams":
        if not self.T > 0:
            raise ValueError(f"T must be positive, got {self.T}")
        if self.mu.dim != 1:
            raise ValueError(f"terminal law must be one-dimensional, got d={self.mu.dim}")
        return self

    @property
    def terminal_mean(self) -> float:
        return float(self.mu.mean[0])

    @property
    def terminal_variance(self) -> float:
        return self.mu.variance


class ZSegment(BaseModel):
    """z(r) = amplitude * e^{rate (r - origin)} on [t_start, t_end)."""

    model_config = ConfigDict(frozen=True)

    t_start: float
    t_end: float
    amplitude: float
    rate: float = 0.0
    origin: float = 0.0

    def evaluate(self, r: float) -> float:
        return self.amplitude * float(np.exp(self.rate * (r - self.origin)))

    def weighted_integral(
        self, weight_rate: float, power: Literal[1, 2], s: float, lo: float, hi: float
    ) -> float:
        """Integral of e^{weight_rate (r-s)} z(r)^power over [lo, hi]."""
        scale = self.amplitude**power * float(np.exp(power * self.rate * (s - self.origin)))
        return scale * _exp_integral(weight_rate + power * self.rate, lo - s, hi - s)


class ZSignal(BaseModel):
    """Deterministic piecewise-exponential z on [start, end]."""

    model_config = ConfigDict(frozen=True)

    segments: list[ZSegment]

    @model_validator(mode="after")
    def check_tiling(self) -> "ZSignal":
        if not self.segments:
            raise ValueError("a z signal needs at least one segment")
        for prev, nxt in zip(self.segments, self.segments[1:]):
            if abs(prev.t_end - nxt.t_start) > BOUNDARY_TOL:
                raise ValueError(f"z segments are not contiguous at t={prev.t_end}")
        for seg in self.segments:
            if seg.t_end <= seg.t_start:
                raise ValueError(f"empty z segment [{seg.t_start}, {seg.t_end}]")
        return self

    @property
    def start(self) -> float:
        return self.segments[0].t_start

    @property
    def end(self) -> float:
        return self.segments[-1].t_end

    def evaluate(self, r: float) -> float:
        for seg in self.segments:
            if r < seg.t_end:
                return seg.evaluate(r)
        return self.segments[-1].evaluate(r)

    def integral(self, weight_rate: float, power: Literal[1, 2], s: float, u: float) -> float:
        """Integral of e^{weight_rate (r-s)} z(r)^power over [s, u]."""
        if s < self.start - BOUNDARY_TOL or u > self.end + BOUNDARY_TOL:
            raise InvalidInputError(
                f"z is defined on [{self.start}, {self.end}], not on [{s}, {u}]"
            )
        total = 0.0
        for seg in self.segments:
            lo, hi = max(s, seg.t_start), min(u, seg.t_end)
            if hi > lo:
                total += seg.weighted_integral(weight_rate, power, s, lo, hi)
        return total

    @classmethod
    def zero(cls, start: float, end: float) -> "ZSignal":
        return cls(segments=[ZSegment(t_start=start, t_end=end, amplitude=0.0)])

    @classmethod
    def piecewise_constant(cls, values: ArrayLike, start: float, end: float) -> "ZSignal":
        """Equal-length constant pieces over [start, end]."""
        levels = np.atleast_1d(np.asarray(values, dtype=float))
        edges = np.linspace(start, end, levels.size + 1)
        return cls(
            segments=[
                ZSegment(t_start=float(edges[k]), t_end=float(edges[k + 1]), amplitude=float(v))
                for k, v in enumerate(levels)
            ]
        )


class ReachableLawSet1D(BaseModel):
    """Backward reachable Gaussian laws at time s.

    N(y, sigma) is reachable iff 0 <= sigma <= sigma_max and
    |y - center| <= width_scale * sqrt(sigma_max - sigma).
    """

    model_config = ConfigDict(frozen=True)

    s: float
    sigma_max: float
    center: float
    width_scale: float

    def variance_gap(self, sigma: float) -> float:
        upper = self.sigma_max + BOUNDARY_TOL * max(1.0, self.sigma_max)
        if sigma < -BOUNDARY_TOL or sigma > upper:
            raise InfeasibleVarianceError(
                f"sigma={sigma} outside [0, {self.sigma_max}] at s={self.s}"
            )
        return max(self.sigma_max - sigma, 0.0)

    def y_bounds(self, sigma: float) -> tuple[float, float]:
        half_width = self.width_scale * float(np.sqrt(self.variance_gap(sigma)))
        return self.center - half_width, self.center + half_width

    def y_min(self, sigma: float) -> float:
        return self.y_bounds(sigma)[0]

    def y_max(self, sigma: float) -> float:
        return self.y_bounds(sigma)[1]

    def contains(self, y: float, sigma: float, tol: float = BOUNDARY_TOL) -> bool:
        if sigma < -tol or sigma > self.sigma_max + tol:
            return False
        half_width = self.width_scale * float(np.sqrt(max(self.sigma_max - sigma, 0.0)))
        return abs(y - self.center) <= half_width + tol * max(1.0, abs(self.center))

    def boundary_rows(self, sigma_grid: ArrayLike) -> list[list[float]]:
        """Rows [sigma, y_min, y_max] for plotting."""
        return [
            [float(sigma), *self.y_bounds(float(sigma))]
            for sigma in np.asarray(sigma_grid, dtype=float)
        ]


def _check_time(p: Wbsde1DParams, s: float) -> None:
    if s < 0 or s >= p.T:
        raise InvalidInputError(f"query time must lie in [0, {p.T}), got {s}")


def backward_reachable_set_1d(p: Wbsde1DParams, s: float) -> ReachableLawSet1D:
    """Closed-form reachable-law set at time s < T."""
    _check_time(p, s)
    tau = p.T - s
    return ReachableLawSet1D(
        s=s,
        sigma_max=float(np.exp(-2.0 * p.a1 * tau)) * p.terminal_variance,
        center=float(np.exp(-(p.a1 + p.a2) * tau)) * p.terminal_mean,
        width_scale=abs(p.b) * float(np.sqrt(f_factor(p.a2, tau))),
    )


def z_alpha_signal(p: Wbsde1DParams, s: float, sigma_target: float, alpha: float) -> ZSignal:
    """z = c e^{(a1-a2)(r-s)} with sign -1 on [s, s + alpha (T-s)) and +1 after.

    c is fixed so that the weighted square integral equals sigma_max - sigma_target.
    alpha=0 lands y(s) on y_min and alpha=1 on y_max when b > 0 (mirrored for b < 0).

    Raises:
        InfeasibleVarianceError: If sigma_target is outside [0, sigma_max]
        InvalidInputError: If alpha is outside [0, 1]
    """
    if not 0.0 <= alpha <= 1.0:
        raise InvalidInputError(f"alpha must lie in [0, 1], got {alpha}")
    reach = backward_reachable_set_1d(p, s)
    gap = reach.variance_gap(sigma_target)
    tau = p.T - s
    c = float(np.sqrt(gap / f_factor(p.a2, tau)))
    split = s + alpha * tau
    rate = p.a1 - p.a2

    segments = []
    if split > s:
        segments.append(ZSegment(t_start=s, t_end=split, amplitude=-c, rate=rate, origin=s))
    if split < p.T:
        segments.append(ZSegment(t_start=split, t_end=p.T, amplitude=c, rate=rate, origin=s))
    return ZSignal(segments=segments)


def backward_law_from_z(p: Wbsde1DParams, z: ZSignal, s: float) -> tuple[float, float]:
    """(y(s), sigma(s)) obtained by running the BSDE backward from mu under z.

    sigma(s) may come out negative, meaning z overshoots the terminal variance.
    """
    _check_time(p, s)
    tau = p.T - s
    y = float(np.exp(-(p.a1 + p.a2) * tau)) * p.terminal_mean - p.b * z.integral(
        -(p.a1 + p.a2), 1, s, p.T
    )
    sigma = float(np.exp(-2.0 * p.a1 * tau)) * p.terminal_variance - z.integral(
        -2.0 * p.a1, 2, s, p.T
    )
    return y, sigma


def forward_moments_check(
    p: Wbsde1DParams,
    y_s: float,
    sigma_s: float,
    z: ZSignal,
    s: float,
    until: float | None = None,
) -> tuple[float, float]:
    """Propagate (mean, variance) forward from s to until (default T) under z."""
    u = p.T if until is None else until
    if u < s or u > p.T + BOUNDARY_TOL:
        raise InvalidInputError(f"cannot propagate from s={s} to {u} on [0, {p.T}]")
    if u == s:
        return y_s, sigma_s
    width = u - s
    sigma_u = float(np.exp(2.0 * p.a1 * width)) * (sigma_s + z.integral(-2.0 * p.a1, 2, s, u))
    y_u = float(np.exp((p.a1 + p.a2) * width)) * (
        y_s + p.b * z.integral(-(p.a1 + p.a2), 1, s, u)
    )
    return y_u, sigma_u


def exp2_params() -> Wbsde1DParams:
    """dY = z dW on [0, 1] with terminal law N(0, 1)."""
    return Wbsde1DParams(a1=0.0, a2=0.0, b=0.0, T=1.0, mu=GaussianLaw.scalar(0.0, 1.0))


def exp2_catalog(
    variant: int,
    t0: float | None = None,
    sigma: float | None = None,
    s0: float | None = None,
) -> tuple[GaussianLaw, ZSignal]:
    """Initial law and z for the three constructions reaching N(0, 1) at T = 1.

    1: Y(0) = 0, z = +1 on [0, t0] and -1 after.
    2: Y(0) = 0, z = sqrt(sigma / s0) on [0, s0] and sqrt((1 - sigma) / (1 - s0)) after,
       passing through N(0, sigma) at s0.
    3: Y(0) ~ N(0, sigma), z = sqrt(1 - sigma).

    Raises:
        InvalidInputError: On an unknown variant or parameters out of range
    """
    T = 1.0
    if variant == 1:
        if t0 is None or not 0.0 <= t0 <= T:
            raise InvalidInputError(f"variant 1 needs t0 in [0, 1], got {t0}")
        segments = []
        if t0 > 0:
            segments.append(ZSegment(t_start=0.0, t_end=t0, amplitude=1.0))
        if t0 < T:
            segments.append(ZSegment(t_start=t0, t_end=T, amplitude=-1.0))
        return GaussianLaw.point([0.0]), ZSignal(segments=segments)

    if sigma is None or not 0.0 <= sigma <= 1.0:
        raise InvalidInputError(f"variant {variant} needs sigma in [0, 1], got {sigma}")
    if variant == 2:
        if s0 is None or not 0.0 < s0 < T:
            raise InvalidInputError(f"variant 2 needs s0 in (0, 1), got {s0}")
        z = ZSignal(
            segments=[
                ZSegment(t_start=0.0, t_end=s0, amplitude=float(np.sqrt(sigma / s0))),
                ZSegment(t_start=s0, t_end=T, amplitude=float(np.sqrt((1.0 - sigma) / (T - s0)))),
            ]
        )
        return GaussianLaw.point([0.0]), z
    if variant == 3:
        level = float(np.sqrt((1.0 - sigma) / T))
        z = ZSignal(segments=[ZSegment(t_start=0.0, t_end=T, amplitude=level)])
        return GaussianLaw.scalar(0.0, sigma), z
    raise InvalidInputError(f"unknown exp2 variant {variant}")


def soundness_search(
    p: Wbsde1DParams, s: float, n_samples: int, n_pieces: int = 8, seed: int = 0
) -> int:
    """Count random piecewise-constant z whose time-s law escapes the reachable set.

    Samples with sigma(s) < 0 are discarded. A sound characterization returns 0.
    """
    reach = backward_reachable_set_1d(p, s)
    rng = np.random.Generator(np.random.Philox(seed))
    scale = float(np.sqrt(reach.sigma_max / (p.T - s))) if reach.sigma_max > 0 else 1.0
    violations = kept = 0
    for _ in range(n_samples):
        z = ZSignal.piecewise_constant(scale * rng.standard_normal(n_pieces), s, p.T)
        y, sigma = backward_law_from_z(p, z, s)
        if sigma < 0:
            continue
        kept += 1
        if not reach.contains(y, sigma, tol=1e-9):
            violations += 1
    logger.info(f"Soundness search at s={s}: {kept} admissible samples, {violations} violations")
    return violations
