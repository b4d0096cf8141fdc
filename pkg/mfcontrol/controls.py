"""Control representations.

ControlSignal is the deterministic, closed-form control used by the moment
equations, the synthesis routines and the particle simulator. A signal may
also carry a mean gain K, in which case the applied control is
u(t) = v(t) + K E[X(t)]; this is how a mean term C E[X] in the diffusion is
cancelled before covariance steering.

StochasticControlPath holds sampled adapted controls (one row per Brownian
path) built by the exact-control pipeline.
"""

from dataclasses import dataclass
from typing import Annotated, Literal

import numpy as np
from numpy.typing import ArrayLike
from pydantic import BaseModel, ConfigDict, Field, model_validator

from mfcontrol.core import FloatArray, Matrix, Vector, matrix_exponential
from mfcontrol.errors import InvalidInputError

TILING_TOL = 1e-12


class Constant(BaseModel):
    """t -> w."""

    model_config = ConfigDict(arbitrary_types_allowed=True, frozen=True)

    kind: Literal["constant"] = "constant"
    w: Vector

    @property
    def dim(self) -> int:
        return int(self.w.shape[0])

    def evaluate(self, t: float) -> FloatArray:
        return self.w.copy()


class ExpProfile(BaseModel):
    """t -> P exp((t - t_ref) G) w."""

    model_config = ConfigDict(arbitrary_types_allowed=True, frozen=True)

    kind: Literal["exp_profile"] = "exp_profile"
    P: Matrix
    G: Matrix
    t_ref: float
    w: Vector

    @model_validator(mode="after")
    def check_shapes(self) -> "ExpProfile":
        k = self.G.shape[0]
        if self.G.shape != (k, k):
            raise ValueError(f"generator G must be square, got {self.G.shape}")
        if self.P.shape[1] != k or self.w.shape[0] != k:
            raise ValueError(
                f"P {self.P.shape}, G {self.G.shape} and w {self.w.shape} are inconsistent"
            )
        return self

    @property
    def dim(self) -> int:
        return int(self.P.shape[0])

    def evaluate(self, t: float) -> FloatArray:
        return self.P @ (matrix_exponential(self.G, t - self.t_ref) @ self.w)


SegmentForm = Annotated[Constant | ExpProfile, Field(discriminator="kind")]


class ControlSegment(BaseModel):
    model_config = ConfigDict(arbitrary_types_allowed=True, frozen=True)

    t_start: float
    t_end: float
    form: SegmentForm

    def evaluate(self, t: float) -> FloatArray:
        return self.form.evaluate(t)


class ControlSignal(BaseModel):
    """Piecewise closed-form deterministic control on [0, T]."""

    model_config = ConfigDict(arbitrary_types_allowed=True, frozen=True)

    segments: list[ControlSegment]
    mean_gain: Matrix | None = None

    @model_validator(mode="after")
    def check_tiling(self) -> "ControlSignal":
        if not self.segments:
            raise ValueError("a control signal needs at least one segment")
        if abs(self.segments[0].t_start) > TILING_TOL:
            raise ValueError("segments must start at t=0")
        n = self.segments[0].form.dim
        for prev, nxt in zip(self.segments, self.segments[1:]):
            if abs(prev.t_end - nxt.t_start) > TILING_TOL:
                raise ValueError(
                    f"segments leave a gap or overlap at t={prev.t_end} / {nxt.t_start}"
                )
        for seg in self.segments:
            if seg.t_end <= seg.t_start:
                raise ValueError(f"empty segment [{seg.t_start}, {seg.t_end}]")
            if seg.form.dim != n:
                raise ValueError("segments disagree on the control dimension")
        if self.mean_gain is not None and self.mean_gain.shape[0] != n:
            raise ValueError(
                f"mean gain has {self.mean_gain.shape[0]} rows, control dimension is {n}"
            )
        return self

    @property
    def horizon(self) -> float:
        return self.segments[-1].t_end

    @property
    def dim(self) -> int:
        return self.segments[0].form.dim

    @property
    def breakpoints(self) -> list[float]:
        return [seg.t_start for seg in self.segments] + [self.horizon]

    def gain(self, d: int) -> FloatArray:
        """Mean gain K as an n x d matrix (zeros when absent)."""
        if self.mean_gain is None:
            return np.zeros((self.dim, d))
        if self.mean_gain.shape[1] != d:
            raise InvalidInputError(
                f"mean gain has {self.mean_gain.shape[1]} columns, state dimension is {d}"
            )
        return self.mean_gain

    def segment_index(self, t: float) -> int:
        """Index of the segment containing t (right-continuous, last one closed)."""
        if t < -TILING_TOL or t > self.horizon + TILING_TOL:
            raise InvalidInputError(f"t={t} outside [0, {self.horizon}]")
        for k, seg in enumerate(self.segments):
            if t < seg.t_end:
                return k
        return len(self.segments) - 1

    def evaluate(self, t: float) -> FloatArray:
        """Feedforward part v(t)."""
        return self.segments[self.segment_index(t)].evaluate(t)

    def sample(self, times: ArrayLike) -> FloatArray:
        """v at each time, shape (len(times), n)."""
        return np.array([self.evaluate(float(t)) for t in np.asarray(times)])

    def sup_norm(self, resolution: int = 201) -> float:
        """Max |v(t)| over a sampling grid (segment ends included)."""
        times = np.union1d(
            np.linspace(0.0, self.horizon, resolution), self.breakpoints
        )
        best = 0.0
        for seg in self.segments:
            for t in times[(times >= seg.t_start) & (times <= seg.t_end)]:
                best = max(best, float(np.max(np.abs(seg.evaluate(float(t))))))
        return best

    def scaled(self, factor: float) -> "ControlSignal":
        segments = [
            seg.model_copy(
                update={"form": seg.form.model_copy(update={"w": factor * seg.form.w})}
            )
            for seg in self.segments
        ]
        return self.model_copy(update={"segments": segments})

    def sampled_table(self, resolution: int) -> list[list[float]]:
        """Rows [t, v_1, ..., v_n] on a uniform grid."""
        times = np.linspace(0.0, self.horizon, resolution)
        return [[float(t), *map(float, self.evaluate(float(t)))] for t in times]

    @classmethod
    def constant(cls, w: ArrayLike, T: float) -> "ControlSignal":
        return cls(
            segments=[ControlSegment(t_start=0.0, t_end=T, form=Constant(w=w))]
        )

    @classmethod
    def zero(cls, n: int, T: float) -> "ControlSignal":
        return cls.constant(np.zeros(n), T)

    @classmethod
    def piecewise_constant(cls, values: ArrayLike, T: float) -> "ControlSignal":
        """Equal-length constant pieces; values is (pieces, n), or 1-D for n=1."""
        rows = np.array(values, dtype=float)
        if rows.ndim == 1:
            rows = rows[:, None]
        edges = np.linspace(0.0, T, rows.shape[0] + 1)
        return cls(
            segments=[
                ControlSegment(
                    t_start=float(edges[k]),
                    t_end=float(edges[k + 1]),
                    form=Constant(w=rows[k]),
                )
                for k in range(rows.shape[0])
            ]
        )


@dataclass(frozen=True)
class StochasticControlPath:
    """Adapted control sampled on a Brownian grid.

    values[i, j] is the control of path i on [grid[j], grid[j+1]) and may only
    depend on the increments of path i before grid[j].
    """

    grid: FloatArray
    values: FloatArray  # (n_paths, n_steps, dim)
    seed: int | None = None
    mean_signal: ControlSignal | None = None  # closed-form E[u], when known

    def __post_init__(self) -> None:
        if self.values.ndim != 3:
            raise InvalidInputError("control values must have shape (paths, steps, dim)")
        if self.values.shape[1] != self.grid.size - 1:
            raise InvalidInputError(
                f"{self.values.shape[1]} control steps for a grid of {self.grid.size} points"
            )

    @property
    def n_paths(self) -> int:
        return int(self.values.shape[0])

    @property
    def dim(self) -> int:
        return int(self.values.shape[2])

    @property
    def steps(self) -> FloatArray:
        return np.diff(self.grid)

    def integral(self) -> FloatArray:
        """Per-path integral over [0, T], shape (n_paths, dim)."""
        return np.einsum("ijk,j->ik", self.values, self.steps)

    def empirical_mean(self) -> FloatArray:
        return self.values.mean(axis=0)

    def mean_values(self) -> FloatArray:
        """E[u] on each step: closed form when available, else the sample mean."""
        if self.mean_signal is not None:
            return self.mean_signal.sample(self.grid[:-1])
        return self.empirical_mean()
