"""System representations and controllability verdicts.

A MeanFieldSystem describes

    dX = (A1 X + A2 E[X] + B1 u + B2 E[u]) dt + (C E[X] + D1 u + D2 E[u]) dW

on [0, T] with a scalar Brownian motion W. The checks below return partial
ControllabilityReport values; analyze_system merges all of them.
"""

import logging
from dataclasses import dataclass
from typing import Any

import numpy as np
from numpy.typing import ArrayLike
from pydantic import BaseModel, ConfigDict, Field, model_validator
from scipy import linalg

from mfcontrol.config import Settings, get_settings
from mfcontrol.core import (
    FloatArray,
    Matrix,
    Vector,
    adaptive_integral,
    kalman_block,
    matrix_exponential,
    null_left_witness,
    rank_with_tolerance,
)
from mfcontrol.errors import InvalidInputError, NotReducibleError

logger = logging.getLogger(__name__)

REDUCTION_RESIDUAL_TOL = 1e-10


def _infer_dims(
    data: dict[str, Any], state_blocks: tuple[str, ...], input_blocks: tuple[str, ...]
) -> dict[str, Any]:
    """Fill d, n and absent coefficient blocks (zeros) in a raw system mapping."""
    data = dict(data)
    shapes = {
        key: np.atleast_2d(np.asarray(data[key], dtype=float)).shape
        for key in (*state_blocks, *input_blocks)
        if data.get(key) is not None
    }
    d = data.get("d")
    if d is None:
        d = next((shape[0] for shape in shapes.values()), None)
    n = data.get("n")
    if n is None:
        n = next((shapes[key][1] for key in input_blocks if key in shapes), None)
    if d is None or n is None:
        raise ValueError("cannot infer dimensions; give d and n explicitly")
    data["d"], data["n"] = int(d), int(n)
    for key in state_blocks:
        if data.get(key) is None:
            data[key] = np.zeros((d, d))
    for key in input_blocks:
        if data.get(key) is None:
            data[key] = np.zeros((d, n))
    return data


def _check_shapes(model: Any, state_blocks: tuple[str, ...], input_blocks: tuple[str, ...]) -> None:
    d, n = model.d, model.n
    if d < 1 or n < 1:
        raise ValueError("d and n must be positive")
    if not model.T > 0:
        raise ValueError(f"horizon T must be positive, got {model.T}")
    for key in state_blocks:
        if getattr(model, key).shape != (d, d):
            raise ValueError(f"{key} must be {d}x{d}, got {getattr(model, key).shape}")
    for key in input_blocks:
        if getattr(model, key).shape != (d, n):
            raise ValueError(f"{key} must be {d}x{n}, got {getattr(model, key).shape}")


class MeanFieldSystem(BaseModel):
    """Coefficients of the reduced mean-field SDE. Omitted blocks default to zero."""

    model_config = ConfigDict(arbitrary_types_allowed=True, frozen=True)

    d: int
    n: int
    T: float
    A1: Matrix
    A2: Matrix
    B1: Matrix
    B2: Matrix
    C: Matrix
    D1: Matrix
    D2: Matrix

    @model_validator(mode="before")
    @classmethod
    def fill_defaults(cls, data: Any) -> Any:
        if isinstance(data, dict):
            return _infer_dims(data, ("A1", "A2", "C"), ("B1", "B2", "D1", "D2"))
        return data

    @model_validator(mode="after")
    def check_dimensions(self) -> "MeanFieldSystem":
        _check_shapes(self, ("A1", "A2", "C"), ("B1", "B2", "D1", "D2"))
        return self

    @property
    def B(self) -> FloatArray:
        """B1 + B2, the input matrix seen by deterministic controls."""
        return self.B1 + self.B2

    @property
    def D(self) -> FloatArray:
        """D1 + D2, the noise loading seen by deterministic controls."""
        return self.D1 + self.D2

    @property
    def A_mean(self) -> FloatArray:
        """Generator of the mean dynamics, A1 + A2."""
        return self.A1 + self.A2


class FullSystem(BaseModel):
    """Mean-field SDE before reduction: the diffusion also carries C1_0 X."""

    model_config = ConfigDict(arbitrary_types_allowed=True, frozen=True)

    d: int
    n: int
    T: float
    A1_0: Matrix
    A2_0: Matrix
    B1: Matrix
    B2: Matrix
    C1_0: Matrix
    C2_0: Matrix
    D1: Matrix
    D2: Matrix

    @model_validator(mode="before")
    @classmethod
    def fill_defaults(cls, data: Any) -> Any:
        if isinstance(data, dict):
            return _infer_dims(
                data, ("A1_0", "A2_0", "C1_0", "C2_0"), ("B1", "B2", "D1", "D2")
            )
        return data

    @model_validator(mode="after")
    def check_dimensions(self) -> "FullSystem":
        _check_shapes(self, ("A1_0", "A2_0", "C1_0", "C2_0"), ("B1", "B2", "D1", "D2"))
        return self


@dataclass(frozen=True)
class AugmentedSystem:
    """(X - E[X], E[X]) representation."""

    Abar: FloatArray
    Bbar: FloatArray
    Cbar: FloatArray


class ControllabilityReport(BaseModel):
    """Verdict container. Fields left as None were not evaluated."""

    model_config = ConfigDict(
        arbitrary_types_allowed=True, frozen=True, ser_json_inf_nan="constants"
    )

    d: int
    rank_D1: int | None = None
    rank_D1_plus_D2: int | None = None
    rank_D2: int | None = None
    kalman_rank: int | None = None
    l2_terminal_controllable: bool | None = None
    etcnl_necessary: bool | None = None
    etcnl_sufficient: bool | None = None
    assumption_gramian_holds: bool | None = None
    range_C_in_D1: bool | None = None
    range_C_in_D2: bool | None = None
    obstruction_witness: Vector | None = None
    gramian_condition_number: float | None = None
    conditional: bool = False
    witnesses: dict[str, Vector] = Field(default_factory=dict)
    notes: list[str] = Field(default_factory=list)

    @model_validator(mode="after")
    def check_consistency(self) -> "ControllabilityReport":
        if (
            self.l2_terminal_controllable is not None
            and self.rank_D1 is not None
            and self.rank_D1_plus_D2 is not None
        ):
            expected = self.rank_D1 == self.rank_D1_plus_D2 == self.d
            if self.l2_terminal_controllable != expected:
                raise ValueError("l2 verdict disagrees with the reported ranks")
        if self.etcnl_sufficient and self.etcnl_necessary is False:
            raise ValueError("a sufficient ETCNL verdict requires the necessary one")
        return self

    def merge(self, other: "ControllabilityReport") -> "ControllabilityReport":
        """Combine two partial reports; fields set in other win, except the
        obstruction witness, which keeps the first one found."""
        if other.d != self.d:
            raise InvalidInputError("cannot merge reports of different dimensions")
        update = {
            key: value
            for key, value in other
            if value is not None
            and key not in ("d", "witnesses", "notes", "conditional", "obstruction_witness")
        }
        witnesses = {**self.witnesses, **other.witnesses}
        update["witnesses"] = witnesses
        update["notes"] = [*self.notes, *other.notes]
        update["conditional"] = self.conditional or other.conditional
        update["obstruction_witness"] = (
            self.obstruction_witness
            if self.obstruction_witness is not None
            else other.obstruction_witness
        )
        return self.model_copy(update=update)


def _range_contained(C: FloatArray, D: FloatArray) -> bool:
    """Range(C) subset of Range(D), by rank([D | C]) == rank(D)."""
    return rank_with_tolerance(np.hstack([D, C]))[0] == rank_with_tolerance(D)[0]


def reduce_full_system(f: FullSystem) -> MeanFieldSystem:
    """Remove C1_0 X from the diffusion with the feedback u = u' - M X.

    M = pinv(D1) C1_0 is the minimum-norm solution of D1 M = C1_0.

    Raises:
        NotReducibleError: If Range(C1_0) is not inside Range(D1); the error
            carries the first column of C1_0 that D1 cannot produce
    """
    rank_D1, _ = rank_with_tolerance(f.D1)
    for j in range(f.d):
        column = f.C1_0[:, j : j + 1]
        if rank_with_tolerance(np.hstack([f.D1, column]))[0] > rank_D1:
            raise NotReducibleError(
                f"column {j} of C1_0 is not in the range of D1",
                witness_column=j,
                column=column.ravel().copy(),
            )

    M = np.linalg.pinv(f.D1) @ f.C1_0
    residual = float(np.linalg.norm(f.D1 @ M - f.C1_0))
    if residual > REDUCTION_RESIDUAL_TOL * max(float(np.linalg.norm(f.C1_0)), 1.0):
        raise NotReducibleError(
            f"D1 M = C1_0 solved only to residual {residual:.3e}",
            witness_column=int(np.argmax(np.linalg.norm(f.D1 @ M - f.C1_0, axis=0))),
            column=f.C1_0[:, 0].copy(),
        )
    logger.debug(f"Reduced full system with |M|={np.linalg.norm(M):.3e}")

    return MeanFieldSystem(
        d=f.d,
        n=f.n,
        T=f.T,
        A1=f.A1_0 - f.B1 @ M,
        A2=f.A2_0 - f.B2 @ M,
        B1=f.B1,
        B2=f.B2,
        C=f.C2_0 - f.D2 @ M,
        D1=f.D1,
        D2=f.D2,
    )


def reduction_gain(f: FullSystem) -> FloatArray:
    """The M of reduce_full_system (n x d)."""
    return np.linalg.pinv(f.D1) @ f.C1_0


def augment_system(sys: MeanFieldSystem) -> AugmentedSystem:
    d = sys.d
    Cbar = np.zeros((2 * d, 2 * d))
    Cbar[:d, d:] = sys.C
    return AugmentedSystem(
        Abar=linalg.block_diag(sys.A1, sys.A1 + sys.A2),
        Bbar=linalg.block_diag(sys.B1, sys.B1 + sys.B2),
        Cbar=Cbar,
    )


def check_l2_terminal_controllability(sys: MeanFieldSystem) -> ControllabilityReport:
    """Rank test rank(D1) = rank(D1 + D2) = d for square-integrable controls."""
    rank_D1, _ = rank_with_tolerance(sys.D1)
    rank_sum, _ = rank_with_tolerance(sys.D)
    in_range = _range_contained(sys.C, sys.D1)
    controllable = rank_D1 == rank_sum == sys.d

    notes = []
    if not in_range:
        logger.warning("Range(C) is not contained in Range(D1); l2 verdict is conditional")
        notes.append("Range(C) not in Range(D1): the rank test assumes it, verdict is conditional")

    witnesses = {}
    witness = None
    if not controllable:
        witness = null_left_witness(sys.D1) if rank_D1 < sys.d else null_left_witness(sys.D)
        if witness is not None:
            witnesses["l2"] = witness

    return ControllabilityReport(
        d=sys.d,
        rank_D1=rank_D1,
        rank_D1_plus_D2=rank_sum,
        l2_terminal_controllable=controllable,
        range_C_in_D1=in_range,
        obstruction_witness=witness,
        conditional=not in_range,
        witnesses=witnesses,
        notes=notes,
    )


def check_etcnl(sys: MeanFieldSystem) -> ControllabilityReport:
    """Kalman-type necessity and rank(D2) = d sufficiency for reaching all normal laws."""
    notes = []
    if np.any(sys.D1) or np.any(sys.B1):
        logger.warning("ETCNL conditions are stated for D1 = 0 and B1 = 0")
        notes.append("D1 or B1 is non-zero; ETCNL conditions are stated for D1 = B1 = 0")

    block = kalman_block(sys.A1, sys.D2, sys.d)
    kalman_rank, _ = rank_with_tolerance(block)
    rank_D2, _ = rank_with_tolerance(sys.D2)
    necessary = kalman_rank == sys.d
    sufficient = rank_D2 == sys.d
    in_range = _range_contained(sys.C, sys.D2)
    if not in_range:
        logger.warning("Range(C) is not contained in Range(D2); ETCNL verdict is conditional")
        notes.append("Range(C) not in Range(D2): C cannot be absorbed, verdict is conditional")

    witness = None if necessary else null_left_witness(block)
    return ControllabilityReport(
        d=sys.d,
        rank_D2=rank_D2,
        kalman_rank=kalman_rank,
        etcnl_necessary=necessary,
        etcnl_sufficient=sufficient,
        range_C_in_D2=in_range,
        obstruction_witness=witness,
        conditional=not in_range,
        witnesses={"etcnl": witness} if witness is not None else {},
        notes=notes,
    )


def deterministic_gramian(
    Aeff: ArrayLike,
    Beff: ArrayLike,
    T: float,
    rel_tol: float | None = None,
    settings: Settings | None = None,
) -> FloatArray:
    """Integral of exp(-t A) B B^T exp(-t A^T) over [0, T].

    Args:
        Aeff: d x d generator
        Beff: d x n input matrix
        T: Horizon, must be positive
        rel_tol: Relative quadrature tolerance (settings default 1e-10)
        settings: Source of defaults

    Returns:
        Symmetric PSD d x d Gramian

    Raises:
        InvalidInputError: If T is not positive
        NumericError: If the quadrature budget is exhausted
    """
    settings = settings or get_settings()
    if not T > 0:
        raise InvalidInputError(f"horizon must be positive, got {T}")
    A = np.atleast_2d(np.asarray(Aeff, dtype=float))
    B = np.atleast_2d(np.asarray(Beff, dtype=float))
    BBt = B @ B.T

    def integrand(t: float) -> FloatArray:
        E = matrix_exponential(A, -t)
        return E @ BBt @ E.T

    G = adaptive_integral(
        integrand,
        0.0,
        T,
        rel_tol=rel_tol or settings.quadrature_rel_tol,
        max_subintervals=settings.quadrature_max_subintervals,
    )
    return 0.5 * (G + G.T)


def check_assumption_gramian(
    sys: MeanFieldSystem, settings: Settings | None = None
) -> ControllabilityReport:
    """Invertibility of blockdiag(B1, G2), G2 the Gramian of (A1 + A2, B1 + B2)."""
    notes = []
    rank_B1, _ = rank_with_tolerance(sys.B1)
    b1_ok = sys.n == sys.d and rank_B1 == sys.d
    if sys.n != sys.d:
        notes.append(
            f"B1 is {sys.d}x{sys.n}: a non-square diagonal block cannot be invertible"
        )
    elif not b1_ok:
        notes.append(f"B1 has rank {rank_B1} < {sys.d}")

    G2 = deterministic_gramian(sys.A_mean, sys.B, sys.T, settings=settings)
    rank_G2, _ = rank_with_tolerance(G2)
    g2_ok = rank_G2 == sys.d
    if not g2_ok:
        notes.append(f"mean Gramian has rank {rank_G2} < {sys.d}")
    condition = float(np.linalg.cond(G2))

    holds = b1_ok and g2_ok
    if not holds:
        logger.warning(f"Gramian assumption fails: {'; '.join(notes)}")
    return ControllabilityReport(
        d=sys.d,
        assumption_gramian_holds=holds,
        gramian_condition_number=condition,
        notes=notes,
    )


def analyze_system(
    sys: MeanFieldSystem, settings: Settings | None = None
) -> ControllabilityReport:
    """Run every check and merge the partial reports."""
    report = check_l2_terminal_controllability(sys)
    report = report.merge(check_etcnl(sys))
    report = report.merge(check_assumption_gramian(sys, settings=settings))
    logger.info(
        f"Analyzed d={sys.d}, n={sys.n}: l2={report.l2_terminal_controllable}, "
        f"etcnl necessary={report.etcnl_necessary}, sufficient={report.etcnl_sufficient}, "
        f"gramian={report.assumption_gramian_holds}"
    )
    return report


def absorb_mean_diffusion(sys: MeanFieldSystem) -> tuple[MeanFieldSystem, FloatArray]:
    """Cancel C E[X] in the diffusion with the mean gain u = v - N E[X].

    N solves (D1 + D2) N = C. The returned system has C = 0 and mean drift
    A2 - (B1 + B2) N; it describes the same process when the control carries
    mean_gain = -N.

    Raises:
        NotReducibleError: If Range(C) is not inside Range(D1 + D2)
    """
    D = sys.D
    for j in range(sys.d):
        column = sys.C[:, j : j + 1]
        if rank_with_tolerance(np.hstack([D, column]))[0] > rank_with_tolerance(D)[0]:
            raise NotReducibleError(
                f"column {j} of C is not in the range of D1 + D2",
                witness_column=j,
                column=column.ravel().copy(),
            )
    N = np.linalg.pinv(D) @ sys.C
    reduced = sys.model_copy(update={"A2": sys.A2 - sys.B @ N, "C": np.zeros_like(sys.C)})
    return reduced, N


def similarity_transform(sys: MeanFieldSystem, S: ArrayLike) -> MeanFieldSystem:
    """State change X -> S X."""
    S_ = np.atleast_2d(np.asarray(S, dtype=float))
    S_inv = np.linalg.inv(S_)
    return MeanFieldSystem(
        d=sys.d,
        n=sys.n,
        T=sys.T,
        A1=S_ @ sys.A1 @ S_inv,
        A2=S_ @ sys.A2 @ S_inv,
        B1=S_ @ sys.B1,
        B2=S_ @ sys.B2,
        C=S_ @ sys.C @ S_inv,
        D1=S_ @ sys.D1,
        D2=S_ @ sys.D2,
    )
