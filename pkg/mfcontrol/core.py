"""Deterministic linear algebra primitives shared by every other module.

All functions are pure: they take numpy arrays (or array-likes) and return
new arrays, so they can be called from any number of threads.
"""

import logging
from collections.abc import Callable, Sequence
from dataclasses import dataclass
from typing import Annotated, Any

import numpy as np
from numpy.typing import ArrayLike, NDArray
from pydantic import (
    BaseModel,
    BeforeValidator,
    ConfigDict,
    PlainSerializer,
    model_validator,
)
from scipy import integrate, linalg

from mfcontrol.errors import InvalidInputError, NotPSDError, NumericError, RangeError

logger = logging.getLogger(__name__)

FloatArray = NDArray[np.float64]

SYMMETRY_TOL = 1e-12
PSD_TOL = 1e-10
# Absolute floor for adaptive quadrature so integrands that cancel to zero terminate
QUADRATURE_ABS_FLOOR = 1e-14


def as_finite_array(value: ArrayLike, name: str = "array") -> FloatArray:
    """Convert to a float array and reject NaN/inf entries."""
    arr = np.array(value, dtype=float)
    if not np.all(np.isfinite(arr)):
        raise InvalidInputError(f"{name} has non-finite entries")
    return arr


def _to_vector(value: Any) -> FloatArray:
    arr = np.atleast_1d(np.array(value, dtype=float))
    if arr.ndim != 1:
        raise ValueError(f"expected a vector, got shape {arr.shape}")
    if not np.all(np.isfinite(arr)):
        raise ValueError("entries must be finite")
    return arr


def _to_matrix(value: Any) -> FloatArray:
    arr = np.array(value, dtype=float)
    if arr.ndim < 2:
        arr = arr.reshape(1, -1) if arr.ndim == 1 else arr.reshape(1, 1)
    if arr.ndim != 2:
        raise ValueError(f"expected a matrix, got shape {arr.shape}")
    if not np.all(np.isfinite(arr)):
        raise ValueError("entries must be finite")
    return arr


def _to_list(arr: FloatArray) -> list[Any]:
    return arr.tolist()


# Pydantic field types: nested lists in, nested lists out
Vector = Annotated[
    np.ndarray,
    BeforeValidator(_to_vector),
    PlainSerializer(_to_list, return_type=list),
]
Matrix = Annotated[
    np.ndarray,
    BeforeValidator(_to_matrix),
    PlainSerializer(_to_list, return_type=list),
]


def symmetry_scale(S: FloatArray) -> float:
    """Magnitude used for relative symmetry/PSD tolerances (floored at 1)."""
    return max(float(np.max(np.abs(S))) if S.size else 0.0, 1.0)


class GaussianLaw(BaseModel):
    """Normal law N(mean, covariance) on R^d."""

    model_config = ConfigDict(arbitrary_types_allowed=True, frozen=True)

    mean: Vector
    covariance: Matrix

    @model_validator(mode="after")
    def check_covariance(self) -> "GaussianLaw":
        d = self.mean.shape[0]
        if self.covariance.shape != (d, d):
            raise ValueError(
                f"covariance shape {self.covariance.shape} does not match mean length {d}"
            )
        S = self.covariance
        if np.max(np.abs(S - S.T)) > SYMMETRY_TOL * symmetry_scale(S):
            raise ValueError("covariance is not symmetric")
        eigenvalues = np.linalg.eigvalsh(0.5 * (S + S.T))
        floor = -PSD_TOL * max(float(eigenvalues[-1]), 1.0)
        if eigenvalues[0] < floor:
            raise ValueError(
                f"covariance has eigenvalue {eigenvalues[0]:.3e} below {floor:.3e}"
            )
        return self

    @property
    def dim(self) -> int:
        return int(self.mean.shape[0])

    @property
    def variance(self) -> float:
        """Scalar variance of a one-dimensional law."""
        if self.dim != 1:
            raise InvalidInputError("variance is only defined for d=1 laws")
        return float(self.covariance[0, 0])

    @classmethod
    def point(cls, x: ArrayLike) -> "GaussianLaw":
        """Dirac law at x (zero covariance)."""
        mean = np.atleast_1d(np.array(x, dtype=float))
        return cls(mean=mean, covariance=np.zeros((mean.size, mean.size)))

    @classmethod
    def scalar(cls, mean: float, variance: float) -> "GaussianLaw":
        return cls(mean=[mean], covariance=[[variance]])


@dataclass(frozen=True)
class SpectralDecomposition:
    """Eigenpairs of a PSD matrix, eigenvalues descending."""

    eigenvalues: FloatArray
    eigenvectors: FloatArray  # columns

    @property
    def pairs(self) -> list[tuple[float, FloatArray]]:
        return [
            (float(mu), self.eigenvectors[:, k].copy())
            for k, mu in enumerate(self.eigenvalues)
        ]

    def reconstruct(self) -> FloatArray:
        V = self.eigenvectors
        return (V * self.eigenvalues) @ V.T


def orient_sign(v: FloatArray) -> FloatArray:
    """Flip v so its first component of largest magnitude is positive."""
    magnitude = np.abs(v)
    if magnitude.size == 0 or magnitude.max() == 0.0:
        return v
    k = int(np.flatnonzero(magnitude >= magnitude.max() * (1.0 - 1e-12))[0])
    return -v if v[k] < 0 else v


def rank_with_tolerance(
    M: ArrayLike, tol: float | None = None
) -> tuple[int, FloatArray]:
    """Numerical rank from the singular values.

    Args:
        M: Matrix to inspect
        tol: Singular values above tol count; defaults to
            max(rows, cols) * eps * largest singular value

    Returns:
        Tuple of (rank, singular values in descending order)

    Raises:
        InvalidInputError: If M has non-finite entries
    """
    A = np.atleast_2d(as_finite_array(M, "matrix"))
    if A.size == 0:
        return 0, np.zeros(0)
    singular_values = np.linalg.svd(A, compute_uv=False)
    if tol is None:
        tol = max(A.shape) * np.finfo(float).eps * float(singular_values[0])
    if tol < 0:
        raise InvalidInputError("rank tolerance must be nonnegative")
    return int(np.sum(singular_values > tol)), singular_values


def null_left_witness(M: ArrayLike, tol: float | None = None) -> FloatArray | None:
    """Unit vector a with a^T M = 0, or None when M has full row rank.

    The first left singular vector beyond the numerical rank is returned,
    sign-normalized so results are reproducible.
    """
    A = np.atleast_2d(as_finite_array(M, "matrix"))
    d = A.shape[0]
    rank, _ = rank_with_tolerance(A, tol)
    if rank >= d:
        return None
    U, _, _ = np.linalg.svd(A, full_matrices=True)
    a = orient_sign(U[:, rank].copy())
    return a / np.linalg.norm(a)


def matrix_exponential(A: ArrayLike, t: float = 1.0) -> FloatArray:
    """exp(t A) for a square matrix A.

    Raises:
        InvalidInputError: If A is not square or not finite
        RangeError: If the exponential overflows
    """
    M = np.atleast_2d(as_finite_array(A, "generator"))
    if M.shape[0] != M.shape[1]:
        raise InvalidInputError(f"generator must be square, got {M.shape}")
    if t == 0.0:
        return np.eye(M.shape[0])
    with np.errstate(over="ignore", invalid="ignore"):
        result = linalg.expm(t * M)
    if not np.all(np.isfinite(result)):
        raise RangeError(f"exp(tA) overflows for t={t} and |A|={np.linalg.norm(M):.3e}")
    return result


def psd_spectral_decomposition(S: ArrayLike) -> SpectralDecomposition:
    """Spectral decomposition of a symmetric PSD matrix.

    Eigenvalues within round-off below zero are clipped to 0; eigenvectors
    follow the sign convention of orient_sign.

    Raises:
        InvalidInputError: If S is not square or not symmetric
        NotPSDError: If an eigenvalue is below -1e-10 * scale
    """
    A = np.atleast_2d(as_finite_array(S, "covariance"))
    if A.shape[0] != A.shape[1]:
        raise InvalidInputError(f"matrix must be square, got {A.shape}")
    if np.max(np.abs(A - A.T)) > SYMMETRY_TOL * symmetry_scale(A):
        raise InvalidInputError("matrix is not symmetric")

    eigenvalues, eigenvectors = np.linalg.eigh(0.5 * (A + A.T))
    order = np.argsort(eigenvalues)[::-1]
    eigenvalues = eigenvalues[order]
    eigenvectors = eigenvectors[:, order]

    scale = max(float(eigenvalues[0]), 1.0)
    if eigenvalues[-1] < -PSD_TOL * scale:
        raise NotPSDError(
            f"matrix is indefinite: eigenvalue {eigenvalues[-1]:.3e}",
            min_eigenvalue=float(eigenvalues[-1]),
        )
    eigenvalues = np.clip(eigenvalues, 0.0, None)
    for k in range(eigenvectors.shape[1]):
        eigenvectors[:, k] = orient_sign(eigenvectors[:, k])
    return SpectralDecomposition(eigenvalues=eigenvalues, eigenvectors=eigenvectors)


def psd_sqrt(S: ArrayLike) -> FloatArray:
    """Symmetric PSD square root, negative round-off eigenvalues clamped."""
    A = np.atleast_2d(np.array(S, dtype=float))
    eigenvalues, eigenvectors = np.linalg.eigh(0.5 * (A + A.T))
    root = np.sqrt(np.clip(eigenvalues, 0.0, None))
    return (eigenvectors * root) @ eigenvectors.T


def gaussian_w2(p: GaussianLaw, q: GaussianLaw) -> float:
    """2-Wasserstein distance between two Gaussian laws.

    W2^2 = |m1 - m2|^2 + tr(S1 + S2 - 2 (S2^1/2 S1 S2^1/2)^1/2)
    """
    if p.dim != q.dim:
        raise InvalidInputError(f"dimension mismatch: {p.dim} vs {q.dim}")
    root_q = psd_sqrt(q.covariance)
    cross = psd_sqrt(root_q @ p.covariance @ root_q)
    mean_part = float(np.sum((p.mean - q.mean) ** 2))
    cov_part = float(np.trace(p.covariance + q.covariance - 2.0 * cross))
    return float(np.sqrt(max(mean_part + cov_part, 0.0)))


def kalman_block(A: ArrayLike, B: ArrayLike, powers: int) -> FloatArray:
    """[B | A B | ... | A^(powers-1) B]."""
    A_ = np.atleast_2d(np.array(A, dtype=float))
    B_ = np.atleast_2d(np.array(B, dtype=float))
    blocks = [B_]
    for _ in range(1, powers):
        blocks.append(A_ @ blocks[-1])
    return np.hstack(blocks)


def adaptive_integral(
    f: Callable[[float], FloatArray],
    a: float,
    b: float,
    rel_tol: float,
    max_subintervals: int,
    points: Sequence[float] | None = None,
) -> FloatArray:
    """Adaptive Gauss-Kronrod integral of a vector/matrix valued function.

    Raises:
        NumericError: If the subinterval budget is exhausted or the integrand
            produces non-finite values
    """
    if b <= a:
        return np.zeros_like(np.asarray(f(a), dtype=float))
    interior = None
    if points:
        interior = [p for p in points if a < p < b] or None
    result, error, info = integrate.quad_vec(
        f,
        a,
        b,
        epsabs=QUADRATURE_ABS_FLOOR,
        epsrel=rel_tol,
        limit=max_subintervals,
        points=interior,
        full_output=True,
    )
    if info.status != 0:
        raise NumericError(
            f"adaptive quadrature on [{a}, {b}] stopped with status {info.status} "
            f"(error estimate {error:.3e}, {info.intervals.shape[0]} subintervals)"
        )
    logger.debug(
        f"Quadrature on [{a:.6g}, {b:.6g}]: {info.neval} evaluations, error {error:.3e}"
    )
    return np.asarray(result, dtype=float)
