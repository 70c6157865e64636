"""
Dense linear algebra substrate, deterministic RNG and a finite-difference oracle.

Matrices are row-major and applied transposed: ``matvec(W, x)`` computes
``W^T x``, so a pretrained weight ``W0`` of shape ``(d1, d2)`` maps an input of
length ``d1`` to an output of length ``d2``.
"""

import logging
from dataclasses import dataclass
from typing import Callable, Iterable, Sequence, Union

import numpy as np

from .exceptions import DimensionError, NumericError

logger = logging.getLogger(__name__)

ArrayLike = Union[np.ndarray, Sequence[float], Sequence[Sequence[float]]]


def _frozen_array(values: ArrayLike, ndim: int, what: str) -> np.ndarray:
    arr = np.array(values, dtype=np.float64, order="C")
    if arr.ndim != ndim:
        raise DimensionError(
            f"{what} must be {ndim}-dimensional, got shape {arr.shape}"
        )
    if not np.isfinite(arr).all():
        raise NumericError(f"{what} contains non-finite entries")
    arr.flags.writeable = False
    return arr


@dataclass(frozen=True)
class DenseVector:
    """Immutable real64 vector."""

    data: np.ndarray

    def __post_init__(self) -> None:
        object.__setattr__(self, "data", _frozen_array(self.data, 1, "DenseVector"))

    @property
    def len(self) -> int:
        return int(self.data.shape[0])

    def __len__(self) -> int:
        return self.len

    @classmethod
    def from_values(cls, values: Iterable[float]) -> "DenseVector":
        return cls(np.fromiter(values, dtype=np.float64))

    @classmethod
    def zeros(cls, n: int) -> "DenseVector":
        return cls(np.zeros(n))

    @classmethod
    def random(
        cls, n: int, rng: "SeededRng", low: float = -1.0, high: float = 1.0
    ) -> "DenseVector":
        return cls(rng.uniform(low, high, n))

    def __add__(self, other: "DenseVector") -> "DenseVector":
        _check_same_length(self, other)
        return DenseVector(self.data + other.data)

    def __sub__(self, other: "DenseVector") -> "DenseVector":
        _check_same_length(self, other)
        return DenseVector(self.data - other.data)

    def scale(self, factor: float) -> "DenseVector":
        return DenseVector(factor * self.data)

    def dot(self, other: "DenseVector") -> float:
        _check_same_length(self, other)
        return float(self.data @ other.data)

    def norm(self) -> float:
        return float(np.linalg.norm(self.data))


@dataclass(frozen=True)
class DenseMatrix:
    """Immutable real64 matrix stored row-major."""

    data: np.ndarray

    def __post_init__(self) -> None:
        object.__setattr__(self, "data", _frozen_array(self.data, 2, "DenseMatrix"))

    @property
    def rows(self) -> int:
        return int(self.data.shape[0])

    @property
    def cols(self) -> int:
        return int(self.data.shape[1])

    @property
    def shape(self) -> tuple:
        return (self.rows, self.cols)

    @classmethod
    def from_rows(cls, rows: Sequence[Sequence[float]]) -> "DenseMatrix":
        return cls(np.array(rows, dtype=np.float64))

    @classmethod
    def identity(cls, n: int) -> "DenseMatrix":
        return cls(np.eye(n))

    @classmethod
    def zeros(cls, rows: int, cols: int) -> "DenseMatrix":
        return cls(np.zeros((rows, cols)))

    @classmethod
    def random(
        cls,
        rows: int,
        cols: int,
        rng: "SeededRng",
        low: float = -1.0,
        high: float = 1.0,
    ) -> "DenseMatrix":
        return cls(rng.uniform(low, high, (rows, cols)))

    def transpose(self) -> "DenseMatrix":
        return DenseMatrix(self.data.T)

    def matmul(self, other: "DenseMatrix") -> "DenseMatrix":
        if self.cols != other.rows:
            raise DimensionError(f"Cannot multiply {self.shape} by {other.shape}")
        return DenseMatrix(self.data @ other.data)

    def column(self, j: int) -> DenseVector:
        return DenseVector(self.data[:, j])


def _check_same_length(a: DenseVector, b: DenseVector) -> None:
    if a.len != b.len:
        raise DimensionError(f"Vector lengths differ: {a.len} vs {b.len}")


class SeededRng:
    """
    Deterministic generator on numpy's counter-based Philox bit generator.

    Identical seeds yield identical streams regardless of how many workers
    draw from children created with :meth:`child`.
    """

    algorithm_id = "philox4x64"

    def __init__(self, seed: int, spawn_key: Sequence[int] = ()) -> None:
        if seed < 0 or seed >= 2**64:
            raise ValueError(f"Seed must be an unsigned 64-bit integer, got {seed}")
        self.seed = int(seed)
        self.spawn_key = tuple(spawn_key)
        sequence = np.random.SeedSequence(self.seed, spawn_key=self.spawn_key)
        self._generator = np.random.Generator(np.random.Philox(sequence))

    def child(self, key: int) -> "SeededRng":
        """Derive an independent stream addressed by ``key``."""
        return SeededRng(self.seed, self.spawn_key + (int(key),))

    @property
    def generator(self) -> np.random.Generator:
        return self._generator

    def uniform(self, low: float, high: float, size: Union[int, tuple]) -> np.ndarray:
        return self._generator.uniform(low, high, size)

    def normal(self, size: Union[int, tuple], scale: float = 1.0) -> np.ndarray:
        return self._generator.normal(0.0, scale, size)

    def permutation(self, n: int) -> np.ndarray:
        return self._generator.permutation(n)

    def __repr__(self) -> str:
        return f"SeededRng(seed={self.seed}, spawn_key={self.spawn_key})"


def matvec(W: DenseMatrix, x: DenseVector) -> DenseVector:
    """
    Apply ``W`` transposed: ``result_j = sum_i W[i, j] * x_i``.

    Args:
        W: Matrix of shape ``(d1, d2)``
        x: Vector of length ``d1``

    Returns:
        Vector of length ``d2``

    Raises:
        DimensionError: If ``W.rows != x.len``
    """
    if W.rows != x.len:
        raise DimensionError(
            f"matvec expects W.rows == x.len, got {W.rows} and {x.len}"
        )
    return DenseVector(x.data @ W.data)


def finite_diff_grad(
    f: Callable[[np.ndarray], float],
    p: Union[DenseVector, np.ndarray],
    step: float = 1e-5,
) -> DenseVector:
    """
    Central-difference gradient of a scalar function.

    Args:
        f: Function of a float64 parameter array
        p: Point at which to differentiate
        step: Probe offset, must be positive

    Returns:
        Vector with ``(f(p + step e_i) - f(p - step e_i)) / (2 step)``

    Raises:
        ValueError: If ``step`` is not positive
        NumericError: If ``f`` is non-finite at a shifted point
    """
    if not step > 0:
        raise ValueError(f"step must be positive, got {step}")
    base = np.array(p.data if isinstance(p, DenseVector) else p, dtype=np.float64)
    grad = np.empty_like(base)
    shifted = base.copy()
    for i in range(base.shape[0]):
        shifted[i] = base[i] + step
        plus = float(f(shifted))
        shifted[i] = base[i] - step
        minus = float(f(shifted))
        shifted[i] = base[i]
        if not (np.isfinite(plus) and np.isfinite(minus)):
            raise NumericError(
                f"Non-finite function value at coordinate {i}", coordinate=i
            )
        grad[i] = (plus - minus) / (2.0 * step)
    return DenseVector(grad)


def max_relative_error(
    analytic: np.ndarray, numeric: np.ndarray, floor: float = 1e-12
) -> float:
    """Largest absolute deviation scaled by the largest reference magnitude."""
    analytic = np.asarray(analytic, dtype=np.float64).ravel()
    numeric = np.asarray(numeric, dtype=np.float64).ravel()
    if analytic.shape != numeric.shape:
        raise DimensionError(
            f"Gradient shapes differ: {analytic.shape} vs {numeric.shape}"
        )
    if analytic.size == 0:
        return 0.0
    scale = max(float(np.max(np.abs(numeric))), float(np.max(np.abs(analytic))), floor)
    return float(np.max(np.abs(analytic - numeric)) / scale)

