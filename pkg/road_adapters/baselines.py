"""
Baseline adapters: LoRA, OFT with 2x2 Cayley blocks, and diagonal output scaling.
"""

import logging
from dataclasses import dataclass

import numpy as np

from .exceptions import DimensionError
from .numeric import DenseMatrix, DenseVector, SeededRng
from .road import FactoredRotation, apply_factored_batch, entry_gradients, pair_swap

logger = logging.getLogger(__name__)


@dataclass
class LoraAdapter:
    """Low-rank update ``delta W = scaling * B A`` on a frozen ``(d1, d2)`` weight."""

    B: np.ndarray
    A: np.ndarray
    scaling: float = 1.0

    def __post_init__(self) -> None:
        self.B = np.array(self.B, dtype=np.float64)
        self.A = np.array(self.A, dtype=np.float64)
        if self.B.ndim != 2 or self.A.ndim != 2 or self.B.shape[1] != self.A.shape[0]:
            raise DimensionError(
                f"LoRA factors do not chain: B {self.B.shape}, A {self.A.shape}"
            )

    @property
    def r(self) -> int:
        return int(self.B.shape[1])

    @property
    def d1(self) -> int:
        return int(self.B.shape[0])

    @property
    def d2(self) -> int:
        return int(self.A.shape[1])

    @classmethod
    def init(
        cls, d1: int, d2: int, r: int, rng: SeededRng, scaling: float = 1.0
    ) -> "LoraAdapter":
        """
        Standard initialization: ``B`` zero, ``A`` random, so the update starts at zero.

        Args:
            d1: Input dimension of the frozen layer
            d2: Output dimension of the frozen layer
            r: Rank
            rng: Random stream for ``A``
            scaling: Multiplier on ``B A``
        """
        bound = 1.0 / np.sqrt(d2)
        return cls(np.zeros((d1, r)), rng.uniform(-bound, bound, (r, d2)), scaling)

    @classmethod
    def random(
        cls, d1: int, d2: int, r: int, rng: SeededRng, scaling: float = 1.0
    ) -> "LoraAdapter":
        return cls(
            rng.uniform(-1.0, 1.0, (d1, r)), rng.uniform(-1.0, 1.0, (r, d2)), scaling
        )

    def copy(self) -> "LoraAdapter":
        return LoraAdapter(self.B.copy(), self.A.copy(), self.scaling)

    def delta(self) -> DenseMatrix:
        return DenseMatrix(self.scaling * (self.B @ self.A))

    def merged_weight(self, W0: DenseMatrix) -> DenseMatrix:
        """``W0 + scaling * B A``; serving through it carries no adapter cost."""
        if W0.shape != (self.d1, self.d2):
            raise DimensionError(
                f"W0 {W0.shape} does not match LoRA ({self.d1}, {self.d2})"
            )
        return DenseMatrix(W0.data + self.scaling * (self.B @ self.A))

    def parameters(self) -> dict:
        return {"B": self.B, "A": self.A}

    def num_parameters(self) -> int:
        return lora_param_count(self.d1, self.d2, self.r)

    def forward_batch(self, X: np.ndarray, H: np.ndarray) -> np.ndarray:
        return H + self.scaling * ((X @ self.B) @ self.A)

    def backward_batch(self, X: np.ndarray, H: np.ndarray, dZ: np.ndarray) -> tuple:
        X2 = X.reshape(-1, self.d1)
        dZ2 = dZ.reshape(-1, self.d2)
        U = X2 @ self.B
        dA = self.scaling * (U.T @ dZ2)
        dU = self.scaling * (dZ2 @ self.A.T)
        dB = X2.T @ dU
        dX = (dU @ self.B.T).reshape(X.shape)
        return {"B": dB, "A": dA}, dX, dZ


def lora_apply(adapter: LoraAdapter, W0: DenseMatrix, x: DenseVector) -> DenseVector:
    """
    Adapted output ``(W0 + s B A)^T x`` without forming ``B A``.

    Raises:
        DimensionError: If shapes do not conform
    """
    if W0.shape != (adapter.d1, adapter.d2) or x.len != adapter.d1:
        raise DimensionError(
            f"lora_apply got W0 {W0.shape}, x of length {x.len} "
            f"for LoRA ({adapter.d1}, {adapter.d2})"
        )
    base = x.data @ W0.data
    return DenseVector(base + adapter.scaling * ((x.data @ adapter.B) @ adapter.A))


def cayley_block(qi: float) -> np.ndarray:
    """
    2x2 orthogonal block ``(I + Q)(I - Q)^-1`` with ``Q = [[0, qi], [-qi, 0]]``.

    ``I - Q`` has determinant ``1 + qi**2`` and is always invertible.
    """
    Q = np.array([[0.0, qi], [-qi, 0.0]])
    eye = np.eye(2)
    # (I + Q) and (I - Q)^-1 commute
    return np.linalg.solve(eye - Q, eye + Q)


def _cayley_cos_sin(q: np.ndarray) -> tuple:
    denom = 1.0 + q * q
    return (1.0 - q * q) / denom, 2.0 * q / denom


@dataclass
class CayleyBlockAdapter:
    """OFT restricted to 2x2 blocks; one skew parameter per output pair."""

    q: np.ndarray
    w: int = 2

    def __post_init__(self) -> None:
        if self.w != 2:
            raise ValueError(f"Only 2x2 Cayley blocks are supported, got w={self.w}")
        self.q = np.array(self.q, dtype=np.float64)
        if self.q.ndim != 1:
            raise DimensionError(f"q must be a vector, got shape {self.q.shape}")

    @property
    def d2(self) -> int:
        return 2 * int(self.q.shape[0])

    @classmethod
    def identity(cls, d2: int) -> "CayleyBlockAdapter":
        if d2 <= 0 or d2 % 2:
            raise DimensionError(f"d2 must be a positive even count, got {d2}")
        return cls(np.zeros(d2 // 2))

    @classmethod
    def random(
        cls, d2: int, rng: SeededRng, scale: float = 1.0
    ) -> "CayleyBlockAdapter":
        if d2 <= 0 or d2 % 2:
            raise DimensionError(f"d2 must be a positive even count, got {d2}")
        return cls(rng.uniform(-scale, scale, d2 // 2))

    def copy(self) -> "CayleyBlockAdapter":
        return CayleyBlockAdapter(self.q.copy())

    def blocks(self) -> np.ndarray:
        """Realized blocks, shape ``(d2 // 2, 2, 2)``."""
        c, s = _cayley_cos_sin(self.q)
        return np.stack([np.stack([c, s], axis=-1), np.stack([-s, c], axis=-1)], axis=1)

    def factorize(self) -> FactoredRotation:
        c, s = _cayley_cos_sin(self.q)
        return FactoredRotation(np.repeat(c, 2), np.stack([s, -s], axis=1).ravel())

    def parameters(self) -> dict:
        return {"q": self.q}

    def num_parameters(self) -> int:
        return oft_param_count(self.d2)

    def forward_batch(self, X: np.ndarray, H: np.ndarray) -> np.ndarray:
        return apply_factored_batch(self.factorize(), H)

    def backward_batch(self, X: np.ndarray, H: np.ndarray, dZ: np.ndarray) -> tuple:
        q = self.q
        denom = (1.0 + q * q) ** 2
        dc = -4.0 * q / denom
        ds = 2.0 * (1.0 - q * q) / denom
        dE = entry_gradients(H, dZ)
        dq = dE[:, 0] * dc + dE[:, 1] * ds - dE[:, 2] * ds + dE[:, 3] * dc
        f = self.factorize()
        dH = dZ * f.v1 + pair_swap(dZ * f.v2)
        return {"q": dq}, None, dH


@dataclass
class DiagScaleAdapter:
    """Per-output multiplicative gains on a frozen layer's output."""

    l: np.ndarray

    def __post_init__(self) -> None:
        self.l = np.array(self.l, dtype=np.float64)
        if self.l.ndim != 1:
            raise DimensionError(f"l must be a vector, got shape {self.l.shape}")

    @property
    def d2(self) -> int:
        return int(self.l.shape[0])

    @classmethod
    def identity(cls, d2: int) -> "DiagScaleAdapter":
        return cls(np.ones(d2))

    @classmethod
    def random(
        cls, d2: int, rng: SeededRng, low: float = 0.5, high: float = 1.5
    ) -> "DiagScaleAdapter":
        return cls(rng.uniform(low, high, d2))

    def copy(self) -> "DiagScaleAdapter":
        return DiagScaleAdapter(self.l.copy())

    def parameters(self) -> dict:
        return {"l": self.l}

    def num_parameters(self) -> int:
        return self.d2

    def forward_batch(self, X: np.ndarray, H: np.ndarray) -> np.ndarray:
        return H * self.l

    def backward_batch(self, X: np.ndarray, H: np.ndarray, dZ: np.ndarray) -> tuple:
        dl = (dZ * H).reshape(-1, self.d2).sum(axis=0)
        return {"l": dl}, None, dZ * self.l


def diag_scale_apply(adapter: DiagScaleAdapter, h: DenseVector) -> DenseVector:
    """``z_j = l_j * h_j``."""
    if h.len != adapter.d2:
        raise DimensionError(f"Expected vector of length {adapter.d2}, got {h.len}")
    return DenseVector(adapter.l * h.data)


def lora_param_count(d1: int, d2: int, r: float) -> float:
    return r * (d1 + d2)


def oft_param_count(d2: int) -> int:
    return d2 // 2


def lora_flops_per_token(d1: int, d2: int, r: int) -> int:
    """Adapter FLOPs of the unmerged LoRA path: ``2 r (d1 + d2)``."""
    return 2 * r * (d1 + d2)


def road_flops_per_token(d2: int) -> int:
    """Two multiplies and one add per output element."""
    return 3 * d2


def diag_flops_per_token(d2: int) -> int:
    return d2


def best_diagonal_gains(H: np.ndarray, T: np.ndarray) -> np.ndarray:
    """Closed-form least-squares gains minimizing ``|H * l - T|^2`` per column."""
    num = np.sum(H * T, axis=0)
    den = np.sum(H * H, axis=0)
    return np.where(den > 0, num / np.where(den > 0, den, 1.0), 1.0)
