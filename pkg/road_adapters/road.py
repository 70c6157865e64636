"""
2D rotary adapters (RoAd).

An adapter rotates (and rescales) adjacent output dimension pairs
``(2i, 2i + 1)`` of a frozen linear layer with a 2x2 block::

    R_i = [[a11 cos t11, -a12 sin t12],
           [a21 sin t21,  a22 cos t22]]

The three variants differ in how the four (angle, scale) pairs of a block are
tied. On the hot path the block-diagonal ``R`` is never materialized: it is
stored as two vectors ``v1`` (diagonal entries) and ``v2`` (signed
off-diagonal entries) and applied with ``z = v1 * h + v2 * swap(h)``.
"""

import logging
from dataclasses import dataclass, field
from enum import Enum
from typing import Union

import numpy as np

from .exceptions import DimensionError
from .numeric import DenseMatrix, DenseVector, SeededRng

logger = logging.getLogger(__name__)


class RoadVariant(Enum):
    """Parameter sharing pattern inside each 2x2 block."""

    ROAD1 = 1
    ROAD2 = 2
    ROAD4 = 4

    @property
    def params_per_block(self) -> int:
        """Length of the theta (and alpha) slice owned by one block."""
        return self.value

    @classmethod
    def parse(cls, value: Union["RoadVariant", int, str]) -> "RoadVariant":
        if isinstance(value, RoadVariant):
            return value
        text = str(value).lower().replace("road", "").strip()
        try:
            return cls(int(text))
        except ValueError:
            raise ValueError(f"Unknown RoAd variant: {value!r}") from None


VariantLike = Union[RoadVariant, int, str]


def _check_even(d2: int) -> None:
    if d2 <= 0 or d2 % 2:
        raise DimensionError(f"d2 must be a positive even count, got {d2}")


def param_count(variant: VariantLike, d2: int) -> int:
    """
    Trainable parameters of one adapted layer.

    Args:
        variant: RoAd variant
        d2: Output dimension of the adapted layer

    Returns:
        ``d2``, ``2 * d2`` or ``4 * d2`` for RoAd1/2/4

    Raises:
        DimensionError: If ``d2`` is odd
    """
    _check_even(d2)
    return RoadVariant.parse(variant).value * d2


def block_param_indices(variant: VariantLike, d2: int) -> np.ndarray:
    """
    Map each block entry (11, 12, 21, 22) to its theta/alpha position.

    Returns:
        Integer array of shape ``(d2 // 2, 4)``
    """
    _check_even(d2)
    variant = RoadVariant.parse(variant)
    blocks = np.arange(d2 // 2)[:, None]
    if variant is RoadVariant.ROAD1:
        return np.repeat(blocks, 4, axis=1)
    if variant is RoadVariant.ROAD2:
        return 2 * blocks + np.array([0, 0, 1, 1])
    return 4 * blocks + np.arange(4)


@dataclass
class RoadAdapter:
    """Trainable rotation parameters for one adapted layer."""

    variant: RoadVariant
    d2: int
    theta: np.ndarray
    alpha: np.ndarray

    def __post_init__(self) -> None:
        self.variant = RoadVariant.parse(self.variant)
        _check_even(self.d2)
        self.theta = np.array(self.theta, dtype=np.float64)
        self.alpha = np.array(self.alpha, dtype=np.float64)
        expected = self.variant.params_per_block * self.n_blocks
        for name, values in (("theta", self.theta), ("alpha", self.alpha)):
            if values.shape != (expected,):
                raise DimensionError(
                    f"{self.variant.name} with d2={self.d2} needs {name} of length "
                    f"{expected}, got shape {values.shape}"
                )

    @property
    def n_blocks(self) -> int:
        return self.d2 // 2

    @classmethod
    def identity(cls, variant: VariantLike, d2: int) -> "RoadAdapter":
        """Freshly initialized adapter: every angle 0, every scale 1."""
        variant = RoadVariant.parse(variant)
        _check_even(d2)
        n = variant.params_per_block * d2 // 2
        return cls(variant, d2, np.zeros(n), np.ones(n))

    @classmethod
    def random(
        cls,
        variant: VariantLike,
        d2: int,
        rng: SeededRng,
        theta_scale: float = np.pi,
        alpha_low: float = 0.5,
        alpha_high: float = 1.5,
    ) -> "RoadAdapter":
        variant = RoadVariant.parse(variant)
        _check_even(d2)
        n = variant.params_per_block * d2 // 2
        theta = rng.uniform(-theta_scale, theta_scale, n)
        alpha = rng.uniform(alpha_low, alpha_high, n)
        return cls(variant, d2, theta, alpha)

    def copy(self) -> "RoadAdapter":
        return RoadAdapter(self.variant, self.d2, self.theta.copy(), self.alpha.copy())

    def block_slice(self, block: int) -> slice:
        """Positions of ``theta``/``alpha`` owned by ``block``."""
        k = self.variant.params_per_block
        return slice(k * block, k * (block + 1))

    def parameters(self) -> dict:
        return {"theta": self.theta, "alpha": self.alpha}

    def num_parameters(self) -> int:
        return param_count(self.variant, self.d2)

    def forward_batch(self, X: np.ndarray, H: np.ndarray) -> np.ndarray:
        return apply_factored_batch(factorize(self), H)

    def backward_batch(self, X: np.ndarray, H: np.ndarray, dZ: np.ndarray) -> tuple:
        grads = grad_batch(self, H, dZ)
        return {"theta": grads.d_theta, "alpha": grads.d_alpha}, None, grads.d_h


@dataclass(frozen=True)
class FactoredRotation:
    """Two-vector form of a block-diagonal rotation."""

    v1: np.ndarray
    v2: np.ndarray

    def __post_init__(self) -> None:
        v1 = np.array(self.v1, dtype=np.float64)
        v2 = np.array(self.v2, dtype=np.float64)
        if v1.ndim != 1 or v1.shape != v2.shape or v1.shape[0] % 2:
            raise DimensionError(
                f"v1/v2 must be equal even-length vectors, got {v1.shape}, {v2.shape}"
            )
        v1.flags.writeable = False
        v2.flags.writeable = False
        object.__setattr__(self, "v1", v1)
        object.__setattr__(self, "v2", v2)

    @property
    def d2(self) -> int:
        return int(self.v1.shape[0])


@dataclass(frozen=True)
class RoadGradient:
    """Gradients of ``<upstream, z>`` for one adapter application."""

    d_theta: np.ndarray
    d_alpha: np.ndarray
    d_h: np.ndarray = field(repr=False)


def _entry_angles(adapter: RoadAdapter) -> tuple:
    idx = block_param_indices(adapter.variant, adapter.d2)
    return adapter.theta[idx], adapter.alpha[idx], idx


def _trig(theta_e: np.ndarray) -> np.ndarray:
    trig = np.empty_like(theta_e)
    trig[:, 0] = np.cos(theta_e[:, 0])
    trig[:, 1] = -np.sin(theta_e[:, 1])
    trig[:, 2] = np.sin(theta_e[:, 2])
    trig[:, 3] = np.cos(theta_e[:, 3])
    return trig


def block_entries(adapter: RoadAdapter) -> np.ndarray:
    """Entries ``(R11, R12, R21, R22)`` of every block, shape ``(d2 // 2, 4)``."""
    theta_e, alpha_e, _ = _entry_angles(adapter)
    return alpha_e * _trig(theta_e)


def build_blocks(adapter: RoadAdapter) -> np.ndarray:
    """
    Materialize the ``d2 // 2`` 2x2 blocks.

    Returns:
        Array of shape ``(d2 // 2, 2, 2)``
    """
    return block_entries(adapter).reshape(adapter.n_blocks, 2, 2)


def factorize(adapter: RoadAdapter) -> FactoredRotation:
    """
    Fold the blocks into two vectors.

    ``v1`` holds ``(R_i[0, 0], R_i[1, 1])`` and ``v2`` holds
    ``(R_i[0, 1], R_i[1, 0])`` for each block in order, signs included.
    """
    entries = block_entries(adapter)
    return FactoredRotation(entries[:, [0, 3]].ravel(), entries[:, [1, 2]].ravel())


def transpose_factored(f: FactoredRotation) -> FactoredRotation:
    """Two-vector form of ``R^T``: off-diagonal entries trade places."""
    return FactoredRotation(f.v1, pair_swap(f.v2))


def pair_swap(h: np.ndarray) -> np.ndarray:
    """Swap every adjacent pair along the last axis."""
    shape = h.shape
    return h.reshape(shape[:-1] + (shape[-1] // 2, 2))[..., ::-1].reshape(shape)


def apply_factored_batch(f: FactoredRotation, H: np.ndarray) -> np.ndarray:
    """Apply ``f`` along the last axis of ``H``."""
    if H.shape[-1] != f.d2:
        raise DimensionError(f"Expected last axis {f.d2}, got {H.shape[-1]}")
    return f.v1 * H + f.v2 * pair_swap(H)


def apply_factored(f: FactoredRotation, h: DenseVector) -> DenseVector:
    """
    Element-wise rotation ``z = v1 * h + v2 * swap(h)``.

    Raises:
        DimensionError: If ``h.len != f.d2``
    """
    if h.len != f.d2:
        raise DimensionError(f"Expected vector of length {f.d2}, got {h.len}")
    return DenseVector(apply_factored_batch(f, h.data))


def dense_rotation(adapter: RoadAdapter) -> DenseMatrix:
    """Assemble the full ``d2 x d2`` block-diagonal matrix."""
    entries = block_entries(adapter)
    rows = np.arange(0, adapter.d2, 2)
    R = np.zeros((adapter.d2, adapter.d2))
    R[rows, rows] = entries[:, 0]
    R[rows, rows + 1] = entries[:, 1]
    R[rows + 1, rows] = entries[:, 2]
    R[rows + 1, rows + 1] = entries[:, 3]
    return DenseMatrix(R)


def apply_dense_oracle(adapter: RoadAdapter, h: DenseVector) -> DenseVector:
    """Reference path: ``z = R h`` with ``R`` materialized. Never used for serving."""
    if h.len != adapter.d2:
        raise DimensionError(f"Expected vector of length {adapter.d2}, got {h.len}")
    return DenseVector(dense_rotation(adapter).data @ h.data)


def merge_into(adapter: RoadAdapter, W0: DenseMatrix) -> DenseMatrix:
    """
    Fold the adapter into a pretrained weight: ``W = W0 R^T``.

    Each row of ``W0`` lives in output space, so the merge is the element-wise
    rotation applied row by row.

    Raises:
        DimensionError: If ``W0.cols != d2``
    """
    if W0.cols != adapter.d2:
        raise DimensionError(f"W0 has {W0.cols} columns, adapter expects {adapter.d2}")
    return DenseMatrix(apply_factored_batch(factorize(adapter), W0.data))


def entry_gradients(H: np.ndarray, dZ: np.ndarray) -> np.ndarray:
    """Gradients w.r.t. each block's ``(R11, R12, R21, R22)``, summed over rows."""
    nb = H.shape[-1] // 2
    Hp = H.reshape(-1, nb, 2)
    dZp = dZ.reshape(-1, nb, 2)
    return np.einsum("nbi,nbj->bij", dZp, Hp).reshape(nb, 4)


def grad_batch(adapter: RoadAdapter, H: np.ndarray, dZ: np.ndarray) -> RoadGradient:
    """
    Backward pass summed over the leading axes of ``H`` and ``dZ``.

    Tied parameters accumulate the contributions of every entry that shares
    them, in ascending position order.
    """
    H = np.asarray(H, dtype=np.float64)
    dZ = np.asarray(dZ, dtype=np.float64)
    if H.shape != dZ.shape or H.shape[-1] != adapter.d2:
        raise DimensionError(
            f"H {H.shape} and upstream {dZ.shape} must both end in {adapter.d2}"
        )
    d_entries = entry_gradients(H, dZ)

    theta_e, alpha_e, idx = _entry_angles(adapter)
    d_trig = np.empty_like(theta_e)
    d_trig[:, 0] = -np.sin(theta_e[:, 0])
    d_trig[:, 1] = -np.cos(theta_e[:, 1])
    d_trig[:, 2] = np.cos(theta_e[:, 2])
    d_trig[:, 3] = -np.sin(theta_e[:, 3])

    d_theta = np.zeros_like(adapter.theta)
    d_alpha = np.zeros_like(adapter.alpha)
    np.add.at(d_theta, idx.ravel(), (d_entries * alpha_e * d_trig).ravel())
    np.add.at(d_alpha, idx.ravel(), (d_entries * _trig(theta_e)).ravel())

    f = factorize(adapter)
    d_h = dZ * f.v1 + pair_swap(dZ * f.v2)
    return RoadGradient(d_theta, d_alpha, d_h)


def grad(adapter: RoadAdapter, h: DenseVector, upstream: DenseVector) -> RoadGradient:
    """
    Analytic gradient of ``<upstream, R h>``.

    Returns:
        ``RoadGradient`` with ``d_theta``, ``d_alpha`` and ``d_h``

    Raises:
        DimensionError: If lengths differ from ``d2``
    """
    if h.len != adapter.d2 or upstream.len != adapter.d2:
        raise DimensionError(
            f"grad expects h and upstream of length {adapter.d2}, "
            f"got {h.len} and {upstream.len}"
        )
    return grad_batch(adapter, h.data, upstream.data)


def expand_ties(adapter: RoadAdapter, target: VariantLike) -> RoadAdapter:
    """
    Rewrite an adapter in a variant with fewer ties, keeping the same blocks.

    Road1 can be expanded to Road2 or Road4, Road2 to Road4.
    """
    target = RoadVariant.parse(target)
    if target.value < adapter.variant.value:
        raise ValueError(f"Cannot tie {adapter.variant.name} down to {target.name}")
    source_idx = block_param_indices(adapter.variant, adapter.d2).ravel()
    target_idx = block_param_indices(target, adapter.d2).ravel()
    n = target.params_per_block * adapter.n_blocks
    theta = np.empty(n)
    alpha = np.empty(n)
    theta[target_idx] = adapter.theta[source_idx]
    alpha[target_idx] = adapter.alpha[source_idx]
    return RoadAdapter(target, adapter.d2, theta, alpha)


def block_orthogonality_error(adapter: RoadAdapter) -> float:
    """Max absolute entry of ``R_i^T R_i - I`` over all blocks."""
    blocks = build_blocks(adapter)
    gram = np.einsum("bki,bkj->bij", blocks, blocks)
    return float(np.max(np.abs(gram - np.eye(2))))


def block_determinants(adapter: RoadAdapter) -> np.ndarray:
    return np.linalg.det(build_blocks(adapter))


def is_identity(adapter: RoadAdapter) -> bool:
    """True when every angle is 0 and every scale is 1."""
    return bool(np.all(adapter.theta == 0.0) and np.all(adapter.alpha == 1.0))
