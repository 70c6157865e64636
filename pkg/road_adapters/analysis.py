"""
Representation-change metrics, disentanglement heads, interchange interventions
and disjoint-subspace composition of RoAd adapters.
"""

import logging
from dataclasses import dataclass
from typing import Dict, FrozenSet, Iterable, List, Sequence, Tuple

import numpy as np

from .exceptions import (
    CompositionConflictError,
    DimensionError,
    NumericError,
    PreconditionError,
    UndefinedMetricError,
)
from .numeric import DenseMatrix, DenseVector
from .road import (
    RoadAdapter,
    apply_factored,
    block_orthogonality_error,
    factorize,
    transpose_factored,
)

logger = logging.getLogger(__name__)

ORTHONORMAL_TOL = 1e-10
DII_IDENTITY_TOL = 1e-12


@dataclass(frozen=True)
class RepPair:
    """Pretrained (``x0``) and finetuned (``x``) representations of one token."""

    x0: DenseVector
    x: DenseVector

    def __post_init__(self) -> None:
        if self.x0.len != self.x.len:
            raise DimensionError(
                f"Representation lengths differ: {self.x0.len} vs {self.x.len}"
            )
        if self.x0.norm() == 0.0:
            raise UndefinedMetricError(
                "Pretrained representation x0 is the zero vector"
            )


@dataclass(frozen=True)
class SubspaceMask:
    """Block indices owned by one task; block ``i`` covers dims ``2i, 2i + 1``."""

    block_ids: FrozenSet[int]

    def __post_init__(self) -> None:
        object.__setattr__(self, "block_ids", frozenset(int(b) for b in self.block_ids))
        if any(b < 0 for b in self.block_ids):
            raise ValueError("Block indices must be non-negative")

    @classmethod
    def from_range(cls, start: int, stop: int) -> "SubspaceMask":
        return cls(frozenset(range(start, stop)))

    def sorted_blocks(self) -> List[int]:
        return sorted(self.block_ids)

    def dims(self) -> np.ndarray:
        """Output dimensions read or written by the owned blocks."""
        blocks = np.array(self.sorted_blocks(), dtype=np.int64)
        return np.stack([2 * blocks, 2 * blocks + 1], axis=1).ravel()

    def __contains__(self, block: object) -> bool:
        return block in self.block_ids

    def __len__(self) -> int:
        return len(self.block_ids)


def upper_half_mask(d2: int) -> SubspaceMask:
    """First ``d2 // 4`` blocks."""
    return SubspaceMask.from_range(0, (d2 // 2) // 2)


def lower_half_mask(d2: int) -> SubspaceMask:
    """Blocks not covered by :func:`upper_half_mask`."""
    return SubspaceMask.from_range((d2 // 2) // 2, d2 // 2)


def mask_from_spec(spec: str) -> SubspaceMask:
    """
    Parse ``"0-3,7"`` style block lists (ranges inclusive).

    Raises:
        ValueError: If the text is not a comma-separated list of ints/ranges
    """
    blocks = set()
    for part in spec.split(","):
        part = part.strip()
        if not part:
            continue
        if "-" in part:
            lo, hi = part.split("-", 1)
            blocks.update(range(int(lo), int(hi) + 1))
        else:
            blocks.add(int(part))
    return SubspaceMask(frozenset(blocks))


def delta_m(pair: RepPair) -> float:
    """Relative magnitude change ``| |x| - |x0| | / |x0|``."""
    n0 = pair.x0.norm()
    return abs(pair.x.norm() - n0) / n0


def delta_d(pair: RepPair) -> float:
    """Cosine similarity between ``x`` and ``x0``."""
    n = pair.x.norm()
    if n == 0.0:
        raise UndefinedMetricError("Finetuned representation x is the zero vector")
    cos = pair.x.dot(pair.x0) / (n * pair.x0.norm())
    return float(np.clip(cos, -1.0, 1.0))


def magnitude_head(W: DenseMatrix, x0: DenseVector) -> DenseVector:
    """
    Magnitude-only head: ``z_i = |W[:, i]| * |x0|``.

    The output does not depend on the direction of ``x0``.
    """
    if W.rows != x0.len:
        raise DimensionError(f"W has {W.rows} rows, x0 has length {x0.len}")
    return DenseVector(np.linalg.norm(W.data, axis=0) * x0.norm())


def angle_head(W: DenseMatrix, x0: DenseVector) -> DenseVector:
    """
    Angle-only head: ``z_i = cos(W[:, i], x0)``.

    Raises:
        UndefinedMetricError: If ``x0`` or any column of ``W`` is zero
    """
    if W.rows != x0.len:
        raise DimensionError(f"W has {W.rows} rows, x0 has length {x0.len}")
    col_norms = np.linalg.norm(W.data, axis=0)
    x_norm = x0.norm()
    if x_norm == 0.0:
        raise UndefinedMetricError("x0 is the zero vector")
    zero_cols = np.flatnonzero(col_norms == 0.0)
    if zero_cols.size:
        raise UndefinedMetricError(f"W has zero columns: {zero_cols.tolist()}")
    cos = (x0.data @ W.data) / (col_norms * x_norm)
    return DenseVector(np.clip(cos, -1.0, 1.0))


def check_orthonormal_rows(P: DenseMatrix, tol: float = ORTHONORMAL_TOL) -> None:
    gram = P.data @ P.data.T
    err = float(np.max(np.abs(gram - np.eye(P.rows)))) if P.rows else 0.0
    if err > tol:
        raise PreconditionError(
            f"Projection rows are not orthonormal (max deviation {err:.3e})"
        )


def dii_apply(b: DenseVector, s: DenseVector, P: DenseMatrix) -> DenseVector:
    """
    Distributed interchange intervention ``b + P^T (P s - P b)``.

    Replaces the component of ``b`` in the row space of ``P`` with that of ``s``.

    Args:
        b: Base representation
        s: Counterfactual source representation
        P: Projection with orthonormal rows, shape ``(r, d)``

    Raises:
        DimensionError: If lengths disagree with ``P.cols``
        PreconditionError: If rows of ``P`` are not orthonormal
    """
    if not (P.cols == b.len == s.len):
        raise DimensionError(f"P has {P.cols} columns, b has {b.len}, s has {s.len}")
    check_orthonormal_rows(P)
    return DenseVector(b.data + P.data.T @ (P.data @ s.data - P.data @ b.data))


def road_as_dii(adapter: RoadAdapter, h: DenseVector) -> DenseVector:
    """
    Apply an orthogonal RoAd adapter in intervention form ``h + R (h - R^T h)``.

    Raises:
        PreconditionError: If any scale differs from 1 or a block is not orthogonal
        NumericError: If the intervention form disagrees with ``R h``
    """
    if h.len != adapter.d2:
        raise DimensionError(f"Expected vector of length {adapter.d2}, got {h.len}")
    if np.any(np.abs(adapter.alpha - 1.0) > DII_IDENTITY_TOL):
        raise PreconditionError("Intervention form requires every alpha to be 1")
    ortho_err = block_orthogonality_error(adapter)
    if ortho_err > DII_IDENTITY_TOL:
        raise PreconditionError(
            f"Blocks are not orthogonal (max deviation {ortho_err:.3e})"
        )
    f = factorize(adapter)
    rt_h = apply_factored(transpose_factored(f), h)
    z = h + apply_factored(f, h - rt_h)
    direct = apply_factored(f, h)
    gap = float(np.max(np.abs(z.data - direct.data))) if h.len else 0.0
    if gap > DII_IDENTITY_TOL:
        raise NumericError(f"Intervention form deviates from R h by {gap:.3e}")
    return z


def find_conflicts(masks: Sequence[SubspaceMask]) -> FrozenSet[int]:
    seen: Dict[int, int] = {}
    conflicts = set()
    for owner, mask in enumerate(masks):
        for block in mask.block_ids:
            if block in seen and seen[block] != owner:
                conflicts.add(block)
            seen[block] = owner
    return frozenset(conflicts)


def compose(adapters: Sequence[Tuple[RoadAdapter, SubspaceMask]]) -> RoadAdapter:
    """
    Stitch adapters trained on disjoint block subsets into one adapter.

    Block ``i`` takes its parameters from the adapter whose mask owns it;
    unowned blocks stay at the identity.

    Raises:
        ValueError: If no adapters are given
        DimensionError: If variants or ``d2`` differ, or a mask exceeds ``d2``
        CompositionConflictError: If masks overlap
    """
    if not adapters:
        raise ValueError("compose needs at least one adapter")
    first = adapters[0][0]
    for adapter, mask in adapters:
        if adapter.variant is not first.variant or adapter.d2 != first.d2:
            raise DimensionError(
                f"Cannot compose {adapter.variant.name}/d2={adapter.d2} with "
                f"{first.variant.name}/d2={first.d2}"
            )
        if mask.block_ids and max(mask.block_ids) >= first.n_blocks:
            raise DimensionError(
                f"Mask references block {max(mask.block_ids)} of {first.n_blocks}"
            )
    conflicts = find_conflicts([mask for _, mask in adapters])
    if conflicts:
        raise CompositionConflictError(
            f"Masks overlap on blocks {sorted(conflicts)}", blocks=conflicts
        )

    composed = RoadAdapter.identity(first.variant, first.d2)
    for adapter, mask in adapters:
        for block in mask.sorted_blocks():
            sl = adapter.block_slice(block)
            composed.theta[sl] = adapter.theta[sl]
            composed.alpha[sl] = adapter.alpha[sl]
    logger.debug(f"Composed {len(adapters)} adapters over {first.n_blocks} blocks")
    return composed


@dataclass(frozen=True)
class LayerStats:
    """Aggregate representation change for one layer."""

    layer: str
    count: int
    mean_delta_m: float
    mean_delta_d: float
    delta_m_quartiles: Tuple[float, float, float]
    delta_d_quartiles: Tuple[float, float, float]


def representation_stats(layer: str, X0: np.ndarray, X: np.ndarray) -> LayerStats:
    """
    Mean and quartiles of per-token magnitude and angle change.

    Args:
        layer: Layer label carried into reports
        X0: Pretrained representations, shape ``(n, d)``
        X: Finetuned representations, shape ``(n, d)``

    Raises:
        DimensionError: If shapes differ or are not 2-D
        UndefinedMetricError: If any representation is zero
    """
    X0 = np.asarray(X0, dtype=np.float64)
    X = np.asarray(X, dtype=np.float64)
    if X0.ndim != 2 or X0.shape != X.shape or X0.shape[0] == 0:
        raise DimensionError(
            "Representation arrays must share a non-empty (n, d) shape, "
            f"got {X0.shape}, {X.shape}"
        )
    n0 = np.linalg.norm(X0, axis=1)
    n1 = np.linalg.norm(X, axis=1)
    if np.any(n0 == 0.0) or np.any(n1 == 0.0):
        raise UndefinedMetricError(f"Layer {layer} contains zero representations")
    dm = np.abs(n1 - n0) / n0
    dd = np.clip(np.sum(X * X0, axis=1) / (n0 * n1), -1.0, 1.0)
    q = (25, 50, 75)
    return LayerStats(
        layer=layer,
        count=int(X0.shape[0]),
        mean_delta_m=float(dm.mean()),
        mean_delta_d=float(dd.mean()),
        delta_m_quartiles=tuple(float(v) for v in np.percentile(dm, q)),
        delta_d_quartiles=tuple(float(v) for v in np.percentile(dd, q)),
    )


def analyze_layers(
    layers: Iterable[Tuple[str, np.ndarray, np.ndarray]]
) -> List[LayerStats]:
    return [representation_stats(name, X0, X) for name, X0, X in layers]
