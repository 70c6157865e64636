"""
Heterogeneous multi-adapter batched serving and its benchmark harness.

Each request in a batch routes to its own adapter. LoRA requests go through a
gather-then-batched-matmul path, RoAd and diagonal requests through
element-wise products with per-request vectors broadcast over the token axis.
The frozen base product ``X W0`` is shared by every unmerged path.
"""

import copy
import logging
import time
from dataclasses import dataclass, field, fields
from enum import Enum
from typing import (
    Any,
    Callable,
    Dict,
    Iterator,
    List,
    Optional,
    Sequence,
    Tuple,
    Union,
)

import numpy as np
from threadpoolctl import threadpool_limits

from .baselines import (
    DiagScaleAdapter,
    LoraAdapter,
    diag_flops_per_token,
    diag_scale_apply,
    lora_apply,
    lora_flops_per_token,
    road_flops_per_token,
)
from .exceptions import (
    DimensionError,
    MeasurementError,
    PreconditionError,
    RegistryFrozenError,
    RoutingError,
)
from .numeric import DenseMatrix, DenseVector, SeededRng, matvec
from .road import (
    FactoredRotation,
    RoadAdapter,
    apply_dense_oracle,
    factorize,
    pair_swap,
)

logger = logging.getLogger(__name__)

ServedAdapter = Union[RoadAdapter, LoraAdapter, DiagScaleAdapter]
WeightLike = Union[DenseMatrix, np.ndarray]

MIN_TIMER_TICKS = 100


class KernelKind(Enum):
    LORA_BMM = "lora_bmm"
    LORA_MERGED_HOMOGENEOUS = "lora_merged_homogeneous"
    ROAD_ELEMENTWISE = "road_elementwise"
    DIAG_ELEMENTWISE = "diag_elementwise"


class ServeMode(Enum):
    """``prefill`` processes all tokens at once, ``decode`` one token per step."""

    PREFILL = "prefill"
    DECODE = "decode"


@dataclass
class FlopCounter:
    """Running FLOP totals, split into frozen-base and adapter work."""

    base: int = 0
    adapter: int = 0
    base_calls: int = 0

    def add_base(self, flops: int) -> None:
        """Record one frozen-base product launch of ``flops``."""
        self.base += int(flops)
        self.base_calls += 1

    def add_adapter(self, flops: int) -> None:
        self.adapter += int(flops)

    @property
    def total(self) -> int:
        return self.base + self.adapter

    def reset(self) -> None:
        self.base = 0
        self.adapter = 0
        self.base_calls = 0


class AdapterRegistry:
    """
    Adapter id to adapter map. Must be frozen before serving and is immutable afterward.

    Freezing deep-copies every adapter, marks its arrays read-only and
    precomputes the factored form of each RoAd adapter.
    """

    def __init__(self, entries: Optional[Dict[str, ServedAdapter]] = None) -> None:
        self._entries: Dict[str, ServedAdapter] = {}
        self._factored: Dict[str, FactoredRotation] = {}
        self._frozen = False
        for adapter_id, adapter in (entries or {}).items():
            self.register(adapter_id, adapter)

    @property
    def frozen(self) -> bool:
        return self._frozen

    def register(self, adapter_id: str, adapter: ServedAdapter) -> None:
        if self._frozen:
            raise RegistryFrozenError(
                f"Cannot register {adapter_id!r}: registry is frozen"
            )
        if not isinstance(adapter, (RoadAdapter, LoraAdapter, DiagScaleAdapter)):
            raise RoutingError(
                f"Unsupported adapter type {type(adapter).__name__} for {adapter_id!r}"
            )
        self._entries[str(adapter_id)] = adapter

    def freeze(self) -> "AdapterRegistry":
        if self._frozen:
            return self
        for adapter_id, adapter in list(self._entries.items()):
            snapshot = copy.deepcopy(adapter)
            for array in snapshot.parameters().values():
                array.flags.writeable = False
            self._entries[adapter_id] = snapshot
            if isinstance(snapshot, RoadAdapter):
                self._factored[adapter_id] = factorize(snapshot)
        self._frozen = True
        logger.info(f"Registry frozen with {len(self._entries)} adapters")
        return self

    def require_frozen(self) -> None:
        if not self._frozen:
            raise RegistryFrozenError("Registry must be frozen before serving")

    def get(self, adapter_id: str) -> ServedAdapter:
        try:
            return self._entries[adapter_id]
        except KeyError:
            raise RoutingError(f"Unknown adapter id {adapter_id!r}") from None

    def factored(self, adapter_id: str) -> FactoredRotation:
        self.require_frozen()
        if adapter_id not in self._factored:
            raise RoutingError(f"Adapter {adapter_id!r} is not a RoAd adapter")
        return self._factored[adapter_id]

    def ids(self) -> List[str]:
        return list(self._entries)

    def __contains__(self, adapter_id: object) -> bool:
        return adapter_id in self._entries

    def __len__(self) -> int:
        return len(self._entries)


@dataclass(frozen=True)
class HeteroBatch:
    """``b`` requests of ``l`` tokens each; request ``i`` uses ``adapter_ids[i]``."""

    features: np.ndarray
    adapter_ids: Tuple[str, ...]

    def __post_init__(self) -> None:
        object.__setattr__(self, "adapter_ids", tuple(str(a) for a in self.adapter_ids))
        if self.features.ndim != 3:
            raise DimensionError(
                f"features must be (b, l, d1), got shape {self.features.shape}"
            )
        b, l, _ = self.features.shape
        if b < 1 or l < 1:
            raise PreconditionError(f"Batch needs b >= 1 and l >= 1, got b={b}, l={l}")
        if len(self.adapter_ids) != b:
            raise DimensionError(
                f"{len(self.adapter_ids)} adapter ids for {b} requests"
            )

    @property
    def b(self) -> int:
        return int(self.features.shape[0])

    @property
    def l(self) -> int:
        return int(self.features.shape[1])

    @property
    def d1(self) -> int:
        return int(self.features.shape[2])

    def permuted(self, order: Sequence[int]) -> "HeteroBatch":
        order = list(order)
        return HeteroBatch(
            self.features[order], tuple(self.adapter_ids[i] for i in order)
        )


def _weight_array(W0: WeightLike, dtype: np.dtype) -> np.ndarray:
    data = W0.data if isinstance(W0, DenseMatrix) else np.asarray(W0)
    return data.astype(dtype, copy=False)


def base_product(
    batch: HeteroBatch, W0: WeightLike, counter: Optional[FlopCounter] = None
) -> np.ndarray:
    """Frozen-layer output ``X W0`` for every token, shape ``(b, l, d2)``."""
    W = _weight_array(W0, batch.features.dtype)
    if W.shape[0] != batch.d1:
        raise DimensionError(f"W0 has {W.shape[0]} rows, features have d1={batch.d1}")
    if counter is not None:
        counter.add_base(2 * batch.b * batch.l * batch.d1 * W.shape[1])
    return batch.features @ W


def _route(reg: AdapterRegistry, batch: HeteroBatch, kind: type) -> List[ServedAdapter]:
    reg.require_frozen()
    adapters = [reg.get(adapter_id) for adapter_id in batch.adapter_ids]
    mismatched = sorted({type(a).__name__ for a in adapters if not isinstance(a, kind)})
    if mismatched:
        raise RoutingError(
            f"{kind.__name__} kernel received {', '.join(mismatched)} requests"
        )
    return adapters


BaseReader = Callable[[slice], np.ndarray]


def _base_reader(
    batch: HeteroBatch,
    W0: WeightLike,
    base: Optional[np.ndarray],
    counter: Optional[FlopCounter],
) -> Tuple[int, np.dtype, BaseReader]:
    """
    Output width, dtype and a per-step source of ``X W0``.

    Without a precomputed ``base`` every step multiplies only its own tokens,
    so decode mode launches one base product per token like the merged path.
    """
    if base is not None:
        if base.shape[:2] != (batch.b, batch.l):
            raise DimensionError(
                f"Precomputed base {base.shape} does not match batch "
                f"({batch.b}, {batch.l})"
            )
        return base.shape[-1], base.dtype, lambda step: base[:, step, :]
    W = _weight_array(W0, batch.features.dtype)
    if W.shape[0] != batch.d1:
        raise DimensionError(f"W0 has {W.shape[0]} rows, features have d1={batch.d1}")
    d2 = int(W.shape[1])

    def read(step: slice) -> np.ndarray:
        X = batch.features[:, step, :]
        if counter is not None:
            counter.add_base(2 * X.shape[0] * X.shape[1] * batch.d1 * d2)
        return X @ W

    return d2, np.result_type(batch.features, W), read


def _token_steps(l: int, mode: ServeMode) -> Iterator[slice]:
    if mode is ServeMode.PREFILL:
        yield slice(0, l)
    else:
        for t in range(l):
            yield slice(t, t + 1)


def serve_lora_bmm(
    reg: AdapterRegistry,
    batch: HeteroBatch,
    W0: WeightLike,
    base: Optional[np.ndarray] = None,
    counter: Optional[FlopCounter] = None,
    mode: ServeMode = ServeMode.PREFILL,
) -> np.ndarray:
    """
    Unmerged LoRA over a heterogeneous batch.

    Per-request factors are gathered into stacks ``B_hat (b, d1, r)`` and
    ``A_hat (b, r, d2)`` and applied with two batched matrix products.

    Raises:
        RegistryFrozenError: If the registry is not frozen
        RoutingError: If a request maps to a non-LoRA adapter or ranks differ
        DimensionError: If factor shapes do not match ``W0``
    """
    adapters = _route(reg, batch, LoraAdapter)
    ranks = {a.r for a in adapters}
    if len(ranks) != 1:
        raise RoutingError(
            f"lora_bmm needs equal ranks in one call, got {sorted(ranks)}"
        )
    d2, out_dtype, read_base = _base_reader(batch, W0, base, counter)
    if any((a.d1, a.d2) != (batch.d1, d2) for a in adapters):
        raise DimensionError(f"LoRA factors must match ({batch.d1}, {d2})")
    dtype = batch.features.dtype
    B_hat = np.stack([a.B for a in adapters]).astype(dtype, copy=False)
    A_hat = np.stack([a.scaling * a.A for a in adapters]).astype(dtype, copy=False)
    r = ranks.pop()
    Z = np.empty((batch.b, batch.l, d2), dtype=out_dtype)
    for step in _token_steps(batch.l, mode):
        U = np.matmul(batch.features[:, step, :], B_hat)
        Z[:, step, :] = read_base(step) + np.matmul(U, A_hat)
    if counter is not None:
        counter.add_adapter(batch.b * batch.l * lora_flops_per_token(batch.d1, d2, r))
    return Z


def serve_lora_merged_homogeneous(
    reg: AdapterRegistry,
    batch: HeteroBatch,
    W0: WeightLike,
    merged: Optional[np.ndarray] = None,
    counter: Optional[FlopCounter] = None,
    mode: ServeMode = ServeMode.PREFILL,
) -> np.ndarray:
    """
    Serve a batch whose requests all share one LoRA adapter through ``W0 + s B A``.

    Raises:
        RoutingError: If requests use different adapters
    """
    adapters = _route(reg, batch, LoraAdapter)
    if len(set(batch.adapter_ids)) != 1:
        raise RoutingError("Merged serving needs one adapter for the whole batch")
    if merged is None:
        merged = adapters[0].merged_weight(
            W0 if isinstance(W0, DenseMatrix) else DenseMatrix(W0)
        ).data
    W = merged.astype(batch.features.dtype, copy=False)
    d2 = int(W.shape[1])
    Z = np.empty((batch.b, batch.l, d2), dtype=np.result_type(batch.features, W))
    for step in _token_steps(batch.l, mode):
        X = batch.features[:, step, :]
        Z[:, step, :] = X @ W
        if counter is not None:
            counter.add_base(2 * X.shape[0] * X.shape[1] * batch.d1 * d2)
    return Z


def serve_road_elementwise(
    reg: AdapterRegistry,
    batch: HeteroBatch,
    W0: WeightLike,
    base: Optional[np.ndarray] = None,
    counter: Optional[FlopCounter] = None,
    mode: ServeMode = ServeMode.PREFILL,
) -> np.ndarray:
    """
    RoAd over a heterogeneous batch with element-wise products only.

    Request ``i`` computes ``v1_i * h + v2_i * swap(h)`` for every token ``h``;
    variants may differ between requests.

    Raises:
        RoutingError: If a request maps to a non-RoAd adapter
        DimensionError: If an adapter's ``d2`` differs from the base output
    """
    adapters = _route(reg, batch, RoadAdapter)
    d2, dtype, read_base = _base_reader(batch, W0, base, counter)
    bad = sorted({a.d2 for a in adapters if a.d2 != d2})
    if bad:
        raise DimensionError(
            f"RoAd adapters with d2 {bad} cannot serve outputs of width {d2}"
        )
    factored = [reg.factored(adapter_id) for adapter_id in batch.adapter_ids]
    V1 = np.stack([f.v1 for f in factored]).astype(dtype, copy=False)[:, None, :]
    V2 = np.stack([f.v2 for f in factored]).astype(dtype, copy=False)[:, None, :]
    Z = np.empty((batch.b, batch.l, d2), dtype=dtype)
    for step in _token_steps(batch.l, mode):
        h = read_base(step)
        Z[:, step, :] = V1 * h + V2 * pair_swap(h)
    if counter is not None:
        counter.add_adapter(batch.b * batch.l * road_flops_per_token(d2))
    return Z


def serve_diag_elementwise(
    reg: AdapterRegistry,
    batch: HeteroBatch,
    W0: WeightLike,
    base: Optional[np.ndarray] = None,
    counter: Optional[FlopCounter] = None,
    mode: ServeMode = ServeMode.PREFILL,
) -> np.ndarray:
    """Per-request diagonal gains broadcast over the token axis."""
    adapters = _route(reg, batch, DiagScaleAdapter)
    d2, dtype, read_base = _base_reader(batch, W0, base, counter)
    if any(a.d2 != d2 for a in adapters):
        raise DimensionError(f"Diagonal adapters must have d2={d2}")
    L = np.stack([a.l for a in adapters]).astype(dtype, copy=False)[:, None, :]
    Z = np.empty((batch.b, batch.l, d2), dtype=dtype)
    for step in _token_steps(batch.l, mode):
        Z[:, step, :] = read_base(step) * L
    if counter is not None:
        counter.add_adapter(batch.b * batch.l * diag_flops_per_token(d2))
    return Z


def serve_sequential_oracle(
    reg: AdapterRegistry, batch: HeteroBatch, W0: DenseMatrix
) -> np.ndarray:
    """
    Reference output: every request and token served alone in real64.

    RoAd requests use the dense-matrix path, so this is independent of the
    factored kernels it checks.
    """
    reg.require_frozen()
    rows = []
    for i, adapter_id in enumerate(batch.adapter_ids):
        adapter = reg.get(adapter_id)
        tokens = []
        for t in range(batch.l):
            x = DenseVector(batch.features[i, t])
            if isinstance(adapter, LoraAdapter):
                z = lora_apply(adapter, W0, x)
            elif isinstance(adapter, RoadAdapter):
                z = apply_dense_oracle(adapter, matvec(W0, x))
            else:
                z = diag_scale_apply(adapter, matvec(W0, x))
            tokens.append(z.data)
        rows.append(np.stack(tokens))
    return np.stack(rows)


KERNELS: Dict[KernelKind, Callable[..., np.ndarray]] = {
    KernelKind.LORA_BMM: serve_lora_bmm,
    KernelKind.ROAD_ELEMENTWISE: serve_road_elementwise,
    KernelKind.DIAG_ELEMENTWISE: serve_diag_elementwise,
}


def serve(
    reg: AdapterRegistry, batch: HeteroBatch, W0: WeightLike, **kwargs: Any
) -> np.ndarray:
    """
    Route a batch to the kernel matching its adapters.

    Raises:
        RoutingError: If the batch mixes adapter kinds
    """
    reg.require_frozen()
    kinds = {type(reg.get(adapter_id)) for adapter_id in batch.adapter_ids}
    if len(kinds) != 1:
        raise RoutingError(
            f"Batch mixes adapter kinds: {sorted(k.__name__ for k in kinds)}"
        )
    kind = kinds.pop()
    if kind is LoraAdapter:
        return serve_lora_bmm(reg, batch, W0, **kwargs)
    if kind is RoadAdapter:
        return serve_road_elementwise(reg, batch, W0, **kwargs)
    return serve_diag_elementwise(reg, batch, W0, **kwargs)


@dataclass(frozen=True)
class WorkloadSpec:
    """Bench sweep definition; every point is generated from ``seed``."""

    kernels: Tuple[str, ...] = tuple(k.value for k in KernelKind)
    batch_sizes: Tuple[int, ...] = (8,)
    token_counts: Tuple[int, ...] = (2048,)
    ranks: Tuple[int, ...] = (8,)
    d1: int = 1024
    d2: int = 1024
    mode: str = "decode"
    precision: str = "float32"
    seed: int = 0
    threads: int = 1

    def __post_init__(self) -> None:
        known = {k.value for k in KernelKind}
        unknown = [k for k in self.kernels if k not in known]
        if unknown:
            raise PreconditionError(
                f"Unknown kernels {unknown}; expected some of {sorted(known)}"
            )
        if self.mode not in ("prefill", "decode"):
            raise PreconditionError(
                f"mode must be prefill or decode, got {self.mode!r}"
            )
        if self.precision not in ("float32", "float64"):
            raise PreconditionError(
                f"precision must be float32 or float64, got {self.precision!r}"
            )
        if any(not 1 <= b <= 32 for b in self.batch_sizes):
            raise PreconditionError(
                f"Batch sizes must lie in 1..32, got {list(self.batch_sizes)}"
            )
        if any(t < 1 for t in self.token_counts) or any(r < 1 for r in self.ranks):
            raise PreconditionError("Token counts and ranks must be positive")
        if self.d2 % 2:
            raise DimensionError(f"d2 must be even, got {self.d2}")
        if self.threads < 1:
            raise PreconditionError(f"threads must be at least 1, got {self.threads}")

    @property
    def dtype(self) -> np.dtype:
        return np.dtype(self.precision)


@dataclass(frozen=True)
class BenchReport:
    """One measured bench point; field order is the CSV column order."""

    kernel: str
    b: int
    l: int
    d1: int
    d2: int
    r: int
    wall_ns: int
    flops: int
    tokens_per_second: float
    mode: str = "prefill"
    adapter_ns: int = 0
    base_flops: int = 0
    threads: int = 1

    @classmethod
    def columns(cls) -> List[str]:
        return [f.name for f in fields(cls)]

    def as_row(self) -> List[Any]:
        return [getattr(self, name) for name in self.columns()]


def timer_tick_ns() -> float:
    return max(1.0, time.get_clock_info("perf_counter").resolution * 1e9)


def measure_ns(fn: Callable[[], object], repetitions: int, warmup: int) -> int:
    """
    Median wall time of ``fn`` in nanoseconds after ``warmup`` untimed calls.

    Raises:
        MeasurementError: If the median is below 100 timer ticks
    """
    for _ in range(warmup):
        fn()
    samples = []
    for _ in range(repetitions):
        t0 = time.perf_counter_ns()
        fn()
        samples.append(time.perf_counter_ns() - t0)
    median = int(np.median(samples))
    tick = timer_tick_ns()
    if median < MIN_TIMER_TICKS * tick:
        raise MeasurementError(
            f"Median {median} ns is below {MIN_TIMER_TICKS} timer ticks "
            f"({tick:.0f} ns each); use a larger workload"
        )
    return median


@dataclass
class BenchPoint:
    """Inputs for one (b, l, r) sweep point, shared by every kernel."""

    W0: np.ndarray
    features: np.ndarray
    registries: Dict[KernelKind, Tuple[AdapterRegistry, Tuple[str, ...]]] = field(
        default_factory=dict
    )
    merged: Optional[np.ndarray] = None

    def batch(self, kernel: KernelKind) -> HeteroBatch:
        return HeteroBatch(self.features, self.registries[kernel][1])


def make_bench_point(spec: WorkloadSpec, b: int, l: int, r: int) -> BenchPoint:
    """Random frozen weight, features and one adapter per request for each kernel."""
    rng = SeededRng(spec.seed).child(b).child(l).child(r)
    dtype = spec.dtype
    W0 = (rng.normal((spec.d1, spec.d2), scale=1.0 / np.sqrt(spec.d1))).astype(dtype)
    features = rng.normal((b, l, spec.d1)).astype(dtype)
    point = BenchPoint(W0, features)
    ids = tuple(f"req{i}" for i in range(b))

    lora, road, diag = AdapterRegistry(), AdapterRegistry(), AdapterRegistry()
    for k, adapter_id in enumerate(ids):
        lora_rng, road_rng, diag_rng = (rng.child(kind).child(k) for kind in (1, 2, 3))
        lora.register(
            adapter_id, LoraAdapter.random(spec.d1, spec.d2, r, lora_rng, scaling=0.1)
        )
        road.register(adapter_id, RoadAdapter.random("road1", spec.d2, road_rng))
        diag.register(adapter_id, DiagScaleAdapter.random(spec.d2, diag_rng))
    shared_adapter = LoraAdapter.random(spec.d1, spec.d2, r, rng.child(4), scaling=0.1)
    shared = AdapterRegistry({"shared": shared_adapter})
    point.registries = {
        KernelKind.LORA_BMM: (lora.freeze(), ids),
        KernelKind.ROAD_ELEMENTWISE: (road.freeze(), ids),
        KernelKind.DIAG_ELEMENTWISE: (diag.freeze(), ids),
        KernelKind.LORA_MERGED_HOMOGENEOUS: (shared.freeze(), ("shared",) * b),
    }
    # merging happens offline, before serving
    point.merged = shared_adapter.merged_weight(DenseMatrix(W0)).data.astype(dtype)
    return point


def bench_call(
    kernel: KernelKind,
    point: BenchPoint,
    mode: ServeMode,
    counter: Optional[FlopCounter] = None,
) -> Callable[[], np.ndarray]:
    """
    End-to-end serving call for one bench point: base product, adapter, output.

    Every kernel walks the same token steps, so in decode mode each one pays
    ``l`` base-product launches.
    """
    reg = point.registries[kernel][0]
    batch = point.batch(kernel)
    if kernel is KernelKind.LORA_MERGED_HOMOGENEOUS:
        merged = point.merged
        return lambda: serve_lora_merged_homogeneous(
            reg, batch, point.W0, merged, counter, mode
        )
    kernel_fn = KERNELS[kernel]
    return lambda: kernel_fn(reg, batch, point.W0, None, counter, mode)


def adapter_call(
    kernel: KernelKind, point: BenchPoint, mode: ServeMode, base: np.ndarray
) -> Callable[[], np.ndarray]:
    """Adapter-only call with the frozen-base output precomputed."""
    if kernel is KernelKind.LORA_MERGED_HOMOGENEOUS:
        raise PreconditionError("The merged kernel has no separate adapter step")
    reg = point.registries[kernel][0]
    batch = point.batch(kernel)
    kernel_fn = KERNELS[kernel]
    return lambda: kernel_fn(reg, batch, point.W0, base, None, mode)


def run_bench(
    spec: WorkloadSpec, repetitions: int = 5, warmup: int = 1
) -> List[BenchReport]:
    """
    Sweep the workload and time every requested kernel.

    ``wall_ns`` times each kernel end to end through :func:`bench_call`.
    Unmerged kernels are also timed with the base output precomputed, giving
    ``adapter_ns``; the merged kernel folds its adapter into the weight and
    reports 0 there. BLAS runs on ``spec.threads`` threads throughout.

    Args:
        spec: Sweep definition
        repetitions: Timed calls per point, at least 3
        warmup: Untimed calls per point, at least 1

    Returns:
        One report per (kernel, b, l, r) point

    Raises:
        PreconditionError: If ``repetitions < 3`` or ``warmup < 1``
        MeasurementError: If a point is too small for the timer
    """
    if repetitions < 3:
        raise PreconditionError(f"repetitions must be at least 3, got {repetitions}")
    if warmup < 1:
        raise PreconditionError(f"warmup must be at least 1, got {warmup}")
    mode = ServeMode(spec.mode)
    kernels = [KernelKind(k) for k in spec.kernels]
    reports = []
    with threadpool_limits(limits=spec.threads):
        for b in spec.batch_sizes:
            for l in spec.token_counts:
                for r in spec.ranks:
                    point = make_bench_point(spec, b, l, r)
                    for kernel in kernels:
                        report = _measure_point(
                            spec, point, kernel, r, mode, repetitions, warmup
                        )
                        logger.info(
                            f"{kernel.value} b={b} l={l} r={r}: {report.wall_ns} ns "
                            f"({report.tokens_per_second:.0f} tok/s, "
                            f"adapter {report.adapter_ns} ns)"
                        )
                        reports.append(report)
    return reports


def _measure_point(
    spec: WorkloadSpec,
    point: BenchPoint,
    kernel: KernelKind,
    r: int,
    mode: ServeMode,
    repetitions: int,
    warmup: int,
) -> BenchReport:
    counter = FlopCounter()
    bench_call(kernel, point, mode, counter)()
    wall_ns = measure_ns(bench_call(kernel, point, mode), repetitions, warmup)
    adapter_ns = 0
    if kernel is not KernelKind.LORA_MERGED_HOMOGENEOUS:
        base = base_product(point.batch(kernel), point.W0)
        adapter_ns = measure_ns(
            adapter_call(kernel, point, mode, base), repetitions, warmup
        )
    batch = point.batch(kernel)
    return BenchReport(
        kernel=kernel.value,
        b=batch.b,
        l=batch.l,
        d1=spec.d1,
        d2=spec.d2,
        r=r,
        wall_ns=wall_ns,
        flops=counter.adapter,
        tokens_per_second=batch.b * batch.l / (wall_ns / 1e9),
        mode=mode.value,
        adapter_ns=adapter_ns,
        base_flops=counter.base,
        threads=spec.threads,
    )
