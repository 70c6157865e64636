"""
Test cases for multi-adapter batched serving and the benchmark harness.
"""

from unittest.mock import patch

import numpy as np
import pytest

from road_adapters.baselines import DiagScaleAdapter, LoraAdapter, lora_apply
from road_adapters.exceptions import (
    DimensionError,
    MeasurementError,
    PreconditionError,
    RegistryFrozenError,
    RoutingError,
)
from road_adapters.numeric import DenseMatrix, DenseVector, SeededRng
from road_adapters.road import RoadAdapter
from road_adapters.serving import (
    AdapterRegistry,
    BenchReport,
    FlopCounter,
    HeteroBatch,
    ServeMode,
    KernelKind,
    WorkloadSpec,
    bench_call,
    make_bench_point,
    measure_ns,
    run_bench,
    serve,
    serve_diag_elementwise,
    serve_lora_bmm,
    serve_lora_merged_homogeneous,
    serve_road_elementwise,
    serve_sequential_oracle,
)


def random_registry(
    kind: str, b: int, d1: int, d2: int, rng: SeededRng, r: int = 2
) -> AdapterRegistry:
    reg = AdapterRegistry()
    for k in range(b):
        sub = rng.child(k)
        if kind == "road":
            adapter = RoadAdapter.random(["road1", "road2", "road4"][k % 3], d2, sub)
        elif kind == "lora":
            adapter = LoraAdapter.random(d1, d2, r, sub, scaling=0.5)
        else:
            adapter = DiagScaleAdapter.random(d2, sub)
        reg.register(f"a{k}", adapter)
    return reg.freeze()


def make_batch(b: int, l: int, d1: int, rng: SeededRng) -> HeteroBatch:
    return HeteroBatch(rng.normal((b, l, d1)), tuple(f"a{k}" for k in range(b)))


def test_registry_frozen_before_serving():
    """Test serving an unfrozen registry is refused."""
    reg = AdapterRegistry({"a0": RoadAdapter.identity("road1", 4)})
    batch = HeteroBatch(np.zeros((1, 1, 4)), ("a0",))
    with pytest.raises(RegistryFrozenError, match="frozen before serving"):
        serve_road_elementwise(reg, batch, DenseMatrix.identity(4))


def test_registry_immutable_after_freeze():
    """Test frozen registries reject registration and hold read-only copies."""
    adapter = RoadAdapter.identity("road1", 4)
    reg = AdapterRegistry({"a0": adapter}).freeze()
    with pytest.raises(RegistryFrozenError):
        reg.register("a1", RoadAdapter.identity("road1", 4))
    adapter.theta[0] = 1.0
    assert reg.get("a0").theta[0] == 0.0
    with pytest.raises(ValueError):
        reg.get("a0").theta[0] = 2.0


def test_unknown_adapter_id():
    """Test unknown ids are a routing error."""
    reg = AdapterRegistry({"a0": RoadAdapter.identity("road1", 4)}).freeze()
    with pytest.raises(RoutingError, match="Unknown adapter id"):
        serve(
            reg, HeteroBatch(np.zeros((1, 1, 4)), ("missing",)), DenseMatrix.identity(4)
        )


def test_batch_validation():
    """Test batches need b, l >= 1 and one id per request."""
    with pytest.raises(PreconditionError):
        HeteroBatch(np.zeros((0, 1, 4)), ())
    with pytest.raises(DimensionError):
        HeteroBatch(np.zeros((2, 1, 4)), ("a",))


def test_identity_road_adapters_return_base():
    """Test identity adapters leave X W0 unchanged."""
    rng = SeededRng(1)
    reg = AdapterRegistry(
        {f"a{k}": RoadAdapter.identity("road2", 6) for k in range(3)}
    ).freeze()
    batch = make_batch(3, 4, 5, rng)
    W0 = DenseMatrix.random(5, 6, rng)
    out = serve_road_elementwise(reg, batch, W0)
    assert np.array_equal(out, batch.features @ W0.data)


@pytest.mark.parametrize("kind", ["road", "lora", "diag"])
def test_batched_kernels_match_sequential_oracle(kind):
    """Test heterogeneous batches equal per-request serving within 1e-12."""
    for case in range(50):
        rng = SeededRng(2).child(case)
        b = 1 + case % 16
        d1, d2 = 6, 8
        reg = random_registry(kind, b, d1, d2, rng)
        batch = make_batch(b, 3, d1, rng.child(100))
        W0 = DenseMatrix.random(d1, d2, rng.child(101))
        out = serve(reg, batch, W0)
        assert np.max(np.abs(out - serve_sequential_oracle(reg, batch, W0))) <= 1e-12


def test_single_request_lora_matches_lora_apply():
    """Test b=1 equals lora_apply per token."""
    rng = SeededRng(3)
    reg = random_registry("lora", 1, 4, 6, rng)
    batch = make_batch(1, 5, 4, rng.child(9))
    W0 = DenseMatrix.random(4, 6, rng.child(10))
    out = serve_lora_bmm(reg, batch, W0)
    for t in range(5):
        z = lora_apply(reg.get("a0"), W0, DenseVector(batch.features[0, t]))
        np.testing.assert_allclose(out[0, t], z.data, atol=1e-12)


def test_shared_lora_matches_merged_path():
    """Test a homogeneous batch through BMM equals the merged weight within 1e-9."""
    rng = SeededRng(4)
    reg = AdapterRegistry({"s": LoraAdapter.random(8, 8, 4, rng, scaling=0.5)}).freeze()
    batch = HeteroBatch(rng.normal((5, 3, 8)), ("s",) * 5)
    W0 = DenseMatrix.random(8, 8, rng)
    merged = serve_lora_merged_homogeneous(reg, batch, W0)
    np.testing.assert_allclose(serve_lora_bmm(reg, batch, W0), merged, atol=1e-9)


def test_merged_requires_one_adapter():
    """Test merged serving refuses heterogeneous batches."""
    rng = SeededRng(5)
    reg = random_registry("lora", 2, 4, 4, rng)
    with pytest.raises(RoutingError, match="one adapter"):
        serve_lora_merged_homogeneous(
            reg, make_batch(2, 1, 4, rng), DenseMatrix.identity(4)
        )


def test_mixed_kinds_rejected():
    """Test a kernel refuses requests routed to other adapter kinds."""
    reg = AdapterRegistry(
        {
            "a0": RoadAdapter.identity("road1", 4),
            "a1": LoraAdapter.init(4, 4, 1, SeededRng(0)),
        }
    ).freeze()
    batch = HeteroBatch(np.zeros((2, 1, 4)), ("a0", "a1"))
    with pytest.raises(RoutingError):
        serve_lora_bmm(reg, batch, DenseMatrix.identity(4))
    with pytest.raises(RoutingError, match="mixes"):
        serve(reg, batch, DenseMatrix.identity(4))


def test_unequal_lora_ranks_rejected():
    """Test one BMM call needs a single rank."""
    rng = SeededRng(6)
    reg = AdapterRegistry(
        {"a0": LoraAdapter.random(4, 4, 1, rng), "a1": LoraAdapter.random(4, 4, 2, rng)}
    ).freeze()
    with pytest.raises(RoutingError, match="equal ranks"):
        serve_lora_bmm(
            reg, HeteroBatch(np.zeros((2, 1, 4)), ("a0", "a1")), DenseMatrix.identity(4)
        )


def test_road_d2_mismatch():
    """Test RoAd adapters must match the base output width."""
    reg = AdapterRegistry({"a0": RoadAdapter.identity("road1", 4)}).freeze()
    with pytest.raises(DimensionError):
        serve_road_elementwise(
            reg, HeteroBatch(np.zeros((1, 1, 6)), ("a0",)), DenseMatrix.identity(6)
        )


@pytest.mark.parametrize("kind", ["road", "lora", "diag"])
def test_permuting_requests_permutes_outputs(kind):
    """Test no state leaks between requests."""
    rng = SeededRng(7)
    reg = random_registry(kind, 8, 6, 8, rng)
    batch = make_batch(8, 4, 6, rng.child(50))
    W0 = DenseMatrix.random(6, 8, rng.child(51))
    order = rng.permutation(8)
    assert np.array_equal(
        serve(reg, batch.permuted(order), W0), serve(reg, batch, W0)[order]
    )


@pytest.mark.parametrize("kind", ["road", "lora", "diag"])
def test_decode_mode_matches_prefill(kind):
    """Test token-by-token serving equals one-shot serving."""
    rng = SeededRng(8)
    reg = random_registry(kind, 4, 6, 8, rng)
    batch = make_batch(4, 5, 6, rng.child(60))
    W0 = DenseMatrix.random(6, 8, rng.child(61))
    prefill = serve(reg, batch, W0, mode=ServeMode.PREFILL)
    decode = serve(reg, batch, W0, mode=ServeMode.DECODE)
    np.testing.assert_allclose(decode, prefill, atol=1e-12)


def test_flop_counters_closed_form():
    """Test adapter FLOPs are b l 2r(d1 + d2) for LoRA and b l 3 d2 for RoAd."""
    rng = SeededRng(9)
    b, l, d1, d2, r = 8, 2, 512, 512, 8
    W0 = DenseMatrix.random(d1, d2, rng)
    batch = make_batch(b, l, d1, rng.child(1))

    lora_counter = FlopCounter()
    serve_lora_bmm(
        random_registry("lora", b, d1, d2, rng, r=r), batch, W0, counter=lora_counter
    )
    assert lora_counter.adapter == b * l * 2 * r * (d1 + d2)
    assert lora_counter.base == 2 * b * l * d1 * d2

    road_counter = FlopCounter()
    serve_road_elementwise(
        random_registry("road", b, d1, d2, rng), batch, W0, counter=road_counter
    )
    assert road_counter.adapter == b * l * 3 * d2

    diag_counter = FlopCounter()
    serve_diag_elementwise(
        random_registry("diag", b, d1, d2, rng), batch, W0, counter=diag_counter
    )
    assert diag_counter.adapter == b * l * d2


def test_bench_preconditions():
    """Test repetitions and warmup minimums."""
    spec = WorkloadSpec(d1=64, d2=64, token_counts=(4,))
    with pytest.raises(PreconditionError, match="repetitions"):
        run_bench(spec, repetitions=2)
    with pytest.raises(PreconditionError, match="warmup"):
        run_bench(spec, warmup=0)
    with pytest.raises(PreconditionError, match="Unknown kernels"):
        WorkloadSpec(kernels=("fused",))
    with pytest.raises(PreconditionError, match="1..32"):
        WorkloadSpec(batch_sizes=(64,))
    with pytest.raises(PreconditionError, match="threads"):
        WorkloadSpec(threads=0)


def test_measure_rejects_sub_resolution_work():
    """Test work shorter than 100 timer ticks is refused."""
    with patch("road_adapters.serving.timer_tick_ns", return_value=1e9):
        with pytest.raises(MeasurementError, match="larger workload"):
            measure_ns(lambda: None, repetitions=3, warmup=1)


def test_bench_reports_are_deterministic_in_flops():
    """Test two runs with one seed report identical FLOP counts."""
    spec = WorkloadSpec(
        kernels=("lora_bmm", "road_elementwise"),
        batch_sizes=(4,),
        token_counts=(64,),
        ranks=(8,),
        d1=256,
        d2=256,
        mode="prefill",
        precision="float64",
        seed=3,
    )
    first = run_bench(spec, repetitions=3, warmup=1)
    second = run_bench(spec, repetitions=3, warmup=1)
    assert [r.flops for r in first] == [r.flops for r in second]
    assert [r.kernel for r in first] == ["lora_bmm", "road_elementwise"]
    for report in first:
        assert report.tokens_per_second == pytest.approx(
            report.b * report.l / (report.wall_ns / 1e9)
        )
        assert report.wall_ns > 0 and report.adapter_ns > 0
        assert report.threads == 1
        assert report.base_flops == 2 * report.b * report.l * report.d1 * report.d2


def test_bench_report_columns():
    """Test CSV column order starts with the fixed schema."""
    assert BenchReport.columns()[:9] == [
        "kernel", "b", "l", "d1", "d2", "r", "wall_ns", "flops", "tokens_per_second",
    ]


@pytest.mark.perf
def test_adapter_time_ordering():
    """Test RoAd adapter time beats LoRA BMM and merged LoRA beats unmerged."""
    spec = WorkloadSpec(
        kernels=("lora_bmm", "lora_merged_homogeneous", "road_elementwise"),
        batch_sizes=(8,),
        token_counts=(2048,),
        ranks=(8,),
        d1=2048,
        d2=2048,
        mode="decode",
    )
    reports = {r.kernel: r for r in run_bench(spec, repetitions=5, warmup=1)}
    assert reports["road_elementwise"].adapter_ns < reports["lora_bmm"].adapter_ns
    assert reports["lora_merged_homogeneous"].wall_ns < reports["lora_bmm"].wall_ns


@pytest.mark.perf
def test_road_time_flat_in_rank():
    """Test rank grows LoRA adapter time but not RoAd time."""
    spec = WorkloadSpec(
        kernels=("lora_bmm", "road_elementwise"),
        batch_sizes=(8,),
        token_counts=(256,),
        ranks=(8, 64),
        d1=1024,
        d2=1024,
        mode="prefill",
    )
    reports = run_bench(spec, repetitions=5, warmup=1)
    lora = [r.adapter_ns for r in reports if r.kernel == "lora_bmm"]
    road = [r.adapter_ns for r in reports if r.kernel == "road_elementwise"]
    assert lora[1] > lora[0]
    assert road[1] < 2 * road[0]


def test_decode_bench_pays_equal_base_work_per_token():
    """Test merged and unmerged kernels launch one base product per decode step."""
    spec = WorkloadSpec(
        batch_sizes=(4,), token_counts=(6,), ranks=(2,), d1=32, d2=32, seed=5
    )
    point = make_bench_point(spec, 4, 6, 2)
    base_work = {}
    for kernel in KernelKind:
        counter = FlopCounter()
        bench_call(kernel, point, ServeMode.DECODE, counter)()
        assert counter.base_calls == 6, kernel
        base_work[kernel] = counter.base
    assert len(set(base_work.values())) == 1
    assert base_work[KernelKind.LORA_BMM] == 2 * 4 * 6 * 32 * 32


def test_bench_call_outputs_match_merged_path():
    """Test the end-to-end merged call equals unmerged LoRA on the shared adapter."""
    spec = WorkloadSpec(d1=16, d2=16, precision="float64")
    point = make_bench_point(spec, 3, 4, 2)
    reg, ids = point.registries[KernelKind.LORA_MERGED_HOMOGENEOUS]
    merged = bench_call(KernelKind.LORA_MERGED_HOMOGENEOUS, point, ServeMode.DECODE)()
    unmerged = serve_lora_bmm(reg, HeteroBatch(point.features, ids), point.W0)
    np.testing.assert_allclose(merged, unmerged, rtol=1e-10, atol=1e-10)


def test_bench_pins_blas_threads():
    """Test the sweep runs under the requested BLAS thread limit and reports it."""
    spec = WorkloadSpec(
        kernels=("diag_elementwise",),
        batch_sizes=(2,),
        token_counts=(8,),
        ranks=(2,),
        d1=32,
        d2=32,
        mode="prefill",
        threads=2,
    )
    with patch("road_adapters.serving.threadpool_limits") as limits, patch(
        "road_adapters.serving.measure_ns", return_value=1000
    ):
        reports = run_bench(spec, repetitions=3, warmup=1)
    limits.assert_called_once_with(limits=2)
    assert [r.threads for r in reports] == [2]
    assert BenchReport.columns()[-1] == "threads"
