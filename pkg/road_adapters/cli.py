"""
CLI interface for road-adapters
"""

import argparse
import json
import logging
import sys
from pathlib import Path
from typing import Any, Dict, List, Optional, Sequence

import numpy as np

from . import __version__
from .adapter_file import layer_names, load_adapters, save_adapters
from .analysis import analyze_layers, compose, mask_from_spec
from .config import RunConfig, Settings, get_settings
from .exceptions import ConfigError, RoadError
from .numeric import SeededRng
from .reports import (
    LAYER_STATS_COLUMNS,
    bench_csv,
    gradcheck_summary,
    layer_stats_rows,
    save_csv,
    save_json,
    to_json,
    trace_rows,
)
from .road import RoadAdapter, RoadVariant
from .serving import WorkloadSpec, run_bench
from .trainer import (
    OptimizerKind,
    diag_recovery_baseline,
    gradient_check_suite,
    rotation_recovery_experiment,
)
from .verify import CheckResult, run_suite

logger = logging.getLogger(__name__)

LOG_FORMAT = "%(asctime)s %(levelname)s %(name)s: %(message)s"


def _pick(flag: Any, section: Any, fallback: Any = None) -> Any:
    """Flag beats run-config value beats fallback."""
    if flag is not None:
        return flag
    if section is not None:
        return section
    return fallback


def _output_path(
    flag: Optional[str], section: Optional[str], settings: Settings, name: str
) -> Path:
    return Path(_pick(flag, section, str(settings.output_dir / name)))


def _variant(text: str) -> RoadVariant:
    try:
        return RoadVariant.parse(text)
    except ValueError as e:
        raise ConfigError(str(e)) from e


def _optimizer(text: str) -> OptimizerKind:
    try:
        return OptimizerKind(text)
    except ValueError:
        known = ", ".join(k.value for k in OptimizerKind)
        raise ConfigError(
            f"Unknown optimizer {text!r}; expected one of {known}"
        ) from None


def _print_failures(failures: List[Dict[str, Any]]) -> None:
    print(json.dumps({"failures": failures}, sort_keys=True))


def verify_command(args: argparse.Namespace, run: RunConfig, settings: Settings) -> int:
    """Run the invariant suite."""
    section = run.section("verify")
    seed = _pick(args.seed, section.seed, settings.default_seed)
    cases = _pick(args.cases, section.cases)
    training = section.training and not args.no_training
    print(f"🔍 Running invariant suite (seed={seed}, cases={cases})...")

    def show(result: CheckResult) -> None:
        mark = "✅" if result.passed else "❌"
        print(f"  {mark} {result.name}: {result.detail}")

    results = run_suite(
        seed=seed, cases=cases, include_training=training, progress=show
    )
    failures = [{"check": r.name, "detail": r.detail} for r in results if not r.passed]
    output = _pick(args.output, section.output)
    if output:
        save_json(output, {"seed": seed, "cases": cases, "results": results})
    _print_failures(failures)
    if failures:
        print(f"❌ {len(failures)} of {len(results)} checks failed")
        return 1
    print(f"🎉 All {len(results)} checks passed")
    return 0


def gradcheck_command(
    args: argparse.Namespace, run: RunConfig, settings: Settings
) -> int:
    """Compare analytic and finite-difference gradients."""
    section = run.section("gradcheck")
    seed = _pick(args.seed, section.seed, settings.default_seed)
    report = gradient_check_suite(
        kinds=_pick(args.kinds, section.kinds),
        sizes=_pick(args.sizes, section.sizes),
        seed=seed,
        cases=_pick(args.cases, section.cases),
        threshold=_pick(args.threshold, section.threshold),
    )
    for entry in report.entries:
        mark = "✅" if entry.passed else "❌"
        error = entry.max_rel_error
        print(f"  {mark} {entry.kind:<7} d={entry.size:<5} max rel error {error:.3e}")
    output = _pick(args.output, section.output)
    if output:
        save_json(output, gradcheck_summary(report))
    _print_failures(
        [
            {"kind": e.kind, "size": e.size, "max_rel_error": e.max_rel_error}
            for e in report.failures()
        ]
    )
    return 0 if report.passed else 1


def train_toy_command(
    args: argparse.Namespace, run: RunConfig, settings: Settings
) -> int:
    """Rotation-recovery experiment with an optional diagonal baseline."""
    section = run.section("train-toy")
    seed = _pick(args.seed, section.seed, settings.default_seed)
    d2 = _pick(args.d2, section.d2)
    variant = _variant(_pick(args.variant, section.variant))
    kwargs = dict(
        n_samples=_pick(args.samples, section.samples),
        epochs=_pick(args.epochs, section.epochs),
        lr=_pick(args.lr, section.lr),
        batch_size=_pick(args.batch_size, section.batch_size),
        optimizer=_optimizer(_pick(args.optimizer, section.optimizer)),
    )
    print(f"🚀 Training {variant.name} on a hidden rotation (d2={d2}, seed={seed})")
    result = rotation_recovery_experiment(d2, variant, seed, **kwargs)
    max_angle = float(np.max(result.angle_errors))
    print(f"  final MSE: {result.final_loss:.3e}")
    print(f"  max block angle error: {max_angle:.3e}")
    print(f"  max block entry error: {result.max_block_error:.3e}")

    out = _output_path(args.output, section.output, settings, "train-toy.csv")
    save_csv(out, "trace", ["epoch", "loss"], trace_rows(result.trace))
    print(f"📄 Trace written to {out}")

    failures = []
    if not result.final_loss < 1e-3:
        failures.append({"check": "final_mse", "value": result.final_loss})
    if not max_angle < 1e-2:
        failures.append({"check": "angle_error", "value": max_angle})
    baseline = section.baseline and not args.no_baseline
    if baseline:
        diag = diag_recovery_baseline(d2, seed, **kwargs)
        ratio = diag.final_loss / max(result.final_loss, 1e-300)
        print(
            f"  diagonal baseline MSE: {diag.final_loss:.3e} "
            f"(least-squares floor {diag.oracle_loss:.3e}, {ratio:.1f}x)"
        )
        if ratio < 10.0:
            failures.append({"check": "baseline_gap", "value": ratio})
    _print_failures(failures)
    return 1 if failures else 0


def bench_command(args: argparse.Namespace, run: RunConfig, settings: Settings) -> int:
    """Serving sweep over batch sizes, token counts and ranks."""
    section = run.section("bench")
    spec = WorkloadSpec(
        kernels=tuple(_pick(args.kernels, section.kernels)),
        batch_sizes=tuple(_pick(args.b, section.batch_sizes)),
        token_counts=tuple(_pick(args.tokens, section.token_counts)),
        ranks=tuple(_pick(args.r, section.ranks)),
        d1=_pick(args.d1, section.d1),
        d2=_pick(args.d2, section.d2),
        mode=_pick(args.mode, section.mode),
        precision=_pick(args.precision, section.precision, settings.bench_precision),
        seed=_pick(args.seed, section.seed, settings.default_seed),
        threads=_pick(args.threads, section.threads),
    )
    kernels = ", ".join(spec.kernels)
    print(f"⏱️  Benchmarking {kernels} ({spec.mode}, {spec.precision})...")
    reports = run_bench(
        spec,
        repetitions=_pick(args.repetitions, section.repetitions),
        warmup=_pick(args.warmup, section.warmup),
    )
    text = bench_csv(reports)
    out = _output_path(args.output, section.output, settings, "bench.csv")
    out.parent.mkdir(parents=True, exist_ok=True)
    out.write_text(text)
    print(text, end="")
    print(f"📄 Report written to {out}")
    return 0


def compose_command(
    args: argparse.Namespace, run: RunConfig, settings: Settings
) -> int:
    """Stitch adapter files trained on disjoint block subsets."""
    section = run.section("compose")
    inputs = _pick(args.inputs, section.inputs or None, [])
    masks = _pick(args.masks, section.masks or None, [])
    if not inputs or len(inputs) != len(masks):
        raise ConfigError(
            "compose needs one --masks entry per input, "
            f"got {len(inputs)} inputs and {len(masks)} masks"
        )
    bundles = [load_adapters(path) for path in inputs]
    try:
        parsed = [mask_from_spec(spec) for spec in masks]
    except ValueError as e:
        raise ConfigError(f"Bad mask in {masks}: {e}") from e
    names = list(bundles[0])
    for path, bundle in zip(inputs, bundles):
        if list(bundle) != names:
            raise ConfigError(f"{path} has layers {list(bundle)}, expected {names}")
    composed = {
        name: compose([(bundle[name], mask) for bundle, mask in zip(bundles, parsed)])
        for name in names
    }
    out = _output_path(args.out, section.output, settings, "composed.rdad")
    save_adapters(out, composed)
    print(f"✅ Composed {len(inputs)} adapters over {len(names)} layers into {out}")
    return 0


def analyze_command(
    args: argparse.Namespace, run: RunConfig, settings: Settings
) -> int:
    """Magnitude and angle change over representation pairs."""
    section = run.section("analyze")
    pairs_path = _pick(args.pairs, section.pairs)
    if not pairs_path:
        raise ConfigError("analyze needs --pairs")
    with np.load(pairs_path) as archive:
        keys = set(archive.files)
        layers = sorted(k[: -len(".x0")] for k in keys if k.endswith(".x0"))
        missing = [name for name in layers if f"{name}.x" not in keys]
        if not layers or missing:
            raise ConfigError(
                f"{pairs_path} needs matching '<layer>.x0' and '<layer>.x' arrays "
                f"(missing {missing})"
            )
        stats = analyze_layers(
            (name, archive[f"{name}.x0"], archive[f"{name}.x"]) for name in layers
        )
    for s in stats:
        print(
            f"  {s.layer}: n={s.count} "
            f"mean dM={s.mean_delta_m:.4f} mean dD={s.mean_delta_d:.4f}"
        )
    out = _output_path(args.output, section.output, settings, "analyze.csv")
    save_csv(out, "analyze", LAYER_STATS_COLUMNS, layer_stats_rows(stats))
    print(f"📄 Report written to {out}")
    return 0


def export_command(args: argparse.Namespace, run: RunConfig, settings: Settings) -> int:
    """Write adapters to an adapter file."""
    seed = _pick(args.seed, None, settings.default_seed)
    variant = _variant(args.variant)
    layers: Dict[str, RoadAdapter] = {}
    for k, name in enumerate(args.layers):
        if args.init == "identity":
            layers[name] = RoadAdapter.identity(variant, args.d2)
        elif args.init == "random":
            layers[name] = RoadAdapter.random(
                variant, args.d2, SeededRng(seed).child(k)
            )
        else:
            layers[name] = rotation_recovery_experiment(
                args.d2, variant, seed + k
            ).adapter
    out = _output_path(args.out, None, settings, "adapter.rdad")
    save_adapters(out, layers)
    print(f"✅ Exported {len(layers)} {variant.name} layers (d2={args.d2}) to {out}")
    return 0


def import_command(args: argparse.Namespace, run: RunConfig, settings: Settings) -> int:
    """Validate and summarize an adapter file."""
    layers = load_adapters(args.path)
    first = next(iter(layers.values()))
    print(f"✅ {args.path}: CRC ok, {first.variant.name}, d2={first.d2}")
    for name, count in layer_names(layers):
        print(f"  - {name}: {count} parameters")
    if args.json:
        payload = {
            name: {"theta": a.theta, "alpha": a.alpha} for name, a in layers.items()
        }
        print(to_json(payload))
    return 0


COMMANDS = {
    "verify": verify_command,
    "gradcheck": gradcheck_command,
    "train-toy": train_toy_command,
    "bench": bench_command,
    "compose": compose_command,
    "analyze": analyze_command,
    "export": export_command,
    "import": import_command,
}


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="road-adapters",
        description="2D rotary adapters: verification, training, serving benchmarks",
    )
    parser.add_argument(
        "--version", action="version", version=f"road-adapters {__version__}"
    )
    parser.add_argument(
        "--config", help="YAML run config with one section per subcommand"
    )
    parser.add_argument(
        "--log-level", help="Logging level (overrides ROAD_ADAPTERS_LOG_LEVEL)"
    )
    subparsers = parser.add_subparsers(dest="command", help="Available commands")

    verify_parser = subparsers.add_parser("verify", help="Run the full invariant suite")
    verify_parser.add_argument("--seed", type=int)
    verify_parser.add_argument("--cases", type=int, help="Random cases per property")
    verify_parser.add_argument(
        "--no-training", action="store_true", help="Skip the rotation-recovery check"
    )
    verify_parser.add_argument("--output", help="Write all results as JSON")

    grad_parser = subparsers.add_parser(
        "gradcheck", help="Finite-difference gradient checks"
    )
    grad_parser.add_argument("--seed", type=int)
    grad_parser.add_argument(
        "--kinds", nargs="+", help="road1 road2 road4 lora cayley diag"
    )
    grad_parser.add_argument("--sizes", nargs="+", type=int)
    grad_parser.add_argument("--cases", type=int)
    grad_parser.add_argument("--threshold", type=float)
    grad_parser.add_argument("--output", help="Write a JSON summary")

    train_parser = subparsers.add_parser(
        "train-toy", help="Recover a hidden block rotation"
    )
    train_parser.add_argument("--seed", type=int)
    train_parser.add_argument("--d2", type=int)
    train_parser.add_argument("--variant")
    train_parser.add_argument("--samples", type=int)
    train_parser.add_argument("--epochs", type=int)
    train_parser.add_argument("--lr", type=float)
    train_parser.add_argument("--batch-size", type=int)
    train_parser.add_argument("--optimizer", choices=[k.value for k in OptimizerKind])
    train_parser.add_argument(
        "--no-baseline", action="store_true", help="Skip the diagonal baseline"
    )
    train_parser.add_argument("--output", help="Trace CSV path")

    bench_parser = subparsers.add_parser(
        "bench", help="Multi-adapter serving benchmark"
    )
    bench_parser.add_argument("--b", nargs="+", type=int, help="Batch sizes")
    bench_parser.add_argument(
        "--tokens", nargs="+", type=int, help="Tokens per request"
    )
    bench_parser.add_argument("--r", nargs="+", type=int, help="LoRA ranks")
    bench_parser.add_argument("--d1", type=int)
    bench_parser.add_argument("--d2", type=int)
    bench_parser.add_argument("--kernels", nargs="+")
    bench_parser.add_argument("--mode", choices=["prefill", "decode"])
    bench_parser.add_argument("--precision", choices=["float32", "float64"])
    bench_parser.add_argument("--repetitions", type=int)
    bench_parser.add_argument("--warmup", type=int)
    bench_parser.add_argument("--threads", type=int, help="BLAS threads during timing")
    bench_parser.add_argument("--seed", type=int)
    bench_parser.add_argument("--output", help="CSV path")

    compose_parser = subparsers.add_parser(
        "compose", help="Stitch adapters on disjoint block masks"
    )
    compose_parser.add_argument("--inputs", nargs="+")
    compose_parser.add_argument(
        "--masks", nargs="+", help='Block lists such as "0-7" or "8-15,20"'
    )
    compose_parser.add_argument("--out")

    analyze_parser = subparsers.add_parser(
        "analyze", help="Representation change statistics"
    )
    analyze_parser.add_argument(
        "--pairs", help="npz with '<layer>.x0' and '<layer>.x' arrays"
    )
    analyze_parser.add_argument("--output", help="CSV path")

    export_parser = subparsers.add_parser(
        "export", help="Write adapters to an adapter file"
    )
    export_parser.add_argument("--variant", default="road1")
    export_parser.add_argument("--d2", type=int, default=8)
    export_parser.add_argument("--layers", nargs="+", default=["layer0"])
    export_parser.add_argument(
        "--init", choices=["identity", "random", "trained"], default="random"
    )
    export_parser.add_argument("--seed", type=int)
    export_parser.add_argument("--out")

    import_parser = subparsers.add_parser(
        "import", help="Validate and summarize an adapter file"
    )
    import_parser.add_argument("path")
    import_parser.add_argument(
        "--json", action="store_true", help="Print parameters as JSON"
    )
    return parser


def configure_logging(flag: Optional[str], settings: Settings) -> None:
    level_name = (flag or settings.log_level).upper()
    level = getattr(logging, level_name, None)
    if not isinstance(level, int):
        logger.warning(f"Unknown log level {level_name}, using WARNING")
        level = logging.WARNING
    logging.basicConfig(level=level, format=LOG_FORMAT, stream=sys.stderr)


def main(argv: Optional[Sequence[str]] = None) -> int:
    """Main CLI entry point."""
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
    except SystemExit as e:
        return int(e.code) if isinstance(e.code, int) else 2

    if not args.command:
        parser.print_help()
        return 2

    settings = get_settings()
    configure_logging(args.log_level, settings)
    try:
        run = RunConfig.load(args.config) if args.config else RunConfig()
        return COMMANDS[args.command](args, run, settings)
    except ConfigError as e:
        logger.error(f"Configuration error: {e}")
        print(f"❌ Configuration error: {e}")
        return 2
    except RoadError as e:
        logger.error(f"{type(e).__name__}: {e}")
        print(f"❌ {type(e).__name__}: {e}")
        return 1


if __name__ == "__main__":
    sys.exit(main())
