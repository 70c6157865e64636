"""
Test cases for the road-adapters command line.
"""

import json
from unittest.mock import patch

import numpy as np
import pytest

from road_adapters import __version__
from road_adapters.adapter_file import load_adapters, save_adapters
from road_adapters.cli import main
from road_adapters.config import reset_settings
from road_adapters.numeric import DenseVector, SeededRng
from road_adapters.reports import parse_report
from road_adapters.road import RoadAdapter, apply_factored, factorize


@pytest.fixture(autouse=True)
def isolated_settings(tmp_path):
    """Point settings at an empty file and a temporary output directory."""
    reset_settings()
    env = {"ROAD_ADAPTERS_OUTPUT_DIR": str(tmp_path / "out")}
    settings_path = tmp_path / "settings"
    with patch("road_adapters.config.DEFAULT_SETTINGS_PATH", settings_path):
        with patch.dict("os.environ", env, clear=True):
            yield
    reset_settings()


def last_json_line(text: str) -> dict:
    lines = [line for line in text.splitlines() if line.startswith("{")]
    return json.loads(lines[-1])


def test_no_command_is_usage_error(capsys):
    """Test running without a subcommand exits 2."""
    assert main([]) == 2


def test_unknown_subcommand_and_flag(capsys):
    """Test argparse usage errors exit 2."""
    assert main(["serve"]) == 2
    assert main(["verify", "--bogus"]) == 2


def test_version(capsys):
    """Test --version prints the package version."""
    assert main(["--version"]) == 0
    assert __version__ in capsys.readouterr().out


def test_verify_twice_is_identical(capsys):
    """Test one seed gives identical pass/fail output."""
    assert main(["verify", "--seed", "7", "--cases", "2", "--no-training"]) == 0
    first = capsys.readouterr().out
    assert main(["verify", "--seed", "7", "--cases", "2", "--no-training"]) == 0
    second = capsys.readouterr().out
    assert first == second
    assert last_json_line(first) == {"failures": []}


def test_verify_writes_json(tmp_path, capsys):
    """Test --output stores every check result."""
    out = tmp_path / "verify.json"
    assert main(["verify", "--cases", "1", "--no-training", "--output", str(out)]) == 0
    payload = json.loads(out.read_text())
    assert payload["cases"] == 1
    assert all(r["passed"] for r in payload["results"])


def test_gradcheck_failure_list(capsys):
    """Test failing gradient checks exit 1 with a machine-readable list."""
    assert main(["gradcheck", "--kinds", "road1", "--sizes", "4"]) == 0
    capsys.readouterr()
    argv = ["gradcheck", "--kinds", "road1", "--sizes", "4", "--threshold", "0"]
    assert main(argv) == 1
    failures = last_json_line(capsys.readouterr().out)["failures"]
    assert failures[0]["kind"] == "road1"


def test_export_then_import(tmp_path, capsys):
    """Test exported adapters pass validation on import."""
    path = tmp_path / "adapter.rdad"
    argv = ["export", "--variant", "road2", "--d2", "8", "--layers", "q", "v"]
    assert main(argv + ["--out", str(path)]) == 0
    assert main(["import", str(path)]) == 0
    out = capsys.readouterr().out
    assert "CRC ok" in out
    assert "q: 16 parameters" in out
    layers = load_adapters(path)
    assert list(layers) == ["q", "v"]


def test_export_identity_payload(tmp_path, capsys):
    """Test identity export writes zero angles and unit scales."""
    path = tmp_path / "identity.rdad"
    assert main(["export", "--init", "identity", "--out", str(path)]) == 0
    assert main(["import", str(path), "--json"]) == 0
    out = capsys.readouterr().out
    payload = json.loads(out[out.index("{"):])
    assert payload["layer0"]["theta"] == [0.0] * 4
    assert payload["layer0"]["alpha"] == [1.0] * 4


def test_import_corrupt_file(tmp_path, capsys):
    """Test corrupt files exit 1 and name the failing field."""
    path = tmp_path / "bad.rdad"
    path.write_bytes(b"NOPE" + bytes(40))
    assert main(["import", str(path)]) == 1
    assert "magic" in capsys.readouterr().out


def test_export_rejects_unknown_variant(tmp_path, capsys):
    """Test bad variants are configuration errors."""
    out = str(tmp_path / "x.rdad")
    assert main(["export", "--variant", "road3", "--out", out]) == 2


def test_compose_files(tmp_path, capsys):
    """Test compose stitches two files block by block."""
    rng = SeededRng(1)
    a = RoadAdapter.random("road1", 8, rng.child(1))
    b = RoadAdapter.random("road1", 8, rng.child(2))
    save_adapters(tmp_path / "a.rdad", {"layer0": a})
    save_adapters(tmp_path / "b.rdad", {"layer0": b})
    out = tmp_path / "c.rdad"
    argv = [
        "compose",
        "--inputs",
        str(tmp_path / "a.rdad"),
        str(tmp_path / "b.rdad"),
        "--masks",
        "0-1",
        "2-3",
    ]
    assert main(argv + ["--out", str(out)]) == 0
    composed = load_adapters(out)["layer0"]
    loaded_a = load_adapters(tmp_path / "a.rdad")["layer0"]
    h = DenseVector.random(8, rng)
    z = apply_factored(factorize(composed), h).data
    np.testing.assert_array_equal(
        z[:4], apply_factored(factorize(loaded_a), h).data[:4]
    )


def test_compose_overlap_fails(tmp_path, capsys):
    """Test overlapping masks exit 1."""
    save_adapters(tmp_path / "a.rdad", {"layer0": RoadAdapter.identity("road1", 8)})
    argv = [
        "compose",
        "--inputs",
        str(tmp_path / "a.rdad"),
        str(tmp_path / "a.rdad"),
        "--masks",
        "0-2",
        "2-3",
    ]
    assert main(argv + ["--out", str(tmp_path / "c.rdad")]) == 1
    assert "CompositionConflictError" in capsys.readouterr().out


def test_compose_mask_count_mismatch(tmp_path, capsys):
    """Test one mask per input is required."""
    save_adapters(tmp_path / "a.rdad", {"layer0": RoadAdapter.identity("road1", 8)})
    single = str(tmp_path / "a.rdad")
    assert main(["compose", "--inputs", single, "--masks", "0", "1"]) == 2


def test_analyze_pairs(tmp_path, capsys):
    """Test analyze writes one stats row per layer."""
    X0 = SeededRng(2).normal((20, 4))
    pairs = tmp_path / "pairs.npz"
    np.savez(
        pairs,
        **{"layer1.x0": X0, "layer1.x": 2.0 * X0, "layer2.x0": X0, "layer2.x": X0},
    )
    out = tmp_path / "analyze.csv"
    assert main(["analyze", "--pairs", str(pairs), "--output", str(out)]) == 0
    kind, rows = parse_report(out.read_text(), "analyze")
    assert [r["layer"] for r in rows] == ["layer1", "layer2"]
    assert float(rows[0]["mean_delta_m"]) == pytest.approx(1.0)
    assert float(rows[1]["mean_delta_d"]) == pytest.approx(1.0)


def test_analyze_needs_pairs(capsys):
    """Test analyze without input is a configuration error."""
    assert main(["analyze"]) == 2


def test_train_toy_writes_trace(tmp_path, capsys):
    """Test train-toy writes its per-epoch trace."""
    out = tmp_path / "trace.csv"
    argv = [
        "train-toy",
        "--d2",
        "8",
        "--samples",
        "200",
        "--epochs",
        "3",
        "--no-baseline",
        "--output",
        str(out),
    ]
    main(argv)
    _, rows = parse_report(out.read_text(), "trace")
    assert [r["epoch"] for r in rows] == ["0", "1", "2"]


def test_train_toy_optimizer_choice(tmp_path, capsys):
    """Test train-toy accepts sgd and rejects unknown optimizers from config."""
    out = tmp_path / "trace.csv"
    argv = [
        "train-toy", "--d2", "8", "--samples", "100", "--epochs", "2", "--lr", "0.001"
    ]
    main(argv + ["--optimizer", "sgd", "--no-baseline", "--output", str(out)])
    assert out.exists()
    bad = tmp_path / "bad.yaml"
    bad.write_text("train-toy:\n  optimizer: rmsprop\n")
    assert main(["--config", str(bad)] + argv) == 2


def test_bench_small_sweep(tmp_path, capsys):
    """Test bench writes a versioned CSV with one row per kernel."""
    out = tmp_path / "bench.csv"
    argv = ["bench", "--b", "2", "--tokens", "64", "--r", "4", "--d1", "256"]
    argv += ["--d2", "256", "--kernels", "lora_bmm", "road_elementwise"]
    argv += ["--mode", "prefill", "--repetitions", "3", "--output", str(out)]
    assert main(argv) == 0
    _, rows = parse_report(out.read_text(), "bench")
    assert [r["kernel"] for r in rows] == ["lora_bmm", "road_elementwise"]
    assert int(rows[1]["flops"]) == 2 * 64 * 3 * 256
    assert [r["threads"] for r in rows] == ["1", "1"]


def test_run_config_file(tmp_path, capsys):
    """Test config sections supply defaults and unknown keys are usage errors."""
    good = tmp_path / "run.yaml"
    good.write_text("gradcheck:\n  kinds: [road1]\n  sizes: [4]\n")
    assert main(["--config", str(good), "gradcheck"]) == 0
    assert "road1" in capsys.readouterr().out
    bad = tmp_path / "bad.yaml"
    bad.write_text("gradcheck:\n  kind: road1\n")
    assert main(["--config", str(bad), "gradcheck"]) == 2


def test_default_output_dir_from_environment(tmp_path, capsys):
    """Test outputs default to ROAD_ADAPTERS_OUTPUT_DIR."""
    assert main(["export", "--init", "identity"]) == 0
    assert (tmp_path / "out" / "adapter.rdad").exists()
