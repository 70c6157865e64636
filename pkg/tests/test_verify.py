"""
Test cases for the invariant suite.
"""

from unittest.mock import patch

import pytest

from road_adapters import verify
from road_adapters.numeric import SeededRng
from road_adapters.trainer import GradCheckEntry, GradCheckReport
from road_adapters.verify import (
    CheckResult,
    check_composition,
    check_equivalence,
    check_gradients,
    check_dii,
    check_flop_ratio,
    check_param_counts,
    check_serialization,
    check_serving,
    run_suite,
)

SUITE_NAMES = [
    "equivalence",
    "merge",
    "orthogonality",
    "gradients",
    "param_counts",
    "flop_ratio",
    "serving",
    "composition",
    "dii_identity",
    "serialization",
]


def test_quick_suite_passes():
    """Test every check passes on a small run."""
    results = run_suite(seed=7, cases=4, include_training=False)
    assert [r.name for r in results] == SUITE_NAMES
    assert all(r.passed for r in results), [r for r in results if not r.passed]


def test_suite_is_deterministic():
    """Test identical seeds give identical results."""
    first = run_suite(seed=3, cases=2, include_training=False)
    second = run_suite(seed=3, cases=2, include_training=False)
    assert first == second


def test_progress_callback_sees_every_check():
    """Test progress is reported once per check in order."""
    seen = []
    run_suite(seed=0, cases=1, include_training=False, progress=seen.append)
    assert [r.name for r in seen] == SUITE_NAMES
    assert all(isinstance(r, CheckResult) for r in seen)


def test_exact_checks():
    """Test parameter counts and the FLOP ratio at d=4096, r=8."""
    assert check_param_counts().passed
    ratio = check_flop_ratio()
    assert ratio.passed
    assert ratio.value == pytest.approx(3 / 32)


@pytest.mark.parametrize(
    "check",
    [check_serving, check_composition, check_dii, check_serialization],
)
def test_property_checks_pass(check):
    """Test each property check on its own stream."""
    result = check(SeededRng(11), 10)
    assert result.passed, result.detail


def test_equivalence_runs_full_cases_through_1024():
    """Test every case runs up to d2=1024 and only 4096 is thinned."""
    seen = []
    real = verify.apply_dense_oracle

    def record(adapter, h):
        seen.append(adapter.d2)
        return real(adapter, h)

    with patch("road_adapters.verify.apply_dense_oracle", side_effect=record):
        assert check_equivalence(SeededRng(2), 30).passed
    per_variant = {d2: seen.count(d2) // 3 for d2 in set(seen)}
    assert per_variant == {2: 30, 4: 30, 64: 30, 1024: 30, 4096: 3}


def test_gradient_check_uses_every_case_and_wide_size():
    """Test the suite forwards its case count and checks d=8 and d=64."""
    report = GradCheckReport(threshold=1e-5)
    report.entries.append(GradCheckEntry("road1", 8, 0.0, True))
    with patch(
        "road_adapters.verify.gradient_check_suite", return_value=report
    ) as suite:
        assert check_gradients(seed=1, cases=40).passed
    _, kwargs = suite.call_args
    assert kwargs["cases"] == 40
    assert tuple(kwargs["sizes"]) == (8, 64)
    with patch("road_adapters.verify.check_gradients") as gradients:
        run_suite(seed=1, cases=3, include_training=False)
    gradients.assert_called_once_with(1, 3)


def test_gradient_check_small_run_passes():
    """Test analytic gradients agree at both sizes on a couple of cases."""
    result = check_gradients(seed=4, cases=2)
    assert result.passed, result.detail


def test_composition_flags_gradient_leaks():
    """Test leaked gradient outside the read dims fails the check."""
    with patch("road_adapters.verify._gradient_leaks", return_value=1):
        result = check_composition(SeededRng(5), 2)
    assert not result.passed
    assert "gradient leaks=2" in result.detail


def test_composition_flags_stitching_gap():
    """Test stitched losses drifting from single-task losses fail the check."""
    real = verify.composition_experiment

    def drifted(*args, **kwargs):
        result = real(*args, **kwargs)
        result.stitched_losses = tuple(x + 1e-3 for x in result.stitched_losses)
        return result

    with patch("road_adapters.verify.composition_experiment", side_effect=drifted):
        result = check_composition(SeededRng(5), 1)
    assert not result.passed
    assert result.value == pytest.approx(1e-3)
