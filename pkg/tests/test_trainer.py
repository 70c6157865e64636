"""
Test cases for the toy trainer and its experiments.
"""

import math

import numpy as np
import pytest

from road_adapters.analysis import SubspaceMask
from road_adapters.baselines import DiagScaleAdapter
from road_adapters.exceptions import DivergedError, PreconditionError
from road_adapters.numeric import DenseMatrix, SeededRng
from road_adapters.road import RoadAdapter
from road_adapters.trainer import (
    Head,
    Nonlinearity,
    OptimizerKind,
    TaskObjective,
    ToyLayer,
    ToyModel,
    TrainConfig,
    best_diagonal_mse,
    composition_experiment,
    diag_recovery_baseline,
    gradient_check_suite,
    gradient_error,
    lr_stability_experiment,
    make_adapter,
    make_rotation_task,
    rotation_recovery_experiment,
    train,
)


def identity_task(d: int = 8, n: int = 64):
    X = SeededRng(0).normal((n, d))
    layer = ToyLayer(DenseMatrix.identity(d), RoadAdapter.identity("road1", d))
    return ToyModel([layer]), X


def test_zero_epochs_rejected():
    """Test epochs must be at least one."""
    with pytest.raises(PreconditionError, match="epochs"):
        TrainConfig(epochs=0)
    with pytest.raises(PreconditionError, match="lr"):
        TrainConfig(lr=0.0)


def test_optimizer_kind_parsed_from_text():
    """Test optimizer names convert to the enum and unknown names fail."""
    assert TrainConfig(optimizer="sgd").optimizer is OptimizerKind.SGD
    assert TrainConfig().optimizer is OptimizerKind.ADAM
    with pytest.raises(PreconditionError, match="Unknown optimizer"):
        TrainConfig(optimizer="rmsprop")


def test_empty_data_rejected():
    """Test training needs data."""
    model, _ = identity_task()
    with pytest.raises(PreconditionError):
        train(model, (np.zeros((0, 8)), np.zeros((0, 8))), TrainConfig(epochs=1))


def test_identity_task_stays_optimal():
    """Test identity targets keep a fresh Road1 adapter at zero loss."""
    model, X = identity_task()
    trace = train(model, (X, X), TrainConfig(epochs=5, batch_size=16))
    assert trace.final_loss < 1e-6
    assert len(trace.records) == 5


def test_frozen_weights_unchanged():
    """Test training leaves every W0 bitwise identical."""
    task = make_rotation_task(8, seed=1, n_samples=200)
    before = task.W0.data.copy()
    model = ToyModel([ToyLayer(task.W0, RoadAdapter.identity("road2", 8))])
    train(model, (task.X, task.T), TrainConfig(epochs=3, batch_size=50))
    assert np.array_equal(task.W0.data, before)
    assert not task.W0.data.flags.writeable


def test_training_is_deterministic():
    """Test identical seeds give identical traces."""
    task = make_rotation_task(8, seed=2, n_samples=200)

    def run():
        model = ToyModel([ToyLayer(task.W0, RoadAdapter.identity("road1", 8))])
        return train(
            model, (task.X, task.T), TrainConfig(epochs=4, batch_size=32, seed=5)
        )

    a, b = run(), run()
    assert a.losses() == b.losses()
    assert np.array_equal(a.adapters[0].theta, b.adapters[0].theta)


def test_non_trainable_layer_is_skipped():
    """Test opted-out layers keep their adapter unchanged."""
    task = make_rotation_task(8, seed=3, n_samples=100)
    frozen = RoadAdapter.random("road1", 8, SeededRng(1))
    snapshot = frozen.copy()
    model = ToyModel([ToyLayer(task.W0, frozen, trainable=False)])
    assert model.parameter_refs() == []
    train(model, (task.X, task.T), TrainConfig(epochs=2, batch_size=50))
    assert np.array_equal(frozen.theta, snapshot.theta)


def test_divergence_reports_epoch():
    """Test an exploding loss raises with the epoch index."""
    X = SeededRng(4).normal((32, 4))
    model = ToyModel([ToyLayer(DenseMatrix.identity(4), DiagScaleAdapter.identity(4))])
    with np.errstate(all="ignore"):
        with pytest.raises(DivergedError) as excinfo:
            train(
                model,
                (X, 3.0 * X),
                TrainConfig(
                    lr=1e8, epochs=50, batch_size=8, optimizer=OptimizerKind.SGD
                ),
            )
    assert excinfo.value.epoch >= 0


def test_relu_and_tanh_forward():
    """Test nonlinearities apply to the adapted output."""
    W0 = DenseMatrix.identity(2)
    X = np.array([[1.0, -2.0]])
    relu = ToyModel([ToyLayer(W0, None, Nonlinearity.RELU)])
    tanh = ToyModel([ToyLayer(W0, None, Nonlinearity.TANH)])
    assert relu.predict(X).tolist() == [[1.0, 0.0]]
    np.testing.assert_allclose(tanh.predict(X), np.tanh(X))


def test_rotation_recovery_trivial_target():
    """Test a zero hidden rotation needs no training."""
    result = rotation_recovery_experiment(
        8, "road1", seed=0, n_samples=200, epochs=2, theta_range=0.0
    )
    assert result.final_loss < 1e-10


def test_rotation_recovery_road1():
    """Test Road1 recovers a hidden rotation at d2=32."""
    result = rotation_recovery_experiment(32, "road1", seed=0, epochs=300)
    assert result.final_loss < 1e-3
    assert np.max(result.angle_errors) < 1e-2
    assert result.max_block_error <= 1e-2


def test_rotation_recovery_road2():
    """Test Road2 fits the same task."""
    result = rotation_recovery_experiment(16, "road2", seed=1, epochs=200)
    assert result.final_loss < 1e-3


def test_rotation_recovery_rejects_odd_or_large():
    """Test d2 must be even and at most 256."""
    with pytest.raises(PreconditionError):
        rotation_recovery_experiment(7, "road1", seed=0)
    with pytest.raises(PreconditionError):
        rotation_recovery_experiment(258, "road1", seed=0)


def test_diag_baseline_is_far_worse():
    """Test magnitude-only scaling ends 10x worse, near its least-squares floor."""
    road = rotation_recovery_experiment(32, "road1", seed=0, epochs=300)
    diag = diag_recovery_baseline(32, seed=0, epochs=300)
    assert diag.final_loss >= 10.0 * road.final_loss
    assert diag.final_loss >= diag.oracle_loss - 1e-9
    assert diag.final_loss <= 1.05 * diag.oracle_loss


def test_best_diagonal_mse_zero_for_diagonal_targets():
    """Test the floor is zero when targets are a diagonal scaling."""
    H = SeededRng(2).normal((40, 4))
    assert best_diagonal_mse(H, H * np.array([1.0, 2.0, 3.0, 4.0])) < 1e-20


def test_road_tolerates_larger_learning_rate():
    """Test Road1 at 10x the LoRA rate stays finite and converges."""
    result = lr_stability_experiment(16, seed=0, lora_lr=0.005, epochs=50)
    assert result.road_lr == pytest.approx(0.05)
    assert result.road_finite
    assert result.road_loss < 1e-2
    assert math.isfinite(result.lora_loss)


@pytest.mark.parametrize("kind", ["road1", "road2", "road4", "lora", "cayley"])
def test_gradient_suite_small(kind):
    """Test every adapter kind passes at d=8 within 1e-5."""
    report = gradient_check_suite(kinds=[kind], sizes=(8,), seed=0)
    assert report.passed
    assert report.entries[0].max_rel_error <= 1e-5


def test_gradient_suite_diag_tight():
    """Test diagonal scaling gradients within 1e-6."""
    report = gradient_check_suite(kinds=["diag"], sizes=(8,), seed=0)
    assert report.entries[0].max_rel_error <= 1e-6


def test_gradient_suite_road4_wide():
    """Test Road4 at d2=64."""
    report = gradient_check_suite(kinds=["road4"], sizes=(64,), seed=1)
    assert report.entries[0].max_rel_error <= 1e-5


def test_gradient_suite_reports_failures_as_entries():
    """Test an impossible threshold yields failing entries, not exceptions."""
    report = gradient_check_suite(kinds=["road1"], sizes=(4,), seed=0, threshold=0.0)
    assert not report.passed
    assert report.failures()[0].kind == "road1"


def test_gradient_suite_baselines_hundred_cases():
    """Test LoRA, Cayley and diagonal gradients over 100 random cases."""
    report = gradient_check_suite(
        kinds=("lora", "cayley", "diag"), sizes=(8,), seed=21, cases=100, threshold=1e-5
    )
    assert report.passed
    assert {e.kind for e in report.entries} == {"lora", "cayley", "diag"}


def test_gradient_suite_rejects_odd_sizes():
    """Test sizes must be even."""
    with pytest.raises(PreconditionError, match="even"):
        gradient_check_suite(kinds=["road1"], sizes=(5,))


def test_logistic_head_gradients():
    """Test gradients through a two-class logistic head."""
    rng = SeededRng(6)
    model = ToyModel(
        [
            ToyLayer(
                DenseMatrix(rng.normal((6, 6))),
                make_adapter("road2", 6, rng),
                Nonlinearity.TANH,
            ),
            ToyLayer(DenseMatrix(rng.normal((6, 1)))),
        ],
        head=Head.LOGISTIC,
    )
    X = rng.normal((10, 6))
    T = (rng.uniform(0.0, 1.0, (10, 1)) > 0.5).astype(float)
    assert gradient_error(model, X, T) <= 1e-5


def test_masked_objective_only_moves_owned_blocks():
    """Test masked gradients vanish outside the mask."""
    task = make_rotation_task(8, seed=4, n_samples=100)
    adapter = RoadAdapter.identity("road1", 8)
    model = ToyModel([ToyLayer(task.W0, adapter)])
    mask = SubspaceMask(frozenset({1, 2}))
    _, grads = model.loss_and_grads(task.X, task.T, [TaskObjective.for_mask(mask)])
    d_theta = grads[0]
    assert d_theta[0] == 0.0 and d_theta[3] == 0.0
    assert np.any(d_theta[1:3] != 0.0)


@pytest.mark.parametrize("variant", ["road1", "road2", "road4"])
def test_unmasked_objective_gradients_vanish_outside_its_dims(variant):
    """Test a dims-only objective gives bitwise-zero gradients to unread blocks."""
    task = make_rotation_task(16, seed=8, n_samples=120)
    adapter = RoadAdapter.random(variant, 16, SeededRng(2))
    model = ToyModel([ToyLayer(task.W0, adapter)])
    mask = SubspaceMask(frozenset({0, 5, 6}))
    _, grads = model.loss_and_grads(
        task.X, task.T, [TaskObjective(mask.dims(), mask=None)]
    )
    owned = np.zeros(adapter.theta.shape[0], dtype=bool)
    for block in mask.sorted_blocks():
        owned[adapter.block_slice(block)] = True
    for (_, name, _), grad in zip(model.parameter_refs(), grads):
        assert np.all(grad[~owned] == 0.0), name
        assert np.any(grad[owned] != 0.0), name


def test_composition_matches_single_task_training():
    """Test stitched adapters keep each task's single-task loss."""
    result = composition_experiment(d2=16, seed=0, epochs=40, n_samples=300)
    for single, stitched, joint in zip(
        result.single_losses, result.stitched_losses, result.joint_losses
    ):
        assert abs(stitched - single) <= 1e-6
        assert abs(joint - single) <= 1e-6
    assert result.stitched_vs_joint_gap <= 1e-12
