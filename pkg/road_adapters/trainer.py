"""
Desk-scale training harness for adapters on frozen toy models.

Only adapter parameters are ever updated; every frozen ``W0`` is a read-only
:class:`~road_adapters.numeric.DenseMatrix`.
"""

import logging
import math
from dataclasses import dataclass, field
from enum import Enum
from typing import Callable, Dict, List, Optional, Sequence, Tuple, Union

import numpy as np

from .analysis import SubspaceMask, compose, lower_half_mask, upper_half_mask
from .baselines import (
    CayleyBlockAdapter,
    DiagScaleAdapter,
    LoraAdapter,
    best_diagonal_gains,
)
from .exceptions import DivergedError, PreconditionError
from .numeric import DenseMatrix, SeededRng, finite_diff_grad, max_relative_error
from .road import (
    RoadAdapter,
    RoadVariant,
    VariantLike,
    apply_factored_batch,
    build_blocks,
    factorize,
)

logger = logging.getLogger(__name__)

Adapter = Union[RoadAdapter, LoraAdapter, CayleyBlockAdapter, DiagScaleAdapter]


class Nonlinearity(Enum):
    NONE = "none"
    RELU = "relu"
    TANH = "tanh"

    def apply(self, Z: np.ndarray) -> np.ndarray:
        if self is Nonlinearity.RELU:
            return np.maximum(Z, 0.0)
        if self is Nonlinearity.TANH:
            return np.tanh(Z)
        return Z

    def derivative(self, Z: np.ndarray, A: np.ndarray) -> np.ndarray:
        if self is Nonlinearity.RELU:
            return (Z > 0.0).astype(np.float64)
        if self is Nonlinearity.TANH:
            return 1.0 - A * A
        return np.ones_like(Z)


class Head(Enum):
    REGRESSION = "regression"
    LOGISTIC = "logistic"


class OptimizerKind(Enum):
    SGD = "sgd"
    ADAM = "adam"


@dataclass
class ToyLayer:
    """Frozen linear map with an optional adapter on its output."""

    W0: DenseMatrix
    adapter: Optional[Adapter] = None
    nonlinearity: Nonlinearity = Nonlinearity.NONE
    trainable: bool = True


@dataclass(frozen=True)
class TaskObjective:
    """
    Loss restricted to some output dimensions.

    When ``mask`` is set, the objective's gradient reaches only the adapter
    parameters of the masked blocks.
    """

    dims: np.ndarray
    mask: Optional[SubspaceMask] = None

    @classmethod
    def for_mask(cls, mask: SubspaceMask) -> "TaskObjective":
        return cls(mask.dims(), mask)


@dataclass
class ToyModel:
    """Stack of frozen layers with adapters and a regression or logistic head."""

    layers: List[ToyLayer]
    head: Head = Head.REGRESSION

    def parameter_refs(self) -> List[Tuple[int, str, np.ndarray]]:
        """Trainable arrays in a fixed order: ``(layer index, name, array)``."""
        refs = []
        for i, layer in enumerate(self.layers):
            if layer.adapter is None or not layer.trainable:
                continue
            for name, array in layer.adapter.parameters().items():
                refs.append((i, name, array))
        return refs

    def forward(self, X: np.ndarray) -> Tuple[np.ndarray, list]:
        cache = []
        A = X
        for layer in self.layers:
            H = A @ layer.W0.data
            Z = layer.adapter.forward_batch(A, H) if layer.adapter is not None else H
            out = layer.nonlinearity.apply(Z)
            cache.append((A, H, Z, out))
            A = out
        return A, cache

    def predict(self, X: np.ndarray) -> np.ndarray:
        return self.forward(X)[0]

    def backward(
        self, cache: list, dY: np.ndarray
    ) -> Dict[Tuple[int, str], np.ndarray]:
        grads: Dict[Tuple[int, str], np.ndarray] = {}
        dA = dY
        for i in range(len(self.layers) - 1, -1, -1):
            layer = self.layers[i]
            A_prev, H, Z, out = cache[i]
            dZ = dA * layer.nonlinearity.derivative(Z, out)
            dX_extra = None
            if layer.adapter is not None:
                param_grads, dX_extra, dH = layer.adapter.backward_batch(A_prev, H, dZ)
                if layer.trainable:
                    for name, g in param_grads.items():
                        grads[(i, name)] = g
            else:
                dH = dZ
            if i > 0:
                dA = dH @ layer.W0.data.T
                if dX_extra is not None:
                    dA = dA + dX_extra
        return grads

    def _loss_terms(
        self,
        Y: np.ndarray,
        T: np.ndarray,
        objectives: Optional[Sequence[TaskObjective]],
    ) -> List[Tuple[float, np.ndarray, Optional[TaskObjective]]]:
        if self.head is Head.LOGISTIC:
            logits = Y.reshape(Y.shape[0], -1)
            targets = T.reshape(logits.shape)
            loss = float(np.mean(np.logaddexp(0.0, logits) - targets * logits))
            dY = (1.0 / (1.0 + np.exp(-logits)) - targets) / logits.size
            return [(loss, dY.reshape(Y.shape), None)]
        if not objectives:
            diff = Y - T
            return [(float(np.mean(diff * diff)), 2.0 * diff / diff.size, None)]
        terms = []
        for objective in objectives:
            diff = Y[:, objective.dims] - T[:, objective.dims]
            dY = np.zeros_like(Y)
            dY[:, objective.dims] = 2.0 * diff / diff.size
            terms.append((float(np.mean(diff * diff)), dY, objective))
        return terms

    def loss(
        self,
        X: np.ndarray,
        T: np.ndarray,
        objectives: Optional[Sequence[TaskObjective]] = None,
    ) -> float:
        Y = self.predict(X)
        return sum(term[0] for term in self._loss_terms(Y, T, objectives))

    def loss_and_grads(
        self,
        X: np.ndarray,
        T: np.ndarray,
        objectives: Optional[Sequence[TaskObjective]] = None,
    ) -> Tuple[float, List[np.ndarray]]:
        """
        Loss and gradients aligned with :meth:`parameter_refs`.

        Each objective's gradient is masked to its subspace before summation.
        """
        Y, cache = self.forward(X)
        refs = self.parameter_refs()
        total = [np.zeros_like(array) for _, _, array in refs]
        loss = 0.0
        for term_loss, dY, objective in self._loss_terms(Y, T, objectives):
            loss += term_loss
            grads = self.backward(cache, dY)
            for k, (i, name, _) in enumerate(refs):
                g = grads.get((i, name))
                if g is None:
                    continue
                if objective is not None and objective.mask is not None:
                    g = g * _param_mask(self.layers[i].adapter, name, objective.mask)
                total[k] = total[k] + g
        return loss, total


def _param_mask(
    adapter: Optional[Adapter], name: str, mask: SubspaceMask
) -> np.ndarray:
    if isinstance(adapter, RoadAdapter):
        keep = np.zeros(adapter.theta.shape[0])
        for block in mask.sorted_blocks():
            keep[adapter.block_slice(block)] = 1.0
        return keep
    if isinstance(adapter, CayleyBlockAdapter):
        keep = np.zeros(adapter.q.shape[0])
        keep[mask.sorted_blocks()] = 1.0
        return keep
    if isinstance(adapter, DiagScaleAdapter):
        keep = np.zeros(adapter.d2)
        keep[mask.dims()] = 1.0
        return keep
    raise PreconditionError(
        f"Subspace masks are not defined for {type(adapter).__name__}.{name}"
    )


@dataclass(frozen=True)
class TrainConfig:
    """Optimization settings for :func:`train`."""

    lr: float = 0.01
    epochs: int = 100
    batch_size: int = 100
    seed: int = 0
    optimizer: OptimizerKind = OptimizerKind.ADAM
    betas: Tuple[float, float] = (0.9, 0.999)
    eps: float = 1e-8
    weight_decay: float = 0.0

    def __post_init__(self) -> None:
        if not self.lr > 0:
            raise PreconditionError(f"lr must be positive, got {self.lr}")
        if self.epochs < 1:
            raise PreconditionError(f"epochs must be at least 1, got {self.epochs}")
        if self.batch_size < 1:
            raise PreconditionError(
                f"batch_size must be at least 1, got {self.batch_size}"
            )
        try:
            object.__setattr__(self, "optimizer", OptimizerKind(self.optimizer))
        except ValueError:
            known = [k.value for k in OptimizerKind]
            raise PreconditionError(
                f"Unknown optimizer {self.optimizer!r}; expected one of {known}"
            ) from None


class SGD:
    """Plain gradient descent, updating arrays in place."""

    def __init__(self, params: List[np.ndarray], lr: float) -> None:
        self.params = params
        self.lr = lr

    def step(self, grads: List[np.ndarray]) -> None:
        for p, g in zip(self.params, grads):
            p -= self.lr * g


class Adam:
    """Adam with decoupled weight decay, updating arrays in place."""

    def __init__(
        self,
        params: List[np.ndarray],
        lr: float,
        betas: Tuple[float, float] = (0.9, 0.999),
        eps: float = 1e-8,
        weight_decay: float = 0.0,
    ) -> None:
        self.params = params
        self.lr = lr
        self.beta1, self.beta2 = betas
        self.eps = eps
        self.weight_decay = weight_decay
        self.m = [np.zeros_like(p) for p in params]
        self.v = [np.zeros_like(p) for p in params]
        self.t = 0

    def step(self, grads: List[np.ndarray]) -> None:
        self.t += 1
        c1 = 1.0 - self.beta1**self.t
        c2 = 1.0 - self.beta2**self.t
        for p, g, m, v in zip(self.params, grads, self.m, self.v):
            m *= self.beta1
            m += (1.0 - self.beta1) * g
            v *= self.beta2
            v += (1.0 - self.beta2) * g * g
            if self.weight_decay:
                p -= self.lr * self.weight_decay * p
            p -= self.lr * (m / c1) / (np.sqrt(v / c2) + self.eps)


def make_optimizer(params: List[np.ndarray], cfg: TrainConfig) -> Union[SGD, Adam]:
    if cfg.optimizer is OptimizerKind.SGD:
        return SGD(params, cfg.lr)
    return Adam(params, cfg.lr, cfg.betas, cfg.eps, cfg.weight_decay)


@dataclass(frozen=True)
class EpochRecord:
    epoch: int
    loss: float


@dataclass
class TrainingTrace:
    """Per-epoch losses and the final adapter states (copies)."""

    records: List[EpochRecord] = field(default_factory=list)
    adapters: List[Optional[Adapter]] = field(default_factory=list)
    initial_loss: float = float("nan")

    @property
    def final_loss(self) -> float:
        return self.records[-1].loss if self.records else self.initial_loss

    def losses(self) -> List[float]:
        return [r.loss for r in self.records]


def train(
    model: ToyModel,
    data: Tuple[np.ndarray, np.ndarray],
    cfg: TrainConfig,
    objectives: Optional[Sequence[TaskObjective]] = None,
) -> TrainingTrace:
    """
    Minibatch training of every trainable adapter in ``model``.

    Args:
        model: Toy model; its adapters are updated in place
        data: ``(inputs, targets)`` with matching leading dimension
        cfg: Optimizer settings
        objectives: Optional per-task losses with subspace masks

    Returns:
        Trace with the full-data loss after every epoch

    Raises:
        PreconditionError: If the data set is empty or shapes disagree
        DivergedError: If the loss becomes non-finite
    """
    X, T = (np.asarray(a, dtype=np.float64) for a in data)
    if X.shape[0] == 0 or X.shape[0] != T.shape[0]:
        raise PreconditionError(
            f"Need matching non-empty inputs/targets, got {X.shape} and {T.shape}"
        )

    refs = model.parameter_refs()
    optimizer = make_optimizer([array for _, _, array in refs], cfg)
    rng = SeededRng(cfg.seed)
    n = X.shape[0]
    trace = TrainingTrace(initial_loss=model.loss(X, T, objectives))
    logger.info(
        f"Training {len(refs)} parameter arrays on {n} samples for {cfg.epochs} epochs "
        f"({cfg.optimizer.value}, lr={cfg.lr})"
    )

    for epoch in range(cfg.epochs):
        order = rng.permutation(n)
        for start in range(0, n, cfg.batch_size):
            batch = order[start : start + cfg.batch_size]
            loss, grads = model.loss_and_grads(X[batch], T[batch], objectives)
            if not math.isfinite(loss):
                raise DivergedError(
                    f"Loss became non-finite in epoch {epoch}", epoch=epoch
                )
            optimizer.step(grads)
        epoch_loss = model.loss(X, T, objectives)
        if not math.isfinite(epoch_loss):
            raise DivergedError(
                f"Loss became non-finite after epoch {epoch}", epoch=epoch
            )
        trace.records.append(EpochRecord(epoch, epoch_loss))
        logger.debug(f"epoch {epoch}: loss={epoch_loss:.6e}")

    trace.adapters = [
        layer.adapter.copy()
        if layer.adapter is not None else None
        for layer in model.layers
    ]
    logger.info(f"Training finished with loss {trace.final_loss:.6e}")
    return trace


@dataclass(frozen=True)
class RotationTask:
    """Targets produced by a hidden block rotation of frozen-layer outputs."""

    W0: DenseMatrix
    X: np.ndarray
    T: np.ndarray
    target: RoadAdapter

    @property
    def H(self) -> np.ndarray:
        return self.X @ self.W0.data


def make_rotation_task(
    d2: int, seed: int, n_samples: int = 2000, theta_range: float = math.pi / 4
) -> RotationTask:
    """Hidden RoAd1 rotation, angles in ``(-theta_range, theta_range)``, unit scales."""
    if d2 <= 0 or d2 % 2 or d2 > 256:
        raise PreconditionError(f"d2 must be even and at most 256, got {d2}")
    rng = SeededRng(seed).child(0)
    W0 = DenseMatrix(rng.normal((d2, d2), scale=1.0 / math.sqrt(d2)))
    X = rng.normal((n_samples, d2))
    if theta_range > 0:
        theta = rng.uniform(-theta_range, theta_range, d2 // 2)
    else:
        theta = np.zeros(d2 // 2)
    target = RoadAdapter(RoadVariant.ROAD1, d2, theta, np.ones(d2 // 2))
    T = apply_factored_batch(factorize(target), X @ W0.data)
    return RotationTask(W0, X, T, target)


def block_angles(blocks: np.ndarray) -> np.ndarray:
    """Angle of the rotation closest to each 2x2 block."""
    return np.arctan2(
        blocks[:, 1, 0] - blocks[:, 0, 1], blocks[:, 0, 0] + blocks[:, 1, 1]
    )


def wrap_angle(delta: np.ndarray) -> np.ndarray:
    return (delta + np.pi) % (2.0 * np.pi) - np.pi


@dataclass
class RecoveryResult:
    final_loss: float
    angle_errors: np.ndarray
    max_block_error: float
    trace: TrainingTrace
    adapter: Adapter
    task: RotationTask = field(repr=False)


def _fit_on_task(
    task: RotationTask, adapter: Adapter, cfg: TrainConfig
) -> Tuple[ToyModel, TrainingTrace]:
    model = ToyModel([ToyLayer(task.W0, adapter)])
    return model, train(model, (task.X, task.T), cfg)


def rotation_recovery_experiment(
    d2: int,
    variant: VariantLike,
    seed: int,
    n_samples: int = 2000,
    epochs: int = 300,
    lr: float = 0.01,
    batch_size: int = 100,
    theta_range: float = math.pi / 4,
    optimizer: OptimizerKind = OptimizerKind.ADAM,
) -> RecoveryResult:
    """
    Train a fresh RoAd adapter to recover a hidden block rotation.

    Returns:
        Final MSE, per-block angle error ``|theta_hat - theta*|`` (wrapped) and
        the max absolute entry gap between recovered and hidden blocks

    Raises:
        PreconditionError: If ``d2`` is odd or above 256
        DivergedError: If training diverges
    """
    task = make_rotation_task(d2, seed, n_samples, theta_range)
    adapter = RoadAdapter.identity(variant, d2)
    cfg = TrainConfig(
        lr=lr, epochs=epochs, batch_size=batch_size, seed=seed, optimizer=optimizer
    )
    _, trace = _fit_on_task(task, adapter, cfg)
    recovered = build_blocks(adapter)
    hidden = build_blocks(task.target)
    errors = np.abs(wrap_angle(block_angles(recovered) - block_angles(hidden)))
    return RecoveryResult(
        final_loss=trace.final_loss,
        angle_errors=errors,
        max_block_error=float(np.max(np.abs(recovered - hidden))),
        trace=trace,
        adapter=adapter,
        task=task,
    )


def best_diagonal_mse(H: np.ndarray, T: np.ndarray) -> float:
    """Lowest MSE any diagonal scaling of ``H`` can reach against ``T``."""
    diff = H * best_diagonal_gains(H, T) - T
    return float(np.mean(diff * diff))


@dataclass
class DiagBaselineResult:
    final_loss: float
    oracle_loss: float
    trace: TrainingTrace


def diag_recovery_baseline(
    d2: int,
    seed: int,
    n_samples: int = 2000,
    epochs: int = 300,
    lr: float = 0.01,
    batch_size: int = 100,
    theta_range: float = math.pi / 4,
    optimizer: OptimizerKind = OptimizerKind.ADAM,
) -> DiagBaselineResult:
    """Magnitude-only baseline on the same hidden-rotation task."""
    task = make_rotation_task(d2, seed, n_samples, theta_range)
    cfg = TrainConfig(
        lr=lr, epochs=epochs, batch_size=batch_size, seed=seed, optimizer=optimizer
    )
    _, trace = _fit_on_task(task, DiagScaleAdapter.identity(d2), cfg)
    return DiagBaselineResult(
        trace.final_loss, best_diagonal_mse(task.H, task.T), trace
    )


@dataclass
class StabilityResult:
    lora_lr: float
    road_lr: float
    lora_loss: float
    road_loss: float

    @property
    def road_finite(self) -> bool:
        return math.isfinite(self.road_loss)


def lr_stability_experiment(
    d2: int, seed: int, lora_lr: float = 0.005, rank: int = 4, epochs: int = 200
) -> StabilityResult:
    """LoRA at ``lora_lr`` against RoAd1 at ten times that rate on one rotation task."""
    task = make_rotation_task(d2, seed)
    lora = LoraAdapter.init(d2, d2, rank, SeededRng(seed).child(1))
    _, lora_trace = _fit_on_task(
        task, lora, TrainConfig(lr=lora_lr, epochs=epochs, seed=seed)
    )
    road_lr = 10.0 * lora_lr
    try:
        road = RoadAdapter.identity(RoadVariant.ROAD1, d2)
        road_cfg = TrainConfig(lr=road_lr, epochs=epochs, seed=seed)
        _, road_trace = _fit_on_task(task, road, road_cfg)
        road_loss = road_trace.final_loss
    except DivergedError:
        road_loss = float("inf")
    return StabilityResult(lora_lr, road_lr, lora_trace.final_loss, road_loss)


@dataclass
class CompositionResult:
    """Per-task losses of single-task, stitched and jointly trained adapters."""

    single_losses: Tuple[float, float]
    stitched_losses: Tuple[float, float]
    joint_losses: Tuple[float, float]
    stitched_vs_joint_gap: float
    stitched: RoadAdapter
    joint: RoadAdapter


def _task_loss(
    task: RotationTask, adapter: RoadAdapter, objective: TaskObjective
) -> float:
    return ToyModel([ToyLayer(task.W0, adapter)]).loss(task.X, task.T, [objective])


def composition_experiment(
    d2: int = 16,
    seed: int = 0,
    epochs: int = 100,
    lr: float = 0.02,
    n_samples: int = 500,
) -> CompositionResult:
    """
    Train two tasks on disjoint halves of the blocks and compose them.

    Task A reads the output dims of the upper half of the blocks, task B the
    rest. Single-task adapters are stitched after training and compared with
    one adapter trained on both tasks at once under masked gradients.
    """
    task = make_rotation_task(d2, seed, n_samples)
    mask_a, mask_b = upper_half_mask(d2), lower_half_mask(d2)
    obj_a, obj_b = TaskObjective.for_mask(mask_a), TaskObjective.for_mask(mask_b)
    cfg = TrainConfig(lr=lr, epochs=epochs, batch_size=50, seed=seed)

    singles = []
    for objective in (obj_a, obj_b):
        adapter = RoadAdapter.identity(RoadVariant.ROAD1, d2)
        train(
            ToyModel([ToyLayer(task.W0, adapter)]), (task.X, task.T), cfg, [objective]
        )
        singles.append(adapter)
    stitched = compose([(singles[0], mask_a), (singles[1], mask_b)])

    joint = RoadAdapter.identity(RoadVariant.ROAD1, d2)
    train(ToyModel([ToyLayer(task.W0, joint)]), (task.X, task.T), cfg, [obj_a, obj_b])

    gap = float(
        max(
            np.max(np.abs(stitched.theta - joint.theta)),
            np.max(np.abs(stitched.alpha - joint.alpha)),
        )
    )
    return CompositionResult(
        single_losses=(
            _task_loss(task, singles[0], obj_a), _task_loss(task, singles[1], obj_b)
        ),
        stitched_losses=(
            _task_loss(task, stitched, obj_a), _task_loss(task, stitched, obj_b)
        ),
        joint_losses=(_task_loss(task, joint, obj_a), _task_loss(task, joint, obj_b)),
        stitched_vs_joint_gap=gap,
        stitched=stitched,
        joint=joint,
    )


GRADCHECK_KINDS = ("road1", "road2", "road4", "lora", "cayley", "diag")


def make_adapter(kind: str, d: int, rng: SeededRng) -> Adapter:
    """Random adapter of ``kind`` for a ``(d, d)`` frozen layer."""
    kind = kind.lower()
    if kind.startswith("road"):
        return RoadAdapter.random(
            kind, d, rng, theta_scale=math.pi, alpha_low=0.5, alpha_high=1.5
        )
    if kind == "lora":
        return LoraAdapter.random(d, d, min(2, d), rng, scaling=0.5)
    if kind == "cayley":
        return CayleyBlockAdapter.random(d, rng, scale=2.0)
    if kind == "diag":
        return DiagScaleAdapter.random(d, rng)
    raise ValueError(f"Unknown adapter kind {kind!r}")


def _flatten(arrays: Sequence[np.ndarray]) -> np.ndarray:
    return np.concatenate([a.ravel() for a in arrays])


def _assign(arrays: Sequence[np.ndarray], flat: np.ndarray) -> None:
    offset = 0
    for a in arrays:
        a[...] = flat[offset : offset + a.size].reshape(a.shape)
        offset += a.size


@dataclass(frozen=True)
class GradCheckEntry:
    kind: str
    size: int
    max_rel_error: float
    passed: bool


@dataclass
class GradCheckReport:
    entries: List[GradCheckEntry] = field(default_factory=list)
    threshold: float = 1e-4

    @property
    def passed(self) -> bool:
        return all(e.passed for e in self.entries)

    def failures(self) -> List[GradCheckEntry]:
        return [e for e in self.entries if not e.passed]


def gradient_error(
    model: ToyModel, X: np.ndarray, T: np.ndarray, step: float = 1e-5
) -> float:
    """Max relative error between analytic and central-difference gradients."""
    arrays = [array for _, _, array in model.parameter_refs()]
    start = _flatten(arrays)
    _, grads = model.loss_and_grads(X, T)
    analytic = _flatten(grads)

    def f(p: np.ndarray) -> float:
        _assign(arrays, p)
        return model.loss(X, T)

    try:
        numeric = finite_diff_grad(f, start, step).data
    finally:
        _assign(arrays, start)
    return max_relative_error(analytic, numeric)


def gradient_check_suite(
    kinds: Sequence[str] = GRADCHECK_KINDS,
    sizes: Sequence[int] = (8,),
    seed: int = 0,
    cases: int = 1,
    step: float = 1e-5,
    threshold: float = 1e-4,
    progress: Optional[Callable[[GradCheckEntry], None]] = None,
) -> GradCheckReport:
    """
    Check every adapter kind's gradients through a two-layer toy model.

    The first layer carries the adapter and a tanh; the second is a frozen
    linear map feeding an MSE loss. Entries above ``threshold`` are reported
    as failures rather than raised.

    Raises:
        PreconditionError: If a size is odd
    """
    report = GradCheckReport(threshold=threshold)
    root = SeededRng(seed)
    for k, kind in enumerate(kinds):
        for size in sizes:
            if size <= 0 or size % 2:
                raise PreconditionError(
                    f"Gradient check sizes must be even, got {size}"
                )
            worst = 0.0
            for case in range(cases):
                rng = root.child(k).child(size).child(case)
                scale = 1.0 / math.sqrt(size)
                model = ToyModel(
                    [
                        ToyLayer(
                            DenseMatrix(rng.normal((size, size), scale)),
                            make_adapter(kind, size, rng),
                            Nonlinearity.TANH,
                        ),
                        ToyLayer(DenseMatrix(rng.normal((size, size), scale))),
                    ]
                )
                X = rng.normal((4, size))
                T = rng.normal((4, size))
                worst = max(worst, gradient_error(model, X, T, step))
            entry = GradCheckEntry(kind, size, worst, worst <= threshold)
            logger.debug(f"gradcheck {kind} d={size}: {worst:.3e}")
            report.entries.append(entry)
            if progress is not None:
                progress(entry)
    return report
