"""Training protocol: optimizers, two-phase settings, early stopping."""
from __future__ import annotations

import enum
import json
import time
from dataclasses import dataclass, field
from typing import Callable, NamedTuple

import numpy as np

from .errors import ConfigError, NonFiniteLoss, ShapeMismatch
from .modelkit import BackboneName, Parameters, WeightsOrigin


class OptimizerKind(enum.Enum):
    ADAM = "ADAM"
    SGD = "SGD"


class Phase(enum.Enum):
    ONE = "ONE"
    TWO = "TWO"


PHASE_ONE_LR = 1e-3
PHASE_TWO_LR = PHASE_ONE_LR / 10


@dataclass(frozen=True)
class OptimizerConfig:
    kind: OptimizerKind = OptimizerKind.ADAM
    learning_rate: float = PHASE_ONE_LR
    beta1: float = 0.9
    beta2: float = 0.999
    epsilon: float = 1e-8
    momentum: float = 0.0

    def __post_init__(self):
        object.__setattr__(self, "kind", OptimizerKind(str(getattr(self.kind, "value", self.kind)).upper()))
        if not self.learning_rate > 0:
            raise ConfigError(f"learning_rate must be positive, got {self.learning_rate}")
        if not (0 <= self.beta1 < 1 and 0 <= self.beta2 < 1):
            raise ConfigError("Adam betas must lie in [0, 1)")


@dataclass(frozen=True)
class PhaseConfig:
    """ONE: frozen backbone, lr 1e-3. TWO: unfrozen backbone, lr 1e-4.

    ``reinit_backbone`` re-draws backbone kernels with He-uniform in phase
    TWO; it is refused for ImageNet-initialised backbones.
    """

    phase: Phase = Phase.ONE
    reinit_backbone: bool = False

    @property
    def learning_rate(self) -> float:
        return PHASE_ONE_LR if self.phase is Phase.ONE else PHASE_TWO_LR

    @property
    def backbone_frozen(self) -> bool:
        return self.phase is Phase.ONE

    @classmethod
    def of(cls, phase, reinit_backbone=False) -> "PhaseConfig":
        return cls(Phase(str(getattr(phase, "value", phase)).upper()), reinit_backbone)


@dataclass(frozen=True)
class TrainConfig:
    phase: PhaseConfig = field(default_factory=PhaseConfig)
    optimizer: OptimizerConfig | None = None
    batch_size: int = 16
    max_epochs: int = 50
    patience: int = 1
    seed: int = 0

    def __post_init__(self):
        if self.optimizer is None:
            object.__setattr__(self, "optimizer", OptimizerConfig(learning_rate=self.phase.learning_rate))
        if self.batch_size < 1 or self.max_epochs < 1 or self.patience < 1:
            raise ConfigError("batch_size, max_epochs and patience must be >= 1")


def phase_config(phase, optimizer="ADAM", **kwargs) -> TrainConfig:
    """TrainConfig with the phase's learning rate filled in."""
    ph = PhaseConfig.of(phase, kwargs.pop("reinit_backbone", False))
    return TrainConfig(phase=ph, optimizer=OptimizerConfig(optimizer, ph.learning_rate), **kwargs)


# ------------------------------------------------------------ optimizers


def sgd_step(param, grad, lr):
    param = np.asarray(param, dtype=np.float64)
    grad = np.asarray(grad, dtype=np.float64)
    if param.shape != grad.shape:
        raise ShapeMismatch(f"param {param.shape} vs grad {grad.shape}")
    return param - lr * grad


class AdamState(NamedTuple):
    m: np.ndarray
    v: np.ndarray
    t: int  # steps taken so far

    @classmethod
    def zeros_like(cls, param) -> "AdamState":
        return cls(np.zeros_like(param, dtype=np.float64), np.zeros_like(param, dtype=np.float64), 0)


def adam_step(param, grad, state: AdamState, cfg: OptimizerConfig):
    param = np.asarray(param, dtype=np.float64)
    grad = np.asarray(grad, dtype=np.float64)
    if not (param.shape == grad.shape == state.m.shape == state.v.shape):
        raise ShapeMismatch("param, grad and Adam moments must share a shape")
    t = state.t + 1
    m = cfg.beta1 * state.m + (1 - cfg.beta1) * grad
    v = cfg.beta2 * state.v + (1 - cfg.beta2) * grad * grad
    m_hat = m / (1 - cfg.beta1**t)
    v_hat = v / (1 - cfg.beta2**t)
    return param - cfg.learning_rate * m_hat / (np.sqrt(v_hat) + cfg.epsilon), AdamState(m, v, t)


class Optimizer:
    """Applies per-tensor updates to the trainable entries of a Parameters set."""

    def __init__(self, cfg: OptimizerConfig):
        self.cfg = cfg
        self.state: dict[str, AdamState] = {}
        self.velocity: dict[str, np.ndarray] = {}

    def step(self, params: Parameters, grads: dict[str, np.ndarray]) -> None:
        for name, g in grads.items():
            if not params.trainable.get(name, False):
                continue
            p = params[name]
            if self.cfg.kind is OptimizerKind.SGD:
                if self.cfg.momentum:
                    vel = self.cfg.momentum * self.velocity.get(name, 0.0) + g
                    self.velocity[name] = vel
                    g = vel
                params[name] = sgd_step(p, g, self.cfg.learning_rate)
            else:
                st = self.state.get(name) or AdamState.zeros_like(p)
                params[name], self.state[name] = adam_step(p, g, st, self.cfg)


# -------------------------------------------------------- early stopping


class Decision(NamedTuple):
    stop: bool
    best_epoch: int  # 1-based


def early_stopping(val_accuracy_history, patience: int = 1) -> Decision:
    """STOP once the last ``patience`` epochs are each strictly below the running maximum.

    ``best_epoch`` is the 1-based earliest epoch reaching the maximum.
    """
    hist = list(val_accuracy_history)
    if not hist:
        raise ValueError("history is empty")
    best = int(np.argmax(hist))
    running = np.maximum.accumulate(hist)
    stop = False
    if len(hist) > patience:
        tail = range(len(hist) - patience, len(hist))
        stop = all(hist[i] < running[i - 1] for i in tail)
    return Decision(stop, best + 1)


# -------------------------------------------------------------- training


class EpochRecord(NamedTuple):
    epoch: int
    train_loss: float
    train_acc: float
    val_acc: float
    wall_ms: float


@dataclass
class TrainResult:
    history: list[EpochRecord]
    best_epoch: int
    best_parameters: Parameters
    stopped_early: bool

    @property
    def best_val_accuracy(self) -> float:
        return self.history[self.best_epoch - 1].val_acc


class ArraySplit(NamedTuple):
    x: np.ndarray
    y: np.ndarray


def accuracy(model, x, y) -> float:
    y = np.asarray(y)
    return float(np.mean(model.predict_labels(x) == y)) if len(y) else 0.0


def prepare_model(model, phase: PhaseConfig, seed: int = 0) -> None:
    """Apply the phase's freezing rule and optional He re-initialisation."""
    spec = model.spec
    if not phase.backbone_frozen and spec.backbone.name is not BackboneName.TOY:
        raise ConfigError(
            f"{spec.backbone.name.value} backbones run as frozen feature extractors; phase TWO needs the TOY backbone"
        )
    if phase.reinit_backbone:
        if spec.backbone.weights_origin is WeightsOrigin.PRETRAINED_IMAGENET:
            raise ConfigError("He re-initialisation would discard the ImageNet weights of the backbone")
        from .modelkit import _toy_parameters

        fresh = _toy_parameters(np.random.SeedSequence([seed, 3]), phase.backbone_frozen)
        model.params.tensors.update(fresh.tensors)
    model.params.set_trainable("backbone.", not phase.backbone_frozen)


def train(
    model,
    train_data: ArraySplit,
    val_data: ArraySplit,
    cfg: TrainConfig,
    on_epoch: Callable[[EpochRecord], None] | None = None,
) -> TrainResult:
    """Seeded mini-batch training with early stopping on validation accuracy.

    ``model`` needs ``params``, ``loss_and_grads(x, y)`` and
    ``predict_labels(x)``. The model is left holding the best weights.
    """
    x, y = np.asarray(train_data.x), np.asarray(train_data.y)
    if len(x) == 0 or len(val_data.y) == 0:
        raise ValueError("training and validation sets must be non-empty")
    rng = np.random.default_rng(cfg.seed)
    opt = Optimizer(cfg.optimizer)
    history: list[EpochRecord] = []
    best_params = model.params.copy()
    best_acc = -np.inf
    stopped = False
    for epoch in range(1, cfg.max_epochs + 1):
        start = time.perf_counter()
        order = rng.permutation(len(x))
        total_loss = 0.0
        for i in range(0, len(order), cfg.batch_size):
            idx = order[i : i + cfg.batch_size]
            loss, grads = model.loss_and_grads(x[idx], y[idx])
            if not np.isfinite(loss):
                raise NonFiniteLoss(f"loss became {loss} at epoch {epoch}, batch starting {i}")
            opt.step(model.params, grads)
            total_loss += loss * len(idx)
        rec = EpochRecord(
            epoch,
            total_loss / len(order),
            accuracy(model, x, y),
            accuracy(model, val_data.x, val_data.y),
            round((time.perf_counter() - start) * 1000.0, 3),
        )
        history.append(rec)
        if on_epoch:
            on_epoch(rec)
        if rec.val_acc > best_acc:
            best_acc = rec.val_acc
            best_params = model.params.copy()
        if early_stopping([h.val_acc for h in history], cfg.patience).stop:
            stopped = True
            break
    best_epoch = early_stopping([h.val_acc for h in history], cfg.patience).best_epoch
    model.params.load_from(best_params)
    return TrainResult(history, best_epoch, best_params, stopped)


def epoch_log_line(rec: EpochRecord) -> str:
    return json.dumps(rec._asdict(), sort_keys=False)
