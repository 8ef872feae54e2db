"""Adam optimization and the mini-batch training loop.

Gradients come from the model's explicit backward pass. Batches are drawn
by shuffling a permutation each epoch; the batch gradient is the mean of
per-sample gradients accumulated in sample-index order, so a seed fixes
the whole trajectory bit for bit.
"""

from __future__ import annotations

import logging
from dataclasses import dataclass, field

import numpy as np

from coordfuse.model import DualBranchModel, backward, forward
from coordfuse.numerics import create_rng

logger = logging.getLogger(__name__)


class NumericalError(ArithmeticError):
    """A loss or update became non-finite during training."""


@dataclass
class TrainConfig:
    learning_rate: float = 1e-3
    beta1: float = 0.9
    beta2: float = 0.999
    epsilon: float = 1e-8
    batch_size: int = 64
    max_epochs: int = 500
    seed: int = 0

    def validate(self) -> None:
        if self.learning_rate <= 0:
            raise ValueError(f"learning rate must be positive, got {self.learning_rate}")
        if not 0 <= self.beta1 < 1 or not 0 <= self.beta2 < 1:
            raise ValueError(f"betas must lie in [0, 1): {self.beta1}, {self.beta2}")
        if self.epsilon <= 0:
            raise ValueError(f"epsilon must be positive, got {self.epsilon}")
        if self.batch_size < 1:
            raise ValueError(f"batch size must be positive, got {self.batch_size}")
        if self.max_epochs < 1:
            raise ValueError(f"max_epochs must be positive, got {self.max_epochs}")


@dataclass
class AdamState:
    """First and second moment accumulators plus the shared step counter."""

    m: dict[str, np.ndarray]
    v: dict[str, np.ndarray]
    step: int = 0

    @classmethod
    def for_params(cls, params: dict[str, np.ndarray]) -> "AdamState":
        return cls(
            m={k: np.zeros_like(p) for k, p in params.items()},
            v={k: np.zeros_like(p) for k, p in params.items()},
        )


def adam_step(
    params: dict[str, np.ndarray],
    grads: dict[str, np.ndarray],
    state: AdamState,
    cfg: TrainConfig,
) -> None:
    """One bias-corrected Adam update, applied to the arrays in place."""
    if set(grads) != set(params):
        raise KeyError(f"gradient keys {sorted(grads)} do not match parameters")
    state.step += 1
    t = state.step
    for name, p in params.items():
        g = grads[name]
        if not np.all(np.isfinite(g)):
            raise NumericalError(f"non-finite gradient for {name} at step {t}")
        m = state.m[name]
        v = state.v[name]
        m *= cfg.beta1
        m += (1 - cfg.beta1) * g
        v *= cfg.beta2
        v += (1 - cfg.beta2) * g * g
        m_hat = m / (1 - cfg.beta1**t)
        v_hat = v / (1 - cfg.beta2**t)
        p -= cfg.learning_rate * m_hat / (np.sqrt(v_hat) + cfg.epsilon)
        if not np.all(np.isfinite(p)):
            raise NumericalError(f"non-finite parameter {name} after step {t}")


@dataclass
class TrainHistory:
    """Per-epoch mean loss and training accuracy, aligned by index."""

    loss: list[float] = field(default_factory=list)
    train_acc: list[float] = field(default_factory=list)

    def to_csv(self, path) -> None:
        with open(path, "w", newline="") as f:
            f.write("epoch,loss,train_acc\n")
            for i, (l, a) in enumerate(zip(self.loss, self.train_acc), start=1):
                f.write(f"{i},{l:.6f},{a:.6f}\n")


def train(
    model: DualBranchModel,
    features: np.ndarray,
    coords: np.ndarray,
    labels: np.ndarray,
    cfg: TrainConfig,
    rng: np.random.Generator | None = None,
) -> TrainHistory:
    """Run Adam for exactly cfg.max_epochs epochs; no early stopping.

    `rng` drives both the epoch shuffles and the dropout masks. When
    omitted it is derived from cfg.seed. Labels are 1-based.
    """
    from coordfuse.layers import cross_entropy

    cfg.validate()
    features = np.asarray(features, dtype=np.float64)
    coords = np.asarray(coords, dtype=np.float64)
    labels = np.asarray(labels, dtype=np.int64)
    n = len(labels)
    if n == 0:
        raise ValueError("no training samples")
    if len(features) != n or len(coords) != n:
        raise ValueError("features, coords and labels row counts disagree")
    if labels.min() < 1 or labels.max() > model.config.num_classes:
        raise ValueError("labels must be 1-based class ids within the model's range")
    if rng is None:
        rng = create_rng(cfg.seed)

    params = model.parameters()
    state = AdamState.for_params(params)
    history = TrainHistory()

    for epoch in range(cfg.max_epochs):
        order = rng.permutation(n)
        epoch_loss = 0.0
        correct = 0
        for start in range(0, n, cfg.batch_size):
            batch = order[start : start + cfg.batch_size]
            batch_grads = {k: np.zeros_like(p) for k, p in params.items()}
            for i in batch:
                probs, cache = forward(
                    model, features[i], coords[i], mode="train", rng=rng
                )
                loss, _ = cross_entropy(probs, int(labels[i]) - 1)
                if not np.isfinite(loss):
                    raise NumericalError(
                        f"non-finite loss at epoch {epoch + 1}, sample {i}"
                    )
                epoch_loss += loss
                if int(np.argmax(probs)) + 1 == labels[i]:
                    correct += 1
                for name, g in backward(model, cache, int(labels[i])).items():
                    batch_grads[name] += g
            for name in batch_grads:
                batch_grads[name] /= len(batch)
            adam_step(params, batch_grads, state, cfg)
        history.loss.append(epoch_loss / n)
        history.train_acc.append(correct / n)
        if (epoch + 1) % 50 == 0 or epoch == cfg.max_epochs - 1:
            logger.info(
                "epoch %d/%d loss %.4f acc %.4f",
                epoch + 1,
                cfg.max_epochs,
                history.loss[-1],
                history.train_acc[-1],
            )
    return history
