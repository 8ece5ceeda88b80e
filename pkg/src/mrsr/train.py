"""Mini-batch training with bias-corrected adaptive moments."""

from __future__ import annotations

import logging
import math
from dataclasses import dataclass, field

import numpy as np

from .net import Network, loss_and_gradients
from .patch import PatchSet

log = logging.getLogger(__name__)


class TrainingDiverged(ArithmeticError):
    pass


@dataclass(frozen=True)
class TrainConfig:
    lr: float = 1e-4
    batch: int = 50
    epochs: int = 10
    seed: int = 0
    shuffle: bool = True

    def __post_init__(self):
        if not self.lr >= 0:
            raise ValueError("learning rate must be non-negative")
        if self.batch < 1 or self.epochs < 1:
            raise ValueError("batch and epochs must be at least 1")


@dataclass
class AdamState:
    m: list[np.ndarray]
    v: list[np.ndarray]
    t: int = 0

    @classmethod
    def zeros_like(cls, params) -> AdamState:
        return cls([np.zeros_like(p) for p in params], [np.zeros_like(p) for p in params], 0)


@dataclass
class TrainHistory:
    step_loss: list[float] = field(default_factory=list)
    step_epoch: list[int] = field(default_factory=list)
    epoch_loss: list[float] = field(default_factory=list)

    def to_csv(self) -> str:
        rows = ["step,epoch,loss"]
        rows += [f"{i + 1},{e},{l!r}" for i, (e, l) in enumerate(zip(self.step_epoch, self.step_loss))]
        return "\n".join(rows) + "\n"


def adam_step(params, grads, state: AdamState, lr: float, beta1=0.9, beta2=0.999, eps=1e-8, t=None):
    """One bias-corrected adaptive-moment update.

    Returns new parameter arrays and a new state; inputs are not modified.
    ``t`` defaults to ``state.t + 1``.
    """
    t = state.t + 1 if t is None else t
    if t < 1:
        raise ValueError("step counter t must be >= 1")
    if len(params) != len(grads) or len(params) != len(state.m):
        raise ValueError("params, grads and optimizer state differ in length")
    new_p, new_m, new_v = [], [], []
    c1 = 1.0 - beta1**t
    c2 = 1.0 - beta2**t
    for p, g, m, v in zip(params, grads, state.m, state.v):
        if p.shape != g.shape or p.shape != m.shape:
            raise ValueError(f"shape mismatch: param {p.shape}, grad {g.shape}")
        m = beta1 * m + (1 - beta1) * g
        v = beta2 * v + (1 - beta2) * g * g
        step = (m / c1) / (np.sqrt(v / c2) + eps)
        new_p.append((p - lr * step).astype(p.dtype))
        new_m.append(m.astype(p.dtype))
        new_v.append(v.astype(p.dtype))
    return new_p, AdamState(new_m, new_v, t)


def train(
    net: Network,
    lr_patches: PatchSet,
    hr_patches: PatchSet,
    cfg: TrainConfig,
    threads: int = 1,
) -> tuple[Network, TrainHistory]:
    """Fit ``net`` so that ``forward(net, lr) ~ hr`` over aligned patch sets.

    Patches are visited in an order drawn from ``cfg.seed``; with the same seed
    the returned network and history are bitwise reproducible.
    """
    if lr_patches.blocks.shape != hr_patches.blocks.shape or not np.array_equal(
        lr_patches.grid.origins, hr_patches.grid.origins
    ):
        raise ValueError("input and target patch sets are not aligned")
    if lr_patches.echoes != net.in_channels:
        raise ValueError(f"patches carry {lr_patches.echoes} echoes, network expects {net.in_channels}")

    rng = np.random.default_rng(cfg.seed)
    n = len(lr_patches)
    params = [p.copy() for p in net.parameters()]
    state = AdamState.zeros_like(params)
    history = TrainHistory()
    for epoch in range(1, cfg.epochs + 1):
        order = rng.permutation(n) if cfg.shuffle else np.arange(n)
        total = 0.0
        for start in range(0, n, cfg.batch):
            idx = order[start : start + cfg.batch]
            current = net.with_parameters(params)
            # overflow is detected explicitly below, not reported as warnings
            with np.errstate(over="ignore", invalid="ignore"):
                loss, grads = loss_and_gradients(
                    current, lr_patches.blocks[idx], hr_patches.blocks[idx], threads=threads
                )
            step = len(history.step_loss) + 1
            if not math.isfinite(loss):
                raise TrainingDiverged(f"non-finite loss at epoch {epoch}, step {step}")
            history.step_loss.append(loss)
            history.step_epoch.append(epoch)
            total += loss * len(idx)
            with np.errstate(over="ignore", invalid="ignore"):
                params, state = adam_step(params, grads.as_list(), state, cfg.lr)
            if not all(np.all(np.isfinite(p)) for p in params):
                raise TrainingDiverged(f"non-finite parameters after epoch {epoch}, step {step}")
        history.epoch_loss.append(total / n)
        log.info("epoch %d/%d mean loss %.6g", epoch, cfg.epochs, history.epoch_loss[-1])
    return net.with_parameters(params), history
