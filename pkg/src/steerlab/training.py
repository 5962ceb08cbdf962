"""Shared minibatch-ADAM training engine with early stopping on validation accuracy.

Used by the policy (NLL / class accuracy) and the reward & safety trainers
(MSE / sign accuracy).  Deterministic for fixed seeds and datasets.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from . import nn
from .data import observation_batch_hwc

__all__ = ["FitConfig", "TrainingCurve", "TrainingDiverged", "fit"]


@dataclass(frozen=True)
class FitConfig:
    batch_size: int = 32
    max_iterations: int = 4000
    eval_every: int = 200
    patience: int = 10       # evaluations without a new best before stopping
    lr: float = 1e-4
    seed: int = 0
    eval_batch: int = 256


@dataclass
class TrainingCurve:
    train_loss: list[float] = field(default_factory=list)
    eval_iterations: list[int] = field(default_factory=list)
    val_accuracy: list[float] = field(default_factory=list)
    val_loss: list[float] = field(default_factory=list)
    best_iteration: int = 0
    best_accuracy: float = 0.0

    def summary(self) -> dict:
        return {"iterations": len(self.train_loss),
                "best_iteration": self.best_iteration,
                "best_accuracy": self.best_accuracy,
                "final_train_loss": self.train_loss[-1] if self.train_loss else None}


class TrainingDiverged(RuntimeError):
    pass


class _Shuffler:
    """Epoch-style minibatch index stream, deterministic by seed."""

    def __init__(self, n: int, rng: np.random.Generator) -> None:
        self.n = n
        self.rng = rng
        self._pool = rng.permutation(n)
        self._pos = 0

    def take(self, k: int) -> np.ndarray:
        out = []
        while k > 0:
            avail = len(self._pool) - self._pos
            if avail == 0:
                self._pool = self.rng.permutation(self.n)
                self._pos = 0
                avail = self.n
            grab = min(k, avail)
            out.append(self._pool[self._pos:self._pos + grab])
            self._pos += grab
            k -= grab
        return np.concatenate(out)


def _evaluate(net: nn.Network, ds, task: str, batch: int) -> tuple[float, float]:
    """(accuracy, loss) over a dataset in eval mode."""
    n = len(ds)
    correct = 0
    loss_sum = 0.0
    targets = ds.targets
    for lo in range(0, n, batch):
        idx = np.arange(lo, min(lo + batch, n))
        x = observation_batch_hwc(ds, idx)
        out = net.forward_internal(x, train=False)
        t = targets[idx]
        if task == "classify":
            loss_sum += nn.nll_loss(out, t) * len(idx)
            correct += int((np.argmax(out, axis=1) == t).sum())
        else:
            preds = out[:, 0]
            loss_sum += nn.mse_loss(preds, t.astype(np.float64)) * len(idx)
            signs = np.where(preds > 0, 1, -1)
            correct += int((signs == t).sum())
    return correct / n, loss_sum / n


def fit(net: nn.Network, train_ds, val_ds, cfg: FitConfig, task: str) -> TrainingCurve:
    """Train in place; leaves the best-validation parameters on the net."""
    if task not in ("classify", "score"):
        raise ValueError(f"unknown task {task!r}")
    if len(train_ds) == 0 or len(val_ds) == 0:
        raise ValueError("both splits must be non-empty")
    rng = np.random.default_rng(cfg.seed)
    shuffler = _Shuffler(len(train_ds), rng)
    adam = nn.AdamState(net, lr=cfg.lr)
    curve = TrainingCurve()
    train_targets = train_ds.targets

    best_params = net.snapshot()
    acc0, loss0 = _evaluate(net, val_ds, task, cfg.eval_batch)
    curve.eval_iterations.append(0)
    curve.val_accuracy.append(acc0)
    curve.val_loss.append(loss0)
    curve.best_iteration = 0
    curve.best_accuracy = acc0
    evals_since_best = 0

    net.train()
    for it in range(1, cfg.max_iterations + 1):
        idx = shuffler.take(cfg.batch_size)
        x = observation_batch_hwc(train_ds, idx)
        out = net.forward_internal(x, train=True)
        t = train_targets[idx]
        if task == "classify":
            loss = nn.nll_loss(out, t)
            grad = nn.nll_loss_grad(out, t)
        else:
            labels = t.astype(np.float64)
            loss = nn.mse_loss(out[:, 0], labels)
            grad = nn.mse_loss_grad(out[:, 0], labels)[:, None]
        if not np.isfinite(loss):
            raise TrainingDiverged(f"non-finite loss at iteration {it}")
        curve.train_loss.append(float(loss))
        net.backward(grad)
        nn.adam_step(net, adam)

        if it % cfg.eval_every == 0 or it == cfg.max_iterations:
            acc, vloss = _evaluate(net, val_ds, task, cfg.eval_batch)
            curve.eval_iterations.append(it)
            curve.val_accuracy.append(acc)
            curve.val_loss.append(vloss)
            if acc > curve.best_accuracy:
                curve.best_accuracy = acc
                curve.best_iteration = it
                best_params = net.snapshot()
                evals_since_best = 0
            else:
                evals_since_best += 1
                if evals_since_best >= cfg.patience:
                    break

    net.set_parameters(best_params)
    net.eval()
    return curve
