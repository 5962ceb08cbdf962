"""Loss functions with analytic gradients for the trainer's backward entry."""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

__all__ = ["nll_loss", "nll_loss_grad", "mse_loss", "mse_loss_grad", "LossDiagnostics"]

PROB_FLOOR = 1e-12


@dataclass
class LossDiagnostics:
    """Side information from a loss evaluation."""

    clamped: int = 0  # labeled entries clamped at the probability floor


def _check_probs(probs: np.ndarray, labels: np.ndarray) -> tuple[np.ndarray, np.ndarray]:
    probs = np.asarray(probs)
    labels = np.asarray(labels)
    if probs.ndim != 2:
        raise ValueError(f"probs must be a (batch, classes) array, got {probs.shape}")
    if labels.shape != (probs.shape[0],):
        raise ValueError("labels must be one class index per row")
    sums = probs.sum(axis=1)
    if not np.allclose(sums, 1.0, atol=1e-5):
        raise ValueError("probability rows must sum to 1 within 1e-5")
    if labels.min() < 0 or labels.max() >= probs.shape[1]:
        raise ValueError("label index out of range")
    return probs, labels


def nll_loss(probs: np.ndarray, labels: np.ndarray,
             diagnostics: LossDiagnostics | None = None) -> float:
    """Mean negative log-likelihood of the labelled class per row.

    Zero probabilities at a labelled index are clamped at 1e-12 and counted
    in ``diagnostics.clamped``.
    """
    probs, labels = _check_probs(probs, labels)
    picked = probs[np.arange(len(labels)), labels]
    clamped = picked < PROB_FLOOR
    if diagnostics is not None:
        diagnostics.clamped += int(clamped.sum())
    picked = np.maximum(picked, PROB_FLOOR)
    return float(-np.log(picked).mean())


def nll_loss_grad(probs: np.ndarray, labels: np.ndarray) -> np.ndarray:
    """d(nll)/d(probs); zero for entries resting on the clamp floor."""
    probs, labels = _check_probs(probs, labels)
    n = len(labels)
    grad = np.zeros_like(probs)
    rows = np.arange(n)
    picked = probs[rows, labels]
    live = picked >= PROB_FLOOR
    grad[rows[live], labels[live]] = -1.0 / (n * picked[live])
    return grad


def _check_scalars(preds: np.ndarray, labels: np.ndarray) -> tuple[np.ndarray, np.ndarray]:
    preds = np.asarray(preds).reshape(-1)
    labels = np.asarray(labels).reshape(-1)
    if preds.size == 0:
        raise ValueError("empty batch")
    if preds.shape != labels.shape:
        raise ValueError("preds and labels must have equal length")
    return preds, labels


def mse_loss(preds: np.ndarray, labels: np.ndarray) -> float:
    """Mean squared difference between predictions and labels."""
    preds, labels = _check_scalars(preds, labels)
    diff = preds - labels
    return float((diff * diff).mean())


def mse_loss_grad(preds: np.ndarray, labels: np.ndarray) -> np.ndarray:
    shape = np.asarray(preds).shape
    preds, labels = _check_scalars(preds, labels)
    return (2.0 * (preds - labels) / preds.size).reshape(shape)
