"""Supervised loss terms with values and analytic (sub)gradients.

Every term returns its scalar value together with the gradient w.r.t. its
direct prediction inputs so the suite can be checked against central finite
differences. Instance-normalized terms divide by the number of matched
instances, not by the number of components.
"""

from __future__ import annotations

import logging
import math
from dataclasses import dataclass

import numpy as np

logger = logging.getLogger(__name__)

PROB_CLAMP = 1e-7


@dataclass(frozen=True)
class LossWeights:
    """Multipliers for the weighted total loss."""

    d2d: float = 0.02
    o2d: float = 0.02
    d3d: float = 1.0
    o3d: float = 1.0
    rot: float = 1.0
    z: float = 1.0
    distill: float = 0.1

    def __post_init__(self):
        for name, value in self.__dict__.items():
            if value < 0:
                raise ValueError(f"loss weight {name} must be non-negative, got {value}")


def bce_cls(targets: np.ndarray, preds: np.ndarray) -> tuple[float, np.ndarray]:
    """Summed binary cross-entropy over a score grid, probabilities clamped at 1e-7.

    Returns (loss, dloss/dpreds); the gradient is zero where the clamp is active.
    """
    targets = np.asarray(targets, dtype=np.float64)
    preds = np.asarray(preds, dtype=np.float64)
    if targets.shape != preds.shape:
        raise ValueError(f"shape mismatch: targets {targets.shape} vs preds {preds.shape}")
    p = np.clip(preds, PROB_CLAMP, 1.0 - PROB_CLAMP)
    loss = float(np.sum(-(targets * np.log(p) + (1.0 - targets) * np.log1p(-p))))
    grad = -targets / p + (1.0 - targets) / (1.0 - p)
    grad[(preds < PROB_CLAMP) | (preds > 1.0 - PROB_CLAMP)] = 0.0
    return loss, grad


def l1_term(gt: np.ndarray, pred: np.ndarray) -> tuple[float, np.ndarray]:
    """Instance-normalized L1: sum of |gt - pred| over components / n instances.

    Rows are matched instances. An empty match set contributes 0 and logs a
    warning instead of raising.
    """
    gt = np.atleast_2d(np.asarray(gt, dtype=np.float64))
    pred = np.atleast_2d(np.asarray(pred, dtype=np.float64))
    if gt.shape != pred.shape:
        raise ValueError(f"shape mismatch: gt {gt.shape} vs pred {pred.shape}")
    n = gt.shape[0]
    if n == 0:
        logger.warning("l1_term called with an empty match set; returning 0")
        return 0.0, np.zeros_like(pred)
    loss = float(np.abs(gt - pred).sum() / n)
    return loss, np.sign(pred - gt) / n


def depth_laplacian(
    z: np.ndarray, z_hat: np.ndarray, sigma_hat: np.ndarray
) -> tuple[float, np.ndarray, np.ndarray]:
    """Uncertainty-weighted depth loss: mean of sqrt(2)|z - z_hat|/sigma + log(sigma)/2.

    The log term makes the loss negative for sigma < 1; that is intended.
    Returns (loss, dloss/dz_hat, dloss/dsigma_hat).
    """
    z = np.atleast_1d(np.asarray(z, dtype=np.float64))
    z_hat = np.atleast_1d(np.asarray(z_hat, dtype=np.float64))
    sigma_hat = np.atleast_1d(np.asarray(sigma_hat, dtype=np.float64))
    if np.any(sigma_hat <= 0.0):
        raise ValueError("sigma_hat must be positive")
    n = z.shape[0]
    root2 = math.sqrt(2.0)
    resid = z - z_hat
    loss = float(np.mean(root2 * np.abs(resid) / sigma_hat + 0.5 * np.log(sigma_hat)))
    grad_z_hat = -root2 * np.sign(resid) / sigma_hat / n
    grad_sigma = (-root2 * np.abs(resid) / sigma_hat**2 + 0.5 / sigma_hat) / n
    return loss, grad_z_hat, grad_sigma


def orientation_multibin_loss(
    gt_bins: np.ndarray,
    gt_residuals: np.ndarray,
    logits: np.ndarray,
    residuals: np.ndarray,
) -> tuple[float, np.ndarray, np.ndarray]:
    """Softmax cross-entropy over 12 bins plus L1 on the GT bin's residual only.

    Args:
        gt_bins: (n,) integer bin indices.
        gt_residuals: (n,) target residuals (radians).
        logits: (n, 12) raw bin scores.
        residuals: (n, 12) predicted residuals; only the GT-bin channel is
            supervised (indicator mask), all others are ignored.
    """
    gt_bins = np.atleast_1d(np.asarray(gt_bins)).astype(int)
    gt_residuals = np.atleast_1d(np.asarray(gt_residuals, dtype=np.float64))
    logits = np.atleast_2d(np.asarray(logits, dtype=np.float64))
    residuals = np.atleast_2d(np.asarray(residuals, dtype=np.float64))
    if logits.shape[1] != 12 or residuals.shape[1] != 12:
        raise ValueError(
            f"expected 12 bin logits and 12 residuals per instance, got {logits.shape[1]} and {residuals.shape[1]}"
        )
    n = logits.shape[0]
    rows = np.arange(n)
    shifted = logits - logits.max(axis=1, keepdims=True)
    log_probs = shifted - np.log(np.exp(shifted).sum(axis=1, keepdims=True))
    ce = -log_probs[rows, gt_bins]
    res_diff = residuals[rows, gt_bins] - gt_residuals
    loss = float((ce + np.abs(res_diff)).sum() / n)
    grad_logits = np.exp(log_probs)
    grad_logits[rows, gt_bins] -= 1.0
    grad_logits /= n
    grad_residuals = np.zeros_like(residuals)
    grad_residuals[rows, gt_bins] = np.sign(res_diff) / n
    return loss, grad_logits, grad_residuals


def orientation_so3_loss(gt: np.ndarray, pred: np.ndarray) -> tuple[float, np.ndarray]:
    """Mean entrywise L1 between allocentric rotation matrices, per instance."""
    gt = np.asarray(gt, dtype=np.float64).reshape(-1, 3, 3)
    pred = np.asarray(pred, dtype=np.float64).reshape(-1, 3, 3)
    if gt.shape != pred.shape:
        raise ValueError(f"shape mismatch: gt {gt.shape} vs pred {pred.shape}")
    n = gt.shape[0]
    loss = float(np.abs(gt - pred).sum() / n)
    return loss, np.sign(pred - gt) / n


TOTAL_LOSS_KEYS = ("cls", "d2d", "o2d", "d3d", "o3d", "rot", "z", "distill")


def total_loss(components: dict[str, float], weights: LossWeights) -> float:
    """Weighted sum: cls + sum_k lambda_k * component_k."""
    missing = [k for k in TOTAL_LOSS_KEYS if k not in components]
    if missing:
        raise ValueError(f"missing loss components: {missing}")
    for key in TOTAL_LOSS_KEYS:
        if not math.isfinite(components[key]):
            raise ValueError(f"loss component {key!r} is not finite: {components[key]}")
    return (
        components["cls"]
        + weights.d2d * components["d2d"]
        + weights.o2d * components["o2d"]
        + weights.d3d * components["d3d"]
        + weights.o3d * components["o3d"]
        + weights.rot * components["rot"]
        + weights.z * components["z"]
        + weights.distill * components["distill"]
    )
