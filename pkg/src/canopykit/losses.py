"""Task losses and multi-task weighting.

Smooth L1 for height, cross-entropy (plus focal and class-balanced variants)
for species, and three ways to combine them: equal weighting, learnable
log-variance (uncertainty) weighting, and dynamic weight averaging from
epoch-to-epoch loss ratios. PCGrad projects away conflicting gradient
components between the two tasks.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np

from .errors import (
    ConfigError,
    DimensionMismatch,
    IndexOutOfRange,
    InvalidBeta,
    InvalidDistribution,
    MissingHistory,
    NonFinite,
    NonPositiveLoss,
    ZeroCount,
    ZeroNormConflict,
)

PROB_SUM_TOL = 1e-6


@dataclass
class LossHistory:
    """Epoch-mean losses per task, appended once per finished epoch (1-based)."""

    height: list[float] = field(default_factory=list)
    classification: list[float] = field(default_factory=list)

    def append(self, loss_height: float, loss_class: float) -> None:
        for v in (loss_height, loss_class):
            if not math.isfinite(v):
                raise NonFinite(f"loss {v} is not finite")
        self.height.append(float(loss_height))
        self.classification.append(float(loss_class))

    def __len__(self) -> int:
        return len(self.height)


@dataclass(frozen=True)
class WeightingConfig:
    strategy: str = "dwa"  # equal | uncertainty | dwa
    temperature: float = 2.0
    pcgrad: bool = False
    focal_gamma: float = 2.0
    cb_beta: float = 0.999

    def __post_init__(self) -> None:
        if self.strategy not in ("equal", "uncertainty", "dwa"):
            raise ConfigError(f"unknown weighting strategy {self.strategy!r}")
        if self.temperature <= 0:
            raise ConfigError("temperature must be > 0")
        if self.focal_gamma < 0:
            raise ConfigError("focal_gamma must be >= 0")
        if not 0 <= self.cb_beta < 1:
            raise ConfigError("cb_beta must lie in [0, 1)")


def smooth_l1(pred: float, truth: float) -> float:
    """Piecewise loss: quadratic inside |d| < 1, linear outside, continuous at 1."""
    for v in (pred, truth):
        if not math.isfinite(v):
            raise NonFinite(f"smooth_l1 input {v}")
    d = pred - truth
    if abs(d) < 1.0:
        return 0.5 * d * d
    return abs(d) - 0.5


def _check_probs(probs, class_index: int) -> np.ndarray:
    p = np.asarray(probs, dtype=np.float64).ravel()
    if not np.all(np.isfinite(p)):
        raise InvalidDistribution("non-finite probabilities")
    if np.any(p <= 0) or np.any(p > 1):
        raise InvalidDistribution("probabilities must lie in (0, 1]")
    if abs(float(p.sum()) - 1.0) > PROB_SUM_TOL:
        raise InvalidDistribution(f"probabilities sum to {p.sum()}, not 1")
    if not 0 <= class_index < p.size:
        raise IndexOutOfRange(f"class {class_index} outside [0, {p.size})")
    return p


def cross_entropy(probs, class_index: int) -> float:
    """Negative log-likelihood of the true class."""
    p = _check_probs(probs, class_index)
    return float(-np.log(p[class_index]))


def focal_loss(probs, class_index: int, gamma: float = 2.0) -> float:
    """Cross-entropy down-weighted for well-classified samples: (1-p)^gamma * CE."""
    if gamma < 0:
        raise ConfigError("gamma must be >= 0")
    p = _check_probs(probs, class_index)
    pc = float(p[class_index])
    return (1.0 - pc) ** gamma * -math.log(pc)


def class_balanced_weights(counts, beta: float = 0.999) -> np.ndarray:
    """Per-class weights from effective sample numbers, normalized to sum to C.

    Effective number E_k = (1 - beta^n_k) / (1 - beta); raw weight 1 / E_k.
    beta = 0 recovers uniform weights.
    """
    if not 0 <= beta < 1:
        raise InvalidBeta(f"beta {beta} outside [0, 1)")
    n = np.asarray(counts, dtype=np.float64).ravel()
    if n.size == 0 or np.any(n < 1):
        raise ZeroCount("every class count must be >= 1")
    if beta == 0.0:
        effective = np.ones_like(n)
    else:
        effective = (1.0 - np.power(beta, n)) / (1.0 - beta)
    raw = 1.0 / effective
    return raw * (n.size / raw.sum())


def dwa_weights(history: LossHistory, temperature: float = 2.0, epoch: int = 1) -> tuple[float, float]:
    """Dynamic-weight-average pair (weight_height, weight_class) for an epoch.

    Epochs are 1-based; epochs 1 and 2 use (1, 1). From epoch 3 on, each
    task's ratio L(t-1)/L(t-2) passes through a tempered softmax scaled so the
    two weights always sum to 2.
    """
    if temperature <= 0:
        raise ConfigError("temperature must be > 0")
    if epoch < 1:
        raise ConfigError("epochs are 1-based")
    if epoch < 3:
        return 1.0, 1.0
    if len(history) < epoch - 1:
        raise MissingHistory(
            f"epoch {epoch} needs losses for epochs {epoch - 2} and {epoch - 1}"
        )
    prev = (history.height[epoch - 2], history.classification[epoch - 2])
    prev2 = (history.height[epoch - 3], history.classification[epoch - 3])
    if min(*prev, *prev2) <= 0:
        raise NonPositiveLoss("loss ratios need strictly positive losses")
    return dwa_from_ratios(prev[0] / prev2[0], prev[1] / prev2[1], temperature)


def dwa_from_ratios(ratio_height: float, ratio_class: float, temperature: float = 2.0) -> tuple[float, float]:
    """Tempered two-way softmax of loss ratios, scaled to sum to 2."""
    if temperature <= 0:
        raise ConfigError("temperature must be > 0")
    # subtract the max before exponentiating; the result is unchanged
    m = max(ratio_height, ratio_class)
    e_h = math.exp((ratio_height - m) / temperature)
    e_s = math.exp((ratio_class - m) / temperature)
    z = e_h + e_s
    return 2.0 * e_h / z, 2.0 * e_s / z


def total_loss(weight_height: float, weight_class: float, loss_height: float, loss_class: float) -> float:
    """Weighted sum of the two task losses."""
    total = weight_height * loss_height + weight_class * loss_class
    if not math.isfinite(total):
        raise NonFinite(f"total loss {total}")
    return float(total)


def uncertainty_weighted_total(
    loss_height: float, loss_class: float, s_height: float, s_class: float
) -> float:
    """Log-variance weighting: sum of exp(-s_k) * L_k + s_k over both tasks."""
    for v in (loss_height, loss_class, s_height, s_class):
        if not math.isfinite(v):
            raise NonFinite(f"uncertainty weighting input {v}")
    return (
        math.exp(-s_height) * loss_height
        + s_height
        + math.exp(-s_class) * loss_class
        + s_class
    )


def pcgrad(grad_a, grad_b) -> tuple[np.ndarray, np.ndarray]:
    """Project each gradient off the other's conflicting direction.

    When the dot product is negative, the component along the OTHER task's
    original gradient is removed; orthogonal or agreeing gradients pass
    through unchanged.
    """
    ga = np.asarray(grad_a, dtype=np.float64).ravel()
    gb = np.asarray(grad_b, dtype=np.float64).ravel()
    if ga.size != gb.size:
        raise DimensionMismatch(f"{ga.size} vs {gb.size}")
    dot = float(ga @ gb)
    out_a, out_b = ga.copy(), gb.copy()
    if dot < 0:
        nb2 = float(gb @ gb)
        na2 = float(ga @ ga)
        if nb2 == 0.0 or na2 == 0.0:
            raise ZeroNormConflict("conflict with a zero gradient")
        out_a = ga - (dot / nb2) * gb
        out_b = gb - (dot / na2) * ga
    return out_a, out_b
