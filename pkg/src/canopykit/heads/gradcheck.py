"""Central finite-difference verification of the analytic head gradients."""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .model import backward, forward, joint_loss
from .params import HeadParams, HeadsConfig, TokenSet, init_head_params, mock_backbone

DEFAULT_STEP = 1e-5
DEFAULT_TOLERANCE = 1e-4
REL_ERR_FLOOR = 1e-6  # denominator floor so dead parameters compare at FD noise scale
KINK_MARGIN = 1e-2  # distance from the ReLU / smooth-L1 nonsmooth points


@dataclass
class GradCheckReport:
    config_name: str
    per_tensor: dict[str, float]  # tensor name -> max relative error
    max_rel_err: float
    tolerance: float
    passed: bool


def _rel_err(analytic: np.ndarray, numeric: np.ndarray) -> float:
    denom = np.maximum(np.maximum(np.abs(analytic), np.abs(numeric)), REL_ERR_FLOOR)
    return float(np.max(np.abs(analytic - numeric) / denom)) if analytic.size else 0.0


def pick_smooth_targets(
    params: HeadParams, tokens: TokenSet, class_truth: int = 0
) -> tuple[float, int]:
    """Height target placed on the quadratic branch, away from the kinks.

    Keeps |pred - truth| near 0.4 so neither the smooth-L1 corner at 1 nor
    the ReLU corner at 0 can be crossed by 1e-5 parameter perturbations.
    """
    out = forward(params, tokens)
    return out.height + 0.4, class_truth


def check_gradients(
    config: HeadsConfig,
    seed: int = 0,
    step: float = DEFAULT_STEP,
    tolerance: float = DEFAULT_TOLERANCE,
    weight_height: float = 1.0,
    weight_class: float = 0.7,
    config_name: str = "",
    grid: tuple[int, int] = (4, 4),
) -> GradCheckReport:
    """Compare analytic gradients with central differences for one config.

    Every parameter tensor and both input tensors are perturbed element-wise.
    """
    tokens = mock_backbone(seed + 1, grid=grid, embed_dim=config.embed_dim)
    params = init_head_params(config, seed=seed)
    height_truth, class_truth = pick_smooth_targets(params, tokens)
    out = forward(params, tokens)
    assert abs(abs(out.height - height_truth) - 1.0) > KINK_MARGIN
    assert abs(out.caches["height_out"][2]) > KINK_MARGIN  # ReLU pre-activation

    _, grads = backward(
        params, tokens, height_truth, class_truth, weight_height, weight_class
    )

    def loss_now() -> float:
        return joint_loss(
            params, tokens, height_truth, class_truth, weight_height, weight_class
        )

    def fd_tensor(tensor: np.ndarray) -> np.ndarray:
        numeric = np.zeros_like(tensor, dtype=np.float64)
        flat = tensor.reshape(-1)
        num_flat = numeric.reshape(-1)
        for i in range(flat.size):
            orig = flat[i]
            flat[i] = orig + step
            up = loss_now()
            flat[i] = orig - step
            down = loss_now()
            flat[i] = orig
            num_flat[i] = (up - down) / (2.0 * step)
        return numeric

    per_tensor: dict[str, float] = {}
    for name, tensor in params.values.items():
        per_tensor[name] = _rel_err(grads[name], fd_tensor(tensor))
    per_tensor["input.patch_tokens"] = _rel_err(
        grads["input.patch_tokens"], fd_tensor(tokens.patch_tokens)
    )
    per_tensor["input.cls_token"] = _rel_err(
        grads["input.cls_token"], fd_tensor(tokens.cls_token)
    )

    worst = max(per_tensor.values())
    return GradCheckReport(
        config_name=config_name,
        per_tensor=per_tensor,
        max_rel_err=worst,
        tolerance=tolerance,
        passed=worst < tolerance,
    )
