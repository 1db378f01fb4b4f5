from .gradcheck import GradCheckReport, check_gradients
from .model import (
    HeadOutputs,
    backward,
    class_head_forward,
    cross_attention_forward,
    forward,
    height_head_forward,
    joint_loss,
    mlp_adapter_forward,
    sine_pos_encoding_2d,
)
from .params import (
    HeadParams,
    HeadsConfig,
    TokenSet,
    init_head_params,
    mock_backbone,
    sharing_configurations,
    ablation_configurations,
)

__all__ = [
    "GradCheckReport",
    "HeadOutputs",
    "HeadParams",
    "HeadsConfig",
    "TokenSet",
    "backward",
    "check_gradients",
    "class_head_forward",
    "cross_attention_forward",
    "forward",
    "height_head_forward",
    "init_head_params",
    "joint_loss",
    "mlp_adapter_forward",
    "mock_backbone",
    "sharing_configurations",
    "sine_pos_encoding_2d",
    "ablation_configurations",
]
