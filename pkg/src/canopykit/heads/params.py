"""Head configuration, parameter initialization, and the mock token source.

Parameters live in a flat ``name -> ndarray`` dict. Component name prefixes
are ``height.*`` / ``class.*``, or ``shared.*`` when a component (mlp,
attention, query) is tied between the two heads; a tied tensor therefore
exists once and naturally accumulates both heads' gradients.
"""

from __future__ import annotations

from dataclasses import dataclass, replace

import numpy as np

from ..errors import ConfigError, InvalidDim, InvalidHeads

RELU = "relu"
SIGMOID_SCALED = "sigmoid_scaled"


@dataclass(frozen=True)
class TokenSet:
    """Backbone output: grid-ordered patch tokens plus the global token."""

    patch_tokens: np.ndarray  # (N, d) f64, rows in row-major grid order
    cls_token: np.ndarray  # (d,)
    grid: tuple[int, int]  # (gh, gw), N = gh * gw

    def __post_init__(self) -> None:
        gh, gw = self.grid
        if self.patch_tokens.shape != (gh * gw, self.cls_token.shape[0]):
            raise InvalidDim(
                f"patch tokens {self.patch_tokens.shape} inconsistent with "
                f"grid {self.grid} and width {self.cls_token.shape}"
            )

    @property
    def n_tokens(self) -> int:
        return self.patch_tokens.shape[0]

    @property
    def width(self) -> int:
        return self.patch_tokens.shape[1]


@dataclass(frozen=True)
class HeadsConfig:
    embed_dim: int = 16
    n_heads: int = 8
    n_classes: int = 3
    use_mlp: bool = True
    use_pos_enc: bool = True
    class_query_token: bool = True  # False: mean of adapted tokens as query
    class_concat_cls: bool = True
    height_concat_cls: bool = False
    height_activation: str = RELU
    h_max: float | None = None  # required by sigmoid_scaled
    linear_cls_only: bool = False  # baseline: one linear per task on the cls token
    share_mlp: bool = False
    share_attention: bool = False
    share_query: bool = False
    ln_eps: float = 1e-6

    def __post_init__(self) -> None:
        if self.embed_dim % self.n_heads != 0:
            raise InvalidHeads(
                f"embed_dim {self.embed_dim} not divisible by {self.n_heads} heads"
            )
        if self.use_pos_enc and self.embed_dim % 4 != 0:
            raise InvalidDim("positional encoding needs embed_dim % 4 == 0")
        if self.height_activation not in (RELU, SIGMOID_SCALED):
            raise ConfigError(f"unknown activation {self.height_activation!r}")
        if self.height_activation == SIGMOID_SCALED and not (
            self.h_max and self.h_max > 0
        ):
            raise ConfigError("sigmoid_scaled needs h_max > 0")
        if self.n_classes < 2:
            raise ConfigError("need at least 2 classes")

    def output_in_dim(self, head: str) -> int:
        if self.linear_cls_only:
            return self.embed_dim
        concat = self.height_concat_cls if head == "height" else self.class_concat_cls
        return 2 * self.embed_dim if concat else self.embed_dim

    def component_owner(self, head: str, component: str) -> str:
        shared = {
            "mlp": self.share_mlp,
            "attn": self.share_attention,
            "query": self.share_query,
        }[component]
        return "shared" if shared else head


@dataclass
class HeadParams:
    config: HeadsConfig
    values: dict[str, np.ndarray]

    def __getitem__(self, key: str) -> np.ndarray:
        return self.values[key]

    def get(self, head: str, component: str, name: str) -> np.ndarray:
        return self.values[f"{self.config.component_owner(head, component)}.{component}.{name}"]

    def zero_grads(self) -> dict[str, np.ndarray]:
        return {k: np.zeros_like(v) for k, v in self.values.items()}


def _uniform_fan_in(rng: np.random.Generator, fan_in: int, shape) -> np.ndarray:
    bound = 1.0 / np.sqrt(fan_in)
    return rng.uniform(-bound, bound, size=shape)


def init_head_params(config: HeadsConfig, seed: int = 0) -> HeadParams:
    """Seeded initialization: fan-in uniform matrices, unit LN scales, zero
    biases/shifts, small-normal query tokens."""
    rng = np.random.default_rng(seed)
    d = config.embed_dim
    hidden = 4 * d
    values: dict[str, np.ndarray] = {}

    def add_mlp(owner: str) -> None:
        values[f"{owner}.mlp.ln1_scale"] = np.ones(d)
        values[f"{owner}.mlp.ln1_shift"] = np.zeros(d)
        values[f"{owner}.mlp.w1"] = _uniform_fan_in(rng, d, (d, hidden))
        values[f"{owner}.mlp.w2"] = _uniform_fan_in(rng, hidden, (hidden, d))
        values[f"{owner}.mlp.ln2_scale"] = np.ones(d)
        values[f"{owner}.mlp.ln2_shift"] = np.zeros(d)

    def add_attn(owner: str) -> None:
        for name in ("wq", "wk", "wv", "wo"):
            values[f"{owner}.attn.{name}"] = _uniform_fan_in(rng, d, (d, d))
        values[f"{owner}.attn.ln_out_scale"] = np.ones(d)
        values[f"{owner}.attn.ln_out_shift"] = np.zeros(d)

    def add_query(owner: str) -> None:
        values[f"{owner}.query.q"] = rng.normal(0.0, 0.02, size=d)

    for component, add in (("mlp", add_mlp), ("attn", add_attn), ("query", add_query)):
        owners = {config.component_owner(h, component) for h in ("height", "class")}
        for owner in sorted(owners):
            add(owner)

    values["height.out.w"] = _uniform_fan_in(
        rng, config.output_in_dim("height"), (config.output_in_dim("height"),)
    )
    values["height.out.b"] = np.zeros(())
    values["class.out.w"] = _uniform_fan_in(
        rng, config.output_in_dim("class"), (config.output_in_dim("class"), config.n_classes)
    )
    values["class.out.b"] = np.zeros(config.n_classes)
    return HeadParams(config=config, values=values)


def mock_backbone(seed: int, grid: tuple[int, int] = (4, 4), embed_dim: int = 16) -> TokenSet:
    """Deterministic stand-in for a vision backbone: seeded Gaussian tokens."""
    gh, gw = grid
    if gh < 1 or gw < 1:
        raise InvalidDim(f"grid {grid} must be positive")
    if embed_dim % 4 != 0:
        raise InvalidDim("embed_dim must be divisible by 4")
    rng = np.random.default_rng(seed)
    return TokenSet(
        patch_tokens=rng.normal(size=(gh * gw, embed_dim)),
        cls_token=rng.normal(size=embed_dim),
        grid=(gh, gw),
    )


def ablation_configurations(
    embed_dim: int = 16, n_heads: int = 8, n_classes: int = 3, h_max: float = 40.0
) -> list[tuple[str, HeadsConfig]]:
    """Eight ablation rows: the default heads, six single-component changes,
    and the linear-on-cls-token baseline."""
    base = HeadsConfig(embed_dim=embed_dim, n_heads=n_heads, n_classes=n_classes)
    return [
        ("default", base),
        ("no_mlp", replace(base, use_mlp=False)),
        ("no_pos_enc", replace(base, use_pos_enc=False)),
        ("no_class_task_token", replace(base, class_query_token=False)),
        ("no_class_cls_concat", replace(base, class_concat_cls=False)),
        ("height_cls_concat", replace(base, height_concat_cls=True)),
        ("sigmoid_height", replace(base, height_activation=SIGMOID_SCALED, h_max=h_max)),
        ("linear_cls_only", replace(base, linear_cls_only=True)),
    ]


def sharing_configurations(
    embed_dim: int = 16, n_heads: int = 8, n_classes: int = 3
) -> list[tuple[str, HeadsConfig]]:
    """Progressive parameter tying between the two heads."""
    base = HeadsConfig(embed_dim=embed_dim, n_heads=n_heads, n_classes=n_classes)
    return [
        ("share_none", base),
        ("share_mlp", replace(base, share_mlp=True)),
        ("share_mlp_attn", replace(base, share_mlp=True, share_attention=True)),
        (
            "share_mlp_attn_query",
            replace(base, share_mlp=True, share_attention=True, share_query=True),
        ),
    ]
