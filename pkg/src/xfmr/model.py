"""Four-stage pyramid assembly: embedding layers, attention blocks, head.

Each stage is a cross-scale embedding (quartering the grid and doubling the
width after stage one) followed by pre-norm residual blocks that alternate
short-distance and long-distance grouping. Named variants reproduce the
reference configuration tables structurally.
"""

from __future__ import annotations

from dataclasses import dataclass, field, replace

import numpy as np

from . import tensor as T
from .attention import LDA, SDA, GroupedAttention, PooledFullAttention, build_layout, group, ungroup
from .bias import AbsolutePositionEmbedding, DynamicPositionBias, RelativePositionBias
from .embed import CelSpec, ConfigError, CrossScaleEmbedding
from .layers import LayerNorm, Linear, Mlp, Module, drop_path_mask
from .tensor import Tensor

__all__ = [
    "StageSpec",
    "ModelSpec",
    "VARIANT_NAMES",
    "build_variant",
    "toy_spec",
    "Block",
    "Classifier",
    "build_model",
    "model_forward",
    "MLP_RATIO",
    "PVT_REDUCTIONS",
]

MLP_RATIO = 4
PVT_REDUCTIONS = (8, 4, 2, 1)  # per-stage key/value pooling for the ablation

ATTENTION_MODES = ("lsda", "sda-only", "pvt-like")


@dataclass(frozen=True)
class StageSpec:
    cel: CelSpec
    dim: int
    heads: int
    group_size: int
    interval: int
    blocks: int

    def __post_init__(self):
        if self.dim != self.cel.dim:
            raise ConfigError("stage dim must equal its embedding layer dim")
        if self.dim % self.heads:
            raise ConfigError(f"dim {self.dim} not divisible by heads {self.heads}")
        if self.dim % 4:
            raise ConfigError("dim must be divisible by 4 (bias MLP hidden width)")
        if self.blocks < 1 or self.group_size < 1 or self.interval < 1:
            raise ConfigError("blocks, group size and interval must be positive")


@dataclass(frozen=True)
class ModelSpec:
    stages: tuple[StageSpec, StageSpec, StageSpec, StageSpec]
    classes: int = 1000
    bias_kind: str = "dpb"
    attention_mode: str = "lsda"
    input_size: tuple[int, int] = (224, 224)
    drop_path_max: float = 0.0

    def __post_init__(self):
        if len(self.stages) != 4:
            raise ConfigError("exactly four stages expected")
        for a, b in zip(self.stages, self.stages[1:]):
            if b.dim != 2 * a.dim:
                raise ConfigError("each stage must double the embedding dim")
        if self.attention_mode not in ATTENTION_MODES:
            raise ConfigError(f"unknown attention mode {self.attention_mode!r}")
        if self.bias_kind not in ("ape", "rpb", "dpb", "dpb-res"):
            raise ConfigError(f"unknown bias kind {self.bias_kind!r}")

    def stage_grids(self) -> list[tuple[int, int]]:
        """Embedding-grid extents after each stage's embedding layer."""
        h, w = self.input_size
        grids = []
        for stage in self.stages:
            h, w = stage.cel.output_grid(h, w)
            grids.append((h, w))
        return grids

    def total_blocks(self) -> int:
        return sum(s.blocks for s in self.stages)


# -- named variants ------------------------------------------------------------

# dims, heads, block counts and stochastic-depth maximum per named size
_VARIANTS = {
    "tiny": ((64, 128, 256, 512), (2, 4, 8, 16), (1, 1, 8, 6), 0.1),
    "small": ((96, 192, 384, 768), (3, 6, 12, 24), (2, 2, 6, 2), 0.2),
    "base": ((96, 192, 384, 768), (3, 6, 12, 24), (2, 2, 18, 2), 0.3),
    "large": ((128, 256, 512, 1024), (4, 8, 16, 32), (2, 2, 18, 2), 0.5),
}
_ALIASES = {"t": "tiny", "s": "small", "b": "base", "l": "large"}
VARIANT_NAMES = tuple(_VARIANTS)


def canonical_variant(name: str) -> str:
    return _ALIASES.get(name.lower(), name.lower())

STAGE1_KERNELS = (4, 8, 16, 32)
LATER_KERNELS = (2, 4)

# grouping hyperparameters: classification uses G=7 everywhere with intervals
# 8/4/2/1; the dense-task setting widens the first two stages
_TASK_GROUPING = {
    "classification": ((7, 7, 7, 7), (8, 4, 2, 1), (224, 224)),
    "dense": ((14, 14, 7, 7), (16, 8, 2, 1), (800, 1280)),
}


def _cel_kernels(cel_mode: str) -> tuple[tuple[int, ...], tuple[int, ...]]:
    if cel_mode == "cross":
        return STAGE1_KERNELS, LATER_KERNELS
    if cel_mode == "two":
        return (4, 8), (2, 4)
    if cel_mode == "single":
        return (4,), (2,)
    raise ConfigError(f"unknown embedding-layer mode {cel_mode!r}")


def build_variant(
    name: str,
    task: str = "classification",
    classes: int = 1000,
    bias_kind: str = "dpb",
    attention_mode: str = "lsda",
    cel_mode: str = "cross",
    input_size: tuple[int, int] | None = None,
) -> ModelSpec:
    key = _ALIASES.get(name.lower(), name.lower())
    if key not in _VARIANTS:
        raise ConfigError(f"unknown variant {name!r} (expected one of {VARIANT_NAMES})")
    if task not in _TASK_GROUPING:
        raise ConfigError(f"unknown task {task!r}")
    dims, heads, depths, drop_path = _VARIANTS[key]
    groups, intervals, default_size = _TASK_GROUPING[task]
    k1, kn = _cel_kernels(cel_mode)
    stages = []
    for s in range(4):
        kernels = k1 if s == 0 else kn
        stride = 4 if s == 0 else 2
        stages.append(
            StageSpec(
                cel=CelSpec(kernels, stride, dims[s]),
                dim=dims[s],
                heads=heads[s],
                group_size=groups[s],
                interval=intervals[s],
                blocks=depths[s],
            )
        )
    return ModelSpec(
        stages=tuple(stages),
        classes=classes,
        bias_kind=bias_kind,
        attention_mode=attention_mode,
        input_size=input_size or default_size,
        drop_path_max=drop_path,
    )


def toy_spec(
    classes: int = 10,
    bias_kind: str = "dpb",
    attention_mode: str = "lsda",
    drop_path_max: float = 0.0,
) -> ModelSpec:
    """Smallest configuration that still exercises both grouping modes:
    64x64 input, grids 16/8/4/2, dims 16/32/64/128."""
    dims = (16, 32, 64, 128)
    heads = (1, 2, 4, 8)
    depths = (1, 1, 2, 1)
    intervals = (2, 2, 1, 1)
    stages = []
    for s in range(4):
        kernels = (4, 8) if s == 0 else (2, 4)
        stride = 4 if s == 0 else 2
        stages.append(
            StageSpec(
                cel=CelSpec(kernels, stride, dims[s]),
                dim=dims[s],
                heads=heads[s],
                group_size=2,
                interval=intervals[s],
                blocks=depths[s],
            )
        )
    return ModelSpec(
        stages=tuple(stages),
        classes=classes,
        bias_kind=bias_kind,
        attention_mode=attention_mode,
        input_size=(64, 64),
        drop_path_max=drop_path_max,
    )


# -- runtime modules -------------------------------------------------------------


def _make_bias_provider(rng, spec: ModelSpec, stage: StageSpec, mode: str,
                        stage_grid: tuple[int, int], dtype):
    if spec.bias_kind == "ape":
        return None
    if spec.bias_kind in ("dpb", "dpb-res"):
        return DynamicPositionBias(
            rng, stage.dim, stage.heads, residual=spec.bias_kind == "dpb-res", dtype=dtype
        )
    # fixed table sized for this block's slot extent at the build input size
    size = stage.group_size if mode == SDA else stage.interval
    layout = build_layout(mode, stage_grid[0], stage_grid[1], size)
    return RelativePositionBias(rng, stage.heads, layout.slots[0], layout.slots[1], dtype=dtype)


class Block(Module):
    """Pre-norm residual block: grouped attention then token MLP."""

    def __init__(self, rng, spec: ModelSpec, stage: StageSpec, mode: str,
                 drop_rate: float, stage_grid: tuple[int, int], reduction: int, dtype):
        self.mode = mode
        self.drop_rate = drop_rate
        self.norm1 = LayerNorm(stage.dim, dtype)
        if spec.attention_mode == "pvt-like":
            self.attn = PooledFullAttention(rng, stage.dim, stage.heads, reduction, dtype)
        else:
            provider = _make_bias_provider(rng, spec, stage, mode, stage_grid, dtype)
            self.attn = GroupedAttention(rng, stage.dim, stage.heads, provider, dtype)
        self.group_size = stage.group_size if mode == SDA else stage.interval
        self.norm2 = LayerNorm(stage.dim, dtype)
        self.mlp = Mlp(rng, stage.dim, MLP_RATIO * stage.dim, dtype)

    def _attend(self, x: Tensor) -> Tensor:
        if isinstance(self.attn, PooledFullAttention):
            return self.attn(x)
        layout = build_layout(self.mode, x.shape[1], x.shape[2], self.group_size)
        return ungroup(self.attn(group(x, layout), layout), layout)

    def __call__(self, x: Tensor, train: bool = False, rng: np.random.Generator | None = None) -> Tensor:
        def residual(branch: Tensor) -> Tensor:
            if train and self.drop_rate > 0.0:
                mask = drop_path_mask(rng, x.shape[0], self.drop_rate, branch.data.ndim, branch.data.dtype.type)
                if mask is not None:
                    return branch * mask
            return branch

        x = x + residual(self._attend(self.norm1(x)))
        x = x + residual(self.mlp(self.norm2(x)))
        return x


class Classifier(Module):
    """Full pyramid: 4 x (embedding + blocks), final norm, pooled linear head."""

    def __init__(self, spec: ModelSpec, seed: int = 0, dtype=np.float32):
        rng = np.random.default_rng(seed)
        self.spec = spec
        self.dtype = np.dtype(dtype)
        grids = spec.stage_grids()
        total = spec.total_blocks()
        rates = np.linspace(0.0, spec.drop_path_max, total) if total > 1 else np.zeros(1)
        self.cels = []
        self.stages = []
        in_ch = 3
        block_index = 0
        for s, stage in enumerate(spec.stages):
            self.cels.append(CrossScaleEmbedding(rng, in_ch, stage.cel, dtype))
            blocks = []
            for b in range(stage.blocks):
                mode = SDA if spec.attention_mode == "sda-only" or b % 2 == 0 else LDA
                blocks.append(
                    Block(rng, spec, stage, mode, float(rates[block_index]), grids[s],
                          PVT_REDUCTIONS[s], dtype)
                )
                block_index += 1
            self.stages.append(blocks)
            in_ch = stage.dim
        self.ape = None
        if spec.bias_kind == "ape":
            self.ape = AbsolutePositionEmbedding(rng, grids[0], spec.stages[0].dim, dtype)
        self.final_norm = LayerNorm(spec.stages[3].dim, dtype)
        self.head = Linear(rng, spec.stages[3].dim, spec.classes, dtype)

    def features(self, x: Tensor, train: bool = False, rng=None) -> Tensor:
        if x.data.dtype != self.dtype:
            x = Tensor(x.data.astype(self.dtype), requires_grad=x.requires_grad)
        for s, (cel, blocks) in enumerate(zip(self.cels, self.stages)):
            x = cel(x)
            if s == 0 and self.ape is not None:
                x = self.ape(x)
            for block in blocks:
                x = block(x, train=train, rng=rng)
        return x

    def __call__(self, images: Tensor, train: bool = False, rng=None) -> Tensor:
        x, squeeze = (images.reshape((1,) + images.shape), True) if images.data.ndim == 3 else (images, False)
        x = self.features(x, train=train, rng=rng)
        x = self.final_norm(x)
        x = T.mean_pool_hw(x)
        logits = self.head(x)
        return logits.reshape(logits.shape[1:]) if squeeze else logits


def build_model(spec: ModelSpec, seed: int = 0, dtype=np.float32) -> Classifier:
    """Instantiate a model with truncated-normal weights, deterministic per seed."""
    return Classifier(spec, seed=seed, dtype=dtype)


def model_forward(model: Classifier, images: Tensor | np.ndarray) -> Tensor:
    """Inference-mode logits for a batch (N, H, W, 3) or single image."""
    if not isinstance(images, Tensor):
        images = Tensor(images)
    with T.no_grad():
        return model(images)
