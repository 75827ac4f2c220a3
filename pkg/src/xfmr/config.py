"""Line-oriented run configuration files.

Format: `key = value` pairs, `#` comments, optional `[stage.N]` sections
(N in 1..4) overriding the named variant's per-stage structure. Emitting and
re-parsing a config yields an equal config.
"""

from __future__ import annotations

from dataclasses import dataclass, field, replace
from pathlib import Path

from .embed import CelSpec, ConfigError
from .model import ModelSpec, StageSpec, build_variant, toy_spec

__all__ = ["RunConfig", "parse_config", "emit_config", "load_config", "to_model_spec"]


@dataclass(frozen=True)
class StageOverride:
    kernels: tuple[int, ...]
    stride: int
    dim: int
    heads: int
    group: int
    interval: int
    blocks: int


@dataclass(frozen=True)
class RunConfig:
    variant: str = "toy"
    task: str = "classification"
    bias: str = "dpb"
    attention: str = "lsda"
    cel: str = "cross"
    input_size: tuple[int, int] | None = None
    classes: int | None = None
    seed: int = 0
    dtype: str = "f32"
    # training hyperparameters (reference defaults; toy runs override)
    steps: int = 500
    batch: int = 32
    samples: int = 32
    lr: float = 1e-3
    weight_decay: float = 0.05
    warmup: int = 0
    drop_path: float | None = None
    stages: tuple[StageOverride, ...] = field(default=())


_SCALARS = {
    "variant": str,
    "task": str,
    "bias": str,
    "attention": str,
    "cel": str,
    "seed": int,
    "dtype": str,
    "steps": int,
    "batch": int,
    "samples": int,
    "lr": float,
    "weight_decay": float,
    "warmup": int,
}


def parse_config(text: str) -> RunConfig:
    values: dict = {}
    stage_values: dict[int, dict] = {}
    section: int | None = None
    for lineno, raw in enumerate(text.splitlines(), 1):
        line = raw.split("#", 1)[0].strip()
        if not line:
            continue
        if line.startswith("[") and line.endswith("]"):
            name = line[1:-1].strip()
            if not name.startswith("stage."):
                raise ConfigError(f"line {lineno}: unknown section {name!r}")
            try:
                section = int(name.split(".", 1)[1])
            except ValueError:
                raise ConfigError(f"line {lineno}: bad stage number in {name!r}") from None
            if section not in (1, 2, 3, 4):
                raise ConfigError(f"line {lineno}: stage number must be 1..4")
            stage_values.setdefault(section, {})
            continue
        if "=" not in line:
            raise ConfigError(f"line {lineno}: expected 'key = value'")
        key, _, value = (part.strip() for part in line.partition("="))
        if section is None:
            _parse_top(key, value, values, lineno)
        else:
            _parse_stage(key, value, stage_values[section], lineno)
    if stage_values:
        if sorted(stage_values) != [1, 2, 3, 4]:
            raise ConfigError("stage sections must cover stages 1..4")
        overrides = []
        for n in (1, 2, 3, 4):
            sv = stage_values[n]
            missing = {"kernels", "stride", "dim", "heads", "group", "interval", "blocks"} - set(sv)
            if missing:
                raise ConfigError(f"[stage.{n}] missing keys: {sorted(missing)}")
            overrides.append(StageOverride(**sv))
        values["stages"] = tuple(overrides)
    try:
        return RunConfig(**values)
    except TypeError as exc:
        raise ConfigError(str(exc)) from None


def _parse_top(key: str, value: str, values: dict, lineno: int) -> None:
    if key in _SCALARS:
        try:
            values[key] = _SCALARS[key](value)
        except ValueError:
            raise ConfigError(f"line {lineno}: bad value for {key}: {value!r}") from None
    elif key == "input_size":
        parts = value.split()
        if len(parts) != 2:
            raise ConfigError(f"line {lineno}: input_size wants 'H W'")
        values["input_size"] = (int(parts[0]), int(parts[1]))
    elif key == "classes":
        values["classes"] = int(value)
    elif key == "drop_path":
        values["drop_path"] = None if value == "auto" else float(value)
    else:
        raise ConfigError(f"line {lineno}: unknown key {key!r}")


def _parse_stage(key: str, value: str, sv: dict, lineno: int) -> None:
    if key == "kernels":
        sv["kernels"] = tuple(int(p) for p in value.replace(",", " ").split())
    elif key in ("stride", "dim", "heads", "group", "interval", "blocks"):
        sv[key] = int(value)
    else:
        raise ConfigError(f"line {lineno}: unknown stage key {key!r}")


def emit_config(cfg: RunConfig) -> str:
    lines = [
        f"variant = {cfg.variant}",
        f"task = {cfg.task}",
        f"bias = {cfg.bias}",
        f"attention = {cfg.attention}",
        f"cel = {cfg.cel}",
    ]
    if cfg.input_size is not None:
        lines.append(f"input_size = {cfg.input_size[0]} {cfg.input_size[1]}")
    if cfg.classes is not None:
        lines.append(f"classes = {cfg.classes}")
    lines += [
        f"seed = {cfg.seed}",
        f"dtype = {cfg.dtype}",
        f"steps = {cfg.steps}",
        f"batch = {cfg.batch}",
        f"samples = {cfg.samples}",
        f"lr = {cfg.lr!r}",
        f"weight_decay = {cfg.weight_decay!r}",
        f"warmup = {cfg.warmup}",
        f"drop_path = {'auto' if cfg.drop_path is None else repr(cfg.drop_path)}",
    ]
    for n, sv in enumerate(cfg.stages, 1):
        lines.append(f"[stage.{n}]")
        lines.append("kernels = " + ", ".join(str(k) for k in sv.kernels))
        for key in ("stride", "dim", "heads", "group", "interval", "blocks"):
            lines.append(f"{key} = {getattr(sv, key)}")
    return "\n".join(lines) + "\n"


def load_config(path: str | Path) -> RunConfig:
    return parse_config(Path(path).read_text())


def to_model_spec(cfg: RunConfig) -> ModelSpec:
    """Materialize the model spec a config describes."""
    if cfg.stages:
        stages = tuple(
            StageSpec(
                cel=CelSpec(sv.kernels, sv.stride, sv.dim),
                dim=sv.dim,
                heads=sv.heads,
                group_size=sv.group,
                interval=sv.interval,
                blocks=sv.blocks,
            )
            for sv in cfg.stages
        )
        if cfg.input_size is None:
            raise ConfigError("explicit stages require input_size")
        return ModelSpec(
            stages=stages,
            classes=cfg.classes or 1000,
            bias_kind=cfg.bias,
            attention_mode=cfg.attention,
            input_size=cfg.input_size,
            drop_path_max=cfg.drop_path or 0.0,
        )
    if cfg.variant == "toy":
        spec = toy_spec(
            classes=cfg.classes or 10,
            bias_kind=cfg.bias,
            attention_mode=cfg.attention,
            drop_path_max=cfg.drop_path or 0.0,
        )
        if cfg.input_size is not None:
            spec = replace(spec, input_size=cfg.input_size)
        return spec
    spec = build_variant(
        cfg.variant,
        task=cfg.task,
        classes=cfg.classes or 1000,
        bias_kind=cfg.bias,
        attention_mode=cfg.attention,
        cel_mode=cfg.cel,
        input_size=cfg.input_size,
    )
    if cfg.drop_path is not None:
        spec = replace(spec, drop_path_max=cfg.drop_path)
    return spec
