"""Model / training hyperparameters and the ``key = value`` config file format.

Config files hold one ``key = value`` pair per line; ``#`` starts a comment.
Keys are the field names of :class:`ModelConfig` and :class:`TrainConfig`
(they do not overlap). Unknown keys and unparsable values are errors.
"""

from __future__ import annotations

import dataclasses
from dataclasses import dataclass, fields


class ConfigError(ValueError):
    pass


@dataclass
class ModelConfig:
    n_tokens: int = 128  # anchor tokens per cloud
    channels: int = 192  # token width
    k: int = 16
    enc_depth: int = 4
    dec_depth: int = 4
    heads: int = 6
    ffn_mult: int = 4
    edge_channels: int = 64
    n_template: int = 512  # coarse and fine template size
    pool_template: int = 256  # template points kept in the pool
    pool_input: int = 384  # input points added to the pool
    up_factor: int = 4
    sphere_channels: int = 32  # sphere embedding width in the value tokens
    template_oversample: int = 4
    template_seed: int = 7
    eval_sphere_seed: int = 11
    coarse_hidden: int = 512
    corres_channels: int = 64
    vote_channels: int = 64
    fold_hidden: int = 128
    fold_grid_extent: float = 0.05
    offset_bound: float = 0.2
    fps_start: int = 0
    use_template: bool = True
    template_every_layer: bool = True
    use_corres_pool: bool = True
    use_value_sphere: bool = True
    drop_highest: bool = True

    @property
    def pool_size(self) -> int:
        return self.pool_template + self.pool_input

    @property
    def n_dense(self) -> int:
        return self.n_template * self.up_factor

    def validate(self) -> "ModelConfig":
        if self.channels % self.heads:
            raise ConfigError(f"channels={self.channels} not divisible by heads={self.heads}")
        if self.k > self.n_tokens:
            raise ConfigError(f"k={self.k} exceeds n_tokens={self.n_tokens}")
        if self.n_template < 1 or self.n_tokens < 1:
            raise ConfigError("n_template and n_tokens must be positive")
        if not 0 < self.pool_template <= self.n_template:
            raise ConfigError("pool_template must lie in (0, n_template]")
        if self.pool_size < self.n_template:
            raise ConfigError(f"pool of {self.pool_size} cannot supply {self.n_template} template points")
        if self.fold_grid_extent <= 0 or self.offset_bound <= 0:
            raise ConfigError("fold_grid_extent and offset_bound must be positive")
        if self.up_factor < 1:
            raise ConfigError(f"up_factor={self.up_factor} must be positive")
        return self


@dataclass
class TrainConfig:
    base_lr: float = 1e-4
    min_lr: float | None = None  # defaults to base_lr / 100
    total_steps: int = 2000
    batch_size: int = 1
    beta1: float = 0.9
    beta2: float = 0.999
    eps: float = 1e-8
    clip_norm: float = 1.0
    eval_every: int = 0
    checkpoint_every: int = 0
    seed: int = 0
    deterministic: bool = True

    @property
    def final_lr(self) -> float:
        return self.base_lr / 100.0 if self.min_lr is None else self.min_lr

    def validate(self) -> "TrainConfig":
        if self.base_lr <= 0:
            raise ConfigError("base_lr must be positive")
        if self.total_steps < 1:
            raise ConfigError("total_steps must be at least 1")
        if self.batch_size < 1:
            raise ConfigError("batch_size must be at least 1")
        return self


def _parse_value(kind, raw: str, key: str):
    raw = raw.strip()
    text = str(kind)
    try:
        if "bool" in text:
            low = raw.lower()
            if low in ("true", "1", "yes", "on"):
                return True
            if low in ("false", "0", "no", "off"):
                return False
            raise ValueError(raw)
        if "None" in text and raw.lower() in ("none", ""):
            return None
        if "int" in text:
            return int(raw)
        if "float" in text:
            return float(raw)
    except ValueError as exc:
        raise ConfigError(f"bad value for {key}: {raw!r}") from exc
    return raw


_MODEL_KEYS = {f.name: f.type for f in fields(ModelConfig)}
_TRAIN_KEYS = {f.name: f.type for f in fields(TrainConfig)}


def apply_overrides(model: ModelConfig, train: TrainConfig, pairs: dict[str, str]) -> None:
    for key, raw in pairs.items():
        if key in _MODEL_KEYS:
            setattr(model, key, _parse_value(_MODEL_KEYS[key], raw, key))
        elif key in _TRAIN_KEYS:
            setattr(train, key, _parse_value(_TRAIN_KEYS[key], raw, key))
        else:
            raise ConfigError(f"unknown config key {key!r}")


def parse_config_text(text: str) -> dict[str, str]:
    pairs: dict[str, str] = {}
    for lineno, line in enumerate(text.splitlines(), 1):
        line = line.split("#", 1)[0].strip()
        if not line:
            continue
        if "=" not in line:
            raise ConfigError(f"line {lineno}: expected 'key = value'")
        key, val = (s.strip() for s in line.split("=", 1))
        if key in pairs:
            raise ConfigError(f"line {lineno}: duplicate key {key!r}")
        pairs[key] = val
    return pairs


def load_config(path=None, overrides: dict[str, str] | None = None) -> tuple[ModelConfig, TrainConfig]:
    model, train = ModelConfig(), TrainConfig()
    if path is not None:
        with open(path, encoding="utf-8") as fh:
            apply_overrides(model, train, parse_config_text(fh.read()))
    if overrides:
        apply_overrides(model, train, overrides)
    return model.validate(), train.validate()


def dump_config(model: ModelConfig, train: TrainConfig | None = None) -> str:
    lines = ["# model"]
    lines += [f"{k} = {_fmt(v)}" for k, v in dataclasses.asdict(model).items()]
    if train is not None:
        lines.append("# training")
        lines += [f"{k} = {_fmt(v)}" for k, v in dataclasses.asdict(train).items()]
    return "\n".join(lines) + "\n"


def _fmt(v) -> str:
    if isinstance(v, bool):
        return "true" if v else "false"
    return "none" if v is None else repr(v) if isinstance(v, float) else str(v)


def model_config_from_dict(d: dict) -> ModelConfig:
    known = {k: v for k, v in d.items() if k in _MODEL_KEYS}
    extra = set(d) - set(known)
    if extra:
        raise ConfigError(f"unknown model config keys {sorted(extra)}")
    return ModelConfig(**known).validate()
