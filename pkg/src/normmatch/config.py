"""Run configuration: model/training hyperparameters and dataset knobs.

Config files are plain text, one ``key = value`` per line, ``#`` comments.
Unknown keys are hard errors so typos cannot silently fall back to defaults.
Model hyperparameters live in TrainConfig; dataset-generation knobs live in
DataConfig; both parse from the same file.
"""

from __future__ import annotations

from dataclasses import dataclass, fields, replace

__all__ = [
    "TrainConfig",
    "DataConfig",
    "full_scale",
    "parse_config_text",
    "parse_config_file",
    "config_to_text",
]


@dataclass
class TrainConfig:
    """Model and optimizer hyperparameters.

    Defaults are the desk scale used throughout the tests; :func:`full_scale`
    returns the reference large configuration.
    """

    d_model: int = 64
    heads: int = 4
    decoder_layers: int = 2
    gnn_input_dim: int = 32
    kernel_size: int = 5
    mlp_mult: int = 4
    layer_loss_p: float = 0.3
    batch_size: int = 8
    epochs: int = 6
    base_lr: float = 5e-4
    backbone_lr_factor: float = 0.03
    lr_decay_epochs: tuple[int, ...] = (2, 5)
    lr_decay_factor: float = 0.1
    sinkhorn_temperature: float = 0.1
    sinkhorn_iters: int = 20
    infonce_mode: str = "inclusive"
    seed: int = 0

    def validate(self) -> None:
        if self.d_model <= 0 or self.heads <= 0:
            raise ValueError("d_model and heads must be positive")
        if self.d_model % self.heads:
            raise ValueError("heads must divide d_model")
        if self.gnn_input_dim <= 0 or self.gnn_input_dim % 2:
            raise ValueError("gnn_input_dim must be positive and even")
        if self.kernel_size < 2:
            raise ValueError("kernel_size must be >= 2")
        if self.decoder_layers < 1:
            raise ValueError("decoder_layers must be >= 1")
        if self.mlp_mult < 1:
            raise ValueError("mlp_mult must be >= 1")
        if self.batch_size < 1 or self.epochs < 0:
            raise ValueError("batch_size must be >= 1 and epochs >= 0")
        if self.base_lr < 0 or self.lr_decay_factor <= 0:
            raise ValueError("base_lr must be >= 0 and lr_decay_factor > 0")
        if self.sinkhorn_temperature <= 0 or self.sinkhorn_iters < 1:
            raise ValueError("sinkhorn_temperature must be > 0 and iters >= 1")
        if self.infonce_mode not in ("exclusive", "inclusive"):
            raise ValueError(f"unknown infonce_mode {self.infonce_mode!r}")


def full_scale() -> TrainConfig:
    """The reference large configuration (648-dim model, 12 heads, 4 layers)."""
    return TrainConfig(
        d_model=648,
        heads=12,
        decoder_layers=4,
        gnn_input_dim=1024,
        batch_size=8,
    )


@dataclass
class DataConfig:
    """Synthetic dataset knobs (plus an optional path to a prebuilt dataset)."""

    num_pairs: int = 2000
    val_pairs_per_class: int = 100
    num_classes: int = 10
    m_min: int = 5
    m_max: int = 10
    jitter_sigma: float = 0.3
    noise_level: float = 0.02
    rotation_deg: float = 30.0
    scale_min: float = 0.8
    scale_max: float = 1.25
    translation_max: float = 3.0
    data: str = ""  # path to a JSONL dataset; empty = generate on the fly

    def validate(self) -> None:
        if self.num_pairs < 1 or self.num_classes < 1:
            raise ValueError("num_pairs and num_classes must be >= 1")
        if not (1 <= self.m_min <= self.m_max):
            raise ValueError("need 1 <= m_min <= m_max")
        if self.jitter_sigma < 0 or self.noise_level < 0:
            raise ValueError("jitter_sigma and noise_level must be >= 0")
        if not (0 < self.scale_min <= self.scale_max):
            raise ValueError("need 0 < scale_min <= scale_max")


def _coerce(name: str, raw: str, annotation, current):
    raw = raw.strip()
    if isinstance(current, bool):
        if raw.lower() in ("true", "1", "yes"):
            return True
        if raw.lower() in ("false", "0", "no"):
            return False
        raise ValueError(f"cannot parse boolean {name} = {raw!r}")
    if isinstance(current, int):
        return int(raw)
    if isinstance(current, float):
        return float(raw)
    if isinstance(current, tuple):
        if not raw:
            return ()
        return tuple(int(part) for part in raw.split(","))
    return raw


def parse_config_text(text: str) -> tuple[TrainConfig, DataConfig]:
    """Parse ``key = value`` lines into (TrainConfig, DataConfig)."""
    train_cfg = TrainConfig()
    data_cfg = DataConfig()
    train_fields = {f.name: f for f in fields(TrainConfig)}
    data_fields = {f.name: f for f in fields(DataConfig)}
    train_updates: dict = {}
    data_updates: dict = {}
    for lineno, line in enumerate(text.splitlines(), start=1):
        stripped = line.split("#", 1)[0].strip()
        if not stripped:
            continue
        if "=" not in stripped:
            raise ValueError(f"line {lineno}: expected 'key = value', got {line!r}")
        key, raw = stripped.split("=", 1)
        key = key.strip()
        if key in train_fields:
            current = getattr(train_cfg, key)
            train_updates[key] = _coerce(key, raw, train_fields[key].type, current)
        elif key in data_fields:
            current = getattr(data_cfg, key)
            data_updates[key] = _coerce(key, raw, data_fields[key].type, current)
        else:
            raise ValueError(f"line {lineno}: unknown config key {key!r}")
    train_cfg = replace(train_cfg, **train_updates)
    data_cfg = replace(data_cfg, **data_updates)
    train_cfg.validate()
    data_cfg.validate()
    return train_cfg, data_cfg


def parse_config_file(path) -> tuple[TrainConfig, DataConfig]:
    with open(path, "r", encoding="utf-8") as fh:
        return parse_config_text(fh.read())


def config_to_text(cfg: TrainConfig) -> str:
    """Serialize a TrainConfig as config-file text (round-trips via parse)."""
    lines = []
    for f in fields(TrainConfig):
        value = getattr(cfg, f.name)
        if isinstance(value, tuple):
            value = ",".join(str(v) for v in value)
        lines.append(f"{f.name} = {value}")
    return "\n".join(lines) + "\n"
