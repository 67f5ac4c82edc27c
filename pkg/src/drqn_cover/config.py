"""Training configuration and its flat ``key = value`` file format."""

from __future__ import annotations

import dataclasses
from dataclasses import dataclass, fields

from .errors import ConfigError


@dataclass
class TrainConfig:
    episodes: int = 10_000
    episode_cap: int = 0  # 0 -> 10 * rows * cols
    gamma: float = 0.90
    lr: float = 0.001
    target_sync: int = 20
    eps_start: float = 1.0
    eps_end: float = 0.05
    eps_decay: float = 2100.0
    batch_size: int = 64
    buffer_size: int = 50_000
    budget: str = "5n"  # "4n" | "5n" | "6n" | integer
    seed: int = 0
    variant: str = "recurrent"
    alpha: float = 0.6
    beta_start: float = 0.4
    beta_end: float = 1.0
    warmup: int = 1000
    train_every: int = 1
    update_per_episode: bool = False
    burn_in_len: int = 0  # >0: warm the LSTM on up to this many earlier in-episode observations
    kernel: int = 5
    conv_channels: int = 16
    hidden_size: int = 128
    dtype: str = "float32"
    report_episodes: int = 7000
    checkpoint_every: int = 1000

    def __post_init__(self):
        positive = ("episode_cap", "lr", "target_sync", "eps_decay", "batch_size", "buffer_size", "warmup",
                    "train_every", "kernel", "conv_channels", "hidden_size", "report_episodes",
                    "checkpoint_every", "burn_in_len")
        for name in positive:
            value = getattr(self, name)
            if value < 0 or (value == 0 and name not in ("episode_cap", "warmup", "burn_in_len")):
                raise ConfigError(f"{name} must be positive, got {value}")
        if self.episodes < 0:
            raise ConfigError("episodes must be non-negative")
        if not 0.0 <= self.gamma <= 1.0:
            raise ConfigError(f"gamma must lie in [0, 1], got {self.gamma}")
        if not 0.0 <= self.eps_end <= self.eps_start <= 1.0:
            raise ConfigError("need 0 <= eps_end <= eps_start <= 1")
        if self.variant not in ("recurrent", "cnn"):
            raise ConfigError(f"variant must be 'recurrent' or 'cnn', got {self.variant!r}")
        if self.dtype not in ("float32", "float64"):
            raise ConfigError(f"dtype must be float32 or float64, got {self.dtype!r}")
        self.budget = str(self.budget).strip().lower()
        parse_budget(self.budget, 16)

    def resolve_budget(self, n: int) -> int:
        return parse_budget(self.budget, n)

    def resolve_cap(self, rows: int, cols: int) -> int:
        return self.episode_cap or 10 * rows * cols

    def replace(self, **changes) -> "TrainConfig":
        return dataclasses.replace(self, **changes)

    def to_dict(self) -> dict:
        return dataclasses.asdict(self)

    def to_text(self) -> str:
        return "".join(f"{k} = {v}\n" for k, v in self.to_dict().items())


def parse_budget(value_text, n: int) -> int:
    s = str(value_text).strip().lower()
    try:
        if s.endswith("n"):
            value = int(s[:-1] or 1) * n
        else:
            value = int(s)
    except ValueError:
        raise ConfigError(f"budget must be an integer or a multiple like '5n', got {value_text!r}") from None
    if value < 0:
        raise ConfigError(f"budget must be non-negative, got {value}")
    return value


def _coerce(field_type, raw: str):
    if field_type in (bool, "bool"):
        low = raw.lower()
        if low in ("1", "true", "yes", "on"):
            return True
        if low in ("0", "false", "no", "off"):
            return False
        raise ValueError(f"not a boolean: {raw!r}")
    if field_type in (int, "int"):
        return int(raw.replace("_", ""))
    if field_type in (float, "float"):
        return float(raw.replace("_", ""))
    return raw


def parse_config_text(text: str, base: TrainConfig | None = None) -> TrainConfig:
    """Parse ``key = value`` lines; ``#`` starts a comment.  Errors cite line numbers."""
    types = {f.name: f.type for f in fields(TrainConfig)}
    values = {}
    for lineno, line in enumerate(text.splitlines(), start=1):
        line = line.split("#", 1)[0].strip()
        if not line:
            continue
        if "=" not in line:
            raise ConfigError(f"line {lineno}: expected 'key = value', got {line!r}")
        key, raw = (part.strip() for part in line.split("=", 1))
        if key not in types:
            raise ConfigError(f"line {lineno}: unknown key {key!r}")
        if key in values:
            raise ConfigError(f"line {lineno}: duplicate key {key!r}")
        try:
            values[key] = _coerce(types[key], raw)
        except ValueError as exc:
            raise ConfigError(f"line {lineno}: bad value for {key}: {exc}") from None
    base = base or TrainConfig()
    try:
        return base.replace(**values)
    except ConfigError as exc:
        raise ConfigError(f"invalid config: {exc}") from None
