"""Runtime settings (environment) and the tracker configuration file.

Tracker config files are flat UTF-8 ``key = value`` lines with ``#`` comments.
Lists are comma separated, booleans are ``true``/``false``.
"""

from pathlib import Path
from typing import Any, Dict, Iterable, List, Optional, Tuple, Type, TypeVar, Union

from pydantic import BaseModel, ConfigDict, Field, ValidationError, field_validator, model_validator
from pydantic_settings import BaseSettings, SettingsConfigDict

from core.utils.errors import ConfigError
from core.utils.files import atomic_write_text

ModelT = TypeVar("ModelT", bound=BaseModel)


class settings(BaseSettings):
    LOG_LEVEL: str = "INFO"
    JOBS: int = 1

    model_config = SettingsConfigDict(env_file=".env", env_prefix="STMT_", extra="allow")


def get_setting():
    return settings()


def _split_csv(value: Any) -> Any:
    if isinstance(value, str):
        return [item.strip() for item in value.split(",") if item.strip()]
    return value


class KeyValueModel(BaseModel):
    """Base for models persisted in the flat ``key = value`` format."""

    model_config = ConfigDict(extra="forbid", frozen=True)

    def to_lines(self) -> List[str]:
        return [f"{name} = {_format_value(getattr(self, name))}" for name in type(self).model_fields]


class TrackerConfig(KeyValueModel):
    # geometry
    template_size: int = 128
    search_size: int = 256
    patch_size: int = 16
    template_factor: float = 2.0
    search_factor: float = 4.0
    pixel_mean: Tuple[float, float, float] = (0.5, 0.5, 0.5)
    pixel_std: Tuple[float, float, float] = (0.5, 0.5, 0.5)

    # network
    embed_dim: int = 64
    depth: int = 12
    num_heads: int = 4
    mlp_ratio: float = 4.0
    ln_eps: float = 1e-6
    head_hidden: int = 64

    # stmt
    insert_layers: Tuple[int, ...] = (4, 7, 10)
    tf_layers: Tuple[int, ...] = (10,)
    enable_modality_enhancement: bool = True
    enable_dynamic_tokens: bool = True
    share_dynamic_ca: bool = False

    # candidate elimination
    elimination: bool = False
    keep_rate: float = 0.7

    # dynamic-token memory
    update_interval: int = 25
    score_threshold: float = 0.65
    roi_sampling: int = 2

    # training
    lr: float = 1e-3
    backbone_lr_factor: float = 0.01
    head_lr_factor: float = 0.1
    weight_decay: float = 1e-4
    batch_size: int = 4
    train_steps: int = 300
    lr_decay_at: float = 1.0 / 3.0
    lr_decay_factor: float = 0.1
    checkpoint_every: int = 100
    log_every: int = 10
    detach_dynamic: bool = True
    gaussian_sigma: float = 1.0
    cls_weight: float = 1.0
    offset_weight: float = 1.0
    size_weight: float = 1.0
    center_jitter: float = 0.5
    scale_jitter: float = 0.2

    seed: int = 0
    jobs: int = Field(default=1, ge=1)

    @field_validator("insert_layers", "tf_layers", "pixel_mean", "pixel_std", mode="before")
    @classmethod
    def split_lists(cls, value: Any) -> Any:
        return _split_csv(value)

    @field_validator("insert_layers", "tf_layers")
    @classmethod
    def sorted_unique(cls, value: Tuple[int, ...]) -> Tuple[int, ...]:
        return tuple(sorted(set(value)))

    @model_validator(mode="after")
    def check_consistency(self) -> "TrackerConfig":
        for name in ("template_size", "search_size"):
            if getattr(self, name) % self.patch_size:
                raise ValueError(f"{name}={getattr(self, name)} is not divisible by patch_size={self.patch_size}")
        if self.patch_size < 1 or self.depth < 1 or self.embed_dim < 1:
            raise ValueError("patch_size, depth and embed_dim must be positive")
        if self.embed_dim % self.num_heads:
            raise ValueError(f"embed_dim={self.embed_dim} is not divisible by num_heads={self.num_heads}")
        bad = [layer for layer in self.insert_layers if not 1 <= layer <= self.depth]
        if bad:
            raise ValueError(f"insert_layers {bad} outside 1..{self.depth}")
        if not set(self.tf_layers) <= set(self.insert_layers):
            raise ValueError(f"tf_layers {self.tf_layers} must be a subset of insert_layers {self.insert_layers}")
        if not 0.0 < self.keep_rate <= 1.0:
            raise ValueError(f"keep_rate={self.keep_rate} must lie in (0, 1]")
        if self.update_interval < 1:
            raise ValueError("update_interval must be at least 1")
        if not 0.0 <= self.score_threshold <= 1.0:
            raise ValueError("score_threshold must lie in [0, 1]")
        if self.template_factor < 1.0 or self.search_factor < 1.0:
            raise ValueError("crop context factors must be at least 1")
        if self.roi_sampling < 1 or self.batch_size < 1 or self.head_hidden < 1:
            raise ValueError("roi_sampling, batch_size and head_hidden must be positive")
        if any(s <= 0 for s in self.pixel_std):
            raise ValueError("pixel_std entries must be positive")
        return self

    @property
    def template_grid(self) -> int:
        return self.template_size // self.patch_size

    @property
    def search_grid(self) -> int:
        return self.search_size // self.patch_size

    @property
    def n_template(self) -> int:
        return self.template_grid**2

    @property
    def n_search(self) -> int:
        return self.search_grid**2


def _format_value(value: Any) -> str:
    if isinstance(value, bool):
        return "true" if value else "false"
    if isinstance(value, (tuple, list)):
        return ",".join(_format_value(item) for item in value)
    if isinstance(value, float):
        return repr(value)
    return str(value)


def parse_key_values(lines: Iterable[str], source: str = "<config>") -> Dict[str, str]:
    values: Dict[str, str] = {}
    for lineno, raw in enumerate(lines, start=1):
        line = raw.split("#", 1)[0].strip()
        if not line:
            continue
        if "=" not in line:
            raise ConfigError(f"{source}:{lineno}: expected 'key = value', got {raw.strip()!r}")
        key, value = (part.strip() for part in line.split("=", 1))
        if not key:
            raise ConfigError(f"{source}:{lineno}: empty key")
        if key in values:
            raise ConfigError(f"{source}:{lineno}: duplicate key {key!r}")
        values[key] = value
    return values


def build_model(model: Type[ModelT], values: Dict[str, Any], source: str = "<config>") -> ModelT:
    try:
        return model.model_validate(values)
    except ValidationError as exc:
        raise ConfigError(f"{source}: {exc}") from exc


def load_model(model: Type[ModelT], path: Union[str, Path]) -> ModelT:
    path = Path(path)
    try:
        text = path.read_text(encoding="utf-8")
    except OSError as exc:
        raise ConfigError(f"cannot read {path}: {exc}") from exc
    return build_model(model, parse_key_values(text.splitlines(), str(path)), str(path))


def save_model(instance: KeyValueModel, path: Union[str, Path]) -> Path:
    return atomic_write_text(path, "\n".join(instance.to_lines()) + "\n")


def load_config(path: Optional[Union[str, Path]] = None, **overrides: Any) -> TrackerConfig:
    """Load a tracker config file (defaults when ``path`` is None) and apply overrides."""
    base = load_model(TrackerConfig, path) if path else TrackerConfig()
    if not overrides:
        return base
    return build_model(TrackerConfig, {**base.model_dump(), **overrides})


def save_config(cfg: TrackerConfig, path: Union[str, Path]) -> Path:
    return save_model(cfg, path)
