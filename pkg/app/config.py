"""
Application Configuration
Load defaults from environment variables and merge run configuration layers
"""

import os
import re
from pathlib import Path
from typing import Any, Dict, List, Literal, Optional, Union, get_args

from dotenv import load_dotenv
from pydantic import BaseModel, ConfigDict, Field, ValidationError as PydanticValidationError, model_validator

from app.exceptions import ConfigError
from app.services.dataset import SyntheticSpec
from app.services.encoders import EncoderConfig
from app.services.training import TrainConfig

load_dotenv()

# Run defaults
DEFAULT_SEED = int(os.getenv("VTD_SEED", 7))
LOG_LEVEL = os.getenv("VTD_LOG_LEVEL", "INFO").upper()
RUNS_DIR = os.getenv("VTD_RUNS_DIR", "runs")

NONE_VALUES = {"", "none", "null"}
_COMMENT = re.compile(r"(?:^|(?<=\s))#")


def _env_seed() -> int:
    # read at model creation so a VTD_SEED set after import still applies
    return int(os.getenv("VTD_SEED", DEFAULT_SEED))


class RunConfig(BaseModel):
    """Every key a command understands. Flags are the --kebab-case of each field."""

    model_config = ConfigDict(extra="forbid", validate_assignment=True)

    # Run
    seed: int = Field(default_factory=_env_seed)
    data_dir: str = "data"
    out_dir: Optional[str] = None
    checkpoint: Optional[str] = None
    descriptions: Optional[str] = None

    # Frozen encoders
    encoder_seed: int = 0
    width: int = Field(32, ge=2)
    heads: int = Field(2, ge=1)
    blocks: int = Field(2, ge=1)
    embed_dim: int = Field(32, ge=2)
    mlp_hidden: int = Field(64, ge=1)
    image_size: int = Field(16, ge=1)
    patch_size: int = Field(4, ge=1)
    label_length: int = Field(16, ge=1)
    visual_prompts: int = Field(16, ge=1)
    text_prompts: int = Field(16, ge=1)
    text_prompt_mode: Literal["learnable", "template", "none"] = "learnable"

    # Synthetic data
    classes: int = Field(5, ge=1)
    videos_per_class: int = Field(40, ge=1)
    eval_videos_per_class: int = Field(20, ge=0)
    pool_size: int = Field(16, ge=1)
    segments: int = Field(8, ge=1)
    frame_mode: Literal["embed", "pixel"] = "embed"
    margin: float = Field(0.2, gt=0)
    noise: float = Field(0.0, ge=0, lt=1)
    distractor_mode: Literal["uniform", "other_class"] = "uniform"
    text_alignment: float = Field(0.2, ge=0, le=1)
    shared_alignment: float = Field(0.6, ge=0, lt=1)

    # Training
    learning_rate: float = Field(4e-4, gt=0)
    weight_decay: float = Field(1e-3, ge=0)
    tau_loss: float = Field(0.07, gt=0)
    tau_fuse: float = Field(0.2, gt=0)
    batch_size: int = Field(8, ge=1)
    epochs: int = Field(200, ge=0)
    shots: Optional[int] = Field(None, ge=1)
    vote_reduction: Literal["sum", "count"] = "sum"
    codebook_refresh: Literal["step", "epoch"] = "step"

    # Evaluation
    aggregation: Literal["frame_only", "discrete_only", "fused"] = "fused"
    fusion: Literal["confidence", "pool"] = "confidence"
    top_k: Optional[int] = Field(None, ge=1)
    split: Literal["all", "base", "novel"] = "all"
    split_fraction: float = Field(0.5, gt=0, lt=1)
    split_file: Optional[str] = None
    eval_workers: int = Field(1, ge=1)
    video_ids: Optional[str] = None
    ablation_seeds: str = "1,2,3,4,5"
    ablation_top_k: str = ""

    @model_validator(mode="after")
    def _check_geometry(self):
        if self.pool_size < self.segments:
            raise ValueError(f"pool_size {self.pool_size} is smaller than segments {self.segments}")
        if self.top_k is not None and self.top_k > self.segments:
            raise ValueError(f"top_k {self.top_k} exceeds segments {self.segments}")
        return self

    # ============== Derived views ==============

    def encoder_config(self) -> EncoderConfig:
        return EncoderConfig(
            width=self.width, heads=self.heads, blocks=self.blocks, embed_dim=self.embed_dim,
            mlp_hidden=self.mlp_hidden, image_size=self.image_size, patch_size=self.patch_size,
            label_length=self.label_length, visual_prompts=self.visual_prompts, text_prompts=self.text_prompts,
        )

    def synthetic_spec(self) -> SyntheticSpec:
        return SyntheticSpec(
            classes=self.classes, videos_per_class=self.videos_per_class,
            eval_videos_per_class=self.eval_videos_per_class, pool_size=self.pool_size, segments=self.segments,
            frame_mode=self.frame_mode, embed_dim=self.embed_dim, image_size=self.image_size,
            patch_size=self.patch_size, margin=self.margin, noise=self.noise,
            distractor_mode=self.distractor_mode, text_alignment=self.text_alignment,
            shared_alignment=self.shared_alignment, seed=self.seed,
        )

    def train_config(self) -> TrainConfig:
        return TrainConfig(
            learning_rate=self.learning_rate, weight_decay=self.weight_decay, tau_loss=self.tau_loss,
            tau_fuse=self.tau_fuse, batch_size=self.batch_size, epochs=self.epochs, seed=self.seed,
            segments=self.segments, top_k=self.top_k, aggregation=self.aggregation, fusion=self.fusion,
            shots=self.shots, vote_reduction=self.vote_reduction, codebook_refresh=self.codebook_refresh,
        )

    # ============== Echo ==============

    def to_lines(self) -> List[str]:
        values = self.model_dump()
        return [f"{key} = {'none' if values[key] is None else values[key]}" for key in sorted(values)]

    def write_effective(self, directory: Union[str, Path]) -> Path:
        path = Path(directory) / "effective_config.txt"
        path.parent.mkdir(parents=True, exist_ok=True)
        path.write_text("\n".join(self.to_lines()) + "\n", encoding="utf-8")
        return path


# ============== Layering ==============

def format_validation_errors(error: PydanticValidationError) -> str:
    parts = []
    for e in error.errors():
        field = e["loc"][-1] if e.get("loc") else ""
        parts.append(f"{field}: {e['msg']}" if field else e["msg"])
    return "; ".join(parts)


def parse_config_file(path: Union[str, Path]) -> Dict[str, Any]:
    """
    Flat `key = value` lines; a `#` at line start or after whitespace starts a
    comment, so `a#b` stays part of a value. Blank lines are skipped.
    Values stay strings; pydantic coerces them.
    """
    path = Path(path)
    if not path.is_file():
        raise ConfigError(f"config file not found: {path}", path=str(path))
    values: Dict[str, Any] = {}
    for n, raw in enumerate(path.read_text(encoding="utf-8").splitlines(), start=1):
        line = _COMMENT.split(raw, 1)[0].strip()
        if not line:
            continue
        if "=" not in line:
            raise ConfigError(f"{path}:{n}: expected 'key = value', got {raw!r}", line=n)
        key, value = (part.strip() for part in line.split("=", 1))
        key = key.replace("-", "_")
        values[key] = value
    return values


def build_run_config(config_file: Optional[Union[str, Path]] = None,
                     overrides: Optional[Dict[str, Any]] = None) -> RunConfig:
    """Defaults < config file < overrides (command-line flags)."""
    layered: Dict[str, Any] = {}
    if config_file:
        layered.update(parse_config_file(config_file))
    layered.update(overrides or {})
    unknown = sorted(set(layered) - set(RunConfig.model_fields))
    if unknown:
        raise ConfigError(f"unknown configuration keys: {', '.join(unknown)}", keys=unknown)
    layered = {key: _none_if_optional(key, value) for key, value in layered.items()}
    try:
        return RunConfig(**layered)
    except PydanticValidationError as e:
        raise ConfigError(format_validation_errors(e)) from e


def is_optional(key: str) -> bool:
    return type(None) in get_args(RunConfig.model_fields[key].annotation)


def _none_if_optional(key: str, value: Any) -> Any:
    # "none" / "null" / "" clear an optional key
    if isinstance(value, str) and value.strip().lower() in NONE_VALUES and is_optional(key):
        return None
    return value
