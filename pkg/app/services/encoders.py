"""
Frozen toy stand-ins for the image and text encoders, plus the learnable prompt
tokens that are the only trainable encoder-side parameters.

Row-vector convention throughout: a sequence is a [tokens × width] matrix and
projections are right-multiplied (`x @ W`).
"""
import logging
import math
from dataclasses import dataclass
from typing import Dict, List, Literal, Optional, Tuple

import numpy as np
from pydantic import BaseModel, ConfigDict, Field, model_validator

from app.core import ops
from app.core.tensor import Tensor
from app.exceptions import (
    DegenerateInputError,
    DimensionError,
    FrozenWeightError,
    ValidationError,
    VocabularyIndexError,
)
from app.utils.checkpoint import serialize_section
from app.utils.helpers import seed_stream, sha256_hex

logger = logging.getLogger(__name__)

PAD_ID = 0
VOCAB_SIZE = 256
TEMPLATE_PROMPT = "a photo of a"

TextPromptMode = Literal["learnable", "template", "none"]


# ============== Configuration ==============

class EncoderConfig(BaseModel):
    """Toy architecture shared by both encoders."""

    model_config = ConfigDict(extra="forbid", frozen=True)

    width: int = Field(32, ge=2)
    heads: int = Field(2, ge=1)
    blocks: int = Field(2, ge=1)
    embed_dim: int = Field(32, ge=2)
    mlp_hidden: int = Field(64, ge=1)
    image_size: int = Field(16, ge=1)
    patch_size: int = Field(4, ge=1)
    channels: int = Field(3, ge=1)
    label_length: int = Field(16, ge=1)
    vocab_size: int = Field(VOCAB_SIZE, ge=2, le=VOCAB_SIZE)
    visual_prompts: int = Field(16, ge=1)
    text_prompts: int = Field(16, ge=1)

    @model_validator(mode="after")
    def _check_geometry(self):
        if self.width % self.heads:
            raise ValueError(f"width {self.width} is not divisible by heads {self.heads}")
        if self.image_size % self.patch_size:
            raise ValueError(f"image_size {self.image_size} is not divisible by patch_size {self.patch_size}")
        return self

    @property
    def num_patches(self) -> int:
        return (self.image_size // self.patch_size) ** 2

    @property
    def patch_dim(self) -> int:
        return self.patch_size * self.patch_size * self.channels

    @property
    def pixel_dim(self) -> int:
        return self.image_size * self.image_size * self.channels

    @property
    def text_sequence_length(self) -> int:
        # CLS slot + prompt slots + label slots
        return 1 + self.text_prompts + self.label_length


# ============== Domain types ==============

@dataclass
class FrozenEncoderWeights:
    """Seeded frozen weights for both encoders. Never registered as trainable."""

    config: EncoderConfig
    seed: int
    tensors: Dict[str, Tensor]

    def __getitem__(self, name: str) -> Tensor:
        return self.tensors[name]

    def arrays(self) -> Dict[str, np.ndarray]:
        return {name: t.data for name, t in self.tensors.items()}

    def fingerprint(self) -> str:
        return sha256_hex(serialize_section(self.arrays()))

    def assert_frozen(self):
        for name, t in self.tensors.items():
            if t.requires_grad or t.grad is not None:
                raise FrozenWeightError(f"frozen tensor {name} picked up a gradient", tensor=name)


@dataclass
class VisualPromptTokens:
    tensor: Tensor

    @property
    def count(self) -> int:
        return self.tensor.shape[0]


@dataclass
class TextPromptTokens:
    """Prefix for the label tokens; trainable only in `learnable` mode."""

    mode: TextPromptMode
    tensor: Optional[Tensor] = None

    @property
    def trainable(self) -> bool:
        return self.mode == "learnable"

    def prefix(self, weights: FrozenEncoderWeights) -> Optional[Tensor]:
        if self.mode == "learnable":
            return self.tensor
        if self.mode == "template":
            limit = weights.config.text_prompts
            ids = list(TEMPLATE_PROMPT.encode("utf-8"))[:limit]
            return ops.gather(weights["text.token_embed"], ids)
        return None


@dataclass(frozen=True)
class LabelTokenSequence:
    ids: Tuple[int, ...]
    text: str = ""

    def __len__(self) -> int:
        return len(self.ids)


@dataclass
class FrameInput:
    """One frame, either raw pixels [h×w×c] or a precomputed embedding [d]."""

    pixels: Optional[np.ndarray] = None
    embedding: Optional[np.ndarray] = None

    @property
    def mode(self) -> str:
        return "pixel" if self.pixels is not None else "embed"

    @classmethod
    def from_vector(cls, vector: np.ndarray, mode: str, config: EncoderConfig) -> "FrameInput":
        if mode == "pixel":
            pixels = np.asarray(vector, dtype=np.float64).reshape(
                config.image_size, config.image_size, config.channels
            )
            return cls(pixels=pixels)
        return cls(embedding=np.asarray(vector, dtype=np.float64))


# ============== Construction ==============

def _gaussian(rng: np.random.Generator, shape: Tuple[int, ...], std: float) -> np.ndarray:
    return rng.standard_normal(shape) * std


def _block_weights(rng: np.random.Generator, prefix: str, config: EncoderConfig) -> Dict[str, np.ndarray]:
    w, hidden = config.width, config.mlp_hidden
    return {
        f"{prefix}.w_q": _gaussian(rng, (w, w), 1.0 / math.sqrt(w)),
        f"{prefix}.w_k": _gaussian(rng, (w, w), 1.0 / math.sqrt(w)),
        f"{prefix}.w_v": _gaussian(rng, (w, w), 1.0 / math.sqrt(w)),
        f"{prefix}.w_o": _gaussian(rng, (w, w), 1.0 / math.sqrt(w)),
        f"{prefix}.mlp_in": _gaussian(rng, (w, hidden), 1.0 / math.sqrt(w)),
        f"{prefix}.mlp_out": _gaussian(rng, (hidden, w), 1.0 / math.sqrt(hidden)),
    }


def build_frozen_weights(config: EncoderConfig, seed: int) -> FrozenEncoderWeights:
    """Bit-identical for a given (config, seed) pair."""
    rng = seed_stream(seed, "frozen_encoders")
    w = config.width
    arrays: Dict[str, np.ndarray] = {
        "image.patch_embed": _gaussian(rng, (config.patch_dim, w), 1.0 / math.sqrt(config.patch_dim)),
        "image.pos_embed": _gaussian(rng, (config.num_patches, w), 0.1),
    }
    for i in range(config.blocks):
        arrays.update(_block_weights(rng, f"image.block{i}", config))
    arrays["image.proj"] = _gaussian(rng, (w, config.embed_dim), 1.0 / math.sqrt(w))

    arrays["text.token_embed"] = _gaussian(rng, (config.vocab_size, w), 1.0)
    arrays["text.cls_embed"] = _gaussian(rng, (1, w), 1.0)
    arrays["text.pos_embed"] = _gaussian(rng, (config.text_sequence_length, w), 0.1)
    for i in range(config.blocks):
        arrays.update(_block_weights(rng, f"text.block{i}", config))
    arrays["text.proj"] = _gaussian(rng, (w, config.embed_dim), 1.0 / math.sqrt(w))

    tensors = {name: Tensor(data, requires_grad=False, name=name) for name, data in arrays.items()}
    logger.debug(f"Built frozen encoders: {len(tensors)} tensors, seed={seed}")
    return FrozenEncoderWeights(config=config, seed=seed, tensors=tensors)


def init_visual_prompts(config: EncoderConfig, rng: np.random.Generator) -> VisualPromptTokens:
    # Same standard-Gaussian initialization as the text prompts
    data = rng.standard_normal((config.visual_prompts, config.width))
    return VisualPromptTokens(Tensor(data, requires_grad=True, name="visual_prompts"))


def init_text_prompts(config: EncoderConfig, rng: np.random.Generator,
                      mode: TextPromptMode = "learnable") -> TextPromptTokens:
    data = rng.standard_normal((config.text_prompts, config.width))
    if mode != "learnable":
        return TextPromptTokens(mode=mode, tensor=None)
    return TextPromptTokens(mode=mode, tensor=Tensor(data, requires_grad=True, name="text_prompts"))


# ============== Tokenizer ==============

def tokenize(label_text: str, length: int = 16) -> LabelTokenSequence:
    """Lowercased UTF-8 bytes as ids, truncated/padded to `length`."""
    if not label_text or not label_text.strip():
        raise DegenerateInputError("tokenize: empty label text")
    ids = list(label_text.lower().encode("utf-8"))[:length]
    ids += [PAD_ID] * (length - len(ids))
    return LabelTokenSequence(ids=tuple(ids), text=label_text)


# ============== Transformer pieces ==============

def _attention(x: Tensor, weights: FrozenEncoderWeights, prefix: str) -> Tensor:
    config = weights.config
    head_dim = config.width // config.heads
    q = x @ weights[f"{prefix}.w_q"]
    k = x @ weights[f"{prefix}.w_k"]
    v = x @ weights[f"{prefix}.w_v"]
    heads = []
    for h in range(config.heads):
        lo, hi = h * head_dim, (h + 1) * head_dim
        qh, kh, vh = ops.slice_cols(q, lo, hi), ops.slice_cols(k, lo, hi), ops.slice_cols(v, lo, hi)
        scores = ops.scale(ops.matmul(qh, ops.transpose(kh)), 1.0 / math.sqrt(head_dim))
        heads.append(ops.matmul(ops.softmax(scores), vh))
    merged = heads[0] if len(heads) == 1 else ops.concat(heads, axis=1)
    return merged @ weights[f"{prefix}.w_o"]


def _block(x: Tensor, weights: FrozenEncoderWeights, prefix: str) -> Tensor:
    h = x + _attention(ops.layer_norm(x), weights, prefix)
    hidden = ops.gelu(ops.layer_norm(h) @ weights[f"{prefix}.mlp_in"])
    return h + hidden @ weights[f"{prefix}.mlp_out"]


def _project(pooled: Tensor, projection: Tensor) -> Tensor:
    row = ops.reshape(pooled, (1, pooled.shape[0]))
    out = row @ projection
    return ops.l2_normalize(ops.reshape(out, (projection.shape[1],)))


def patchify(pixels: np.ndarray, patch_size: int) -> np.ndarray:
    """[h×w×c] → [(h/p)(w/p) × p·p·c], row-major over patches."""
    h, w, c = pixels.shape
    grid_h, grid_w = h // patch_size, w // patch_size
    patches = pixels.reshape(grid_h, patch_size, grid_w, patch_size, c)
    return patches.transpose(0, 2, 1, 3, 4).reshape(grid_h * grid_w, patch_size * patch_size * c)


# ============== Encoders ==============

def encode_frame(frame: FrameInput, prompts: VisualPromptTokens, weights: FrozenEncoderWeights) -> Tensor:
    """
    Frame feature x_t, unit norm.

    Pixel mode: [u_1 … u_m, e_t] through the frozen blocks, mean-pooled, projected.
    Embedding mode: the given vector, L2-normalized (encoder bypassed).
    """
    config = weights.config
    if frame.pixels is None:
        vector = np.asarray(frame.embedding, dtype=np.float64)
        if vector.shape != (config.embed_dim,):
            raise DimensionError(
                f"encode_frame: embedding shape {vector.shape}, expected ({config.embed_dim},)",
                shape=vector.shape,
            )
        return ops.l2_normalize(Tensor(vector))

    pixels = np.asarray(frame.pixels, dtype=np.float64)
    expected = (config.image_size, config.image_size, config.channels)
    if pixels.shape != expected:
        raise DimensionError(f"encode_frame: image shape {pixels.shape}, expected {expected}", shape=pixels.shape)
    if pixels.shape[0] % config.patch_size or pixels.shape[1] % config.patch_size:
        raise DimensionError(f"encode_frame: image {pixels.shape} not divisible by patch {config.patch_size}")

    # Frozen patch embedding carries no gradient; computed as a constant
    patch_tokens = patchify(pixels, config.patch_size) @ weights["image.patch_embed"].data
    patch_tokens = patch_tokens + weights["image.pos_embed"].data
    x = ops.concat([prompts.tensor, Tensor(patch_tokens)], axis=0)
    for i in range(config.blocks):
        x = _block(x, weights, f"image.block{i}")
    pooled = ops.mean(ops.layer_norm(x), axis=0)
    return _project(pooled, weights["image.proj"])


def encode_frames(frames: np.ndarray, mode: str, prompts: VisualPromptTokens,
                  weights: FrozenEncoderWeights) -> Tensor:
    """Encode a [T × D] block of raw frame vectors into a [T × d] feature matrix."""
    frames = np.asarray(frames, dtype=np.float64)
    if frames.ndim != 2 or frames.shape[0] == 0:
        raise DegenerateInputError(f"encode_frames: need a non-empty [T × D] block, got {frames.shape}")
    if mode == "embed":
        if frames.shape[1] != weights.config.embed_dim:
            raise DimensionError(
                f"encode_frames: embedding width {frames.shape[1]}, expected {weights.config.embed_dim}",
                shape=frames.shape,
            )
        return ops.l2_normalize(Tensor(frames))
    encoded = [
        encode_frame(FrameInput.from_vector(row, "pixel", weights.config), prompts, weights) for row in frames
    ]
    return ops.stack_rows(encoded)


def encode_label(label: LabelTokenSequence, prompts: TextPromptTokens, weights: FrozenEncoderWeights) -> Tensor:
    """
    Class prototype c_k, unit norm: [CLS, w_1 … w_n, tokens(class_k)] through the
    frozen text blocks, CLS output projected.
    """
    config = weights.config
    bad = [i for i in label.ids if not 0 <= i < config.vocab_size]
    if bad:
        raise VocabularyIndexError(f"encode_label: token ids {bad} outside vocabulary of {config.vocab_size}")

    parts: List[Tensor] = [weights["text.cls_embed"]]
    prefix = prompts.prefix(weights)
    if prefix is not None:
        parts.append(prefix)
    parts.append(ops.gather(weights["text.token_embed"], label.ids))
    x = ops.concat(parts, axis=0)
    length = x.shape[0]
    if length > config.text_sequence_length:
        raise DimensionError(
            f"encode_label: sequence of {length} exceeds positional table {config.text_sequence_length}"
        )
    x = x + ops.gather(weights["text.pos_embed"], range(length))
    for i in range(config.blocks):
        x = _block(x, weights, f"text.block{i}")
    cls_out = ops.gather_row(ops.layer_norm(x), 0)
    return _project(cls_out, weights["text.proj"])


def check_prompt_shapes(weights: FrozenEncoderWeights, visual: VisualPromptTokens, text: TextPromptTokens):
    config = weights.config
    if visual.tensor.shape != (config.visual_prompts, config.width):
        raise ValidationError(f"visual prompts shape {visual.tensor.shape} does not match config")
    if text.trainable and text.tensor.shape != (config.text_prompts, config.width):
        raise ValidationError(f"text prompts shape {text.tensor.shape} does not match config")
