"""
Prompt and fusion training with the contrastive objective; encoders stay frozen.

One training step:

    with ComputationTape() as tape:
        codebook = build_codebook(...)        # from the current text prompts
        v̂_i = forward_video(sample_i, ...)   # encode → discretize → cross-attend → fuse
        loss = compute_loss(stack(v̂), codebook, targets, tau_loss)
    tape.backward(loss)
    adam_step(state, grads, config)
"""
import logging
import math
from dataclasses import dataclass, field
from pathlib import Path
from typing import Callable, Dict, List, Literal, Optional, Sequence, Tuple, Union

import numpy as np
from pydantic import BaseModel, ConfigDict, Field

from app.core import ops
from app.core.tensor import ComputationTape, Tensor
from app.exceptions import CheckpointError, TrainingDivergenceError, ValidationError
from app.services.codebook import Codebook, DiscretizationResult, build_codebook, discretize_video
from app.services.dataset import SampleMode, VideoDataset, VideoSample, few_shot_subset, sample_frames
from app.services.encoders import (
    EncoderConfig,
    FrozenEncoderWeights,
    TextPromptMode,
    TextPromptTokens,
    VisualPromptTokens,
    build_frozen_weights,
    check_prompt_shapes,
    encode_frames,
    init_text_prompts,
    init_visual_prompts,
)
from app.services.fusion import CrossAttentionParams, FusedVideoEmbedding, aggregate
from app.services.optimizer import AdamOptimizer
from app.utils.checkpoint import read_checkpoint, write_checkpoint
from app.utils.helpers import seed_stream

logger = logging.getLogger(__name__)


# ============== Configuration ==============

class TrainConfig(BaseModel):
    model_config = ConfigDict(extra="forbid")

    learning_rate: float = Field(4e-4, gt=0)
    weight_decay: float = Field(1e-3, ge=0)
    tau_loss: float = Field(0.07, gt=0)
    tau_fuse: float = Field(0.2, gt=0)
    batch_size: int = Field(8, ge=1)
    epochs: int = Field(200, ge=0)
    seed: int = 7
    segments: int = Field(8, ge=1)
    top_k: Optional[int] = Field(None, ge=1)
    aggregation: Literal["frame_only", "discrete_only", "fused"] = "fused"
    fusion: Literal["confidence", "pool"] = "confidence"
    shots: Optional[int] = Field(None, ge=1)
    vote_reduction: Literal["sum", "count"] = "sum"
    codebook_refresh: Literal["step", "epoch"] = "step"


# ============== State ==============

@dataclass
class TrainState:
    weights: FrozenEncoderWeights
    visual_prompts: VisualPromptTokens
    text_prompts: TextPromptTokens
    fusion: CrossAttentionParams
    labels: List[str]
    rng: np.random.Generator
    overrides: Dict[str, str] = field(default_factory=dict)
    optimizer: Optional[AdamOptimizer] = None

    @property
    def params(self) -> Dict[str, Tensor]:
        """Trainable registry. Frozen encoder tensors are never in here."""
        registry = {"visual_prompts": self.visual_prompts.tensor}
        if self.text_prompts.trainable:
            registry["text_prompts"] = self.text_prompts.tensor
        registry.update(self.fusion.named())
        return registry

    @property
    def step(self) -> int:
        return 0 if self.optimizer is None else self.optimizer.step_count

    def check_registry(self):
        frozen = {id(t) for t in self.weights.tensors.values()}
        leaked = [name for name, t in self.params.items() if id(t) in frozen]
        if leaked:
            raise ValidationError(f"frozen tensors registered as trainable: {leaked}")

    def zero_grad(self):
        for t in self.params.values():
            t.zero_grad()

    def build_codebook(self, labels: Optional[Sequence[str]] = None) -> Codebook:
        return build_codebook(labels or self.labels, self.text_prompts, self.weights, self.overrides)

    def trainable_arrays(self) -> Dict[str, np.ndarray]:
        return {name: t.data for name, t in self.params.items()}


def init_train_state(encoder_config: EncoderConfig, encoder_seed: int, labels: Sequence[str], config: TrainConfig,
                     text_prompt_mode: TextPromptMode = "learnable", overrides: Optional[Dict[str, str]] = None,
                     weights: Optional[FrozenEncoderWeights] = None) -> TrainState:
    weights = weights or build_frozen_weights(encoder_config, encoder_seed)
    state = TrainState(
        weights=weights,
        visual_prompts=init_visual_prompts(encoder_config, seed_stream(config.seed, "visual_prompts")),
        text_prompts=init_text_prompts(encoder_config, seed_stream(config.seed, "text_prompts"), text_prompt_mode),
        fusion=CrossAttentionParams.init(encoder_config.embed_dim, seed_stream(config.seed, "fusion")),
        labels=list(labels),
        rng=seed_stream(config.seed, "training"),
        overrides=dict(overrides or {}),
    )
    state.optimizer = AdamOptimizer(state.params, lr=config.learning_rate, weight_decay=config.weight_decay)
    state.check_registry()
    check_prompt_shapes(weights, state.visual_prompts, state.text_prompts)
    return state


# ============== Forward pass ==============

@dataclass
class VideoForward:
    embedding: Tensor
    discretization: DiscretizationResult
    fused: FusedVideoEmbedding
    frame_indices: List[int]


def forward_video(sample: VideoSample, state: TrainState, codebook: Codebook, config: TrainConfig,
                  mode: SampleMode = "eval", rng: Optional[np.random.Generator] = None) -> VideoForward:
    """
    Sample T frames, encode, discretize against `codebook`, then aggregate.

    `codebook` must have been built from the current text prompts.
    """
    frames, indices = sample_frames(sample, config.segments, mode, rng)
    features = encode_frames(frames, sample.mode, state.visual_prompts, state.weights)
    discretization = discretize_video(features, codebook, config.vote_reduction)
    fused = aggregate(
        config.aggregation, features, discretization, state.fusion,
        tau_fuse=config.tau_fuse, top_k=config.top_k, fusion=config.fusion,
    )
    return VideoForward(embedding=fused.embedding, discretization=discretization, fused=fused, frame_indices=indices)


def batch_similarity(batch_embeddings: Tensor, codebook: Codebook) -> Tensor:
    """sim[i, j] = cos(v̂_i, c_j) over every codebook class."""
    return ops.cosine_matrix(batch_embeddings, codebook.rows)


def compute_loss(batch_embeddings: Tensor, codebook: Codebook, targets: Sequence[int], tau_loss: float) -> Tensor:
    return ops.cross_entropy_contrastive(batch_similarity(batch_embeddings, codebook), targets, tau_loss)


def adam_step(state: TrainState, grads: Dict[str, np.ndarray], config: TrainConfig) -> TrainState:
    optimizer = state.optimizer
    optimizer.lr = config.learning_rate
    optimizer.weight_decay = config.weight_decay
    optimizer.step(grads)
    return state


# ============== Training loop ==============

@dataclass
class EpochMetrics:
    epoch: int
    loss: float
    train_top1: float

    def csv_line(self) -> str:
        return f"{self.epoch},{self.loss!r},{self.train_top1!r}"


def _check_loss(loss: Tensor, epoch: int, step: int):
    value = loss.item()
    if not math.isfinite(value):
        raise TrainingDivergenceError(
            f"loss became {value} at epoch {epoch}, step {step}", epoch=epoch, step=step, loss=str(value)
        )


def train(dataset: VideoDataset, config: TrainConfig, state: Optional[TrainState] = None,
          on_epoch: Optional[Callable[[EpochMetrics], None]] = None) -> Tuple[TrainState, List[EpochMetrics]]:
    """
    Train prompts and fusion parameters on `dataset` (already restricted to the
    training partition and class set).

    Returns the final state and one EpochMetrics per epoch. Deterministic under a fixed seed.
    """
    if not dataset.videos:
        raise ValidationError("train: empty dataset")
    if state is None:
        state = init_train_state(EncoderConfig(), 0, dataset.labels, config)
    if list(dataset.labels) != state.labels:
        raise ValidationError(f"dataset labels {dataset.labels} do not match the state's {state.labels}")
    missing = [dataset.labels[k] for k, n in enumerate(dataset.class_counts()) if n == 0]
    if missing:
        raise ValidationError(f"train: no videos for classes {missing}", classes=missing)
    if config.shots is not None:
        dataset = few_shot_subset(dataset, config.shots, config.seed)
        logger.info(f"Few-shot subset: {config.shots} videos per class, {len(dataset.videos)} total")

    frozen_hash = state.weights.fingerprint()
    videos = dataset.videos
    history: List[EpochMetrics] = []
    deferred = config.codebook_refresh == "epoch" and state.text_prompts.trainable

    for epoch in range(1, config.epochs + 1):
        order = state.rng.permutation(len(videos))
        if deferred:
            epoch_tape, epoch_codebook, leaf_codebook = _epoch_codebook(state)
            row_grads = np.zeros(leaf_codebook.rows.shape)
        total_loss, correct, steps = 0.0, 0, 0

        for start in range(0, len(videos), config.batch_size):
            batch = [videos[i] for i in order[start:start + config.batch_size]]
            targets = [v.label for v in batch]
            state.zero_grad()
            with ComputationTape() as tape:
                codebook = leaf_codebook if deferred else state.build_codebook()
                outputs = [forward_video(v, state, codebook, config, mode="train", rng=state.rng) for v in batch]
                sim = batch_similarity(ops.stack_rows([o.embedding for o in outputs]), codebook)
                loss = ops.cross_entropy_contrastive(sim, targets, config.tau_loss)
            _check_loss(loss, epoch, state.step + 1)
            tape.backward(loss)

            if deferred:
                if leaf_codebook.rows.grad is not None:
                    row_grads += leaf_codebook.rows.grad
                leaf_codebook.rows.zero_grad()
            grads = state.optimizer.collect_grads()
            adam_step(state, grads, config)
            state.weights.assert_frozen()

            total_loss += loss.item() * len(batch)
            correct += int(np.sum(np.argmax(sim.data, axis=1) == np.asarray(targets)))
            steps += 1

        if deferred:
            _push_codebook_gradient(state, epoch_tape, epoch_codebook, row_grads / steps, config)

        metrics = EpochMetrics(epoch=epoch, loss=total_loss / len(videos), train_top1=100.0 * correct / len(videos))
        history.append(metrics)
        logger.info(f"epoch {epoch}/{config.epochs} loss={metrics.loss:.4f} train_top1={metrics.train_top1:.1f}")
        if on_epoch is not None:
            on_epoch(metrics)

    if state.weights.fingerprint() != frozen_hash:
        raise ValidationError("frozen encoder weights changed during training")
    return state, history


def _epoch_codebook(state: TrainState) -> Tuple[ComputationTape, Codebook, Codebook]:
    """Encode the codebook once; steps see its rows as a gradient-collecting leaf."""
    with ComputationTape() as tape:
        codebook = state.build_codebook()
    leaf = Tensor(codebook.rows.data.copy(), requires_grad=True, name="codebook.rows")
    return tape, codebook, Codebook(rows=leaf, class_labels=codebook.class_labels, overrides=codebook.overrides)


def _push_codebook_gradient(state: TrainState, tape: ComputationTape, codebook: Codebook,
                            row_grad: np.ndarray, config: TrainConfig):
    state.text_prompts.tensor.zero_grad()
    tape.backward(codebook.rows, grad=row_grad)
    grads = state.optimizer.collect_grads(["text_prompts"])
    if grads:
        adam_step(state, grads, config)
    state.weights.assert_frozen()


# ============== Persistence ==============

def save_state(path: Union[str, Path], state: TrainState, config: TrainConfig,
               extra_meta: Optional[Dict] = None) -> Path:
    meta = {
        "encoder_config": state.weights.config.model_dump(),
        "encoder_seed": state.weights.seed,
        "labels": state.labels,
        "overrides": state.overrides,
        "text_prompt_mode": state.text_prompts.mode,
        "step": state.step,
        "train_config": config.model_dump(),
        "rng_state": state.rng.bit_generator.state,
    }
    meta.update(extra_meta or {})
    sections = {
        "frozen": state.weights.arrays(),
        "trainable": state.trainable_arrays(),
        "optimizer": state.optimizer.state_arrays(),
    }
    return write_checkpoint(path, meta, config.seed, sections)


def load_state(path: Union[str, Path]) -> Tuple[TrainState, TrainConfig, Dict]:
    meta, seed, sections = read_checkpoint(path)
    try:
        encoder_config = EncoderConfig(**meta["encoder_config"])
        config = TrainConfig(**meta["train_config"])
        labels = list(meta["labels"])
        mode = meta["text_prompt_mode"]
        encoder_seed = int(meta["encoder_seed"])
    except (KeyError, TypeError, ValueError) as e:
        raise CheckpointError(f"checkpoint metadata incomplete: {e}") from e

    frozen = sections.get("frozen")
    if frozen is None:
        raise CheckpointError("checkpoint has no frozen section")
    weights = FrozenEncoderWeights(
        config=encoder_config,
        seed=encoder_seed,
        tensors={name: Tensor(data, name=name) for name, data in frozen.items()},
    )
    state = init_train_state(encoder_config, encoder_seed, labels, config, mode, meta.get("overrides"), weights)
    trainable = sections.get("trainable", {})
    for name, tensor in state.params.items():
        if name not in trainable:
            raise CheckpointError(f"checkpoint is missing trainable tensor {name}", tensor=name)
        if trainable[name].shape != tensor.shape:
            raise CheckpointError(f"{name}: stored shape {trainable[name].shape} != {tensor.shape}", tensor=name)
        tensor.data[...] = trainable[name]
    state.optimizer.load_state_arrays(sections.get("optimizer", {}))
    if "rng_state" in meta:
        state.rng.bit_generator.state = meta["rng_state"]
    logger.info(f"Loaded checkpoint {path}: {len(labels)} classes, step {state.step}")
    return state, config, meta
