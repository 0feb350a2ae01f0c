"""
Synthetic video benchmark and the sampling / evaluation protocols.

Directory layout:
    classes.txt        one label per line, line number = class index
    descriptions.txt   optional, "label<TAB>description" overrides
    videos.jsonl       {"id", "class", "mode", "frames", "split", "distractors"} per line
"""
import json
import logging
import math
from dataclasses import dataclass, field, replace
from pathlib import Path
from typing import Dict, List, Literal, Optional, Sequence, Tuple, Union

import numpy as np
from pydantic import BaseModel, ConfigDict, Field, ValidationError as PydanticValidationError, model_validator

from app.exceptions import DatasetError, ValidationError
from app.services.encoders import (
    EncoderConfig,
    FrozenEncoderWeights,
    build_frozen_weights,
    encode_label,
    TextPromptTokens,
    tokenize,
)
from app.utils.helpers import seed_stream

logger = logging.getLogger(__name__)

FrameMode = Literal["embed", "pixel"]
SampleMode = Literal["train", "eval"]

ACTION_LABELS = [
    "run", "jump", "climb", "swim", "throw", "kick", "wave", "clap",
    "sit down", "stand up", "push up", "pull up", "dive", "ride bike", "brush hair", "drink",
    "eat", "laugh", "punch", "shoot ball", "walk", "dance", "fencing", "golf swing",
]


# ============== Specs and records ==============

class SyntheticSpec(BaseModel):
    model_config = ConfigDict(extra="forbid")

    classes: int = Field(5, ge=1)
    videos_per_class: int = Field(40, ge=1)
    eval_videos_per_class: int = Field(20, ge=0)
    pool_size: int = Field(16, ge=1)
    segments: int = Field(8, ge=1)
    frame_mode: FrameMode = "embed"
    embed_dim: int = Field(32, ge=2)
    image_size: int = Field(16, ge=1)
    patch_size: int = Field(4, ge=1)
    margin: float = Field(0.2, gt=0)
    noise: float = Field(0.0, ge=0, lt=1)
    distractor_mode: Literal["uniform", "other_class"] = "uniform"
    text_alignment: float = Field(0.2, ge=0, le=1)
    shared_alignment: float = Field(0.6, ge=0, lt=1)
    seed: int = 7

    @model_validator(mode="after")
    def _check_pool(self):
        if self.pool_size < self.segments:
            raise ValueError(f"pool_size {self.pool_size} is smaller than segments {self.segments}")
        if self.image_size % self.patch_size:
            raise ValueError(f"image_size {self.image_size} is not divisible by patch_size {self.patch_size}")
        return self

    @property
    def frame_dim(self) -> int:
        return self.embed_dim if self.frame_mode == "embed" else self.image_size * self.image_size * 3


class VideoRecord(BaseModel):
    """One line of videos.jsonl."""

    model_config = ConfigDict(extra="forbid", populate_by_name=True)

    id: str = Field(min_length=1)
    class_index: int = Field(alias="class", ge=0)
    mode: FrameMode
    frames: List[List[float]] = Field(min_length=1)
    split: Literal["train", "eval"] = "train"
    distractors: List[int] = Field(default_factory=list)


@dataclass
class VideoSample:
    id: str
    label: int
    frames: np.ndarray                  # pool × D
    mode: FrameMode = "embed"
    split: str = "train"
    distractors: List[int] = field(default_factory=list)

    @property
    def pool_size(self) -> int:
        return self.frames.shape[0]

    def to_record(self) -> Dict:
        return {
            "id": self.id,
            "class": self.label,
            "mode": self.mode,
            "frames": self.frames.tolist(),
            "split": self.split,
            "distractors": list(self.distractors),
        }


@dataclass
class ClassSplit:
    base: List[int]
    novel: List[int]

    def validate(self, num_classes: int):
        base, novel = set(self.base), set(self.novel)
        if base & novel:
            raise ValidationError(f"base and novel classes overlap: {sorted(base & novel)}")
        if base | novel != set(range(num_classes)):
            raise ValidationError(f"split does not cover classes 0..{num_classes - 1}")
        if not base or not novel:
            raise ValidationError("split has an empty side")

    def side(self, name: str) -> List[int]:
        if name == "base":
            return list(self.base)
        if name == "novel":
            return list(self.novel)
        raise ValidationError(f"unknown split side {name!r}")


@dataclass
class VideoDataset:
    labels: List[str]
    videos: List[VideoSample]
    descriptions: Dict[str, str] = field(default_factory=dict)

    @property
    def num_classes(self) -> int:
        return len(self.labels)

    def partition(self, split: str) -> "VideoDataset":
        return replace(self, videos=[v for v in self.videos if v.split == split])

    def restrict(self, classes: Sequence[int]) -> "VideoDataset":
        """Keep only `classes`, renumbered 0..len-1 in the given order."""
        remap = {old: new for new, old in enumerate(classes)}
        videos = [replace(v, label=remap[v.label]) for v in self.videos if v.label in remap]
        labels = [self.labels[c] for c in classes]
        descriptions = {k: d for k, d in self.descriptions.items() if k in labels}
        return VideoDataset(labels=labels, videos=videos, descriptions=descriptions)

    def class_counts(self) -> List[int]:
        counts = [0] * self.num_classes
        for v in self.videos:
            counts[v.label] += 1
        return counts

    def find(self, video_id: str) -> VideoSample:
        for v in self.videos:
            if v.id == video_id:
                return v
        raise DatasetError(f"unknown video id {video_id!r}", video_id=video_id)


# ============== Labels and anchors ==============

def class_labels(count: int) -> List[str]:
    return [ACTION_LABELS[k] if k < len(ACTION_LABELS) else f"action {k}" for k in range(count)]


def _unit_rows(matrix: np.ndarray) -> np.ndarray:
    return matrix / np.linalg.norm(matrix, axis=1, keepdims=True)


def _orthonormal_rows(count: int, dim: int, exclude: np.ndarray, rng: np.random.Generator) -> np.ndarray:
    """Random unit rows orthogonal to `exclude`, mutually orthogonal when dim allows it."""
    raw = rng.standard_normal((count, dim))
    raw -= np.outer(raw @ exclude, exclude)
    if count <= dim - 1:
        basis = np.linalg.qr(np.column_stack([exclude, raw.T]))[0]
        return basis[:, 1:count + 1].T
    return _unit_rows(raw)


def text_aligned_anchors(labels: Sequence[str], weights: FrozenEncoderWeights, text_alignment: float,
                         shared_alignment: float, rng: np.random.Generator) -> np.ndarray:
    """
    Class directions loosely tied to the frozen text encoder under the fixed template.

    Every anchor carries `shared_alignment` of the mean template prototype g, so class
    frames sit at a positive cosine to every prototype while uniform distractors do
    not. The remaining class part is `text_alignment` of the centered template
    prototype mixed with a random direction; both are orthogonal to g. A small
    `text_alignment` keeps the untrained model far from solving the task.
    """
    template = TextPromptTokens(mode="template")
    refs = np.stack([
        encode_label(tokenize(label, weights.config.label_length), template, weights).data for label in labels
    ])
    shared = refs.mean(axis=0)
    shared /= np.linalg.norm(shared)
    dim = refs.shape[1]

    random_part = _orthonormal_rows(len(labels), dim, shared, rng)
    if len(labels) >= 2:
        text_part = refs - refs.mean(axis=0, keepdims=True)
        text_part -= np.outer(text_part @ shared, shared)
        class_part = text_alignment * _unit_rows(text_part) + math.sqrt(1.0 - text_alignment ** 2) * random_part
    else:
        # a lone class has no centered text direction
        class_part = random_part
    class_part = _unit_rows(class_part)
    return shared_alignment * shared + math.sqrt(1.0 - shared_alignment ** 2) * class_part


def pixel_anchors(spec: SyntheticSpec, rng: np.random.Generator) -> np.ndarray:
    """Per-class colored patch patterns in [-1, 1], flattened h·w·3."""
    grid = spec.image_size // spec.patch_size
    anchors = []
    for _ in range(spec.classes):
        colors = rng.uniform(-1.0, 1.0, size=(grid, grid, 3))
        image = np.repeat(np.repeat(colors, spec.patch_size, axis=0), spec.patch_size, axis=1)
        anchors.append(image.reshape(-1))
    return np.stack(anchors)


def max_pairwise_cosine(anchors: np.ndarray) -> float:
    if anchors.shape[0] < 2:
        return 0.0
    unit = _unit_rows(anchors)
    cos = unit @ unit.T
    np.fill_diagonal(cos, -np.inf)
    return float(np.max(cos))


def jitter_scale(margin: float, c_max: float) -> float:
    """
    σ such that intra-class minus inter-class frame cosine equals `margin` in expectation:
    (1 − c_max) / (1 + σ²) = margin.
    """
    if margin > 1.0 - c_max:
        raise ValidationError(
            f"infeasible margin {margin}: anchors are as close as cosine {c_max:.4f}, "
            f"so the margin must be <= {1.0 - c_max:.4f}",
            margin=margin, max_cosine=c_max,
        )
    return math.sqrt(max((1.0 - c_max) / margin - 1.0, 0.0))


# ============== Generation ==============

def _frame(anchor: np.ndarray, sigma: float, mode: str, rng: np.random.Generator) -> np.ndarray:
    dim = anchor.shape[0]
    noise = rng.standard_normal(dim) / math.sqrt(dim)
    if mode == "embed":
        vec = anchor + sigma * noise
        return vec / np.linalg.norm(vec)
    return anchor + sigma * np.linalg.norm(anchor) * noise


def _distractor(spec: SyntheticSpec, label: int, anchors: np.ndarray, sigma: float,
                rng: np.random.Generator) -> np.ndarray:
    if spec.distractor_mode == "other_class" and spec.classes > 1:
        other = int(rng.integers(spec.classes - 1))
        other += other >= label
        return _frame(anchors[other], sigma, spec.frame_mode, rng)
    dim = anchors.shape[1]
    if spec.frame_mode == "embed":
        vec = rng.standard_normal(dim)
        return vec / np.linalg.norm(vec)
    return rng.uniform(-1.0, 1.0, size=dim)


def generate(spec: SyntheticSpec, weights: Optional[FrozenEncoderWeights] = None) -> VideoDataset:
    """
    Seeded synthetic benchmark. Every video draws from its own derived stream, so the
    output does not depend on generation order.
    """
    labels = class_labels(spec.classes)
    anchor_rng = seed_stream(spec.seed, "anchors")
    if spec.frame_mode == "embed":
        if weights is None:
            weights = build_frozen_weights(EncoderConfig(embed_dim=spec.embed_dim), 0)
        if weights.config.embed_dim != spec.embed_dim:
            raise ValidationError(
                f"encoder output width {weights.config.embed_dim} does not match embed_dim {spec.embed_dim}"
            )
        anchors = text_aligned_anchors(labels, weights, spec.text_alignment, spec.shared_alignment, anchor_rng)
    else:
        anchors = pixel_anchors(spec, anchor_rng)

    c_max = max_pairwise_cosine(anchors)
    sigma = jitter_scale(spec.margin, c_max)
    logger.info(f"Generating {spec.classes} classes: max anchor cosine {c_max:.4f}, jitter sigma {sigma:.4f}")

    videos: List[VideoSample] = []
    for split, count in (("train", spec.videos_per_class), ("eval", spec.eval_videos_per_class)):
        for label in range(spec.classes):
            for i in range(count):
                rng = seed_stream(spec.seed, f"video.{split}", label, i)
                frames, distractors = [], []
                for t in range(spec.pool_size):
                    if spec.noise > 0 and rng.random() < spec.noise:
                        distractors.append(t)
                        frames.append(_distractor(spec, label, anchors, sigma, rng))
                    else:
                        frames.append(_frame(anchors[label], sigma, spec.frame_mode, rng))
                videos.append(VideoSample(
                    id=f"{split}-c{label:03d}-{i:04d}",
                    label=label,
                    frames=np.stack(frames),
                    mode=spec.frame_mode,
                    split=split,
                    distractors=distractors,
                ))
    return VideoDataset(labels=labels, videos=videos)


# ============== Sampling protocols ==============

def segment_bounds(pool_size: int, segments: int) -> List[int]:
    return [(i * pool_size) // segments for i in range(segments + 1)]


def sample_frame_indices(pool_size: int, segments: int, mode: SampleMode,
                         rng: Optional[np.random.Generator] = None) -> List[int]:
    """
    One index per uniform contiguous segment: a random member in train mode,
    the segment midpoint in eval mode.
    """
    if pool_size < segments:
        raise ValidationError(f"pool of {pool_size} frames cannot fill {segments} segments")
    if segments < 1:
        raise ValidationError(f"segments must be >= 1, got {segments}")
    bounds = segment_bounds(pool_size, segments)
    if mode == "eval":
        return [lo + (hi - lo) // 2 for lo, hi in zip(bounds[:-1], bounds[1:])]
    if mode != "train":
        raise ValidationError(f"unknown sampling mode {mode!r}")
    if rng is None:
        raise ValidationError("train-mode sampling needs an rng")
    return [int(rng.integers(lo, hi)) for lo, hi in zip(bounds[:-1], bounds[1:])]


def sample_frames(video: VideoSample, segments: int, mode: SampleMode,
                  rng: Optional[np.random.Generator] = None) -> Tuple[np.ndarray, List[int]]:
    """(T × D frames, their pool indices). `video` is left untouched."""
    indices = sample_frame_indices(video.pool_size, segments, mode, rng)
    return video.frames[indices], indices


def few_shot_subset(dataset: VideoDataset, shots: int, seed: int) -> VideoDataset:
    """Exactly `shots` videos per class, chosen uniformly; original order is kept."""
    if shots < 1:
        raise ValidationError(f"shots must be >= 1, got {shots}")
    rng = seed_stream(seed, "few_shot")
    chosen = set()
    for label in range(dataset.num_classes):
        members = [i for i, v in enumerate(dataset.videos) if v.label == label]
        if len(members) < shots:
            raise ValidationError(
                f"class {dataset.labels[label]!r} has {len(members)} videos, {shots} shots requested",
                label=dataset.labels[label], available=len(members),
            )
        chosen.update(int(i) for i in rng.choice(members, size=shots, replace=False))
    return replace(dataset, videos=[v for i, v in enumerate(dataset.videos) if i in chosen])


def split_base_novel(labels: Sequence[str], fraction: float = 0.5, seed: int = 0) -> ClassSplit:
    count = len(labels)
    if count < 2:
        raise ValidationError(f"a base/novel split needs at least 2 classes, got {count}")
    n_base = int(round(count * fraction))
    if n_base <= 0 or n_base >= count:
        raise ValidationError(f"fraction {fraction} leaves an empty side for {count} classes", fraction=fraction)
    order = seed_stream(seed, "class_split").permutation(count)
    split = ClassSplit(base=sorted(int(i) for i in order[:n_base]), novel=sorted(int(i) for i in order[n_base:]))
    split.validate(count)
    return split


def load_split(path: Union[str, Path], num_classes: int) -> ClassSplit:
    try:
        payload = json.loads(Path(path).read_text(encoding="utf-8"))
        split = ClassSplit(base=[int(i) for i in payload["base"]], novel=[int(i) for i in payload["novel"]])
    except (OSError, ValueError, KeyError, TypeError) as e:
        raise DatasetError(f"cannot read split file {path}: {e}", path=str(path)) from e
    split.validate(num_classes)
    return split


def save_split(path: Union[str, Path], split: ClassSplit, labels: Sequence[str]) -> Path:
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    payload = {"base": split.base, "novel": split.novel, "labels": list(labels)}
    path.write_text(json.dumps(payload, indent=2) + "\n", encoding="utf-8")
    return path


# ============== On-disk layout ==============

def save_dataset(dataset: VideoDataset, directory: Union[str, Path]) -> Path:
    directory = Path(directory)
    directory.mkdir(parents=True, exist_ok=True)
    (directory / "classes.txt").write_text("".join(f"{label}\n" for label in dataset.labels), encoding="utf-8")
    if dataset.descriptions:
        lines = [f"{label}\t{text}\n" for label, text in dataset.descriptions.items()]
        (directory / "descriptions.txt").write_text("".join(lines), encoding="utf-8")
    with open(directory / "videos.jsonl", "w", encoding="utf-8") as fh:
        for video in dataset.videos:
            fh.write(json.dumps(video.to_record()) + "\n")
    logger.info(f"Wrote {len(dataset.videos)} videos over {dataset.num_classes} classes to {directory}")
    return directory


def load_descriptions(path: Union[str, Path]) -> Dict[str, str]:
    overrides = {}
    for n, line in enumerate(Path(path).read_text(encoding="utf-8").splitlines(), start=1):
        if not line.strip() or line.startswith("#"):
            continue
        if "\t" not in line:
            raise DatasetError(f"{path}:{n}: expected 'label<TAB>description'", line=n)
        label, text = line.split("\t", 1)
        overrides[label.strip()] = text.strip()
    return overrides


def load_dataset(directory: Union[str, Path], descriptions: Optional[Union[str, Path]] = None) -> VideoDataset:
    directory = Path(directory)
    classes_path = directory / "classes.txt"
    videos_path = directory / "videos.jsonl"
    if not classes_path.is_file() or not videos_path.is_file():
        raise DatasetError(f"{directory} is not a dataset directory (classes.txt / videos.jsonl missing)")

    labels = [line.strip() for line in classes_path.read_text(encoding="utf-8").splitlines() if line.strip()]
    if not labels:
        raise DatasetError(f"{classes_path} lists no classes")

    desc_path = Path(descriptions) if descriptions else directory / "descriptions.txt"
    overrides = load_descriptions(desc_path) if desc_path.is_file() else {}

    videos: List[VideoSample] = []
    width = None
    with open(videos_path, encoding="utf-8") as fh:
        for n, line in enumerate(fh, start=1):
            if not line.strip():
                continue
            try:
                record = VideoRecord.model_validate_json(line)
            except PydanticValidationError as e:
                raise DatasetError(f"{videos_path}:{n}: {e.errors()[0]['msg']}", line=n) from e
            if record.class_index >= len(labels):
                raise DatasetError(f"{videos_path}:{n}: class {record.class_index} >= {len(labels)}", line=n)
            try:
                frames = np.asarray(record.frames, dtype=np.float64)
            except ValueError as e:
                raise DatasetError(f"{videos_path}:{n}: frames have ragged widths", line=n) from e
            if frames.ndim != 2:
                raise DatasetError(f"{videos_path}:{n}: frames have ragged widths", line=n)
            width = frames.shape[1] if width is None else width
            if frames.shape[1] != width:
                raise DatasetError(f"{videos_path}:{n}: frame width {frames.shape[1]} != {width}", line=n)
            videos.append(VideoSample(
                id=record.id, label=record.class_index, frames=frames, mode=record.mode,
                split=record.split, distractors=list(record.distractors),
            ))
    logger.info(f"Loaded {len(videos)} videos, {len(labels)} classes from {directory}")
    return VideoDataset(labels=labels, videos=videos, descriptions=overrides)
