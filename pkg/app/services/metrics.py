"""
Recognition metrics and evaluation protocols.
"""
import json
import logging
from concurrent.futures import ThreadPoolExecutor
from dataclasses import asdict, dataclass, field
from typing import Dict, List, Optional, Sequence, Tuple, Union

import numpy as np

from app.core.tensor import Tensor, as_tensor
from app.exceptions import DimensionError, DomainError, ValidationError
from app.services.codebook import Codebook
from app.services.dataset import ClassSplit, VideoDataset, VideoSample
from app.services.training import TrainConfig, TrainState, VideoForward, forward_video
from app.utils.helpers import format_number, format_table

logger = logging.getLogger(__name__)


# ============== Report ==============

@dataclass
class EvalReport:
    top1: float
    top5: float
    per_class: List[Optional[float]]
    confusion: List[List[int]]
    labels: List[str] = field(default_factory=list)
    base: Optional[float] = None
    novel: Optional[float] = None
    hm: Optional[float] = None
    videos: int = 0

    def to_dict(self) -> Dict:
        return asdict(self)

    def to_json(self) -> str:
        return json.dumps(self.to_dict(), indent=2, sort_keys=True)

    def to_table(self) -> str:
        summary = format_table(
            ["metric", "value"],
            [
                ["videos", self.videos],
                ["top1", format_number(self.top1)],
                ["top5", format_number(self.top5)],
                ["base", format_number(self.base)],
                ["novel", format_number(self.novel)],
                ["hm", format_number(self.hm)],
            ],
        )
        per_class = format_table(
            ["class", "label", "top1", "videos"],
            [
                [k, label, format_number(acc), sum(self.confusion[k])]
                for k, (label, acc) in enumerate(zip(self.labels, self.per_class))
            ],
        )
        return f"{summary}\n\n{per_class}"


# ============== Metrics ==============

def classify(embedding: Union[Tensor, np.ndarray], codebook: Codebook) -> List[int]:
    """Class indices by descending cosine; ties keep the lower index first."""
    if codebook.size == 0:
        raise ValidationError("classify: empty codebook")
    v = as_tensor(embedding).data
    if v.shape != (codebook.dim,):
        raise DimensionError(f"classify: embedding {v.shape} vs codebook width {codebook.dim}")
    rows = codebook.matrix
    sims = (rows @ v) / (np.linalg.norm(rows, axis=1) * np.linalg.norm(v))
    return [int(k) for k in np.argsort(-sims, kind="stable")]


def harmonic_mean(base_acc: float, novel_acc: float) -> float:
    if base_acc <= 0 or novel_acc <= 0:
        raise DomainError(f"harmonic_mean needs positive accuracies, got ({base_acc}, {novel_acc})")
    return 2.0 * base_acc * novel_acc / (base_acc + novel_acc)


# ============== Protocols ==============

def predict(videos: Sequence[VideoSample], state: TrainState, codebook: Codebook, config: TrainConfig,
            workers: int = 1) -> List[Tuple[VideoForward, List[int]]]:
    """Eval-mode forward + ranking per video, in input order. No tape is active here."""

    def run(video: VideoSample):
        out = forward_video(video, state, codebook, config, mode="eval")
        return out, classify(out.embedding, codebook)

    if workers <= 1:
        return [run(v) for v in videos]
    with ThreadPoolExecutor(max_workers=workers) as pool:
        return list(pool.map(run, videos))


def evaluate(dataset: VideoDataset, state: TrainState, codebook: Codebook, config: TrainConfig,
             workers: int = 1) -> EvalReport:
    """Top-1 / top-5 / per-class / confusion over every video in `dataset`."""
    if not dataset.videos:
        raise ValidationError("evaluate: empty split")
    if codebook.size != dataset.num_classes:
        raise ValidationError(f"codebook has {codebook.size} rows for {dataset.num_classes} classes")

    num_classes = dataset.num_classes
    confusion = np.zeros((num_classes, num_classes), dtype=np.int64)
    top5_hits = 0
    for video, (_, ranking) in zip(dataset.videos, predict(dataset.videos, state, codebook, config, workers)):
        confusion[video.label, ranking[0]] += 1
        top5_hits += int(video.label in ranking[:5])

    total = len(dataset.videos)
    counts = confusion.sum(axis=1)
    per_class = [
        float(100.0 * confusion[k, k] / counts[k]) if counts[k] else None for k in range(num_classes)
    ]
    return EvalReport(
        top1=float(100.0 * np.trace(confusion) / total),
        top5=float(100.0 * top5_hits / total),
        per_class=per_class,
        confusion=confusion.tolist(),
        labels=list(dataset.labels),
        videos=total,
    )


def evaluate_side(dataset: VideoDataset, state: TrainState, classes: Sequence[int], config: TrainConfig,
                  workers: int = 1) -> EvalReport:
    """Evaluate only `classes`, against a codebook of just those classes."""
    subset = dataset.restrict(classes)
    codebook = state.build_codebook(subset.labels)
    return evaluate(subset, state, codebook, config, workers)


def evaluate_base_novel(dataset: VideoDataset, state: TrainState, split: ClassSplit, config: TrainConfig,
                        workers: int = 1) -> EvalReport:
    """
    Each side against its own codebook; HM of the two top-1 values. Per-class and
    confusion entries are reported in the dataset's global class indices.
    """
    split.validate(dataset.num_classes)
    num_classes = dataset.num_classes
    confusion = np.zeros((num_classes, num_classes), dtype=np.int64)
    per_class: List[Optional[float]] = [None] * num_classes
    sides = {}
    top5_hits = 0
    for name in ("base", "novel"):
        classes = split.side(name)
        report = evaluate_side(dataset, state, classes, config, workers)
        sides[name] = report
        top5_hits += int(round(report.top5 * report.videos / 100.0))
        for i, k in enumerate(classes):
            per_class[k] = report.per_class[i]
            for j, kk in enumerate(classes):
                confusion[k, kk] = report.confusion[i][j]

    total = sides["base"].videos + sides["novel"].videos
    base, novel = sides["base"].top1, sides["novel"].top1
    hm = harmonic_mean(base, novel) if base > 0 and novel > 0 else 0.0
    logger.info(f"base={base:.2f} novel={novel:.2f} hm={hm:.2f}")
    return EvalReport(
        top1=float(100.0 * np.trace(confusion) / total),
        top5=float(100.0 * top5_hits / total),
        per_class=per_class,
        confusion=confusion.tolist(),
        labels=list(dataset.labels),
        base=base,
        novel=novel,
        hm=hm,
        videos=total,
    )
