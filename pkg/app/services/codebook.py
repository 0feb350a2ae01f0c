"""
Text-derived codebook and video-to-text discretization.

Each frame is hard-assigned to its most similar class prototype, the assignments
vote for a single video prototype, and that prototype's row becomes the discrete
video feature. Indices are treated as constants; gradients reach the text prompts
through the gathered row and through the similarity column of the winner.
"""
import logging
from collections import Counter
from dataclasses import dataclass, field
from typing import Dict, List, Literal, Optional, Sequence, Union

import numpy as np

from app.core import ops
from app.core.tensor import Tensor, as_tensor
from app.exceptions import DegenerateInputError, DimensionError, ValidationError
from app.services.encoders import (
    FrozenEncoderWeights,
    TextPromptTokens,
    encode_label,
    tokenize,
)

logger = logging.getLogger(__name__)

VoteReduction = Literal["sum", "count"]


# ============== Domain types ==============

@dataclass
class Codebook:
    """One prototype row per class. `rows` may carry a graph back to the text prompts."""

    rows: Tensor
    class_labels: List[str]
    overrides: Dict[str, str] = field(default_factory=dict)

    @property
    def size(self) -> int:
        return self.rows.shape[0]

    @property
    def dim(self) -> int:
        return self.rows.shape[1]

    @property
    def matrix(self) -> np.ndarray:
        return self.rows.data

    def text_for(self, index: int) -> str:
        label = self.class_labels[index]
        return self.overrides.get(label, label)


@dataclass
class DiscretizationResult:
    similarity: Tensor          # S, T×K
    assignments: np.ndarray     # k̂_t
    mask: np.ndarray            # M, T×K one-hot rows
    vote_scores: np.ndarray     # K
    k_max: int
    v: Tensor                   # C[k_max]
    confidence: Tensor          # S[:, k_max]

    @property
    def frames(self) -> int:
        return self.similarity.shape[0]


# ============== Construction ==============

def build_codebook(labels: Sequence[str], text_prompts: TextPromptTokens, weights: FrozenEncoderWeights,
                   overrides: Optional[Dict[str, str]] = None) -> Codebook:
    """
    Encode every class label (or its description override) with the current text prompts.

    Called inside a tape, the rows stay differentiable w.r.t. learnable text prompts.
    """
    labels = list(labels)
    if not labels:
        raise ValidationError("build_codebook: no class labels")
    duplicates = sorted(label for label, n in Counter(labels).items() if n > 1)
    if duplicates:
        raise ValidationError(f"build_codebook: duplicate labels {duplicates}", duplicates=duplicates)

    overrides = dict(overrides or {})
    unknown = sorted(set(overrides) - set(labels))
    if unknown:
        logger.warning(f"Ignoring description overrides for unknown labels: {unknown}")
        overrides = {k: v for k, v in overrides.items() if k in labels}

    length = weights.config.label_length
    rows = [
        encode_label(tokenize(overrides.get(label, label), length), text_prompts, weights)
        for label in labels
    ]
    return Codebook(rows=ops.stack_rows(rows), class_labels=labels, overrides=overrides)


# ============== Assignment ==============

def nearest_prototypes(similarity: Union[Tensor, np.ndarray]) -> np.ndarray:
    """Per-row argmax of a T×K similarity block, ties to the lowest index."""
    return np.argmax(as_tensor(similarity).data, axis=1)


def quantize(x: Union[Tensor, np.ndarray], codebook: Codebook) -> int:
    """
    argmax_k cos(x, c_k) with ties to the lowest index.

    The rows are unit norm, so for a unit x this is also argmin_k ‖x − c_k‖. Goes
    through the same similarity and argmax as `discretize_video`, so a frame
    quantizes to exactly the prototype it is assigned there.
    """
    if codebook.size == 0:
        raise ValidationError("quantize: empty codebook")
    vector = as_tensor(x).data
    if vector.shape != (codebook.dim,):
        raise DimensionError(f"quantize: vector {vector.shape} vs codebook width {codebook.dim}")
    similarity = ops.cosine_matrix(vector[None, :], codebook.matrix)
    return int(nearest_prototypes(similarity)[0])


def masked_vote_scores(similarity: Union[Tensor, np.ndarray], mask: np.ndarray) -> Tensor:
    """score_k = Σ_t M[t,k]·S[t,k]; prototypes nobody voted for score exactly 0."""
    s = as_tensor(similarity).data
    m = np.asarray(mask, dtype=np.float64)
    if s.shape != m.shape or s.ndim != 2:
        raise DimensionError(f"masked_vote_scores: S {s.shape} vs M {m.shape}")
    return Tensor(np.sum(m * s, axis=0))


def vote_counts(mask: np.ndarray) -> Tensor:
    """Pure majority: number of frames assigned to each prototype."""
    return Tensor(np.sum(np.asarray(mask, dtype=np.float64), axis=0))


def select_prototype(scores: Union[Tensor, np.ndarray]) -> int:
    return int(np.argmax(as_tensor(scores).data))


def discretize_video(frames: Union[Tensor, np.ndarray], codebook: Codebook,
                     vote_reduction: VoteReduction = "sum") -> DiscretizationResult:
    frames = as_tensor(frames)
    if frames.ndim != 2 or frames.shape[0] == 0:
        raise DegenerateInputError(f"discretize_video: need at least one frame, got shape {frames.shape}")
    if frames.shape[1] != codebook.dim:
        raise DimensionError(f"discretize_video: frame width {frames.shape[1]} vs codebook width {codebook.dim}")

    similarity = ops.cosine_matrix(frames, codebook.rows)
    assignments = nearest_prototypes(similarity)
    mask = np.zeros(similarity.shape, dtype=np.int64)
    mask[np.arange(mask.shape[0]), assignments] = 1

    if vote_reduction == "sum":
        scores = masked_vote_scores(similarity, mask)
    elif vote_reduction == "count":
        scores = vote_counts(mask)
    else:
        raise ValidationError(f"unknown vote reduction {vote_reduction!r}")
    k_max = select_prototype(scores)

    return DiscretizationResult(
        similarity=similarity,
        assignments=assignments,
        mask=mask,
        vote_scores=scores.data,
        k_max=k_max,
        v=ops.gather_row(codebook.rows, k_max),
        confidence=ops.gather_row(ops.transpose(similarity), k_max),
    )


# ============== Inspect dump ==============

def format_inspect_dump(result: DiscretizationResult, frame_weights: np.ndarray, codebook: Codebook,
                        true_label: int, frame_indices: Optional[Sequence[int]] = None,
                        predicted: Optional[int] = None) -> List[str]:
    """
    One line per sampled frame plus a trailer:

        frame_index, assigned_class_label, assigned_similarity, confidence_weight
        k_max, video_label, correct:true|false
    """
    indices = list(range(result.frames)) if frame_indices is None else list(frame_indices)
    lines = []
    for t, k in enumerate(result.assignments):
        sim = result.similarity.data[t, k]
        lines.append(f"{indices[t]}, {codebook.class_labels[k]}, {sim:.6f}, {frame_weights[t]:.6f}")
    # correctness follows the final ranking when given, else the voted prototype
    winner = result.k_max if predicted is None else predicted
    correct = "true" if winner == true_label else "false"
    lines.append(f"{result.k_max}, {codebook.class_labels[true_label]}, correct:{correct}")
    return lines
