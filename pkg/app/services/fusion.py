"""
Confidence-aware fusion of the discrete video feature with frame features.

Frames are the queries; the discrete feature v and the frames themselves are the
keys and values. The residual keeps the output at T×d.
"""
import logging
import math
from dataclasses import dataclass
from typing import Dict, Literal, Optional

import numpy as np

from app.core import ops
from app.core.tensor import Tensor, as_tensor
from app.exceptions import DegenerateInputError, DimensionError, DomainError, ValidationError
from app.services.codebook import DiscretizationResult

logger = logging.getLogger(__name__)

AggregationMode = Literal["frame_only", "discrete_only", "fused"]
FusionMode = Literal["confidence", "pool"]

AGGREGATION_MODES = ("frame_only", "discrete_only", "fused")
FUSION_MODES = ("confidence", "pool")


# ============== Domain types ==============

@dataclass
class CrossAttentionParams:
    w_q: Tensor
    w_k: Tensor
    w_v: Tensor
    w_o: Tensor

    @classmethod
    def init(cls, dim: int, rng: np.random.Generator) -> "CrossAttentionParams":
        """q/k/v ~ N(0, 1/d); w_o starts at zero so fusion begins as the identity."""
        std = 1.0 / math.sqrt(dim)
        return cls(
            w_q=Tensor(rng.standard_normal((dim, dim)) * std, requires_grad=True, name="fusion.w_q"),
            w_k=Tensor(rng.standard_normal((dim, dim)) * std, requires_grad=True, name="fusion.w_k"),
            w_v=Tensor(rng.standard_normal((dim, dim)) * std, requires_grad=True, name="fusion.w_v"),
            w_o=Tensor(np.zeros((dim, dim)), requires_grad=True, name="fusion.w_o"),
        )

    @property
    def dim(self) -> int:
        return self.w_q.shape[0]

    def named(self) -> Dict[str, Tensor]:
        return {"fusion.w_q": self.w_q, "fusion.w_k": self.w_k, "fusion.w_v": self.w_v, "fusion.w_o": self.w_o}

    def validate(self):
        d = self.dim
        for name, t in self.named().items():
            if t.shape != (d, d):
                raise DimensionError(f"{name} has shape {t.shape}, expected ({d}, {d})", name=name)
            if not np.all(np.isfinite(t.data)):
                raise ValidationError(f"{name} contains non-finite values", name=name)


@dataclass
class FusedVideoEmbedding:
    embedding: Tensor       # v̂
    weights: np.ndarray     # per-frame, zero for frames outside top-k
    fused: Tensor           # f, T×d


# ============== Operations ==============

def cross_attend(v, frames, params: CrossAttentionParams) -> Tensor:
    """
    f = softmax(Q Kᵀ / √d) V W_o + X.

    Queries are the frames (Q = X W_q); keys and values come from the token block
    Z = [v; x_1 … x_T] (K = Z W_k, V = Z W_v), so every frame attends over the
    discrete feature and the other frames.
    """
    v, frames = as_tensor(v), as_tensor(frames)
    d = params.dim
    if v.shape != (d,):
        raise DimensionError(f"cross_attend: discrete feature {v.shape}, expected ({d},)")
    if frames.ndim != 2 or frames.shape[1] != d:
        raise DimensionError(f"cross_attend: frames {frames.shape}, expected (T, {d})")

    tokens = ops.concat([ops.reshape(v, (1, d)), frames], axis=0)
    queries = frames @ params.w_q
    keys = tokens @ params.w_k
    values = tokens @ params.w_v
    scores = ops.scale(queries @ ops.transpose(keys), 1.0 / math.sqrt(d))
    attention = ops.softmax(scores)  # T × (T + 1)
    return (attention @ values) @ params.w_o + frames


def confidence_fuse(fused, confidence, tau_fuse: float, top_k: Optional[int] = None) -> FusedVideoEmbedding:
    """v̂ = Σ_t softmax(confidence / τ)_t · f_t over the retained frames."""
    if not tau_fuse > 0:
        raise DomainError(f"confidence_fuse: tau_fuse must be > 0, got {tau_fuse}", tau=tau_fuse)
    fused, confidence = as_tensor(fused), as_tensor(confidence)
    if fused.ndim != 2 or fused.shape[0] == 0:
        raise DegenerateInputError(f"confidence_fuse: need a non-empty T×d block, got {fused.shape}")
    frames = fused.shape[0]
    if confidence.shape != (frames,):
        raise DimensionError(f"confidence_fuse: {confidence.shape} confidences for {frames} frames")

    weights_full = np.zeros(frames)
    if top_k is None:
        weights = ops.softmax(confidence, tau_fuse)
        embedding = ops.weighted_sum(weights, fused)
        weights_full[:] = weights.data
    else:
        if not 1 <= int(top_k) <= frames:
            raise ValidationError(f"confidence_fuse: top_k={top_k} outside [1, {frames}]", top_k=top_k)
        # stable sort keeps the earlier frame on ties; retained frames stay in temporal order
        ranked = np.argsort(-confidence.data, kind="stable")[: int(top_k)]
        retained = np.sort(ranked)
        weights = ops.softmax(ops.gather(confidence, retained), tau_fuse)
        embedding = ops.weighted_sum(weights, ops.gather(fused, retained))
        weights_full[retained] = weights.data
    return FusedVideoEmbedding(embedding=embedding, weights=weights_full, fused=fused)


def average_pool(frames) -> Tensor:
    frames = as_tensor(frames)
    if frames.ndim != 2 or frames.shape[0] == 0:
        raise DegenerateInputError(f"average_pool: need at least one frame, got shape {frames.shape}")
    return ops.mean(frames, axis=0)


def aggregate(mode: str, frames, discretization: DiscretizationResult, params: CrossAttentionParams,
              tau_fuse: float, top_k: Optional[int] = None, fusion: str = "confidence") -> FusedVideoEmbedding:
    """
    Video embedding for one of the aggregation modes.

    frame_only: fuse the raw frames x_t. discrete_only: the prototype row v.
    fused: fuse f = cross_attend(v, x). `fusion` picks confidence weighting or mean pooling.
    """
    if mode not in AGGREGATION_MODES:
        raise ValidationError(f"unknown aggregation mode {mode!r}", mode=mode)
    if fusion not in FUSION_MODES:
        raise ValidationError(f"unknown fusion mode {fusion!r}", fusion=fusion)
    frames = as_tensor(frames)
    count = frames.shape[0]

    if mode == "discrete_only":
        # weights: the frames that voted for the winning prototype
        voters = discretization.mask[:, discretization.k_max].astype(np.float64)
        if not voters.any():
            # all votes negative: an unvoted prototype at score 0 won
            voters = np.ones(count)
        return FusedVideoEmbedding(embedding=discretization.v, weights=voters / voters.sum(), fused=frames)

    features = frames if mode == "frame_only" else cross_attend(discretization.v, frames, params)
    if fusion == "pool":
        return FusedVideoEmbedding(
            embedding=average_pool(features), weights=np.full(count, 1.0 / count), fused=features
        )
    return confidence_fuse(features, discretization.confidence, tau_fuse, top_k)
