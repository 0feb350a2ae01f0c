"""
Test Case 06: Synthetic benchmark and sampling protocols
- Segment sampling (eval midpoints, train draws inside segments)
- Generator determinism, margin feasibility, distractors
- Few-shot subsets and base/novel splits
- On-disk layout round trip and malformed inputs
"""
import sys
import os
sys.path.insert(0, os.path.dirname(os.path.abspath(__file__)))

import json

import numpy as np

from utils import TestResult, check_close, check_raises, check_true, print_header, print_info, temp_dir
from config import ENCODER_SEED, SEED, SMALL_DATA, SMALL_ENCODER

from app.core.tensor import Tensor
from app.exceptions import DatasetError, ValidationError
from app.services.codebook import Codebook, build_codebook, quantize
from app.services.dataset import (
    ClassSplit,
    SyntheticSpec,
    VideoSample,
    few_shot_subset,
    generate,
    jitter_scale,
    load_dataset,
    load_split,
    max_pairwise_cosine,
    sample_frame_indices,
    sample_frames,
    save_dataset,
    save_split,
    segment_bounds,
    split_base_novel,
    text_aligned_anchors,
)
from app.services.encoders import EncoderConfig, TextPromptTokens, build_frozen_weights
from app.utils.helpers import seed_stream


def run_dataset_tests() -> TestResult:
    """Run dataset and sampling test cases"""
    print_header("TEST 06: Synthetic Data and Sampling")

    result = TestResult()
    rng = np.random.default_rng(SEED)
    weights = build_frozen_weights(EncoderConfig(**SMALL_ENCODER), ENCODER_SEED)

    # ===== Test 1: Eval sampling =====
    check_true(sample_frame_indices(8, 4, "eval") == [1, 3, 5, 7], result, "Pool 8, T=4 eval -> [1, 3, 5, 7]",
               f"{sample_frame_indices(8, 4, 'eval')}")
    check_true(sample_frame_indices(16, 8, "eval") == [1, 3, 5, 7, 9, 11, 13, 15], result,
               "Pool 16, T=8 eval midpoints")
    check_true(sample_frame_indices(8, 8, "eval") == list(range(8)), result, "Pool == T gives the identity")
    check_true(segment_bounds(10, 3) == [0, 3, 6, 10], result, "Uneven pools split with floor bounds")
    check_true(sample_frame_indices(10, 3, "eval") == [1, 4, 8], result, "Uneven pool midpoints")

    # ===== Test 2: Train sampling =====
    print_info("1000 train-mode draws...")
    bounds = segment_bounds(16, 8)
    inside, hits = True, np.zeros(16, dtype=np.int64)
    for _ in range(1000):
        idx = sample_frame_indices(16, 8, "train", rng)
        inside &= all(bounds[i] <= j < bounds[i + 1] for i, j in enumerate(idx))
        hits[idx] += 1
    check_true(inside and bool(np.all(hits > 0)), result, "Train draws stay in their segment and cover it")
    check_true(sample_frame_indices(8, 8, "train", rng) == list(range(8)), result,
               "Pool == T train sampling is the identity too")
    check_raises(lambda: sample_frame_indices(4, 8, "eval"), ValidationError, result,
                 "Pool smaller than T -> ValidationError")
    check_raises(lambda: sample_frame_indices(8, 4, "train"), ValidationError, result,
                 "Train sampling without an rng -> ValidationError")
    video = VideoSample(id="v", label=0, frames=np.arange(32.0).reshape(16, 2))
    before = video.__dict__.copy()
    frames, idx = sample_frames(video, 8, "train", np.random.default_rng(SEED))
    check_true(np.array_equal(frames, video.frames[idx]) and len(idx) == 8, result,
               "sample_frames returns the frames together with their pool indices")
    check_true(video.__dict__.keys() == before.keys()
               and all(video.__dict__[k] is before[k] for k in before), result,
               "sample_frames leaves the video untouched")

    # ===== Test 3: Generator =====
    spec = SyntheticSpec(**SMALL_DATA)
    data = generate(spec, weights)
    again = generate(spec, weights)
    check_true(len(data.videos) == 3 * (4 + 2) and data.class_counts() == [6, 6, 6], result,
               "Train and eval videos per class", f"{data.class_counts()}")
    check_true(all(np.array_equal(a.frames, b.frames) and a.id == b.id for a, b in zip(data.videos, again.videos)),
               result, "Generation is deterministic under a fixed seed")
    check_true(data.videos[0].frames.shape == (8, 8), result, "Each video holds pool_size frames")
    check_close(np.linalg.norm(data.videos[0].frames, axis=1), np.ones(8), result,
                "Embedding-mode frames are unit norm", atol=1e-12)
    other = generate(SyntheticSpec(**{**SMALL_DATA, "seed": SEED + 1}), weights)
    check_true(not np.array_equal(other.videos[0].frames, data.videos[0].frames), result,
               "A different seed gives different videos")
    larger = generate(SyntheticSpec(**{**SMALL_DATA, "videos_per_class": 6}), weights)
    check_true(np.array_equal(larger.find(data.videos[1].id).frames, data.videos[1].frames), result,
               "Per-video streams do not depend on how many videos are generated")

    # ===== Test 4: Margin feasibility =====
    check_close(jitter_scale(0.2, 0.6), 1.0, result, "sigma solves (1 - c_max)/(1 + sigma^2) = margin",
                atol=1e-12)
    check_raises(lambda: jitter_scale(0.5, 0.6), ValidationError, result, "Infeasible margin -> ValidationError")
    check_raises(lambda: generate(SyntheticSpec(**{**SMALL_DATA, "margin": 5.0}), weights), ValidationError,
                 result, "Generator rejects a margin the anchors cannot meet")
    anchors = np.eye(3)
    check_true(max_pairwise_cosine(anchors) == 0.0 and max_pairwise_cosine(anchors[:1]) == 0.0, result,
               "max_pairwise_cosine of orthogonal anchors is 0")

    # ===== Test 5: Anchor geometry =====
    labels = data.labels
    plain = text_aligned_anchors(labels, weights, 0.0, 0.6, np.random.default_rng(SEED))
    gram = plain @ plain.T
    check_close(np.diag(gram), np.ones(3), result, "Anchors are unit norm", atol=1e-12)
    check_close(gram[~np.eye(3, dtype=bool)], np.full(6, 0.36), result,
                "Without text alignment, anchors only share the common direction (cosine 0.6^2)", atol=1e-12)
    spec = SyntheticSpec(**SMALL_DATA)
    anchors = text_aligned_anchors(labels, weights, spec.text_alignment, spec.shared_alignment,
                                   seed_stream(spec.seed, "anchors"))
    template = build_codebook(labels, TextPromptTokens(mode="template"), weights).matrix
    shared_cosine = spec.shared_alignment * np.linalg.norm(template.mean(axis=0))
    check_close((anchors @ template.T).mean(axis=1), np.full(3, shared_cosine), result,
                "Averaged over prototypes, every anchor sits at the shared cosine", atol=1e-9)

    wide = generate(SyntheticSpec(**{**SMALL_DATA, "margin": 0.95 * (1.0 - max_pairwise_cosine(anchors))}), weights)
    oracle = Codebook(rows=Tensor(anchors), class_labels=labels)
    frames = [(frame, v.label) for v in wide.videos for frame in v.frames]
    hits = sum(quantize(frame, oracle) == label for frame, label in frames)
    check_true(hits >= 0.99 * len(frames), result, "Clean wide-margin frames quantize to their class anchor",
               f"{hits}/{len(frames)}")

    # ===== Test 6: Distractors =====
    noisy = generate(SyntheticSpec(**{**SMALL_DATA, "noise": 0.5, "pool_size": 40, "segments": 4}), weights)
    fraction = np.mean([len(v.distractors) / v.pool_size for v in noisy.videos])
    check_true(0.35 < fraction < 0.65, result, "noise=0.5 replaces about half the frames", f"{fraction:.3f}")
    clean = generate(SyntheticSpec(**{**SMALL_DATA, "pool_size": 40, "segments": 4}), weights)
    check_true(all(not v.distractors for v in clean.videos), result, "noise=0 injects no distractors")
    other_class = generate(SyntheticSpec(**{**SMALL_DATA, "noise": 0.5, "distractor_mode": "other_class"}),
                           weights)
    check_true(any(v.distractors for v in other_class.videos), result, "other_class distractors are recorded")

    pixel = generate(SyntheticSpec(**{**SMALL_DATA, "frame_mode": "pixel", "image_size": 4, "patch_size": 2}))
    check_true(pixel.videos[0].frames.shape == (8, 48) and pixel.videos[0].mode == "pixel", result,
               "Pixel mode stores flattened h*w*3 frames")

    # ===== Test 7: Few-shot subsets =====
    train_set = data.partition("train")
    subset = few_shot_subset(train_set, 2, SEED)
    check_true(subset.class_counts() == [2, 2, 2], result, "shots=2 keeps exactly 2 videos per class")
    check_true([v.id for v in subset.videos] == [v.id for v in few_shot_subset(train_set, 2, SEED).videos], result,
               "Few-shot selection is seeded")
    check_raises(lambda: few_shot_subset(train_set, 5, SEED), ValidationError, result,
                 "More shots than videos -> ValidationError")

    # ===== Test 8: Base/novel split =====
    labels = ["run", "jump", "climb", "swim"]
    split = split_base_novel(labels, 0.5, SEED)
    check_true(len(split.base) == 2 and len(split.novel) == 2 and not set(split.base) & set(split.novel), result,
               "Four classes split 2/2 and disjoint")
    check_true(split == split_base_novel(labels, 0.5, SEED), result, "Split is seeded")
    check_raises(lambda: split_base_novel(["run"], 0.5, SEED), ValidationError, result,
                 "One class cannot be split")
    check_raises(lambda: ClassSplit(base=[0, 1], novel=[1, 2]).validate(3), ValidationError, result,
                 "Overlapping sides fail validation")

    restricted = data.restrict([2, 0])
    check_true(restricted.labels == [data.labels[2], data.labels[0]]
               and {v.label for v in restricted.videos} == {0, 1}, result,
               "restrict renumbers classes in the given order")

    # ===== Test 9: On-disk round trip =====
    with temp_dir() as tmp:
        data.descriptions = {data.labels[0]: "a person running outdoors"}
        save_dataset(data, tmp)
        loaded = load_dataset(tmp)
        same = all(np.array_equal(a.frames, b.frames) and a.label == b.label and a.split == b.split
                   for a, b in zip(data.videos, loaded.videos))
        check_true(same and loaded.labels == data.labels and loaded.descriptions == data.descriptions, result,
                   "save_dataset / load_dataset preserves videos, labels and descriptions")
        with open(os.path.join(tmp, "videos.jsonl"), encoding="utf-8") as fh:
            first = json.loads(fh.readline())
        check_true(set(first) >= {"id", "class", "mode", "frames"}, result, "videos.jsonl record fields")

        split_path = save_split(os.path.join(tmp, "split.json"), split, labels)
        check_true(load_split(split_path, 4) == split, result, "split.json round trip")
        check_raises(lambda: load_split(split_path, 5), ValidationError, result,
                     "Split that misses a class -> ValidationError")

        with open(os.path.join(tmp, "videos.jsonl"), "a", encoding="utf-8") as fh:
            fh.write('{"id": "bad", "class": 0, "mode": "embed", "frames": [[1.0, 2.0], [1.0]]}\n')
        check_raises(lambda: load_dataset(tmp), DatasetError, result, "Ragged frames -> DatasetError")

    with temp_dir() as tmp:
        check_raises(lambda: load_dataset(tmp), DatasetError, result, "Missing dataset files -> DatasetError")
        save_dataset(data, tmp)
        with open(os.path.join(tmp, "videos.jsonl"), "a", encoding="utf-8") as fh:
            fh.write('{"id": "x", "class": 9, "mode": "embed", "frames": [[0.0]]}\n')
        check_raises(lambda: load_dataset(tmp), DatasetError, result, "Class index out of range -> DatasetError")

    check_raises(lambda: data.find("no-such-video"), DatasetError, result, "Unknown video id -> DatasetError")

    return result


def test_dataset_suite():
    assert run_dataset_tests().failed == 0


if __name__ == "__main__":
    result = run_dataset_tests()
    result.summary()
    sys.exit(0 if result.failed == 0 else 1)
