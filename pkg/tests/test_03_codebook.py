"""
Test Case 03: Text codebook and discretization
- Nearest-prototype quantization vs brute-force scan (random and mirrored ties)
- Masked vote scores and prototype selection vs exhaustive evaluation
- Codebook construction (overrides, duplicates)
- Scale invariance of assignments and rankings
- Inspect dump format
"""
import sys
import os
sys.path.insert(0, os.path.dirname(os.path.abspath(__file__)))

import math

import numpy as np

from utils import TestResult, check_close, check_raises, check_true, print_header, print_info
from config import ENCODER_SEED, QUANTIZE_INSTANCES, SCALE_VIDEOS, SEED, SMALL_ENCODER, VOTE_INSTANCES

from app.core import ops
from app.core.tensor import ComputationTape, Tensor
from app.exceptions import DegenerateInputError, DimensionError, ValidationError
from app.services.codebook import (
    Codebook,
    build_codebook,
    discretize_video,
    format_inspect_dump,
    masked_vote_scores,
    quantize,
    select_prototype,
    vote_counts,
)
from app.services.encoders import EncoderConfig, build_frozen_weights, init_text_prompts
from app.services.metrics import classify


def _unit(x: np.ndarray) -> np.ndarray:
    return x / np.linalg.norm(x, axis=-1, keepdims=True)


def _codebook(rows: np.ndarray) -> Codebook:
    return Codebook(rows=Tensor(rows), class_labels=[f"class {k}" for k in range(rows.shape[0])])


def _scan_nearest(x: np.ndarray, rows: np.ndarray) -> int:
    best, best_dist = 0, math.inf
    for k, row in enumerate(rows):
        dist = math.sqrt(sum((float(a) - float(b)) ** 2 for a, b in zip(row, x)))
        if dist < best_dist:
            best, best_dist = k, dist
    return best


def _scan_votes(s: np.ndarray, m: np.ndarray) -> int:
    best, best_score = 0, -math.inf
    for k in range(s.shape[1]):
        score = 0.0
        for t in range(s.shape[0]):
            score += float(m[t, k]) * float(s[t, k])
        if score > best_score:
            best, best_score = k, score
    return best


def run_codebook_tests() -> TestResult:
    """Run codebook and discretization test cases"""
    print_header("TEST 03: Codebook and Discretization")

    result = TestResult()
    rng = np.random.default_rng(SEED)

    # ===== Test 1: Quantization oracle, random instances =====
    print_info(f"Quantization oracle over {QUANTIZE_INSTANCES} instances...")
    mismatches = 0
    for _ in range(QUANTIZE_INSTANCES):
        d, k = int(rng.integers(1, 9)), int(rng.integers(1, 17))
        x = _unit(rng.standard_normal(d))
        rows = _unit(rng.standard_normal((k, d)))
        mismatches += quantize(x, _codebook(rows)) != _scan_nearest(x, rows)
    check_true(mismatches == 0, result, "quantize equals brute-force scan on random unit instances",
               f"{mismatches} mismatches")

    # ===== Test 2: Quantization ties by mirroring =====
    tie_errors = 0
    for _ in range(200):
        d, k = int(rng.integers(2, 9)), int(rng.integers(3, 17))
        # x has a zero coordinate j, so normalize(x ± g·e_j) sit at exactly the same angle from x
        j = int(rng.integers(0, d))
        x = rng.standard_normal(d)
        x[j] = 0.0
        x = _unit(x)
        rows = _unit(rng.standard_normal((k, d)))
        rows[rows @ x > 0.0] *= -1.0
        first, second = sorted(rng.choice(k, size=2, replace=False))
        bump = np.zeros(d)
        bump[j] = 0.5
        rows[first], rows[second] = _unit(x + bump), _unit(x - bump)
        got = quantize(x, _codebook(rows))
        tie_errors += got != _scan_nearest(x, rows) or got != first
    check_true(tie_errors == 0, result, "Mirrored ties resolve to the lowest index", f"{tie_errors} errors")
    check_raises(lambda: quantize(np.ones(3), _codebook(np.ones((2, 4)))), DimensionError, result,
                 "quantize width mismatch -> DimensionError")

    # ===== Test 3: Frame assignment is quantization =====
    agree, frames_seen = True, 0
    for _ in range(50):
        d, k = int(rng.integers(2, 9)), int(rng.integers(2, 9))
        rows = _unit(rng.standard_normal((k, d)))
        pairs = rng.integers(0, k, size=(6, 2))
        # frames on or within 1e-9 of the bisector between two prototypes
        frames = _unit(rows[pairs[:, 0]] + rows[pairs[:, 1]] + 1e-9 * rng.standard_normal((6, d)))
        frames[0] = _unit(rows[pairs[0, 0]] + rows[pairs[0, 1]])
        codebook = _codebook(rows)
        res = discretize_video(frames, codebook)
        agree &= all(int(res.assignments[t]) == quantize(frames[t], codebook) for t in range(len(frames)))
        frames_seen += len(frames)
    check_true(agree, result, f"discretize_video assigns each of {frames_seen} near-tie frames to quantize(x_t)")

    # ===== Test 4: Masked-vote oracle =====
    print_info(f"Vote oracle over {VOTE_INSTANCES} instances...")
    vote_errors = 0
    for _ in range(VOTE_INSTANCES):
        t, k = int(rng.integers(1, 9)), int(rng.integers(1, 9))
        s = rng.uniform(-1.0, 1.0, size=(t, k))
        m = np.zeros((t, k), dtype=np.int64)
        m[np.arange(t), rng.integers(0, k, size=t)] = 1
        vote_errors += select_prototype(masked_vote_scores(s, m)) != _scan_votes(s, m)
    check_true(vote_errors == 0, result, "k_max equals exhaustive masked-score evaluation",
               f"{vote_errors} mismatches")

    frames = rng.standard_normal((5, 4))
    prototypes = rng.standard_normal((3, 4))
    res = discretize_video(frames, _codebook(prototypes))
    s = res.similarity.data
    m = np.zeros((5, 3), dtype=np.int64)
    m[np.arange(5), np.argmax(s, axis=1)] = 1
    check_true(res.k_max == _scan_votes(s, m) and np.array_equal(res.mask, m), result,
               "discretize_video on T=5, K=3 matches the exhaustive vote")
    check_close(res.v.data, prototypes[res.k_max], result, "Discrete feature is the winning codebook row")
    check_close(res.confidence.data, s[:, res.k_max], result, "Confidence is the winner's similarity column")

    # ===== Test 5: Many weak votes beat one strong vote =====
    s = np.array([[0.5, 0.1]] * 4 + [[0.2, 0.9]])
    m = np.zeros((5, 2), dtype=np.int64)
    m[np.arange(5), np.argmax(s, axis=1)] = 1
    scores = masked_vote_scores(s, m).data
    check_close(scores, [2.0, 0.9], result, "Four 0.5 votes score 2.0 against one 0.9 vote")
    check_true(select_prototype(scores) == 0, result, "Summed votes pick the four-frame prototype")

    s = np.array([[0.3, 0.0]] * 3 + [[0.0, 0.9]] * 2)
    m = np.zeros((5, 2), dtype=np.int64)
    m[np.arange(5), np.argmax(s, axis=1)] = 1
    check_true(select_prototype(masked_vote_scores(s, m)) == 1 and select_prototype(vote_counts(m)) == 0, result,
               "sum and count reductions can disagree (similarity vs majority)")
    check_true(select_prototype(np.array([1.0, 1.0, 0.5])) == 0, result, "Vote ties go to the lowest index")

    s = np.array([[0.4, 0.2, 0.1]])
    m = np.array([[1, 0, 0]])
    check_true(masked_vote_scores(s, m).data[1] == 0.0 and masked_vote_scores(s, m).data[2] == 0.0, result,
               "Unvoted prototypes score exactly 0")
    check_raises(lambda: masked_vote_scores(np.zeros((2, 3)), np.zeros((3, 2))), DimensionError, result,
                 "S / M shape mismatch -> DimensionError")
    check_raises(lambda: discretize_video(np.zeros((0, 4)), _codebook(prototypes)), DegenerateInputError, result,
                 "Zero frames -> DegenerateInputError")
    check_raises(lambda: discretize_video(frames, _codebook(prototypes), "median"), ValidationError, result,
                 "Unknown vote reduction -> ValidationError")

    # ===== Test 6: Scale invariance =====
    print_info(f"Scale invariance over {SCALE_VIDEOS} videos...")
    changed = 0
    for _ in range(SCALE_VIDEOS):
        cb = _codebook(rng.standard_normal((5, 8)))
        video = rng.standard_normal((8, 8))
        base = discretize_video(video, cb)
        base_rank = classify(np.mean(video, axis=0), cb)
        for lam in (0.1, 3.0, 100.0):
            scaled = discretize_video(video * lam, cb)
            same = np.array_equal(base.assignments, scaled.assignments) and base.k_max == scaled.k_max
            same = same and classify(np.mean(video * lam, axis=0), cb) == base_rank
            changed += not same
    check_true(changed == 0, result, "Rescaling frames changes no assignment, k_max or ranking",
               f"{changed} changed")

    # ===== Test 7: Codebook construction =====
    config = EncoderConfig(**SMALL_ENCODER)
    weights = build_frozen_weights(config, ENCODER_SEED)
    prompts = init_text_prompts(config, np.random.default_rng(5))
    labels = ["run", "jump", "swim"]
    codebook = build_codebook(labels, prompts, weights)
    check_true(codebook.size == 3 and codebook.dim == config.embed_dim, result, "One unit row per class")
    check_close(np.linalg.norm(codebook.matrix, axis=1), np.ones(3), result, "Codebook rows are unit norm",
                atol=1e-12)

    overridden = build_codebook(labels, prompts, weights, {"jump": "leap over a bar", "nope": "ignored"})
    row_changed = [not np.array_equal(codebook.matrix[k], overridden.matrix[k]) for k in range(3)]
    check_true(row_changed == [False, True, False], result, "A description override changes only its row",
               f"{row_changed}")
    check_true(overridden.text_for(1) == "leap over a bar" and "nope" not in overridden.overrides, result,
               "Unknown override keys are dropped")
    check_raises(lambda: build_codebook(["run", "run"], prompts, weights), ValidationError, result,
                 "Duplicate labels -> ValidationError")
    check_raises(lambda: build_codebook([], prompts, weights), ValidationError, result,
                 "Empty label list -> ValidationError")
    rebuilt = build_codebook(labels, prompts, weights)
    check_true(np.array_equal(rebuilt.matrix, codebook.matrix), result, "Rebuilding the codebook is bit-stable")
    gaps = [np.linalg.norm(codebook.matrix[i] - codebook.matrix[j]) for i in range(3) for j in range(i + 1, 3)]
    check_true(min(gaps) > 1e-6, result, "Distinct labels give distinct prototypes", f"min gap {min(gaps):.3e}")

    # ===== Test 8: Gradients reach text prompts through v and the confidence column =====
    prompts.tensor.zero_grad()
    video = rng.standard_normal((4, config.embed_dim))
    with ComputationTape() as tape:
        cb = build_codebook(labels, prompts, weights)
        res = discretize_video(video, cb)
        loss = ops.add(ops.sum_all(res.v), ops.sum_all(res.confidence))
    tape.backward(loss)
    grad = prompts.tensor.grad
    check_true(grad is not None and float(np.max(np.abs(grad))) > 0.0, result,
               "Text prompts receive gradient through the discrete path")

    # ===== Test 9: Inspect dump =====
    res = discretize_video(video, codebook)
    weights_t = np.full(4, 0.25)
    lines = format_inspect_dump(res, weights_t, codebook, true_label=res.k_max, frame_indices=[1, 3, 5, 7])
    first = lines[0].split(", ")
    check_true(len(lines) == 5 and first[0] == "1" and first[1] in labels and first[3] == "0.250000", result,
               "Inspect dump: one line per frame, 6-decimal floats", f"{lines[0]}")
    check_true(lines[-1] == f"{res.k_max}, {labels[res.k_max]}, correct:true", result,
               "Inspect trailer: k_max, label, correctness", f"{lines[-1]}")
    wrong = format_inspect_dump(res, weights_t, codebook, true_label=(res.k_max + 1) % 3)
    check_true(wrong[-1].endswith("correct:false"), result, "Inspect trailer flags wrong predictions")

    # ===== Test 10: Classification follows a class permutation =====
    mismatched = 0
    for _ in range(100):
        rows = _unit(rng.standard_normal((6, 5)))
        perm = rng.permutation(6)
        v = rng.standard_normal(5)
        original = classify(v, _codebook(rows))
        permuted = classify(v, _codebook(rows[perm]))
        mismatched += [int(perm[j]) for j in permuted] != original
    check_true(mismatched == 0, result, "Permuting the codebook permutes the ranking", f"{mismatched} of 100")

    return result


def test_codebook_suite():
    assert run_codebook_tests().failed == 0


if __name__ == "__main__":
    result = run_codebook_tests()
    result.summary()
    sys.exit(0 if result.failed == 0 else 1)
