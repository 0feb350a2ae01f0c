#!/usr/bin/env python3
"""
Scenario: Ablation Directions

One checkpoint per seed, every variant evaluated on that same checkpoint:
1. Clean benchmark: fused >= frame_only >= discrete_only (mean top-1)
2. Half the frames replaced by distractors: confidence fusion >= average pooling
"""
import sys
import os
sys.path.insert(0, os.path.dirname(os.path.dirname(os.path.abspath(__file__))))

from typing import Dict, List

import numpy as np

from utils import Colors, TestResult, check_true, print_header, print_info
from config import ABLATION_EPOCHS, ABLATION_NOISE, ABLATION_SEEDS, ACCEPTANCE_DATA, ENCODER_SEED

from app.services.dataset import SyntheticSpec, generate
from app.services.encoders import EncoderConfig, build_frozen_weights
from app.services.metrics import evaluate
from app.services.training import TrainConfig, init_train_state, train


def sweep(noise: float, variants: Dict[str, Dict]) -> Dict[str, List[float]]:
    """Top-1 per seed for each variant"""
    encoder = EncoderConfig()
    weights = build_frozen_weights(encoder, ENCODER_SEED)
    data = generate(SyntheticSpec(**{**ACCEPTANCE_DATA, "noise": noise}), weights)
    train_set, eval_set = data.partition("train"), data.partition("eval")

    top1: Dict[str, List[float]] = {name: [] for name in variants}
    for seed in ABLATION_SEEDS:
        config = TrainConfig(epochs=ABLATION_EPOCHS, seed=seed)
        state = init_train_state(encoder, ENCODER_SEED, data.labels, config, weights=weights)
        state, _ = train(train_set, config, state)
        codebook = state.build_codebook(eval_set.labels)
        for name, update in variants.items():
            top1[name].append(evaluate(eval_set, state, codebook, config.model_copy(update=update)).top1)
        print_info(f"seed {seed}: " + ", ".join(f"{name}={values[-1]:.1f}" for name, values in top1.items()))
    return top1


def run_scenario():
    """Run the ablation direction scenario"""
    print(f"\n{Colors.BOLD}{Colors.CYAN}")
    print("=" * 70)
    print("  SCENARIO: ABLATION DIRECTIONS")
    print("=" * 70)
    print(f"{Colors.END}")

    result = TestResult()

    # ===== STEP 1: Feature sources =====
    print_header(f"STEP 1: Feature sources, {len(ABLATION_SEEDS)} seeds x {ABLATION_EPOCHS} epochs")
    top1 = sweep(0.0, {
        "fused": {"aggregation": "fused"},
        "frame_only": {"aggregation": "frame_only"},
        "discrete_only": {"aggregation": "discrete_only"},
    })
    means = {name: float(np.mean(values)) for name, values in top1.items()}
    print_info(", ".join(f"{name} {value:.2f}" for name, value in means.items()))
    check_true(means["fused"] >= means["frame_only"], result, "fused >= frame_only",
               f"{means['fused']:.2f} vs {means['frame_only']:.2f}")
    check_true(means["frame_only"] >= means["discrete_only"], result, "frame_only >= discrete_only",
               f"{means['frame_only']:.2f} vs {means['discrete_only']:.2f}")

    # ===== STEP 2: Distractor robustness =====
    print_header(f"STEP 2: Distractor fraction {ABLATION_NOISE}")
    top1 = sweep(ABLATION_NOISE, {
        "confidence": {"fusion": "confidence"},
        "pool": {"fusion": "pool"},
    })
    gap = float(np.mean(top1["confidence"]) - np.mean(top1["pool"]))
    print_info(f"confidence - pool = {gap:+.2f} top-1 points")
    check_true(gap >= 0.0, result, "Confidence fusion >= average pooling under distractors", f"gap {gap:+.2f}")

    return result


if __name__ == "__main__":
    result = run_scenario()
    result.summary()
    sys.exit(0 if result.failed == 0 else 1)
