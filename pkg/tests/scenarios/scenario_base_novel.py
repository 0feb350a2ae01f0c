#!/usr/bin/env python3
"""
Scenario: Base-to-Novel Transfer

Trains on a seeded 50% base split of the synthetic benchmark and evaluates the
held-out novel classes against a codebook of only those classes. Mean novel
top-1 over the seeds must beat chance (100 / number of novel classes), and
training must lift base top-1 by at least 10 points over the untrained state.
"""
import sys
import os
sys.path.insert(0, os.path.dirname(os.path.dirname(os.path.abspath(__file__))))

import numpy as np

from utils import Colors, TestResult, check_true, print_header, print_info
from config import ABLATION_EPOCHS, ABLATION_SEEDS, ACCEPTANCE_DATA, ENCODER_SEED, TRAINING_GAIN

from app.services.dataset import SyntheticSpec, generate, split_base_novel
from app.services.encoders import EncoderConfig, build_frozen_weights
from app.services.metrics import evaluate_side, harmonic_mean
from app.services.training import TrainConfig, init_train_state, train


def run_scenario():
    """Run the base-to-novel scenario"""
    print(f"\n{Colors.BOLD}{Colors.CYAN}")
    print("=" * 70)
    print("  SCENARIO: BASE-TO-NOVEL TRANSFER")
    print("=" * 70)
    print(f"{Colors.END}")

    result = TestResult()
    encoder = EncoderConfig()
    weights = build_frozen_weights(encoder, ENCODER_SEED)
    data = generate(SyntheticSpec(**ACCEPTANCE_DATA), weights)
    eval_set = data.partition("eval")

    print_header(f"Base split training, {len(ABLATION_SEEDS)} seeds")
    novel_scores, margins, gains = [], [], []
    for seed in ABLATION_SEEDS:
        split = split_base_novel(data.labels, 0.5, seed)
        config = TrainConfig(epochs=ABLATION_EPOCHS, seed=seed)
        base_set = data.partition("train").restrict(split.base)
        state = init_train_state(encoder, ENCODER_SEED, base_set.labels, config, weights=weights)
        untrained = evaluate_side(eval_set, state, split.base, config).top1
        state, _ = train(base_set, config, state)

        base = evaluate_side(eval_set, state, split.base, config).top1
        novel = evaluate_side(eval_set, state, split.novel, config).top1
        chance = 100.0 / len(split.novel)
        hm = harmonic_mean(base, novel) if base > 0 and novel > 0 else 0.0
        novel_scores.append(novel)
        margins.append(novel - chance)
        gains.append(base - untrained)
        print_info(f"seed {seed}: untrained base {untrained:.1f}, base {base:.1f}, "
                   f"novel {novel:.1f} (chance {chance:.1f}), hm {hm:.1f}")

    mean_gain = float(np.mean(gains))
    check_true(mean_gain >= TRAINING_GAIN, result, f"Training lifts base top-1 by >= {TRAINING_GAIN:.0f} points",
               f"mean gain {mean_gain:+.2f}")
    mean_margin = float(np.mean(margins))
    check_true(mean_margin > 0.0, result, "Novel top-1 above chance on average",
               f"mean margin {mean_margin:+.2f}, novel {novel_scores}")

    return result


if __name__ == "__main__":
    result = run_scenario()
    result.summary()
    sys.exit(0 if result.failed == 0 else 1)
