"""
Ablation sweep: one checkpoint per seed, every aggregation / fusion / top-k variant
evaluated on that same checkpoint.
"""
import argparse
import logging
from typing import Dict, List

import numpy as np

from app.commands.common import add_config_flags, load_inputs, output_dir, resolve_config, training_classes
from app.exceptions import ConfigError
from app.services.metrics import evaluate
from app.services.training import init_train_state, save_state, train
from app.utils.helpers import format_number, format_table, parse_int_list
from app.utils.records import MetricsWriter, write_json

logger = logging.getLogger(__name__)

NAME = "ablate"
HELP = "Train one checkpoint per seed and compare aggregation/fusion variants on each"

BASE_VARIANTS = {
    "fused": {"aggregation": "fused", "fusion": "confidence", "top_k": None},
    "frame_only": {"aggregation": "frame_only", "fusion": "confidence", "top_k": None},
    "discrete_only": {"aggregation": "discrete_only", "fusion": "confidence", "top_k": None},
    "fused_pool": {"aggregation": "fused", "fusion": "pool", "top_k": None},
    "frame_only_pool": {"aggregation": "frame_only", "fusion": "pool", "top_k": None},
}


def register(subparsers):
    parser = subparsers.add_parser(NAME, help=HELP, description=HELP)
    add_config_flags(parser)
    parser.set_defaults(handler=run)


def variants(top_ks: List[int], segments: int) -> Dict[str, Dict]:
    out = dict(BASE_VARIANTS)
    for k in top_ks:
        if not 1 <= k <= segments:
            raise ConfigError(f"ablation top-k {k} outside [1, {segments}]")
        out[f"fused_top{k}"] = {"aggregation": "fused", "fusion": "confidence", "top_k": k}
    return out


def run(args: argparse.Namespace) -> int:
    config = resolve_config(args)
    seeds = parse_int_list(config.ablation_seeds)
    if not seeds:
        raise ConfigError("ablate needs at least one seed in --ablation-seeds")
    sweep = variants(parse_int_list(config.ablation_top_k), config.segments)

    dataset = load_inputs(config)
    train_set, split = training_classes(config, dataset)
    eval_set = dataset.partition("eval")
    if split is not None:
        eval_set = eval_set.restrict(split.side(config.split))
    out = output_dir(config)
    config.write_effective(out)

    top1: Dict[str, List[float]] = {name: [] for name in sweep}
    for seed in seeds:
        train_config = config.train_config().model_copy(update={"seed": seed})
        state = init_train_state(
            config.encoder_config(), config.encoder_seed, train_set.labels, train_config,
            text_prompt_mode=config.text_prompt_mode, overrides=dataset.descriptions,
        )
        seed_dir = out / f"seed{seed}"
        state, _ = train(train_set, train_config, state, on_epoch=MetricsWriter(seed_dir / "metrics.csv"))
        save_state(seed_dir / "checkpoint.vtdw", state, train_config)

        codebook = state.build_codebook(eval_set.labels)
        for name, update in sweep.items():
            report = evaluate(eval_set, state, codebook, train_config.model_copy(update=update), config.eval_workers)
            top1[name].append(report.top1)
            logger.info(f"seed {seed} {name}: top1={report.top1:.2f}")

    means = {name: float(np.mean(values)) for name, values in top1.items()}
    gaps = {
        "confidence_minus_pool": means["fused"] - means["fused_pool"],
        "fused_minus_frame_only": means["fused"] - means["frame_only"],
        "frame_only_minus_discrete_only": means["frame_only"] - means["discrete_only"],
    }
    write_json(out / "ablation.json", {"seeds": seeds, "top1": top1, "mean": means, "gaps": gaps})

    rows = [[name, format_number(means[name])] + [format_number(v) for v in top1[name]] for name in sweep]
    print(format_table(["variant", "mean"] + [f"seed {s}" for s in seeds], rows))
    print("\n".join(f"{name}: {value:+.2f}" for name, value in gaps.items()))
    return 0
