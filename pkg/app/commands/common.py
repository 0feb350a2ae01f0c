"""
Shared plumbing for the command modules: config flags, dataset and split loading.
"""
import argparse
import logging
from pathlib import Path
from typing import Any, Dict, Literal, Optional, Tuple, get_args, get_origin

from app.config import RUNS_DIR, RunConfig, build_run_config
from app.services.dataset import ClassSplit, VideoDataset, load_dataset, load_split, split_base_novel
from app.utils.records import make_run_dir

logger = logging.getLogger(__name__)


# ============== Flags ==============

def add_config_flags(parser: argparse.ArgumentParser):
    """`--config FILE` plus one `--kebab-case` flag per RunConfig key."""
    parser.add_argument("--config", default=None, help="key = value file, applied before flags")
    group = parser.add_argument_group("run configuration")
    for name, info in RunConfig.model_fields.items():
        choices = None
        for candidate in (info.annotation, *get_args(info.annotation)):
            if get_origin(candidate) is Literal:
                choices = list(get_args(candidate))
        group.add_argument(
            f"--{name.replace('_', '-')}",
            dest=name,
            default=argparse.SUPPRESS,
            choices=choices,
            help=info.description or f"default: {info.get_default(call_default_factory=True)}",
        )


def resolve_config(args: argparse.Namespace) -> RunConfig:
    overrides: Dict[str, Any] = {name: getattr(args, name) for name in RunConfig.model_fields if hasattr(args, name)}
    config = build_run_config(getattr(args, "config", None), overrides)
    logger.debug(f"Effective config: {config.model_dump()}")
    return config


def output_dir(config: RunConfig) -> Path:
    return make_run_dir(RUNS_DIR, config.seed, config.out_dir)


# ============== Inputs ==============

def load_inputs(config: RunConfig) -> VideoDataset:
    return load_dataset(config.data_dir, config.descriptions)


def resolve_split(config: RunConfig, dataset: VideoDataset) -> ClassSplit:
    if config.split_file:
        return load_split(config.split_file, dataset.num_classes)
    return split_base_novel(dataset.labels, config.split_fraction, config.seed)


def training_classes(config: RunConfig, dataset: VideoDataset) -> Tuple[VideoDataset, Optional[ClassSplit]]:
    """Training partition, restricted to one side of the class split when asked."""
    train_set = dataset.partition("train")
    if config.split == "all":
        return train_set, None
    split = resolve_split(config, dataset)
    return train_set.restrict(split.side(config.split)), split


def checkpoint_split(meta: Dict[str, Any], config: RunConfig, dataset: VideoDataset) -> ClassSplit:
    """Split file if configured, else the split recorded at training time, else a fresh seeded one."""
    if config.split_file:
        return load_split(config.split_file, dataset.num_classes)
    stored = meta.get("class_split")
    if stored:
        split = ClassSplit(base=list(stored["base"]), novel=list(stored["novel"]))
        split.validate(dataset.num_classes)
        return split
    return split_base_novel(dataset.labels, config.split_fraction, config.seed)
