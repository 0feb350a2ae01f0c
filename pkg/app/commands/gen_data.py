import argparse
import logging
from pathlib import Path

from app.commands.common import add_config_flags, resolve_config
from app.services.dataset import generate, load_descriptions, save_dataset
from app.services.encoders import build_frozen_weights

logger = logging.getLogger(__name__)

NAME = "gen-data"
HELP = "Generate a seeded synthetic video dataset"


def register(subparsers):
    parser = subparsers.add_parser(NAME, help=HELP, description=HELP)
    add_config_flags(parser)
    parser.set_defaults(handler=run)


def run(args: argparse.Namespace) -> int:
    config = resolve_config(args)
    directory = Path(config.out_dir or config.data_dir)

    weights = None
    if config.frame_mode == "embed":
        # anchors come from the same frozen text encoder that training will load
        weights = build_frozen_weights(config.encoder_config(), config.encoder_seed)
    dataset = generate(config.synthetic_spec(), weights)
    if config.descriptions:
        dataset.descriptions = load_descriptions(config.descriptions)

    save_dataset(dataset, directory)
    config.write_effective(directory)
    distractors = sum(len(v.distractors) for v in dataset.videos)
    frames = sum(v.pool_size for v in dataset.videos)
    logger.info(f"Distractor frames: {distractors}/{frames} ({100.0 * distractors / frames:.1f}%)")
    print(directory)
    return 0
