import argparse
import logging
from pathlib import Path

from app.commands.common import add_config_flags, load_inputs, resolve_config
from app.services.dataset import save_split, split_base_novel

logger = logging.getLogger(__name__)

NAME = "split"
HELP = "Write a seeded base/novel class split (split.json)"


def register(subparsers):
    parser = subparsers.add_parser(NAME, help=HELP, description=HELP)
    add_config_flags(parser)
    parser.set_defaults(handler=run)


def run(args: argparse.Namespace) -> int:
    config = resolve_config(args)
    dataset = load_inputs(config)
    split = split_base_novel(dataset.labels, config.split_fraction, config.seed)
    path = save_split(Path(config.out_dir or config.data_dir) / "split.json", split, dataset.labels)
    logger.info(f"base={[dataset.labels[k] for k in split.base]} novel={[dataset.labels[k] for k in split.novel]}")
    print(path)
    return 0
