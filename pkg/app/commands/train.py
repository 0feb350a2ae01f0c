import argparse
import logging

from app.commands.common import add_config_flags, load_inputs, output_dir, resolve_config, training_classes
from app.exceptions import TrainingDivergenceError
from app.services.dataset import save_split
from app.services.training import init_train_state, save_state, train
from app.utils.records import MetricsWriter

logger = logging.getLogger(__name__)

NAME = "train"
HELP = "Train prompts and fusion parameters; writes checkpoint.vtdw and metrics.csv"


def register(subparsers):
    parser = subparsers.add_parser(NAME, help=HELP, description=HELP)
    add_config_flags(parser)
    parser.set_defaults(handler=run)


def run(args: argparse.Namespace) -> int:
    config = resolve_config(args)
    dataset = load_inputs(config)
    train_set, split = training_classes(config, dataset)
    out = output_dir(config)
    config.write_effective(out)

    extra_meta = {"split": config.split}
    if split is not None:
        save_split(out / "split.json", split, dataset.labels)
        extra_meta["class_split"] = {"base": split.base, "novel": split.novel}

    train_config = config.train_config()
    state = init_train_state(
        config.encoder_config(), config.encoder_seed, train_set.labels, train_config,
        text_prompt_mode=config.text_prompt_mode, overrides=dataset.descriptions,
    )
    logger.info(f"Training on {len(train_set.videos)} videos, {train_set.num_classes} classes -> {out}")

    writer = MetricsWriter(out / "metrics.csv")
    try:
        state, history = train(train_set, train_config, state, on_epoch=writer)
    except TrainingDivergenceError:
        logger.error(f"Training diverged; partial metrics kept in {writer.path}")
        raise

    save_state(out / "checkpoint.vtdw", state, train_config, extra_meta)
    if history:
        last = history[-1]
        logger.info(f"Finished: loss={last.loss:.4f} train_top1={last.train_top1:.1f}")
    print(out)
    return 0
