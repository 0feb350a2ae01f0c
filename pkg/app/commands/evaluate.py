import argparse
import logging

from app.commands.common import add_config_flags, checkpoint_split, load_inputs, output_dir, resolve_config
from app.config import RunConfig
from app.exceptions import CheckpointError
from app.services.dataset import VideoDataset
from app.services.metrics import EvalReport, evaluate, evaluate_base_novel, evaluate_side
from app.services.training import TrainState, load_state
from app.utils.records import write_report

logger = logging.getLogger(__name__)

NAME = "eval"
HELP = "Evaluate a checkpoint on the eval partition; writes report.json and report.txt"


def register(subparsers):
    parser = subparsers.add_parser(NAME, help=HELP, description=HELP)
    add_config_flags(parser)
    parser.set_defaults(handler=run)


def load_checkpoint(config: RunConfig):
    if not config.checkpoint:
        raise CheckpointError("no checkpoint given (use --checkpoint PATH)")
    return load_state(config.checkpoint)


def run_evaluation(config: RunConfig, dataset: VideoDataset, state: TrainState, meta: dict) -> EvalReport:
    """`split=all` uses one codebook over every class, plus base/novel/hm when the run was split."""
    eval_config = config.train_config()
    if config.split == "all":
        if config.split_file or meta.get("class_split"):
            split = checkpoint_split(meta, config, dataset)
            return evaluate_base_novel(dataset, state, split, eval_config, config.eval_workers)
        codebook = state.build_codebook(dataset.labels)
        return evaluate(dataset, state, codebook, eval_config, config.eval_workers)

    split = checkpoint_split(meta, config, dataset)
    report = evaluate_side(dataset, state, split.side(config.split), eval_config, config.eval_workers)
    setattr(report, config.split, report.top1)
    return report


def run(args: argparse.Namespace) -> int:
    config = resolve_config(args)
    state, _, meta = load_checkpoint(config)
    dataset = load_inputs(config)
    state.overrides.update(dataset.descriptions)
    eval_set = dataset.partition("eval")
    if not eval_set.videos:
        logger.warning("No eval-partition videos; evaluating every video instead")
        eval_set = dataset

    report = run_evaluation(config, eval_set, state, meta)
    out = output_dir(config)
    config.write_effective(out)
    write_report(out, report)
    print(report.to_table())
    return 0
