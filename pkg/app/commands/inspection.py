import argparse
import logging

from app.commands.common import add_config_flags, checkpoint_split, load_inputs, resolve_config
from app.commands.evaluate import load_checkpoint
from app.exceptions import ConfigError
from app.services.codebook import format_inspect_dump
from app.services.metrics import classify
from app.services.training import forward_video
from app.utils.helpers import parse_str_list

logger = logging.getLogger(__name__)

NAME = "inspect"
HELP = "Per-frame assignments and fusion weights for selected videos"


def register(subparsers):
    parser = subparsers.add_parser(NAME, help=HELP, description=HELP)
    add_config_flags(parser)
    parser.set_defaults(handler=run)


def run(args: argparse.Namespace) -> int:
    config = resolve_config(args)
    ids = parse_str_list(config.video_ids)
    if not ids:
        raise ConfigError("inspect needs --video-ids id1,id2,...")
    state, _, meta = load_checkpoint(config)
    dataset = load_inputs(config)
    state.overrides.update(dataset.descriptions)
    if config.split != "all":
        dataset = dataset.restrict(checkpoint_split(meta, config, dataset).side(config.split))

    codebook = state.build_codebook(dataset.labels)
    eval_config = config.train_config()
    for video_id in ids:
        video = dataset.find(video_id)
        out = forward_video(video, state, codebook, eval_config, mode="eval")
        ranking = classify(out.embedding, codebook)
        print(f"# {video_id}")
        lines = format_inspect_dump(
            out.discretization, out.fused.weights, codebook, video.label,
            frame_indices=out.frame_indices, predicted=ranking[0],
        )
        print("\n".join(lines))
    return 0
