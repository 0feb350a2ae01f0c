"""
Command registry. Each command module exposes NAME, HELP, register() and run().
"""
import argparse

from . import ablate, evaluate, gen_data, inspection, split, train

COMMANDS = [gen_data, train, evaluate, inspection, split, ablate]


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="vtd",
        description="Video-to-text discretization: synthetic data, prompt training, evaluation",
    )
    subparsers = parser.add_subparsers(dest="command", required=True)
    for module in COMMANDS:
        module.register(subparsers)
    return parser
