"""
Run-directory artifacts: metrics CSV, reports, output directory naming.
"""
import json
import logging
from datetime import datetime
from pathlib import Path
from typing import Any, Dict, Optional, Union

logger = logging.getLogger(__name__)

METRICS_HEADER = "epoch,loss,train_top1"


def make_run_dir(base: Union[str, Path], seed: int, override: Optional[str] = None) -> Path:
    """`override` if given, else <base>/<YYYYmmdd-HHMMSS>_seed<seed> (suffixed if taken)."""
    if override:
        path = Path(override)
    else:
        stamp = datetime.now().strftime("%Y%m%d-%H%M%S")
        path = Path(base) / f"{stamp}_seed{seed}"
        n = 1
        while path.exists():
            path = Path(base) / f"{stamp}_seed{seed}_{n}"
            n += 1
    path.mkdir(parents=True, exist_ok=True)
    return path


class MetricsWriter:
    """Appends one `epoch,loss,train_top1` line per epoch, flushed immediately."""

    def __init__(self, path: Union[str, Path]):
        self.path = Path(path)
        self.path.parent.mkdir(parents=True, exist_ok=True)
        self.path.write_text(METRICS_HEADER + "\n", encoding="utf-8")

    def __call__(self, metrics) -> None:
        with open(self.path, "a", encoding="utf-8") as fh:
            fh.write(metrics.csv_line() + "\n")


def write_json(path: Union[str, Path], payload: Dict[str, Any]) -> Path:
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    path.write_text(json.dumps(payload, indent=2, sort_keys=True) + "\n", encoding="utf-8")
    return path


def write_report(directory: Union[str, Path], report, name: str = "report") -> Path:
    """<name>.json (machine-readable) and <name>.txt (table) side by side."""
    directory = Path(directory)
    directory.mkdir(parents=True, exist_ok=True)
    json_path = directory / f"{name}.json"
    json_path.write_text(report.to_json() + "\n", encoding="utf-8")
    (directory / f"{name}.txt").write_text(report.to_table() + "\n", encoding="utf-8")
    logger.info(f"Report written: {json_path}")
    return json_path
