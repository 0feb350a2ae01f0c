import hashlib
import zlib
from typing import List, Optional, Sequence

import numpy as np


def stable_key(name: str) -> int:
    """
    Stable 32-bit key for a stream name.

    Python's hash() is salted per process, so crc32 is used instead.
    """
    return zlib.crc32(name.encode("utf-8"))


def seed_stream(seed: int, name: str, *extra: int) -> np.random.Generator:
    """
    Independent generator for one named consumer of a run seed.

    Args:
        seed: run or encoder seed
        name: consumer name, e.g. "visual_prompts"
        extra: further integers (class index, video index) for per-item streams

    Returns:
        numpy Generator seeded from SeedSequence([seed, key(name), *extra])
    """
    entropy = [int(seed) & 0xFFFFFFFFFFFFFFFF, stable_key(name), *[int(e) for e in extra]]
    return np.random.default_rng(np.random.SeedSequence(entropy))


def sha256_hex(payload: bytes) -> str:
    return hashlib.sha256(payload).hexdigest()


def parse_int_list(text: Optional[str]) -> List[int]:
    """
    Parse "1,2, 3" into [1, 2, 3]. Empty or None gives [].
    """
    if text is None:
        return []
    return [int(part) for part in str(text).split(",") if part.strip()]


def parse_str_list(text: Optional[str]) -> List[str]:
    if text is None:
        return []
    return [part.strip() for part in str(text).split(",") if part.strip()]


def format_number(value: Optional[float], digits: int = 2) -> str:
    return "-" if value is None else f"{value:.{digits}f}"


def format_table(headers: Sequence[str], rows: Sequence[Sequence[object]]) -> str:
    """
    Plain-text table with left-aligned columns.

    Args:
        headers: column titles
        rows: cell values, converted with str()

    Returns:
        Multi-line string (no trailing newline)
    """
    cells = [[str(h) for h in headers]] + [[str(c) for c in row] for row in rows]
    widths = [max(len(row[i]) for row in cells) for i in range(len(headers))]
    lines = []
    for n, row in enumerate(cells):
        lines.append("  ".join(cell.ljust(widths[i]) for i, cell in enumerate(row)).rstrip())
        if n == 0:
            lines.append("  ".join("-" * w for w in widths))
    return "\n".join(lines)
