"""
VTDW weight container.

Layout (all integers little-endian):

    b"VTDW" | u32 format version | u64 seed | u32 meta length | meta JSON (sorted keys)
    u32 section count, then per section:
        u16 name length | name | u32 record count | records
    record:
        u16 name length | name | u8 rank | u32 dims[rank] | f64 data (row-major)

Sections used by training: "frozen", "trainable", "optimizer".
"""
import json
import logging
import os
import struct
from pathlib import Path
from typing import Any, Dict, Tuple, Union

import numpy as np

from app.exceptions import CheckpointError

logger = logging.getLogger(__name__)

MAGIC = b"VTDW"
FORMAT_VERSION = 1

Sections = Dict[str, Dict[str, np.ndarray]]


# ============== Encoding ==============

def _encode_name(name: str) -> bytes:
    raw = name.encode("utf-8")
    if len(raw) > 0xFFFF:
        raise CheckpointError(f"record name too long: {name[:40]}...")
    return struct.pack("<H", len(raw)) + raw


def serialize_section(records: Dict[str, np.ndarray]) -> bytes:
    """Records in insertion order. Used for both writing and hashing."""
    chunks = [struct.pack("<I", len(records))]
    for name, array in records.items():
        array = np.ascontiguousarray(array, dtype="<f8")
        if array.ndim > 0xFF:
            raise CheckpointError(f"record {name} has rank {array.ndim}")
        chunks.append(_encode_name(name))
        chunks.append(struct.pack("<B", array.ndim))
        chunks.append(struct.pack(f"<{array.ndim}I", *array.shape))
        chunks.append(array.tobytes(order="C"))
    return b"".join(chunks)


def encode_checkpoint(meta: Dict[str, Any], seed: int, sections: Sections) -> bytes:
    meta_bytes = json.dumps(meta, sort_keys=True, separators=(",", ":")).encode("utf-8")
    chunks = [
        MAGIC,
        struct.pack("<I", FORMAT_VERSION),
        struct.pack("<Q", int(seed) & 0xFFFFFFFFFFFFFFFF),
        struct.pack("<I", len(meta_bytes)),
        meta_bytes,
        struct.pack("<I", len(sections)),
    ]
    for section_name, records in sections.items():
        chunks.append(_encode_name(section_name))
        chunks.append(serialize_section(records))
    return b"".join(chunks)


# ============== Decoding ==============

class _Reader:
    def __init__(self, payload: bytes):
        self.payload = payload
        self.offset = 0

    def take(self, size: int) -> bytes:
        end = self.offset + size
        if end > len(self.payload):
            raise CheckpointError(f"truncated checkpoint at byte {self.offset}", offset=self.offset)
        chunk = self.payload[self.offset:end]
        self.offset = end
        return chunk

    def unpack(self, fmt: str):
        return struct.unpack(fmt, self.take(struct.calcsize(fmt)))

    def name(self) -> str:
        (length,) = self.unpack("<H")
        try:
            return self.take(length).decode("utf-8")
        except UnicodeDecodeError as e:
            raise CheckpointError(f"record name is not valid UTF-8 at byte {self.offset}") from e


def _read_section(reader: _Reader) -> Dict[str, np.ndarray]:
    (count,) = reader.unpack("<I")
    records = {}
    for _ in range(count):
        name = reader.name()
        (rank,) = reader.unpack("<B")
        dims = reader.unpack(f"<{rank}I") if rank else ()
        n = int(np.prod(dims)) if dims else 1
        data = np.frombuffer(reader.take(8 * n), dtype="<f8").astype(np.float64)
        records[name] = data.reshape(dims)
    return records


def decode_checkpoint(payload: bytes) -> Tuple[Dict[str, Any], int, Sections]:
    reader = _Reader(payload)
    if reader.take(4) != MAGIC:
        raise CheckpointError("not a VTDW checkpoint (bad magic)")
    (version,) = reader.unpack("<I")
    if version != FORMAT_VERSION:
        raise CheckpointError(f"unsupported checkpoint version {version}", version=version)
    (seed,) = reader.unpack("<Q")
    (meta_len,) = reader.unpack("<I")
    try:
        meta = json.loads(reader.take(meta_len).decode("utf-8"))
    except (UnicodeDecodeError, json.JSONDecodeError) as e:
        raise CheckpointError(f"checkpoint metadata is not valid JSON: {e}") from e
    (section_count,) = reader.unpack("<I")
    sections: Sections = {}
    for _ in range(section_count):
        section_name = reader.name()
        sections[section_name] = _read_section(reader)
    if reader.offset != len(payload):
        raise CheckpointError(f"{len(payload) - reader.offset} trailing bytes after last section")
    return meta, seed, sections


# ============== Files ==============

def write_checkpoint(path: Union[str, Path], meta: Dict[str, Any], seed: int, sections: Sections) -> Path:
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    payload = encode_checkpoint(meta, seed, sections)
    tmp = path.with_suffix(path.suffix + ".tmp")
    tmp.write_bytes(payload)
    os.replace(tmp, path)
    logger.info(f"Checkpoint written: {path} ({len(payload)} bytes)")
    return path


def read_checkpoint(path: Union[str, Path]) -> Tuple[Dict[str, Any], int, Sections]:
    path = Path(path)
    if not path.is_file():
        raise CheckpointError(f"checkpoint not found: {path}", path=str(path))
    return decode_checkpoint(path.read_bytes())
