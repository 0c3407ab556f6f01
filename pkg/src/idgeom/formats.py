"""File formats: the EMB1 binary matrix container, CSV clouds, JSONL corpora.

EMB1 record layout (all little endian)::

    b"EMB1" | u32 rows | u32 cols | u8 dtype | 3 reserved zero bytes | payload

``dtype`` is 0 for float32 and 1 for float64; the payload is row major. A file
is any number of records back to back.
"""

from __future__ import annotations

import csv
import io
import json
import struct
from dataclasses import dataclass
from pathlib import Path
from typing import Iterable, Iterator

import numpy as np

from .errors import InvalidInput

MAGIC = b"EMB1"
_HEADER = struct.Struct("<4sIIB3s")
_DTYPES = {0: np.dtype("<f4"), 1: np.dtype("<f8")}
_CODES = {np.dtype("float32"): 0, np.dtype("float64"): 1}


def encode_matrix(matrix: np.ndarray) -> bytes:
    """One EMB1 record; float32 input is stored as float32, anything else as float64."""
    arr = np.asarray(matrix)
    if arr.ndim == 1:
        arr = arr.reshape(1, -1)
    if arr.ndim != 2:
        raise InvalidInput(f"EMB1 stores 2-D matrices, got shape {arr.shape}")
    code = _CODES.get(arr.dtype, 1)
    arr = np.ascontiguousarray(arr, dtype=_DTYPES[code])
    rows, cols = arr.shape
    if rows >= 2**32 or cols >= 2**32:
        raise InvalidInput("matrix too large for EMB1")
    return _HEADER.pack(MAGIC, rows, cols, code, b"\0\0\0") + arr.tobytes()


def encode(matrices: Iterable[np.ndarray]) -> bytes:
    return b"".join(encode_matrix(m) for m in matrices)


def iter_records(blob: bytes) -> Iterator[np.ndarray]:
    """Decode EMB1 records; raises InvalidInput at the first malformed one."""
    offset = 0
    index = 0
    while offset < len(blob):
        if len(blob) - offset < _HEADER.size:
            raise InvalidInput(f"record {index}: truncated header at byte {offset}")
        magic, rows, cols, code, reserved = _HEADER.unpack_from(blob, offset)
        if magic != MAGIC:
            raise InvalidInput(f"record {index}: bad magic {magic!r} at byte {offset}")
        if code not in _DTYPES:
            raise InvalidInput(f"record {index}: unknown dtype code {code}")
        if reserved != b"\0\0\0":
            raise InvalidInput(f"record {index}: reserved bytes must be zero")
        offset += _HEADER.size
        dtype = _DTYPES[code]
        size = rows * cols * dtype.itemsize
        if len(blob) - offset < size:
            raise InvalidInput(f"record {index}: payload truncated ({len(blob) - offset} of {size} bytes)")
        yield np.frombuffer(blob, dtype=dtype, count=rows * cols, offset=offset).reshape(rows, cols).copy()
        offset += size
        index += 1


def decode(blob: bytes) -> list[np.ndarray]:
    return list(iter_records(blob))


def is_emb(blob: bytes) -> bool:
    return blob[:4] == MAGIC


def parse_csv_matrix(text: str) -> np.ndarray | None:
    """Numeric CSV with an optional header row; None when there are no data rows."""
    rows = [r for r in csv.reader(io.StringIO(text)) if r and any(c.strip() for c in r)]
    if not rows:
        return None
    try:
        [float(c) for c in rows[0]]
    except ValueError:
        rows = rows[1:]
    if not rows:
        return None
    width = len(rows[0])
    try:
        data = [[float(c) for c in r] for r in rows]
    except ValueError as exc:
        raise InvalidInput(f"CSV cloud has a non-numeric cell: {exc}") from exc
    if any(len(r) != width for r in data):
        raise InvalidInput("CSV cloud rows have unequal lengths")
    return np.asarray(data, dtype=np.float64)


@dataclass
class Record:
    """One matrix read from an input file, labelled for reporting."""

    label: str
    matrix: np.ndarray


def read_matrices(blob: bytes, name: str) -> list[Record]:
    """Records from EMB1 bytes or CSV text (one matrix per CSV file)."""
    if not blob.strip():
        return []
    if is_emb(blob):
        return [Record(f"{name}#{i}", m) for i, m in enumerate(iter_records(blob))]
    try:
        text = blob.decode("utf-8")
    except UnicodeDecodeError as exc:
        raise InvalidInput(f"{name}: neither EMB1 nor UTF-8 CSV") from exc
    m = parse_csv_matrix(text)
    return [] if m is None else [Record(name, m)]


def read_path(path: str | Path, stdin=None) -> bytes:
    if str(path) == "-":
        import sys

        return (stdin or sys.stdin.buffer).read()
    return Path(path).read_bytes()


@dataclass
class CorpusLine:
    lineno: int
    record: dict | None
    error: str | None = None


def read_jsonl(text: str) -> list[CorpusLine]:
    """Parse JSON Lines; malformed lines are kept as per-line errors."""
    out = []
    for lineno, line in enumerate(text.splitlines(), 1):
        if not line.strip():
            continue
        try:
            rec = json.loads(line)
        except json.JSONDecodeError as exc:
            out.append(CorpusLine(lineno, None, f"invalid JSON: {exc}"))
            continue
        if not isinstance(rec, dict):
            out.append(CorpusLine(lineno, None, "line is not a JSON object"))
            continue
        out.append(CorpusLine(lineno, rec))
    return out


def write_jsonl(records: Iterable[dict]) -> str:
    return "".join(json.dumps(r, ensure_ascii=False) + "\n" for r in records)
