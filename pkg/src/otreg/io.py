"""EMB1 / CSV matrix files, deterministic JSON, atomic writes."""

from __future__ import annotations

import hashlib
import json
import math
import os
import struct
import tempfile
import warnings
from pathlib import Path

import numpy as np

from .errors import FormatError

__all__ = [
    "MAGIC",
    "encode_emb",
    "decode_emb",
    "write_emb",
    "read_emb",
    "read_csv_matrix",
    "write_csv_matrix",
    "matrix_format",
    "load_matrix",
    "save_matrix",
    "dumps_json",
    "atomic_write",
    "file_digest",
]

MAGIC = b"EMB1"
_HEADER = struct.Struct("<4sII")


def encode_emb(m) -> bytes:
    a = np.asarray(m, dtype=np.float64)
    if a.ndim != 2:
        raise FormatError(f"EMB1 stores 2-D matrices, got shape {a.shape}")
    if not np.all(np.isfinite(a)):
        raise FormatError("cannot store non-finite values")
    with np.errstate(over="ignore"):
        f32 = a.astype("<f4")
    if not np.all(np.isfinite(f32)):
        raise FormatError("value out of 32-bit float range")
    return _HEADER.pack(MAGIC, a.shape[0], a.shape[1]) + f32.tobytes(order="C")


def decode_emb(data: bytes, source: str = "<bytes>") -> np.ndarray:
    if len(data) < _HEADER.size:
        raise FormatError(
            f"{source}: truncated header, expected {_HEADER.size} bytes, got {len(data)}",
            offset=len(data),
        )
    magic, rows, cols = _HEADER.unpack_from(data, 0)
    if magic != MAGIC:
        raise FormatError(f"{source}: bad magic {magic!r}", offset=0)
    expected = _HEADER.size + 4 * rows * cols
    if len(data) != expected:
        raise FormatError(
            f"{source}: expected {expected} bytes for {rows}x{cols}, got {len(data)}",
            offset=min(len(data), expected),
        )
    vals = np.frombuffer(data, dtype="<f4", offset=_HEADER.size).astype(np.float64)
    bad = np.flatnonzero(~np.isfinite(vals))
    if bad.size:
        raise FormatError(
            f"{source}: non-finite value at element {bad[0]}",
            offset=_HEADER.size + 4 * int(bad[0]),
        )
    return vals.reshape(rows, cols)


def write_emb(path, m) -> None:
    atomic_write(path, encode_emb(m))


def read_emb(path) -> np.ndarray:
    return decode_emb(Path(path).read_bytes(), str(path))


def read_csv_matrix(path) -> np.ndarray:
    text = Path(path).read_text(encoding="utf-8")
    rows = []
    width = None
    for lineno, line in enumerate(text.splitlines(), start=1):
        if not line.strip():
            continue
        try:
            vals = [float(tok) for tok in line.split(",")]
        except ValueError:
            raise FormatError(f"{path}:{lineno}: cannot parse {line!r}", line=lineno) from None
        if not all(math.isfinite(v) for v in vals):
            raise FormatError(f"{path}:{lineno}: non-finite value", line=lineno)
        if width is None:
            width = len(vals)
        elif len(vals) != width:
            raise FormatError(
                f"{path}:{lineno}: ragged row, expected {width} values, got {len(vals)}",
                line=lineno,
            )
        rows.append(vals)
    if not rows:
        warnings.warn(f"{path}: empty CSV, returning a 0x0 matrix", stacklevel=2)
        return np.zeros((0, 0))
    return np.array(rows, dtype=np.float64)


def encode_csv(m) -> bytes:
    a = np.asarray(m, dtype=np.float64)
    lines = [",".join(format(float(v), ".17g") for v in row) for row in a]
    return ("\n".join(lines) + ("\n" if lines else "")).encode("utf-8")


def write_csv_matrix(path, m) -> None:
    atomic_write(path, encode_csv(m))


def matrix_format(path) -> str:
    ext = Path(path).suffix.lower()
    if ext == ".emb":
        return "emb"
    if ext == ".csv":
        return "csv"
    raise FormatError(f"{path}: cannot infer matrix format from extension {ext!r}")


def load_matrix(path) -> np.ndarray:
    return read_emb(path) if matrix_format(path) == "emb" else read_csv_matrix(path)


def encode_matrix(path, m) -> bytes:
    return encode_emb(m) if matrix_format(path) == "emb" else encode_csv(m)


def save_matrix(path, m) -> None:
    atomic_write(path, encode_matrix(path, m))


def _encode(obj, indent) -> str:
    """``indent=None`` gives a single line."""
    nested = None if indent is None else indent + 1
    if indent is None:
        open_, sep, close, kv = "", ",", "", ":"
    else:
        open_, sep, close, kv = "\n" + "  " * nested, ",\n" + "  " * nested, "\n" + "  " * indent, ": "
    if obj is None:
        return "null"
    if isinstance(obj, (bool, np.bool_)):
        return "true" if obj else "false"
    if isinstance(obj, (int, np.integer)):
        return str(int(obj))
    if isinstance(obj, (float, np.floating)):
        v = float(obj)
        return format(v, ".17g") if math.isfinite(v) else "null"
    if isinstance(obj, str):
        return json.dumps(obj)
    if isinstance(obj, np.ndarray):
        return _encode(obj.tolist(), indent)
    if isinstance(obj, dict):
        if not obj:
            return "{}"
        items = sorted((str(k), v) for k, v in obj.items())
        body = sep.join(f"{json.dumps(k)}{kv}{_encode(v, nested)}" for k, v in items)
        return "{" + open_ + body + close + "}"
    if isinstance(obj, (list, tuple)):
        if not obj:
            return "[]"
        return "[" + open_ + sep.join(_encode(v, nested) for v in obj) + close + "]"
    raise TypeError(f"cannot serialize {type(obj).__name__}")


def dumps_json(obj, compact: bool = False) -> str:
    """Sorted keys, floats with 17 significant digits, non-finite floats as null.

    ``compact`` gives one line (for JSON-lines streams).
    """
    return _encode(obj, None if compact else 0) + "\n"


def atomic_write(path, data) -> None:
    """Write to a temp file in the target directory, then rename over ``path``."""
    path = Path(path)
    if isinstance(data, str):
        data = data.encode("utf-8")
    fd, tmp = tempfile.mkstemp(dir=path.parent or ".", prefix=f".{path.name}.", suffix=".tmp")
    try:
        with os.fdopen(fd, "wb") as fh:
            fh.write(data)
        os.replace(tmp, path)
    except BaseException:
        if os.path.exists(tmp):
            os.unlink(tmp)
        raise


def file_digest(path) -> str:
    return hashlib.sha256(Path(path).read_bytes()).hexdigest()
