"""Bit-exact file formats: RSTM (dense matrix), RSTS (support schedule),
RSTV (value stream), plus manifests and deterministic CSV emission.

All binary values are little-endian. Writes go through a temp file and an
atomic rename. Floats in CSVs use repr's shortest round-trip form so a
regenerated file is byte-identical for identical values.
"""

from __future__ import annotations

import hashlib
import json
import os
import struct
from typing import Iterable, Sequence

import numpy as np

from .errors import FormatError

MAGIC_MATRIX = b"RSTM"
MAGIC_SUPPORT = b"RSTS"
MAGIC_VALUES = b"RSTV"
FORMAT_VERSION = 1

LIBRARY_VERSION = "0.1.0"


def _atomic_write(path: str, payload: bytes) -> None:
    tmp = path + ".tmp"
    with open(tmp, "wb") as fh:
        fh.write(payload)
        fh.flush()
        os.fsync(fh.fileno())
    os.replace(tmp, path)


def write_matrix(path: str, m: np.ndarray) -> None:
    """n x T doubles, column-major (one column per frame)."""
    m = np.asarray(m, dtype=np.float64)
    if m.ndim == 1:
        m = m[:, None]
    if m.ndim != 2:
        raise FormatError(f"matrix must be 2-D, got shape {m.shape}")
    n, t = m.shape
    header = MAGIC_MATRIX + struct.pack("<HHQQ", FORMAT_VERSION, 0, n, t)
    _atomic_write(path, header + np.asfortranarray(m).tobytes(order="F"))


def read_matrix(path: str) -> np.ndarray:
    with open(path, "rb") as fh:
        raw = fh.read()
    if len(raw) < 24 or raw[:4] != MAGIC_MATRIX:
        raise FormatError(f"{path}: not a matrix file")
    version, _, n, t = struct.unpack("<HHQQ", raw[4:24])
    if version != FORMAT_VERSION:
        raise FormatError(f"{path}: unsupported version {version}")
    if len(raw) != 24 + 8 * n * t:
        raise FormatError(
            f"{path}: expected {24 + 8 * n * t} bytes, found {len(raw)}"
        )
    data = np.frombuffer(raw, dtype="<f8", offset=24)
    return data.reshape((n, t), order="F").copy()


def write_supports(path: str, supports: Sequence[np.ndarray], n: int) -> None:
    """Per frame: u32 count followed by that many strictly ascending u32."""
    t = len(supports)
    chunks = [MAGIC_SUPPORT + struct.pack("<HHQQ", FORMAT_VERSION, 0, n, t)]
    for supp in supports:
        s = np.asarray(supp, dtype=np.int64)
        if s.size and (s.min() < 0 or s.max() >= n):
            raise FormatError("support index out of range")
        if s.size > 1 and np.any(np.diff(s) <= 0):
            raise FormatError("support indices must be strictly ascending")
        chunks.append(struct.pack("<I", s.size))
        chunks.append(s.astype("<u4").tobytes())
    _atomic_write(path, b"".join(chunks))


def read_supports(path: str) -> tuple[list[np.ndarray], int]:
    with open(path, "rb") as fh:
        raw = fh.read()
    if len(raw) < 24 or raw[:4] != MAGIC_SUPPORT:
        raise FormatError(f"{path}: not a support file")
    version, _, n, t = struct.unpack("<HHQQ", raw[4:24])
    if version != FORMAT_VERSION:
        raise FormatError(f"{path}: unsupported version {version}")
    out = []
    off = 24
    for _ in range(t):
        if off + 4 > len(raw):
            raise FormatError(f"{path}: truncated")
        (count,) = struct.unpack_from("<I", raw, off)
        off += 4
        end = off + 4 * count
        if end > len(raw):
            raise FormatError(f"{path}: truncated")
        idx = np.frombuffer(raw, dtype="<u4", count=count, offset=off).astype(np.intp)
        if idx.size and (np.any(np.diff(idx) <= 0) or idx.max() >= n):
            raise FormatError(f"{path}: invalid support frame")
        out.append(idx)
        off = end
    if off != len(raw):
        raise FormatError(f"{path}: trailing bytes")
    return out, int(n)


def write_values(path: str, values: np.ndarray) -> None:
    """Flat f64 stream, aligned with the counts of a companion RSTS file."""
    v = np.asarray(values, dtype=np.float64).ravel()
    header = MAGIC_VALUES + struct.pack("<HHQQ", FORMAT_VERSION, 0, v.size, 0)
    _atomic_write(path, header + v.astype("<f8").tobytes())


def read_values(path: str) -> np.ndarray:
    with open(path, "rb") as fh:
        raw = fh.read()
    if len(raw) < 24 or raw[:4] != MAGIC_VALUES:
        raise FormatError(f"{path}: not a value file")
    version, _, count, _ = struct.unpack("<HHQQ", raw[4:24])
    if version != FORMAT_VERSION:
        raise FormatError(f"{path}: unsupported version {version}")
    if len(raw) != 24 + 8 * count:
        raise FormatError(f"{path}: truncated")
    return np.frombuffer(raw, dtype="<f8", offset=24).copy()


def fmt_float(x: float) -> str:
    if x != x:  # nan
        return "nan"
    return repr(float(x))


def write_csv(path: str, header: Sequence[str], rows: Iterable[Sequence]) -> None:
    lines = [",".join(header)]
    for row in rows:
        cells = []
        for cell in row:
            if isinstance(cell, (bool, np.bool_)):
                cells.append("1" if cell else "0")
            elif isinstance(cell, (int, np.integer)):
                cells.append(str(int(cell)))
            elif isinstance(cell, (float, np.floating)):
                cells.append(fmt_float(float(cell)))
            else:
                cells.append(str(cell))
        lines.append(",".join(cells))
    _atomic_write(path, ("\n".join(lines) + "\n").encode())


def read_csv(path: str) -> tuple[list[str], list[list[str]]]:
    with open(path, "r", encoding="utf-8") as fh:
        lines = [ln.rstrip("\n") for ln in fh if ln.strip()]
    if not lines:
        raise FormatError(f"{path}: empty csv")
    header = lines[0].split(",")
    return header, [ln.split(",") for ln in lines[1:]]


def config_hash(raw_bytes: bytes) -> str:
    return hashlib.sha256(raw_bytes).hexdigest()


def write_manifest(path: str, kind: str, *, seed=None, cfg_hash=None, **extra) -> None:
    doc = {
        "format": "rstrack-manifest",
        "manifest_version": 1,
        "library_version": LIBRARY_VERSION,
        "kind": kind,
        "seed": seed,
        "config_hash": cfg_hash,
    }
    doc.update(extra)
    payload = json.dumps(doc, indent=2, sort_keys=True) + "\n"
    _atomic_write(path, payload.encode())


def read_manifest(path: str) -> dict:
    try:
        with open(path, "r", encoding="utf-8") as fh:
            doc = json.load(fh)
    except (OSError, json.JSONDecodeError) as exc:
        raise FormatError(f"{path}: unreadable manifest: {exc}") from exc
    if doc.get("format") != "rstrack-manifest":
        raise FormatError(f"{path}: not an rstrack manifest")
    return doc
