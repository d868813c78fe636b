"""Persistence: PICV array files, CSV curves, 16-bit PGM previews, key=value configs.

PICV layout (all little-endian)::

    b"PICV"  u16 version  u16 dtype  u16 rank  u32 dims[rank]  payload

dtype 0 is complex64 (interleaved float32 re/im), dtype 1 is float32.
"""

from __future__ import annotations

import csv
import struct
from pathlib import Path

import numpy as np

from .errors import ConfigError, FormatError, IoError

MAGIC = b"PICV"
VERSION = 1
DTYPES = {0: np.dtype("<c8"), 1: np.dtype("<f4")}


def write_array(path, x) -> None:
    x = np.asarray(x)
    code = 0 if np.iscomplexobj(x) else 1
    data = np.ascontiguousarray(x, dtype=DTYPES[code])
    header = MAGIC + struct.pack("<HHH", VERSION, code, data.ndim) + struct.pack(f"<{data.ndim}I", *data.shape)
    try:
        with open(path, "wb") as fh:
            fh.write(header)
            fh.write(data.tobytes())
    except OSError as exc:
        raise IoError(f"cannot write {path}: {exc}") from None


def read_header(raw: bytes, path="<bytes>"):
    if len(raw) < 10 or raw[:4] != MAGIC:
        raise FormatError(f"{path}: not a PICV file")
    version, code, rank = struct.unpack_from("<HHH", raw, 4)
    if version != VERSION:
        raise FormatError(f"{path}: unsupported version {version}")
    if code not in DTYPES:
        raise FormatError(f"{path}: unknown dtype code {code}")
    end = 10 + 4 * rank
    if len(raw) < end:
        raise FormatError(f"{path}: truncated header")
    dims = struct.unpack_from(f"<{rank}I", raw, 10)
    return DTYPES[code], dims, end


def read_array(path) -> np.ndarray:
    try:
        raw = Path(path).read_bytes()
    except OSError as exc:
        raise IoError(f"cannot read {path}: {exc}") from None
    dtype, dims, offset = read_header(raw, path)
    size = int(np.prod(dims, dtype=np.int64)) * dtype.itemsize
    if len(raw) != offset + size:
        raise FormatError(f"{path}: payload is {len(raw) - offset} bytes, expected {size}")
    return np.frombuffer(raw, dtype=dtype, offset=offset).reshape(dims).copy()


def write_csv(path, header, rows) -> None:
    """Floats are written with ``repr`` so they parse back exactly."""
    try:
        with open(path, "w", newline="") as fh:
            w = csv.writer(fh, lineterminator="\n")
            w.writerow(header)
            for row in rows:
                w.writerow([repr(float(v)) if isinstance(v, (float, np.floating)) else v for v in row])
    except OSError as exc:
        raise IoError(f"cannot write {path}: {exc}") from None


def read_csv(path) -> tuple[list[str], list[list[float]]]:
    try:
        with open(path, newline="") as fh:
            rows = list(csv.reader(fh))
    except OSError as exc:
        raise IoError(f"cannot read {path}: {exc}") from None
    if not rows:
        raise FormatError(f"{path}: empty CSV")
    try:
        return rows[0], [[float(v) for v in r] for r in rows[1:] if r]
    except ValueError as exc:
        raise FormatError(f"{path}: {exc}") from None


def write_curve(path, curve) -> None:
    write_csv(path, ["N", "nrmse", "operator_applications"], ((int(n), float(e), int(c)) for n, e, c in curve.rows()))


def to_pgm16(values, lo: float | None = None, hi: float | None = None) -> bytes:
    """Binary 16-bit PGM with intensities mapped linearly from ``[lo, hi]``."""
    v = np.asarray(values, dtype=np.float64)
    if v.ndim != 2:
        raise FormatError("PGM preview needs a 2-D map")
    lo = float(np.min(v)) if lo is None else float(lo)
    hi = float(np.max(v)) if hi is None else float(hi)
    span = hi - lo
    scaled = np.zeros_like(v) if span <= 0 else (np.clip(v, lo, hi) - lo) / span
    pix = np.rint(scaled * 65535).astype(">u2")
    rows, cols = v.shape
    return f"P5\n{cols} {rows}\n65535\n".encode() + pix.tobytes()


def write_pgm(path, values, lo=None, hi=None) -> None:
    try:
        Path(path).write_bytes(to_pgm16(values, lo, hi))
    except OSError as exc:
        raise IoError(f"cannot write {path}: {exc}") from None


def read_pgm16(path) -> np.ndarray:
    raw = Path(path).read_bytes()
    parts = raw.split(maxsplit=4)
    if len(parts) < 5 or parts[0] != b"P5" or parts[3] != b"65535":
        raise FormatError(f"{path}: not a 16-bit P5 PGM")
    cols, rows = int(parts[1]), int(parts[2])
    return np.frombuffer(parts[4][: 2 * rows * cols], dtype=">u2").reshape(rows, cols)


def parse_config_text(text: str, source: str = "<config>") -> dict[str, str]:
    """``key = value`` lines; ``#`` starts a comment. Later keys override earlier ones."""
    out = {}
    for lineno, line in enumerate(text.splitlines(), 1):
        line = line.split("#", 1)[0].strip()
        if not line:
            continue
        if "=" not in line:
            raise ConfigError(f"line {lineno}", f"{source}: expected key = value")
        key, value = (s.strip() for s in line.split("=", 1))
        if not key:
            raise ConfigError(f"line {lineno}", f"{source}: empty key")
        out[key] = value
    return out


def read_config(path) -> dict[str, str]:
    try:
        text = Path(path).read_text()
    except OSError as exc:
        raise IoError(f"cannot read {path}: {exc}") from None
    return parse_config_text(text, str(path))


def format_config(values: dict, comments=()) -> str:
    lines = [f"# {c}" for c in comments]
    lines += [f"{k} = {v}" for k, v in values.items()]
    return "\n".join(lines) + "\n"
