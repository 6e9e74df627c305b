"""Container formats shared with the retrieval engine.

Both files are one UTF-8 JSON header line terminated by ``\\n`` followed by
a raw little-endian float32 payload:

  descriptor set:  {"magic":"RBDESC1","dim":D,"count":N,"dtype":"f32le",
                    "modality":"<tag>","ids":[...]}  +  N*D floats, row-major
  raster:          {"magic":"RBRAST1","h":H,"w":W,"dtype":"f32le"}
                   +  H*W floats, invalid pixels encoded as NaN

The writer emits headers with exactly this key order and separators so the
bytes match what the engine itself would write for identical content.
"""

from __future__ import annotations

import json
import os
from dataclasses import dataclass
from typing import Any, Sequence

import numpy as np

from .errors import FormatError

DESC_MAGIC = "RBDESC1"
RAST_MAGIC = "RBRAST1"


def _read_header(raw: bytes, magic: str, path: str) -> tuple[dict[str, Any], int]:
    newline = raw.find(b"\n")
    if newline < 0:
        raise FormatError(f"{path}: no header newline found in first {len(raw)} bytes")
    try:
        header = json.loads(raw[:newline].decode("utf-8"))
    except (UnicodeDecodeError, json.JSONDecodeError) as exc:
        raise FormatError(f"{path}: malformed header: {exc}") from exc
    if not isinstance(header, dict) or header.get("magic") != magic:
        raise FormatError(f"{path}: bad magic, expected {magic!r}")
    if header.get("dtype") != "f32le":
        raise FormatError(f"{path}: unsupported dtype {header.get('dtype')!r}")
    return header, newline + 1


@dataclass(frozen=True)
class DescriptorFile:
    """Raw parse of a descriptor file: payload bytes untouched, no
    normalization or semantic validation beyond structure."""

    ids: tuple[str, ...]
    data: np.ndarray
    modality: str
    dim: int
    count: int


def read_descriptor_file(path: str | os.PathLike) -> DescriptorFile:
    path = os.fspath(path)
    with open(path, "rb") as fh:
        raw = fh.read()
    header, payload_at = _read_header(raw, DESC_MAGIC, path)
    try:
        dim = int(header["dim"])
        count = int(header["count"])
        ids = tuple(str(i) for i in header["ids"])
        modality = str(header["modality"])
    except (KeyError, TypeError, ValueError) as exc:
        raise FormatError(f"{path}: header field invalid: {exc}") from exc
    if dim <= 0 or count < 0:
        raise FormatError(f"{path}: nonsensical dim={dim} count={count}")
    if len(ids) != count:
        raise FormatError(f"{path}: header lists {len(ids)} ids for count={count}")
    expected = count * dim * 4
    actual = len(raw) - payload_at
    if actual != expected:
        raise FormatError(
            f"{path}: payload is {actual} bytes, expected {expected}"
            f" (truncation at byte offset {payload_at + min(actual, expected)})"
        )
    data = np.frombuffer(raw, dtype="<f4", offset=payload_at).reshape(count, dim)
    return DescriptorFile(ids, data, modality, dim, count)


def write_descriptor_file(
    path: str | os.PathLike,
    ids: Sequence[str],
    data: np.ndarray,
    modality: str,
) -> None:
    """Write rows as float32; callers are responsible for normalization."""
    data = np.asarray(data, dtype=np.float32)
    if data.ndim != 2:
        raise FormatError(f"data must be 2-D (count, dim), got shape {data.shape}")
    if len(ids) != data.shape[0]:
        raise FormatError(f"{len(ids)} ids for {data.shape[0]} rows")
    header = {
        "magic": DESC_MAGIC,
        "dim": int(data.shape[1]),
        "count": int(data.shape[0]),
        "dtype": "f32le",
        "modality": modality,
        "ids": list(ids),
    }
    line = json.dumps(header, separators=(",", ":")).encode("utf-8")
    payload = np.ascontiguousarray(data, dtype="<f4").tobytes()
    with open(path, "wb") as fh:
        fh.write(line)
        fh.write(b"\n")
        fh.write(payload)


def read_raster(path: str | os.PathLike) -> tuple[np.ndarray, np.ndarray]:
    """Load a raster as (values, valid): NaN payload pixels become invalid
    and read back as 0.0 in ``values``."""
    path = os.fspath(path)
    with open(path, "rb") as fh:
        raw = fh.read()
    header, payload_at = _read_header(raw, RAST_MAGIC, path)
    try:
        h = int(header["h"])
        w = int(header["w"])
    except (KeyError, TypeError, ValueError) as exc:
        raise FormatError(f"{path}: header field invalid: {exc}") from exc
    if h < 0 or w < 0:
        raise FormatError(f"{path}: nonsensical size {h}x{w}")
    expected = h * w * 4
    actual = len(raw) - payload_at
    if actual != expected:
        raise FormatError(f"{path}: payload is {actual} bytes, expected {expected}")
    values = np.frombuffer(raw, dtype="<f4", offset=payload_at).reshape(h, w).astype(np.float64)
    valid = np.isfinite(values)
    return np.where(valid, values, 0.0), valid
