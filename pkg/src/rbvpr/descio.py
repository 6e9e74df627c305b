"""Descriptor-set and raster file I/O.

Both formats are a single UTF-8 JSON header line terminated by ``\\n``,
followed immediately by a raw little-endian float32 payload:

  descriptor set:  {"magic":"RBDESC1","dim":D,"count":N,"dtype":"f32le",
                    "modality":"<tag>","ids":[...]}  +  N*D floats, row-major
  raster:          {"magic":"RBRAST1","h":H,"w":W,"dtype":"f32le"}
                   +  H*W floats, invalid pixels encoded as NaN

Descriptor payloads round-trip bit-exactly; rows are L2-normalized at load.
"""

from __future__ import annotations

import json
import os
from typing import Any

import numpy as np

from .types import (
    DataError,
    DescriptorSet,
    DimensionError,
    FormatError,
    Modality,
    RasterImage,
    RasterKind,
)

DESC_MAGIC = "RBDESC1"
RAST_MAGIC = "RBRAST1"


def _read_header(raw: bytes, magic: str, path: str) -> tuple[dict[str, Any], int]:
    """Parse the JSON header line; returns (header, payload byte offset)."""
    newline = raw.find(b"\n")
    if newline < 0:
        raise FormatError(f"{path}: no header newline found in first {len(raw)} bytes")
    try:
        header = json.loads(raw[:newline].decode("utf-8"))
    except (UnicodeDecodeError, json.JSONDecodeError) as exc:
        offset = getattr(exc, "pos", 0)
        raise FormatError(f"{path}: malformed header at byte offset {offset}: {exc}") from exc
    if not isinstance(header, dict) or header.get("magic") != magic:
        raise FormatError(f"{path}: bad magic, expected {magic!r}")
    if header.get("dtype") != "f32le":
        raise FormatError(f"{path}: unsupported dtype {header.get('dtype')!r}")
    return header, newline + 1


def load_descriptor_set(path: str | os.PathLike, expect_dim: int | None = None) -> DescriptorSet:
    """Load a descriptor set, L2-normalizing every row.

    Ids keep file order. ``expect_dim`` rejects files whose header dim
    differs (DimensionError).
    """
    path = os.fspath(path)
    with open(path, "rb") as fh:
        raw = fh.read()
    header, payload_at = _read_header(raw, DESC_MAGIC, path)
    try:
        dim = int(header["dim"])
        count = int(header["count"])
        ids = list(header["ids"])
        modality = Modality(header["modality"])
    except (KeyError, TypeError, ValueError) as exc:
        raise FormatError(f"{path}: header field invalid: {exc}") from exc
    if dim <= 0 or count < 0:
        raise FormatError(f"{path}: nonsensical dim={dim} count={count}")
    if expect_dim is not None and dim != expect_dim:
        raise DimensionError(f"{path}: header dim {dim}, expected {expect_dim}")
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
    if not np.isfinite(data).all():
        raise DataError(f"{path}: payload contains non-finite values")
    return DescriptorSet(ids, data, modality)


def save_descriptor_set(dset: DescriptorSet, path: str | os.PathLike) -> None:
    """Write a descriptor set; load(save(x)) is identity on (ids, dim, data)."""
    header = {
        "magic": DESC_MAGIC,
        "dim": dset.dim,
        "count": dset.count,
        "dtype": "f32le",
        "modality": dset.modality.value,
        "ids": list(dset.ids),
    }
    line = json.dumps(header, separators=(",", ":")).encode("utf-8")
    payload = np.ascontiguousarray(dset.data, dtype="<f4").tobytes()
    try:
        with open(path, "wb") as fh:
            fh.write(line)
            fh.write(b"\n")
            fh.write(payload)
    except OSError as exc:
        raise OSError(f"failed writing descriptor set to {os.fspath(path)!r}: {exc}") from exc


def load_raster(path: str | os.PathLike, kind: RasterKind) -> RasterImage:
    """Load a raster file; NaN payload values become invalid pixels."""
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
    filled = np.where(valid, values, 0.0)
    return RasterImage(filled, valid, kind)


def save_raster(img: RasterImage, path: str | os.PathLike) -> None:
    header = {"magic": RAST_MAGIC, "h": img.height, "w": img.width, "dtype": "f32le"}
    line = json.dumps(header, separators=(",", ":")).encode("utf-8")
    values = np.where(img.valid_mask, img.values, np.nan).astype("<f4")
    try:
        with open(path, "wb") as fh:
            fh.write(line)
            fh.write(b"\n")
            fh.write(values.tobytes())
    except OSError as exc:
        raise OSError(f"failed writing raster to {os.fspath(path)!r}: {exc}") from exc
