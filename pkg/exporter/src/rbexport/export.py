"""Batch export of global descriptors and validation of the output files.

Frames are discovered from a directory, embedded in batches, and written as
one descriptor file at the end. A frame that cannot be decoded is skipped
and listed in a sidecar error report next to the output; it never aborts
the job.
"""

from __future__ import annotations

import json
import os
from dataclasses import dataclass, field

import numpy as np
import torch
import torch.nn.functional as F
from PIL import Image, UnidentifiedImageError

from .errors import ExportError, FormatError
from .formats import read_descriptor_file, read_raster, write_descriptor_file
from .model import build_embedder

MODALITIES = ("rgb", "range", "camera_bev", "lidar_bev")
IMAGE_SUFFIXES = (".png", ".jpg", ".jpeg")
RASTER_SUFFIX = ".rast"
# preprocessing names raster files <frame>_range.rast / <frame>_bev.rast and
# writes both kinds into one directory; the modality selects its own kind
FRAME_ID_SUFFIXES = ("_range", "_bev")
MODALITY_RASTER_SUFFIX = {"range": "_range", "camera_bev": "_bev", "lidar_bev": "_bev"}

IMAGENET_MEAN = np.array([0.485, 0.456, 0.406], dtype=np.float32)
IMAGENET_STD = np.array([0.229, 0.224, 0.225], dtype=np.float32)

EXPECTED_DIM = 256
NORM_TOL = 1e-6


@dataclass(frozen=True)
class ExportJob:
    input_dir: str
    modality: str
    weights: str
    output_path: str
    batch_size: int = 8
    image_size: int = 224
    descriptor_dim: int = EXPECTED_DIM

    def __post_init__(self):
        if self.modality not in MODALITIES:
            raise ExportError(
                f"unknown modality {self.modality!r}, expected one of {MODALITIES}"
            )
        if self.batch_size < 1:
            raise ExportError(f"batch_size must be >= 1, got {self.batch_size}")
        if self.image_size < 32:
            raise ExportError(f"image_size must be >= 32, got {self.image_size}")
        if self.descriptor_dim < 1:
            raise ExportError(f"descriptor_dim must be >= 1, got {self.descriptor_dim}")


@dataclass(frozen=True)
class ExportResult:
    output_path: str
    count: int
    ids: tuple[str, ...]
    skipped: tuple[tuple[str, str], ...] = ()
    error_report_path: str | None = None


def frame_id_for(path: str, modality: str) -> str:
    stem = os.path.splitext(os.path.basename(path))[0]
    if modality != "rgb":
        for suffix in FRAME_ID_SUFFIXES:
            if stem.endswith(suffix):
                return stem[: -len(suffix)]
    return stem


def _raster_matches(stem: str, modality: str) -> bool:
    # a stem carrying another modality's suffix belongs to that modality;
    # unsuffixed stems are accepted for any raster modality
    expected = MODALITY_RASTER_SUFFIX[modality]
    if stem.endswith(expected):
        return True
    return not any(stem.endswith(s) for s in FRAME_ID_SUFFIXES)


def discover_frames(input_dir: str, modality: str) -> list[tuple[str, str]]:
    """(frame_id, path) pairs sorted by frame id; duplicate ids are an error
    because the output file must key every row uniquely."""
    if not os.path.isdir(input_dir):
        raise FileNotFoundError(f"input directory not found: {input_dir}")
    suffixes = IMAGE_SUFFIXES if modality == "rgb" else (RASTER_SUFFIX,)
    frames: list[tuple[str, str]] = []
    for name in sorted(os.listdir(input_dir)):
        stem, ext = os.path.splitext(name)
        if ext.lower() not in suffixes:
            continue
        if modality != "rgb" and not _raster_matches(stem, modality):
            continue
        path = os.path.join(input_dir, name)
        frames.append((frame_id_for(path, modality), path))
    frames.sort()
    for (id_a, path_a), (id_b, path_b) in zip(frames, frames[1:]):
        if id_a == id_b:
            raise ExportError(
                f"duplicate frame id {id_a!r}: {path_a} and {path_b}"
            )
    return frames


def _image_tensor(path: str, image_size: int) -> torch.Tensor:
    with Image.open(path) as img:
        rgb = img.convert("RGB").resize((image_size, image_size), Image.BILINEAR)
    arr = np.asarray(rgb, dtype=np.float32) / 255.0
    arr = (arr - IMAGENET_MEAN) / IMAGENET_STD
    return torch.from_numpy(arr.transpose(2, 0, 1))


def _raster_tensor(path: str, image_size: int) -> torch.Tensor:
    values, valid = read_raster(path)
    peak = values[valid].max() if valid.any() else 0.0
    if peak > 0:
        values = values / peak
    t = torch.from_numpy(values.astype(np.float32))[None, None]
    t = F.interpolate(t, size=(image_size, image_size), mode="bilinear", align_corners=False)
    return t[0].expand(3, -1, -1).contiguous()


def load_frame_tensor(path: str, modality: str, image_size: int) -> torch.Tensor:
    if modality == "rgb":
        return _image_tensor(path, image_size)
    return _raster_tensor(path, image_size)


def export_descriptors(job: ExportJob) -> ExportResult:
    """Embed every decodable frame and write one descriptor file.

    Rows are re-normalized in float64 before the float32 cast so stored
    norms sit within the engine's load tolerance.
    """
    frames = discover_frames(job.input_dir, job.modality)
    net = build_embedder(job.weights, job.descriptor_dim)

    kept_ids: list[str] = []
    rows: list[np.ndarray] = []
    skipped: list[tuple[str, str]] = []
    batch: list[tuple[str, str, torch.Tensor]] = []

    def flush():
        if not batch:
            return
        with torch.no_grad():
            out = net(torch.stack([t for _, _, t in batch])).numpy().astype(np.float64)
        norms = np.linalg.norm(out, axis=1)
        for (fid, path, _), vec, norm in zip(batch, out, norms):
            if norm == 0.0:
                skipped.append((path, "zero-norm descriptor"))
                continue
            kept_ids.append(fid)
            rows.append((vec / norm).astype(np.float32))
        batch.clear()

    for fid, path in frames:
        try:
            tensor = load_frame_tensor(path, job.modality, job.image_size)
        except (OSError, UnidentifiedImageError, FormatError, ValueError) as exc:
            skipped.append((path, f"{type(exc).__name__}: {exc}"))
            continue
        batch.append((fid, path, tensor))
        if len(batch) >= job.batch_size:
            flush()
    flush()

    data = np.vstack(rows) if rows else np.zeros((0, job.descriptor_dim), dtype=np.float32)
    write_descriptor_file(job.output_path, kept_ids, data, job.modality)

    report_path = None
    if skipped:
        report_path = job.output_path + ".errors.json"
        with open(report_path, "w", encoding="utf-8") as fh:
            json.dump(
                [{"file": f, "reason": r} for f, r in skipped],
                fh,
                indent=2,
            )
    return ExportResult(
        job.output_path, len(kept_ids), tuple(kept_ids), tuple(skipped), report_path
    )


@dataclass(frozen=True)
class ValidationReport:
    """Outcome of checking one descriptor file against the load contract."""

    path: str
    ok: bool
    count: int | None
    dim: int | None
    problems: tuple[str, ...] = field(default=())

    def summary(self) -> str:
        if self.ok:
            return f"OK: {self.count} descriptors of dim {self.dim} in {self.path}"
        lines = [f"FAILED: {self.path}"]
        lines.extend(f"  {p}" for p in self.problems)
        return "\n".join(lines)


def validate_export(path: str) -> ValidationReport:
    """Check magic, dim, payload size, id uniqueness, and norm bounds.

    Structural failures (bad magic, truncation) end the check immediately;
    record-level problems are collected with the first offender identified
    by record index and id.
    """
    if not os.path.isfile(path):
        raise FileNotFoundError(f"descriptor file not found: {path}")
    try:
        parsed = read_descriptor_file(path)
    except FormatError as exc:
        reason = str(exc)
        kind = "truncation failure" if "truncation" in reason else "format failure"
        return ValidationReport(path, False, None, None, (f"{kind}: {reason}",))

    problems: list[str] = []
    if parsed.dim != EXPECTED_DIM:
        problems.append(
            f"dimension failure: header dim {parsed.dim}, expected {EXPECTED_DIM}"
        )
    seen: dict[str, int] = {}
    for i, fid in enumerate(parsed.ids):
        if fid in seen:
            problems.append(
                f"duplicate id failure: record {i} repeats id {fid!r}"
                f" (first at record {seen[fid]})"
            )
            break
        seen[fid] = i
    data = parsed.data.astype(np.float64)
    if not np.isfinite(data).all():
        bad = int(np.argwhere(~np.isfinite(data).all(axis=1))[0, 0])
        problems.append(
            f"value failure: record {bad} (id {parsed.ids[bad]!r}) has non-finite entries"
        )
    elif parsed.count:
        norms = np.linalg.norm(data, axis=1)
        off = np.abs(norms - 1.0) > NORM_TOL
        if off.any():
            bad = int(np.argmax(off))
            problems.append(
                f"norm failure: record {bad} (id {parsed.ids[bad]!r})"
                f" has norm {norms[bad]!r}, outside 1 +/- {NORM_TOL}"
            )
    return ValidationReport(path, not problems, parsed.count, parsed.dim, tuple(problems))
