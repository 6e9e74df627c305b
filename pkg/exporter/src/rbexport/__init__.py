"""Descriptor exporter: pretrained-backbone embeddings for the retrieval engine.

The only coupling to the retrieval engine is the file format. This package
reads raster (``RBRAST1``) and image inputs, embeds them with a ResNet50 +
GeM + linear-projection network, and writes descriptor sets (``RBDESC1``)
that the engine loads unchanged.
"""

from .export import (
    MODALITIES,
    ExportError,
    ExportJob,
    ExportResult,
    ValidationReport,
    discover_frames,
    export_descriptors,
    validate_export,
)
from .formats import FormatError, read_descriptor_file, read_raster, write_descriptor_file
from .model import GeMPool, GlobalDescriptorNet, build_embedder

__all__ = [
    "MODALITIES",
    "ExportError",
    "ExportJob",
    "ExportResult",
    "FormatError",
    "GeMPool",
    "GlobalDescriptorNet",
    "ValidationReport",
    "build_embedder",
    "discover_frames",
    "export_descriptors",
    "read_descriptor_file",
    "read_raster",
    "validate_export",
    "write_descriptor_file",
]
