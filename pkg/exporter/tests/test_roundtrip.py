"""Cross-component round trip: exported files must load in the retrieval
engine unchanged. The only coupling exercised here is the file format."""

import numpy as np
import pytest

pytest.importorskip("torch")
pytest.importorskip("rbexport")
descio = pytest.importorskip("rbvpr.descio")

from rbvpr.types import Modality

from rbexport.export import ExportJob, export_descriptors


def _export(tmp_path, modality):
    job = ExportJob(
        input_dir=str(tmp_path),
        modality=modality,
        weights="seed:0",
        output_path=str(tmp_path / "out.desc"),
        batch_size=2,
        image_size=64,
    )
    return export_descriptors(job)


def _payload_norms(path):
    raw = open(path, "rb").read()
    payload_at = raw.find(b"\n") + 1
    data = np.frombuffer(raw, dtype="<f4", offset=payload_at).reshape(-1, 256)
    return np.linalg.norm(data.astype(np.float64), axis=1)


def test_five_frame_rgb_export_loads_in_engine(tmp_path, write_png):
    for i in range(5):
        write_png(f"{i:06d}.png", seed=i)
    result = _export(tmp_path, "rgb")
    assert result.count == 5

    dset = descio.load_descriptor_set(result.output_path, expect_dim=256)
    assert dset.count == 5 and dset.dim == 256
    assert dset.modality is Modality.RGB
    assert tuple(dset.ids) == tuple(f"{i:06d}" for i in range(5))
    assert len(set(dset.ids)) == 5

    # stored rows are unit norm before the engine's own re-normalization
    assert np.abs(_payload_norms(result.output_path) - 1.0).max() <= 1e-6


def test_five_frame_raster_export_loads_in_engine(tmp_path, write_raster_file):
    rng = np.random.default_rng(3)
    for i in range(5):
        values = rng.uniform(1.0, 40.0, size=(12, 18))
        values[rng.random((12, 18)) < 0.25] = np.nan
        write_raster_file(f"{i:06d}_bev.rast", values)
    result = _export(tmp_path, "lidar_bev")
    assert result.count == 5

    dset = descio.load_descriptor_set(result.output_path, expect_dim=256)
    assert dset.modality is Modality.LIDAR_BEV
    assert tuple(dset.ids) == tuple(f"{i:06d}" for i in range(5))
    assert np.abs(_payload_norms(result.output_path) - 1.0).max() <= 1e-6


def test_engine_rasters_feed_the_exporter(tmp_path):
    """Rasters written by the engine's own serializer decode identically
    through the exporter's independent reader."""
    from rbvpr.types import RasterImage, RasterKind

    from rbexport.formats import read_raster

    rng = np.random.default_rng(4)
    values = rng.uniform(0.5, 20.0, size=(9, 14))
    valid = rng.random((9, 14)) < 0.7
    values = np.where(valid, values, 0.0)
    path = tmp_path / "000000_range.rast"
    descio.save_raster(RasterImage(values, valid, RasterKind.RANGE), path)

    got_values, got_valid = read_raster(path)
    assert np.array_equal(got_valid, valid)
    assert np.allclose(got_values[valid], values[valid], atol=1e-6)
    assert (got_values[~valid] == 0.0).all()
