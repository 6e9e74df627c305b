import json

import numpy as np
import pytest
from hypothesis import given, strategies as st
from numpy.testing import assert_allclose

from rbvpr.descio import load_descriptor_set, load_raster, save_descriptor_set, save_raster
from rbvpr.types import (
    DataError,
    DescriptorSet,
    DimensionError,
    FormatError,
    Modality,
    RasterImage,
    RasterKind,
)

st_seed = st.integers(0, 2**32 - 1)


def make_set(seed: int, count: int = 6, dim: int = 16) -> DescriptorSet:
    rng = np.random.default_rng(seed)
    data = rng.normal(size=(count, dim)).astype(np.float32)
    return DescriptorSet([f"{i:06d}" for i in range(count)], data, Modality.RANGE)


def write_raw(path, header: dict, payload: bytes):
    with open(path, "wb") as fh:
        fh.write(json.dumps(header).encode("utf-8"))
        fh.write(b"\n")
        fh.write(payload)


def test_descriptor_roundtrip_bit_exact(tmp_path):
    dset = make_set(1)
    path = tmp_path / "range.desc"
    save_descriptor_set(dset, path)
    back = load_descriptor_set(path)
    assert back.ids == dset.ids
    assert back.modality == dset.modality
    assert back.data.tobytes() == dset.data.tobytes()


def test_save_load_save_fixed_point(tmp_path):
    dset = make_set(2)
    first = tmp_path / "a.desc"
    second = tmp_path / "b.desc"
    save_descriptor_set(dset, first)
    save_descriptor_set(load_descriptor_set(first), second)
    assert first.read_bytes() == second.read_bytes()


def test_load_normalizes_raw_rows(tmp_path):
    payload = (np.arange(1, 9, dtype="<f4") * 3.0).reshape(2, 4)
    header = {
        "magic": "RBDESC1",
        "dim": 4,
        "count": 2,
        "dtype": "f32le",
        "modality": "range",
        "ids": ["000000", "000001"],
    }
    path = tmp_path / "raw.desc"
    write_raw(path, header, payload.tobytes())
    dset = load_descriptor_set(path)
    norms = np.linalg.norm(dset.data.astype(np.float64), axis=1)
    assert np.abs(norms - 1.0).max() < 1e-6


def test_truncated_payload_reports_offset(tmp_path):
    dset = make_set(3)
    path = tmp_path / "trunc.desc"
    save_descriptor_set(dset, path)
    blob = path.read_bytes()
    path.write_bytes(blob[:-4])
    with pytest.raises(FormatError, match=r"byte"):
        load_descriptor_set(path)


def test_bad_magic(tmp_path):
    path = tmp_path / "bad.desc"
    write_raw(path, {"magic": "WRONG01", "dim": 1, "count": 0, "dtype": "f32le",
                     "modality": "range", "ids": []}, b"")
    with pytest.raises(FormatError, match="magic"):
        load_descriptor_set(path)


def test_bad_header_json(tmp_path):
    path = tmp_path / "nothdr.desc"
    path.write_bytes(b"not json at all\n\x00\x00")
    with pytest.raises(FormatError):
        load_descriptor_set(path)


def test_bad_dtype(tmp_path):
    path = tmp_path / "dtype.desc"
    write_raw(path, {"magic": "RBDESC1", "dim": 1, "count": 1, "dtype": "f64le",
                     "modality": "range", "ids": ["000000"]}, b"\x00" * 8)
    with pytest.raises(FormatError, match="dtype"):
        load_descriptor_set(path)


def test_id_count_mismatch(tmp_path):
    path = tmp_path / "ids.desc"
    write_raw(path, {"magic": "RBDESC1", "dim": 2, "count": 2, "dtype": "f32le",
                     "modality": "range", "ids": ["000000"]},
              np.ones(4, dtype="<f4").tobytes())
    with pytest.raises(FormatError, match="ids"):
        load_descriptor_set(path)


def test_nonfinite_payload(tmp_path):
    payload = np.array([[1.0, np.nan]], dtype="<f4")
    path = tmp_path / "nan.desc"
    write_raw(path, {"magic": "RBDESC1", "dim": 2, "count": 1, "dtype": "f32le",
                     "modality": "range", "ids": ["000000"]}, payload.tobytes())
    with pytest.raises(DataError):
        load_descriptor_set(path)


def test_expect_dim_mismatch(tmp_path):
    dset = make_set(4, dim=8)
    path = tmp_path / "dim.desc"
    save_descriptor_set(dset, path)
    with pytest.raises(DimensionError):
        load_descriptor_set(path, expect_dim=256)


def test_missing_file():
    with pytest.raises(OSError):
        load_descriptor_set("/nonexistent/never.desc")


@given(seed=st_seed, count=st.integers(1, 12), dim=st.integers(2, 64))
def test_descriptor_roundtrip_random(tmp_path_factory, seed, count, dim):
    dset = make_set(seed, count, dim)
    path = tmp_path_factory.mktemp("d") / "x.desc"
    save_descriptor_set(dset, path)
    back = load_descriptor_set(path, expect_dim=dim)
    assert back.ids == dset.ids
    assert back.data.tobytes() == dset.data.tobytes()


def test_raster_roundtrip(tmp_path):
    values = np.arange(12, dtype=np.float64).reshape(3, 4) + 1.0
    valid = values % 2 == 0
    img = RasterImage(values, valid, RasterKind.DEPTH)
    path = tmp_path / "depth.rast"
    save_raster(img, path)
    back = load_raster(path, RasterKind.DEPTH)
    assert back.values.shape == (3, 4)
    assert (back.valid_mask == valid).all()
    assert_allclose(back.values[valid], values[valid])


def test_raster_nan_means_invalid(tmp_path):
    path = tmp_path / "r.rast"
    payload = np.array([[1.0, np.nan]], dtype="<f4")
    write_raw(path, {"magic": "RBRAST1", "h": 1, "w": 2, "dtype": "f32le"}, payload.tobytes())
    img = load_raster(path, RasterKind.RANGE)
    assert img.valid_mask.tolist() == [[True, False]]


def test_raster_truncation(tmp_path):
    path = tmp_path / "t.rast"
    write_raw(path, {"magic": "RBRAST1", "h": 2, "w": 2, "dtype": "f32le"},
              np.ones(3, dtype="<f4").tobytes())
    with pytest.raises(FormatError, match="byte"):
        load_raster(path, RasterKind.BEV)


def test_raster_wrong_magic(tmp_path):
    path = tmp_path / "m.rast"
    write_raw(path, {"magic": "RBDESC1", "h": 1, "w": 1, "dtype": "f32le"},
              np.ones(1, dtype="<f4").tobytes())
    with pytest.raises(FormatError, match="magic"):
        load_raster(path, RasterKind.BEV)
