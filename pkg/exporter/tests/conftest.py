import numpy as np
import pytest

pytest.importorskip("torch")
pytest.importorskip("rbexport")

from fixturelib import raster_bytes


@pytest.fixture
def write_raster_file(tmp_path):
    def _write(name, values, valid=None):
        values = np.asarray(values, dtype=np.float64)
        if valid is None:
            valid = np.isfinite(values)
        path = tmp_path / name
        path.write_bytes(raster_bytes(values, np.asarray(valid, dtype=bool)))
        return str(path)

    return _write


@pytest.fixture
def write_png(tmp_path):
    from PIL import Image

    def _write(name, seed=0, size=(40, 30)):
        rng = np.random.default_rng(seed)
        arr = rng.integers(0, 256, size=(size[1], size[0], 3), dtype=np.uint8)
        path = tmp_path / name
        Image.fromarray(arr).save(path)
        return str(path)

    return _write
