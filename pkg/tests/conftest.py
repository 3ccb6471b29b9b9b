import numpy as np
import pytest

from lockmark.fixtures import make_dark_logo, make_landscape, write_dataset
from lockmark.raster import RgbaImage, WatermarkLogo


@pytest.fixture(scope="session")
def landscape():
    return make_landscape()


@pytest.fixture(scope="session")
def dark_logo():
    return make_dark_logo()


@pytest.fixture(scope="session")
def small_fixture_set(tmp_path_factory):
    """12-image fixture dataset with masks, shared across tests."""
    root = tmp_path_factory.mktemp("fixture12")
    dataset, masks_dir, templates_path = write_dataset(root, count=12, seed=7)
    return {
        "root": root,
        "dataset": dataset,
        "masks_dir": masks_dir,
        "templates": templates_path,
        "labels_csv": root / "labels.csv",
        "logo_png": root / "logo.png",
    }


def random_rgba(rng: np.random.Generator, w: int, h: int, opaque: bool = False) -> RgbaImage:
    arr = rng.integers(0, 256, size=(h, w, 4)).astype(np.uint8)
    if opaque:
        arr[:, :, 3] = 255
    return RgbaImage(arr)


def logo_from_array(arr: np.ndarray, logo_id: str = "test") -> WatermarkLogo:
    return WatermarkLogo(RgbaImage(arr.astype(np.uint8)), logo_id, "deadbeef")
