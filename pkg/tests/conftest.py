import numpy as np
import pytest
from PIL import Image


@pytest.fixture
def rng():
    return np.random.default_rng(1234)


def write_image_tree(root, counts, size=(12, 10), seed=0, color_by_class=True):
    """Create root/<class>/<n>.png trees of tiny random RGB images."""
    rng = np.random.default_rng(seed)
    classes = sorted(counts)
    for ci, cls in enumerate(classes):
        d = root / cls
        d.mkdir(parents=True)
        for i in range(counts[cls]):
            arr = rng.integers(0, 256, size=(size[0], size[1], 3), dtype=np.uint8)
            if color_by_class:
                arr[..., ci % 3] = np.minimum(255, arr[..., ci % 3] // 2 + 128)
            Image.fromarray(arr, mode="RGB").save(d / f"img{i:04d}.png")
    return root


@pytest.fixture
def small_tree(tmp_path):
    return write_image_tree(tmp_path / "data", {"alpha": 4, "beta": 4, "gamma": 4})


@pytest.fixture(scope="session")
def tree_473(tmp_path_factory):
    """Class-foldered dummy tree with 473 files total, mirroring the
    reference dataset's size."""
    root = tmp_path_factory.mktemp("tree473") / "data"
    return write_image_tree(root, {"anthracnose": 160, "fruitfly": 157, "healthy": 156})
