import os
from pathlib import Path

import numpy as np
import pytest


def pytest_runtest_logreport(report):
    """One visible pass/fail line per acceptance criterion."""
    if report.when == "call" and "test_acceptance.py" in report.nodeid:
        name = report.nodeid.split("::")[-1].removeprefix("test_")
        outcome = "PASS" if report.passed else "FAIL"
        print(f"\nACCEPTANCE {name}: {outcome}")

CANONICAL_FILES = [
    "train-images-idx3-ubyte.gz",
    "train-labels-idx1-ubyte.gz",
    "t10k-images-idx3-ubyte.gz",
    "t10k-labels-idx1-ubyte.gz",
]


def _data_root() -> Path | None:
    env = os.environ.get("FAIRSET_DATA_DIR")
    candidates = [Path(env)] if env else []
    candidates += [Path("data"), Path.home() / "data", Path("/root/data")]
    for c in candidates:
        if c.is_dir():
            return c
    return None


def _dataset_dir(name: str) -> Path:
    root = _data_root()
    if root is None or not all((root / name / f).exists() for f in CANONICAL_FILES):
        pytest.skip(
            f"canonical {name} files not found; run scripts/fetch_data.py "
            "or point FAIRSET_DATA_DIR at a directory holding them"
        )
    return root / name


@pytest.fixture(scope="session")
def fashion_dir() -> Path:
    return _dataset_dir("fashion-mnist")


@pytest.fixture(scope="session")
def mnist_dir() -> Path:
    return _dataset_dir("mnist")


@pytest.fixture()
def rng():
    return np.random.default_rng(0)


def make_blob_images(rng, n, label_of=None):
    """Random 28x28 uint8 images with a bright square whose size tracks the label."""
    images = np.zeros((n, 28, 28), dtype=np.uint8)
    labels = np.zeros(n, dtype=np.uint8)
    for i in range(n):
        lab = (i % 10) if label_of is None else label_of(i)
        labels[i] = lab
        size = 6 + lab
        r = int(rng.integers(0, 28 - size))
        c = int(rng.integers(0, 28 - size))
        images[i, r : r + size, c : c + size] = rng.integers(100, 255, (size, size))
    return images, labels


@pytest.fixture()
def synthetic_sets(rng):
    """A small train/test pair with no exact overlap, used across pipeline tests."""
    from fairset.idx import ImageSet

    tr_img, tr_lab = make_blob_images(rng, 200)
    te_img, te_lab = make_blob_images(rng, 60)
    return ImageSet(tr_img, tr_lab), ImageSet(te_img, te_lab)


def make_striped_images(rng, n, vertical_share=0.0):
    """Class k = bright stripe at rows (or columns) 2k..2k+2 over pixel noise.

    Learnable but noisy; a vertical share gives the test split a mode absent
    from training, so memorizers cannot generalize to it.
    """
    labels = (np.arange(n) % 10).astype(np.uint8)
    images = rng.integers(0, 200, (n, 28, 28)).astype(np.uint8)
    for i in range(n):
        band = slice(labels[i] * 2, labels[i] * 2 + 3)
        if rng.random() < vertical_share:
            images[i, :, band] = 255
        else:
            images[i, band, :] = 255
    return images, labels
