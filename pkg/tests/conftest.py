import numpy as np
import pytest
from PIL import Image


def synthesize_plates(directory, count=4, size=96, seed=0):
    """Small procedural night-ish plates for pipeline tests."""
    directory.mkdir(parents=True, exist_ok=True)
    rng = np.random.default_rng(seed)
    paths = []
    for i in range(count):
        yy, xx = np.mgrid[0:size, 0:size].astype(float) / size
        base = np.stack([
            30 + 60 * xx + 20 * np.sin(8 * yy * (i + 1)),
            25 + 50 * yy,
            40 + 40 * np.cos(5 * xx + i),
        ], axis=-1)
        noise = rng.normal(0, 6, base.shape)
        img = np.clip(base + noise, 0, 255).astype(np.uint8)
        path = directory / f"plate_{i:02d}.png"
        Image.fromarray(img).save(path)
        paths.append(path)
    return paths


@pytest.fixture(scope="session")
def clean_dir(tmp_path_factory):
    directory = tmp_path_factory.mktemp("clean_plates")
    synthesize_plates(directory)
    return directory
