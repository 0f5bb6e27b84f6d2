import numpy as np
import pytest
from PIL import Image

from extractor_adapter.jobs import ManifestItem


@pytest.fixture
def make_images(tmp_path):
    """Write tiny deterministic PNGs and return manifest items for them."""

    def _make(n, with_text=True):
        items = []
        rng = np.random.default_rng(99)
        for idx in range(n):
            path = tmp_path / f"img{idx:03d}.png"
            pixels = rng.integers(0, 255, size=(8, 8, 3), dtype=np.uint8)
            Image.fromarray(pixels).save(path)
            items.append(
                ManifestItem(
                    item_id=f"item{idx:03d}",
                    image_path=str(path),
                    text=f"product number {idx} with useful properties" if with_text else None,
                )
            )
        return items

    return _make
