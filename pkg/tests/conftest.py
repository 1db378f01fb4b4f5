import numpy as np
import pytest


@pytest.fixture
def rng():
    return np.random.default_rng(20240811)


def random_mask(rng, max_side=64, min_side=3):
    """Random boolean mask with at least one true pixel."""
    h = int(rng.integers(min_side, max_side + 1))
    w = int(rng.integers(min_side, max_side + 1))
    density = rng.uniform(0.2, 0.95)
    bitmap = rng.random((h, w)) < density
    if not bitmap.any():
        bitmap[h // 2, w // 2] = True
    return bitmap
