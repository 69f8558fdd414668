import numpy as np
import pytest


def random_vessel_mask(rng, shape=(80, 80), n_strokes=4):
    """Union of thick random polylines, a stand-in for a segmented vessel tree."""
    h, w = shape
    mask = np.zeros(shape, dtype=bool)
    ys, xs = np.mgrid[0:h, 0:w]
    for _ in range(n_strokes):
        p = rng.uniform([5, 5], [w - 6, h - 6])
        q = rng.uniform([5, 5], [w - 6, h - 6])
        radius = rng.uniform(0.8, 3.0)
        d = q - p
        t = np.clip(((xs - p[0]) * d[0] + (ys - p[1]) * d[1]) / max(d @ d, 1e-9), 0, 1)
        dist = np.hypot(xs - p[0] - t * d[0], ys - p[1] - t * d[1])
        mask |= dist <= radius
    return mask


@pytest.fixture
def vessel_mask_factory():
    return random_vessel_mask
