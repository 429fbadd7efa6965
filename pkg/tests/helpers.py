"""Shared test data generators."""

import numpy as np


def random_mask(rng, h, w, kind=None):
    """Random mask with a mix of blobs, speckle and edge-touching shapes."""
    kind = kind if kind is not None else rng.integers(0, 4)
    if kind == 0:
        return rng.random((h, w)) < rng.uniform(0.05, 0.6)
    yy, xx = np.mgrid[0:h, 0:w]
    m = np.zeros((h, w), bool)
    for _ in range(rng.integers(1, 4)):
        cy, cx = rng.uniform(-2, h + 2), rng.uniform(-2, w + 2)
        r = rng.uniform(0.5, max(1.0, max(h, w) / 2))
        m |= (yy - cy) ** 2 + (xx - cx) ** 2 <= r * r
    if kind == 2:
        m ^= rng.random((h, w)) < 0.05
    if kind == 3:
        r0, c0 = rng.integers(0, h), rng.integers(0, w)
        m[r0:, c0] = True
    return m
