"""Reproducible random streams keyed by (seed, indices...)."""

from typing import Optional

import numpy as np


def stream(seed: Optional[int], *keys: int) -> np.random.Generator:
    """Independent generator for one (seed, key...) tuple.

    Equal keys always give the same stream, so results do not depend on
    which worker processes a batch.
    """
    if seed is None:
        return np.random.default_rng()
    entropy = [int(seed)] + [int(k) for k in keys]
    return np.random.default_rng(np.random.SeedSequence(entropy))


def complex_normal(rng: np.random.Generator, shape, variance: float = 1.0) -> np.ndarray:
    """Circularly-symmetric complex Gaussian samples, `variance` per complex entry."""
    scale = np.sqrt(variance / 2.0)
    return scale * (rng.standard_normal(shape) + 1j * rng.standard_normal(shape))
