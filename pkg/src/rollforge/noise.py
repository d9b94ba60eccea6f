"""Counter-keyed noise draws.

Every stochastic input in the sampler and the trainer is produced by a
freshly seeded numpy generator keyed on (seed, frame_index, level_tag).
Two code paths that request noise for the same key get bit-identical
draws, which makes rollouts reproducible and lets independent
implementations of the same sampler agree exactly.

Batched draws fill row-major, so the first row of a (batch, dim) draw
equals the single-element draw for the same key.  A batch-1 engine
rollout therefore sees the same noise as element 0 of a batched
training rollout.
"""

from __future__ import annotations

import numpy as np


def noise_rng(seed: int, frame_index: int, level_tag: int) -> np.random.Generator:
    """Generator for one (frame, level) noise injection of one stream."""
    return np.random.default_rng((int(seed), int(frame_index), int(level_tag)))


def frame_noise(seed: int, frame_index: int, level_tag: int, batch: int, dim: int) -> np.ndarray:
    """Standard normal draw of shape (batch, dim), float64."""
    rng = noise_rng(seed, frame_index, level_tag)
    return rng.standard_normal((batch, dim))
