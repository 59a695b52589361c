"""Counter-based random streams keyed by a master seed and a replicate index."""

from __future__ import annotations

import numpy as np

__all__ = ["make_rng"]


def make_rng(seed, replicate: int | None = None, stream: int | None = None) -> np.random.Generator:
    """Philox generator keyed by ``(seed, replicate, stream)``.

    Streams with different keys are independent, so replicates can be run in
    any order or in parallel without changing their draws.  A ready
    ``Generator`` is passed through unchanged.
    """
    if isinstance(seed, np.random.Generator):
        return seed
    key = tuple(int(k) for k in (replicate, stream) if k is not None)
    if stream is not None and replicate is None:
        key = (0, int(stream))
    ss = np.random.SeedSequence(int(seed), spawn_key=key)
    return np.random.Generator(np.random.Philox(ss))
