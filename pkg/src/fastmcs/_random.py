"""Counter-based random streams.

Every stochastic quantity in the package is drawn from a Philox stream keyed
by a tuple of non-negative integers, e.g. ``(seed, STREAM_EM, path_index)``.
A stream is consumed strictly in order, so step ``s`` of path ``k`` is always
the ``s``-th draw of the ``(seed, k)`` stream no matter how the draws are
chunked or which worker evaluates the path.
"""

from __future__ import annotations

import numpy as np

# Stream tags separating independent uses of the same user seed.
STREAM_EM = 1
STREAM_LHS = 2
STREAM_DECORRELATE = 3
STREAM_SRS = 4
STREAM_RERUN = 5
STREAM_VALIDATE = 6


def check_seed(seed) -> int:
    if isinstance(seed, (bool, np.bool_)) or not isinstance(seed, (int, np.integer)):
        raise TypeError(f"seed must be a non-negative integer, got {seed!r}")
    if seed < 0:
        raise ValueError(f"seed must be non-negative, got {seed}")
    return int(seed)


def stream(*key: int) -> np.random.Generator:
    """Return a fresh generator for the given integer key."""
    entropy = [check_seed(k) for k in key]
    return np.random.Generator(np.random.Philox(np.random.SeedSequence(entropy)))


def derive_seed(*key: int) -> int:
    """Collapse a key tuple into a single 63-bit seed."""
    entropy = [check_seed(k) for k in key]
    return int(np.random.SeedSequence(entropy).generate_state(1, dtype=np.uint64)[0] >> 1)
