"""Counter-based random number streams for reproducible parallel simulation.

Every stream is a pure function of ``(global_seed, stream_id)``: replaying a
stream yields identical values no matter how other streams were consumed, so
simulations can run in any order or in parallel without changing results.
Streams are backed by the Philox counter-based bit generator, keyed directly
with the two 64-bit words, which guarantees statistical independence between
distinct ``(seed, stream_id)`` pairs.
"""

from __future__ import annotations

import numpy as np

__all__ = [
    "stream",
    "generation_stream",
    "posterior_stream",
    "tiebreak_stream",
    "POSTERIOR_OFFSET",
    "TIEBREAK_OFFSET",
]

_MASK64 = (1 << 64) - 1

# Stream-id namespaces for the three random choices made per simulation.
POSTERIOR_OFFSET = 1 << 62
TIEBREAK_OFFSET = 1 << 63


def stream(global_seed: int, stream_id: int) -> np.random.Generator:
    """Return the generator for stream ``(global_seed, stream_id)``."""
    key = np.array([global_seed & _MASK64, stream_id & _MASK64], dtype=np.uint64)
    return np.random.Generator(np.random.Philox(key=key))


def generation_stream(global_seed: int, sim_index: int) -> np.random.Generator:
    """Stream used to draw the prior parameter and the dataset of one simulation."""
    return stream(global_seed, sim_index)


def posterior_stream(global_seed: int, sim_index: int) -> np.random.Generator:
    """Stream used by the posterior sampler of one simulation."""
    return stream(global_seed, sim_index + POSTERIOR_OFFSET)


def tiebreak_stream(global_seed: int, sim_index: int) -> np.random.Generator:
    """Stream used to break rank ties of one simulation."""
    return stream(global_seed, sim_index + TIEBREAK_OFFSET)
