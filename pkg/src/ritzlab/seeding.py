"""Named random streams derived from one root seed.

Each consumer draws from its own stream, so changing one budget (say,
the number of inner iterations) never shifts the randomness seen by the
others.
"""

from __future__ import annotations

import numpy as np

_STREAMS = {
    "init": 0,
    "init-test": 1,
    "quadrature-outer": 2,
    "quadrature-inner": 3,
    "error-probe": 4,
    "data": 5,
    "reinit": 6,
}


def rng_stream(seed: int, name: str) -> np.random.Generator:
    try:
        idx = _STREAMS[name]
    except KeyError:
        raise ValueError(f"unknown stream {name!r}") from None
    return np.random.default_rng(np.random.SeedSequence((int(seed), idx)))
