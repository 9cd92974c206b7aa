"""Named, counter-derived random substreams.

Every random draw in the package descends from one root seed.  A stream is
addressed by a path of keys (strings or integers), e.g. ``("mc", 17)`` for
Monte-Carlo run 17, so that re-running a subset of runs reproduces exactly
the same numbers.
"""

from __future__ import annotations

import zlib

import numpy as np

__all__ = ["substream", "run_streams", "as_generator"]


def _key_to_int(key: int | str) -> int:
    if isinstance(key, (int, np.integer)):
        if key < 0:
            raise ValueError("substream keys must be non-negative")
        return int(key)
    return zlib.crc32(str(key).encode("utf-8"))


def substream(seed: int, *keys: int | str) -> np.random.Generator:
    """Return the generator addressed by ``keys`` under root ``seed``."""
    ss = np.random.SeedSequence(entropy=int(seed), spawn_key=tuple(_key_to_int(k) for k in keys))
    return np.random.Generator(np.random.PCG64(ss))


def run_streams(seed: int, name: str, runs: int, start: int = 0) -> list[np.random.Generator]:
    """One independent generator per run index ``start .. start+runs-1``."""
    return [substream(seed, name, i) for i in range(start, start + runs)]


def as_generator(rng: np.random.Generator | int | None) -> np.random.Generator:
    if isinstance(rng, np.random.Generator):
        return rng
    return np.random.default_rng(rng)
