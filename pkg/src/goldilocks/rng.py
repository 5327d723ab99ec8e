"""Named random substreams derived from a single master seed.

Every stochastic piece of the pipeline asks for a generator keyed by
``(master_seed, *path)``. Streams are independent of the order in which
they are requested, so parallel and sequential runs draw identical numbers.
"""

from __future__ import annotations

import hashlib

import numpy as np

_MASK64 = (1 << 64) - 1


def _key_word(part: int | str) -> int:
    if isinstance(part, (int, np.integer)):
        return int(part) & _MASK64
    digest = hashlib.sha256(str(part).encode("utf-8")).digest()
    return int.from_bytes(digest[:8], "little")


def substream(seed: int, *path: int | str) -> np.random.Generator:
    """Return a PCG64 generator for the stream ``path`` under ``seed``.

    ``path`` elements may be integers (pixel index, replicate number) or
    strings naming a stage (``"flood"``, ``"evi"``).
    """
    ss = np.random.SeedSequence(
        entropy=int(seed) & _MASK64,
        spawn_key=tuple(_key_word(p) for p in path),
    )
    return np.random.Generator(np.random.PCG64(ss))
