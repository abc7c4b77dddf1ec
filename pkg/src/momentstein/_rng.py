"""Counter-based random streams.

Draws are generated in fixed-size blocks; block ``b`` of a stream is a Philox
generator whose counter starts at ``b * 2**64``. Output therefore depends only
on the seed and the draw count, never on how blocks are spread over threads.
"""
from concurrent.futures import ThreadPoolExecutor

import numpy as np

BLOCK = 1 << 16
_MASK = (1 << 64) - 1


def mix_seed(*parts):
    """Hash integers into a 128-bit Philox key (two uint64 words)."""
    words = [int(p) & _MASK for p in parts]
    return np.random.SeedSequence(words).generate_state(2, dtype=np.uint64)


def _block_generator(key, block):
    counter = np.array([0, block, 0, 0], dtype=np.uint64)
    return np.random.Generator(np.random.Philox(key=key, counter=counter))


def uniforms(seed, count, dim=1, *, stream=0, threads=1):
    """``(count, dim)`` uniforms on (0, 1) from the stream ``(seed, stream)``."""
    key = mix_seed(seed, stream)
    nblocks = (count + BLOCK - 1) // BLOCK

    def make(b):
        n = min(BLOCK, count - b * BLOCK)
        u = _block_generator(key, b).random((n, dim))
        # open interval keeps inverse CDFs finite
        return np.clip(u, np.finfo(float).tiny, 1.0 - np.finfo(float).epsneg)

    if nblocks == 0:
        return np.empty((0, dim))
    if threads > 1 and nblocks > 1:
        with ThreadPoolExecutor(max_workers=threads) as pool:
            parts = list(pool.map(make, range(nblocks)))
    else:
        parts = [make(b) for b in range(nblocks)]
    return np.concatenate(parts, axis=0)


def integers(seed, count, high, *, stream=0):
    """``count`` integers uniform on ``[0, high)`` from the stream ``(seed, stream)``."""
    key = mix_seed(seed, stream)
    nblocks = (count + BLOCK - 1) // BLOCK
    parts = [
        _block_generator(key, b).integers(0, high, size=min(BLOCK, count - b * BLOCK))
        for b in range(nblocks)
    ]
    return np.concatenate(parts) if parts else np.empty(0, dtype=np.int64)


def normals(seed, count, dim=1, *, stream=0, threads=1):
    from scipy.special import ndtri

    return ndtri(uniforms(seed, count, dim, stream=stream, threads=threads))
