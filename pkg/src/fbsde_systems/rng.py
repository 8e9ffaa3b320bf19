"""Counter-based normal variates (Philox4x32-10 + Box-Muller).

Every Brownian increment is a pure function of ``(seed, path, step, component)``,
so path ``m`` sees the same noise whatever the path count, chunking or worker
count used to produce it.
"""

from __future__ import annotations

import numpy as np

_M0 = np.uint64(0xD2511F53)
_M1 = np.uint64(0xCD9E8D57)
_W0 = np.uint64(0x9E3779B9)
_W1 = np.uint64(0xBB67AE85)
_MASK = np.uint64(0xFFFFFFFF)
_SHIFT = np.uint64(32)

# stream ids keep independent uses of one seed apart
BROWNIAN_STREAM = 0
LAUNCH_STREAM = 1


def philox4x32(counters: np.ndarray, key: tuple[int, int], rounds: int = 10) -> np.ndarray:
    """Apply the Philox4x32 bijection to an ``(n, 4)`` array of 32-bit counters."""
    ctr = np.asarray(counters, dtype=np.uint64) & _MASK
    if ctr.ndim != 2 or ctr.shape[1] != 4:
        raise ValueError("counters must have shape (n, 4)")
    c0, c1, c2, c3 = (ctr[:, i].copy() for i in range(4))
    k0 = np.uint64(key[0] & 0xFFFFFFFF)
    k1 = np.uint64(key[1] & 0xFFFFFFFF)
    for r in range(rounds):
        p0 = c0 * _M0
        p1 = c2 * _M1
        c0, c1, c2, c3 = (
            (p1 >> _SHIFT) ^ c1 ^ k0,
            p1 & _MASK,
            (p0 >> _SHIFT) ^ c3 ^ k1,
            p0 & _MASK,
        )
        if r + 1 < rounds:
            k0 = (k0 + _W0) & _MASK
            k1 = (k1 + _W1) & _MASK
    return np.stack([c0, c1, c2, c3], axis=1).astype(np.uint32)


def _seed_key(seed: int) -> tuple[int, int]:
    seed = int(seed)
    if seed < 0 or seed >= 2**64:
        raise ValueError(f"seed must be in [0, 2**64), got {seed}")
    return seed & 0xFFFFFFFF, seed >> 32


def _uniform_open(bits: np.ndarray) -> np.ndarray:
    # (bits + 0.5) / 2**32 lies strictly inside (0, 1)
    return (bits.astype(np.float64) + 0.5) * 2.0**-32


def standard_normals(seed: int, paths: np.ndarray, count: int, stream: int = BROWNIAN_STREAM) -> np.ndarray:
    """Return ``(len(paths), count)`` standard normals.

    Draw ``j`` of path ``m`` depends only on ``(seed, stream, m, j)``.
    """
    paths = np.asarray(paths, dtype=np.uint64)
    n_blocks = -(-count // 4)
    if n_blocks >= 2**32:
        raise ValueError("too many draws per path")
    blocks = np.arange(n_blocks, dtype=np.uint64)
    ctr = np.empty((paths.size, n_blocks, 4), dtype=np.uint64)
    ctr[:, :, 0] = blocks[None, :]
    ctr[:, :, 1] = np.uint64(stream)
    ctr[:, :, 2] = (paths & _MASK)[:, None]
    ctr[:, :, 3] = (paths >> _SHIFT)[:, None]
    bits = philox4x32(ctr.reshape(-1, 4), _seed_key(seed)).reshape(paths.size, n_blocks, 4)
    u = _uniform_open(bits)
    radius_a = np.sqrt(-2.0 * np.log(u[..., 0]))
    radius_b = np.sqrt(-2.0 * np.log(u[..., 2]))
    angle_a = 2.0 * np.pi * u[..., 1]
    angle_b = 2.0 * np.pi * u[..., 3]
    z = np.empty_like(u)
    z[..., 0] = radius_a * np.cos(angle_a)
    z[..., 1] = radius_a * np.sin(angle_a)
    z[..., 2] = radius_b * np.cos(angle_b)
    z[..., 3] = radius_b * np.sin(angle_b)
    return z.reshape(paths.size, 4 * n_blocks)[:, :count]


def brownian_increments(seed: int, paths: np.ndarray, n_steps: int, dim: int, dt: float) -> np.ndarray:
    """Brownian increments of shape ``(len(paths), n_steps, dim)`` with variance ``dt``.

    Component ``i`` of step ``k`` is draw ``k * dim + i`` of the path's stream.
    """
    z = standard_normals(seed, paths, n_steps * dim)
    return z.reshape(-1, n_steps, dim) * np.sqrt(dt)
