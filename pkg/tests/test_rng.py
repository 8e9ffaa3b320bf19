from __future__ import annotations

import numpy as np
import pytest

from fbsde_systems.rng import LAUNCH_STREAM, brownian_increments, philox4x32, standard_normals

# Random123 known-answer vectors for philox4x32-10
KAT = [
    ((0, 0, 0, 0), (0, 0), (0x6627E8D5, 0xE169C58D, 0xBC57AC4C, 0x9B00DBD8)),
    ((0xFFFFFFFF,) * 4, (0xFFFFFFFF, 0xFFFFFFFF), (0x408F276D, 0x41C83B0E, 0xA20BC7C6, 0x6D5451FD)),
    (
        (0x243F6A88, 0x85A308D3, 0x13198A2E, 0x03707344),
        (0xA4093822, 0x299F31D0),
        (0xD16CFE09, 0x94FDCCEB, 0x5001E420, 0x24126EA1),
    ),
]


@pytest.mark.parametrize("ctr,key,expected", KAT)
def test_philox_known_answers(ctr, key, expected):
    out = philox4x32(np.array([ctr], dtype=np.uint64), key)
    assert tuple(int(v) for v in out[0]) == expected


def test_draws_do_not_depend_on_path_count():
    small = brownian_increments(7, np.arange(10, dtype=np.uint64), 5, 2, 0.1)
    large = brownian_increments(7, np.arange(1000, dtype=np.uint64), 5, 2, 0.1)
    np.testing.assert_array_equal(small, large[:10])


def test_path_subsets_are_consistent():
    full = standard_normals(3, np.arange(50, dtype=np.uint64), 9)
    part = standard_normals(3, np.arange(20, 30, dtype=np.uint64), 9)
    np.testing.assert_array_equal(full[20:30], part)


def test_streams_and_seeds_differ():
    paths = np.arange(100, dtype=np.uint64)
    a = standard_normals(1, paths, 4)
    assert not np.allclose(a, standard_normals(2, paths, 4))
    assert not np.allclose(a, standard_normals(1, paths, 4, stream=LAUNCH_STREAM))


def test_increment_distribution():
    # M * N * d = 1.2e6 draws
    dt = 0.01
    dw = brownian_increments(11, np.arange(20000, dtype=np.uint64), 60, 1, dt).ravel()
    sigma = np.sqrt(dt / dw.size)
    assert abs(dw.mean()) <= 4 * sigma
    assert abs(dw.var() / dt - 1.0) <= 0.05


def test_seed_range_checked():
    with pytest.raises(ValueError):
        standard_normals(-1, np.arange(2, dtype=np.uint64), 1)
    with pytest.raises(ValueError):
        standard_normals(2**64, np.arange(2, dtype=np.uint64), 1)
