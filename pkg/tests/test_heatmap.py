import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from covpose.heatmap import HeatmapStack, decode, decode_array, encode, encode_batch
from covpose.pose import FLIP_PERMUTATION, Pose


def pose_at(xy):
    return Pose(np.tile(np.asarray(xy, float), (14, 1)))


def test_stack_shape_and_range():
    p = Pose(np.random.default_rng(0).uniform(0, 224, size=(14, 2)))
    hm = encode(p)
    assert hm.maps.shape == (56, 56, 14)
    assert hm.maps.min() >= 0 and hm.maps.max() <= 1
    np.testing.assert_array_equal(hm.maps.reshape(-1, 14).max(axis=0), np.ones(14))


def test_argmax_cell():
    hm = encode(pose_at((100, 60)))
    row, col = np.unravel_index(np.argmax(hm.maps[..., 0]), (56, 56))
    assert (col, row) == (25, 15)


def test_gaussian_mass():
    hm = encode(pose_at((100, 60)))
    assert hm.maps[..., 0].sum() == pytest.approx(2 * np.pi, rel=0.01)


def test_identical_joints_identical_channels():
    hm = encode(pose_at((37.5, 180.2)))
    for k in range(1, 14):
        np.testing.assert_array_equal(hm.maps[..., k], hm.maps[..., 0])


def test_out_of_bounds_clamped_and_flagged():
    j = np.full((14, 2), 100.0)
    j[3] = (-10.0, 240.0)
    hm = encode(Pose(j))
    row, col = np.unravel_index(np.argmax(hm.maps[..., 3]), (56, 56))
    assert (col, row) == (0, 55)
    assert hm.flags[3] and not hm.flags[0]


def test_impulse_decode():
    maps = np.zeros((56, 56, 14), np.float32)
    maps[20, 10, :] = 1.0
    np.testing.assert_array_equal(decode(HeatmapStack(maps)).joints, np.tile([42.0, 82.0], (14, 1)))


def test_uniform_channel_falls_back_to_center():
    maps = np.zeros((56, 56, 14), np.float32)
    maps[5, 7, 1:] = 1.0
    out = decode(HeatmapStack(maps))
    np.testing.assert_array_equal(out.joints[0], (112.0, 112.0))
    assert out.flags[0] and not out.flags[1:].any()


def test_tie_break_lowest_row_major():
    maps = np.zeros((56, 56, 14), np.float32)
    maps[30, 2, :] = 1.0
    maps[3, 40, :] = 1.0
    np.testing.assert_array_equal(decode(HeatmapStack(maps)).joints[0], ((40 + 0.5) * 4, (3 + 0.5) * 4))


def test_decode_rejects_nonfinite():
    maps = np.zeros((56, 56, 14))
    maps[0, 0, 0] = np.nan
    with pytest.raises(ValueError):
        decode(HeatmapStack(maps))


def test_round_trip_1000_poses():
    rng = np.random.default_rng(0)
    joints = rng.uniform(0, np.nextafter(224, 0), size=(1000, 14, 2))
    coords, low = decode_array(encode_batch([Pose(j) for j in joints]))
    assert not low.any()
    assert np.linalg.norm(coords - joints, axis=-1).max() <= 2 * np.sqrt(2)


@settings(max_examples=50, deadline=None)
@given(st.lists(st.tuples(st.integers(0, 55), st.integers(0, 55)), min_size=14, max_size=14))
def test_hflip_equivariance_on_grid(cells):
    p = Pose(4.0 * np.array(cells, dtype=float))
    direct = encode(p.hflip()).maps
    mirrored = encode(p).maps[:, ::-1, :][..., FLIP_PERMUTATION]
    np.testing.assert_array_equal(direct, mirrored)


@settings(max_examples=50, deadline=None)
@given(st.floats(0, 223.99), st.floats(0, 223.99))
def test_peak_strictly_monotone(x, y):
    ch = encode(pose_at((x, y)), dtype=np.float64).maps[..., 0].ravel()
    cx, cy = int(x // 4), int(y // 4)
    yy, xx = np.mgrid[0:56, 0:56]
    d2 = ((xx - cx) ** 2 + (yy - cy) ** 2).ravel()
    dist, inv = np.unique(d2, return_inverse=True)
    hi = np.full(len(dist), -np.inf)
    lo = np.full(len(dist), np.inf)
    np.maximum.at(hi, inv, ch)
    np.minimum.at(lo, inv, ch)
    # the separable product only differs by rounding between cells at equal distance
    np.testing.assert_allclose(lo, hi, rtol=1e-14, atol=0)
    assert hi[0] == 1.0
    normal = hi[hi >= np.finfo(np.float64).tiny]   # strict until exp underflows far from the peak
    assert np.all(np.diff(normal) < 0)
