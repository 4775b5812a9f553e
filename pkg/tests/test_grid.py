import math

import numpy as np
import pytest
from hypothesis import given
from hypothesis import strategies as st

from occugen.fusion import FusionParams, insert_scan
from occugen.grid import (
    GlobalOccupancyMap,
    LocalGrid,
    MaskedSubmap,
    Pose,
    VoxelKey,
    binarize,
    binarize_local,
    extract_submap,
    pack_keys,
    unpack_keys,
    window_keys,
)
from occugen.sensor import GroundTruthWorld, LidarConfig, simulate_scan
from occugen.worlds import corridor_corner

keys3 = st.lists(st.tuples(*[st.integers(-5000, 5000)] * 3), min_size=1, max_size=40)


@given(keys3)
def test_pack_unpack_roundtrip(keys):
    arr = np.array(keys, dtype=np.int64)
    assert np.array_equal(unpack_keys(pack_keys(arr)), arr)


def test_pack_rejects_out_of_range():
    with pytest.raises(ValueError):
        pack_keys(np.array([[1 << 21, 0, 0]]))


def test_empty_map_submap_is_all_unknown():
    sub = extract_submap(GlobalOccupancyMap(), Pose(3.0, -2.0, 1.0, 0.7), (8, 8, 4))
    assert np.all(sub.grid.values == 0.5)
    assert not sub.observed_mask.any()
    assert sub.unknown_fraction == 1.0


def test_single_occupied_cell_at_center():
    g = GlobalOccupancyMap()
    center = Pose(1.1, 1.1, 1.1, 0.0)
    key = np.floor(np.array([1.1, 1.1, 1.1]) / 0.2).astype(int)
    g.set_log_odds(key[None], 2.0, sensed=True)
    sub = extract_submap(g, center, (9, 9, 9))
    hits = np.argwhere(sub.occupied_mask)
    assert hits.tolist() == [[4, 4, 4]]
    assert sub.grid.values[4, 4, 4] == 1.0
    assert not sub.unoccupied_mask.any()


def test_submap_value_rules():
    g = GlobalOccupancyMap()
    g.set_log_odds(np.array([[0, 0, 0]]), 0.3, sensed=True)
    g.set_log_odds(np.array([[1, 0, 0]]), -0.3, sensed=True)
    g.set_log_odds(np.array([[2, 0, 0]]), 0.0, sensed=True)
    sub = extract_submap(g, Pose(0.4, 0.1, 0.1, 0.0), (4, 1, 1))
    # window x cells are keys 0, 1, 2, 3
    assert sub.grid.values[:, 0, 0].tolist() == [1.0, 0.0, 0.0, 0.5]


def test_submap_masks_match_ray_replay():
    # one scan in the 2 m corridor; masks must equal direct enumeration of touched keys
    sc = corridor_corner(0)
    params = FusionParams()
    g = params.new_map()
    pose = Pose(4.0, 2.0, 0.0, 0.0)
    scan = simulate_scan(sc.world, pose, LidarConfig())
    insert_scan(g, scan, params)
    center = Pose(4.0, 2.0, 0.9, 0.0)
    dims = (32, 32, 16)
    sub = extract_submap(g, center, dims)
    touched = {tuple(k) for k in scan.traversed_keys.tolist()} | {tuple(k) for k in scan.hit_keys.tolist()}
    wk = window_keys(center, dims, 0.2).reshape(-1, 3)
    in_window = np.array([tuple(k) in touched for k in wk.tolist()]).reshape(dims)
    assert np.array_equal(sub.observed_mask, in_window)
    assert math.isclose(sub.unknown_fraction, 1.0 - in_window.sum() / np.prod(dims))
    hits = {tuple(k) for k in scan.hit_keys.tolist()}
    occ = np.array([tuple(k) in hits for k in wk.tolist()]).reshape(dims)
    assert np.array_equal(sub.occupied_mask, occ)


@given(st.lists(st.tuples(st.integers(0, 5), st.integers(0, 5), st.integers(0, 3), st.floats(-3, 3)), max_size=30),
       st.floats(0, 2 * math.pi))
def test_submap_never_both_occupied_and_free(cells, yaw):
    g = GlobalOccupancyMap()
    for i, j, k, lo in cells:
        g.set_log_odds(np.array([[i, j, k]]), lo, sensed=True)
    sub = extract_submap(g, Pose(0.6, 0.6, 0.4, yaw), (6, 6, 4))
    assert not np.any(sub.occupied_mask & sub.unoccupied_mask)


def test_yaw_rotation_quarter_turn():
    # a 90 degree window maps local +x onto world +y
    k = window_keys(Pose(0.0, 0.0, 0.0, math.pi / 2), (4, 4, 1), 1.0)
    assert k[3, 1, 0].tolist() == [0, 1, 0]
    assert k[0, 1, 0].tolist() == [0, -2, 0]


def test_masked_submap_rejects_overlap():
    grid = LocalGrid((2, 1, 1), 0.2, Pose(0, 0, 0), np.zeros((2, 1, 1)))
    both = np.ones((2, 1, 1), bool)
    with pytest.raises(ValueError):
        MaskedSubmap(grid, both, both)


def test_local_grid_validates():
    with pytest.raises(ValueError):
        LocalGrid((2, 2, 2), 0.2, Pose(0, 0, 0), np.zeros((2, 2, 3)))
    with pytest.raises(ValueError):
        LocalGrid((2, 2, 2), 0.2, Pose(0, 0, 0), np.full((2, 2, 2), np.nan))
    g = LocalGrid((2, 2, 2), 0.2, Pose(0, 0, 0), np.zeros((2, 2, 2)))
    with pytest.raises(ValueError):
        g.values[0, 0, 0] = 1.0


def test_binarize_examples():
    pose = Pose(0.0, 0.0, 0.0)
    half = LocalGrid((2, 2, 2), 0.2, pose, np.full((2, 2, 2), 0.5))
    assert len(binarize(half, 0.5)) == 8
    assert binarize(half.with_values(np.zeros((2, 2, 2))), 0.3) == set()
    vals = np.array([0.2, 0.6, 0.9]).reshape(3, 1, 1)
    g = LocalGrid((3, 1, 1), 0.2, pose, vals)
    assert binarize_local(g, 0.5) == {(1, 0, 0), (2, 0, 0)}
    keys = g.keys().reshape(-1, 3)
    assert binarize(g, 0.5) == {VoxelKey(*keys[1]), VoxelKey(*keys[2])}
    with pytest.raises(ValueError):
        binarize(g, 1.0)


def test_map_basic_protocol():
    g = GlobalOccupancyMap()
    assert g.get((0, 0, 0)) is None
    g.apply_update(np.array([[0, 0, 0]]), 0.5, sensed=False)
    assert g.get((0, 0, 0)) == (0.5, "predicted")
    g.apply_update(np.array([[0, 0, 0]]), 100.0, sensed=True)
    lo, prov = g.get((0, 0, 0))
    assert lo == g.clamp_max and prov == "sensed"
    assert (0, 0, 0) in g and len(g) == 1
    c = g.copy()
    assert c == g
    c.apply_update(np.array([[1, 0, 0]]), 0.1, sensed=False)
    assert c != g


def test_remove_where_keeps_index_consistent():
    g = GlobalOccupancyMap()
    keys = np.array([[i, 0, 0] for i in range(6)])
    g.apply_update(keys, 0.2, sensed=False)
    g.apply_update(keys[::2], 0.1, sensed=True)
    removed = g.remove_where(~g._sensed[: len(g)])
    assert removed == 3
    assert sorted(k for k, _, _ in g.items()) == [(0, 0, 0), (2, 0, 0), (4, 0, 0)]
    assert g.get((2, 0, 0)) == (pytest.approx(0.3), "sensed")


def test_dense_state():
    g = GlobalOccupancyMap()
    g.set_log_odds(np.array([[1, 1, 1]]), 1.0)
    g.set_log_odds(np.array([[0, 1, 1]]), -1.0)
    s = g.dense_state((0, 0, 0), (3, 3, 3))
    assert s[1, 1, 1] == 2 and s[0, 1, 1] == 1 and s.sum() == 3


def test_world_window_of_solid_block():
    mats = np.zeros((4, 4, 4), np.uint8)
    mats[2:, :, :] = 1
    w = GroundTruthWorld(0.5, mats)
    win = w.occupancy_window(Pose(1.0, 1.0, 1.0, 0.0), (4, 4, 4))
    assert win.values[:2].sum() == 0 and np.all(win.values[2:] == 1)
