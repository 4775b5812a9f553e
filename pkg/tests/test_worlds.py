import numpy as np
import pytest
from scipy import ndimage

from occugen.sensor import GLASS, SOLID
from occugen.worlds import FLOOR_K, SCENARIOS, UnknownScenarioError, free_poses, make_world


@pytest.mark.parametrize("name", SCENARIOS)
def test_scenarios_are_seeded_and_sane(name):
    a, b = make_world(name, 3), make_world(name, 3)
    assert np.array_equal(a.world.materials, b.world.materials)
    assert a.start == b.start
    assert len(a.target_keys) > 0
    res = a.world.resolution
    i, j = int(a.start.x / res) - a.world.offset[0], int(a.start.y / res) - a.world.offset[1]
    assert a.walkable[i, j]
    # start column has floor below and free space at body height
    k_floor = -1 - a.world.offset[2]
    assert a.world.materials[i, j, k_floor] == SOLID
    assert not a.world.materials[i, j, k_floor + 1 : k_floor + 5].any()


def test_random_rooms_vary_with_seed():
    assert not np.array_equal(make_world("random_rooms", 1).walkable, make_world("random_rooms", 2).walkable)


def test_glass_railing_layout():
    s = make_world("glass_railing", 0)
    assert (s.world.materials == GLASS).any()
    assert s.in_drop_zone([[5.0, 6.0]])[0]
    assert not s.in_drop_zone([[5.0, 2.0]])[0]
    assert not s.in_drop_zone([[-50.0, 2.0]])[0]
    # walkway tour never enters the drop zone
    assert not s.in_drop_zone(np.array(s.tour)).any()


def test_unknown_scenario():
    with pytest.raises(UnknownScenarioError):
        make_world("atrium")


def test_free_poses_are_walkable():
    s = make_world("square_loop", 0)
    res = s.world.resolution
    for p in free_poses(s, 20, np.random.default_rng(0)):
        assert s.walkable[int(p.x / res) - s.world.offset[0], int(p.y / res) - s.world.offset[1]]


def test_corridor_corner_is_one_region_with_wide_legs():
    s = make_world("corridor_corner", 0)
    _, n = ndimage.label(s.walkable)
    assert n == 1
    res = s.world.resolution
    # leg 1 runs along +x, leg 2 along +y
    assert s.walkable[int(5.0 / res), :].sum() * res >= 1.5
    assert s.walkable[:, int(8.0 / res)].sum() * res >= 1.5


def test_glass_railing_drop_has_no_floor_and_glass_border():
    s = make_world("glass_railing", 0)
    mats, off = s.world.materials, s.world.offset
    drop = s.drop_zone
    assert drop.any()
    assert not mats[drop, FLOOR_K - off[2]].any()
    # the walkway never touches the drop directly: a glass column sits between
    assert not (ndimage.binary_dilation(s.walkable) & drop).any()
    # every column separating walkway from drop holds glass at body height
    border = ndimage.binary_dilation(drop) & ndimage.binary_dilation(s.walkable)
    assert border.any()
    assert (mats[border, FLOOR_K + 1 - off[2]] == GLASS).all()


def test_random_rooms_repeatable():
    a, b = make_world("random_rooms", 7), make_world("random_rooms", 7)
    assert np.array_equal(a.world.materials, b.world.materials)
    assert np.array_equal(a.target_keys, b.target_keys)
