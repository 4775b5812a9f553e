import numpy as np
import pytest
from hypothesis import given
from hypothesis import strategies as st
from hypothesis.extra import numpy as hnp

from occugen.grid import GlobalOccupancyMap, LocalGrid, Pose
from occugen.io import (
    MapFormatError,
    MapVersionError,
    TruncatedPayloadError,
    grid_from_bytes,
    grid_to_bytes,
    load_grid,
    map_from_text,
    map_to_text,
    save_grid,
    world_from_bytes,
    world_to_bytes,
)
from occugen.worlds import make_world

finite = st.floats(-1e6, 1e6, allow_nan=False, width=32)


@given(
    hnp.arrays(np.float32, hnp.array_shapes(min_dims=3, max_dims=3, max_side=5), elements=finite),
    st.tuples(finite, finite, finite, st.floats(-7, 7)),
    st.floats(0.01, 2.0),
)
def test_grid_roundtrip_is_exact(values, pose, res):
    g = LocalGrid(values.shape, res, Pose(*pose), values)
    back = grid_from_bytes(grid_to_bytes(g))
    assert back == g


def test_grid_file_size(tmp_path):
    g = LocalGrid((32, 32, 16), 0.2, Pose(1.0, 2.0, 0.5, 0.1), np.zeros((32, 32, 16)))
    path = tmp_path / "g.occv"
    save_grid(path, g)
    data = path.read_bytes()
    header = data[: data.index(b"\n") + 1]
    assert len(data) == len(header) + 32 * 32 * 16 * 4
    assert header.split()[0] == b"OCCV1"
    assert load_grid(path) == g


def test_grid_payload_is_x_fastest():
    vals = np.arange(8, dtype=np.float32).reshape(2, 2, 2)
    data = grid_to_bytes(LocalGrid((2, 2, 2), 1.0, Pose(0, 0, 0), vals))
    payload = np.frombuffer(data[data.index(b"\n") + 1 :], "<f4")
    assert payload[:2].tolist() == [vals[0, 0, 0], vals[1, 0, 0]]


def test_distinct_errors():
    good = grid_to_bytes(LocalGrid((2, 2, 2), 1.0, Pose(0, 0, 0), np.zeros((2, 2, 2))))
    with pytest.raises(MapFormatError):
        grid_from_bytes(b"XXXX1" + good[5:])
    with pytest.raises(MapVersionError):
        grid_from_bytes(b"OCCV2" + good[5:])
    with pytest.raises(TruncatedPayloadError):
        grid_from_bytes(good[:-3])
    with pytest.raises(MapFormatError):
        grid_from_bytes(b"OCCV1 2 2\n")
    # version errors are not format errors
    assert not issubclass(MapVersionError, MapFormatError)
    assert not issubclass(TruncatedPayloadError, MapFormatError)


cells = st.lists(
    st.tuples(st.integers(-1000, 1000), st.integers(-1000, 1000), st.integers(-50, 50), st.floats(-3, 3), st.booleans()),
    max_size=40,
    unique_by=lambda c: c[:3],
)


@given(cells)
def test_map_roundtrip_is_exact(cs):
    g = GlobalOccupancyMap()
    for i, j, k, lo, s in cs:
        g.set_log_odds(np.array([[i, j, k]]), lo, sensed=s)
    back = map_from_text(map_to_text(g))
    assert back == g
    assert map_to_text(back) == map_to_text(g)


def test_map_text_errors():
    with pytest.raises(TruncatedPayloadError):
        map_from_text("OCCG1 0.2 0.5 -2 3 2\n0 0 0 0.1 sensed\n")
    with pytest.raises(MapFormatError):
        map_from_text("OCCG1 0.2 0.5 -2 3 1\n0 0 0 0.1 maybe\n")
    with pytest.raises(MapFormatError):
        map_from_text("OCCG1 0.2 0.5 -2 3 2\n0 0 0 0.1 sensed\n0 0 0 0.2 sensed\n")


def test_world_roundtrip(tmp_path):
    w = make_world("glass_railing", 0).world
    assert world_from_bytes(world_to_bytes(w)) == w
    save_grid(tmp_path / "w.occw", w)
    assert load_grid(tmp_path / "w.occw") == w


def test_save_leaves_no_temp_files(tmp_path):
    g = GlobalOccupancyMap()
    g.set_log_odds(np.array([[1, 2, 3]]), 0.4, sensed=True)
    save_grid(tmp_path / "m.occg", g)
    assert [p.name for p in tmp_path.iterdir()] == ["m.occg"]
    assert load_grid(tmp_path / "m.occg") == g
