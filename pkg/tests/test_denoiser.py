import numpy as np
import pytest
import torch

from helpers import gradient_check_error
from occugen.denoiser import (
    NoFreePoseError,
    TorchDenoiser,
    TrainConfig,
    UNetSpec,
    augment_poses,
    build_corpus,
    forward,
    load_checkpoint,
    lr_at,
    make_model,
    save_checkpoint,
    train,
)
from occugen.grid import GridSpec, Pose
from occugen.io import MapFormatError, TruncatedPayloadError
from occugen.sensor import SOLID, GroundTruthWorld
from occugen.worlds import Scenario, make_world

TOY = UNetSpec(channels=(4, 8), stem_stride=1, time_embed=8, groups=2)


def test_zero_head_predicts_zero():
    m = make_model(UNetSpec(), seed=0)
    x = np.random.default_rng(0).normal(size=(32, 32, 16))
    assert np.array_equal(forward(m, x, 500), np.zeros_like(x))


def test_output_shape_and_divisibility():
    m = make_model(UNetSpec(zero_head=False), seed=0)
    assert forward(m, np.zeros((8, 8, 8)), 3).shape == (8, 8, 8)
    with pytest.raises(ValueError):
        forward(m, np.zeros((8, 8, 6)), 3)


def test_gradient_check():
    """Backprop against central differences, float64, on a 4^3 toy."""
    assert gradient_check_error() <= 1e-4


def test_lr_schedule():
    cfg = TrainConfig(warmup_steps=10, lr_min=1e-5, lr_max=1e-3)
    assert lr_at(0, 100, cfg) == pytest.approx(1e-5)
    assert lr_at(10, 100, cfg) == pytest.approx(1e-3)
    assert lr_at(100, 100, cfg) == pytest.approx(1e-5)
    lrs = [lr_at(s, 100, cfg) for s in range(10, 101)]
    assert all(a >= b for a, b in zip(lrs, lrs[1:]))


def test_overfits_one_grid():
    rng = np.random.default_rng(0)
    grid = (rng.random((1, 8, 8, 4)) < 0.3).astype(np.float32)
    model = make_model(UNetSpec(channels=(16, 32), stem_stride=1), seed=0)
    res = train(model, np.repeat(grid, 16, axis=0),
                TrainConfig(batch_size=16, epochs=150, warmup_steps=20, lr_max=3e-3, lr_min=1e-4))
    losses = np.array([l for _, l, _ in res.losses])
    assert losses[-30:].mean() < 0.1 * losses[:10].mean()


def test_training_is_deterministic():
    data = (np.random.default_rng(1).random((6, 4, 4, 4)) < 0.4).astype(np.float32)
    cfg = TrainConfig(batch_size=4, epochs=2, warmup_steps=1, seed=3)
    a = train(make_model(TOY, 0), data, cfg)
    b = train(make_model(TOY, 0), data, cfg)
    va = torch.nn.utils.parameters_to_vector(a.model.parameters())
    vb = torch.nn.utils.parameters_to_vector(b.model.parameters())
    assert torch.equal(va, vb)
    assert [l for _, l, _ in a.losses] == [l for _, l, _ in b.losses]


def test_training_errors():
    with pytest.raises(ValueError):
        train(make_model(TOY, 0), [], TrainConfig())
    with pytest.raises(ValueError):
        TrainConfig(lr_min=1e-2, lr_max=1e-3)


def test_torch_denoiser_grouping_invariant():
    model = make_model(UNetSpec(zero_head=False), seed=2)
    den = TorchDenoiser(model, (16, 16, 8), micro_batch=4)
    x = np.random.default_rng(2).normal(size=(6, 16, 16, 8))
    full = den(x, 250)
    assert np.array_equal(full[4:5], den(x[4:5], 250))
    assert np.array_equal(full[1:4], den(x[1:4], 250))
    with pytest.raises(ValueError):
        den(np.zeros((1, 8, 8, 8)), 1)


def test_augment_poses():
    sc = make_world("square_loop", 0)
    base = sc.start
    a = augment_poses(sc, base, 10, np.random.default_rng(5))
    b = augment_poses(sc, base, 10, np.random.default_rng(5))
    assert a == b and len(a) == 10
    for p in a:
        assert abs(p.x - base.x) <= 1 and abs(p.y - base.y) <= 1 and 0 <= p.yaw < 2 * np.pi


def _pocket_world():
    mats = np.full((11, 11, 8), SOLID, np.uint8)
    mats[5, 5, :] = 0
    world = GroundTruthWorld(0.2, mats)
    walk = np.zeros((11, 11), bool)
    walk[5, 5] = True
    return Scenario("pocket", 0, world, [Pose(1.1, 1.1, 0.0)], np.zeros((1, 3), np.int64), walk)


def test_augment_in_one_voxel_pocket():
    sc = _pocket_world()
    try:
        poses = augment_poses(sc, sc.start, 3, np.random.default_rng(0), max_retries=2000)
    except NoFreePoseError:
        return
    for p in poses:
        assert (int(p.x / 0.2), int(p.y / 0.2)) == (5, 5)
    with pytest.raises(NoFreePoseError):
        augment_poses(sc, sc.start, 3, np.random.default_rng(0), max_retries=1)


def test_build_corpus():
    spec = GridSpec()
    worlds = [make_world("random_rooms", s) for s in range(2)]
    corpus = build_corpus(worlds, 3, spec, augmentations=2, seed=0)
    assert len(corpus) == 2 * 3 * 2
    for g in corpus:
        assert set(np.unique(g.values)) <= {0.0, 1.0}
        # floor sits at one height in every window: layer below foot level is solid
        k_floor = int(round(spec.floor_margin / spec.resolution)) - 1
        assert g.values[:, :, k_floor].mean() > 0.5
    again = worlds[0].world.occupancy_window(corpus[0].origin_pose, spec.dims, spec.resolution)
    assert np.array_equal(again.values, corpus[0].values)


def test_checkpoint_roundtrip(tmp_path):
    model = make_model(UNetSpec(zero_head=False), seed=4)
    path = tmp_path / "m.occm"
    save_checkpoint(path, model, (32, 32, 16), {"T": 1000})
    loaded, meta = load_checkpoint(path)
    assert meta["grid_dims"] == [32, 32, 16] and meta["schedule"]["T"] == 1000
    x = np.random.default_rng(0).normal(size=(32, 32, 16))
    assert np.array_equal(forward(model, x, 10), forward(loaded, x, 10))
    data = path.read_bytes()
    path.write_bytes(data[:-4])
    with pytest.raises(TruncatedPayloadError):
        load_checkpoint(path)
    path.write_bytes(b"garbage")
    with pytest.raises(MapFormatError):
        load_checkpoint(path)
