import json
from importlib import resources

import jsonschema
import numpy as np
import pytest

from occugen.cli import load_schema, main
from occugen.config import ConfigError, RunConfig, config_from_dict, config_schema, load_config, parse_mode
from occugen.denoiser import make_model, save_checkpoint
from occugen.fusion import FusionParams
from occugen.grid import GridSpec, Pose, window_keys
from occugen.io import load_grid, save_grid


def _run(argv, capsys):
    code = main([str(a) for a in argv])
    out, err = capsys.readouterr()
    return code, out, err


def _error_line(err):
    lines = err.strip().splitlines()
    assert len(lines) == 1
    prefix, tag, _ = lines[0].split(": ", 2)
    assert prefix == "occugen"
    return tag


def test_defaults_roundtrip():
    cfg = RunConfig()
    assert config_from_dict(json.loads(json.dumps(cfg.to_dict()))) == cfg
    assert cfg.run_seeds == (0,)
    assert cfg.with_overrides(seeds=(1, 2), mode=None).run_seeds == (1, 2)


def test_shipped_schema_matches_defaults():
    shipped = json.loads(resources.files("occugen").joinpath("schemas", "config.schema.json").read_text())
    assert shipped == config_schema()
    jsonschema.validate(RunConfig().to_dict(), shipped)


@pytest.mark.parametrize(
    "data",
    [
        {"nope": 1},
        {"mode": "SS-XX-PMM"},
        {"scenario": "atrium"},
        {"explore": {"k_predictions": 6}},
        {"explore": {"tick_budget": 2.5}},
        {"planner": {"gamma_s": "high"}},
        {"planner": {"gamma_s": -1.0}},
        {"grid": {"dims": [30, 32, 16]}},
        {"seeds": 3},
        [],
    ],
)
def test_bad_configs_rejected(data):
    with pytest.raises(ConfigError):
        config_from_dict(data)


def test_parse_mode():
    assert parse_mode("BL") == (False, "", "")
    assert parse_mode("SS-FC-OSMM") == (True, "FC", "OSMM")


def test_partial_config_keeps_defaults(tmp_path):
    p = tmp_path / "c.json"
    p.write_text(json.dumps({"planner": {"d_m": 2.0}, "lidar": {"vfov_deg": [-30, 20]}}))
    cfg = load_config(p)
    assert cfg.planner.d_m == 2.0 and cfg.planner.n_max == 3
    assert cfg.lidar.build().vfov[0] == pytest.approx(np.radians(-30))


def test_cli_usage_and_config_errors(tmp_path, capsys):
    code, _, err = _run(["frobnicate"], capsys)
    assert code == 2 and _error_line(err) == "USAGE_ERROR"
    code, _, err = _run(["explore", "--config", tmp_path / "missing.json"], capsys)
    assert code == 3 and _error_line(err) == "IO_ERROR"
    bad = tmp_path / "bad.json"
    bad.write_text("{not json")
    code, _, err = _run(["explore", "--config", bad], capsys)
    assert code == 2 and _error_line(err) == "CONFIG_ERROR"
    bad.write_text(json.dumps({"explore": {"k_predictions": 9}}))
    code, _, err = _run(["explore", "--config", bad], capsys)
    assert code == 2 and _error_line(err) == "CONFIG_ERROR"
    code, _, err = _run(["predict", "--map", tmp_path / "none.occg", "--pose", "1,2"], capsys)
    assert code == 2 and _error_line(err) == "CONFIG_ERROR"
    code, _, err = _run(["predict", "--map", tmp_path / "none.occg", "--pose", "1,2,0,0"], capsys)
    assert code == 3 and _error_line(err) == "IO_ERROR"


@pytest.fixture(scope="module")
def untrained(tmp_path_factory):
    path = tmp_path_factory.mktemp("ckpt") / "untrained.occm"
    cfg = RunConfig()
    save_checkpoint(path, make_model(cfg.model.spec(), seed=0), cfg.grid.dims)
    return path


def _config(tmp_path, **extra):
    p = tmp_path / "run.json"
    p.write_text(json.dumps({"explore": {"tick_budget": 4}, **extra}))
    return p


def test_explore_bl_writes_report(tmp_path, capsys):
    out = tmp_path / "bl"
    code, stdout, _ = _run(["explore", "--config", _config(tmp_path), "--mode", "BL", "--seed", 1,
                            "--out", out, "--oracle"], capsys)
    assert code == 0, stdout
    metrics = json.loads((out / "corridor_corner_BL_seed1_metrics.json").read_text())
    jsonschema.validate(metrics, load_schema("run_metrics.schema.json"))
    assert metrics["ticks"] <= 4 and metrics["teleop_events"] >= 0
    summary = json.loads((out / "summary.json").read_text())
    assert set(summary) == {"BL", "ORACLE"}
    assert {"runs", "failures", "mean_s", "min_s", "max_s", "std_s"} <= set(summary["BL"])
    trace = (out / "corridor_corner_BL_seed1_trace.csv").read_text().splitlines()
    assert trace[0].startswith("tick,x,y,z,yaw,coverage")
    curve = (out / "coverage_curve.csv").read_text().splitlines()
    assert curve[0] == "time_s,mean_coverage_pct,std_pct"
    assert isinstance(load_grid(out / "corridor_corner_BL_seed1_map.occg"), object)


def test_explore_is_byte_deterministic(tmp_path, capsys, untrained):
    cfg = _config(tmp_path, checkpoint=str(untrained), explore={"tick_budget": 3})
    for name in ("a", "b"):
        code, _, _ = _run(["explore", "--config", cfg, "--out", tmp_path / name, "--seed", 2], capsys)
        assert code == 0
    for suffix in ("trace.csv", "map.occg", "metrics.json"):
        f = f"corridor_corner_SS-RC-PMM_seed2_{suffix}"
        assert (tmp_path / "a" / f).read_bytes() == (tmp_path / "b" / f).read_bytes()


def test_explore_missing_checkpoint_is_io_error(tmp_path, capsys):
    cfg = _config(tmp_path, checkpoint=str(tmp_path / "nope.occm"))
    code, _, err = _run(["explore", "--config", cfg, "--out", tmp_path / "x"], capsys)
    assert code == 3 and _error_line(err) == "IO_ERROR"


def _observed_map(pose, grid: GridSpec):
    fp = FusionParams()
    m = fp.new_map(grid.resolution)
    keys = window_keys(grid.center_for(pose), grid.dims, grid.resolution).reshape(-1, 3)
    keys = np.unique(keys, axis=0)
    occ = keys[:, 2] < 0
    m.apply_update(keys[occ], fp.delta(0.7), sensed=True)
    m.apply_update(keys[~occ], fp.delta(0.4), sensed=True)
    return m


def test_predict_reproducible_and_safe(tmp_path, capsys, untrained):
    pose = Pose(3.0, 3.0, 0.0, 0.3)
    m = _observed_map(pose, GridSpec())
    map_path = tmp_path / "m.occg"
    save_grid(map_path, m)
    args = ["predict", "--map", map_path, "--pose", "3,3,0,0.3", "--checkpoint", untrained, "--seed", 4]
    for name in ("a", "b"):
        code, _, _ = _run(args + ["--k", 2, "--out", tmp_path / name], capsys)
        assert code == 0
    a, b = tmp_path / "a", tmp_path / "b"
    for f in ("submap.occv", "prediction_0.occv", "prediction_1.occv"):
        assert (a / f).read_bytes() == (b / f).read_bytes()
    # fully observed window: output equals input
    assert (a / "prediction_0.occv").read_bytes() == (a / "submap.occv").read_bytes()


def test_predict_distinct_outputs(tmp_path, capsys, untrained):
    m = FusionParams().new_map()
    map_path = tmp_path / "empty.occg"
    save_grid(map_path, m)
    code, _, _ = _run(["predict", "--map", map_path, "--pose", "0,0,0,0", "--checkpoint", untrained,
                       "--k", 3, "--out", tmp_path / "p"], capsys)
    assert code == 0
    blobs = [(tmp_path / "p" / f"prediction_{i}.occv").read_bytes() for i in range(3)]
    assert len(set(blobs)) == 3
