"""Prediction-quality experiment: every merge mode on one scripted tour, scored against ground truth.

All arms see the same scans along the same tour. Robot-centric (RC) windows
sit on the robot. Frontier-centric (FC) windows sit on the best frontier of a
graph built on the sensor-only map, so every FC arm is scored at the same
poses. Evaluated windows are binarized (occupied 1, everything else 0) and
compared to ground-truth windows under one shared embedder.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np

from .config import RunConfig, parse_mode
from .diffusion import inference_steps, linear_schedule, sample_groups
from .explore import advance_along, planning_box, prediction_seeds
from .fusion import fuse_prediction, insert_scan, merge_one_shot
from .grid import Pose, extract_submap
from .metrics import FeatureEmbedder, evaluate_run
from .planner import NoTraversableStartError, build_graph, select_frontiers
from .sensor import simulate_scan
from .worlds import Scenario, make_world

ROW_ORDER = ("BL-RC", "SS-RC-OSMM", "SS-RC-PMM", "BL-FC", "SS-FC-OSMM", "SS-FC-PMM")

# (left, right) pairs where the left row must have the lower FID
FID_ORDERINGS = (
    ("SS-RC-OSMM", "BL-RC"),
    ("SS-RC-PMM", "BL-RC"),
    ("SS-FC-PMM", "SS-FC-OSMM"),
    ("SS-FC-PMM", "BL-FC"),
)


def tour_poses(scenario: Scenario, step: float) -> list[Pose]:
    """Poses every ``step`` metres along the scenario tour, facing the direction of travel."""
    path = np.array([[x, y, 0.0] for x, y in scenario.tour], dtype=float)
    if len(path) < 2:
        raise ValueError(f"scenario {scenario.name} has no tour")
    poses = []
    pos = path[0]
    yaw = math.atan2(path[1, 1] - path[0, 1], path[1, 0] - path[0, 0])
    poses.append(Pose(float(pos[0]), float(pos[1]), 0.0, yaw))
    while len(path) > 1:
        nxt, path = advance_along(path, step)
        d = nxt[:2] - pos[:2]
        if np.linalg.norm(d) > 1e-9:
            yaw = math.atan2(d[1], d[0])
        pos = nxt
        poses.append(Pose(float(pos[0]), float(pos[1]), 0.0, yaw))
    return poses


def binarize_window(grid):
    return grid.with_values((np.asarray(grid.values) > 0.5).astype(np.float32))


@dataclass
class _Row:
    windows: list = field(default_factory=list)
    truth: list = field(default_factory=list)
    groups: list = field(default_factory=list)
    masks: list = field(default_factory=list)


def frontier_pose(cfg: RunConfig, gmap, pose: Pose, seed: int, tick: int, lidar) -> Pose | None:
    rng = np.random.default_rng([seed, tick, 11])
    box = planning_box(pose, cfg.planner, gmap.resolution)
    try:
        graph = build_graph(gmap, pose, cfg.planner, rng, box, lidar)
    except NoTraversableStartError:
        return None
    picks = select_frontiers(graph, cfg.planner)
    if not picks:
        return None
    x, y = graph.positions[picks[0], :2]
    return Pose(float(x), float(y), pose.z, math.atan2(y - pose.y, x - pose.x))


def collect_windows(cfg: RunConfig, seed: int, denoiser) -> dict[str, _Row]:
    """Drive the tour once, updating one map per mode, and gather the evaluation windows."""
    ev = cfg.evaluate
    scenario = make_world(ev.scenario, seed, cfg.grid.resolution)
    lidar = cfg.lidar.build()
    d = cfg.diffusion
    schedule = linear_schedule(d.T, d.beta_start, d.beta_end)
    steps = inference_steps(d.T, d.inference_steps)
    modes = list(ev.modes)
    maps = {m: cfg.fusion.new_map(cfg.grid.resolution) for m in modes}
    if "BL" not in maps:
        maps["BL"] = cfg.fusion.new_map(cfg.grid.resolution)
    rows = {r: _Row() for r in ROW_ORDER if r in modes or r.startswith("BL")}
    dims = cfg.grid.dims

    for tick, pose in enumerate(tour_poses(scenario, ev.step_length)):
        scan = simulate_scan(scenario.world, pose, lidar)
        for mode, gmap in maps.items():
            insert_scan(gmap, scan, cfg.fusion, replace_predictions=parse_mode(mode)[2] == "OSMM")
        fc = frontier_pose(cfg, maps["BL"], pose, seed, tick, lidar)
        window_pose = {"RC": pose, "FC": fc}

        requests, arms = [], []
        for slot, mode in enumerate(modes):
            predictive, window, merge = parse_mode(mode)
            if not predictive or window_pose[window] is None:
                continue
            sub = extract_submap(maps[mode], cfg.grid.center_for(window_pose[window]), dims, sensed_only=True)
            k = 1 if merge == "OSMM" else cfg.explore.k_predictions
            requests.append((sub, prediction_seeds(seed, tick, slot + 1, k)))
            arms.append((mode, merge, sub))
        results = sample_groups(denoiser, requests, schedule, steps) if requests else []
        for (mode, merge, sub), preds in zip(arms, results):
            if merge == "OSMM":
                merge_one_shot(maps[mode], preds[0], sub, cfg.fusion)
            else:
                for p in preds:
                    fuse_prediction(maps[mode], p, sub, cfg.fusion)

        if tick < ev.warmup_ticks or (tick - ev.warmup_ticks) % ev.eval_every:
            continue
        preds_by_mode = {mode: preds for (mode, _, _), preds in zip(arms, results)}
        for row_name, row in rows.items():
            window = "RC" if "-RC" in row_name else "FC"
            wp = window_pose[window]
            if wp is None:
                continue
            mode = "BL" if row_name.startswith("BL") else row_name
            if mode != "BL" and mode not in preds_by_mode:
                continue
            center = cfg.grid.center_for(wp)
            row.windows.append(binarize_window(extract_submap(maps[mode], center, dims).grid))
            row.truth.append(scenario.world.occupancy_window(center, dims, cfg.grid.resolution))
            row.masks.append(extract_submap(maps["BL"], center, dims, sensed_only=True))
            if mode != "BL" and parse_mode(mode)[2] == "PMM":
                row.groups.append(preds_by_mode[mode])
    return rows


def evaluate_seed(cfg: RunConfig, seed: int, denoiser, embedder: FeatureEmbedder) -> dict:
    rows = collect_windows(cfg, seed, denoiser)
    out = {}
    for name, row in rows.items():
        if len(row.windows) < 2:
            continue
        out[name] = evaluate_run(row.windows, row.truth, embedder, row.groups or None, row.masks)
    return out


def _vote(per_seed: list[dict], check) -> dict:
    votes = []
    for res in per_seed:
        try:
            votes.append(bool(check(res)))
        except (KeyError, TypeError):
            votes.append(False)
    return {"votes": votes, "pass": sum(votes) * 2 > len(votes)}


def table1(cfg: RunConfig, denoiser, seeds=None) -> dict:
    """Table-1-shaped report over seeds, with the directional checks decided by majority vote."""
    ev = cfg.evaluate
    seeds = list(ev.seeds if seeds is None else seeds)
    embedder = FeatureEmbedder(ev.embedder_seed)
    per_seed = [evaluate_seed(cfg, s, denoiser, embedder) for s in seeds]
    rows = {}
    for name in ROW_ORDER:
        vals = [r[name] for r in per_seed if name in r]
        if not vals:
            continue
        rows[name] = {
            "FID": float(np.mean([v["FID"] for v in vals])),
            "KIDx1000": float(np.mean([v["KIDx1000"] for v in vals])),
            "unknown_pct": float(np.mean([v["unknown_pct"] for v in vals])),
            "iou_mean": None if vals[0]["iou_mean"] is None else float(np.mean([v["iou_mean"] for v in vals])),
            "n_windows": int(sum(v["n_windows"] for v in vals)),
        }
    checks = {}
    for lo, hi in FID_ORDERINGS:
        if lo in ROW_ORDER and hi in ROW_ORDER:
            checks[f"FID({lo}) < FID({hi})"] = _vote(per_seed, lambda r, lo=lo, hi=hi: r[lo]["FID"] < r[hi]["FID"])
    checks["unknown_pct(FC) > unknown_pct(RC)"] = _vote(
        per_seed, lambda r: r["BL-FC"]["unknown_pct"] > r["BL-RC"]["unknown_pct"]
    )
    checks["iou_mean(SS-FC-PMM) < iou_mean(SS-RC-PMM)"] = _vote(
        per_seed, lambda r: r["SS-FC-PMM"]["iou_mean"] < r["SS-RC-PMM"]["iou_mean"]
    )
    return {
        "scenario": ev.scenario,
        "seeds": seeds,
        "embedder_seed": ev.embedder_seed,
        "rows": rows,
        "per_seed": per_seed,
        "checks": checks,
    }


def self_comparison(cfg: RunConfig, seed: int, embedder: FeatureEmbedder) -> dict:
    """Ground truth scored against itself along the tour: the FID-zero sanity row."""
    scenario = make_world(cfg.evaluate.scenario, seed, cfg.grid.resolution)
    windows = [
        scenario.world.occupancy_window(cfg.grid.center_for(p), cfg.grid.dims, cfg.grid.resolution)
        for p in tour_poses(scenario, cfg.evaluate.step_length)
    ]
    return evaluate_run(windows, windows, embedder)

