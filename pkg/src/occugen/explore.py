"""The sense, predict, plan, move loop, plus run records and summaries."""

from __future__ import annotations

import io
import json
import math
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from .config import ExploreSection, RunConfig, parse_mode
from .diffusion import NoiseSchedule, inference_steps, linear_schedule, sample_batch
from .fusion import FusionParams, coverage, fuse_prediction, insert_scan, merge_one_shot
from .grid import GlobalOccupancyMap, GridSpec, LocalGrid, Pose, extract_submap
from .io import atomic_write_text, map_to_text
from .planner import (
    ExplorationGraph,
    NoTraversableStartError,
    PlannerParams,
    Traversability,
    build_graph,
    select_frontiers,
)
from .sensor import LidarConfig, simulate_scan
from .worlds import Scenario, make_world

TRACE_COLUMNS = (
    "tick",
    "x",
    "y",
    "z",
    "yaw",
    "coverage",
    "max_gain",
    "mode",
    "predictions_fused",
    "path_length",
    "graph_vertices",
    "status",
)


@dataclass
class Predictor:
    """Draws k inpainted windows around a pose and merges them into the map."""

    denoiser: object
    schedule: NoiseSchedule
    grid: GridSpec
    k: int
    merge: str  # "OSMM" or "PMM"
    n_steps: int = 30
    parallel: bool | int = True

    def __post_init__(self):
        self.steps = inference_steps(self.schedule.T, self.n_steps)

    def predict(self, gmap: GlobalOccupancyMap, pose: Pose, seeds) -> tuple[list[LocalGrid], object]:
        center = self.grid.center_for(pose)
        sub = extract_submap(gmap, center, self.grid.dims, sensed_only=True)
        k = 1 if self.merge == "OSMM" else self.k
        preds = sample_batch(self.denoiser, sub, k, list(seeds)[:k], self.schedule, self.steps, self.parallel)
        return preds, sub

    def predict_and_merge(self, gmap: GlobalOccupancyMap, pose: Pose, seeds, fusion: FusionParams) -> int:
        preds, sub = self.predict(gmap, pose, seeds)
        if self.merge == "OSMM":
            merge_one_shot(gmap, preds[0], sub, fusion)
        else:
            for p in preds:
                fuse_prediction(gmap, p, sub, fusion)
        return len(preds)


def prediction_seeds(run_seed: int, tick: int, slot: int, k: int) -> list[int]:
    """Distinct per-chain seeds derived from (run seed, tick, slot)."""
    raw = np.random.SeedSequence([int(run_seed), int(tick), int(slot)]).generate_state(k, dtype=np.uint32)
    seeds = [int(s) for s in raw]
    while len(set(seeds)) < k:  # astronomically rare
        seeds = [s + i for i, s in enumerate(seeds)]
    return seeds


def planning_box(pose: Pose, params: PlannerParams, res: float):
    """Key box covering every sampled vertex plus its gain rays."""
    reach = params.sample_radius + params.gain_range + 2 * res
    lo = np.array(
        [
            math.floor((pose.x - reach) / res),
            math.floor((pose.y - reach) / res),
            math.floor((pose.z - 1.0) / res),
        ],
        dtype=np.int64,
    )
    hi = np.array(
        [
            math.floor((pose.x + reach) / res) + 1,
            math.floor((pose.y + reach) / res) + 1,
            math.floor((pose.z + 3.0) / res) + 1,
        ],
        dtype=np.int64,
    )
    return lo, tuple((hi - lo).tolist())


def polyline_length(points) -> float:
    pts = np.asarray(points, dtype=float)
    if len(pts) < 2:
        return 0.0
    return float(np.linalg.norm(np.diff(pts[:, :2], axis=0), axis=1).sum())


def advance_along(points: np.ndarray, distance: float) -> tuple[np.ndarray, np.ndarray]:
    """Walk ``distance`` along the polyline; returns (new position, remaining polyline)."""
    pts = np.asarray(points, dtype=float)
    left = distance
    for i in range(len(pts) - 1):
        seg = pts[i + 1] - pts[i]
        n = float(np.linalg.norm(seg[:2]))
        if n >= left and n > 0:
            p = pts[i] + seg * (left / n)
            return p, np.vstack([p[None], pts[i + 1 :]])
        left -= n
    return pts[-1], pts[-1:]


@dataclass
class RunState:
    scenario: Scenario
    mode: str
    seed: int
    gmap: GlobalOccupancyMap
    pose: Pose
    tick: int = 0
    status: str = "running"
    path: np.ndarray | None = None
    frontier_queue: list = field(default_factory=list)
    stuck: int = 0
    teleop_events: int = 0
    plan_failures: int = 0
    first_plan_tick: int | None = None
    predictions_fused: int = 0
    distance: float = 0.0
    time_to_target: float | None = None
    coverage: float = 0.0
    trace: list = field(default_factory=list)
    planned_paths: list = field(default_factory=list)
    graph: ExplorationGraph | None = None

    @property
    def done(self) -> bool:
        return self.status != "running"


@dataclass
class Explorer:
    """Everything fixed for the duration of one run."""

    config: RunConfig
    predictor: Predictor | None = None
    lidar: LidarConfig = None

    def __post_init__(self):
        self.predictive, self.window, self.merge = parse_mode(self.config.mode)
        if self.predictive and self.predictor is None:
            raise ValueError(f"mode {self.config.mode} needs a predictor")
        if self.lidar is None:
            self.lidar = self.config.lidar.build()
        self.fusion = self.config.fusion
        self.planner = self.config.planner
        self.ex: ExploreSection = self.config.explore

    def start(self, seed: int | None = None, scenario: Scenario | None = None) -> RunState:
        seed = self.config.seed if seed is None else int(seed)
        scenario = scenario or make_world(self.config.scenario, seed, self.config.grid.resolution)
        gmap = self.fusion.new_map(self.config.grid.resolution)
        return RunState(scenario, self.config.mode, seed, gmap, scenario.start)

    # -- one tick ----------------------------------------------------------------

    def _predict(self, st: RunState) -> int:
        if not self.predictive:
            return 0
        if self.window == "FC" and st.frontier_queue:
            target = st.frontier_queue.pop(0)
            yaw = math.atan2(target[1] - st.pose.y, target[0] - st.pose.x)
            pose = Pose(float(target[0]), float(target[1]), st.pose.z, yaw)
        else:
            # RC windows, and FC before the first graph exists
            pose = st.pose
        seeds = prediction_seeds(st.seed, st.tick, 0, self.ex.k_predictions)
        return self.predictor.predict_and_merge(st.gmap, pose, seeds, self.fusion)

    def _plan(self, st: RunState, rng: np.random.Generator):
        res = st.gmap.resolution
        box = planning_box(st.pose, self.planner, res)
        trav = Traversability.from_map(st.gmap, box[0], box[1], self.planner, st.pose.z)
        try:
            graph = build_graph(st.gmap, st.pose, self.planner, rng, box, self.lidar, trav)
        except NoTraversableStartError:
            return None, trav
        return graph, trav

    def step(self, st: RunState) -> RunState:
        if st.done:
            return st
        rng = np.random.default_rng([st.seed, st.tick, 7])
        scan = simulate_scan(st.scenario.world, st.pose, self.lidar)
        # one-shot predictions are overlays: a measurement replaces them
        insert_scan(st.gmap, scan, self.fusion, replace_predictions=self.merge == "OSMM")
        fused = self._predict(st)
        st.predictions_fused += fused

        graph, trav = self._plan(st, rng)
        st.graph = graph
        max_gain = 0.0
        n_vertices = 0 if graph is None else len(graph)
        if graph is not None:
            max_gain = float(graph.exploration_gain.max())
            if self.window == "FC":
                st.frontier_queue = [graph.positions[v, :2].copy() for v in select_frontiers(graph, self.planner)]

        # keep following the current path while it stays traversable
        if st.path is not None and len(st.path) > 1:
            if not trav.segments_traversable(st.path[:-1, :2], st.path[1:, :2]).all():
                st.path = None
        if st.path is None or len(st.path) <= 1:
            st.path = None
            if graph is None or len(graph) <= 1:
                st.plan_failures += 1
            else:
                best = graph.best_vertex()
                if graph.exploration_gain[best] >= self.ex.gain_threshold:
                    st.path = graph.path_points(best)
                    st.planned_paths.append(st.path.copy())
                    if st.first_plan_tick is None:
                        st.first_plan_tick = st.tick

        moved = 0.0
        status = "running"
        if st.path is not None:
            new_xyz, st.path = advance_along(st.path, self.ex.step_length)
            moved = float(np.linalg.norm(new_xyz[:2] - st.pose.xyz[:2]))
            yaw = math.atan2(new_xyz[1] - st.pose.y, new_xyz[0] - st.pose.x) if moved > 1e-9 else st.pose.yaw
            st.pose = Pose(float(new_xyz[0]), float(new_xyz[1]), st.pose.z, yaw)
        elif graph is None and self.ex.teleop_assist:
            self._teleop(st)
            moved = -1.0
        st.distance += max(moved, 0.0)

        st.coverage = coverage(st.gmap, st.scenario.target_keys)
        if st.coverage >= self.ex.coverage_target:
            st.time_to_target = (st.tick + 1) * self.ex.tick_seconds
            status = "complete"
        elif graph is not None and st.path is None and len(graph) > 1 and max_gain < self.ex.gain_threshold:
            status = "gain_exhausted"
        else:
            st.stuck = st.stuck + 1 if moved == 0.0 else 0
            if st.stuck >= self.ex.stuck_ticks:
                status = "stuck"
            elif st.tick + 1 >= self.ex.tick_budget:
                status = "budget"

        path_len = polyline_length(st.path) if st.path is not None else 0.0
        st.trace.append(
            (
                st.tick,
                st.pose.x,
                st.pose.y,
                st.pose.z,
                st.pose.yaw,
                st.coverage,
                max_gain,
                st.mode,
                fused,
                path_len,
                n_vertices,
                status if status != "running" else ("no_plan" if graph is None else "ok"),
            )
        )
        st.status = status
        st.tick += 1
        return st

    def _teleop(self, st: RunState) -> None:
        """Operator nudge: move a short way along the heading over walkable ground."""
        st.teleop_events += 1
        res = st.gmap.resolution
        walk = st.scenario.walkable
        for turn in np.linspace(0.0, 2 * math.pi, 16, endpoint=False):
            yaw = st.pose.yaw + turn
            x = st.pose.x + self.ex.teleop_distance * math.cos(yaw)
            y = st.pose.y + self.ex.teleop_distance * math.sin(yaw)
            i, j = int(math.floor(x / res)), int(math.floor(y / res))
            if 0 <= i < walk.shape[0] and 0 <= j < walk.shape[1] and walk[i, j]:
                st.pose = Pose(x, y, st.pose.z, yaw)
                return

    def run(self, seed: int | None = None, scenario: Scenario | None = None) -> RunState:
        st = self.start(seed, scenario)
        while not st.done:
            self.step(st)
        return st


# -- oracle agent ---------------------------------------------------------------


def run_oracle(config: RunConfig, seed: int | None = None, scenario: Scenario | None = None) -> RunState:
    """Upper-bound reference: follows the scenario tour on ground truth, scanning every tick."""
    seed = config.seed if seed is None else int(seed)
    scenario = scenario or make_world(config.scenario, seed, config.grid.resolution)
    lidar = config.lidar.build()
    ex = config.explore
    gmap = config.fusion.new_map(config.grid.resolution)
    st = RunState(scenario, "ORACLE", seed, gmap, scenario.start)
    tour = np.array([[x, y, st.pose.z] for x, y in scenario.tour], dtype=float)
    path = tour if len(tour) > 1 else None
    while not st.done:
        insert_scan(gmap, simulate_scan(scenario.world, st.pose, lidar), config.fusion)
        if path is not None and len(path) > 1:
            xyz, path = advance_along(path, ex.step_length)
            yaw = math.atan2(xyz[1] - st.pose.y, xyz[0] - st.pose.x)
            st.distance += float(np.linalg.norm(xyz[:2] - st.pose.xyz[:2]))
            st.pose = Pose(float(xyz[0]), float(xyz[1]), st.pose.z, yaw)
        st.coverage = coverage(gmap, scenario.target_keys)
        status = "running"
        if st.coverage >= ex.coverage_target:
            st.time_to_target = (st.tick + 1) * ex.tick_seconds
            status = "complete"
        elif path is None or len(path) <= 1 or st.tick + 1 >= ex.tick_budget:
            status = "tour_end"
        st.trace.append(
            (st.tick, st.pose.x, st.pose.y, st.pose.z, st.pose.yaw, st.coverage, 0.0, "ORACLE", 0,
             polyline_length(path) if path is not None else 0.0, 0, status if status != "running" else "ok")
        )
        st.status = status
        st.tick += 1
    return st


# -- records ----------------------------------------------------------------------


def _fmt(v) -> str:
    if isinstance(v, (float, np.floating)):
        return f"{float(v):.6f}"
    return str(v)


def trace_csv(st: RunState) -> str:
    buf = io.StringIO()
    buf.write(",".join(TRACE_COLUMNS) + "\n")
    for row in st.trace:
        buf.write(",".join(_fmt(v) for v in row) + "\n")
    return buf.getvalue()


def is_failure(st: RunState) -> bool:
    return st.status != "complete"


def run_metrics(st: RunState, tick_seconds: float) -> dict:
    return {
        "scenario": st.scenario.name,
        "seed": st.seed,
        "mode": st.mode,
        "status": st.status,
        "failed": is_failure(st),
        "ticks": st.tick,
        "exploration_time_s": st.tick * tick_seconds,
        "time_to_target_s": st.time_to_target,
        "final_coverage": round(st.coverage, 6),
        "distance_m": round(st.distance, 6),
        "teleop_events": st.teleop_events,
        "plan_failures": st.plan_failures,
        "first_plan_tick": st.first_plan_tick,
        "predictions_fused": st.predictions_fused,
    }


def write_run(st: RunState, out_dir, tick_seconds: float) -> dict:
    """Trace CSV, final map snapshot and metrics JSON for one run."""
    out = Path(out_dir)
    out.mkdir(parents=True, exist_ok=True)
    stem = f"{st.scenario.name}_{st.mode}_seed{st.seed}"
    atomic_write_text(out / f"{stem}_trace.csv", trace_csv(st))
    atomic_write_text(out / f"{stem}_map.occg", map_to_text(st.gmap))
    metrics = run_metrics(st, tick_seconds)
    atomic_write_text(out / f"{stem}_metrics.json", json.dumps(metrics, indent=2, sort_keys=True) + "\n")
    return metrics


def summarize_runs(metrics: list[dict]) -> dict:
    """Table-2-shaped row: exploration time mean/min/max/std over completed runs, plus failures."""
    times = np.array([m["time_to_target_s"] for m in metrics if not m["failed"]], dtype=float)
    row = {"runs": len(metrics), "failures": sum(m["failed"] for m in metrics)}
    if times.size:
        row.update(
            mean_s=float(times.mean()),
            min_s=float(times.min()),
            max_s=float(times.max()),
            std_s=float(times.std(ddof=1)) if times.size > 1 else 0.0,
        )
    else:
        row.update(mean_s=None, min_s=None, max_s=None, std_s=None)
    return row


def coverage_curve(traces: list[RunState], tick_seconds: float) -> list[tuple[float, float, float]]:
    """(time s, mean coverage %, std) across runs; finished runs hold their last value."""
    n = max(len(s.trace) for s in traces)
    cov = np.zeros((len(traces), n))
    for i, s in enumerate(traces):
        c = [row[5] for row in s.trace]
        cov[i, : len(c)] = c
        cov[i, len(c) :] = c[-1]
    return [((t + 1) * tick_seconds, float(100 * cov[:, t].mean()), float(100 * cov[:, t].std())) for t in range(n)]
