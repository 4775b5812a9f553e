"""Graph-based exploration planning over the running occupancy map."""

from __future__ import annotations

import math
from dataclasses import dataclass, field, replace

import numpy as np
from scipy.sparse import coo_matrix
from scipy.sparse.csgraph import dijkstra

from .grid import GlobalOccupancyMap, Pose
from .raycast import count_unknown
from .sensor import LidarConfig

UNKNOWN, FREE_STATE, OCCUPIED = 0, 1, 2


class NoTraversableStartError(RuntimeError):
    """The robot's own column is not ground-supported or not collision-free."""


@dataclass(frozen=True)
class PlannerParams:
    gamma_s: float = 0.5
    gamma_d: float = 0.2
    d_m: float = 1.5
    n_max: int = 3
    sample_count: int = 160
    sample_radius: float = 5.0
    connect_radius: float = 1.6
    fc_range: float = 7.0
    # occupied support must sit within this band below foot height (m)
    support_band: tuple[float, float] = (-0.4, -0.1)
    body_height: float = 0.8
    clearance_cells: int = 1
    edge_step: float = 0.1
    gain_n_azimuth: int = 48
    gain_n_rings: int = 24
    gain_range: float = 8.0

    def __post_init__(self):
        if not (self.gamma_s > 0 and self.gamma_d > 0):
            raise ValueError("gamma_s and gamma_d must be > 0")
        if not self.d_m > 0:
            raise ValueError("d_m must be > 0")
        if self.n_max < 1:
            raise ValueError("n_max must be >= 1")

    def gain_lidar(self, lidar: LidarConfig) -> LidarConfig:
        """The sensor pattern cast from graph nodes: the robot's lidar, thinned."""
        return replace(lidar, n_azimuth=self.gain_n_azimuth, n_rings=self.gain_n_rings, max_range=self.gain_range)


class Traversability:
    """Ground-support and collision checks against a dense snapshot of the map."""

    def __init__(self, state: np.ndarray, lo_key, resolution: float, params: PlannerParams, foot_z: float = 0.0):
        self.state = state
        self.lo = np.asarray(lo_key, dtype=np.int64)
        self.res = resolution
        self.params = params
        band = params.support_band
        ks = np.arange(math.floor((foot_z + band[0]) / resolution) - 1, math.ceil((foot_z + band[1]) / resolution) + 1)
        centers = (ks + 0.5) * resolution
        self.support_k = ks[(centers >= foot_z + band[0] - 1e-9) & (centers <= foot_z + band[1] + 1e-9)]
        k0 = math.floor(foot_z / resolution + 1e-9)
        self.body_k = np.arange(k0, k0 + max(1, int(round(params.body_height / resolution))))
        c = params.clearance_cells
        di, dj = np.meshgrid(np.arange(-c, c + 1), np.arange(-c, c + 1), indexing="ij")
        self.foot_offsets = np.stack([di.ravel(), dj.ravel()], axis=1)

    @classmethod
    def from_map(cls, gmap: GlobalOccupancyMap, lo_key, shape, params: PlannerParams, foot_z: float = 0.0):
        return cls(gmap.dense_state(lo_key, shape), lo_key, gmap.resolution, params, foot_z)

    def _lookup(self, ij: np.ndarray, ks: np.ndarray) -> np.ndarray:
        """State for columns ``ij`` (..., 2) at layers ``ks``; out of box reads occupied."""
        shape = np.asarray(self.state.shape)
        i = ij[..., 0, None] - self.lo[0]
        j = ij[..., 1, None] - self.lo[1]
        k = np.broadcast_to(ks - self.lo[2], i.shape[:-1] + (ks.size,))
        i = np.broadcast_to(i, k.shape)
        j = np.broadcast_to(j, k.shape)
        inside = (i >= 0) & (j >= 0) & (k >= 0) & (i < shape[0]) & (j < shape[1]) & (k < shape[2])
        out = np.full(k.shape, OCCUPIED, dtype=np.int8)
        out[inside] = self.state[i[inside], j[inside], k[inside]]
        return out

    def supported(self, xy) -> np.ndarray:
        ij = np.floor(np.atleast_2d(np.asarray(xy, dtype=float)) / self.res).astype(np.int64)
        below = self._lookup(ij, self.support_k)
        inside = self._inside(ij)
        return np.any(below == OCCUPIED, axis=-1) & inside

    def collision_free(self, xy) -> np.ndarray:
        ij = np.floor(np.atleast_2d(np.asarray(xy, dtype=float)) / self.res).astype(np.int64)
        foot = ij[:, None, :] + self.foot_offsets[None]
        body = self._lookup(foot, self.body_k)
        return np.all(body != OCCUPIED, axis=(-1, -2))

    def _inside(self, ij: np.ndarray) -> np.ndarray:
        shape = np.asarray(self.state.shape[:2])
        rel = ij - self.lo[:2]
        return np.all((rel >= 0) & (rel < shape), axis=-1)

    def traversable(self, xy) -> np.ndarray:
        return self.supported(xy) & self.collision_free(xy)

    def segment_samples(self, p: np.ndarray, q: np.ndarray) -> np.ndarray:
        n = max(2, int(math.ceil(np.linalg.norm(q - p) / self.params.edge_step)) + 1)
        s = np.linspace(0.0, 1.0, n)[:, None]
        return p[None] * (1 - s) + q[None] * s

    def segments_traversable(self, p: np.ndarray, q: np.ndarray) -> np.ndarray:
        """Vectorized edge check for segment endpoint arrays (E, 2)."""
        if len(p) == 0:
            return np.zeros(0, bool)
        length = np.linalg.norm(q - p, axis=1)
        n = max(2, int(math.ceil(length.max() / self.params.edge_step)) + 1)
        s = np.linspace(0.0, 1.0, n)[None, :, None]
        pts = p[:, None, :] * (1 - s) + q[:, None, :] * s
        ok = self.traversable(pts.reshape(-1, 2)).reshape(len(p), n)
        return ok.all(axis=1)


@dataclass
class ExplorationGraph:
    positions: np.ndarray  # (V, 3) foot-level vertex positions; vertex 0 is the root
    edges: list  # (i, j, length)
    dist: np.ndarray
    pred: np.ndarray
    volumetric_gain: np.ndarray
    exploration_gain: np.ndarray = field(default_factory=lambda: np.zeros(0))

    root: int = 0

    def __len__(self) -> int:
        return len(self.positions)

    def path(self, i: int) -> list[int]:
        """Vertex ids from the root to ``i``."""
        if not np.isfinite(self.dist[i]):
            raise ValueError(f"vertex {i} is unreachable")
        out = [int(i)]
        while out[-1] != self.root:
            out.append(int(self.pred[out[-1]]))
        return out[::-1]

    def path_points(self, i: int) -> np.ndarray:
        return self.positions[self.path(i)]

    def best_vertex(self) -> int | None:
        """Highest exploration gain among non-root vertices, lowest id on ties."""
        if len(self) <= 1:
            return None
        g = self.exploration_gain[1:]
        return int(np.argmax(g)) + 1


def exploration_gain(graph: ExplorationGraph, vertex: int, params: PlannerParams) -> float:
    """exp(-gamma_S * S) * sum_j VolumetricGain(v_j) * exp(-gamma_D * D(v_1, v_j)) along the root path.

    S is the path length from the robot to the vertex and D the cumulative
    edge length from the root to each path vertex.
    """
    path = graph.path(vertex)
    pts = graph.positions[path]
    seg = np.linalg.norm(np.diff(pts, axis=0), axis=1)
    cum = np.concatenate([[0.0], np.cumsum(seg)])
    s = cum[-1]
    vg = graph.volumetric_gain[path]
    return float(math.exp(-params.gamma_s * s) * np.sum(vg * np.exp(-params.gamma_d * cum)))


def _all_exploration_gains(graph: ExplorationGraph, params: PlannerParams) -> np.ndarray:
    # subpaths of shortest paths are shortest, so D(v_1, v_j) is dist[v_j]
    weighted = graph.volumetric_gain * np.exp(-params.gamma_d * graph.dist)
    acc = np.zeros(len(graph))
    order = np.argsort(graph.dist, kind="stable")
    for v in order:
        p = graph.pred[v]
        acc[v] = weighted[v] + (acc[p] if p >= 0 and v != graph.root else 0.0)
    return np.exp(-params.gamma_s * graph.dist) * acc


def volumetric_gains(state, lo_key, resolution: float, positions: np.ndarray, lidar: LidarConfig) -> np.ndarray:
    """Unknown voxels visible from each position under the given sensor pattern."""
    if len(positions) == 0:
        return np.zeros(0)
    dirs = lidar.directions(0.0)
    if len(dirs) == 0:
        return np.zeros(len(positions))
    origins = np.asarray(positions, dtype=float).copy()
    origins[:, 2] += lidar.mount_height
    o_vox = origins / resolution - np.asarray(lo_key)
    counts = count_unknown(state, np.ascontiguousarray(o_vox), np.ascontiguousarray(dirs), lidar.max_range / resolution)
    return counts.astype(float)


def volumetric_gain(gmap: GlobalOccupancyMap, pose: Pose, lidar: LidarConfig) -> int:
    """Unknown voxels the sensor pattern would touch from ``pose`` through the current map."""
    res = gmap.resolution
    reach = lidar.max_range + lidar.mount_height + res
    lo = np.floor((pose.xyz - reach) / res).astype(np.int64)
    hi = np.floor((pose.xyz + reach) / res).astype(np.int64) + 1
    state = gmap.dense_state(lo, hi - lo)
    return int(volumetric_gains(state, lo, res, pose.xyz[None], lidar)[0])


def build_graph(
    gmap: GlobalOccupancyMap,
    robot_pose: Pose,
    params: PlannerParams,
    rng: np.random.Generator,
    box: tuple[np.ndarray, np.ndarray],
    lidar: LidarConfig,
    trav: Traversability | None = None,
) -> ExplorationGraph:
    """Sample traversable vertices around the robot, connect feasible edges, score gains.

    ``box`` is the (lo_key, shape) region of the map snapshot used for all
    checks. Raises NoTraversableStartError when the robot's own column fails.
    """
    lo, shape = box
    trav = trav or Traversability.from_map(gmap, lo, shape, params, robot_pose.z)
    root = np.array([robot_pose.x, robot_pose.y])
    if not trav.traversable(root)[0]:
        raise NoTraversableStartError(f"no ground support or clearance at ({robot_pose.x:.2f}, {robot_pose.y:.2f})")
    r = params.sample_radius
    samples = root + rng.uniform(-r, r, size=(params.sample_count, 2))
    samples = samples[trav.traversable(samples)]
    xy = np.vstack([root[None], samples])
    n = len(xy)
    d = np.linalg.norm(xy[:, None, :] - xy[None, :, :], axis=-1)
    ii, jj = np.nonzero(np.triu((d <= params.connect_radius) & (d > 0), k=1))
    ok = trav.segments_traversable(xy[ii], xy[jj])
    ii, jj = ii[ok], jj[ok]
    w = d[ii, jj]
    adj = coo_matrix((w, (ii, jj)), shape=(n, n)).tocsr()
    dist, pred = dijkstra(adj, directed=False, indices=0, return_predecessors=True)
    reach = np.flatnonzero(np.isfinite(dist))
    remap = -np.ones(n, np.int64)
    remap[reach] = np.arange(reach.size)
    keep = (remap[ii] >= 0) & (remap[jj] >= 0)
    edges = [(int(remap[a]), int(remap[b]), float(l)) for a, b, l in zip(ii[keep], jj[keep], w[keep])]
    pred_r = np.where(pred[reach] >= 0, remap[np.maximum(pred[reach], 0)], -9999)
    positions = np.column_stack([xy[reach], np.full(reach.size, robot_pose.z)])
    vg = volumetric_gains(trav.state, lo, gmap.resolution, positions, params.gain_lidar(lidar))
    graph = ExplorationGraph(positions, edges, dist[reach], pred_r, vg)
    graph.exploration_gain = _all_exploration_gains(graph, params)
    return graph


def select_frontiers(graph: ExplorationGraph, params: PlannerParams) -> list[int]:
    """Greedy pick by exploration gain with minimum spacing d_m and range limit."""
    if len(graph) <= 1:
        return []
    root = graph.positions[graph.root, :2]
    ids = np.arange(1, len(graph))
    in_range = np.linalg.norm(graph.positions[ids, :2] - root, axis=1) <= params.fc_range
    ids = ids[in_range]
    order = sorted(ids.tolist(), key=lambda v: (-graph.exploration_gain[v], v))
    chosen: list[int] = []
    for v in order:
        p = graph.positions[v, :2]
        if all(np.linalg.norm(p - graph.positions[c, :2]) >= params.d_m for c in chosen):
            chosen.append(v)
            if len(chosen) >= params.n_max:
                break
    return chosen
