"""Procedural ground-truth scenarios.

Worlds are built from a 2D walkable floor plan at the map resolution. Foot
height is z = 0: the floor is the solid layer k = -1, walls fill every
non-walkable column up to the ceiling layer.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np
from scipy import ndimage

from .grid import Pose
from .sensor import FREE, GLASS, SOLID, GroundTruthWorld

SCENARIOS = ("corridor_corner", "square_loop", "startup_room", "glass_railing", "random_rooms")

FLOOR_K = -1
CEILING_K = 12
TARGET_WALL_TOP_K = 7


class UnknownScenarioError(ValueError):
    pass


@dataclass(eq=False)
class Scenario:
    name: str
    seed: int
    world: GroundTruthWorld
    start_poses: list[Pose]
    target_keys: np.ndarray
    walkable: np.ndarray
    tour: list[tuple[float, float]] = field(default_factory=list)
    drop_zone: np.ndarray | None = None

    @property
    def start(self) -> Pose:
        return self.start_poses[0]

    def in_drop_zone(self, xy) -> np.ndarray:
        """Whether world xy points fall over a drop-zone column."""
        xy = np.atleast_2d(np.asarray(xy, dtype=float))
        if self.drop_zone is None:
            return np.zeros(len(xy), bool)
        idx = np.floor(xy / self.world.resolution).astype(np.int64) - self.world.offset[:2]
        ok = np.all((idx >= 0) & (idx < np.asarray(self.drop_zone.shape)), axis=1)
        out = np.zeros(len(xy), bool)
        out[ok] = self.drop_zone[idx[ok, 0], idx[ok, 1]]
        return out


def _cells(m: float, res: float) -> int:
    return int(round(m / res))


def _box(plan: np.ndarray, x0, y0, x1, y1, res, value=True) -> None:
    plan[_cells(x0, res) : _cells(x1, res), _cells(y0, res) : _cells(y1, res)] = value


def _build_world(
    walkable: np.ndarray,
    res: float,
    k_lo: int = -3,
    k_hi: int = CEILING_K + 1,
    open_cols: np.ndarray | None = None,
) -> tuple[np.ndarray, int]:
    """Material array for a plan. ``open_cols`` are non-walkable columns left free."""
    nx, ny = walkable.shape
    nz = k_hi - k_lo
    mats = np.full((nx, ny, nz), SOLID, dtype=np.uint8)
    open_ = walkable if open_cols is None else (walkable | open_cols)
    z0 = FLOOR_K + 1 - k_lo
    zc = CEILING_K - k_lo
    mats[open_, z0:zc] = FREE
    mats[open_, : FLOOR_K - k_lo] = FREE
    return mats, k_lo


def _targets(walkable: np.ndarray, mats: np.ndarray, k_lo: int) -> np.ndarray:
    """Floor under walkable columns plus solid wall faces next to them."""
    keys = []
    fi, fj = np.nonzero(walkable)
    keys.append(np.stack([fi, fj, np.full(fi.size, FLOOR_K)], axis=1))
    near = ndimage.binary_dilation(walkable, structure=ndimage.generate_binary_structure(2, 1)) & ~walkable
    for k in range(0, TARGET_WALL_TOP_K + 1):
        layer = mats[:, :, k - k_lo]
        wi, wj = np.nonzero(near & (layer == SOLID))
        keys.append(np.stack([wi, wj, np.full(wi.size, k)], axis=1))
    return np.concatenate(keys).astype(np.int64)


def _clearance(walkable: np.ndarray, res: float) -> np.ndarray:
    return ndimage.distance_transform_edt(walkable) * res


def _finish(name, seed, walkable, mats, k_lo, res, starts, tour, drop_zone=None) -> Scenario:
    world = GroundTruthWorld(res, mats, np.array([0, 0, k_lo]))
    targets = _targets(walkable, mats, k_lo)
    return Scenario(name, seed, world, starts, targets, walkable, tour, drop_zone)


def corridor_corner(seed: int = 0, res: float = 0.2) -> Scenario:
    """L-shaped 2 m corridor: a 12 m leg along +x, then a 10 m leg along +y."""
    rng = np.random.default_rng(seed)
    plan = np.zeros((_cells(14.0, res), _cells(13.0, res)), bool)
    _box(plan, 1.0, 1.0, 13.0, 3.0, res)
    _box(plan, 11.0, 1.0, 13.0, 12.0, res)
    mats, k_lo = _build_world(plan, res)
    sx = 2.0 + rng.uniform(-0.3, 0.3)
    sy = 2.0 + rng.uniform(-0.3, 0.3)
    start = Pose(sx, sy, 0.0, rng.uniform(-0.2, 0.2))
    tour = [(sx, sy), (12.0, 2.0), (12.0, 11.5)]
    return _finish("corridor_corner", seed, plan, mats, k_lo, res, [start], tour)


def square_loop(seed: int = 0, res: float = 0.2) -> Scenario:
    """Four 2.4 m hallways joined by four turns into a square loop."""
    rng = np.random.default_rng(seed)
    plan = np.zeros((_cells(18.0, res), _cells(18.0, res)), bool)
    _box(plan, 1.0, 1.0, 17.0, 17.0, res)
    _box(plan, 3.4, 3.4, 14.6, 14.6, res, value=False)
    mats, k_lo = _build_world(plan, res)
    corners = [(2.2, 2.2), (15.8, 2.2), (15.8, 15.8), (2.2, 15.8)]
    c = seed % 4
    order = corners[c:] + corners[:c]
    heading = math.atan2(order[1][1] - order[0][1], order[1][0] - order[0][0])
    along = rng.uniform(0.0, 2.0)
    sx = order[0][0] + along * math.cos(heading)
    sy = order[0][1] + along * math.sin(heading)
    start = Pose(sx, sy, 0.0, heading + rng.uniform(-0.2, 0.2))
    tour = [(sx, sy)] + order[1:] + [order[0], (sx, sy)]
    return _finish("square_loop", seed, plan, mats, k_lo, res, [start], tour)


def startup_room(seed: int = 0, res: float = 0.2) -> Scenario:
    """10 m x 10 m open room with two low boxes."""
    rng = np.random.default_rng(seed)
    plan = np.zeros((_cells(12.0, res), _cells(12.0, res)), bool)
    _box(plan, 1.0, 1.0, 11.0, 11.0, res)
    mats, k_lo = _build_world(plan, res)
    for x0, y0, x1, y1, top in ((2.0, 2.0, 3.2, 2.8, 3), (8.4, 8.8, 10.0, 10.0, 4)):
        i0, j0, i1, j1 = (_cells(v, res) for v in (x0, y0, x1, y1))
        mats[i0:i1, j0:j1, FLOOR_K + 1 - k_lo : top - k_lo + 1] = SOLID
        plan[i0:i1, j0:j1] = False
    start = Pose(6.0 + rng.uniform(-1.0, 1.0), 6.0 + rng.uniform(-1.0, 1.0), 0.0, rng.uniform(0, 2 * math.pi))
    tour = [(start.x, start.y), (3.0, 6.0), (6.0, 9.0), (9.0, 6.0), (6.0, 3.0)]
    return _finish("startup_room", seed, plan, mats, k_lo, res, [start], tour)


def glass_railing(seed: int = 0, res: float = 0.2) -> Scenario:
    """Walkway edged by a 1 m glass railing over a 3 m-deep drop."""
    rng = np.random.default_rng(seed)
    nx, ny = _cells(17.0, res), _cells(10.0, res)
    plan = np.zeros((nx, ny), bool)
    _box(plan, 1.0, 1.0, 16.0, 4.0, res)
    railing = np.zeros_like(plan)
    _box(railing, 1.0, 4.0, 16.0, 4.0 + res, res)
    drop = np.zeros_like(plan)
    _box(drop, 1.0, 4.0 + res, 16.0, 8.0, res)
    lower_k = -15
    mats, k_lo = _build_world(plan, res, k_lo=lower_k - 1, open_cols=railing | drop)
    mats[railing, FLOOR_K - k_lo] = SOLID
    mats[railing, FLOOR_K + 1 - k_lo : FLOOR_K + 6 - k_lo] = GLASS
    mats[drop, : lower_k - k_lo] = SOLID
    mats[drop, lower_k - k_lo] = SOLID
    mats[drop, lower_k + 1 - k_lo : CEILING_K - k_lo] = FREE
    start = Pose(3.0 + rng.uniform(-0.5, 0.5), 2.0 + rng.uniform(-0.3, 0.3), 0.0, rng.uniform(-0.3, 0.3))
    tour = [(start.x, start.y), (15.0, 2.2)]
    return _finish("glass_railing", seed, plan, mats, k_lo, res, [start], tour, drop_zone=drop)


def random_rooms(seed: int = 0, res: float = 0.2) -> Scenario:
    """Random rooms joined by corridors, with some boxes. Used for training."""
    rng = np.random.default_rng(seed)
    size = 16.0
    plan = np.zeros((_cells(size, res), _cells(size, res)), bool)
    rooms = []
    for _ in range(int(rng.integers(3, 6))):
        w, h = rng.uniform(2.4, 6.0, size=2)
        x0 = rng.uniform(0.6, size - 0.6 - w)
        y0 = rng.uniform(0.6, size - 0.6 - h)
        _box(plan, x0, y0, x0 + w, y0 + h, res)
        rooms.append((x0, y0, w, h))
    centers = [(x0 + w / 2, y0 + h / 2) for x0, y0, w, h in rooms]
    for (ax, ay), (bx, by) in zip(centers[:-1], centers[1:]):
        half = rng.uniform(0.7, 1.3)
        if rng.random() < 0.5:
            _box(plan, min(ax, bx) - half, ay - half, max(ax, bx) + half, ay + half, res)
            _box(plan, bx - half, min(ay, by) - half, bx + half, max(ay, by) + half, res)
        else:
            _box(plan, ax - half, min(ay, by) - half, ax + half, max(ay, by) + half, res)
            _box(plan, min(ax, bx) - half, by - half, max(ax, bx) + half, by + half, res)
    border = _cells(0.6, res)
    plan[:border, :] = plan[-border:, :] = False
    plan[:, :border] = plan[:, -border:] = False
    mats, k_lo = _build_world(plan, res)
    for x0, y0, w, h in rooms:
        if rng.random() < 0.6 and w > 3.0 and h > 3.0:
            bw, bh = rng.uniform(0.6, 1.2, size=2)
            bx = rng.uniform(x0 + 0.8, x0 + w - 0.8 - bw)
            by = rng.uniform(y0 + 0.8, y0 + h - 0.8 - bh)
            top = int(rng.integers(1, 6))
            i0, j0, i1, j1 = (_cells(v, res) for v in (bx, by, bx + bw, by + bh))
            mats[i0:i1, j0:j1, FLOOR_K + 1 - k_lo : top - k_lo + 1] = SOLID
            plan[i0:i1, j0:j1] = False
    clear = _clearance(plan, res)
    cand = np.argwhere(clear >= 0.5)
    pick = cand[rng.integers(len(cand))]
    start = Pose((pick[0] + 0.5) * res, (pick[1] + 0.5) * res, 0.0, rng.uniform(0, 2 * math.pi))
    return _finish("random_rooms", seed, plan, mats, k_lo, res, [start], [])


def make_world(scenario: str, seed: int = 0, res: float = 0.2) -> Scenario:
    builders = {
        "corridor_corner": corridor_corner,
        "square_loop": square_loop,
        "startup_room": startup_room,
        "glass_railing": glass_railing,
        "random_rooms": random_rooms,
    }
    if scenario not in builders:
        raise UnknownScenarioError(f"unknown scenario {scenario!r}; choose from {', '.join(SCENARIOS)}")
    return builders[scenario](seed=seed, res=res)


def free_poses(scenario: Scenario, n: int, rng: np.random.Generator, min_clearance: float = 0.4) -> list[Pose]:
    """Uniformly drawn walkable poses with wall clearance."""
    res = scenario.world.resolution
    cand = np.argwhere(_clearance(scenario.walkable, res) >= min_clearance)
    if len(cand) == 0:
        raise ValueError("no walkable cell with the requested clearance")
    idx = rng.integers(len(cand), size=n)
    poses = []
    for i, j in cand[idx]:
        poses.append(Pose((i + 0.5) * res, (j + 0.5) * res, 0.0, float(rng.uniform(0, 2 * math.pi))))
    return poses
