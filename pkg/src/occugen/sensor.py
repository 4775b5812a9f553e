"""Ground-truth worlds and a simulated spinning lidar."""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from typing import NamedTuple

import numpy as np

from .grid import LocalGrid, Pose, VoxelKey, window_keys
from .raycast import cast_rays, ray_capacity

FREE, SOLID, GLASS = 0, 1, 2

# lidar returns stop only at solid cells; glass is transparent to it
LIDAR_BLOCKING = np.zeros(256, dtype=np.bool_)
LIDAR_BLOCKING[SOLID] = True


class OutOfBoundsError(ValueError):
    """A ray origin or sensor pose lies outside the world."""


@dataclass(eq=False)
class GroundTruthWorld:
    """Dense material grid. ``offset`` is the lattice key of ``materials[0, 0, 0]``."""

    resolution: float
    materials: np.ndarray
    offset: np.ndarray = field(default_factory=lambda: np.zeros(3, np.int64))

    def __post_init__(self):
        self.materials = np.ascontiguousarray(self.materials, dtype=np.uint8)
        self.offset = np.asarray(self.offset, dtype=np.int64).reshape(3)
        if self.materials.ndim != 3:
            raise ValueError("materials must be a 3D array")
        if not self.resolution > 0:
            raise ValueError("resolution must be > 0")
        self.materials.setflags(write=False)

    def __eq__(self, other):
        if not isinstance(other, GroundTruthWorld):
            return NotImplemented
        return (
            self.resolution == other.resolution
            and np.array_equal(self.offset, other.offset)
            and np.array_equal(self.materials, other.materials)
        )

    __hash__ = None

    @property
    def shape(self) -> tuple[int, int, int]:
        return self.materials.shape

    @property
    def min_corner(self) -> np.ndarray:
        return self.offset * self.resolution

    @property
    def max_corner(self) -> np.ndarray:
        return (self.offset + np.asarray(self.shape)) * self.resolution

    def contains(self, point) -> bool:
        p = np.asarray(point, dtype=float)
        return bool(np.all(p >= self.min_corner) and np.all(p < self.max_corner))

    def to_voxel_units(self, points) -> np.ndarray:
        return np.asarray(points, dtype=float) / self.resolution - self.offset

    def material_at_keys(self, keys) -> np.ndarray:
        """Material per lattice key; keys outside the world read as FREE."""
        keys = np.asarray(keys, dtype=np.int64)
        rel = keys - self.offset
        inside = np.all((rel >= 0) & (rel < np.asarray(self.shape)), axis=-1)
        out = np.zeros(keys.shape[:-1], dtype=np.uint8)
        r = rel[inside]
        out[inside] = self.materials[r[..., 0], r[..., 1], r[..., 2]]
        return out

    def occupancy_window(self, center: Pose, dims, resolution: float | None = None) -> LocalGrid:
        """Complete ground-truth local grid: solid or glass -> 1, else 0."""
        resolution = self.resolution if resolution is None else resolution
        keys = window_keys(center, dims, resolution)
        mats = self.material_at_keys(keys)
        return LocalGrid(tuple(dims), resolution, center, (mats != FREE).astype(np.float32))


@dataclass(frozen=True)
class LidarConfig:
    n_azimuth: int = 180
    n_rings: int = 48
    vfov: tuple[float, float] = (math.radians(-35.0), math.radians(25.0))
    max_range: float = 8.0
    # half-angle of the cone around straight-down in which no ray is emitted
    blind_cone_half_angle: float = math.radians(60.0)
    mount_height: float = 0.6
    range_noise_std: float = 0.0

    def __post_init__(self):
        if not self.max_range > 0:
            raise ValueError("max_range must be > 0")
        if self.n_azimuth < 1 or self.n_rings < 1:
            raise ValueError("ray counts must be positive")
        if self.vfov[0] > self.vfov[1]:
            raise ValueError("vfov must be (min_elev, max_elev)")

    def elevations(self) -> np.ndarray:
        if self.n_rings == 1:
            elev = np.array([0.5 * (self.vfov[0] + self.vfov[1])])
        else:
            elev = np.linspace(self.vfov[0], self.vfov[1], self.n_rings)
        # angle from straight down is pi/2 + elevation
        return elev[(math.pi / 2 + elev) > self.blind_cone_half_angle + 1e-12]

    def directions(self, yaw: float = 0.0) -> np.ndarray:
        """Unit ray directions (ring-major), blind cone removed."""
        elev = self.elevations()
        az = yaw + 2.0 * math.pi * np.arange(self.n_azimuth) / self.n_azimuth
        e, a = np.meshgrid(elev, az, indexing="ij")
        ce = np.cos(e)
        d = np.stack([ce * np.cos(a), ce * np.sin(a), np.sin(e)], axis=-1)
        return d.reshape(-1, 3)

    def sensor_origin(self, pose: Pose) -> np.ndarray:
        return np.array([pose.x, pose.y, pose.z + self.mount_height])


class RayResult(NamedTuple):
    hit: np.ndarray | None
    traversed: list[VoxelKey]


@dataclass(frozen=True, eq=False)
class Scan:
    """One simulated sweep. Keys are global lattice keys."""

    origin: np.ndarray
    directions: np.ndarray
    hit_mask: np.ndarray
    hit_points: np.ndarray
    hit_keys: np.ndarray
    traversed_keys: np.ndarray
    traversed_ray: np.ndarray

    @property
    def points(self) -> np.ndarray:
        return self.hit_points[self.hit_mask]

    @property
    def n_rays(self) -> int:
        return len(self.directions)


def _trace(world: GroundTruthWorld, origin, dirs, max_range: float, blocking=LIDAR_BLOCKING):
    o_vox = world.to_voxel_units(origin)
    max_t = max_range / world.resolution
    cap = ray_capacity(max_t)
    origins = np.broadcast_to(o_vox, dirs.shape).copy()
    counts, cells, hit, hit_t, hit_cells = cast_rays(
        world.materials, blocking, origins, np.ascontiguousarray(dirs, dtype=float), max_t, cap
    )
    return o_vox, counts, cells, hit, hit_t, hit_cells


def raycast(world: GroundTruthWorld, origin, direction, max_range: float) -> RayResult:
    """Trace a single ray; the hit point lies on the first solid cell's entry face."""
    origin = np.asarray(origin, dtype=float)
    d = np.asarray(direction, dtype=float)
    norm = np.linalg.norm(d)
    if not norm > 0:
        raise ValueError("direction must be non-zero")
    if abs(norm - 1.0) > 1e-9:
        raise ValueError("direction must be a unit vector")
    if not world.contains(origin):
        raise OutOfBoundsError(f"ray origin {origin.tolist()} outside world bounds")
    _, counts, cells, hit, hit_t, _ = _trace(world, origin, d[None, :], max_range)
    n = int(counts[0])
    traversed = [VoxelKey(*(c + world.offset).tolist()) for c in cells[0, :n]]
    point = origin + hit_t[0] * world.resolution * d if hit[0] else None
    return RayResult(point, traversed)


def simulate_scan(
    world: GroundTruthWorld, pose: Pose, config: LidarConfig, rng: np.random.Generator | None = None
) -> Scan:
    """Sweep every (ring, azimuth) ray outside the blind cone from ``pose``."""
    origin = config.sensor_origin(pose)
    if not world.contains(origin):
        raise OutOfBoundsError(f"sensor pose {tuple(pose)} outside world bounds")
    dirs = config.directions(pose.yaw)
    if len(dirs) == 0:
        empty3 = np.empty((0, 3), np.int64)
        return Scan(origin, dirs, np.zeros(0, bool), np.empty((0, 3)), empty3, empty3, np.empty(0, np.int64))
    _, counts, cells, hit, hit_t, hit_cells = _trace(world, origin, dirs, config.max_range)
    ranges = np.where(hit, hit_t * world.resolution, np.nan)
    hit_points = origin + ranges[:, None] * dirs
    hit_keys = hit_cells[hit] + world.offset
    if config.range_noise_std > 0 and hit.any():
        rng = rng if rng is not None else np.random.default_rng(0)
        jitter = rng.normal(0.0, config.range_noise_std, size=int(hit.sum()))
        hit_points[hit] += jitter[:, None] * dirs[hit]
        hit_keys = np.floor(hit_points[hit] / world.resolution).astype(np.int64)
    ray_idx = np.repeat(np.arange(len(dirs)), counts)
    slot = np.arange(ray_idx.size) - np.repeat(np.cumsum(counts) - counts, counts)
    traversed = cells[ray_idx, slot] + world.offset
    return Scan(origin, dirs, hit, hit_points, hit_keys, traversed, ray_idx)
