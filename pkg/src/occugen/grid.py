"""Voxel grid data model: dense local cubes, the sparse global map, submaps."""

from __future__ import annotations

import math
import threading
from dataclasses import dataclass, field
from typing import Iterator, NamedTuple

import numpy as np

SENSED = "sensed"
PREDICTED = "predicted"

_KEY_BIAS = 1 << 20
_KEY_MASK = (1 << 21) - 1


class VoxelKey(NamedTuple):
    i: int
    j: int
    k: int


class Pose(NamedTuple):
    """World pose; for robot poses ``z`` is the foot (floor) height."""

    x: float
    y: float
    z: float
    yaw: float = 0.0

    @property
    def xyz(self) -> np.ndarray:
        return np.array([self.x, self.y, self.z], dtype=float)


def pack_keys(keys: np.ndarray) -> np.ndarray:
    """Pack an (N, 3) integer key array into int64 hash keys."""
    keys = np.asarray(keys, dtype=np.int64).reshape(-1, 3)
    if keys.size and (np.abs(keys).max() >= _KEY_BIAS):
        raise ValueError("voxel index outside the supported lattice range")
    b = keys + _KEY_BIAS
    return (b[:, 0] << 42) | (b[:, 1] << 21) | b[:, 2]


def unpack_keys(packed: np.ndarray) -> np.ndarray:
    packed = np.asarray(packed, dtype=np.int64)
    out = np.empty((packed.size, 3), dtype=np.int64)
    out[:, 0] = (packed >> 42) & _KEY_MASK
    out[:, 1] = (packed >> 21) & _KEY_MASK
    out[:, 2] = packed & _KEY_MASK
    return out - _KEY_BIAS


def world_to_key(points: np.ndarray, resolution: float) -> np.ndarray:
    """Lattice keys of world points (lattice origin at 0)."""
    return np.floor(np.asarray(points, dtype=float) / resolution).astype(np.int64)


def key_to_world(keys: np.ndarray, resolution: float) -> np.ndarray:
    """Voxel-center world coordinates of lattice keys."""
    return (np.asarray(keys, dtype=float) + 0.5) * resolution


def logit(p):
    return np.log(p) - np.log1p(-p)


def logistic(x):
    return 1.0 / (1.0 + np.exp(-x))


@dataclass(frozen=True)
class GridSpec:
    """Shape and placement of local grids relative to a robot pose."""

    dims: tuple[int, int, int] = (32, 32, 16)
    resolution: float = 0.2
    # meters of the window that sit below foot height
    floor_margin: float = 0.6

    def center_for(self, pose: Pose) -> Pose:
        """Grid center pose for a window anchored at a robot/foot pose."""
        half_h = self.dims[2] * self.resolution / 2.0
        return Pose(pose.x, pose.y, pose.z - self.floor_margin + half_h, pose.yaw)

    @property
    def n_voxels(self) -> int:
        return int(np.prod(self.dims))


def local_offsets(dims, resolution: float) -> np.ndarray:
    """Grid-frame voxel-center offsets, shape dims + (3,)."""
    axes = [((np.arange(n) + 0.5) - n / 2.0) * resolution for n in dims]
    return np.stack(np.meshgrid(*axes, indexing="ij"), axis=-1)


def window_keys(center: Pose, dims, resolution: float) -> np.ndarray:
    """World keys of each local voxel (nearest-voxel resampling), shape dims + (3,)."""
    off = local_offsets(dims, resolution)
    c, s = math.cos(center.yaw), math.sin(center.yaw)
    wx = center.x + c * off[..., 0] - s * off[..., 1]
    wy = center.y + s * off[..., 0] + c * off[..., 1]
    wz = center.z + off[..., 2]
    pts = np.stack([wx, wy, wz], axis=-1)
    return world_to_key(pts, resolution)


@dataclass(frozen=True, eq=False)
class LocalGrid:
    """Dense voxel cube with continuous occupancy values.

    ``values`` is indexed ``[a, b, c]`` along the grid's x, y, z axes. The
    array is made read-only on construction.
    """

    dims: tuple[int, int, int]
    resolution: float
    origin_pose: Pose
    values: np.ndarray

    def __post_init__(self):
        dims = tuple(int(d) for d in self.dims)
        if any(d <= 0 for d in dims):
            raise ValueError(f"dims must be positive, got {dims}")
        if not self.resolution > 0:
            raise ValueError("resolution must be > 0")
        values = np.array(self.values, dtype=np.float32, copy=True)
        if values.shape != dims:
            raise ValueError(f"values shape {values.shape} != dims {dims}")
        if not np.all(np.isfinite(values)):
            raise ValueError("grid values must be finite")
        values.setflags(write=False)
        object.__setattr__(self, "dims", dims)
        object.__setattr__(self, "origin_pose", Pose(*map(float, self.origin_pose)))
        object.__setattr__(self, "values", values)

    def __eq__(self, other):
        if not isinstance(other, LocalGrid):
            return NotImplemented
        return (
            self.dims == other.dims
            and self.resolution == other.resolution
            and self.origin_pose == other.origin_pose
            and np.array_equal(self.values, other.values)
        )

    __hash__ = None

    def keys(self) -> np.ndarray:
        return window_keys(self.origin_pose, self.dims, self.resolution)

    def with_values(self, values: np.ndarray) -> "LocalGrid":
        return LocalGrid(self.dims, self.resolution, self.origin_pose, values)


@dataclass(frozen=True, eq=False)
class MaskedSubmap:
    """A local grid plus its observed-occupied / observed-free masks."""

    grid: LocalGrid
    occupied_mask: np.ndarray
    unoccupied_mask: np.ndarray

    def __post_init__(self):
        occ = np.array(self.occupied_mask, dtype=bool)
        free = np.array(self.unoccupied_mask, dtype=bool)
        if occ.shape != self.grid.dims or free.shape != self.grid.dims:
            raise ValueError("masks must match grid dims")
        if np.any(occ & free):
            raise ValueError("a voxel cannot be both occupied and unoccupied")
        occ.setflags(write=False)
        free.setflags(write=False)
        object.__setattr__(self, "occupied_mask", occ)
        object.__setattr__(self, "unoccupied_mask", free)

    @property
    def observed_mask(self) -> np.ndarray:
        return self.occupied_mask | self.unoccupied_mask

    @property
    def unknown_mask(self) -> np.ndarray:
        return ~self.observed_mask

    @property
    def unknown_fraction(self) -> float:
        return float(self.unknown_mask.mean())


@dataclass
class GlobalOccupancyMap:
    """Sparse log-odds voxel map with per-cell provenance.

    Cells live in flat arrays addressed through a hash of packed integer
    keys. A cell that has ever been touched by a sensor ray carries
    provenance ``sensed`` and belongs to the observed set for good.
    """

    resolution: float = 0.2
    prior: float = 0.5
    clamp_min: float = float(logit(0.12))
    clamp_max: float = float(logit(0.97))
    _index: dict = field(default_factory=dict, repr=False)
    _keys: np.ndarray = field(default_factory=lambda: np.empty((0, 3), np.int64), repr=False)
    _log_odds: np.ndarray = field(default_factory=lambda: np.empty(0), repr=False)
    _sensed: np.ndarray = field(default_factory=lambda: np.empty(0, bool), repr=False)
    _size: int = field(default=0, repr=False)
    _lock: threading.RLock = field(default_factory=threading.RLock, repr=False, compare=False)

    def __post_init__(self):
        if not self.resolution > 0:
            raise ValueError("resolution must be > 0")
        if not 0.0 < self.prior < 1.0:
            raise ValueError("prior must lie in (0, 1)")
        if not self.clamp_min < self.clamp_max:
            raise ValueError("clamp_min must be < clamp_max")

    # -- basic container protocol -------------------------------------------

    def __len__(self) -> int:
        return self._size

    def __contains__(self, key) -> bool:
        return int(pack_keys(np.asarray(key))[0]) in self._index

    def get(self, key):
        """``(log_odds, provenance)`` for a key, or None when unknown."""
        row = self._index.get(int(pack_keys(np.asarray(key))[0]))
        if row is None:
            return None
        return float(self._log_odds[row]), SENSED if self._sensed[row] else PREDICTED

    def probability(self, key) -> float | None:
        cell = self.get(key)
        return None if cell is None else float(logistic(cell[0]))

    def items(self) -> Iterator[tuple[VoxelKey, float, str]]:
        with self._lock:
            keys = self._keys[: self._size].copy()
            lo = self._log_odds[: self._size].copy()
            sensed = self._sensed[: self._size].copy()
        for key, value, s in zip(keys.tolist(), lo.tolist(), sensed.tolist()):
            yield VoxelKey(*key), value, SENSED if s else PREDICTED

    def arrays(self) -> tuple[np.ndarray, np.ndarray, np.ndarray]:
        """Consistent copies of (keys, log_odds, sensed) for all cells."""
        with self._lock:
            n = self._size
            return self._keys[:n].copy(), self._log_odds[:n].copy(), self._sensed[:n].copy()

    def observed_keys(self) -> np.ndarray:
        keys, _, sensed = self.arrays()
        return keys[sensed]

    def __eq__(self, other):
        if not isinstance(other, GlobalOccupancyMap):
            return NotImplemented
        if (self.resolution, self.prior, self.clamp_min, self.clamp_max) != (
            other.resolution,
            other.prior,
            other.clamp_min,
            other.clamp_max,
        ):
            return False
        return _canonical(self) == _canonical(other)

    __hash__ = None

    def copy(self) -> "GlobalOccupancyMap":
        with self._lock:
            n = self._size
            return GlobalOccupancyMap(
                self.resolution,
                self.prior,
                self.clamp_min,
                self.clamp_max,
                dict(self._index),
                self._keys[:n].copy(),
                self._log_odds[:n].copy(),
                self._sensed[:n].copy(),
                n,
            )

    # -- row management ------------------------------------------------------

    def lookup(self, keys: np.ndarray) -> np.ndarray:
        """Row index per key, -1 where the key is absent."""
        packed = pack_keys(keys)
        get = self._index.get
        return np.fromiter((get(p, -1) for p in packed.tolist()), dtype=np.int64, count=packed.size)

    def _grow(self, need: int) -> None:
        cap = self._log_odds.size
        if need <= cap:
            return
        new_cap = max(need, 2 * cap, 1024)
        keys = np.empty((new_cap, 3), np.int64)
        lo = np.empty(new_cap)
        sensed = np.zeros(new_cap, bool)
        keys[: self._size] = self._keys[: self._size]
        lo[: self._size] = self._log_odds[: self._size]
        sensed[: self._size] = self._sensed[: self._size]
        self._keys, self._log_odds, self._sensed = keys, lo, sensed

    def _ensure(self, keys: np.ndarray) -> np.ndarray:
        """Rows for ``keys`` (must be unique), creating absent cells at the prior."""
        keys = np.asarray(keys, dtype=np.int64).reshape(-1, 3)
        packed = pack_keys(keys)
        rows = self.lookup(keys)
        missing = np.flatnonzero(rows < 0)
        if missing.size:
            start = self._size
            self._grow(start + missing.size)
            new_rows = np.arange(start, start + missing.size)
            self._keys[new_rows] = keys[missing]
            self._log_odds[new_rows] = float(logit(self.prior))
            self._sensed[new_rows] = False
            self._index.update(zip(packed[missing].tolist(), new_rows.tolist()))
            self._size += missing.size
            rows[missing] = new_rows
        return rows

    def apply_update(self, keys: np.ndarray, delta, sensed: bool) -> None:
        """Add log-odds ``delta`` to each (unique) key, then clamp."""
        with self._lock:
            rows = self._ensure(keys)
            if rows.size == 0:
                return
            lo = self._log_odds[rows] + delta
            self._log_odds[rows] = np.clip(lo, self.clamp_min, self.clamp_max)
            if sensed:
                self._sensed[rows] = True

    def set_log_odds(self, keys: np.ndarray, value: float, sensed: bool = False) -> None:
        with self._lock:
            rows = self._ensure(keys)
            self._log_odds[rows] = np.clip(value, self.clamp_min, self.clamp_max)
            if sensed:
                self._sensed[rows] = True

    def remove_where(self, drop: np.ndarray) -> int:
        """Delete cells whose row is flagged in ``drop``; returns the count removed."""
        with self._lock:
            n = self._size
            keep = ~np.asarray(drop[:n], dtype=bool)
            removed = int(n - keep.sum())
            if removed == 0:
                return 0
            self._keys = self._keys[:n][keep].copy()
            self._log_odds = self._log_odds[:n][keep].copy()
            self._sensed = self._sensed[:n][keep].copy()
            self._size = int(keep.sum())
            packed = pack_keys(self._keys)
            self._index = dict(zip(packed.tolist(), range(self._size)))
            return removed

    # -- dense views -----------------------------------------------------------

    def dense_state(self, lo_key, shape) -> np.ndarray:
        """Ternary state array over a key box: 0 unknown, 1 free, 2 occupied."""
        lo_key = np.asarray(lo_key, dtype=np.int64)
        state = np.zeros(tuple(shape), dtype=np.int8)
        keys, lo, _ = self.arrays()
        rel = keys - lo_key
        inside = np.all((rel >= 0) & (rel < np.asarray(shape)), axis=1)
        rel = rel[inside]
        state[rel[:, 0], rel[:, 1], rel[:, 2]] = np.where(lo[inside] > 0, 2, 1)
        return state


def _canonical(m: GlobalOccupancyMap) -> dict:
    keys, lo, sensed = m.arrays()
    return {tuple(k): (v, s) for k, v, s in zip(keys.tolist(), lo.tolist(), sensed.tolist())}


def extract_submap(
    gmap: GlobalOccupancyMap,
    center: Pose,
    dims=(32, 32, 16),
    resolution: float | None = None,
    sensed_only: bool = False,
) -> MaskedSubmap:
    """Cut a yaw-aligned window out of the global map.

    Occupied cells (log-odds > 0) read as 1.0, present non-occupied cells as
    0.0, absent cells as 0.5. With ``sensed_only`` the predicted cells are
    treated as unknown, which is what the inpainting sampler needs.
    """
    resolution = gmap.resolution if resolution is None else resolution
    if not math.isclose(resolution, gmap.resolution, rel_tol=0, abs_tol=1e-12):
        raise ValueError("window resolution must match the map resolution")
    dims = tuple(int(d) for d in dims)
    if any(d <= 0 for d in dims):
        raise ValueError("dims must be positive")
    keys = window_keys(center, dims, resolution).reshape(-1, 3)
    with gmap._lock:
        rows = gmap.lookup(keys)
        present = rows >= 0
        lo = np.zeros(rows.size)
        lo[present] = gmap._log_odds[rows[present]]
        if sensed_only:
            sensed = np.zeros(rows.size, bool)
            sensed[present] = gmap._sensed[rows[present]]
            present &= sensed
    occ = present & (lo > 0)
    free = present & (lo <= 0)
    values = np.full(rows.size, 0.5, dtype=np.float32)
    values[occ] = 1.0
    values[free] = 0.0
    grid = LocalGrid(dims, resolution, center, values.reshape(dims))
    return MaskedSubmap(grid, occ.reshape(dims), free.reshape(dims))


def binarize(grid: LocalGrid, threshold: float = 0.5) -> set[VoxelKey]:
    """World keys whose value is at least ``threshold``."""
    if not 0.0 < threshold < 1.0:
        raise ValueError("threshold must lie in (0, 1)")
    keys = grid.keys()[grid.values >= threshold]
    return {VoxelKey(*k) for k in keys.tolist()}


def binarize_local(grid: LocalGrid, threshold: float = 0.5) -> set[tuple[int, int, int]]:
    """Like :func:`binarize` but in local grid indices (lattice-independent)."""
    if not 0.0 < threshold < 1.0:
        raise ValueError("threshold must lie in (0, 1)")
    return {tuple(idx) for idx in np.argwhere(grid.values >= threshold).tolist()}
