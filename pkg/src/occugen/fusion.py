"""Occupancy map updates: sensor scans and fused diffusion predictions."""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

from .grid import GlobalOccupancyMap, LocalGrid, MaskedSubmap, logit, pack_keys, unpack_keys
from .sensor import Scan


@dataclass(frozen=True)
class FusionParams:
    p_hit_sensor: float = 0.7
    p_miss_sensor: float = 0.4
    p_hit_diff: float = 0.6
    p_miss_diff: float = 0.45
    prior: float = 0.5
    clamp_min: float = float(logit(0.12))
    clamp_max: float = float(logit(0.97))
    threshold: float = 0.5

    def __post_init__(self):
        for name in ("p_hit_sensor", "p_miss_sensor", "p_hit_diff", "p_miss_diff", "prior"):
            v = getattr(self, name)
            if not 0.0 < v < 1.0:
                raise ValueError(f"{name} must lie in (0, 1), got {v}")
        if not (self.p_miss_sensor < 0.5 <= self.p_hit_sensor and self.p_miss_diff < 0.5 <= self.p_hit_diff):
            raise ValueError("need p_miss < 0.5 <= p_hit for sensor and diffusion likelihoods")
        if not self.p_hit_diff < self.p_hit_sensor:
            raise ValueError("the diffusion hit likelihood must be weaker than the sensor's")
        if not self.clamp_min < self.clamp_max:
            raise ValueError("clamp_min must be < clamp_max")

    def new_map(self, resolution: float = 0.2) -> GlobalOccupancyMap:
        return GlobalOccupancyMap(resolution, self.prior, self.clamp_min, self.clamp_max)

    def delta(self, p: float) -> float:
        """Log-odds increment of one measurement with likelihood ``p``."""
        return float(logit(p) - logit(self.prior))


def bayes_update(p_prev, p_meas, prior):
    """One step of the recursive occupancy update, in probability form.

    P(m | j_1:t) = [1 + (1-p)/p * (1-P_prev)/P_prev * P(m)/(1-P(m))]^-1, where
    ``p`` is P(m | d_t) for voxels outside the observed set and P(m | z_t)
    inside it.
    """
    ratio = (1.0 - p_meas) / p_meas * (1.0 - p_prev) / p_prev * prior / (1.0 - prior)
    return 1.0 / (1.0 + ratio)


def piecewise_update(p_prev, observed: bool, p_diff, p_sensor, prior):
    """The two-branch merge rule: diffusion likelihood off the observed set, sensor on it."""
    return bayes_update(p_prev, p_sensor if observed else p_diff, prior)


def _check_res(gmap: GlobalOccupancyMap, resolution: float) -> None:
    if not math.isclose(gmap.resolution, resolution, rel_tol=0, abs_tol=1e-12):
        raise ValueError(f"resolution mismatch: map {gmap.resolution}, input {resolution}")


def insert_scan(
    gmap: GlobalOccupancyMap,
    scan: Scan,
    params: FusionParams,
    resolution: float | None = None,
    replace_predictions: bool = False,
):
    """Integrate one scan: hit cells get a hit update, passed-through cells a miss update.

    Each cell is updated at most once per scan and hits take precedence, as
    in OctoMap's per-scan key sets. Every touched cell joins the observed set.
    With ``replace_predictions`` a touched cell that only holds a prediction
    is reset to the prior first, so the measurement replaces the prediction
    instead of being added to it.
    """
    if resolution is not None:
        _check_res(gmap, resolution)
    hits = np.unique(pack_keys(scan.hit_keys))
    free = np.setdiff1d(np.unique(pack_keys(scan.traversed_keys)), hits, assume_unique=True)
    hits, free = unpack_keys(hits), unpack_keys(free)
    if replace_predictions:
        with gmap._lock:
            touched = np.concatenate([hits, free])
            rows = gmap.lookup(touched)
            rows = rows[rows >= 0]
            drop = np.zeros(len(gmap), bool)
            drop[rows[~gmap._sensed[rows]]] = True
            if drop.any():
                gmap.remove_where(drop)
    gmap.apply_update(free, params.delta(params.p_miss_sensor), sensed=True)
    gmap.apply_update(hits, params.delta(params.p_hit_sensor), sensed=True)
    return gmap


def _window_cells(prediction: LocalGrid, mask: MaskedSubmap):
    if (
        prediction.dims != mask.grid.dims
        or prediction.origin_pose != mask.grid.origin_pose
        or prediction.resolution != mask.grid.resolution
    ):
        raise ValueError("prediction is not aligned with the mask window")
    keys = prediction.keys().reshape(-1, 3)
    values = np.asarray(prediction.values).reshape(-1)
    # nearest-voxel resampling can map two local cells to one world key;
    # the first in x-fastest order wins
    order = np.arange(keys.shape[0]).reshape(prediction.dims).ravel(order="F")
    keys, values = keys[order], values[order]
    _, first = np.unique(pack_keys(keys), return_index=True)
    first.sort()
    return keys[first], values[first]


def _unobserved(gmap: GlobalOccupancyMap, keys: np.ndarray) -> np.ndarray:
    rows = gmap.lookup(keys)
    sensed = np.zeros(len(keys), bool)
    present = rows >= 0
    sensed[present] = gmap._sensed[rows[present]]
    return ~sensed


def fuse_prediction(gmap: GlobalOccupancyMap, prediction: LocalGrid, mask: MaskedSubmap, params: FusionParams):
    """Probabilistic merge of one prediction into cells outside the observed set."""
    _check_res(gmap, prediction.resolution)
    with gmap._lock:
        keys, values = _window_cells(prediction, mask)
        free = _unobserved(gmap, keys)
        keys, values = keys[free], values[free]
        occ = values >= params.threshold
        gmap.apply_update(keys[occ], params.delta(params.p_hit_diff), sensed=False)
        gmap.apply_update(keys[~occ], params.delta(params.p_miss_diff), sensed=False)
    return gmap


def merge_one_shot(gmap: GlobalOccupancyMap, prediction: LocalGrid, mask: MaskedSubmap, params: FusionParams):
    """Fire-and-forget merge: drop earlier predictions, then write this one's occupied cells at full confidence."""
    _check_res(gmap, prediction.resolution)
    with gmap._lock:
        clear_predictions(gmap)
        keys, values = _window_cells(prediction, mask)
        keep = _unobserved(gmap, keys) & (values >= params.threshold)
        gmap.set_log_odds(keys[keep], gmap.clamp_max, sensed=False)
    return gmap


def clear_predictions(gmap: GlobalOccupancyMap) -> GlobalOccupancyMap:
    """Remove every cell no sensor has touched."""
    with gmap._lock:
        gmap.remove_where(~gmap._sensed[: len(gmap)])
    return gmap


def coverage(gmap: GlobalOccupancyMap, target_keys: np.ndarray) -> float:
    """Fraction of target voxels in the observed set."""
    target_keys = np.asarray(target_keys).reshape(-1, 3)
    if len(target_keys) == 0:
        raise ValueError("empty target set")
    rows = gmap.lookup(target_keys)
    present = rows >= 0
    sensed = np.zeros(len(rows), bool)
    sensed[present] = gmap._sensed[rows[present]]
    return float(sensed.mean())
