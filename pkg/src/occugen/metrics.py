"""Prediction quality metrics: IoU, FID and KID on a fixed random 3D feature embedder."""

from __future__ import annotations

from dataclasses import dataclass, field
from itertools import combinations

import numpy as np
import torch
import torch.nn.functional as F

from .grid import LocalGrid

IOU_BINS = np.linspace(0.0, 1.0, 21)


def iou(a, b) -> float:
    """|a & b| / |a | b| for voxel sets or same-shape boolean arrays; iou(empty, empty) = 1."""
    if isinstance(a, np.ndarray) or isinstance(b, np.ndarray):
        a, b = np.asarray(a, bool), np.asarray(b, bool)
        if a.shape != b.shape:
            raise ValueError("iou needs arrays on the same lattice")
        union = np.count_nonzero(a | b)
        return 1.0 if union == 0 else np.count_nonzero(a & b) / union
    a, b = set(a), set(b)
    union = len(a | b)
    return 1.0 if union == 0 else len(a & b) / union


def pairwise_iou(grids: list, threshold: float = 0.5) -> list[float]:
    occ = [np.asarray(g.values if isinstance(g, LocalGrid) else g) >= threshold for g in grids]
    return [iou(occ[i], occ[j]) for i, j in combinations(range(len(occ)), 2)]


def iou_pmf(values) -> np.ndarray:
    """Probability mass over 20 equal IoU bins on [0, 1]."""
    values = np.asarray(values, dtype=float)
    if values.size == 0:
        return np.zeros(len(IOU_BINS) - 1)
    counts, _ = np.histogram(values, bins=IOU_BINS)
    return counts / values.size


def _check_pair(a, b, name: str):
    a = np.atleast_2d(np.asarray(a, dtype=float))
    b = np.atleast_2d(np.asarray(b, dtype=float))
    if a.shape[1] != b.shape[1]:
        raise ValueError(f"{name}: feature dimensions differ ({a.shape[1]} vs {b.shape[1]})")
    if len(a) < 2 or len(b) < 2:
        raise ValueError(f"{name} needs at least 2 samples per set")
    return a, b


def psd_sqrt(m: np.ndarray) -> np.ndarray:
    """Symmetric square root with eigenvalues floored at 0."""
    m = 0.5 * (m + m.T)
    try:
        w, v = np.linalg.eigh(m)
    except np.linalg.LinAlgError as exc:
        raise FloatingPointError(
            f"eigendecomposition failed: shape {m.shape}, finite={np.isfinite(m).all()}, trace={np.trace(m):.3g}"
        ) from exc
    return (v * np.sqrt(np.clip(w, 0.0, None))) @ v.T


def fid(feats_a, feats_b) -> float:
    """Frechet distance between Gaussians fitted to two feature sets."""
    a, b = _check_pair(feats_a, feats_b, "fid")
    mu_a, mu_b = a.mean(0), b.mean(0)
    cov_a = np.atleast_2d(np.cov(a, rowvar=False))
    cov_b = np.atleast_2d(np.cov(b, rowvar=False))
    sa = psd_sqrt(cov_a)
    cross = sa @ cov_b @ sa
    w = np.linalg.eigvalsh(0.5 * (cross + cross.T))
    tr_sqrt = np.sqrt(np.clip(w, 0.0, None)).sum()
    d = float(np.sum((mu_a - mu_b) ** 2) + np.trace(cov_a) + np.trace(cov_b) - 2.0 * tr_sqrt)
    return max(d, 0.0)


def polynomial_kernel(x: np.ndarray, y: np.ndarray) -> np.ndarray:
    return (x @ y.T / x.shape[1] + 1.0) ** 3


def kid(feats_a, feats_b) -> float:
    """Unbiased squared MMD under the cubic polynomial kernel, times 1000."""
    a, b = _check_pair(feats_a, feats_b, "kid")
    m, n = len(a), len(b)
    kaa = polynomial_kernel(a, a)
    kbb = polynomial_kernel(b, b)
    kab = polynomial_kernel(a, b)
    mmd = (
        (kaa.sum() - np.trace(kaa)) / (m * (m - 1))
        + (kbb.sum() - np.trace(kbb)) / (n * (n - 1))
        - 2.0 * kab.mean()
    )
    return float(1000.0 * mmd)


@dataclass
class FeatureEmbedder:
    """Two random conv layers with pooling; a stand-in for a pretrained feature network.

    The filter bank depends only on ``seed``, so every set embedded with the
    same seed lives in the same feature space.
    """

    seed: int = 0
    channels: tuple[int, int] = (8, 16)
    _w1: torch.Tensor = field(init=False, repr=False)
    _w2: torch.Tensor = field(init=False, repr=False)

    def __post_init__(self):
        g = torch.Generator().manual_seed(int(self.seed))
        c1, c2 = self.channels
        self._w1 = torch.randn((c1, 1, 3, 3, 3), generator=g, dtype=torch.float64) / np.sqrt(27)
        self._w2 = torch.randn((c2, c1, 3, 3, 3), generator=g, dtype=torch.float64) / np.sqrt(27 * c1)
        self._b1 = torch.randn(c1, generator=g, dtype=torch.float64) * 0.1
        self._b2 = torch.randn(c2, generator=g, dtype=torch.float64) * 0.1

    @property
    def dim(self) -> int:
        return self.channels[1] * 9

    def __call__(self, grids) -> np.ndarray:
        arrs = [np.asarray(g.values if isinstance(g, LocalGrid) else g, dtype=np.float64) for g in grids]
        if not arrs:
            raise ValueError("nothing to embed")
        x = torch.from_numpy(np.stack(arrs))[:, None]
        with torch.no_grad():
            h = F.relu(F.conv3d(x, self._w1, self._b1, padding=1))
            h = F.avg_pool3d(h, 2)
            h = F.relu(F.conv3d(h, self._w2, self._b2, padding=1))
            octants = F.adaptive_avg_pool3d(h, 2).flatten(1)
            spread = h.flatten(2).std(dim=2)
        return torch.cat([octants, spread], dim=1).numpy()


def evaluate_run(
    pred_windows: list,
    gt_windows: list,
    embedder: FeatureEmbedder,
    prediction_groups: list | None = None,
    masks: list | None = None,
) -> dict:
    """FID, KIDx1000, pairwise IoU statistics and unknown fraction for paired windows.

    ``pred_windows[i]`` and ``gt_windows[i]`` must be cut at the same pose.
    ``prediction_groups`` holds the k raw predictions made at each pose and
    ``masks`` the masked submaps they were conditioned on.
    """
    if len(pred_windows) == 0 or len(gt_windows) == 0:
        raise ValueError("empty window set")
    if len(pred_windows) != len(gt_windows):
        raise ValueError(f"{len(pred_windows)} evaluated windows vs {len(gt_windows)} ground-truth windows")
    for p, g in zip(pred_windows, gt_windows):
        if np.shape(getattr(p, "values", p)) != np.shape(getattr(g, "values", g)):
            raise ValueError("paired windows differ in shape")
    fa = embedder(pred_windows)
    fb = embedder(gt_windows)
    out = {"n_windows": len(pred_windows), "FID": fid(fa, fb), "KIDx1000": kid(fa, fb)}
    ious = [v for group in (prediction_groups or []) for v in pairwise_iou(group)]
    out["iou_mean"] = float(np.mean(ious)) if ious else None
    out["iou_pmf"] = iou_pmf(ious).tolist()
    if masks:
        out["unknown_pct"] = float(100.0 * np.mean([m.unknown_fraction for m in masks]))
    else:
        out["unknown_pct"] = None
    return out
