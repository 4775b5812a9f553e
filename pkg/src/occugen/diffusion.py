"""DDPM schedules, forward corruption, strided reverse sampling and occupancy inpainting.

A denoiser is any callable ``eps_hat = denoiser(x_t, t)`` taking a batch
``x_t`` of shape ``(n, Dx, Dy, Dz)`` in the internal [-1, 1] value range and
an integer training step ``t``, and returning an array of the same shape.
"""

from __future__ import annotations

from dataclasses import dataclass
from typing import Callable, Sequence

import numpy as np

from .grid import LocalGrid, MaskedSubmap

Denoiser = Callable[[np.ndarray, int], np.ndarray]


@dataclass(frozen=True, eq=False)
class NoiseSchedule:
    """Arrays are indexed by step ``t`` in ``[0, T]``; entry 0 is the clean state."""

    T: int
    beta: np.ndarray
    alpha: np.ndarray
    alpha_bar: np.ndarray

    def check_step(self, t: int) -> int:
        t = int(t)
        if not 0 <= t <= self.T:
            raise ValueError(f"step {t} outside [0, {self.T}]")
        return t


def linear_schedule(T: int = 1000, beta_start: float = 1e-4, beta_end: float = 0.02) -> NoiseSchedule:
    if T < 1:
        raise ValueError("T must be >= 1")
    if not 0.0 < beta_start < beta_end < 1.0:
        raise ValueError("need 0 < beta_start < beta_end < 1")
    beta = np.concatenate([[0.0], np.linspace(beta_start, beta_end, T)])
    alpha = 1.0 - beta
    alpha_bar = np.cumprod(alpha)
    for arr in (beta, alpha, alpha_bar):
        arr.setflags(write=False)
    return NoiseSchedule(T, beta, alpha, alpha_bar)


def inference_steps(T: int, n: int = 30) -> np.ndarray:
    """Descending strided subsequence of ``[1, T]`` of length ``n`` ending at 1."""
    if not 1 <= n <= T:
        raise ValueError(f"need 1 <= n <= T, got n={n}, T={T}")
    if n == 1:
        return np.array([T])
    return np.round(np.linspace(T, 1, n)).astype(int)


def to_internal(values01):
    return 2.0 * np.asarray(values01, dtype=float) - 1.0


def from_internal(x):
    return np.clip((np.asarray(x) + 1.0) / 2.0, 0.0, 1.0)


def forward_noise(x0, t: int, epsilon, schedule: NoiseSchedule) -> np.ndarray:
    """Sample x_t directly from x_0: sqrt(abar_t) x_0 + sqrt(1 - abar_t) eps."""
    t = schedule.check_step(t)
    ab = schedule.alpha_bar[t]
    x0 = np.asarray(x0, dtype=float)
    epsilon = np.asarray(epsilon, dtype=float)
    if epsilon.shape != x0.shape:
        raise ValueError("epsilon must match x0's shape")
    return np.sqrt(ab) * x0 + np.sqrt(1.0 - ab) * epsilon


def reverse_step(x_t, t_hi: int, t_lo: int, eps_hat, schedule: NoiseSchedule, noise=None) -> np.ndarray:
    """One ancestral step from ``t_hi`` down to ``t_lo`` (strided when the gap exceeds 1).

    The single-step alpha/beta are bridged across the stride, and the
    variance is the fixed posterior one, zero when landing on t = 0.
    """
    t_hi = schedule.check_step(t_hi)
    t_lo = schedule.check_step(t_lo)
    if not t_lo < t_hi:
        raise ValueError(f"reverse step needs t_lo < t_hi, got {t_hi} -> {t_lo}")
    ab_hi = schedule.alpha_bar[t_hi]
    ab_lo = schedule.alpha_bar[t_lo]
    a = ab_hi / ab_lo
    b = 1.0 - a
    mean = (np.asarray(x_t) - b / np.sqrt(1.0 - ab_hi) * np.asarray(eps_hat)) / np.sqrt(a)
    if t_lo == 0 or noise is None:
        return mean
    var = (1.0 - ab_lo) / (1.0 - ab_hi) * b
    return mean + np.sqrt(var) * np.asarray(noise)


def posterior_variance(schedule: NoiseSchedule, t_hi: int, t_lo: int) -> float:
    ab_hi = schedule.alpha_bar[t_hi]
    ab_lo = schedule.alpha_bar[t_lo]
    return float((1.0 - ab_lo) / (1.0 - ab_hi) * (1.0 - ab_hi / ab_lo))


def _inpaint_chains(
    denoiser: Denoiser,
    submaps: Sequence[MaskedSubmap],
    schedule: NoiseSchedule,
    steps: np.ndarray,
    seeds: Sequence[int],
) -> list[LocalGrid]:
    """Run chain ``c`` on ``submaps[c]`` with generator ``seeds[c]``, all in lockstep."""
    dims = submaps[0].grid.dims
    if any(s.grid.dims != dims for s in submaps):
        raise ValueError("chains sampled together must share one window shape")
    rngs = [np.random.default_rng(int(s)) for s in seeds]
    masks = [s.observed_mask for s in submaps]
    obs_vals = [to_internal(s.grid.values)[m] for s, m in zip(submaps, masks)]

    x = np.stack([r.standard_normal(dims) for r in rngs])

    def inpaint(level: int) -> None:
        ab = schedule.alpha_bar[level]
        for c, r in enumerate(rngs):
            n_obs = obs_vals[c].size
            if n_obs == 0:
                continue
            if level == 0:
                x[c][masks[c]] = obs_vals[c]
            else:
                x[c][masks[c]] = np.sqrt(ab) * obs_vals[c] + np.sqrt(1.0 - ab) * r.standard_normal(n_obs)

    steps = [int(s) for s in steps]
    inpaint(steps[0])
    for i, t_hi in enumerate(steps):
        t_lo = steps[i + 1] if i + 1 < len(steps) else 0
        eps = np.asarray(denoiser(x, t_hi), dtype=float)
        if eps.shape != x.shape:
            raise ValueError(f"denoiser returned shape {eps.shape}, expected {x.shape}")
        noise = None if t_lo == 0 else np.stack([r.standard_normal(dims) for r in rngs])
        x = reverse_step(x, t_hi, t_lo, eps, schedule, noise)
        inpaint(t_lo)
    return [s.grid.with_values(from_internal(xc)) for s, xc in zip(submaps, x)]


def inpaint_sample(
    denoiser: Denoiser,
    submap: MaskedSubmap,
    schedule: NoiseSchedule,
    steps: np.ndarray | None = None,
    rng_seed: int = 0,
) -> LocalGrid:
    """Generate unknown voxels while pinning observed ones to the observation.

    Starting from pure noise, every step re-noises the observed values to
    the chain's current level and writes them over the state, then takes a
    reverse step. The last overwrite happens at level 0, so observed voxels
    in the output equal the observation exactly.
    """
    steps = inference_steps(schedule.T, 30) if steps is None else np.asarray(steps)
    return _inpaint_chains(denoiser, [submap], schedule, steps, [rng_seed])[0]


def sample_batch(
    denoiser: Denoiser,
    submap: MaskedSubmap,
    k: int,
    seeds: Sequence[int],
    schedule: NoiseSchedule,
    steps: np.ndarray | None = None,
    parallel: bool | int = True,
) -> list[LocalGrid]:
    """``k`` independent inpainting samples, one per seed, in seed order.

    ``parallel=True`` runs all chains in one lockstep batch, an integer caps
    the chains per batch, and ``False`` runs them one after another. All give
    identical grids.
    """
    if k < 1:
        raise ValueError("k must be >= 1")
    seeds = [int(s) for s in seeds]
    if len(seeds) != k:
        raise ValueError(f"need exactly {k} seeds, got {len(seeds)}")
    if len(set(seeds)) != k:
        raise ValueError("duplicate seeds")
    steps = inference_steps(schedule.T, 30) if steps is None else np.asarray(steps)
    width = k if parallel is True else max(1, int(parallel))
    out: list[LocalGrid] = []
    for i in range(0, k, width):
        chunk = seeds[i : i + width]
        out.extend(_inpaint_chains(denoiser, [submap] * len(chunk), schedule, steps, chunk))
    return out


def sample_groups(
    denoiser: Denoiser,
    requests: Sequence[tuple[MaskedSubmap, Sequence[int]]],
    schedule: NoiseSchedule,
    steps: np.ndarray | None = None,
) -> list[list[LocalGrid]]:
    """Several ``sample_batch`` requests (submap, seeds) sampled in one lockstep batch.

    Equivalent to calling ``sample_batch`` on each request in turn.
    """
    steps = inference_steps(schedule.T, 30) if steps is None else np.asarray(steps)
    subs, seeds, sizes = [], [], []
    for sub, ss in requests:
        ss = [int(s) for s in ss]
        if len(ss) < 1 or len(set(ss)) != len(ss):
            raise ValueError("each request needs at least one seed and no duplicates")
        subs.extend([sub] * len(ss))
        seeds.extend(ss)
        sizes.append(len(ss))
    if not subs:
        return []
    flat = _inpaint_chains(denoiser, subs, schedule, steps, seeds)
    out, i = [], 0
    for n in sizes:
        out.append(flat[i : i + n])
        i += n
    return out
