"""Shared constructors for tests."""

import numpy as np
import torch

from occugen.denoiser import UNetSpec, make_model
from occugen.grid import LocalGrid, MaskedSubmap, Pose


def random_submap(rng, dims=(8, 8, 4), p_obs=0.5, p_occ=0.3) -> MaskedSubmap:
    occ_truth = rng.random(dims) < p_occ
    observed = rng.random(dims) < p_obs
    values = np.where(observed, occ_truth.astype(np.float32), 0.5)
    grid = LocalGrid(dims, 0.2, Pose(0.0, 0.0, 0.0), values)
    return MaskedSubmap(grid, observed & occ_truth, observed & ~occ_truth)


def noisy_denoiser(seed=0):
    """A cheap stand-in network: arbitrary but deterministic noise estimates."""
    def denoise(x_t, t):
        return np.tanh(x_t * (1 + 0.001 * t)) * 0.5
    return denoise


def gradient_check_error(seed: int = 0, h: float = 1e-6) -> float:
    """Relative error between backprop and central differences over every parameter of a 4^3 toy."""
    torch.manual_seed(seed)
    m = make_model(UNetSpec(channels=(4, 8), stem_stride=1, time_embed=8, groups=2, zero_head=False), seed=seed + 1)
    m = m.double()
    for p in m.parameters():
        p.data += 0.05 * torch.randn_like(p)
    x = torch.randn((2, 1, 4, 4, 4), dtype=torch.float64)
    t = torch.tensor([3.0, 700.0], dtype=torch.float64)
    target = torch.randn_like(x)
    params = list(m.parameters())

    def loss():
        return ((m(x, t) - target) ** 2).mean()

    m.zero_grad()
    loss().backward()
    analytic = torch.cat([p.grad.flatten() for p in params])
    numeric = []
    with torch.no_grad():
        for p in params:
            flat = p.data.view(-1)
            for i in range(flat.numel()):
                old = flat[i].item()
                flat[i] = old + h
                up = loss().item()
                flat[i] = old - h
                down = loss().item()
                flat[i] = old
                numeric.append((up - down) / (2 * h))
    numeric = torch.tensor(numeric, dtype=torch.float64)
    return float((analytic - numeric).norm() / max(analytic.norm(), numeric.norm()))
