"""Noise-prediction networks: a small 3D U-Net, an analytic oracle, training."""

from __future__ import annotations

import json
import logging
import math
import time
from dataclasses import asdict, dataclass, field

import numpy as np
import torch
import torch.nn as nn
import torch.nn.functional as F

from .diffusion import NoiseSchedule, linear_schedule, to_internal
from .grid import GridSpec, LocalGrid, Pose
from .io import MapFormatError, MapVersionError, TruncatedPayloadError, atomic_write_bytes
from .sensor import FREE
from .worlds import Scenario, free_poses

log = logging.getLogger(__name__)

CHECKPOINT_MAGIC = b"OCCM1"


@dataclass(frozen=True)
class UNetSpec:
    """Architecture descriptor. ``channels`` has one entry per resolution level."""

    channels: tuple[int, ...] = (16, 32, 64)
    stem_stride: int = 2
    time_embed: int = 32
    groups: int = 4
    zero_head: bool = True

    @property
    def levels(self) -> int:
        return len(self.channels) - 1

    @property
    def divisor(self) -> int:
        return self.stem_stride * 2**self.levels


def _groups(c: int, g: int) -> int:
    g = min(g, c)
    while c % g:
        g -= 1
    return g


def timestep_embedding(t: torch.Tensor, dim: int) -> torch.Tensor:
    half = dim // 2
    freqs = torch.exp(-math.log(10000.0) * torch.arange(half, dtype=t.dtype, device=t.device) / half)
    args = t[:, None] * freqs[None]
    return torch.cat([torch.sin(args), torch.cos(args)], dim=1)


class ResBlock(nn.Module):
    def __init__(self, channels: int, embed: int, groups: int):
        super().__init__()
        g = _groups(channels, groups)
        self.norm1 = nn.GroupNorm(g, channels)
        self.conv1 = nn.Conv3d(channels, channels, 3, padding=1)
        self.temb = nn.Linear(embed, channels)
        self.norm2 = nn.GroupNorm(g, channels)
        self.conv2 = nn.Conv3d(channels, channels, 3, padding=1)

    def forward(self, x, emb):
        h = self.conv1(F.silu(self.norm1(x)))
        h = h + self.temb(emb)[:, :, None, None, None]
        h = self.conv2(F.silu(self.norm2(h)))
        return x + h


class TinyUNet3D(nn.Module):
    """Encoder-decoder with residual blocks, skip connections and a timestep embedding."""

    def __init__(self, spec: UNetSpec = UNetSpec()):
        super().__init__()
        self.spec = spec
        c = spec.channels
        e = spec.time_embed
        self.stem = nn.Conv3d(1, c[0], 3, stride=spec.stem_stride, padding=1)
        self.time_mlp = nn.Sequential(nn.Linear(e, e), nn.SiLU())
        self.enc = nn.ModuleList([ResBlock(c[i], e, spec.groups) for i in range(spec.levels)])
        self.down = nn.ModuleList([nn.Conv3d(c[i], c[i + 1], 3, stride=2, padding=1) for i in range(spec.levels)])
        self.mid = ResBlock(c[-1], e, spec.groups)
        self.up = nn.ModuleList([nn.ConvTranspose3d(c[i + 1], c[i], 2, stride=2) for i in range(spec.levels)])
        self.dec = nn.ModuleList([ResBlock(c[i], e, spec.groups) for i in range(spec.levels)])
        if spec.stem_stride == 1:
            self.head = nn.Conv3d(c[0], 1, 3, padding=1)
        else:
            self.head = nn.ConvTranspose3d(c[0], 1, spec.stem_stride, stride=spec.stem_stride)
        if spec.zero_head:
            nn.init.zeros_(self.head.weight)
            nn.init.zeros_(self.head.bias)

    def forward(self, x: torch.Tensor, t: torch.Tensor) -> torch.Tensor:
        if x.dim() != 5 or x.shape[1] != 1:
            raise ValueError(f"expected input (n, 1, Dx, Dy, Dz), got {tuple(x.shape)}")
        if any(d % self.spec.divisor for d in x.shape[2:]):
            raise ValueError(f"grid dims {tuple(x.shape[2:])} must be divisible by {self.spec.divisor}")
        emb = self.time_mlp(timestep_embedding(t.to(x.dtype), self.spec.time_embed))
        h = self.stem(x)
        skips = []
        for block, down in zip(self.enc, self.down):
            h = block(h, emb)
            skips.append(h)
            h = down(h)
        h = self.mid(h, emb)
        for i in reversed(range(self.spec.levels)):
            h = self.up[i](h) + skips[i]
            h = self.dec[i](h, emb)
        return self.head(h)


def make_model(spec: UNetSpec = UNetSpec(), seed: int = 0) -> TinyUNet3D:
    gen_state = torch.random.get_rng_state()
    torch.manual_seed(seed)
    try:
        return TinyUNet3D(spec)
    finally:
        torch.random.set_rng_state(gen_state)


def forward(model: TinyUNet3D, x_t, t) -> np.ndarray:
    """Noise prediction for a single grid (numpy in, numpy out)."""
    x = torch.as_tensor(np.asarray(x_t), dtype=torch.float32)[None, None]
    with torch.no_grad():
        out = model(x, torch.tensor([float(t)]))
    return out[0, 0].double().numpy()


class TorchDenoiser:
    """Adapts a trained network to the sampler's ``denoiser(x, t)`` protocol.

    Inputs are evaluated in fixed-size micro-batches (zero padded), which
    keeps every chain's output independent of how chains are grouped.
    """

    def __init__(self, model: TinyUNet3D, grid_dims=None, micro_batch: int = 4):
        self.model = model.eval()
        self.grid_dims = None if grid_dims is None else tuple(grid_dims)
        self.micro_batch = int(micro_batch)

    def __call__(self, x: np.ndarray, t: int) -> np.ndarray:
        x = np.asarray(x)
        if self.grid_dims is not None and tuple(x.shape[1:]) != self.grid_dims:
            raise ValueError(f"denoiser trained on {self.grid_dims}, got grids of shape {tuple(x.shape[1:])}")
        n = x.shape[0]
        mb = self.micro_batch
        out = np.empty(x.shape, dtype=float)
        tt = torch.full((mb,), float(t))
        with torch.no_grad():
            for s in range(0, n, mb):
                chunk = np.zeros((mb,) + x.shape[1:], dtype=np.float32)
                m = min(mb, n - s)
                chunk[:m] = x[s : s + m]
                y = self.model(torch.from_numpy(chunk)[:, None], tt)
                out[s : s + m] = y[:m, 0].double().numpy()
        return out


def oracle_denoiser(x_target, schedule: NoiseSchedule):
    """Exact noise predictor for chains aimed at ``x_target`` (internal [-1, 1] scale)."""
    x_target = np.asarray(x_target, dtype=float)

    def denoise(x_t, t: int) -> np.ndarray:
        t = schedule.check_step(t)
        if t == 0:
            raise ValueError("oracle noise is undefined at t = 0")
        ab = schedule.alpha_bar[t]
        return (np.asarray(x_t, dtype=float) - np.sqrt(ab) * x_target) / np.sqrt(1.0 - ab)

    return denoise


# -- training ------------------------------------------------------------------


@dataclass(frozen=True)
class TrainConfig:
    batch_size: int = 16
    epochs: int = 20
    warmup_steps: int = 200
    lr_min: float = 1e-5
    lr_max: float = 2e-3
    T: int = 1000
    beta_start: float = 1e-4
    beta_end: float = 0.02
    seed: int = 0
    max_minutes: float = 30.0

    def __post_init__(self):
        if self.batch_size < 1 or self.epochs < 1 or self.warmup_steps < 0 or self.T < 1:
            raise ValueError("batch_size, epochs, T must be positive and warmup_steps >= 0")
        if not 0 < self.lr_min <= self.lr_max:
            raise ValueError("need 0 < lr_min <= lr_max")


def lr_at(step: int, total_steps: int, cfg: TrainConfig) -> float:
    """Linear warmup from lr_min to lr_max, then cosine decay back to lr_min."""
    if cfg.warmup_steps > 0 and step < cfg.warmup_steps:
        return cfg.lr_min + (cfg.lr_max - cfg.lr_min) * step / cfg.warmup_steps
    span = max(total_steps - cfg.warmup_steps, 1)
    frac = min(max(step - cfg.warmup_steps, 0) / span, 1.0)
    return cfg.lr_min + 0.5 * (cfg.lr_max - cfg.lr_min) * (1.0 + math.cos(math.pi * frac))


@dataclass
class TrainResult:
    model: TinyUNet3D
    losses: list = field(default_factory=list)  # (step, loss, lr)
    truncated: bool = False
    seconds: float = 0.0


def corpus_array(corpus) -> np.ndarray:
    if isinstance(corpus, np.ndarray):
        return np.asarray(corpus, dtype=np.float32)
    if len(corpus) == 0:
        raise ValueError("empty corpus")
    dims = corpus[0].dims
    if any(g.dims != dims for g in corpus):
        raise ValueError("corpus grids must share one shape")
    return np.stack([g.values for g in corpus]).astype(np.float32)


def train(model: TinyUNet3D, corpus, cfg: TrainConfig, schedule: NoiseSchedule | None = None) -> TrainResult:
    """Epsilon-prediction training with an l2 loss, Adam and warmup+cosine lr."""
    data = corpus_array(corpus)
    if len(data) == 0:
        raise ValueError("empty corpus")
    schedule = schedule or linear_schedule(cfg.T, cfg.beta_start, cfg.beta_end)
    ab = torch.tensor(schedule.alpha_bar, dtype=torch.float32)
    x_all = torch.from_numpy(to_internal(data).astype(np.float32))[:, None]
    n = len(x_all)
    per_epoch = math.ceil(n / cfg.batch_size)
    total = per_epoch * cfg.epochs

    threads = torch.get_num_threads()
    torch.set_num_threads(1)
    gen = torch.Generator().manual_seed(cfg.seed)
    opt = torch.optim.Adam(model.parameters(), lr=cfg.lr_min, betas=(0.9, 0.999))
    result = TrainResult(model)
    start = time.monotonic()
    model.train()
    try:
        step = 0
        for epoch in range(cfg.epochs):
            perm = torch.randperm(n, generator=gen)
            for b in range(per_epoch):
                idx = perm[b * cfg.batch_size : (b + 1) * cfg.batch_size]
                x0 = x_all[idx]
                t = torch.randint(1, schedule.T + 1, (len(idx),), generator=gen)
                eps = torch.randn(x0.shape, generator=gen)
                a = ab[t].view(-1, 1, 1, 1, 1)
                x_t = a.sqrt() * x0 + (1.0 - a).sqrt() * eps
                lr = lr_at(step, total, cfg)
                for group in opt.param_groups:
                    group["lr"] = lr
                loss = F.mse_loss(model(x_t, t.float()), eps)
                opt.zero_grad(set_to_none=True)
                loss.backward()
                opt.step()
                result.losses.append((step, loss.item(), lr))
                step += 1
            elapsed = time.monotonic() - start
            log.info("epoch %d/%d loss %.4f (%.0fs)", epoch + 1, cfg.epochs, result.losses[-1][1], elapsed)
            if elapsed > cfg.max_minutes * 60 and epoch + 1 < cfg.epochs:
                log.warning("training stopped at the %.1f min budget", cfg.max_minutes)
                result.truncated = True
                break
    finally:
        torch.set_num_threads(threads)
        model.eval()
    result.seconds = time.monotonic() - start
    return result


# -- data ----------------------------------------------------------------------


class NoFreePoseError(RuntimeError):
    pass


def _body_free(scenario: Scenario, x: float, y: float, body_height: float = 1.0) -> bool:
    world = scenario.world
    res = world.resolution
    i, j = math.floor(x / res), math.floor(y / res)
    ks = np.arange(0, max(1, int(round(body_height / res))))
    keys = np.stack([np.full(ks.size, i), np.full(ks.size, j), ks], axis=1)
    rel = keys - world.offset
    if np.any(rel < 0) or np.any(rel >= np.asarray(world.shape)):
        return False
    return bool(np.all(world.material_at_keys(keys) == FREE))


def augment_poses(scenario: Scenario, pose: Pose, n: int = 10, rng=None, max_retries: int = 100) -> list[Pose]:
    """``n`` jittered copies of ``pose``: xy offsets in [-1, 1] m, yaw in [0, 2 pi).

    Offsets that land in occupied space are redrawn up to ``max_retries`` times.
    """
    rng = np.random.default_rng() if rng is None else rng
    out = []
    for _ in range(n):
        for _attempt in range(max_retries):
            dx, dy = rng.uniform(-1.0, 1.0, size=2)
            yaw = rng.uniform(0.0, 2.0 * math.pi)
            if _body_free(scenario, pose.x + dx, pose.y + dy):
                out.append(Pose(pose.x + dx, pose.y + dy, pose.z, yaw))
                break
        else:
            raise NoFreePoseError(f"no free pose near {tuple(pose)} after {max_retries} draws")
    return out


def build_corpus(
    scenarios: list[Scenario],
    poses_per_world: int,
    grid: GridSpec = GridSpec(),
    augmentations: int = 10,
    seed: int = 0,
) -> list[LocalGrid]:
    """Complete ground-truth windows at augmented poses (occupied 1, free 0)."""
    rng = np.random.default_rng(seed)
    out = []
    for sc in scenarios:
        for base in free_poses(sc, poses_per_world, rng):
            for pose in augment_poses(sc, base, augmentations, rng):
                out.append(sc.world.occupancy_window(grid.center_for(pose), grid.dims, grid.resolution))
    return out


# -- checkpoints ---------------------------------------------------------------


def save_checkpoint(path, model: TinyUNet3D, grid_dims, schedule_params: dict | None = None) -> None:
    vec = torch.nn.utils.parameters_to_vector(model.parameters()).detach().float().numpy()
    meta = {
        "arch": asdict(model.spec),
        "grid_dims": list(grid_dims),
        "schedule": schedule_params or {},
        "n_params": int(vec.size),
    }
    payload = CHECKPOINT_MAGIC + b"\n" + json.dumps(meta, sort_keys=True).encode() + b"\n" + vec.astype("<f4").tobytes()
    atomic_write_bytes(path, payload)


def load_checkpoint(path) -> tuple[TinyUNet3D, dict]:
    data = open(path, "rb").read()
    first = data.find(b"\n")
    if first < 0 or not data[:first].startswith(b"OCCM"):
        raise MapFormatError("not a model checkpoint")
    if data[:first] != CHECKPOINT_MAGIC:
        raise MapVersionError(f"unsupported checkpoint version {data[:first]!r}")
    second = data.find(b"\n", first + 1)
    if second < 0:
        raise MapFormatError("missing checkpoint descriptor")
    try:
        meta = json.loads(data[first + 1 : second])
        arch = meta["arch"]
        spec = UNetSpec(**{**arch, "channels": tuple(arch["channels"])})
    except (ValueError, KeyError, TypeError) as exc:
        raise MapFormatError("bad checkpoint descriptor") from exc
    payload = data[second + 1 :]
    if len(payload) != 4 * meta["n_params"]:
        raise TruncatedPayloadError("checkpoint parameter payload has the wrong length")
    model = TinyUNet3D(spec)
    vec = torch.from_numpy(np.frombuffer(payload, dtype="<f4").copy())
    torch.nn.utils.vector_to_parameters(vec, model.parameters())
    return model.eval(), meta
