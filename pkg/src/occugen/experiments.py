"""Config-driven pipelines shared by the CLI, the scripts and the acceptance tests."""

from __future__ import annotations

import logging
import os
from pathlib import Path

import numpy as np

from .config import RunConfig, parse_mode
from .denoiser import (
    TorchDenoiser,
    TrainResult,
    build_corpus,
    load_checkpoint,
    make_model,
    save_checkpoint,
    train,
)
from .diffusion import linear_schedule
from .explore import Explorer, Predictor, RunState
from .io import atomic_write_text
from .worlds import make_world

log = logging.getLogger(__name__)


def thread_cap() -> int | None:
    """OCCUGEN_THREADS, if set: the number of chains sampled in lockstep."""
    raw = os.environ.get("OCCUGEN_THREADS")
    if raw is None or raw == "":
        return None
    n = int(raw)
    if n < 1:
        raise ValueError("OCCUGEN_THREADS must be >= 1")
    return n


def schedule_for(cfg: RunConfig):
    d = cfg.diffusion
    return linear_schedule(d.T, d.beta_start, d.beta_end)


def training_corpus(cfg: RunConfig):
    t = cfg.train
    worlds = [
        make_world("random_rooms", t.world_seed_offset + i, cfg.grid.resolution) for i in range(t.n_worlds)
    ]
    return build_corpus(worlds, t.poses_per_world, cfg.grid, t.augmentations, seed=t.seed)


def train_from_config(cfg: RunConfig, out_path=None) -> TrainResult:
    """Build the synthetic corpus, train, and optionally write checkpoint and loss curve."""
    corpus = training_corpus(cfg)
    log.info("training corpus: %d windows", len(corpus))
    model = make_model(cfg.model.spec(), seed=cfg.train.seed)
    result = train(model, corpus, cfg.train.train_config(cfg.diffusion), schedule_for(cfg))
    if out_path is not None:
        out_path = Path(out_path)
        out_path.parent.mkdir(parents=True, exist_ok=True)
        d = cfg.diffusion
        save_checkpoint(
            out_path,
            result.model,
            cfg.grid.dims,
            {"T": d.T, "beta_start": d.beta_start, "beta_end": d.beta_end},
        )
        lines = ["step,loss,lr"] + [f"{s},{l:.6f},{lr:.8f}" for s, l, lr in result.losses]
        atomic_write_text(out_path.with_suffix(".loss.csv"), "\n".join(lines) + "\n")
    return result


def load_denoiser(cfg: RunConfig, path=None) -> TorchDenoiser:
    model, meta = load_checkpoint(path or cfg.checkpoint)
    if tuple(meta["grid_dims"]) != tuple(cfg.grid.dims):
        raise ValueError(f"checkpoint grid {meta['grid_dims']} does not match config grid {list(cfg.grid.dims)}")
    return TorchDenoiser(model, cfg.grid.dims, cfg.model.micro_batch)


def make_predictor(cfg: RunConfig, denoiser, merge: str | None = None) -> Predictor:
    if merge is None:
        _, _, merge = parse_mode(cfg.mode)
    cap = thread_cap()
    return Predictor(
        denoiser,
        schedule_for(cfg),
        cfg.grid,
        cfg.explore.k_predictions,
        merge or "PMM",
        cfg.diffusion.inference_steps,
        True if cap is None else cap,
    )


def make_explorer(cfg: RunConfig, denoiser=None) -> Explorer:
    predictive, _, _ = parse_mode(cfg.mode)
    if not predictive:
        return Explorer(cfg)
    if denoiser is None:
        denoiser = load_denoiser(cfg)
    return Explorer(cfg, make_predictor(cfg, denoiser))


def explore_runs(cfg: RunConfig, seeds, denoiser=None) -> list[RunState]:
    ex = make_explorer(cfg, denoiser)
    return [ex.run(seed) for seed in seeds]

