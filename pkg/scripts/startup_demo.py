"""Startup hole: BL cannot plan from rest in startup_room, predictive mode can."""

import argparse

from occugen.config import RunConfig
from occugen.experiments import load_denoiser, make_explorer


def main() -> None:
    ap = argparse.ArgumentParser(description=__doc__)
    ap.add_argument("--checkpoint", default="runs/model.occm")
    ap.add_argument("--seeds", type=int, default=5)
    ap.add_argument("--ticks", type=int, default=5)
    args = ap.parse_args()
    ss_cfg = RunConfig(scenario="startup_room", mode="SS-RC-PMM", checkpoint=args.checkpoint)
    denoiser = load_denoiser(ss_cfg)
    for seed in range(args.seeds):
        line = [f"seed {seed}:"]
        for cfg in (RunConfig(scenario="startup_room", mode="BL"), ss_cfg):
            ex = make_explorer(cfg, None if cfg.mode == "BL" else denoiser)
            st = ex.start(seed)
            while st.tick < args.ticks and st.first_plan_tick is None and not st.done:
                ex.step(st)
            first = "none" if st.first_plan_tick is None else f"tick {st.first_plan_tick}"
            line.append(f"{cfg.mode} first plan {first}, teleop {st.teleop_events}")
        print("  ".join(line))


if __name__ == "__main__":
    main()
