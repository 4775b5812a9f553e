"""Train the denoiser on the synthetic corpus and write a checkpoint plus loss curve."""

import argparse
import dataclasses
import logging

from occugen.config import RunConfig, load_config
from occugen.experiments import train_from_config


def main() -> None:
    ap = argparse.ArgumentParser(description=__doc__)
    ap.add_argument("--config", help="JSON config; defaults apply when omitted")
    ap.add_argument("--out", default="runs/model.occm")
    ap.add_argument("--minutes", type=float, help="wall-clock cap, overrides the config")
    args = ap.parse_args()
    logging.basicConfig(level=logging.INFO, format="%(message)s")
    cfg = load_config(args.config) if args.config else RunConfig()
    if args.minutes is not None:
        cfg = dataclasses.replace(cfg, train=dataclasses.replace(cfg.train, max_minutes=args.minutes))
    r = train_from_config(cfg, args.out)
    print(f"{args.out}: {len(r.losses)} steps, loss {r.losses[0][1]:.4f} -> {r.losses[-1][1]:.4f}, "
          f"{r.seconds:.0f}s{' (time cap hit)' if r.truncated else ''}")


if __name__ == "__main__":
    main()
