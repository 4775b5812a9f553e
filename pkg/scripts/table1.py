"""Prediction-quality table on square_loop: FID, KIDx1000, unknown % and IoU per mode."""

import argparse
import json
from pathlib import Path

from occugen.config import RunConfig
from occugen.evaluation import table1
from occugen.experiments import load_denoiser


def main() -> None:
    ap = argparse.ArgumentParser(description=__doc__)
    ap.add_argument("--checkpoint", default="runs/model.occm")
    ap.add_argument("--seeds", type=int, nargs="+", default=[0, 1, 2])
    ap.add_argument("--out", default="runs/table1.json")
    args = ap.parse_args()
    cfg = RunConfig(checkpoint=args.checkpoint)
    rep = table1(cfg, load_denoiser(cfg), args.seeds)
    Path(args.out).parent.mkdir(parents=True, exist_ok=True)
    Path(args.out).write_text(json.dumps(rep, indent=2) + "\n")
    print(f"{'mode':<12} {'FID':>9} {'KIDx1000':>10} {'unknown%':>9} {'IoU':>6}")
    for name, r in rep["rows"].items():
        iou = "" if r["iou_mean"] is None else f"{r['iou_mean']:.3f}"
        print(f"{name:<12} {r['FID']:>9.4f} {r['KIDx1000']:>10.3f} {r['unknown_pct']:>9.2f} {iou:>6}")
    for name, c in rep["checks"].items():
        print(f"{'PASS' if c['pass'] else 'FAIL'} {name} votes={c['votes']}")


if __name__ == "__main__":
    main()
