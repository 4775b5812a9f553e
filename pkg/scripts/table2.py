"""Corner traversal table: every mode over 8 seeds of corridor_corner, plus the oracle row."""

import argparse
import dataclasses
import json
from pathlib import Path

from occugen.config import MODES, RunConfig
from occugen.experiments import explore_runs, load_denoiser
from occugen.explore import run_metrics, run_oracle, summarize_runs


def _fmt(v) -> str:
    return "-" if v is None else f"{v:.1f}"


def main() -> None:
    ap = argparse.ArgumentParser(description=__doc__)
    ap.add_argument("--checkpoint", default="runs/model.occm")
    ap.add_argument("--seeds", type=int, default=8)
    ap.add_argument("--modes", nargs="+", default=list(MODES))
    ap.add_argument("--out", default="runs/table2.json")
    args = ap.parse_args()
    base = RunConfig(scenario="corridor_corner", checkpoint=args.checkpoint)
    denoiser = None
    table = {}
    for mode in args.modes:
        cfg = dataclasses.replace(base, mode=mode)
        if mode != "BL" and denoiser is None:
            denoiser = load_denoiser(cfg)
        runs = explore_runs(cfg, range(args.seeds), None if mode == "BL" else denoiser)
        metrics = [run_metrics(st, cfg.explore.tick_seconds) for st in runs]
        table[mode] = {**summarize_runs(metrics), "runs_detail": metrics}
    oracle = [run_metrics(run_oracle(base, s), base.explore.tick_seconds) for s in range(args.seeds)]
    table["ORACLE"] = {**summarize_runs(oracle), "runs_detail": oracle}
    Path(args.out).parent.mkdir(parents=True, exist_ok=True)
    Path(args.out).write_text(json.dumps(table, indent=2) + "\n")
    print(f"{'method':<12} {'mean s':>7} {'min s':>7} {'max s':>7} {'std s':>7} {'failures':>9}")
    for mode, r in table.items():
        print(f"{mode:<12} {_fmt(r['mean_s']):>7} {_fmt(r['min_s']):>7} {_fmt(r['max_s']):>7} "
              f"{_fmt(r['std_s']):>7} {r['failures']:>9}")


if __name__ == "__main__":
    main()
