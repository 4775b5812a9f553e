"""Command line entry point: ``occugen train|explore|evaluate|predict``.

Exit codes: 0 ok, 2 configuration error, 3 I/O error, 4 run failure. Errors
print one line, ``occugen: <CODE>: <message>``, to stderr.
"""

from __future__ import annotations

import argparse
import json
import logging
import sys
from dataclasses import replace
from importlib import resources
from pathlib import Path

import jsonschema

from .config import MODES, ConfigError, RunConfig, load_config
from .io import MapFileError, atomic_write_bytes, atomic_write_text, grid_to_bytes, load_grid

EXIT_OK, EXIT_CONFIG, EXIT_IO, EXIT_RUN = 0, 2, 3, 4


class CliError(Exception):
    def __init__(self, code: int, tag: str, message: str):
        super().__init__(message)
        self.code, self.tag = code, tag


class _Parser(argparse.ArgumentParser):
    def error(self, message):
        raise CliError(EXIT_CONFIG, "USAGE_ERROR", message)


def load_schema(name: str) -> dict:
    return json.loads(resources.files("occugen").joinpath("schemas", name).read_text())


def _write_json(path: Path, obj) -> None:
    atomic_write_text(path, json.dumps(obj, indent=2, sort_keys=True) + "\n")


def _resolve(args) -> RunConfig:
    cfg = load_config(args.config) if args.config else RunConfig()
    over = {}
    if getattr(args, "seed", None) is not None:
        over.update(seed=args.seed, seeds=())
    if getattr(args, "mode", None) is not None:
        over["mode"] = args.mode
    if getattr(args, "out", None) is not None:
        over["output_dir"] = args.out
    return cfg.with_overrides(**over) if over else cfg


def cmd_train(args) -> int:
    from .experiments import train_from_config

    cfg = _resolve(args)
    out = Path(cfg.output_dir)
    out.mkdir(parents=True, exist_ok=True)
    ckpt = out / "model.occm" if args.out else Path(cfg.checkpoint)
    if args.seed is not None:
        cfg = replace(cfg, train=replace(cfg.train, seed=args.seed))
    result = train_from_config(cfg, ckpt)
    _write_json(out / "train_config.json", cfg.to_dict())
    first, last = result.losses[0][1], result.losses[-1][1]
    print(f"checkpoint {ckpt}  steps {len(result.losses)}  loss {first:.4f} -> {last:.4f}  {result.seconds:.0f}s")
    return EXIT_OK


def cmd_explore(args) -> int:
    from .explore import coverage_curve, run_oracle, summarize_runs, write_run
    from .experiments import explore_runs

    cfg = _resolve(args)
    out = Path(cfg.output_dir)
    out.mkdir(parents=True, exist_ok=True)
    _write_json(out / "config.json", cfg.to_dict())
    tick_s = cfg.explore.tick_seconds
    schema = load_schema("run_metrics.schema.json")
    runs = explore_runs(cfg, cfg.run_seeds)
    metrics = [write_run(st, out, tick_s) for st in runs]
    for m in metrics:
        jsonschema.validate(m, schema)
        flag = "FAILED" if m["failed"] else "ok"
        print(f"{m['scenario']} {m['mode']} seed {m['seed']}: {m['status']} ({flag}) "
              f"coverage {m['final_coverage']:.3f} ticks {m['ticks']} teleop {m['teleop_events']}")
    summary = {"mode": cfg.mode, "scenario": cfg.scenario, **summarize_runs(metrics)}
    table = {cfg.mode: summary}
    if args.oracle:
        oracle = [run_oracle(cfg, s) for s in cfg.run_seeds]
        om = [write_run(st, out, tick_s) for st in oracle]
        table["ORACLE"] = {"mode": "ORACLE", "scenario": cfg.scenario, **summarize_runs(om)}
    _write_json(out / "summary.json", table)
    curve = coverage_curve(runs, tick_s)
    lines = ["time_s,mean_coverage_pct,std_pct"] + [f"{t:.1f},{m:.4f},{s:.4f}" for t, m, s in curve]
    atomic_write_text(out / "coverage_curve.csv", "\n".join(lines) + "\n")
    row = summary
    print(f"summary: runs {row['runs']} failures {row['failures']} mean {row['mean_s']} min {row['min_s']} "
          f"max {row['max_s']} std {row['std_s']}")
    return EXIT_OK


def cmd_evaluate(args) -> int:
    from .evaluation import table1
    from .experiments import load_denoiser

    cfg = _resolve(args)
    out = Path(cfg.output_dir)
    out.mkdir(parents=True, exist_ok=True)
    seeds = [args.seed] if args.seed is not None else None
    report = table1(cfg, load_denoiser(cfg, args.checkpoint), seeds)
    jsonschema.validate(report, load_schema("report.schema.json"))
    _write_json(out / "table1.json", report)
    lines = ["mode,FID,KIDx1000,unknown_pct,iou_mean,n_windows"]
    for name, r in report["rows"].items():
        iou = "" if r["iou_mean"] is None else f"{r['iou_mean']:.4f}"
        lines.append(f"{name},{r['FID']:.4f},{r['KIDx1000']:.4f},{r['unknown_pct']:.2f},{iou},{r['n_windows']}")
    atomic_write_text(out / "table1.csv", "\n".join(lines) + "\n")
    print("\n".join(lines))
    for name, c in report["checks"].items():
        print(f"{'PASS' if c['pass'] else 'FAIL'} {name} votes={c['votes']}")
    return EXIT_OK


def _parse_pose(text: str):
    from .grid import Pose

    try:
        vals = [float(v) for v in text.split(",")]
    except ValueError:
        raise CliError(EXIT_CONFIG, "CONFIG_ERROR", f"bad pose {text!r}; expected x,y,z,yaw")
    if len(vals) != 4:
        raise CliError(EXIT_CONFIG, "CONFIG_ERROR", f"bad pose {text!r}; expected x,y,z,yaw")
    return Pose(*vals)


def cmd_predict(args) -> int:
    from .diffusion import sample_batch
    from .explore import prediction_seeds
    from .experiments import load_denoiser, make_predictor
    from .grid import GlobalOccupancyMap, extract_submap

    cfg = _resolve(args)
    pose = _parse_pose(args.pose)
    gmap = load_grid(args.map)
    if not isinstance(gmap, GlobalOccupancyMap):
        raise CliError(EXIT_IO, "IO_ERROR", f"{args.map} is not an occupancy map file")
    if args.k < 1:
        raise CliError(EXIT_CONFIG, "CONFIG_ERROR", "--k must be >= 1")
    denoiser = load_denoiser(cfg, args.checkpoint)
    pred = make_predictor(cfg, denoiser, "PMM")
    sub = extract_submap(gmap, cfg.grid.center_for(pose), cfg.grid.dims, sensed_only=True)
    seed = cfg.seed if args.seed is None else args.seed
    seeds = prediction_seeds(seed, 0, 0, args.k)
    grids = sample_batch(denoiser, sub, args.k, seeds, pred.schedule, pred.steps, pred.parallel)
    out = Path(cfg.output_dir)
    out.mkdir(parents=True, exist_ok=True)
    atomic_write_bytes(out / "submap.occv", grid_to_bytes(sub.grid))
    for i, g in enumerate(grids):
        atomic_write_bytes(out / f"prediction_{i}.occv", grid_to_bytes(g))
    print(f"wrote {len(grids)} predictions and submap.occv to {out} (unknown {100 * sub.unknown_fraction:.1f}%)")
    return EXIT_OK


def build_parser() -> argparse.ArgumentParser:
    p = _Parser(prog="occugen", description="Generative occupancy prediction for exploration, at desk scale.")
    p.add_argument("-v", "--verbose", action="store_true")
    sub = p.add_subparsers(dest="command", required=True, parser_class=_Parser)

    def common(sp, mode=True):
        sp.add_argument("--config", help="JSON run config (defaults apply to missing keys)")
        sp.add_argument("--seed", type=int)
        if mode:
            sp.add_argument("--mode", choices=MODES)
        sp.add_argument("--out", help="output directory")

    t = sub.add_parser("train", help="build the synthetic corpus and train the denoiser")
    common(t, mode=False)
    t.set_defaults(func=cmd_train)

    e = sub.add_parser("explore", help="run the exploration loop over the config's seeds")
    common(e)
    e.add_argument("--oracle", action="store_true", help="also run the ground-truth tour-following reference")
    e.set_defaults(func=cmd_explore)

    v = sub.add_parser("evaluate", help="prediction-quality report over every merge mode")
    common(v, mode=False)
    v.add_argument("--checkpoint")
    v.set_defaults(func=cmd_evaluate)

    r = sub.add_parser("predict", help="k inpainted windows around one pose of a saved map")
    common(r, mode=False)
    r.add_argument("--map", required=True, help="OCCG1 occupancy map file")
    r.add_argument("--pose", required=True, help="x,y,z,yaw (z is foot height)")
    r.add_argument("--checkpoint")
    r.add_argument("--k", type=int, default=1)
    r.set_defaults(func=cmd_predict)
    return p


def main(argv=None) -> int:
    try:
        args = build_parser().parse_args(argv)
        logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING, format="%(message)s")
        return args.func(args)
    except CliError as exc:
        code, tag, msg = exc.code, exc.tag, str(exc)
    except ConfigError as exc:
        code, tag, msg = EXIT_CONFIG, "CONFIG_ERROR", str(exc)
    except (OSError, MapFileError) as exc:
        code, tag, msg = EXIT_IO, "IO_ERROR", str(exc)
    except jsonschema.ValidationError as exc:
        code, tag, msg = EXIT_RUN, "SCHEMA_ERROR", exc.message
    except Exception as exc:  # noqa: BLE001 - any other failure is a failed run
        code, tag, msg = EXIT_RUN, "RUN_ERROR", f"{type(exc).__name__}: {exc}"
    print(f"occugen: {tag}: {' '.join(msg.split())}", file=sys.stderr)
    return code


if __name__ == "__main__":
    sys.exit(main())
