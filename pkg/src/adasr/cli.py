"""Command-line front end: ``adasr {synth,train,eval,ablate}``.

Exit codes: 0 success, 2 config error, 3 numeric abort, 4 I/O error.
"""

from __future__ import annotations

import argparse
import json
import logging
import os
import sys
import time
from dataclasses import replace
from typing import List, Optional

import numpy as np

from . import config as cfgmod
from .config import ConfigError, RunConfig
from .dataio import CubeFormatError, Scene, read_cube, write_cube, write_heatmap
from .metrics import MetricError, MetricReport, error_maps, evaluate
from .tensor import NumericError
from .training import ARMS, TrainingAborted, run_pipeline

EXIT_OK, EXIT_CONFIG, EXIT_NUMERIC, EXIT_IO = 0, 2, 3, 4
METRIC_COLUMNS = ("sam", "ergas", "psnr", "rmse", "cc")
HIGHER_IS_BETTER = {"psnr", "cc"}

log = logging.getLogger("adasr")


def _json_line(record: dict) -> str:
    return json.dumps(record, sort_keys=True) + "\n"


def _write_json(path: str, doc) -> None:
    with open(path, "w") as fh:
        json.dump(doc, fh, indent=2, sort_keys=True)
        fh.write("\n")


def _resolve(args) -> RunConfig:
    config = cfgmod.load(args.config) if args.config else RunConfig()
    if args.out:
        config = replace(config, out=args.out)
    if getattr(args, "arm", None):
        config = replace(config, arm=args.arm)
    if args.seed is not None:
        if args.seed < 0:
            raise ConfigError("--seed must be nonnegative")
        config.train = replace(config.train, seed=args.seed)
        if config.scene.synth is not None:
            config.scene.synth = {**config.scene.synth, "seed": args.seed}
    return config


def _base_dir(args) -> str:
    return os.path.dirname(os.path.abspath(args.config)) if args.config else os.getcwd()


# ---------------------------------------------------------------------------
# commands
# ---------------------------------------------------------------------------


def cmd_synth(config: RunConfig) -> dict:
    """Write X/Y/Z/M cubes and a manifest for the configured synthetic scene."""
    if config.scene.synth is None:
        raise ConfigError("synth needs a scene.synth section")
    scene = config.scene.load()
    os.makedirs(config.out, exist_ok=True)
    files = {k: f"{k.upper()}.hsic" for k in ("x", "y", "z", "m")}
    for k, name in files.items():
        write_cube(os.path.join(config.out, name), getattr(scene, k))
    cfgmod.write_manifest(os.path.join(config.out, "manifest.json"), scene, files, config.scene.synth)
    return {"out": config.out, "shapes": {k: list(getattr(scene, k).shape) for k in files}}


def _metric_scale(config: RunConfig, scene: Scene) -> int:
    if config.metric_scale is not None:
        return config.metric_scale
    return scene.z.shape[0] // scene.y.shape[0]


def train_run(config: RunConfig, scene: Scene, out_dir: str) -> Optional[MetricReport]:
    """Run one arm and write its artifacts into ``out_dir``."""
    os.makedirs(out_dir, exist_ok=True)
    with open(os.path.join(out_dir, "config.json"), "w") as fh:
        fh.write(cfgmod.dumps(config))
    t0 = time.perf_counter()
    try:
        report, xhat, _ = run_pipeline(scene, config.train, config.arm)
    except TrainingAborted as exc:
        with open(os.path.join(out_dir, "log.jsonl"), "w") as fh:
            for rec in exc.report.records:
                fh.write(_json_line(rec))
            fh.write(_json_line({"summary": True, "aborted": True, "stage": exc.stage, "step": exc.step,
                                 "error": str(exc)}))
        raise
    with open(os.path.join(out_dir, "log.jsonl"), "w") as fh:
        for rec in report.records:
            fh.write(_json_line(rec))
        fh.write(_json_line({
            "summary": True, "arm": config.arm,
            "initial_loss_U1": report.initial_lu1, "final_loss_U1": report.final_lu1,
            "final_angle": report.angles[-1] if report.angles else None,
        }))
    np.savez(os.path.join(out_dir, "params.npz"), **report.params)
    write_cube(os.path.join(out_dir, "xhat.hsic"), xhat)
    _write_json(os.path.join(out_dir, "timing.json"),
                {**report.wall_clock, "total": time.perf_counter() - t0})
    if scene.x is None:
        return None
    metrics = evaluate(xhat, scene.x, _metric_scale(config, scene))
    _write_json(os.path.join(out_dir, "metrics.json"), metrics.to_dict())
    return metrics


def cmd_train(config: RunConfig, base_dir: str = ".") -> Optional[MetricReport]:
    scene = config.scene.load(base_dir)
    return train_run(config, scene, config.out)


def cmd_eval(xhat_path: str, x_path: str, r: int, out_dir: Optional[str] = None) -> MetricReport:
    xhat = read_cube(xhat_path)
    x = read_cube(x_path)
    if xhat.shape != x.shape:
        raise MetricError(f"shape mismatch: {xhat.shape} vs {x.shape}")
    report = evaluate(xhat, x, r)
    if out_dir is not None:
        os.makedirs(out_dir, exist_ok=True)
        _write_json(os.path.join(out_dir, "metrics.json"), report.to_dict())
        mae, sam_map = error_maps(xhat, x)
        write_heatmap(os.path.join(out_dir, "mae.pgm"), mae)
        write_heatmap(os.path.join(out_dir, "sam.pgm"), sam_map)
    return report


def format_table(rows: List[dict]) -> str:
    """Tab-separated table, one row per arm; ``*`` marks the best value per column."""
    best = {}
    for col in METRIC_COLUMNS:
        vals = [r[col] for r in rows if r.get(col) is not None]
        if vals:
            best[col] = max(vals) if col in HIGHER_IS_BETTER else min(vals)
    lines = ["\t".join(("arm",) + METRIC_COLUMNS)]
    for r in rows:
        cells = [r["arm"]]
        for col in METRIC_COLUMNS:
            v = r.get(col)
            if v is None:
                cells.append("FAILED" if r.get("error") else "-")
            else:
                cells.append(repr(v) + ("*" if v == best.get(col) else ""))
        lines.append("\t".join(cells))
    return "\n".join(lines) + "\n"


def cmd_ablate(config: RunConfig, base_dir: str = ".", arms=ARMS) -> List[dict]:
    scene = config.scene.load(base_dir)
    if scene.x is None:
        raise ConfigError("ablate needs a scene with ground truth X")
    os.makedirs(config.out, exist_ok=True)
    rows = []
    for arm in arms:
        arm_cfg = replace(config, arm=arm, out=os.path.join(config.out, arm))
        try:
            metrics = train_run(arm_cfg, scene, arm_cfg.out)
            rows.append({"arm": arm, **{c: getattr(metrics, c) for c in METRIC_COLUMNS}})
        except (TrainingAborted, NumericError, MetricError, OSError) as exc:
            log.error("arm %s failed: %s", arm, exc)
            rows.append({"arm": arm, "error": str(exc)})
    table = format_table(rows)
    with open(os.path.join(config.out, "ablation.tsv"), "w") as fh:
        fh.write(table)
    return rows


# ---------------------------------------------------------------------------
# entry point
# ---------------------------------------------------------------------------


def build_parser() -> argparse.ArgumentParser:
    p = argparse.ArgumentParser(prog="adasr", description="Adversarial auto-augmentation for HSI-MSI fusion")
    p.add_argument("-v", "--verbose", action="store_true")
    sub = p.add_subparsers(dest="command", required=True)

    def common(sp, arm=False):
        sp.add_argument("--config", help="JSON run config")
        sp.add_argument("--out", help="output directory (overrides config)")
        sp.add_argument("--seed", type=int, help="seed for training and scene synthesis")
        if arm:
            sp.add_argument("--arm", choices=ARMS, help="ablation arm (overrides config)")

    common(sub.add_parser("synth", help="write a synthetic scene"))
    common(sub.add_parser("train", help="run the two-stage pipeline"), arm=True)
    ev = sub.add_parser("eval", help="score a reconstruction against ground truth")
    ev.add_argument("--xhat", required=True)
    ev.add_argument("--x", required=True)
    ev.add_argument("--scale", "-r", type=int, required=True, help="spatial scale factor used by ERGAS")
    ev.add_argument("--out", help="directory for metrics.json and heatmaps")
    common(sub.add_parser("ablate", help="run every ablation arm on one scene"))
    return p


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING,
                        format="%(levelname)s %(name)s: %(message)s")
    try:
        if args.command == "eval":
            if args.scale < 1:
                raise ConfigError("--scale must be positive")
            report = cmd_eval(args.xhat, args.x, args.scale, args.out)
            print(json.dumps(report.to_dict(), sort_keys=True))
            return EXIT_OK
        config = _resolve(args)
        if args.command == "synth":
            print(json.dumps(cmd_synth(config), sort_keys=True))
        elif args.command == "train":
            metrics = cmd_train(config, _base_dir(args))
            print(json.dumps(metrics.to_dict() if metrics else {"out": config.out}, sort_keys=True))
        elif args.command == "ablate":
            cmd_ablate(config, _base_dir(args))
            with open(os.path.join(config.out, "ablation.tsv")) as fh:
                sys.stdout.write(fh.read())
    except ConfigError as exc:
        print(f"config error: {exc}", file=sys.stderr)
        return EXIT_CONFIG
    except (TrainingAborted, NumericError) as exc:
        print(f"numeric abort: {exc}", file=sys.stderr)
        return EXIT_NUMERIC
    except MetricError as exc:
        print(f"metric error: {exc}", file=sys.stderr)
        return EXIT_NUMERIC
    except (OSError, CubeFormatError) as exc:
        print(f"I/O error: {exc}", file=sys.stderr)
        return EXIT_IO
    return EXIT_OK


if __name__ == "__main__":  # pragma: no cover
    sys.exit(main())
