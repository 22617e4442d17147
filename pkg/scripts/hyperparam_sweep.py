#!/usr/bin/env python3
"""Sweep one training config key over a value grid and probe each point.

Mirrors the `regioncl sweep` subcommand but stays in-process, which makes
it easy to edit the grid or swap the fixture. Writes sweep.csv into --out.
"""

from __future__ import annotations

import argparse
import csv
import os
import sys

import numpy as np

sys.path.insert(0, os.path.join(os.path.dirname(__file__), "..", "src"))

from regioncl.config import cast_value
from regioncl.eval_harness import EvalConfig, run_arms
from regioncl.poi_embedding import SkipgramConfig
from regioncl.region_data import SynthConfig, synth_dataset
from regioncl.trainer import TrainConfig
from regioncl.view_generator import ViewGenConfig
from dataclasses import replace


def parse_args(argv=None):
    ap = argparse.ArgumentParser(description=__doc__)
    ap.add_argument("--out", required=True, help="output directory")
    ap.add_argument("--param", default="loss.beta")
    ap.add_argument("--values", default="0.0,0.1,0.3,0.5")
    ap.add_argument("--task", default="crime")
    ap.add_argument("--seeds", default="0")
    ap.add_argument("--epochs", type=int, default=30)
    return ap.parse_args(argv)


def apply_param(cfg: TrainConfig, key: str, value) -> TrainConfig:
    section, _, field = key.partition(".")
    if section == "loss":
        return replace(cfg, loss=replace(cfg.loss, **{field: value}))
    if section == "view":
        return replace(cfg, view=replace(cfg.view, **{field: value}))
    if section == "train":
        return replace(cfg, **{field: value})
    raise SystemExit(f"unsupported sweep section {section!r}")


def main(argv=None) -> int:
    args = parse_args(argv)
    os.makedirs(args.out, exist_ok=True)
    d = 32
    ds = synth_dataset(SynthConfig(n_regions=60, n_categories=12, n_slots=4,
                                   n_trips=2000, noise_rate=0.3,
                                   n_clusters=6, seed=0))
    base_cfg = TrainConfig(epochs=args.epochs, lr=0.005, d=d, heads=2,
                           n_layers=3,
                           skipgram=SkipgramConfig(d_sg=d, seed=11),
                           view=ViewGenConfig(eps=0.3), seed=0)
    seeds = [int(s) for s in args.seeds.split(",")]

    out_rows = []
    for raw in args.values.split(","):
        value = cast_value(args.param, raw)
        cfg = apply_param(base_cfg, args.param, value)
        rows = run_arms(ds, ["FULL"], seeds, cfg, EvalConfig())
        picked = [r for r in rows if r.task == args.task]
        out_rows.append({"param": args.param, "value": value,
                         "task": args.task,
                         "mae": float(np.mean([r.mae for r in picked])),
                         "mape": float(np.mean([r.mape for r in picked])),
                         "rmse": float(np.mean([r.rmse for r in picked]))})
        print(f"{args.param}={value}: {args.task} "
              f"MAE {out_rows[-1]['mae']:.3f}")

    path = os.path.join(args.out, "sweep.csv")
    with open(path, "w", newline="") as fh:
        writer = csv.DictWriter(fh, fieldnames=list(out_rows[0]))
        writer.writeheader()
        writer.writerows(out_rows)
    print(f"-> {path}")
    return 0


if __name__ == "__main__":
    raise SystemExit(main())
