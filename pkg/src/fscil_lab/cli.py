"""Command-line driver: run / ablate / export / ib-eval / validate-config."""
from __future__ import annotations

import argparse
import json
import sys

import numpy as np

from . import experiment
from . import ib as ib_mod
from .experiment import ExperimentConfig, StageError


def _load_config(args) -> ExperimentConfig:
    if args.config:
        with open(args.config) as f:
            cfg = ExperimentConfig.from_json(f.read())
    else:
        cfg = ExperimentConfig()
    if getattr(args, "preset", None):
        cfg = experiment.preset_config(args.preset, cfg)
    if getattr(args, "seed", None) is not None:
        import dataclasses
        cfg = dataclasses.replace(cfg, master_seed=args.seed)
    return cfg


def _cmd_run(args) -> int:
    cfg = _load_config(args)
    summary = experiment.run(cfg, args.out)
    agg = summary["aggregate"]
    last = agg["sessions"][-1]
    pd_mean = agg["pd"]["mean"]
    print(f"run complete: config_hash={summary['config_hash']} out={args.out}")
    print(f"  final A_W = {last['a_w']['mean']:.2f}  "
          f"PD = {'n/a' if pd_mean is None else f'{pd_mean:.2f}'}")
    return 0


def _cmd_ablate(args) -> int:
    cfg = _load_config(args)
    rows = experiment.ablate(cfg, args.out)
    print("low_tau ssc inter   A_B     A_N     A_W     PD")
    for r in rows:
        print(f"{int(r['low_tau']):7d} {int(r['ssc']):3d} {int(r['inter']):5d} "
              f"{r['a_b']:7.2f} {r['a_n']:7.2f} {r['a_w']:7.2f} {r['pd']:7.2f}")
    return 0


def _cmd_export(args) -> int:
    written = experiment.export(args.run_dir, args.what)
    for path in written:
        print(f"wrote {path}")
    return 0


def _cmd_ib_eval(args) -> int:
    import os

    from . import encoder as enc

    raw = np.load(os.path.join(args.run_dir, "raw.npz"))
    params = enc.load_params(os.path.join(args.run_dir, "encoder.json"))
    test_y = raw["test_y"]
    base = set(raw["base_classes"].tolist())
    n_base = int(np.isin(test_y, sorted(base)).sum())
    # the smallest evaluated group bounds the usable batch size
    n = min(g for g in (n_base, len(test_y) - n_base, len(test_y)) if g > 0)
    bs = max(2, min(128, n // 2))
    xz = ib_mod.MineConfig(hidden_width=128, iterations=args.iterations,
                           batch_size=bs, seed=args.seed or 0)
    yz = ib_mod.MineConfig(hidden_width=64, iterations=args.iterations,
                           batch_size=bs, seed=args.seed or 0)
    points = ib_mod.ib_plane(params, raw["test_x"], raw["test_y"],
                             raw["base_classes"].tolist(), xz, yz)
    for p in points:
        bound = "n/a" if p.closed_form_bound is None else f"{p.closed_form_bound:.4f}"
        print(f"{p.group:6s} I(X;Z)={p.i_xz:.4f}  I(Y;Z)={p.i_yz:.4f}  bound={bound}")
    return 0


def _cmd_validate(args) -> int:
    cfg = _load_config(args)
    print(json.dumps(json.loads(cfg.to_json()), indent=2))
    print(f"config valid; hash={cfg.config_hash()}")
    return 0


def build_parser() -> argparse.ArgumentParser:
    p = argparse.ArgumentParser(prog="fscil-lab",
                                description="Desk-scale FSCIL representation-learning lab")
    sub = p.add_subparsers(dest="command", required=True)

    def common(sp):
        sp.add_argument("--config", help="JSON experiment config")
        sp.add_argument("--preset", choices=sorted(experiment.PRESETS),
                        help="apply a loss preset on top of the config")
        sp.add_argument("--seed", type=int, help="override the master seed")

    sp = sub.add_parser("run", help="execute one experiment config")
    common(sp)
    sp.add_argument("--out", required=True, help="output directory")
    sp.set_defaults(fn=_cmd_run)

    sp = sub.add_parser("ablate", help="2x2x2 loss-component ablation grid")
    common(sp)
    sp.add_argument("--out", required=True)
    sp.set_defaults(fn=_cmd_ablate)

    sp = sub.add_parser("export", help="write CSV artifacts from a finished run")
    sp.add_argument("run_dir")
    sp.add_argument("what", choices=["metrics", "histograms", "features", "ib"])
    sp.set_defaults(fn=_cmd_export)

    sp = sub.add_parser("ib-eval", help="information-plane estimates for a finished run")
    sp.add_argument("run_dir")
    sp.add_argument("--iterations", type=int, default=2000)
    sp.add_argument("--seed", type=int)
    sp.set_defaults(fn=_cmd_ib_eval)

    sp = sub.add_parser("validate-config", help="parse and echo a config")
    common(sp)
    sp.set_defaults(fn=_cmd_validate)
    return p


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    try:
        return args.fn(args)
    except StageError as e:
        print(f"error: {e}", file=sys.stderr)
        return 2
    except (ValueError, FileNotFoundError) as e:
        print(f"error: {e}", file=sys.stderr)
        return 1


if __name__ == "__main__":
    sys.exit(main())
