"""Command-line harness.

Subcommands: convergence, sweep, overhead, train-unfolding, eval. Each
writes CSV reports and PNG figures into the output directory. Scenario
parameters come from an INI config file (--config) or the shipped
defaults; --dump-config prints the default file.
"""
from __future__ import annotations

import argparse
import sys
from pathlib import Path

import numpy as np

from . import plots, unfolding
from .harness import (SCHEMES, SWEEP_KINDS, ExperimentSpec, draw_pool,
                      make_rng, run_experiment)
from .scenario import (ScenarioConfig, default_config_text, desk_scenario,
                       load_scenario)
from .ssca import SscaConfig
from .wmmse import BcdConfig


def _parse_seeds(text: str) -> list[int]:
    seeds = []
    for chunk in text.split(","):
        chunk = chunk.strip()
        if ".." in chunk:
            lo, hi = chunk.split("..")
            seeds.extend(range(int(lo), int(hi) + 1))
        elif chunk:
            seeds.append(int(chunk))
    if not seeds:
        raise argparse.ArgumentTypeError("no seeds given")
    return seeds


def _parse_values(text: str) -> list[float]:
    return [float(tok) for tok in text.replace(",", " ").split()]


def _scenario(args) -> ScenarioConfig:
    return load_scenario(args.config) if args.config else desk_scenario()


def _common(sub: argparse.ArgumentParser) -> None:
    sub.add_argument("--config", type=Path, default=None,
                     help="scenario INI file (default: built-in desk scenario)")
    sub.add_argument("--out", type=Path, default=Path("out"),
                     help="output directory for CSV and figures")
    sub.add_argument("--seeds", type=_parse_seeds, default=[0],
                     help="comma list and/or ranges, e.g. 0..19")


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="irsfd",
        description="Mixed-timescale beamforming simulator for IRS-assisted "
                    "full-duplex cells")
    parser.add_argument("--dump-config", action="store_true",
                        help="print the default scenario INI and exit")
    subs = parser.add_subparsers(dest="command")

    conv = subs.add_parser("convergence", help="optimizer convergence traces")
    _common(conv)
    conv.add_argument("--ssca-iters", type=int, default=150)

    sweep = subs.add_parser("sweep", help="scheme comparison over a sweep axis")
    _common(sweep)
    sweep.add_argument("--param", choices=SWEEP_KINDS, required=True)
    sweep.add_argument("--values", type=_parse_values, default=None,
                       help="sweep values (axis-specific defaults otherwise)")
    sweep.add_argument("--schemes", default="ssca,random-irs,no-irs",
                       help=f"comma list from {','.join(SCHEMES)}")
    sweep.add_argument("--n-eval", type=int, default=10)
    sweep.add_argument("--n-pool", type=int, default=30)
    sweep.add_argument("--ssca-iters", type=int, default=150)
    sweep.add_argument("--train-epochs", type=int, default=60)
    sweep.add_argument("--layers", type=int, default=8)
    sweep.add_argument("--jobs", type=int, default=1)

    over = subs.add_parser("overhead", help="CSI signaling bits vs elements")
    _common(over)
    over.add_argument("--values", type=_parse_values, default=None)

    tr = subs.add_parser("train-unfolding", help="train the unrolled network")
    _common(tr)
    tr.add_argument("--layers", type=int, default=8)
    tr.add_argument("--epochs", type=int, default=60)
    tr.add_argument("--samples", type=int, default=100)
    tr.add_argument("--theta-mode", choices=["sgd", "ssca"], default="ssca")
    tr.add_argument("--lr", type=float, default=1e-3)

    ev = subs.add_parser("eval", help="evaluate schemes / a trained checkpoint")
    _common(ev)
    ev.add_argument("--checkpoint", type=Path, default=None,
                    help="npz checkpoint for the unfolding scheme")
    ev.add_argument("--schemes", default="ssca,random-irs,no-irs,hd")
    ev.add_argument("--n-eval", type=int, default=10)
    ev.add_argument("--n-pool", type=int, default=30)
    ev.add_argument("--ssca-iters", type=int, default=150)
    return parser


def cmd_convergence(args) -> int:
    spec = ExperimentSpec(kind="convergence", schemes=["ssca"], seeds=args.seeds,
                          out_dir=args.out, scenario=_scenario(args),
                          ssca_cfg=SscaConfig(max_iters=args.ssca_iters))
    out = run_experiment(spec)
    png = plots.plot_convergence(out["bcd_csv"], out["ssca_csv"],
                                 args.out / "convergence.png")
    print(f"wrote {png}")
    return 0


def cmd_sweep(args) -> int:
    schemes = [s.strip() for s in args.schemes.split(",") if s.strip()]
    values = args.values
    if values is not None and args.param in ("elements", "antennas",
                                             "quantization", "samples", "layers"):
        values = [int(v) for v in values]
    spec = ExperimentSpec(
        kind=args.param, schemes=schemes, seeds=args.seeds, out_dir=args.out,
        values=values, scenario=_scenario(args), n_pool=args.n_pool,
        n_eval=args.n_eval, ssca_cfg=SscaConfig(max_iters=args.ssca_iters),
        train_epochs=args.train_epochs, layers=args.layers, jobs=args.jobs)
    out = run_experiment(spec)
    png = plots.plot_sweep(out["csv"], args.out / f"{args.param}.png",
                           xlabel=args.param)
    print(f"wrote {png}")
    return 0


def cmd_overhead(args) -> int:
    values = [int(v) for v in args.values] if args.values else None
    spec = ExperimentSpec(kind="overhead", schemes=["ssca"], seeds=args.seeds,
                          out_dir=args.out, values=values)
    out = run_experiment(spec)
    png = plots.plot_overhead(out["csv"], args.out / "overhead.png")
    print(f"wrote {png}")
    return 0


def cmd_train(args) -> int:
    scen = _scenario(args)
    args.out.mkdir(parents=True, exist_ok=True)
    rng = make_rng(args.seeds[0], 99)
    pool = draw_pool(scen, rng, args.samples)
    holdout = draw_pool(scen, rng, max(4, args.samples // 10))
    cfg = unfolding.TrainConfig(lr=args.lr, epochs=args.epochs,
                                seed=args.seeds[0], theta_mode=args.theta_mode)
    lpbn, sabn, trace = unfolding.train(pool, scen, cfg, layers=args.layers,
                                        holdout=holdout)
    ckpt = args.out / "unfolding.npz"
    unfolding.save_checkpoint(ckpt, lpbn, sabn, scen)
    trace_csv = args.out / "training_trace.csv"
    trace.write_csv(trace_csv)
    png = plots.plot_training(trace_csv, args.out / "training.png")
    print(f"wrote {ckpt}, {trace_csv}, {png}")
    return 0


def cmd_eval(args) -> int:
    scen = _scenario(args)
    schemes = [s.strip() for s in args.schemes.split(",") if s.strip()]
    from .harness import (Degrade, baseline_hd, baseline_no_irs,
                          baseline_random_irs, scheme_full_csi, scheme_ssca,
                          scheme_unfolding, write_rows)
    trained = None
    if "unfolding" in schemes:
        if args.checkpoint is None:
            print("error: --checkpoint required for the unfolding scheme",
                  file=sys.stderr)
            return 2
        trained = unfolding.load_checkpoint(args.checkpoint, scen)
    rows = []
    import time as _time
    for scheme in schemes:
        for seed in args.seeds:
            t0 = _time.perf_counter()
            if scheme == "ssca":
                res = scheme_ssca(scen, seed, n_pool=args.n_pool,
                                  n_eval=args.n_eval,
                                  ssca_cfg=SscaConfig(max_iters=args.ssca_iters))
            elif scheme == "unfolding":
                res = scheme_unfolding(scen, seed, trained, n_pool=args.n_pool,
                                       n_eval=args.n_eval)
            elif scheme == "random-irs":
                res = baseline_random_irs(scen, seed, n_eval=args.n_eval)
            elif scheme == "no-irs":
                res = baseline_no_irs(scen, seed, n_eval=args.n_eval)
            elif scheme == "hd":
                res = baseline_hd(scen, seed, n_eval=args.n_eval)
            elif scheme == "full-csi":
                res = scheme_full_csi(scen, seed, n_eval=args.n_eval)
            else:
                print(f"unknown scheme {scheme}", file=sys.stderr)
                return 2
            rows.append({"experiment": "eval", "scheme": scheme, "param": "eval",
                         "value": 0, "seed": seed, "ul_rate": res.ul,
                         "dl_rate": res.dl, "total_rate": res.total,
                         "rho": res.rho,
                         "wall_time_s": _time.perf_counter() - t0})
    args.out.mkdir(parents=True, exist_ok=True)
    csv_path = args.out / "eval.csv"
    write_rows(rows, csv_path)
    png = plots.plot_sweep(csv_path, args.out / "eval.png", xlabel="eval")
    print(f"wrote {csv_path} and {png}")
    return 0


def main(argv: list[str] | None = None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    if args.dump_config:
        print(default_config_text(), end="")
        return 0
    handlers = {
        "convergence": cmd_convergence,
        "sweep": cmd_sweep,
        "overhead": cmd_overhead,
        "train-unfolding": cmd_train,
        "eval": cmd_eval,
    }
    if args.command is None:
        parser.print_help()
        return 2
    return handlers[args.command](args)


if __name__ == "__main__":
    raise SystemExit(main())
