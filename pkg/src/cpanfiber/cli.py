"""Command-line entry point.

Exit codes: 0 on success, 2 on configuration errors, 3 on numerical failures.
"""
from __future__ import annotations

import argparse
import csv
import json
import logging
import sys
from pathlib import Path

import numpy as np

from .core import dbm_to_watt
from .errors import ConfigError, NumericalError
from .estimators import CpanModelParams
from .experiment import (PRESETS, RateCurve, emit_report, evaluate_models, fit_models,
                         load_config, read_curve_csv, run_sweep, simulate_bursts)
from .fdpa import UtilityCurve, fdpa_allocate
from .rates import write_rate_csv

logger = logging.getLogger("cpanfiber")

EXIT_OK, EXIT_CONFIG, EXIT_NUMERIC = 0, 2, 3


def _config(args):
    cfg = load_config(args.config, args.preset)
    kw = {}
    if args.model:
        kw["models"] = tuple(args.model)
    if args.seed is not None:
        kw["seed"] = args.seed
    if args.out is not None:
        kw["out_dir"] = args.out
    if args.workers is not None:
        kw["workers"] = args.workers
    if getattr(args, "power", None):
        kw["powers_dbm"] = tuple(sorted(args.power))
    if args.subcarriers is not None:
        kw["plan"] = cfg.plan.replace(subcarriers=args.subcarriers, subcarrier_weights=None)
    if getattr(args, "fdpa", False):
        kw["fdpa"] = True
    return cfg.replace(**kw)


def _model_path(out, label, p, s):
    return Path(out) / "models" / f"{label}_p{p:+.2f}_s{s}.json"


def cmd_simulate(args) -> int:
    cfg = _config(args)
    for p in cfg.powers_dbm:
        for split in ("train", "test"):
            x, y = simulate_bursts(cfg, p, split)
            print(f"{split} {p:+.2f} dBm: {x.shape[0]} bursts x {x.shape[1]} subcarriers "
                  f"x {x.shape[2]} symbols")
    return EXIT_OK


def cmd_fit(args) -> int:
    cfg = _config(args)
    for p in cfg.powers_dbm:
        plan = cfg.plan.replace(power_dbm=p)
        x, y = simulate_bursts(cfg, p, "train")
        for s in range(plan.subcarriers):
            for label, m in fit_models(cfg, plan, s, x[:, s], y[:, s]).items():
                path = _model_path(cfg.out_dir, label, p, s)
                path.parent.mkdir(parents=True, exist_ok=True)
                m.replace(meta={**m.meta, "config_hash": cfg.config_hash()}).save(path)
                print(path)
    return EXIT_OK


def cmd_rate(args) -> int:
    cfg = _config(args)
    points = []
    for p in cfg.powers_dbm:
        plan = cfg.plan.replace(power_dbm=p)
        x, y = simulate_bursts(cfg, p, "test")
        for s in range(plan.subcarriers):
            models = {}
            for label in cfg.models:
                path = _model_path(cfg.out_dir, label, p, s)
                if not path.exists():
                    raise ConfigError(f"no fitted model at {path}; run 'fit' first")
                models[label] = CpanModelParams.load(path)
            for label, pt in sorted(evaluate_models(cfg, plan, s, x[:, s], y[:, s], models).items()):
                points.append(pt)
                print(f"{label} {p:+.2f} dBm subcarrier {s + 1}: SE {pt.se:.4f} +- "
                      f"{pt.stderr * pt.spectral_efficiency_factor:.4f} bit/s/Hz")
    out = Path(cfg.out_dir) / "rates.csv"
    write_rate_csv(out, points, comment=f"config_hash={cfg.config_hash()}")
    print(out)
    return EXIT_OK


def cmd_sweep(args) -> int:
    cfg = _config(args)
    curves = run_sweep(cfg)
    for path in emit_report(curves, cfg.out_dir, cfg.params).values():
        print(path)
    return EXIT_OK


def cmd_fdpa(args) -> int:
    """Allocate from a utility CSV with columns subcarrier, power_dbm, rate."""
    rows = {}
    try:
        with open(args.utilities) as fh:
            for r in csv.DictReader(row for row in fh if not row.startswith("#")):
                rows.setdefault(int(r["subcarrier"]), []).append((float(r["power_dbm"]),
                                                                  float(r["rate"])))
    except (OSError, KeyError, ValueError) as e:
        raise ConfigError(f"cannot read utilities {args.utilities}: {e}") from e
    subs = sorted(rows)
    curves = [UtilityCurve(*map(np.array, zip(*rows[s]))) for s in subs]
    out = Path(args.out or ".") / "fdpa.csv"
    out.parent.mkdir(parents=True, exist_ok=True)
    with open(out, "w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(["total_power_dbm"] + [f"p{s}_dbm" for s in subs] + ["rate", "uniform_rate"])
        for total in args.total_dbm:
            res = fdpa_allocate(curves, float(dbm_to_watt(total)), step_db=args.step_db,
                                symmetric=not args.asymmetric)
            w.writerow([repr(float(total))] + [f"{v:.4f}" for v in res.power_dbm]
                       + [repr(res.rate), repr(res.uniform_rate)])
            print(f"{total:+.2f} dBm: " + " ".join(f"{v:.2f}" for v in res.power_dbm)
                  + f" -> {res.rate:.4f} (uniform {res.uniform_rate:.4f})")
    print(out)
    return EXIT_OK


def cmd_report(args) -> int:
    cfg = _config(args)
    cdir = Path(cfg.out_dir) / "curves"
    curves = {}
    for path in sorted(cdir.glob("*.csv")):
        if "_sc" in path.stem:
            continue
        c = read_curve_csv(path)
        curves[c.label] = c
    if not curves:
        raise ConfigError(f"no curve CSVs under {cdir}")
    for path in emit_report(curves, cfg.out_dir, cfg.params).values():
        print(path)
    return EXIT_OK


def build_parser() -> argparse.ArgumentParser:
    common = argparse.ArgumentParser(add_help=False)
    common.add_argument("--config", help="INI file with [physical], [plan], [ssfm], [run]")
    common.add_argument("--preset", choices=sorted(PRESETS))
    common.add_argument("--model", action="append", choices=["memoryless", "wpn", "cpan"],
                        help="repeat to select several models (default: all)")
    common.add_argument("--subcarriers", type=int)
    common.add_argument("--seed", type=int)
    common.add_argument("--out", help="output directory")
    common.add_argument("--workers", type=int)
    common.add_argument("-v", "--verbose", action="count", default=0)

    p = argparse.ArgumentParser(prog="cpanfiber", description=__doc__.splitlines()[0])
    sub = p.add_subparsers(dest="command", required=True)
    for name, fn, hlp in (("simulate", cmd_simulate, "simulate training and testing bursts"),
                          ("fit", cmd_fit, "fit auxiliary channel models on training bursts"),
                          ("rate", cmd_rate, "rate points of fitted models on testing bursts"),
                          ("sweep", cmd_sweep, "full power sweep and report")):
        sp = sub.add_parser(name, parents=[common], help=hlp)
        sp.add_argument("--power", type=float, action="append", help="launch power in dBm")
        if name == "sweep":
            sp.add_argument("--fdpa", action="store_true", help="add an FDPA pass")
        sp.set_defaults(func=fn)
    sp = sub.add_parser("fdpa", parents=[common], help="power allocation from utility curves")
    sp.add_argument("--utilities", required=True,
                    help="CSV with columns subcarrier, power_dbm, rate")
    sp.add_argument("--total-dbm", type=float, action="append", required=True)
    sp.add_argument("--step-db", type=float, default=0.25)
    sp.add_argument("--asymmetric", action="store_true",
                    help="do not tie subcarriers s and S+1-s")
    sp.set_defaults(func=cmd_fdpa)
    sp = sub.add_parser("report", parents=[common], help="rebuild the summary from curve CSVs")
    sp.set_defaults(func=cmd_report)
    return p


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    level = logging.WARNING - 10 * min(args.verbose, 2)
    logging.basicConfig(level=level, format="%(levelname)s %(name)s: %(message)s")
    try:
        return args.func(args)
    except ConfigError as e:
        print(f"config error: {e}", file=sys.stderr)
        return EXIT_CONFIG
    except NumericalError as e:
        print(f"numerical failure: {e}", file=sys.stderr)
        return EXIT_NUMERIC


if __name__ == "__main__":
    sys.exit(main())
