"""Run, refine and verify coupled FEM-BEM wave simulations.

    wavecouple run <config> [--output DIR]
    wavecouple converge <config> --levels K [--mode joint|time|space]
    wavecouple verify [--full]

Exit status: 0 success, 2 configuration error, 3 numerical failure.
The number of worker threads for frequency sampling is read from
``WAVECOUPLE_THREADS``.
"""

from __future__ import annotations

import argparse
import json
import logging
import sys
from pathlib import Path

from .config import load_scenario
from .errors import (
    ConfigError,
    FactorizationError,
    InvalidParameterError,
    MeshIntegrityError,
    WaveCoupleError,
)

EXIT_OK = 0
EXIT_CONFIG = 2
EXIT_NUMERICAL = 3

log = logging.getLogger("wavecouple")


def _cmd_run(args):
    from .experiments import run_scenario

    sc = load_scenario(args.config)
    out = Path(args.output or sc.output_dir)
    res = run_scenario(sc, out)
    meta = res.metadata
    print(f"steps: {meta['n_steps']}  dt: {meta['dt']:.6g}  dt*||D||: {meta['dt_times_D_norm']:.4f}")
    if meta["max_energy_ratio"] is not None:
        print(f"max E^n / E^0: {meta['max_energy_ratio']:.6g}")
    print(f"outputs written to {out}")
    return EXIT_OK


def _cmd_converge(args):
    from .experiments import convergence_study, write_table

    sc = load_scenario(args.config)
    study = convergence_study(sc, args.levels, args.mode, T=args.T, log=log.info)
    out = Path(args.output or sc.output_dir)
    out.mkdir(parents=True, exist_ok=True)
    write_table(study, out / "convergence.csv")
    (out / "convergence.json").write_text(json.dumps(study, indent=2, sort_keys=True, default=str) + "\n")
    print(f"{'cube_n':>6} {'dt':>10} {'l2_error':>12} {'order':>9}")
    for r in study["rows"]:
        order = "undefined" if r["order"] is None else f"{r['order']:.3f}"
        print(f"{r['cube_n']:>6} {r['dt']:>10.5f} {r['l2_error']:>12.5e} {order:>9}")
    if study["undefined_orders"]:
        print(f"warning: observed order undefined at levels {study['undefined_orders']}")
    fitted = study["fitted_order"]
    print(f"fitted order: {'undefined' if fitted is None else f'{fitted:.3f}'}")
    return EXIT_OK


def _cmd_verify(args):
    from .verify import run_suite

    ok = run_suite(print, full=args.full)
    return EXIT_OK if ok else EXIT_NUMERICAL


def build_parser():
    p = argparse.ArgumentParser(prog="wavecouple", description=__doc__.split("\n\n")[0])
    p.add_argument("-v", "--verbose", action="store_true", help="progress logging")
    sub = p.add_subparsers(dest="command", required=True)
    r = sub.add_parser("run", help="run one coupled simulation")
    r.add_argument("config")
    r.add_argument("--output", help="output directory (overrides [output] dir)")
    r.set_defaults(func=_cmd_run)
    c = sub.add_parser("converge", help="refinement study against the enlarged-domain reference")
    c.add_argument("config")
    c.add_argument("--levels", type=int, required=True)
    c.add_argument("--mode", choices=("joint", "time", "space"), default="joint")
    c.add_argument("--T", type=float, default=None, help="final time (default: [time] T)")
    c.add_argument("--output")
    c.set_defaults(func=_cmd_converge)
    v = sub.add_parser("verify", help="run the built-in oracle suite")
    v.add_argument("--full", action="store_true",
                   help="also run the long stability, convergence and exterior experiments")
    v.set_defaults(func=_cmd_verify)
    return p


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING,
                        format="%(message)s")
    try:
        return args.func(args)
    except (ConfigError, InvalidParameterError, MeshIntegrityError, FactorizationError) as exc:
        print(f"configuration error: {exc}", file=sys.stderr)
        return EXIT_CONFIG
    except WaveCoupleError as exc:
        detail = ""
        step = getattr(exc, "step", None)
        if step is not None:
            detail = f" (step {step}, energy {getattr(exc, 'energy', None)})"
        print(f"numerical failure: {exc}{detail}", file=sys.stderr)
        return EXIT_NUMERICAL


if __name__ == "__main__":
    sys.exit(main())
