"""Command line entry point: ``safeproj <subcommand>``.

Exit status is 0 only when the command ran and no safety invariant was
violated; configuration problems exit with 2, runtime failures with 1.
"""
from __future__ import annotations

import argparse
import logging
import sys
from dataclasses import replace
from pathlib import Path

import numpy as np

from .demos import DEMOS, run_demo
from .errors import ConfigError, SafeProjError, UnknownDemo
from .harness import default_config_text, parse_config, run_section5, validate_config
from .projection import project
from .safe_set import ConstraintSet


def _floats(text):
    return np.array([float(v) for v in text.replace(",", " ").split()])


def _write_outputs(files, out):
    if out is None:
        for name, text in files.items():
            sys.stdout.write(f"# {name}\n{text}")
        return
    out = Path(out)
    out.mkdir(parents=True, exist_ok=True)
    for name, text in files.items():
        (out / name).write_text(text)
        print(out / name)


def cmd_reproduce(args):
    cfg = validate_config(args.config) if args.config else parse_config(default_config_text(), "default.ini")
    overrides = {}
    if args.seed is not None:
        overrides["seed"] = args.seed
    if args.out is not None:
        overrides["output_dir"] = str(args.out)
    cfg = replace(cfg, **overrides)

    def progress(row):
        print(f"batch {row.batch:3d}  J={row.J:.6f}  J/J0={row.J_normalized:.4f}  "
              f"|g|={row.grad_norm:.4g}  unsafe={row.safety_violations}", file=sys.stderr)

    result = run_section5(cfg, progress=progress)
    for name in result.write(cfg.output_dir):
        print(Path(cfg.output_dir) / name)
    if not result.ok:
        print(f"safety invariant violated: {result.safety_violations} unsafe states, "
              f"{result.plan_violations} plans outside the tube", file=sys.stderr)
        return 1
    return 0


def cmd_demo(args):
    _write_outputs(run_demo(args.name, seed=args.seed), args.out)
    return 0


def _build_set(args):
    sets = []
    if args.ball is not None:
        vals = _floats(args.ball)
        sets.append(ConstraintSet.ball(vals[:-1], vals[-1]))
    for spec in args.halfspace or []:
        vals = _floats(spec)
        sets.append(ConstraintSet.affine([vals[:-1]], [vals[-1]]))
    if not sets:
        raise SystemExit("project: give at least one --ball or --halfspace")
    return sets[0] if len(sets) == 1 else ConstraintSet.composite(*sets)


def cmd_project(args):
    cset = _build_set(args)
    target = _floats(args.target)
    out = project(cset, np.zeros(1), target)
    w = sys.stdout.write
    w("quantity,values\n")
    w("u_proj," + " ".join(repr(float(v)) for v in out.u_proj) + "\n")
    w("multipliers," + " ".join(repr(float(v)) for v in out.multipliers) + "\n")
    w("active," + " ".join(str(i) for i in out.active) + "\n")
    w(f"kkt_residual,{out.kkt_residual!r}\n")
    w(f"weak_activity,{str(out.weak_activity).lower()}\n")
    if out.M is None:
        w("M,undefined (active gradients linearly dependent)\n")
    else:
        for i, row in enumerate(out.M):
            w(f"M_row{i + 1}," + " ".join(repr(float(v)) for v in row) + "\n")
    return 0


def cmd_validate(args):
    cfg = validate_config(args.file)
    sys.stdout.write(cfg.to_ini())
    return 0


def build_parser():
    p = argparse.ArgumentParser(prog="safeproj", description=__doc__.splitlines()[0])
    p.add_argument("-v", "--verbose", action="store_true")
    sub = p.add_subparsers(dest="command", required=True)

    r = sub.add_parser("reproduce-sec5", help="tube-MPC actor-critic learning run")
    r.add_argument("--config", type=Path, help="INI config; the bundled default when omitted")
    r.add_argument("--seed", type=int)
    r.add_argument("--out", type=Path)
    r.set_defaults(func=cmd_reproduce)

    d = sub.add_parser("demo", help="demonstration data as CSV")
    d.add_argument("name", help=", ".join(DEMOS))
    d.add_argument("--seed", type=int, default=0)
    d.add_argument("--out", type=Path, help="directory for the CSV files; stdout when omitted")
    d.set_defaults(func=cmd_demo)

    f1 = sub.add_parser("fig1-demo", help="same as 'demo fig1'")
    f1.add_argument("--out", type=Path)
    f1.set_defaults(func=cmd_demo, name="fig1", seed=0)

    pr = sub.add_parser("project", help="one projection with its correction matrix")
    pr.add_argument("--target", required=True, help="target input, e.g. '2,0'")
    pr.add_argument("--ball", help="center then radius, e.g. '0,0,1'")
    pr.add_argument("--halfspace", action="append", help="a then b for a.u <= b, e.g. '1,1,0'")
    pr.set_defaults(func=cmd_project)

    v = sub.add_parser("validate", help="check a config and print the resolved manifest")
    v.add_argument("file", type=Path)
    v.set_defaults(func=cmd_validate)
    return p


def main(argv=None):
    args = build_parser().parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING)
    try:
        return args.func(args)
    except ConfigError as exc:
        for line in exc.errors:
            print(line, file=sys.stderr)
        return 2
    except UnknownDemo as exc:
        print(exc.args[0], file=sys.stderr)
        return 2
    except SafeProjError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 1


if __name__ == "__main__":
    sys.exit(main())
