"""Command-line front end.

Four subcommands map onto the experiment kinds:

    bscahn evolve   --config run.cfg --out results/
    bscahn cdep     --config study.cfg --out results/
    bscahn verify   [--config suite.cfg] --out results/
    bscahn elliptic [--config conv.cfg] --out results/

``--seed`` and ``--level`` override the configured values; ``verify`` and
``elliptic`` run with built-in defaults when no config is given.  The exit
status is nonzero when any module reports an error or an enabled assertion
fails.  The environment variable BSCAHN_MAX_LEVEL caps mesh refinement.
"""

from __future__ import annotations

import argparse
import sys

from .errors import BscahnError
from .harness import parse_config, run_scenario, with_overrides

_DEFAULT_TEXT = {
    "evolve": "kind = evolve\nic.seed = 0\n",
    "cdep": "kind = cdep\nic.seed = 0\n",
    "verify": "kind = verify\nmodel.K = 1\nmodel.L = 1\nic.seed = 0\n",
    "elliptic": "kind = elliptic\n",
}


def _build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="bscahn",
        description="Bulk-surface phase-field simulator and verification suites.",
    )
    sub = parser.add_subparsers(dest="command", required=True)
    for name, help_text in (
        ("evolve", "time-step a scenario and record diagnostics"),
        ("cdep", "two-trajectory continuous dependence study"),
        ("verify", "eigenvalue, interpolation, and norm-equivalence suite"),
        ("elliptic", "convergence study for the weighted elliptic solver"),
    ):
        p = sub.add_parser(name, help=help_text)
        p.add_argument("--config", help="scenario file (key = value lines)")
        p.add_argument("--out", default="out", help="output directory (default: out)")
        p.add_argument("--seed", type=int, help="override the configured seed")
        p.add_argument("--level", type=int, help="override the mesh level")
    return parser


def main(argv=None) -> int:
    args = _build_parser().parse_args(argv)
    try:
        if args.config is not None:
            with open(args.config) as fh:
                text = fh.read()
        else:
            text = _DEFAULT_TEXT[args.command]
        cfg = parse_config(text)
        cfg = with_overrides(cfg, kind=args.command, seed=args.seed, level=args.level)
        return run_scenario(cfg, args.out)
    except OSError as exc:
        print(f"bscahn {args.command}: {exc}", file=sys.stderr)
        return 1
    except BscahnError as exc:
        print(f"bscahn {args.command}: {type(exc).__name__}: {exc}", file=sys.stderr)
        return 1


if __name__ == "__main__":
    raise SystemExit(main())
