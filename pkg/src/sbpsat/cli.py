"""Command-line entry point: ``sbpsat <study> [flags]``.

Flags set individual configuration fields; a JSON file given with
``--config`` overrides them. The exit status is 0 when every check of the
study passes, 1 when a check fails and 2 for invalid configuration.
"""

from __future__ import annotations

import argparse
import json
import sys

from sbpsat.errors import ConfigurationError
from sbpsat.studies import STUDIES, StudyConfig, load_config, run_study

_HELP = {
    "verify": "operator, adjoint-consistency and stability checks",
    "convergence": "manufactured-solution convergence rates",
    "conditioning": "condition numbers and errors on a perturbed mesh",
    "relaxation": "penalty relaxation scan and stability threshold",
    "unsteady": "BDF2 energy histories of the heat equation",
    "assemble": "export assembled matrices in coordinate format",
}


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="sbpsat", description=__doc__.splitlines()[0])
    sub = parser.add_subparsers(dest="study", required=True)
    for study in STUDIES:
        p = sub.add_parser(study, help=_HELP[study])
        p.add_argument("--family", nargs="+", dest="families", choices=("omega", "gamma"))
        p.add_argument("--p", nargs="+", type=int, dest="degrees")
        p.add_argument("--scheme", nargs="+", dest="schemes", choices=("br2", "sipg"))
        p.add_argument("--alpha", type=float, help="penalty relaxation factor")
        p.add_argument("--seed", type=int, help="mesh perturbation seed")
        p.add_argument("--mesh-n", nargs="+", type=int, dest="mesh_n",
                       help="squares per side of the structured mesh (one per level)")
        p.add_argument("--out", help="output directory for the JSON report and CSV series")
        p.add_argument("--config", help="JSON configuration file; overrides flags")
        p.add_argument("--quiet", action="store_true", help="print only the verdict")
    return parser


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    flags = {k: v for k, v in vars(args).items()
             if v is not None and k not in ("config", "quiet")}
    try:
        if args.config:
            overrides = load_config(args.config)
            overrides.pop("study", None)
            flags.update(overrides)
        config = StudyConfig.from_dict(flags)
        report = run_study(config)
    except ConfigurationError as exc:
        print(f"configuration error: {exc}", file=sys.stderr)
        return 2

    if not args.quiet:
        for c in report.checks:
            status = "PASS" if c["passed"] else "FAIL"
            extra = {k: v for k, v in c.items() if k not in ("name", "passed")}
            print(f"{status} {c['name']}" + (f" {json.dumps(extra, default=str)}" if extra else ""))
    verdict = "PASS" if report.passed else f"FAIL ({len(report.failures())} checks)"
    print(f"{report.study}: {verdict}")
    return 0 if report.passed else 1


if __name__ == "__main__":
    sys.exit(main())
