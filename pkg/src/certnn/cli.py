"""Command line entry point: ``certnn learn|verify|check|export-sdpa``.

Exit codes: 0 certified or feasible, 2 budget exhausted / unknown / violations
found, 1 usage or data error.
"""

from __future__ import annotations

import argparse
import json
import logging
import sys
from dataclasses import replace
from pathlib import Path

from .figure import emit_figure
from .lmi import build_learning, export_sdpa
from .loop_transform import RecoveryMode
from .model import Network
from .pipeline import ProblemSpec, SoundnessError, learn, monte_carlo, verify
from .sets import MEMBERSHIP_TOL

EXIT_OK, EXIT_ERROR, EXIT_UNKNOWN = 0, 1, 2


def _write_json(path, data) -> None:
    Path(path).write_text(json.dumps(data, indent=2) + "\n")


def _load_problem(args) -> ProblemSpec:
    spec = ProblemSpec.load(args.problem)
    changes = {}
    if getattr(args, "mode", None):
        changes["mode"] = RecoveryMode(args.mode)
    if getattr(args, "seed", None) is not None:
        changes["seed"] = args.seed
    if args.command == "learn" and args.samples is not None:
        changes["mc_samples"] = args.samples
    return replace(spec, **changes) if changes else spec


def cmd_learn(args) -> int:
    spec = _load_problem(args)
    report = learn(spec)
    print(f"verdict: {report.verdict}  margin: {report.margin:.6g}  "
          f"iterations: {report.certificate.iterations}")
    if report.verdict == "feasible":
        print(f"schur residuals: {', '.join(f'{r:.3g}' for r in report.schur_residuals)}")
        print(f"cross-check: {', '.join(report.cross_check)}")
        print(f"monte carlo: {report.violations} violations in {report.samples} samples per pair "
              f"(membership tol {MEMBERSHIP_TOL:g})")
        if args.out:
            report.network.save(args.out)
        if args.svg:
            Path(args.svg).write_text(emit_figure(spec.pairs, report.network, spec.mc_samples,
                                                  spec.seed, title=spec.name))
    if args.report:
        _write_json(args.report, report.to_dict())
    return EXIT_OK if report.ok else EXIT_UNKNOWN


def cmd_verify(args) -> int:
    spec = _load_problem(args)
    net = Network.load(args.weights)
    report = verify(net, spec.pairs, spec.solver, mc_samples=args.samples or 0, seed=spec.seed)
    print(f"verdict: {report.verdict}  per pair: {', '.join(report.cross_check)}  "
          f"margin: {report.margin:.6g}")
    if report.samples:
        print(f"monte carlo: {report.violations} violations in {report.samples} samples per pair")
    if args.report:
        _write_json(args.report, report.to_dict())
    return EXIT_OK if report.ok else EXIT_UNKNOWN


def cmd_check(args) -> int:
    spec = _load_problem(args)
    net = Network.load(args.weights)
    counts = monte_carlo(net, spec.pairs, args.samples, spec.seed)
    print(json.dumps({"samples_per_pair": args.samples, "violations": counts,
                      "membership_tol": MEMBERSHIP_TOL}))
    return EXIT_OK if not any(counts) else EXIT_UNKNOWN


def cmd_export(args) -> int:
    spec = _load_problem(args)
    pencil, _ = build_learning(spec.shape, spec.pairs, spec.learning_sector, spec.mode)
    Path(args.out).write_text(export_sdpa(pencil))
    print(f"wrote {args.out}: {pencil.n_vars} variables, blocks {pencil.dims}")
    return EXIT_OK


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="certnn", description=__doc__.splitlines()[0])
    parser.add_argument("-v", "--verbose", action="store_true")
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("learn", help="learn a certified two-layer network")
    p.add_argument("problem", help="problem JSON file or fixture name (fig2, fig3)")
    p.add_argument("--mode", choices=[m.value for m in RecoveryMode])
    p.add_argument("--out", help="write recovered weights JSON here")
    p.add_argument("--report", help="write run report JSON here")
    p.add_argument("--svg", help="write a planar figure here")
    p.add_argument("--seed", type=int)
    p.add_argument("--samples", type=int, help="Monte-Carlo samples per pair")
    p.set_defaults(func=cmd_learn)

    p = sub.add_parser("verify", help="certify a fixed network against a problem's pairs")
    p.add_argument("weights")
    p.add_argument("problem")
    p.add_argument("--samples", type=int, default=0, help="also run a Monte-Carlo spot check")
    p.add_argument("--seed", type=int)
    p.add_argument("--report")
    p.set_defaults(func=cmd_verify)

    p = sub.add_parser("check", help="Monte-Carlo violation count")
    p.add_argument("weights")
    p.add_argument("problem")
    p.add_argument("--samples", type=int, default=500)
    p.add_argument("--seed", type=int)
    p.set_defaults(func=cmd_check)

    p = sub.add_parser("export-sdpa", help="write the learning LMI in SDPA sparse format")
    p.add_argument("problem")
    p.add_argument("--out", required=True)
    p.add_argument("--mode", choices=[m.value for m in RecoveryMode])
    p.set_defaults(func=cmd_export)
    return parser


def main(argv=None) -> int:
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
    except SystemExit as exc:
        # argparse uses 2 for usage errors; 2 is reserved for "unknown" here
        return EXIT_OK if exc.code == 0 else EXIT_ERROR
    logging.basicConfig(level=logging.DEBUG if args.verbose else logging.WARNING,
                        format="%(levelname)s %(name)s: %(message)s")
    try:
        return args.func(args)
    except SoundnessError as exc:
        print(f"SOUNDNESS BUG: {exc}", file=sys.stderr)
        return EXIT_ERROR
    except (ValueError, FileNotFoundError, KeyError, RuntimeError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_ERROR


if __name__ == "__main__":
    sys.exit(main())
