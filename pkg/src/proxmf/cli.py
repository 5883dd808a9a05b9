"""Command-line entry point: ``proxmf {generate,run,sweep,oracle,lipschitz}``.

Exit status is 0 on success, 1 if any individual run failed and 2 for an
invalid experiment description or unreadable input.
"""
from __future__ import annotations

import argparse
import json
import logging
import sys

from . import harness
from .lipschitz import DEFAULT_MARGIN, spectral_norm, suggest_damping
from .model import (COUPLINGS, KINDS, FieldError, UAIFormatError, dumps_field,
                    generate_synthetic, load_field, serialize_uai)
from .oracle import StateSpaceTooLarge, enumerate_field
from .schedules import ALGORITHMS, step_size

EXIT_OK, EXIT_RUN_FAILURE, EXIT_SPEC_ERROR = 0, 1, 2


def _add_run_flags(p: argparse.ArgumentParser):
    p.add_argument("--spec", help="experiment JSON; other flags are ignored when given")
    p.add_argument("--input", action="append", default=[],
                   help="field file (.uai or .json); repeatable")
    p.add_argument("--schedule", action="append", default=[], choices=ALGORITHMS,
                   help="schedule to run; repeatable (default: all)")
    p.add_argument("--d", default="auto", help="damping weight, or 'auto' for 1.05 * L")
    p.add_argument("--eta", type=float, default=0.5, help="adhoc damping in (0, 1]")
    p.add_argument("--iters", type=int, action="append", default=[],
                   help="iteration budget; repeatable")
    p.add_argument("--budget-ms", type=float, action="append", default=[],
                   help="wall-clock budget in milliseconds; repeatable")
    p.add_argument("--init", default="uniform", choices=("uniform", "unary"))
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--jobs", type=int, default=1, help="worker threads for parallel steps")
    p.add_argument("--out", default="results", help="output directory")
    p.add_argument("--gnuplot", action="store_true", help="also write a gnuplot script")


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="proxmf", description=__doc__.splitlines()[0])
    parser.add_argument("-v", "--verbose", action="store_true")
    sub = parser.add_subparsers(dest="command", required=True)

    g = sub.add_parser("generate", help="write a synthetic field as UAI plus truth JSON")
    g.add_argument("--kind", choices=KINDS, default="grid")
    g.add_argument("--rows", type=int, default=8)
    g.add_argument("--cols", type=int, default=8)
    g.add_argument("--labels", type=int, default=2)
    g.add_argument("--unary-scale", type=float, default=1.0)
    g.add_argument("--pair-scale", type=float, default=1.0)
    g.add_argument("--coupling", choices=COUPLINGS, default="mixed")
    g.add_argument("--seed", type=int, default=0)
    g.add_argument("--out", required=True, help="output prefix; writes PREFIX.uai and PREFIX.json")

    _add_run_flags(sub.add_parser("run", help="run schedules under budgets"))
    s = sub.add_parser("sweep", help="final F across a damping grid")
    _add_run_flags(s)
    s.add_argument("--eta-grid", help="comma-separated eta values (default: 1, 1/2, ..., 1/256)")

    o = sub.add_parser("oracle", help="exact log Z, marginals and MAP by enumeration")
    o.add_argument("--input", required=True)
    o.add_argument("--cap", type=int, default=2**20)

    lp = sub.add_parser("lipschitz", help="power-iteration Lipschitz estimate and damping")
    lp.add_argument("--input", required=True)
    lp.add_argument("--margin", type=float, default=DEFAULT_MARGIN)
    lp.add_argument("--max-iters", type=int, default=1000)
    lp.add_argument("--tol", type=float, default=1e-8)
    lp.add_argument("--seed", type=int, default=0)
    return parser


def _spec_from_args(args, with_grid: bool) -> harness.ExperimentSpec:
    if args.spec:
        spec = harness.load_spec(args.spec)
        if with_grid and getattr(args, "eta_grid", None):
            spec.eta_grid = _parse_grid(args.eta_grid)
            spec.__post_init__()
        return spec
    if not args.input:
        raise harness.SpecError("provide --spec or at least one --input")
    d = args.d if args.d == "auto" else float(args.d)
    schedules = []
    for a in args.schedule or ALGORITHMS:
        params = {}
        if a == "adhoc":
            params["eta_adhoc"] = args.eta
        elif a.startswith("ours_"):
            params["d"] = d
        schedules.append(harness.ScheduleSpec(a, params))
    budgets = [harness.Budget(iterations=n) for n in args.iters]
    budgets += [harness.Budget(ms=ms) for ms in args.budget_ms]
    if not budgets:
        budgets = [harness.Budget(iterations=500)]
    grid = None
    if with_grid:
        grid = _parse_grid(args.eta_grid) if args.eta_grid else [2.0**-k for k in range(9)]
    return harness.ExperimentSpec(instances=list(args.input), schedules=schedules,
                                  budgets=budgets, eta_grid=grid, output_dir=args.out,
                                  seed=args.seed, init_mode=args.init, n_jobs=args.jobs,
                                  gnuplot=args.gnuplot)


def _parse_grid(text: str) -> list[float]:
    try:
        return [float(eval_fraction(x)) for x in text.split(",") if x.strip()]
    except ValueError as exc:
        raise harness.SpecError(f"bad --eta-grid: {exc}") from exc


def eval_fraction(x: str) -> float:
    """Parse ``0.25`` or ``1/4``."""
    x = x.strip()
    if "/" in x:
        num, den = x.split("/", 1)
        return float(num) / float(den)
    return float(x)


def _cmd_generate(args) -> int:
    field, truth = generate_synthetic(args.kind, args.rows, args.cols, args.labels,
                                      args.unary_scale, args.pair_scale, args.coupling,
                                      args.seed)
    meta = {k: getattr(args, k) for k in ("kind", "rows", "cols", "labels", "unary_scale",
                                          "pair_scale", "coupling", "seed")}
    with open(args.out + ".uai", "w") as fh:
        fh.write(serialize_uai(field))
    with open(args.out + ".json", "w") as fh:
        fh.write(dumps_field(field, truth, meta))
    print(f"wrote {args.out}.uai and {args.out}.json")
    return EXIT_OK


def _cmd_run(args, sweep: bool) -> int:
    spec = _spec_from_args(args, with_grid=sweep)
    result = harness.sensitivity_sweep(spec) if sweep else harness.run_experiment(spec)
    print(f"wrote {result.summary_path} ({len(result.rows)} rows, {result.failures} failed)")
    return EXIT_RUN_FAILURE if result.failures else EXIT_OK


def _cmd_oracle(args) -> int:
    field, _, _ = load_field(args.input)
    res = enumerate_field(field, cap=args.cap)
    cards = field.cardinalities
    out = {
        "log_z": res.log_z,
        "marginals": [res.marginals[i, : cards[i]].tolist() for i in range(len(cards))],
        "map": res.map_assignment.tolist(),
        "map_log_potential": res.map_log_potential,
    }
    print(json.dumps(out, indent=2))
    return EXIT_OK


def _cmd_lipschitz(args) -> int:
    field, _, _ = load_field(args.input)
    est = spectral_norm(field, max_iters=args.max_iters, tol=args.tol, seed=args.seed)
    d = suggest_damping(est, args.margin)
    print(json.dumps({"L": est.value, "iterations": est.iterations_used,
                      "residual": est.residual, "converged": est.converged,
                      "d": d, "eta": float(step_size(d))}, indent=2))
    return EXIT_OK


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING,
                        format="%(levelname)s %(name)s: %(message)s")
    try:
        if args.command == "generate":
            return _cmd_generate(args)
        if args.command in ("run", "sweep"):
            return _cmd_run(args, sweep=args.command == "sweep")
        if args.command == "oracle":
            return _cmd_oracle(args)
        return _cmd_lipschitz(args)
    except (harness.SpecError, FieldError, UAIFormatError, StateSpaceTooLarge,
            OSError, ValueError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_SPEC_ERROR


if __name__ == "__main__":
    sys.exit(main())
