"""Command-line interface.

Commands: generate, solve, study {order,efficiency,adaptivity}, validate.
Exit codes: 0 success, 2 ingestion error, 3 solver failure, 4 validation
failure.
"""

import argparse
import sys

from .errors import DresplitError, IngestError, InvalidInput
from .problems import export_problem, generate_problem, ingest_problem
from .schemes import SchemeSpec
from .study import RunConfig, StudySpec, run_solve, run_study, run_validation

EXIT_OK = 0
EXIT_INGEST = 2
EXIT_SOLVER = 3
EXIT_VALIDATE = 4


def _add_run_flags(parser):
    parser.add_argument("--scheme", choices=["lie", "strang", "asym", "sym"],
                        default="sym", help="splitting scheme")
    parser.add_argument("--stages", type=int, default=2,
                        help="stage count for the additive schemes")
    parser.add_argument("--steps", type=int, default=None,
                        help="fixed number of equal steps")
    parser.add_argument("--tol", type=float, default=None,
                        help="adaptive tolerance")
    parser.add_argument("--h1", type=float, default=None,
                        help="initial adaptive step size")
    parser.add_argument("--epus", action="store_true",
                        help="compare error per unit step against the tolerance")
    parser.add_argument("--exp-tol", type=float, default=1e-10,
                        help="relative tolerance for exponential actions")
    parser.add_argument("--comp-tol", type=float, default=None,
                        help="column compression tolerance (default N*eps)")
    parser.add_argument("--quad-degree", type=int, default=None,
                        help="quadrature exactness degree (default scheme order + 1)")
    parser.add_argument("--threads", type=int, default=1,
                        help="worker threads for independent chains")
    parser.add_argument("--seed", type=int, default=0, help="RNG seed")
    parser.add_argument("--out", required=True, help="output directory")


def _config_from_args(args) -> RunConfig:
    return RunConfig(
        scheme=args.scheme, stages=args.stages, n_steps=args.steps,
        tol=args.tol, h1=args.h1, epus=args.epus, exp_tol=args.exp_tol,
        comp_tol=args.comp_tol, quad_degree=args.quad_degree,
        threads=args.threads, seed=args.seed,
    )


def _parse_schemes(text: str):
    specs = []
    for token in text.split(","):
        token = token.strip()
        if not token:
            continue
        if ":" in token:
            kind, stages = token.split(":", 1)
            specs.append(SchemeSpec(kind.strip(), int(stages)))
        else:
            specs.append(SchemeSpec(token))
    if not specs:
        raise InvalidInput(f"no schemes in {text!r}")
    return tuple(specs)


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="dresplit",
        description="Low-rank splitting solver for differential Riccati equations",
    )
    sub = parser.add_subparsers(dest="command", required=True)

    gen = sub.add_parser("generate", help="generate a reproducible test problem")
    gen.add_argument("--kind", choices=["random_lowrank", "laplacian_lqr"],
                     default="random_lowrank")
    gen.add_argument("--n", type=int, default=10, help="state dimension")
    gen.add_argument("--rank", type=int, default=4, help="rank of the data factors")
    gen.add_argument("--seed", type=int, default=0)
    gen.add_argument("--horizon", type=float, default=None)
    gen.add_argument("--out", required=True)

    solve = sub.add_parser("solve", help="integrate a problem directory")
    solve.add_argument("--problem", required=True, help="problem directory or manifest")
    _add_run_flags(solve)

    study = sub.add_parser("study", help="run a study and emit CSV reports")
    study.add_argument("kind", choices=["order", "efficiency", "adaptivity"])
    study.add_argument("--problem", required=True)
    study.add_argument("--schemes", default=None,
                       help="comma list, e.g. 'lie,strang,asym:3,sym:2'")
    study.add_argument("--ladder", default=None,
                       help="comma list of step counts, e.g. '10,20,40'")
    study.add_argument("--tols", default=None,
                       help="comma list of adaptive tolerances")
    study.add_argument("--reference", choices=["oracle", "finest"], default="oracle")
    _add_run_flags(study)

    val = sub.add_parser("validate", help="run oracle cross-checks")
    val.add_argument("--seed", type=int, default=0)
    val.add_argument("--instances", type=int, default=25)
    return parser


def _cmd_generate(args) -> int:
    problem = generate_problem(args.kind, args.n, args.rank, args.seed, args.horizon)
    manifest = export_problem(problem, args.out)
    print(f"wrote {manifest}")
    return EXIT_OK


def _cmd_solve(args) -> int:
    problem = ingest_problem(args.problem)
    config = _config_from_args(args)
    if config.n_steps is None and config.tol is None:
        raise InvalidInput("pass --steps N or --tol X --h1 Y")
    traj = run_solve(problem, config, args.out)
    last = traj.records[-1]
    print(f"{len(traj.records)} steps, final t={last.t:g}, final rank {traj.final.rank}")
    return EXIT_OK


def _cmd_study(args) -> int:
    problem = ingest_problem(args.problem)
    if args.kind == "adaptivity":
        if args.tol is None:
            args.tol = 1e-2
        if args.h1 is None:
            args.h1 = problem.horizon / 20.0
        args.steps = None
    elif args.steps is None and args.tol is None:
        args.steps = 10  # placeholder; the ladder drives fixed-step studies
    config = _config_from_args(args)
    overrides = {}
    if args.schemes:
        overrides["schemes"] = _parse_schemes(args.schemes)
    elif args.kind == "adaptivity":
        overrides["schemes"] = (config.spec,)
    if args.ladder:
        overrides["ladder"] = tuple(int(x) for x in args.ladder.split(","))
    if args.tols:
        overrides["tolerances"] = tuple(float(x) for x in args.tols.split(","))
    overrides["reference"] = args.reference
    study = StudySpec(**overrides)
    report = run_study(problem, study, config, args.kind, args.out)
    for p in report.paths:
        print(f"wrote {p}")
    for name, (slope, npts) in report.slopes.items():
        print(f"slope {name}: {slope:.3f} ({npts} points)")
    if report.failures:
        print(f"{len(report.failures)} run(s) failed; see summary.txt", file=sys.stderr)
    return EXIT_OK


def _cmd_validate(args) -> int:
    results = run_validation(args.seed, args.instances)
    failed = False
    for name, ok, detail in results:
        print(f"{'PASS' if ok else 'FAIL'}  {name}: {detail}")
        failed |= not ok
    return EXIT_VALIDATE if failed else EXIT_OK


def main(argv=None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    handlers = {
        "generate": _cmd_generate,
        "solve": _cmd_solve,
        "study": _cmd_study,
        "validate": _cmd_validate,
    }
    try:
        return handlers[args.command](args)
    except IngestError as exc:
        print(f"ingestion error: {exc}", file=sys.stderr)
        return EXIT_INGEST
    except DresplitError as exc:
        print(f"solver error: {exc}", file=sys.stderr)
        return EXIT_SOLVER


if __name__ == "__main__":
    sys.exit(main())
