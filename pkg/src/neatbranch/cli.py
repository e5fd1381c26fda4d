"""Command-line entry point: ``neatbranch <command> ...``."""

from __future__ import annotations

import argparse
import sys
from pathlib import Path

from neatbranch.experiment import ExperimentPlan, run_experiment, write_results
from neatbranch.fixtures import resolve_program
from neatbranch.generator import BRANCH, STATEMENT, GeneratorConfig, generate_suite, load_suite, save_suite, suite_traces, verify_suite
from neatbranch.graph import ProgramGraph, branch_coverage, statement_coverage
from neatbranch.mutation import OPERATORS, mutation_analysis, report_csv
from neatbranch.program import ProgramError

_FITNESS = {"branch": BRANCH, "statement": STATEMENT}


def _cmd_generate(args: argparse.Namespace) -> int:
    program = resolve_program(args.program)
    config = GeneratorConfig(
        population=args.population,
        species=args.species,
        stall_limit=args.stall_limit,
        max_steps=args.max_steps,
        generations_per_target=args.generations,
        steps_per_target=args.step_budget,
        robustness_runs=args.robustness,
        robustness_required=min(args.robustness, args.robustness_required),
    )
    suite = generate_suite(program, _FITNESS[args.fitness], config, args.seed)
    path = save_suite(suite, args.out)
    traces = suite_traces(program, suite)
    print(f"suite: {len(suite.entries)} networks, {len(suite.covered)}/{len(suite.goals)} goals covered")
    print(f"branch coverage: {branch_coverage(program, traces):.2f}%")
    print(f"statement coverage: {statement_coverage(program, traces):.2f}%")
    print(f"manifest: {path}")
    return 0


def _cmd_run_suite(args: argparse.Namespace) -> int:
    program = resolve_program(args.program)
    suite = load_suite(args.suite)
    if args.seeds is None:
        traces = suite_traces(program, suite)
    else:
        traces = suite_traces(program, suite, seeds=list(range(args.seeds)))
    for i, count in sorted(verify_suite(program, suite).items()):
        entry = suite.entries[i]
        print(f"entry {i}: goals {', '.join(entry.goals)} re-covered on {count}/{len(entry.seeds)} stored seeds")
    print(f"branch coverage: {branch_coverage(program, traces):.2f}%")
    print(f"statement coverage: {statement_coverage(program, traces):.2f}%")
    return 0


def _cmd_mutate(args: argparse.Namespace) -> int:
    program = resolve_program(args.program)
    suite = load_suite(args.suite)
    ops = OPERATORS if args.operators == "all" else tuple(o.strip().upper() for o in args.operators.split(","))
    rows, judged = mutation_analysis(program, suite, ops, args.cap, args.judge_seeds, args.lsa_threshold, args.seed)
    text = report_csv(rows)
    if args.out:
        Path(args.out).write_text(text)
    sys.stdout.write(text)
    if args.verbose:
        for m in judged:
            print(f"{m.label} {m.block_id} {m.original} -> {m.replacement}: {m.status} {m.reason}".rstrip())
    return 0


def _cmd_experiment(args: argparse.Namespace) -> int:
    plan = ExperimentPlan.load(args.plan)

    def progress(row):
        if args.verbose:
            print(f"{row.project} {row.mode} rep {row.repetition}: BC {row.branch_coverage:.1f}% "
                  f"SC {row.statement_coverage:.1f}%", file=sys.stderr)

    result = run_experiment(plan, progress)
    if args.out:
        write_results(result, args.out)
    sys.stdout.write(result.table_csv())
    sys.stdout.write("\n" + result.summary())
    return 0


def _cmd_analyze(args: argparse.Namespace) -> int:
    graph = ProgramGraph(resolve_program(args.program))
    if not (args.dump_cfg or args.dump_cdg or args.list_targets):
        args.list_targets = True
    if args.dump_cfg:
        for (si, ci), cfg in sorted(graph.cfgs.items()):
            print(f"# sprite {graph.program.sprites[si].name} script {ci}")
            print(cfg.dump())
    if args.dump_cdg:
        print(graph.cdg.dump())
    if args.list_targets:
        for t in graph.targets:
            print(f"{t.key}\t{t.classification}")
        for a in graph.filtered.advisories:
            print(f"# {a.block_id}\t{a.classification}")
    return 0


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="neatbranch", description=__doc__)
    sub = parser.add_subparsers(dest="command", required=True)

    g = sub.add_parser("generate", help="evolve a dynamic test suite")
    g.add_argument("program", help="program file or bundled fixture name")
    g.add_argument("--fitness", choices=sorted(_FITNESS), default="branch")
    g.add_argument("--seed", type=int, default=0)
    g.add_argument("--population", type=int, default=150)
    g.add_argument("--species", type=int, default=5)
    g.add_argument("--stall-limit", type=int, default=5)
    g.add_argument("--max-steps", type=int, default=150)
    g.add_argument("--generations", type=int, default=100, help="generation cap per target")
    g.add_argument("--step-budget", type=int, default=200_000, help="VM step cap per target")
    g.add_argument("--robustness", type=int, default=5, help="robustness seeds per admission")
    g.add_argument("--robustness-required", type=int, default=5)
    g.add_argument("--out", required=True)
    g.set_defaults(func=_cmd_generate)

    r = sub.add_parser("run-suite", help="replay a stored suite and report coverage")
    r.add_argument("suite")
    r.add_argument("program")
    r.add_argument("--seeds", type=int, default=None, help="replay on seeds 0..k-1 instead of stored seeds")
    r.set_defaults(func=_cmd_run_suite)

    m = sub.add_parser("mutate", help="mutation analysis of a suite")
    m.add_argument("program")
    m.add_argument("suite")
    m.add_argument("--operators", default="all", help=f"'all' or a comma list of {','.join(OPERATORS)}")
    m.add_argument("--cap", type=int, default=50)
    m.add_argument("--judge-seeds", type=int, default=10)
    m.add_argument("--lsa-threshold", type=float, default=30.0)
    m.add_argument("--seed", type=int, default=0, help="mutant sampling seed")
    m.add_argument("--out", help="also write the CSV report here")
    m.add_argument("-v", "--verbose", action="store_true")
    m.set_defaults(func=_cmd_mutate)

    e = sub.add_parser("experiment", help="run an experiment plan (JSON)")
    e.add_argument("plan")
    e.add_argument("--out", help="directory for raw.csv, table.csv and summary.txt")
    e.add_argument("-v", "--verbose", action="store_true")
    e.set_defaults(func=_cmd_experiment)

    a = sub.add_parser("analyze", help="inspect control flow of a program")
    a.add_argument("program")
    a.add_argument("--dump-cfg", action="store_true")
    a.add_argument("--dump-cdg", action="store_true")
    a.add_argument("--list-targets", action="store_true")
    a.set_defaults(func=_cmd_analyze)
    return parser


def main(argv: list[str] | None = None) -> int:
    args = build_parser().parse_args(argv)
    try:
        return args.func(args)
    except (ProgramError, FileNotFoundError, ValueError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 2


if __name__ == "__main__":
    sys.exit(main())
