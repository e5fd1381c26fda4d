"""Repeated N_BC / N_SC generation runs and their comparison table."""

from __future__ import annotations

import csv
import io
import json
from dataclasses import dataclass, field, fields
from pathlib import Path

from neatbranch.fixtures import resolve_program
from neatbranch.generator import MODES, GeneratorConfig, generate_suite, suite_traces
from neatbranch.graph import branch_coverage, statement_coverage
from neatbranch.program import ProgramError
from neatbranch.stats import mann_whitney_u, vargha_delaney_a12

RAW_COLUMNS = ("project", "mode", "repetition", "seed", "branch_coverage", "statement_coverage",
               "entries", "covered_goals", "total_goals")
TABLE_COLUMNS = ("project", "NBC_branch_coverage", "NSC_branch_coverage", "NBC_statement_coverage",
                 "NSC_statement_coverage", "p_value", "A12")


@dataclass
class ExperimentPlan:
    programs: list[str] = field(default_factory=list)
    modes: list[str] = field(default_factory=lambda: list(MODES))
    repetitions: int = 30
    seed: int = 0
    config: dict = field(default_factory=dict)

    def __post_init__(self) -> None:
        if self.repetitions < 1:
            raise ValueError("repetitions must be at least 1")
        for m in self.modes:
            if m not in MODES:
                raise ValueError(f"unknown mode {m!r}")
        known = {f.name for f in fields(GeneratorConfig)}
        unknown = set(self.config) - known
        if unknown:
            raise ValueError(f"unknown config keys: {sorted(unknown)}")

    @classmethod
    def load(cls, path: str | Path) -> "ExperimentPlan":
        return cls(**json.loads(Path(path).read_text()))

    def generator_config(self) -> GeneratorConfig:
        return GeneratorConfig(**self.config)

    def seeds(self) -> list[int]:
        return [self.seed + i for i in range(self.repetitions)]


@dataclass
class RawRow:
    project: str
    mode: str
    repetition: int
    seed: int
    branch_coverage: float
    statement_coverage: float
    entries: int
    covered_goals: int
    total_goals: int


@dataclass
class ComparisonRow:
    project: str
    bc: dict[str, float]
    sc: dict[str, float]
    p_value: float
    a12: float

    def as_csv(self) -> list[str]:
        return [self.project, f"{self.bc.get('branch', float('nan')):.2f}", f"{self.bc.get('statement', float('nan')):.2f}",
                f"{self.sc.get('branch', float('nan')):.2f}", f"{self.sc.get('statement', float('nan')):.2f}",
                f"{self.p_value:.4f}", f"{self.a12:.3f}"]


@dataclass
class ExperimentResult:
    raw: list[RawRow]
    table: list[ComparisonRow]
    errors: dict[str, str]

    def raw_csv(self) -> str:
        buf = io.StringIO()
        w = csv.writer(buf, lineterminator="\n")
        w.writerow(RAW_COLUMNS)
        for r in self.raw:
            w.writerow([r.project, r.mode, r.repetition, r.seed, f"{r.branch_coverage:.4f}",
                        f"{r.statement_coverage:.4f}", r.entries, r.covered_goals, r.total_goals])
        return buf.getvalue()

    def table_csv(self) -> str:
        buf = io.StringIO()
        w = csv.writer(buf, lineterminator="\n")
        w.writerow(TABLE_COLUMNS)
        for row in self.table:
            w.writerow(row.as_csv())
        return buf.getvalue()

    def summary(self) -> str:
        lines = [f"{'project':<16} {'BC N_BC':>8} {'BC N_SC':>8} {'SC N_BC':>8} {'SC N_SC':>8} {'p':>7} {'A12':>6}"]
        for row in self.table:
            lines.append(f"{row.project:<16} {row.bc.get('branch', float('nan')):8.2f} "
                         f"{row.bc.get('statement', float('nan')):8.2f} {row.sc.get('branch', float('nan')):8.2f} "
                         f"{row.sc.get('statement', float('nan')):8.2f} {row.p_value:7.4f} {row.a12:6.3f}")
        for name, err in sorted(self.errors.items()):
            lines.append(f"{name}: skipped ({err})")
        return "\n".join(lines) + "\n"


def _mean(xs: list[float]) -> float:
    return sum(xs) / len(xs)


def run_experiment(plan: ExperimentPlan, progress=None) -> ExperimentResult:
    config = plan.generator_config()
    raw: list[RawRow] = []
    table: list[ComparisonRow] = []
    errors: dict[str, str] = {}
    for ref in plan.programs:
        try:
            program = resolve_program(ref)
        except (ProgramError, OSError) as exc:
            errors[ref] = str(exc)
            continue
        name = program.name or Path(ref).stem
        rows: list[RawRow] = []
        for mode in plan.modes:
            for rep, seed in enumerate(plan.seeds()):
                suite = generate_suite(program, mode, config, seed)
                traces = suite_traces(program, suite)
                rows.append(RawRow(name, mode, rep, seed, branch_coverage(program, traces),
                                   statement_coverage(program, traces), len(suite.entries),
                                   len(suite.covered), len(suite.goals)))
                if progress:
                    progress(rows[-1])
        raw += rows
        bc = {m: [r.branch_coverage for r in rows if r.mode == m] for m in plan.modes}
        sc = {m: [r.statement_coverage for r in rows if r.mode == m] for m in plan.modes}
        if len(plan.modes) == 2:
            a, b = bc[plan.modes[0]], bc[plan.modes[1]]
            p, eff = mann_whitney_u(a, b), vargha_delaney_a12(a, b)
        else:
            p, eff = 1.0, 0.5
        table.append(ComparisonRow(name, {m: _mean(v) for m, v in bc.items()},
                                   {m: _mean(v) for m, v in sc.items()}, p, eff))
    return ExperimentResult(raw, table, errors)


def write_results(result: ExperimentResult, out: str | Path) -> None:
    root = Path(out)
    root.mkdir(parents=True, exist_ok=True)
    (root / "raw.csv").write_text(result.raw_csv())
    (root / "table.csv").write_text(result.table_csv())
    (root / "summary.txt").write_text(result.summary())
