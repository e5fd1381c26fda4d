"""Target-driven evolution of dynamic test suites under N_BC or N_SC fitness."""

from __future__ import annotations

import hashlib
import json
import random
from dataclasses import asdict, dataclass, field
from pathlib import Path

from neatbranch.fitness import FitnessValue, fitness_bc, fitness_sc
from neatbranch.graph import ProgramGraph
from neatbranch.neat import (
    NO_OP,
    Genome,
    NeatConfig,
    NetworkDriver,
    Population,
    genome_from_text,
    genome_to_text,
)
from neatbranch.program import BlockProgram
from neatbranch.vm import ExecutionTrace, InputEvent, feature_names, read_events, run, write_events

BRANCH, STATEMENT = "branch", "statement"
ADMIT_ATTEMPTS = 5  # robustness checks per generation
MODES = (BRANCH, STATEMENT)


def derive_seed(*parts: object) -> int:
    """Stable 32-bit seed from arbitrary parts (independent of PYTHONHASHSEED)."""
    digest = hashlib.sha256("\x1f".join(map(str, parts)).encode()).digest()
    return int.from_bytes(digest[:4], "big")


@dataclass(frozen=True)
class GeneratorConfig:
    population: int = 150
    species: int = 5
    stall_limit: int = 5
    max_steps: int = 150
    generations_per_target: int = 100
    steps_per_target: int = 200_000
    robustness_runs: int = 5
    robustness_required: int = 5
    retry_parked: bool = True

    def neat(self) -> NeatConfig:
        return NeatConfig(population=self.population, species_target=self.species)


@dataclass(frozen=True, order=True)
class Goal:
    """A branch target (block, outcome) or a statement target (block, None)."""

    block_id: str
    outcome: bool | None = None

    @property
    def key(self) -> str:
        if self.outcome is None:
            return self.block_id
        return f"{self.block_id}:{'T' if self.outcome else 'F'}"

    @classmethod
    def parse(cls, key: str) -> "Goal":
        if key.endswith(":T") or key.endswith(":F"):
            return cls(key[:-2], key.endswith(":T"))
        return cls(key)

    def covered_by(self, trace: ExecutionTrace) -> bool:
        if self.outcome is None:
            return self.block_id in trace.executed
        return self.outcome in trace.taken.get(self.block_id, ())

    def fitness(self, trace: ExecutionTrace, graph: ProgramGraph) -> FitnessValue:
        if self.outcome is None:
            return fitness_sc(trace, graph, self.block_id)
        return fitness_bc(trace, graph, (self.block_id, self.outcome))


def goals_for(graph: ProgramGraph, mode: str) -> list[Goal]:
    if mode == BRANCH:
        return [Goal(t.block_id, t.outcome) for t in graph.targets]
    if mode == STATEMENT:
        return [Goal(b.id) for b in graph.program.statements()]
    raise ValueError(f"unknown fitness mode {mode!r}")


def actions_for(program: BlockProgram) -> tuple[str, ...]:
    return tuple(program.keys()) + (NO_OP,)


@dataclass
class SuiteEntry:
    goals: list[str]
    genome: Genome
    seeds: list[int]
    events: dict[int, list[InputEvent]]
    robustness: int
    generation: int


@dataclass
class GoalStats:
    goal: str
    generations: int = 0
    steps: int = 0
    best_f: float = 1.0
    status: str = "uncovered"
    attempts: int = 0


@dataclass
class DynamicTestSuite:
    program: str
    mode: str
    seed: int
    config: GeneratorConfig
    goals: list[str]
    entries: list[SuiteEntry] = field(default_factory=list)
    stats: dict[str, GoalStats] = field(default_factory=dict)
    log: list[tuple[str, int, int, float, float, int]] = field(default_factory=list)

    @property
    def covered(self) -> set[str]:
        return {g for e in self.entries for g in e.goals}

    @property
    def uncovered(self) -> set[str]:
        return set(self.goals) - self.covered

    def manifest(self) -> dict:
        return {
            "program": self.program,
            "mode": self.mode,
            "seed": self.seed,
            "config": asdict(self.config),
            "goals": list(self.goals),
            "covered": sorted(self.covered),
            "uncovered": sorted(self.uncovered),
            "entries": [
                {
                    "index": i,
                    "goals": e.goals,
                    "genome": f"entry_{i:03d}.genome",
                    "seeds": e.seeds,
                    "events": {str(s): f"entry_{i:03d}_seed_{s}.events" for s in e.seeds},
                    "robustness": e.robustness,
                    "generation": e.generation,
                }
                for i, e in enumerate(self.entries)
            ],
            "stats": [asdict(self.stats[g]) for g in self.goals if g in self.stats],
        }


# ---------------------------------------------------------------------------
# Evaluation helpers


def play(program: BlockProgram, genome: Genome, seed: int, max_steps: int,
         record: bool = False, stop_when_idle: bool = True) -> tuple[ExecutionTrace, NetworkDriver]:
    driver = NetworkDriver(genome, record=record)
    trace = run(program, driver, seed=seed, max_steps=max_steps, stop_when_idle=stop_when_idle)
    return trace, driver


def robustness_check(program: BlockProgram, genome: Genome, goals: list[Goal], seeds: list[int],
                     max_steps: int) -> tuple[int, dict[int, list[InputEvent]]]:
    """Number of seeds on which every goal is re-covered, plus each run's event log."""
    count = 0
    logs: dict[int, list[InputEvent]] = {}
    for s in seeds:
        trace, _ = play(program, genome, s, max_steps)
        logs[s] = list(trace.events)
        if all(g.covered_by(trace) for g in goals):
            count += 1
    return count, logs


def select_goal(graph: ProgramGraph, uncovered: list[Goal], covered: set[Goal], evaluated: set[str]) -> Goal:
    """Pick the next goal to evolve for.

    Branch goals on the frontier come first: the sibling outcome is covered or
    the predicate has at least been evaluated.  Among those, goals gating more
    uncovered targets win, then deeper predicates.  Goals off the frontier are
    taken shallowest first.  Statement goals are taken shallowest first.
    """
    if not uncovered:
        raise ValueError("all goals covered")
    open_targets = {(g.block_id, g.outcome) for g in uncovered}

    def key(goal: Goal) -> tuple:
        depth = graph.depth(goal.block_id)
        order = graph.order(goal.block_id)
        if goal.outcome is None:
            return (0, depth, order)
        region = graph.region(goal.block_id, goal.outcome)
        unlocked = sum(1 for b, o in open_targets if b in region)
        sibling = Goal(goal.block_id, not goal.outcome)
        frontier = sibling in covered or goal.block_id in evaluated
        if frontier:
            return (0, -unlocked, -len(region), -depth, order, not goal.outcome)
        return (1, depth, -unlocked, -len(region), order, not goal.outcome)

    return min(uncovered, key=key)


# ---------------------------------------------------------------------------
# Main loop


class Generator:
    def __init__(self, program: BlockProgram, mode: str, config: GeneratorConfig = GeneratorConfig(), seed: int = 0):
        self.program = program
        self.mode = mode
        self.config = config
        self.seed = seed
        self.graph = ProgramGraph(program)
        self.goals = goals_for(self.graph, mode)
        self.rng = random.Random(derive_seed("generator", seed))
        self.population = Population.create(
            feature_names(program), actions_for(program), self.rng, config.neat())
        self.suite = DynamicTestSuite(program.name, mode, seed, config, [g.key for g in self.goals])
        self.suite.stats = {g.key: GoalStats(g.key) for g in self.goals}
        self.covered: set[Goal] = set()
        self.evaluated: set[str] = set()

    def uncovered(self) -> list[Goal]:
        return [g for g in self.goals if g not in self.covered]

    def _admit(self, genome: Genome, trace: ExecutionTrace, generation: int) -> list[Goal]:
        """Robustness-check every open goal this trace covered; record an entry if any pass."""
        newly = [g for g in self.uncovered() if g.covered_by(trace)]
        if not newly:
            return []
        cfg = self.config
        seeds = [derive_seed("robust", self.seed, self.suite.program, newly[0].key, i)
                 for i in range(cfg.robustness_runs)]
        traces: list[ExecutionTrace] = []
        logs: dict[int, list[InputEvent]] = {}
        for s in seeds:
            t, _ = play(self.program, genome, s, cfg.max_steps)
            traces.append(t)
            logs[s] = list(t.events)
        need = min(cfg.robustness_required, cfg.robustness_runs)
        counts = {g: sum(1 for t in traces if g.covered_by(t)) for g in newly}
        passed = [g for g in newly if cfg.robustness_runs == 0 or counts[g] >= need]
        if not passed:
            return []
        kept = genome.copy()
        kept.robustness = min(counts[g] for g in passed)
        self.suite.entries.append(SuiteEntry([g.key for g in passed], kept, seeds, logs, kept.robustness, generation))
        for g in passed:
            self.covered.add(g)
            self.suite.stats[g.key].status = "covered"
        return passed

    def evolve(self, goal: Goal) -> bool:
        cfg = self.config
        stats = self.suite.stats[goal.key]
        stats.attempts += 1
        best = float("inf")
        stall = 0
        steps = 0
        for gen in range(cfg.generations_per_target):
            run_seed = derive_seed("eval", self.seed, goal.key, stats.attempts, gen)
            results: list[tuple[Genome, ExecutionTrace]] = []
            for genome in self.population.genomes:
                trace, _ = play(self.program, genome, run_seed, cfg.max_steps)
                steps += trace.steps
                genome.fitness = goal.fitness(trace, self.graph)
                self.evaluated.update(trace.taken)
                results.append((genome, trace))
            stats.generations += 1
            stats.steps += sum(t.steps for _, t in results)
            gen_best = min(g.fitness.f for g, _ in results)
            mean_f = sum(g.fitness.f for g, _ in results) / len(results)
            self.suite.log.append((goal.key, stats.attempts, gen, gen_best, mean_f, len(self.population.species)))
            stats.best_f = min(stats.best_f, gen_best)
            # admit covering networks: the current goal first, then those covering most
            open_now = self.uncovered()
            hits = [[g for g in open_now if g.covered_by(t)] for _, t in results]
            order = sorted(range(len(results)), key=lambda i: (goal not in hits[i], -len(hits[i]), i))
            tries = 0
            for i in order:
                if not hits[i] or tries >= ADMIT_ATTEMPTS or not self.uncovered():
                    break
                if any(g not in self.covered for g in hits[i]):
                    tries += 1
                    self._admit(results[i][0], results[i][1], gen)
            if goal in self.covered:
                return True
            if gen_best < best:
                best, stall = gen_best, 0
            else:
                stall += 1
            if stall >= cfg.stall_limit or steps >= cfg.steps_per_target:
                break
            self.population.next_generation()
        stats.status = "parked"
        return False

    def generate(self) -> DynamicTestSuite:
        parked: list[Goal] = []
        retried = False
        while True:
            open_goals = [g for g in self.uncovered() if g not in parked]
            if not open_goals:
                if parked and self.config.retry_parked and not retried:
                    retried = True
                    open_goals = [g for g in parked if g not in self.covered]
                    parked = []
                    for g in open_goals:
                        if g not in self.covered and not self.evolve(g):
                            self.suite.stats[g.key].status = "exhausted"
                break
            goal = select_goal(self.graph, open_goals, self.covered, self.evaluated)
            if not self.evolve(goal):
                parked.append(goal)
        for g in self.uncovered():
            if self.suite.stats[g.key].status != "exhausted":
                self.suite.stats[g.key].status = "exhausted"
        return self.suite


def generate_suite(program: BlockProgram, mode: str, config: GeneratorConfig = GeneratorConfig(), seed: int = 0) -> DynamicTestSuite:
    return Generator(program, mode, config, seed).generate()


# ---------------------------------------------------------------------------
# Suite replay and persistence


def suite_traces(program: BlockProgram, suite: DynamicTestSuite, seeds: list[int] | None = None,
                 max_steps: int | None = None) -> list[ExecutionTrace]:
    """Re-run every entry's network on its stored seeds (or on ``seeds``)."""
    steps = max_steps or suite.config.max_steps
    out: list[ExecutionTrace] = []
    for entry in suite.entries:
        for s in (seeds if seeds is not None else entry.seeds):
            out.append(play(program, entry.genome, s, steps)[0])
    return out


def verify_suite(program: BlockProgram, suite: DynamicTestSuite) -> dict[int, int]:
    """Entry index -> number of stored seeds on which its goals were re-covered."""
    counts: dict[int, int] = {}
    for i, entry in enumerate(suite.entries):
        goals = [Goal.parse(k) for k in entry.goals]
        counts[i], _ = robustness_check(program, entry.genome, goals, entry.seeds, suite.config.max_steps)
    return counts


def save_suite(suite: DynamicTestSuite, directory: str | Path) -> Path:
    out = Path(directory)
    out.mkdir(parents=True, exist_ok=True)
    manifest = suite.manifest()
    for i, entry in enumerate(suite.entries):
        (out / f"entry_{i:03d}.genome").write_text(genome_to_text(entry.genome))
        for s in entry.seeds:
            (out / f"entry_{i:03d}_seed_{s}.events").write_text(write_events(entry.events.get(s, [])))
    rows = ["goal,attempt,generation,best_f,mean_f,species"]
    rows += [f"{g},{a},{n},{b!r},{m!r},{sp}" for g, a, n, b, m, sp in suite.log]
    (out / "generations.csv").write_text("\n".join(rows) + "\n")
    path = out / "manifest.json"
    path.write_text(json.dumps(manifest, indent=2, sort_keys=True) + "\n")
    return path


def load_suite(directory: str | Path) -> DynamicTestSuite:
    root = Path(directory)
    data = json.loads((root / "manifest.json").read_text())
    config = GeneratorConfig(**data["config"])
    suite = DynamicTestSuite(data["program"], data["mode"], data["seed"], config, list(data["goals"]))
    for e in data["entries"]:
        genome = genome_from_text((root / e["genome"]).read_text())
        genome.robustness = e["robustness"]
        events = {int(s): read_events((root / name).read_text()) for s, name in e["events"].items()}
        suite.entries.append(SuiteEntry(list(e["goals"]), genome, list(e["seeds"]), events,
                                        e["robustness"], e["generation"]))
    suite.stats = {s["goal"]: GoalStats(**s) for s in data["stats"]}
    return suite
