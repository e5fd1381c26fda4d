"""Approach level, branch distance and the normalized fitness used by the generator."""

from __future__ import annotations

from dataclasses import dataclass

from neatbranch.graph import BranchTarget, ProgramGraph
from neatbranch.vm import EPSILON, ExecutionTrace

Chain = list[tuple[str, bool]]


def eta(x: float) -> float:
    """Normalize a non-negative quantity into [0, 1)."""
    if x < 0:
        raise ValueError(f"eta is defined for x >= 0, got {x}")
    return x / (1.0 + x)


@dataclass(frozen=True, order=True)
class FitnessValue:
    f: float
    alpha: int
    beta: float

    @classmethod
    def of(cls, alpha: int, beta: float) -> "FitnessValue":
        if alpha < 0 or beta < 0:
            raise ValueError("alpha and beta must be non-negative")
        return cls(eta(alpha + eta(beta)), alpha, beta)

    @property
    def covered(self) -> bool:
        return self.f == 0.0


ZERO = FitnessValue(0.0, 0, 0.0)


def chain_distance(trace: ExecutionTrace, chain: Chain) -> tuple[int, float]:
    """(alpha, beta) for a requirement chain listed nearest predicate first.

    Alpha is the number of chain predicates closer to the goal than the
    nearest one the trace evaluated.  Beta is that predicate's best distance
    towards the outcome leading to the goal.
    """
    for alpha, (block_id, outcome) in enumerate(chain):
        if trace.evaluated(block_id):
            if outcome in trace.taken[block_id] and alpha == 0:
                return 0, 0.0
            beta = trace.min_distance(block_id, outcome)
            return alpha, 0.0 if beta is None else beta
    # nothing on the chain ran at all (e.g. the script never started)
    return len(chain), 1.0


def _goal_value(trace: ExecutionTrace, chains: list[Chain]) -> FitnessValue:
    best: FitnessValue | None = None
    for chain in chains:
        alpha, beta = chain_distance(trace, chain)
        value = FitnessValue.of(alpha, max(beta, EPSILON))
        if best is None or value < best:
            best = value
    assert best is not None
    return best


def target_chains(graph: ProgramGraph, target: BranchTarget | tuple[str, bool]) -> list[Chain]:
    block_id, outcome = (target.block_id, target.outcome) if isinstance(target, BranchTarget) else target
    if not graph.program.has_block(block_id):
        raise KeyError(f"unknown block {block_id!r}")
    return [[(block_id, outcome)] + c for c in graph.requirement_chains(block_id)]


def branch_distance(trace: ExecutionTrace, graph: ProgramGraph, target: BranchTarget | tuple[str, bool]) -> tuple[int, float]:
    """Best (alpha, beta) over every CDG path leading to the target outcome."""
    return min(chain_distance(trace, c) for c in target_chains(graph, target))


def fitness_bc(trace: ExecutionTrace, graph: ProgramGraph, target: BranchTarget | tuple[str, bool]) -> FitnessValue:
    """Branch-coverage fitness; zero exactly when the trace took the target outcome."""
    chains = target_chains(graph, target)
    block_id, outcome = chains[0][0]
    if outcome in trace.taken.get(block_id, ()):
        return ZERO
    return _goal_value(trace, chains)


def fitness_sc(trace: ExecutionTrace, graph: ProgramGraph, block_id: str) -> FitnessValue:
    """Statement-coverage fitness; zero exactly when the block was executed."""
    if not graph.program.has_block(block_id):
        raise KeyError(f"unknown block {block_id!r}")
    if block_id in trace.executed:
        return ZERO
    chains = [c for c in graph.requirement_chains(block_id) if c]
    if not chains:
        return FitnessValue.of(0, 1.0)
    return _goal_value(trace, chains)
