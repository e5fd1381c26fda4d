"""Control-flow and control-dependence analysis over block scripts.

``build_cfg`` lowers one script to a graph with synthetic ENTRY/EXIT nodes,
``build_cdg`` derives control dependence from postdominators, and
``control_filter`` enumerates the (predicate, outcome) branch targets.
:class:`ProgramGraph` bundles the per-script results for a whole program.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from functools import cached_property
from typing import Iterable

import networkx as nx

from neatbranch.program import LOOP_OPCODES, Block, BlockProgram, Script

ENTRY = "ENTRY"
EXIT = "EXIT"

SEQ, TRUE, FALSE, LOOP_BODY, LOOP_EXIT = "seq", "true", "false", "loop-body", "loop-exit"

# Outcome of the block's condition that sends control into the loop body.
_BODY_OUTCOME = {"control_repeat": True, "control_repeat_until": False}


@dataclass(frozen=True, order=True)
class Edge:
    src: str
    dst: str
    label: str
    outcome: bool | None = None


@dataclass(frozen=True)
class ControlFlowGraph:
    nodes: tuple[str, ...]
    edges: tuple[Edge, ...]
    opcodes: dict[str, str] = field(compare=False, default_factory=dict)

    def successors(self, node: str) -> list[Edge]:
        return [e for e in self.edges if e.src == node]

    def predecessors(self, node: str) -> list[Edge]:
        return [e for e in self.edges if e.dst == node]

    def dump(self) -> str:
        return "".join(f"{e.src} -> {e.dst} [{e.label}]\n" for e in sorted(self.edges))


@dataclass(frozen=True, order=True)
class CDGEdge:
    controller: str
    dependent: str
    outcome: bool


@dataclass(frozen=True)
class ControlDependenceGraph:
    edges: tuple[CDGEdge, ...]

    def controllers(self, block_id: str) -> list[tuple[str, bool]]:
        return sorted((e.controller, e.outcome) for e in self.edges if e.dependent == block_id)

    def dependents(self, block_id: str, outcome: bool) -> list[str]:
        return sorted(e.dependent for e in self.edges if e.controller == block_id and e.outcome == outcome)

    def dump(self) -> str:
        return "".join(f"{e.controller} -[{str(e.outcome).lower()}]-> {e.dependent}\n" for e in sorted(self.edges))


# ---------------------------------------------------------------------------
# CFG construction


def build_cfg(script: Script) -> ControlFlowGraph:
    edges: list[Edge] = []
    nodes: list[str] = [ENTRY]
    opcodes: dict[str, str] = {}

    def link(pending: list[tuple[str, str, bool | None]], dst: str) -> None:
        for src, label, outcome in pending:
            edges.append(Edge(src, dst, label, outcome))

    def lower(seq: Iterable[Block], pending: list) -> list:
        for block in seq:
            nodes.append(block.id)
            opcodes[block.id] = block.opcode
            link(pending, block.id)
            pending = lower_block(block)
        return pending

    def lower_block(block: Block) -> list:
        op = block.opcode
        if op == "control_if":
            out = lower(block.substacks[0], [(block.id, TRUE, True)])
            return out + [(block.id, FALSE, False)]
        if op == "control_if_else":
            return lower(block.substacks[0], [(block.id, TRUE, True)]) + \
                lower(block.substacks[1], [(block.id, FALSE, False)])
        if op in ("control_repeat", "control_repeat_until"):
            into = _BODY_OUTCOME[op]
            link(lower(block.substacks[0], [(block.id, LOOP_BODY, into)]), block.id)
            return [(block.id, LOOP_EXIT, not into)]
        if op == "control_forever":
            link(lower(block.substacks[0], [(block.id, LOOP_BODY, None)]), block.id)
            return []
        if op == "control_wait_until":
            edges.append(Edge(block.id, block.id, FALSE, False))
            return [(block.id, TRUE, True)]
        if op == "control_stop":
            edges.append(Edge(block.id, EXIT, SEQ))
            return []
        return [(block.id, SEQ, None)]

    link(lower(script.body, [(ENTRY, SEQ, None)]), EXIT)
    nodes.append(EXIT)
    return ControlFlowGraph(tuple(nodes), tuple(edges), opcodes)


# ---------------------------------------------------------------------------
# Postdominators and control dependence


def _loop_body(cfg: ControlFlowGraph, loop: str) -> set[str]:
    """Nodes reachable from the loop's body entry without re-entering the header."""
    succ: dict[str, list[str]] = {}
    for e in cfg.edges:
        succ.setdefault(e.src, []).append(e.dst)
    stack = [e.dst for e in cfg.edges if e.src == loop and e.label == LOOP_BODY]
    seen: set[str] = set()
    while stack:
        n = stack.pop()
        if n in seen or n in (loop, EXIT):
            continue
        seen.add(n)
        stack.extend(succ.get(n, ()))
    return seen


def _forever_back_edges(cfg: ControlFlowGraph) -> set[tuple[str, str]]:
    back: set[tuple[str, str]] = set()
    for n, op in cfg.opcodes.items():
        if op == "control_forever":
            body = _loop_body(cfg, n)
            back |= {(e.src, n) for e in cfg.edges if e.dst == n and (e.src in body or e.src == n)}
    return back


def _postdominator_graph(cfg: ControlFlowGraph, back: set[tuple[str, str]]) -> dict[str, list[str]]:
    """Successor map used for postdominance: forever back edges are routed to EXIT
    so every node has a path to EXIT."""
    succ: dict[str, list[str]] = {n: [] for n in cfg.nodes}
    for e in cfg.edges:
        dst = EXIT if (e.src, e.dst) in back else e.dst
        if dst not in succ[e.src]:
            succ[e.src].append(dst)
    return succ


def immediate_postdominators(succ: dict[str, list[str]], exit_node: str = EXIT) -> dict[str, str | None]:
    """Immediate postdominators: dominators of the reversed graph rooted at EXIT."""
    reverse = nx.DiGraph()
    reverse.add_nodes_from(succ)
    reverse.add_edges_from((d, n) for n, outs in succ.items() for d in outs)
    idom = nx.immediate_dominators(reverse, exit_node)
    return {n: (None if n == exit_node else idom.get(n)) for n in succ}


def build_cdg(cfg: ControlFlowGraph) -> ControlDependenceGraph:
    back = _forever_back_edges(cfg)
    succ = _postdominator_graph(cfg, back)
    ipdom = immediate_postdominators(succ)
    found: set[CDGEdge] = set()
    for e in cfg.edges:
        if e.outcome is None or e.src == ENTRY:
            continue
        stop = ipdom[e.src]
        node: str | None = EXIT if (e.src, e.dst) in back else e.dst
        # Walk up the postdominator tree from the edge target to ipdom(src).
        while node is not None and node != stop and node != EXIT:
            if node != e.src:
                found.add(CDGEdge(e.src, node, e.outcome))
            node = ipdom[node]
    return ControlDependenceGraph(tuple(sorted(_drop_loop_back(cfg, found))))


def _drop_loop_back(cfg: ControlFlowGraph, edges: set[CDGEdge]) -> set[CDGEdge]:
    """Remove dependences of a loop header on predicates nested in its own body
    (they only arise through the back edge and would make the CDG cyclic)."""
    loops = [n for n, op in cfg.opcodes.items() if op in LOOP_OPCODES]
    body = {loop: _loop_body(cfg, loop) for loop in loops}
    return {e for e in edges if not (e.dependent in body and e.controller in body[e.dependent])}


# ---------------------------------------------------------------------------
# ControlFilter


BRANCHING_SINGLE = "branching-single"
BRANCHING_DOUBLE = "branching-double"
NO_FALSE_BRANCH = "no-false-branch"
EXECUTION_HALTING = "execution-halting"

_CLASSIFICATION = {
    "control_if": BRANCHING_SINGLE,
    "control_repeat": BRANCHING_SINGLE,
    "control_repeat_until": BRANCHING_SINGLE,
    "control_wait_until": BRANCHING_SINGLE,
    "control_if_else": BRANCHING_DOUBLE,
    "control_forever": NO_FALSE_BRANCH,
    "control_stop": EXECUTION_HALTING,
    "control_wait": EXECUTION_HALTING,
}


@dataclass(frozen=True, order=True)
class BranchTarget:
    block_id: str
    outcome: bool
    classification: str = field(default=BRANCHING_SINGLE, compare=False)

    @property
    def key(self) -> str:
        return f"{self.block_id}:{'T' if self.outcome else 'F'}"

    def sibling(self) -> tuple[str, bool]:
        return (self.block_id, not self.outcome)


@dataclass(frozen=True)
class Advisory:
    block_id: str
    opcode: str
    classification: str


@dataclass(frozen=True)
class ControlFilterResult:
    targets: tuple[BranchTarget, ...]
    advisories: tuple[Advisory, ...]

    def __iter__(self):
        return iter(self.targets)

    def __len__(self) -> int:
        return len(self.targets)


def control_filter(program: BlockProgram) -> ControlFilterResult:
    targets: list[BranchTarget] = []
    advisories: list[Advisory] = []
    for block in program.statements():
        if not block.opcode.startswith("control_"):
            continue
        kind = _CLASSIFICATION[block.opcode]
        if kind in (NO_FALSE_BRANCH, EXECUTION_HALTING):
            advisories.append(Advisory(block.id, block.opcode, kind))
        elif block.opcode == "control_wait_until":
            # A stalled wait never observably takes its false side.
            targets.append(BranchTarget(block.id, True, kind))
        else:
            targets.append(BranchTarget(block.id, True, kind))
            targets.append(BranchTarget(block.id, False, kind))
    return ControlFilterResult(tuple(targets), tuple(advisories))


# ---------------------------------------------------------------------------
# Whole-program view


class ProgramGraph:
    """CFGs, the merged CDG and branch targets for every script of a program."""

    def __init__(self, program: BlockProgram):
        self.program = program
        self.cfgs: dict[tuple[int, int], ControlFlowGraph] = {}
        cdg_edges: list[CDGEdge] = []
        for si, ci, script in program.scripts():
            cfg = build_cfg(script)
            self.cfgs[(si, ci)] = cfg
            cdg_edges.extend(build_cdg(cfg).edges)
        self.cdg = ControlDependenceGraph(tuple(sorted(cdg_edges)))
        self.filtered = control_filter(program)
        self.targets = self.filtered.targets
        self._controllers = {b.id: self.cdg.controllers(b.id) for b in program.statements()}
        self._order = {b.id: i for i, b in enumerate(program.statements())}

    def controllers(self, block_id: str) -> list[tuple[str, bool]]:
        return self._controllers.get(block_id, [])

    def requirement_chains(self, block_id: str) -> list[list[tuple[str, bool]]]:
        """Every CDG path from the block up to a script root, nearest predicate first."""
        chains: list[list[tuple[str, bool]]] = []

        def extend(node: str, chain: list[tuple[str, bool]], seen: frozenset[str]) -> None:
            parents = [c for c in self.controllers(node) if c[0] not in seen]
            if not parents:
                chains.append(chain)
                return
            for pred, outcome in parents:
                extend(pred, chain + [(pred, outcome)], seen | {pred})

        extend(block_id, [], frozenset({block_id}))
        return chains

    def depth(self, block_id: str) -> int:
        """Nesting depth: length of the shortest controlling chain."""
        return min(len(c) for c in self.requirement_chains(block_id))

    def order(self, block_id: str) -> int:
        return self._order[block_id]

    @cached_property
    def _descendants(self) -> dict[tuple[str, bool], frozenset[str]]:
        out: dict[tuple[str, bool], frozenset[str]] = {}
        for t in self.targets:
            seen: set[str] = set()
            stack = self.cdg.dependents(t.block_id, t.outcome)
            while stack:
                n = stack.pop()
                if n in seen:
                    continue
                seen.add(n)
                stack.extend(self.cdg.dependents(n, True) + self.cdg.dependents(n, False))
            out[(t.block_id, t.outcome)] = frozenset(seen)
        return out

    def region(self, block_id: str, outcome: bool) -> frozenset[str]:
        """Blocks transitively control dependent on the given outcome."""
        key = (block_id, outcome)
        if key in self._descendants:
            return self._descendants[key]
        return frozenset()

    def controlled_blocks(self) -> set[str]:
        """Blocks control dependent on at least one branch target."""
        out: set[str] = set()
        for t in self.targets:
            out |= self.region(t.block_id, t.outcome)
        return out


# ---------------------------------------------------------------------------
# Coverage


def total_branches(program: BlockProgram) -> int:
    return len(control_filter(program).targets)


def executed_branches(traces, targets: Iterable[BranchTarget]) -> int:
    taken: set[tuple[str, bool]] = set()
    for trace in traces:
        taken |= trace.taken_pairs()
    return sum(1 for t in targets if (t.block_id, t.outcome) in taken)


def coverage_percent(executed: int, total: int) -> float:
    """Covered over total, in percent; an empty denominator counts as full coverage."""
    if total == 0:
        return 100.0
    return 100.0 * executed / total


def branch_coverage(program: BlockProgram, traces) -> float:
    targets = control_filter(program).targets
    return coverage_percent(executed_branches(list(traces), targets), len(targets))


def statement_coverage(program: BlockProgram, traces, among: Iterable[str] | None = None) -> float:
    wanted = [b.id for b in program.statements()] if among is None else list(among)
    done: set[str] = set()
    for trace in traces:
        done |= trace.executed
    return coverage_percent(sum(1 for b in wanted if b in done), len(wanted))
