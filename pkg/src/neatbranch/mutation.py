"""Mutation operators, the activation-surprise oracle and mutation scoring."""

from __future__ import annotations

import copy
import csv
import io
import math
import random
from dataclasses import dataclass, field
from typing import Any, Callable, Iterator

import numpy as np

from neatbranch.generator import DynamicTestSuite, derive_seed, play
from neatbranch.program import (
    ARITH_OPS,
    LOGIC_OPS,
    REL_OPS,
    BlockProgram,
    ProgramError,
    program_from_dict,
    program_to_dict,
)

OPERATORS = ("KRM", "SBD", "SDM", "AOR", "LOR", "ROR", "NCM", "VRM")
KEY_POOL = ("space", "up arrow", "down arrow", "left arrow", "right arrow")
BOOLEAN_KINDS = {"rel", "logic", "not", "key_pressed", "touching", "touching_edge"}

KILLED, SURVIVED, INVALID = "killed", "survived", "invalid"

DEFAULT_CAP = 50
DEFAULT_THRESHOLD = 30.0
VARIANCE_FLOOR = 1e-4
MIN_REFERENCE = 10


@dataclass
class Mutant:
    operator: str
    index: int
    block_id: str
    original: str
    replacement: str
    program: BlockProgram | None
    status: str = ""
    reason: str = ""

    @property
    def label(self) -> str:
        return f"{self.operator}-{self.index:03d}"


# ---------------------------------------------------------------------------
# Site enumeration on the dict form


def _stacks(doc: dict) -> Iterator[list]:
    """Every block list in the document (scripts and substacks)."""
    def walk(seq: list) -> Iterator[list]:
        yield seq
        for blk in seq:
            for sub in blk.get("substacks", []):
                yield from walk(sub)

    for sprite in doc["sprites"]:
        for script in sprite["scripts"]:
            yield from walk(script)


def _blocks(doc: dict) -> Iterator[dict]:
    for seq in _stacks(doc):
        yield from seq


def _expr_slots(doc: dict) -> Iterator[tuple[dict, dict, str]]:
    """(owning block, container dict, key) for every expression node, pre-order."""
    def walk(block: dict, holder: dict, key: str) -> Iterator[tuple[dict, dict, str]]:
        node = holder[key]
        yield block, holder, key
        for child in ("left", "right", "operand", "low", "high"):
            if child in node:
                yield from walk(block, node, child)

    for blk in _blocks(doc):
        inputs = blk.get("inputs", {})
        for name in sorted(inputs):
            yield from walk(blk, inputs, name)


Edit = Callable[[dict], None]


def _describe(node: Any) -> str:
    if isinstance(node, dict):
        kind = node.get("kind")
        if kind in ("rel", "arith", "logic"):
            return str(node["op"])
        if kind == "key_pressed":
            return f"key {node['key']}"
        if kind == "var":
            return f"var {node['name']}"
        return str(kind)
    return str(node)


def _sites(doc: dict, operator: str) -> list[tuple[str, str, str, Callable[[dict], None]]]:
    """Mutation sites as (block id, original, replacement, edit-by-position)."""
    sites: list[tuple[str, str, str, Callable[[dict], None]]] = []
    variables = [g["name"] for g in doc.get("globals", [])]

    if operator == "SDM":
        for si, sprite in enumerate(doc["sprites"]):
            for ci, script in enumerate(sprite["scripts"]):
                def edit(d, si=si, ci=ci):
                    del d["sprites"][si]["scripts"][ci]
                sites.append((script[0]["id"], "script", "deleted", edit))
        return sites

    if operator == "SBD":
        for ti, seq in enumerate(_stacks(doc)):
            for bi, blk in enumerate(seq):
                if blk["opcode"].startswith("event_"):
                    continue
                def edit(d, ti=ti, bi=bi):
                    del list(_stacks(d))[ti][bi]
                sites.append((blk["id"], blk["opcode"], "deleted", edit))
        return sites

    if operator == "KRM":
        for bi, blk in enumerate(_blocks(doc)):
            if blk["opcode"] == "event_whenkeypressed":
                for key in KEY_POOL:
                    if key != blk["fields"]["KEY"]:
                        def edit(d, bi=bi, key=key):
                            list(_blocks(d))[bi]["fields"]["KEY"] = key
                        sites.append((blk["id"], blk["fields"]["KEY"], key, edit))
    if operator == "VRM":
        for bi, blk in enumerate(_blocks(doc)):
            name = blk.get("fields", {}).get("VARIABLE")
            if name is not None:
                for other in variables:
                    if other != name:
                        def edit(d, bi=bi, other=other):
                            list(_blocks(d))[bi]["fields"]["VARIABLE"] = other
                        sites.append((blk["id"], f"var {name}", f"var {other}", edit))

    for xi, (blk, holder, key) in enumerate(_expr_slots(doc)):
        node = holder[key]
        kind = node["kind"]
        replacements: list[tuple[str, Callable[[dict], None]]] = []

        def at(d: dict, xi: int = xi) -> tuple[dict, str]:
            _, h, k = list(_expr_slots(d))[xi]
            return h, k

        if operator == "KRM" and kind == "key_pressed":
            for new in KEY_POOL:
                if new != node["key"]:
                    def edit(d, new=new, at=at):
                        h, k = at(d)
                        h[k]["key"] = new
                    replacements.append((f"key {new}", edit))
        elif (operator, kind) in (("AOR", "arith"), ("LOR", "logic"), ("ROR", "rel")):
            pool = {"AOR": ARITH_OPS, "LOR": LOGIC_OPS, "ROR": REL_OPS}[operator]
            for new in pool:
                if new != node["op"]:
                    def edit(d, new=new, at=at):
                        h, k = at(d)
                        h[k]["op"] = new
                    replacements.append((new, edit))
        elif operator == "NCM" and kind in BOOLEAN_KINDS:
            def edit(d, at=at):
                h, k = at(d)
                h[k] = {"kind": "not", "operand": h[k]}
            replacements.append((f"not {_describe(node)}", edit))
        elif operator == "VRM" and kind == "var":
            for other in variables:
                if other != node["name"]:
                    def edit(d, other=other, at=at):
                        h, k = at(d)
                        h[k]["name"] = other
                    replacements.append((f"var {other}", edit))
        for text, edit in replacements:
            sites.append((blk["id"], _describe(node), text, edit))
    return sites


def mutate_all(program: BlockProgram, operator: str, cap: int = DEFAULT_CAP,
               rng: random.Random | None = None) -> list[Mutant]:
    """Every mutant of one operator, or ``cap`` of them sampled without replacement."""
    if operator not in OPERATORS:
        raise ValueError(f"unknown mutation operator {operator!r}")
    doc = program_to_dict(program)
    sites = _sites(doc, operator)
    chosen = list(range(len(sites)))
    if len(sites) > cap:
        chosen = sorted((rng or random.Random(0)).sample(chosen, cap))
    mutants: list[Mutant] = []
    for n, i in enumerate(chosen):
        block_id, original, replacement, edit = sites[i]
        mdoc = copy.deepcopy(doc)
        edit(mdoc)
        try:
            mprog = program_from_dict(mdoc)
            status = ""
        except ProgramError as exc:
            mprog, status = None, INVALID
            reason = str(exc)
        m = Mutant(operator, n, block_id, original, replacement, mprog, status)
        if status == INVALID:
            m.reason = reason
        mutants.append(m)
    return mutants


def mutation_score(statuses: list[str] | list[Mutant]) -> float | None:
    """100 * killed / (killed + survived); None when there is no valid mutant."""
    flat = [s.status if isinstance(s, Mutant) else s for s in statuses]
    killed = flat.count(KILLED)
    valid = killed + flat.count(SURVIVED)
    if valid == 0:
        return None
    return 100.0 * killed / valid


# ---------------------------------------------------------------------------
# Surprise model


class InsufficientReferenceError(ValueError):
    pass


@dataclass
class SurpriseModel:
    """Gaussian product-kernel KDE over reference activation vectors."""

    reference: np.ndarray
    bandwidth: np.ndarray
    threshold: float = DEFAULT_THRESHOLD

    @classmethod
    def fit(cls, vectors, threshold: float = DEFAULT_THRESHOLD, variance_floor: float = VARIANCE_FLOOR) -> "SurpriseModel":
        ref = np.asarray(vectors, dtype=float)
        if ref.ndim == 1:
            ref = ref[:, None]
        n, d = ref.shape
        if n < MIN_REFERENCE:
            raise InsufficientReferenceError(f"need at least {MIN_REFERENCE} reference vectors, got {n}")
        sigma = np.sqrt(np.maximum(ref.var(axis=0, ddof=1), variance_floor))
        # Silverman's rule of thumb, per dimension
        h = sigma * (4.0 / ((d + 2) * n)) ** (1.0 / (d + 4))
        return cls(ref, h, threshold)

    def lsa(self, queries) -> np.ndarray:
        """-log of the mean unnormalized kernel value; 0 <= LSA and LSA <= log n on references."""
        q = np.asarray(queries, dtype=float)
        if q.ndim == 1:
            q = q[None, :] if self.reference.shape[1] > 1 else q[:, None]
        z = (q[:, None, :] - self.reference[None, :, :]) / self.bandwidth
        logk = -0.5 * np.einsum("qnd,qnd->qn", z, z)
        m = logk.max(axis=1)
        lse = m + np.log(np.exp(logk - m[:, None]).sum(axis=1))
        return math.log(len(self.reference)) - lse

    def surprised(self, queries) -> bool:
        return bool(np.any(self.lsa(queries) > self.threshold))


# ---------------------------------------------------------------------------
# Oracle


def judge_seeds(count: int, base: str = "judge") -> list[int]:
    return [derive_seed(base, i) for i in range(count)]


@dataclass
class Oracle:
    """Judges programs by replaying suite networks and comparing activations."""

    program: BlockProgram
    suite: DynamicTestSuite
    seeds: list[int]
    threshold: float = DEFAULT_THRESHOLD
    max_steps: int | None = None
    models: list[SurpriseModel] = field(default_factory=list)

    def __post_init__(self) -> None:
        if not self.models:
            self.models = [SurpriseModel.fit(vs, self.threshold) for vs in self._activations(self.program)]

    @property
    def steps(self) -> int:
        return self.max_steps or self.suite.config.max_steps

    def _activations(self, program: BlockProgram) -> list[list[list[float]]]:
        out = []
        for entry in self.suite.entries:
            vecs: list[list[float]] = []
            for s in self.seeds:
                _, driver = play(program, entry.genome, s, self.steps, record=True, stop_when_idle=False)
                vecs.extend(driver.activations)
            out.append(vecs)
        return out

    def verdict(self, program: BlockProgram, seeds: list[int] | None = None) -> tuple[bool, str]:
        """(killed, reason) for ``program`` under the given (default: judge) seeds."""
        for i, entry in enumerate(self.suite.entries):
            model = self.models[i]
            for s in (self.seeds if seeds is None else seeds):
                try:
                    _, driver = play(program, entry.genome, s, self.steps, record=True, stop_when_idle=False)
                except Exception as exc:  # a crashing mutant is detected
                    return True, f"crash: {exc}"
                if driver.extended:
                    return True, f"structure: entry {i} extended by {driver.extension_labels[0]}"
                if driver.activations:
                    worst = float(model.lsa(driver.activations).max())
                    if worst > self.threshold:
                        return True, f"lsa: entry {i} seed {s} reached {worst:.1f}"
        return False, ""

    def judge(self, mutant: Mutant) -> Mutant:
        if mutant.program is None:
            mutant.status = INVALID
            return mutant
        killed, reason = self.verdict(mutant.program)
        mutant.status = KILLED if killed else SURVIVED
        mutant.reason = reason
        return mutant

    def false_positives(self, fresh_seeds: list[int]) -> int:
        """Fresh seeds on which the unmutated program is flagged."""
        return sum(1 for s in fresh_seeds if self.verdict(self.program, [s])[0])


# ---------------------------------------------------------------------------
# Reporting


REPORT_COLUMNS = ("project", "operator", "total", "killed", "survived", "invalid", "score%", "false_positives")


@dataclass
class OperatorRow:
    project: str
    operator: str
    total: int
    killed: int
    survived: int
    invalid: int
    score: float | None
    false_positives: int

    def as_csv(self) -> list[str]:
        score = "n/a" if self.score is None else f"{self.score:.2f}"
        return [self.project, self.operator, str(self.total), str(self.killed), str(self.survived),
                str(self.invalid), score, str(self.false_positives)]


def mutation_analysis(program: BlockProgram, suite: DynamicTestSuite, operators=OPERATORS, cap: int = DEFAULT_CAP,
                      n_judge_seeds: int = 10, threshold: float = DEFAULT_THRESHOLD, seed: int = 0
                      ) -> tuple[list[OperatorRow], list[Mutant]]:
    rng = random.Random(derive_seed("mutants", seed))
    oracle = Oracle(program, suite, judge_seeds(n_judge_seeds), threshold)
    fp = oracle.false_positives(judge_seeds(n_judge_seeds, "fresh"))
    rows: list[OperatorRow] = []
    judged: list[Mutant] = []
    for op in operators:
        mutants = [oracle.judge(m) for m in mutate_all(program, op, cap, rng)]
        judged += mutants
        st = [m.status for m in mutants]
        rows.append(OperatorRow(program.name, op, len(st), st.count(KILLED), st.count(SURVIVED),
                                st.count(INVALID), mutation_score(st), fp))
    return rows, judged


def report_csv(rows: list[OperatorRow]) -> str:
    buf = io.StringIO()
    w = csv.writer(buf, lineterminator="\n")
    w.writerow(REPORT_COLUMNS)
    for r in rows:
        w.writerow(r.as_csv())
    return buf.getvalue()
