"""NEAT genomes, speciation, reproduction and the network driver for the VM.

Genomes are feed-forward only.  Node ids are allocated per run through an
:class:`InnovationTracker`, so the same structural mutation receives the same
innovation number no matter which genome makes it first.
"""

from __future__ import annotations

import math
import random
from dataclasses import dataclass, field
from typing import Sequence

from neatbranch.fitness import FitnessValue
from neatbranch.vm import KEY_DOWN, KEY_UP, InputEvent

INPUT, BIAS, HIDDEN, OUTPUT = "input", "bias", "hidden", "output"
NO_OP = "no-op"


@dataclass(frozen=True)
class NeatConfig:
    population: int = 150
    species_target: int = 5
    c1: float = 1.0
    c2: float = 1.0
    c3: float = 0.4
    initial_threshold: float = 1.5
    threshold_step: float = 0.1
    min_threshold: float = 0.1
    initial_connection_rate: float = 0.5
    add_connection_rate: float = 0.05
    add_node_rate: float = 0.03
    weight_perturb_rate: float = 0.8
    weight_sigma: float = 0.5
    weight_replace_rate: float = 0.1
    weight_range: float = 2.0
    crossover_rate: float = 0.75
    survival_fraction: float = 0.2
    disable_inherit_rate: float = 0.75

    def frozen(self) -> "NeatConfig":
        """Same config with every mutation switched off."""
        return NeatConfig(**{**self.__dict__, "add_connection_rate": 0.0, "add_node_rate": 0.0,
                             "weight_perturb_rate": 0.0, "weight_replace_rate": 0.0, "crossover_rate": 0.0})


@dataclass
class NodeGene:
    id: int
    kind: str
    label: str = ""

    @property
    def activation(self) -> str:
        return "tanh" if self.kind == HIDDEN else "identity"


@dataclass
class ConnectionGene:
    src: int
    dst: int
    weight: float
    enabled: bool
    innovation: int

    def copy(self) -> "ConnectionGene":
        return ConnectionGene(self.src, self.dst, self.weight, self.enabled, self.innovation)


class InnovationTracker:
    """Hands out innovation numbers per (src, dst) and node ids per split connection."""

    def __init__(self, first_node: int):
        self.next_node = first_node
        self.next_innovation = 0
        self.connections: dict[tuple[int, int], int] = {}
        self.splits: dict[int, list[int]] = {}

    def connection(self, src: int, dst: int) -> int:
        key = (src, dst)
        if key not in self.connections:
            self.connections[key] = self.next_innovation
            self.next_innovation += 1
        return self.connections[key]

    def split(self, innovation: int, taken: set[int]) -> int:
        """Node id for splitting ``innovation``; reuses ids other genomes already got."""
        ids = self.splits.setdefault(innovation, [])
        for node in ids:
            if node not in taken:
                return node
        node = self.next_node
        self.next_node += 1
        ids.append(node)
        return node


@dataclass
class Genome:
    nodes: dict[int, NodeGene]
    connections: dict[int, ConnectionGene]
    fitness: FitnessValue | None = None
    species: int | None = None
    robustness: int = 0

    # -- structure -----------------------------------------------------------
    def ids(self, kind: str) -> list[int]:
        return sorted(n.id for n in self.nodes.values() if n.kind == kind)

    @property
    def input_labels(self) -> tuple[str, ...]:
        return tuple(self.nodes[i].label for i in self.ids(INPUT))

    @property
    def actions(self) -> tuple[str, ...]:
        return tuple(self.nodes[i].label for i in self.ids(OUTPUT))

    def copy(self) -> "Genome":
        return Genome(
            {k: NodeGene(n.id, n.kind, n.label) for k, n in self.nodes.items()},
            {k: c.copy() for k, c in self.connections.items()},
            self.fitness,
            self.species,
            self.robustness,
        )

    def enabled_pairs(self) -> set[tuple[int, int]]:
        return {(c.src, c.dst) for c in self.connections.values() if c.enabled}

    def reaches(self, start: int, goal: int) -> bool:
        """True if ``goal`` is reachable from ``start`` along any connection gene."""
        succ: dict[int, list[int]] = {}
        for c in self.connections.values():
            succ.setdefault(c.src, []).append(c.dst)
        stack, seen = [start], set()
        while stack:
            n = stack.pop()
            if n == goal:
                return True
            if n not in seen:
                seen.add(n)
                stack.extend(succ.get(n, ()))
        return False

    def sort_key(self) -> tuple:
        return (self.fitness or FitnessValue(math.inf, 0, 0.0),)


def minimal_genome(
    input_labels: Sequence[str],
    actions: Sequence[str],
    tracker: InnovationTracker,
    rng: random.Random,
    connection_rate: float = 0.5,
) -> Genome:
    """Inputs, a bias and one output per action; bias feeds every output, inputs sparsely."""
    nodes: dict[int, NodeGene] = {}
    for i, label in enumerate(input_labels):
        nodes[i] = NodeGene(i, INPUT, label)
    bias = len(input_labels)
    nodes[bias] = NodeGene(bias, BIAS, "bias")
    outs = [bias + 1 + j for j in range(len(actions))]
    for node, action in zip(outs, actions):
        nodes[node] = NodeGene(node, OUTPUT, action)
    if tracker.next_node < outs[-1] + 1:
        tracker.next_node = outs[-1] + 1
    conns: dict[int, ConnectionGene] = {}
    for o in outs:
        for src in range(bias + 1):
            if src == bias or rng.random() < connection_rate:
                inn = tracker.connection(src, o)
                conns[inn] = ConnectionGene(src, o, rng.gauss(0.0, 1.0), True, inn)
    return Genome(nodes, conns)


# ---------------------------------------------------------------------------
# Activation


class Network:
    """Compiled feed-forward evaluator for a genome."""

    def __init__(self, genome: Genome):
        self.genome = genome
        self.inputs = genome.ids(INPUT)
        self.bias = genome.ids(BIAS)
        self.outputs = genome.ids(OUTPUT)
        self.hidden = genome.ids(HIDDEN)
        incoming: dict[int, list[tuple[int, float]]] = {n: [] for n in genome.nodes}
        for c in sorted(genome.connections.values(), key=lambda c: c.innovation):
            if c.enabled:
                incoming[c.dst].append((c.src, c.weight))
        self.order = _topological(genome, incoming)
        self.incoming = incoming
        self.recorded = self.hidden + self.outputs
        self._hidden_set = set(self.hidden)

    def activate(self, inputs: Sequence[float]) -> tuple[int, list[float]]:
        """Return (argmax output index, recorded activations: hidden then outputs)."""
        if len(inputs) != len(self.inputs):
            raise ValueError(f"expected {len(self.inputs)} inputs, got {len(inputs)}")
        values: dict[int, float] = dict(zip(self.inputs, inputs))
        for b in self.bias:
            values[b] = 1.0
        for node in self.order:
            total = 0.0
            for src, w in self.incoming[node]:
                total += values[src] * w
            values[node] = math.tanh(total) if node in self._hidden_set else total
        outs = [values[o] for o in self.outputs]
        best = 0
        for i, v in enumerate(outs):
            if v > outs[best]:
                best = i
        return best, [values[n] for n in self.recorded]


def _topological(genome: Genome, incoming: dict[int, list[tuple[int, float]]]) -> list[int]:
    sources = {n for n, g in genome.nodes.items() if g.kind in (INPUT, BIAS)}
    pending = sorted(n for n in genome.nodes if n not in sources)
    done = set(sources)
    order: list[int] = []
    while pending:
        ready = [n for n in pending if all(s in done for s, _ in incoming[n])]
        if not ready:
            raise ValueError("genome contains a cycle")
        for n in ready:
            order.append(n)
            done.add(n)
        pending = [n for n in pending if n not in done]
    return order


class NetworkDriver:
    """Drives the VM from a genome; keys are held while their output wins.

    Feature labels that the genome has never seen, or program keys it has no
    output for, count as a network extension: new inputs are wired with zero
    weight so behaviour is unchanged, but ``extended`` is raised.  Inputs whose
    feature vanished are fed 0 and count as a structural change as well.
    """

    def __init__(self, genome: Genome, record: bool = False):
        self.genome = genome
        self.network = Network(genome)
        self.record = record
        self.activations: list[list[float]] = []
        self.extended = False
        self.extension_labels: list[str] = []
        self._map: list[int | None] = []
        self._held: str | None = None

    def start(self, feature_names, keys) -> None:
        index = {name: i for i, name in enumerate(feature_names)}
        self._map = [index.get(label) for label in self.genome.input_labels]
        known = set(self.genome.input_labels)
        actions = set(self.genome.actions)
        self.extension_labels = [f for f in feature_names if f not in known]
        self.extension_labels += [f"key:{k}" for k in keys if k not in actions]
        self.extension_labels += [f"-{label}" for label in self.genome.input_labels if label not in index]
        self.extended = bool(self.extension_labels)
        self.activations = []
        self._held = None

    def act(self, step, features):
        inputs = [0.0 if i is None else features[i] for i in self._map]
        choice, acts = self.network.activate(inputs)
        if self.record:
            self.activations.append(acts)
        action = self.genome.actions[choice]
        events: list[InputEvent] = []
        want = None if action == NO_OP else action
        if self._held is not None and self._held != want:
            events.append(InputEvent(step, KEY_UP, self._held))
            self._held = None
        if want is not None and self._held is None:
            events.append(InputEvent(step, KEY_DOWN, want))
            self._held = want
        return events


# ---------------------------------------------------------------------------
# Distance and variation


def compatibility(a: Genome, b: Genome, config: NeatConfig = NeatConfig()) -> float:
    """c1*E/N + c2*D/N + c3*mean |dw| over connection genes, N = larger gene count."""
    ia, ib = set(a.connections), set(b.connections)
    n = max(len(ia), len(ib))
    if n == 0:
        return 0.0
    cut = min(max(ia, default=-1), max(ib, default=-1))
    unmatched = ia ^ ib
    excess = sum(1 for i in unmatched if i > cut)
    disjoint = len(unmatched) - excess
    matching = ia & ib
    wbar = (sum(abs(a.connections[i].weight - b.connections[i].weight) for i in matching) / len(matching)) if matching else 0.0
    return config.c1 * excess / n + config.c2 * disjoint / n + config.c3 * wbar


def crossover(fit: Genome, other: Genome, rng: random.Random, config: NeatConfig = NeatConfig()) -> Genome:
    """Child of ``fit`` (the fitter parent) and ``other``, aligned by innovation."""
    conns: dict[int, ConnectionGene] = {}
    for inn in sorted(fit.connections):
        mine = fit.connections[inn]
        theirs = other.connections.get(inn)
        gene = (theirs if theirs is not None and rng.random() < 0.5 else mine).copy()
        if theirs is not None and (not mine.enabled or not theirs.enabled):
            gene.enabled = rng.random() >= config.disable_inherit_rate
        conns[inn] = gene
    nodes = {k: NodeGene(n.id, n.kind, n.label) for k, n in fit.nodes.items()}
    return Genome(nodes, conns)


def mutate(genome: Genome, tracker: InnovationTracker, rng: random.Random, config: NeatConfig = NeatConfig()) -> None:
    """Apply weight and structural mutations in place."""
    for inn in sorted(genome.connections):
        c = genome.connections[inn]
        r = rng.random()
        if r < config.weight_perturb_rate:
            c.weight += rng.gauss(0.0, config.weight_sigma)
        elif r < config.weight_perturb_rate + config.weight_replace_rate:
            c.weight = rng.uniform(-config.weight_range, config.weight_range)
    if rng.random() < config.add_connection_rate:
        add_connection(genome, tracker, rng, config)
    if rng.random() < config.add_node_rate:
        add_node(genome, tracker, rng)


def add_connection(genome: Genome, tracker: InnovationTracker, rng: random.Random, config: NeatConfig = NeatConfig()) -> ConnectionGene | None:
    sources = sorted(n for n, g in genome.nodes.items() if g.kind != OUTPUT)
    sinks = sorted(n for n, g in genome.nodes.items() if g.kind in (HIDDEN, OUTPUT))
    existing = {(c.src, c.dst): c for c in genome.connections.values()}
    candidates = [(s, d) for s in sources for d in sinks
                  if s != d and (s, d) not in existing and not genome.reaches(d, s)]
    if not candidates:
        disabled = sorted((c for c in existing.values() if not c.enabled), key=lambda c: c.innovation)
        if disabled:
            gene = rng.choice(disabled)
            gene.enabled = True
            return gene
        return None
    src, dst = rng.choice(candidates)
    inn = tracker.connection(src, dst)
    gene = ConnectionGene(src, dst, rng.uniform(-config.weight_range, config.weight_range), True, inn)
    genome.connections[inn] = gene
    return gene


def add_node(genome: Genome, tracker: InnovationTracker, rng: random.Random) -> int | None:
    enabled = sorted((c for c in genome.connections.values() if c.enabled), key=lambda c: c.innovation)
    if not enabled:
        return None
    old = rng.choice(enabled)
    node = tracker.split(old.innovation, set(genome.nodes))
    old.enabled = False
    genome.nodes[node] = NodeGene(node, HIDDEN)
    for src, dst, w in ((old.src, node, 1.0), (node, old.dst, old.weight)):
        inn = tracker.connection(src, dst)
        genome.connections[inn] = ConnectionGene(src, dst, w, True, inn)
    return node


# ---------------------------------------------------------------------------
# Population


@dataclass
class Species:
    id: int
    representative: Genome
    members: list[Genome] = field(default_factory=list)


class Population:
    """A NEAT population minimizing ``FitnessValue.f``.

    Callers set ``genome.fitness`` on every member, then call
    :meth:`next_generation`.
    """

    def __init__(self, genomes: list[Genome], tracker: InnovationTracker, rng: random.Random, config: NeatConfig = NeatConfig()):
        self.genomes = genomes
        self.tracker = tracker
        self.rng = rng
        self.config = config
        self.threshold = config.initial_threshold
        self.species: list[Species] = []
        self._next_species = 0
        self.generation = 0

    @classmethod
    def create(cls, input_labels, actions, rng: random.Random, config: NeatConfig = NeatConfig(),
               tracker: InnovationTracker | None = None) -> "Population":
        tracker = tracker or InnovationTracker(len(input_labels) + 1 + len(actions))
        genomes = [minimal_genome(input_labels, actions, tracker, rng, config.initial_connection_rate)
                   for _ in range(config.population)]
        return cls(genomes, tracker, rng, config)

    def best(self) -> Genome:
        return min(self.genomes, key=Genome.sort_key)

    def speciate(self) -> list[Species]:
        old = self.species
        species = [Species(s.id, s.representative) for s in old]
        for g in self.genomes:
            for s in species:
                if compatibility(g, s.representative, self.config) < self.threshold:
                    s.members.append(g)
                    g.species = s.id
                    break
            else:
                s = Species(self._next_species, g, [g])
                self._next_species += 1
                g.species = s.id
                species.append(s)
        species = [s for s in species if s.members]
        for s in species:
            s.representative = s.members[0]
        if len(species) < self.config.species_target:
            self.threshold = max(self.config.min_threshold, self.threshold - self.config.threshold_step)
        elif len(species) > self.config.species_target:
            self.threshold += self.config.threshold_step
        self.species = species
        return species

    def _quotas(self, species: list[Species]) -> list[int]:
        # explicit fitness sharing: a species earns the mean of (1 - f) over its members
        shares = [sum(1.0 - g.fitness.f for g in s.members) / len(s.members) for s in species]
        total = sum(shares)
        size = self.config.population
        if total <= 0:
            shares, total = [1.0] * len(species), float(len(species))
        raw = [size * sh / total for sh in shares]
        quota = [int(math.floor(r)) for r in raw]
        rest = sorted(range(len(species)), key=lambda i: (-(raw[i] - quota[i]), i))
        for i in rest[: size - sum(quota)]:
            quota[i] += 1
        return quota

    def next_generation(self) -> list[Genome]:
        if any(g.fitness is None for g in self.genomes):
            raise ValueError("every genome needs a fitness before reproduction")
        species = self.speciate()
        quotas = self._quotas(species)
        children: list[Genome] = []
        cfg = self.config
        for s, quota in zip(species, quotas):
            if quota == 0:
                continue
            ranked = sorted(s.members, key=Genome.sort_key)
            champion = ranked[0].copy()
            champion.robustness = 0
            children.append(champion)
            parents = ranked[: max(1, math.ceil(len(ranked) * cfg.survival_fraction))]
            for _ in range(quota - 1):
                mother = self.rng.choice(parents)
                if len(parents) > 1 and self.rng.random() < cfg.crossover_rate:
                    father = self.rng.choice(parents)
                    fit, other = sorted((mother, father), key=lambda g: (g.sort_key(), parents.index(g)))
                    child = crossover(fit, other, self.rng, cfg)
                else:
                    child = mother.copy()
                mutate(child, self.tracker, self.rng, cfg)
                child.fitness = None
                child.robustness = 0
                children.append(child)
        for child in children:
            child.species = None
        self.genomes = children
        self.generation += 1
        return children


# ---------------------------------------------------------------------------
# Serialization


def genome_to_text(genome: Genome) -> str:
    lines = ["genome 1"]
    for nid in sorted(genome.nodes):
        n = genome.nodes[nid]
        lines.append(f"node {n.id} {n.kind} {n.label}".rstrip())
    for inn in sorted(genome.connections):
        c = genome.connections[inn]
        lines.append(f"conn {c.innovation} {c.src} {c.dst} {c.weight!r} {int(c.enabled)}")
    return "\n".join(lines) + "\n"


def genome_from_text(text: str) -> Genome:
    lines = text.splitlines()
    if not lines or lines[0] != "genome 1":
        raise ValueError("not a genome file")
    nodes: dict[int, NodeGene] = {}
    conns: dict[int, ConnectionGene] = {}
    for line in lines[1:]:
        if not line.strip():
            continue
        tag, rest = line.split(" ", 1)
        if tag == "node":
            parts = rest.split(" ", 2)
            nid, kind = int(parts[0]), parts[1]
            nodes[nid] = NodeGene(nid, kind, parts[2] if len(parts) > 2 else "")
        elif tag == "conn":
            inn, src, dst, w, en = rest.split(" ")
            conns[int(inn)] = ConnectionGene(int(src), int(dst), float(w), en == "1", int(inn))
        else:
            raise ValueError(f"unknown genome record {tag!r}")
    genome = Genome(nodes, conns)
    _topological(genome, {n: [(c.src, c.weight) for c in conns.values() if c.enabled and c.dst == n] for n in nodes})
    return genome
