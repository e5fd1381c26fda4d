"""Seeded, stepped interpreter for block programs with coverage instrumentation.

One logical step runs at most one block per live script, in (sprite, script)
order.  Before the blocks run, the driver observes the current feature
vector and may press or release keys.  Every predicate evaluation is
recorded with its distance to both outcomes.
"""

from __future__ import annotations

import math
import random
from dataclasses import dataclass, field
from typing import Iterable, Protocol, Sequence

from neatbranch.program import (
    Arith,
    Block,
    BlockProgram,
    Coord,
    Expression,
    KeyPressed,
    Logic,
    Not,
    Num,
    Random,
    Rel,
    Touching,
    TouchingEdge,
    Var,
)

STEPS_PER_SECOND = 30
STAGE_HALF_WIDTH = 240.0
STAGE_HALF_HEIGHT = 180.0
SPRITE_EXTENT = 32.0
EPSILON = 1e-6
VARIABLE_SCALE = 10.0

KEY_DOWN, KEY_UP, NO_OP = "key-down", "key-up", "no-op"

FINISHED, MAX_STEPS, STOP_ALL = "finished", "max-steps", "stop-all"


@dataclass(frozen=True, order=True)
class InputEvent:
    step: int
    action: str
    key: str | None = None

    def to_line(self) -> str:
        return f"{self.step}\t{self.action}\t{self.key or ''}"

    @classmethod
    def from_line(cls, line: str) -> "InputEvent":
        step, action, key = line.rstrip("\n").split("\t")
        return cls(int(step), action, key or None)


@dataclass(frozen=True)
class PredicateEvent:
    block_id: str
    step: int
    value: bool
    d_true: float
    d_false: float

    def distance(self, outcome: bool) -> float:
        return self.d_true if outcome else self.d_false


@dataclass
class ExecutionTrace:
    seed: int
    feature_names: tuple[str, ...] = ()
    executed: set[str] = field(default_factory=set)
    log: list[tuple[int, str]] = field(default_factory=list)
    predicate_events: list[PredicateEvent] = field(default_factory=list)
    taken: dict[str, set[bool]] = field(default_factory=dict)
    best: dict[tuple[str, bool], float] = field(default_factory=dict)
    features: list[tuple[float, ...]] = field(default_factory=list)
    events: list[InputEvent] = field(default_factory=list)
    says: list[tuple[int, str, str]] = field(default_factory=list)
    faults: list[tuple[int, str, str]] = field(default_factory=list)
    halt_reason: str = ""
    steps: int = 0

    def taken_pairs(self) -> set[tuple[str, bool]]:
        return {(b, o) for b, outs in self.taken.items() for o in outs}

    def evaluated(self, block_id: str) -> bool:
        return block_id in self.taken

    def min_distance(self, block_id: str, outcome: bool) -> float | None:
        """Smallest recorded distance of the predicate towards ``outcome``."""
        return self.best.get((block_id, outcome))

    def to_lines(self) -> list[str]:
        """Line records ``step<TAB>block<TAB>kind<TAB>payload`` in step order."""
        rows: list[tuple[int, int, str]] = []
        for ev in self.events:
            rows.append((ev.step, 0, f"{ev.step}\t-\tinput\t{ev.action}:{ev.key or ''}"))
        for step, bid in self.log:
            rows.append((step, 1, f"{step}\t{bid}\texec\t-"))
        for pe in self.predicate_events:
            rows.append((pe.step, 2, f"{pe.step}\t{pe.block_id}\tpredicate\t"
                                      f"{int(pe.value)},{pe.d_true!r},{pe.d_false!r}"))
        for step, sprite, msg in self.says:
            rows.append((step, 3, f"{step}\t{sprite}\tsay\t{msg}"))
        for step, bid, msg in self.faults:
            rows.append((step, 4, f"{step}\t{bid}\tfault\t{msg}"))
        rows.sort(key=lambda r: (r[0], r[1]))
        return [r[2] for r in rows] + [f"{self.steps}\t-\thalt\t{self.halt_reason}"]


class Driver(Protocol):
    def start(self, feature_names: Sequence[str], keys: Sequence[str]) -> None: ...

    def act(self, step: int, features: Sequence[float]) -> Iterable[InputEvent]: ...


class IdleDriver:
    """Never touches the keyboard."""

    def start(self, feature_names, keys) -> None:
        pass

    def act(self, step, features):
        return ()


class ScriptedDriver:
    """Replays a recorded event log."""

    def __init__(self, events: Iterable[InputEvent]):
        self._by_step: dict[int, list[InputEvent]] = {}
        last = -1
        for ev in events:
            if ev.step < last:
                raise ValueError("input events must be sorted by step")
            last = ev.step
            self._by_step.setdefault(ev.step, []).append(ev)

    def start(self, feature_names, keys) -> None:
        pass

    def act(self, step, features):
        return self._by_step.get(step, ())


def feature_names(program: BlockProgram) -> tuple[str, ...]:
    names: list[str] = []
    for sprite in program.sprites:
        names += [f"x:{sprite.name}", f"y:{sprite.name}"]
    for var in program.variable_names:
        names += [f"var:{var}", f"set:{var}"]
    names += [f"pred:{b.id}" for b in program.predicate_blocks()]
    return tuple(names)


class _Thread:
    __slots__ = ("order", "sprite", "frames", "sleep", "counters", "done")

    def __init__(self, order: tuple[int, int], sprite: int, body: tuple[Block, ...]):
        self.order = order
        self.sprite = sprite
        self.frames: list[list] = [[body, 0]]
        self.sleep = 0
        self.counters: dict[str, int] = {}
        self.done = False


def _num(v: float | None) -> float:
    return 0.0 if v is None else v


class VM:
    """Mutable interpreter state for a single run."""

    def __init__(self, program: BlockProgram, seed: int, initial_vars: dict[str, float | None] | None = None):
        self.program = program
        self.rng = random.Random(seed)
        self.positions = [[s.x, s.y] for s in program.sprites]
        self.sprite_index = {s.name: i for i, s in enumerate(program.sprites)}
        self.variables: dict[str, float | None] = {g.name: g.value for g in program.globals}
        for name, value in (initial_vars or {}).items():
            if name not in self.variables:
                raise KeyError(f"unknown variable {name!r}")
            self.variables[name] = None if value is None else float(value)
        self.keys_down: set[str] = set()
        self.truth: dict[str, float] = {b.id: 0.0 for b in program.predicate_blocks()}
        self.step = 0
        self.halted = False
        self.trace = ExecutionTrace(seed=seed, feature_names=feature_names(program))
        self.threads: list[_Thread] = []
        self.key_scripts: dict[str, list[tuple[tuple[int, int], int, tuple[Block, ...]]]] = {}
        for si, ci, script in program.scripts():
            if script.hat.opcode == "event_whenflagclicked":
                self.threads.append(_Thread((si, ci), si, script.body))
            else:
                self.key_scripts.setdefault(script.hat.fields["KEY"], []).append(((si, ci), si, script.body))

    # -- observation ---------------------------------------------------------
    def features(self) -> tuple[float, ...]:
        out: list[float] = []
        for x, y in self.positions:
            out.append(x / STAGE_HALF_WIDTH)
            out.append(y / STAGE_HALF_HEIGHT)
        for value in self.variables.values():
            if value is None:
                out += [0.0, 0.0]
            else:
                out += [math.tanh(value / VARIABLE_SCALE), 1.0]
        out.extend(self.truth.values())
        return tuple(out)

    # -- input ---------------------------------------------------------------
    def apply(self, event: InputEvent) -> None:
        self.trace.events.append(event)
        if event.action == KEY_DOWN:
            if event.key in self.keys_down:
                return
            self.keys_down.add(event.key)
            running = {t.order for t in self.threads if not t.done}
            for order, sprite, body in self.key_scripts.get(event.key, ()):
                if order not in running:
                    self.threads.append(_Thread(order, sprite, body))
            self.threads.sort(key=lambda t: t.order)
        elif event.action == KEY_UP:
            self.keys_down.discard(event.key)

    # -- expressions ---------------------------------------------------------
    def number(self, expr: Expression, sprite: int, block_id: str) -> float | None:
        if isinstance(expr, Num):
            return expr.value
        if isinstance(expr, Var):
            return self.variables[expr.name]
        if isinstance(expr, Arith):
            a = _num(self.number(expr.left, sprite, block_id))
            b = _num(self.number(expr.right, sprite, block_id))
            if expr.op == "+":
                return a + b
            if expr.op == "-":
                return a - b
            if expr.op == "*":
                return a * b
            if b == 0:
                self.trace.faults.append((self.step, block_id, "division by zero"))
                return None
            return a / b
        if isinstance(expr, Coord):
            idx = sprite if expr.sprite is None else self.sprite_index[expr.sprite]
            return self.positions[idx][0 if expr.axis == "x" else 1]
        if isinstance(expr, Random):
            lo = _num(self.number(expr.low, sprite, block_id))
            hi = _num(self.number(expr.high, sprite, block_id))
            lo, hi = min(lo, hi), max(lo, hi)
            if float(lo).is_integer() and float(hi).is_integer():
                return float(self.rng.randint(int(lo), int(hi)))
            return self.rng.uniform(lo, hi)
        raise TypeError(f"not a numeric expression: {expr!r}")

    def condition(self, expr: Expression, sprite: int, block_id: str) -> tuple[bool, float, float]:
        """Evaluate a boolean expression to (value, distance-to-true, distance-to-false)."""
        if isinstance(expr, Rel):
            a = _num(self.number(expr.left, sprite, block_id))
            b = _num(self.number(expr.right, sprite, block_id))
            return relational_distance(expr.op, a, b)
        if isinstance(expr, Logic):
            lv, lt, lf = self.condition(expr.left, sprite, block_id)
            rv, rt, rf = self.condition(expr.right, sprite, block_id)
            if expr.op == "and":
                return lv and rv, lt + rt, min(lf, rf)
            return lv or rv, min(lt, rt), lf + rf
        if isinstance(expr, Not):
            v, t, f = self.condition(expr.operand, sprite, block_id)
            return not v, f, t
        if isinstance(expr, KeyPressed):
            return _boolean(expr.key in self.keys_down)
        if isinstance(expr, Touching):
            other = self.positions[self.sprite_index[expr.sprite]]
            me = self.positions[sprite]
            hit = other is not me and abs(me[0] - other[0]) < SPRITE_EXTENT and abs(me[1] - other[1]) < SPRITE_EXTENT
            return _boolean(hit)
        if isinstance(expr, TouchingEdge):
            x, y = self.positions[sprite]
            half = SPRITE_EXTENT / 2
            return _boolean(abs(x) >= STAGE_HALF_WIDTH - half or abs(y) >= STAGE_HALF_HEIGHT - half)
        raise TypeError(f"not a boolean expression: {expr!r}")

    def _record(self, block_id: str, value: bool, d_true: float, d_false: float) -> None:
        trace = self.trace
        trace.predicate_events.append(PredicateEvent(block_id, self.step, value, d_true, d_false))
        trace.taken.setdefault(block_id, set()).add(value)
        for outcome, d in ((True, d_true), (False, d_false)):
            key = (block_id, outcome)
            if d < trace.best.get(key, math.inf):
                trace.best[key] = d
        self.truth[block_id] = 1.0 if value else -1.0

    # -- blocks --------------------------------------------------------------
    def _move(self, sprite: int, dx: float, dy: float) -> None:
        pos = self.positions[sprite]
        self._goto(sprite, pos[0] + dx, pos[1] + dy)

    def _goto(self, sprite: int, x: float, y: float) -> None:
        pos = self.positions[sprite]
        pos[0] = min(STAGE_HALF_WIDTH, max(-STAGE_HALF_WIDTH, x))
        pos[1] = min(STAGE_HALF_HEIGHT, max(-STAGE_HALF_HEIGHT, y))

    def execute(self, thread: _Thread) -> None:
        frames = thread.frames
        while frames and frames[-1][1] >= len(frames[-1][0]):
            frames.pop()
        if not frames:
            thread.done = True
            return
        frame = frames[-1]
        block: Block = frame[0][frame[1]]
        sid = thread.sprite
        self.trace.executed.add(block.id)
        self.trace.log.append((self.step, block.id))
        op = block.opcode

        if op == "control_if" or op == "control_if_else":
            value, dt, df = self.condition(block.inputs["CONDITION"], sid, block.id)
            self._record(block.id, value, dt, df)
            frame[1] += 1
            if value:
                frames.append([block.substacks[0], 0])
            elif op == "control_if_else":
                frames.append([block.substacks[1], 0])
        elif op == "control_repeat":
            remaining = thread.counters.get(block.id)
            if remaining is None:
                remaining = math.floor(_num(self.number(block.inputs["TIMES"], sid, block.id)) + 0.5)
            value, dt, df = relational_distance(">", float(remaining), 0.0)
            self._record(block.id, value, dt, df)
            if value:
                thread.counters[block.id] = remaining - 1
                frames.append([block.substacks[0], 0])
            else:
                thread.counters.pop(block.id, None)
                frame[1] += 1
        elif op == "control_repeat_until":
            value, dt, df = self.condition(block.inputs["CONDITION"], sid, block.id)
            self._record(block.id, value, dt, df)
            if value:
                frame[1] += 1
            else:
                frames.append([block.substacks[0], 0])
        elif op == "control_forever":
            frames.append([block.substacks[0], 0])
        elif op == "control_wait_until":
            value, dt, df = self.condition(block.inputs["CONDITION"], sid, block.id)
            self._record(block.id, value, dt, df)
            if value:
                frame[1] += 1
        elif op == "control_wait":
            duration = _num(self.number(block.inputs["DURATION"], sid, block.id))
            thread.sleep = max(0, wait_steps(duration) - 1)
            frame[1] += 1
        elif op == "control_stop":
            if block.fields["STOP_OPTION"] == "all":
                self.halted = True
                self.trace.halt_reason = STOP_ALL
            thread.done = True
            frames.clear()
        else:
            frame[1] += 1
            if op == "data_setvariableto":
                self.variables[block.fields["VARIABLE"]] = self.number(block.inputs["VALUE"], sid, block.id)
            elif op == "data_changevariableby":
                name = block.fields["VARIABLE"]
                delta = _num(self.number(block.inputs["VALUE"], sid, block.id))
                self.variables[name] = _num(self.variables[name]) + delta
            elif op == "motion_movesteps":
                self._move(sid, _num(self.number(block.inputs["STEPS"], sid, block.id)), 0.0)
            elif op == "motion_gotoxy":
                x = _num(self.number(block.inputs["X"], sid, block.id))
                y = _num(self.number(block.inputs["Y"], sid, block.id))
                self._goto(sid, x, y)
            elif op == "motion_changexby":
                self._move(sid, _num(self.number(block.inputs["DX"], sid, block.id)), 0.0)
            elif op == "motion_changeyby":
                self._move(sid, 0.0, _num(self.number(block.inputs["DY"], sid, block.id)))
            elif op == "looks_say":
                self.trace.says.append((self.step, self.program.sprites[sid].name, block.fields["MESSAGE"]))
            else:  # pragma: no cover - validation rejects unknown opcodes
                raise ValueError(f"cannot execute {op}")

    def tick(self) -> None:
        for thread in list(self.threads):
            if self.halted:
                break
            if thread.done:
                continue
            if thread.sleep:
                thread.sleep -= 1
                continue
            self.execute(thread)
            if thread.frames and all(f[1] >= len(f[0]) for f in thread.frames):
                thread.done = True
        self.threads = [t for t in self.threads if not t.done]

    def idle(self) -> bool:
        return not self.threads and not self.key_scripts


def _boolean(value: bool) -> tuple[bool, float, float]:
    return (True, 0.0, 1.0) if value else (False, 1.0, 0.0)


def relational_distance(op: str, a: float, b: float) -> tuple[bool, float, float]:
    """Branch distances of ``a op b`` with k = 0 and EPSILON at strict boundaries."""
    if op == "=":
        if a == b:
            return True, 0.0, EPSILON
        return False, abs(a - b), 0.0
    if op == ">":
        if a > b:
            return True, 0.0, a - b
        return False, (b - a) + (EPSILON if a == b else 0.0), 0.0
    if op == "<":
        if a < b:
            return True, 0.0, b - a
        return False, (a - b) + (EPSILON if a == b else 0.0), 0.0
    raise ValueError(f"unknown relational operator {op!r}")


def wait_steps(seconds: float) -> int:
    # round() guards against 30 * 0.1 = 3.0000000000000004
    return max(0, math.ceil(round(seconds * STEPS_PER_SECOND, 9)))


def run(
    program: BlockProgram,
    driver: Driver | None = None,
    seed: int = 0,
    max_steps: int = 150,
    initial_vars: dict[str, float | None] | None = None,
    stop_when_idle: bool = True,
) -> ExecutionTrace:
    """Execute ``program`` for at most ``max_steps`` logical steps."""
    if max_steps < 1:
        raise ValueError("max_steps must be at least 1")
    driver = driver or IdleDriver()
    vm = VM(program, seed, initial_vars)
    driver.start(vm.trace.feature_names, program.keys())
    trace = vm.trace
    for step in range(max_steps):
        vm.step = step
        feats = vm.features()
        trace.features.append(feats)
        for event in driver.act(step, feats):
            vm.apply(event)
        vm.tick()
        trace.steps = step + 1
        if vm.halted:
            break
        if stop_when_idle and vm.idle():
            trace.halt_reason = FINISHED
            break
    else:
        trace.halt_reason = MAX_STEPS
    return trace


def replay(
    program: BlockProgram,
    events: Iterable[InputEvent],
    seed: int = 0,
    max_steps: int = 150,
    initial_vars: dict[str, float | None] | None = None,
    stop_when_idle: bool = True,
) -> ExecutionTrace:
    return run(program, ScriptedDriver(events), seed, max_steps, initial_vars, stop_when_idle)


def write_events(events: Iterable[InputEvent]) -> str:
    return "".join(ev.to_line() + "\n" for ev in events)


def read_events(text: str) -> list[InputEvent]:
    return [InputEvent.from_line(line) for line in text.splitlines() if line.strip()]
