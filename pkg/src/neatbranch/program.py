"""Block program model: expressions, blocks, scripts, sprites and the ``bb-1`` file format.

Programs are parsed from a JSON document and validated eagerly; a
:class:`BlockProgram` that exists is always valid.  Everything here is
immutable so programs can be shared freely between evaluators.
"""

from __future__ import annotations

import json
from dataclasses import dataclass, field
from typing import Any, Iterator, Union

FORMAT_VERSION = "bb-1"

ARITH_OPS = ("+", "-", "*", "/")
REL_OPS = ("<", ">", "=")
LOGIC_OPS = ("and", "or")
STOP_OPTIONS = ("all", "this script")


class ProgramError(Exception):
    """Base class for program loading failures."""


class ProgramSyntaxError(ProgramError):
    """The document is not a well-formed ``bb-1`` program."""


class ProgramSemanticError(ProgramError):
    """The document parses but violates a program invariant."""

    def __init__(self, block_id: str | None, reason: str):
        self.block_id = block_id
        self.reason = reason
        where = f"block {block_id!r}: " if block_id is not None else ""
        super().__init__(where + reason)


# ---------------------------------------------------------------------------
# Expressions


@dataclass(frozen=True)
class Num:
    value: float


@dataclass(frozen=True)
class Var:
    name: str


@dataclass(frozen=True)
class Arith:
    op: str
    left: "Expression"
    right: "Expression"


@dataclass(frozen=True)
class Rel:
    op: str
    left: "Expression"
    right: "Expression"


@dataclass(frozen=True)
class Logic:
    op: str
    left: "Expression"
    right: "Expression"


@dataclass(frozen=True)
class Not:
    operand: "Expression"


@dataclass(frozen=True)
class KeyPressed:
    key: str


@dataclass(frozen=True)
class Touching:
    sprite: str


@dataclass(frozen=True)
class TouchingEdge:
    pass


@dataclass(frozen=True)
class Coord:
    """Reads a sprite coordinate; ``sprite=None`` means the executing sprite."""

    axis: str
    sprite: str | None = None


@dataclass(frozen=True)
class Random:
    low: "Expression"
    high: "Expression"


Expression = Union[Num, Var, Arith, Rel, Logic, Not, KeyPressed, Touching, TouchingEdge, Coord, Random]

BOOLEAN_KINDS = (Rel, Logic, Not, KeyPressed, Touching, TouchingEdge)


def is_boolean(expr: Expression) -> bool:
    return isinstance(expr, BOOLEAN_KINDS)


def children(expr: Expression) -> tuple[Expression, ...]:
    if isinstance(expr, (Arith, Rel, Logic)):
        return (expr.left, expr.right)
    if isinstance(expr, Not):
        return (expr.operand,)
    if isinstance(expr, Random):
        return (expr.low, expr.high)
    return ()


def walk_expression(expr: Expression) -> Iterator[Expression]:
    yield expr
    for child in children(expr):
        yield from walk_expression(child)


# ---------------------------------------------------------------------------
# Blocks


@dataclass(frozen=True)
class OpcodeSpec:
    hat: bool = False
    fields: tuple[str, ...] = ()
    numeric_inputs: tuple[str, ...] = ()
    condition: bool = False
    substacks: int = 0
    cap: bool = False


OPCODES: dict[str, OpcodeSpec] = {
    "event_whenflagclicked": OpcodeSpec(hat=True),
    "event_whenkeypressed": OpcodeSpec(hat=True, fields=("KEY",)),
    "control_if": OpcodeSpec(condition=True, substacks=1),
    "control_if_else": OpcodeSpec(condition=True, substacks=2),
    "control_repeat": OpcodeSpec(numeric_inputs=("TIMES",), substacks=1),
    "control_repeat_until": OpcodeSpec(condition=True, substacks=1),
    "control_forever": OpcodeSpec(substacks=1, cap=True),
    "control_wait_until": OpcodeSpec(condition=True),
    "control_wait": OpcodeSpec(numeric_inputs=("DURATION",)),
    "control_stop": OpcodeSpec(fields=("STOP_OPTION",), cap=True),
    "data_setvariableto": OpcodeSpec(fields=("VARIABLE",), numeric_inputs=("VALUE",)),
    "data_changevariableby": OpcodeSpec(fields=("VARIABLE",), numeric_inputs=("VALUE",)),
    "motion_movesteps": OpcodeSpec(numeric_inputs=("STEPS",)),
    "motion_gotoxy": OpcodeSpec(numeric_inputs=("X", "Y")),
    "motion_changexby": OpcodeSpec(numeric_inputs=("DX",)),
    "motion_changeyby": OpcodeSpec(numeric_inputs=("DY",)),
    "looks_say": OpcodeSpec(fields=("MESSAGE",)),
}

CONDITIONAL_OPCODES = frozenset(
    {"control_if", "control_if_else", "control_repeat", "control_repeat_until", "control_wait_until"}
)
LOOP_OPCODES = frozenset({"control_repeat", "control_repeat_until", "control_forever"})


@dataclass(frozen=True)
class Block:
    id: str
    opcode: str
    fields: dict[str, str] = field(default_factory=dict)
    inputs: dict[str, Expression] = field(default_factory=dict)
    substacks: tuple[tuple["Block", ...], ...] = ()

    @property
    def spec(self) -> OpcodeSpec:
        return OPCODES[self.opcode]

    @property
    def condition(self) -> Expression | None:
        return self.inputs.get("CONDITION")

    def walk(self) -> Iterator["Block"]:
        yield self
        for stack in self.substacks:
            for child in stack:
                yield from child.walk()


@dataclass(frozen=True)
class Script:
    hat: Block
    body: tuple[Block, ...] = ()

    def walk(self) -> Iterator[Block]:
        """Executable blocks in pre-order (the hat is not included)."""
        for block in self.body:
            yield from block.walk()


@dataclass(frozen=True)
class Sprite:
    name: str
    x: float = 0.0
    y: float = 0.0
    costume: str = ""
    scripts: tuple[Script, ...] = ()


@dataclass(frozen=True)
class VariableDecl:
    name: str
    value: float | None = None


@dataclass(frozen=True)
class BlockLocation:
    sprite: int
    script: int
    parent: str | None  # enclosing block id, None at script top level
    substack: int  # index into the parent's substacks (0 at top level)
    index: int  # position within that sequence


@dataclass(frozen=True, eq=False)
class _Index:
    blocks: dict[str, Block]
    locations: dict[str, BlockLocation]


@dataclass(frozen=True)
class BlockProgram:
    name: str
    sprites: tuple[Sprite, ...] = ()
    globals: tuple[VariableDecl, ...] = ()
    version: str = FORMAT_VERSION
    _index: _Index | None = field(default=None, compare=False, repr=False)

    def __post_init__(self) -> None:
        if self._index is None:
            object.__setattr__(self, "_index", _build_index(self))

    # lookups -------------------------------------------------------------
    def block(self, block_id: str) -> Block:
        return self._index.blocks[block_id]

    def has_block(self, block_id: str) -> bool:
        return block_id in self._index.blocks

    def location(self, block_id: str) -> BlockLocation:
        return self._index.locations[block_id]

    def scripts(self) -> Iterator[tuple[int, int, Script]]:
        for si, sprite in enumerate(self.sprites):
            for ci, script in enumerate(sprite.scripts):
                yield si, ci, script

    def statements(self) -> list[Block]:
        """Executable (non-hat) blocks in program order."""
        return [b for _, _, script in self.scripts() for b in script.walk()]

    @property
    def variable_names(self) -> tuple[str, ...]:
        return tuple(v.name for v in self.globals)

    def keys(self) -> tuple[str, ...]:
        """Keys the program listens to, sorted."""
        found: set[str] = set()
        for _, _, script in self.scripts():
            if script.hat.opcode == "event_whenkeypressed":
                found.add(script.hat.fields["KEY"])
            for block in script.walk():
                for expr in block.inputs.values():
                    for node in walk_expression(expr):
                        if isinstance(node, KeyPressed):
                            found.add(node.key)
        return tuple(sorted(found))

    def predicate_blocks(self) -> list[Block]:
        return [b for b in self.statements() if b.condition is not None]


def _build_index(program: BlockProgram) -> _Index:
    blocks: dict[str, Block] = {}
    locations: dict[str, BlockLocation] = {}

    def visit(seq, si, ci, parent, sub):
        for i, block in enumerate(seq):
            blocks.setdefault(block.id, block)
            locations.setdefault(block.id, BlockLocation(si, ci, parent, sub, i))
            for k, stack in enumerate(block.substacks):
                visit(stack, si, ci, block.id, k)

    for si, sprite in enumerate(program.sprites):
        for ci, script in enumerate(sprite.scripts):
            blocks.setdefault(script.hat.id, script.hat)
            locations.setdefault(script.hat.id, BlockLocation(si, ci, None, 0, -1))
            visit(script.body, si, ci, None, 0)
    return _Index(blocks, locations)


def count_statements(program: BlockProgram) -> int:
    """Number of executable blocks; hats are not statements."""
    return sum(1 for _, _, script in program.scripts() for _ in script.walk())


# ---------------------------------------------------------------------------
# Decoding


def _expect(cond: bool, msg: str) -> None:
    if not cond:
        raise ProgramSyntaxError(msg)


def _number(value: Any, what: str) -> float:
    _expect(isinstance(value, (int, float)) and not isinstance(value, bool), f"{what} must be a number")
    return float(value)


def _decode_expr(rec: Any) -> Expression:
    _expect(isinstance(rec, dict) and "kind" in rec, f"expression must be a tagged record, got {rec!r}")
    kind = rec["kind"]
    if kind == "num":
        return Num(_number(rec.get("value"), "num.value"))
    if kind == "var":
        _expect(isinstance(rec.get("name"), str), "var.name must be a string")
        return Var(rec["name"])
    if kind in ("arith", "rel", "logic"):
        ops = {"arith": ARITH_OPS, "rel": REL_OPS, "logic": LOGIC_OPS}[kind]
        _expect(rec.get("op") in ops, f"{kind}.op must be one of {ops}")
        cls = {"arith": Arith, "rel": Rel, "logic": Logic}[kind]
        return cls(rec["op"], _decode_expr(rec.get("left")), _decode_expr(rec.get("right")))
    if kind == "not":
        return Not(_decode_expr(rec.get("operand")))
    if kind == "key_pressed":
        _expect(isinstance(rec.get("key"), str), "key_pressed.key must be a string")
        return KeyPressed(rec["key"])
    if kind == "touching":
        _expect(isinstance(rec.get("sprite"), str), "touching.sprite must be a string")
        return Touching(rec["sprite"])
    if kind == "touching_edge":
        return TouchingEdge()
    if kind == "coord":
        _expect(rec.get("axis") in ("x", "y"), "coord.axis must be 'x' or 'y'")
        sprite = rec.get("sprite")
        _expect(sprite is None or isinstance(sprite, str), "coord.sprite must be a string")
        return Coord(rec["axis"], sprite)
    if kind == "random":
        return Random(_decode_expr(rec.get("low")), _decode_expr(rec.get("high")))
    raise ProgramSyntaxError(f"unknown expression kind {kind!r}")


def _decode_block(rec: Any) -> Block:
    _expect(isinstance(rec, dict), f"block record must be an object, got {rec!r}")
    bid = rec.get("id")
    _expect(isinstance(bid, str) and bid != "", "block id must be a non-empty string")
    opcode = rec.get("opcode")
    _expect(isinstance(opcode, str), f"block {bid!r}: opcode must be a string")
    fields = rec.get("fields", {})
    _expect(isinstance(fields, dict) and all(isinstance(v, str) for v in fields.values()),
            f"block {bid!r}: fields must map names to strings")
    inputs = rec.get("inputs", {})
    _expect(isinstance(inputs, dict), f"block {bid!r}: inputs must be an object")
    subs = rec.get("substacks", [])
    _expect(isinstance(subs, list) and all(isinstance(s, list) for s in subs),
            f"block {bid!r}: substacks must be a list of block lists")
    return Block(
        id=bid,
        opcode=opcode,
        fields=dict(fields),
        inputs={k: _decode_expr(v) for k, v in inputs.items()},
        substacks=tuple(tuple(_decode_block(b) for b in s) for s in subs),
    )


def program_from_dict(doc: Any) -> BlockProgram:
    """Decode and validate a program document that was already JSON-decoded."""
    _expect(isinstance(doc, dict), "program document must be an object")
    meta = doc.get("meta", {})
    _expect(isinstance(meta, dict), "meta must be an object")
    version = meta.get("format", FORMAT_VERSION)
    _expect(version == FORMAT_VERSION, f"unsupported format version {version!r}")
    name = meta.get("name", "")
    _expect(isinstance(name, str), "meta.name must be a string")

    globals_ = doc.get("globals", [])
    _expect(isinstance(globals_, list), "globals must be a list")
    decls = []
    for g in globals_:
        _expect(isinstance(g, dict) and isinstance(g.get("name"), str), "global needs a string name")
        value = g.get("value")
        decls.append(VariableDecl(g["name"], None if value is None else _number(value, "global value")))

    sprites_ = doc.get("sprites", [])
    _expect(isinstance(sprites_, list), "sprites must be a list")
    sprites = []
    for s in sprites_:
        _expect(isinstance(s, dict) and isinstance(s.get("name"), str), "sprite needs a string name")
        scripts_ = s.get("scripts", [])
        _expect(isinstance(scripts_, list), f"sprite {s['name']!r}: scripts must be a list")
        scripts = []
        for raw in scripts_:
            _expect(isinstance(raw, list) and raw, f"sprite {s['name']!r}: a script is a non-empty block list")
            blocks = [_decode_block(b) for b in raw]
            scripts.append(Script(blocks[0], tuple(blocks[1:])))
        costume = s.get("costume", "")
        _expect(isinstance(costume, str), "costume must be a string")
        sprites.append(Sprite(s["name"], _number(s.get("x", 0), "x"), _number(s.get("y", 0), "y"),
                              costume, tuple(scripts)))

    program = BlockProgram(name=name, sprites=tuple(sprites), globals=tuple(decls), version=version)
    validate(program)
    return program


def parse_program(source: bytes | str) -> BlockProgram:
    try:
        doc = json.loads(source)
    except (json.JSONDecodeError, UnicodeDecodeError) as exc:
        raise ProgramSyntaxError(f"malformed program file: {exc}") from exc
    return program_from_dict(doc)


def load_program(path) -> BlockProgram:
    with open(path, "rb") as fh:
        return parse_program(fh.read())


# ---------------------------------------------------------------------------
# Validation


def _check_expr(expr: Expression, want_bool: bool, block: Block, variables: set[str], sprites: set[str]) -> None:
    if is_boolean(expr) != want_bool:
        kind = "boolean" if want_bool else "numeric"
        raise ProgramSemanticError(block.id, f"expected a {kind} expression, got {type(expr).__name__}")
    if isinstance(expr, Var) and expr.name not in variables:
        raise ProgramSemanticError(block.id, f"unresolved variable {expr.name!r}")
    if isinstance(expr, (Touching,)) and expr.sprite not in sprites:
        raise ProgramSemanticError(block.id, f"unknown sprite {expr.sprite!r}")
    if isinstance(expr, Coord) and expr.sprite is not None and expr.sprite not in sprites:
        raise ProgramSemanticError(block.id, f"unknown sprite {expr.sprite!r}")
    if isinstance(expr, (Arith, Rel, Random)):
        for child in children(expr):
            _check_expr(child, False, block, variables, sprites)
    elif isinstance(expr, (Logic, Not)):
        for child in children(expr):
            _check_expr(child, True, block, variables, sprites)


def _check_block(block: Block, variables: set[str], sprites: set[str]) -> None:
    spec = OPCODES.get(block.opcode)
    if spec is None:
        raise ProgramSemanticError(block.id, f"unsupported opcode {block.opcode!r}")
    if spec.hat:
        raise ProgramSemanticError(block.id, "event block inside a script body")
    if len(block.substacks) != spec.substacks:
        raise ProgramSemanticError(
            block.id, f"{block.opcode} needs {spec.substacks} substack(s), found {len(block.substacks)}")
    if set(block.fields) != set(spec.fields):
        raise ProgramSemanticError(block.id, f"{block.opcode} fields must be {list(spec.fields)}")
    expected_inputs = set(spec.numeric_inputs) | ({"CONDITION"} if spec.condition else set())
    if set(block.inputs) != expected_inputs:
        raise ProgramSemanticError(block.id, f"{block.opcode} inputs must be {sorted(expected_inputs)}")
    for name in spec.numeric_inputs:
        _check_expr(block.inputs[name], False, block, variables, sprites)
    if spec.condition:
        _check_expr(block.inputs["CONDITION"], True, block, variables, sprites)
    if "VARIABLE" in block.fields and block.fields["VARIABLE"] not in variables:
        raise ProgramSemanticError(block.id, f"unresolved variable {block.fields['VARIABLE']!r}")
    if block.opcode == "control_stop" and block.fields["STOP_OPTION"] not in STOP_OPTIONS:
        raise ProgramSemanticError(block.id, f"stop option must be one of {STOP_OPTIONS}")


def _check_sequence(seq: tuple[Block, ...], variables: set[str], sprites: set[str]) -> None:
    for i, block in enumerate(seq):
        _check_block(block, variables, sprites)
        if block.spec.cap and i != len(seq) - 1:
            raise ProgramSemanticError(block.id, f"{block.opcode} must be the last block of its stack")
        for stack in block.substacks:
            _check_sequence(stack, variables, sprites)


def validate(program: BlockProgram) -> None:
    """Raise :class:`ProgramSemanticError` on the first violated invariant."""
    variables: set[str] = set()
    for decl in program.globals:
        if decl.name in variables:
            raise ProgramSemanticError(None, f"duplicate variable {decl.name!r}")
        variables.add(decl.name)
    sprites: set[str] = set()
    for sprite in program.sprites:
        if sprite.name in sprites:
            raise ProgramSemanticError(None, f"duplicate sprite name {sprite.name!r}")
        sprites.add(sprite.name)

    seen: set[str] = set()
    for _, _, script in program.scripts():
        for block in (script.hat, *(b for top in script.body for b in top.walk())):
            if block.id in seen:
                raise ProgramSemanticError(block.id, "duplicate block id")
            seen.add(block.id)

    for _, _, script in program.scripts():
        hat = script.hat
        spec = OPCODES.get(hat.opcode)
        if spec is None or not spec.hat:
            raise ProgramSemanticError(hat.id, "script must begin with an event block")
        if set(hat.fields) != set(spec.fields) or hat.inputs or hat.substacks:
            raise ProgramSemanticError(hat.id, f"malformed {hat.opcode}")
        _check_sequence(script.body, variables, sprites)


# ---------------------------------------------------------------------------
# Encoding


def expression_to_dict(expr: Expression) -> dict:
    if isinstance(expr, Num):
        return {"kind": "num", "value": _plain(expr.value)}
    if isinstance(expr, Var):
        return {"kind": "var", "name": expr.name}
    if isinstance(expr, (Arith, Rel, Logic)):
        kind = {Arith: "arith", Rel: "rel", Logic: "logic"}[type(expr)]
        return {"kind": kind, "op": expr.op,
                "left": expression_to_dict(expr.left), "right": expression_to_dict(expr.right)}
    if isinstance(expr, Not):
        return {"kind": "not", "operand": expression_to_dict(expr.operand)}
    if isinstance(expr, KeyPressed):
        return {"kind": "key_pressed", "key": expr.key}
    if isinstance(expr, Touching):
        return {"kind": "touching", "sprite": expr.sprite}
    if isinstance(expr, TouchingEdge):
        return {"kind": "touching_edge"}
    if isinstance(expr, Coord):
        rec = {"kind": "coord", "axis": expr.axis}
        if expr.sprite is not None:
            rec["sprite"] = expr.sprite
        return rec
    if isinstance(expr, Random):
        return {"kind": "random", "low": expression_to_dict(expr.low), "high": expression_to_dict(expr.high)}
    raise TypeError(f"not an expression: {expr!r}")


def _plain(x: float) -> float | int:
    return int(x) if float(x).is_integer() and abs(x) < 2**53 else x


def block_to_dict(block: Block) -> dict:
    rec: dict[str, Any] = {"id": block.id, "opcode": block.opcode}
    if block.fields:
        rec["fields"] = dict(block.fields)
    if block.inputs:
        rec["inputs"] = {k: expression_to_dict(v) for k, v in block.inputs.items()}
    if block.substacks:
        rec["substacks"] = [[block_to_dict(b) for b in s] for s in block.substacks]
    return rec


def program_to_dict(program: BlockProgram) -> dict:
    return {
        "meta": {"name": program.name, "format": program.version},
        "globals": [{"name": g.name, "value": None if g.value is None else _plain(g.value)}
                    for g in program.globals],
        "sprites": [
            {
                "name": s.name, "x": _plain(s.x), "y": _plain(s.y), "costume": s.costume,
                "scripts": [[block_to_dict(sc.hat)] + [block_to_dict(b) for b in sc.body] for sc in s.scripts],
            }
            for s in program.sprites
        ],
    }


def serialize_program(program: BlockProgram) -> str:
    return json.dumps(program_to_dict(program), indent=2) + "\n"
