from __future__ import annotations

import pytest
from hypothesis import given, settings

from neatbranch.fixtures import load_fixture
from neatbranch.graph import (
    BRANCHING_DOUBLE,
    BRANCHING_SINGLE,
    ENTRY,
    EXECUTION_HALTING,
    EXIT,
    NO_FALSE_BRANCH,
    ProgramGraph,
    branch_coverage,
    build_cdg,
    build_cfg,
    control_filter,
    coverage_percent,
    statement_coverage,
)
from neatbranch.program import program_from_dict
from neatbranch.vm import run

from strategies import program_docs


def _edges(cfg):
    return {(e.src, e.dst, e.outcome) for e in cfg.edges}


def test_nested_xy_cfg_matches_figure():
    cfg = build_cfg(next(load_fixture("nested_xy").scripts())[2])
    assert _edges(cfg) == {
        (ENTRY, "if_x", None),
        ("if_x", "if_y", True),
        ("if_x", "say_a", False),
        ("if_y", "say_c", True),
        ("if_y", "say_b", False),
        ("say_a", EXIT, None),
        ("say_b", EXIT, None),
        ("say_c", EXIT, None),
    }


def test_nested_xy_cdg():
    graph = ProgramGraph(load_fixture("nested_xy"))
    assert graph.cdg.controllers("if_y") == [("if_x", True)]
    assert graph.cdg.controllers("say_a") == [("if_x", False)]
    assert graph.cdg.controllers("say_c") == [("if_y", True)]
    assert graph.cdg.controllers("say_b") == [("if_y", False)]
    assert graph.cdg.controllers("if_x") == []
    assert graph.requirement_chains("say_b") == [[("if_y", False), ("if_x", True)]]
    assert graph.depth("if_y") == 1
    assert graph.region("if_x", True) == {"if_y", "say_b", "say_c"}


def test_nested_xy_targets():
    result = control_filter(load_fixture("nested_xy"))
    assert [t.key for t in result.targets] == ["if_x:T", "if_x:F", "if_y:T", "if_y:F"]
    assert {t.classification for t in result.targets} == {BRANCHING_DOUBLE}
    assert result.advisories == ()


def test_classification_of_control_blocks():
    result = control_filter(load_fixture("countdown"))
    by_key = {t.key: t.classification for t in result.targets}
    assert by_key["warmup:T"] == by_key["until_go:F"] == BRANCHING_SINGLE
    # wait until only ever advances on a true condition
    assert "wait_space:T" in by_key and "wait_space:F" not in by_key
    assert {(a.block_id, a.classification) for a in result.advisories} == {
        ("pause", EXECUTION_HALTING), ("halt", EXECUTION_HALTING)}


def test_forever_is_advisory_only():
    result = control_filter(load_fixture("forever_move"))
    assert len(result) == 0
    assert [a.classification for a in result.advisories] == [NO_FALSE_BRANCH]


def test_zero_targets_is_full_branch_coverage():
    p = load_fixture("forever_move")
    assert branch_coverage(p, [run(p, max_steps=5)]) == 100.0
    assert coverage_percent(0, 0) == 100.0


def test_forever_loop_does_not_leak_dependences():
    graph = ProgramGraph(load_fixture("catcher"))
    assert graph.cdg.controllers("fruit_fall") == []
    assert graph.cdg.controllers("respawn_missed") == [("if_missed", True)]


def test_coverage_of_single_trace():
    p = load_fixture("nested_xy")
    trace = run(p, initial_vars={"X": -10, "Y": -1})
    assert branch_coverage(p, [trace]) == 25.0
    assert statement_coverage(p, [trace]) == 40.0
    both = [trace, run(p, initial_vars={"X": 1, "Y": 0}), run(p, initial_vars={"X": 1, "Y": 2})]
    assert branch_coverage(p, both) == 100.0
    assert statement_coverage(p, both) == 100.0


def _syntactic_cdg(doc) -> set[tuple[str, str, bool]]:
    """Expected dependences read straight off the nesting structure."""
    body_outcome = {"control_if": (True,), "control_if_else": (True, False),
                    "control_repeat": (True,), "control_repeat_until": (False,)}
    out = set()

    def walk(seq, parent):
        for blk in seq:
            if parent is not None:
                out.add((parent[0], blk["id"], parent[1]))
            for k, sub in enumerate(blk.get("substacks", [])):
                walk(sub, (blk["id"], body_outcome[blk["opcode"]][k]))

    for script in doc["sprites"][0]["scripts"]:
        walk(script[1:], None)
    return out


@settings(max_examples=150, deadline=None)
@given(program_docs())
def test_cdg_matches_block_nesting(doc):
    graph = ProgramGraph(program_from_dict(doc))
    got = {(e.controller, e.dependent, e.outcome) for e in graph.cdg.edges}
    assert got == _syntactic_cdg(doc)


def _paths(cfg, start):
    succ = {}
    for e in cfg.edges:
        succ.setdefault(e.src, []).append(e.dst)
    stack = [(start, (start,))]
    while stack:
        node, path = stack.pop()
        if node == EXIT:
            yield path
            continue
        for nxt in succ.get(node, []):
            stack.append((nxt, path + (nxt,)))


def _path_cdg(cfg) -> set[tuple[str, str, bool]]:
    """Textbook definition on a DAG: y depends on edge p->s iff y lies on every
    s-to-exit path but not on every p-to-exit path."""
    found = set()
    blocks = [n for n in cfg.nodes if n not in (ENTRY, EXIT)]
    for e in cfg.edges:
        if e.outcome is None:
            continue
        from_s = list(_paths(cfg, e.dst))
        from_p = list(_paths(cfg, e.src))
        for y in blocks:
            if y == e.src:
                continue
            if all(y in p for p in from_s) and not all(y in p for p in from_p):
                found.add((e.src, y, e.outcome))
    return found


def _loop_free(doc) -> bool:
    text = repr(doc)
    return "control_repeat" not in text


@settings(max_examples=150, deadline=None)
@given(program_docs())
def test_cdg_agrees_with_path_enumeration(doc):
    if not _loop_free(doc):
        return
    for _, _, script in program_from_dict(doc).scripts():
        cfg = build_cfg(script)
        got = {(e.controller, e.dependent, e.outcome) for e in build_cdg(cfg).edges}
        assert got == _path_cdg(cfg)


@settings(max_examples=100, deadline=None)
@given(program_docs())
def test_target_count_matches_conditionals(doc):
    p = program_from_dict(doc)
    expected = 0
    for b in p.statements():
        if b.opcode in ("control_if", "control_if_else", "control_repeat", "control_repeat_until"):
            expected += 2
    assert len(control_filter(p)) == expected


def test_dump_formats():
    graph = ProgramGraph(load_fixture("fig1"))
    assert "if_space -[true]-> set_var" in graph.cdg.dump()
    cfg_text = next(iter(graph.cfgs.values())).dump()
    assert "ENTRY -> if_space [seq]" in cfg_text


@pytest.mark.parametrize("name", ["nested_xy", "catcher", "countdown", "triple_nested", "hidden_else"])
def test_requirement_chains_are_acyclic(name):
    graph = ProgramGraph(load_fixture(name))
    for b in graph.program.statements():
        for chain in graph.requirement_chains(b.id):
            ids = [c[0] for c in chain]
            assert len(ids) == len(set(ids))
            assert b.id not in ids
