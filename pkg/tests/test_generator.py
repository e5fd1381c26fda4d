from __future__ import annotations

import os
import random
import subprocess
import sys
from statistics import mean

import pytest

from neatbranch.fixtures import load_fixture
from neatbranch.generator import (
    BRANCH,
    STATEMENT,
    GeneratorConfig,
    Goal,
    derive_seed,
    generate_suite,
    load_suite,
    robustness_check,
    save_suite,
    select_goal,
    suite_traces,
    verify_suite,
)
from neatbranch.graph import ProgramGraph, branch_coverage, statement_coverage
from neatbranch.neat import NO_OP, BIAS, OUTPUT, Genome, NodeGene, ConnectionGene
from neatbranch.vm import KEY_DOWN, InputEvent, replay

SMALL = GeneratorConfig(population=40, max_steps=100)


def idle_genome(program) -> Genome:
    """A network that only ever chooses no-op."""
    from neatbranch.vm import feature_names
    from neatbranch.neat import INPUT
    labels = feature_names(program)
    nodes = {i: NodeGene(i, INPUT, l) for i, l in enumerate(labels)}
    bias = len(labels)
    nodes[bias] = NodeGene(bias, BIAS, "bias")
    actions = list(program.keys()) + [NO_OP]
    conns = {}
    for j, a in enumerate(actions):
        nodes[bias + 1 + j] = NodeGene(bias + 1 + j, OUTPUT, a)
        conns[j] = ConnectionGene(bias, bias + 1 + j, 1.0 if a == NO_OP else -1.0, True, j)
    return Genome(nodes, conns)


def test_goal_keys_round_trip():
    for g in (Goal("a", True), Goal("b", False), Goal("c")):
        assert Goal.parse(g.key) == g


def test_derive_seed_is_stable():
    assert derive_seed("robust", 1, "x") == derive_seed("robust", 1, "x")
    assert derive_seed("robust", 1, "x") != derive_seed("robust", 2, "x")
    assert 0 <= derive_seed("a") < 2**32


def test_select_prefers_uncovered_sibling_deeper():
    graph = ProgramGraph(load_fixture("nested_xy"))
    covered = {Goal("if_x", True), Goal("if_y", True)}
    open_ = [Goal("if_x", False), Goal("if_y", False)]
    assert select_goal(graph, open_, covered, {"if_x", "if_y"}) == Goal("if_y", False)


def test_select_fresh_program_takes_largest_shallow_region():
    graph = ProgramGraph(load_fixture("nested_xy"))
    goals = [Goal(t.block_id, t.outcome) for t in graph.targets]
    assert select_goal(graph, goals, set(), set()) == Goal("if_x", True)


def test_select_single_remaining_goal():
    graph = ProgramGraph(load_fixture("nested_xy"))
    assert select_goal(graph, [Goal("if_y", False)], set(), set()) == Goal("if_y", False)
    with pytest.raises(ValueError):
        select_goal(graph, [], set(), set())


def test_select_statement_goals_shallowest_first():
    graph = ProgramGraph(load_fixture("triple_nested"))
    goals = [Goal("say_deep"), Goal("if_c"), Goal("if_b")]
    assert select_goal(graph, goals, set(), set()) == Goal("if_b")


def test_robustness_deterministic_program():
    p = load_fixture("fig1")
    count, logs = robustness_check(p, idle_genome(p), [Goal("if_space", False)], [1, 2, 3, 4, 5], 20)
    assert count == 5 and set(logs) == {1, 2, 3, 4, 5}


def test_robustness_on_coin_flip_is_about_half():
    p = load_fixture("coin_flip")
    g = idle_genome(p)
    rng = random.Random(7)
    counts = []
    for _ in range(1000):
        seeds = [rng.randrange(2**32) for _ in range(5)]
        counts.append(robustness_check(p, g, [Goal("if_heads", True)], seeds, 10)[0])
    # binomial(5, 1/2): mean 2.5, standard error of the mean about 0.035
    assert mean(counts) == pytest.approx(2.5, abs=0.15)


def test_zero_robustness_runs_pass_through():
    p = load_fixture("coin_flip")
    suite = generate_suite(p, BRANCH, GeneratorConfig(population=20, robustness_runs=0), seed=1)
    assert suite.uncovered == set()
    assert all(e.robustness == 0 and e.seeds == [] for e in suite.entries)


def test_pressing_space_never_covers_false_branch():
    p = load_fixture("fig1")
    always = [InputEvent(0, KEY_DOWN, "space")]
    assert all(("if_space", False) not in replay(p, always, seed=s).taken_pairs() for s in range(5))


def test_fig1_branch_suite_covers_both_outcomes():
    p = load_fixture("fig1")
    suite = generate_suite(p, BRANCH, SMALL, seed=0)
    assert suite.covered == {"if_space:T", "if_space:F"}
    assert branch_coverage(p, suite_traces(p, suite)) == 100.0


def test_zero_target_program_gives_empty_suite():
    p = load_fixture("forever_move")
    suite = generate_suite(p, BRANCH, SMALL, seed=0)
    assert suite.entries == [] and suite.goals == []
    assert branch_coverage(p, suite_traces(p, suite)) == 100.0


def test_trivial_statements_covered_in_first_generation():
    p = load_fixture("forever_move")
    suite = generate_suite(p, STATEMENT, SMALL, seed=0)
    assert suite.covered == {"loop", "drive"}
    assert all(e.generation == 0 for e in suite.entries)


def test_unreachable_target_exhausts_budget():
    p = load_fixture("dead_code")
    suite = generate_suite(p, BRANCH, GeneratorConfig(population=20, max_steps=20), seed=0)
    assert suite.uncovered == {"if_never:T"}
    stats = suite.stats["if_never:T"]
    assert stats.status == "exhausted"
    assert stats.best_f > 0
    assert stats.attempts == 2  # parked once, retried once


def test_nested_game_reaches_full_branch_coverage():
    p = load_fixture("nested_xy_game")
    suite = generate_suite(p, BRANCH, GeneratorConfig(), seed=0)
    traces = suite_traces(p, suite)
    assert branch_coverage(p, traces) == 100.0
    assert max(s.generations for s in suite.stats.values()) <= 50


def test_suite_bookkeeping_is_consistent():
    p = load_fixture("catcher")
    suite = generate_suite(p, BRANCH, SMALL, seed=2)
    seen: set[str] = set()
    for e in suite.entries:
        assert not (set(e.goals) & seen)
        seen |= set(e.goals)
    assert seen == suite.covered
    assert suite.covered | suite.uncovered == set(suite.goals)
    assert not (suite.covered & suite.uncovered)


def test_suite_persists_and_replays(tmp_path):
    p = load_fixture("hidden_else")
    suite = generate_suite(p, BRANCH, SMALL, seed=1)
    save_suite(suite, tmp_path / "s")
    back = load_suite(tmp_path / "s")
    assert back.manifest() == suite.manifest()
    assert (tmp_path / "s" / "generations.csv").read_text().startswith("goal,")
    counts = verify_suite(p, back)
    assert all(counts[i] == len(e.seeds) for i, e in enumerate(back.entries))
    # stored event logs reproduce the networks' runs exactly
    for e in back.entries:
        for s in e.seeds:
            trace = replay(p, e.events[s], seed=s, max_steps=back.config.max_steps)
            assert all(Goal.parse(k).covered_by(trace) for k in e.goals)


@pytest.mark.parametrize("name", ["nested_xy_game", "fig1", "catcher", "hidden_else", "countdown"])
def test_full_branch_coverage_implies_statement_coverage_of_controlled_blocks(name):
    p = load_fixture(name)
    suite = generate_suite(p, BRANCH, SMALL, seed=0)
    traces = suite_traces(p, suite)
    if branch_coverage(p, traces) == 100.0:
        graph = ProgramGraph(p)
        assert statement_coverage(p, traces, among=graph.controlled_blocks()) == 100.0


def test_generation_is_deterministic_across_hash_seeds(tmp_path):
    code = ("import sys; from neatbranch.fixtures import load_fixture; "
            "from neatbranch.generator import *; "
            "s = generate_suite(load_fixture('catcher'), 'branch', GeneratorConfig(population=30, max_steps=80), 4); "
            "save_suite(s, sys.argv[1])")
    texts = []
    for i, hash_seed in enumerate(("0", "12345")):
        out = tmp_path / f"run{i}"
        env = dict(os.environ, PYTHONHASHSEED=hash_seed)
        subprocess.run([sys.executable, "-c", code, str(out)], check=True, env=env)
        texts.append((out / "manifest.json").read_bytes())
    assert texts[0] == texts[1]
