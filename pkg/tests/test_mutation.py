from __future__ import annotations

import math
import random

import numpy as np
import pytest

from neatbranch.fixtures import fixture_names, load_fixture
from neatbranch.generator import BRANCH, STATEMENT, GeneratorConfig, generate_suite
from neatbranch.mutation import (
    INVALID,
    KILLED,
    OPERATORS,
    REPORT_COLUMNS,
    SURVIVED,
    InsufficientReferenceError,
    Oracle,
    SurpriseModel,
    judge_seeds,
    mutate_all,
    mutation_analysis,
    mutation_score,
    report_csv,
)
from neatbranch.program import program_from_dict, program_to_dict


def leaves(node, path=()):
    if isinstance(node, dict):
        for k in sorted(node):
            yield from leaves(node[k], path + (k,))
    elif isinstance(node, list):
        for i, v in enumerate(node):
            yield from leaves(v, path + (i,))
    else:
        yield path, node


def test_ror_sites_on_nested_xy():
    mutants = mutate_all(load_fixture("nested_xy"), "ROR")
    assert len(mutants) == 4
    assert sorted((m.block_id, m.original, m.replacement) for m in mutants) == [
        ("if_x", ">", "<"), ("if_x", ">", "="), ("if_y", "=", "<"), ("if_y", "=", ">")]


def test_inapplicable_operators_give_nothing():
    fig1 = load_fixture("fig1")
    assert mutate_all(fig1, "VRM") == []
    assert mutate_all(fig1, "AOR") == []
    assert mutate_all(fig1, "LOR") == []


def test_unknown_operator():
    with pytest.raises(ValueError):
        mutate_all(load_fixture("fig1"), "XYZ")


@pytest.mark.parametrize("name", fixture_names())
@pytest.mark.parametrize("op", ["KRM", "AOR", "LOR", "ROR", "VRM"])
def test_replacement_operators_change_one_leaf(name, op):
    original = program_to_dict(load_fixture(name))
    base = dict(leaves(original))
    for m in mutate_all(load_fixture(name), op):
        assert m.program is not None
        changed = dict(leaves(program_to_dict(m.program)))
        assert changed.keys() == base.keys()
        assert sum(1 for k in base if base[k] != changed[k]) == 1


@pytest.mark.parametrize("name", fixture_names())
def test_negation_wraps_exactly_one_boolean(name):
    program = load_fixture(name)
    base = sorted(leaves(program_to_dict(program)))
    for m in mutate_all(program, "NCM"):
        text = repr(program_to_dict(m.program))
        assert text.count("'not'") == repr(program_to_dict(program)).count("'not'") + 1
        # removing the wrapper gives back the original leaves
        assert len(list(leaves(program_to_dict(m.program)))) == len(base) + 1


@pytest.mark.parametrize("name", fixture_names())
def test_deletions_remove_one_unit(name):
    program = load_fixture(name)
    n_blocks = len(program.statements())
    n_scripts = sum(1 for _ in program.scripts())
    for m in mutate_all(program, "SBD"):
        if m.status == INVALID:
            continue
        removed = program.block(m.block_id)
        assert len(m.program.statements()) == n_blocks - 1 - len(list(removed.walk())) + 1
    for m in mutate_all(program, "SDM"):
        assert sum(1 for _ in m.program.scripts()) == n_scripts - 1


def test_mutants_reparse():
    for name in fixture_names():
        program = load_fixture(name)
        for op in OPERATORS:
            for m in mutate_all(program, op):
                if m.program is not None:
                    assert program_from_dict(program_to_dict(m.program)) == m.program


def _many_predicates(n: int):
    blocks = [{"id": "flag", "opcode": "event_whenflagclicked"}]
    for i in range(n):
        cond = {"kind": "rel", "op": ">", "left": {"kind": "var", "name": "X"}, "right": {"kind": "num", "value": i}}
        blocks.append({"id": f"if{i}", "opcode": "control_if", "inputs": {"CONDITION": cond},
                       "substacks": [[{"id": f"s{i}", "opcode": "looks_say", "fields": {"MESSAGE": "x"}}]]})
    return program_from_dict({"meta": {"name": "many"}, "globals": [{"name": "X", "value": 0}],
                              "sprites": [{"name": "S", "scripts": [blocks]}]})


def test_cap_limits_sampled_mutants():
    p = _many_predicates(40)
    everything = mutate_all(p, "ROR", cap=1000)
    assert len(everything) == 80
    capped = mutate_all(p, "ROR", cap=50, rng=random.Random(3))
    assert len(capped) == 50
    keys = {(m.block_id, m.replacement) for m in capped}
    assert len(keys) == 50
    assert keys <= {(m.block_id, m.replacement) for m in everything}


def test_mutation_score_arithmetic():
    assert mutation_score([KILLED] * 72 + [SURVIVED] * 28) == 72.0
    assert mutation_score([SURVIVED] * 5) == 0.0
    assert mutation_score([KILLED] * 3 + [INVALID] * 4) == 100.0
    assert mutation_score([INVALID]) is None
    assert mutation_score([]) is None


# -- surprise model -------------------------------------------------------


def test_kde_requires_ten_vectors():
    with pytest.raises(InsufficientReferenceError):
        SurpriseModel.fit(np.zeros((9, 2)))


def test_kde_reference_points_stay_below_log_n():
    rng = np.random.default_rng(0)
    ref = rng.normal(size=(200, 3))
    model = SurpriseModel.fit(ref)
    lsa = model.lsa(ref)
    assert np.all(lsa >= 0) and np.all(lsa <= math.log(200) + 1e-9)
    assert not model.surprised(ref)


def test_kde_identical_references():
    model = SurpriseModel.fit(np.ones((10, 4)))
    assert model.lsa(np.ones((1, 4)))[0] == pytest.approx(0.0)
    assert np.all(np.isfinite(model.bandwidth)) and np.all(model.bandwidth > 0)


def test_kde_far_query_closed_form():
    rng = np.random.default_rng(1)
    ref = rng.normal(size=(100, 1))
    model = SurpriseModel.fit(ref)
    sigma = ref.std(ddof=1)
    h = sigma * (4 / (3 * 100)) ** (1 / 5)
    assert model.bandwidth[0] == pytest.approx(h)
    q = 100 * sigma
    lsa = model.lsa(np.array([[q]]))[0]
    nearest = ((q - ref.max()) / h) ** 2 / 2
    farthest = ((q - ref.min()) / h) ** 2 / 2
    assert nearest <= lsa <= farthest
    assert lsa > 30


def test_kde_monotone_in_distance():
    ref = np.linspace(-1, 1, 50)[:, None]
    model = SurpriseModel.fit(ref)
    qs = np.linspace(1.0, 8.0, 30)[:, None]
    lsa = model.lsa(qs)
    assert np.all(np.diff(lsa) > 0)


def test_constant_dimension_uses_variance_floor():
    rng = np.random.default_rng(2)
    ref = np.column_stack([rng.normal(size=50), np.full(50, 0.3)])
    model = SurpriseModel.fit(ref)
    assert model.bandwidth[1] == pytest.approx(0.01 * (4 / (4 * 50)) ** (1 / 6))


# -- oracle ---------------------------------------------------------------


@pytest.fixture(scope="module")
def fig1_suites():
    p = load_fixture("fig1")
    return p, generate_suite(p, BRANCH, seed=3), generate_suite(p, STATEMENT, seed=3)


def test_identity_program_survives(fig1_suites):
    p, suite, _ = fig1_suites
    oracle = Oracle(p, suite, judge_seeds(10))
    assert oracle.verdict(p) == (False, "")
    assert oracle.false_positives(judge_seeds(10, "fresh")) == 0


def test_negated_key_condition_killed_by_branch_suite(fig1_suites):
    p, suite, _ = fig1_suites
    (ncm,) = mutate_all(p, "NCM")
    judged = Oracle(p, suite, judge_seeds(10)).judge(ncm)
    assert judged.status == KILLED and judged.reason.startswith("lsa")


def test_deleting_only_script_is_killed(fig1_suites):
    p, suite, _ = fig1_suites
    (sdm,) = mutate_all(p, "SDM")
    assert Oracle(p, suite, judge_seeds(10)).judge(sdm).status == KILLED


def test_invalid_mutant_is_excluded(fig1_suites):
    p, suite, _ = fig1_suites
    from neatbranch.mutation import Mutant
    m = Mutant("SBD", 0, "x", "a", "b", None)
    assert Oracle(p, suite, judge_seeds(10)).judge(m).status == INVALID


def test_report_has_expected_columns(fig1_suites):
    p, suite, _ = fig1_suites
    rows, judged = mutation_analysis(p, suite)
    text = report_csv(rows)
    assert text.splitlines()[0] == ",".join(REPORT_COLUMNS)
    assert [r.operator for r in rows] == list(OPERATORS)
    assert sum(r.total for r in rows) == len(judged)
    for r in rows:
        assert r.killed + r.survived + r.invalid == r.total
        assert r.score is None or 0.0 <= r.score <= 100.0


def test_too_few_judge_seeds_rejected():
    p = load_fixture("nested_xy")
    suite = generate_suite(p, BRANCH, GeneratorConfig(population=10, max_steps=5), seed=0)
    # nested_xy finishes after two steps, so one seed cannot give ten reference vectors
    if suite.entries:
        with pytest.raises(InsufficientReferenceError):
            Oracle(p, suite, judge_seeds(1), max_steps=5)
