"""Scoring tests: projection, micro counts, status resolution, dialogue
merging, and the hand-counted golden fixture shipped under tests/data/."""
import json
from pathlib import Path

import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from esal.corpus import load_corpus
from esal.metrics import (
    GRANULARITIES,
    SCOPES,
    Counts,
    EvalReport,
    EvaluationError,
    eval_dialogues,
    eval_windows,
    evaluate,
    merge_dialogue,
    project,
    resolve_statuses,
)
from esal.ontology import Schema, build_space, parse_label

DATA = Path(__file__).parent / "data"


@pytest.fixture(scope="module")
def schema():
    return Schema.from_file(DATA / "golden_schema.json")


def cand(schema, text):
    return parse_label(text, schema)


def cands(schema, *texts):
    return frozenset(parse_label(t, schema) for t in texts)


def load_golden(schema):
    gold = {}
    for d in load_corpus(DATA / "golden_gold.jsonl", schema):
        for w in d.windows:
            gold[(d.id, w.window_index)] = w.gold
    pred = {}
    with open(DATA / "golden_pred.jsonl", encoding="utf-8") as fh:
        for line in fh:
            rec = json.loads(line)
            labels = frozenset(
                cand(schema, f"{p['category']}: {p['item']} ({p['status']})")
                for p in rec["predictions"]
            )
            pred[(rec["dialogue_id"], rec["window_index"])] = labels
    return pred, gold


# ---------------------------------------------------------------------------
# Projection


def test_project_category_collapses(schema):
    labels = cands(schema, "Symptom: cough (doctor-pos)", "Symptom: fever (unknown)")
    assert len(project(labels, "category")) == 1
    assert len(project(labels, "item")) == 2


def test_project_empty_set(schema):
    for g in GRANULARITIES:
        assert project(frozenset(), g) == frozenset()


def test_project_full_preserves_size(schema):
    space = build_space(schema)
    labels = frozenset(space.candidate_at(i) for i in (0, 7, 31, 59))
    assert len(project(labels, "full")) == len(labels)


def test_project_unknown_granularity(schema):
    with pytest.raises(ValueError):
        project(frozenset(), "word")


# ---------------------------------------------------------------------------
# Counts arithmetic


def test_counts_zero_denominators_are_zero():
    c = Counts(0, 0, 0)
    assert c.precision == 0.0 and c.recall == 0.0 and c.f1 == 0.0
    assert Counts(0, 3, 0).precision == 0.0
    assert Counts(0, 0, 3).recall == 0.0


def test_counts_addition():
    c = Counts(1, 2, 3) + Counts(4, 5, 6)
    assert (c.tp, c.fp, c.fn) == (5, 7, 9)


# ---------------------------------------------------------------------------
# Window-level evaluation


def test_eval_windows_perfect(schema):
    windows = {
        ("d", 0): cands(schema, "Symptom: cough (doctor-pos)"),
        ("d", 1): cands(schema, "Test: ecg (unknown)", "Surgery: graft (patient-neg)"),
    }
    counts = eval_windows(windows, windows)
    for g in GRANULARITIES:
        assert counts[g].f1 == 1.0


def test_eval_windows_hand_count(schema):
    a = cand(schema, "Symptom: cough (doctor-pos)")
    b = cand(schema, "Symptom: fever (unknown)")
    c = cand(schema, "Test: mri (doctor-neg)")
    pred = {("d", 0): frozenset({a}), ("d", 1): frozenset({a, c})}
    gold = {("d", 0): frozenset({a, b}), ("d", 1): frozenset({a})}
    full = eval_windows(pred, gold)["full"]
    assert (full.tp, full.fp, full.fn) == (2, 1, 1)
    assert full.precision == pytest.approx(2 / 3)
    assert full.recall == pytest.approx(2 / 3)
    assert full.f1 == pytest.approx(2 / 3)


def test_eval_windows_key_mismatch(schema):
    s = cands(schema, "Symptom: cough (unknown)")
    with pytest.raises(EvaluationError):
        eval_windows({("d", 0): s}, {("d", 1): s})


# ---------------------------------------------------------------------------
# Status resolution


def test_resolve_lone_unknown_survives():
    assert resolve_statuses({"unknown"}) == frozenset({"unknown"})


def test_resolve_unknown_yields_to_concrete():
    assert resolve_statuses({"unknown", "doctor-pos"}) == frozenset({"doctor-pos"})


def test_resolve_negative_yields_to_positive():
    assert resolve_statuses({"doctor-neg", "patient-pos"}) == frozenset({"patient-pos"})


def test_resolve_keeps_multiple_negatives():
    both = {"doctor-neg", "patient-neg"}
    assert resolve_statuses(both) == frozenset(both)


def test_resolve_rejects_empty():
    with pytest.raises(ValueError):
        resolve_statuses(set())


STATUS_NAMES = ["doctor-pos", "doctor-neg", "patient-pos", "patient-neg", "unknown"]


@settings(max_examples=100, deadline=None)
@given(st.sets(st.sampled_from(STATUS_NAMES), min_size=1))
def test_resolve_idempotent_subset(statuses):
    out = resolve_statuses(statuses)
    assert out and out <= frozenset(statuses)
    assert resolve_statuses(out) == out


# ---------------------------------------------------------------------------
# Dialogue merging


def test_merge_single_window_resolves_per_pair(schema):
    ws = cands(schema, "Test: ecg (unknown)", "Test: ecg (doctor-pos)")
    merged = merge_dialogue([ws], schema)
    assert merged == cands(schema, "Test: ecg (doctor-pos)")


def test_merge_across_windows(schema):
    w1 = cands(schema, "Test: ecg (unknown)")
    w2 = cands(schema, "Test: ecg (doctor-pos)")
    assert merge_dialogue([w1, w2], schema) == cands(schema, "Test: ecg (doctor-pos)")


def test_merge_requires_windows(schema):
    with pytest.raises(ValueError):
        merge_dialogue([], schema)


@settings(max_examples=40, deadline=None)
@given(st.data())
def test_merge_order_independent_and_idempotent(data):
    schema = Schema.from_file(DATA / "golden_schema.json")
    space = build_space(schema)
    n_windows = data.draw(st.integers(1, 4))
    windows = [
        frozenset(
            space.candidate_at(i)
            for i in data.draw(st.sets(st.integers(0, len(space) - 1), max_size=5))
        )
        for _ in range(n_windows)
    ]
    merged = merge_dialogue(windows, schema)
    perm = data.draw(st.permutations(windows))
    assert merge_dialogue(list(perm), schema) == merged
    assert merge_dialogue([merged], schema) == merged  # idempotent
    assert merge_dialogue(windows + [windows[0]], schema) == merged  # multiset dup


# ---------------------------------------------------------------------------
# Dialogue-level evaluation


def test_eval_dialogues_perfect_after_merge(schema):
    pred = {"d": [cands(schema, "Test: ecg (unknown)"), cands(schema, "Test: ecg (doctor-pos)")]}
    gold = {"d": [cands(schema, "Test: ecg (doctor-pos)"), cands(schema, "Test: ecg (doctor-pos)")]}
    counts = eval_dialogues(pred, gold, schema)
    for g in GRANULARITIES:
        assert counts[g].f1 == 1.0


def test_eval_dialogues_id_mismatch(schema):
    s = [cands(schema, "Symptom: cough (unknown)")]
    with pytest.raises(EvaluationError):
        eval_dialogues({"a": s}, {"b": s}, schema)


def test_dialogue_category_consistent_with_projection(schema):
    pred, gold = load_golden(schema)
    report = evaluate(pred, gold, schema)

    by_did_pred, by_did_gold = {}, {}
    for (did, _), labels in sorted(pred.items()):
        by_did_pred.setdefault(did, []).append(labels)
    for (did, _), labels in sorted(gold.items()):
        by_did_gold.setdefault(did, []).append(labels)
    tp = fp = fn = 0
    for did in by_did_gold:
        mp = project(merge_dialogue(by_did_pred[did], schema), "category")
        mg = project(merge_dialogue(by_did_gold[did], schema), "category")
        tp += len(mp & mg)
        fp += len(mp - mg)
        fn += len(mg - mp)
    cell = report.cells["dialogue"]["category"]
    assert (cell.tp, cell.fp, cell.fn) == (tp, fp, fn)


# ---------------------------------------------------------------------------
# Golden fixture (hand-counted)


def test_golden_fixture_matches_hand_counts(schema):
    pred, gold = load_golden(schema)
    report = evaluate(pred, gold, schema)
    expected = json.loads((DATA / "golden_expected.json").read_text())
    got = report.to_dict()
    for scope in SCOPES:
        for g in GRANULARITIES:
            want = expected[scope][g]
            cell = got[scope][g]
            assert cell["tp"] == want["tp"], (scope, g)
            assert cell["fp"] == want["fp"], (scope, g)
            assert cell["fn"] == want["fn"], (scope, g)
            for k in ("precision", "recall", "f1"):
                assert round(100.0 * cell[k], 2) == want[k], (scope, g, k)


def test_golden_fixture_table_renders_expected_percentages(schema):
    pred, gold = load_golden(schema)
    table = evaluate(pred, gold, schema).to_table()
    expected = json.loads((DATA / "golden_expected.json").read_text())
    lines = [ln for ln in table.splitlines() if ln and not ln.startswith(("scope", "-"))]
    assert len(lines) == 6
    for line in lines:
        parts = line.split()
        scope, g = parts[0], parts[1]
        want = expected[scope][g]
        assert parts[2] == f"{want['precision']:.2f}"
        assert parts[3] == f"{want['recall']:.2f}"
        assert parts[4] == f"{want['f1']:.2f}"


def test_golden_fixture_brute_force_recount(schema):
    """Independent recount straight off the JSONL files, no library calls."""
    raw_pred = {}
    with open(DATA / "golden_pred.jsonl", encoding="utf-8") as fh:
        for line in fh:
            rec = json.loads(line)
            raw_pred[(rec["dialogue_id"], rec["window_index"])] = {
                (p["category"], p["item"], p["status"]) for p in rec["predictions"]
            }
    raw_gold = {}
    with open(DATA / "golden_gold.jsonl", encoding="utf-8") as fh:
        for line in fh:
            rec = json.loads(line)
            for wi, w in enumerate(sorted(rec["windows"], key=lambda x: x["start"])):
                triples = set()
                for label in w["labels"]:
                    head, _, rest = label.partition(": ")
                    item, _, status = rest.partition(" (")
                    triples.add((head, item, status.rstrip(")")))
                raw_gold[(rec["id"], wi)] = triples

    def proj(s, g):
        if g == "category":
            return {t[0] for t in s}
        if g == "item":
            return {t[:2] for t in s}
        return set(s)

    recount = {}
    for g in GRANULARITIES:
        tp = fp = fn = 0
        for key in raw_gold:
            p, gl = proj(raw_pred[key], g), proj(raw_gold[key], g)
            tp += len(p & gl)
            fp += len(p - gl)
            fn += len(gl - p)
        recount[g] = (tp, fp, fn)

    pred, gold = load_golden(schema)
    counts = eval_windows(pred, gold)
    for g in GRANULARITIES:
        assert (counts[g].tp, counts[g].fp, counts[g].fn) == recount[g]


# ---------------------------------------------------------------------------
# Aggregate invariants


@settings(max_examples=30, deadline=None)
@given(st.data())
def test_micro_counts_conserve_totals(data):
    schema = Schema.from_file(DATA / "golden_schema.json")
    space = build_space(schema)
    keys = [("d1", 0), ("d1", 1), ("d2", 0)]
    draw_set = lambda: frozenset(
        space.candidate_at(i)
        for i in data.draw(st.sets(st.integers(0, len(space) - 1), max_size=6))
    )
    pred = {k: draw_set() for k in keys}
    gold = {k: draw_set() for k in keys}
    counts = eval_windows(pred, gold)
    for g in GRANULARITIES:
        total_pred = sum(len(project(pred[k], g)) for k in keys)
        total_gold = sum(len(project(gold[k], g)) for k in keys)
        assert counts[g].tp + counts[g].fp == total_pred
        assert counts[g].tp + counts[g].fn == total_gold


def test_perfect_predictions_all_six_cells_one(schema):
    pred, gold = load_golden(schema)
    report = evaluate(gold, gold, schema)
    for scope in SCOPES:
        for g in GRANULARITIES:
            assert report.cells[scope][g].f1 == 1.0


def test_report_dict_shape(schema):
    pred, gold = load_golden(schema)
    d = evaluate(pred, gold, schema).to_dict()
    assert set(d) == set(SCOPES)
    for scope in SCOPES:
        assert set(d[scope]) == set(GRANULARITIES)
        for g in GRANULARITIES:
            assert set(d[scope][g]) == {"tp", "fp", "fn", "precision", "recall", "f1"}
