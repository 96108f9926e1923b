"""Schema, label parsing, and candidate-space enumeration tests."""
from pathlib import Path

import pytest

from esal.ontology import (
    Candidate,
    CandidatePair,
    LabelParseError,
    Schema,
    SchemaError,
    build_space,
    format_label,
    load_mie_schema,
    parse_label,
)

DATA = Path(__file__).parent / "data"


def tiny_schema(aliases=None):
    return Schema(
        [("Symptom", ["heart disease", "cough"]), ("Test", ["electrocardiogram"])],
        ["doctor-pos", "doctor-neg", "patient-pos", "patient-neg", "unknown"],
        status_aliases=aliases,
    )


# ---------------------------------------------------------------------------
# Candidate space


def test_mie_space_has_355_candidates():
    space = build_space(load_mie_schema())
    assert len(space) == 355
    assert space.schema.num_pairs == 45 + 4 + 16 + 6
    assert space.schema.num_statuses == 5


def test_mie_space_bijection_round_trip():
    space = build_space(load_mie_schema())
    seen = set()
    for i in range(len(space)):
        cand = space.candidate_at(i)
        assert space.index_of(cand) == i
        seen.add(cand)
    assert len(seen) == 355


def test_singleton_schema_space():
    schema = Schema([("A", ["x"])], ["s"])
    space = build_space(schema)
    assert len(space) == 1
    assert space.candidate_at(0) == Candidate(CandidatePair(0, 0), 0)
    assert space.index_of(Candidate(CandidatePair(0, 0), 0)) == 0


def test_synthetic_schema_space_round_trip():
    from esal.synthgen import default_schema

    space = build_space(default_schema())
    assert len(space) == 60
    for i in range(60):
        assert space.index_of(space.candidate_at(i)) == i


def test_dense_index_arithmetic():
    """Canonical enumeration is (pair-major, status-minor)."""
    space = build_space(tiny_schema())
    S = space.schema.num_statuses
    for i in range(len(space)):
        cand = space.candidate_at(i)
        assert i == space.pair_index(cand.pair) * S + cand.status


def test_category_pair_range_partitions_pairs():
    space = build_space(load_mie_schema())
    covered = []
    for ci in range(space.schema.num_categories):
        lo, hi = space.category_pair_range(ci)
        covered.extend(range(lo, hi))
        for p in range(lo, hi):
            assert space.pairs[p].category == ci
    assert covered == list(range(len(space.pairs)))


def test_enumeration_order_matches_golden_listing():
    schema = load_mie_schema()
    space = build_space(schema)
    lines = [format_label(space.candidate_at(i), schema) for i in range(len(space))]
    golden = (DATA / "mie_candidates.txt").read_text(encoding="utf-8").splitlines()
    assert lines == golden


# ---------------------------------------------------------------------------
# Parsing and formatting


def test_parse_canonical_form():
    schema = tiny_schema()
    cand = parse_label("Symptom: heart disease (unknown)", schema)
    assert cand == Candidate(CandidatePair(0, 0), 4)


def test_parse_hyphen_form():
    schema = tiny_schema()
    cand = parse_label("Test:electrocardiogram-doctor-pos", schema)
    assert cand == Candidate(CandidatePair(1, 0), 0)


def test_parse_alias_applies_in_both_forms():
    schema = tiny_schema(aliases={"pos": "doctor-pos"})
    a = parse_label("Test: electrocardiogram (pos)", schema)
    b = parse_label("Test:electrocardiogram-pos", schema)
    assert a == b == Candidate(CandidatePair(1, 0), 0)


def test_parse_unaliased_short_status_is_an_error():
    with pytest.raises(LabelParseError):
        parse_label("Test: electrocardiogram (pos)", tiny_schema())


def test_parse_rejects_malformed_labels():
    schema = tiny_schema()
    for bad in [
        "no separator here",
        "Symptom: cough",
        "Nope: cough (unknown)",
        "Symptom: sneeze (unknown)",
        "Symptom: cough (sideways)",
        "Symptom:-unknown",
    ]:
        with pytest.raises(LabelParseError):
            parse_label(bad, schema)


def test_format_label_canonical_string():
    schema = tiny_schema()
    assert (
        format_label(Candidate(CandidatePair(0, 0), 0), schema)
        == "Symptom: heart disease (doctor-pos)"
    )


def test_format_parse_round_trip_over_mie_space():
    schema = load_mie_schema()
    space = build_space(schema)
    strings = set()
    for i in range(len(space)):
        cand = space.candidate_at(i)
        s = format_label(cand, schema)
        assert parse_label(s, schema) == cand
        strings.add(s)
    assert len(strings) == 355  # formatting is injective


def test_parse_format_round_trip_with_whitespace_noise():
    schema = tiny_schema()
    cand = parse_label("  Symptom :  cough   ( unknown ) ".replace(" :", ":", 1), schema)
    assert format_label(cand, schema) == "Symptom: cough (unknown)"


# ---------------------------------------------------------------------------
# Schema validation and serialization


def test_schema_rejects_duplicates_and_empties():
    with pytest.raises(SchemaError):
        Schema([], ["s"])
    with pytest.raises(SchemaError):
        Schema([("A", [])], ["s"])
    with pytest.raises(SchemaError):
        Schema([("A", ["x"]), ("A", ["y"])], ["s"])
    with pytest.raises(SchemaError):
        Schema([("A", ["x", "x"])], ["s"])
    with pytest.raises(SchemaError):
        Schema([("A", ["x"])], ["s", "s"])


def test_schema_alias_validation():
    with pytest.raises(SchemaError):
        Schema([("A", ["x"])], ["s"], status_aliases={"p": "nope"})
    with pytest.raises(SchemaError):
        Schema([("A", ["x"])], ["s"], status_aliases={"s": "s"})


def test_schema_dict_round_trip(tmp_path):
    schema = tiny_schema(aliases={"pos": "doctor-pos"})
    clone = Schema.from_dict(schema.to_dict())
    assert clone.to_dict() == schema.to_dict()
    path = tmp_path / "schema.json"
    schema.save(path)
    assert Schema.from_file(path).to_dict() == schema.to_dict()


def test_schema_from_dict_rejects_malformed():
    with pytest.raises(SchemaError):
        Schema.from_dict({"statuses": ["s"]})
    with pytest.raises(SchemaError):
        Schema.from_dict({"categories": [{"name": "A"}], "statuses": ["s"]})


def test_mie_schema_category_layout():
    schema = load_mie_schema()
    sizes = {name: len(items) for name, items in schema.categories}
    assert sorted(sizes.values(), reverse=True) == [45, 16, 6, 4]
    assert list(schema.statuses) == [
        "doctor-pos",
        "doctor-neg",
        "patient-pos",
        "patient-neg",
        "unknown",
    ]
