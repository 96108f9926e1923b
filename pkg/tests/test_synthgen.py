"""Synthetic corpus generator: determinism, label recoverability, statistics."""
import numpy as np
import pytest

from esal.metrics import eval_windows, evaluate
from esal.synthgen import (
    DISTRACTOR_TOKENS,
    STATUS_PHRASES,
    GenConfig,
    build_lexicon,
    default_schema,
    generate,
    rule_oracle,
)


def gold_map(dialogues):
    return {(d.id, w.window_index): w.gold for d in dialogues for w in d.windows}


def flatten(res):
    return [d for split in ("train", "dev", "test") for d in res["splits"][split]]


# ---------------------------------------------------------------------------
# Config validation


def test_config_validation():
    with pytest.raises(ValueError):
        GenConfig(labels_per_window=0.0)
    with pytest.raises(ValueError):
        GenConfig(noise=1.0)
    with pytest.raises(ValueError):
        GenConfig(window_size=0)
    with pytest.raises(ValueError):
        GenConfig(dialogues_dev=-1)


def test_default_schema_has_sixty_candidates():
    s = default_schema()
    assert s.num_pairs == 12 and s.num_statuses == 5
    assert s.num_pairs * s.num_statuses == 60


# ---------------------------------------------------------------------------
# Lexicon


def test_lexicon_covers_schema_without_collisions():
    lex = build_lexicon(default_schema())
    assert len(lex["items"]) == 12
    assert set(lex["statuses"]) == set(STATUS_PHRASES)
    all_cues = list(lex["items"]) + [t for toks in lex["statuses"].values() for t in toks]
    assert len(set(all_cues)) == len(all_cues)


def test_lexicon_rejects_multi_token_items():
    from esal.ontology import Schema

    bad = Schema([("A", ["two words"])], ["unknown"])
    with pytest.raises(ValueError):
        build_lexicon(bad)


# ---------------------------------------------------------------------------
# Determinism


def test_same_seed_same_corpus():
    cfg = GenConfig(dialogues_train=4, dialogues_dev=2, dialogues_test=2, seed=11)
    a, b = generate(cfg), generate(cfg)
    for split in ("train", "dev", "test"):
        assert a["splits"][split] == b["splits"][split]
    assert a["stats"] == b["stats"]


def test_same_seed_byte_identical_files(tmp_path):
    cfg = GenConfig(dialogues_train=3, dialogues_dev=1, dialogues_test=1, seed=5)
    generate(cfg, out_dir=tmp_path / "one")
    generate(cfg, out_dir=tmp_path / "two")
    for name in ("train.jsonl", "dev.jsonl", "test.jsonl", "schema.json", "lexicon.json"):
        assert (tmp_path / "one" / name).read_bytes() == (tmp_path / "two" / name).read_bytes()


def test_different_seeds_differ():
    cfg_a = GenConfig(dialogues_train=3, dialogues_dev=0, dialogues_test=0, seed=0)
    cfg_b = GenConfig(dialogues_train=3, dialogues_dev=0, dialogues_test=0, seed=1)
    assert generate(cfg_a)["splits"]["train"] != generate(cfg_b)["splits"]["train"]


# ---------------------------------------------------------------------------
# Structure


def test_split_ids_disjoint():
    cfg = GenConfig(dialogues_train=5, dialogues_dev=3, dialogues_test=2, seed=2)
    res = generate(cfg)
    ids = [d.id for d in flatten(res)]
    assert len(ids) == len(set(ids)) == 10


def test_windows_tile_each_dialogue():
    cfg = GenConfig(dialogues_train=2, dialogues_dev=0, dialogues_test=0,
                    utterances_per_dialogue=13, window_size=5, seed=4)
    for d in generate(cfg)["splits"]["train"]:
        spans = [(w.start, w.end) for w in d.windows]
        assert spans == [(0, 5), (5, 10), (10, 13)]
        assert len(d.utterances) == 13


def test_cue_roles_match_status_party():
    cfg = GenConfig(dialogues_train=6, dialogues_dev=0, dialogues_test=0, seed=7)
    res = generate(cfg)
    lex = res["lexicon"]
    checked = 0
    for d in res["splits"]["train"]:
        for w in d.windows:
            for cand in w.gold:
                status = cfg.schema.status_name(cand.status)
                party = status.split("-")[0]
                if party not in ("doctor", "patient"):
                    continue
                cue = set(lex["statuses"][status])
                for u in d.utterances[w.start : w.end]:
                    if cue & set(u.text.split()):
                        assert u.role == party
                        checked += 1
    assert checked > 10


def test_statuses_distinct_within_window():
    cfg = GenConfig(dialogues_train=20, dialogues_dev=0, dialogues_test=0, seed=8)
    for d in generate(cfg)["splits"]["train"]:
        for w in d.windows:
            statuses = [c.status for c in w.gold]
            assert len(statuses) == len(set(statuses))


# ---------------------------------------------------------------------------
# Recoverability


def test_rule_oracle_perfect_at_zero_noise():
    cfg = GenConfig(dialogues_train=10, dialogues_dev=5, dialogues_test=5,
                    noise=0.0, seed=0)
    res = generate(cfg)
    dialogues = flatten(res)
    preds = rule_oracle(dialogues, res["lexicon"], cfg.schema)
    report = evaluate(preds, gold_map(dialogues), cfg.schema)
    assert report.cells["window"]["full"].f1 == 1.0
    assert report.cells["dialogue"]["full"].f1 == 1.0


def test_rule_oracle_degrades_under_noise():
    cfg = GenConfig(dialogues_train=40, dialogues_dev=0, dialogues_test=0,
                    noise=0.3, seed=1)
    res = generate(cfg)
    dialogues = res["splits"]["train"]
    preds = rule_oracle(dialogues, res["lexicon"], cfg.schema)
    counts = eval_windows(preds, gold_map(dialogues))
    assert counts["full"].f1 < 1.0


def test_oracle_output_fits_prediction_schema():
    cfg = GenConfig(dialogues_train=3, dialogues_dev=0, dialogues_test=0, seed=9)
    res = generate(cfg)
    preds = rule_oracle(res["splits"]["train"], res["lexicon"], cfg.schema)
    space_size = cfg.schema.num_pairs * cfg.schema.num_statuses
    for (did, wi), labels in preds.items():
        assert isinstance(did, str) and isinstance(wi, int)
        for c in labels:
            assert 0 <= c.category < cfg.schema.num_categories
            assert 0 <= c.status < cfg.schema.num_statuses
    assert len(preds) == sum(len(d.windows) for d in res["splits"]["train"])
    assert space_size == 60


def test_noise_injects_distractors():
    cfg = GenConfig(dialogues_train=30, dialogues_dev=0, dialogues_test=0,
                    noise=0.5, seed=3)
    res = generate(cfg)
    text = " ".join(
        u.text for d in res["splits"]["train"] for u in d.utterances
    )
    assert any(tok in text.split() for tok in DISTRACTOR_TOKENS)


# ---------------------------------------------------------------------------
# Label statistics


def test_mean_labels_per_window_tracks_lambda():
    cfg = GenConfig(dialogues_train=250, dialogues_dev=0, dialogues_test=0,
                    labels_per_window=2.5, seed=0)
    res = generate(cfg)
    stats = res["stats"]["train"]
    assert stats["windows"] == 1000
    mean = stats["labels_per_window"]
    assert abs(mean - 2.5) / 2.5 < 0.10
    # draws are capped at min(window span, num statuses) = 5 per window
    rng = np.random.default_rng(123)
    capped = np.minimum(rng.poisson(2.5, size=200000), 5)
    assert abs(mean - capped.mean()) / capped.mean() < 0.05


def test_stats_count_what_was_generated():
    cfg = GenConfig(dialogues_train=7, dialogues_dev=0, dialogues_test=0, seed=6)
    res = generate(cfg)
    dialogues = res["splits"]["train"]
    stats = res["stats"]["train"]
    assert stats["dialogues"] == 7
    assert stats["windows"] == sum(len(d.windows) for d in dialogues)
    assert stats["labels"] == sum(len(w.gold) for d in dialogues for w in d.windows)
