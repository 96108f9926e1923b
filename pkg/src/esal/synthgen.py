"""Seeded synthetic dialogue corpora with surface-recoverable labels.

Every gold candidate of a window is planted as one utterance that carries
the item's cue token plus a two-token status phrase; the speaker role
matches the status party.  A rule matcher that greps those cues per
utterance recovers the labels exactly at noise zero, which gives the
training stack a known-learnable target and the tests a ceiling oracle.
"""
from __future__ import annotations

import json
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from .corpus import Dialogue, Utterance, Window, save_corpus, tokenize
from .ontology import Candidate, CandidatePair, Schema, build_space

SYNTH_CATEGORIES = [
    ("Symptom", ["cough", "fever", "nausea", "fatigue"]),
    ("Test", ["xray", "ecg", "mri", "ultrasound"]),
    ("Surgery", ["stent", "bypass", "ablation", "graft"]),
]
SYNTH_STATUSES = ["doctor-pos", "doctor-neg", "patient-pos", "patient-neg", "unknown"]

# Two cue tokens per status, no token shared between statuses.
STATUS_PHRASES = {
    "doctor-pos": ("confirmed", "definitely"),
    "doctor-neg": ("excluded", "unlikely"),
    "patient-pos": ("suffering", "lately"),
    "patient-neg": ("denies", "never"),
    "unknown": ("wondering", "perhaps"),
}

FILLER_TOKENS = [
    "well", "okay", "please", "tell", "me", "more", "about", "that",
    "thanks", "i", "see", "right", "sure", "today", "morning", "again",
    "take", "care", "rest", "water",
]
DISTRACTOR_TOKENS = ["something", "whatever", "thing", "stuff", "maybe"]


def default_schema() -> Schema:
    return Schema(SYNTH_CATEGORIES, SYNTH_STATUSES)


@dataclass(frozen=True)
class GenConfig:
    """Knobs for one corpus build; identical configs give identical bytes."""

    dialogues_train: int = 50
    dialogues_dev: int = 10
    dialogues_test: int = 10
    utterances_per_dialogue: int = 20
    window_size: int = 5
    labels_per_window: float = 2.5
    noise: float = 0.0
    seed: int = 0
    schema: Schema = field(default_factory=default_schema)

    def __post_init__(self):
        if self.labels_per_window <= 0:
            raise ValueError("labels_per_window must be > 0")
        if not (0.0 <= self.noise < 1.0):
            raise ValueError("noise must lie in [0, 1)")
        if self.window_size < 1 or self.utterances_per_dialogue < 1:
            raise ValueError("window_size and utterances_per_dialogue must be >= 1")
        if min(self.dialogues_train, self.dialogues_dev, self.dialogues_test) < 0:
            raise ValueError("dialogue counts must be >= 0")


def _status_party(status_name: str) -> str | None:
    if status_name.startswith("doctor-"):
        return "doctor"
    if status_name.startswith("patient-"):
        return "patient"
    return None


def build_lexicon(schema: Schema) -> dict:
    """Cue-token sidecar: item tokens and status phrases the oracle greps."""
    items = {}
    for cat_name, cat_items in schema.categories:
        for item in cat_items:
            toks = tokenize(item)
            if len(toks) != 1:
                raise ValueError(
                    f"synthetic item names must be single tokens, got {item!r}"
                )
            if toks[0] in items:
                raise ValueError(f"duplicate item cue token {toks[0]!r}")
            items[toks[0]] = {"category": cat_name, "item": item}
    statuses = {}
    seen: set[str] = set(items)
    for status in schema.statuses:
        phrase = STATUS_PHRASES.get(status)
        if phrase is None:
            raise ValueError(f"no cue phrase defined for status {status!r}")
        for tok in phrase:
            if tok in seen:
                raise ValueError(f"cue token {tok!r} used twice")
            seen.add(tok)
        statuses[status] = list(phrase)
    return {
        "items": items,
        "statuses": statuses,
        "fillers": list(FILLER_TOKENS),
        "distractors": list(DISTRACTOR_TOKENS),
    }


def _filler_utterance(rng: np.random.Generator) -> Utterance:
    n = int(rng.integers(3, 7))
    toks = [FILLER_TOKENS[int(i)] for i in rng.integers(0, len(FILLER_TOKENS), size=n)]
    role = "doctor" if rng.random() < 0.5 else "patient"
    return Utterance(role=role, text=" ".join(toks))


def _cue_utterance(
    cand: Candidate, schema: Schema, rng: np.random.Generator, noise: float
) -> Utterance:
    item_tok = tokenize(schema.item_name(cand.category, cand.item))[0]
    status_name = schema.status_name(cand.status)
    s1, s2 = STATUS_PHRASES[status_name]
    cue_toks = [s1, item_tok, s2]
    if noise > 0.0:
        cue_toks = [
            DISTRACTOR_TOKENS[int(rng.integers(0, len(DISTRACTOR_TOKENS)))]
            if rng.random() < noise
            else t
            for t in cue_toks
        ]
    lead = FILLER_TOKENS[int(rng.integers(0, len(FILLER_TOKENS)))]
    role = _status_party(status_name)
    if role is None:
        role = "doctor" if rng.random() < 0.5 else "patient"
    return Utterance(role=role, text=" ".join([lead] + cue_toks))


def _gen_dialogue(
    did: str, config: GenConfig, pairs, rng: np.random.Generator
) -> Dialogue:
    schema = config.schema
    n_utt = config.utterances_per_dialogue
    wsize = config.window_size

    spans = []
    start = 0
    while start < n_utt:
        spans.append((start, min(start + wsize, n_utt)))
        start += wsize

    utterances: list[Utterance | None] = [None] * n_utt
    windows = []
    for widx, (lo, hi) in enumerate(spans):
        span_len = hi - lo
        k = int(rng.poisson(config.labels_per_window))
        k = min(k, span_len, len(pairs), schema.num_statuses)
        gold = set()
        if k > 0:
            pair_ids = rng.choice(len(pairs), size=k, replace=False)
            slots = rng.choice(span_len, size=k, replace=False)
            # Distinct statuses per window so each status cue phrase has a
            # single unambiguous source utterance.
            status_ids = rng.choice(schema.num_statuses, size=k, replace=False)
            for pi, slot, si in zip(pair_ids, slots, status_ids):
                cand = Candidate(pairs[int(pi)], int(si))
                gold.add(cand)
                utterances[lo + int(slot)] = _cue_utterance(
                    cand, schema, rng, config.noise
                )
        windows.append(
            Window(
                dialogue_id=did,
                window_index=widx,
                start=lo,
                end=hi,
                gold=frozenset(gold),
            )
        )
    filled = [u if u is not None else _filler_utterance(rng) for u in utterances]
    return Dialogue(id=did, utterances=filled, windows=windows)


def generate(config: GenConfig, out_dir=None) -> dict:
    """Build train/dev/test splits; write JSONL plus sidecars when out_dir given.

    Returns {"splits": {name: [Dialogue]}, "stats": {name: {...}}, "lexicon": ...}.
    """
    rng = np.random.default_rng(config.seed)
    pairs = build_space(config.schema).pairs
    lexicon = build_lexicon(config.schema)

    splits: dict[str, list[Dialogue]] = {}
    stats: dict[str, dict] = {}
    counts = {
        "train": config.dialogues_train,
        "dev": config.dialogues_dev,
        "test": config.dialogues_test,
    }
    for split, n_dlg in counts.items():
        dialogues = [
            _gen_dialogue(f"{split}-{i:04d}", config, pairs, rng) for i in range(n_dlg)
        ]
        n_windows = sum(len(d.windows) for d in dialogues)
        n_labels = sum(len(w.gold) for d in dialogues for w in d.windows)
        splits[split] = dialogues
        stats[split] = {
            "dialogues": n_dlg,
            "windows": n_windows,
            "labels": n_labels,
            "labels_per_window": (n_labels / n_windows) if n_windows else 0.0,
        }

    if out_dir is not None:
        out = Path(out_dir)
        out.mkdir(parents=True, exist_ok=True)
        for split, dialogues in splits.items():
            save_corpus(dialogues, out / f"{split}.jsonl", config.schema)
        config.schema.save(out / "schema.json")
        with open(out / "lexicon.json", "w", encoding="utf-8") as fh:
            json.dump(lexicon, fh, ensure_ascii=False, indent=2, sort_keys=True)
            fh.write("\n")

    return {"splits": splits, "stats": stats, "lexicon": lexicon}


def rule_oracle(
    dialogues: list[Dialogue], lexicon: dict, schema: Schema
) -> dict[tuple[str, int], frozenset]:
    """Predict labels by grepping cue tokens, one utterance at a time.

    An utterance votes for (pair, status) when it contains the item's cue
    token together with at least one token of the status phrase.  Votes are
    unioned over the window.
    """
    pair_of_tok: dict[str, CandidatePair] = {}
    for tok, info in lexicon["items"].items():
        ci = schema.category_index(info["category"])
        pair_of_tok[tok] = CandidatePair(ci, schema.item_index(ci, info["item"]))
    status_of_tok = {
        tok: schema.status_index(status)
        for status, toks in lexicon["statuses"].items()
        for tok in toks
    }
    out: dict[tuple[str, int], frozenset] = {}
    for d in dialogues:
        for w in d.windows:
            preds = set()
            for u in d.utterances[w.start : w.end]:
                toks = set(tokenize(u.text))
                pairs_here = [pair_of_tok[t] for t in toks if t in pair_of_tok]
                statuses_here = {status_of_tok[t] for t in toks if t in status_of_tok}
                for pair in pairs_here:
                    for si in statuses_here:
                        preds.add(Candidate(pair, si))
            out[(d.id, w.window_index)] = frozenset(preds)
    return out
