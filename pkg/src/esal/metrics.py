"""Window-level and dialogue-level scoring of candidate-label sets.

Three granularities: Category keeps only the category of each label, Item
keeps (category, item), Full keeps the whole triple.  Window scope counts
per-window set overlaps; dialogue scope first merges every window of a
dialogue and reconciles statuses per item (unknown yields to any concrete
status, negatives yield to positives), applied to predictions and gold
alike.  All aggregate numbers are micro-averages: global TP/FP/FN sums with
precision/recall/F1 computed once at the end, and 0/0 counts as 0.
"""
from __future__ import annotations

from collections import defaultdict
from dataclasses import dataclass

from .ontology import Candidate, CandidatePair, Schema

GRANULARITIES = ("category", "item", "full")
SCOPES = ("window", "dialogue")

UNKNOWN_STATUS = "unknown"
POSITIVE_SUFFIX = "-pos"
NEGATIVE_SUFFIX = "-neg"


class EvaluationError(ValueError):
    """Prediction and gold inputs do not line up."""


@dataclass(frozen=True)
class Counts:
    tp: int = 0
    fp: int = 0
    fn: int = 0

    @property
    def precision(self) -> float:
        d = self.tp + self.fp
        return self.tp / d if d else 0.0

    @property
    def recall(self) -> float:
        d = self.tp + self.fn
        return self.tp / d if d else 0.0

    @property
    def f1(self) -> float:
        p, r = self.precision, self.recall
        return 2.0 * p * r / (p + r) if p + r else 0.0

    def __add__(self, other: "Counts") -> "Counts":
        return Counts(self.tp + other.tp, self.fp + other.fp, self.fn + other.fn)


def project(labels: frozenset | set, granularity: str) -> frozenset:
    """Collapse candidates to the tuples compared at the given granularity."""
    if granularity == "category":
        return frozenset(c.category for c in labels)
    if granularity == "item":
        return frozenset((c.category, c.item) for c in labels)
    if granularity == "full":
        return frozenset((c.category, c.item, c.status) for c in labels)
    raise ValueError(f"unknown granularity {granularity!r}")


def _count_sets(pred: frozenset, gold: frozenset) -> Counts:
    inter = len(pred & gold)
    return Counts(tp=inter, fp=len(pred) - inter, fn=len(gold) - inter)


def eval_windows(
    pred: dict[tuple[str, int], frozenset],
    gold: dict[tuple[str, int], frozenset],
) -> dict[str, Counts]:
    """Micro-averaged counts over identically-keyed per-window label sets."""
    if set(pred) != set(gold):
        missing = sorted(set(gold) - set(pred))
        extra = sorted(set(pred) - set(gold))
        raise EvaluationError(
            f"window keys differ: missing={missing[:5]} extra={extra[:5]}"
        )
    totals = {g: Counts() for g in GRANULARITIES}
    for key in gold:
        for g in GRANULARITIES:
            totals[g] = totals[g] + _count_sets(project(pred[key], g), project(gold[key], g))
    return totals


def resolve_statuses(statuses: set[str] | frozenset) -> frozenset:
    """Reconcile the status names observed for one item across windows.

    Unknown is dropped when any concrete status exists; negative statuses
    are dropped when any positive exists.  Whatever survives is kept as a
    set, so two negatives stay two negatives.
    """
    if not statuses:
        raise ValueError("resolve_statuses: empty input")
    out = set(statuses)
    concrete = {s for s in out if s != UNKNOWN_STATUS}
    if concrete:
        out = concrete
    if any(s.endswith(POSITIVE_SUFFIX) for s in out):
        out = {s for s in out if not s.endswith(NEGATIVE_SUFFIX)}
    return frozenset(out)


def merge_dialogue(window_sets: list[frozenset], schema: Schema) -> frozenset:
    """Union a dialogue's window labels and reconcile statuses per item."""
    if not window_sets:
        raise ValueError("merge_dialogue: need at least one window")
    by_pair: dict[CandidatePair, set[str]] = defaultdict(set)
    for ws in window_sets:
        for cand in ws:
            by_pair[cand.pair].add(schema.status_name(cand.status))
    merged = set()
    for pair, names in by_pair.items():
        for name in resolve_statuses(names):
            merged.add(Candidate(pair, schema.status_index(name)))
    return frozenset(merged)


def eval_dialogues(
    pred: dict[str, list[frozenset]],
    gold: dict[str, list[frozenset]],
    schema: Schema,
) -> dict[str, Counts]:
    """Merge per-dialogue windows on both sides, then micro-count."""
    if set(pred) != set(gold):
        missing = sorted(set(gold) - set(pred))
        extra = sorted(set(pred) - set(gold))
        raise EvaluationError(
            f"dialogue ids differ: missing={missing[:5]} extra={extra[:5]}"
        )
    totals = {g: Counts() for g in GRANULARITIES}
    for did in gold:
        if not pred[did] or not gold[did]:
            raise EvaluationError(f"dialogue {did!r} has no windows on one side")
        mp = merge_dialogue(pred[did], schema)
        mg = merge_dialogue(gold[did], schema)
        for g in GRANULARITIES:
            totals[g] = totals[g] + _count_sets(project(mp, g), project(mg, g))
    return totals


# ---------------------------------------------------------------------------
# Report assembly


@dataclass(frozen=True)
class EvalReport:
    """Counts for every scope x granularity cell."""

    cells: dict[str, dict[str, Counts]]  # scope -> granularity -> Counts

    def to_dict(self) -> dict:
        out: dict = {}
        for scope in SCOPES:
            out[scope] = {}
            for g in GRANULARITIES:
                c = self.cells[scope][g]
                out[scope][g] = {
                    "tp": c.tp,
                    "fp": c.fp,
                    "fn": c.fn,
                    "precision": c.precision,
                    "recall": c.recall,
                    "f1": c.f1,
                }
        return out

    def to_table(self) -> str:
        """Aligned text table, percentages with two decimals."""
        header = f"{'scope':<10}{'granularity':<14}{'P':>8}{'R':>8}{'F1':>8}"
        lines = [header, "-" * len(header)]
        for scope in SCOPES:
            for g in GRANULARITIES:
                c = self.cells[scope][g]
                lines.append(
                    f"{scope:<10}{g:<14}"
                    f"{100.0 * c.precision:>8.2f}"
                    f"{100.0 * c.recall:>8.2f}"
                    f"{100.0 * c.f1:>8.2f}"
                )
        return "\n".join(lines) + "\n"


def evaluate(
    pred_windows: dict[tuple[str, int], frozenset],
    gold_windows: dict[tuple[str, int], frozenset],
    schema: Schema,
) -> EvalReport:
    """Full protocol: window scores plus dialogue scores after merging."""
    window_counts = eval_windows(pred_windows, gold_windows)

    pred_by_dlg: dict[str, list[frozenset]] = defaultdict(list)
    gold_by_dlg: dict[str, list[frozenset]] = defaultdict(list)
    for (did, widx) in sorted(gold_windows):
        pred_by_dlg[did].append(pred_windows[(did, widx)])
        gold_by_dlg[did].append(gold_windows[(did, widx)])
    dialogue_counts = eval_dialogues(dict(pred_by_dlg), dict(gold_by_dlg), schema)

    return EvalReport(cells={"window": window_counts, "dialogue": dialogue_counts})
