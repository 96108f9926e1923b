"""Dialogue data model: loading, windowing, tokenization, and vocabulary.

Corpora are JSONL files, one dialogue per line:

    {"id": "d001",
     "utterances": [{"role": "patient", "text": "..."}, ...],
     "windows": [{"start": 0, "end": 5, "labels": ["Symptom: ... (unknown)"]}]}

Pre-windowed files are used as-is; unwindowed dialogues can be segmented
with :func:`make_windows`.
"""
from __future__ import annotations

import json
from collections import Counter
from dataclasses import dataclass, field
from pathlib import Path

from .ontology import Candidate, LabelParseError, Schema, format_label, parse_label

PAD, UNK, CLS, SEP = "[pad]", "[unk]", "[cls]", "[sep]"
RESERVED = (PAD, UNK, CLS, SEP)
DOCTOR_MARK, PATIENT_MARK = "[doc]", "[pat]"

ROLE_DOCTOR = "doctor"
ROLE_PATIENT = "patient"


class CorpusFormatError(ValueError):
    """Corpus file violates the JSONL dialogue format."""


@dataclass(frozen=True)
class Utterance:
    role: str  # ROLE_DOCTOR or ROLE_PATIENT
    text: str


@dataclass(frozen=True)
class Window:
    """A half-open utterance span [start, end) and its gold label set."""

    dialogue_id: str
    window_index: int
    start: int
    end: int
    gold: frozenset[Candidate]


@dataclass
class Dialogue:
    id: str
    utterances: list[Utterance]
    windows: list[Window] = field(default_factory=list)


@dataclass(frozen=True)
class TokenSeq:
    """Encoded token ids with their parallel surface forms.

    Always starts with [cls] and ends with [sep].
    """

    ids: tuple[int, ...]
    tokens: tuple[str, ...]

    def __len__(self) -> int:
        return len(self.ids)


# ---------------------------------------------------------------------------
# Tokenization


def _is_cjk(ch: str) -> bool:
    cp = ord(ch)
    return (
        0x4E00 <= cp <= 0x9FFF
        or 0x3400 <= cp <= 0x4DBF
        or 0xF900 <= cp <= 0xFAFF
    )


def tokenize(text: str) -> list[str]:
    """Rule tokenizer: lowercase, whitespace-split, punctuation and CJK
    codepoints become single-character tokens."""
    out: list[str] = []
    word: list[str] = []

    def flush():
        if word:
            out.append("".join(word))
            word.clear()

    for ch in text.lower():
        if ch.isspace():
            flush()
        elif _is_cjk(ch):
            flush()
            out.append(ch)
        elif not ch.isalnum():
            flush()
            out.append(ch)
        else:
            word.append(ch)
    flush()
    return out


# ---------------------------------------------------------------------------
# Vocabulary


class Vocab:
    """Frozen token → id map with four reserved tokens at ids 0..3."""

    def __init__(self, tokens: list[str]):
        if tuple(tokens[:4]) != RESERVED:
            raise ValueError(f"vocab must start with the reserved tokens {RESERVED}")
        if len(set(tokens)) != len(tokens):
            raise ValueError("vocab contains duplicate tokens")
        self.tokens: tuple[str, ...] = tuple(tokens)
        self._ids = {tok: i for i, tok in enumerate(self.tokens)}

    def __len__(self) -> int:
        return len(self.tokens)

    def id_of(self, token: str) -> int:
        return self._ids.get(token, 1)  # [unk]

    def __contains__(self, token: str) -> bool:
        return token in self._ids

    def token_of(self, idx: int) -> str:
        return self.tokens[idx]


def build_vocab(
    dialogues: list[Dialogue],
    min_freq: int = 1,
    max_size: int | None = None,
    extra_tokens: tuple[str, ...] = (),
) -> Vocab:
    """Frequency vocabulary over the given (training) dialogues.

    Tokens with frequency >= min_freq are kept, most frequent first with ties
    broken lexicographically, truncated to max_size.  ``extra_tokens`` (role
    markers, schema name tokens) are appended afterwards regardless of
    frequency, in the order given.
    """
    counts: Counter[str] = Counter()
    for d in dialogues:
        for utt in d.utterances:
            counts.update(tokenize(utt.text))
    ranked = sorted(counts.items(), key=lambda kv: (-kv[1], kv[0]))
    kept = [tok for tok, freq in ranked if freq >= min_freq]
    if max_size is not None:
        kept = kept[:max_size]
    tokens = list(RESERVED) + kept
    seen = set(tokens)
    for tok in extra_tokens:
        if tok not in seen:
            tokens.append(tok)
            seen.add(tok)
    return Vocab(tokens)


def schema_tokens(schema: Schema) -> tuple[str, ...]:
    """All tokens appearing in schema item and status names (for the vocab)."""
    toks: list[str] = []
    seen: set[str] = set()
    for _, items in schema.categories:
        for item in items:
            for tok in tokenize(item):
                if tok not in seen:
                    toks.append(tok)
                    seen.add(tok)
    for status in schema.statuses:
        for tok in tokenize(status):
            if tok not in seen:
                toks.append(tok)
                seen.add(tok)
    return tuple(toks)


# ---------------------------------------------------------------------------
# Windowing and encoding


def make_windows(dialogue: Dialogue, window_size: int, stride: int) -> list[Window]:
    """Sliding spans [k*stride, k*stride + window_size) clipped to the
    dialogue, keeping the last partial window.  Gold sets are empty."""
    if window_size < 1 or stride < 1:
        raise ValueError("window_size and stride must be >= 1")
    if dialogue.windows:
        raise ValueError(f"dialogue {dialogue.id!r} already has windows")
    n = len(dialogue.utterances)
    spans: list[tuple[int, int]] = []
    k = 0
    while k * stride < n:
        start = k * stride
        end = min(start + window_size, n)
        spans.append((start, end))
        if end == n:
            break
        k += 1
    return [
        Window(dialogue.id, i, start, end, frozenset())
        for i, (start, end) in enumerate(spans)
    ]


def encode_window(
    window: Window, dialogue: Dialogue, vocab: Vocab, max_seq_len: int
) -> TokenSeq:
    """[cls] + (role marker + utterance tokens)* + [sep], truncated from the
    right to max_seq_len with the trailing [sep] preserved."""
    ids = [vocab.id_of(CLS)]
    surface = [CLS]
    for utt in dialogue.utterances[window.start : window.end]:
        mark = DOCTOR_MARK if utt.role == ROLE_DOCTOR else PATIENT_MARK
        ids.append(vocab.id_of(mark))
        surface.append(mark)
        for tok in tokenize(utt.text):
            ids.append(vocab.id_of(tok))
            surface.append(tok)
    ids.append(vocab.id_of(SEP))
    surface.append(SEP)
    if len(ids) > max_seq_len:
        ids = ids[: max_seq_len - 1] + [vocab.id_of(SEP)]
        surface = surface[: max_seq_len - 1] + [SEP]
    return TokenSeq(tuple(ids), tuple(surface))


# ---------------------------------------------------------------------------
# Loading / saving


def _parse_dialogue(obj: dict, schema: Schema) -> Dialogue:
    did = obj.get("id")
    if not isinstance(did, str) or not did:
        raise CorpusFormatError("dialogue record has no string 'id'")
    utterances = []
    for u in obj.get("utterances", []):
        role = str(u.get("role", "")).strip().lower()
        if role not in (ROLE_DOCTOR, ROLE_PATIENT):
            raise CorpusFormatError(f"dialogue {did!r}: bad role {u.get('role')!r}")
        text = str(u.get("text", ""))
        if not text.strip():
            raise CorpusFormatError(f"dialogue {did!r}: empty utterance text")
        utterances.append(Utterance(role, text))
    windows = []
    for wi, w in enumerate(obj.get("windows", [])):
        try:
            start, end = int(w["start"]), int(w["end"])
        except (KeyError, TypeError, ValueError):
            raise CorpusFormatError(f"dialogue {did!r}: window {wi} missing start/end")
        if not (0 <= start < end <= len(utterances)):
            raise CorpusFormatError(
                f"dialogue {did!r}: window {wi} span [{start},{end}) out of range"
            )
        gold = set()
        for label in w.get("labels", []):
            try:
                gold.add(parse_label(label, schema))
            except LabelParseError as exc:
                raise CorpusFormatError(f"dialogue {did!r}: {exc}") from exc
        windows.append(Window(did, wi, start, end, frozenset(gold)))
    windows.sort(key=lambda w: w.start)
    windows = [
        Window(did, i, w.start, w.end, w.gold) for i, w in enumerate(windows)
    ]
    return Dialogue(did, utterances, windows)


def load_corpus(path: str | Path, schema: Schema) -> list[Dialogue]:
    """Load and validate a JSONL corpus; labels resolve against the schema."""
    dialogues = []
    with open(path, encoding="utf-8") as fh:
        for lineno, line in enumerate(fh, start=1):
            if not line.strip():
                continue
            try:
                obj = json.loads(line)
            except json.JSONDecodeError as exc:
                raise CorpusFormatError(f"{path}:{lineno}: malformed JSON ({exc})") from exc
            dialogues.append(_parse_dialogue(obj, schema))
    return dialogues


def save_corpus(dialogues: list[Dialogue], path: str | Path, schema: Schema) -> None:
    """Write a corpus back out in the JSONL format (canonical label strings)."""
    with open(path, "w", encoding="utf-8") as fh:
        for d in dialogues:
            obj = {
                "id": d.id,
                "utterances": [{"role": u.role, "text": u.text} for u in d.utterances],
                "windows": [
                    {
                        "start": w.start,
                        "end": w.end,
                        "labels": sorted(format_label(c, schema) for c in w.gold),
                    }
                    for w in d.windows
                ],
            }
            fh.write(json.dumps(obj, ensure_ascii=False) + "\n")
