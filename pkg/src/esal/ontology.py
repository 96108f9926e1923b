"""Label schema (categories, items, statuses) and the flat candidate space.

A label names a (category, item) pair together with an assertion status,
e.g. ``Symptom: heart disease (unknown)``.  The candidate space is the dense
enumeration of every (pair, status) combination; classifier outputs are
indexed by it.
"""
from __future__ import annotations

import json
from dataclasses import dataclass
from importlib import resources
from pathlib import Path


class SchemaError(ValueError):
    """Schema definition violates an invariant (duplicates, empty lists)."""


class LabelParseError(ValueError):
    """A label string does not resolve against the schema."""


@dataclass(frozen=True)
class CandidatePair:
    """A (category, item) pair, both as schema indices."""

    category: int
    item: int


@dataclass(frozen=True)
class Candidate:
    """A fully qualified label: (category, item) pair plus status index."""

    pair: CandidatePair
    status: int

    @property
    def category(self) -> int:
        return self.pair.category

    @property
    def item(self) -> int:
        return self.pair.item


class Schema:
    """Ordered category/item/status vocabularies plus parse-time status aliases.

    Immutable after construction; name lookups are case-sensitive and
    whitespace-trimmed.  Aliases apply only when parsing: canonical
    formatting always uses the full status name.
    """

    def __init__(
        self,
        categories: list[tuple[str, list[str]]],
        statuses: list[str],
        status_aliases: dict[str, str] | None = None,
    ):
        if not categories:
            raise SchemaError("schema has no categories")
        if not statuses:
            raise SchemaError("schema has no statuses")
        cat_names = [name for name, _ in categories]
        if len(set(cat_names)) != len(cat_names):
            raise SchemaError(f"duplicate category names in {cat_names}")
        for name, items in categories:
            if not items:
                raise SchemaError(f"category {name!r} has no items")
            if len(set(items)) != len(items):
                raise SchemaError(f"duplicate item names in category {name!r}")
        if len(set(statuses)) != len(statuses):
            raise SchemaError(f"duplicate status names in {statuses}")
        aliases = dict(status_aliases or {})
        for alias, target in aliases.items():
            if target not in statuses:
                raise SchemaError(f"alias {alias!r} maps to unknown status {target!r}")
            if alias in statuses:
                raise SchemaError(f"alias {alias!r} shadows a real status name")
        self.categories: tuple[tuple[str, tuple[str, ...]], ...] = tuple(
            (name, tuple(items)) for name, items in categories
        )
        self.statuses: tuple[str, ...] = tuple(statuses)
        self.status_aliases: dict[str, str] = aliases
        self._cat_index = {name: i for i, (name, _) in enumerate(self.categories)}
        self._item_index = {
            (ci, item): ii
            for ci, (_, items) in enumerate(self.categories)
            for ii, item in enumerate(items)
        }
        self._status_index = {name: i for i, name in enumerate(self.statuses)}

    # -- lookups ---------------------------------------------------------

    @property
    def num_categories(self) -> int:
        return len(self.categories)

    @property
    def num_statuses(self) -> int:
        return len(self.statuses)

    @property
    def num_pairs(self) -> int:
        return sum(len(items) for _, items in self.categories)

    def category_name(self, ci: int) -> str:
        return self.categories[ci][0]

    def item_name(self, ci: int, ii: int) -> str:
        return self.categories[ci][1][ii]

    def status_name(self, si: int) -> str:
        return self.statuses[si]

    def category_index(self, name: str) -> int:
        try:
            return self._cat_index[name]
        except KeyError:
            raise LabelParseError(f"unknown category {name!r}") from None

    def item_index(self, ci: int, name: str) -> int:
        try:
            return self._item_index[(ci, name)]
        except KeyError:
            cat = self.category_name(ci)
            raise LabelParseError(f"unknown item {name!r} in category {cat!r}") from None

    def status_index(self, name: str) -> int:
        """Resolve a status name, applying the alias table."""
        name = self.status_aliases.get(name, name)
        try:
            return self._status_index[name]
        except KeyError:
            raise LabelParseError(f"unknown status {name!r}") from None

    # -- serialization ---------------------------------------------------

    def to_dict(self) -> dict:
        return {
            "categories": [
                {"name": name, "items": list(items)} for name, items in self.categories
            ],
            "statuses": list(self.statuses),
            "status_aliases": dict(self.status_aliases),
        }

    @classmethod
    def from_dict(cls, obj: dict) -> "Schema":
        try:
            categories = [(c["name"], list(c["items"])) for c in obj["categories"]]
            statuses = list(obj["statuses"])
        except (KeyError, TypeError) as exc:
            raise SchemaError(f"malformed schema object: {exc}") from exc
        return cls(categories, statuses, obj.get("status_aliases"))

    @classmethod
    def from_file(cls, path: str | Path) -> "Schema":
        with open(path, encoding="utf-8") as fh:
            return cls.from_dict(json.load(fh))

    def save(self, path: str | Path) -> None:
        with open(path, "w", encoding="utf-8") as fh:
            json.dump(self.to_dict(), fh, ensure_ascii=False, indent=2)
            fh.write("\n")


class CandidateSpace:
    """Bijection between dense candidate indices and (pair, status) triples.

    Enumeration order is lexicographic by (category, item, status) in schema
    order, so ``index == pair_index * num_statuses + status`` holds for the
    canonical space.  Tests may construct permuted spaces directly.
    """

    def __init__(self, schema: Schema, triples: tuple[Candidate, ...]):
        self.schema = schema
        self.triples = triples
        self._index = {c: i for i, c in enumerate(triples)}
        if len(self._index) != len(triples):
            raise SchemaError("candidate enumeration contains duplicates")
        # Dense pair indexing, category-major.
        self.pairs: tuple[CandidatePair, ...] = tuple(
            CandidatePair(ci, ii)
            for ci, (_, items) in enumerate(schema.categories)
            for ii in range(len(items))
        )
        self._pair_index = {p: i for i, p in enumerate(self.pairs)}

    def __len__(self) -> int:
        return len(self.triples)

    @property
    def size(self) -> int:
        return len(self.triples)

    def index_of(self, candidate: Candidate) -> int:
        return self._index[candidate]

    def candidate_at(self, index: int) -> Candidate:
        return self.triples[index]

    def pair_index(self, pair: CandidatePair) -> int:
        return self._pair_index[pair]

    def category_pair_range(self, ci: int) -> tuple[int, int]:
        """Half-open range of dense pair indices belonging to category ci."""
        start = sum(len(items) for _, items in self.schema.categories[:ci])
        return start, start + len(self.schema.categories[ci][1])


def build_space(schema: Schema) -> CandidateSpace:
    """Enumerate all (category, item, status) triples in deterministic order."""
    triples = tuple(
        Candidate(CandidatePair(ci, ii), si)
        for ci, (_, items) in enumerate(schema.categories)
        for ii in range(len(items))
        for si in range(len(schema.statuses))
    )
    return CandidateSpace(schema, triples)


def parse_label(text: str, schema: Schema) -> Candidate:
    """Parse ``Category: Item (status)`` or ``Category:Item-Status`` labels.

    Whitespace around the three components is ignored; name matching is
    case-sensitive.  Status aliases from the schema apply in both forms.
    """
    raw = text.strip()
    if ":" not in raw:
        raise LabelParseError(f"label {text!r} has no category separator ':'")
    cat_part, rest = raw.split(":", 1)
    ci = schema.category_index(cat_part.strip())
    rest = rest.strip()

    if rest.endswith(")") and "(" in rest:
        # "Item (status)" form; the status sits in the last parenthesis group.
        open_pos = rest.rfind("(")
        item_part = rest[:open_pos].strip()
        status_part = rest[open_pos + 1 : -1].strip()
        si = schema.status_index(status_part)
        ii = schema.item_index(ci, item_part)
        return Candidate(CandidatePair(ci, ii), si)

    # "Item-Status" form.  Status names may themselves contain hyphens, so
    # match the longest known status (or alias) suffix.
    candidates = sorted(
        list(schema.statuses) + list(schema.status_aliases),
        key=len,
        reverse=True,
    )
    for status_name in candidates:
        suffix = "-" + status_name
        if rest.endswith(suffix):
            item_part = rest[: -len(suffix)].strip()
            if not item_part:
                break
            si = schema.status_index(status_name)
            ii = schema.item_index(ci, item_part)
            return Candidate(CandidatePair(ci, ii), si)
    raise LabelParseError(f"label {text!r} has no recognizable status suffix")


def format_label(candidate: Candidate, schema: Schema) -> str:
    """Canonical ``Category: Item (status)`` rendering of a candidate."""
    return "{}: {} ({})".format(
        schema.category_name(candidate.category),
        schema.item_name(candidate.category, candidate.item),
        schema.status_name(candidate.status),
    )


def load_mie_schema() -> Schema:
    """The bundled 4-category schema (45/4/16/6 items, 5 statuses).

    Item names beyond the handful attested in the source material are
    placeholders; only the counts are normative.
    """
    ref = resources.files("esal.data").joinpath("mie_schema.json")
    return Schema.from_dict(json.loads(ref.read_text(encoding="utf-8")))
