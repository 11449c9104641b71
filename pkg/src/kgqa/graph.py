"""Immutable knowledge-graph storage: endpoint indices, paths, textualization.

Graphs are built once from triple records (JSON array-of-arrays or TSV) and
never mutated afterwards, so they are safe to share across worker threads.
"""

from __future__ import annotations

import json
import re
from dataclasses import dataclass, field
from typing import Iterable, Iterator, Sequence

GROUP_MODES = ("head", "tail", "head_and_tail")

_SEPARATORS = re.compile(r"[._]+")


class GraphLoadError(ValueError):
    """A triple record could not be turned into a Triple."""

    def __init__(self, message: str, line: int | None = None):
        if line is not None:
            message = f"line {line}: {message}"
        super().__init__(message)
        self.line = line


@dataclass(frozen=True)
class EntityRef:
    """Entity identified by an opaque id (Freebase MID or surface name).

    Equality is by id only; the optional label never participates.
    """

    id: str
    label: str | None = field(default=None, compare=False)

    def __post_init__(self) -> None:
        if not self.id:
            raise ValueError("entity id must be non-empty")

    @property
    def display(self) -> str:
        return self.label if self.label else self.id


@dataclass(frozen=True)
class Relation:
    """Relation name; dotted-path style such as 'location.country.currency_used' is allowed."""

    name: str

    def __post_init__(self) -> None:
        if not self.name or self.name != self.name.strip():
            raise ValueError(f"relation name must be non-empty with no surrounding whitespace: {self.name!r}")

    @property
    def text(self) -> str:
        """Surface text: dot and underscore separators become single spaces."""
        return relation_text(self.name)


def relation_text(name: str) -> str:
    return _SEPARATORS.sub(" ", name).strip()


@dataclass(frozen=True)
class Triple:
    """One (subject, relation, object) fact.

    index is the ordinal position within the owning graph; equality ignores it.
    """

    subject: EntityRef
    relation: Relation
    object: EntityRef
    index: int = field(default=0, compare=False)

    def __post_init__(self) -> None:
        if self.index < 0:
            raise ValueError("triple index must be >= 0")

    @property
    def key(self) -> tuple[str, str, str]:
        return (self.subject.id, self.relation.name, self.object.id)


@dataclass(frozen=True)
class Path:
    """A 1-hop or 2-hop chain; for 2 hops the first object equals the second subject."""

    hops: tuple[Triple, ...]
    join_entity: EntityRef | None = None

    def __post_init__(self) -> None:
        if len(self.hops) not in (1, 2):
            raise ValueError("a path has 1 or 2 hops")
        if len(self.hops) == 2 and self.hops[0].object.id != self.hops[1].subject.id:
            raise ValueError("2-hop path must join on a shared entity")


class KnowledgeGraph:
    """Ordered, deduplicated triples plus subject/object indices."""

    __slots__ = ("triples", "by_subject", "by_object")

    def __init__(self, triples: Sequence[Triple]):
        self.triples: tuple[Triple, ...] = tuple(triples)
        by_subject: dict[str, list[int]] = {}
        by_object: dict[str, list[int]] = {}
        for t in self.triples:
            by_subject.setdefault(t.subject.id, []).append(t.index)
            by_object.setdefault(t.object.id, []).append(t.index)
        self.by_subject: dict[str, tuple[int, ...]] = {k: tuple(v) for k, v in by_subject.items()}
        self.by_object: dict[str, tuple[int, ...]] = {k: tuple(v) for k, v in by_object.items()}

    def __len__(self) -> int:
        return len(self.triples)

    def __iter__(self) -> Iterator[Triple]:
        return iter(self.triples)

    def __getitem__(self, index: int) -> Triple:
        return self.triples[index]

    def entity_ids(self) -> set[str]:
        return set(self.by_subject) | set(self.by_object)


def load_graph(records: Iterable[Sequence[str]]) -> KnowledgeGraph:
    """Build a graph from (s, r, o) records, keeping input order and dropping duplicates.

    Raises GraphLoadError with a 1-based record number on malformed input.
    Empty input yields an empty graph.
    """
    triples: list[Triple] = []
    seen: set[tuple[str, str, str]] = set()
    for lineno, record in enumerate(records, start=1):
        if isinstance(record, str) or len(record) != 3:
            raise GraphLoadError(f"expected 3 fields, got {record!r}", line=lineno)
        s, r, o = record
        if not all(isinstance(x, str) for x in (s, r, o)):
            raise GraphLoadError(f"non-string field in {record!r}", line=lineno)
        r = r.strip()
        if not (s and r and o):
            raise GraphLoadError(f"empty field in {record!r}", line=lineno)
        key = (s, r, o)
        if key in seen:
            continue
        seen.add(key)
        try:
            triples.append(Triple(EntityRef(s), Relation(r), EntityRef(o), index=len(triples)))
        except ValueError as exc:
            raise GraphLoadError(str(exc), line=lineno) from exc
    return KnowledgeGraph(triples)


def load_json_graph(text: str) -> KnowledgeGraph:
    """Load from a JSON array of [s, r, o] arrays."""
    try:
        data = json.loads(text)
    except json.JSONDecodeError as exc:
        raise GraphLoadError(f"invalid JSON: {exc}") from exc
    if not isinstance(data, list):
        raise GraphLoadError("top-level JSON value must be an array of triples")
    return load_graph(data)


def load_tsv_graph(text: str) -> KnowledgeGraph:
    """Load from tab-separated lines, one triple per line; blank lines are ignored."""
    records = [line.split("\t") for line in text.splitlines() if line.strip()]
    return load_graph(records)


def textualize_triple(t: Triple) -> str:
    """Natural-language form: 'subject relation object' with relation separators spaced out."""
    return f"{t.subject.display} {t.relation.text} {t.object.display}"


def extract_paths(g: KnowledgeGraph, max_hops: int) -> list[Path]:
    """All 1-hop paths, plus (for max_hops=2) all ordered triple pairs joined object-to-subject.

    2-hop paths are ordered by (first.index, second.index).
    """
    if max_hops not in (1, 2):
        raise ValueError("max_hops must be 1 or 2")
    paths = [Path((t,)) for t in g]
    if max_hops == 2:
        for t1 in g:
            for t2 in g.by_subject.get(t1.object.id, ()):
                paths.append(Path((t1, g[t2]), join_entity=t1.object))
    return paths


def group_by_endpoints(g: KnowledgeGraph | Sequence[Triple], mode: str = "head_and_tail") -> list[list[Triple]]:
    """Partition triples by the selected endpoint key, groups in first-occurrence order."""
    if mode not in GROUP_MODES:
        raise ValueError(f"mode must be one of {GROUP_MODES}")
    groups: dict[object, list[Triple]] = {}
    for t in g:
        if mode == "head":
            key: object = t.subject.id
        elif mode == "tail":
            key = t.object.id
        else:
            key = (t.subject.id, t.object.id)
        groups.setdefault(key, []).append(t)
    return list(groups.values())
