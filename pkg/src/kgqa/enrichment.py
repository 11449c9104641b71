"""Graph enrichment: prompt construction and constrained-output parsing.

The structural prompt pairs each kept triple with its graph query and any
decomposition queries whose embedding similarity to that graph query exceeds
a threshold, then lists the 1-hop and 2-hop paths of the kept subgraph. The
feature prompt gives each distinct entity its incident triples and associated
queries. Provider outputs are parsed back into provenance-tagged triples;
malformed lines degrade to warnings rather than failures.
"""

from __future__ import annotations

import logging
import re
from dataclasses import dataclass, field, replace
from enum import Enum
from typing import TYPE_CHECKING, Sequence

from .embedding import EmbeddingCache, EmbeddingProvider, embed_batch, similarity
from .gateway import PromptTemplate, render_template, user_request
from .graph import EntityRef, KnowledgeGraph, Relation, Triple, extract_paths
from .pruning import PrunedGraph
from .queries import Quadruple

if TYPE_CHECKING:
    from .gateway import Gateway

logger = logging.getLogger(__name__)

QUERY_FILTER_TEMPLATE_NAME = "query_filter"


class Provenance(Enum):
    ORIGINAL = "original"
    SIMILARITY = "similarity"
    SYMMETRY = "symmetry"
    TRANSITIVITY = "transitivity"
    HIERARCHY = "hierarchy"


ONTOLOGY_RELATIONS = frozenset(
    {
        "Hypernym_isA",
        "Hypernym_locateAt",
        "Hypernym_mannerOf",
        "Induction_belongTo",
        "Inclusion_isPartOf",
        "Inclusion_madeOf",
        "Inclusion_derivedFrom",
        "Inclusion_hasContext",
    }
)

FINAL_OUTPUT_MARKER = "Final output:"

_MARKUP_LINE_RE = re.compile(r"\{[^{}]*\}")
_TRIPLE_PATTERN_RE = re.compile(r"\(([^()\n]*)\)")
_PROVENANCE_KEYWORD_RE = re.compile(r"similarity|symmetry|transitivity", re.IGNORECASE)


@dataclass(frozen=True)
class EnrichedTriple:
    triple: Triple
    provenance: Provenance
    source_indices: tuple[int, ...] = ()
    grounded: bool = True


@dataclass
class StructuralParse:
    triples: list[EnrichedTriple] = field(default_factory=list)
    skipped: int = 0


@dataclass
class FeatureParse:
    triples: list[EnrichedTriple] = field(default_factory=list)
    rejected: int = 0


@dataclass
class EnrichedGraph:
    """Pruned base plus deduplicated generated triples, in generation order."""

    base: PrunedGraph
    generated: list[EnrichedTriple] = field(default_factory=list)
    structural_skipped: int = 0
    feature_rejected: int = 0

    def merged_triples(self) -> list[Triple]:
        return [st.triple for st in self.base.kept] + [et.triple for et in self.generated]


def format_triple_compact(t: Triple) -> str:
    return f"({t.subject.display},{t.relation.name},{t.object.display})"


def _split_triple_line(line: str) -> tuple[str, str, str] | None:
    if not (line.startswith("(") and line.endswith(")")):
        return None
    parts = line[1:-1].split(",")
    if len(parts) != 3:
        return None
    s, r, o = (p.strip() for p in parts)
    if not (s and r and o):
        return None
    return s, r, o


def associate_queries(
    quads: Sequence[Quadruple],
    queries: Sequence[str],
    provider: EmbeddingProvider,
    cache: EmbeddingCache | None = None,
    tau: float = 0.3,
) -> list[list[str]]:
    """Per quadruple: its own graph query first, then every decomposition query
    whose similarity to the graph query strictly exceeds tau."""
    graph_queries = [q.graph_query for q in quads]
    vectors = embed_batch(list(queries) + graph_queries, provider, cache)
    query_vecs = vectors[: len(queries)]
    out = []
    for i, quad in enumerate(quads):
        gq_vec = vectors[len(queries) + i]
        matched = [q for q, qv in zip(queries, query_vecs) if similarity(qv, gq_vec) > tau]
        line = [quad.graph_query] + [q for q in matched if q != quad.graph_query]
        out.append(line)
    return out


def build_query_filter_prompt(quads: Sequence[Quadruple], queries: Sequence[str]) -> str:
    """Prompt asking the provider which user questions relate to each fact query."""
    lines = [
        "You match fact queries against user questions.",
        "Facts:",
    ]
    for i, quad in enumerate(quads, start=1):
        lines.append(f"{i}. {quad.graph_query}")
    lines.append("Questions:")
    for j, query in enumerate(queries, start=1):
        lines.append(f"{j}. {query}")
    lines.append(
        "For each fact output exactly one line of the form "
        "'<fact number>: <comma-separated question numbers>', using 'none' when no question relates."
    )
    return "\n".join(lines)


_FILTER_LINE_RE = re.compile(r"^\s*(\d+)\s*:\s*(.*)$")


def parse_query_filter_output(raw: str, n_facts: int, queries: Sequence[str]) -> list[list[str]] | None:
    """Parse '<fact>: <question numbers>' lines; None when nothing parseable (degraded)."""
    mapping: dict[int, list[str]] = {}
    for line in raw.splitlines():
        match = _FILTER_LINE_RE.match(line)
        if not match:
            continue
        fact = int(match.group(1))
        if not 1 <= fact <= n_facts:
            continue
        selected: list[str] = []
        body = match.group(2).strip()
        if body.lower() != "none":
            for token in re.split(r"[,\s]+", body):
                if token.isdigit() and 1 <= int(token) <= len(queries):
                    query = queries[int(token) - 1]
                    if query not in selected:
                        selected.append(query)
        mapping[fact] = selected
    if not mapping:
        return None
    return [mapping.get(i + 1, []) for i in range(n_facts)]


def associate_queries_via_provider(
    quads: Sequence[Quadruple],
    queries: Sequence[str],
    gateway: "Gateway",
    question_id: str | None = None,
    temperature: float = 0.2,
) -> list[list[str]] | None:
    """Provider-driven relevance filtering; one extra call, for fidelity experiments.

    Returns None when the provider output is unusable so callers can fall back
    to the embedder-based association.
    """
    prompt = build_query_filter_prompt(quads, queries)
    response = gateway.complete(
        user_request(prompt, temperature=temperature, template=QUERY_FILTER_TEMPLATE_NAME, question_id=question_id)
    )
    parsed = parse_query_filter_output(response.content, len(quads), queries)
    if parsed is None:
        logger.warning("question %s: unusable query-filter output, falling back to embedder association", question_id)
        return None
    return [
        [quad.graph_query] + [q for q in selected if q != quad.graph_query]
        for quad, selected in zip(quads, parsed)
    ]


def _payload(pruned: PrunedGraph, payload_cap: int | None) -> list:
    kept = list(pruned.kept)
    if payload_cap is not None and payload_cap >= 0:
        kept = kept[:payload_cap]
    return kept


def payload_subgraph(pruned: PrunedGraph, payload_cap: int | None = None) -> KnowledgeGraph:
    """Kept triples (optionally capped), re-indexed in kept order for path extraction."""
    kept = _payload(pruned, payload_cap)
    return KnowledgeGraph(
        [replace(st.triple, index=i) for i, st in enumerate(kept)]
    )


def filter_and_build_structural_prompt(
    pruned: PrunedGraph,
    quads: Sequence[Quadruple],
    queries: Sequence[str],
    template: PromptTemplate,
    provider: EmbeddingProvider,
    cache: EmbeddingCache | None = None,
    tau: float = 0.3,
    payload_cap: int | None = 60,
    associations: Sequence[Sequence[str]] | None = None,
) -> str:
    """Build the structural-enrichment prompt over the kept triples.

    quads must cover every kept triple (aligned by triple index). By default
    relevance filtering is embedder-local so it costs no provider call;
    precomputed associations (one list per payload triple) override it.
    """
    if not pruned.kept:
        raise ValueError("pruned graph must be non-empty")
    quad_by_index = {q.triple.index: q for q in quads}
    kept = _payload(pruned, payload_cap)
    try:
        payload_quads = [quad_by_index[st.triple.index] for st in kept]
    except KeyError as exc:
        raise ValueError(f"no quadruple for kept triple index {exc.args[0]}") from exc
    if associations is None:
        associations = associate_queries(payload_quads, queries, provider, cache, tau)
    elif len(associations) != len(payload_quads):
        raise ValueError(f"{len(associations)} associations for {len(payload_quads)} payload triples")
    lines = []
    for quad, assoc in zip(payload_quads, associations):
        queries_part = "".join(f"-{q}" for q in assoc)
        lines.append(f"{format_triple_compact(quad.triple)}{queries_part}")
    paths = extract_paths(payload_subgraph(pruned, payload_cap), max_hops=2)
    one_hop = [format_triple_compact(p.hops[0]) for p in paths if len(p.hops) == 1]
    two_hop = ["->".join(format_triple_compact(h) for h in p.hops) for p in paths if len(p.hops) == 2]
    return render_template(
        template,
        {
            "quadruples": "\n".join(lines),
            "1-hop path": "\n".join(one_hop),
            "2-hop path": "\n".join(two_hop),
        },
    )


def _provenance_map(text: str) -> dict[tuple[str, str, str], Provenance]:
    """Best-effort mapping from triples mentioned in the reasoning region to the
    nearest preceding property keyword."""
    keywords = [(m.start(), m.group(0).lower()) for m in _PROVENANCE_KEYWORD_RE.finditer(text)]
    mapping: dict[tuple[str, str, str], Provenance] = {}
    for match in _TRIPLE_PATTERN_RE.finditer(text):
        fields = _split_triple_line(match.group(0))
        if fields is None:
            continue
        kind = Provenance.SIMILARITY
        for pos, word in keywords:
            if pos > match.start():
                break
            kind = Provenance(word)
        mapping[fields] = kind
    return mapping


def parse_structural_output(raw: str) -> StructuralParse:
    """Parse generated triples from the region after the last 'Final output:' marker.

    Without the marker the whole text is scanned. Markup-tag lines such as
    '{/thought}' are ignored; other non-triple lines count as skipped.
    """
    idx = raw.rfind(FINAL_OUTPUT_MARKER)
    region = raw[idx + len(FINAL_OUTPUT_MARKER):] if idx >= 0 else raw
    preamble = raw[:idx] if idx >= 0 else ""
    provenance = _provenance_map(preamble)
    result = StructuralParse()
    for line in region.splitlines():
        stripped = line.strip()
        if not stripped or _MARKUP_LINE_RE.fullmatch(stripped):
            continue
        fields = _split_triple_line(stripped)
        if fields is None:
            result.skipped += 1
            continue
        s, r, o = fields
        triple = Triple(EntityRef(s), Relation(r), EntityRef(o), index=len(result.triples))
        result.triples.append(
            EnrichedTriple(triple=triple, provenance=provenance.get(fields, Provenance.SIMILARITY))
        )
    return result


@dataclass
class EntityContext:
    entity: EntityRef
    triples: list[Triple] = field(default_factory=list)
    queries: list[str] = field(default_factory=list)


def collect_entity_contexts(
    triples: Sequence[Triple],
    associations: Sequence[Sequence[str]],
) -> list[EntityContext]:
    """One context per distinct endpoint entity, in first-occurrence order.

    associations[i] holds the queries paired with triples[i]; an entity
    inherits the queries of every incident triple, deduplicated in order.
    """
    contexts: dict[str, EntityContext] = {}
    for t, assoc in zip(triples, associations):
        for entity in (t.subject, t.object):
            ctx = contexts.get(entity.id)
            if ctx is None:
                ctx = EntityContext(entity=entity)
                contexts[entity.id] = ctx
            ctx.triples.append(t)
            for q in assoc:
                if q not in ctx.queries:
                    ctx.queries.append(q)
    return list(contexts.values())


def build_feature_prompt(contexts: Sequence[EntityContext], template: PromptTemplate) -> str:
    """Render the feature-enrichment prompt, one context block per entity."""
    if not contexts:
        raise ValueError("entity list must be non-empty")
    blocks = []
    for ctx in contexts:
        name = ctx.entity.display
        triples = "-".join(format_triple_compact(t) for t in ctx.triples)
        queries = "-".join(ctx.queries)
        blocks.append(
            f"[${name}$ context]\n"
            f"relavent triple(s):{triples}\n"
            f"relavent user query(ies):{queries}\n"
            f"[/${name}$ context]"
        )
    return render_template(template, {"entity list": "\n".join(blocks)})


def parse_feature_output(raw: str) -> FeatureParse:
    """Parse ontology triples from the last {result}...{/result} block.

    The middle field must belong to the closed ontology-relation vocabulary;
    anything else increments the rejected count. Without markers the whole
    text is scanned.
    """
    blocks = re.findall(r"\{result\}(.*?)\{/result\}", raw, re.DOTALL)
    region = blocks[-1] if blocks else raw
    result = FeatureParse()
    for line in region.splitlines():
        stripped = line.strip()
        if not stripped or _MARKUP_LINE_RE.fullmatch(stripped):
            continue
        fields = _split_triple_line(stripped)
        if fields is None:
            result.rejected += 1
            continue
        entity, relation, ontology = fields
        if relation not in ONTOLOGY_RELATIONS:
            result.rejected += 1
            continue
        triple = Triple(EntityRef(entity), Relation(relation), EntityRef(ontology), index=len(result.triples))
        result.triples.append(EnrichedTriple(triple=triple, provenance=Provenance.HIERARCHY))
    return result


def merge_enriched(pruned: PrunedGraph, generated: Sequence[EnrichedTriple]) -> EnrichedGraph:
    """Merge generated triples onto the pruned base, deduplicating on (s, r, o).

    Generated triples keep generation order after the base. Each one is
    flagged grounded=False when neither endpoint occurs in the base graph;
    structural triples record the base indices they share an endpoint with.
    """
    base_keys = {st.triple.key for st in pruned.kept}
    base_entities: set[str] = set()
    for st in pruned.kept:
        base_entities.add(st.triple.subject.id)
        base_entities.add(st.triple.object.id)
    seen = set(base_keys)
    next_index = max((st.triple.index for st in pruned.kept), default=-1) + 1
    merged: list[EnrichedTriple] = []
    for et in generated:
        key = et.triple.key
        if key in seen:
            continue
        seen.add(key)
        grounded = et.triple.subject.id in base_entities or et.triple.object.id in base_entities
        if et.provenance is Provenance.HIERARCHY:
            sources: tuple[int, ...] = ()
        else:
            endpoints = {et.triple.subject.id, et.triple.object.id}
            sources = tuple(
                st.triple.index
                for st in pruned.kept
                if st.triple.subject.id in endpoints or st.triple.object.id in endpoints
            )
        merged.append(
            replace(et, triple=replace(et.triple, index=next_index), grounded=grounded, source_indices=sources)
        )
        next_index += 1
    return EnrichedGraph(base=pruned, generated=merged)


def enriched_to_rows(graph: EnrichedGraph) -> dict:
    """JSON-ready view used by the pipeline's enriched artifact."""
    return {
        "base_indices": [st.triple.index for st in graph.base.kept],
        "generated": [
            {
                "s": et.triple.subject.id,
                "r": et.triple.relation.name,
                "o": et.triple.object.id,
                "provenance": et.provenance.value,
                "grounded": et.grounded,
                "sources": list(et.source_indices),
            }
            for et in graph.generated
        ],
        "warnings": {
            "structural_skipped": graph.structural_skipped,
            "feature_rejected": graph.feature_rejected,
        },
    }
