"""Focus-aware multi-channel triple pruning and retrieval diagnostics.

Every triple is rendered three ways, masking the head entity, the tail
entity, or both with a literal "[MASK]" token. Each masked form is scored
against every query in the flattened decomposition by embedding dot product;
a triple's total is the sum over the three channels. The top-K triples by
total form the pruned graph. Summation order is fixed (channels in declared
order, queries in input order) so scores are bit-stable regardless of how
the surrounding pipeline parallelizes questions.
"""

from __future__ import annotations

import math
from dataclasses import dataclass
from enum import Enum
from typing import Iterable, Sequence

from .answering import normalize_answer
from .embedding import EmbeddingCache, EmbeddingProvider, embed_batch, similarity
from .graph import KnowledgeGraph, Triple, textualize_triple

MASK_TOKEN = "[MASK]"


class MaskChannel(Enum):
    HEAD_MASKED = "head_masked"
    TAIL_MASKED = "tail_masked"
    BOTH_MASKED = "both_masked"


CHANNELS: tuple[MaskChannel, ...] = (
    MaskChannel.HEAD_MASKED,
    MaskChannel.TAIL_MASKED,
    MaskChannel.BOTH_MASKED,
)

VANILLA = "vanilla"


@dataclass(frozen=True)
class ScoredTriple:
    triple: Triple
    channel_scores: tuple[float, float, float]
    total_score: float


@dataclass(frozen=True)
class PrunedGraph:
    """Top-K triples in descending total score, ties broken by ascending index."""

    kept: tuple[ScoredTriple, ...]
    k: int
    source_size: int

    @property
    def triples(self) -> list[Triple]:
        return [st.triple for st in self.kept]


def render_masked(t: Triple, channel: MaskChannel) -> str:
    head = MASK_TOKEN if channel in (MaskChannel.HEAD_MASKED, MaskChannel.BOTH_MASKED) else t.subject.display
    tail = MASK_TOKEN if channel in (MaskChannel.TAIL_MASKED, MaskChannel.BOTH_MASKED) else t.object.display
    return f"{head} {t.relation.text} {tail}"


def score_graph(
    g: KnowledgeGraph | Sequence[Triple],
    queries: Sequence[str],
    provider: EmbeddingProvider,
    cache: EmbeddingCache | None = None,
) -> list[ScoredTriple]:
    """Score every triple against every query across the three mask channels."""
    if not queries:
        raise ValueError("at least one query is required")
    triples = list(g)
    masked_texts = [render_masked(t, c) for t in triples for c in CHANNELS]
    vectors = embed_batch(list(queries) + masked_texts, provider, cache)
    query_vecs = vectors[: len(queries)]
    masked_vecs = vectors[len(queries):]
    scored = []
    for i, t in enumerate(triples):
        channel_scores = []
        for j in range(len(CHANNELS)):
            vec = masked_vecs[i * len(CHANNELS) + j]
            acc = 0.0
            for qv in query_vecs:
                acc += similarity(qv, vec)
            channel_scores.append(acc)
        total = channel_scores[0] + channel_scores[1] + channel_scores[2]
        scored.append(ScoredTriple(triple=t, channel_scores=tuple(channel_scores), total_score=total))
    return scored


def select_top_k(scored: Sequence[ScoredTriple], k: int) -> PrunedGraph:
    if k < 1:
        raise ValueError("k must be >= 1")
    ordered = sorted(scored, key=lambda st: (-st.total_score, st.triple.index))
    return PrunedGraph(kept=tuple(ordered[:k]), k=k, source_size=len(scored))


def answer_coverage(pruned: PrunedGraph, gold_answers: Sequence[str], ascii_fold: bool = False) -> float:
    """Fraction of gold answers present as a normalized endpoint of any kept triple."""
    if not gold_answers:
        raise ValueError("gold answer set must be non-empty")
    endpoint_forms: set[str] = set()
    for st in pruned.kept:
        for entity in (st.triple.subject, st.triple.object):
            endpoint_forms.add(normalize_answer(entity.id, ascii_fold))
            if entity.label:
                endpoint_forms.add(normalize_answer(entity.label, ascii_fold))
    found = sum(1 for answer in gold_answers if normalize_answer(answer, ascii_fold) in endpoint_forms)
    return found / len(gold_answers)


def channel_mrr(
    g: KnowledgeGraph | Sequence[Triple],
    queries: Sequence[str],
    answer_indices: Iterable[int],
    channels: Sequence[MaskChannel] | str = VANILLA,
    provider: EmbeddingProvider | None = None,
    cache: EmbeddingCache | None = None,
) -> float:
    """Reciprocal rank of the best-ranked answer triple under the chosen scoring.

    Vanilla mode ranks by similarity between the raw question (queries[0])
    and the unmasked triple text; a channel subset ranks by the masked-channel
    sums restricted to those channels, over all queries.
    """
    answer_set = set(answer_indices)
    if not answer_set:
        raise ValueError("answer triple index set must be non-empty")
    if not queries:
        raise ValueError("at least one query is required")
    if provider is None:
        raise ValueError("an embedding provider is required")
    triples = list(g)
    if channels == VANILLA:
        texts = [textualize_triple(t) for t in triples]
        vectors = embed_batch([queries[0]] + texts, provider, cache)
        qv = vectors[0]
        totals = [similarity(qv, v) for v in vectors[1:]]
    else:
        subset = list(channels)  # type: ignore[arg-type]
        if not subset:
            raise ValueError("channel subset must be non-empty")
        scored = score_graph(triples, queries, provider, cache)
        positions = [CHANNELS.index(c) for c in subset]
        totals = [math.fsum(st.channel_scores[p] for p in positions) for st in scored]
    order = sorted(range(len(triples)), key=lambda i: (-totals[i], triples[i].index))
    for rank, position in enumerate(order, start=1):
        if triples[position].index in answer_set:
            return 1.0 / rank
    return 0.0


def rank_of_triple(totals: Sequence[float], triples: Sequence[Triple], target_index: int) -> int:
    """1-based rank of the triple with the given index under (-score, index) ordering."""
    order = sorted(range(len(triples)), key=lambda i: (-totals[i], triples[i].index))
    for rank, position in enumerate(order, start=1):
        if triples[position].index == target_index:
            return rank
    raise ValueError(f"no triple with index {target_index}")


def channel_contributions(mrr_by_channel: dict) -> dict:
    """Each channel's share of the summed MRR mass."""
    total = sum(mrr_by_channel.values())
    if total == 0:
        return {key: 0.0 for key in mrr_by_channel}
    return {key: value / total for key, value in mrr_by_channel.items()}


def channel_mrr_table(
    g: KnowledgeGraph | Sequence[Triple],
    queries: Sequence[str],
    answer_indices: Iterable[int],
    provider: EmbeddingProvider,
    cache: EmbeddingCache | None = None,
) -> dict[str, float]:
    """Per-question MRR row: vanilla, each single channel, and the combined score."""
    answers = set(answer_indices)
    table = {VANILLA: channel_mrr(g, queries, answers, VANILLA, provider, cache)}
    for channel in CHANNELS:
        table[channel.value] = channel_mrr(g, queries, answers, (channel,), provider, cache)
    table["combined"] = channel_mrr(g, queries, answers, CHANNELS, provider, cache)
    return table
