"""Answer metrics and graph quality metrics.

Answer metrics (hits@1, precision/recall/F1, exact-set accuracy) operate on
normalized answer strings with set semantics and are macro-averaged per
question. Graph quality metrics score a triple set against a question:
relevance (query-triple embedding similarity), semantic richness (triple
plausibility under a pluggable scorer), and redundancy (relation similarity
within same-endpoint groups). Each metric reports both the raw sum and the
size-comparable mean; thresholds elsewhere bind to the mean.
"""

from __future__ import annotations

import csv
import math
from dataclasses import dataclass, field
from pathlib import Path
from typing import Callable, Mapping, Sequence

import numpy as np

from .answering import AnswerSet, normalize_all
from .embedding import EmbeddingCache, EmbeddingProvider, embed_batch, similarity
from .graph import Triple, group_by_endpoints, relation_text, textualize_triple

TripleScorer = Callable[[Triple], float]


@dataclass(frozen=True)
class MetricValue:
    mean: float
    total: float


@dataclass(frozen=True)
class RedundancyResult:
    mean: float
    total: float
    groups: int
    pairs: int


@dataclass(frozen=True)
class PRF1:
    precision: float
    recall: float
    f1: float
    exact: int


def _as_normalized(pred: AnswerSet | Sequence[str], ascii_fold: bool = False) -> list[str]:
    values = pred.answers if isinstance(pred, AnswerSet) else list(pred)
    return normalize_all(values, ascii_fold)


def hits_at_1(pred: AnswerSet | Sequence[str], gold: Sequence[str], ascii_fold: bool = False) -> int:
    """1 iff any normalized prediction equals any normalized gold answer."""
    if not gold:
        raise ValueError("gold answer set must be non-empty")
    predicted = set(_as_normalized(pred, ascii_fold))
    return int(any(g in predicted for g in normalize_all(gold, ascii_fold)))


def prf1(pred: AnswerSet | Sequence[str], gold: Sequence[str], ascii_fold: bool = False) -> PRF1:
    """Set precision/recall/F1 over normalized answers; empty predictions score zero."""
    if not gold:
        raise ValueError("gold answer set must be non-empty")
    pred_set = set(_as_normalized(pred, ascii_fold))
    gold_set = set(normalize_all(gold, ascii_fold))
    overlap = len(pred_set & gold_set)
    precision = overlap / len(pred_set) if pred_set else 0.0
    recall = overlap / len(gold_set) if gold_set else 0.0
    f1 = 2 * precision * recall / (precision + recall) if precision + recall > 0 else 0.0
    return PRF1(precision=precision, recall=recall, f1=f1, exact=int(pred_set == gold_set))


@dataclass
class EvalReport:
    per_question: dict[str, dict] = field(default_factory=dict)
    hits1: float = 0.0
    f1: float = 0.0
    precision: float = 0.0
    recall: float = 0.0
    acc: float = 0.0
    n: int = 0
    notes: tuple[str, ...] = (
        "f1/precision/recall are macro-averaged per question",
        "acc is the exact-set-match rate",
    )

    def to_dict(self) -> dict:
        return {
            "hits1": self.hits1,
            "f1": self.f1,
            "precision": self.precision,
            "recall": self.recall,
            "acc": self.acc,
            "n": self.n,
            "per_question": self.per_question,
            "notes": list(self.notes),
        }


def build_eval_report(
    rows: Mapping[str, tuple[AnswerSet | Sequence[str], Sequence[str]]],
    ascii_fold: bool = False,
) -> EvalReport:
    """Per-question metrics plus means, reduced in ascending question-id order."""
    report = EvalReport()
    for qid in sorted(rows):
        pred, gold = rows[qid]
        scores = prf1(pred, gold, ascii_fold)
        report.per_question[qid] = {
            "hit": hits_at_1(pred, gold, ascii_fold),
            "precision": scores.precision,
            "recall": scores.recall,
            "f1": scores.f1,
            "exact": scores.exact,
        }
    report.n = len(report.per_question)
    if report.n:
        report.hits1 = sum(e["hit"] for e in report.per_question.values()) / report.n
        report.precision = sum(e["precision"] for e in report.per_question.values()) / report.n
        report.recall = sum(e["recall"] for e in report.per_question.values()) / report.n
        report.f1 = sum(e["f1"] for e in report.per_question.values()) / report.n
        report.acc = sum(e["exact"] for e in report.per_question.values()) / report.n
    return report


class ConstantScorer:
    """Stub plausibility scorer returning a fixed value in [0, 1]."""

    def __init__(self, value: float = 0.7):
        if not 0.0 <= value <= 1.0:
            raise ValueError("score must be within [0, 1]")
        self.value = value

    def __call__(self, triple: Triple) -> float:
        return self.value


class RemoteKGCScorer:
    """HTTP plausibility scorer: {"input": [triple text]} -> {"data": [{"score": f}]}."""

    def __init__(self, endpoint: str, timeout: float = 60.0, session=None):
        self.endpoint = endpoint
        self.timeout = timeout
        if session is None:
            import requests

            session = requests.Session()
        self._session = session

    def __call__(self, triple: Triple) -> float:
        resp = self._session.post(self.endpoint, json={"input": [textualize_triple(triple)]}, timeout=self.timeout)
        resp.raise_for_status()
        return float(resp.json()["data"][0]["score"])


def relevance_score(
    question: str,
    triples: Sequence[Triple],
    provider: EmbeddingProvider,
    cache: EmbeddingCache | None = None,
) -> MetricValue:
    """Similarity between the question and each triple's text; mean plus raw sum."""
    triples = list(triples)
    if not triples:
        raise ValueError("relevance needs a non-empty graph")
    vectors = embed_batch([question] + [textualize_triple(t) for t in triples], provider, cache)
    question_vec = vectors[0]
    total = 0.0
    for vec in vectors[1:]:
        total += similarity(question_vec, vec)
    return MetricValue(mean=total / len(triples), total=total)


def semantic_richness(
    triples: Sequence[Triple],
    scorer: TripleScorer,
    positive_threshold: float | None = None,
) -> MetricValue:
    """Mean plausibility over the graph; with a threshold, only triples scoring
    at or above it contribute (the sum keeps the graph size as denominator)."""
    triples = list(triples)
    if not triples:
        raise ValueError("semantic richness needs a non-empty graph")
    total = 0.0
    for t in triples:
        score = float(scorer(t))
        if not 0.0 <= score <= 1.0 or math.isnan(score):
            raise ValueError(f"scorer returned {score!r}, outside [0, 1]")
        if positive_threshold is not None and score < positive_threshold:
            continue
        total += score
    return MetricValue(mean=total / len(triples), total=total)


def redundancy_score(
    triples: Sequence[Triple],
    provider: EmbeddingProvider,
    mode: str = "head_and_tail",
    cache: EmbeddingCache | None = None,
) -> RedundancyResult:
    """Mean relation-text similarity over unordered within-group pairs.

    Groups share the selected endpoints; graphs with no multi-member group
    score 0 by definition.
    """
    triples = list(triples)
    groups = group_by_endpoints(triples, mode)
    relation_texts = sorted({relation_text(t.relation.name) for t in triples})
    vectors = embed_batch(relation_texts, provider, cache)
    vec_by_text = dict(zip(relation_texts, vectors))
    total = 0.0
    pairs = 0
    for group in groups:
        for i in range(len(group)):
            for j in range(i + 1, len(group)):
                a = vec_by_text[relation_text(group[i].relation.name)]
                b = vec_by_text[relation_text(group[j].relation.name)]
                total += similarity(a, b)
                pairs += 1
    mean = total / pairs if pairs else 0.0
    return RedundancyResult(mean=mean, total=total, groups=len(groups), pairs=pairs)


@dataclass
class GraphQualityReport:
    dataset: str
    variant: str
    relevance: MetricValue
    semantic_richness: MetricValue
    redundancy: RedundancyResult
    triples: int
    embeddings: list[list[float]] | None = None
    texts: list[str] | None = None


def graph_quality(
    question: str,
    triples: Sequence[Triple],
    provider: EmbeddingProvider,
    scorer: TripleScorer,
    dataset: str = "",
    variant: str = "",
    mode: str = "head_and_tail",
    cache: EmbeddingCache | None = None,
    positive_threshold: float | None = None,
    with_embeddings: bool = False,
) -> GraphQualityReport:
    """All three quality metrics for one question's graph."""
    triples = list(triples)
    report = GraphQualityReport(
        dataset=dataset,
        variant=variant,
        relevance=relevance_score(question, triples, provider, cache),
        semantic_richness=semantic_richness(triples, scorer, positive_threshold),
        redundancy=redundancy_score(triples, provider, mode, cache),
        triples=len(triples),
    )
    if with_embeddings:
        texts = [textualize_triple(t) for t in triples]
        report.texts = texts
        report.embeddings = [[float(x) for x in v] for v in embed_batch(texts, provider, cache)]
    return report


def _slug(value: str) -> str:
    cleaned = "".join(ch if ch.isalnum() or ch in "._-" else "_" for ch in value)
    return cleaned or "default"


def export_quality_report(reports: Sequence[GraphQualityReport], out_dir: str | Path) -> list[Path]:
    """Write quality.csv plus, per report carrying embeddings, an embedding dump
    and the full pairwise Euclidean distance list (C(n,2) rows)."""
    out_dir = Path(out_dir)
    out_dir.mkdir(parents=True, exist_ok=True)
    written = []
    quality_path = out_dir / "quality.csv"
    with quality_path.open("w", newline="", encoding="utf-8") as fh:
        writer = csv.writer(fh)
        writer.writerow(["dataset", "variant", "relevance", "semanticRichness", "redundancy"])
        for report in reports:
            writer.writerow(
                [
                    report.dataset,
                    report.variant,
                    f"{report.relevance.mean:.6f}",
                    f"{report.semantic_richness.mean:.6f}",
                    f"{report.redundancy.mean:.6f}",
                ]
            )
    written.append(quality_path)
    for report in reports:
        if report.embeddings is None:
            continue
        stem = f"{_slug(report.dataset)}_{_slug(report.variant)}"
        emb_path = out_dir / f"embeddings_{stem}.csv"
        with emb_path.open("w", newline="", encoding="utf-8") as fh:
            writer = csv.writer(fh)
            writer.writerow(["index", "text", "values"])
            for i, vec in enumerate(report.embeddings):
                text = report.texts[i] if report.texts else ""
                writer.writerow([i, text, " ".join(f"{x:.8g}" for x in vec)])
        written.append(emb_path)
        dist_path = out_dir / f"distances_{stem}.csv"
        with dist_path.open("w", newline="", encoding="utf-8") as fh:
            writer = csv.writer(fh)
            writer.writerow(["i", "j", "distance"])
            arrays = [np.asarray(v, dtype=np.float64) for v in report.embeddings]
            for i in range(len(arrays)):
                for j in range(i + 1, len(arrays)):
                    writer.writerow([i, j, f"{float(np.linalg.norm(arrays[i] - arrays[j])):.8g}"])
        written.append(dist_path)
    return written
