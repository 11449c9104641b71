"""Batch pipeline: stage orchestration, artifacts, resume, and diagnostics.

Stages run per question with isolated failures: a record that errors in one
stage is written to that stage's error file and simply has no row for
downstream stages to consume. Stage outputs are JSONL files sorted by
question id, so artifacts are byte-identical across reruns regardless of
worker count; anything timestamped goes to run.log only.

Resume works through per-id row files under rows/<stage>/; deleting a row
file reprocesses exactly that record. Each stage records the content hashes
of the upstream artifacts it consumed; when an upstream artifact changes,
the stage's rows are invalidated and recomputed.
"""

from __future__ import annotations

import csv
import hashlib
import json
import logging
import math
import re
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field, fields
from pathlib import Path
from typing import Mapping, Sequence

from .answering import QARecord, build_qa_prompt, parse_final_answers
from .embedding import EmbeddingCache, EmbeddingProviderSpec, build_embedder
from .enrichment import (
    associate_queries,
    associate_queries_via_provider,
    build_feature_prompt,
    collect_entity_contexts,
    enriched_to_rows,
    filter_and_build_structural_prompt,
    merge_enriched,
    parse_feature_output,
    parse_structural_output,
)
from .evaluation import (
    ConstantScorer,
    EvalReport,
    GraphQualityReport,
    MetricValue,
    RedundancyResult,
    RemoteKGCScorer,
    build_eval_report,
    export_quality_report,
    graph_quality,
)
from .gateway import (
    CostLedger,
    EchoProvider,
    Gateway,
    PriceTable,
    RemoteChatProvider,
    ScriptedStubProvider,
    estimate_tokens,
    load_templates,
    user_request,
)
from .graph import EntityRef, Relation, Triple, load_graph, textualize_triple
from .pruning import PrunedGraph, ScoredTriple, answer_coverage, score_graph, select_top_k
from .queries import Quadruple, decompose, decomposition_to_dict, fallback_graph_query

logger = logging.getLogger(__name__)

STAGES = ("parse", "prune", "enrich", "answer", "eval")

ARTIFACT_KEY = {
    "parse": "parsed",
    "prune": "pruned",
    "enrich": "enriched",
    "answer": "answers",
    "eval": "report",
}

ARTIFACT_FILE = {
    "parse": "parsed.jsonl",
    "prune": "pruned.jsonl",
    "enrich": "enriched.jsonl",
    "answer": "answers.jsonl",
    "eval": "report.json",
}

ABLATIONS = ("full", "no-enrich", "no-prune-no-enrich", "no-structural", "no-feature")

ABLATION_PLAN = {
    "full": ("parse", "prune", "enrich", "answer", "eval"),
    "no-structural": ("parse", "prune", "enrich", "answer", "eval"),
    "no-feature": ("parse", "prune", "enrich", "answer", "eval"),
    "no-enrich": ("parse", "prune", "answer", "eval"),
    "no-prune-no-enrich": ("answer", "eval"),
}

_ID_SAFE_RE = re.compile(r"[^A-Za-z0-9._-]")


class StageError(RuntimeError):
    """A stage could not run at all (missing upstream artifact, bad config)."""


class DatasetError(ValueError):
    """Dataset file violates the record schema."""


@dataclass(frozen=True)
class DatasetRecord:
    id: str
    question: str
    answers: tuple[str, ...]
    topic_entities: tuple[str, ...] = ()
    graph: tuple[tuple[str, str, str], ...] = ()


def load_dataset(path: str | Path) -> list[DatasetRecord]:
    """Load the JSONL dataset; ids must be unique and every record needs answers."""
    records: list[DatasetRecord] = []
    seen: set[str] = set()
    for lineno, line in enumerate(Path(path).read_text(encoding="utf-8").splitlines(), start=1):
        if not line.strip():
            continue
        try:
            obj = json.loads(line)
        except json.JSONDecodeError as exc:
            raise DatasetError(f"line {lineno}: invalid JSON: {exc}") from exc
        try:
            record = dataset_record_from_dict(obj)
        except (KeyError, TypeError, ValueError) as exc:
            raise DatasetError(f"line {lineno}: {exc}") from exc
        if record.id in seen:
            raise DatasetError(f"line {lineno}: duplicate id {record.id!r}")
        seen.add(record.id)
        records.append(record)
    return records


def dataset_record_from_dict(obj: Mapping) -> DatasetRecord:
    record = DatasetRecord(
        id=str(obj["id"]),
        question=str(obj["question"]),
        answers=tuple(str(a) for a in obj["answers"]),
        topic_entities=tuple(str(e) for e in obj.get("topic_entities", [])),
        graph=tuple((str(s), str(r), str(o)) for s, r, o in obj.get("graph", [])),
    )
    if not record.id:
        raise ValueError("record id must be non-empty")
    if not record.answers:
        raise ValueError(f"record {record.id!r} has no answers")
    return record


def write_dataset(records: Sequence[DatasetRecord | Mapping], path: str | Path) -> Path:
    path = Path(path)
    with path.open("w", encoding="utf-8") as fh:
        for record in records:
            if isinstance(record, DatasetRecord):
                obj = {
                    "id": record.id,
                    "question": record.question,
                    "answers": list(record.answers),
                    "topic_entities": list(record.topic_entities),
                    "graph": [list(t) for t in record.graph],
                }
            else:
                obj = dict(record)
            fh.write(_dumps(obj) + "\n")
    return path


@dataclass
class RunConfig:
    """Pipeline configuration; defaults follow the evaluation protocol
    (top k = 300, temperature 0.2, top_p 1, n 1, provider-max tokens)."""

    top_k: int = 300
    temperature: float = 0.2
    stage_temperatures: dict = field(default_factory=dict)
    tau: float = 0.3
    payload_cap: int = 60
    provider_query_filter: bool = False
    ablation: str = "full"
    workers: int = 1
    stages: tuple[str, ...] | None = None
    template_dir: str | None = None
    cache_dir: str | None = None
    ascii_fold: bool = False
    positive_threshold: float | None = None
    redundancy_mode: str = "head_and_tail"
    max_attempts: int = 3
    backoff_base: float = 0.5
    max_in_flight: int | None = None
    llm: dict = field(default_factory=lambda: {"kind": "echo"})
    embedder: dict = field(default_factory=lambda: {"kind": "reference", "dimension": 256})
    kgc: dict = field(default_factory=lambda: {"kind": "constant", "value": 0.7})
    prices: dict = field(default_factory=lambda: {"input_per_token": 1.5e-07, "output_per_token": 6.0e-07})

    def __post_init__(self) -> None:
        if self.top_k < 1:
            raise ValueError("top_k must be >= 1")
        if self.temperature < 0:
            raise ValueError("temperature must be >= 0")
        if not (math.isfinite(self.tau) or self.tau == math.inf):
            raise ValueError("tau must be finite (or +inf to disable query association)")
        if self.ablation not in ABLATIONS:
            raise ValueError(f"ablation must be one of {ABLATIONS}")
        if self.workers < 1:
            raise ValueError("workers must be >= 1")
        if self.stages is not None:
            self.stages = tuple(self.stages)
            for stage in self.stages:
                if stage not in STAGES:
                    raise ValueError(f"unknown stage {stage!r}")

    @classmethod
    def from_dict(cls, payload: Mapping) -> "RunConfig":
        known = {f.name for f in fields(cls)}
        unknown = set(payload) - known
        if unknown:
            raise ValueError(f"unknown config keys: {sorted(unknown)}")
        return cls(**payload)

    @classmethod
    def from_file(cls, path: str | Path) -> "RunConfig":
        return cls.from_dict(json.loads(Path(path).read_text(encoding="utf-8")))

    def price_table(self) -> PriceTable:
        return PriceTable(
            input_per_token=float(self.prices.get("input_per_token", 0.0)),
            output_per_token=float(self.prices.get("output_per_token", 0.0)),
        )

    def temperature_for(self, template_name: str) -> float:
        return float(self.stage_temperatures.get(template_name, self.temperature))

    def plan(self) -> tuple[str, ...]:
        return self.stages if self.stages is not None else ABLATION_PLAN[self.ablation]


def build_llm_provider(config: RunConfig):
    spec = dict(config.llm)
    kind = spec.pop("kind", "echo")
    if kind == "echo":
        return EchoProvider()
    if kind == "stub":
        script = spec.pop("script", {})
        if isinstance(script, str):
            script = json.loads(Path(script).read_text(encoding="utf-8"))
        return ScriptedStubProvider(
            script=script,
            on_missing=spec.pop("on_missing", "error"),
            prompt_hash_script=spec.pop("prompt_hash_script", None),
        )
    if kind == "remote":
        return RemoteChatProvider(
            model=spec.pop("model"),
            endpoint=spec.pop("endpoint", "https://api.openai.com/v1/chat/completions"),
            api_key_env=spec.pop("api_key_env", "OPENAI_API_KEY"),
            timeout=spec.pop("timeout", 120.0),
        )
    raise ValueError(f"unknown llm provider kind: {kind!r}")


def build_scorer(spec: Mapping):
    kind = spec.get("kind", "constant")
    if kind in ("constant", "constant-stub"):
        return ConstantScorer(float(spec.get("value", 0.7)))
    if kind == "remote":
        return RemoteKGCScorer(endpoint=spec["endpoint"], timeout=float(spec.get("timeout", 60.0)))
    raise ValueError(f"unknown kgc scorer kind: {kind!r}")


@dataclass(frozen=True)
class StageArtifact:
    stage: str
    path: Path
    content_hash: str
    processed: int = 0
    failed: int = 0


class PipelineContext:
    """Shared state for a run: providers, templates, cache, ledger, stage dir."""

    def __init__(self, config: RunConfig, stage_dir: str | Path, dataset: Sequence[DatasetRecord]):
        self.config = config
        self.stage_dir = Path(stage_dir)
        self.stage_dir.mkdir(parents=True, exist_ok=True)
        self.dataset = list(dataset)
        _check_filename_collisions(self.dataset)
        self.templates = load_templates(config.template_dir)
        self.embedder = build_embedder(EmbeddingProviderSpec(**config.embedder))
        self.cache = EmbeddingCache()
        if config.cache_dir:
            cache_path = Path(config.cache_dir) / "embeddings.json"
            if cache_path.exists():
                loaded = self.cache.load(cache_path)
                logger.info("loaded %d cached embeddings from %s", loaded, cache_path)
        self.scorer = build_scorer(config.kgc)
        ledger_path = self.stage_dir / "ledger.json"
        if ledger_path.exists():
            self.ledger = CostLedger.from_dict(json.loads(ledger_path.read_text(encoding="utf-8")))
            self.ledger.prices = config.price_table()
        else:
            self.ledger = CostLedger(config.price_table())
        self.gateway = Gateway(
            build_llm_provider(config),
            ledger=self.ledger,
            max_attempts=config.max_attempts,
            backoff_base=config.backoff_base,
            max_in_flight=config.max_in_flight,
        )
        _attach_run_log(self.stage_dir)

    def save_state(self) -> None:
        (self.stage_dir / "ledger.json").write_text(_dumps(self.ledger.to_dict()), encoding="utf-8")
        if self.config.cache_dir:
            cache_dir = Path(self.config.cache_dir)
            cache_dir.mkdir(parents=True, exist_ok=True)
            self.cache.save(cache_dir / "embeddings.json")


def _attach_run_log(stage_dir: Path) -> None:
    """One run-log file handler per process, pointed at the active stage dir."""
    target = str((stage_dir / "run.log").resolve())
    pkg_logger = logging.getLogger("kgqa")
    for handler in list(pkg_logger.handlers):
        if getattr(handler, "_kgqa_run_log", False):
            if handler.baseFilename == target:
                return
            pkg_logger.removeHandler(handler)
            handler.close()
    handler = logging.FileHandler(target, encoding="utf-8")
    handler.setFormatter(logging.Formatter("%(asctime)s %(levelname)s %(name)s: %(message)s"))
    handler._kgqa_run_log = True
    pkg_logger.addHandler(handler)
    if pkg_logger.level == logging.NOTSET:
        pkg_logger.setLevel(logging.INFO)


def _dumps(obj) -> str:
    return json.dumps(obj, ensure_ascii=False, sort_keys=True, separators=(",", ":"))


def _hash_file(path: Path) -> str:
    return hashlib.sha256(path.read_bytes()).hexdigest()


def _safe_id(record_id: str) -> str:
    return _ID_SAFE_RE.sub("_", record_id)


def _check_filename_collisions(dataset: Sequence[DatasetRecord]) -> None:
    by_safe: dict[str, str] = {}
    for record in dataset:
        safe = _safe_id(record.id)
        if safe in by_safe and by_safe[safe] != record.id:
            raise DatasetError(f"ids {by_safe[safe]!r} and {record.id!r} collide as filename {safe!r}")
        by_safe[safe] = record.id


def _manifest_path(ctx: PipelineContext) -> Path:
    return ctx.stage_dir / "manifest.json"


def _load_manifest(ctx: PipelineContext) -> dict:
    path = _manifest_path(ctx)
    if path.exists():
        return json.loads(path.read_text(encoding="utf-8"))
    return {}


def _save_manifest(ctx: PipelineContext, manifest: dict) -> None:
    _manifest_path(ctx).write_text(_dumps(manifest), encoding="utf-8")


def _read_rows(path: Path) -> dict[str, dict]:
    """Parse a JSONL artifact into id -> row; corrupt lines are dropped so only
    the affected record fails downstream."""
    rows: dict[str, dict] = {}
    for lineno, line in enumerate(path.read_text(encoding="utf-8").splitlines(), start=1):
        if not line.strip():
            continue
        try:
            obj = json.loads(line)
            rows[str(obj["id"])] = obj
        except (json.JSONDecodeError, KeyError, TypeError) as exc:
            logger.warning("%s line %d unreadable (%s); the affected record will fail downstream", path, lineno, exc)
    return rows


def stage_upstreams(stage: str, ablation: str) -> tuple[str, ...]:
    if stage == "parse":
        return ()
    if stage == "prune":
        return ("parse",)
    if stage == "enrich":
        return ("parse", "prune")
    if stage == "answer":
        if ablation == "no-prune-no-enrich":
            return ()
        if ablation == "no-enrich":
            return ("prune",)
        return ("prune", "enrich")
    if stage == "eval":
        return ("answer",)
    raise StageError(f"unknown stage {stage!r}")


def _scored_from_row(row: Mapping) -> PrunedGraph:
    kept = tuple(
        ScoredTriple(
            triple=Triple(EntityRef(e["s"]), Relation(e["r"]), EntityRef(e["o"]), index=int(e["index"])),
            channel_scores=tuple(float(x) for x in e["scores"]),
            total_score=float(e["total"]),
        )
        for e in row["kept"]
    )
    return PrunedGraph(kept=kept, k=int(row["k"]), source_size=int(row.get("source_size", len(kept))))


def _generated_from_row(row: Mapping, start_index: int) -> list[Triple]:
    out = []
    for i, g in enumerate(row.get("generated", [])):
        out.append(Triple(EntityRef(g["s"]), Relation(g["r"]), EntityRef(g["o"]), index=start_index + i))
    return out


def _upstream_row(upstream_rows: Mapping[str, dict], stage: str, record_id: str) -> dict:
    row = upstream_rows[stage].get(record_id)
    if row is None:
        raise StageError(f"missing upstream {ARTIFACT_KEY[stage]} row for record {record_id!r}")
    return row


def _parse_record(ctx: PipelineContext, record: DatasetRecord, upstream: Mapping) -> dict:
    decomposition = decompose(
        record.question,
        ctx.gateway,
        ctx.templates["query_structuring"],
        question_id=record.id,
        temperature=ctx.config.temperature_for("query_structuring"),
    )
    return {"id": record.id, "question": record.question, **decomposition_to_dict(decomposition)}


def _prune_record(ctx: PipelineContext, record: DatasetRecord, upstream: Mapping) -> dict:
    parsed = _upstream_row(upstream, "parse", record.id)
    graph = load_graph(record.graph)
    queries = list(parsed["flat"]) or [record.question]
    scored = score_graph(graph, queries, ctx.embedder, ctx.cache)
    pruned = select_top_k(scored, ctx.config.top_k)
    return {
        "id": record.id,
        "k": pruned.k,
        "source_size": pruned.source_size,
        "kept": [
            {
                "s": st.triple.subject.id,
                "r": st.triple.relation.name,
                "o": st.triple.object.id,
                "index": st.triple.index,
                "scores": list(st.channel_scores),
                "total": st.total_score,
            }
            for st in pruned.kept
        ],
    }


def _enrich_record(ctx: PipelineContext, record: DatasetRecord, upstream: Mapping) -> dict:
    parsed = _upstream_row(upstream, "parse", record.id)
    pruned = _scored_from_row(_upstream_row(upstream, "prune", record.id))
    if not pruned.kept:
        return {
            "id": record.id,
            "base_indices": [],
            "generated": [],
            "warnings": {"structural_skipped": 0, "feature_rejected": 0},
        }
    queries = list(parsed["flat"]) or [record.question]
    quads = [Quadruple(fallback_graph_query(st.triple), st.triple) for st in pruned.kept]
    payload = list(pruned.kept[: ctx.config.payload_cap]) if ctx.config.payload_cap else list(pruned.kept)
    payload_quads = quads[: len(payload)]
    associations = None
    if ctx.config.provider_query_filter:
        associations = associate_queries_via_provider(
            payload_quads,
            queries,
            ctx.gateway,
            question_id=record.id,
            temperature=ctx.config.temperature_for("query_filter"),
        )
    if associations is None:
        associations = associate_queries(payload_quads, queries, ctx.embedder, ctx.cache, ctx.config.tau)
    generated = []
    skipped = 0
    rejected = 0
    ablation = ctx.config.ablation
    if ablation != "no-structural":
        prompt = filter_and_build_structural_prompt(
            pruned,
            quads,
            queries,
            template=ctx.templates["structural_enrich"],
            provider=ctx.embedder,
            cache=ctx.cache,
            tau=ctx.config.tau,
            payload_cap=ctx.config.payload_cap,
            associations=associations,
        )
        response = ctx.gateway.complete(
            user_request(
                prompt,
                temperature=ctx.config.temperature_for("structural_enrich"),
                template="structural_enrich",
                question_id=record.id,
            )
        )
        parse = parse_structural_output(response.content)
        generated.extend(parse.triples)
        skipped = parse.skipped
    if ablation != "no-feature":
        contexts = collect_entity_contexts([st.triple for st in payload], associations)
        prompt = build_feature_prompt(contexts, ctx.templates["feature_enrich"])
        response = ctx.gateway.complete(
            user_request(
                prompt,
                temperature=ctx.config.temperature_for("feature_enrich"),
                template="feature_enrich",
                question_id=record.id,
            )
        )
        parse = parse_feature_output(response.content)
        generated.extend(parse.triples)
        rejected = parse.rejected
    merged = merge_enriched(pruned, generated)
    merged.structural_skipped = skipped
    merged.feature_rejected = rejected
    return {"id": record.id, **enriched_to_rows(merged)}


def _answer_record(ctx: PipelineContext, record: DatasetRecord, upstream: Mapping) -> dict:
    ablation = ctx.config.ablation
    if ablation == "no-prune-no-enrich":
        triples = list(load_graph(record.graph))
    elif ablation == "no-enrich":
        triples = _scored_from_row(_upstream_row(upstream, "prune", record.id)).triples
    else:
        pruned = _scored_from_row(_upstream_row(upstream, "prune", record.id))
        enriched_row = _upstream_row(upstream, "enrich", record.id)
        start = max((st.triple.index for st in pruned.kept), default=-1) + 1
        triples = pruned.triples + _generated_from_row(enriched_row, start)
    prompt = build_qa_prompt(record.question, triples, ctx.templates["question_answering"])
    response = ctx.gateway.complete(
        user_request(
            prompt,
            temperature=ctx.config.temperature_for("question_answering"),
            template="question_answering",
            question_id=record.id,
        )
    )
    qa = QARecord(
        id=record.id,
        question=record.question,
        answers=parse_final_answers(response.content),
        gold=list(record.answers),
        used_triples=len(triples),
    )
    return {
        "id": qa.id,
        "question": qa.question,
        "raw": qa.answers.raw,
        "answers": list(qa.answers.answers),
        "gold": list(qa.gold),
        "used_triples": qa.used_triples,
    }


_STAGE_FNS = {
    "parse": _parse_record,
    "prune": _prune_record,
    "enrich": _enrich_record,
    "answer": _answer_record,
}


def run_stage(stage: str, ctx: PipelineContext, resume: bool = True) -> StageArtifact:
    """Run one stage over the dataset, isolating per-record failures.

    Raises StageError when a required upstream artifact is missing entirely.
    """
    if stage not in STAGES:
        raise StageError(f"unknown stage {stage!r}")
    manifest = _load_manifest(ctx)
    upstream_rows: dict[str, dict] = {}
    upstream_hashes: dict[str, str] = {}
    for up in stage_upstreams(stage, ctx.config.ablation):
        key = ARTIFACT_KEY[up]
        path = ctx.stage_dir / ARTIFACT_FILE[up]
        if key not in manifest or not path.exists():
            raise StageError(f"stage '{stage}' requires {key} artifact; run the '{up}' stage first")
        current_hash = _hash_file(path)
        if manifest[key].get("hash") != current_hash:
            logger.warning("%s changed since the '%s' stage completed; downstream rows will be recomputed", path, up)
        upstream_hashes[key] = current_hash
        upstream_rows[up] = _read_rows(path)
    if stage == "eval":
        return _run_eval_stage(ctx, manifest, upstream_rows, upstream_hashes)

    rows_dir = ctx.stage_dir / "rows" / stage
    my_key = ARTIFACT_KEY[stage]
    previous = manifest.get(my_key)
    if rows_dir.exists() and (not resume or (previous is not None and previous.get("upstream") != upstream_hashes)):
        for row_file in rows_dir.glob("*.json"):
            row_file.unlink()
        logger.info("stage %s: cleared cached rows (%s)", stage, "fresh run" if not resume else "upstream changed")
    rows_dir.mkdir(parents=True, exist_ok=True)

    pending = [r for r in ctx.dataset if not (rows_dir / f"{_safe_id(r.id)}.json").exists()]
    errors: list[dict] = []
    fn = _STAGE_FNS[stage]

    def work(record: DatasetRecord) -> dict | None:
        try:
            row = fn(ctx, record, upstream_rows)
        except Exception as exc:
            logger.warning("stage %s: record %s failed: %s", stage, record.id, exc)
            return {"id": record.id, "stage": stage, "error": str(exc)}
        (rows_dir / f"{_safe_id(record.id)}.json").write_text(_dumps(row), encoding="utf-8")
        return None

    if ctx.config.workers > 1 and len(pending) > 1:
        with ThreadPoolExecutor(max_workers=ctx.config.workers) as pool:
            for failure in pool.map(work, pending):
                if failure:
                    errors.append(failure)
    else:
        for record in pending:
            failure = work(record)
            if failure:
                errors.append(failure)

    artifact_path = ctx.stage_dir / ARTIFACT_FILE[stage]
    written = 0
    with artifact_path.open("w", encoding="utf-8") as fh:
        for record in sorted(ctx.dataset, key=lambda r: r.id):
            row_file = rows_dir / f"{_safe_id(record.id)}.json"
            if row_file.exists():
                fh.write(row_file.read_text(encoding="utf-8") + "\n")
                written += 1
    _write_errors(ctx, stage, errors)
    content_hash = _hash_file(artifact_path)
    manifest[my_key] = {"hash": content_hash, "upstream": upstream_hashes}
    _save_manifest(ctx, manifest)
    logger.info("stage %s: %d rows (%d new, %d failed) -> %s", stage, written, len(pending) - len(errors), len(errors), artifact_path)
    return StageArtifact(stage=stage, path=artifact_path, content_hash=content_hash, processed=len(pending) - len(errors), failed=len(errors))


def _write_errors(ctx: PipelineContext, stage: str, errors: list[dict]) -> None:
    errors_dir = ctx.stage_dir / "errors"
    path = errors_dir / f"{stage}.jsonl"
    if not errors:
        if path.exists():
            path.unlink()
        return
    errors_dir.mkdir(parents=True, exist_ok=True)
    with path.open("w", encoding="utf-8") as fh:
        for err in sorted(errors, key=lambda e: e["id"]):
            fh.write(_dumps(err) + "\n")


def _run_eval_stage(
    ctx: PipelineContext,
    manifest: dict,
    upstream_rows: Mapping[str, dict],
    upstream_hashes: Mapping[str, str],
) -> StageArtifact:
    answer_rows = upstream_rows["answer"]
    pairs = {}
    for record in ctx.dataset:
        row = answer_rows.get(record.id)
        if row is None:
            continue
        pairs[record.id] = (row["answers"], row["gold"])
    report = build_eval_report(pairs, ascii_fold=ctx.config.ascii_fold)
    artifact_path = ctx.stage_dir / ARTIFACT_FILE["eval"]
    artifact_path.write_text(_dumps(report.to_dict()), encoding="utf-8")
    content_hash = _hash_file(artifact_path)
    manifest[ARTIFACT_KEY["eval"]] = {"hash": content_hash, "upstream": dict(upstream_hashes)}
    _save_manifest(ctx, manifest)
    logger.info("stage eval: %d questions -> %s", report.n, artifact_path)
    return StageArtifact(stage="eval", path=artifact_path, content_hash=content_hash, processed=report.n)


def run_all(
    config: RunConfig,
    dataset: Sequence[DatasetRecord] | str | Path,
    stage_dir: str | Path,
    resume: bool = True,
) -> tuple[EvalReport, CostLedger]:
    """Run the configured stage plan end to end and return the report and ledger."""
    records = load_dataset(dataset) if isinstance(dataset, (str, Path)) else list(dataset)
    ctx = PipelineContext(config, stage_dir, records)
    for stage in config.plan():
        run_stage(stage, ctx, resume=resume)
    ctx.save_state()
    report_path = ctx.stage_dir / ARTIFACT_FILE["eval"]
    report = EvalReport()
    if report_path.exists():
        payload = json.loads(report_path.read_text(encoding="utf-8"))
        report = EvalReport(
            per_question=payload.get("per_question", {}),
            hits1=payload.get("hits1", 0.0),
            f1=payload.get("f1", 0.0),
            precision=payload.get("precision", 0.0),
            recall=payload.get("recall", 0.0),
            acc=payload.get("acc", 0.0),
            n=payload.get("n", 0),
        )
    return report, ctx.ledger


def sweep_k(
    ctx: PipelineContext,
    ks: Sequence[int],
    out_path: str | Path | None = None,
) -> list[dict]:
    """Coverage, token, and cost figures for each candidate k.

    Uses the parsed decompositions when that artifact exists, otherwise the
    bare question. Tokens are the estimator totals over the textualized kept
    triples; cost applies the configured input rate.
    """
    if not ks or any(k < 1 for k in ks):
        raise ValueError("ks must be non-empty with every k >= 1")
    parsed_path = ctx.stage_dir / ARTIFACT_FILE["parse"]
    parsed_rows = _read_rows(parsed_path) if parsed_path.exists() else {}
    scored_per_question = []
    for record in ctx.dataset:
        graph = load_graph(record.graph)
        row = parsed_rows.get(record.id)
        queries = list(row["flat"]) if row else [record.question]
        scored_per_question.append((score_graph(graph, queries, ctx.embedder, ctx.cache), record.answers))
    input_rate = ctx.config.price_table().input_per_token
    results = []
    for k in ks:
        coverages = []
        tokens = 0
        for scored, gold in scored_per_question:
            pruned = select_top_k(scored, k)
            coverages.append(answer_coverage(pruned, gold, ascii_fold=ctx.config.ascii_fold))
            tokens += sum(estimate_tokens(textualize_triple(st.triple)) for st in pruned.kept)
        coverage = sum(coverages) / len(coverages) if coverages else 0.0
        results.append({"k": k, "coverage": coverage, "tokens": tokens, "cost": tokens * input_rate})
    if out_path is not None:
        with Path(out_path).open("w", newline="", encoding="utf-8") as fh:
            writer = csv.DictWriter(fh, fieldnames=["k", "coverage", "tokens", "cost"])
            writer.writeheader()
            writer.writerows(results)
    return results


def quality_metrics(
    ctx: PipelineContext,
    variants: Sequence[str] = ("vanilla", "pruned", "enriched"),
    out_dir: str | Path | None = None,
    dataset_name: str = "dataset",
    with_dumps: bool = False,
) -> list:
    """Aggregate graph-quality metrics per variant, optionally exporting CSVs."""
    reports = []
    for variant in variants:
        triples_by_question = _variant_triples(ctx, variant)
        per_question = []
        embeddings: list[list[float]] = []
        texts: list[str] = []
        for record in ctx.dataset:
            triples = triples_by_question.get(record.id, [])
            if not triples:
                continue
            q = graph_quality(
                record.question,
                triples,
                ctx.embedder,
                ctx.scorer,
                dataset=dataset_name,
                variant=variant,
                mode=ctx.config.redundancy_mode,
                cache=ctx.cache,
                positive_threshold=ctx.config.positive_threshold,
                with_embeddings=with_dumps,
            )
            per_question.append(q)
            if with_dumps and q.embeddings:
                embeddings.extend(q.embeddings)
                texts.extend(q.texts or [])
        if not per_question:
            continue
        n = len(per_question)
        reports.append(
            GraphQualityReport(
                dataset=dataset_name,
                variant=variant,
                relevance=MetricValue(
                    mean=sum(q.relevance.mean for q in per_question) / n,
                    total=sum(q.relevance.total for q in per_question),
                ),
                semantic_richness=MetricValue(
                    mean=sum(q.semantic_richness.mean for q in per_question) / n,
                    total=sum(q.semantic_richness.total for q in per_question),
                ),
                redundancy=RedundancyResult(
                    mean=sum(q.redundancy.mean for q in per_question) / n,
                    total=sum(q.redundancy.total for q in per_question),
                    groups=sum(q.redundancy.groups for q in per_question),
                    pairs=sum(q.redundancy.pairs for q in per_question),
                ),
                triples=sum(q.triples for q in per_question),
                embeddings=embeddings if with_dumps else None,
                texts=texts if with_dumps else None,
            )
        )
    if out_dir is not None:
        export_quality_report(reports, out_dir)
    return reports


def _variant_triples(ctx: PipelineContext, variant: str) -> dict[str, list[Triple]]:
    out: dict[str, list[Triple]] = {}
    if variant == "vanilla":
        for record in ctx.dataset:
            out[record.id] = list(load_graph(record.graph))
        return out
    pruned_path = ctx.stage_dir / ARTIFACT_FILE["prune"]
    if not pruned_path.exists():
        raise StageError(f"variant '{variant}' requires pruned artifact; run the 'prune' stage first")
    pruned_rows = _read_rows(pruned_path)
    if variant == "pruned":
        for record in ctx.dataset:
            row = pruned_rows.get(record.id)
            if row:
                out[record.id] = _scored_from_row(row).triples
        return out
    if variant == "enriched":
        enriched_path = ctx.stage_dir / ARTIFACT_FILE["enrich"]
        if not enriched_path.exists():
            raise StageError("variant 'enriched' requires enriched artifact; run the 'enrich' stage first")
        enriched_rows = _read_rows(enriched_path)
        for record in ctx.dataset:
            pruned_row = pruned_rows.get(record.id)
            enriched_row = enriched_rows.get(record.id)
            if pruned_row is None or enriched_row is None:
                continue
            pruned = _scored_from_row(pruned_row)
            start = max((st.triple.index for st in pruned.kept), default=-1) + 1
            out[record.id] = pruned.triples + _generated_from_row(enriched_row, start)
        return out
    raise ValueError(f"unknown variant {variant!r}")
