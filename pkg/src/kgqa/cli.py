"""Command-line interface exposing every pipeline stage and diagnostic."""

from __future__ import annotations

import argparse
import json
import logging
import sys
from pathlib import Path

from .gateway import CostLedger, cost_report, format_cost_report
from .pipeline import (
    ABLATIONS,
    PipelineContext,
    RunConfig,
    StageError,
    load_dataset,
    quality_metrics,
    run_all,
    run_stage,
    sweep_k,
)


def _add_common(parser: argparse.ArgumentParser) -> None:
    parser.add_argument("--config", type=Path, help="JSON config file (RunConfig fields)")
    parser.add_argument("--dataset", type=Path, help="dataset JSONL path")
    parser.add_argument("--stage-dir", type=Path, default=Path("stage"), help="artifact directory")
    parser.add_argument("--top-k", type=int, help="override pruning k")
    parser.add_argument("--temperature", type=float, help="override generation temperature")
    parser.add_argument("--ablation", choices=ABLATIONS, help="override stage plan")
    parser.add_argument("--workers", type=int, help="override per-stage worker count")
    parser.add_argument(
        "--resume",
        action=argparse.BooleanOptionalAction,
        default=True,
        help="reuse per-record completion markers (default on)",
    )


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="kgqa", description=__doc__)
    parser.add_argument("-v", "--verbose", action="store_true", help="log to stderr at INFO level")
    sub = parser.add_subparsers(dest="command", required=True)

    for stage in ("parse", "prune", "enrich", "answer", "eval"):
        stage_parser = sub.add_parser(stage, help=f"run the {stage} stage")
        _add_common(stage_parser)

    run_parser = sub.add_parser("run", help="run the full stage plan end to end")
    _add_common(run_parser)

    sweep_parser = sub.add_parser("sweep-k", help="answer coverage / token / cost per candidate k")
    _add_common(sweep_parser)
    sweep_parser.add_argument("--ks", default="10,50,100,300", help="comma-separated k values")
    sweep_parser.add_argument("--out", type=Path, help="CSV output path (default stage dir/sweep_k.csv)")

    metrics_parser = sub.add_parser("metrics", help="graph quality metrics per variant")
    _add_common(metrics_parser)
    metrics_parser.add_argument("--variants", default="vanilla,pruned,enriched", help="comma-separated variants")
    metrics_parser.add_argument("--out-dir", type=Path, help="output directory (default stage dir/quality)")
    metrics_parser.add_argument("--dumps", action="store_true", help="also write embedding and distance dumps")

    cost_parser = sub.add_parser("cost-report", help="print the ledger in the efficiency-table layout")
    _add_common(cost_parser)

    return parser


def _load_config(args: argparse.Namespace) -> RunConfig:
    config = RunConfig.from_file(args.config) if args.config else RunConfig()
    if getattr(args, "top_k", None) is not None:
        config.top_k = args.top_k
    if getattr(args, "temperature", None) is not None:
        config.temperature = args.temperature
    if getattr(args, "ablation", None) is not None:
        config.ablation = args.ablation
    if getattr(args, "workers", None) is not None:
        config.workers = args.workers
    return config


def _context(args: argparse.Namespace, config: RunConfig) -> PipelineContext:
    if not args.dataset:
        raise StageError("--dataset is required for this command")
    return PipelineContext(config, args.stage_dir, load_dataset(args.dataset))


def main(argv: list[str] | None = None) -> int:
    args = build_parser().parse_args(argv)
    if args.verbose:
        logging.basicConfig(level=logging.INFO, stream=sys.stderr)
    config = _load_config(args)
    try:
        if args.command in ("parse", "prune", "enrich", "answer", "eval"):
            ctx = _context(args, config)
            artifact = run_stage(args.command, ctx, resume=args.resume)
            ctx.save_state()
            print(f"{artifact.stage}: {artifact.processed} processed, {artifact.failed} failed -> {artifact.path}")
        elif args.command == "run":
            report, ledger = run_all(config, args.dataset, args.stage_dir, resume=args.resume)
            print(json.dumps({
                "hits1": report.hits1,
                "f1": report.f1,
                "precision": report.precision,
                "recall": report.recall,
                "acc": report.acc,
                "n": report.n,
                "calls": ledger.total_calls(),
            }, indent=2))
        elif args.command == "sweep-k":
            ctx = _context(args, config)
            ks = [int(k) for k in str(args.ks).split(",") if k.strip()]
            out = args.out or (ctx.stage_dir / "sweep_k.csv")
            rows = sweep_k(ctx, ks, out)
            ctx.save_state()
            for row in rows:
                print(f"k={row['k']:>5}  coverage={row['coverage']:.4f}  tokens={row['tokens']}  cost={row['cost']:.6g}")
            print(f"wrote {out}")
        elif args.command == "metrics":
            ctx = _context(args, config)
            variants = [v.strip() for v in str(args.variants).split(",") if v.strip()]
            out_dir = args.out_dir or (ctx.stage_dir / "quality")
            reports = quality_metrics(ctx, variants, out_dir, dataset_name=args.dataset.stem, with_dumps=args.dumps)
            ctx.save_state()
            for report in reports:
                print(
                    f"{report.variant:<10} relevance={report.relevance.mean:.4f}  "
                    f"richness={report.semantic_richness.mean:.4f}  redundancy={report.redundancy.mean:.4f}"
                )
            print(f"wrote {out_dir}")
        elif args.command == "cost-report":
            ledger_path = Path(args.stage_dir) / "ledger.json"
            if not ledger_path.exists():
                raise StageError(f"no ledger at {ledger_path}; run the pipeline first")
            ledger = CostLedger.from_dict(json.loads(ledger_path.read_text(encoding="utf-8")))
            print(format_cost_report(cost_report(ledger, config.price_table()), label=config.llm.get("kind", "run")))
    except StageError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 2
    return 0


if __name__ == "__main__":
    raise SystemExit(main())
