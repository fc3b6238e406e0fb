"""Command-line entry points.

Subcommands: summarize, evaluate, quality, fuse-check, synth.
Exit codes: 0 ok, 1 validation failure, 2 I/O failure, 3 internal
invariant violation. Set CONTEXT_FORGE_LOG=debug|info|warning|error for
stderr verbosity.
"""

from __future__ import annotations

import argparse
import itertools
import logging
import os
import sys
from concurrent.futures import ProcessPoolExecutor

from . import __version__
from .core import (
    ContextForgeError,
    InvariantError,
    SummarizerConfig,
    ValidationError,
    config_hash,
    load_config,
    load_embeddings,
)
from .metrics import EvalReport, Variant, context_quality, top5_map
from .pipeline import summarize_video
from .records import (
    context_to_dict,
    dumps_record,
    read_contexts,
    read_frame_records,
    read_ground_truth,
    read_predictions,
    write_frame_records,
)
from .synth import gen_scenario, scenario_to_frame_records

log = logging.getLogger("context_forge")

_DEFAULT_VARIANTS = ("n", "nv", "nt", "all")


def _setup_logging() -> None:
    level_name = os.environ.get("CONTEXT_FORGE_LOG", "warning").lower()
    levels = {"debug": logging.DEBUG, "info": logging.INFO, "warning": logging.WARNING, "error": logging.ERROR}
    logging.basicConfig(
        stream=sys.stderr,
        level=levels.get(level_name, logging.WARNING),
        format="%(levelname)s %(name)s: %(message)s",
    )


def _load_config(path: str | None) -> SummarizerConfig:
    return load_config(path) if path else SummarizerConfig()


def _group_frames_by_video(path: str):
    """Group a frames file by contiguous video_id runs, enforcing grouping."""
    seen: set[str] = set()
    for video_id, group in itertools.groupby(read_frame_records(path), key=lambda r: r.video_id):
        if video_id in seen:
            raise ValidationError(
                f"frames for video {video_id!r} are not contiguous in {path}"
            )
        seen.add(video_id)
        yield video_id, list(group)


def _summarize_one(args: tuple) -> tuple:
    video_id, frames, cfg = args
    return summarize_video(video_id, frames, cfg)


def cmd_summarize(args: argparse.Namespace) -> int:
    cfg = _load_config(args.config)
    videos = list(_group_frames_by_video(args.frames))
    jobs = max(1, args.jobs)
    if jobs == 1 or len(videos) <= 1:
        outcomes = [_summarize_one((vid, frames, cfg)) for vid, frames in videos]
    else:
        with ProcessPoolExecutor(max_workers=jobs) as pool:
            outcomes = list(pool.map(_summarize_one, [(v, f, cfg) for v, f in videos]))

    combined = []
    stats_by_video = {}
    for results, stats in outcomes:
        combined.extend(results)
        stats_by_video[stats.video_id] = stats
    combined.sort(key=lambda item: (item[0], item[1]))

    with open(args.out, "w", encoding="utf-8") as fh:
        for video_id, frame_id, ctx in combined:
            fh.write(dumps_record(context_to_dict(video_id, frame_id, ctx)) + "\n")

    print(f"# config_hash={config_hash(cfg)} version={__version__}", file=sys.stderr)
    for video_id in sorted(stats_by_video):
        stats = stats_by_video[video_id]
        seg = " ".join(f"{k}={v}" for k, v in sorted(stats.n_segments.items()))
        print(
            f"video={video_id} frames={stats.n_frames} processed={stats.n_processed} {seg}",
            file=sys.stderr,
        )
    return 0


def _format_eval_report(report: EvalReport) -> str:
    lines = [
        f"variant {report.variant.value}: mAP {report.map_value:.4f} "
        f"({len(report.per_class)} classes, {report.n_predictions} scored predictions, "
        f"{report.n_frames} frames)",
    ]
    for key in sorted(report.per_class):
        result = report.per_class[key]
        lines.append(
            f"  {key:<30} ap {result.ap:8.4f}  gt {result.n_gt:4d}  preds {result.n_pred:4d}"
        )
    return "\n".join(lines)


def cmd_evaluate(args: argparse.Namespace) -> int:
    cfg = _load_config(args.config)
    preds = read_predictions(args.preds)
    gts = read_ground_truth(args.gt, min_ttc=cfg.min_ttc)
    variants = [Variant.parse(v) for v in (args.variant or _DEFAULT_VARIANTS)]
    reports = [
        top5_map(preds, gts, variant, iou_thresh=cfg.iou_thresh, t_delta=cfg.t_delta)
        for variant in variants
    ]

    header = f"# context-forge {__version__} config_hash={config_hash(cfg)}"
    print(header)
    for report in reports:
        print(_format_eval_report(report))
    if args.out:
        payload = {
            "version": __version__,
            "config_hash": config_hash(cfg),
            "reports": [
                {
                    "variant": r.variant.value,
                    "map": r.map_value,
                    "n_frames": r.n_frames,
                    "n_predictions": r.n_predictions,
                    "per_class": {
                        key: {"ap": c.ap, "n_gt": c.n_gt, "n_pred": c.n_pred}
                        for key, c in r.per_class.items()
                    },
                }
                for r in reports
            ],
        }
        with open(args.out, "w", encoding="utf-8") as fh:
            fh.write(dumps_record(payload) + "\n")
    return 0


def cmd_quality(args: argparse.Namespace) -> int:
    cfg = _load_config(args.config)
    contexts = read_contexts(args.contexts)
    gts = read_ground_truth(args.gt, min_ttc=cfg.min_ttc)
    table = load_embeddings(args.embeddings)

    expanded_contexts = {}
    expanded_gts = {}
    for key, entries in gts.items():
        for idx, gt in enumerate(entries):
            unit = (key[0], key[1], idx)
            expanded_gts[unit] = gt
            if key in contexts:
                expanded_contexts[unit] = contexts[key]
    report = context_quality(expanded_contexts, expanded_gts, table)

    print(f"# context-forge {__version__} config_hash={config_hash(cfg)}")
    for name in (
        "exact_noun_hits",
        "exact_verb_hits",
        "avg_embed_sim_noun",
        "avg_embed_sim_verb",
        "frame_coverage",
        "salient_precision",
        "salient_recall",
    ):
        print(f"{name} {getattr(report, name):.6f}")
    print(f"n_frames {report.n_frames}")
    print(f"missing_embeddings {report.missing_embeddings}")
    if args.out:
        payload = {
            "version": __version__,
            "config_hash": config_hash(cfg),
            "quality": {
                "exact_noun_hits": report.exact_noun_hits,
                "exact_verb_hits": report.exact_verb_hits,
                "avg_embed_sim_noun": report.avg_embed_sim_noun,
                "avg_embed_sim_verb": report.avg_embed_sim_verb,
                "frame_coverage": report.frame_coverage,
                "salient_precision": report.salient_precision,
                "salient_recall": report.salient_recall,
                "n_frames": report.n_frames,
                "missing_embeddings": report.missing_embeddings,
            },
        }
        with open(args.out, "w", encoding="utf-8") as fh:
            fh.write(dumps_record(payload) + "\n")
    return 0


def cmd_fuse_check(args: argparse.Namespace) -> int:
    from .fusion import load_params, random_fusion_params, save_params
    from .checks import run_invariant_checks

    if args.params:
        scales = load_params(args.params)
    else:
        scales = random_fusion_params(args.seed)
    if args.out:
        save_params(args.out, scales)
    results = run_invariant_checks(scales, seed=args.seed)
    failed = 0
    for result in results:
        status = "PASS" if result.passed else "FAIL"
        print(f"{status} {result.name}: {result.detail}")
        failed += 0 if result.passed else 1
    if failed:
        raise InvariantError(f"{failed} fusion invariant(s) failed")
    return 0


def cmd_synth(args: argparse.Namespace) -> int:
    records = []
    for i in range(args.n_videos):
        planted, stream = gen_scenario(
            seed=args.seed + i,
            n_frames=args.n_frames,
            n_terms=args.n_terms,
            drop_rate=args.drop_rate,
            spurious_rate=args.spurious_rate,
        )
        video_id = f"synth{i:02d}"
        records.extend(scenario_to_frame_records(stream, video_id))
        print(f"video={video_id} planted_segments={len(planted)}", file=sys.stderr)
    write_frame_records(args.out, records)
    return 0


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="context-forge",
        description="Action-context summarization, evaluation, and fusion-kernel checks.",
    )
    parser.add_argument("--version", action="version", version=f"context-forge {__version__}")
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("summarize", help="frames file -> action-context records")
    p.add_argument("--frames", required=True)
    p.add_argument("--config")
    p.add_argument("--out", required=True)
    p.add_argument("--jobs", type=int, default=1)
    p.set_defaults(func=cmd_summarize)

    p = sub.add_parser("evaluate", help="score predictions against ground truth")
    p.add_argument("--preds", required=True)
    p.add_argument("--gt", required=True)
    p.add_argument("--config")
    p.add_argument("--variant", action="append", metavar="n|nv|nt|all|no|vo")
    p.add_argument("--out")
    p.set_defaults(func=cmd_evaluate)

    p = sub.add_parser("quality", help="score generated contexts against ground truth")
    p.add_argument("--contexts", required=True)
    p.add_argument("--gt", required=True)
    p.add_argument("--embeddings", required=True)
    p.add_argument("--config")
    p.add_argument("--out")
    p.set_defaults(func=cmd_quality)

    p = sub.add_parser("fuse-check", help="run the fusion-kernel invariant suite")
    p.add_argument("--params", help="parameter bundle to check (random bundle when omitted)")
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--out", help="save the checked bundle to this path")
    p.set_defaults(func=cmd_fuse_check)

    p = sub.add_parser("synth", help="emit a synthetic frames file")
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--out", required=True)
    p.add_argument("--n-frames", type=int, default=600)
    p.add_argument("--n-terms", type=int, default=4)
    p.add_argument("--n-videos", type=int, default=1)
    p.add_argument("--drop-rate", type=float, default=0.0)
    p.add_argument("--spurious-rate", type=float, default=0.0)
    p.set_defaults(func=cmd_synth)
    return parser


def main(argv: list[str] | None = None) -> int:
    _setup_logging()
    parser = build_parser()
    args = parser.parse_args(argv)
    try:
        return args.func(args)
    except InvariantError as exc:
        log.error("invariant violation: %s", exc)
        print(f"error: {exc}", file=sys.stderr)
        return 3
    except (ValidationError, ContextForgeError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 1
    except OSError as exc:
        print(f"i/o error: {exc}", file=sys.stderr)
        return 2
    except Exception as exc:  # pragma: no cover - defensive
        log.exception("unexpected failure")
        print(f"internal error: {exc}", file=sys.stderr)
        return 3


if __name__ == "__main__":
    raise SystemExit(main())
