"""Evaluation stack: box overlap, Top-5 mAP variants, and context quality.

The mAP protocol is the detection-benchmark convention: per frame, only
the five highest-confidence predictions are scored; hits come from
greedy score-ordered matching with each ground truth consumed at most
once; per-class average precision uses dataset-wide ranking with
all-point interpolation, and precision/recall points are taken at
distinct score thresholds so that tied scores cannot make the result
depend on input order. The mean runs over classes with at least one
ground-truth instance and is reported scaled by 100.
"""

from __future__ import annotations

from collections import Counter, defaultdict
from dataclasses import dataclass, field
from enum import Enum
from typing import Mapping, Sequence

import numpy as np

from .core import (
    ActionContext,
    BoundingBox,
    EmbeddingTable,
    ObjectInteraction,
    Prediction,
    ValidationError,
)

TOP_K_PER_FRAME = 5


def iou(a: BoundingBox, b: BoundingBox) -> float:
    """Intersection over union of two boxes, in [0, 1]."""
    ix = min(a.x2, b.x2) - max(a.x1, b.x1)
    iy = min(a.y2, b.y2) - max(a.y1, b.y1)
    if ix <= 0.0 or iy <= 0.0:
        return 0.0
    inter = ix * iy
    return inter / (a.area() + b.area() - inter)


class Variant(Enum):
    """The evaluation variants; values are the CLI wire names."""

    NOUN = "n"
    NOUN_VERB = "nv"
    NOUN_TTC = "nt"
    OVERALL = "all"
    NOUN_ONLY = "no"
    VERB_ONLY = "vo"

    @classmethod
    def parse(cls, text: str) -> "Variant":
        try:
            return cls(text.strip().lower())
        except ValueError:
            valid = "|".join(v.value for v in cls)
            raise ValidationError(f"unknown variant {text!r}; expected one of {valid}")


_BOX_VARIANTS = {Variant.NOUN, Variant.NOUN_VERB, Variant.NOUN_TTC, Variant.OVERALL}
_VERB_VARIANTS = {Variant.NOUN_VERB, Variant.OVERALL, Variant.VERB_ONLY}
_TTC_VARIANTS = {Variant.NOUN_TTC, Variant.OVERALL}


def class_key(noun: str, verb: str, variant: Variant) -> str:
    """Class identity under a variant. Labels never contain ',' so the join is unambiguous."""
    if variant in (Variant.NOUN, Variant.NOUN_TTC, Variant.NOUN_ONLY):
        return noun
    if variant is Variant.VERB_ONLY:
        return verb
    return f"{noun},{verb}"


def _constraints_hold(
    pred: ObjectInteraction,
    gt: ObjectInteraction,
    overlap: float,
    variant: Variant,
    iou_thresh: float,
    t_delta: float,
) -> bool:
    if variant is Variant.VERB_ONLY:
        if pred.verb != gt.verb:
            return False
    elif pred.noun != gt.noun:
        return False
    if variant in _VERB_VARIANTS and pred.verb != gt.verb:
        return False
    if variant in _BOX_VARIANTS and overlap < iou_thresh:
        return False
    if variant in _TTC_VARIANTS and not (abs(pred.ttc - gt.ttc) < t_delta):
        return False
    return True


@dataclass(frozen=True)
class MatchResult:
    prediction: Prediction
    matched_gt: ObjectInteraction | None
    hit: bool


def match_top5(
    preds: Sequence[Prediction],
    gts: Sequence[ObjectInteraction],
    variant: Variant,
    iou_thresh: float = 0.5,
    t_delta: float = 0.25,
) -> list[MatchResult]:
    """Greedy-match one frame's predictions against its ground truths.

    ``preds`` must already be sorted by descending score; only the top
    five are considered. A prediction hits the unmatched ground truth
    with the highest overlap among those satisfying the variant's
    constraints (earliest ground truth on exact overlap ties).
    """
    for earlier, later in zip(preds, preds[1:]):
        if later.score > earlier.score:
            raise ValidationError("match_top5: predictions not sorted by descending score")
    matched = [False] * len(gts)
    results: list[MatchResult] = []
    for pred in preds[:TOP_K_PER_FRAME]:
        best_idx = -1
        best_overlap = -1.0
        for idx, gt in enumerate(gts):
            if matched[idx]:
                continue
            overlap = iou(pred.interaction.box, gt.box)
            if not _constraints_hold(pred.interaction, gt, overlap, variant, iou_thresh, t_delta):
                continue
            if overlap > best_overlap:
                best_idx, best_overlap = idx, overlap
        if best_idx >= 0:
            matched[best_idx] = True
            results.append(MatchResult(pred, gts[best_idx], True))
        else:
            results.append(MatchResult(pred, None, False))
    return results


@dataclass
class ClassResult:
    ap: float  # scaled by 100
    n_gt: int
    n_pred: int


@dataclass
class EvalReport:
    variant: Variant
    map_value: float  # scaled by 100
    per_class: dict[str, ClassResult] = field(default_factory=dict)
    n_frames: int = 0
    n_predictions: int = 0


def _canonical_top5(preds: Sequence[Prediction]) -> list[Prediction]:
    indexed = sorted(enumerate(preds), key=lambda item: (-item[1].score, item[0]))
    return [pred for _, pred in indexed[:TOP_K_PER_FRAME]]


def _average_precision(scored_hits: list[tuple[float, bool]], n_positive: int) -> float:
    """All-point interpolated AP over (score, hit) items sorted by rank.

    Precision/recall points are taken once per distinct score value, so
    the result is independent of how ties were ordered upstream.
    """
    if n_positive <= 0 or not scored_hits:
        return 0.0
    points: list[tuple[float, float]] = []
    tp = fp = 0
    i = 0
    while i < len(scored_hits):
        j = i
        while j < len(scored_hits) and scored_hits[j][0] == scored_hits[i][0]:
            if scored_hits[j][1]:
                tp += 1
            else:
                fp += 1
            j += 1
        points.append((tp / n_positive, tp / (tp + fp)))
        i = j
    interpolated = [0.0] * len(points)
    running = 0.0
    for idx in range(len(points) - 1, -1, -1):
        running = max(running, points[idx][1])
        interpolated[idx] = running
    ap = 0.0
    prev_recall = 0.0
    for (recall, _), precision in zip(points, interpolated):
        ap += (recall - prev_recall) * precision
        prev_recall = recall
    return ap


def top5_map(
    preds: Mapping,
    gts: Mapping,
    variant: Variant,
    iou_thresh: float = 0.5,
    t_delta: float = 0.25,
) -> EvalReport:
    """Dataset-level Top-5 mAP for one variant.

    ``preds`` maps an orderable frame key to a list of Prediction;
    ``gts`` maps frame keys to lists of ObjectInteraction. Frames
    present only in ``preds`` are evaluated against an empty ground
    truth (all misses); frames present only in ``gts`` contribute
    positives.
    """
    gt_counts: Counter[str] = Counter()
    for frame_gts in gts.values():
        for gt in frame_gts:
            gt_counts[class_key(gt.noun, gt.verb, variant)] += 1

    per_class_items: dict[str, list] = defaultdict(list)
    n_predictions = 0
    all_keys = sorted(set(preds) | set(gts))
    for frame_key in all_keys:
        frame_preds = _canonical_top5(preds.get(frame_key, []))
        n_predictions += len(frame_preds)
        results = match_top5(
            frame_preds, list(gts.get(frame_key, [])), variant, iou_thresh, t_delta
        )
        for idx, result in enumerate(results):
            inter = result.prediction.interaction
            key = class_key(inter.noun, inter.verb, variant)
            per_class_items[key].append((result.prediction.score, result.hit, frame_key, idx))

    per_class: dict[str, ClassResult] = {}
    ap_values = []
    for key in sorted(gt_counts):
        items = sorted(per_class_items.get(key, []), key=lambda it: (-it[0], it[2], it[3]))
        ap = _average_precision([(score, hit) for score, hit, _, _ in items], gt_counts[key])
        per_class[key] = ClassResult(ap=100.0 * ap, n_gt=gt_counts[key], n_pred=len(items))
        ap_values.append(ap)

    map_value = 100.0 * (sum(ap_values) / len(ap_values)) if ap_values else 0.0
    return EvalReport(
        variant=variant,
        map_value=map_value,
        per_class=per_class,
        n_frames=len(all_keys),
        n_predictions=n_predictions,
    )


@dataclass
class QualityReport:
    """Context-quality summary against per-frame ground-truth interactions."""

    exact_noun_hits: float
    exact_verb_hits: float
    avg_embed_sim_noun: float
    avg_embed_sim_verb: float
    frame_coverage: float
    salient_precision: float
    salient_recall: float
    n_frames: int
    missing_embeddings: int


def _context_noun_labels(ctx: ActionContext) -> list[str]:
    nouns = [pair.noun for pair in ctx.action_segments]
    nouns.extend(ctx.held_objects)
    nouns.extend(ctx.salient_objects)
    return nouns


def _mean_direction(words: list[str], table: EmbeddingTable) -> tuple[np.ndarray | None, int]:
    """Normalized mean of the words' vectors; returns (vector|None, missing count)."""
    vectors = []
    missing = 0
    for word in words:
        vec = table.lookup(word)
        if vec is None:
            missing += 1
        else:
            vectors.append(vec)
    if not vectors:
        return None, missing
    mean = np.mean(vectors, axis=0)
    norm = float(np.linalg.norm(mean))
    if norm == 0.0:
        return None, missing
    return mean / norm, missing


def _direction(word: str, table: EmbeddingTable) -> np.ndarray | None:
    vec = table.lookup(word)
    if vec is None:
        return None
    norm = float(np.linalg.norm(vec))
    if norm == 0.0:
        return None
    return vec / norm


def _label_words(labels: list[str]) -> list[str]:
    words: list[str] = []
    for label in labels:
        words.extend(label.split())
    return words


def context_quality(
    contexts: Mapping,
    gts: Mapping,
    table: EmbeddingTable,
) -> QualityReport:
    """Score generated contexts against ground truth, frame by frame.

    ``gts`` maps frame keys to one ObjectInteraction each; ``contexts``
    maps the same keys to ActionContext (missing keys count as empty
    contexts). Embedding similarities average the context words' vectors
    before comparing with the ground-truth word; words absent from the
    table are skipped and counted.
    """
    if len(table) == 0:
        raise ValidationError("context_quality: empty embedding table")
    keys = sorted(gts)
    n = len(keys)
    if n == 0:
        return QualityReport(0.0, 0.0, 0.0, 0.0, 0.0, 0.0, 0.0, 0, 0)

    empty = ActionContext((), (), (), "")
    noun_hits = verb_hits = covered = recall_hits = 0
    salient_slots = salient_matches = 0
    noun_sims: list[float] = []
    verb_sims: list[float] = []
    missing = 0

    for key in keys:
        ctx = contexts.get(key, empty)
        gt = gts[key]
        noun_labels = _context_noun_labels(ctx)
        verb_labels = [pair.verb for pair in ctx.action_segments]

        if noun_labels or verb_labels:
            covered += 1
        if gt.noun in noun_labels:
            noun_hits += 1
        if gt.verb in verb_labels:
            verb_hits += 1
        salient_slots += len(ctx.salient_objects)
        salient_matches += sum(1 for label in ctx.salient_objects if label == gt.noun)
        if gt.noun in ctx.salient_objects:
            recall_hits += 1

        ctx_noun_dir, miss_a = _mean_direction(_label_words(noun_labels), table)
        ctx_verb_dir, miss_b = _mean_direction(verb_labels, table)
        missing += miss_a + miss_b
        gt_noun_dir = _direction(gt.noun, table)
        gt_verb_dir = _direction(gt.verb, table)
        if gt_noun_dir is None:
            missing += 1
        if gt_verb_dir is None:
            missing += 1
        if ctx_noun_dir is not None and gt_noun_dir is not None:
            noun_sims.append(float(np.dot(ctx_noun_dir, gt_noun_dir)))
        if ctx_verb_dir is not None and gt_verb_dir is not None:
            verb_sims.append(float(np.dot(ctx_verb_dir, gt_verb_dir)))

    return QualityReport(
        exact_noun_hits=noun_hits / n,
        exact_verb_hits=verb_hits / n,
        avg_embed_sim_noun=sum(noun_sims) / len(noun_sims) if noun_sims else 0.0,
        avg_embed_sim_verb=sum(verb_sims) / len(verb_sims) if verb_sims else 0.0,
        frame_coverage=covered / n,
        salient_precision=salient_matches / salient_slots if salient_slots else 0.0,
        salient_recall=recall_hits / n,
        n_frames=n,
        missing_embeddings=missing,
    )
