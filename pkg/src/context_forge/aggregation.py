"""Cross-frame aggregation: per-frame term streams to accepted segments.

A term accumulates a run of occurrences, each at most ``p_l`` frames
after the previous; the run is accepted as a segment once it reaches
``p_o`` occurrences, starting at the first occurrence that contributed.
An accepted segment terminates once its term has been absent for more
than ``p_l`` frames. Gaps are measured in raw frame indices, so a frame
stride upstream directly tightens the tolerated number of missed
samples. Runs that never reach ``p_o`` are discarded; segments still
open when observation ends are reported with ``active=True``.

``StreamAggregator`` is the single-pass engine; ``aggregate`` is the
batch wrapper over a whole stream. Selection for a prediction frame
happens on the aggregated segment list via ``eliminate_overlaps`` and
``context_for_frame``.
"""

from __future__ import annotations

from dataclasses import dataclass
from enum import Enum
from typing import Iterable, Sequence

from .core import Category, Segment, Term, ValidationError, term_text


@dataclass
class _RunState:
    start: int
    last_seen: int
    occurrences: int
    accepted: bool


def _segment_order(seg: Segment) -> tuple:
    return (seg.start_frame, seg.end_frame, term_text(seg.term))


class StreamAggregator:
    """Incremental aggregator for one (video, category) stream.

    Push frames in strictly increasing order; ``segments_at(t)`` then
    reports every accepted segment as of observation time ``t`` with its
    activity decided against ``t``. State is never recomputed from raw
    frames, so selection for later prediction frames keeps seeing
    segments that started arbitrarily far in the past.
    """

    def __init__(self, category: Category, p_o: int, p_l: int):
        if p_o < 1:
            raise ValidationError(f"p_o={p_o} must be >= 1")
        if p_l < 0:
            raise ValidationError(f"p_l={p_l} must be >= 0")
        self.category = category
        self.p_o = p_o
        self.p_l = p_l
        self._closed: list[Segment] = []
        self._runs: dict[Term, _RunState] = {}
        self._last_frame: int | None = None

    def push(self, frame_id: int, terms: Iterable[Term]) -> None:
        if self._last_frame is not None and frame_id <= self._last_frame:
            raise ValidationError(
                f"frame ids must be strictly increasing: {frame_id} after {self._last_frame}"
            )
        self._last_frame = frame_id
        for term in set(terms):
            run = self._runs.get(term)
            if run is not None and frame_id - run.last_seen > self.p_l:
                self._retire(term, run)
                run = None
            if run is None:
                self._runs[term] = _RunState(
                    start=frame_id,
                    last_seen=frame_id,
                    occurrences=1,
                    accepted=self.p_o <= 1,
                )
            else:
                run.occurrences += 1
                run.last_seen = frame_id
                if run.occurrences >= self.p_o:
                    run.accepted = True

    def _retire(self, term: Term, run: _RunState) -> None:
        if run.accepted:
            self._closed.append(
                Segment(
                    category=self.category,
                    term=term,
                    start_frame=run.start,
                    end_frame=run.last_seen,
                    occurrences=run.occurrences,
                    active=False,
                )
            )
        del self._runs[term]

    def segments_at(self, t: int) -> list[Segment]:
        """All accepted segments as of frame ``t`` (must not precede pushed frames)."""
        if self._last_frame is not None and t < self._last_frame:
            raise ValidationError(
                f"observation frame {t} precedes already-pushed frame {self._last_frame}"
            )
        out = list(self._closed)
        for term, run in self._runs.items():
            if not run.accepted:
                continue
            out.append(
                Segment(
                    category=self.category,
                    term=term,
                    start_frame=run.start,
                    end_frame=run.last_seen,
                    occurrences=run.occurrences,
                    active=t - run.last_seen <= self.p_l,
                )
            )
        out.sort(key=_segment_order)
        return out


def aggregate(
    stream: Sequence[tuple[int, Iterable[Term]]],
    p_o: int,
    p_l: int,
    category: Category = Category.ACTION,
) -> list[Segment]:
    """Aggregate a complete per-frame term stream into accepted segments.

    The last stream frame (with or without terms) is the observation
    horizon deciding which segments are still active.
    """
    agg = StreamAggregator(category, p_o, p_l)
    last_frame: int | None = None
    for frame_id, terms in stream:
        agg.push(frame_id, terms)
        last_frame = frame_id
    if last_frame is None:
        return []
    return agg.segments_at(last_frame)


def eliminate_overlaps(segments: Sequence[Segment]) -> list[Segment]:
    """Resolve overlaps between segments of different terms.

    Processing in descending occurrence order (earlier start wins ties),
    a segment is dropped when it overlaps an already-kept segment of a
    different term. Same-term segments never eliminate each other.
    """
    categories = {seg.category for seg in segments}
    if len(categories) > 1:
        raise ValidationError(f"eliminate_overlaps: mixed categories {categories}")
    order = sorted(
        segments,
        key=lambda s: (-s.occurrences, s.start_frame, s.end_frame, term_text(s.term)),
    )
    kept: list[Segment] = []
    for seg in order:
        if any(other.term != seg.term and other.overlaps(seg) for other in kept):
            continue
        kept.append(seg)
    kept.sort(key=_segment_order)
    return kept


class SelectionMode(Enum):
    CURRENT_AND_PAST = "current_and_past"
    CURRENT_ONLY = "current_only"


def _is_active_at(seg: Segment, t: int) -> bool:
    if seg.start_frame > t:
        return False
    return t <= seg.end_frame or seg.active


def context_for_frame(
    segments: Sequence[Segment],
    t: int,
    length: int,
    mode: SelectionMode,
) -> list[Term]:
    """Select the terms forming one category's context at frame ``t``.

    CURRENT_AND_PAST returns at most one segment active at ``t`` plus
    the ``length - 1`` most recently terminated ones, oldest first.
    CURRENT_ONLY returns the segments active at ``t`` capped at
    ``length``, most occurrences first. Segments starting after ``t``
    never contribute.
    """
    if length <= 0:
        return []
    active = [seg for seg in segments if _is_active_at(seg, t)]
    if mode is SelectionMode.CURRENT_ONLY:
        active.sort(key=lambda s: (-s.occurrences, s.start_frame, term_text(s.term)))
        return [seg.term for seg in active[:length]]

    current = (
        max(active, key=lambda s: (s.end_frame, s.start_frame, term_text(s.term)))
        if active
        else None
    )
    past = [
        seg for seg in segments if seg.end_frame < t and not _is_active_at(seg, t)
    ]
    past.sort(key=lambda s: (s.end_frame, s.start_frame, term_text(s.term)))
    chosen = past[len(past) - (length - 1):] if length > 1 else []
    terms = [seg.term for seg in chosen]
    if current is not None:
        terms.append(current.term)
    return terms
