"""Line-delimited record formats shared by the CLI and tests.

All files are UTF-8, one JSON object per line. Writers are
deterministic: keys are sorted and separators fixed, so identical data
produces byte-identical files.

frames:   {"video_id", "frame_id", "captions": [[{"surface","lemma","pos"}...]],
           "label_scores": {label: score}, "active_boxes": [[x1,y1,x2,y2]...],
           "detections": [{"label","box","score"}...]}
preds/gt: {"video_id", "frame_id", "entries": [{"box","noun","verb","ttc","score"?}]}
contexts: {"video_id", "frame_id", "text", "action_terms": [[verb,noun]...],
           "held": [...], "salient": [...]}
"""

from __future__ import annotations

import json
from typing import IO, Iterable, Iterator

from .core import (
    ActionContext,
    ActionPair,
    BoundingBox,
    FrameRecord,
    ObjectInteraction,
    ParseError,
    PosTag,
    Prediction,
    TaggedToken,
    ValidationError,
)

FrameKey = tuple[str, int]


def dumps_record(obj: dict) -> str:
    return json.dumps(obj, sort_keys=True, separators=(",", ":"))


def _iter_json_lines(fh: IO[str], path: str) -> Iterator[tuple[int, dict]]:
    for lineno, raw in enumerate(fh, start=1):
        line = raw.strip()
        if not line:
            continue
        try:
            obj = json.loads(line)
        except json.JSONDecodeError as exc:
            raise ParseError(f"invalid JSON: {exc.msg}", line=lineno, path=path)
        if not isinstance(obj, dict):
            raise ParseError("record is not an object", line=lineno, path=path)
        yield lineno, obj


def _field(obj: dict, key: str, lineno: int, path: str):
    if key not in obj:
        raise ParseError(f"missing field {key!r}", line=lineno, path=path)
    return obj[key]


def _box_from_list(values, lineno: int, path: str) -> BoundingBox:
    if not isinstance(values, list) or len(values) != 4:
        raise ParseError(f"box must be [x1, y1, x2, y2], got {values!r}", line=lineno, path=path)
    try:
        return BoundingBox(*[float(v) for v in values])
    except (TypeError, ValueError) as exc:
        raise ParseError(f"bad box {values!r}: {exc}", line=lineno, path=path)
    except ValidationError as exc:
        raise ParseError(str(exc), line=lineno, path=path)


def read_frame_records(path: str) -> Iterator[FrameRecord]:
    """Stream frame records; malformed lines raise with their line number."""
    with open(path, "r", encoding="utf-8") as fh:
        for lineno, obj in _iter_json_lines(fh, path):
            try:
                captions = tuple(
                    tuple(
                        TaggedToken(
                            surface=str(tok["surface"]),
                            lemma=str(tok["lemma"]),
                            pos=PosTag(tok["pos"]),
                        )
                        for tok in caption
                    )
                    for caption in obj.get("captions", [])
                )
            except (KeyError, TypeError, ValueError, ValidationError) as exc:
                raise ParseError(f"bad captions: {exc}", line=lineno, path=path)
            label_scores = {}
            raw_scores = obj.get("label_scores", {})
            if not isinstance(raw_scores, dict):
                raise ParseError("label_scores must be an object", line=lineno, path=path)
            for label, score in raw_scores.items():
                try:
                    label_scores[str(label)] = float(score)
                except (TypeError, ValueError):
                    raise ParseError(f"bad score for {label!r}", line=lineno, path=path)
            active_boxes = tuple(
                _box_from_list(b, lineno, path) for b in obj.get("active_boxes", [])
            )
            detections = []
            for det in obj.get("detections", []):
                if not isinstance(det, dict):
                    raise ParseError("detection must be an object", line=lineno, path=path)
                detections.append(
                    (
                        str(_field(det, "label", lineno, path)),
                        _box_from_list(_field(det, "box", lineno, path), lineno, path),
                        float(_field(det, "score", lineno, path)),
                    )
                )
            try:
                yield FrameRecord(
                    video_id=str(_field(obj, "video_id", lineno, path)),
                    frame_id=int(_field(obj, "frame_id", lineno, path)),
                    captions=captions,
                    label_scores=label_scores,
                    active_boxes=active_boxes,
                    detections=tuple(detections),
                )
            except ValidationError as exc:
                raise ParseError(str(exc), line=lineno, path=path)


def frame_record_to_dict(record: FrameRecord) -> dict:
    return {
        "video_id": record.video_id,
        "frame_id": record.frame_id,
        "captions": [
            [{"surface": t.surface, "lemma": t.lemma, "pos": t.pos.value} for t in caption]
            for caption in record.captions
        ],
        "label_scores": dict(sorted(record.label_scores.items())),
        "active_boxes": [list(b.as_tuple()) for b in record.active_boxes],
        "detections": [
            {"label": label, "box": list(box.as_tuple()), "score": score}
            for label, box, score in record.detections
        ],
    }


def write_frame_records(path: str, records: Iterable[FrameRecord]) -> None:
    with open(path, "w", encoding="utf-8") as fh:
        for record in records:
            fh.write(dumps_record(frame_record_to_dict(record)) + "\n")


def _read_entry_file(path: str, expect_score: bool):
    grouped: dict[FrameKey, list] = {}
    with open(path, "r", encoding="utf-8") as fh:
        for lineno, obj in _iter_json_lines(fh, path):
            key = (
                str(_field(obj, "video_id", lineno, path)),
                int(_field(obj, "frame_id", lineno, path)),
            )
            if key in grouped:
                raise ParseError(
                    f"duplicate frame {key[0]}:{key[1]}", line=lineno, path=path
                )
            entries = _field(obj, "entries", lineno, path)
            if not isinstance(entries, list):
                raise ParseError("entries must be a list", line=lineno, path=path)
            parsed = []
            for entry in entries:
                if not isinstance(entry, dict):
                    raise ParseError("entry must be an object", line=lineno, path=path)
                try:
                    interaction = ObjectInteraction(
                        box=_box_from_list(_field(entry, "box", lineno, path), lineno, path),
                        noun=str(_field(entry, "noun", lineno, path)),
                        verb=str(_field(entry, "verb", lineno, path)),
                        ttc=float(_field(entry, "ttc", lineno, path)),
                    )
                    if expect_score:
                        parsed.append(
                            Prediction(
                                interaction=interaction,
                                score=float(_field(entry, "score", lineno, path)),
                                frame_id=key[1],
                            )
                        )
                    else:
                        parsed.append(interaction)
                except ValidationError as exc:
                    raise ParseError(str(exc), line=lineno, path=path)
            grouped[key] = parsed
    return grouped


def read_predictions(path: str) -> dict[FrameKey, list[Prediction]]:
    return _read_entry_file(path, expect_score=True)


def read_ground_truth(path: str, min_ttc: float = 0.0) -> dict[FrameKey, list[ObjectInteraction]]:
    grouped = _read_entry_file(path, expect_score=False)
    if min_ttc > 0.0:
        for key, entries in grouped.items():
            for gt in entries:
                if gt.ttc < min_ttc:
                    raise ValidationError(
                        f"{key[0]}:{key[1]}: time to contact {gt.ttc} below minimum {min_ttc}"
                    )
    return grouped


def _entry_dict(interaction: ObjectInteraction, score: float | None = None) -> dict:
    obj = {
        "box": list(interaction.box.as_tuple()),
        "noun": interaction.noun,
        "verb": interaction.verb,
        "ttc": interaction.ttc,
    }
    if score is not None:
        obj["score"] = score
    return obj


def write_predictions(path: str, preds: dict[FrameKey, list[Prediction]]) -> None:
    with open(path, "w", encoding="utf-8") as fh:
        for (video_id, frame_id) in sorted(preds):
            entries = [
                _entry_dict(p.interaction, p.score) for p in preds[(video_id, frame_id)]
            ]
            fh.write(
                dumps_record(
                    {"video_id": video_id, "frame_id": frame_id, "entries": entries}
                )
                + "\n"
            )


def write_ground_truth(path: str, gts: dict[FrameKey, list[ObjectInteraction]]) -> None:
    with open(path, "w", encoding="utf-8") as fh:
        for (video_id, frame_id) in sorted(gts):
            entries = [_entry_dict(gt) for gt in gts[(video_id, frame_id)]]
            fh.write(
                dumps_record(
                    {"video_id": video_id, "frame_id": frame_id, "entries": entries}
                )
                + "\n"
            )


def context_to_dict(video_id: str, frame_id: int, ctx: ActionContext) -> dict:
    return {
        "video_id": video_id,
        "frame_id": frame_id,
        "text": ctx.text,
        "action_terms": [[p.verb, p.noun] for p in ctx.action_segments],
        "held": list(ctx.held_objects),
        "salient": list(ctx.salient_objects),
    }


def read_contexts(path: str) -> dict[FrameKey, ActionContext]:
    out: dict[FrameKey, ActionContext] = {}
    with open(path, "r", encoding="utf-8") as fh:
        for lineno, obj in _iter_json_lines(fh, path):
            key = (
                str(_field(obj, "video_id", lineno, path)),
                int(_field(obj, "frame_id", lineno, path)),
            )
            if key in out:
                raise ParseError(f"duplicate frame {key[0]}:{key[1]}", line=lineno, path=path)
            try:
                pairs = tuple(
                    ActionPair(verb=str(v), noun=str(n))
                    for v, n in _field(obj, "action_terms", lineno, path)
                )
            except (TypeError, ValueError, ValidationError) as exc:
                raise ParseError(f"bad action_terms: {exc}", line=lineno, path=path)
            out[key] = ActionContext(
                action_segments=pairs,
                held_objects=tuple(str(x) for x in _field(obj, "held", lineno, path)),
                salient_objects=tuple(str(x) for x in _field(obj, "salient", lineno, path)),
                text=str(_field(obj, "text", lineno, path)),
            )
    return out
