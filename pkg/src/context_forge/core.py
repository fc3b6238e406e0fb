"""Core domain types, configuration, and shared assets.

Everything in here is immutable after construction and safe to share
between worker processes. Labels and lemmas are normalized to lowercase,
whitespace-collapsed strings; membership checks are exact string matches
after normalization.
"""

from __future__ import annotations

import hashlib
import math
from dataclasses import dataclass, field
from enum import Enum
from pathlib import Path
from typing import Mapping, Union

import numpy as np


class ContextForgeError(Exception):
    """Base class for all errors raised by this package."""


class ValidationError(ContextForgeError):
    """A value violates a documented invariant (CLI exit code 1)."""


class ParseError(ValidationError):
    """An input document could not be parsed; carries a line number."""

    def __init__(self, message: str, line: int | None = None, path: str | None = None):
        self.line = line
        self.path = path
        prefix = ""
        if path is not None:
            prefix += f"{path}:"
        if line is not None:
            prefix += f"line {line}: "
        super().__init__(prefix + message)


class ShapeError(ValidationError):
    """Tensor dimensions are inconsistent with the declared contract."""


class InvariantError(ContextForgeError):
    """An internal invariant failed (CLI exit code 3)."""


def normalize_label(label: str) -> str:
    """Lowercase and collapse internal whitespace: ' Pressure  Cooker ' -> 'pressure cooker'."""
    return " ".join(label.lower().split())


def _require_finite(name: str, *values: float) -> None:
    for v in values:
        if not math.isfinite(v):
            raise ValidationError(f"{name}: non-finite coordinate {v!r}")


class Category(Enum):
    """The three context categories carried through the pipeline."""

    ACTION = "action"
    HELD = "held"
    SALIENT = "salient"


class PosTag(Enum):
    VERB = "VERB"
    NOUN = "NOUN"
    OTHER = "OTHER"


@dataclass(frozen=True)
class BoundingBox:
    """Axis-aligned box in corner form, continuous pixel coordinates.

    Degenerate (zero-area) boxes are rejected here rather than silently
    scoring zero overlap later: they signal upstream corruption.
    """

    x1: float
    y1: float
    x2: float
    y2: float

    def __post_init__(self) -> None:
        _require_finite("BoundingBox", self.x1, self.y1, self.x2, self.y2)
        if min(self.x1, self.y1, self.x2, self.y2) < 0:
            raise ValidationError(f"BoundingBox: negative coordinate in {self.as_tuple()}")
        if not (self.x1 < self.x2 and self.y1 < self.y2):
            raise ValidationError(f"BoundingBox: empty or inverted box {self.as_tuple()}")

    def area(self) -> float:
        return (self.x2 - self.x1) * (self.y2 - self.y1)

    def as_tuple(self) -> tuple[float, float, float, float]:
        return (self.x1, self.y1, self.x2, self.y2)


@dataclass(frozen=True)
class ObjectInteraction:
    """Ground-truth tuple for one upcoming interaction: box, noun, verb, seconds to contact."""

    box: BoundingBox
    noun: str
    verb: str
    ttc: float

    def __post_init__(self) -> None:
        _require_finite("ObjectInteraction.ttc", self.ttc)
        if self.ttc < 0:
            raise ValidationError(f"ObjectInteraction: negative time to contact {self.ttc}")
        object.__setattr__(self, "noun", normalize_label(self.noun))
        object.__setattr__(self, "verb", normalize_label(self.verb))
        if not self.noun or not self.verb:
            raise ValidationError("ObjectInteraction: empty noun or verb label")


@dataclass(frozen=True)
class Prediction:
    """One scored model output for a frame."""

    interaction: ObjectInteraction
    score: float
    frame_id: int

    def __post_init__(self) -> None:
        _require_finite("Prediction.score", self.score)
        if not (0.0 <= self.score <= 1.0):
            raise ValidationError(f"Prediction: score {self.score} outside [0, 1]")


@dataclass(frozen=True)
class TaggedToken:
    """A caption token with its lemma and a coarse part-of-speech tag.

    Tokens arrive pre-tagged; no tagging or lemmatization happens here.
    """

    surface: str
    lemma: str
    pos: PosTag

    def __post_init__(self) -> None:
        if not self.lemma:
            raise ValidationError("TaggedToken: empty lemma")
        if not isinstance(self.pos, PosTag):
            raise ValidationError(f"TaggedToken: bad part-of-speech tag {self.pos!r}")


@dataclass(frozen=True)
class ActionPair:
    """A (verb, noun) lemma pair describing one atomic action."""

    verb: str
    noun: str

    def __post_init__(self) -> None:
        object.__setattr__(self, "verb", normalize_label(self.verb))
        object.__setattr__(self, "noun", normalize_label(self.noun))
        if not self.verb or not self.noun:
            raise ValidationError("ActionPair: empty verb or noun lemma")

    def render(self) -> str:
        return f"{self.verb} {self.noun}"


Term = Union[ActionPair, str]


def term_text(term: Term) -> str:
    """Canonical textual form of a segment term, used for rendering and tie-breaks."""
    return term.render() if isinstance(term, ActionPair) else term


@dataclass(frozen=True)
class FrameRecord:
    """One frame's ingested raw signals. Any field may be empty; sparse input is legal."""

    video_id: str
    frame_id: int
    captions: tuple[tuple[TaggedToken, ...], ...] = ()
    label_scores: Mapping[str, float] = field(default_factory=dict)
    active_boxes: tuple[BoundingBox, ...] = ()
    detections: tuple[tuple[str, BoundingBox, float], ...] = ()

    def __post_init__(self) -> None:
        if self.frame_id < 0:
            raise ValidationError(f"FrameRecord: negative frame_id {self.frame_id}")
        for label, score in self.label_scores.items():
            _require_finite(f"label score for {label!r}", score)
            if not (-1.0 <= score <= 1.0):
                raise ValidationError(f"FrameRecord: score {score} for {label!r} outside [-1, 1]")


@dataclass(frozen=True)
class Segment:
    """A contiguous run of one term accepted by the cross-frame aggregation."""

    category: Category
    term: Term
    start_frame: int
    end_frame: int
    occurrences: int
    active: bool

    def __post_init__(self) -> None:
        if self.start_frame > self.end_frame:
            raise ValidationError(
                f"Segment: start {self.start_frame} after end {self.end_frame}"
            )
        if self.occurrences < 1:
            raise ValidationError(f"Segment: occurrence count {self.occurrences} < 1")

    def overlaps(self, other: "Segment") -> bool:
        return self.start_frame <= other.end_frame and other.start_frame <= self.end_frame


@dataclass(frozen=True)
class ActionContext:
    """The assembled textual summary for one prediction frame."""

    action_segments: tuple[ActionPair, ...]
    held_objects: tuple[str, ...]
    salient_objects: tuple[str, ...]
    text: str


@dataclass(frozen=True)
class PerCategory:
    """One integer knob per context category."""

    action: int
    held: int
    salient: int

    def get(self, category: Category) -> int:
        return {
            Category.ACTION: self.action,
            Category.HELD: self.held,
            Category.SALIENT: self.salient,
        }[category]


@dataclass(frozen=True)
class SummarizerConfig:
    """All pipeline knobs with their reference operating-point defaults.

    Empty vocabularies and merge tables disable the corresponding
    filtering entirely (the unfiltered operating mode); non-empty sets
    enforce exact membership after label normalization.
    """

    d: int = 4
    k: int = 5
    theta_iou: float = 0.25
    p_o: PerCategory = PerCategory(action=1, held=7, salient=10)
    p_l: PerCategory = PerCategory(action=7, held=7, salient=7)
    stride: int = 3
    window: int = 150
    context_lengths: PerCategory = PerCategory(action=3, held=3, salient=3)
    min_ttc: float = 0.033
    iou_thresh: float = 0.5
    t_delta: float = 0.25
    box_loss_lambda: float = 11.0
    vocab_noun: frozenset[str] = frozenset()
    vocab_verb: frozenset[str] = frozenset()
    generic_nouns: frozenset[str] = frozenset()
    merge_table: tuple[tuple[str, str], ...] = ()

    def __post_init__(self) -> None:
        _validate_config(self)

    def merge_map(self) -> dict[str, str]:
        return dict(self.merge_table)

    def action_noun_vocab(self) -> frozenset[str]:
        """Noun domain admitted into action pairs: configured nouns plus generics."""
        if not self.vocab_noun:
            return frozenset()
        return self.vocab_noun | self.generic_nouns


def _validate_config(cfg: SummarizerConfig) -> None:
    def check(name: str, ok: bool, value) -> None:
        if not ok:
            raise ValidationError(f"config: {name}={value!r} out of range")

    check("d", cfg.d >= 0, cfg.d)
    check("k", cfg.k >= 0, cfg.k)
    check("theta_iou", 0.0 <= cfg.theta_iou <= 1.0, cfg.theta_iou)
    for cat in ("action", "held", "salient"):
        check(f"p_o_{cat}", getattr(cfg.p_o, cat) >= 1, getattr(cfg.p_o, cat))
        check(f"p_l_{cat}", getattr(cfg.p_l, cat) >= 0, getattr(cfg.p_l, cat))
        check(f"l_{cat}", getattr(cfg.context_lengths, cat) >= 0, getattr(cfg.context_lengths, cat))
    check("stride", cfg.stride >= 1, cfg.stride)
    check("window", cfg.window >= 1, cfg.window)
    check("min_ttc", cfg.min_ttc >= 0.0, cfg.min_ttc)
    check("iou_thresh", 0.0 <= cfg.iou_thresh <= 1.0, cfg.iou_thresh)
    check("t_delta", cfg.t_delta >= 0.0, cfg.t_delta)
    check("box_loss_lambda", cfg.box_loss_lambda > 0.0, cfg.box_loss_lambda)


_INT_KEYS = {
    "d": "d",
    "k": "k",
    "stride": "stride",
    "window": "window",
    "p_o_action": ("p_o", "action"),
    "p_o_held": ("p_o", "held"),
    "p_o_salient": ("p_o", "salient"),
    "p_l_action": ("p_l", "action"),
    "p_l_held": ("p_l", "held"),
    "p_l_salient": ("p_l", "salient"),
    "l_action": ("context_lengths", "action"),
    "l_held": ("context_lengths", "held"),
    "l_salient": ("context_lengths", "salient"),
}

_FLOAT_KEYS = {
    "theta_iou": "theta_iou",
    "min_ttc": "min_ttc",
    "iou_thresh": "iou_thresh",
    "t_delta": "t_delta",
    "box_loss_lambda": "box_loss_lambda",
}

_SET_KEYS = ("vocab_noun", "vocab_verb", "generic_nouns")


def _parse_label_set(raw: str) -> frozenset[str]:
    return frozenset(normalize_label(p) for p in raw.split(",") if p.strip())


def _parse_merge_table(raw: str, line: int) -> tuple[tuple[str, str], ...]:
    pairs = []
    for chunk in raw.split(","):
        if not chunk.strip():
            continue
        if "->" not in chunk:
            raise ParseError(f"merge_table entry {chunk.strip()!r} missing '->'", line=line)
        src, dst = chunk.split("->", 1)
        src, dst = normalize_label(src), normalize_label(dst)
        if not src or not dst:
            raise ParseError(f"merge_table entry {chunk.strip()!r} has an empty side", line=line)
        pairs.append((src, dst))
    seen: dict[str, str] = {}
    for src, dst in pairs:
        if src in seen and seen[src] != dst:
            raise ValidationError(f"config: merge_table maps {src!r} to both {seen[src]!r} and {dst!r}")
        seen[src] = dst
    return tuple(sorted(seen.items()))


def load_config(path: str | Path) -> SummarizerConfig:
    """Parse a flat ``key=value`` config file; unspecified keys keep defaults.

    Unknown keys are errors. Blank lines and ``#`` comments are ignored.
    """
    fields: dict = {}
    with open(path, "r", encoding="utf-8") as fh:
        for lineno, raw in enumerate(fh, start=1):
            line = raw.strip()
            if not line or line.startswith("#"):
                continue
            if "=" not in line:
                raise ParseError(f"expected key=value, got {line!r}", line=lineno, path=str(path))
            key, value = line.split("=", 1)
            key, value = key.strip(), value.strip()
            if key in fields:
                raise ParseError(f"duplicate key {key!r}", line=lineno, path=str(path))
            if key in _INT_KEYS:
                try:
                    fields[key] = int(value)
                except ValueError:
                    raise ParseError(f"key {key!r}: {value!r} is not an integer", line=lineno, path=str(path))
            elif key in _FLOAT_KEYS:
                try:
                    fields[key] = float(value)
                except ValueError:
                    raise ParseError(f"key {key!r}: {value!r} is not a number", line=lineno, path=str(path))
            elif key in _SET_KEYS:
                fields[key] = _parse_label_set(value)
            elif key == "merge_table":
                fields[key] = _parse_merge_table(value, lineno)
            else:
                raise ParseError(f"unknown key {key!r}", line=lineno, path=str(path))
    return _config_from_flat(fields)


def _config_from_flat(flat: Mapping) -> SummarizerConfig:
    kwargs: dict = {}
    grouped: dict[str, dict[str, int]] = {}
    for key, value in flat.items():
        target = _INT_KEYS.get(key)
        if isinstance(target, tuple):
            grouped.setdefault(target[0], {})[target[1]] = value
        elif target is not None:
            kwargs[target] = value
        elif key in _FLOAT_KEYS:
            kwargs[_FLOAT_KEYS[key]] = value
        else:
            kwargs[key] = value
    defaults = SummarizerConfig.__dataclass_fields__
    for group, parts in grouped.items():
        base: PerCategory = defaults[group].default
        merged = {
            "action": parts.get("action", base.action),
            "held": parts.get("held", base.held),
            "salient": parts.get("salient", base.salient),
        }
        kwargs[group] = PerCategory(**merged)
    return SummarizerConfig(**kwargs)


def serialize_config(cfg: SummarizerConfig) -> str:
    """Render a config back to the flat file format, deterministically.

    ``load_config`` on the result reproduces an equal config; ``repr`` is
    used for floats so values round-trip exactly.
    """
    lines = []
    for key, target in _INT_KEYS.items():
        if isinstance(target, tuple):
            value = getattr(getattr(cfg, target[0]), target[1])
        else:
            value = getattr(cfg, target)
        lines.append(f"{key}={value}")
    for key, attr in _FLOAT_KEYS.items():
        lines.append(f"{key}={getattr(cfg, attr)!r}")
    for key in _SET_KEYS:
        lines.append(f"{key}={','.join(sorted(getattr(cfg, key)))}")
    lines.append("merge_table=" + ",".join(f"{s}->{d}" for s, d in cfg.merge_table))
    return "\n".join(lines) + "\n"


def config_hash(cfg: SummarizerConfig) -> str:
    """Stable hex digest of a config, embedded in reports for provenance."""
    return hashlib.sha256(serialize_config(cfg).encode("utf-8")).hexdigest()[:16]


EMBEDDING_DIM = 300


class EmbeddingTable:
    """Word -> 300-d vector lookup, case-insensitive on lowercase words."""

    def __init__(self, vectors: Mapping[str, np.ndarray]):
        if not vectors:
            raise ValidationError("EmbeddingTable: empty table")
        table: dict[str, np.ndarray] = {}
        for word, vec in vectors.items():
            arr = np.asarray(vec, dtype=np.float64)
            if arr.shape != (EMBEDDING_DIM,):
                raise ValidationError(
                    f"EmbeddingTable: vector for {word!r} has shape {arr.shape}, "
                    f"expected ({EMBEDDING_DIM},)"
                )
            if not np.all(np.isfinite(arr)):
                raise ValidationError(f"EmbeddingTable: non-finite vector for {word!r}")
            arr.setflags(write=False)
            table[normalize_label(word)] = arr
        self._table = table

    def __len__(self) -> int:
        return len(self._table)

    def __contains__(self, word: str) -> bool:
        return normalize_label(word) in self._table

    def lookup(self, word: str) -> np.ndarray | None:
        return self._table.get(normalize_label(word))


def load_embeddings(path: str | Path) -> EmbeddingTable:
    """Load a tab-separated embedding file: ``word<TAB>v1<TAB>...<TAB>v300``."""
    vectors: dict[str, np.ndarray] = {}
    with open(path, "r", encoding="utf-8") as fh:
        for lineno, raw in enumerate(fh, start=1):
            line = raw.rstrip("\n")
            if not line:
                continue
            parts = line.split("\t")
            if len(parts) != EMBEDDING_DIM + 1:
                raise ParseError(
                    f"expected word + {EMBEDDING_DIM} values, got {len(parts)} fields",
                    line=lineno,
                    path=str(path),
                )
            word = normalize_label(parts[0])
            if not word:
                raise ParseError("empty word", line=lineno, path=str(path))
            if word in vectors:
                raise ParseError(f"duplicate word {word!r}", line=lineno, path=str(path))
            try:
                vectors[word] = np.array([float(p) for p in parts[1:]], dtype=np.float64)
            except ValueError:
                raise ParseError("non-numeric embedding value", line=lineno, path=str(path))
    return EmbeddingTable(vectors)
