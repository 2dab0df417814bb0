"""Double-part BIO label space, span conversion and exact-match micro F1."""

from __future__ import annotations

from collections import Counter
from dataclasses import dataclass, field
from typing import Iterable, Sequence

from .errors import CorpusMismatchError, DuplicateTypeError, InvalidLabelError, InvalidNameError

OUTSIDE = "O"


@dataclass(frozen=True)
class LabelSet:
    """Labels ``O, B-t1, I-t1, B-t2, I-t2, ...`` with a name <-> index bijection."""

    event_types: tuple[str, ...]
    labels: tuple[str, ...] = field(init=False)
    _index: dict = field(init=False, repr=False, compare=False)

    def __post_init__(self):
        labels = [OUTSIDE]
        for t in self.event_types:
            labels += [f"B-{t}", f"I-{t}"]
        object.__setattr__(self, "labels", tuple(labels))
        object.__setattr__(self, "_index", {name: i for i, name in enumerate(labels)})

    def __len__(self) -> int:
        return len(self.labels)

    @property
    def num_types(self) -> int:
        return len(self.event_types)

    def index(self, name: str) -> int:
        try:
            return self._index[name]
        except KeyError:
            raise InvalidLabelError(f"unknown label {name!r}") from None

    def name(self, index: int) -> str:
        if not 0 <= index < len(self.labels):
            raise InvalidLabelError(f"label index {index} out of range [0, {len(self.labels)})")
        return self.labels[index]

    def begin(self, event_type: str) -> int:
        return self.index(f"B-{event_type}")

    def inside(self, event_type: str) -> int:
        return self.index(f"I-{event_type}")

    def decompose(self, index: int) -> tuple[str, str | None]:
        """(prefix, event type) for a label index; ``("O", None)`` for O."""
        if index == 0:
            return OUTSIDE, None
        self.name(index)
        t = self.event_types[(index - 1) // 2]
        return ("B" if index % 2 == 1 else "I"), t


def build_label_set(event_types: Iterable[str]) -> LabelSet:
    types = list(event_types)
    seen = set()
    for t in types:
        if not isinstance(t, str) or not t.strip():
            raise InvalidNameError(f"invalid event type name {t!r}")
        if t in seen:
            raise DuplicateTypeError(f"duplicate event type {t!r}")
        seen.add(t)
    return LabelSet(tuple(types))


@dataclass(frozen=True)
class TaggedSentence:
    tokens: tuple[str, ...]
    labels: tuple[int, ...]
    sid: str = ""

    def __post_init__(self):
        if len(self.tokens) != len(self.labels):
            raise InvalidLabelError(
                f"sentence {self.sid!r}: {len(self.tokens)} tokens but {len(self.labels)} labels")

    def __len__(self) -> int:
        return len(self.tokens)


@dataclass(frozen=True, order=True)
class TriggerSpan:
    start: int
    end: int
    event_type: str


def labels_to_spans(labels: Sequence[int] | TaggedSentence, labelset: LabelSet) -> list[TriggerSpan]:
    """Relaxed BIO decoding.

    A stray ``I-t`` (not continuing a span of type t) opens a new span, and
    ``I-t`` after a span of another type closes that span first.
    """
    if isinstance(labels, TaggedSentence):
        labels = labels.labels
    spans = []
    cur_start, cur_type = None, None
    for pos, idx in enumerate(labels):
        prefix, t = labelset.decompose(int(idx))
        if prefix == "I" and cur_type == t:
            continue
        if cur_type is not None:
            spans.append(TriggerSpan(cur_start, pos, cur_type))
            cur_start, cur_type = None, None
        if prefix != OUTSIDE:
            cur_start, cur_type = pos, t
    if cur_type is not None:
        spans.append(TriggerSpan(cur_start, len(labels), cur_type))
    return spans


def spans_to_labels(spans: Iterable[TriggerSpan], length: int, labelset: LabelSet) -> list[int]:
    out = [0] * length
    for s in spans:
        if not 0 <= s.start < s.end <= length:
            raise InvalidLabelError(f"span {s} outside sentence of length {length}")
        out[s.start] = labelset.begin(s.event_type)
        for i in range(s.start + 1, s.end):
            out[i] = labelset.inside(s.event_type)
    return out


@dataclass(frozen=True)
class PRF:
    precision: float
    recall: float
    f1: float
    tp: int = 0
    fp: int = 0
    fn: int = 0

    def __iter__(self):
        return iter((self.precision, self.recall, self.f1))


def micro_f1(predicted: Sequence[Iterable[TriggerSpan]], gold: Sequence[Iterable[TriggerSpan]]) -> PRF:
    """Exact (start, end, type) match, micro-averaged over the corpus.

    Each gold span absorbs at most one identical prediction; extra duplicates are
    false positives.
    """
    if len(predicted) != len(gold):
        raise CorpusMismatchError(f"{len(predicted)} predicted sentences vs {len(gold)} gold")
    tp = fp = fn = 0
    for p, g in zip(predicted, gold):
        pc = Counter((s.start, s.end, s.event_type) for s in p)
        gc = Counter((s.start, s.end, s.event_type) for s in g)
        hit = sum((pc & gc).values())
        tp += hit
        fp += sum(pc.values()) - hit
        fn += sum(gc.values()) - hit
    precision = tp / (tp + fp) if tp + fp else 0.0
    recall = tp / (tp + fn) if tp + fn else 0.0
    f1 = 2 * precision * recall / (precision + recall) if precision + recall else 0.0
    return PRF(precision, recall, f1, tp, fp, fn)
