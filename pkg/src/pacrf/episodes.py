"""Corpus ingestion, N-way-K-shot episode sampling and a synthetic corpus generator."""

from __future__ import annotations

import json
import logging
from dataclasses import asdict, dataclass, field
from pathlib import Path
from typing import Iterable, Sequence

import numpy as np

from .errors import CorpusFormatError, EpisodeInfeasibleError, InvalidConfigError, InvalidLabelError
from .labelspace import LabelSet, TaggedSentence, build_label_set, labels_to_spans

log = logging.getLogger(__name__)

MAX_SENTENCE_LENGTH = 128
DEFAULT_QUERY_SIZE = 5


@dataclass(frozen=True)
class Corpus:
    sentences: tuple[TaggedSentence, ...]
    labelset: LabelSet
    type_index: dict[str, tuple[int, ...]] = field(default=None, compare=False)

    def __post_init__(self):
        if self.type_index is None:
            index: dict[str, list[int]] = {t: [] for t in self.labelset.event_types}
            for i, s in enumerate(self.sentences):
                for t in sorted({sp.event_type for sp in labels_to_spans(s.labels, self.labelset)}):
                    index[t].append(i)
            object.__setattr__(self, "type_index", {t: tuple(v) for t, v in index.items()})

    def __len__(self) -> int:
        return len(self.sentences)

    @property
    def event_types(self) -> tuple[str, ...]:
        return self.labelset.event_types


def _type_of(label: str) -> str | None:
    if label == "O":
        return None
    if len(label) > 2 and label[:2] in ("B-", "I-"):
        return label[2:]
    return None


def read_types(path) -> list[str]:
    """Newline-separated event type names; blank lines ignored."""
    with open(path, encoding="utf-8") as fh:
        return [ln.strip() for ln in fh if ln.strip()]


def write_types(path, event_types: Iterable[str]) -> None:
    with open(path, "w", encoding="utf-8", newline="\n") as fh:
        for t in event_types:
            fh.write(f"{t}\n")


def parse_records(lines: Iterable[str]) -> list[tuple[int, dict]]:
    out = []
    for lineno, raw in enumerate(lines, start=1):
        if not raw.strip():
            continue
        try:
            rec = json.loads(raw)
        except json.JSONDecodeError as exc:
            raise CorpusFormatError(f"invalid JSON ({exc.msg})", lineno) from None
        if not isinstance(rec, dict) or not isinstance(rec.get("tokens"), list):
            raise CorpusFormatError("expected an object with a 'tokens' array", lineno)
        out.append((lineno, rec))
    return out


def load_corpus(path, labelset: LabelSet | None = None,
                max_length: int = MAX_SENTENCE_LENGTH) -> Corpus:
    """Read a JSON-Lines corpus.

    Each line holds ``tokens`` and ``labels`` (label names). When ``labelset`` is
    None the event types are collected in order of first appearance. Sentences
    longer than ``max_length`` are truncated.
    """
    with open(path, encoding="utf-8") as fh:
        records = parse_records(fh)

    if labelset is None:
        types: list[str] = []
        for lineno, rec in records:
            for lab in rec.get("labels") or []:
                t = _type_of(lab) if isinstance(lab, str) else None
                if t is not None and t not in types:
                    types.append(t)
        labelset = build_label_set(types)

    sentences = []
    truncated = 0
    for lineno, rec in records:
        tokens, labels = rec["tokens"], rec.get("labels")
        if not isinstance(labels, list):
            raise CorpusFormatError("missing 'labels' array", lineno)
        if len(tokens) != len(labels):
            raise CorpusFormatError(f"{len(tokens)} tokens but {len(labels)} labels", lineno)
        try:
            idx = [labelset.index(lab) for lab in labels]
        except InvalidLabelError as exc:
            raise CorpusFormatError(str(exc), lineno) from None
        if len(tokens) > max_length:
            truncated += 1
            tokens, idx = tokens[:max_length], idx[:max_length]
        sid = str(rec.get("id", len(sentences)))
        sentences.append(TaggedSentence(tuple(str(t) for t in tokens), tuple(idx), sid))
    if truncated:
        log.warning("%s: truncated %d sentences to %d tokens", path, truncated, max_length)
    return Corpus(tuple(sentences), labelset)


def sentence_record(sentence: TaggedSentence, labelset: LabelSet) -> dict:
    rec = {"id": sentence.sid} if sentence.sid else {}
    return rec | {"tokens": list(sentence.tokens), "labels": [labelset.name(i) for i in sentence.labels]}


def save_corpus(path, corpus: Corpus) -> None:
    with open(path, "w", encoding="utf-8", newline="\n") as fh:
        for s in corpus.sentences:
            fh.write(json.dumps(sentence_record(s, corpus.labelset), ensure_ascii=False) + "\n")


# ---------------------------------------------------------------------------
# episodes

@dataclass(frozen=True)
class Episode:
    way: int
    shot: int
    labelset: LabelSet
    support: tuple[TaggedSentence, ...]
    query: tuple[TaggedSentence, ...]
    support_ids: tuple[int, ...] = ()
    query_ids: tuple[int, ...] = ()

    def support_by_type(self) -> dict[str, tuple[TaggedSentence, ...]]:
        k = self.shot
        return {t: self.support[i * k:(i + 1) * k] for i, t in enumerate(self.labelset.event_types)}


def relabel(sentence: TaggedSentence, source: LabelSet, target: LabelSet) -> TaggedSentence:
    """Map labels into ``target``; labels of types missing from it become O."""
    out = []
    for i in sentence.labels:
        name = source.labels[i]
        out.append(target._index.get(name, 0))
    return TaggedSentence(sentence.tokens, tuple(out), sentence.sid)


def sample_episode(corpus: Corpus, way: int, shot: int, query: int = DEFAULT_QUERY_SIZE,
                   rng: np.random.Generator | None = None) -> Episode:
    """Draw N types, then K support and M query sentences per type.

    Sentences are drawn without replacement across the whole episode, so support
    and query never share a sentence even when one sentence holds several types.
    """
    if way < 1 or shot < 1 or query < 0:
        raise InvalidConfigError(f"way/shot must be >= 1 and query >= 0 (got {way}, {shot}, {query})")
    rng = rng if rng is not None else np.random.default_rng()
    candidates = [t for t in corpus.event_types if corpus.type_index.get(t)]
    if len(candidates) < way:
        raise EpisodeInfeasibleError(
            f"need {way} event types with instances, corpus has {len(candidates)}")
    need = shot + query
    for t in candidates:
        if len(corpus.type_index[t]) < need:
            raise EpisodeInfeasibleError(
                f"event type {t!r} has {len(corpus.type_index[t])} sentences, need {need}")

    chosen = [candidates[i] for i in rng.choice(len(candidates), size=way, replace=False)]
    used: set[int] = set()
    support_ids, query_ids = [], []
    for t in chosen:
        pool = [i for i in corpus.type_index[t] if i not in used]
        if len(pool) < need:
            raise EpisodeInfeasibleError(
                f"event type {t!r} has only {len(pool)} sentences left after earlier draws, need {need}")
        picked = [pool[i] for i in rng.choice(len(pool), size=need, replace=False)]
        used.update(picked)
        support_ids += picked[:shot]
        query_ids += picked[shot:]

    ep_labels = build_label_set(chosen)
    support = tuple(relabel(corpus.sentences[i], corpus.labelset, ep_labels) for i in support_ids)
    queries = tuple(relabel(corpus.sentences[i], corpus.labelset, ep_labels) for i in query_ids)
    return Episode(way, shot, ep_labels, support, queries, tuple(support_ids), tuple(query_ids))


# ---------------------------------------------------------------------------
# synthetic corpora

@dataclass(frozen=True)
class SyntheticConfig:
    vocab_size: int = 300
    num_types: int = 25
    test_types: int = 5
    lexicon_size: int = 3
    continuation_size: int = 2
    p_multi: float = 0.5
    distractor_rate: float = 0.5
    overlap: float = 0.0
    min_length: int = 6
    max_length: int = 14
    sentences_per_type: int = 40
    seed: int = 0

    def validate(self) -> None:
        for name in ("p_multi", "distractor_rate", "overlap"):
            v = getattr(self, name)
            if not 0.0 <= v <= 1.0:
                raise InvalidConfigError(f"{name} must lie in [0, 1], got {v}")
        for name in ("vocab_size", "num_types", "test_types", "lexicon_size", "continuation_size",
                     "min_length", "sentences_per_type"):
            if getattr(self, name) < 1:
                raise InvalidConfigError(f"{name} must be positive, got {getattr(self, name)}")
        if self.test_types >= self.num_types:
            raise InvalidConfigError("test_types must be smaller than num_types")
        if self.min_length < 5 or self.max_length < self.min_length:
            raise InvalidConfigError("need 5 <= min_length <= max_length")

    def to_dict(self) -> dict:
        return asdict(self)


def _split_lexicon(own: list[str], shared: list[str], overlap: float,
                   rng: np.random.Generator) -> list[str]:
    n_shared = int(round(overlap * len(own)))
    common = [shared[j] for j in sorted(rng.choice(len(shared), size=n_shared, replace=False))]
    return own[:len(own) - n_shared] + common


def generate_synthetic(cfg: SyntheticConfig) -> tuple[Corpus, Corpus]:
    """Generate (train, test) corpora over disjoint event types.

    Every sentence carries exactly one trigger: a head word from its type's
    lexicon, continued with probability ``p_multi`` by 1-2 of the type's
    continuation words (a 2-3 token B-I(-I) span, think "locked up"). With
    probability ``distractor_rate`` a continuation word of the same type also
    appears elsewhere in the sentence tagged O, so a continuation word is
    inside a trigger only when it follows one. ``overlap`` is the fraction of
    each type's head and continuation words taken from pools shared by all
    types; at 0 no two types share a trigger word.
    """
    cfg.validate()
    rng = np.random.default_rng(cfg.seed)
    background = [f"w{j}" for j in range(cfg.vocab_size)]
    shared_heads = [f"trig{j}" for j in range(cfg.lexicon_size)]
    shared_cont = [f"part{j}" for j in range(cfg.continuation_size)]
    type_names = [f"Event{t:02d}" for t in range(cfg.num_types)]
    heads, conts = [], []
    for t in range(cfg.num_types):
        heads.append(_split_lexicon([f"t{t:02d}h{j}" for j in range(cfg.lexicon_size)],
                                    shared_heads, cfg.overlap, rng))
        conts.append(_split_lexicon([f"t{t:02d}c{j}" for j in range(cfg.continuation_size)],
                                    shared_cont, cfg.overlap, rng))

    per_type: list[list[tuple]] = []
    for t in range(cfg.num_types):
        sents = []
        for _ in range(cfg.sentences_per_type):
            n = int(rng.integers(cfg.min_length, cfg.max_length + 1))
            k = int(rng.integers(2, 4)) if rng.random() < cfg.p_multi else 1
            start = int(rng.integers(0, n - k + 1))
            words = [heads[t][int(rng.integers(len(heads[t])))]]
            words += [conts[t][int(j)] for j in rng.integers(len(conts[t]), size=k - 1)]
            tokens = [background[j] for j in rng.integers(0, cfg.vocab_size, size=n)]
            tokens[start:start + k] = words
            if rng.random() < cfg.distractor_rate:
                # any slot outside the trigger that does not directly follow it
                free = [p for p in range(n) if not start <= p <= start + k]
                pos = free[int(rng.integers(len(free)))]
                tokens[pos] = conts[t][int(rng.integers(len(conts[t])))]
            sents.append((tuple(tokens), start, k))
        per_type.append(sents)

    test_ids = {int(i) for i in rng.choice(cfg.num_types, size=cfg.test_types, replace=False)}
    train_types = [type_names[t] for t in range(cfg.num_types) if t not in test_ids]
    test_types = [type_names[t] for t in range(cfg.num_types) if t in test_ids]

    def build(names: Sequence[str], split: str) -> Corpus:
        ls = build_label_set(names)
        out = []
        for name in names:
            t = type_names.index(name)
            b, i = ls.begin(name), ls.inside(name)
            for tokens, start, k in per_type[t]:
                labels = [0] * len(tokens)
                labels[start] = b
                for p in range(start + 1, start + k):
                    labels[p] = i
                out.append(TaggedSentence(tokens, tuple(labels), f"{split}-{len(out)}"))
        return Corpus(tuple(out), ls)

    return build(train_types, "train"), build(test_types, "test")


def trigger_lexicon(corpus: Corpus) -> dict[str, set[str]]:
    """Words that occur inside a trigger span, per event type."""
    out: dict[str, set[str]] = {t: set() for t in corpus.event_types}
    for s in corpus.sentences:
        for sp in labels_to_spans(s.labels, corpus.labelset):
            out[sp.event_type].update(s.tokens[sp.start:sp.end])
    return out
