"""Model variants, episodic training and episodic evaluation."""

from __future__ import annotations

import logging
import math
import warnings
from concurrent.futures import ThreadPoolExecutor
from dataclasses import asdict, dataclass, field, fields
from typing import Callable, Iterable, Mapping, Sequence

import numpy as np

from . import numeric as nm
from .crf import bio_constraints, crf_nll, marginals, mc_nll, viterbi
from .emission import ZeroPrototypeWarning, compute_prototypes, emission_scores
from .encoder import PrecomputedEncoder, ToyEncoder, Vocabulary, build_vocabulary, load_precomputed
from .episodes import DEFAULT_QUERY_SIZE, Corpus, Episode, sample_episode
from .errors import DivergenceError, InvalidConfigError
from .labelspace import PRF, LabelSet, TaggedSentence, labels_to_spans, micro_f1
from .optim import AdamW
from .transition import (DEFAULT_MC_SAMPLES, TransitionDistribution, approximate_distribution,
                         approximator_shapes, interact, interaction_shapes, rng_source)

log = logging.getLogger(__name__)

CRF_VARIANTS = ("pa-crf", "point-estimate", "no-interaction", "vanilla-crf")
TOKEN_VARIANTS = {"emission-only": "dot", "match": "cosine", "proto": "neg-sqeuclid", "proto-dot": "dot"}
VARIANTS = CRF_VARIANTS + tuple(TOKEN_VARIANTS)
DECODE_MODES = ("mean", "mc-marginal")


@dataclass
class TrainingConfig:
    way: int = 5
    shot: int = 5
    query: int = DEFAULT_QUERY_SIZE
    train_iterations: int = 2000
    eval_episodes: int = 200
    mc_samples: int = DEFAULT_MC_SAMPLES
    learning_rate: float = 1e-3
    weight_decay: float = 0.01
    seed: int = 0
    variant: str = "pa-crf"
    encoder: str = "toy"
    d_h: int = 32
    mix: float = 0.1
    embedding_scale: float = 1.0
    embeddings_path: str = ""
    decode: str = "mean"
    constrained: bool = False
    train_path: str = ""
    test_path: str = ""
    vocab_paths: list[str] = field(default_factory=list)

    def validate(self) -> "TrainingConfig":
        if self.variant not in VARIANTS:
            raise InvalidConfigError(f"unknown variant {self.variant!r}; choose from {', '.join(VARIANTS)}")
        for name in ("way", "shot", "mc_samples", "d_h"):
            if getattr(self, name) < 1:
                raise InvalidConfigError(f"{name} must be positive, got {getattr(self, name)}")
        for name in ("query", "train_iterations", "eval_episodes"):
            if getattr(self, name) < 0:
                raise InvalidConfigError(f"{name} must be non-negative, got {getattr(self, name)}")
        if not self.learning_rate >= 0:
            raise InvalidConfigError(f"learning rate must be non-negative, got {self.learning_rate}")
        if self.weight_decay < 0:
            raise InvalidConfigError("weight decay must be non-negative")
        if self.encoder not in ("toy", "precomputed"):
            raise InvalidConfigError(f"unknown encoder {self.encoder!r}")
        if self.encoder == "precomputed" and not self.embeddings_path:
            raise InvalidConfigError("precomputed encoder needs embeddings_path")
        if self.decode not in DECODE_MODES:
            raise InvalidConfigError(f"unknown decode mode {self.decode!r}")
        if not 0.0 <= self.mix <= 1.0:
            raise InvalidConfigError(f"mix must lie in [0, 1], got {self.mix}")
        return self

    def to_dict(self) -> dict:
        return asdict(self)

    @classmethod
    def from_dict(cls, d: Mapping) -> "TrainingConfig":
        known = {f.name for f in fields(cls)}
        unknown = set(d) - known
        if unknown:
            raise InvalidConfigError(f"unknown config keys: {', '.join(sorted(unknown))}")
        return cls(**dict(d))


# ---------------------------------------------------------------------------
# model assembly

class Model:
    """Encoder + emission module + variant-specific transition module."""

    def __init__(self, config: TrainingConfig, encoder, params: dict[str, np.ndarray]):
        self.config = config
        self.encoder = encoder
        self.params = params

    @property
    def variant(self) -> str:
        return self.config.variant

    @property
    def num_labels(self) -> int:
        return 2 * self.config.way + 1

    @property
    def is_crf(self) -> bool:
        return self.variant in CRF_VARIANTS

    @property
    def similarity(self) -> str:
        return TOKEN_VARIANTS.get(self.variant, "dot")

    def head_shapes(self) -> dict[str, tuple[int, ...]]:
        d = self.encoder.d_h
        v = self.variant
        if v == "pa-crf":
            return interaction_shapes(d) | approximator_shapes(d)
        if v == "point-estimate":
            return interaction_shapes(d) | approximator_shapes(d, with_variance=False)
        if v == "no-interaction":
            return approximator_shapes(d)
        if v == "vanilla-crf":
            return {"vanilla.transitions": (self.num_labels, self.num_labels)}
        return {}

    # -- forward pieces -----------------------------------------------------

    def encode_episode(self, tape: nm.Tape, support: Sequence[TaggedSentence],
                       query: Sequence) -> tuple[nm.Tensor, np.ndarray, nm.Tensor, np.ndarray]:
        H, mask = self.encoder.encode_batch(tape, self.params, list(support) + list(query))
        ns = len(support)
        Hs = nm.select_rows(H, np.arange(ns))
        Hq = nm.select_rows(H, np.arange(ns, H.shape[0]))
        return Hs, mask[:ns], Hq, mask[ns:]

    def prototypes(self, tape, Hs, support_mask, support: Sequence[TaggedSentence], labelset: LabelSet):
        return compute_prototypes(Hs, [s.labels for s in support], labelset, mask=support_mask)

    def transition_distribution(self, tape: nm.Tape, protos: nm.Tensor) -> TransitionDistribution | None:
        v = self.variant
        if v in ("pa-crf", "point-estimate"):
            ctilde = interact(protos, self.params, tape)
            return approximate_distribution(ctilde, self.params, tape, point_estimate=(v == "point-estimate"))
        if v == "no-interaction":
            return approximate_distribution(protos, self.params, tape)
        return None

    def fixed_transitions(self, tape: nm.Tape) -> nm.Tensor | None:
        if self.variant == "vanilla-crf":
            return tape.parameter("vanilla.transitions", self.params["vanilla.transitions"])
        return None

    def forward(self, tape: nm.Tape, support: Sequence[TaggedSentence], query: Sequence,
                labelset: LabelSet):
        """Emissions for the query batch plus the transition source for this episode."""
        if len(labelset) != self.num_labels and self.variant == "vanilla-crf":
            raise InvalidConfigError(
                f"vanilla-crf was built for {self.num_labels} labels, episode has {len(labelset)}")
        Hs, ms, Hq, mq = self.encode_episode(tape, support, query)
        protos = self.prototypes(tape, Hs, ms, support, labelset)
        E = emission_scores(Hq, protos, self.similarity)
        dist = self.transition_distribution(tape, protos.values) if self.is_crf else None
        return E, mq, protos, dist

    # -- objective ----------------------------------------------------------

    def loss(self, tape: nm.Tape, episode: Episode, eps) -> nm.Tensor:
        E, mask, _, dist = self.forward(tape, episode.support, episode.query, episode.labelset)
        B, n = mask.shape
        labels = np.zeros((B, n), dtype=np.int64)
        for b, s in enumerate(episode.query):
            labels[b, :len(s)] = s.labels
        if self.variant in ("pa-crf", "no-interaction"):
            return mc_nll(E, labels, dist, self.config.mc_samples, eps, mask)
        if self.variant == "point-estimate":
            return crf_nll(E, dist.mu, labels, mask)
        if self.variant == "vanilla-crf":
            return crf_nll(E, self.fixed_transitions(tape), labels, mask)
        # token-level softmax cross-entropy, summed per sentence, averaged over sentences
        logp = E - nm.logsumexp(E, axis=-1, keepdims=True)
        onehot = np.zeros(E.shape)
        onehot[np.arange(B)[:, None], np.arange(n)[None, :], labels] = 1.0
        onehot *= mask[..., None]
        return nm.scale(nm.sum(nm.mul(logp, onehot)), -1.0 / B)

    # -- inference ----------------------------------------------------------

    def decode_scores(self, support: Sequence[TaggedSentence], query: Sequence, labelset: LabelSet):
        """(emissions per query as arrays, mask, decode transitions or None, distribution)."""
        E, mask, protos, dist = self.forward(nm.Tape(), support, query, labelset)
        if self.variant == "vanilla-crf":
            T = self.params["vanilla.transitions"]
        elif dist is not None:
            T = dist.mu.value
        else:
            T = None
        return E.value, mask, T, dist, protos

    def predict(self, support: Sequence[TaggedSentence], query: Sequence, labelset: LabelSet,
                rng: np.random.Generator | None = None,
                emission_hook: Callable[[int, np.ndarray], np.ndarray] | None = None) -> list[list[int]]:
        E, mask, T, dist, _ = self.decode_scores(support, query, labelset)
        L = len(labelset)
        allowed = start = None
        if self.config.constrained:
            allowed, start = bio_constraints(labelset.num_types)
        out = []
        for b in range(E.shape[0]):
            n = int(mask[b].sum())
            e = E[b, :n]
            if emission_hook is not None:
                e = emission_hook(b, e)
            if T is None:
                out.append(viterbi(e, np.zeros((L, L)), allowed, start))
            elif (self.config.decode == "mc-marginal" and dist is not None
                  and dist.log_sigma2 is not None):
                rng = rng if rng is not None else np.random.default_rng(0)
                sigma = np.exp(0.5 * dist.log_sigma2.value)
                marg = np.zeros((n, L))
                for _ in range(self.config.mc_samples):
                    marg += marginals(e, dist.mu.value + sigma * rng.standard_normal((L, L)))
                out.append([int(i) for i in np.argmax(marg, axis=1)])
            else:
                out.append(viterbi(e, T, allowed, start))
        return out


def build_encoder(config: TrainingConfig, vocab: Vocabulary | None = None):
    if config.encoder == "precomputed":
        return load_precomputed(config.embeddings_path, d_h=config.d_h)
    return ToyEncoder(vocab if vocab is not None else Vocabulary(), config.d_h, config.mix,
                      config.embedding_scale)


def build_variant(config: TrainingConfig, encoder=None, vocab: Vocabulary | None = None) -> Model:
    """Assemble and initialise the model for ``config.variant``.

    Encoder weights come from their own seeded stream, so every variant built
    with the same seed shares one encoder initialisation.
    """
    config.validate()
    encoder = encoder if encoder is not None else build_encoder(config, vocab)
    params = dict(encoder.init_params(np.random.default_rng([config.seed, 0])))
    model = Model(config, encoder, params)
    head_rng = np.random.default_rng([config.seed, 1])
    for name, shape in model.head_shapes().items():
        if name == "vanilla.transitions" or len(shape) == 1:
            params[name] = np.zeros(shape)
        else:
            params[name] = nm.init_weight(head_rng, shape)
    return model


# ---------------------------------------------------------------------------
# training

@dataclass
class TrainResult:
    model: Model
    losses: list[float]
    rng_state: dict
    grad_seen: dict[str, bool] = field(default_factory=dict)


def train(config: TrainingConfig, corpus: Corpus, vocab: Vocabulary | None = None,
          model: Model | None = None, progress: Callable[[int, float], None] | None = None) -> TrainResult:
    """Episodic training: sample episode, compute loss, back-propagate, AdamW step."""
    config.validate()
    if model is None:
        if vocab is None and config.encoder == "toy":
            vocab = build_vocabulary(corpus.sentences)
        model = build_variant(config, vocab=vocab)
    rng = np.random.default_rng([config.seed, 2])
    opt = AdamW(lr=config.learning_rate, weight_decay=config.weight_decay)
    eps = rng_source(rng)
    losses: list[float] = []
    grad_seen = {k: False for k in model.params}
    for it in range(config.train_iterations):
        episode = sample_episode(corpus, config.way, config.shot, config.query, rng)
        tape = nm.Tape()
        with warnings.catch_warnings():
            warnings.simplefilter("ignore", ZeroPrototypeWarning)
            loss = model.loss(tape, episode, eps)
        value = float(loss.value)
        if not math.isfinite(value):
            raise DivergenceError(f"loss became {value} at iteration {it}")
        grads = tape.backward(loss)
        for k, g in grads.items():
            if not grad_seen.get(k) and np.any(g != 0):
                grad_seen[k] = True
        opt.step(model.params, grads)
        losses.append(value)
        if progress is not None:
            progress(it, value)
    return TrainResult(model, losses, rng.bit_generator.state, grad_seen)


# ---------------------------------------------------------------------------
# evaluation

@dataclass
class EvalReport:
    variant: str
    way: int
    shot: int
    episodes: int
    precision: tuple[float, float]
    recall: tuple[float, float]
    f1: tuple[float, float]
    per_episode_f1: list[float] = field(default_factory=list)

    def row(self) -> dict:
        return {"variant": self.variant, "way": self.way, "shot": self.shot, "episodes": self.episodes,
                "precision_mean": self.precision[0], "precision_std": self.precision[1],
                "recall_mean": self.recall[0], "recall_std": self.recall[1],
                "f1_mean": self.f1[0], "f1_std": self.f1[1]}


def _mean_std(xs: Sequence[float]) -> tuple[float, float]:
    a = np.asarray(xs, dtype=np.float64)
    return float(a.mean()), float(a.std())


def evaluate(model: Model, corpus: Corpus, episodes: int, seed: int = 0, way: int | None = None,
             shot: int | None = None, query: int | None = None,
             emission_hook: Callable[[Episode, int, np.ndarray], np.ndarray] | None = None,
             threads: int = 1) -> EvalReport:
    """Mean and population standard deviation of per-episode micro P/R/F1.

    Episodes are drawn sequentially from one seeded stream and each episode
    decodes with its own seeded stream, so results do not depend on ``threads``.
    """
    if episodes < 1:
        raise InvalidConfigError(f"need at least one evaluation episode, got {episodes}")
    cfg = model.config
    way = way or cfg.way
    shot = shot or cfg.shot
    query = cfg.query if query is None else query
    rng = np.random.default_rng([seed, 3])
    eps = [sample_episode(corpus, way, shot, query, rng) for _ in range(episodes)]

    def score(i: int) -> PRF:
        ep = eps[i]
        hook = None if emission_hook is None else (lambda b, e: emission_hook(ep, b, e))
        pred = model.predict(ep.support, ep.query, ep.labelset, np.random.default_rng([seed, 4, i]), hook)
        p_spans = [labels_to_spans(y, ep.labelset) for y in pred]
        g_spans = [labels_to_spans(s.labels, ep.labelset) for s in ep.query]
        return micro_f1(p_spans, g_spans)

    if threads > 1:
        # warning filters are process-global; silence before the workers start
        with warnings.catch_warnings():
            warnings.simplefilter("ignore", ZeroPrototypeWarning)
            with ThreadPoolExecutor(max_workers=threads) as pool:
                results = list(pool.map(score, range(episodes)))
    else:
        with warnings.catch_warnings():
            warnings.simplefilter("ignore", ZeroPrototypeWarning)
            results = [score(i) for i in range(episodes)]
    return EvalReport(cfg.variant, way, shot, episodes, _mean_std([r.precision for r in results]),
                      _mean_std([r.recall for r in results]), _mean_std([r.f1 for r in results]),
                      [r.f1 for r in results])
