"""Linear-chain CRF: forward algorithm, log-likelihood, Monte-Carlo NLL, Viterbi.

Score of a label sequence y over n tokens:
``sum_t E[t, y_t] + sum_{t<n} T[y_t, y_{t+1}]`` -- no start or end transitions.

Differentiable functions take ``numeric.Tensor`` inputs and broadcast over
leading batch axes: emissions (..., n, L), transitions (..., L, L), mask (..., n).
Decoding functions work on plain arrays.
"""

from __future__ import annotations

from dataclasses import dataclass
from typing import Sequence

import numpy as np

from . import numeric as nm
from .errors import EmptyInputError, InvalidConfigError, InvalidLabelError, InvalidShapeError
from .transition import EpsilonSource, TransitionDistribution, sample_transitions, transition_counts


@dataclass
class CrfScore:
    emissions: nm.Tensor | np.ndarray     # (n, L)
    transitions: nm.Tensor | np.ndarray   # (L, L)

    def __post_init__(self):
        L = self.emissions.shape[-1]
        if self.transitions.shape[-2:] != (L, L):
            raise InvalidShapeError(
                f"emissions have {L} labels but transitions have shape {self.transitions.shape}")
        if self.emissions.shape[-2] < 1:
            raise EmptyInputError("CRF over an empty sentence")

    @property
    def length(self) -> int:
        return self.emissions.shape[-2]

    @property
    def num_labels(self) -> int:
        return self.emissions.shape[-1]


def _t(x, tape: nm.Tape | None = None) -> nm.Tensor:
    if isinstance(x, nm.Tensor):
        return x
    return (tape or nm.Tape()).constant(x)


def forward_scores(emissions: nm.Tensor, transitions: nm.Tensor, mask: np.ndarray | None = None) -> nm.Tensor:
    """Log-partition for every batch element; padded steps (mask 0) are skipped.

    Returns a tensor with the broadcast batch shape of the inputs.
    """
    E = emissions
    T = _t(transitions, E.tape)
    n, L = E.shape[-2], E.shape[-1]
    if n < 1:
        raise EmptyInputError("CRF over an empty sentence")
    if T.shape[-2:] != (L, L):
        raise InvalidShapeError(f"emissions have {L} labels but transitions have shape {T.shape}")
    alpha = nm.select_rows(E, 0, axis=-2)
    for t in range(1, n):
        prev = nm.reshape(alpha, alpha.shape + (1,))
        step = nm.logsumexp(prev + T, axis=-2, keepdims=False)
        new = step + nm.select_rows(E, t, axis=-2)
        if mask is not None:
            m = np.asarray(mask)[..., t:t + 1]
            if m.all():
                alpha = new
            else:
                alpha = nm.mul(new, m) + nm.mul(alpha, 1.0 - m)
        else:
            alpha = new
    return nm.logsumexp(alpha, axis=-1, keepdims=False)


def gold_scores(emissions: nm.Tensor, transitions: nm.Tensor, labels: np.ndarray,
                mask: np.ndarray | None = None) -> nm.Tensor:
    """EMIT + TRANS of the gold sequences; ``labels`` is (B, n) over padded length."""
    E = emissions
    T = _t(transitions, E.tape)
    B, n, L = labels.shape[0], E.shape[-2], E.shape[-1]
    mask = np.ones((B, n)) if mask is None else np.asarray(mask)
    onehot = np.zeros((B, n, L))
    onehot[np.arange(B)[:, None], np.arange(n)[None, :], labels] = 1.0
    onehot *= mask[..., None]
    counts = np.zeros((B, L, L))
    for b in range(B):
        m = int(mask[b].sum())
        counts[b] = transition_counts(labels[b, :m], L)
    emit = nm.sum(nm.mul(E, onehot), axis=(-2, -1))
    trans = nm.sum(nm.mul(T, counts), axis=(-2, -1))
    return emit + trans


def log_partition(score: CrfScore):
    """log Z by the forward recursion. Returns a Tensor for Tensor input, else a float."""
    is_t = isinstance(score.emissions, nm.Tensor) or isinstance(score.transitions, nm.Tensor)
    tape = next((x.tape for x in (score.emissions, score.transitions) if isinstance(x, nm.Tensor)), None)
    out = forward_scores(_t(score.emissions, tape), _t(score.transitions, tape))
    return out if is_t else float(out.value)


def sequence_log_prob(score: CrfScore, labels: Sequence[int]):
    y = np.asarray(labels, dtype=np.int64)
    if y.shape != (score.length,):
        raise InvalidLabelError(f"label sequence of length {y.size} for a sentence of length {score.length}")
    if y.min() < 0 or y.max() >= score.num_labels:
        raise InvalidLabelError(f"label index outside [0, {score.num_labels})")
    is_t = isinstance(score.emissions, nm.Tensor) or isinstance(score.transitions, nm.Tensor)
    tape = next((x.tape for x in (score.emissions, score.transitions) if isinstance(x, nm.Tensor)), None)
    E = _t(score.emissions, tape)
    T = _t(score.transitions, E.tape)
    gold = gold_scores(nm.reshape(E, (1,) + E.shape), T, y[None, :])
    out = nm.reshape(gold, ()) - forward_scores(E, T)
    return out if is_t else float(out.value)


def crf_nll(emissions: nm.Tensor, transitions: nm.Tensor, labels: np.ndarray,
            mask: np.ndarray | None = None) -> nm.Tensor:
    """Mean over the batch of -log p(y | x) for a fixed transition matrix."""
    B = labels.shape[0]
    ll = gold_scores(emissions, transitions, labels, mask) - forward_scores(emissions, transitions, mask)
    return nm.scale(nm.sum(ll), -1.0 / B)


def mc_nll(emissions: nm.Tensor, labels: np.ndarray, dist: TransitionDistribution, samples: int,
           eps: EpsilonSource | np.random.Generator, mask: np.ndarray | None = None) -> nm.Tensor:
    """Monte-Carlo negative log-likelihood averaged over queries and samples.

    Each of the ``samples`` transition draws is shared by every query; the
    loss is ``-(1 / (B * S)) sum_b sum_s log p(y_b | x_b, T_s)``.
    """
    if samples < 1:
        raise InvalidConfigError(f"need at least one Monte-Carlo sample, got {samples}")
    E = emissions if emissions.ndim == 3 else nm.reshape(emissions, (1,) + emissions.shape)
    labels = np.asarray(labels, dtype=np.int64)
    if labels.ndim == 1:
        labels = labels[None, :]
    if mask is not None and np.ndim(mask) == 1:
        mask = np.asarray(mask)[None, :]
    B, _, L = E.shape
    T = sample_transitions(dist, eps, samples)            # (S', L, L)
    S = T.shape[0]
    T4 = nm.reshape(T, (S, 1, L, L))
    ll = gold_scores(E, T4, labels, mask) - forward_scores(E, T4, mask)   # (S, B)
    return nm.scale(nm.sum(ll), -1.0 / (B * S))


# ---------------------------------------------------------------------------
# decoding (plain numpy)

def viterbi(emissions, transitions, allowed: np.ndarray | None = None,
            allowed_start: np.ndarray | None = None) -> list[int]:
    """Highest-scoring label sequence; ties go to the lowest label index.

    ``allowed`` / ``allowed_start`` optionally forbid transitions and first labels.
    """
    E = np.asarray(emissions.value if isinstance(emissions, nm.Tensor) else emissions, dtype=np.float64)
    T = np.asarray(transitions.value if isinstance(transitions, nm.Tensor) else transitions, dtype=np.float64)
    if E.ndim != 2 or E.shape[0] < 1:
        raise EmptyInputError("viterbi needs a non-empty (n, L) emission matrix")
    n, L = E.shape
    if T.shape != (L, L):
        raise InvalidShapeError(f"emissions have {L} labels but transitions have shape {T.shape}")
    if allowed is not None:
        T = np.where(allowed, T, -np.inf)
    delta = E[0].copy()
    if allowed_start is not None:
        delta = np.where(allowed_start, delta, -np.inf)
    back = np.zeros((n, L), dtype=np.int64)
    for t in range(1, n):
        cand = delta[:, None] + T
        back[t] = np.argmax(cand, axis=0)
        delta = cand[back[t], np.arange(L)] + E[t]
    path = [int(np.argmax(delta))]
    for t in range(n - 1, 0, -1):
        path.append(int(back[t, path[-1]]))
    return path[::-1]


def path_score(emissions, transitions, labels: Sequence[int]) -> float:
    E = np.asarray(emissions)
    T = np.asarray(transitions)
    y = np.asarray(labels)
    return float(E[np.arange(len(y)), y].sum() + T[y[:-1], y[1:]].sum())


def marginals(emissions, transitions) -> np.ndarray:
    """Posterior label marginals p(y_t = l | x) by forward-backward, shape (n, L)."""
    E = np.asarray(emissions, dtype=np.float64)
    T = np.asarray(transitions, dtype=np.float64)
    n, L = E.shape

    def lse(x, axis):
        m = np.max(x, axis=axis, keepdims=True)
        return np.squeeze(m, axis) + np.log(np.sum(np.exp(x - m), axis=axis))

    alpha = np.zeros((n, L))
    beta = np.zeros((n, L))
    alpha[0] = E[0]
    for t in range(1, n):
        alpha[t] = lse(alpha[t - 1][:, None] + T, 0) + E[t]
    for t in range(n - 2, -1, -1):
        beta[t] = lse(T + (E[t + 1] + beta[t + 1])[None, :], 1)
    logz = lse(alpha[-1], 0)
    return np.exp(alpha + beta - logz)


def bio_constraints(num_types: int) -> tuple[np.ndarray, np.ndarray]:
    """(allowed transitions, allowed first labels) forbidding ill-formed BIO.

    ``I-t`` may only follow ``B-t`` or ``I-t`` and may not start a sentence.
    """
    L = 2 * num_types + 1
    allowed = np.ones((L, L), dtype=bool)
    start = np.ones(L, dtype=bool)
    for k in range(num_types):
        b, i = 1 + 2 * k, 2 + 2 * k
        allowed[:, i] = False
        allowed[b, i] = allowed[i, i] = True
        start[i] = False
    return allowed, start
