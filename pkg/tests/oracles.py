"""Independent reference implementations used as test oracles.

Everything here is written from the definitions with plain Python loops and
exhaustive enumeration, and shares no code with the package under test.
"""

from __future__ import annotations

import itertools
import math
from collections import Counter

import numpy as np


# ---------------------------------------------------------------------------
# linear-chain CRF by enumeration

def all_paths(n: int, L: int):
    return itertools.product(range(L), repeat=n)


def path_score(E, T, y) -> float:
    s = 0.0
    for t, label in enumerate(y):
        s += float(E[t][label])
        if t > 0:
            s += float(T[y[t - 1]][label])
    return s


def log_partition(E, T) -> float:
    n, L = len(E), len(E[0])
    scores = [path_score(E, T, y) for y in all_paths(n, L)]
    m = max(scores)
    return m + math.log(math.fsum(math.exp(s - m) for s in scores))


def best_path(E, T) -> tuple[float, tuple[int, ...]]:
    """Maximum score and, among the maximisers, the path a left-to-right
    dynamic program with lowest-index tie-breaking returns: the smallest one
    when compared from the last position backwards."""
    n, L = len(E), len(E[0])
    scored = [(path_score(E, T, y), y) for y in all_paths(n, L)]
    top = max(s for s, _ in scored)
    winners = [y for s, y in scored if s == top]
    return top, min(winners, key=lambda y: tuple(reversed(y)))


def marginals(E, T) -> np.ndarray:
    n, L = len(E), len(E[0])
    logz = log_partition(E, T)
    out = np.zeros((n, L))
    for y in all_paths(n, L):
        p = math.exp(path_score(E, T, y) - logz)
        for t, label in enumerate(y):
            out[t, label] += p
    return out


def nll(E, T, y) -> float:
    return log_partition(E, T) - path_score(E, T, y)


# ---------------------------------------------------------------------------
# finite differences

def central_difference(f, x: np.ndarray, step: float = 1e-6) -> np.ndarray:
    """Gradient of scalar ``f`` at ``x`` by central differences (x is not modified)."""
    x = np.array(x, dtype=np.float64)
    g = np.zeros_like(x)
    for idx in np.ndindex(*x.shape):
        xp = x.copy()
        xm = x.copy()
        xp[idx] += step
        xm[idx] -= step
        g[idx] = (f(xp) - f(xm)) / (2 * step)
    return g


# ---------------------------------------------------------------------------
# BIO spans and micro F1 from label *names*

def spans_from_names(names) -> list[tuple[int, int, str]]:
    """Relaxed BIO decoding written over strings: a stray I-x starts a span, an
    I-x after a span of another type starts a new span. ``end`` is exclusive."""
    spans = []
    start = kind = None
    for pos, name in enumerate(list(names) + ["O"]):
        tag, _, typ = name.partition("-")
        continues = tag == "I" and kind == typ
        if not continues and kind is not None:
            spans.append((start, pos, kind))
            start = kind = None
        if tag in ("B", "I") and not continues:
            start, kind = pos, typ
    return spans


def prf(pred_sentences, gold_sentences) -> tuple[float, float, float]:
    tp = n_pred = n_gold = 0
    for p, g in zip(pred_sentences, gold_sentences, strict=True):
        remaining = Counter(g)
        for span in p:
            if remaining[span] > 0:
                remaining[span] -= 1
                tp += 1
        n_pred += len(p)
        n_gold += len(g)
    precision = tp / n_pred if n_pred else 0.0
    recall = tp / n_gold if n_gold else 0.0
    f1 = 2 * precision * recall / (precision + recall) if precision + recall > 0 else 0.0
    return precision, recall, f1


# ---------------------------------------------------------------------------
# optimizer

def adamw_trajectory(x0: float, grads, lr=1e-3, b1=0.9, b2=0.999, eps=1e-8, wd=0.01) -> list[float]:
    """Scalar AdamW with decoupled decay, one step per gradient in ``grads``."""
    x, m, v, out = float(x0), 0.0, 0.0, []
    for t, g in enumerate(grads, start=1):
        x = x - lr * wd * x
        m = b1 * m + (1 - b1) * g
        v = b2 * v + (1 - b2) * g * g
        m_hat = m / (1 - b1 ** t)
        v_hat = v / (1 - b2 ** t)
        x = x - lr * m_hat / (math.sqrt(v_hat) + eps)
        out.append(x)
    return out


# ---------------------------------------------------------------------------
# attention and prototypes by loops

def softmax_row(xs) -> list[float]:
    m = max(xs)
    e = [math.exp(x - m) for x in xs]
    s = math.fsum(e)
    return [v / s for v in e]


def interaction(C, Wq, bq, Wk, bk, Wv, bv) -> np.ndarray:
    """Row i = sum_j softmax_j((Wq c_i + bq).(Wk c_j + bk)) (Wv c_j + bv), unscaled."""
    C = np.asarray(C)
    q = [Wq @ c + bq for c in C]
    k = [Wk @ c + bk for c in C]
    v = [Wv @ c + bv for c in C]
    out = np.zeros((len(C), len(v[0])))
    for i in range(len(C)):
        w = softmax_row([float(q[i] @ k[j]) for j in range(len(C))])
        for j in range(len(C)):
            out[i] += w[j] * v[j]
    return out


def prototypes(hidden_rows, labels, num_labels: int) -> np.ndarray:
    d = len(hidden_rows[0])
    sums = [np.zeros(d) for _ in range(num_labels)]
    counts = [0] * num_labels
    for h, y in zip(hidden_rows, labels):
        sums[y] = sums[y] + np.asarray(h)
        counts[y] += 1
    return np.array([s / c if c else np.zeros(d) for s, c in zip(sums, counts)])
