"""Gaussian transition scores generated from label prototypes.

The interaction layer is single-head, unscaled dot-product self-attention over
prototypes. The approximator maps each ordered pair ``[c_i || c_j]`` to a mean
and a log-variance with two affine maps. Samples are drawn as
``mu + eps * sigma`` so gradients reach mu and sigma but not eps.
"""

from __future__ import annotations

import warnings
from dataclasses import dataclass
from typing import Callable, Mapping, Sequence

import numpy as np

from . import numeric as nm
from .errors import InvalidLabelError, InvalidShapeError

LOG_VAR_CLAMP = 30.0
DEFAULT_MC_SAMPLES = 5

EpsilonSource = Callable[[tuple[int, ...]], np.ndarray]


def rng_source(rng: np.random.Generator) -> EpsilonSource:
    return lambda shape: rng.standard_normal(shape)


def fixed_source(value) -> EpsilonSource:
    """Test hook: every draw returns ``value`` broadcast to the requested shape."""
    arr = np.asarray(value, dtype=np.float64)
    return lambda shape: np.broadcast_to(arr, shape).copy()


def interaction_shapes(d_h: int) -> dict[str, tuple[int, ...]]:
    return {f"interaction.{w}": (d_h, d_h) for w in ("w_q", "w_k", "w_v")} | \
           {f"interaction.{b}": (d_h,) for b in ("b_q", "b_k", "b_v")}


def approximator_shapes(d_h: int, with_variance: bool = True) -> dict[str, tuple[int, ...]]:
    shapes = {"approximator.w_mu": (1, 2 * d_h), "approximator.b_mu": (1,)}
    if with_variance:
        shapes |= {"approximator.w_sigma2": (1, 2 * d_h), "approximator.b_sigma2": (1,)}
    return shapes


def _p(tape: nm.Tape, params: Mapping, name: str) -> nm.Tensor:
    v = params[name]
    return v if isinstance(v, nm.Tensor) else tape.parameter(name, v)


def interact(prototypes: nm.Tensor, params: Mapping, tape: nm.Tape | None = None,
             return_attention: bool = False):
    """Row i of the output is ``sum_j alpha_ij (W_v c_j + b_v)``.

    ``alpha_i = softmax_j((W_q c_i + b_q) . (W_k c_j + b_k))``, without a
    1/sqrt(d) factor.
    """
    tape = tape or prototypes.tape or nm.Tape()
    C = prototypes
    if C.ndim != 2:
        raise InvalidShapeError(f"interact: prototypes must be (L, d_h), got {C.shape}")
    d = C.shape[1]
    w = {k: _p(tape, params, f"interaction.{k}") for k in ("w_q", "b_q", "w_k", "b_k", "w_v", "b_v")}
    for k in ("w_q", "w_k", "w_v"):
        if w[k].shape != (d, d):
            raise InvalidShapeError(f"interact: {k} has shape {w[k].shape}, expected {(d, d)}")
    Q = C @ nm.transpose(w["w_q"]) + w["b_q"]
    K = C @ nm.transpose(w["w_k"]) + w["b_k"]
    V = C @ nm.transpose(w["w_v"]) + w["b_v"]
    alpha = nm.softmax(Q @ nm.transpose(K), axis=-1)
    out = alpha @ V
    return (out, alpha) if return_attention else out


@dataclass
class TransitionDistribution:
    mu: nm.Tensor                     # (L, L)
    log_sigma2: nm.Tensor | None      # (L, L), clamped; None for point estimates

    @classmethod
    def from_arrays(cls, mu, sigma2=None, tape: nm.Tape | None = None) -> "TransitionDistribution":
        """Wrap fixed (mu, sigma2) values; sigma2 is not clamped here."""
        tape = tape or nm.Tape()
        mu_t = mu if isinstance(mu, nm.Tensor) else tape.constant(mu)
        if sigma2 is None:
            return cls(mu_t, None)
        ls = np.log(np.asarray(sigma2, dtype=np.float64))
        return cls(mu_t, tape.constant(np.broadcast_to(ls, mu_t.shape).copy()))

    @property
    def sigma2(self) -> np.ndarray | None:
        return None if self.log_sigma2 is None else np.exp(self.log_sigma2.value)

    @property
    def num_labels(self) -> int:
        return self.mu.shape[0]


def pair_features(ctilde: nm.Tensor) -> nm.Tensor:
    """(L*L, 2 d_h) matrix whose row i*L + j is ``[c_i || c_j]``."""
    L = ctilde.shape[0]
    ii, jj = np.divmod(np.arange(L * L), L)
    return nm.concat([nm.select_rows(ctilde, ii), nm.select_rows(ctilde, jj)], axis=-1)


def approximate_distribution(ctilde: nm.Tensor, params: Mapping, tape: nm.Tape | None = None,
                             point_estimate: bool = False) -> TransitionDistribution:
    tape = tape or ctilde.tape or nm.Tape()
    if ctilde.ndim != 2:
        raise InvalidShapeError(f"approximate_distribution: expected (L, d_h), got {ctilde.shape}")
    L, d = ctilde.shape
    pairs = pair_features(ctilde)
    w_mu = _p(tape, params, "approximator.w_mu")
    if w_mu.shape != (1, 2 * d):
        raise InvalidShapeError(f"approximator.w_mu has shape {w_mu.shape}, expected {(1, 2 * d)}")
    mu = nm.reshape(pairs @ nm.transpose(w_mu) + _p(tape, params, "approximator.b_mu"), (L, L))
    if point_estimate:
        return TransitionDistribution(mu, None)
    w_s = _p(tape, params, "approximator.w_sigma2")
    z = nm.reshape(pairs @ nm.transpose(w_s) + _p(tape, params, "approximator.b_sigma2"), (L, L))
    if np.any(np.abs(z.value) > LOG_VAR_CLAMP):
        warnings.warn(f"log-variance clamped to [-{LOG_VAR_CLAMP:g}, {LOG_VAR_CLAMP:g}]",
                      RuntimeWarning, stacklevel=2)
        z = nm.clip(z, -LOG_VAR_CLAMP, LOG_VAR_CLAMP)
    return TransitionDistribution(mu, z)


def sample_transitions(dist: TransitionDistribution, eps: EpsilonSource | np.random.Generator,
                       samples: int | None = None) -> nm.Tensor:
    """Reparameterized draw(s): (L, L), or (S, L, L) when ``samples`` is given.

    A point-estimate distribution returns mu unchanged and draws nothing.
    """
    if dist.log_sigma2 is None:
        return dist.mu if samples is None else nm.reshape(dist.mu, (1,) + dist.mu.shape)
    if isinstance(eps, np.random.Generator):
        eps = rng_source(eps)
    L = dist.num_labels
    shape = (L, L) if samples is None else (samples, L, L)
    noise = eps(shape)
    sigma = nm.exp(nm.scale(dist.log_sigma2, 0.5))
    return dist.mu + nm.mul(sigma, noise)


def sequence_transition(labels: Sequence[int], transitions):
    """Sum of T[y_t, y_{t+1}] over consecutive positions (no start or end terms)."""
    y = np.asarray(labels, dtype=np.int64)
    if y.ndim != 1 or y.size < 1:
        raise InvalidLabelError("label sequence must be non-empty")
    L = transitions.shape[-1]
    if y.min() < 0 or y.max() >= L:
        raise InvalidLabelError(f"label index outside [0, {L})")
    counts = transition_counts(y, L)
    if isinstance(transitions, nm.Tensor):
        return nm.sum(nm.mul(transitions, counts))
    return float(np.sum(np.asarray(transitions) * counts))


def transition_counts(labels: Sequence[int], num_labels: int) -> np.ndarray:
    counts = np.zeros((num_labels, num_labels))
    y = np.asarray(labels, dtype=np.int64)
    np.add.at(counts, (y[:-1], y[1:]), 1.0)
    return counts
