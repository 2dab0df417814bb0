"""Label prototypes from the support set and prototype-similarity emission scores."""

from __future__ import annotations

import warnings
from dataclasses import dataclass
from typing import Sequence

import numpy as np

from . import numeric as nm
from .errors import InvalidLabelError, InvalidShapeError
from .labelspace import LabelSet

SIMILARITIES = ("dot", "cosine", "neg-sqeuclid")


class ZeroPrototypeWarning(UserWarning):
    """A label had no support tokens, so its prototype is the zero vector."""


@dataclass
class PrototypeSet:
    values: nm.Tensor          # (2N+1, d_h)
    counts: np.ndarray         # support tokens per label
    labelset: LabelSet

    @property
    def missing(self) -> list[str]:
        return [self.labelset.labels[i] for i in np.flatnonzero(self.counts == 0)]


def _as_tensor(x, tape: nm.Tape | None = None) -> nm.Tensor:
    if isinstance(x, nm.Tensor):
        return x
    return (tape or nm.Tape()).constant(x)


def compute_prototypes(hidden, labels: Sequence[Sequence[int]], labelset: LabelSet,
                       mask: np.ndarray | None = None, warn: bool = True) -> PrototypeSet:
    """Mean hidden vector of all support tokens carrying each label.

    ``hidden`` is either a padded (B, n, d_h) tensor with ``mask`` or a list of
    per-sentence (n_i, d_h) matrices. Labels without support tokens get a zero
    prototype and a :class:`ZeroPrototypeWarning`.
    """
    L = len(labelset)
    if isinstance(hidden, (list, tuple)):
        mats = [_as_tensor(h) for h in hidden]
        dims = {m.shape[-1] for m in mats}
        if len(dims) != 1 or any(m.ndim != 2 for m in mats):
            raise InvalidShapeError(f"support hidden matrices disagree on d_h: {[m.shape for m in mats]}")
        for m, lab in zip(mats, labels):
            if m.shape[0] != len(lab):
                raise InvalidShapeError(f"hidden matrix has {m.shape[0]} rows for {len(lab)} labels")
        flat = nm.concat(mats, axis=0)
        flat_labels = np.concatenate([np.asarray(lab, dtype=np.int64) for lab in labels])
        valid = np.ones(len(flat_labels), dtype=bool)
    else:
        hidden = _as_tensor(hidden)
        if hidden.ndim != 3:
            raise InvalidShapeError(f"padded support hidden must be (B, n, d_h), got {hidden.shape}")
        B, n, d = hidden.shape
        flat = nm.reshape(hidden, (B * n, d))
        flat_labels = np.zeros((B, n), dtype=np.int64)
        for b, lab in enumerate(labels):
            flat_labels[b, :len(lab)] = lab
        flat_labels = flat_labels.reshape(-1)
        valid = (mask.reshape(-1) > 0) if mask is not None else np.ones(B * n, dtype=bool)

    if flat_labels.size and (flat_labels.min() < 0 or flat_labels[valid].max(initial=0) >= L):
        raise InvalidLabelError(f"support label index outside [0, {L})")
    counts = np.bincount(flat_labels[valid], minlength=L).astype(np.int64)
    avg = np.zeros((L, flat.shape[0]))
    cols = np.flatnonzero(valid)
    avg[flat_labels[cols], cols] = 1.0
    nz = counts > 0
    avg[nz] /= counts[nz, None]
    protos = nm.matmul(flat.tape.constant(avg) if flat.tape else avg, flat)
    result = PrototypeSet(protos, counts, labelset)
    if warn and not nz.all():
        warnings.warn(f"zero prototype for labels with no support tokens: {', '.join(result.missing)}",
                      ZeroPrototypeWarning, stacklevel=2)
    return result


def emission_scores(query_hidden, prototypes: PrototypeSet | nm.Tensor,
                    similarity: str = "dot") -> nm.Tensor:
    """Entry (j, i) = similarity(h_j, c_i); works on (n, d_h) or padded (B, n, d_h)."""
    protos = prototypes.values if isinstance(prototypes, PrototypeSet) else _as_tensor(prototypes)
    h = _as_tensor(query_hidden, protos.tape)
    if h.shape[-1] != protos.shape[-1]:
        raise InvalidShapeError(
            f"emission_scores: query d_h {h.shape[-1]} vs prototype d_h {protos.shape[-1]}")
    if similarity == "dot":
        return h @ nm.transpose(protos)
    if similarity == "neg-sqeuclid":
        hh = nm.sum(nm.mul(h, h), axis=-1, keepdims=True)
        cc = nm.reshape(nm.sum(nm.mul(protos, protos), axis=-1), (1, protos.shape[0]))
        return nm.scale(h @ nm.transpose(protos), 2.0) - hh - cc
    if similarity == "cosine":
        return _unit(h) @ nm.transpose(_unit(protos))
    raise InvalidShapeError(f"unknown similarity {similarity!r}; expected one of {SIMILARITIES}")


def _unit(x: nm.Tensor, eps: float = 1e-12) -> nm.Tensor:
    sq = nm.sum(nm.mul(x, x), axis=-1, keepdims=True)
    inv_norm = nm.exp(nm.scale(nm.log(sq + eps), -0.5))
    return nm.mul(x, inv_norm)


def sequence_emission(emissions, labels: Sequence[int]):
    """Sum of emissions[t, labels[t]]; a scalar Tensor for Tensor input, else float."""
    E = emissions
    n, L = E.shape[-2], E.shape[-1]
    y = np.asarray(labels, dtype=np.int64)
    if y.shape != (n,):
        raise InvalidLabelError(f"label sequence of length {y.size} for {n} positions")
    if y.size and (y.min() < 0 or y.max() >= L):
        raise InvalidLabelError(f"label index outside [0, {L})")
    onehot = np.zeros((n, L))
    onehot[np.arange(n), y] = 1.0
    if isinstance(E, nm.Tensor):
        return nm.sum(nm.mul(E, onehot))
    return float(np.asarray(E)[np.arange(n), y].sum())
