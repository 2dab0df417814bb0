"""Versioned binary checkpoints.

Layout (little-endian)::

    b"PACRFCKP"  uint32 version  32-byte sha256 of the config JSON
    uint32 n + n bytes of UTF-8 JSON metadata (config, vocabulary, rng state, ...)
    uint32 tensor count, then per tensor:
        uint32 n + UTF-8 name, uint32 ndim, ndim x uint64 shape, float64 data
"""

from __future__ import annotations

import hashlib
import json
import struct
from dataclasses import dataclass, field
from pathlib import Path
from typing import Mapping

import numpy as np

from .encoder import ToyEncoder, Vocabulary, load_precomputed
from .errors import CheckpointVersionError, CorruptCheckpointError, InvalidShapeError
from .trainer import Model, TrainingConfig

CKPT_MAGIC = b"PACRFCKP"
CKPT_VERSION = 1


def config_digest(config: TrainingConfig) -> bytes:
    text = json.dumps(config.to_dict(), sort_keys=True, separators=(",", ":"))
    return hashlib.sha256(text.encode("utf-8")).digest()


@dataclass
class Checkpoint:
    config: TrainingConfig
    params: dict[str, np.ndarray]
    vocab: list[str] | None = None
    rng_state: dict | None = None
    extra: dict = field(default_factory=dict)
    version: int = CKPT_VERSION

    @classmethod
    def from_model(cls, model: Model, rng_state: dict | None = None, **extra) -> "Checkpoint":
        vocab = list(model.encoder.vocab.words) if isinstance(model.encoder, ToyEncoder) else None
        return cls(model.config, {k: v.copy() for k, v in model.params.items()}, vocab, rng_state, extra)

    def to_model(self) -> Model:
        """Rebuild the encoder and wrap the stored parameters (no re-initialisation)."""
        cfg = self.config
        if cfg.encoder == "precomputed":
            encoder = load_precomputed(cfg.embeddings_path, d_h=cfg.d_h)
        else:
            encoder = ToyEncoder(Vocabulary(self.vocab[1:] if self.vocab else ()), cfg.d_h, cfg.mix,
                                 cfg.embedding_scale)
        model = Model(cfg, encoder, {k: v.copy() for k, v in self.params.items()})
        expected = dict(encoder.param_shapes()) | model.head_shapes()
        for name, shape in expected.items():
            if name not in model.params:
                raise CorruptCheckpointError(f"checkpoint lacks parameter {name!r}")
            if model.params[name].shape != tuple(shape):
                raise InvalidShapeError(
                    f"parameter {name!r} has shape {model.params[name].shape}, model expects {tuple(shape)}")
        return model


def save_checkpoint(path, ckpt: Checkpoint) -> None:
    meta = {"config": ckpt.config.to_dict(), "vocab": ckpt.vocab, "rng_state": ckpt.rng_state,
            "extra": ckpt.extra}
    raw_meta = json.dumps(meta, sort_keys=True).encode("utf-8")
    parts = [CKPT_MAGIC, struct.pack("<I", CKPT_VERSION), config_digest(ckpt.config),
             struct.pack("<I", len(raw_meta)), raw_meta, struct.pack("<I", len(ckpt.params))]
    for name in sorted(ckpt.params):
        arr = np.ascontiguousarray(ckpt.params[name], dtype="<f8")
        raw_name = name.encode("utf-8")
        parts += [struct.pack("<I", len(raw_name)), raw_name, struct.pack("<I", arr.ndim),
                  struct.pack(f"<{arr.ndim}Q", *arr.shape), arr.tobytes()]
    Path(path).write_bytes(b"".join(parts))


class _Reader:
    def __init__(self, data: bytes, path):
        self.data, self.pos, self.path = data, 0, path

    def take(self, n: int) -> bytes:
        if self.pos + n > len(self.data):
            raise CorruptCheckpointError(f"{self.path}: truncated at byte {self.pos} (needed {n} more)")
        out = self.data[self.pos:self.pos + n]
        self.pos += n
        return out

    def unpack(self, fmt: str):
        return struct.unpack(fmt, self.take(struct.calcsize(fmt)))


def load_checkpoint(path, d_h: int | None = None) -> Checkpoint:
    """Read a checkpoint; ``d_h`` (if given) must match the stored configuration."""
    try:
        data = Path(path).read_bytes()
    except OSError as exc:
        raise CorruptCheckpointError(f"{path}: cannot read checkpoint ({exc.strerror})") from None
    r = _Reader(data, path)
    if r.take(len(CKPT_MAGIC)) != CKPT_MAGIC:
        raise CorruptCheckpointError(f"{path}: not a PACRFCKP checkpoint")
    (version,) = r.unpack("<I")
    if version != CKPT_VERSION:
        raise CheckpointVersionError(f"{path}: format version {version}, this build reads {CKPT_VERSION}")
    digest = r.take(32)
    (n_meta,) = r.unpack("<I")
    try:
        meta = json.loads(r.take(n_meta).decode("utf-8"))
        config = TrainingConfig.from_dict(meta["config"])
    except (UnicodeDecodeError, json.JSONDecodeError, KeyError, TypeError) as exc:
        raise CorruptCheckpointError(f"{path}: unreadable metadata ({exc})") from None
    if config_digest(config) != digest:
        raise CorruptCheckpointError(f"{path}: config digest mismatch")
    if d_h is not None and d_h != config.d_h:
        raise InvalidShapeError(f"{path}: checkpoint has d_h={config.d_h}, configured d_h={d_h}")
    (count,) = r.unpack("<I")
    params: dict[str, np.ndarray] = {}
    for _ in range(count):
        (n_name,) = r.unpack("<I")
        try:
            name = r.take(n_name).decode("utf-8")
        except UnicodeDecodeError:
            raise CorruptCheckpointError(f"{path}: bad tensor name at byte {r.pos}") from None
        (ndim,) = r.unpack("<I")
        shape = r.unpack(f"<{ndim}Q")
        size = int(np.prod(shape, dtype=np.int64))
        params[name] = np.frombuffer(r.take(8 * size), dtype="<f8").reshape(shape).astype(np.float64)
    if r.pos != len(data):
        raise CorruptCheckpointError(f"{path}: {len(data) - r.pos} trailing bytes")
    return Checkpoint(config, params, meta.get("vocab"), meta.get("rng_state"), meta.get("extra") or {},
                      version)


def params_equal(a: Mapping[str, np.ndarray], b: Mapping[str, np.ndarray]) -> bool:
    return a.keys() == b.keys() and all(np.array_equal(a[k], b[k]) for k in a)
