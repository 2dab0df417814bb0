"""Token encoders producing per-token hidden vectors.

``ToyEncoder`` is a trainable embedding table followed by one single-head
self-attention mixer: ``h_i = (1 - mix) * e(w_i) + mix * attn_i``. It has no
positional signal. ``PrecomputedEncoder`` serves fixed vectors read from a
PACRFEMB file and contributes no parameters.
"""

from __future__ import annotations

import struct
from typing import Iterable, Mapping, Sequence

import numpy as np

from . import numeric as nm
from .errors import EmptyInputError, InvalidConfigError, InvalidShapeError, MissingEmbeddingError
from .labelspace import TaggedSentence

UNK = "<unk>"
EMB_MAGIC = b"PACRFEMB"
_MASK_NEG = -1e30


class Vocabulary:
    """Word -> id map; id 0 is the shared unknown word."""

    def __init__(self, words: Iterable[str] = ()):
        self.words: list[str] = [UNK]
        self._ids: dict[str, int] = {UNK: 0}
        for w in words:
            self.add(w)

    def add(self, word: str) -> int:
        if word not in self._ids:
            self._ids[word] = len(self.words)
            self.words.append(word)
        return self._ids[word]

    def __len__(self) -> int:
        return len(self.words)

    def __contains__(self, word: str) -> bool:
        return word in self._ids

    def id(self, word: str) -> int:
        return self._ids.get(word, 0)

    def ids(self, tokens: Sequence[str]) -> list[int]:
        return [self._ids.get(w, 0) for w in tokens]


def build_vocabulary(sentences: Iterable[TaggedSentence | Sequence[str]]) -> Vocabulary:
    vocab = Vocabulary()
    for s in sentences:
        for w in (s.tokens if isinstance(s, TaggedSentence) else s):
            vocab.add(w)
    return vocab


def _tokens(s) -> Sequence[str]:
    return s.tokens if isinstance(s, TaggedSentence) else s


def pad_mask(sentences: Sequence) -> np.ndarray:
    lengths = [len(_tokens(s)) for s in sentences]
    if not lengths or min(lengths) == 0:
        raise EmptyInputError("cannot encode an empty sentence")
    mask = np.zeros((len(lengths), max(lengths)))
    for b, n in enumerate(lengths):
        mask[b, :n] = 1.0
    return mask


class ToyEncoder:
    kind = "toy"

    def __init__(self, vocab: Vocabulary, d_h: int = 32, mix: float = 0.5,
                 embedding_scale: float = 1.0):
        if d_h <= 0:
            raise InvalidConfigError(f"d_h must be positive, got {d_h}")
        if not 0.0 <= mix <= 1.0:
            raise InvalidConfigError(f"mix weight must lie in [0, 1], got {mix}")
        self.vocab = vocab
        self.d_h = d_h
        self.mix = float(mix)
        self.embedding_scale = float(embedding_scale)

    def param_shapes(self) -> dict[str, tuple[int, ...]]:
        d = self.d_h
        return {
            "encoder.embedding": (len(self.vocab), d),
            "encoder.w_q": (d, d), "encoder.b_q": (d,),
            "encoder.w_k": (d, d), "encoder.b_k": (d,),
            "encoder.w_v": (d, d), "encoder.b_v": (d,),
        }

    def init_params(self, rng: np.random.Generator) -> dict[str, np.ndarray]:
        # An embedding lookup is a one-hot input, so its effective fan-in is 1.
        out = {"encoder.embedding": self.embedding_scale * nm.init_weight(
            rng, (len(self.vocab), self.d_h), fan_in=1)}
        for name, shape in self.param_shapes().items():
            if name == "encoder.embedding":
                continue
            out[name] = nm.init_weight(rng, shape) if len(shape) == 2 else np.zeros(shape)
        return out

    def encode_batch(self, tape: nm.Tape, params: Mapping[str, np.ndarray],
                     sentences: Sequence) -> tuple[nm.Tensor, np.ndarray]:
        """Encode a padded batch; returns (B, n_max, d_h) hidden states and the (B, n_max) mask."""
        mask = pad_mask(sentences)
        B, n = mask.shape
        ids = np.zeros((B, n), dtype=np.int64)
        for b, s in enumerate(sentences):
            toks = _tokens(s)
            ids[b, :len(toks)] = self.vocab.ids(toks)
        emb = tape.parameter("encoder.embedding", params["encoder.embedding"])
        E = nm.select_rows(emb, ids)
        if self.mix == 0.0:
            return E, mask
        p = {k: tape.parameter(f"encoder.{k}", params[f"encoder.{k}"])
             for k in ("w_q", "b_q", "w_k", "b_k", "w_v", "b_v")}
        Q = E @ p["w_q"] + p["b_q"]
        K = E @ p["w_k"] + p["b_k"]
        V = E @ p["w_v"] + p["b_v"]
        scores = nm.scale(Q @ nm.transpose(K), 1.0 / np.sqrt(self.d_h))
        key_mask = np.where(mask[:, None, :] > 0, 0.0, _MASK_NEG)
        A = nm.softmax(scores + key_mask, axis=-1)
        H = nm.scale(E, 1.0 - self.mix) + nm.scale(A @ V, self.mix)
        return H, mask

    def encode(self, tokens: Sequence[str], params: Mapping[str, np.ndarray]) -> np.ndarray:
        if len(tokens) == 0:
            raise EmptyInputError("cannot encode an empty sentence")
        H, _ = self.encode_batch(nm.Tape(), params, [list(tokens)])
        return H.value[0]

    def config(self) -> dict:
        return {"kind": self.kind, "d_h": self.d_h, "mix": self.mix,
                "embedding_scale": self.embedding_scale}


class PrecomputedEncoder:
    """Fixed vectors keyed by sentence id; they are constants on the tape."""

    kind = "precomputed"

    def __init__(self, blocks: Mapping[str, np.ndarray], d_h: int | None = None, path: str = ""):
        self.blocks = {str(k): np.asarray(v, dtype=np.float64) for k, v in blocks.items()}
        dims = {v.shape[1] for v in self.blocks.values()}
        if len(dims) > 1:
            raise InvalidShapeError(f"precomputed blocks disagree on d_h: {sorted(dims)}")
        stored = dims.pop() if dims else d_h
        if d_h is not None and stored is not None and stored != d_h:
            raise InvalidShapeError(f"precomputed d_h {stored} does not match configured d_h {d_h}")
        self.d_h = stored if stored is not None else 0
        self.path = str(path)

    def param_shapes(self) -> dict:
        return {}

    def init_params(self, rng) -> dict:
        return {}

    def _block(self, s) -> np.ndarray:
        sid = s.sid if isinstance(s, TaggedSentence) else None
        if sid is None or sid not in self.blocks:
            raise MissingEmbeddingError(f"no precomputed embedding for sentence id {sid!r}")
        block = self.blocks[sid]
        if block.shape[0] != len(_tokens(s)):
            raise InvalidShapeError(
                f"sentence {sid!r}: {len(_tokens(s))} tokens but stored block has {block.shape[0]} rows")
        return block

    def encode_batch(self, tape: nm.Tape, params, sentences: Sequence) -> tuple[nm.Tensor, np.ndarray]:
        mask = pad_mask(sentences)
        out = np.zeros(mask.shape + (self.d_h,))
        for b, s in enumerate(sentences):
            block = self._block(s)
            out[b, :block.shape[0]] = block
        return tape.constant(out), mask

    def encode(self, sentence: TaggedSentence, params=None) -> np.ndarray:
        return self._block(sentence).copy()

    def config(self) -> dict:
        return {"kind": self.kind, "d_h": self.d_h, "path": self.path}


def save_precomputed(path, blocks: Mapping[str, np.ndarray]) -> None:
    """Write ``PACRFEMB`` + uint64 count + records (id, n, d_h, float64 rows), little-endian."""
    with open(path, "wb") as fh:
        fh.write(EMB_MAGIC)
        fh.write(struct.pack("<Q", len(blocks)))
        for sid, block in blocks.items():
            block = np.ascontiguousarray(block, dtype="<f8")
            if block.ndim != 2:
                raise InvalidShapeError(f"block {sid!r} must be 2-D, got shape {block.shape}")
            raw = str(sid).encode("utf-8")
            fh.write(struct.pack("<I", len(raw)))
            fh.write(raw)
            fh.write(struct.pack("<II", *block.shape))
            fh.write(block.tobytes())


def read_precomputed(path) -> dict[str, np.ndarray]:
    with open(path, "rb") as fh:
        data = fh.read()
    if data[:8] != EMB_MAGIC:
        raise InvalidShapeError(f"{path}: missing PACRFEMB header")
    try:
        (count,) = struct.unpack_from("<Q", data, 8)
        pos = 16
        blocks = {}
        for _ in range(count):
            (ln,) = struct.unpack_from("<I", data, pos)
            pos += 4
            sid = data[pos:pos + ln].decode("utf-8")
            pos += ln
            n, d = struct.unpack_from("<II", data, pos)
            pos += 8
            nbytes = 8 * n * d
            if pos + nbytes > len(data):
                raise struct.error("truncated block")
            blocks[sid] = np.frombuffer(data, dtype="<f8", count=n * d, offset=pos).reshape(n, d).astype(np.float64)
            pos += nbytes
    except (struct.error, UnicodeDecodeError) as exc:
        raise InvalidShapeError(f"{path}: malformed embedding file ({exc})") from None
    return blocks


def load_precomputed(path, d_h: int | None = None) -> PrecomputedEncoder:
    return PrecomputedEncoder(read_precomputed(path), d_h=d_h, path=str(path))
