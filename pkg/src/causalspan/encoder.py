"""Per-token encoder states: contextual vectors concatenated with trainable
POS-tag embeddings.

The contextual part comes from either (a) a trainable token-embedding table,
optionally passed through one bidirectional recurrent layer, or (b) a file
of externally precomputed vectors adopted verbatim (and frozen). Both routes
produce rows of width d_h = context_dim + pos_dim, with row 0 reserved for
the sentinel token.
"""

from __future__ import annotations

import hashlib
from collections import Counter
from dataclasses import dataclass
from typing import Optional, Sequence

import numpy as np

from . import autodiff as ad
from . import nn
from .autodiff import Tensor
from .corpus import Example, Segment, SENTINEL_TEXT
from .errors import (
    DimensionMismatch,
    MissingSegment,
    RowCountMismatch,
    WidthMismatch,
)
from .postag import ALL_TAGS, TAG_TO_ID

UNK_TEXT = "<unk>"
PAD_TEXT = "<pad>"
SENTINEL_ID, UNK_ID, PAD_ID = 0, 1, 2
N_TAGS = len(ALL_TAGS)


@dataclass(frozen=True)
class EncoderConfig:
    context_dim: int = 64
    pos_dim: int = 32
    vocab_size: int = 0
    recurrent: bool = True

    @property
    def d_h(self) -> int:
        return self.context_dim + self.pos_dim

    def validate(self):
        if self.context_dim <= 0 or self.pos_dim < 1 or self.vocab_size <= 0:
            raise DimensionMismatch(f"bad encoder dims: {self}")
        if self.d_h % 2 != 0:
            raise DimensionMismatch("d_h must be even (pointer BiLSTM splits it)")
        if self.recurrent and self.context_dim % 2 != 0:
            raise DimensionMismatch("context_dim must be even in recurrent mode")


class Vocabulary:
    """Token-to-id map with fixed reserved ids 0..2 (sentinel, unk, pad)."""

    def __init__(self, tokens: Sequence[str]):
        self._token_to_id = {SENTINEL_TEXT: SENTINEL_ID, UNK_TEXT: UNK_ID, PAD_TEXT: PAD_ID}
        for tok in tokens:
            if tok not in self._token_to_id:
                self._token_to_id[tok] = len(self._token_to_id)

    def __len__(self) -> int:
        return len(self._token_to_id)

    def __contains__(self, token: str) -> bool:
        return token in self._token_to_id

    def lookup(self, token: str) -> int:
        return self._token_to_id.get(token, UNK_ID)

    def segment_ids(self, segment: Segment) -> np.ndarray:
        return np.array([self.lookup(t.text) for t in segment.tokens], dtype=np.int64)

    def items(self):
        return sorted(self._token_to_id.items(), key=lambda kv: kv[1])

    def dump(self) -> str:
        return "".join(f"{i}\t{tok}\n" for tok, i in self.items())

    def hash(self) -> str:
        return hashlib.sha256(self.dump().encode("utf-8")).hexdigest()

    def save(self, path):
        from .fileio import write_text_atomic

        write_text_atomic(path, self.dump())

    @classmethod
    def load(cls, path) -> "Vocabulary":
        entries = []
        with open(path, encoding="utf-8") as handle:
            for line in handle:
                if not line.strip():
                    continue
                idx, tok = line.rstrip("\n").split("\t", 1)
                entries.append((int(idx), tok))
        entries.sort()
        vocab = cls([tok for idx, tok in entries if idx > PAD_ID])
        return vocab


def build_vocab(examples: Sequence[Example], min_count: int = 1) -> Vocabulary:
    """Frequency-then-lexicographic vocabulary over non-sentinel tokens."""
    counts = Counter(
        tok.text for ex in examples for tok in ex.segment.tokens[1:]
    )
    kept = [(tok, c) for tok, c in counts.items() if c >= min_count]
    kept.sort(key=lambda item: (-item[1], item[0]))
    return Vocabulary([tok for tok, _ in kept])


@dataclass
class EncoderStates:
    """Rows of per-position hidden vectors; row 0 is the sentinel state."""

    hidden: Tensor  # (n+1, d_h) or (B, n+1, d_h)
    mask: np.ndarray  # matching leading shape, 1.0 = real position

    @property
    def n_positions(self) -> int:
        return self.hidden.value.shape[-2]


def segment_pos_ids(segment: Segment) -> np.ndarray:
    return np.array([TAG_TO_ID[t.pos_tag] for t in segment.tokens], dtype=np.int64)


def contextual_part(token_ids: np.ndarray, mask: np.ndarray, params, config: EncoderConfig) -> Tensor:
    """Embedding lookup, optionally through the bidirectional recurrent layer.

    token_ids: (n+1,) or (B, n+1). Returns (..., n+1, context_dim).
    """
    emb = ad.gather_rows(params.tensors["tok_emb"], token_ids)
    if not config.recurrent:
        return emb
    return nn.bilstm(emb, mask, params.enc_fwd, params.enc_bwd)


def encode(
    segment: Segment,
    params,
    config: Optional[EncoderConfig] = None,
    vocab: Optional[Vocabulary] = None,
    precomputed: Optional[np.ndarray] = None,
) -> EncoderStates:
    """Encode one segment into (n+1) x d_h hidden states.

    ``precomputed`` supplies the contextual part verbatim (frozen); otherwise
    the trainable route is used and ``vocab`` is required.
    """
    if config is not None and config != params.config:
        raise DimensionMismatch(
            f"config {config} disagrees with model params {params.config}"
        )
    config = params.config
    n_plus_1 = len(segment.tokens)
    mask = np.ones(n_plus_1)
    if precomputed is not None:
        ctx = _check_precomputed(segment, precomputed, config)
        ctx_t = Tensor(ctx)  # constant: no gradient flows into file vectors
    else:
        if vocab is None:
            raise DimensionMismatch("vocab required unless precomputed vectors are given")
        ctx_t = contextual_part(vocab.segment_ids(segment), mask, params, config)
    pos = ad.gather_rows(params.tensors["pos_emb"], segment_pos_ids(segment))
    hidden = ad.concat([ctx_t, pos], axis=-1)
    return EncoderStates(hidden=hidden, mask=mask)


def _check_precomputed(segment: Segment, rows: np.ndarray, config: EncoderConfig) -> np.ndarray:
    rows = np.asarray(rows, dtype=np.float64)
    if rows.ndim != 2 or rows.shape[1] != config.context_dim:
        raise WidthMismatch(
            f"segment {segment.id}: expected width {config.context_dim}, "
            f"got {rows.shape[1] if rows.ndim == 2 else rows.shape}"
        )
    if rows.shape[0] != len(segment.tokens):
        raise RowCountMismatch(
            f"segment {segment.id}: expected {len(segment.tokens)} rows "
            f"(sentinel included), got {rows.shape[0]}"
        )
    return rows


# ---------------------------------------------------------------------------
# Precomputed-vector file: blank-line-separated records. Each record is the
# segment id on its own line followed by one line of decimal numbers per
# position (sentinel row first).

def write_precomputed(vectors: dict, path):
    from .fileio import write_text_atomic

    chunks = []
    for seg_id in sorted(vectors):
        chunks.append(seg_id + "\n")
        for row in np.asarray(vectors[seg_id], dtype=np.float64):
            chunks.append(" ".join(repr(float(x)) for x in row) + "\n")
        chunks.append("\n")
    write_text_atomic(path, "".join(chunks))


def read_precomputed(path) -> dict:
    records = {}
    current_id = None
    current_rows = []
    with open(path, encoding="utf-8") as handle:
        for line in handle:
            line = line.strip()
            if not line:
                if current_id is not None:
                    records[current_id] = np.array(current_rows, dtype=np.float64)
                current_id, current_rows = None, []
                continue
            if current_id is None:
                current_id = line
            else:
                current_rows.append([float(x) for x in line.split()])
    if current_id is not None:
        records[current_id] = np.array(current_rows, dtype=np.float64)
    return records


def load_precomputed(path, segment: Segment, config: EncoderConfig) -> np.ndarray:
    """Fetch and shape-check one segment's contextual vectors from a file."""
    records = read_precomputed(path)
    if segment.id not in records:
        raise MissingSegment(f"no precomputed vectors for segment {segment.id}")
    return _check_precomputed(segment, records[segment.id], config)
