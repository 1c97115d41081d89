"""All trainable weights in one registry with a lossless flat-vector view.

Parameter groups (registration order is fixed so the flat view, checkpoints
and gradient checks always agree):

  tok_emb        token-embedding table (vocab_size, context_dim)
  enc_rnn        bidirectional recurrent encoder layer (recurrent mode only)
  pos_emb        POS-tag embedding table (n_tags, pos_dim)
  attention      additive attention W1, W2, v
  decoder_cell   LSTM cell over [context ; tuple-average], hidden d_h
  cause_pointer  BiLSTM + start/end scoring for the cause span
  effect_pointer BiLSTM + start/end scoring for the effect span
  span_proj      projected-mean span representation (d_h -> d_h)
  tuple_proj     cause||effect -> causality vector projection (2 d_h -> d_h)

The pointer network that extracts the second span additionally consumes the
first span's vector, so its input width depends on the decoding order: the
first-extracted role reads [h_i ; dec], the second [h_i ; dec ; span_vec].
"""

from __future__ import annotations

import hashlib
import json
from collections import OrderedDict
from typing import Optional

import numpy as np

from . import nn
from .autodiff import Tensor
from .encoder import EncoderConfig, N_TAGS
from .errors import DimensionMismatch, MalformedRow

ORDERINGS = ("CF", "EF")
CHECKPOINT_VERSION = 1

_EMBED_SCALE = 0.1


class ModelParams:
    def __init__(self, config: EncoderConfig, ordering: str, seed: Optional[int] = None):
        if ordering not in ORDERINGS:
            raise DimensionMismatch(f"ordering must be CF or EF, got {ordering!r}")
        config.validate()
        self.config = config
        self.ordering = ordering
        self.seed = seed
        self.tensors: "OrderedDict[str, Tensor]" = OrderedDict()
        rng = np.random.default_rng(0 if seed is None else seed)
        self._build(rng)
        if seed is None:
            for t in self.tensors.values():
                t.value[...] = 0.0

    # -- construction -------------------------------------------------------

    def _add(self, name: str, value: np.ndarray) -> Tensor:
        t = Tensor(value, requires_grad=True)
        self.tensors[name] = t
        return t

    def _add_lstm(self, prefix: str, rng, input_size: int, hidden_size: int) -> nn.LstmWeights:
        w = nn.lstm_init(rng, input_size, hidden_size)
        self.tensors[f"{prefix}_wx"] = w.wx
        self.tensors[f"{prefix}_wh"] = w.wh
        self.tensors[f"{prefix}_b"] = w.b
        return w

    def _build(self, rng):
        cfg = self.config
        dh = cfg.d_h
        scale = 1.0 / np.sqrt(dh)

        self._add("tok_emb", nn.uniform_init(rng, (cfg.vocab_size, cfg.context_dim), _EMBED_SCALE))
        if cfg.recurrent:
            half = cfg.context_dim // 2
            self.enc_fwd = self._add_lstm("enc_fwd", rng, cfg.context_dim, half)
            self.enc_bwd = self._add_lstm("enc_bwd", rng, cfg.context_dim, half)
        else:
            self.enc_fwd = self.enc_bwd = None
        self._add("pos_emb", nn.uniform_init(rng, (N_TAGS, cfg.pos_dim), _EMBED_SCALE))

        self._add("att_w1", nn.uniform_init(rng, (dh, dh), scale))
        self._add("att_w2", nn.uniform_init(rng, (dh, dh), scale))
        self._add("att_v", nn.uniform_init(rng, (dh,), scale))

        self.dec_cell = self._add_lstm("dec", rng, 2 * dh, dh)

        first_width = 2 * dh   # [h_i ; dec_hidden]
        second_width = 3 * dh  # [h_i ; dec_hidden ; conditioning span vector]
        cause_width = first_width if self.ordering == "CF" else second_width
        effect_width = second_width if self.ordering == "CF" else first_width
        self.cause_pointer = self._build_pointer("cause", rng, cause_width, dh)
        self.effect_pointer = self._build_pointer("effect", rng, effect_width, dh)

        self._add("span_w", nn.uniform_init(rng, (dh, dh), scale))
        self._add("span_b", np.zeros(dh))
        self._add("tuple_w", nn.uniform_init(rng, (2 * dh, dh), 1.0 / np.sqrt(2 * dh)))
        self._add("tuple_b", np.zeros(dh))

    def _build_pointer(self, role: str, rng, input_width: int, d_p: int):
        half = d_p // 2
        fwd = self._add_lstm(f"{role}_fwd", rng, input_width, half)
        bwd = self._add_lstm(f"{role}_bwd", rng, input_width, half)
        scale = 1.0 / np.sqrt(d_p)
        return PointerParams(
            role=role,
            fwd=fwd,
            bwd=bwd,
            w_start=self._add(f"{role}_ws", nn.uniform_init(rng, (d_p, 1), scale)),
            b_start=self._add(f"{role}_bs", np.zeros(1)),
            w_end=self._add(f"{role}_we", nn.uniform_init(rng, (d_p, 1), scale)),
            b_end=self._add(f"{role}_be", np.zeros(1)),
        )

    # -- role plumbing ------------------------------------------------------

    @property
    def first_role(self) -> str:
        return "cause" if self.ordering == "CF" else "effect"

    @property
    def second_role(self) -> str:
        return "effect" if self.ordering == "CF" else "cause"

    def pointer(self, role: str):
        return self.cause_pointer if role == "cause" else self.effect_pointer

    # -- flat view ----------------------------------------------------------

    def group_of(self, name: str) -> str:
        if name.startswith(("enc_fwd", "enc_bwd")):
            return "enc_rnn"
        if name.startswith("att_"):
            return "attention"
        if name.startswith("dec_"):
            return "decoder_cell"
        if name.startswith("cause_"):
            return "cause_pointer"
        if name.startswith("effect_"):
            return "effect_pointer"
        if name.startswith("span_"):
            return "span_proj"
        if name.startswith("tuple_"):
            return "tuple_proj"
        return name  # tok_emb, pos_emb

    def n_params(self) -> int:
        return sum(t.value.size for t in self.tensors.values())

    def flat(self) -> np.ndarray:
        return np.concatenate([t.value.ravel() for t in self.tensors.values()])

    def set_flat(self, vec: np.ndarray):
        if vec.size != self.n_params():
            raise DimensionMismatch(
                f"flat vector has {vec.size} entries, model has {self.n_params()}"
            )
        offset = 0
        for t in self.tensors.values():
            size = t.value.size
            t.value[...] = vec[offset:offset + size].reshape(t.value.shape)
            offset += size

    def grads_flat(self) -> np.ndarray:
        parts = []
        for t in self.tensors.values():
            g = t.grad if t.grad is not None else np.zeros_like(t.value)
            parts.append(np.asarray(g).ravel())
        return np.concatenate(parts)

    def zero_grads(self):
        for t in self.tensors.values():
            t.grad = None

    def coordinate_groups(self):
        """(group name, flat start, flat stop) per registered tensor."""
        spans = []
        offset = 0
        for name, t in self.tensors.items():
            spans.append((self.group_of(name), offset, offset + t.value.size))
            offset += t.value.size
        return spans

    def checksum(self) -> str:
        return hashlib.sha256(self.flat().tobytes()).hexdigest()

    def assert_finite(self):
        for name, t in self.tensors.items():
            if not np.all(np.isfinite(t.value)):
                raise DimensionMismatch(f"non-finite values in parameter {name}")

    # -- checkpoints ---------------------------------------------------------

    def header(self, vocab_hash: str = "") -> dict:
        return {
            "version": CHECKPOINT_VERSION,
            "ordering": self.ordering,
            "context_dim": self.config.context_dim,
            "pos_dim": self.config.pos_dim,
            "vocab_size": self.config.vocab_size,
            "recurrent": self.config.recurrent,
            "seed": self.seed,
            "vocab_hash": vocab_hash,
            "n_params": self.n_params(),
        }

    def save(self, path, vocab_hash: str = "", fmt: str = "binary"):
        """Write header line + flat vector, as decimal text or raw float64."""
        if fmt not in ("text", "binary"):
            raise MalformedRow(f"unknown checkpoint format {fmt!r}")
        head = dict(self.header(vocab_hash), format=fmt)
        flat = self.flat()
        blob = (json.dumps(head, sort_keys=True) + "\n").encode("utf-8")
        if fmt == "text":
            blob += "".join(repr(float(x)) + "\n" for x in flat).encode("utf-8")
        else:
            blob += flat.astype("<f8").tobytes()
        from .fileio import write_bytes_atomic

        write_bytes_atomic(path, blob)

    @classmethod
    def load(cls, path):
        """Read either checkpoint flavor; returns (params, header dict)."""
        with open(path, "rb") as handle:
            head_line = handle.readline()
            try:
                head = json.loads(head_line.decode("utf-8"))
            except (UnicodeDecodeError, json.JSONDecodeError) as err:
                raise MalformedRow(f"unreadable checkpoint header: {err}")
            payload = handle.read()
        config = EncoderConfig(
            context_dim=head["context_dim"],
            pos_dim=head["pos_dim"],
            vocab_size=head["vocab_size"],
            recurrent=head["recurrent"],
        )
        params = cls(config, head["ordering"], seed=head.get("seed"))
        if head.get("format") == "text":
            values = [float(x) for x in payload.decode("utf-8").split()]
            flat = np.array(values, dtype=np.float64)
        else:
            flat = np.frombuffer(payload, dtype="<f8").astype(np.float64)
        if flat.size != head["n_params"] or flat.size != params.n_params():
            raise MalformedRow(
                f"checkpoint holds {flat.size} parameters, expected {head['n_params']}"
            )
        params.set_flat(flat)
        return params, head


class PointerParams:
    """One span role's pointer network: shared BiLSTM, two scoring heads."""

    def __init__(self, role, fwd, bwd, w_start, b_start, w_end, b_end):
        self.role = role
        self.fwd = fwd
        self.bwd = bwd
        self.w_start = w_start
        self.b_start = b_start
        self.w_end = w_end
        self.b_end = b_end

    @property
    def input_width(self) -> int:
        return self.fwd.input_size
