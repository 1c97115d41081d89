"""One generation step of the tuple decoder.

Per step: additive attention over encoder states builds a context vector,
an LSTM cell advances on [context ; average-of-generated-tuples], and two
pointer networks produce start/end distributions over source positions for
the cause and effect spans. The second-extracted span's pointer network is
conditioned on the first span's vector; which role goes first is the CF/EF
ordering fixed by the model instance.

Formulas (row convention, see nn.py):

  attention   scores_i = tanh(h_i @ W1 + h_prev @ W2) @ v
              e_t = sum_i softmax(scores)_i * h_i
  pointer     u_i = [h_i ; dec_hidden (; span_vec)]
              g = BiLSTM(u), start logits = g @ w_s + b_s, end likewise
  span_vec    tanh(mean(rows start..end) @ Ws + bs)
  tuple_vec   tanh([cause_vec ; effect_vec] @ Wt + bt)
"""

from __future__ import annotations

from dataclasses import dataclass
from typing import Optional

import numpy as np

from . import autodiff as ad
from . import nn
from .autodiff import Tensor
from .encoder import EncoderStates
from .errors import DimensionMismatch, InvalidSpan


@dataclass
class DecoderState:
    hidden: Tensor  # (d_h,) or (B, d_h)
    cell: Tensor
    step: int

    @classmethod
    def initial(cls, d_h: int, batch: Optional[int] = None) -> "DecoderState":
        shape = (d_h,) if batch is None else (batch, d_h)
        return cls(Tensor(np.zeros(shape)), Tensor(np.zeros(shape)), 0)


class TupleMemory:
    """Vectors of the causalities generated so far; y_avg is their mean.

    Before anything is generated the average is the zero vector, which also
    stands for the start tuple's representation.
    """

    def __init__(self, d_h: int, batch: Optional[int] = None):
        self.d_h = d_h
        self.batch = batch
        self.vectors: list = []

    def add(self, vec: Tensor):
        if vec.value.shape[-1] != self.d_h:
            raise DimensionMismatch(
                f"tuple vector width {vec.value.shape[-1]} != d_h {self.d_h}"
            )
        self.vectors.append(vec)

    def __len__(self) -> int:
        return len(self.vectors)

    @property
    def y_avg(self) -> Tensor:
        shape = (self.d_h,) if self.batch is None else (self.batch, self.d_h)
        if not self.vectors:
            return Tensor(np.zeros(shape))
        total = self.vectors[0]
        for vec in self.vectors[1:]:
            total = total + vec
        return total * (1.0 / len(self.vectors))


@dataclass
class SpanDistributions:
    """Start/end probability vectors over positions 0..n (masked: prob 0)."""

    start: Tensor
    end: Tensor
    start_log: Tensor
    end_log: Tensor

    @classmethod
    def from_logits(cls, start_logits: Tensor, end_logits: Tensor, mask) -> "SpanDistributions":
        return cls(
            start=nn.masked_softmax(start_logits, mask),
            end=nn.masked_softmax(end_logits, mask),
            start_log=nn.masked_log_softmax(start_logits, mask),
            end_log=nn.masked_log_softmax(end_logits, mask),
        )

    @classmethod
    def from_probs(cls, start, end) -> "SpanDistributions":
        start = np.asarray(start, dtype=np.float64)
        end = np.asarray(end, dtype=np.float64)
        with np.errstate(divide="ignore"):
            return cls(Tensor(start), Tensor(end), Tensor(np.log(start)), Tensor(np.log(end)))


def attention(params, encoder_states: EncoderStates, prev_hidden) -> Tensor:
    """Additive-attention context vector e_t; query is the previous decoder
    hidden state (the zero vector at step 0)."""
    h = encoder_states.hidden
    prev_hidden = ad.as_tensor(prev_hidden)
    if h.value.shape[-1] != params.config.d_h or prev_hidden.value.shape[-1] != params.config.d_h:
        raise DimensionMismatch("encoder states / query width != d_h")
    batched = h.ndim == 3
    query = ad.linear(prev_hidden, params.tensors["att_w2"])
    if batched:
        query = ad.reshape(query, (query.value.shape[0], 1, query.value.shape[-1]))
    scores = ad.linear(
        ad.tanh(ad.linear(h, params.tensors["att_w1"]) + query),
        ad.reshape(params.tensors["att_v"], (params.config.d_h, 1)),
    )
    scores = ad.reshape(scores, h.value.shape[:-1])
    weights = nn.masked_softmax(scores, encoder_states.mask)
    weights = ad.reshape(weights, weights.value.shape + (1,))
    return ad.sum_(weights * h, axis=-2)


def decode_step(params, state: DecoderState, context: Tensor, memory: TupleMemory) -> DecoderState:
    """Advance the decoder LSTM cell on [context ; tuple average]."""
    x = ad.concat([context, memory.y_avg], axis=-1)
    if x.value.shape[-1] != 2 * params.config.d_h:
        raise DimensionMismatch("decoder cell input width != 2*d_h")
    h2, c2 = nn.lstm_cell(x, state.hidden, state.cell, params.dec_cell)
    return DecoderState(h2, c2, state.step + 1)


def pointer_scores(
    pointer,
    encoder_states: EncoderStates,
    dec_hidden: Tensor,
    conditioning: Optional[Tensor] = None,
    mask_position0: bool = False,
) -> SpanDistributions:
    """Start/end distributions over positions 0..n for one span role.

    ``conditioning`` is the first-extracted span's vector when this network
    extracts the second span. ``mask_position0`` removes the stop position
    from both heads (used only when a caller wants strictly-real spans).
    """
    h = encoder_states.hidden
    batched = h.ndim == 3
    dec_hidden = ad.as_tensor(dec_hidden)
    tile_shape = h.value.shape[:-1] + (dec_hidden.value.shape[-1],)
    if batched:
        dec_tiled = ad.broadcast_to(
            ad.reshape(dec_hidden, (h.value.shape[0], 1, dec_hidden.value.shape[-1])),
            tile_shape,
        )
    else:
        dec_tiled = ad.broadcast_to(ad.reshape(dec_hidden, (1, -1)), tile_shape)
    parts = [h, dec_tiled]
    if conditioning is not None:
        conditioning = ad.as_tensor(conditioning)
        cond_shape = h.value.shape[:-1] + (conditioning.value.shape[-1],)
        if batched:
            cond_tiled = ad.broadcast_to(
                ad.reshape(conditioning, (h.value.shape[0], 1, -1)), cond_shape
            )
        else:
            cond_tiled = ad.broadcast_to(ad.reshape(conditioning, (1, -1)), cond_shape)
        parts.append(cond_tiled)
    u = ad.concat(parts, axis=-1)
    if u.value.shape[-1] != pointer.input_width:
        raise DimensionMismatch(
            f"{pointer.role} pointer expects input width {pointer.input_width}, "
            f"got {u.value.shape[-1]}"
        )
    g = nn.bilstm(u, encoder_states.mask, pointer.fwd, pointer.bwd)
    start_logits = ad.reshape(
        nn.affine(g, pointer.w_start, pointer.b_start), h.value.shape[:-1]
    )
    end_logits = ad.reshape(
        nn.affine(g, pointer.w_end, pointer.b_end), h.value.shape[:-1]
    )
    mask = np.asarray(encoder_states.mask, dtype=np.float64)
    if mask_position0:
        mask = mask.copy()
        mask[..., 0] = 0.0
    return SpanDistributions.from_logits(start_logits, end_logits, mask)


def span_vector(params, encoder_states: EncoderStates, span) -> Tensor:
    """Projected mean of encoder rows start..end (inclusive), tanh-squashed."""
    start, end = span
    n = encoder_states.n_positions - 1
    if not (1 <= start <= end <= n):
        raise InvalidSpan(f"span {span} invalid for n={n}")
    rows = ad.narrow(encoder_states.hidden, start, end - start + 1, axis=-2)
    mean = ad.mean_(rows, axis=-2)
    return ad.tanh(nn.affine(mean, params.tensors["span_w"], params.tensors["span_b"]))


def causality_vector(params, cause_vec: Tensor, effect_vec: Tensor) -> Tensor:
    """Fixed-role projection [cause ; effect] -> d_h tuple representation."""
    joined = ad.concat([cause_vec, effect_vec], axis=-1)
    return ad.tanh(nn.affine(joined, params.tensors["tuple_w"], params.tensors["tuple_b"]))


@dataclass
class GenerationStep:
    """Distributions produced by one decode step.

    ``first``/``second`` follow extraction order; ``cause``/``effect``
    resolve them by role according to the model's ordering.
    """

    first: SpanDistributions
    second: SpanDistributions
    state: DecoderState
    conditioning: Tensor
    first_role: str

    @property
    def cause(self) -> SpanDistributions:
        return self.first if self.first_role == "cause" else self.second

    @property
    def effect(self) -> SpanDistributions:
        return self.second if self.first_role == "cause" else self.first


def generation_step(
    params,
    encoder_states: EncoderStates,
    state: DecoderState,
    memory: TupleMemory,
    first_span,
) -> GenerationStep:
    """Run one full step with a known first span (teacher-forced gold during
    training, the model's own choice during inference)."""
    context = attention(params, encoder_states, state.hidden)
    new_state = decode_step(params, state, context, memory)
    first = pointer_scores(params.pointer(params.first_role), encoder_states, new_state.hidden)
    cond = span_vector(params, encoder_states, first_span)
    second = pointer_scores(
        params.pointer(params.second_role), encoder_states, new_state.hidden, conditioning=cond
    )
    return GenerationStep(first, second, new_state, cond, params.first_role)
