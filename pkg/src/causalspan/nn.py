"""Shared differentiable building blocks: affine maps, LSTM cells, BiLSTM
passes with padding masks, and masked softmax distributions.

Conventions used everywhere in this package:

* arrays are row-major: a sequence is (T, width), a batch (B, T, width);
* an affine map is ``x @ W + b`` with W of shape (in, out);
* LSTM gate preactivations ``z = x @ Wx + h @ Wh + b`` are split along the
  last axis into [input, forget, cell, output] blocks of equal width;
* cell update: c' = f * c + i * g, h' = o * tanh(c') with i, f, o sigmoid
  and g tanh.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from . import autodiff as ad
from .autodiff import Tensor

MASK_NEG = -1e30


def affine(x, w, b=None) -> Tensor:
    out = ad.linear(x, w)
    if b is not None:
        out = ad.add(out, b)
    return out


@dataclass
class LstmWeights:
    """One direction's LSTM parameters: Wx (in, 4H), Wh (H, 4H), b (4H,)."""

    wx: Tensor
    wh: Tensor
    b: Tensor

    @property
    def hidden_size(self) -> int:
        return self.wh.value.shape[0]

    @property
    def input_size(self) -> int:
        return self.wx.value.shape[0]


def lstm_cell(x, h, c, weights: LstmWeights):
    """One LSTM step. Shapes: x (..., in), h and c (..., H)."""
    hsize = weights.hidden_size
    z = affine(x, weights.wx, weights.b) + ad.linear(h, weights.wh)
    i = ad.sigmoid(ad.narrow(z, 0, hsize, axis=-1))
    f = ad.sigmoid(ad.narrow(z, hsize, hsize, axis=-1))
    g = ad.tanh(ad.narrow(z, 2 * hsize, hsize, axis=-1))
    o = ad.sigmoid(ad.narrow(z, 3 * hsize, hsize, axis=-1))
    c2 = f * c + i * g
    h2 = o * ad.tanh(c2)
    return h2, c2


def bilstm(xs, mask, forward: LstmWeights, backward: LstmWeights) -> Tensor:
    """Bidirectional LSTM over a (possibly batched) sequence.

    xs: Tensor of shape (T, in) or (B, T, in). mask: float ndarray of shape
    (T,) or (B, T) with 1 for real positions, 0 for padding. Masked steps
    carry state through unchanged and emit zero output, so a padded batch
    reproduces each row's unpadded result exactly.
    Returns (..., T, 2H): forward and backward outputs concatenated.
    """
    squeeze = xs.ndim == 2
    if squeeze:
        xs = ad.reshape(xs, (1,) + xs.value.shape)
        mask = np.asarray(mask)[None, :]
    batch, steps, _ = xs.value.shape
    outs_f = _directional_pass(xs, mask, forward, batch, range(steps))
    outs_b = _directional_pass(xs, mask, backward, batch, range(steps - 1, -1, -1))
    cols = [ad.concat([outs_f[t], outs_b[t]], axis=-1) for t in range(steps)]
    out = ad.stack(cols, axis=1)
    if squeeze:
        out = ad.reshape(out, out.value.shape[1:])
    return out


def _directional_pass(xs, mask, weights, batch, order):
    hsize = weights.hidden_size
    h = Tensor(np.zeros((batch, hsize)))
    c = Tensor(np.zeros((batch, hsize)))
    outs = {}
    for t in order:
        x_t = ad.reshape(ad.narrow(xs, t, 1, axis=1), (batch, xs.value.shape[2]))
        h_new, c_new = lstm_cell(x_t, h, c, weights)
        m = mask[:, t][:, None]
        h = m * h_new + (1.0 - m) * h
        c = m * c_new + (1.0 - m) * c
        outs[t] = m * h_new
    return outs


def masked_logits(logits, mask) -> Tensor:
    """Push masked positions to an effectively -inf logit."""
    mask = np.asarray(mask, dtype=np.float64)
    return logits + (1.0 - mask) * MASK_NEG


def masked_log_softmax(logits, mask, axis=-1) -> Tensor:
    return ad.log_softmax(masked_logits(logits, mask), axis=axis)


def masked_softmax(logits, mask, axis=-1) -> Tensor:
    return ad.softmax(masked_logits(logits, mask), axis=axis)


def uniform_init(rng: np.random.Generator, shape, scale) -> np.ndarray:
    return rng.uniform(-scale, scale, size=shape)


def lstm_init(rng: np.random.Generator, input_size: int, hidden_size: int) -> LstmWeights:
    """Scaled-uniform weights; forget-gate bias starts at 1 so memory is open."""
    sx = 1.0 / np.sqrt(input_size)
    sh = 1.0 / np.sqrt(hidden_size)
    b = np.zeros(4 * hidden_size)
    b[hidden_size:2 * hidden_size] = 1.0
    return LstmWeights(
        wx=Tensor(uniform_init(rng, (input_size, 4 * hidden_size), sx), requires_grad=True),
        wh=Tensor(uniform_init(rng, (hidden_size, 4 * hidden_size), sh), requires_grad=True),
        b=Tensor(b, requires_grad=True),
    )
