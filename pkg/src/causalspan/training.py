"""Teacher-forced maximum-likelihood training.

Each example's target is its gold tuples in a deterministic order followed
by the stop tuple (0, -1, -1, -1). A non-stop step's loss is the sum of the
four negative log-probabilities at the gold start/end positions; the stop
step only scores the first-extracted span's start head at position 0 and
ignores the other three heads entirely.

Two loss paths exist on purpose. ``example_loss`` chains the public decoder
operations one segment at a time and is what gradient checks drive.
``batch_loss`` runs the same computation over a padded mini-batch with
masks; a test pins batched == mean(per-example) to 1e-10, which is exactly
the padding-correctness guarantee the optimizer relies on.
"""

from __future__ import annotations

import time
from dataclasses import dataclass, field, replace
from typing import Optional, Sequence

import numpy as np

from . import autodiff as ad
from . import nn
from .autodiff import Tensor
from .corpus import Causality, Example, STOP_TUPLE
from .decoder import (
    DecoderState,
    TupleMemory,
    attention,
    causality_vector,
    generation_step,
    pointer_scores,
    span_vector,
)
from .encoder import (
    PAD_ID,
    EncoderConfig,
    EncoderStates,
    Vocabulary,
    build_vocab,
    contextual_part,
    encode,
    segment_pos_ids,
)
from .errors import (
    DimensionMismatch,
    NonFiniteLoss,
    TargetOutOfRange,
    TooFewExamples,
)
from .params import ModelParams

ADAM_BETA1 = 0.9
ADAM_BETA2 = 0.999
ADAM_EPS = 1e-8


@dataclass(frozen=True)
class TrainConfig:
    ordering: str = "CF"
    learning_rate: float = 1e-3
    epochs: int = 50
    batch_size: int = 16
    grad_clip_norm: float = 5.0
    seed: int = 0
    max_decode_steps: int = 8
    min_count: int = 1
    encoder: EncoderConfig = field(default_factory=EncoderConfig)

    def validate(self):
        if self.learning_rate < 0 or self.epochs < 0:
            raise DimensionMismatch("learning_rate and epochs must be >= 0")
        if self.batch_size < 1 or self.max_decode_steps < 1 or self.grad_clip_norm <= 0:
            raise DimensionMismatch("batch_size, max_decode_steps, grad_clip_norm must be positive")


def order_gold(gold: Sequence[Causality], ordering: str) -> list:
    """Deterministic target sequence: sorted gold tuples plus the stop tuple.

    CF sorts by the cause span (c_s, c_e, e_s, e_e); EF by the effect span
    (e_s, e_e, c_s, c_e), i.e. by the first-extracted span's position.
    """
    if ordering == "CF":
        ordered = sorted(gold, key=lambda t: (t.c_s, t.c_e, t.e_s, t.e_e))
    else:
        ordered = sorted(gold, key=lambda t: (t.e_s, t.e_e, t.c_s, t.c_e))
    return list(ordered) + [STOP_TUPLE]


def _role_spans(target: Causality, ordering: str):
    """((first_start, first_end), (second_start, second_end)) per ordering."""
    cause = (target.c_s, target.c_e)
    effect = (target.e_s, target.e_e)
    return (cause, effect) if ordering == "CF" else (effect, cause)


def _logp_at(log_dist: Tensor, index: int) -> Tensor:
    n_pos = log_dist.value.shape[-1]
    if not 0 <= index < n_pos:
        raise TargetOutOfRange(f"target position {index} outside 0..{n_pos - 1}")
    return ad.gather_rows(log_dist, np.asarray(index))


def step_loss(step, target: Causality, ordering: str) -> Tensor:
    """Negative log-likelihood of one target tuple under one step's output.

    ``step`` is a GenerationStep or a (first, second) SpanDistributions
    pair. For the stop tuple only the first head's start distribution at
    position 0 contributes; the -1 indices are ignored.
    """
    first, second = (step.first, step.second) if hasattr(step, "first") else step
    if target.c_s == 0:
        return -_logp_at(first.start_log, 0)
    (f_s, f_e), (s_s, s_e) = _role_spans(target, ordering)
    total = (
        _logp_at(first.start_log, f_s)
        + _logp_at(first.end_log, f_e)
        + _logp_at(second.start_log, s_s)
        + _logp_at(second.end_log, s_e)
    )
    return -total


def _teacher_spans(target: Causality, ordering: str):
    """Spans used for conditioning/memory at one step; stop uses a dummy."""
    if target.c_s == 0:
        return (1, 1), (1, 1)
    return _role_spans(target, ordering)


def example_loss(
    example: Example,
    params: ModelParams,
    vocab: Optional[Vocabulary],
    config: TrainConfig,
    precomputed: Optional[np.ndarray] = None,
) -> Tensor:
    """Mean step loss over the example's ordered target sequence.

    Teacher forcing throughout: conditioning vectors and tuple memory are
    built from gold spans, never from model predictions.
    """
    targets = order_gold(example.gold, params.ordering)
    if len(targets) > config.max_decode_steps:
        targets = targets[: config.max_decode_steps - 1] + [STOP_TUPLE]
    states = encode(example.segment, params, vocab=vocab, precomputed=precomputed)
    state = DecoderState.initial(params.config.d_h)
    memory = TupleMemory(params.config.d_h)
    total = None
    for target in targets:
        first_span, second_span = _teacher_spans(target, params.ordering)
        step = generation_step(params, states, state, memory, first_span)
        loss_t = step_loss(step, target, params.ordering)
        total = loss_t if total is None else total + loss_t
        state = step.state
        if target.c_s != 0:
            cause_span, effect_span = (
                (first_span, second_span) if params.ordering == "CF"
                else (second_span, first_span)
            )
            cvec = step.conditioning if params.ordering == "CF" else span_vector(params, states, cause_span)
            evec = span_vector(params, states, effect_span) if params.ordering == "CF" else step.conditioning
            memory.add(causality_vector(params, cvec, evec))
    return total * (1.0 / len(targets))


# ---------------------------------------------------------------------------
# Batched path.

@dataclass
class PackedBatch:
    """Padded arrays for one mini-batch of examples."""

    token_ids: np.ndarray      # (B, N+1) int
    pos_ids: np.ndarray        # (B, N+1) int
    mask: np.ndarray           # (B, N+1) float
    step_mask: np.ndarray      # (B, T) float, 1 while the target sequence runs
    stop_mask: np.ndarray      # (B, T) float, 1 exactly at each stop step
    first_start: np.ndarray    # (B, T) int targets, role-mapped
    first_end: np.ndarray
    second_start: np.ndarray
    second_end: np.ndarray
    span_weights_first: np.ndarray   # (B, T, N+1) mean-pooling weights
    span_weights_second: np.ndarray
    n_steps: np.ndarray        # (B,) float, per-example target length
    precomputed: Optional[np.ndarray] = None  # (B, N+1, context_dim)


def pack_batch(
    examples: Sequence[Example],
    vocab: Optional[Vocabulary],
    config: TrainConfig,
    ordering: str,
    precomputed_map: Optional[dict] = None,
) -> PackedBatch:
    batch = len(examples)
    n_max = max(ex.segment.n_tokens for ex in examples)
    targets = []
    for ex in examples:
        seq = order_gold(ex.gold, ordering)
        if len(seq) > config.max_decode_steps:
            seq = seq[: config.max_decode_steps - 1] + [STOP_TUPLE]
        targets.append(seq)
    t_max = max(len(seq) for seq in targets)

    token_ids = np.full((batch, n_max + 1), 0, dtype=np.int64)
    pos_ids = np.zeros((batch, n_max + 1), dtype=np.int64)
    mask = np.zeros((batch, n_max + 1))
    step_mask = np.zeros((batch, t_max))
    stop_mask = np.zeros((batch, t_max))
    first_start = np.zeros((batch, t_max), dtype=np.int64)
    first_end = np.ones((batch, t_max), dtype=np.int64)
    second_start = np.ones((batch, t_max), dtype=np.int64)
    second_end = np.ones((batch, t_max), dtype=np.int64)
    w_first = np.zeros((batch, t_max, n_max + 1))
    w_second = np.zeros((batch, t_max, n_max + 1))
    n_steps = np.zeros(batch)
    pre = None
    if precomputed_map is not None:
        pre = np.zeros((batch, n_max + 1, config.encoder.context_dim))

    for b, (ex, seq) in enumerate(zip(examples, targets)):
        n_b = ex.segment.n_tokens
        if vocab is not None:
            ids = vocab.segment_ids(ex.segment)
        else:
            ids = np.zeros(n_b + 1, dtype=np.int64)
        token_ids[b, : n_b + 1] = ids
        token_ids[b, n_b + 1:] = PAD_ID
        pos_ids[b, : n_b + 1] = segment_pos_ids(ex.segment)
        mask[b, : n_b + 1] = 1.0
        n_steps[b] = len(seq)
        if pre is not None:
            rows = precomputed_map[ex.segment.id]
            pre[b, : n_b + 1, :] = rows
        for t, target in enumerate(seq):
            step_mask[b, t] = 1.0
            (f_span, s_span) = _teacher_spans(target, ordering)
            w_first[b, t, f_span[0]: f_span[1] + 1] = 1.0 / (f_span[1] - f_span[0] + 1)
            w_second[b, t, s_span[0]: s_span[1] + 1] = 1.0 / (s_span[1] - s_span[0] + 1)
            if target.c_s == 0:
                stop_mask[b, t] = 1.0
                first_start[b, t] = 0
            else:
                (f_s, f_e), (s_s, s_e) = _role_spans(target, ordering)
                first_start[b, t] = f_s
                first_end[b, t] = f_e
                second_start[b, t] = s_s
                second_end[b, t] = s_e
    return PackedBatch(
        token_ids, pos_ids, mask, step_mask, stop_mask,
        first_start, first_end, second_start, second_end,
        w_first, w_second, n_steps, pre,
    )


def _pooled_span_vec(params: ModelParams, hidden: Tensor, weights: np.ndarray) -> Tensor:
    """Batched span vector: weights (B, N+1) mean-pool rows, then project."""
    w = ad.reshape(Tensor(weights), weights.shape + (1,))
    pooled = ad.sum_(w * hidden, axis=-2)
    return ad.tanh(nn.affine(pooled, params.tensors["span_w"], params.tensors["span_b"]))


def batch_loss(
    examples: Sequence[Example],
    params: ModelParams,
    vocab: Optional[Vocabulary],
    config: TrainConfig,
    precomputed_map: Optional[dict] = None,
) -> Tensor:
    """Mean of per-example losses over one padded mini-batch."""
    packed = pack_batch(examples, vocab, config, params.ordering, precomputed_map)
    batch = packed.token_ids.shape[0]
    d_h = params.config.d_h

    if packed.precomputed is not None:
        ctx = Tensor(packed.precomputed * packed.mask[:, :, None])
    else:
        if vocab is None:
            raise DimensionMismatch("vocab required unless precomputed vectors are given")
        ctx = contextual_part(packed.token_ids, packed.mask, params, params.config)
        if not params.config.recurrent:
            ctx = ctx * packed.mask[:, :, None]
    pos = ad.gather_rows(params.tensors["pos_emb"], packed.pos_ids) * packed.mask[:, :, None]
    states = EncoderStates(hidden=ad.concat([ctx, pos], axis=-1), mask=packed.mask)

    state = DecoderState.initial(d_h, batch=batch)
    mem_sum = Tensor(np.zeros((batch, d_h)))
    mem_count = np.zeros(batch)
    total = Tensor(np.zeros(batch))
    t_max = packed.step_mask.shape[1]
    for t in range(t_max):
        context = attention(params, states, state.hidden)
        y_avg = mem_sum * (1.0 / np.maximum(mem_count, 1.0))[:, None]
        x = ad.concat([context, y_avg], axis=-1)
        h2, c2 = nn.lstm_cell(x, state.hidden, state.cell, params.dec_cell)
        state = DecoderState(h2, c2, state.step + 1)

        first = pointer_scores(params.pointer(params.first_role), states, state.hidden)
        cond = _pooled_span_vec(params, states.hidden, packed.span_weights_first[:, t])
        second = pointer_scores(
            params.pointer(params.second_role), states, state.hidden, conditioning=cond
        )
        fs = ad.select_last(first.start_log, packed.first_start[:, t])
        fe = ad.select_last(first.end_log, packed.first_end[:, t])
        ss = ad.select_last(second.start_log, packed.second_start[:, t])
        se = ad.select_last(second.end_log, packed.second_end[:, t])
        live = packed.step_mask[:, t]
        full = 1.0 - packed.stop_mask[:, t]
        step_losses = -(fs + full * (fe + ss + se)) * live
        total = total + step_losses

        # Append this step's teacher-forced tuple vector for live non-stop rows.
        active = live * full
        svec = _pooled_span_vec(params, states.hidden, packed.span_weights_second[:, t])
        cvec, evec = (cond, svec) if params.ordering == "CF" else (svec, cond)
        tuple_vec = causality_vector(params, cvec, evec)
        mem_sum = mem_sum + active[:, None] * tuple_vec
        mem_count = mem_count + active

    per_example = total * (1.0 / packed.n_steps)
    return ad.mean_(per_example)


# ---------------------------------------------------------------------------
# Optimization.

@dataclass
class TrainResult:
    params: ModelParams
    history: list
    vocab: Optional[Vocabulary]


def train(
    examples: Sequence[Example],
    config: TrainConfig,
    vocab: Optional[Vocabulary] = None,
    params: Optional[ModelParams] = None,
    precomputed_map: Optional[dict] = None,
    log=None,
) -> TrainResult:
    """Mini-batch Adam with global-norm gradient clipping.

    Bit-deterministic for a fixed (seed, data, config): parameter init,
    epoch shuffles and batched reductions all derive from the seed.
    """
    if not examples:
        raise TooFewExamples("cannot train on an empty dataset")
    config.validate()
    if vocab is None:
        vocab = build_vocab(examples, config.min_count)
    if params is None:
        enc_config = replace(config.encoder, vocab_size=len(vocab))
        params = ModelParams(enc_config, config.ordering, seed=config.seed)

    rng = np.random.default_rng(config.seed + 1)
    flat = params.flat()
    m = np.zeros_like(flat)
    v = np.zeros_like(flat)
    step = 0
    history = []
    start = time.monotonic()
    for epoch in range(config.epochs):
        order = rng.permutation(len(examples))
        epoch_loss = 0.0
        epoch_norm = 0.0
        n_batches = 0
        for lo in range(0, len(order), config.batch_size):
            chunk = [examples[i] for i in order[lo: lo + config.batch_size]]
            params.zero_grads()
            loss = batch_loss(chunk, params, vocab, config, precomputed_map)
            value = loss.item()
            if not np.isfinite(value):
                raise NonFiniteLoss(
                    f"non-finite loss at epoch {epoch}, batch {n_batches}: {value!r}"
                )
            loss.backward()
            grad = params.grads_flat()
            norm = float(np.sqrt(np.sum(grad * grad)))
            if norm > config.grad_clip_norm:
                grad = grad * (config.grad_clip_norm / norm)
            step += 1
            m = ADAM_BETA1 * m + (1.0 - ADAM_BETA1) * grad
            v = ADAM_BETA2 * v + (1.0 - ADAM_BETA2) * grad * grad
            m_hat = m / (1.0 - ADAM_BETA1 ** step)
            v_hat = v / (1.0 - ADAM_BETA2 ** step)
            flat = flat - config.learning_rate * m_hat / (np.sqrt(v_hat) + ADAM_EPS)
            params.set_flat(flat)
            epoch_loss += value * len(chunk)
            epoch_norm += norm
            n_batches += 1
        entry = {
            "epoch": epoch,
            "loss": epoch_loss / len(examples),
            "grad_norm": epoch_norm / max(n_batches, 1),
        }
        history.append(entry)
        if log is not None:
            log(f"epoch {epoch}: loss={entry['loss']:.6f} "
                f"grad_norm={entry['grad_norm']:.4f} "
                f"elapsed={time.monotonic() - start:.1f}s")
    params.assert_finite()
    return TrainResult(params=params, history=history, vocab=vocab)


# ---------------------------------------------------------------------------
# Gradient checking: analytic (reverse-mode) vs central finite differences.

@dataclass
class GradCheckReport:
    max_rel_err: float
    per_group: dict
    probes: int

    def passed(self, tol: float = 1e-4) -> bool:
        return self.max_rel_err < tol


def analytic_gradient(
    example: Example,
    params: ModelParams,
    vocab: Optional[Vocabulary],
    config: TrainConfig,
    precomputed: Optional[np.ndarray] = None,
) -> np.ndarray:
    params.zero_grads()
    loss = example_loss(example, params, vocab, config, precomputed)
    loss.backward()
    return params.grads_flat()


def numeric_gradient_at(
    coords: Sequence[int],
    example: Example,
    params: ModelParams,
    vocab: Optional[Vocabulary],
    config: TrainConfig,
    precomputed: Optional[np.ndarray] = None,
    step: float = 1e-5,
) -> np.ndarray:
    """Central differences of example_loss at selected flat coordinates."""
    flat = params.flat()
    out = np.zeros(len(coords))
    for j, idx in enumerate(coords):
        orig = flat[idx]
        flat[idx] = orig + step
        params.set_flat(flat)
        hi = example_loss(example, params, vocab, config, precomputed).item()
        flat[idx] = orig - step
        params.set_flat(flat)
        lo = example_loss(example, params, vocab, config, precomputed).item()
        flat[idx] = orig
        out[j] = (hi - lo) / (2.0 * step)
    params.set_flat(flat)
    return out


def relative_errors(analytic: np.ndarray, numeric: np.ndarray) -> np.ndarray:
    denom = np.maximum(1e-8, np.abs(analytic) + np.abs(numeric))
    return np.abs(analytic - numeric) / denom


def grad_check(
    params: ModelParams,
    example: Example,
    vocab: Optional[Vocabulary],
    config: TrainConfig,
    probe_count: int = 200,
    seed: int = 0,
    precomputed: Optional[np.ndarray] = None,
    step: float = 1e-5,
) -> GradCheckReport:
    """Probe random coordinates in every parameter group and report the
    worst relative disagreement between analytic and numeric gradients."""
    spans = params.coordinate_groups()
    groups = {}
    for group, lo, hi in spans:
        groups.setdefault(group, []).append((lo, hi))
    rng = np.random.default_rng(seed)
    per_quota = int(np.ceil(probe_count / len(groups)))
    coords = []
    owners = []
    for group, ranges in groups.items():
        pool = np.concatenate([np.arange(lo, hi) for lo, hi in ranges])
        chosen = rng.choice(pool, size=min(per_quota, pool.size), replace=False)
        coords.extend(int(c) for c in chosen)
        owners.extend([group] * len(chosen))
    analytic_full = analytic_gradient(example, params, vocab, config, precomputed)
    analytic = analytic_full[coords]
    numeric = numeric_gradient_at(coords, example, params, vocab, config, precomputed, step)
    errs = relative_errors(analytic, numeric)
    per_group = {}
    for group, err in zip(owners, errs):
        per_group[group] = max(per_group.get(group, 0.0), float(err))
    return GradCheckReport(
        max_rel_err=float(errs.max()) if len(errs) else 0.0,
        per_group=per_group,
        probes=len(coords),
    )
