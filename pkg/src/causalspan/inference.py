"""Greedy constrained decoding of causality tuples.

Per step the model first produces the first-extracted span's distributions.
If the UNCONSTRAINED argmax of that start distribution is position 0, the
stop signal fired and decoding ends before emitting anything. Otherwise
both spans are chosen by a joint constrained argmax over valid (start, end)
pairs, the tuple is emitted, and its vector joins the tuple memory.

A tuple identical to one already emitted signals a cycle: it is dropped and
decoding stops. ``max_steps`` bounds the loop unconditionally.
"""

from __future__ import annotations

import json
from dataclasses import dataclass
from typing import Optional, Sequence

import numpy as np

from .corpus import Causality, Example, Segment
from .decoder import (
    DecoderState,
    SpanDistributions,
    TupleMemory,
    attention,
    causality_vector,
    decode_step,
    pointer_scores,
    span_vector,
)
from .encoder import Vocabulary, encode
from .errors import DimensionMismatch, NoValidSpan
from .params import ModelParams


@dataclass(frozen=True)
class DecodeConfig:
    max_steps: int = 8
    max_span_len: Optional[int] = None  # None: any length within the segment
    dedup: bool = True

    def validate(self):
        if self.max_steps < 1:
            raise DimensionMismatch("max_steps must be >= 1")
        if self.max_span_len is not None and self.max_span_len < 1:
            raise DimensionMismatch("max_span_len must be >= 1 when set")


def constrained_span_argmax(dist: SpanDistributions, n: int, max_span_len=None):
    """Best valid span under the product of start and end probabilities.

    Maximizes log start[s] + log end[e] over 1 <= s <= e <= n with
    e - s + 1 <= max_span_len; position 0 is never a span boundary. Ties
    break toward the smaller s, then the smaller e.

    Returns (start, end, log_score). Raises NoValidSpan when every valid
    pair has zero mass.
    """
    start = np.asarray(dist.start.value, dtype=np.float64)[: n + 1]
    end = np.asarray(dist.end.value, dtype=np.float64)[: n + 1]
    with np.errstate(divide="ignore"):
        log_s = np.log(start[1:])
        log_e = np.log(end[1:])
    grid = log_s[:, None] + log_e[None, :]  # (n, n); row s-1, column e-1
    valid = np.triu(np.ones((n, n), dtype=bool))
    if max_span_len is not None:
        lengths = np.arange(n)[None, :] - np.arange(n)[:, None] + 1
        valid &= lengths <= max_span_len
    grid = np.where(valid, grid, -np.inf)
    flat_idx = int(np.argmax(grid))  # first max in row-major order = tie rule
    best = grid.ravel()[flat_idx]
    if not np.isfinite(best):
        raise NoValidSpan(f"no (s, e) pair with positive mass for n={n}")
    s, e = divmod(flat_idx, n)
    return s + 1, e + 1, float(best)


class ModelScorer:
    """Drives decoder operations for one segment with trained parameters."""

    def __init__(
        self,
        params: ModelParams,
        segment: Segment,
        vocab: Optional[Vocabulary] = None,
        precomputed: Optional[np.ndarray] = None,
    ):
        self.params = params
        self.segment = segment
        self.states = encode(segment, params, vocab=vocab, precomputed=precomputed)
        self.state = DecoderState.initial(params.config.d_h)
        self.memory = TupleMemory(params.config.d_h)

    @property
    def ordering(self) -> str:
        return self.params.ordering

    def advance(self) -> SpanDistributions:
        """Move one step forward; return the first-extracted span's dists."""
        context = attention(self.params, self.states, self.state.hidden)
        self.state = decode_step(self.params, self.state, context, self.memory)
        head = self.params.pointer(self.params.first_role)
        return pointer_scores(head, self.states, self.state.hidden)

    def score_second(self, first_span) -> SpanDistributions:
        cond = span_vector(self.params, self.states, first_span)
        head = self.params.pointer(self.params.second_role)
        return pointer_scores(head, self.states, self.state.hidden, conditioning=cond)

    def commit(self, first_span, second_span):
        """Append the predicted tuple's vector to the memory."""
        first_vec = span_vector(self.params, self.states, first_span)
        second_vec = span_vector(self.params, self.states, second_span)
        cvec, evec = (
            (first_vec, second_vec)
            if self.params.first_role == "cause"
            else (second_vec, first_vec)
        )
        self.memory.add(causality_vector(self.params, cvec, evec))


def greedy_decode(scorer, n: int, ordering: str, config: DecodeConfig) -> list:
    """Decode with any scorer exposing advance / score_second / commit."""
    config.validate()
    emitted = []
    for _ in range(config.max_steps):
        try:
            first = scorer.advance()
        except NoValidSpan:
            break
        if int(np.argmax(first.start.value[: n + 1])) == 0:
            break
        try:
            f_s, f_e, _ = constrained_span_argmax(first, n, config.max_span_len)
            second = scorer.score_second((f_s, f_e))
            s_s, s_e, _ = constrained_span_argmax(second, n, config.max_span_len)
        except NoValidSpan:
            break
        if ordering == "CF":
            tup = Causality(f_s, f_e, s_s, s_e)
        else:
            tup = Causality(s_s, s_e, f_s, f_e)
        if config.dedup and tup in emitted:
            break
        emitted.append(tup)
        scorer.commit((f_s, f_e), (s_s, s_e))
    return emitted


def decode(
    segment: Segment,
    params: ModelParams,
    ordering: Optional[str] = None,
    config: DecodeConfig = DecodeConfig(),
    vocab: Optional[Vocabulary] = None,
    precomputed: Optional[np.ndarray] = None,
) -> list:
    """Greedy constrained decode of one segment into Causality tuples."""
    if ordering is None:
        ordering = params.ordering
    if ordering != params.ordering:
        raise DimensionMismatch(
            f"requested ordering {ordering} but params were built for {params.ordering}"
        )
    scorer = ModelScorer(params, segment, vocab=vocab, precomputed=precomputed)
    return greedy_decode(scorer, segment.n_tokens, ordering, config)


def predict_corpus(
    examples: Sequence[Example],
    params: ModelParams,
    ordering: Optional[str] = None,
    config: DecodeConfig = DecodeConfig(),
    vocab: Optional[Vocabulary] = None,
    precomputed_map: Optional[dict] = None,
):
    """Decode every example; failures are recorded per id, never fatal.

    Returns (predictions, errors): id -> tuple list, id -> message.
    """
    predictions = {}
    errors = {}
    for example in sorted(examples, key=lambda ex: ex.segment.id):
        seg = example.segment
        pre = None if precomputed_map is None else precomputed_map.get(seg.id)
        try:
            predictions[seg.id] = decode(
                seg, params, ordering, config, vocab=vocab, precomputed=pre
            )
        except Exception as err:  # per-example isolation by contract
            predictions[seg.id] = []
            errors[seg.id] = f"{type(err).__name__}: {err}"
    return predictions, errors


# ---------------------------------------------------------------------------
# Prediction file: one JSON record per line with span texts reconstructed
# from character offsets.

def predictions_to_lines(examples: Sequence[Example], predictions: dict) -> list:
    segments = {ex.segment.id: ex.segment for ex in examples}
    lines = []
    for seg_id in sorted(predictions):
        seg = segments.get(seg_id)
        tuples = []
        for tup in predictions[seg_id]:
            entry = {"c_s": tup.c_s, "c_e": tup.c_e, "e_s": tup.e_s, "e_e": tup.e_e}
            if seg is not None:
                entry["cause_text"] = seg.span_text(tup.c_s, tup.c_e)
                entry["effect_text"] = seg.span_text(tup.e_s, tup.e_e)
            tuples.append(entry)
        lines.append(json.dumps({"id": seg_id, "tuples": tuples}, sort_keys=True))
    return lines


def write_predictions(examples: Sequence[Example], predictions: dict, path):
    from .fileio import write_text_atomic

    text = "".join(line + "\n" for line in predictions_to_lines(examples, predictions))
    write_text_atomic(path, text)


def read_predictions(path) -> dict:
    predictions = {}
    with open(path, encoding="utf-8") as handle:
        for line in handle:
            line = line.strip()
            if not line:
                continue
            record = json.loads(line)
            predictions[record["id"]] = [
                Causality(t["c_s"], t["c_e"], t["e_s"], t["e_e"])
                for t in record["tuples"]
            ]
    return predictions
