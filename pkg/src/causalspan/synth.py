"""Synthetic desk-scale corpora with known cause/effect structure.

Segments follow simple financial-news templates built around causal
connectives, so a correctly wired model can overfit them quickly:

  effect-first   "<S1> <V1> because <S2> <V2>."
  cause-first    "<S1> <V1> so <S2> <V2>."
  two tuples     "<A> <V1> and <B> <V2> because <C> <W>."  (shared cause)
  no causality   "<S1> <V1> and <S2> <V2>."

Spans cover the subject plus verb (plus an optional adverb). Gold indices
are derived from the construction, not re-aligned.
"""

from __future__ import annotations

import random
from typing import Sequence

from .corpus import Causality, Example, build_segment

SUBJECTS = (
    "sales profits revenue margins exports costs shares demand output "
    "earnings imports prices wages turnover bookings inventories dividends "
    "volumes orders receipts"
).split()
VERBS = (
    "rose fell climbed dropped surged slipped improved weakened recovered "
    "declined rebounded stalled"
).split()
ADVERBS = "sharply slightly steadily modestly".split()


def _phrase(rng: random.Random, subject: str, verb: str):
    """(words, span token length) for one subject-verb(-adverb) phrase."""
    words = [subject, verb]
    if rng.random() < 0.35:
        words.append(rng.choice(ADVERBS))
    return words


def make_example(seg_id: str, rng: random.Random, kind: str) -> Example:
    subjects = rng.sample(SUBJECTS, 4)
    verbs = rng.sample(VERBS, 4)
    if kind == "double":
        left_a = _phrase(rng, subjects[0], verbs[0])
        left_b = _phrase(rng, subjects[1], verbs[1])
        right = _phrase(rng, subjects[2], verbs[2])
        words = left_a + ["and"] + left_b + ["because"] + right
        a_end = len(left_a)
        b_start = a_end + 2
        b_end = b_start + len(left_b) - 1
        c_start = b_end + 2
        c_end = c_start + len(right) - 1
        gold = [
            Causality(c_start, c_end, 1, a_end),
            Causality(c_start, c_end, b_start, b_end),
        ]
    elif kind == "none":
        left = _phrase(rng, subjects[0], verbs[0])
        right = _phrase(rng, subjects[1], verbs[1])
        words = left + ["and"] + right
        gold = []
    else:
        left = _phrase(rng, subjects[0], verbs[0])
        right = _phrase(rng, subjects[1], verbs[1])
        connective = "because" if kind == "effect_first" else "so"
        words = left + [connective] + right
        l_span = (1, len(left))
        r_span = (len(left) + 2, len(left) + 1 + len(right))
        if kind == "effect_first":
            gold = [Causality(r_span[0], r_span[1], l_span[0], l_span[1])]
        else:
            gold = [Causality(l_span[0], l_span[1], r_span[0], r_span[1])]
    raw_text = " ".join(words) + "."
    example = Example(build_segment(seg_id, raw_text), gold)
    example.validate()
    return example


def make_corpus(
    n_examples: int,
    seed: int = 0,
    double_frac: float = 0.12,
    empty_frac: float = 0.10,
) -> list:
    """Deterministic mixed-template corpus of ``n_examples`` segments."""
    rng = random.Random(seed)
    examples = []
    for i in range(n_examples):
        roll = rng.random()
        if roll < double_frac:
            kind = "double"
        elif roll < double_frac + empty_frac:
            kind = "none"
        elif rng.random() < 0.5:
            kind = "effect_first"
        else:
            kind = "cause_first"
        examples.append(make_example(f"{i:04d}", rng, kind))
    return examples


def to_fincausal_text(examples: Sequence[Example]) -> str:
    """Render examples as a FinCausal-style semicolon-delimited file."""
    lines = ["Index;Text;Cause;Effect"]
    for ex in examples:
        seg = ex.segment
        if not ex.gold:
            lines.append(f"{seg.id};{seg.raw_text};;")
            continue
        many = len(ex.gold) > 1
        for j, tup in enumerate(ex.gold, start=1):
            index = f"{seg.id}.{j}" if many else seg.id
            cause = seg.span_text(tup.c_s, tup.c_e)
            effect = seg.span_text(tup.e_s, tup.e_e)
            lines.append(f"{index};{seg.raw_text};{cause};{effect}")
    return "".join(line + "\n" for line in lines)


def write_fincausal(examples: Sequence[Example], path):
    with open(path, "w", encoding="utf-8") as handle:
        handle.write(to_fincausal_text(examples))
