"""Corpus ingestion: tokenization with character offsets, POS tagging,
gold cause/effect span alignment, sentinel insertion, fold splitting, and
the canonical one-record-per-line corpus format.

Token indexing convention: every Segment stores the reserved stop token at
index 0, so real tokens occupy positions 1..n and gold tuples use those
positions directly. Pointing a start head at position 0 means "stop".
"""

from __future__ import annotations

import csv
import io
import json
import random
from dataclasses import dataclass, field
from typing import NamedTuple, Optional, Sequence

from .errors import (
    AlignmentFailure,
    EmptyText,
    MalformedRow,
    OverlapViolation,
    TooFewExamples,
)
from .postag import SENTINEL_TAG, tag_word

SENTINEL_TEXT = "[unused0]"

# Characters split off a whitespace chunk's edges as one-char tokens.
_EDGE_PUNCT = set(".,;:!?\"'()[]%$")

# Alignment may widen a span to token boundaries by at most this many
# characters on each side before the row is rejected.
_ALIGN_SLACK = 2


@dataclass(frozen=True)
class Token:
    text: str
    char_start: int
    char_end: int
    pos_tag: str = "OTHER"

    def with_tag(self, tag: str) -> "Token":
        return Token(self.text, self.char_start, self.char_end, tag)


@dataclass(frozen=True)
class Segment:
    """A tokenized text unit whose index 0 is always the sentinel token."""

    id: str
    raw_text: str
    tokens: tuple

    @property
    def n_tokens(self) -> int:
        """Count of real (non-sentinel) tokens."""
        return len(self.tokens) - 1

    def span_text(self, start: int, end: int) -> str:
        """Surface text covered by token positions start..end (inclusive)."""
        return self.raw_text[self.tokens[start].char_start:self.tokens[end].char_end]

    def validate(self):
        head = self.tokens[0]
        if head.text != SENTINEL_TEXT or head.pos_tag != SENTINEL_TAG:
            raise MalformedRow(f"segment {self.id}: tokens[0] is not the sentinel")
        if self.n_tokens < 1:
            raise EmptyText(f"segment {self.id}: no real tokens")
        prev_end = -1
        for tok in self.tokens[1:]:
            if not tok.char_start < tok.char_end:
                raise MalformedRow(f"segment {self.id}: empty token extent")
            if tok.char_start < prev_end:
                raise MalformedRow(f"segment {self.id}: overlapping tokens")
            if self.raw_text[tok.char_start:tok.char_end] != tok.text:
                raise MalformedRow(f"segment {self.id}: offsets do not round-trip")
            prev_end = tok.char_end


class Causality(NamedTuple):
    """Token positions (inclusive) of one cause span and one effect span."""

    c_s: int
    c_e: int
    e_s: int
    e_e: int


STOP_TUPLE = Causality(0, -1, -1, -1)


@dataclass
class Example:
    segment: Segment
    gold: list = field(default_factory=list)

    def validate(self):
        self.segment.validate()
        n = self.segment.n_tokens
        for tup in self.gold:
            if not (1 <= tup.c_s <= tup.c_e <= n and 1 <= tup.e_s <= tup.e_e <= n):
                raise MalformedRow(
                    f"segment {self.segment.id}: tuple {tup} out of range (n={n})"
                )
            if tup.c_s <= tup.e_e and tup.e_s <= tup.c_e:
                raise OverlapViolation(
                    f"segment {self.segment.id}: cause and effect overlap in {tup}"
                )


@dataclass(frozen=True)
class FoldSplit:
    k: int
    assignments: dict

    def fold_ids(self, fold: int) -> list:
        return sorted(eid for eid, f in self.assignments.items() if f == fold)

    def split(self, examples: Sequence[Example], fold: int):
        """(train, test) example lists for one held-out fold."""
        train = [ex for ex in examples if self.assignments[ex.segment.id] != fold]
        test = [ex for ex in examples if self.assignments[ex.segment.id] == fold]
        return train, test


def sentinel_token() -> Token:
    return Token(SENTINEL_TEXT, 0, 0, SENTINEL_TAG)


def tokenize(raw_text: str) -> list:
    """Whitespace split, then peel edge punctuation into one-char tokens.

    Offsets index into ``raw_text`` and round-trip: raw_text[start:end]
    equals the token text. Interior hyphens, digits and case are preserved.
    """
    tokens = []
    pos = 0
    length = len(raw_text)
    while pos < length:
        if raw_text[pos].isspace():
            pos += 1
            continue
        end = pos
        while end < length and not raw_text[end].isspace():
            end += 1
        tokens.extend(_split_chunk(raw_text, pos, end))
        pos = end
    if not tokens:
        raise EmptyText("no tokens in text")
    return tokens


def _split_chunk(raw_text: str, start: int, end: int) -> list:
    lead = []
    while start < end and raw_text[start] in _EDGE_PUNCT:
        lead.append(Token(raw_text[start], start, start + 1))
        start += 1
    trail = []
    while end > start and raw_text[end - 1] in _EDGE_PUNCT:
        trail.append(Token(raw_text[end - 1], end - 1, end))
        end -= 1
    core = [Token(raw_text[start:end], start, end)] if end > start else []
    return lead + core + list(reversed(trail))


def pos_tag(tokens: Sequence[Token], file_tags: Optional[Sequence[str]] = None) -> list:
    """Fill each token's tag via the built-in tagger, or adopt file tags."""
    if file_tags is not None:
        if len(file_tags) != len(tokens):
            raise MalformedRow("tag column length differs from token count")
        return [tok.with_tag(tag) for tok, tag in zip(tokens, file_tags)]
    return [tok.with_tag(tag_word(tok.text)) for tok in tokens]


def build_segment(seg_id: str, raw_text: str) -> Segment:
    toks = pos_tag(tokenize(raw_text))
    return Segment(seg_id, raw_text, (sentinel_token(), *toks))


def align_span(segment: Segment, span_text: str, char_hint=None):
    """Map a gold span string to the smallest covering token range.

    Returns (token_start, token_end), inclusive positions >= 1. Without a
    hint the first (leftmost) occurrence of ``span_text`` in the raw text
    is used. Raises AlignmentFailure when the span cannot be located or
    when snapping to token boundaries would add more than two characters
    of slack on either side.
    """
    raw = segment.raw_text
    if char_hint is not None:
        c_start, c_end = char_hint
        if not (0 <= c_start < c_end <= len(raw)):
            raise AlignmentFailure(
                f"segment {segment.id}: hint {char_hint} out of bounds"
            )
    else:
        needle = span_text.strip()
        if not needle:
            raise AlignmentFailure(f"segment {segment.id}: empty span text")
        c_start = raw.find(needle)
        if c_start < 0:
            raise AlignmentFailure(
                f"segment {segment.id}: span not found: {needle!r}"
            )
        c_end = c_start + len(needle)
    # Trim whitespace inside the located range.
    while c_start < c_end and raw[c_start].isspace():
        c_start += 1
    while c_end > c_start and raw[c_end - 1].isspace():
        c_end -= 1
    if c_start >= c_end:
        raise AlignmentFailure(f"segment {segment.id}: blank span range")

    ts = te = None
    for i in range(1, len(segment.tokens)):
        tok = segment.tokens[i]
        if tok.char_end > c_start and tok.char_start < c_end:
            if ts is None:
                ts = i
            te = i
    if ts is None:
        raise AlignmentFailure(
            f"segment {segment.id}: no tokens cover chars {c_start}..{c_end}"
        )
    slack_left = c_start - segment.tokens[ts].char_start
    slack_right = segment.tokens[te].char_end - c_end
    if slack_left > _ALIGN_SLACK or slack_right > _ALIGN_SLACK:
        raise AlignmentFailure(
            f"segment {segment.id}: span boundary falls {max(slack_left, slack_right)}"
            " chars inside a token"
        )
    return ts, te


@dataclass
class IngestReport:
    rows: int = 0
    segments: int = 0
    examples_kept: int = 0
    tuples_kept: int = 0
    empty_gold_segments: int = 0
    skipped_rows: int = 0
    alignment_failures: int = 0
    overlap_violations: int = 0
    malformed_rows: int = 0
    messages: list = field(default_factory=list)

    def to_dict(self) -> dict:
        return {
            "rows": self.rows,
            "segments": self.segments,
            "examples_kept": self.examples_kept,
            "tuples_kept": self.tuples_kept,
            "empty_gold_segments": self.empty_gold_segments,
            "skipped_rows": self.skipped_rows,
            "alignment_failures": self.alignment_failures,
            "overlap_violations": self.overlap_violations,
            "malformed_rows": self.malformed_rows,
            "messages": list(self.messages),
        }


def _stripped(index: str) -> str:
    return index.rsplit(".", 1)[0] if "." in index else index


def _group_rows(indexed_rows):
    """Group rows into segments.

    Rows sharing the Index prefix before the final dot suffix ("0007.1",
    "0007.2") are multiple causalities of one segment and merge under the
    prefix id, but only when their Text agrees; otherwise each full Index
    stands alone (real corpora use dotted ids like "0001.00002" for
    distinct single-causality segments).

    Returns [(segment id, [(lineno, row), ...])] in first-seen order.
    """
    by_full = {}
    full_order = []
    for lineno, row in indexed_rows:
        full = row["Index"].strip()
        if full not in by_full:
            by_full[full] = []
            full_order.append(full)
        by_full[full].append((lineno, row))

    by_prefix = {}
    prefix_order = []
    for full in full_order:
        prefix = _stripped(full)
        if prefix not in by_prefix:
            by_prefix[prefix] = []
            prefix_order.append(prefix)
        by_prefix[prefix].append(full)

    groups = []
    for prefix in prefix_order:
        fulls = by_prefix[prefix]
        texts = {row["Text"] for full in fulls for _, row in by_full[full]}
        if len(fulls) > 1 and len(texts) == 1:
            merged = [pair for full in fulls for pair in by_full[full]]
            groups.append((prefix, merged))
        else:
            for full in fulls:
                groups.append((full, by_full[full]))
    return groups


def _get_offset_pair(row, start_col, end_col):
    start = row.get(start_col, "").strip()
    end = row.get(end_col, "").strip()
    if start == "" or end == "":
        return None
    try:
        return int(float(start)), int(float(end))
    except ValueError:
        raise MalformedRow(f"bad offset columns {start_col}/{end_col}: {start!r}/{end!r}")


def parse_fincausal_file(path, delimiter=";"):
    """Parse a FinCausal-style delimited file into Examples.

    Expected header columns: Index; Text; Cause; Effect. Optional
    Cause_Start/Cause_End/Effect_Start/Effect_End character offsets direct
    the alignment when a span string occurs more than once. Rows that fail
    alignment or overlap validation are skipped and counted, not fatal.

    Returns (examples, IngestReport).
    """
    with open(path, encoding="utf-8") as handle:
        return parse_fincausal_rows(csv.reader(handle, delimiter=delimiter))


def parse_fincausal_text(text: str, delimiter=";"):
    return parse_fincausal_rows(csv.reader(io.StringIO(text), delimiter=delimiter))


def parse_fincausal_rows(reader):
    report = IngestReport()
    rows = list(reader)
    if not rows:
        return [], report
    header = [h.strip() for h in rows[0]]
    required = ("Index", "Text", "Cause", "Effect")
    missing = [c for c in required if c not in header]
    if missing:
        raise MalformedRow(f"missing columns: {', '.join(missing)}")

    indexed_rows = []
    for lineno, raw_row in enumerate(rows[1:], start=2):
        if not raw_row or all(not cell.strip() for cell in raw_row):
            continue
        report.rows += 1
        if len(raw_row) != len(header):
            report.skipped_rows += 1
            report.malformed_rows += 1
            report.messages.append(f"line {lineno}: expected {len(header)} columns, got {len(raw_row)}")
            continue
        indexed_rows.append((lineno, dict(zip(header, raw_row))))

    examples = []
    groups = _group_rows(indexed_rows)
    for seg_id, group in groups:
        example = _build_example(seg_id, group, report)
        if example is not None:
            examples.append(example)
    report.segments = len(groups)
    report.examples_kept = len(examples)
    return examples, report


def _build_example(seg_id: str, rows, report: IngestReport):
    texts = {row["Text"] for _, row in rows}
    if len(texts) != 1:
        report.skipped_rows += len(rows)
        report.malformed_rows += len(rows)
        report.messages.append(f"segment {seg_id}: rows disagree on Text")
        return None
    raw_text = next(iter(texts))
    try:
        segment = build_segment(seg_id, raw_text)
    except EmptyText:
        report.skipped_rows += len(rows)
        report.malformed_rows += len(rows)
        report.messages.append(f"segment {seg_id}: empty text")
        return None

    gold = []
    for lineno, row in rows:
        cause = row["Cause"].strip()
        effect = row["Effect"].strip()
        if not cause and not effect:
            continue  # a no-causality row still defines the segment
        if not cause or not effect:
            report.skipped_rows += 1
            report.malformed_rows += 1
            report.messages.append(f"line {lineno}: one of Cause/Effect is empty")
            continue
        try:
            c_hint = _get_offset_pair(row, "Cause_Start", "Cause_End")
            e_hint = _get_offset_pair(row, "Effect_Start", "Effect_End")
            c_s, c_e = align_span(segment, cause, c_hint)
            e_s, e_e = align_span(segment, effect, e_hint)
            tup = Causality(c_s, c_e, e_s, e_e)
            if tup.c_s <= tup.e_e and tup.e_s <= tup.c_e:
                raise OverlapViolation(
                    f"line {lineno}: cause and effect token ranges overlap"
                )
        except AlignmentFailure as err:
            report.skipped_rows += 1
            report.alignment_failures += 1
            report.messages.append(str(err))
            continue
        except OverlapViolation as err:
            report.skipped_rows += 1
            report.overlap_violations += 1
            report.messages.append(str(err))
            continue
        except MalformedRow as err:
            report.skipped_rows += 1
            report.malformed_rows += 1
            report.messages.append(f"line {lineno}: {err}")
            continue
        gold.append(tup)

    if not gold:
        report.empty_gold_segments += 1
    report.tuples_kept += len(gold)
    return Example(segment, gold)


def make_folds(examples: Sequence[Example], k: int, seed: int) -> FoldSplit:
    """Seeded shuffle of example ids, then round-robin fold assignment."""
    if k < 2:
        raise TooFewExamples(f"k must be >= 2, got {k}")
    ids = sorted(ex.segment.id for ex in examples)
    if len(ids) != len(set(ids)):
        raise MalformedRow("duplicate example ids")
    if len(ids) < k:
        raise TooFewExamples(f"{len(ids)} examples cannot fill {k} folds")
    rng = random.Random(seed)
    rng.shuffle(ids)
    return FoldSplit(k, {eid: i % k for i, eid in enumerate(ids)})


# ---------------------------------------------------------------------------
# Canonical corpus format: one JSON record per line. The sentinel token is
# stored explicitly so files are self-describing.

def example_to_record(example: Example) -> dict:
    seg = example.segment
    return {
        "id": seg.id,
        "raw_text": seg.raw_text,
        "tokens": [
            {"text": t.text, "start": t.char_start, "end": t.char_end, "pos": t.pos_tag}
            for t in seg.tokens
        ],
        "gold": [
            {"c_s": g.c_s, "c_e": g.c_e, "e_s": g.e_s, "e_e": g.e_e}
            for g in example.gold
        ],
    }


def record_to_example(record: dict) -> Example:
    tokens = tuple(
        Token(t["text"], t["start"], t["end"], t["pos"]) for t in record["tokens"]
    )
    segment = Segment(record["id"], record["raw_text"], tokens)
    gold = [Causality(g["c_s"], g["c_e"], g["e_s"], g["e_e"]) for g in record["gold"]]
    example = Example(segment, gold)
    example.validate()
    return example


def dump_corpus(examples: Sequence[Example]) -> str:
    lines = [json.dumps(example_to_record(ex), sort_keys=True) for ex in examples]
    return "".join(line + "\n" for line in lines)


def write_corpus(examples: Sequence[Example], path):
    from .fileio import write_text_atomic

    write_text_atomic(path, dump_corpus(examples))


def read_corpus(path) -> list:
    examples = []
    with open(path, encoding="utf-8") as handle:
        for line in handle:
            line = line.strip()
            if line:
                examples.append(record_to_example(json.loads(line)))
    return examples
