"""Deterministic part-of-speech tagger over a fixed 12-tag universal-style
tagset, plus the reserved SENTINEL tag for the stop token.

The tagger is rule-based so that runs are reproducible without any learned
component. Rules fire in a fixed order; the first match wins:

1. numbers (optional sign, digit groups with , or ., optional ordinal
   ending) -> NUM
2. tokens with no alphanumeric character at all -> PUNCT
3. closed-class lexicon lookup on the lowercased token
4. suffix rules, longest suffix first, requiring a stem of at least two
   characters
5. fallback -> OTHER

When a data file carries its own tag column those tags override this
tagger (file tags win).
"""

from __future__ import annotations

import re

TAGSET = (
    "NOUN", "VERB", "ADJ", "ADV", "PRON", "DET",
    "ADP", "NUM", "CONJ", "PRT", "PUNCT", "OTHER",
)
SENTINEL_TAG = "SENTINEL"

# SENTINEL first so the stop token's embedding row is id 0 everywhere.
ALL_TAGS = (SENTINEL_TAG,) + TAGSET
TAG_TO_ID = {tag: i for i, tag in enumerate(ALL_TAGS)}

_NUM_RE = re.compile(r"^[+-]?\d+(?:[.,]\d+)*(?:st|nd|rd|th)?$")

_LEXICON = {}


def _extend(tag, words):
    for w in words.split():
        _LEXICON[w] = tag


_extend("DET", "the a an this that these those each every some any no both "
               "either neither another all such")
_extend("PRON", "i you he she it we they me him her us them mine yours hers "
                "ours theirs my your his its our their myself yourself "
                "himself herself itself ourselves themselves who whom whose "
                "which what something anything nothing everything someone "
                "anyone everyone")
_extend("ADP", "in on at of from by with about against between into through "
               "during before after above below over under near across "
               "behind beyond within without upon toward towards amid among "
               "around per via despite off")
_extend("CONJ", "and or but nor yet because although though while whereas "
                "if unless since as when than")
_extend("PRT", "to not n't")
_extend("VERB", "is are was were be been being am has have had having do "
                "does did done will would can could may might must shall "
                "should rose rise fell fall grew grow said say says sold "
                "sell bought buy cut paid pay hit held hold led lead saw see "
                "seen took take taken came come gave give given got get went "
                "go made make kept keep lost lose met meet put ran run set "
                "stood stand told tell won win wrote write beat drove drive "
                "sank sink shrank shrink")
_extend("ADV", "very also now then here there however moreover meanwhile "
               "never always often soon already still just quite too well "
               "down up out more most less least so")
_extend("ADJ", "high low new old good bad big small strong weak higher "
               "lower highest lowest many much few little same other several "
               "first last next previous net gross fiscal quarterly annual "
               "due likely")

# (suffix, tag) pairs, checked in order; stems shorter than 2 chars never match.
_SUFFIX_RULES = (
    ("ly", "ADV"),
    ("tion", "NOUN"), ("sion", "NOUN"), ("ment", "NOUN"), ("ness", "NOUN"),
    ("ity", "NOUN"), ("ship", "NOUN"), ("ance", "NOUN"), ("ence", "NOUN"),
    ("ism", "NOUN"),
    ("ize", "VERB"), ("ise", "VERB"), ("ify", "VERB"),
    ("ous", "ADJ"), ("ive", "ADJ"), ("able", "ADJ"), ("ible", "ADJ"),
    ("ful", "ADJ"), ("less", "ADJ"), ("ish", "ADJ"), ("ic", "ADJ"),
    ("al", "ADJ"),
    ("ing", "VERB"), ("ed", "VERB"),
    ("er", "NOUN"), ("or", "NOUN"), ("ist", "NOUN"),
    ("s", "NOUN"),
)


def tag_word(text: str) -> str:
    """Assign one tag from TAGSET to a single token; never fails."""
    if _NUM_RE.match(text):
        return "NUM"
    if not any(ch.isalnum() for ch in text):
        return "PUNCT"
    lowered = text.lower()
    if lowered in _LEXICON:
        return _LEXICON[lowered]
    for suffix, tag in _SUFFIX_RULES:
        if lowered.endswith(suffix) and len(lowered) >= len(suffix) + 2:
            if suffix == "s" and lowered.endswith("ss"):
                continue
            return tag
    return "OTHER"
