"""Rule tagger behavior, frozen against a hand-derived golden file."""

from pathlib import Path

from causalspan.corpus import pos_tag, tokenize
from causalspan.postag import ALL_TAGS, SENTINEL_TAG, TAG_TO_ID, TAGSET, tag_word

GOLDEN = Path(__file__).parent / "data" / "pos_tags_golden.tsv"


def load_golden():
    rows = []
    for line in GOLDEN.read_text(encoding="utf-8").splitlines():
        if line.strip():
            word, tag = line.split("\t")
            rows.append((word, tag))
    return rows


def test_golden_file_words():
    for word, expected in load_golden():
        assert tag_word(word) == expected, f"{word!r}: got {tag_word(word)}, want {expected}"


def test_golden_covers_every_tag():
    seen = {tag for _, tag in load_golden()}
    assert seen == set(TAGSET)


def test_spec_phrase_tags():
    tokens = pos_tag(tokenize("sales rose sharply"))
    assert [t.pos_tag for t in tokens] == ["NOUN", "VERB", "ADV"]


def test_regex_forced_classes():
    assert tag_word("5") == "NUM"
    assert tag_word("%") == "PUNCT"


def test_closed_class_lexicon():
    assert tag_word("the") == "DET"
    assert tag_word("The") == "DET"  # case-insensitive lookup


def test_fallback_is_other():
    assert tag_word("zzyzx") == "OTHER"


def test_file_tags_override_builtin():
    tokens = tokenize("sales rose")
    tagged = pos_tag(tokens, file_tags=["VERB", "NOUN"])
    assert [t.pos_tag for t in tagged] == ["VERB", "NOUN"]


def test_tag_id_space():
    assert TAG_TO_ID[SENTINEL_TAG] == 0
    assert len(ALL_TAGS) == 13
    assert len(set(TAG_TO_ID.values())) == 13
