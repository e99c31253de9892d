from __future__ import annotations

import pickle
import random

import pytest
from hypothesis import given, settings, strategies as st

from gen import WORDS, keyword
from oracles import naive_keywords
from pivotrl.errors import PivotError
from pivotrl.lexicon import (
    Category, PhraseMatcher, PivotalLexicon, contains_keyword, load_default_lexicon, load_lexicon,
)


def test_default_lexicon_size_and_categories(lex):
    assert len(lex) == 152
    counts = {c: len(lex.phrases(c)) for c in Category}
    assert sum(counts.values()) == 152 and all(counts.values())


@pytest.mark.parametrize("phrase,category", [
    ("wait", Category.METACOGNITIVE),
    ("step 2", Category.STRUCTURAL),
    ("double-check", Category.METACOGNITIVE),
    ("hold on", Category.METACOGNITIVE),
    ("first", Category.STRUCTURAL),
    ("observe", Category.VISUAL_REEXAMINATION),
])
def test_default_entries(lex, phrase, category):
    assert (phrase, category) in lex
    assert lex.category_of(phrase) is category


def test_default_invariants(lex):
    phrases = lex.phrases()
    assert len(set(phrases)) == len(phrases)
    assert all(p == p.lower() and p.strip() == p and p for p in phrases)


def test_double_check(lex):
    r = contains_keyword("Let me double-check.", lex)
    assert r.matched and "double-check" in r.phrases


def test_word_boundaries(lex):
    assert not contains_keyword("He pressed the button.", lex).matched
    assert not contains_keyword("The waitress smiled.", lex).matched
    assert contains_keyword("But then, it was done.", lex).matched
    assert contains_keyword("(wait)", lex).phrases == ("wait",)
    assert contains_keyword("step_2 wait_", lex).matched


def test_multiword_whitespace(lex):
    assert "hold on" in contains_keyword("HOLD\n  ON, please", lex).phrases
    assert "hold on" not in contains_keyword("holdon", lex).phrases
    assert "hold on" not in contains_keyword("hold onto", lex).phrases


def test_reports_all_matches_in_lexicon_order(lex):
    r = contains_keyword("Wait, however, let me verify.", lex)
    order = lex.phrases()
    assert list(r.phrases) == sorted(r.phrases, key=order.index)
    assert {"wait", "however", "verify"} <= set(r.phrases)


def test_planted_phrases_agree_with_naive_oracle(lex):
    rng = random.Random(99)
    phrases = lex.phrases()
    for _ in range(1000):
        words = [rng.choice(WORDS) for _ in range(rng.randint(0, 8))]
        for _ in range(rng.randint(0, 2)):
            words.insert(rng.randint(0, len(words)), rng.choice(["", "(", "-"]) + keyword(rng))
        sentence = rng.choice([" ", "  ", ", "]).join(words) + rng.choice(["", ".", "?"])
        assert list(lex.matcher.find(sentence)) == naive_keywords(sentence, phrases), sentence


@settings(max_examples=200, deadline=None)
@given(st.text(alphabet=st.sampled_from(list("abwitnhOLD ,.-!()\n")), max_size=40),
       st.sampled_from(load_default_lexicon().phrases()))
def test_case_and_padding_invariance(noise, phrase):
    lex = load_default_lexicon()
    assert lex.matcher.find(noise) == lex.matcher.find(noise.upper()) == lex.matcher.find(noise.lower())
    for pad in (f"... {phrase.upper()} !!", f"({phrase})", f"-{phrase}-", f"\n{phrase}."):
        assert phrase in contains_keyword(pad, lex).phrases


def test_case_invariance_planted(lex):
    rng = random.Random(1)
    for _ in range(300):
        s = " ".join(rng.choice(WORDS + lex.phrases()) for _ in range(5))
        assert lex.matcher.find(s) == lex.matcher.find(s.upper()) == lex.matcher.find(s.title())


def test_count():
    m = PhraseMatcher(["wait", "let me check"])
    assert m.count("Wait. wait, LET ME  CHECK awaits") == {"wait": 2, "let me check": 1}
    assert m.count("nothing") == {}


def test_matcher_pickles():
    m = PhraseMatcher(["wait"])
    m2 = pickle.loads(pickle.dumps(m))
    assert m2.find("Wait!") == ("wait",)


def test_loader_normalizes_and_validates(tmp_path):
    p = tmp_path / "lex.tsv"
    p.write_text("# comment\nstructural\tStep   One\nmetacognitive\twait\n", encoding="utf-8")
    lex = load_lexicon(p)
    assert lex.phrases() == ["step one", "wait"]
    for bad in ("structural\twait\nmetacognitive\twait\n", "structural\t \n", "bogus\twait\n",
                "no tab here\n"):
        p.write_text(bad, encoding="utf-8")
        with pytest.raises(PivotError) as ei:
            load_lexicon(p)
        assert ei.value.code == "LEXICON_MALFORMED"


def test_constructor_rejects_unnormalized():
    with pytest.raises(PivotError):
        PivotalLexicon([("Wait", Category.METACOGNITIVE)])
    with pytest.raises(PivotError):
        PivotalLexicon([("a  b", Category.METACOGNITIVE)])
