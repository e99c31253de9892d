from __future__ import annotations

import itertools
import json
import random

import pytest
from hypothesis import given, settings, strategies as st

from conftest import EXAMPLE1, MINIMAL
from gen import LIT, PERMUTATION_TABLE, render_order, tag_mutations, valid_response
from oracles import naive_valid
from pivotrl.errors import PivotError
from pivotrl.trace import (
    DEFAULT_TAGS, MISSING_THINK, MULTIPLE_THINK, NESTED_PERCEPTION, PERCEPTION_OUTSIDE_THINK,
    UNCLOSED_TAG, RawTrace, SegmentKind, TagConfig, extract_answer,
    iter_jsonl, load_corpus, parse_trace, serialize_trace,
)

def test_minimal_case():
    p = parse_trace(MINIMAL)
    assert p.format_valid and p.format_violations == []
    assert [s.text for s in p.perceptions] == ["P1"]
    assert p.answer_text == "B"


def test_example1_case():
    p = parse_trace(EXAMPLE1)
    assert p.format_valid
    assert len(p.perceptions) == 3
    assert p.answer_text == "B"
    assert serialize_trace(p) == EXAMPLE1


def test_unclosed_perception():
    p = parse_trace("<think>A <perception>P")
    assert not p.format_valid
    assert UNCLOSED_TAG in p.format_violations


def test_perception_before_think():
    p = parse_trace("<perception>P</perception><think>A</think>")
    assert not p.format_valid
    assert p.format_violations == [PERCEPTION_OUTSIDE_THINK]


def test_empty_response_is_missing_think():
    p = parse_trace("")
    assert not p.format_valid and p.format_violations == [MISSING_THINK]


def test_zero_perceptions_valid():
    assert parse_trace("<think>just text</think> 4").format_valid


def test_multiple_think_blocks():
    p = parse_trace("<think>a</think><think>b</think>")
    assert MULTIPLE_THINK in p.format_violations


def test_nested_perception():
    p = parse_trace("<think><perception>a<perception>b</perception></perception></think>")
    assert NESTED_PERCEPTION in p.format_violations


def test_permutation_table_complete():
    assert set(PERMUTATION_TABLE) == {"".join(o) for o in itertools.permutations("TPpt")}


@pytest.mark.parametrize("order", sorted(PERMUTATION_TABLE))
def test_tag_order_permutations(order):
    p = parse_trace(render_order(order))
    expected = PERMUTATION_TABLE[order]
    assert p.format_valid == (not expected)
    assert set(p.format_violations) == expected


@pytest.mark.parametrize("name,order", list(tag_mutations()))
def test_single_tag_mutations_invalid(name, order):
    text = "".join(LIT[c] + "x. " for c in order)
    p = parse_trace(text)
    assert not p.format_valid
    if name.startswith("insT"):
        assert MULTIPLE_THINK in p.format_violations
    if name == "insP@2":
        assert NESTED_PERCEPTION in p.format_violations
    if name == "del0":
        assert MISSING_THINK in p.format_violations


def test_deletion_codes():
    assert parse_trace("<think>a<perception>p</perception>b").format_violations == [UNCLOSED_TAG]
    assert parse_trace("<think>a p</perception>b</think>").format_violations == [UNCLOSED_TAG]
    assert parse_trace("<think>a<perception>p b</think>").format_violations == [UNCLOSED_TAG]


@pytest.mark.parametrize("text,expected", [
    ("<think>x</think> \\boxed{B}", "B"),
    ("<think>x</think>", None),
    ("<think>x</think>  the answer is 4  ", "the answer is 4"),
    ("<think>\\boxed{1}</think> \\boxed{\\frac{5}{2}}", "\\frac{5}{2}"),
    ("<think>\\boxed{1} then \\boxed{2}</think>", "2"),
    ("no tags \\boxed{7}", "7"),
    ("no tags at all", None),
    ("<think>x</think> \\boxed{a{b}c} and \\boxed{d}", "d"),
    ("<think>x</think> \\boxed{unbalanced", "\\boxed{unbalanced"),
])
def test_extract_answer(text, expected):
    assert extract_answer(parse_trace(text)) == expected


def _nested_brace_string(rng: random.Random, depth: int = 0) -> str:
    parts = []
    for _ in range(rng.randint(0, 3)):
        if depth < 4 and rng.random() < 0.4:
            parts.append("{" + _nested_brace_string(rng, depth + 1) + "}")
        else:
            parts.append(rng.choice(["a", "\\frac", "1", "+", " ", "x^2"]))
    return "".join(parts)


def test_boxed_brace_balance_oracle():
    rng = random.Random(11)
    for _ in range(500):
        inner = _nested_brace_string(rng)
        text = f"<think>t</think> \\boxed{{{inner}}} tail}}"
        assert extract_answer(parse_trace(text)) == inner


def test_segments_tile_think_span():
    rng = random.Random(3)
    for _ in range(300):
        text = valid_response(rng)
        p = parse_trace(text)
        a, b = p.think_span
        pos = a
        for seg in p.segments:
            assert seg.start == pos and seg.start < seg.end
            assert text[seg.start:seg.end] == seg.raw
            pos = seg.end
        assert pos == b
        assert "".join(s.raw for s in p.segments) == text[a:b]
        for seg in p.perceptions:
            assert a <= seg.start and seg.end <= b
            assert "<perception>" not in seg.text and "</perception>" not in seg.text


def test_round_trip_random_valid():
    rng = random.Random(2024)
    for _ in range(1000):
        text = valid_response(rng)
        p = parse_trace(text)
        assert p.format_valid, text
        out = serialize_trace(p)
        assert out == text
        q = parse_trace(out)
        assert q.segments == p.segments and q.answer_text == p.answer_text


def test_serialize_invalid_raises():
    with pytest.raises(PivotError) as ei:
        serialize_trace(parse_trace("<think>a"))
    assert ei.value.code == "SERIALIZE_INVALID"


def test_insert_any_unmatched_tag_breaks_validity():
    rng = random.Random(5)
    for _ in range(300):
        text = valid_response(rng)
        inside = {i for t in parse_trace(text).tags for i in range(t.start + 1, t.end)}
        pos = rng.choice([i for i in range(len(text) + 1) if i not in inside])
        mutated = text[:pos] + rng.choice(list(LIT.values())) + text[pos:]
        assert not parse_trace(mutated).format_valid


def test_agrees_with_grammar_oracle():
    from gen import any_response
    rng = random.Random(8)
    for _ in range(1000):
        text, _ = any_response(rng)
        assert parse_trace(text).format_valid == naive_valid(text, DEFAULT_TAGS)


def test_custom_tags():
    tags = TagConfig("[T]", "[/T]", "[P]", "[/P]")
    p = parse_trace("[T]a. [P]x[/P] b[/T] \\boxed{1}", tags)
    assert p.format_valid and p.perceptions[0].text == "x"
    assert serialize_trace(p, tags) == "[T]a. [P]x[/P] b[/T] \\boxed{1}"
    assert not parse_trace(MINIMAL, tags).format_valid


def test_tag_config_rejects_duplicates():
    with pytest.raises(PivotError):
        TagConfig("<a>", "<a>", "<p>", "</p>")


def test_raw_trace_validation():
    with pytest.raises(PivotError) as ei:
        RawTrace.from_dict({"id": "x", "response": ""})
    assert ei.value.code == "RAW_TRACE_INVALID"
    with pytest.raises(PivotError):
        RawTrace("", "q", "r", "g")
    r = RawTrace.from_dict({"id": 3, "response": "r", "ground_truth": "B", "group_id": "g"})
    assert r.id == "3" and RawTrace.from_dict(r.to_dict()) == r


def test_corpus_io(tmp_path):
    path = tmp_path / "c.jsonl"
    path.write_text(json.dumps({"id": "a", "response": MINIMAL, "ground_truth": "B"}) + "\n\n"
                    + "{bad\n", encoding="utf-8")
    rows = list(iter_jsonl(path))
    assert rows[0][0] == 1 and rows[0][2] is None
    assert rows[1][0] == 3 and rows[1][1] is None and rows[1][2]
    with pytest.raises(PivotError):
        load_corpus(path)


@settings(max_examples=200, deadline=None)
@given(st.lists(st.sampled_from(list("ab. \n") + list(LIT.values())), max_size=30).map("".join))
def test_parser_total_and_tiling(text):
    p = parse_trace(text)
    assert p.format_valid == naive_valid(text, DEFAULT_TAGS)
    if p.think_span is not None:
        a, b = p.think_span
        assert "".join(s.raw for s in p.segments) == text[a:b]
    if p.format_valid:
        assert serialize_trace(p) == text
        assert all(s.kind in (SegmentKind.REASONING, SegmentKind.PERCEPTION) for s in p.segments)
