from __future__ import annotations

import csv
import random

import pytest

from conftest import EXAMPLE1
from pivotrl.behavior import (
    BEHAVIORS, EMPTY_CORPUS, RuleBasedClassifier, TeacherBehaviorClassifier, TraceBehavior,
    analyze, detect_behaviors, emergence_ratio, load_patterns, reasoning_text, write_behavior_csv,
)
from pivotrl.errors import PivotError
from pivotrl.pgcot import PERMANENT, TeacherResponse
from pivotrl.trace import parse_trace

NEUTRAL = ["angle", "side", "radius", "equal", "value", "triangle", "is", "so", "the", "area"]


def test_example1_flags():
    tb = detect_behaviors(parse_trace(EXAMPLE1))
    assert tb.flags["verification"] and tb.flags["backtracking"]


def test_empty_think_block_all_false():
    tb = detect_behaviors(parse_trace("<think></think> \\boxed{A}"))
    assert tb.flags == {b: False for b in BEHAVIORS}


def test_text_outside_think_is_ignored():
    tb = detect_behaviors(parse_trace("Wait, verify. <think>The side is 3.</think> wait"))
    assert not any(tb.flags.values())


def test_reasoning_text_keeps_perception_bodies():
    p = parse_trace("<think>A <perception>wait</perception> B</think>")
    assert reasoning_text(p) == "A wait B"
    assert reasoning_text(parse_trace("no tags, wait")) == "no tags, wait"


def test_subgoal_needs_two_distinct_phrases():
    clf = RuleBasedClassifier()
    assert not clf.classify("First we find x. First again.")["subgoal_setting"]
    assert clf.classify("First we find x. Then we find y.")["subgoal_setting"]
    assert clf.occurrences("First, first, then.")["subgoal_setting"] == 3


def test_boundary_matching():
    clf = RuleBasedClassifier()
    assert not clf.classify("The waitress checked nothing backwards-ish")["backtracking"]
    assert clf.classify("Hold on, let me double-check.")["verification"]


def plant(rng):
    plan = {b: rng.random() < 0.5 for b in BEHAVIORS}
    phrases = load_patterns()
    sentences = [" ".join(rng.choice(NEUTRAL) for _ in range(rng.randint(2, 6))) + "."
                 for _ in range(rng.randint(1, 4))]
    for b, on in plan.items():
        if b == "subgoal_setting":
            k = 2 if on else rng.randint(0, 1)
            for phrase in rng.sample(phrases[b], k):
                sentences.insert(rng.randint(0, len(sentences)), f"{phrase.capitalize()}, the side.")
        elif on:
            phrase = rng.choice(phrases[b])
            sentences.insert(rng.randint(0, len(sentences)), f"{phrase.upper()} the value.")
    return "<think>" + " ".join(sentences) + "</think> \\boxed{A}", plan


def test_planted_corpus_matches_plan():
    rng = random.Random(17)
    corpus = [plant(rng) for _ in range(200)]
    for text, plan in corpus:
        assert detect_behaviors(parse_trace(text)).flags == plan, text
    report = analyze((str(i), parse_trace(t)) for i, (t, _) in enumerate(corpus))
    for b in BEHAVIORS:
        assert report.flagged[b] == sum(plan[b] for _, plan in corpus)


def tb(flags, tid=None):
    return TraceBehavior(tid, dict(zip(BEHAVIORS, flags)), {b: int(f) for b, f in zip(BEHAVIORS, flags)})


def test_ratio_arithmetic():
    reports = [tb([1, 1, 0, 0]), tb([1, 0, 0, 0]), tb([0, 1, 0, 0]), tb([0, 0, 0, 0])]
    assert emergence_ratio(reports).ratios["verification"] == 0.5
    assert emergence_ratio([tb([1, 1, 1, 1])] * 3).ratios == {b: 1.0 for b in BEHAVIORS}


def test_random_flag_matrix_matches_counting():
    rng = random.Random(3)
    for _ in range(50):
        n = rng.randint(1, 40)
        matrix = [[rng.random() < 0.4 for _ in BEHAVIORS] for _ in range(n)]
        report = emergence_ratio([tb(row) for row in matrix])
        for j, b in enumerate(BEHAVIORS):
            count = 0
            for row in matrix:
                count += row[j]
            assert report.ratios[b] == count / n
            assert 0.0 <= report.ratios[b] <= 1.0


def test_empty_corpus():
    with pytest.raises(PivotError) as ei:
        emergence_ratio([])
    assert ei.value.code == EMPTY_CORPUS
    with pytest.raises(PivotError):
        emergence_ratio([TraceBehavior("x", None, error="UNCLASSIFIED")])


class Flaky:
    def classify(self, text):
        if "boom" in text:
            raise RuntimeError("classifier down")
        return RuleBasedClassifier().classify(text)


def test_unclassified_excluded_from_denominator():
    traces = [("a", parse_trace("<think>Wait.</think>")), ("b", parse_trace("<think>boom</think>")),
              ("c", parse_trace("<think>Fine.</think>"))]
    report = analyze(traces, Flaky())
    assert (report.classified, report.unclassified, report.unclassified_ids) == (2, 1, ["b"])
    assert report.ratios["backtracking"] == 0.5


def test_all_false_trace_never_raises_ratios():
    rng = random.Random(8)
    for _ in range(100):
        reports = [tb([rng.random() < 0.5 for _ in BEHAVIORS]) for _ in range(rng.randint(1, 10))]
        before = emergence_ratio(reports).ratios
        after = emergence_ratio(reports + [tb([0, 0, 0, 0])]).ratios
        assert all(after[b] <= before[b] for b in BEHAVIORS)


def test_order_independent_and_deterministic():
    rng = random.Random(4)
    corpus = [(str(i), parse_trace(plant(rng)[0])) for i in range(60)]
    a = analyze(corpus)
    shuffled = corpus[:]
    rng.shuffle(shuffled)
    b = analyze(shuffled)
    assert (a.ratios, a.flagged, a.occurrences) == (b.ratios, b.flagged, b.occurrences)


class Judge:
    def __init__(self, reply, status="ok"):
        self.reply, self.status, self.prompts = reply, status, []

    def complete(self, request):
        self.prompts.append(request.prompt)
        return TeacherResponse(self.reply, self.status)


def test_teacher_classifier():
    reply = ('Sure: {"verification": true, "backtracking": false, '
             '"subgoal_setting": true, "backward_chaining": false}')
    judge = Judge(reply)
    flags = detect_behaviors(parse_trace("<think>abc</think>"), TeacherBehaviorClassifier(judge)).flags
    assert flags == {"verification": True, "backtracking": False, "subgoal_setting": True,
                     "backward_chaining": False}
    assert "abc" in judge.prompts[0]
    for bad in (Judge("no json"), Judge('{"verification": true}'), Judge(reply, PERMANENT)):
        out = detect_behaviors(parse_trace("<think>x</think>"), TeacherBehaviorClassifier(bad), "t")
        assert not out.classified and out.error.startswith("UNCLASSIFIED")


def test_csv_output(tmp_path):
    report = emergence_ratio([tb([1, 0, 1, 0]), tb([0, 0, 1, 0])])
    path = tmp_path / "b.csv"
    write_behavior_csv(report, path)
    rows = list(csv.DictReader(path.open()))
    assert [r["behavior"] for r in rows] == ["Verification", "Backtracking", "SubgoalSetting",
                                             "BackwardChaining"]
    assert float(rows[0]["ratio"]) == 0.5 and float(rows[2]["ratio"]) == 1.0


def test_custom_patterns(tmp_path):
    p = tmp_path / "pat.tsv"
    p.write_text("verification\tsanity test\n", encoding="utf-8")
    clf = RuleBasedClassifier(load_patterns(p))
    assert clf.classify("A Sanity  Test.")["verification"]
    p.write_text("bogus\tx\n", encoding="utf-8")
    with pytest.raises(PivotError):
        load_patterns(p)
