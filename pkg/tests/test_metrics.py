import functools
from fractions import Fraction

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from touchreplay.metrics import (detection_report, iou, lcs, levenshtein,
                                 sequence_report)
from touchreplay.types import BoundingBox, Detection

KINDS = "TLG"


# -- independent oracles -----------------------------------------------------

def iou_fraction(a: BoundingBox, b: BoundingBox) -> Fraction:
    x0 = max(a.x, b.x)
    y0 = max(a.y, b.y)
    x1 = min(a.x + a.w, b.x + b.w)
    y1 = min(a.y + a.h, b.y + b.h)
    if x1 <= x0 or y1 <= y0:
        return Fraction(0)
    inter = Fraction((x1 - x0) * (y1 - y0))
    return inter / (a.area() + b.area() - inter)


def levenshtein_recursive(a: str, b: str) -> int:
    @functools.cache
    def go(i, j):
        if i == 0:
            return j
        if j == 0:
            return i
        return min(go(i - 1, j) + 1,
                   go(i, j - 1) + 1,
                   go(i - 1, j - 1) + (a[i - 1] != b[j - 1]))
    return go(len(a), len(b))


def lcs_enumerate(a: str, b: str) -> int:
    """Longest common subsequence by enumerating subsequences of the shorter."""
    if len(a) > len(b):
        a, b = b, a

    def is_subseq(s, t):
        it = iter(t)
        return all(ch in it for ch in s)

    best = 0
    for mask in range(1 << len(a)):
        s = [a[i] for i in range(len(a)) if mask >> i & 1]
        if len(s) > best and is_subseq(s, b):
            best = len(s)
    return best


# -- iou ----------------------------------------------------------------------

def test_iou_identity():
    box = BoundingBox(3, 4, 10, 12)
    assert iou(box, box) == 1.0


def test_iou_disjoint():
    assert iou(BoundingBox(0, 0, 5, 5), BoundingBox(10, 10, 5, 5)) == 0.0


def test_iou_half_overlap():
    v = iou(BoundingBox(0, 0, 10, 10), BoundingBox(5, 0, 10, 10))
    assert v == pytest.approx(50 / 150)


@given(st.tuples(*[st.integers(0, 40) for _ in range(4)]),
       st.tuples(*[st.integers(0, 40) for _ in range(4)]))
def test_iou_matches_rational_oracle_and_symmetry(p, q):
    a = BoundingBox(p[0], p[1], p[2] + 1, p[3] + 1)
    b = BoundingBox(q[0], q[1], q[2] + 1, q[3] + 1)
    assert iou(a, b) == pytest.approx(float(iou_fraction(a, b)), abs=1e-12)
    assert iou(a, b) == iou(b, a)


# -- levenshtein / lcs ---------------------------------------------------------

def test_levenshtein_examples():
    assert levenshtein("TTG", "TG") == 1
    assert levenshtein("TGT", "TGT") == 0
    assert levenshtein("", "TTL") == 3


@given(st.text(alphabet=KINDS, max_size=12),
       st.text(alphabet=KINDS, max_size=12))
def test_levenshtein_matches_recursion(a, b):
    assert levenshtein(a, b) == levenshtein_recursive(a, b)


@given(st.text(alphabet=KINDS, max_size=8),
       st.text(alphabet=KINDS, max_size=8),
       st.text(alphabet=KINDS, max_size=8))
@settings(max_examples=60)
def test_levenshtein_is_a_metric(a, b, c):
    assert levenshtein(a, b) == levenshtein(b, a)
    assert (levenshtein(a, b) == 0) == (a == b)
    assert levenshtein(a, c) <= levenshtein(a, b) + levenshtein(b, c)


def test_lcs_examples():
    assert lcs("TGT", "TGT") == (3, 1.0)
    assert lcs("TG", "GT") == (1, pytest.approx(0.5))
    assert lcs("", "TG") == (0, 0.0)


@given(st.text(alphabet=KINDS, max_size=10),
       st.text(alphabet=KINDS, max_size=10))
@settings(max_examples=80)
def test_lcs_matches_enumeration(a, b):
    length, fraction = lcs(a, b)
    assert length == lcs_enumerate(a, b)
    assert length <= min(len(a), len(b))
    if b:
        assert fraction == pytest.approx(length / len(b))


@given(st.text(alphabet=KINDS, max_size=10),
       st.text(alphabet=KINDS, max_size=10))
def test_lcs_levenshtein_consistency(a, b):
    length, _ = lcs(a, b)
    assert len(a) + len(b) - 2 * length >= levenshtein(a, b)
    assert levenshtein(a, b) >= abs(len(a) - len(b))


# -- bag precision / recall ----------------------------------------------------

def test_pr_identical_bags():
    rep = sequence_report(["tap", "gesture", "tap"], ["tap", "tap", "gesture"])
    assert rep.precision == {"gesture": 1.0, "tap": 1.0}
    assert rep.recall == {"gesture": 1.0, "tap": 1.0}
    assert rep.overall_precision == 1.0
    assert rep.overall_recall == 1.0


def test_pr_partial_overlap():
    rep = sequence_report(["T", "T", "T"], ["T", "T", "G"])
    assert rep.precision["T"] == pytest.approx(2 / 3)
    assert rep.recall["T"] == 1.0
    assert rep.recall["G"] == 0.0


def test_pr_empty_prediction():
    rep = sequence_report([], ["T", "G"])
    assert rep.overall_recall == 0.0
    assert rep.levenshtein == 2


# -- detection matching ---------------------------------------------------------

def _det(frame, x, y, w=10, h=10, conf=1.0):
    return Detection(frame, BoundingBox(x, y, w, h), conf)


def test_detection_report_perfect():
    truth = [[BoundingBox(5, 5, 10, 10)], [BoundingBox(20, 20, 10, 10)]]
    pred = [[_det(0, 5, 5)], [_det(1, 20, 20)]]
    rep = detection_report(pred, truth, 0.75)
    assert rep.mean_ap == 1.0
    assert rep.average_recall == 1.0
    assert (rep.tp, rep.fp, rep.fn) == (2, 0, 0)


def test_detection_report_counts():
    truth = [[BoundingBox(0, 0, 10, 10), BoundingBox(30, 30, 10, 10),
              BoundingBox(60, 60, 10, 10)]]
    pred = [[_det(0, 0, 0), _det(0, 30, 30), _det(0, 90, 5)]]
    rep = detection_report(pred, truth, 0.5)
    assert rep.mean_ap == pytest.approx(2 / 3)
    assert rep.average_recall == pytest.approx(2 / 3)
    assert rep.tp + rep.fn == 3
    assert rep.tp + rep.fp == 3


def test_detection_report_matches_by_confidence():
    # the confident prediction claims the only truth box
    truth = [[BoundingBox(0, 0, 10, 10)]]
    pred = [[_det(0, 1, 0, conf=0.5), _det(0, 0, 0, conf=0.9)]]
    rep = detection_report(pred, truth, 0.5)
    assert rep.tp == 1 and rep.fp == 1


def test_detection_report_threshold_breakdown():
    truth = [[BoundingBox(0, 0, 10, 10)]]
    pred = [[_det(0, 2, 0)]]  # IoU = 8/12 ≈ 0.667
    rep = detection_report(pred, truth, 0.5)
    assert rep.by_threshold[0.5]["tp"] == 1
    assert rep.by_threshold[0.75]["tp"] == 0
    assert rep.by_threshold[0.75]["fn"] == 1


def test_detection_report_frame_mismatch():
    with pytest.raises(ValueError):
        detection_report([[]], [[], []], 0.5)
