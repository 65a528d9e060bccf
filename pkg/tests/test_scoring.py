import math

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from oracles import frame_score
from scale_diar.errors import DomainError, RttmParseError, ShapeError
from scale_diar.scoring import (
    RttmRecord,
    format_rttm_line,
    parse_rttm,
    score,
    sign_test,
    write_rttm,
)


def recs(meeting, items):
    return [RttmRecord(meeting, s, round(e - s, 2), spk) for spk, s, e in items]


def test_identity_scores_zero():
    ref = recs("m", [("a", 0, 4), ("b", 4, 7.5), ("a", 7.5, 12)])
    rep = score(ref, ref)
    assert rep.der_pct == 0.0 and rep.ser_pct == 0.0
    assert rep.ms_pct == 0.0 and rep.fa_pct == 0.0


def test_split_speaker_is_half_confusion():
    rep = score(recs("m", [("A", 0, 10)]), recs("m", [("A", 0, 5), ("B", 5, 10)]), collar=0.0)
    assert abs(rep.ser_pct - 50.0) <= 1e-9
    assert rep.ms_pct == 0.0 and rep.fa_pct == 0.0
    assert abs(rep.der_pct - 50.0) <= 1e-9


def test_truncated_hypothesis_is_missed_speech():
    rep = score(recs("m", [("A", 0, 10)]), recs("m", [("A", 0, 8)]), collar=0.0)
    assert abs(rep.ms_pct - 20.0) <= 1e-9
    assert rep.ser_pct == 0.0 and rep.fa_pct == 0.0


def test_collar_removes_boundary_regions():
    ref = recs("m", [("A", 0, 10), ("B", 10, 20)])
    hyp = recs("m", [("x", 0, 10.2), ("y", 10.2, 20)])
    assert score(ref, hyp, collar=0.0).ser_pct > 0
    rep = score(ref, hyp, collar=0.25)
    assert rep.der_pct == 0.0
    # A: [0.25, 9.75], B: [10.25, 19.75]
    assert rep.scored_seconds == pytest.approx(19.0)


def test_overlap_exclusion():
    ref = recs("m", [("A", 0, 6), ("B", 4, 10)])
    hyp = recs("m", [("x", 0, 5), ("y", 5, 10)])
    excl = score(ref, hyp, collar=0.0, exclude_overlap=True)
    assert excl.scored_seconds == pytest.approx(8.0)
    assert excl.der_pct == 0.0
    incl = score(ref, hyp, collar=0.0, exclude_overlap=False)
    assert incl.scored_seconds == pytest.approx(12.0)
    assert incl.ms_pct == pytest.approx(100 * 2 / 12)


def test_unknown_meeting_counts_as_false_alarm():
    ref = recs("m1", [("A", 0, 10)])
    hyp = ref + recs("ghost", [("x", 0, 5)])
    rep = score(ref, hyp, collar=0.0)
    assert rep.fa_pct == pytest.approx(50.0)
    assert rep.der_pct == pytest.approx(rep.ser_pct + rep.ms_pct + rep.fa_pct, abs=1e-9)


def test_negative_collar_rejected():
    with pytest.raises(DomainError):
        score([], [], collar=-0.1)


speakers = st.sampled_from(list("abcde"))


@st.composite
def timelines(draw, max_segments=8):
    items = []
    for _ in range(draw(st.integers(1, max_segments))):
        start = draw(st.integers(0, 150)) / 10
        length = draw(st.integers(1, 40)) / 10
        items.append((draw(speakers), start, round(start + length, 1)))
    return items


@settings(max_examples=150, deadline=None)
@given(timelines(), timelines(), st.sampled_from([0.0, 0.25, 0.5]), st.booleans())
def test_matches_frame_oracle_with_brute_force_mapping(ref, hyp, collar, excl):
    rep = score(recs("m", ref), recs("m", hyp), collar=collar, exclude_overlap=excl)
    m = rep.per_meeting["m"]
    scored, conf, miss, fa = frame_score(ref, hyp, collar, excl)
    assert (m.scored_ms, m.confusion_ms, m.miss_ms, m.fa_ms) == (10 * scored, 10 * conf, 10 * miss, 10 * fa)
    assert abs(rep.der_pct - (rep.ser_pct + rep.ms_pct + rep.fa_pct)) <= 1e-9
    assert min(rep.ser_pct, rep.ms_pct, rep.fa_pct) >= 0


@settings(max_examples=60, deadline=None)
@given(timelines(), timelines())
def test_collar_never_increases_scored_time(ref, hyp):
    prev = math.inf
    for c in (0.0, 0.1, 0.25, 0.5, 1.0):
        s = score(recs("m", ref), recs("m", hyp), collar=c).scored_seconds
        assert s <= prev + 1e-12
        prev = s


@settings(max_examples=60, deadline=None)
@given(timelines(), timelines(), st.permutations(list("abcde")))
def test_relabelling_hypothesis_changes_nothing(ref, hyp, perm):
    rename = dict(zip("abcde", perm))
    hyp2 = [(rename[s] + "_h", a, b) for s, a, b in hyp]
    one = score(recs("m", ref), recs("m", hyp))
    two = score(recs("m", ref), recs("m", hyp2))
    for key in ("ser_pct", "ms_pct", "fa_pct", "der_pct", "scored_seconds"):
        assert getattr(one, key) == getattr(two, key)


def test_report_table_and_dict():
    ref = recs("m", [("A", 0, 10)])
    rep = score(ref, recs("m", [("A", 0, 8)]), collar=0.0)
    d = rep.as_dict()
    assert set(d) >= {"ser_pct", "ms_pct", "fa_pct", "der_pct", "scored_seconds", "per_meeting"}
    assert "OVERALL" in rep.table()


# RTTM

def test_parse_grammar_instance():
    (r,) = parse_rttm("SPEAKER m1 1 0.00 2.50 <NA> <NA> spkA <NA> <NA>\n")
    assert (r.meeting_id, r.onset, r.duration, r.speaker, r.channel) == ("m1", 0.0, 2.5, "spkA", 1)


def test_format_line():
    assert format_rttm_line(RttmRecord("m1", 1.0, 2.345, "s")) == \
        "SPEAKER m1 1 1.00 2.35 <NA> <NA> s <NA> <NA>"


def test_round_trip():
    rng = np.random.default_rng(0)
    records = [RttmRecord(f"m{rng.integers(3)}", rng.integers(0, 10000) / 100, rng.integers(1, 500) / 100,
                          f"spk{rng.integers(5)}") for _ in range(200)]
    text = write_rttm(records)
    assert parse_rttm(text) == records
    assert write_rttm(parse_rttm(text)) == text


def test_wrong_field_count_names_line():
    text = "SPEAKER m1 1 0.00 2.50 <NA> <NA> a <NA> <NA>\nSPEAKER m1 1 0.00 2.50 <NA> <NA>\n"
    with pytest.raises(RttmParseError) as info:
        parse_rttm(text)
    assert info.value.line_number == 2
    assert "line 2" in str(info.value)


def test_non_numeric_onset():
    with pytest.raises(RttmParseError):
        parse_rttm("SPEAKER m1 1 zero 2.50 <NA> <NA> a <NA> <NA>")


def test_other_record_types_skipped(caplog):
    text = ";; comment\nSPKR-INFO m1 1 <NA> <NA> <NA> unknown a <NA> <NA>\nSPEAKER m1 1 0.00 1.00 <NA> <NA> a <NA> <NA>\n"
    with caplog.at_level("WARNING"):
        out = parse_rttm(text)
    assert len(out) == 1
    assert "SPKR-INFO" in caplog.text


def test_record_invariants():
    with pytest.raises(DomainError):
        RttmRecord("m", 0.0, 0.0, "a")
    with pytest.raises(DomainError):
        RttmRecord("m", -1.0, 1.0, "a")


# sign test

def test_sign_test_identical():
    r = sign_test([1, 2, 3], [1, 2, 3])
    assert (r.n_improved, r.n_degraded, r.n_tied, r.p_value) == (0, 0, 3, 1.0)


def test_sign_test_all_improved():
    r = sign_test(list(range(10)), [x + 1 for x in range(10)])
    assert r.n_improved == 10
    assert r.p_value == pytest.approx(2 * 0.5 ** 10, abs=1e-15)
    assert r.p_value == pytest.approx(0.001953125, abs=1e-15)


def test_sign_test_single_meeting():
    assert sign_test([1.0], [2.0]).p_value == 1.0


@pytest.mark.parametrize("n, k", [(20, 15), (20, 14), (13, 2), (7, 7), (9, 4)])
def test_sign_test_matches_binomial_formula(n, k):
    a = [0.0] * k + [2.0] * (n - k) + [1.0, 1.0]
    b = [1.0] * (n + 2)
    r = sign_test(a, b)
    assert (r.n_improved, r.n_degraded, r.n_tied) == (k, n - k, 2)
    tail = min(k, n - k)
    want = min(1.0, 2 * sum(math.comb(n, i) for i in range(tail + 1)) / 2 ** n)
    if k * 2 == n:
        want = 1.0
    assert r.p_value == pytest.approx(want, rel=1e-12)


def test_sign_test_length_mismatch():
    with pytest.raises(ShapeError):
        sign_test([1, 2], [1])
