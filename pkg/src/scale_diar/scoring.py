"""RTTM I/O, SER/MS/FA/DER scoring with collars, and the meeting-level sign test.

Times are converted to integer milliseconds on entry so that every
duration sum is exact.
"""

import logging
from collections import defaultdict
from dataclasses import dataclass, field
from typing import Dict, List, Optional

import numpy as np
from scipy.optimize import linear_sum_assignment
from scipy.stats import binomtest

from .errors import DomainError, RttmParseError, ShapeError

logger = logging.getLogger(__name__)


@dataclass(frozen=True)
class RttmRecord:
    meeting_id: str
    onset: float
    duration: float
    speaker: str
    channel: int = 1
    type: str = "SPEAKER"

    def __post_init__(self):
        if self.duration <= 0:
            raise DomainError(f"RTTM duration must be positive, got {self.duration}")
        if self.onset < 0:
            raise DomainError(f"RTTM onset must be >= 0, got {self.onset}")

    @property
    def end(self) -> float:
        return self.onset + self.duration


def format_rttm_line(r: RttmRecord) -> str:
    return (f"{r.type} {r.meeting_id} {r.channel} {r.onset:.2f} {r.duration:.2f} "
            f"<NA> <NA> {r.speaker} <NA> <NA>")


def write_rttm(records) -> str:
    return "".join(format_rttm_line(r) + "\n" for r in records)


def parse_rttm(text: str) -> List[RttmRecord]:
    """Parse 10-field ``SPEAKER`` lines; other record types are skipped."""
    records = []
    for lineno, raw in enumerate(text.splitlines(), start=1):
        line = raw.strip()
        if not line or line.startswith(";;"):
            continue
        fields = line.split()
        if fields[0] != "SPEAKER":
            logger.warning("line %d: skipping RTTM record of type %r", lineno, fields[0])
            continue
        if len(fields) != 10:
            raise RttmParseError(f"expected 10 fields, found {len(fields)}", lineno)
        try:
            channel = int(fields[2])
            onset = float(fields[3])
            duration = float(fields[4])
        except ValueError as exc:
            raise RttmParseError(f"non-numeric channel/onset/duration ({exc})", lineno) from exc
        try:
            records.append(RttmRecord(fields[1], onset, duration, fields[7], channel))
        except DomainError as exc:
            raise RttmParseError(str(exc), lineno) from exc
    return records


def read_rttm(path) -> List[RttmRecord]:
    with open(path) as f:
        return parse_rttm(f.read())


def _to_ms(x: float) -> int:
    return int(round(x * 1000.0))


def _merge(intervals):
    out = []
    for s, e in sorted(intervals):
        if out and s <= out[-1][1]:
            out[-1][1] = max(out[-1][1], e)
        else:
            out.append([s, e])
    return [tuple(iv) for iv in out]


def _by_speaker(records):
    spk = defaultdict(list)
    for r in records:
        spk[r.speaker].append((_to_ms(r.onset), _to_ms(r.end)))
    return {name: _merge(ivs) for name, ivs in sorted(spk.items())}


def _activity(segments_by_speaker, starts, ends):
    """Boolean (n_intervals, n_speakers) activity over elementary intervals."""
    names = list(segments_by_speaker)
    act = np.zeros((starts.size, len(names)), dtype=bool)
    for j, name in enumerate(names):
        for s, e in segments_by_speaker[name]:
            act[(starts >= s) & (ends <= e), j] = True
    return names, act


@dataclass
class MeetingScore:
    meeting_id: str
    scored_ms: int
    confusion_ms: int
    miss_ms: int
    fa_ms: int
    excluded_ms: int
    mapping: Dict[str, str] = field(default_factory=dict)

    def _pct(self, x) -> Optional[float]:
        if self.scored_ms == 0:
            return 0.0 if x == 0 else None
        return 100.0 * x / self.scored_ms

    @property
    def ser_pct(self):
        return self._pct(self.confusion_ms)

    @property
    def ms_pct(self):
        return self._pct(self.miss_ms)

    @property
    def fa_pct(self):
        return self._pct(self.fa_ms)

    @property
    def der_pct(self):
        parts = (self.ser_pct, self.ms_pct, self.fa_pct)
        return None if None in parts else sum(parts)

    @property
    def scored_seconds(self) -> float:
        return self.scored_ms / 1000.0

    def as_dict(self) -> dict:
        return {
            "meeting_id": self.meeting_id,
            "ser_pct": self.ser_pct,
            "ms_pct": self.ms_pct,
            "fa_pct": self.fa_pct,
            "der_pct": self.der_pct,
            "scored_seconds": self.scored_seconds,
            "confusion_seconds": self.confusion_ms / 1000.0,
            "miss_seconds": self.miss_ms / 1000.0,
            "fa_seconds": self.fa_ms / 1000.0,
            "excluded_seconds": self.excluded_ms / 1000.0,
            "mapping": dict(self.mapping),
        }


@dataclass
class ScoreReport:
    ser_pct: float
    ms_pct: float
    fa_pct: float
    der_pct: float
    scored_seconds: float
    collar_seconds: float
    per_meeting: Dict[str, MeetingScore]

    def as_dict(self) -> dict:
        return {
            "ser_pct": self.ser_pct,
            "ms_pct": self.ms_pct,
            "fa_pct": self.fa_pct,
            "der_pct": self.der_pct,
            "scored_seconds": self.scored_seconds,
            "collar_seconds": self.collar_seconds,
            "per_meeting": {k: v.as_dict() for k, v in self.per_meeting.items()},
        }

    def table(self) -> str:
        rows = [f"{'meeting':<16}{'SER%':>8}{'MS%':>8}{'FA%':>8}{'DER%':>8}{'scored_s':>11}"]

        def fmt(x):
            return f"{x:8.2f}" if x is not None else f"{'n/a':>8}"

        for mid, m in self.per_meeting.items():
            rows.append(f"{mid:<16}{fmt(m.ser_pct)}{fmt(m.ms_pct)}{fmt(m.fa_pct)}"
                        f"{fmt(m.der_pct)}{m.scored_seconds:11.2f}")
        rows.append(f"{'OVERALL':<16}{fmt(self.ser_pct)}{fmt(self.ms_pct)}{fmt(self.fa_pct)}"
                    f"{fmt(self.der_pct)}{self.scored_seconds:11.2f}")
        return "\n".join(rows)


def score_meeting(meeting_id, reference, hypothesis, collar_ms=250, exclude_overlap=True) -> MeetingScore:
    ref = _by_speaker(reference)
    hyp = _by_speaker(hypothesis)

    excluded = []
    if collar_ms > 0:
        for ivs in ref.values():
            for s, e in ivs:
                excluded.append((max(0, s - collar_ms), s + collar_ms))
                excluded.append((max(0, e - collar_ms), e + collar_ms))

    points = {0}
    for table in (ref, hyp):
        for ivs in table.values():
            for s, e in ivs:
                points.update((s, e))
    for s, e in excluded:
        points.update((s, e))
    grid = np.array(sorted(points), dtype=np.int64)
    starts, ends = grid[:-1], grid[1:]
    dur = ends - starts

    ref_names, r_act = _activity(ref, starts, ends)
    hyp_names, h_act = _activity(hyp, starts, ends)
    n_ref = r_act.sum(axis=1)
    n_hyp = h_act.sum(axis=1)

    skip = np.zeros(starts.size, dtype=bool)
    for s, e in _merge(excluded):
        skip |= (starts >= s) & (ends <= e)
    if exclude_overlap:
        skip |= n_ref >= 2
    keep = ~skip
    excluded_ms = int(np.sum(dur[skip & ((n_ref > 0) | (n_hyp > 0))]))

    d = dur[keep]
    r_k, h_k = r_act[keep], h_act[keep]
    nr, nh = n_ref[keep], n_hyp[keep]
    overlap = (r_k.T.astype(np.int64) * d) @ h_k.astype(np.int64)
    mapping = {}
    correct = 0
    if overlap.size:
        rows, cols = linear_sum_assignment(overlap, maximize=True)
        for r, h in zip(rows, cols):
            if overlap[r, h] > 0:
                mapping[ref_names[r]] = hyp_names[h]
                correct += int(overlap[r, h])

    return MeetingScore(
        meeting_id=meeting_id,
        scored_ms=int(np.sum(d * nr)),
        confusion_ms=int(np.sum(d * np.minimum(nr, nh))) - correct,
        miss_ms=int(np.sum(d * np.maximum(nr - nh, 0))),
        fa_ms=int(np.sum(d * np.maximum(nh - nr, 0))),
        excluded_ms=excluded_ms,
        mapping=mapping,
    )


def score(reference, hypothesis, collar: float = 0.25, exclude_overlap: bool = True) -> ScoreReport:
    """Score hypothesis RTTM records against reference records.

    A ``collar``-second region either side of every reference boundary is
    not scored, nor (with ``exclude_overlap``) is any time where two or more
    reference speakers talk at once. Reference and hypothesis speakers are
    matched one-to-one to maximize correctly attributed time.
    """
    if collar < 0:
        raise DomainError(f"collar must be >= 0, got {collar}")
    ref_by_meeting = defaultdict(list)
    hyp_by_meeting = defaultdict(list)
    for r in reference:
        ref_by_meeting[r.meeting_id].append(r)
    for r in hypothesis:
        hyp_by_meeting[r.meeting_id].append(r)
    unknown = set(hyp_by_meeting) - set(ref_by_meeting)
    if unknown:
        logger.warning("hypothesis meetings without reference scored as false alarm: %s", sorted(unknown))

    collar_ms = _to_ms(collar)
    per = {}
    for mid in sorted(set(ref_by_meeting) | set(hyp_by_meeting)):
        per[mid] = score_meeting(mid, ref_by_meeting[mid], hyp_by_meeting[mid], collar_ms, exclude_overlap)

    scored = sum(m.scored_ms for m in per.values())
    conf = sum(m.confusion_ms for m in per.values())
    miss = sum(m.miss_ms for m in per.values())
    fa = sum(m.fa_ms for m in per.values())

    def pct(x):
        return 100.0 * x / scored if scored else 0.0

    ser, ms, fa_pct = pct(conf), pct(miss), pct(fa)
    return ScoreReport(ser, ms, fa_pct, ser + ms + fa_pct, scored / 1000.0, collar, per)


@dataclass
class SignTestResult:
    n_improved: int
    n_degraded: int
    n_tied: int
    p_value: float


def sign_test(per_meeting_a, per_meeting_b) -> SignTestResult:
    """Two-sided sign test; a meeting counts as improved when ``a < b``."""
    a = np.asarray(per_meeting_a, dtype=np.float64)
    b = np.asarray(per_meeting_b, dtype=np.float64)
    if a.shape != b.shape or a.ndim != 1:
        raise ShapeError(f"per-meeting lists differ in shape: {a.shape} vs {b.shape}")
    if a.size == 0:
        raise ShapeError("sign test needs at least one meeting")
    improved = int(np.sum(a < b))
    degraded = int(np.sum(a > b))
    tied = int(a.size - improved - degraded)
    n = improved + degraded
    p = 1.0 if n == 0 else float(binomtest(improved, n, 0.5).pvalue)
    return SignTestResult(improved, degraded, tied, min(p, 1.0))
