"""Segments -> sliding windows -> embeddings -> spectral clustering -> RTTM."""

import json
import math
from collections import OrderedDict
from dataclasses import dataclass, field
from typing import Dict, List, Optional, Tuple

import numpy as np

from .clustering import ClusterConfig, spectral_cluster
from .encoder import EncoderParams, encode
from .errors import ConfigError, DataError, DomainError
from .scoring import RttmRecord

WINDOW_SECONDS = 2.0
HOP_SECONDS = 1.0


def to_ms(x: float) -> int:
    return int(round(x * 1000.0))


@dataclass
class Segment:
    meeting_id: str
    start: float
    end: float
    speaker: Optional[str] = None

    def __post_init__(self):
        if not (0 <= self.start < self.end):
            raise DomainError(f"segment needs 0 <= start < end, got [{self.start}, {self.end}]")


@dataclass
class Window:
    segment_index: int
    start: float
    end: float
    features: Optional[np.ndarray] = None

    @property
    def key(self) -> Tuple[int, int]:
        return to_ms(self.start), to_ms(self.end)


def make_windows(segment: Segment, win: float = WINDOW_SECONDS, hop: float = HOP_SECONDS,
                 segment_index: int = 0, min_tail: Optional[float] = None) -> List[Window]:
    """Cut a segment into ``win``-second windows every ``hop`` seconds.

    A segment shorter than ``win`` yields one window covering all of it. A
    tail window ending at the segment end is added only if more than
    ``min_tail`` seconds (default ``hop``) would otherwise be uncovered.
    Boundaries are computed on a millisecond grid.
    """
    if not (win > 0 and 0 < hop <= win):
        raise ConfigError(f"need win > 0 and 0 < hop <= win, got win={win}, hop={hop}")
    s, e = to_ms(segment.start), to_ms(segment.end)
    w, h = to_ms(win), to_ms(hop)
    tail = h if min_tail is None else to_ms(min_tail)
    if e - s <= w:
        return [Window(segment_index, s / 1000.0, e / 1000.0)]
    count = (e - s - w) // h + 1
    out = [Window(segment_index, (s + i * h) / 1000.0, (s + i * h + w) / 1000.0) for i in range(count)]
    last_end = s + (count - 1) * h + w
    if e - last_end > tail:
        out.append(Window(segment_index, (e - w) / 1000.0, e / 1000.0))
    return out


class FeatureTable:
    """Window features keyed by ``(meeting_id, start_ms, end_ms)``."""

    def __init__(self):
        self._rows: Dict[Tuple[str, int, int], np.ndarray] = {}

    def add(self, meeting_id, start, end, features):
        self._rows[(meeting_id, to_ms(start), to_ms(end))] = np.asarray(features, dtype=np.float64)

    def get(self, meeting_id, window: Window) -> np.ndarray:
        key = (meeting_id, *window.key)
        try:
            return self._rows[key]
        except KeyError:
            raise DataError(
                f"missing features for meeting {meeting_id!r} window [{window.start:.3f}, {window.end:.3f}]"
            ) from None

    def __len__(self):
        return len(self._rows)

    @classmethod
    def from_jsonl(cls, text: str) -> "FeatureTable":
        table = cls()
        for lineno, line in enumerate(text.splitlines(), start=1):
            if not line.strip():
                continue
            try:
                row = json.loads(line)
                table.add(row["meeting_id"], row["window_start"], row["window_end"], row["features"])
            except (json.JSONDecodeError, KeyError, TypeError) as exc:
                raise DataError(f"feature file line {lineno}: {exc}") from exc
        return table


def parse_segments_jsonl(text: str) -> List[Segment]:
    segments = []
    for lineno, line in enumerate(text.splitlines(), start=1):
        if not line.strip():
            continue
        try:
            row = json.loads(line)
            segments.append(Segment(row["meeting_id"], float(row["start"]), float(row["end"]),
                                    row.get("speaker")))
        except (json.JSONDecodeError, KeyError, TypeError, ValueError) as exc:
            raise DataError(f"meeting file line {lineno}: {exc}") from exc
    return segments


def segments_to_jsonl(segments) -> str:
    lines = []
    for s in segments:
        row = {"meeting_id": s.meeting_id, "start": s.start, "end": s.end}
        if s.speaker is not None:
            row["speaker"] = s.speaker
        lines.append(json.dumps(row))
    return "".join(line + "\n" for line in lines)


def group_by_meeting(segments) -> "OrderedDict[str, List[Segment]]":
    out = OrderedDict()
    for s in segments:
        out.setdefault(s.meeting_id, []).append(s)
    return out


@dataclass
class DiarisationResult:
    meeting_id: str
    segments: List[Segment]
    segment_labels: List[int]
    windows: List[Window]
    window_labels: List[int]
    k: int
    timeline: List[Tuple[float, float, int]] = field(default_factory=list)

    def rttm_records(self, prefix="spk") -> List[RttmRecord]:
        return [RttmRecord(self.meeting_id, s, round(e - s, 3), f"{prefix}{lab}")
                for s, e, lab in self.timeline]


def majority_label(votes) -> int:
    return int(np.argmax(np.bincount(np.asarray(votes, dtype=np.int64))))


def merge_timeline(segments, labels) -> List[Tuple[float, float, int]]:
    """Labelled intervals with touching same-label neighbours joined."""
    order = sorted(range(len(segments)), key=lambda i: (segments[i].start, segments[i].end))
    out = []
    for i in order:
        s, e, lab = to_ms(segments[i].start), to_ms(segments[i].end), labels[i]
        if out and out[-1][2] == lab and s <= out[-1][1]:
            out[-1][1] = max(out[-1][1], e)
        else:
            out.append([s, e, lab])
    return [(s / 1000.0, e / 1000.0, lab) for s, e, lab in out]


def diarise_meeting(segments: List[Segment], features: FeatureTable, encoder: Optional[EncoderParams],
                    cfg: ClusterConfig, win: float = WINDOW_SECONDS,
                    hop: float = HOP_SECONDS) -> DiarisationResult:
    """Cluster every window of one meeting and give each segment its majority label.

    With ``encoder=None`` the stored window features are used as embeddings
    directly.
    """
    if not segments:
        return DiarisationResult("", [], [], [], [], 0)
    meeting_id = segments[0].meeting_id
    windows = []
    for idx, seg in enumerate(segments):
        if seg.meeting_id != meeting_id:
            raise DataError("diarise_meeting got segments from more than one meeting")
        windows.extend(make_windows(seg, win, hop, segment_index=idx))
    x = np.stack([features.get(meeting_id, w) for w in windows])
    emb = x if encoder is None else encode(encoder, x)
    clusters = spectral_cluster(emb, cfg)
    window_labels = clusters.labels.tolist()

    seg_votes = [[] for _ in segments]
    for w, lab in zip(windows, window_labels):
        seg_votes[w.segment_index].append(lab)
    seg_labels = [majority_label(v) for v in seg_votes]
    return DiarisationResult(meeting_id, list(segments), seg_labels, windows, window_labels,
                             clusters.k, merge_timeline(segments, seg_labels))


def diarise(segments: List[Segment], features: FeatureTable, encoder: Optional[EncoderParams],
            cfg: ClusterConfig, win: float = WINDOW_SECONDS,
            hop: float = HOP_SECONDS) -> "OrderedDict[str, DiarisationResult]":
    """Diarise each meeting independently, in meeting-id order."""
    grouped = group_by_meeting(segments)
    return OrderedDict(
        (mid, diarise_meeting(grouped[mid], features, encoder, cfg, win, hop)) for mid in sorted(grouped)
    )


def results_to_rttm(results) -> List[RttmRecord]:
    records = []
    for res in results.values():
        records.extend(res.rttm_records())
    return records


def window_count(length: float, win: float = WINDOW_SECONDS, hop: float = HOP_SECONDS) -> int:
    """Closed-form count of full windows for a segment of ``length >= win`` seconds."""
    return math.floor((to_ms(length) - to_ms(win)) / to_ms(hop)) + 1
