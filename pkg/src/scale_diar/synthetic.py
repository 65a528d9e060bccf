"""Seeded synthetic speaker corpora and meetings.

Each speaker is a unit direction in feature space. An utterance is that
direction plus isotropic tangent-plane noise of scale ``1/sqrt(kappa)``,
projected back to the sphere and pushed through a fixed random invertible
mixing matrix, so raw feature cosines are distorted and an encoder has
something to learn.
"""

import json
from dataclasses import asdict, dataclass
from typing import List, Optional, Tuple

import numpy as np

from .encoder import SpeakerCorpus
from .errors import ConfigError, GenerationError
from .pipeline import HOP_SECONDS, WINDOW_SECONDS, FeatureTable, Segment, make_windows
from .scoring import RttmRecord


@dataclass
class CorpusSpec:
    n_speakers: int = 64
    utterances_per_speaker: int = 20
    feature_dim: int = 40
    concentration: float = 10.0
    min_angle_deg: float = 60.0
    mixing_condition: float = 10.0
    seed: int = 0

    def __post_init__(self):
        if self.n_speakers < 2:
            raise ConfigError("n_speakers must be >= 2")
        if self.utterances_per_speaker < 2:
            raise ConfigError("utterances_per_speaker must be >= 2")
        if self.concentration <= 0:
            raise ConfigError("concentration must be > 0")
        if not (0 <= self.min_angle_deg <= 180):
            raise ConfigError("min_angle_deg must lie in [0, 180]")
        if self.feature_dim < 2:
            raise ConfigError("feature_dim must be >= 2")
        if self.mixing_condition < 1:
            raise ConfigError("mixing_condition must be >= 1")


@dataclass
class MeetingSpec:
    n_meetings: int = 20
    min_speakers: int = 4
    max_speakers: int = 5
    segments_per_meeting: int = 100
    min_segment_seconds: float = 1.0
    max_segment_seconds: float = 6.0
    boundary_jitter_seconds: float = 0.0
    prefix: str = "meeting"
    seed: int = 1

    def __post_init__(self):
        if not (2 <= self.min_speakers <= self.max_speakers):
            raise ConfigError("need 2 <= min_speakers <= max_speakers")
        if self.n_meetings < 0 or self.segments_per_meeting < 1:
            raise ConfigError("n_meetings must be >= 0 and segments_per_meeting >= 1")
        if not (0 < self.min_segment_seconds <= self.max_segment_seconds):
            raise ConfigError("need 0 < min_segment_seconds <= max_segment_seconds")
        if self.boundary_jitter_seconds < 0:
            raise ConfigError("boundary_jitter_seconds must be >= 0")


@dataclass
class SpeakerModel:
    means: np.ndarray       # (n_speakers, F) unit rows
    mixing: np.ndarray      # (F, F)
    concentration: float

    def draw(self, speaker: int, count: int, rng) -> np.ndarray:
        mu = self.means[speaker]
        z = rng.normal(size=(count, mu.size)) / np.sqrt(self.concentration)
        z -= np.outer(z @ mu, mu)
        x = mu + z
        x /= np.linalg.norm(x, axis=1, keepdims=True)
        return x @ self.mixing.T


def sample_directions(n: int, dim: int, min_angle_deg: float, rng, max_tries: int = 10000) -> np.ndarray:
    """Rejection-sample ``n`` unit vectors with pairwise angles >= ``min_angle_deg``."""
    max_cos = np.cos(np.deg2rad(min_angle_deg))
    out = []
    tries = 0
    while len(out) < n:
        tries += 1
        if tries > max_tries:
            raise GenerationError(
                f"could not place {n} directions {min_angle_deg} degrees apart in {dim} dimensions; "
                "use fewer speakers or a smaller minimum angle"
            )
        v = rng.normal(size=dim)
        v /= np.linalg.norm(v)
        if all(float(v @ u) <= max_cos + 1e-12 for u in out):
            out.append(v)
    return np.array(out)


def random_mixing(dim: int, condition: float, rng) -> np.ndarray:
    """Random matrix with singular values log-spaced over ``[1/condition, 1]``."""
    q1, _ = np.linalg.qr(rng.normal(size=(dim, dim)))
    q2, _ = np.linalg.qr(rng.normal(size=(dim, dim)))
    sv = np.logspace(0.0, -np.log10(condition), dim)
    return q1 @ np.diag(sv) @ q2


def generate_corpus(spec: CorpusSpec, means: Optional[np.ndarray] = None) -> SpeakerCorpus:
    """Build a corpus; ``means`` overrides the sampled speaker directions."""
    rng = np.random.default_rng(spec.seed)
    if means is None:
        means = sample_directions(spec.n_speakers, spec.feature_dim, spec.min_angle_deg, rng)
    else:
        means = np.asarray(means, dtype=np.float64)
        means = means / np.linalg.norm(means, axis=1, keepdims=True)
        if means.shape != (spec.n_speakers, spec.feature_dim):
            raise ConfigError(f"means must have shape ({spec.n_speakers}, {spec.feature_dim})")
    mixing = random_mixing(spec.feature_dim, spec.mixing_condition, rng)
    model = SpeakerModel(means, mixing, spec.concentration)
    feats = [model.draw(i, spec.utterances_per_speaker, rng) for i in range(spec.n_speakers)]
    ids = [f"S{i:03d}" for i in range(spec.n_speakers)]
    return SpeakerCorpus(feats, ids, model)


@dataclass
class MeetingSet:
    segments: List[Segment]
    features: FeatureTable
    feature_rows: List[dict]
    reference: List[RttmRecord]


def _round_grid(x: float) -> float:
    # 0.1 s grid keeps every boundary exact in the 2-decimal RTTM rendering
    return round(x * 10.0) / 10.0


def generate_meetings(spec: MeetingSpec, corpus: SpeakerCorpus, win: float = WINDOW_SECONDS,
                      hop: float = HOP_SECONDS) -> MeetingSet:
    """Back-to-back speaker-homogeneous segments with one fresh feature draw per window."""
    if corpus.model is None:
        raise ConfigError("meeting generation needs a synthetic corpus with a speaker model")
    if corpus.n_speakers < spec.max_speakers:
        raise ConfigError(f"corpus has {corpus.n_speakers} speakers, meetings need up to {spec.max_speakers}")
    rng = np.random.default_rng(spec.seed)
    segments, rows, reference = [], [], []
    table = FeatureTable()
    for m in range(spec.n_meetings):
        mid = f"{spec.prefix}{m:03d}"
        n_spk = int(rng.integers(spec.min_speakers, spec.max_speakers + 1))
        speakers = rng.choice(corpus.n_speakers, size=n_spk, replace=False)
        t = 0.0
        prev = -1
        for _ in range(spec.segments_per_meeting):
            choices = [s for s in speakers if s != prev]
            spk = int(choices[int(rng.integers(len(choices)))])
            dur = _round_grid(rng.uniform(spec.min_segment_seconds, spec.max_segment_seconds))
            dur = max(dur, 0.1)
            if spec.boundary_jitter_seconds > 0:
                dur = max(0.1, _round_grid(dur + rng.uniform(-1, 1) * spec.boundary_jitter_seconds))
            start, end = round(t, 1), round(t + dur, 1)
            seg = Segment(mid, start, end, corpus.speaker_ids[spk])
            segments.append(seg)
            reference.append(RttmRecord(mid, start, round(end - start, 1), seg.speaker))
            for w in make_windows(seg, win, hop):
                f = corpus.model.draw(spk, 1, rng)[0]
                table.add(mid, w.start, w.end, f)
                rows.append({"meeting_id": mid, "window_start": w.start, "window_end": w.end,
                             "features": f.tolist()})
            t = end
            prev = spk
    return MeetingSet(segments, table, rows, reference)


def features_to_jsonl(rows) -> str:
    return "".join(json.dumps(r) + "\n" for r in rows)


def corpus_to_json(corpus: SpeakerCorpus, spec: Optional[CorpusSpec] = None) -> str:
    doc = {
        "format": "scale_diar.corpus",
        "version": 1,
        "spec": None if spec is None else asdict(spec),
        "speaker_ids": list(corpus.speaker_ids),
        "features": [f.tolist() for f in corpus.features],
        "model": None if corpus.model is None else {
            "means": corpus.model.means.tolist(),
            "mixing": corpus.model.mixing.tolist(),
            "concentration": corpus.model.concentration,
        },
    }
    return json.dumps(doc, sort_keys=True) + "\n"


def corpus_from_json(text: str) -> Tuple[SpeakerCorpus, Optional[CorpusSpec]]:
    doc = json.loads(text)
    if doc.get("format") != "scale_diar.corpus":
        raise ConfigError("not a corpus file")
    model = None
    if doc.get("model") is not None:
        m = doc["model"]
        model = SpeakerModel(np.array(m["means"]), np.array(m["mixing"]), float(m["concentration"]))
    corpus = SpeakerCorpus([np.array(f) for f in doc["features"]], doc["speaker_ids"], model)
    spec = None if doc.get("spec") is None else CorpusSpec(**doc["spec"])
    return corpus, spec
