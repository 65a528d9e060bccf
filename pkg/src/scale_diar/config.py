"""Experiment configuration: one JSON document, strictly validated.

Layout (every key optional, defaults shown by ``scale-diar config``)::

    {
      "seed": 0,
      "corpus":   {CorpusSpec fields except seed},
      "meetings": {"n_dev", "n_eval", MeetingSpec fields except n_meetings/prefix/seed},
      "train":    {TrainConfig fields except seed; "loss": {LossConfig fields}},
      "cluster":  {ClusterConfig fields except seed},
      "score":    {"collar", "exclude_overlap"},
      "sweep":    {"p_grid", "sigma_grid"},
      "paths":    {"out_dir"}
    }

Component seeds all derive from the top-level ``seed``; dev and eval
meetings use disjoint offsets.
"""

import json
from dataclasses import asdict, dataclass, field, fields
from typing import List, Optional

from .clustering import ClusterConfig
from .encoder import TrainConfig
from .errors import ConfigError
from .experiment import DEFAULT_P_GRID, DEFAULT_SIGMA_GRID
from .losses import LossConfig
from .synthetic import CorpusSpec, MeetingSpec

DEV_SEED_OFFSET = 100
EVAL_SEED_OFFSET = 200


@dataclass
class MeetingsSection:
    n_dev: int = 20
    n_eval: int = 20
    min_speakers: int = 4
    max_speakers: int = 5
    segments_per_meeting: int = 100
    min_segment_seconds: float = 1.0
    max_segment_seconds: float = 6.0
    boundary_jitter_seconds: float = 0.0


@dataclass
class ScoreSection:
    collar: float = 0.25
    exclude_overlap: bool = True


@dataclass
class SweepSection:
    p_grid: List[float] = field(default_factory=lambda: list(DEFAULT_P_GRID))
    sigma_grid: List[float] = field(default_factory=lambda: list(DEFAULT_SIGMA_GRID))


@dataclass
class PathsSection:
    out_dir: Optional[str] = None


def _no_seed(cls):
    return [f.name for f in fields(cls) if f.name != "seed"]


_SECTION_KEYS = {
    "corpus": _no_seed(CorpusSpec),
    "meetings": [f.name for f in fields(MeetingsSection)],
    "train": _no_seed(TrainConfig),
    "cluster": _no_seed(ClusterConfig),
    "score": [f.name for f in fields(ScoreSection)],
    "sweep": [f.name for f in fields(SweepSection)],
    "paths": [f.name for f in fields(PathsSection)],
}
_LOSS_KEYS = [f.name for f in fields(LossConfig)]


@dataclass
class ExperimentConfig:
    seed: int = 0
    corpus: dict = field(default_factory=dict)
    meetings: dict = field(default_factory=dict)
    train: dict = field(default_factory=dict)
    cluster: dict = field(default_factory=dict)
    score: dict = field(default_factory=dict)
    sweep: dict = field(default_factory=dict)
    paths: dict = field(default_factory=dict)

    def corpus_spec(self) -> CorpusSpec:
        return CorpusSpec(seed=self.seed, **self.corpus)

    def meetings_section(self) -> MeetingsSection:
        return MeetingsSection(**self.meetings)

    def meeting_spec(self, split: str) -> MeetingSpec:
        m = asdict(self.meetings_section())
        n_dev, n_eval = m.pop("n_dev"), m.pop("n_eval")
        if split == "dev":
            return MeetingSpec(n_meetings=n_dev, prefix="dev", seed=self.seed + DEV_SEED_OFFSET, **m)
        if split == "eval":
            return MeetingSpec(n_meetings=n_eval, prefix="eval", seed=self.seed + EVAL_SEED_OFFSET, **m)
        raise ConfigError(f"unknown split {split!r}")

    def train_config(self) -> TrainConfig:
        d = dict(self.train)
        d["loss"] = LossConfig(**d.get("loss", {}))
        return TrainConfig(seed=self.seed, **d)

    def cluster_config(self) -> ClusterConfig:
        return ClusterConfig(seed=self.seed, **self.cluster)

    def score_section(self) -> ScoreSection:
        return ScoreSection(**self.score)

    def sweep_section(self) -> SweepSection:
        return SweepSection(**self.sweep)

    def validate(self) -> "ExperimentConfig":
        """Construct every component once so range errors surface as ConfigError."""
        try:
            self.corpus_spec()
            self.meeting_spec("dev")
            self.meeting_spec("eval")
            self.train_config()
            self.cluster_config()
            s = self.score_section()
            if s.collar < 0:
                raise ConfigError("score.collar must be >= 0")
            sw = self.sweep_section()
            if not sw.p_grid or not sw.sigma_grid:
                raise ConfigError("sweep grids must be non-empty")
        except ConfigError:
            raise
        except (ValueError, TypeError) as exc:
            raise ConfigError(str(exc)) from exc
        return self

    def resolved(self) -> dict:
        """Fully expanded configuration with every default filled in."""
        train = asdict(self.train_config())
        train.pop("seed")
        corpus = asdict(self.corpus_spec())
        corpus.pop("seed")
        cluster = asdict(self.cluster_config())
        cluster.pop("seed")
        return {
            "seed": self.seed,
            "corpus": corpus,
            "meetings": asdict(self.meetings_section()),
            "train": train,
            "cluster": cluster,
            "score": asdict(self.score_section()),
            "sweep": asdict(self.sweep_section()),
            "paths": asdict(PathsSection(**self.paths)),
        }

    def to_json(self) -> str:
        return json.dumps(self.resolved(), indent=2, sort_keys=True) + "\n"


def config_from_dict(doc: dict) -> ExperimentConfig:
    if not isinstance(doc, dict):
        raise ConfigError("configuration must be a JSON object")
    top = {"seed"} | set(_SECTION_KEYS)
    for key in doc:
        if key not in top:
            raise ConfigError(f"unknown configuration key {key!r}")
    for section, allowed in _SECTION_KEYS.items():
        body = doc.get(section, {})
        if not isinstance(body, dict):
            raise ConfigError(f"section {section!r} must be an object")
        for key in body:
            if key not in allowed:
                raise ConfigError(f"unknown configuration key '{section}.{key}'")
    loss = doc.get("train", {}).get("loss", {})
    if not isinstance(loss, dict):
        raise ConfigError("section 'train.loss' must be an object")
    for key in loss:
        if key not in _LOSS_KEYS:
            raise ConfigError(f"unknown configuration key 'train.loss.{key}'")
    seed = doc.get("seed", 0)
    if not isinstance(seed, int) or isinstance(seed, bool):
        raise ConfigError("seed must be an integer")
    cfg = ExperimentConfig(seed=seed, **{k: dict(doc.get(k, {})) for k in _SECTION_KEYS})
    if "loss" in cfg.train:
        cfg.train["loss"] = dict(cfg.train["loss"])
    return cfg.validate()


def load_config(path: Optional[str]) -> ExperimentConfig:
    if path is None:
        return ExperimentConfig().validate()
    try:
        with open(path) as f:
            doc = json.load(f)
    except json.JSONDecodeError as exc:
        raise ConfigError(f"{path}: invalid JSON ({exc})") from exc
    return config_from_dict(doc)
