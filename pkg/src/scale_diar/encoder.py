"""Two-layer perceptron speaker encoder trained with the combined AP/AM loss."""

import json
import logging
from dataclasses import asdict, dataclass, field
from typing import Any, List, Optional

import numpy as np

from .errors import ConfigError, DataError, DomainError, SamplingError, ShapeError, TrainingError
from .losses import EmbeddingBatch, LossConfig, combined_loss

logger = logging.getLogger(__name__)

CHECKPOINT_VERSION = 1
MIN_SCALE_W = 1e-6


@dataclass
class EncoderParams:
    """Weights of ``features -> tanh(hidden) -> embedding`` plus the AP scale/bias."""

    w1: np.ndarray  # (H, F)
    b1: np.ndarray  # (H,)
    w2: np.ndarray  # (D, H)
    b2: np.ndarray  # (D,)
    ap_scale_w: float = 10.0
    ap_bias_b: float = -5.0

    def __post_init__(self):
        for name in ("w1", "b1", "w2", "b2"):
            setattr(self, name, np.asarray(getattr(self, name), dtype=np.float64))
        h, f = self.w1.shape
        d, h2 = self.w2.shape
        if self.b1.shape != (h,) or h2 != h or self.b2.shape != (d,):
            raise ShapeError("inconsistent encoder layer shapes")

    @property
    def input_dim(self) -> int:
        return self.w1.shape[1]

    @property
    def embed_dim(self) -> int:
        return self.w2.shape[0]

    def copy(self) -> "EncoderParams":
        return EncoderParams(self.w1.copy(), self.b1.copy(), self.w2.copy(), self.b2.copy(),
                             self.ap_scale_w, self.ap_bias_b)

    def is_finite(self) -> bool:
        arrays = (self.w1, self.b1, self.w2, self.b2)
        return (all(np.all(np.isfinite(a)) for a in arrays)
                and np.isfinite(self.ap_scale_w) and np.isfinite(self.ap_bias_b))


def init_params(input_dim=40, hidden_dim=64, embed_dim=128, rng=None) -> EncoderParams:
    rng = np.random.default_rng(rng)
    w1 = rng.normal(scale=1.0 / np.sqrt(input_dim), size=(hidden_dim, input_dim))
    w2 = rng.normal(scale=1.0 / np.sqrt(hidden_dim), size=(embed_dim, hidden_dim))
    return EncoderParams(w1, np.zeros(hidden_dim), w2, np.zeros(embed_dim))


def _forward(params, x):
    hidden = np.tanh(x @ params.w1.T + params.b1)
    return hidden, hidden @ params.w2.T + params.b2


def encode(params: EncoderParams, features) -> np.ndarray:
    """Embed one feature vector, or each row of a 2-D feature array."""
    x = np.asarray(features, dtype=np.float64)
    if x.shape[-1] != params.input_dim or x.ndim not in (1, 2):
        raise ShapeError(f"expected features of dimension {params.input_dim}, got shape {x.shape}")
    if not np.all(np.isfinite(x)):
        raise DataError("features contain non-finite values")
    return _forward(params, x)[1]


@dataclass
class SpeakerCorpus:
    """Per-speaker utterance features; ``features[i]`` is ``(n_utts_i, F)``."""

    features: List[np.ndarray]
    speaker_ids: List[str]
    model: Any = None  # generative model, when the corpus is synthetic

    def __post_init__(self):
        self.features = [np.asarray(f, dtype=np.float64) for f in self.features]
        if len(self.features) != len(self.speaker_ids):
            raise ShapeError("one feature array per speaker id is required")
        dims = {f.shape[1] for f in self.features if f.ndim == 2}
        if len(dims) > 1 or any(f.ndim != 2 for f in self.features):
            raise ShapeError("all utterance features must share one dimension")

    @property
    def n_speakers(self) -> int:
        return len(self.speaker_ids)

    @property
    def feature_dim(self) -> int:
        return self.features[0].shape[1]


def sample_batch(corpus: SpeakerCorpus, n: int, rng):
    """Draw ``n`` distinct speakers and two distinct utterances of each.

    Returns ``(anchor_features, positive_features, speaker_indices)``.
    """
    if n > corpus.n_speakers:
        raise SamplingError(f"batch of {n} speakers requested from a corpus of {corpus.n_speakers}")
    speakers = rng.choice(corpus.n_speakers, size=n, replace=False)
    anchors, positives = [], []
    for s in speakers:
        utts = corpus.features[s]
        if utts.shape[0] < 2:
            raise SamplingError(f"speaker {corpus.speaker_ids[s]!r} has fewer than 2 utterances")
        i, j = rng.choice(utts.shape[0], size=2, replace=False)
        anchors.append(utts[i])
        positives.append(utts[j])
    return np.stack(anchors), np.stack(positives), speakers


@dataclass
class TrainConfig:
    batch_speakers: int = 32
    steps: int = 5000
    learning_rate: float = 0.5  # peak of the triangular schedule
    warmup_fraction: float = 0.1
    seed: int = 0
    hidden_dim: int = 64
    embed_dim: int = 128
    loss: LossConfig = field(default_factory=LossConfig)

    def __post_init__(self):
        if isinstance(self.loss, dict):
            self.loss = LossConfig(**self.loss)
        if self.batch_speakers < 2:
            raise ConfigError("batch_speakers must be >= 2")
        if self.steps < 0:
            raise ConfigError("steps must be >= 0")
        if not (0.0 <= self.warmup_fraction < 1.0):
            raise ConfigError("warmup_fraction must lie in [0, 1)")
        if self.learning_rate < 0:
            raise ConfigError("learning_rate must be >= 0")


def triangular_lr(position: float, total: float, peak: float, warmup_fraction: float) -> float:
    """Learning rate at ``position`` in ``[0, total]``: linear 0 -> peak -> 0."""
    x = position / total
    if x < warmup_fraction:
        return peak * x / warmup_fraction
    return peak * max(0.0, 1.0 - x) / (1.0 - warmup_fraction)


@dataclass
class TrainHistory:
    loss: List[float] = field(default_factory=list)
    ap: List[float] = field(default_factory=list)
    am: List[float] = field(default_factory=list)
    lr: List[float] = field(default_factory=list)
    scale_w: List[float] = field(default_factory=list)
    am_degenerate: List[bool] = field(default_factory=list)


def loss_and_param_grads(params: EncoderParams, anchor_x, positive_x, cfg: LossConfig):
    """Combined loss of one batch and its gradient for every encoder parameter."""
    n = anchor_x.shape[0]
    x = np.concatenate([anchor_x, positive_x])
    hidden, emb = _forward(params, x)
    out = combined_loss(EmbeddingBatch(emb[:n], emb[n:]), params.ap_scale_w, params.ap_bias_b, cfg)
    d_emb = np.concatenate([out.grad_anchors, out.grad_positives])
    d_hidden = (d_emb @ params.w2) * (1.0 - hidden ** 2)
    grads = {
        "w2": d_emb.T @ hidden,
        "b2": d_emb.sum(axis=0),
        "w1": d_hidden.T @ x,
        "b1": d_hidden.sum(axis=0),
        "ap_scale_w": out.grad_w,
        "ap_bias_b": out.grad_b,
    }
    return out, grads


def train(corpus: SpeakerCorpus, cfg: TrainConfig, params: Optional[EncoderParams] = None):
    """Plain SGD on the combined loss under a triangular learning-rate schedule.

    Returns ``(params, history)``. A run is fully determined by ``cfg`` (and
    the corpus): the seed drives both initialization and batch sampling.
    """
    rng = np.random.default_rng(cfg.seed)
    if params is None:
        params = init_params(corpus.feature_dim, cfg.hidden_dim, cfg.embed_dim, rng)
    else:
        params = params.copy()
    if params.input_dim != corpus.feature_dim:
        raise ShapeError(f"encoder expects {params.input_dim}-dim features, corpus has {corpus.feature_dim}")
    history = TrainHistory()
    for step in range(cfg.steps):
        lr = triangular_lr(step + 0.5, cfg.steps, cfg.learning_rate, cfg.warmup_fraction)
        anchor_x, positive_x, _ = sample_batch(corpus, cfg.batch_speakers, rng)
        try:
            out, grads = loss_and_param_grads(params, anchor_x, positive_x, cfg.loss)
        except DomainError as exc:
            # non-finite or zero embeddings
            raise TrainingError(str(exc), step) from exc
        if not np.isfinite(out.loss_value):
            raise TrainingError("non-finite loss", step)
        if not all(np.all(np.isfinite(g)) for g in grads.values()):
            raise TrainingError("non-finite gradient", step)
        params.w1 -= lr * grads["w1"]
        params.b1 -= lr * grads["b1"]
        params.w2 -= lr * grads["w2"]
        params.b2 -= lr * grads["b2"]
        params.ap_scale_w = max(params.ap_scale_w - lr * grads["ap_scale_w"], MIN_SCALE_W)
        params.ap_bias_b -= lr * grads["ap_bias_b"]
        history.loss.append(out.loss_value)
        history.ap.append(out.ap_value)
        history.am.append(out.am_value)
        history.lr.append(lr)
        history.scale_w.append(params.ap_scale_w)
        history.am_degenerate.append(out.am_degenerate)
    logger.debug("trained %d steps, final loss %s", cfg.steps, history.loss[-1:] or None)
    return params, history


def train_config_to_dict(cfg: TrainConfig) -> dict:
    return asdict(cfg)


def train_config_from_dict(d: dict) -> TrainConfig:
    d = dict(d)
    d["loss"] = LossConfig(**d.get("loss", {}))
    return TrainConfig(**d)


def checkpoint_to_json(params: EncoderParams, cfg: Optional[TrainConfig] = None) -> str:
    doc = {
        "format": "scale_diar.encoder",
        "version": CHECKPOINT_VERSION,
        "params": {
            "w1": params.w1.tolist(),
            "b1": params.b1.tolist(),
            "w2": params.w2.tolist(),
            "b2": params.b2.tolist(),
            "ap_scale_w": float(params.ap_scale_w),
            "ap_bias_b": float(params.ap_bias_b),
        },
        "train_config": None if cfg is None else train_config_to_dict(cfg),
    }
    return json.dumps(doc, sort_keys=True) + "\n"


def checkpoint_from_json(text: str):
    """Parse a checkpoint; returns ``(params, train_config_or_None)``."""
    try:
        doc = json.loads(text)
    except json.JSONDecodeError as exc:
        raise DataError(f"checkpoint is not valid JSON: {exc}") from exc
    if doc.get("format") != "scale_diar.encoder":
        raise DataError("not an encoder checkpoint")
    if doc.get("version") != CHECKPOINT_VERSION:
        raise DataError(f"unsupported checkpoint version {doc.get('version')!r}")
    params = EncoderParams(**doc["params"])
    cfg = doc.get("train_config")
    return params, (None if cfg is None else train_config_from_dict(cfg))


def save_checkpoint(path, params: EncoderParams, cfg: Optional[TrainConfig] = None):
    with open(path, "w") as f:
        f.write(checkpoint_to_json(params, cfg))


def load_checkpoint(path):
    with open(path) as f:
        return checkpoint_from_json(f.read())
