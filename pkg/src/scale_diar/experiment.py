"""Dev-set grid search over clustering hyperparameters and evaluation helpers."""

import itertools
from dataclasses import dataclass, replace
from typing import List, Optional

from .clustering import ClusterConfig
from .encoder import EncoderParams
from .errors import ConfigError
from .pipeline import FeatureTable, Segment, diarise, results_to_rttm
from .scoring import RttmRecord, ScoreReport, score

DEFAULT_P_GRID = (80.0, 85.0, 88.0, 90.0, 92.0, 95.0)
DEFAULT_SIGMA_GRID = (0.0, 0.5, 1.0)


def evaluate(segments: List[Segment], features: FeatureTable, reference: List[RttmRecord],
             params: Optional[EncoderParams], cfg: ClusterConfig, collar: float = 0.25,
             exclude_overlap: bool = True) -> ScoreReport:
    hyp = results_to_rttm(diarise(segments, features, params, cfg))
    return score(reference, hyp, collar=collar, exclude_overlap=exclude_overlap)


@dataclass
class SweepResult:
    rows: list  # (p, sigma, ScoreReport) in grid order
    best_p: float
    best_sigma: float
    best_ser: float

    def best_config(self, base: ClusterConfig) -> ClusterConfig:
        return replace(base, p_percentile=self.best_p, sigma_blur=self.best_sigma)


def sweep(segments, features, reference, params, p_grid=DEFAULT_P_GRID, sigma_grid=DEFAULT_SIGMA_GRID,
          base: Optional[ClusterConfig] = None, collar: float = 0.25,
          exclude_overlap: bool = True) -> SweepResult:
    """Score every ``(p, sigma)`` pair and keep the lowest SER.

    Grid points are visited in ascending ``p`` then ascending ``sigma`` and a
    later point must be strictly better to win, so ties go to the smaller
    ``p`` and then the smaller ``sigma``.
    """
    if not p_grid or not sigma_grid:
        raise ConfigError("sweep grid is empty")
    base = base or ClusterConfig()
    rows = []
    best = None
    for p, sigma in itertools.product(sorted(set(p_grid)), sorted(set(sigma_grid))):
        cfg = replace(base, p_percentile=float(p), sigma_blur=float(sigma))
        report = evaluate(segments, features, reference, params, cfg, collar, exclude_overlap)
        rows.append((float(p), float(sigma), report))
        if best is None or report.ser_pct < best[2]:
            best = (float(p), float(sigma), report.ser_pct)
    return SweepResult(rows, *best)


@dataclass
class SystemResult:
    name: str
    sweep: SweepResult
    eval_report: ScoreReport

    @property
    def per_meeting_ser(self) -> List[float]:
        return [m.ser_pct if m.ser_pct is not None else 0.0 for m in self.eval_report.per_meeting.values()]


def tune_and_evaluate(name, params, dev, evl, base: ClusterConfig, p_grid=DEFAULT_P_GRID,
                      sigma_grid=DEFAULT_SIGMA_GRID, collar=0.25, exclude_overlap=True) -> SystemResult:
    """Pick ``(p, sigma)`` on the dev set, then apply it unchanged to the eval set."""
    sw = sweep(dev.segments, dev.features, dev.reference, params, p_grid, sigma_grid, base,
               collar, exclude_overlap)
    rep = evaluate(evl.segments, evl.features, evl.reference, params, sw.best_config(base),
                   collar, exclude_overlap)
    return SystemResult(name, sw, rep)
