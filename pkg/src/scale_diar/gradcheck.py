"""Central finite-difference verification of :func:`combined_loss` gradients."""

import itertools
import time
from dataclasses import dataclass, field

import numpy as np

from .losses import MASK_MODES, MASK_SCOPES, EmbeddingBatch, LossConfig, combined_loss

# below this norm a gradient block counts as exactly zero and is compared absolutely
ZERO_GRAD_FLOOR = 1e-7


@dataclass
class GradcheckResult:
    n: int
    d: int
    alpha: float
    mask_mode: str
    mask_scope: str
    errors: dict
    mask_entries: int

    @property
    def max_error(self) -> float:
        return max(self.errors.values())


@dataclass
class GradcheckReport:
    tolerance: float
    results: list = field(default_factory=list)
    seconds: float = 0.0

    @property
    def passed(self) -> bool:
        return all(r.max_error <= self.tolerance for r in self.results)

    @property
    def max_error(self) -> float:
        return max((r.max_error for r in self.results), default=0.0)


def relative_error(analytic, numeric) -> float:
    a = np.atleast_1d(np.asarray(analytic, dtype=np.float64))
    n = np.atleast_1d(np.asarray(numeric, dtype=np.float64))
    diff = np.linalg.norm(a - n)
    scale = max(np.linalg.norm(a), np.linalg.norm(n))
    if scale < ZERO_GRAD_FLOOR:
        return float(diff)
    return float(diff / scale)


def random_batch(n, d, rng):
    """Batch with some near-duplicate speakers so that thresholding masks are non-trivial."""
    centers = rng.normal(size=(n, d))
    for i in range(1, n, 2):
        centers[i] = centers[i - 1] + 0.6 * rng.normal(size=d)
    anchors = centers + 0.3 * rng.normal(size=(n, d))
    positives = centers + 0.3 * rng.normal(size=(n, d))
    return EmbeddingBatch(anchors, positives)


def numeric_gradients(batch, w, b, cfg, mask, step=1e-5):
    def f(anchors, positives, w_, b_):
        return combined_loss(EmbeddingBatch(anchors, positives), w_, b_, cfg, mask=mask).loss_value

    out = {}
    for name in ("anchors", "positives"):
        base = getattr(batch, name)
        g = np.zeros_like(base)
        for idx in np.ndindex(base.shape):
            plus, minus = base.copy(), base.copy()
            plus[idx] += step
            minus[idx] -= step
            args_p = (plus, batch.positives) if name == "anchors" else (batch.anchors, plus)
            args_m = (minus, batch.positives) if name == "anchors" else (batch.anchors, minus)
            g[idx] = (f(*args_p, w, b) - f(*args_m, w, b)) / (2 * step)
        out[name] = g
    out["w"] = (f(batch.anchors, batch.positives, w + step, b)
                - f(batch.anchors, batch.positives, w - step, b)) / (2 * step)
    out["b"] = (f(batch.anchors, batch.positives, w, b + step)
                - f(batch.anchors, batch.positives, w, b - step)) / (2 * step)
    return out


def check_one(n, d, alpha, mask_mode, mask_scope, rng, w=10.0, b=-5.0, step=1e-5,
              corrupt=False) -> GradcheckResult:
    cfg = LossConfig(alpha=alpha, mask_mode=mask_mode, mask_scope=mask_scope, sigma_train=1.0)
    batch = random_batch(n, d, rng)
    mask = combined_loss(batch, w, b, cfg).mask_used
    out = combined_loss(batch, w, b, cfg, mask=mask)
    grad_a = out.grad_anchors * (1.01 if corrupt else 1.0)
    num = numeric_gradients(batch, w, b, cfg, mask, step=step)
    errors = {
        "anchors": relative_error(grad_a, num["anchors"]),
        "positives": relative_error(out.grad_positives, num["positives"]),
        "w": relative_error(out.grad_w, num["w"]),
        "b": relative_error(out.grad_b, num["b"]),
    }
    return GradcheckResult(n, d, alpha, mask_mode, mask_scope, errors,
                           0 if mask is None else int(mask.sum()))


def run_gradcheck(ns=(2, 4, 8), ds=(4, 16), alphas=(0.0, 0.5, 1.0), modes=MASK_MODES,
                  scopes=MASK_SCOPES, tolerance=1e-4, step=1e-5, seed=0,
                  corrupt=False) -> GradcheckReport:
    """Run the full configuration matrix; one fresh random batch per configuration."""
    rng = np.random.default_rng(seed)
    report = GradcheckReport(tolerance=tolerance)
    start = time.perf_counter()
    for n, d, alpha, mode, scope in itertools.product(ns, ds, alphas, modes, scopes):
        report.results.append(check_one(n, d, alpha, mode, scope, rng, step=step, corrupt=corrupt))
    report.seconds = time.perf_counter() - start
    return report
