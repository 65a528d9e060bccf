"""Window-level spectral clustering on a refined affinity matrix."""

from dataclasses import dataclass
from typing import Optional

import numpy as np

from .core_math import build_affinity_matrix, gaussian_blur, row_percentile_threshold
from .errors import ConfigError, DomainError


@dataclass
class ClusterConfig:
    p_percentile: float = 90.0
    sigma_blur: float = 0.5
    min_speakers: int = 2
    max_speakers: int = 10
    fixed_k: Optional[int] = None
    kmeans_restarts: int = 10
    kmeans_max_iters: int = 300
    seed: int = 0
    shifted_affinity: bool = True

    def __post_init__(self):
        if not (0.0 <= self.p_percentile < 100.0):
            raise ConfigError(f"p_percentile must lie in [0, 100), got {self.p_percentile}")
        if self.sigma_blur < 0:
            raise ConfigError(f"sigma_blur must be >= 0, got {self.sigma_blur}")
        if not (1 <= self.min_speakers <= self.max_speakers):
            raise ConfigError("need 1 <= min_speakers <= max_speakers")
        if self.fixed_k is not None and self.fixed_k < 1:
            raise ConfigError("fixed_k must be >= 1")
        if self.kmeans_restarts < 1 or self.kmeans_max_iters < 1:
            raise ConfigError("kmeans_restarts and kmeans_max_iters must be >= 1")


@dataclass
class ClusterLabels:
    labels: np.ndarray
    k: int


def refine_affinity(a, cfg: ClusterConfig) -> np.ndarray:
    """De-noise an affinity matrix before the eigendecomposition.

    Steps, in order:

    1. each diagonal entry becomes the maximum off-diagonal entry of its row;
    2. Gaussian blur with ``cfg.sigma_blur``;
    3. row-wise nearest-rank ``cfg.p_percentile`` thresholding;
    4. each row with a positive maximum is divided by that maximum;
    5. symmetrization by the elementwise maximum ``max(A, A.T)``.

    Normalizing before the max-symmetrization is what lets the output be
    symmetric and have unit row maxima at the same time.
    """
    a = np.array(a, dtype=np.float64)
    if a.ndim != 2 or a.shape[0] != a.shape[1]:
        raise DomainError(f"affinity must be square, got shape {a.shape}")
    n = a.shape[0]
    if n > 1:
        off = a.copy()
        np.fill_diagonal(off, -np.inf)
        np.fill_diagonal(a, off.max(axis=1))
    a = gaussian_blur(a, cfg.sigma_blur)
    a = row_percentile_threshold(a, cfg.p_percentile)
    row_max = a.max(axis=1)
    nonzero = row_max > 0
    a[nonzero] /= row_max[nonzero, None]
    return np.maximum(a, a.T)


def sorted_eigenvalues(a) -> np.ndarray:
    return np.linalg.eigvalsh(a)[::-1]


def estimate_num_speakers(a_refined, cfg: ClusterConfig) -> int:
    """Largest gap in the descending spectrum, searched over ``[min_speakers, max_speakers]``.

    Ties go to the smallest count.
    """
    if cfg.fixed_k is not None:
        return cfg.fixed_k
    n = a_refined.shape[0]
    if n <= cfg.min_speakers:
        return n
    lam = sorted_eigenvalues(a_refined)
    upper = min(cfg.max_speakers, n - 1)
    # gap[i] = lam_i - lam_{i+1} for 1-based i
    gaps = lam[cfg.min_speakers - 1:upper] - lam[cfg.min_speakers:upper + 1]
    return cfg.min_speakers + int(np.argmax(gaps))


def _sq_dists(x, centers):
    d = (np.sum(x ** 2, axis=1)[:, None] - 2.0 * x @ centers.T
         + np.sum(centers ** 2, axis=1)[None, :])
    return np.maximum(d, 0.0)


def _kmeans_pp(x, k, rng):
    n = x.shape[0]
    centers = [x[rng.integers(n)]]
    closest = _sq_dists(x, centers[0][None, :])[:, 0]
    for _ in range(1, k):
        total = closest.sum()
        if total > 0:
            idx = rng.choice(n, p=closest / total)
        else:
            idx = rng.integers(n)
        centers.append(x[idx])
        closest = np.minimum(closest, _sq_dists(x, x[idx][None, :])[:, 0])
    return np.array(centers)


def _lloyd(x, centers, max_iters):
    k = centers.shape[0]
    labels = None
    for _ in range(max_iters):
        d = _sq_dists(x, centers)
        new = np.argmin(d, axis=1)
        counts = np.bincount(new, minlength=k)
        for c in np.flatnonzero(counts == 0):
            # repair an empty cluster with the point farthest from its own center
            own = d[np.arange(x.shape[0]), new]
            own[counts[new] <= 1] = -1.0
            far = int(np.argmax(own))
            counts[new[far]] -= 1
            new[far] = c
            counts[c] = 1
        if labels is not None and np.array_equal(new, labels):
            break
        labels = new
        centers = np.array([x[labels == c].mean(axis=0) for c in range(k)])
    inertia = float(np.sum((x - centers[labels]) ** 2))
    return labels, inertia


def kmeans(x, k: int, restarts: int = 10, max_iters: int = 300, seed: int = 0) -> np.ndarray:
    """k-means++ seeded Lloyd iterations; the lowest-inertia restart wins."""
    x = np.asarray(x, dtype=np.float64)
    rng = np.random.default_rng(seed)
    best, best_inertia = None, np.inf
    for _ in range(restarts):
        labels, inertia = _lloyd(x, _kmeans_pp(x, k, rng), max_iters)
        if inertia < best_inertia:
            best, best_inertia = labels, inertia
    return best


def canonical_labels(labels) -> np.ndarray:
    """Renumber labels in order of first appearance."""
    labels = np.asarray(labels)
    mapping = {}
    for lab in labels.tolist():
        mapping.setdefault(lab, len(mapping))
    return np.array([mapping[lab] for lab in labels.tolist()], dtype=np.int64)


def spectral_cluster(embeddings, cfg: ClusterConfig) -> ClusterLabels:
    embeddings = np.asarray(embeddings, dtype=np.float64)
    n = embeddings.shape[0]
    if n == 0:
        raise DomainError("need at least one embedding")
    if n == 1:
        return ClusterLabels(np.zeros(1, dtype=np.int64), 1)
    refined = refine_affinity(build_affinity_matrix(embeddings, shifted=cfg.shifted_affinity), cfg)
    k = estimate_num_speakers(refined, cfg)
    if n < k:
        return ClusterLabels(np.arange(n, dtype=np.int64), n)
    if k == 1:
        return ClusterLabels(np.zeros(n, dtype=np.int64), 1)
    _, vecs = np.linalg.eigh(refined)
    spectral = vecs[:, ::-1][:, :k]
    labels = kmeans(spectral, k, cfg.kmeans_restarts, cfg.kmeans_max_iters, cfg.seed)
    return ClusterLabels(canonical_labels(labels), k)
