"""Similarity/affinity construction and the two affinity refinement operators.

Matrices are plain ``float64`` numpy arrays. Embeddings are 1-D vectors, or
stacked row-wise into an ``(N, D)`` array.
"""

import math

import numpy as np

from .errors import DomainError, ShapeError


def _as_vector(x, name="embedding"):
    v = np.asarray(x, dtype=np.float64)
    if v.ndim != 1:
        raise ShapeError(f"{name} must be 1-D, got shape {v.shape}")
    if not np.all(np.isfinite(v)):
        raise DomainError(f"{name} has non-finite entries")
    return v


def as_embedding_matrix(embeddings, name="embeddings"):
    """Stack embeddings into an ``(N, D)`` array, checking finiteness and norms."""
    m = np.asarray(embeddings, dtype=np.float64)
    if m.ndim != 2:
        raise ShapeError(f"{name} must be a list of vectors / 2-D array, got shape {m.shape}")
    if not np.all(np.isfinite(m)):
        raise DomainError(f"{name} has non-finite entries")
    if m.shape[0] and np.any(np.linalg.norm(m, axis=1) == 0.0):
        raise DomainError(f"{name} contains a zero-norm vector")
    return m


def normalize_rows(m):
    return m / np.linalg.norm(m, axis=1, keepdims=True)


def cosine_similarity(x, y) -> float:
    """Cosine of the angle between two non-zero vectors of equal dimension."""
    x = _as_vector(x, "x")
    y = _as_vector(y, "y")
    if x.shape != y.shape:
        raise ShapeError(f"dimension mismatch: {x.shape[0]} vs {y.shape[0]}")
    nx, ny = np.linalg.norm(x), np.linalg.norm(y)
    if nx == 0.0 or ny == 0.0:
        raise DomainError("cosine similarity is undefined for a zero-norm vector")
    return float(np.clip(np.dot(x, y) / (nx * ny), -1.0, 1.0))


def shifted_similarity(x, y) -> float:
    """Cosine similarity mapped to ``[0, 1]``: ``(cos + 1) / 2``."""
    return (cosine_similarity(x, y) + 1.0) / 2.0


def _cosine_matrix(a, b):
    return np.clip(normalize_rows(a) @ normalize_rows(b).T, -1.0, 1.0)


def build_similarity_matrix(anchors, positives, w: float = 1.0, b: float = 0.0) -> np.ndarray:
    """Scaled similarity matrix of a metric-learning batch.

    The diagonal compares each anchor with its own positive; off-diagonal
    cells compare anchors with each other. Every cell is ``w * sim + b``
    where ``sim`` is :func:`shifted_similarity`.
    """
    a = as_embedding_matrix(anchors, "anchors")
    p = as_embedding_matrix(positives, "positives")
    if a.shape != p.shape:
        raise ShapeError(f"anchors {a.shape} and positives {p.shape} differ in shape")
    if a.shape[0] < 1:
        raise ShapeError("a batch needs at least one speaker")
    sim = (_cosine_matrix(a, a) + 1.0) / 2.0
    an, pn = normalize_rows(a), normalize_rows(p)
    diag = (np.clip(np.einsum("ij,ij->i", an, pn), -1.0, 1.0) + 1.0) / 2.0
    np.fill_diagonal(sim, diag)
    return w * sim + b


def build_affinity_matrix(embeddings, shifted: bool = True) -> np.ndarray:
    """Pairwise affinity between embeddings.

    With ``shifted=True`` (default) entries are ``(cos + 1) / 2`` in
    ``[0, 1]`` and the diagonal is exactly 1. ``shifted=False`` returns the
    raw cosine instead.
    """
    e = as_embedding_matrix(embeddings)
    if e.shape[0] < 1:
        raise ShapeError("need at least one embedding")
    cos = _cosine_matrix(e, e)
    out = (cos + 1.0) / 2.0 if shifted else cos
    np.fill_diagonal(out, 1.0)
    return out


def gaussian_kernel_1d(sigma: float) -> np.ndarray:
    """Normalized Gaussian taps truncated at radius ``ceil(3 * sigma)``."""
    radius = int(math.ceil(3.0 * sigma))
    x = np.arange(-radius, radius + 1, dtype=np.float64)
    k = np.exp(-0.5 * (x / sigma) ** 2)
    return k / k.sum()


def gaussian_blur(m, sigma: float) -> np.ndarray:
    """Blur a matrix treated as an image.

    The 2-D Gaussian is separable, so the matrix is convolved along rows and
    then columns with :func:`gaussian_kernel_1d`. Borders use half-sample
    symmetric reflection (``d c b a | a b c d``), which keeps constant
    matrices constant.
    """
    if sigma < 0 or not math.isfinite(sigma):
        raise DomainError(f"sigma must be a finite value >= 0, got {sigma}")
    m = np.asarray(m, dtype=np.float64)
    if m.ndim != 2:
        raise ShapeError(f"expected a 2-D matrix, got shape {m.shape}")
    if sigma == 0 or m.size == 0:
        return m.copy()
    k = gaussian_kernel_1d(sigma)
    r = (k.size - 1) // 2
    padded = np.pad(m, r, mode="symmetric")
    n_rows, n_cols = m.shape
    # along axis 1
    tmp = np.zeros((padded.shape[0], n_cols))
    for t in range(k.size):
        tmp += k[t] * padded[:, t:t + n_cols]
    out = np.zeros((n_rows, n_cols))
    for t in range(k.size):
        out += k[t] * tmp[t:t + n_rows, :]
    return out


def nearest_rank_index(p: float, n: int) -> int:
    """0-based index of the nearest-rank ``p``-th percentile in a sorted row of length ``n``."""
    rank = math.ceil(p / 100.0 * n)
    return min(max(rank, 1), n) - 1


def row_percentile_threshold(m, p: float) -> np.ndarray:
    """Zero every entry strictly below its row's nearest-rank ``p``-th percentile."""
    if not (0.0 <= p < 100.0):
        raise DomainError(f"percentile must lie in [0, 100), got {p}")
    m = np.asarray(m, dtype=np.float64)
    if m.ndim != 2:
        raise ShapeError(f"expected a 2-D matrix, got shape {m.shape}")
    if m.shape[1] == 0:
        return m.copy()
    idx = nearest_rank_index(p, m.shape[1])
    v = np.sort(m, axis=1)[:, idx:idx + 1]
    return np.where(m < v, 0.0, m)
