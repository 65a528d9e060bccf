"""Angular prototypical (AP) and affinity-matrix (AM) losses with thresholding masks.

All gradients are closed form. Masks are treated as constants when
differentiating, and the relative-threshold mask is derived from a blurred
copy of the affinity while gradients flow through the unblurred one.
"""

from dataclasses import dataclass, field
from typing import Optional

import numpy as np

from .core_math import as_embedding_matrix, gaussian_blur
from .errors import ContractError, DegenerateMaskError, DomainError, ShapeError

MASK_MODES = ("none", "absolute", "relative")
MASK_SCOPES = ("am_only", "both")

DEFAULT_THRESHOLD = {"none": 0.8, "absolute": 0.8, "relative": 0.95}


@dataclass
class EmbeddingBatch:
    """Anchor/positive embeddings for ``N`` distinct speakers."""

    anchors: np.ndarray
    positives: np.ndarray
    speaker_ids: Optional[np.ndarray] = None

    def __post_init__(self):
        self.anchors = as_embedding_matrix(self.anchors, "anchors")
        self.positives = as_embedding_matrix(self.positives, "positives")
        if self.anchors.shape != self.positives.shape:
            raise ShapeError(
                f"anchors {self.anchors.shape} and positives {self.positives.shape} differ in shape"
            )
        if self.anchors.shape[0] < 1:
            raise ShapeError("a batch needs at least one speaker")
        if self.speaker_ids is None:
            self.speaker_ids = np.arange(self.anchors.shape[0])
        self.speaker_ids = np.asarray(self.speaker_ids)
        if self.speaker_ids.shape != (self.anchors.shape[0],):
            raise ShapeError("need exactly one speaker id per anchor")
        if np.unique(self.speaker_ids).size != self.speaker_ids.size:
            raise ContractError("speaker ids in a batch must be pairwise distinct")

    @property
    def n(self) -> int:
        return self.anchors.shape[0]


@dataclass
class LossConfig:
    alpha: float = 0.5
    threshold_t: Optional[float] = None  # None -> 0.8 absolute, 0.95 relative
    mask_mode: str = "absolute"
    mask_scope: str = "both"
    sigma_train: float = 1.0

    def __post_init__(self):
        if not (0.0 <= self.alpha <= 1.0):
            raise DomainError(f"alpha must lie in [0, 1], got {self.alpha}")
        if self.mask_mode not in MASK_MODES:
            raise DomainError(f"mask_mode must be one of {MASK_MODES}, got {self.mask_mode!r}")
        if self.mask_scope not in MASK_SCOPES:
            raise DomainError(f"mask_scope must be one of {MASK_SCOPES}, got {self.mask_scope!r}")
        if self.threshold_t is not None and not (0.0 < self.threshold_t < 1.0):
            raise DomainError(f"threshold_t must lie in (0, 1), got {self.threshold_t}")
        if self.sigma_train < 0:
            raise DomainError(f"sigma_train must be >= 0, got {self.sigma_train}")

    @property
    def t(self) -> float:
        if self.threshold_t is not None:
            return self.threshold_t
        return DEFAULT_THRESHOLD[self.mask_mode]


@dataclass
class LossOutput:
    loss_value: float
    grad_anchors: np.ndarray
    grad_positives: np.ndarray
    grad_w: float
    grad_b: float
    mask_used: Optional[np.ndarray]
    ap_value: float = 0.0
    am_value: float = 0.0
    am_degenerate: bool = False
    affinity: np.ndarray = field(default=None, repr=False)


def _check_square(m, name):
    m = np.asarray(m, dtype=np.float64)
    if m.ndim != 2 or m.shape[0] != m.shape[1]:
        raise ShapeError(f"{name} must be square, got shape {m.shape}")
    return m


def _check_mask(mask, n):
    mask = np.asarray(mask)
    if mask.shape != (n, n):
        raise ShapeError(f"mask shape {mask.shape} does not match ({n}, {n})")
    if not np.all((mask == 0) | (mask == 1)):
        raise DomainError("mask entries must be 0 or 1")
    return mask.astype(bool)


def _ap_value_and_grad(s, mask=None):
    """AP loss and its gradient with respect to the similarity matrix."""
    n = s.shape[0]
    if mask is None:
        logits = s
    else:
        if not np.all(np.diag(mask)):
            raise ContractError("AP mask must keep every positive pair (diagonal of ones)")
        logits = np.where(mask, s, -np.inf)
    row_max = np.max(logits, axis=1, keepdims=True)
    e = np.exp(logits - row_max)
    denom = e.sum(axis=1, keepdims=True)
    log_softmax_diag = np.diag(s) - row_max[:, 0] - np.log(denom[:, 0])
    value = -float(np.mean(log_softmax_diag))
    grad = e / denom
    grad[np.diag_indices(n)] -= 1.0
    return value, grad / n


def ap_loss(s, mask=None) -> float:
    """Softmax cross-entropy of each row of ``s`` against its diagonal.

    With a mask, row ``i``'s softmax denominator runs only over columns
    ``j`` with ``mask[i, j] == 1``; the diagonal must always be kept.
    """
    s = _check_square(s, "similarity matrix")
    if mask is not None:
        mask = _check_mask(mask, s.shape[0])
    return _ap_value_and_grad(s, mask)[0]


def _am_value_and_grad(a, mask=None):
    n = a.shape[0]
    resid = np.eye(n) - a
    if mask is None:
        denom = float(n * n)
        weights = 1.0
    else:
        denom = float(mask.sum())
        if denom == 0:
            raise DegenerateMaskError("AM mask selects no entries")
        weights = mask.astype(np.float64)
    value = float(np.sum(weights * resid ** 2) / denom)
    grad = -2.0 * weights * resid / denom
    return value, grad


def am_loss(a, mask=None) -> float:
    """Mean squared error between an affinity matrix and the identity.

    With a mask the mean is taken over the selected cells only. An all-zero
    mask raises :class:`DegenerateMaskError`.
    """
    a = _check_square(a, "affinity matrix")
    if mask is not None:
        mask = _check_mask(mask, a.shape[0])
    return _am_value_and_grad(a, mask)[0]


def absolute_mask(a, t: float) -> np.ndarray:
    """Select positives at or below ``t`` and negatives at or above ``t``."""
    if not (0.0 < t < 1.0):
        raise DomainError(f"threshold must lie in (0, 1), got {t}")
    a = _check_square(a, "affinity matrix")
    diag = np.eye(a.shape[0], dtype=bool)
    m = np.where(diag, a <= t, a >= t)
    return m.astype(np.int8)


def ap_mask_from(am_mask) -> np.ndarray:
    m = np.array(am_mask, dtype=np.int8)
    np.fill_diagonal(m, 1)
    return m


def unit_diagonal(a) -> np.ndarray:
    out = np.array(a, dtype=np.float64)
    np.fill_diagonal(out, 1.0)
    return out


def relative_mask(a, t: float, sigma: float) -> np.ndarray:
    """Mask from per-row thresholds read off a blurred copy of the affinity.

    The diagonal is set to 1, the result is blurred, and row ``i``'s
    threshold is ``t`` times the blurred diagonal value. The selection rule
    of :func:`absolute_mask` is then applied to the *unblurred* unit-diagonal
    matrix with those per-row thresholds.
    """
    if not (0.0 < t < 1.0):
        raise DomainError(f"threshold must lie in (0, 1), got {t}")
    if sigma < 0:
        raise DomainError(f"sigma must be >= 0, got {sigma}")
    a1 = unit_diagonal(_check_square(a, "affinity matrix"))
    tau = t * np.diag(gaussian_blur(a1, sigma))[:, None]
    diag = np.eye(a1.shape[0], dtype=bool)
    m = np.where(diag, a1 <= tau, a1 >= tau)
    return m.astype(np.int8)


def combined_loss(batch: EmbeddingBatch, w: float, b: float, cfg: LossConfig,
                  mask=None) -> LossOutput:
    """Weighted AP + AM loss with gradients for embeddings, ``w`` and ``b``.

    Parameters
    ----------
    batch : EmbeddingBatch
    w, b : float
        Scale and bias of the similarity matrix; ``w`` must be positive.
    cfg : LossConfig
    mask : array, optional
        Freeze the AM mask to this value instead of recomputing it from the
        batch. Used by the finite-difference checks; ignored when
        ``cfg.mask_mode == "none"``.

    Returns
    -------
    LossOutput
        ``loss_value = (1 - alpha) * AP + alpha * AM``. If the AM mask is
        all zero, the AM term contributes 0 and ``am_degenerate`` is set.
    """
    if not w > 0:
        raise DomainError(f"similarity scale w must be positive, got {w}")
    an_raw, pn_raw = batch.anchors, batch.positives
    n = batch.n
    na = np.linalg.norm(an_raw, axis=1, keepdims=True)
    pna = np.linalg.norm(pn_raw, axis=1, keepdims=True)
    an, pn = an_raw / na, pn_raw / pna

    cos = an @ an.T
    np.fill_diagonal(cos, np.einsum("ij,ij->i", an, pn))
    sim = (cos + 1.0) / 2.0
    s = w * sim + b

    alpha = cfg.alpha
    am_mask = ap_mask = None
    aff = sim
    if cfg.mask_mode != "none":
        if mask is not None:
            am_mask = _check_mask(mask, n)
        elif cfg.mask_mode == "absolute":
            am_mask = absolute_mask(sim, cfg.t).astype(bool)
        else:
            am_mask = relative_mask(sim, cfg.t, cfg.sigma_train).astype(bool)
        if cfg.mask_mode == "relative":
            aff = unit_diagonal(sim)
        if cfg.mask_scope == "both":
            ap_mask = ap_mask_from(am_mask).astype(bool)

    ap_val, g_s = _ap_value_and_grad(s, ap_mask)
    degenerate = False
    try:
        am_val, g_a = _am_value_and_grad(aff, am_mask)
    except DegenerateMaskError:
        am_val, g_a = 0.0, np.zeros((n, n))
        degenerate = True
    if cfg.mask_mode == "relative":
        # diagonal of the unit-diagonal matrix is a constant
        np.fill_diagonal(g_a, 0.0)

    value = (1.0 - alpha) * ap_val + alpha * am_val
    d_s = (1.0 - alpha) * g_s
    d_sim = w * d_s + alpha * g_a
    grad_w = float(np.sum(sim * d_s))
    grad_b = float(np.sum(d_s))

    d_cos = d_sim / 2.0
    d_diag = np.diag(d_cos).copy()
    d_off = d_cos.copy()
    np.fill_diagonal(d_off, 0.0)
    g_an = (d_off + d_off.T) @ an + d_diag[:, None] * pn
    g_pn = d_diag[:, None] * an
    grad_a = (g_an - np.sum(g_an * an, axis=1, keepdims=True) * an) / na
    grad_p = (g_pn - np.sum(g_pn * pn, axis=1, keepdims=True) * pn) / pna

    return LossOutput(
        loss_value=float(value),
        grad_anchors=grad_a,
        grad_positives=grad_p,
        grad_w=grad_w,
        grad_b=grad_b,
        mask_used=None if am_mask is None else am_mask.astype(np.int8),
        ap_value=ap_val,
        am_value=am_val,
        am_degenerate=degenerate,
        affinity=sim,
    )
