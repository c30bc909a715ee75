"""Core geometry on the unit hypersphere.

Provides the Gaussian pairwise potential, the log-mean-potential uniformity
loss with optional row mini-batching, its analytic gradient, projected
(Riemannian) gradient descent that keeps every row on the sphere, and
pairwise-separation statistics for a set of unit vectors.

Conventions: a vector set is a ``(m, d)`` float64 array whose rows are unit
vectors.  All losses/gradients are computed in float64.
"""

from __future__ import annotations

from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass

import numpy as np

from .errors import NumericAbort

DEFAULT_KERNEL_T = 2.0
DEFAULT_ROW_BATCH = 2048

_ZERO_NORM_EPS = 1e-12


def normalize(v: np.ndarray) -> np.ndarray:
    """Project a vector (or each row of a matrix) onto the unit sphere.

    Raises
    ------
    ValueError
        If any row has (near-)zero norm; such input is degenerate and the
        caller must decide how to repair it.
    """
    v = np.asarray(v, dtype=np.float64)
    norms = np.linalg.norm(v, axis=-1, keepdims=True)
    if np.any(norms < _ZERO_NORM_EPS):
        raise ValueError("cannot normalize a zero-norm vector")
    return v / norms


def pairwise_sq_dists(a: np.ndarray, b: np.ndarray) -> np.ndarray:
    """Squared Euclidean distances between rows of ``a`` and rows of ``b``."""
    a = np.asarray(a, dtype=np.float64)
    b = np.asarray(b, dtype=np.float64)
    if a.shape[-1] != b.shape[-1]:
        raise ValueError(
            f"dimension mismatch: {a.shape[-1]} vs {b.shape[-1]}"
        )
    sq = (
        np.sum(a * a, axis=1)[:, None]
        + np.sum(b * b, axis=1)[None, :]
        - 2.0 * (a @ b.T)
    )
    return np.maximum(sq, 0.0)


def gaussian_potential(a: np.ndarray, b: np.ndarray, t: float = DEFAULT_KERNEL_T) -> float:
    """Repulsion kernel ``exp(-t * ||a - b||^2)`` between two vectors.

    ``t`` controls the kernel width; it must be positive.  The value is 1
    exactly when the vectors coincide and decays monotonically with
    distance.
    """
    if t <= 0:
        raise ValueError(f"kernel width t must be positive, got {t}")
    a = np.asarray(a, dtype=np.float64)
    b = np.asarray(b, dtype=np.float64)
    if a.shape != b.shape:
        raise ValueError(f"shape mismatch: {a.shape} vs {b.shape}")
    diff = a - b
    return float(np.exp(-t * np.dot(diff, diff)))


@dataclass(frozen=True)
class UniformityConfig:
    """Settings for the spreading objective and its optimizer.

    Attributes
    ----------
    t : float
        Gaussian kernel width (> 0).
    row_batch : int | None
        Rows per mini-batch when estimating the loss; ``None`` means
        ``min(m, DEFAULT_ROW_BATCH)``.
    lr : float
        Step size of projected gradient descent.
    epochs : int
        Number of full passes over the rows.
    seed : int
        Seed for the row-subsampling stream.
    """

    t: float = DEFAULT_KERNEL_T
    row_batch: int | None = None
    lr: float = 0.1
    epochs: int = 1000
    seed: int = 0

    def __post_init__(self) -> None:
        if self.t <= 0:
            raise ValueError(f"kernel width t must be positive, got {self.t}")
        if self.lr <= 0:
            raise ValueError(f"learning rate must be positive, got {self.lr}")
        if self.epochs < 0:
            raise ValueError(f"epochs must be >= 0, got {self.epochs}")
        if self.row_batch is not None and self.row_batch < 1:
            raise ValueError(f"row_batch must be >= 1, got {self.row_batch}")

    def resolve_batch(self, m: int) -> int:
        b = self.row_batch if self.row_batch is not None else DEFAULT_ROW_BATCH
        return min(b, m)


def _potential_matrix(h: np.ndarray, rows: np.ndarray, t: float) -> np.ndarray:
    """Kernel values between the selected rows and all rows, self pairs zeroed."""
    g = np.exp(-t * pairwise_sq_dists(h[rows], h))
    g[np.arange(len(rows)), rows] = 0.0
    return g


def _check_rows(rows, m: int) -> np.ndarray:
    if rows is None:
        return np.arange(m)
    rows = np.asarray(rows, dtype=np.intp)
    if rows.ndim != 1 or rows.size == 0:
        raise ValueError("row subset must be a non-empty 1-D index array")
    if rows.min() < 0 or rows.max() >= m:
        raise ValueError(f"row subset indices out of range for m={m}")
    if np.unique(rows).size != rows.size:
        raise ValueError("row subset must not contain duplicate indices")
    return rows


def uniformity_loss(h: np.ndarray, rows=None, t: float = DEFAULT_KERNEL_T) -> float:
    """Log of the mean pairwise Gaussian potential over the counted pairs.

    With ``rows`` given, only pairs (i, j) with ``i`` in the subset and
    ``j != i`` ranging over all rows are counted, which gives an unbiased
    mini-batch estimate of the full loss.  Identical rows give 0
    (log of potential 1); well-spread rows give negative values.
    """
    h = np.asarray(h, dtype=np.float64)
    if h.ndim != 2 or h.shape[0] < 2:
        raise ValueError("need an (m, d) array with m >= 2")
    if t <= 0:
        raise ValueError(f"kernel width t must be positive, got {t}")
    rows = _check_rows(rows, h.shape[0])
    g = _potential_matrix(h, rows, t)
    n_pairs = rows.size * (h.shape[0] - 1)
    return float(np.log(g.sum() / n_pairs))


def uniformity_grad(
    h: np.ndarray,
    rows=None,
    t: float = DEFAULT_KERNEL_T,
    tangent: bool = True,
) -> np.ndarray:
    """Analytic gradient of :func:`uniformity_loss` w.r.t. every row of ``h``.

    Let S be the row subset and ``g_kj`` the kernel between rows k and j
    (self pairs excluded).  The loss is ``log(sum_{k in S, j != k} g_kj / c)``
    for a constant c, so

        d/dh_k = (-2 t / G) * sum_j A_kj (h_k - h_j),
        A_kj   = g_kj * ([k in S] + [j in S]),   G = sum_{k in S, j} g_kj.

    Rows outside the subset still receive gradient through the pairs that
    reference them.  With ``tangent=True`` each row's gradient is projected
    onto the tangent space of the sphere at that row (the component along
    the row is removed), which is the direction actually used by the
    on-sphere optimizer.  ``tangent=False`` returns the raw Euclidean
    gradient, suitable for finite-difference checking.
    """
    h = np.asarray(h, dtype=np.float64)
    if h.ndim != 2 or h.shape[0] < 2:
        raise ValueError("need an (m, d) array with m >= 2")
    if t <= 0:
        raise ValueError(f"kernel width t must be positive, got {t}")
    rows = _check_rows(rows, h.shape[0])

    g = _potential_matrix(h, rows, t)  # (|S|, m)
    total = g.sum()
    if total <= 0.0 or not np.isfinite(total):
        raise NumericAbort(
            f"uniformity gradient degenerate: potential sum={total!r}"
        )

    # weighted_sum[k] = sum_j A_kj h_j and weight[k] = sum_j A_kj, assembled
    # from the subset block without materializing the full (m, m) kernel.
    weighted_sum = g.T @ h[rows]
    weighted_sum[rows] += g @ h
    weight = g.sum(axis=0)
    weight[rows] += g.sum(axis=1)

    grad = (-2.0 * t / total) * (weight[:, None] * h - weighted_sum)
    if tangent:
        grad = grad - np.sum(grad * h, axis=1, keepdims=True) * h
    return grad


def optimize_code_vectors(
    h_init: np.ndarray,
    cfg: UniformityConfig | None = None,
    on_epoch=None,
) -> np.ndarray:
    """Spread vectors over the sphere by projected gradient descent.

    Each step samples a row subset, takes a step along the negative
    tangent-projected gradient of the uniformity loss, and renormalizes
    every row, so the output rows are exactly unit norm.  The input is not
    modified.  ``on_epoch(epoch, h)``, if given, is called after every
    epoch with the current vectors (observation only; it must not mutate).
    """
    cfg = cfg or UniformityConfig()
    h = normalize(np.array(h_init, dtype=np.float64, copy=True))
    if h.ndim != 2 or h.shape[0] < 2:
        raise ValueError("need an (m, d) array with m >= 2")
    m = h.shape[0]
    batch = cfg.resolve_batch(m)
    rng = np.random.default_rng(cfg.seed)

    for epoch in range(cfg.epochs):
        order = rng.permutation(m)
        for start in range(0, m, batch):
            rows = order[start : start + batch]
            grad = uniformity_grad(h, rows, t=cfg.t, tangent=True)
            h = h - cfg.lr * grad
            norms = np.linalg.norm(h, axis=1, keepdims=True)
            if not np.isfinite(norms).all() or (norms < _ZERO_NORM_EPS).any():
                raise NumericAbort(
                    f"code-vector optimization diverged at epoch {epoch}: "
                    f"row norm range [{norms.min()!r}, {norms.max()!r}]"
                )
            h = h / norms
        if on_epoch is not None:
            on_epoch(epoch, h)
    return h


@dataclass(frozen=True)
class SeparationReport:
    """Pairwise cosine-distance statistics (distance = 1 - cos)."""

    min_dist: float
    mean_dist: float
    max_dist: float
    exact: bool
    n_pairs: int

    def as_tuple(self) -> tuple[float, float, float]:
        return (self.min_dist, self.mean_dist, self.max_dist)


def _max_offdiag_cos_block(h: np.ndarray, start: int, stop: int) -> float:
    sims = h[start:stop] @ h.T
    idx = np.arange(start, stop)
    sims[idx - start, idx] = -np.inf
    return float(sims.max())


def min_pairwise_distance(h: np.ndarray, block: int = 1024, threads: int = 1) -> float:
    """Exact minimum pairwise cosine distance via a blockwise scan.

    Runs in O(m^2 d) time but O(block * m) memory, so it stays exact for
    vector sets too large for a full pairwise matrix.
    """
    h = np.asarray(h, dtype=np.float64)
    m = h.shape[0]
    if m < 2:
        raise ValueError("need at least two vectors")
    starts = list(range(0, m, block))
    if threads > 1:
        with ThreadPoolExecutor(max_workers=threads) as pool:
            maxima = list(
                pool.map(
                    lambda s: _max_offdiag_cos_block(h, s, min(s + block, m)),
                    starts,
                )
            )
    else:
        maxima = [_max_offdiag_cos_block(h, s, min(s + block, m)) for s in starts]
    return float(1.0 - np.clip(max(maxima), -1.0, 1.0))


def separation_metrics(
    h: np.ndarray,
    exact_limit: int = 20_000,
    sample_pairs: int = 1_000_000,
    seed: int = 0,
    threads: int = 1,
) -> SeparationReport:
    """Min / mean / max pairwise cosine distance over distinct rows.

    Up to ``exact_limit`` rows all m(m-1)/2 pairs are evaluated.  Beyond
    that the mean and max come from ``sample_pairs`` sampled index pairs
    while the minimum — the quantity the collapse analysis depends on —
    is still computed exactly by a blockwise scan; the report's ``exact``
    flag records which regime produced it.
    """
    h = np.asarray(h, dtype=np.float64)
    if h.ndim != 2 or h.shape[0] < 2:
        raise ValueError("need an (m, d) array with m >= 2")
    m = h.shape[0]

    if m <= exact_limit:
        cos = np.clip(h @ h.T, -1.0, 1.0)
        iu = np.triu_indices(m, k=1)
        dists = 1.0 - cos[iu]
        return SeparationReport(
            min_dist=float(dists.min()),
            mean_dist=float(dists.mean()),
            max_dist=float(dists.max()),
            exact=True,
            n_pairs=dists.size,
        )

    rng = np.random.default_rng(seed)
    i = rng.integers(0, m, size=sample_pairs)
    j = rng.integers(0, m - 1, size=sample_pairs)
    j = np.where(j >= i, j + 1, j)  # uniform over off-diagonal pairs
    cos = np.clip(np.sum(h[i] * h[j], axis=1), -1.0, 1.0)
    dists = 1.0 - cos
    return SeparationReport(
        min_dist=min_pairwise_distance(h, threads=threads),
        mean_dist=float(dists.mean()),
        max_dist=float(dists.max()),
        exact=False,
        n_pairs=sample_pairs,
    )
