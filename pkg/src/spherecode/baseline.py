"""Flat cosine-softmax baseline and its centroid force decomposition.

The baseline keeps one unit centroid per identity (rows of W) and trains
with cross-entropy over scaled cosine logits ``scale * (z . w_k)``.  The
negative centroid gradient splits exactly into a pull force from own-class
samples and a push force from other-class samples,

    pull_j =  scale * sum_{y_i = j} (1 - p_j(z_i)) z_i
    push_j = -scale * sum_{y_i != j} p_j(z_i) z_i,

which is the lens used to study minority collapse: tail centroids receive
almost no pull, so accumulated push crowds them together.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from .data import LongTailDataset
from .errors import NumericAbort
from .nets import Mlp, SgdMomentum, cross_entropy, softmax
from .sphere import SeparationReport, normalize, separation_metrics


def init_centroids(m: int, d: int, seed: int = 0) -> np.ndarray:
    """Random unit centroid rows, (m, d)."""
    rng = np.random.default_rng(seed)
    return normalize(rng.standard_normal((m, d)))


def ce_forward(
    z: np.ndarray, w: np.ndarray, scale: float, labels: np.ndarray
) -> tuple[np.ndarray, np.ndarray]:
    """Cross-entropy of scaled cosine logits.

    ``z`` may be one embedding (d,) or a batch (B, d); returns per-sample
    losses and the softmax probabilities.
    """
    z = np.asarray(z, dtype=np.float64)
    single = z.ndim == 1
    if single:
        z = z[None, :]
        labels = np.asarray([labels])
    logits = scale * (z @ np.asarray(w, dtype=np.float64).T)
    probs = softmax(logits)
    losses = cross_entropy(logits, np.asarray(labels))
    if single:
        return losses[0], probs[0]
    return losses, probs


@dataclass(frozen=True)
class PullPushReport:
    """Per-centroid force norms; ratio is push/pull (inf when pull is 0)."""

    pull: np.ndarray          # (m, d) pull force per centroid
    push: np.ndarray          # (m, d) push force per centroid
    pull_norm: np.ndarray     # (m,)
    push_norm: np.ndarray     # (m,)
    ratio: np.ndarray         # (m,)


def ce_grad_decompose(
    z: np.ndarray, labels: np.ndarray, w: np.ndarray, scale: float
) -> tuple[np.ndarray, PullPushReport]:
    """Centroid gradient of summed CE and its exact pull/push split.

    Returns ``(grad_w, report)`` with the identity
    ``report.pull + report.push == -grad_w`` holding to float precision.
    """
    z = np.asarray(z, dtype=np.float64)
    labels = np.asarray(labels)
    w = np.asarray(w, dtype=np.float64)
    m = w.shape[0]
    probs = softmax(scale * (z @ w.T))  # (B, m)
    onehot = np.zeros_like(probs)
    onehot[np.arange(z.shape[0]), labels] = 1.0

    grad = scale * ((probs - onehot).T @ z)
    pull = scale * ((onehot * (1.0 - probs)).T @ z)
    push = -scale * (((1.0 - onehot) * probs).T @ z)
    pull_norm = np.linalg.norm(pull, axis=1)
    push_norm = np.linalg.norm(push, axis=1)
    with np.errstate(divide="ignore", invalid="ignore"):
        ratio = np.where(pull_norm > 0, push_norm / pull_norm, np.inf)
    return grad, PullPushReport(
        pull=pull, push=push, pull_norm=pull_norm, push_norm=push_norm, ratio=ratio
    )


@dataclass(frozen=True)
class BaselineConfig:
    lr: float = 0.05
    momentum: float = 0.9
    batch_size: int = 64
    scale: float = 16.0
    seed: int = 0

    def __post_init__(self) -> None:
        if self.lr <= 0:
            raise ValueError(f"lr must be positive, got {self.lr}")
        if self.batch_size < 1:
            raise ValueError(f"batch_size must be >= 1, got {self.batch_size}")
        if self.scale <= 0:
            raise ValueError(f"scale must be positive, got {self.scale}")


@dataclass
class BaselineResult:
    w: np.ndarray
    backbone: Mlp | None
    trajectory: list[SeparationReport] = field(default_factory=list)


def train_baseline(
    dataset: LongTailDataset,
    w: np.ndarray,
    epochs: int,
    cfg: BaselineConfig,
    backbone: Mlp | None = None,
) -> BaselineResult:
    """Mini-batch CE training of centroids (and optionally a backbone).

    Centroid rows are renormalized after every step, so W stays on the
    sphere.  ``trajectory[0]`` is the separation of the initial centroids
    and one entry is appended per epoch; with ``epochs=0`` the input W is
    returned unchanged apart from a defensive copy.

    Without a backbone the features are used as embeddings directly (they
    are already unit vectors in the synthetic pipeline).
    """
    if epochs < 0:
        raise ValueError(f"epochs must be >= 0, got {epochs}")
    w = normalize(np.array(w, dtype=np.float64, copy=True))
    params = [w] + (backbone.params() if backbone is not None else [])
    opt = SgdMomentum(params, lr=cfg.lr, momentum=cfg.momentum)
    rng = np.random.default_rng(cfg.seed)

    result = BaselineResult(w=w, backbone=backbone)
    result.trajectory.append(separation_metrics(w))
    n = dataset.n
    for epoch in range(epochs):
        order = rng.permutation(n)
        for start in range(0, n, cfg.batch_size):
            idx = order[start : start + cfg.batch_size]
            x = dataset.features[idx]
            y = dataset.labels[idx]
            if backbone is None:
                z, cache = x, None
            else:
                z, cache = backbone.forward(x)
            batch = idx.size
            logits = cfg.scale * (z @ w.T)
            probs = softmax(logits)
            losses = cross_entropy(logits, y)
            loss = float(losses.mean())
            if not np.isfinite(loss):
                raise NumericAbort(
                    f"baseline loss became {loss!r} at epoch {epoch}"
                )
            dlogits = probs
            dlogits[np.arange(batch), y] -= 1.0
            dlogits /= batch
            grad_w = cfg.scale * (dlogits.T @ z)
            grads = [grad_w]
            if backbone is not None:
                dz = cfg.scale * (dlogits @ w)
                bb_grads, _ = backbone.backward(cache, dz)
                grads += bb_grads
            opt.step(grads)
            w /= np.linalg.norm(w, axis=1, keepdims=True)
        result.trajectory.append(separation_metrics(w))
    return result
