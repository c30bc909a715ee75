"""Multi-token identity model: shared backbone, per-token heads, training.

Each identity is represented by a frozen unit code vector and a short
discrete code (l tokens over an alphabet of v).  The model embeds an input
with a shared backbone onto the unit sphere and predicts every token with
its own projection head and v-way softmax over unit prototype columns.
Training minimizes the weighted sum of per-token cross-entropies plus an
angular term that pulls the embedding toward the identity's code vector:

    total = sum_j lambda_j * CE_j + gamma_balance * 0.5 (z.h_y - 1)^2

Code vectors and codes are inputs, never parameters: they are produced
offline (sphere/tokenizer modules) and stay frozen here.
"""

from __future__ import annotations

import json
from dataclasses import dataclass, field

import numpy as np

from .errors import NumericAbort
from .nets import Mlp, SgdMomentum, cross_entropy, log_softmax, softmax
from .tokenizer import CodeTree, assign_codes, decode


class TokenHeads:
    """Per-token projection MLPs plus unit-column softmax matrices.

    Head j maps the shared embedding z to a unit vector q_j and scores the
    v token values as ``scale * (q_j . u_jk)``.  ``hidden_layers=0`` drops
    the projections entirely (q_j = z), which reduces the l=1, v=m model
    to a plain cosine softmax classifier.
    """

    def __init__(
        self,
        l: int,
        v: int,
        d: int,
        scale: float = 16.0,
        hidden_layers: int = 2,
        seed=0,
    ):
        if l < 1 or v < 2 or d < 1:
            raise ValueError(f"bad head shape: l={l}, v={v}, d={d}")
        if scale <= 0:
            raise ValueError(f"scale must be positive, got {scale}")
        self.l, self.v, self.d, self.scale = l, v, d, float(scale)
        self.hidden_layers = hidden_layers
        rng = np.random.default_rng(seed)
        self.projections: list[Mlp | None] = []
        self.u: list[np.ndarray] = []
        for _ in range(l):
            if hidden_layers > 0:
                dims = [d] * (hidden_layers + 2)
                self.projections.append(Mlp(dims, normalize_output=True, rng=rng))
            else:
                self.projections.append(None)
            u = rng.standard_normal((d, v))
            self.u.append(u / np.linalg.norm(u, axis=0, keepdims=True))

    def params(self) -> list[np.ndarray]:
        out: list[np.ndarray] = []
        for proj, u in zip(self.projections, self.u):
            if proj is not None:
                out.extend(proj.params())
            out.append(u)
        return out

    def renormalize_columns(self) -> None:
        """Restore unit norm of every softmax column (after an SGD step)."""
        for u in self.u:
            u /= np.linalg.norm(u, axis=0, keepdims=True)

    def forward(self, z: np.ndarray) -> tuple[list[np.ndarray], list]:
        """Per-head logits for a (B, d) batch of unit embeddings."""
        logits, caches = [], []
        for proj, u in zip(self.projections, self.u):
            if proj is None:
                q, cache = z, None
            else:
                q, cache = proj.forward(z)
            logits.append(self.scale * (q @ u))
            caches.append((q, cache))
        return logits, caches


def token_probabilities(heads: TokenHeads, z: np.ndarray) -> np.ndarray:
    """Softmax token distributions for one embedding; shape (l, v)."""
    z = np.asarray(z, dtype=np.float64)
    single = z.ndim == 1
    logits, _ = heads.forward(z[None, :] if single else z)
    probs = np.stack([softmax(lg) for lg in logits])  # (l, B, v)
    return probs[:, 0, :] if single else probs


def loss_ar(z: np.ndarray, h: np.ndarray) -> float:
    """Angular regression penalty 0.5 (z.h - 1)^2 between unit vectors."""
    r = float(np.dot(z, h)) - 1.0
    return 0.5 * r * r


def grad_ar(z: np.ndarray, h: np.ndarray) -> np.ndarray:
    """d loss_ar / d z = (z.h - 1) h."""
    return (float(np.dot(z, h)) - 1.0) * np.asarray(h, dtype=np.float64)


@dataclass(frozen=True)
class TrainConfig:
    """Settings for multi-token training.

    ``lambdas=None`` means uniform weights 1/l over token positions.
    ``backbone_hidden`` sizes the shared MLP between input features and the
    d-dimensional unit embedding.
    """

    epochs: int = 50
    batch_size: int = 64
    lr: float = 0.05
    momentum: float = 0.9
    scale: float = 16.0
    gamma_balance: float = 1.0
    lambdas: tuple[float, ...] | None = None
    backbone_hidden: tuple[int, ...] = (64, 64)
    head_hidden_layers: int = 2
    seed: int = 0

    def __post_init__(self) -> None:
        if self.epochs < 0:
            raise ValueError(f"epochs must be >= 0, got {self.epochs}")
        if self.batch_size < 1:
            raise ValueError(f"batch_size must be >= 1, got {self.batch_size}")
        if self.lr <= 0:
            raise ValueError(f"lr must be positive, got {self.lr}")
        if self.gamma_balance < 0:
            raise ValueError(
                f"gamma_balance must be >= 0, got {self.gamma_balance}"
            )
        if self.lambdas is not None:
            if any(w < 0 for w in self.lambdas):
                raise ValueError("lambdas must be non-negative")

    def resolve_lambdas(self, l: int) -> np.ndarray:
        if self.lambdas is None:
            return np.full(l, 1.0 / l)
        lam = np.asarray(self.lambdas, dtype=np.float64)
        if lam.shape != (l,):
            raise ValueError(f"need {l} lambda weights, got {lam.shape}")
        return lam


def code_matrix(codes: dict[int, tuple[int, ...]], m: int, l: int) -> np.ndarray:
    """Dense (m, l) int array of codes; every identity < m must be present."""
    mat = np.empty((m, l), dtype=np.intp)
    for ident in range(m):
        if ident not in codes:
            raise ValueError(f"identity {ident} has no code")
        code = codes[ident]
        if len(code) != l:
            raise ValueError(
                f"identity {ident} has code length {len(code)}, expected {l}"
            )
        mat[ident] = code
    return mat


def _forward_backward(
    backbone: Mlp,
    heads: TokenHeads,
    x: np.ndarray,
    labels: np.ndarray,
    codes_mat: np.ndarray,
    h_vectors: np.ndarray,
    lambdas: np.ndarray,
    gamma: float,
    compute_grads: bool,
):
    """One pass of the total loss; optionally also its parameter gradients.

    Gradients are ordered to match ``backbone.params() + heads.params()``.
    """
    batch = x.shape[0]
    targets = codes_mat[labels]  # (B, l)
    z, bb_cache = backbone.forward(x)

    logits, caches = heads.forward(z)
    ce_means = np.array(
        [cross_entropy(lg, targets[:, j]).mean() for j, lg in enumerate(logits)]
    )
    loss_code = float(np.dot(lambdas, ce_means))

    h_y = h_vectors[labels]
    resid = np.sum(z * h_y, axis=1) - 1.0
    ar = float(0.5 * np.mean(resid**2))
    total = loss_code + gamma * ar

    token_acc = [
        float(np.mean(np.argmax(lg, axis=1) == targets[:, j]))
        for j, lg in enumerate(logits)
    ]
    stats = {
        "loss": total,
        "loss_code": loss_code,
        "loss_ar": ar,
        "token_acc": token_acc,
        "align": float(np.mean(resid + 1.0)),
    }
    if not compute_grads:
        return stats, None

    grad_z = np.zeros_like(z)
    head_grads: list[np.ndarray] = []
    for j, (lg, (q, cache)) in enumerate(zip(logits, caches)):
        p = softmax(lg)
        p[np.arange(batch), targets[:, j]] -= 1.0
        dlogits = (lambdas[j] / batch) * p
        du = heads.scale * (q.T @ dlogits)
        dq = heads.scale * (dlogits @ heads.u[j].T)
        proj = heads.projections[j]
        if proj is None:
            grad_z += dq
        else:
            pgrads, dz_j = proj.backward(cache, dq)
            head_grads.extend(pgrads)
            grad_z += dz_j
        head_grads.append(du)
    grad_z += (gamma / batch) * resid[:, None] * h_y
    bb_grads, _ = backbone.backward(bb_cache, grad_z)
    return stats, bb_grads + head_grads


def loss_total(
    backbone: Mlp,
    heads: TokenHeads,
    x: np.ndarray,
    labels: np.ndarray,
    h_vectors: np.ndarray,
    codes: dict[int, tuple[int, ...]],
    cfg: TrainConfig,
) -> float:
    """Composite training loss of a labeled batch under the current model."""
    x = np.asarray(x, dtype=np.float64)
    labels = np.asarray(labels)
    codes_mat = code_matrix(codes, h_vectors.shape[0], heads.l)
    lambdas = cfg.resolve_lambdas(heads.l)
    stats, _ = _forward_backward(
        backbone, heads, x, labels, codes_mat, h_vectors,
        lambdas, cfg.gamma_balance, compute_grads=False,
    )
    return stats["loss"]


@dataclass
class TrainedCodeModel:
    backbone: Mlp
    heads: TokenHeads
    metrics: list[dict] = field(default_factory=list)


def train_code_model(
    features: np.ndarray,
    labels: np.ndarray,
    h_vectors: np.ndarray,
    codes: dict[int, tuple[int, ...]],
    cfg: TrainConfig,
    l: int | None = None,
    v: int | None = None,
) -> TrainedCodeModel:
    """Fit backbone and heads on labeled features with frozen codes/vectors.

    ``l``/``v`` default to the shape implied by the code map.  Per-step
    records (step, loss, l_c, l_ar, token accuracies) are collected in the
    returned model's ``metrics``.
    """
    features = np.asarray(features, dtype=np.float64)
    labels = np.asarray(labels)
    h_vectors = np.asarray(h_vectors, dtype=np.float64)
    m, d = h_vectors.shape
    if features.shape[0] != labels.shape[0]:
        raise ValueError("features and labels disagree on sample count")
    if labels.size and (labels.min() < 0 or labels.max() >= m):
        raise ValueError(f"labels out of range for m={m}")

    if l is None:
        l = len(next(iter(codes.values())))
    if v is None:
        v = max(max(c) for c in codes.values()) + 1
    codes_mat = code_matrix(codes, m, l)
    if codes_mat.min() < 0 or codes_mat.max() >= v:
        raise ValueError(f"codes contain tokens outside [0, {v})")
    lambdas = cfg.resolve_lambdas(l)

    rng = np.random.default_rng(cfg.seed)
    dims = [features.shape[1], *cfg.backbone_hidden, d]
    backbone = Mlp(dims, normalize_output=True, rng=rng)
    heads = TokenHeads(
        l, v, d,
        scale=cfg.scale,
        hidden_layers=cfg.head_hidden_layers,
        seed=rng,
    )
    opt = SgdMomentum(
        backbone.params() + heads.params(), lr=cfg.lr, momentum=cfg.momentum
    )

    model = TrainedCodeModel(backbone=backbone, heads=heads)
    n = features.shape[0]
    step = 0
    for epoch in range(cfg.epochs):
        order = rng.permutation(n)
        for start in range(0, n, cfg.batch_size):
            idx = order[start : start + cfg.batch_size]
            stats, grads = _forward_backward(
                backbone, heads, features[idx], labels[idx], codes_mat,
                h_vectors, lambdas, cfg.gamma_balance, compute_grads=True,
            )
            if not np.isfinite(stats["loss"]):
                raise NumericAbort(
                    f"training loss became {stats['loss']!r} at epoch "
                    f"{epoch}, step {step}"
                )
            opt.step(grads)
            heads.renormalize_columns()
            step += 1
            model.metrics.append(
                {
                    "step": step,
                    "loss": round(stats["loss"], 12),
                    "l_c": round(stats["loss_code"], 12),
                    "l_ar": round(stats["loss_ar"], 12),
                    "token_acc": [round(a, 6) for a in stats["token_acc"]],
                }
            )
    return model


def embed(backbone: Mlp, x: np.ndarray) -> np.ndarray:
    """Unit embeddings of raw features under the trained backbone."""
    z, _ = backbone.forward(np.asarray(x, dtype=np.float64))
    return z


def mean_alignment(
    backbone: Mlp, x: np.ndarray, labels: np.ndarray, h_vectors: np.ndarray
) -> float:
    """Mean cosine between embeddings and their identity's code vector."""
    z = embed(backbone, x)
    return float(np.mean(np.sum(z * h_vectors[np.asarray(labels)], axis=1)))


def predict_identities(
    heads: TokenHeads,
    z: np.ndarray,
    tree: CodeTree,
    codes: dict[int, tuple[int, ...]] | None = None,
) -> tuple[np.ndarray, np.ndarray]:
    """Decode embeddings to identities via greedy tokens, with fallback.

    Greedy per-token argmax is decoded through the tree; when that code is
    unpopulated, the populated code with maximum summed token
    log-probability wins instead.  Returns ``(identities, direct)`` where
    ``direct[i]`` is False for rows that needed the fallback.
    """
    z = np.asarray(z, dtype=np.float64)
    single = z.ndim == 1
    if single:
        z = z[None, :]
    logits, _ = heads.forward(z)
    logp = [log_softmax(lg) for lg in logits]  # l x (B, v)
    greedy = np.stack([lg.argmax(axis=1) for lg in logits], axis=1)  # (B, l)

    n = z.shape[0]
    idents = np.empty(n, dtype=np.intp)
    direct = np.ones(n, dtype=bool)
    misses = []
    for i in range(n):
        ident = decode(tree, greedy[i])
        if ident is None:
            misses.append(i)
        else:
            idents[i] = ident
    if misses:
        if codes is None:
            codes = assign_codes(tree)
        cmat = code_matrix(codes, tree.m, tree.l)
        rows = np.asarray(misses)
        scores = np.zeros((rows.size, tree.m))
        for j in range(tree.l):
            scores += logp[j][rows][:, cmat[:, j]]
        idents[rows] = scores.argmax(axis=1)
        direct[rows] = False
    if single:
        return idents[:1], direct[:1]
    return idents, direct


def predict_from_codes(
    heads: TokenHeads, z: np.ndarray, codes: dict[int, tuple[int, ...]]
) -> tuple[np.ndarray, np.ndarray]:
    """Decode embeddings using only a code table (no tree).

    Greedy token tuples found in the table map directly to their identity;
    anything else falls back to the maximum summed token log-probability
    over the table.  Needed when code assignments were permuted away from
    the tree (ablations), and equivalent to the tree path otherwise.
    """
    z = np.asarray(z, dtype=np.float64)
    if z.ndim == 1:
        z = z[None, :]
    m = len(codes)
    l = len(next(iter(codes.values())))
    logits, _ = heads.forward(z)
    logp = [log_softmax(lg) for lg in logits]
    greedy = np.stack([lg.argmax(axis=1) for lg in logits], axis=1)

    lookup = {tuple(int(c) for c in code): ident for ident, code in codes.items()}
    cmat = code_matrix(codes, m, l)
    idents = np.empty(z.shape[0], dtype=np.intp)
    direct = np.ones(z.shape[0], dtype=bool)
    misses = []
    for i in range(z.shape[0]):
        hit = lookup.get(tuple(int(c) for c in greedy[i]))
        if hit is None:
            misses.append(i)
        else:
            idents[i] = hit
    if misses:
        rows = np.asarray(misses)
        scores = np.zeros((rows.size, m))
        for j in range(l):
            scores += logp[j][rows][:, cmat[:, j]]
        idents[rows] = scores.argmax(axis=1)
        direct[rows] = False
    return idents, direct


def closed_set_accuracy(
    backbone: Mlp,
    heads: TokenHeads,
    tree: CodeTree,
    x: np.ndarray,
    labels: np.ndarray,
    codes: dict[int, tuple[int, ...]] | None = None,
) -> float:
    """Fraction of samples whose decoded identity matches the label."""
    z = embed(backbone, x)
    idents, _ = predict_identities(heads, z, tree, codes)
    return float(np.mean(idents == np.asarray(labels)))


def head_param_count(d: int, hidden_layers: int = 2) -> int:
    """Parameters of one projection head (dense layers of width d)."""
    return (hidden_layers + 1) * (d * d + d)


def save_checkpoint(
    path,
    backbone: Mlp,
    heads: TokenHeads,
    config_hash: str = "",
    extra: dict | None = None,
) -> None:
    """Serialize model weights plus shape metadata to an .npz file."""
    arrays: dict[str, np.ndarray] = {}
    meta = {
        "backbone_dims": backbone.dims,
        "l": heads.l,
        "v": heads.v,
        "d": heads.d,
        "scale": heads.scale,
        "hidden_layers": heads.hidden_layers,
        "config_hash": config_hash,
        "extra": extra or {},
    }
    for i, (w, b) in enumerate(zip(backbone.weights, backbone.biases)):
        arrays[f"bb_w{i}"] = w
        arrays[f"bb_b{i}"] = b
    for j, (proj, u) in enumerate(zip(heads.projections, heads.u)):
        arrays[f"u{j}"] = u
        if proj is not None:
            for i, (w, b) in enumerate(zip(proj.weights, proj.biases)):
                arrays[f"h{j}_w{i}"] = w
                arrays[f"h{j}_b{i}"] = b
    arrays["meta_json"] = np.frombuffer(
        json.dumps(meta, sort_keys=True).encode(), dtype=np.uint8
    )
    np.savez(path, **arrays)


def load_checkpoint(path) -> tuple[Mlp, TokenHeads, dict]:
    """Inverse of :func:`save_checkpoint`; returns (backbone, heads, meta)."""
    with np.load(path) as data:
        meta = json.loads(bytes(data["meta_json"]).decode())
        backbone = Mlp(meta["backbone_dims"], normalize_output=True, rng=0)
        for i in range(len(backbone.weights)):
            backbone.weights[i] = data[f"bb_w{i}"].copy()
            backbone.biases[i] = data[f"bb_b{i}"].copy()
        heads = TokenHeads(
            meta["l"], meta["v"], meta["d"],
            scale=meta["scale"],
            hidden_layers=meta["hidden_layers"],
            seed=0,
        )
        for j in range(heads.l):
            heads.u[j] = data[f"u{j}"].copy()
            proj = heads.projections[j]
            if proj is not None:
                for i in range(len(proj.weights)):
                    proj.weights[i] = data[f"h{j}_w{i}"].copy()
                    proj.biases[i] = data[f"h{j}_b{i}"].copy()
    return backbone, heads, meta
