"""Hierarchical tokenization of code vectors into short discrete codes.

A set of m unit vectors is clustered recursively with spherical (cosine)
k-means: every internal tree level splits its members into at most v
clusters, and the deepest level orders the members of each node by cosine
similarity to the node centroid.  Reading the branch taken at each level
yields, per identity, a code of l tokens from an alphabet of size v.  The
tree guarantees at most v^(l-j) identities below any depth-j node, so v^l
>= m is required and every identity receives a distinct code.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np

from .sphere import normalize

# Preferred alphabet-size band when choosing a code shape automatically.
V_BAND_LOW = 5   # exclusive
V_BAND_HIGH = 20  # inclusive


@dataclass(frozen=True)
class TokenizerConfig:
    l: int
    v: int
    seed: int = 0
    kmeans_iters: int = 100
    restarts: int = 8

    def __post_init__(self) -> None:
        if self.l < 1:
            raise ValueError(f"code length l must be >= 1, got {self.l}")
        if self.v < 2:
            raise ValueError(f"alphabet size v must be >= 2, got {self.v}")
        if self.kmeans_iters < 1:
            raise ValueError("kmeans_iters must be >= 1")
        if self.restarts < 1:
            raise ValueError("restarts must be >= 1")


def cosine_objective(points: np.ndarray, assign: np.ndarray, centroids: np.ndarray) -> float:
    """Total cosine similarity of points to their assigned centroids."""
    return float(np.sum(points * centroids[assign]))


def _seed_centroids(points: np.ndarray, k: int, rng: np.random.Generator) -> np.ndarray:
    """k-means++-style seeding with cosine distance weights."""
    n = points.shape[0]
    chosen = [int(rng.integers(n))]
    min_dist = 1.0 - points @ points[chosen[0]]
    for _ in range(1, k):
        weights = np.maximum(min_dist, 0.0) ** 2
        total = weights.sum()
        if total <= 0.0:
            # All remaining points coincide with a chosen centroid; fall
            # back to uniform choice among the rest.
            weights = np.ones(n)
            weights[chosen] = 0.0
            total = weights.sum()
        nxt = int(rng.choice(n, p=weights / total))
        chosen.append(nxt)
        min_dist = np.minimum(min_dist, 1.0 - points @ points[nxt])
    return points[chosen].copy()


def _repair_cluster(points: np.ndarray, centroid: np.ndarray) -> np.ndarray:
    """Reseed a dead cluster at the point farthest (in cosine) from it."""
    far = int(np.argmin(points @ centroid))
    return points[far].copy()


def spherical_kmeans(
    points: np.ndarray,
    k: int,
    iters: int = 100,
    restarts: int = 8,
    seed=0,
) -> tuple[np.ndarray, np.ndarray]:
    """Lloyd iterations with cosine similarity on unit vectors.

    Returns ``(assignment, centroids)`` where assignment maps each point to
    a cluster in [0, k) and centroids are unit vectors.  The best of
    ``restarts`` seeded runs (by total cosine similarity) is kept.  Empty
    clusters and zero-norm centroid means are repaired by reseeding at the
    point farthest from the old centroid.  ``k > n`` is treated as k = n.
    """
    points = np.asarray(points, dtype=np.float64)
    if points.ndim != 2 or points.shape[0] < 1:
        raise ValueError("need a non-empty (n, d) array of points")
    if k < 1:
        raise ValueError(f"cluster count k must be >= 1, got {k}")
    n = points.shape[0]
    k = min(k, n)

    if k == n:
        return np.arange(n), points.copy()

    root = np.random.default_rng(seed)
    best: tuple[float, np.ndarray, np.ndarray] | None = None
    for _ in range(restarts):
        rng = np.random.default_rng(root.integers(2**63))
        centroids = _seed_centroids(points, k, rng)
        assign = np.full(n, -1)
        for _ in range(iters):
            sims = points @ centroids.T
            new_assign = np.argmax(sims, axis=1)
            if np.array_equal(new_assign, assign):
                break
            assign = new_assign
            for c in range(k):
                members = points[assign == c]
                if members.shape[0] == 0:
                    centroids[c] = _repair_cluster(points, centroids[c])
                    continue
                mean = members.mean(axis=0)
                norm = np.linalg.norm(mean)
                if norm < 1e-12:
                    centroids[c] = _repair_cluster(members, centroids[c])
                else:
                    centroids[c] = mean / norm
        obj = cosine_objective(points, assign, centroids)
        if best is None or obj > best[0]:
            best = (obj, assign, centroids)
    assert best is not None
    return best[1], best[2]


@dataclass
class TreeNode:
    """One node of the code tree.

    ``members`` are identity indices below the node.  Internal nodes hold a
    ``children`` map keyed by token value; deepest nodes instead hold
    ``leaf_order``, the member identities ranked by similarity to the node
    centroid (rank == final token value).
    """

    depth: int
    centroid: np.ndarray
    members: np.ndarray
    children: dict[int, "TreeNode"] = field(default_factory=dict)
    leaf_order: np.ndarray | None = None


@dataclass
class CodeTree:
    l: int
    v: int
    m: int
    root: TreeNode

    def codes(self) -> dict[int, tuple[int, ...]]:
        return assign_codes(self)

    def nodes(self):
        """Yield (path, node) pairs in depth-first order."""
        stack = [((), self.root)]
        while stack:
            path, node = stack.pop()
            yield path, node
            for token in sorted(node.children, reverse=True):
                stack.append((path + (token,), node.children[token]))


def _safe_centroid(points: np.ndarray) -> np.ndarray:
    mean = points.mean(axis=0)
    norm = np.linalg.norm(mean)
    if norm < 1e-12:
        return points[0].copy()
    return mean / norm


def _rebalance(
    points: np.ndarray,
    assign: np.ndarray,
    centroids: np.ndarray,
    cap: int,
) -> np.ndarray:
    """Move points out of over-capacity clusters into the closest open ones.

    Greedy: repeatedly move the (point, open cluster) pair of maximum
    cosine similarity among points in overfull clusters.  Feasibility holds
    because the caller guarantees n <= k * cap.
    """
    assign = assign.copy()
    k = centroids.shape[0]
    counts = np.bincount(assign, minlength=k)
    sims = points @ centroids.T
    while True:
        over = np.flatnonzero(counts > cap)
        if over.size == 0:
            return assign
        open_ = np.flatnonzero(counts < cap)
        movable = np.isin(assign, over)
        cand = sims[np.ix_(movable, open_)]
        flat = int(np.argmax(cand))
        pi, ci = np.unravel_index(flat, cand.shape)
        point = np.flatnonzero(movable)[pi]
        target = open_[ci]
        counts[assign[point]] -= 1
        counts[target] += 1
        assign[point] = target


def _canonical_cluster_order(assign: np.ndarray, k: int) -> list[int]:
    """Order the non-empty clusters by their smallest member index.

    Lloyd iterations can leave clusters empty even after rebalancing (they
    are legal spill targets but may go unused); those get no child token.
    The surviving clusters are relabeled deterministically so the tree does
    not depend on the arbitrary cluster numbering of a particular k-means
    run.
    """
    counts = np.bincount(assign, minlength=k)
    nonempty = [c for c in range(k) if counts[c] > 0]
    return sorted(nonempty, key=lambda c: int(np.flatnonzero(assign == c)[0]))


def build_code_tree(h: np.ndarray, cfg: TokenizerConfig) -> CodeTree:
    """Cluster code vectors hierarchically and return the code tree.

    Raises
    ------
    ValueError
        If the code space is too small (``v ** l < m``).
    """
    h = np.asarray(h, dtype=np.float64)
    if h.ndim != 2 or h.shape[0] < 1:
        raise ValueError("need a non-empty (m, d) array of code vectors")
    m = h.shape[0]
    if cfg.v**cfg.l < m:
        raise ValueError(
            f"code space too small: v={cfg.v}, l={cfg.l} gives "
            f"{cfg.v ** cfg.l} codes for m={m} identities"
        )

    def split(node: TreeNode, path: tuple[int, ...]) -> None:
        members = node.members
        if node.depth == cfg.l - 1:
            sims = h[members] @ node.centroid
            # Rank by similarity, descending; ties resolved by identity id.
            order = np.lexsort((members, -sims))
            node.leaf_order = members[order]
            return
        sub = h[members]
        k = min(cfg.v, members.size)
        seed = np.random.SeedSequence(cfg.seed, spawn_key=path)
        assign, centroids = spherical_kmeans(
            sub, k, iters=cfg.kmeans_iters, restarts=cfg.restarts, seed=seed
        )
        k = centroids.shape[0]
        cap = cfg.v ** (cfg.l - node.depth - 1)
        assign = _rebalance(sub, assign, centroids, cap)
        for token, cluster in enumerate(_canonical_cluster_order(assign, k)):
            mask = assign == cluster
            child = TreeNode(
                depth=node.depth + 1,
                centroid=centroids[cluster],
                members=members[mask],
            )
            node.children[token] = child
            split(child, path + (token,))

    root = TreeNode(depth=0, centroid=_safe_centroid(h), members=np.arange(m))
    split(root, ())
    return CodeTree(l=cfg.l, v=cfg.v, m=m, root=root)


def assign_codes(tree: CodeTree) -> dict[int, tuple[int, ...]]:
    """Identity -> code map read off the tree; always injective."""
    codes: dict[int, tuple[int, ...]] = {}

    def walk(node: TreeNode, prefix: tuple[int, ...]) -> None:
        if node.leaf_order is not None:
            for rank, ident in enumerate(node.leaf_order):
                codes[int(ident)] = prefix + (rank,)
            return
        for token, child in node.children.items():
            walk(child, prefix + (token,))

    walk(tree.root, ())
    if len(codes) != tree.m:
        raise AssertionError("tree does not cover every identity exactly once")
    return codes


def decode(tree: CodeTree, code) -> int | None:
    """Map a code back to its identity, or ``None`` if no identity uses it.

    Token values outside [0, v) or a wrong code length are contract
    violations and raise; a well-formed but unpopulated code returns None.
    """
    code = tuple(int(c) for c in code)
    if len(code) != tree.l:
        raise ValueError(f"code length {len(code)} != l={tree.l}")
    if any(c < 0 or c >= tree.v for c in code):
        raise ValueError(f"token out of range [0, {tree.v}): {code}")
    node = tree.root
    for token in code[:-1]:
        child = node.children.get(token)
        if child is None:
            return None
        node = child
    if node.leaf_order is None:
        return None
    last = code[-1]
    if last >= node.leaf_order.size:
        return None
    return int(node.leaf_order[last])


@dataclass(frozen=True)
class CodeShape:
    """A (length, alphabet) choice; ``in_band`` is False when no alphabet
    in the preferred band (V_BAND_LOW, V_BAND_HIGH] could reach m codes."""

    l: int
    v: int
    in_band: bool


def _min_alphabet(m: int, l: int) -> int:
    """Smallest v with v ** l >= m (exact integer arithmetic)."""
    v = max(2, math.ceil(m ** (1.0 / l)))
    while v > 2 and (v - 1) ** l >= m:
        v -= 1
    while v**l < m:
        v += 1
    return v


def suggest_length(m: int) -> CodeShape:
    """Pick an economical code shape for m identities.

    Scans code lengths l >= 2 and keeps the shortest whose minimal
    alphabet lands in the preferred band; if none lands there the closest
    miss is returned with ``in_band=False``.  Longer codes with tiny
    alphabets and shorter codes with huge alphabets both waste classifier
    parameters, so the band favours moderate alphabets.
    """
    if m < 2:
        raise ValueError(f"need at least two identities, got m={m}")
    l_max = max(2, math.ceil(math.log2(m)))
    best_miss: tuple[int, int, int] | None = None  # (distance, l, v)
    for l in range(2, l_max + 1):
        v = _min_alphabet(m, l)
        if V_BAND_LOW < v <= V_BAND_HIGH:
            return CodeShape(l=l, v=v, in_band=True)
        dist = (V_BAND_LOW + 1 - v) if v <= V_BAND_LOW else (v - V_BAND_HIGH)
        if best_miss is None or dist < best_miss[0]:
            best_miss = (dist, l, v)
    assert best_miss is not None
    return CodeShape(l=best_miss[1], v=best_miss[2], in_band=False)
