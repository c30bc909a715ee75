"""Synthetic identity data and embedding sources.

Identities are unit prototype vectors; a sample of identity y is the
prototype plus isotropic Gaussian noise, renormalized.  The noise scale is
1/dispersion, so higher dispersion means tighter classes and
``dispersion=inf`` collapses every sample onto its prototype.  Long-tail
datasets give the first ceil(head_fraction * m) identities ``head_count``
samples and the rest ``tail_count``.

An :class:`EmbeddingProvider` resolves sample ids to d-dimensional
embedding vectors, either straight from the synthetic features or from an
external file, so downstream code never cares where embeddings come from.
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

from .sphere import normalize

_ZERO_NORM_EPS = 1e-12


@dataclass
class IdentitySampler:
    """Unit prototypes plus a dispersion that controls sample spread."""

    prototypes: np.ndarray
    dispersion: float

    def __post_init__(self) -> None:
        self.prototypes = np.asarray(self.prototypes, dtype=np.float64)
        if self.prototypes.ndim != 2:
            raise ValueError("prototypes must be an (m, d) array")
        if self.dispersion <= 0:
            raise ValueError(f"dispersion must be positive, got {self.dispersion}")

    @property
    def m(self) -> int:
        return self.prototypes.shape[0]

    @property
    def d(self) -> int:
        return self.prototypes.shape[1]

    @property
    def sigma(self) -> float:
        return 0.0 if math.isinf(self.dispersion) else 1.0 / self.dispersion

    def sample(self, identity: int, count: int, rng: np.random.Generator) -> np.ndarray:
        """Draw ``count`` unit samples around one prototype."""
        if not 0 <= identity < self.m:
            raise ValueError(f"identity {identity} out of range for m={self.m}")
        proto = self.prototypes[identity]
        noise = self.sigma * rng.standard_normal((count, self.d))
        return normalize(proto + noise)


def gen_identities(m: int, d: int, dispersion: float, seed: int = 0) -> IdentitySampler:
    """Random unit prototypes for m identities in d dimensions."""
    if m < 1 or d < 1:
        raise ValueError(f"need m >= 1 and d >= 1, got m={m}, d={d}")
    rng = np.random.default_rng(seed)
    protos = normalize(rng.standard_normal((m, d)))
    return IdentitySampler(prototypes=protos, dispersion=dispersion)


@dataclass
class LongTailDataset:
    """Labeled samples with a head/tail count split.

    ``sample_ids[i]`` names row i stably (ids are assigned after the
    deterministic shuffle, so row order and ids always agree).
    """

    features: np.ndarray
    labels: np.ndarray
    sample_ids: np.ndarray
    counts: np.ndarray
    head_fraction: float
    head_count: int
    tail_count: int

    @property
    def m(self) -> int:
        return self.counts.shape[0]

    @property
    def n(self) -> int:
        return self.labels.shape[0]

    @property
    def n_head(self) -> int:
        return int(math.ceil(self.head_fraction * self.m))


def sample_longtail(
    sampler: IdentitySampler,
    head_fraction: float,
    head_count: int,
    tail_count: int,
    seed: int = 0,
) -> LongTailDataset:
    """Draw a long-tail labeled dataset and shuffle it deterministically."""
    if not 0.0 <= head_fraction <= 1.0:
        raise ValueError(f"head_fraction must be in [0, 1], got {head_fraction}")
    if tail_count < 1:
        raise ValueError(f"tail_count must be >= 1, got {tail_count}")
    if head_count < tail_count:
        raise ValueError(
            f"head_count ({head_count}) must be >= tail_count ({tail_count})"
        )
    m = sampler.m
    n_head = int(math.ceil(head_fraction * m))
    counts = np.where(np.arange(m) < n_head, head_count, tail_count)

    rng = np.random.default_rng(seed)
    feats = np.concatenate(
        [sampler.sample(y, counts[y], rng) for y in range(m)], axis=0
    )
    labels = np.repeat(np.arange(m), counts)
    perm = rng.permutation(feats.shape[0])
    return LongTailDataset(
        features=feats[perm],
        labels=labels[perm],
        sample_ids=np.arange(feats.shape[0]),
        counts=counts,
        head_fraction=head_fraction,
        head_count=head_count,
        tail_count=tail_count,
    )


class EmbeddingProvider:
    """Resolves sample ids to embedding vectors.

    Construct with :meth:`from_features` (synthetic pipeline: the features
    already are the embeddings) or :meth:`from_arrays` / file readers in
    :mod:`spherecode.fileio` for externally computed embeddings.
    """

    def __init__(self, ids: np.ndarray, vectors: np.ndarray):
        vectors = np.asarray(vectors, dtype=np.float64)
        ids = np.asarray(ids)
        if ids.shape[0] != vectors.shape[0]:
            raise ValueError("ids and vectors disagree on sample count")
        self._index = {int(s): i for i, s in enumerate(ids)}
        if len(self._index) != ids.shape[0]:
            raise ValueError("duplicate sample ids in embedding source")
        self._vectors = vectors

    @classmethod
    def from_features(cls, dataset: LongTailDataset) -> "EmbeddingProvider":
        return cls(dataset.sample_ids, dataset.features)

    @property
    def d(self) -> int:
        return self._vectors.shape[1]

    def embed(self, sample_ids) -> np.ndarray:
        """Embedding rows aligned with ``sample_ids``; unknown ids raise."""
        rows = np.empty(len(sample_ids), dtype=np.intp)
        for i, s in enumerate(sample_ids):
            try:
                rows[i] = self._index[int(s)]
            except KeyError:
                raise ValueError(f"no embedding for sample id {int(s)}") from None
        return self._vectors[rows]


def per_class_mean_init(
    provider: EmbeddingProvider, dataset: LongTailDataset
) -> np.ndarray:
    """Initial code vectors: normalized mean embedding of each identity.

    Raises
    ------
    ValueError
        If some identity has no samples or its mean embedding has
        (near-)zero norm, naming the identity.
    """
    emb = provider.embed(dataset.sample_ids)
    m = dataset.m
    sums = np.zeros((m, emb.shape[1]))
    np.add.at(sums, dataset.labels, emb)
    counts = np.bincount(dataset.labels, minlength=m)
    if (counts == 0).any():
        empty = int(np.flatnonzero(counts == 0)[0])
        raise ValueError(f"identity {empty} has no samples")
    means = sums / counts[:, None]
    norms = np.linalg.norm(means, axis=1)
    if (norms < _ZERO_NORM_EPS).any():
        bad = int(np.flatnonzero(norms < _ZERO_NORM_EPS)[0])
        raise ValueError(
            f"identity {bad} has a degenerate (zero-norm) mean embedding"
        )
    return means / norms[:, None]
