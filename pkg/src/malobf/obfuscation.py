"""Benign-feature union attack and the augmentation stream used for hardening.

The attack never removes a feature from a malicious sample; it only adds
every feature of a randomly chosen benign donor app.
"""

from __future__ import annotations

from dataclasses import dataclass
from typing import Iterator

import numpy as np
import scipy.sparse as sp

from .dataset import BENIGN, MALICIOUS, Dataset, vectors_to_csr
from .feature_vocab import FeatureVector

POOL_SOURCES = ("test_pool", "train_pool")


@dataclass(frozen=True)
class BenignPool:
    vectors: tuple[FeatureVector, ...]
    source: str

    def __post_init__(self):
        object.__setattr__(self, "vectors", tuple(self.vectors))
        if self.source not in POOL_SOURCES:
            raise ValueError(f"pool source must be one of {POOL_SOURCES}")
        if not self.vectors:
            raise ValueError("benign pool is empty")
        if len({v.dimension for v in self.vectors}) != 1:
            raise ValueError("pool vectors disagree on dimension")

    @property
    def dimension(self) -> int:
        return self.vectors[0].dimension

    @classmethod
    def from_dataset(cls, data: Dataset, source: str) -> "BenignPool":
        return cls(tuple(v for v, y in zip(data.vectors, data.labels) if y == BENIGN), source)

    def __len__(self):
        return len(self.vectors)


def obfuscate_vector(malware: FeatureVector, benign: FeatureVector) -> FeatureVector:
    if malware.dimension != benign.dimension:
        raise ValueError("cannot union vectors of different dimension")
    if not benign.indices:
        return malware
    return FeatureVector(tuple(sorted(set(malware.indices).union(benign.indices))), malware.dimension)


def _donor_features(pool: BenignPool, rng: np.random.Generator, n_donors: int, donor_fraction: float) -> set[int]:
    feats: set[int] = set()
    for d in rng.integers(0, len(pool), size=n_donors):
        idx = pool.vectors[d].indices
        if donor_fraction < 1.0:
            keep = rng.random(len(idx)) < donor_fraction
            idx = [i for i, k in zip(idx, keep) if k]
        feats.update(idx)
    return feats


def _attack(vectors, labels, pool, rng, n_donors, donor_fraction) -> list[FeatureVector]:
    out = []
    for v, y in zip(vectors, labels):
        if y == MALICIOUS:
            if n_donors == 1 and donor_fraction >= 1.0:
                v = obfuscate_vector(v, pool.vectors[rng.integers(0, len(pool))])
            else:
                extra = _donor_features(pool, rng, n_donors, donor_fraction)
                v = FeatureVector(tuple(sorted(extra.union(v.indices))), v.dimension)
        out.append(v)
    return out


def _check_options(n_donors: int, donor_fraction: float) -> None:
    if n_donors < 1:
        raise ValueError("n_donors must be at least 1")
    if not 0.0 < donor_fraction <= 1.0:
        raise ValueError("donor_fraction must lie in (0, 1]")


def build_obfuscated_test_set(
    test: Dataset,
    pool: BenignPool,
    seed: int = 0,
    n_donors: int = 1,
    donor_fraction: float = 1.0,
) -> Dataset:
    """Union every malicious row with a donor drawn (with replacement) from ``pool``.

    Benign rows and all labels are passed through untouched, so the result has
    the same size and label vector as ``test``.  ``n_donors`` > 1 or
    ``donor_fraction`` < 1 switch to multi-donor / partial-donor variants.
    """
    if pool.dimension != test.dimension:
        raise ValueError("pool and test set disagree on dimension")
    _check_options(n_donors, donor_fraction)
    rng = np.random.default_rng(seed)
    vectors = _attack(test.vectors, test.labels, pool, rng, n_donors, donor_fraction)
    return Dataset(vectors, test.labels, test.dimension)


class HardenedBatchStream:
    """Per-epoch batches of the training set with freshly obfuscated malware.

    Every epoch reshuffles the rows and draws new donors; epoch ``e`` depends
    only on ``(seed, e)`` so a rerun reproduces the exact stream.
    """

    def __init__(self, train: Dataset, pool: BenignPool, batch_size: int, seed: int = 0,
                 n_donors: int = 1, donor_fraction: float = 1.0):
        if pool.source != "train_pool":
            raise ValueError("hardening pool must come from training data, got " + pool.source)
        if batch_size < 1:
            raise ValueError("batch_size must be at least 1")
        if pool.dimension != train.dimension:
            raise ValueError("pool and training set disagree on dimension")
        _check_options(n_donors, donor_fraction)
        self.train = train
        self.pool = pool
        self.batch_size = batch_size
        self.seed = seed
        self.n_donors = n_donors
        self.donor_fraction = donor_fraction

    def n_batches(self) -> int:
        return -(-len(self.train) // self.batch_size)

    def epoch_vectors(self, epoch: int):
        """Batches as ``(list of FeatureVector, labels)`` pairs."""
        rng = np.random.default_rng([self.seed, epoch])
        order = rng.permutation(len(self.train))
        labels = self.train.labels
        for start in range(0, len(order), self.batch_size):
            rows = order[start : start + self.batch_size]
            batch_labels = labels[rows]
            vectors = _attack((self.train.vectors[i] for i in rows), batch_labels, self.pool, rng,
                              self.n_donors, self.donor_fraction)
            yield vectors, batch_labels

    def batches(self, epoch: int) -> Iterator[tuple[sp.csr_matrix, np.ndarray]]:
        for vectors, labels in self.epoch_vectors(epoch):
            yield vectors_to_csr(vectors, self.train.dimension), labels

    def __iter__(self):
        epoch = 0
        while True:
            yield self.epoch_vectors(epoch)
            epoch += 1


def hardened_batch_stream(train: Dataset, pool: BenignPool, batch_size: int, seed: int = 0, **options):
    return HardenedBatchStream(train, pool, batch_size, seed, **options)
