"""Sample files, vectorized datasets, the train/test split and synthetic corpora."""

from __future__ import annotations

import json
import math
from dataclasses import asdict, dataclass
from pathlib import Path
from typing import Sequence

import numpy as np
import scipy.sparse as sp

from .feature_vocab import (
    BLOCK_ORDER,
    LABELS,
    ConfigError,
    FeatureVector,
    FeatureVocabulary,
    RawSample,
    vectorize,
)

BENIGN, MALICIOUS = 0, 1


class Dataset:
    """Parallel lists of binary feature vectors and 0/1 labels (1 = malicious)."""

    def __init__(self, vectors: Sequence[FeatureVector], labels, dimension: int):
        self.vectors = tuple(vectors)
        self.labels = np.asarray(labels, dtype=np.int8).reshape(-1)
        self.dimension = int(dimension)
        if len(self.vectors) != len(self.labels):
            raise ValueError("vectors and labels differ in length")
        if not np.isin(self.labels, (BENIGN, MALICIOUS)).all():
            raise ValueError("labels must be 0 or 1")
        for v in self.vectors:
            if v.dimension != self.dimension:
                raise ValueError(f"vector dimension {v.dimension} != dataset dimension {self.dimension}")
            if not v.indices:
                raise ValueError("dataset rows must have at least one feature")
        self.labels.setflags(write=False)

    def __len__(self):
        return len(self.vectors)

    def __eq__(self, other):
        if not isinstance(other, Dataset):
            return NotImplemented
        return (
            self.dimension == other.dimension
            and self.vectors == other.vectors
            and np.array_equal(self.labels, other.labels)
        )

    def __repr__(self):
        n_mal = int(self.labels.sum())
        return f"Dataset(n={len(self)}, malicious={n_mal}, dimension={self.dimension})"

    def subset(self, rows) -> "Dataset":
        rows = np.asarray(rows, dtype=np.int64)
        return Dataset([self.vectors[i] for i in rows], self.labels[rows], self.dimension)

    def to_csr(self) -> sp.csr_matrix:
        return vectors_to_csr(self.vectors, self.dimension)

    @classmethod
    def from_samples(cls, samples: Sequence[RawSample], vocab: FeatureVocabulary) -> "Dataset":
        """Vectorize samples, discarding those left without any known feature."""
        vectors, labels = [], []
        for s in samples:
            v = vectorize(s, vocab)
            if v.indices:
                vectors.append(v)
                labels.append(MALICIOUS if s.label == "malicious" else BENIGN)
        return cls(vectors, labels, vocab.dimension)

    def save(self, path) -> None:
        with open(path, "w", encoding="utf-8", newline="\n") as fh:
            fh.write(json.dumps({"dimension": self.dimension}) + "\n")
            for v, y in zip(self.vectors, self.labels):
                fh.write(json.dumps({"label": int(y), "indices": list(v.indices)}) + "\n")

    @classmethod
    def load(cls, path) -> "Dataset":
        with open(path, encoding="utf-8") as fh:
            lines = [line for line in fh if line.strip()]
        if not lines:
            raise ValueError(f"{path}: missing header line")
        try:
            dimension = int(json.loads(lines[0])["dimension"])
        except (ValueError, KeyError, TypeError) as exc:
            raise ValueError(f"{path}: line 1: bad header") from exc
        vectors, labels = [], []
        for n, line in enumerate(lines[1:], start=2):
            try:
                row = json.loads(line)
                vectors.append(FeatureVector(tuple(row["indices"]), dimension))
                labels.append(int(row["label"]))
            except (ValueError, KeyError, TypeError) as exc:
                raise ValueError(f"{path}: line {n}: {exc}") from exc
        return cls(vectors, labels, dimension)


def vectors_to_csr(vectors: Sequence[FeatureVector], dimension: int, dtype=np.float64) -> sp.csr_matrix:
    lengths = np.fromiter((len(v.indices) for v in vectors), dtype=np.int64, count=len(vectors))
    indptr = np.zeros(len(vectors) + 1, dtype=np.int64)
    np.cumsum(lengths, out=indptr[1:])
    cols = np.fromiter((i for v in vectors for i in v.indices), dtype=np.int64, count=int(indptr[-1]))
    data = np.ones(len(cols), dtype=dtype)
    return sp.csr_matrix((data, cols, indptr), shape=(len(vectors), dimension))


def load_samples(path) -> list[RawSample]:
    samples = []
    with open(path, encoding="utf-8") as fh:
        for n, line in enumerate(fh, start=1):
            if not line.strip():
                continue
            try:
                obj = json.loads(line)
            except json.JSONDecodeError as exc:
                raise ValueError(f"line {n}: invalid JSON ({exc.msg})") from None
            if not isinstance(obj, dict):
                raise ValueError(f"line {n}: expected a JSON object")
            if obj.get("label") not in LABELS:
                raise ValueError(f"line {n}: invalid label")
            try:
                samples.append(
                    RawSample(
                        id=str(obj["id"]),
                        label=obj["label"],
                        intents=obj.get("intents", []),
                        permissions=obj.get("permissions", []),
                        apis=obj.get("apis", []),
                    )
                )
            except (KeyError, TypeError) as exc:
                raise ValueError(f"line {n}: missing or malformed field {exc}") from None
    return samples


def save_samples(samples: Sequence[RawSample], path) -> None:
    with open(path, "w", encoding="utf-8", newline="\n") as fh:
        for s in samples:
            fh.write(json.dumps(s.to_json()) + "\n")


def split_indices(n: int, test_fraction: float, seed: int) -> tuple[np.ndarray, np.ndarray]:
    if n < 2:
        raise ValueError("need at least two samples to split")
    if not 0.0 < test_fraction < 1.0:
        raise ValueError("test_fraction must lie in (0, 1)")
    perm = np.random.default_rng(seed).permutation(n)
    n_test = math.floor(test_fraction * n)
    return perm[n_test:], perm[:n_test]


def shuffle_split(data: Dataset, test_fraction: float = 0.3, seed: int = 0) -> tuple[Dataset, Dataset]:
    """Random (unstratified) split; the test side gets ``floor(test_fraction * N)`` rows."""
    train_idx, test_idx = split_indices(len(data), test_fraction, seed)
    return data.subset(train_idx), data.subset(test_idx)


# --- synthetic corpora -----------------------------------------------------


@dataclass(frozen=True)
class SyntheticConfig:
    n_benign: int = 6000
    n_malicious: int = 3000
    n_benign_features: int = 800
    n_malware_features: int = 120
    benign_draw_range: tuple[int, int] = (20, 60)
    mal_indicator_range: tuple[int, int] = (3, 8)
    mal_benign_draw_range: tuple[int, int] = (5, 15)
    seed: int = 0

    def __post_init__(self):
        for name in ("benign_draw_range", "mal_indicator_range", "mal_benign_draw_range"):
            object.__setattr__(self, name, tuple(int(x) for x in getattr(self, name)))

    def validate(self) -> None:
        if self.n_benign < 0 or self.n_malicious < 0 or self.n_benign + self.n_malicious == 0:
            raise ConfigError("sample counts must be non-negative and not both zero")
        if self.n_benign_features < 1 or self.n_malware_features < 1:
            raise ConfigError("feature pool sizes must be positive")
        for name in ("benign_draw_range", "mal_indicator_range", "mal_benign_draw_range"):
            lo, hi = getattr(self, name)
            if not 1 <= lo <= hi:
                raise ConfigError(f"{name} must satisfy 1 <= low <= high, got {(lo, hi)}")
        if self.mal_benign_draw_range[1] >= self.benign_draw_range[0]:
            raise ConfigError("malicious samples must draw fewer benign features than benign samples")
        if max(self.benign_draw_range[1], self.mal_benign_draw_range[1]) > self.n_benign_features:
            raise ConfigError("benign feature pool smaller than a draw range")
        if self.mal_indicator_range[1] > self.n_malware_features:
            raise ConfigError("malware feature pool smaller than the indicator range")

    def to_json(self) -> dict:
        d = asdict(self)
        for k, v in d.items():
            if isinstance(v, tuple):
                d[k] = list(v)
        return d


@dataclass(frozen=True)
class FeaturePools:
    """(kind, raw string) pairs of each pool, in popularity-rank order."""

    benign: tuple[tuple[str, str], ...]
    malware: tuple[tuple[str, str], ...]


def _pool(prefix: str, size: int) -> tuple[tuple[str, str], ...]:
    out = []
    for i in range(size):
        kind = BLOCK_ORDER[i % 3]
        if kind == "intent":
            name = f"intent.{prefix}.i{i:04d}"
        elif kind == "permission":
            name = f"permission.{prefix}.p{i:04d}"
        else:
            # class path with three segments plus a method name
            name = f"com.{prefix}.c{i:04d}.invoke"
        out.append((kind, name))
    return tuple(out)


def _zipf_weights(n: int) -> np.ndarray:
    w = 1.0 / np.arange(1, n + 1)
    return w / w.sum()


def _draw(rng, pool, weights, bounds) -> list[tuple[str, str]]:
    k = int(rng.integers(bounds[0], bounds[1] + 1))
    picked = rng.choice(len(pool), size=k, replace=False, p=weights)
    return [pool[i] for i in sorted(picked)]


def _assemble(sample_id: str, label: str, features) -> RawSample:
    by_kind = {kind: [] for kind in BLOCK_ORDER}
    for kind, name in features:
        by_kind[kind].append(name)
    return RawSample(sample_id, label, by_kind["intent"], by_kind["permission"], by_kind["api"])


def generate_synthetic(config: SyntheticConfig = SyntheticConfig()) -> tuple[list[RawSample], FeaturePools]:
    """Draw a corpus where malware carries a few indicator features and few benign ones.

    Benign apps draw many features from the benign pool; malicious apps draw a
    handful of malware indicators plus a small number of benign features.  Pool
    popularity is Zipf-like (weight 1/rank).
    """
    config.validate()
    rng = np.random.default_rng(config.seed)
    pools = FeaturePools(_pool("benign", config.n_benign_features), _pool("malware", config.n_malware_features))
    wb = _zipf_weights(len(pools.benign))
    wm = _zipf_weights(len(pools.malware))

    corpus = []
    for i in range(config.n_benign):
        feats = _draw(rng, pools.benign, wb, config.benign_draw_range)
        corpus.append(_assemble(f"syn-b{i:06d}", "benign", feats))
    for i in range(config.n_malicious):
        feats = _draw(rng, pools.malware, wm, config.mal_indicator_range)
        feats += _draw(rng, pools.benign, wb, config.mal_benign_draw_range)
        corpus.append(_assemble(f"syn-m{i:06d}", "malicious", feats))
    return corpus, pools
