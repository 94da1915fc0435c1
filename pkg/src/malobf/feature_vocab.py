"""Vocabulary construction and binary vectorization of static app features.

Features come in three kinds (intents, permissions, API calls).  API call
strings are reduced to their class-path prefixes before counting, so that
``com.foo.bar.Baz.run`` contributes ``com.foo.bar.Baz``, ``com.foo.bar`` and so on.
"""

from __future__ import annotations

import json
from collections import Counter
from dataclasses import dataclass, field
from pathlib import Path
from typing import Iterable, Sequence

BLOCK_ORDER = ("intent", "permission", "api")
LABELS = ("benign", "malicious")

DEFAULT_MIN_SEGMENTS = 3
DEFAULT_K_API = 20_000


class ConfigError(ValueError):
    pass


@dataclass(frozen=True)
class RawSample:
    id: str
    label: str
    intents: tuple[str, ...] = ()
    permissions: tuple[str, ...] = ()
    apis: tuple[str, ...] = ()

    def __post_init__(self):
        if self.label not in LABELS:
            raise ValueError(f"invalid label {self.label!r}")
        # accept lists from callers, store tuples
        for name in ("intents", "permissions", "apis"):
            object.__setattr__(self, name, tuple(getattr(self, name)))

    def features(self, kind: str) -> tuple[str, ...]:
        return {"intent": self.intents, "permission": self.permissions, "api": self.apis}[kind]

    def to_json(self) -> dict:
        return {
            "id": self.id,
            "label": self.label,
            "intents": list(self.intents),
            "permissions": list(self.permissions),
            "apis": list(self.apis),
        }


@dataclass(frozen=True)
class FeatureVector:
    """Sorted, duplicate-free column indices of the features present in a sample."""

    indices: tuple[int, ...]
    dimension: int

    def __post_init__(self):
        idx = tuple(int(i) for i in self.indices)
        for a, b in zip(idx, idx[1:]):
            if a >= b:
                raise ValueError("indices must be strictly increasing")
        if idx and (idx[0] < 0 or idx[-1] >= self.dimension):
            raise ValueError(f"index out of range for dimension {self.dimension}")
        object.__setattr__(self, "indices", idx)

    @classmethod
    def from_indices(cls, indices: Iterable[int], dimension: int) -> "FeatureVector":
        return cls(tuple(sorted(set(indices))), dimension)

    def __len__(self):
        return len(self.indices)


@dataclass(frozen=True)
class VocabConfig:
    use_intents: bool = True
    use_permissions: bool = True
    use_apis: bool = True
    k_api: int = DEFAULT_K_API
    min_segments: int = DEFAULT_MIN_SEGMENTS

    def enabled(self) -> tuple[str, ...]:
        flags = (self.use_intents, self.use_permissions, self.use_apis)
        return tuple(kind for kind, on in zip(BLOCK_ORDER, flags) if on)


@dataclass(frozen=True)
class FeatureVocabulary:
    blocks: tuple[tuple[str, tuple[str, ...]], ...]
    min_segments: int = DEFAULT_MIN_SEGMENTS
    index_of: dict = field(init=False, repr=False, compare=False)

    def __post_init__(self):
        blocks = tuple((kind, tuple(names)) for kind, names in self.blocks)
        kinds = [kind for kind, _ in blocks]
        if any(k not in BLOCK_ORDER for k in kinds):
            raise ValueError(f"unknown block kind in {kinds}")
        if kinds != sorted(kinds, key=BLOCK_ORDER.index) or len(set(kinds)) != len(kinds):
            raise ValueError(f"blocks must follow the order {BLOCK_ORDER} without repeats")
        index_of = {}
        for kind, names in blocks:
            for name in names:
                if (kind, name) in index_of:
                    raise ValueError(f"duplicate {kind} feature {name!r}")
                index_of[(kind, name)] = len(index_of)
        object.__setattr__(self, "blocks", blocks)
        object.__setattr__(self, "index_of", index_of)

    @property
    def dimension(self) -> int:
        return len(self.index_of)

    def kinds(self) -> tuple[str, ...]:
        return tuple(kind for kind, _ in self.blocks)

    def block(self, kind: str) -> tuple[str, ...]:
        for k, names in self.blocks:
            if k == kind:
                return names
        return ()

    def to_json(self) -> dict:
        return {
            "blocks": [{"kind": kind, "features": list(names)} for kind, names in self.blocks],
            "min_segments": self.min_segments,
        }

    @classmethod
    def from_json(cls, obj: dict) -> "FeatureVocabulary":
        blocks = tuple((b["kind"], tuple(b["features"])) for b in obj["blocks"])
        return cls(blocks, int(obj.get("min_segments", DEFAULT_MIN_SEGMENTS)))

    def save(self, path) -> None:
        Path(path).write_text(json.dumps(self.to_json(), indent=1) + "\n", encoding="utf-8")

    @classmethod
    def load(cls, path) -> "FeatureVocabulary":
        return cls.from_json(json.loads(Path(path).read_text(encoding="utf-8")))


def truncate_api_call(call: str, min_segments: int = DEFAULT_MIN_SEGMENTS) -> set[str]:
    """Class-path prefixes of a dotted call, with the method name dropped.

    >>> sorted(truncate_api_call("a.b.c.d.m"))
    ['a.b.c', 'a.b.c.d']
    """
    if not call:
        raise ValueError("empty API call string")
    if min_segments < 1:
        raise ValueError("min_segments must be positive")
    parts = call.split(".")[:-1]
    return {".".join(parts[:n]) for n in range(min_segments, len(parts) + 1)}


def _sample_terms(sample: RawSample, kind: str, min_segments: int) -> set[str]:
    if kind == "api":
        terms = set()
        for call in sample.apis:
            terms |= truncate_api_call(call, min_segments)
        return terms
    return set(sample.features(kind))


def _rank(counts: Counter) -> list[str]:
    return sorted(counts, key=lambda name: (-counts[name], name))


def build_vocabulary(corpus: Sequence[RawSample], config: VocabConfig = VocabConfig()) -> FeatureVocabulary:
    """Count document frequencies per enabled block and order columns by them.

    Intent and permission blocks keep every observed string; the API block
    keeps the ``config.k_api`` most frequent prefixes.
    """
    kinds = config.enabled()
    if not kinds:
        raise ConfigError("at least one feature block must be enabled")
    if not corpus:
        raise ValueError("cannot build a vocabulary from an empty corpus")
    if config.k_api < 1 or config.min_segments < 1:
        raise ConfigError("k_api and min_segments must be positive")

    blocks = []
    for kind in kinds:
        counts: Counter = Counter()
        for sample in corpus:
            counts.update(_sample_terms(sample, kind, config.min_segments))
        ranked = _rank(counts)
        if kind == "api":
            ranked = ranked[: config.k_api]
        blocks.append((kind, tuple(ranked)))
    return FeatureVocabulary(tuple(blocks), config.min_segments)


def vectorize(sample: RawSample, vocab: FeatureVocabulary, min_segments: int | None = None) -> FeatureVector:
    if min_segments is None:
        min_segments = vocab.min_segments
    found = set()
    for kind in vocab.kinds():
        for term in _sample_terms(sample, kind, min_segments):
            col = vocab.index_of.get((kind, term))
            if col is not None:
                found.add(col)
    return FeatureVector(tuple(sorted(found)), vocab.dimension)
