"""Datasets: example records, vocabulary, pools, file io, splitting and the
synthetic long-tailed multi-label generator."""

from __future__ import annotations

import json
import math
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from .rng import stream


class DataError(ValueError):
    pass


@dataclass
class Example:
    """One data point: embedding + boolean surface features + optional label set.

    Labels are indices into the dataset's vocabulary. An example either has a
    non-empty label set or none at all.
    """

    id: str
    text: str | None
    embedding: np.ndarray
    surface_features: np.ndarray
    labels: frozenset[int] | None = None

    def __post_init__(self):
        self.embedding = np.asarray(self.embedding, dtype=np.float64)
        self.surface_features = np.asarray(self.surface_features, dtype=np.uint8)
        if self.labels is not None:
            self.labels = frozenset(int(j) for j in self.labels)
            if not self.labels:
                raise DataError(f"example {self.id!r}: label set present but empty")

    def __eq__(self, other):
        if not isinstance(other, Example):
            return NotImplemented
        return (
            self.id == other.id
            and self.text == other.text
            and np.array_equal(self.embedding, other.embedding)
            and np.array_equal(self.surface_features, other.surface_features)
            and self.labels == other.labels
        )


class LabelVocabulary:
    """Append-only ordered label names; indices of existing labels never move."""

    def __init__(self, names: list[str] | None = None):
        self._names: list[str] = []
        self._index: dict[str, int] = {}
        for name in names or []:
            self.add(name)

    def add(self, name: str) -> int:
        """Add a name (idempotent); returns its index."""
        if name in self._index:
            return self._index[name]
        self._names.append(name)
        self._index[name] = len(self._names) - 1
        return self._index[name]

    def index(self, name: str) -> int:
        if name not in self._index:
            raise DataError(f"unknown label name {name!r}")
        return self._index[name]

    def name(self, idx: int) -> str:
        return self._names[idx]

    def __contains__(self, name: str) -> bool:
        return name in self._index

    def __len__(self) -> int:
        return len(self._names)

    def __iter__(self):
        return iter(self._names)

    def __eq__(self, other):
        return isinstance(other, LabelVocabulary) and self._names == other._names

    @property
    def names(self) -> list[str]:
        return list(self._names)


@dataclass
class Dataset:
    """A vocabulary plus examples with consistent dimensions d (embedding)
    and m (surface features)."""

    vocab: LabelVocabulary
    examples: list[Example]
    d: int
    m: int

    def __post_init__(self):
        self._by_id = {ex.id: ex for ex in self.examples}
        if len(self._by_id) != len(self.examples):
            raise DataError("duplicate example ids")

    def by_id(self, ex_id: str) -> Example:
        if ex_id not in self._by_id:
            raise DataError(f"unknown example id {ex_id!r}")
        return self._by_id[ex_id]

    def ids(self) -> list[str]:
        return [ex.id for ex in self.examples]

    def validate(self):
        for ex in self.examples:
            if ex.embedding.shape != (self.d,):
                raise DataError(
                    f"example {ex.id!r}: embedding has {ex.embedding.shape[0]} "
                    f"entries, expected {self.d}"
                )
            if ex.surface_features.shape != (self.m,):
                raise DataError(
                    f"example {ex.id!r}: surface features have "
                    f"{ex.surface_features.shape[0]} entries, expected {self.m}"
                )
            if ex.labels is not None:
                bad = [j for j in ex.labels if not (0 <= j < len(self.vocab))]
                if bad:
                    raise DataError(f"example {ex.id!r}: label index {bad[0]} out of range")
        return self

    def __eq__(self, other):
        if not isinstance(other, Dataset):
            return NotImplemented
        return (
            self.vocab == other.vocab
            and self.d == other.d
            and self.m == other.m
            and self.examples == other.examples
        )


@dataclass
class Pool:
    """Partition of training ids into a labeled and an unlabeled set."""

    labeled: list[str] = field(default_factory=list)
    unlabeled: list[str] = field(default_factory=list)

    def validate(self, dataset: Dataset | None = None, all_ids: list[str] | None = None):
        lab, unl = set(self.labeled), set(self.unlabeled)
        if len(lab) != len(self.labeled) or len(unl) != len(self.unlabeled):
            raise DataError("pool contains duplicate ids")
        if lab & unl:
            raise DataError("labeled and unlabeled sets overlap")
        if all_ids is not None and lab | unl != set(all_ids):
            raise DataError("pool does not cover the training ids")
        if dataset is not None:
            for ex_id in self.labeled:
                if dataset.by_id(ex_id).labels is None:
                    raise DataError(f"labeled id {ex_id!r} carries no labels")
        return self


@dataclass
class SynthConfig:
    """Knobs for the synthetic long-tailed generator."""

    n_examples: int = 1000
    n_labels: int = 20
    embedding_dim: int = 64
    feature_dim: int = 20
    zipf_exponent: float = 1.5
    n_prototypes: int = 40
    noise_sigma: float = 0.15
    cooccurrence_rate: float = 0.3
    seed: int = 0

    def validate(self):
        if self.n_prototypes > self.n_examples:
            raise DataError("n_prototypes must be <= n_examples")
        if self.zipf_exponent <= 0:
            raise DataError("zipf_exponent must be positive")
        if self.noise_sigma < 0:
            raise DataError("noise_sigma must be non-negative")
        if not 0.0 <= self.cooccurrence_rate <= 1.0:
            raise DataError("cooccurrence_rate must be a probability")
        for name in ("n_examples", "n_labels", "embedding_dim", "feature_dim", "n_prototypes"):
            if getattr(self, name) < 1:
                raise DataError(f"{name} must be >= 1")
        return self


def _parse_record(line: str, lineno: int) -> dict:
    try:
        rec = json.loads(line)
    except json.JSONDecodeError as e:
        raise DataError(f"line {lineno}: malformed record ({e.msg})") from e
    if not isinstance(rec, dict):
        raise DataError(f"line {lineno}: record is not an object")
    for key in ("id", "embedding", "features"):
        if key not in rec:
            raise DataError(f"line {lineno}: missing field {key!r}")
    return rec


def load_dataset(path: str | Path, vocab_path: str | Path | None = None) -> Dataset:
    """Read a line-delimited dataset file.

    Records look like {"id", "text", "embedding", "features", "labels"} with
    label *names*. Dimensions are inferred from the first record and enforced
    on the rest. When `vocab_path` is given the vocabulary is fixed up front
    and unknown label names are an error; otherwise names are collected in
    order of first appearance.
    """
    path = Path(path)
    if not path.exists():
        raise DataError(f"dataset file not found: {path}")
    fixed_vocab = vocab_path is not None
    vocab = LabelVocabulary(load_vocabulary(vocab_path) if fixed_vocab else None)

    examples: list[Example] = []
    seen_ids: set[str] = set()
    d = m = None
    with open(path, encoding="utf-8") as fh:
        for lineno, line in enumerate(fh, start=1):
            if not line.strip():
                continue
            rec = _parse_record(line, lineno)
            ex_id = rec["id"]
            if not isinstance(ex_id, str):
                raise DataError(f"line {lineno}: id must be a string")
            if ex_id in seen_ids:
                raise DataError(f"line {lineno}: duplicate id {ex_id!r}")
            seen_ids.add(ex_id)
            emb = np.asarray(rec["embedding"], dtype=np.float64)
            feats = np.asarray(rec["features"], dtype=np.uint8)
            if d is None:
                d, m = emb.shape[0], feats.shape[0]
            if emb.shape != (d,):
                raise DataError(
                    f"line {lineno}: example {ex_id!r} embedding has "
                    f"{emb.shape[0]} entries, expected {d}"
                )
            if feats.shape != (m,):
                raise DataError(
                    f"line {lineno}: example {ex_id!r} features have "
                    f"{feats.shape[0]} entries, expected {m}"
                )
            label_names = rec.get("labels")
            labels = None
            if label_names is not None:
                if not label_names:
                    raise DataError(f"line {lineno}: example {ex_id!r} has an empty label list")
                if fixed_vocab:
                    labels = frozenset(vocab.index(name) for name in label_names)
                else:
                    labels = frozenset(vocab.add(name) for name in label_names)
            examples.append(Example(ex_id, rec.get("text"), emb, feats, labels))
    if not examples:
        raise DataError("empty dataset")
    return Dataset(vocab, examples, d, m).validate()


def save_dataset(dataset: Dataset, path: str | Path, strip_labels: bool = False):
    """Write the line-delimited format; floats round-trip exactly."""
    path = Path(path)
    with open(path, "w", encoding="utf-8") as fh:
        for ex in dataset.examples:
            rec = {
                "id": ex.id,
                "text": ex.text,
                "embedding": [float(v) for v in ex.embedding],
                "features": [int(v) for v in ex.surface_features],
                "labels": None
                if (ex.labels is None or strip_labels)
                else [dataset.vocab.name(j) for j in sorted(ex.labels)],
            }
            fh.write(json.dumps(rec) + "\n")


def load_vocabulary(path: str | Path) -> list[str]:
    names = [ln.rstrip("\n") for ln in open(path, encoding="utf-8") if ln.strip()]
    if len(set(names)) != len(names):
        raise DataError("vocabulary file contains duplicate names")
    return names


def save_vocabulary(vocab: LabelVocabulary, path: str | Path):
    with open(path, "w", encoding="utf-8") as fh:
        for name in vocab:
            fh.write(name + "\n")


def split(dataset: Dataset, ratio: float, seed: int) -> tuple[Dataset, Dataset]:
    """Deterministic train/test split: floor(ratio*n) train, remainder test."""
    if not 0.0 < ratio < 1.0:
        raise DataError(f"split ratio must be in (0, 1), got {ratio}")
    n = len(dataset.examples)
    perm = stream(seed, "split").permutation(n)
    n_train = math.floor(ratio * n)
    train_idx = sorted(perm[:n_train])
    test_idx = sorted(perm[n_train:])
    train = Dataset(dataset.vocab, [dataset.examples[i] for i in train_idx], dataset.d, dataset.m)
    test = Dataset(dataset.vocab, [dataset.examples[i] for i in test_idx], dataset.d, dataset.m)
    return train, test


def _zipf_weights(n: int, exponent: float) -> np.ndarray:
    ranks = np.arange(1, n + 1, dtype=np.float64)
    w = ranks ** (-exponent)
    return w / w.sum()


def synth_generate(config: SynthConfig) -> Dataset:
    """Long-tailed multi-label dataset around noisy prototypes.

    Prototypes live uniformly in [-1, 1]^d; each carries a primary label drawn
    from a Zipf law plus up to 3 co-occurring labels. Examples pick a
    prototype (Zipf-weighted), add Gaussian noise to its embedding and inherit
    its label set. Surface features are the label indicator vector resized to
    m with 5% bit flips.
    """
    config.validate()
    rng = stream(config.seed, "synth")
    d, m = config.embedding_dim, config.feature_dim

    prototypes = rng.uniform(-1.0, 1.0, size=(config.n_prototypes, d))
    label_w = _zipf_weights(config.n_labels, config.zipf_exponent)
    proto_labels: list[frozenset[int]] = []
    for _ in range(config.n_prototypes):
        labels = {int(rng.choice(config.n_labels, p=label_w))}
        for _ in range(3):
            if rng.random() < config.cooccurrence_rate:
                labels.add(int(rng.choice(config.n_labels, p=label_w)))
        proto_labels.append(frozenset(labels))

    proto_w = _zipf_weights(config.n_prototypes, config.zipf_exponent)
    vocab = LabelVocabulary([f"label_{k:02d}" for k in range(config.n_labels)])

    width = max(5, len(str(config.n_examples - 1)))
    examples = []
    for i in range(config.n_examples):
        p = int(rng.choice(config.n_prototypes, p=proto_w))
        emb = prototypes[p] + rng.normal(0.0, config.noise_sigma, size=d)
        labels = proto_labels[p]
        base = np.zeros(config.n_labels, dtype=np.uint8)
        base[list(labels)] = 1
        feats = np.zeros(m, dtype=np.uint8)
        k = min(m, config.n_labels)
        feats[:k] = base[:k]
        flips = rng.random(m) < 0.05
        feats = feats ^ flips.astype(np.uint8)
        examples.append(Example(f"ex-{i:0{width}d}", None, emb, feats, labels))
    return Dataset(vocab, examples, d, m).validate()


def label_frequencies(examples: list[Example]) -> dict[int, int]:
    """Count label occurrences; every example must be labeled."""
    if not examples:
        raise DataError("no examples to count")
    counts: dict[int, int] = {}
    for ex in examples:
        if ex.labels is None:
            raise DataError(f"example {ex.id!r} is unlabeled")
        for j in ex.labels:
            counts[j] = counts.get(j, 0) + 1
    return counts
