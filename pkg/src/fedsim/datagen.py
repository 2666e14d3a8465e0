"""Synthetic datasets, non-IID partitioners, and their file formats.

Two partitioning schemes produce the client shards:

* ``lda_partition`` draws, for each class, a Dirichlet(alpha) proportion
  vector over clients and splits that class's samples accordingly. Small
  alpha concentrates classes on few clients; large alpha approaches a
  uniform split.
* ``frequency_partition`` is the greedy multi-label scheme: repeatedly take
  the most frequent category among unassigned items and hand all of its
  items to the currently smallest client.

File formats live at the bottom: a little-endian binary dataset container,
a JSON partition file, and a CSV export of the client-by-class count
matrix used for heatmaps.
"""

import json
import struct
from dataclasses import dataclass, field

import numpy as np

from .seeding import derive_seed


class DatasetFormatError(ValueError):
    """A dataset file violates the binary container format."""


class MalformedHeaderError(DatasetFormatError):
    pass


class TruncatedFileError(DatasetFormatError):
    pass


class PartitionError(ValueError):
    """A partition is invalid or cannot be constructed."""


class InvalidPartitionError(PartitionError):
    pass


class InfeasiblePartitionError(PartitionError):
    pass


class RetryExhaustedError(PartitionError):
    pass


@dataclass
class LabeledDataset:
    """Dense single-label dataset: features (n, d) float64, labels (n,) ints."""

    features: np.ndarray
    labels: np.ndarray
    num_classes: int

    def __post_init__(self):
        self.features = np.ascontiguousarray(self.features, dtype=np.float64)
        self.labels = np.ascontiguousarray(self.labels, dtype=np.int64)
        if self.features.ndim != 2:
            raise ValueError("features must be a (n, d) matrix")
        if self.labels.ndim != 1 or self.labels.shape[0] != self.features.shape[0]:
            raise ValueError("labels must be (n,) matching features")
        if self.num_samples < 1 or self.dim < 1:
            raise ValueError("dataset must have n >= 1 and d >= 1")
        if self.num_classes < 1:
            raise ValueError("num_classes must be >= 1")
        if self.labels.size and (self.labels.min() < 0 or self.labels.max() >= self.num_classes):
            raise ValueError("label out of range")

    @property
    def num_samples(self) -> int:
        return self.features.shape[0]

    @property
    def dim(self) -> int:
        return self.features.shape[1]

    def subset(self, indices) -> "LabeledDataset":
        idx = np.asarray(indices, dtype=np.int64)
        return LabeledDataset(self.features[idx], self.labels[idx], self.num_classes)


@dataclass
class MultiLabelDataset:
    """Items tagged with zero or more category ids (each id counted once per item)."""

    item_categories: list
    num_categories: int
    allow_empty_items: bool = False

    def __post_init__(self):
        self.item_categories = [frozenset(int(c) for c in cats) for cats in self.item_categories]
        if self.num_categories < 1:
            raise ValueError("num_categories must be >= 1")
        for i, cats in enumerate(self.item_categories):
            if any(c < 0 or c >= self.num_categories for c in cats):
                raise ValueError(f"item {i} has a category id out of range")
            if not cats and not self.allow_empty_items:
                raise ValueError(f"item {i} has no categories (allow_empty_items=False)")

    @property
    def num_items(self) -> int:
        return len(self.item_categories)


@dataclass
class Partition:
    """Disjoint assignment of sample indices to clients 0..num_clients-1."""

    num_clients: int
    assignments: dict = field(default_factory=dict)

    def __post_init__(self):
        if self.num_clients < 1:
            raise ValueError("num_clients must be >= 1")
        cleaned = {}
        for k in range(self.num_clients):
            idx = [int(i) for i in self.assignments.get(k, [])]
            if any(i < 0 for i in idx):
                raise InvalidPartitionError(f"client {k} has a negative index")
            if sorted(idx) != idx:
                idx = sorted(idx)
            if len(set(idx)) != len(idx):
                raise InvalidPartitionError(f"client {k} lists an index twice")
            cleaned[k] = idx
        extra = set(self.assignments) - set(cleaned)
        if extra:
            raise InvalidPartitionError(f"client ids out of range: {sorted(extra)}")
        self.assignments = cleaned

    def shard_sizes(self) -> list:
        return [len(self.assignments[k]) for k in range(self.num_clients)]


def validate_partition(p: Partition, num_samples: int, min_shard_size: int = 1) -> None:
    """Check conservation, disjointness, and the minimum shard size."""
    seen = set()
    for k in range(p.num_clients):
        shard = p.assignments[k]
        if len(shard) < min_shard_size:
            raise InvalidPartitionError(
                f"client {k} has {len(shard)} samples, below minimum {min_shard_size}"
            )
        for i in shard:
            if i >= num_samples:
                raise InvalidPartitionError(f"client {k} references index {i} >= n={num_samples}")
            if i in seen:
                raise InvalidPartitionError(f"index {i} assigned to more than one client")
            seen.add(i)
    if len(seen) != num_samples:
        raise InvalidPartitionError(
            f"partition covers {len(seen)} of {num_samples} samples"
        )


@dataclass(frozen=True)
class LdaConfig:
    alpha: float
    num_clients: int
    min_shard_size: int = 1
    seed: int = 0

    def __post_init__(self):
        if not self.alpha > 0:
            raise ValueError("alpha must be > 0")
        if self.num_clients < 1:
            raise ValueError("num_clients must be >= 1")
        if self.min_shard_size < 1:
            raise ValueError("min_shard_size must be >= 1")


@dataclass
class DistributionMatrix:
    """counts[k][c] = samples of class c held by client k."""

    counts: np.ndarray

    def __post_init__(self):
        self.counts = np.ascontiguousarray(self.counts, dtype=np.int64)
        if self.counts.ndim != 2:
            raise ValueError("counts must be a (K, C) matrix")
        if self.counts.size and self.counts.min() < 0:
            raise ValueError("counts must be non-negative")

    @property
    def num_clients(self) -> int:
        return self.counts.shape[0]

    @property
    def num_classes(self) -> int:
        return self.counts.shape[1]

    def zero_cell_fraction(self) -> float:
        return float(np.mean(self.counts == 0))


def generate_synthetic(num_classes: int, dim: int, samples_per_class: int,
                       class_separation: float, seed: int) -> LabeledDataset:
    """Balanced Gaussian blobs with unit variance.

    Class c is centered at a scaled basis vector a*e_c with
    a = class_separation*sqrt(dim)/sqrt(2), so every pair of class means sits
    at distance class_separation*sqrt(dim). Requires dim >= num_classes
    whenever the separation is positive.
    """
    if num_classes < 1 or dim < 1 or samples_per_class < 1:
        raise ValueError("num_classes, dim, samples_per_class must be >= 1")
    if class_separation < 0:
        raise ValueError("class_separation must be >= 0")
    if class_separation > 0 and dim < num_classes:
        raise ValueError("dim must be >= num_classes when class_separation > 0")
    rng = np.random.default_rng(seed)
    scale = class_separation * np.sqrt(dim) / np.sqrt(2.0)
    blocks = []
    for c in range(num_classes):
        mean = np.zeros(dim)
        if class_separation > 0:
            mean[c] = scale
        blocks.append(rng.standard_normal((samples_per_class, dim)) + mean)
    features = np.concatenate(blocks, axis=0)
    labels = np.repeat(np.arange(num_classes, dtype=np.int64), samples_per_class)
    return LabeledDataset(features, labels, num_classes)


def _largest_remainder(proportions: np.ndarray, total: int) -> np.ndarray:
    """Integer counts summing to ``total``, proportional with minimal bias."""
    raw = proportions * total
    base = np.floor(raw).astype(np.int64)
    short = total - int(base.sum())
    if short > 0:
        # hand the leftovers to the largest fractional parts, lowest index first
        frac = raw - base
        order = np.lexsort((np.arange(len(frac)), -frac))
        base[order[:short]] += 1
    return base


def lda_partition(ds: LabeledDataset, cfg: LdaConfig) -> Partition:
    """Per-class Dirichlet split over clients, retried until shards are big enough."""
    n = ds.num_samples
    if cfg.min_shard_size * cfg.num_clients > n:
        raise InfeasiblePartitionError(
            f"cannot give {cfg.num_clients} clients at least "
            f"{cfg.min_shard_size} of {n} samples"
        )
    k = cfg.num_clients
    class_indices = [np.flatnonzero(ds.labels == c) for c in range(ds.num_classes)]
    for attempt in range(100):
        rng = np.random.default_rng(derive_seed(cfg.seed, "lda", attempt))
        shards = [[] for _ in range(k)]
        for idx in class_indices:
            if idx.size == 0:
                continue
            proportions = rng.dirichlet(np.full(k, cfg.alpha))
            counts = _largest_remainder(proportions, idx.size)
            start = 0
            for client, count in enumerate(counts):
                shards[client].extend(idx[start:start + count].tolist())
                start += count
        if min(len(s) for s in shards) >= cfg.min_shard_size:
            return Partition(k, {i: sorted(s) for i, s in enumerate(shards)})
    raise RetryExhaustedError(
        f"no draw met min_shard_size={cfg.min_shard_size} in 100 attempts"
    )


def frequency_partition(ds: MultiLabelDataset, num_clients: int) -> Partition:
    """Greedy most-frequent-category assignment for multi-label data.

    Repeatedly: count each category over the unassigned items, take the most
    frequent one (ties go to the lowest category id), and assign every
    unassigned item carrying it to the client with the smallest shard (ties
    go to the lowest client id). Items with no categories are dealt out
    round-robin at the end, starting at client 0.
    """
    if num_clients < 1:
        raise ValueError("num_clients must be >= 1")
    if ds.num_items < num_clients:
        raise ValueError("need at least one item per client")
    unassigned = np.ones(ds.num_items, dtype=bool)
    shards = [[] for _ in range(num_clients)]
    while True:
        freq = np.zeros(ds.num_categories, dtype=np.int64)
        for i in np.flatnonzero(unassigned):
            for c in ds.item_categories[i]:
                freq[c] += 1
        if freq.max(initial=0) == 0:
            break
        category = int(np.argmax(freq))  # argmax favors the lowest id on ties
        items = [i for i in np.flatnonzero(unassigned) if category in ds.item_categories[i]]
        target = min(range(num_clients), key=lambda k: (len(shards[k]), k))
        shards[target].extend(int(i) for i in items)
        unassigned[items] = False
    for j, i in enumerate(np.flatnonzero(unassigned)):
        shards[j % num_clients].append(int(i))
    return Partition(num_clients, {k: sorted(s) for k, s in enumerate(shards)})


def distribution_matrix(ds: LabeledDataset, p: Partition) -> DistributionMatrix:
    """Client-by-class sample counts for a single-label dataset."""
    counts = np.zeros((p.num_clients, ds.num_classes), dtype=np.int64)
    for k in range(p.num_clients):
        idx = np.asarray(p.assignments[k], dtype=np.int64)
        if idx.size and idx.max() >= ds.num_samples:
            raise InvalidPartitionError(f"client {k} references an index past the dataset")
        counts[k] = np.bincount(ds.labels[idx], minlength=ds.num_classes)
    return DistributionMatrix(counts)


# Binary dataset container: magic, version, n, d, num_classes, padding.
_DATASET_MAGIC = b"FCVD"
_DATASET_VERSION = 1
_HEADER = struct.Struct("<4sHQQII")


def write_dataset(ds: LabeledDataset, path) -> None:
    with open(path, "wb") as f:
        f.write(_HEADER.pack(_DATASET_MAGIC, _DATASET_VERSION,
                             ds.num_samples, ds.dim, ds.num_classes, 0))
        f.write(ds.features.astype("<f8").tobytes(order="C"))
        f.write(ds.labels.astype("<u4").tobytes())


def read_dataset(path) -> LabeledDataset:
    with open(path, "rb") as f:
        data = f.read()
    if len(data) < _HEADER.size:
        raise TruncatedFileError(f"{path}: file shorter than the header")
    magic, version, n, d, num_classes, padding = _HEADER.unpack_from(data)
    if magic != _DATASET_MAGIC:
        raise MalformedHeaderError(f"{path}: bad magic {magic!r} at offset 0")
    if version != _DATASET_VERSION:
        raise MalformedHeaderError(f"{path}: unsupported version {version}")
    if padding != 0:
        raise MalformedHeaderError(f"{path}: non-zero padding field")
    if n < 1 or d < 1 or num_classes < 1:
        raise MalformedHeaderError(f"{path}: non-positive dimension in header")
    expected = _HEADER.size + n * d * 8 + n * 4
    if len(data) < expected:
        raise TruncatedFileError(f"{path}: expected {expected} bytes, found {len(data)}")
    if len(data) > expected:
        raise DatasetFormatError(f"{path}: {len(data) - expected} trailing bytes")
    offset = _HEADER.size
    features = np.frombuffer(data, dtype="<f8", count=n * d, offset=offset).reshape(n, d)
    offset += n * d * 8
    labels = np.frombuffer(data, dtype="<u4", count=n, offset=offset)
    if labels.size and labels.max() >= num_classes:
        raise DatasetFormatError(f"{path}: label out of range")
    return LabeledDataset(features.copy(), labels.astype(np.int64), num_classes)


def write_partition(p: Partition, path) -> None:
    doc = {
        "num_clients": p.num_clients,
        "assignments": {str(k): p.assignments[k] for k in range(p.num_clients)},
    }
    with open(path, "w", encoding="utf-8") as f:
        json.dump(doc, f, indent=2)
        f.write("\n")


def read_partition(path) -> Partition:
    with open(path, "r", encoding="utf-8") as f:
        try:
            doc = json.load(f)
        except json.JSONDecodeError as e:
            raise InvalidPartitionError(f"{path}: not valid JSON ({e})") from e
    if not isinstance(doc, dict) or "num_clients" not in doc or "assignments" not in doc:
        raise InvalidPartitionError(f"{path}: missing num_clients or assignments")
    k = doc["num_clients"]
    raw = doc["assignments"]
    if not isinstance(k, int) or not isinstance(raw, dict):
        raise InvalidPartitionError(f"{path}: malformed partition document")
    assignments = {}
    for key, idx in raw.items():
        try:
            client = int(key)
        except ValueError:
            raise InvalidPartitionError(f"{path}: client id {key!r} is not an integer") from None
        if not isinstance(idx, list) or any(not isinstance(i, int) for i in idx):
            raise InvalidPartitionError(f"{path}: client {key} indices must be integers")
        assignments[client] = idx
    if sorted(assignments) != list(range(k)):
        raise InvalidPartitionError(
            f"{path}: assignments must list every client 0..{k - 1} exactly once"
        )
    p = Partition(k, assignments)
    seen = set()
    for shard in p.assignments.values():
        for i in shard:
            if i in seen:
                raise InvalidPartitionError(f"{path}: index {i} assigned twice")
            seen.add(i)
    return p


def write_distribution_csv(m: DistributionMatrix, path) -> None:
    header = "client," + ",".join(f"class_{c}" for c in range(m.num_classes))
    lines = [header]
    for k in range(m.num_clients):
        lines.append(str(k) + "," + ",".join(str(int(v)) for v in m.counts[k]))
    with open(path, "w", encoding="utf-8", newline="\n") as f:
        f.write("\n".join(lines) + "\n")
