"""Synthetic generators, CSV ingestion and client partitioners."""

from __future__ import annotations

import csv
from dataclasses import dataclass
from pathlib import Path
from typing import Sequence

import numpy as np

from fedmr.errors import ContractError, DataFormatError, PartitionError

CIRCLE_CENTERS = ((1.0, 1.0), (1.0, -1.0), (-1.0, 1.0), (-1.0, -1.0))
MOTIVATION_CENTERS = ((1.0, 0.0), (0.0, np.sqrt(3.0)), (0.0, -np.sqrt(3.0)))


def derive_seed(seed: int, *keys: int) -> int:
    """Independent 32-bit seed for the stream identified by ``(seed, *keys)``."""
    return int(np.random.SeedSequence([int(seed), *map(int, keys)]).generate_state(1)[0])


@dataclass(frozen=True)
class Dataset:
    features: np.ndarray
    labels: np.ndarray
    num_classes: int

    def __post_init__(self):
        x = np.asarray(self.features, dtype=np.float64)
        y = np.asarray(self.labels, dtype=np.int64)
        if x.ndim != 2 or y.shape != (x.shape[0],):
            raise ContractError(f"features {x.shape} and labels {y.shape} disagree")
        if x.shape[0] < 1:
            raise ContractError("a dataset needs at least one sample")
        if np.any(y < 0) or np.any(y >= self.num_classes):
            raise ContractError(f"labels must lie in [0, {self.num_classes})")
        object.__setattr__(self, "features", x)
        object.__setattr__(self, "labels", y)

    def __len__(self) -> int:
        return len(self.labels)

    @property
    def input_dim(self) -> int:
        return self.features.shape[1]

    def class_counts(self) -> np.ndarray:
        return np.bincount(self.labels, minlength=self.num_classes)

    def subset(self, index) -> "Dataset":
        index = np.asarray(index, dtype=np.intp)
        return Dataset(self.features[index], self.labels[index], self.num_classes)


@dataclass(frozen=True)
class ClientShard:
    client_id: int
    indices: np.ndarray
    class_set: frozenset[int]

    def __len__(self) -> int:
        return len(self.indices)


def _shard(client_id: int, indices, labels: np.ndarray) -> ClientShard:
    indices = np.sort(np.asarray(indices, dtype=np.intp))
    return ClientShard(client_id, indices, frozenset(int(c) for c in np.unique(labels[indices])))


# ------------------------------------------------------------------ generators


def _uniform_disk(rng: np.random.Generator, n: int, center, radius: float) -> np.ndarray:
    r = radius * np.sqrt(rng.uniform(size=n))
    theta = rng.uniform(0.0, 2.0 * np.pi, size=n)
    return np.asarray(center, dtype=np.float64) + np.column_stack([r * np.cos(theta), r * np.sin(theta)])


def gen_disks(centers: Sequence[Sequence[float]], radius: float, n_per_class: int, seed: int) -> Dataset:
    if n_per_class < 1:
        raise ContractError("n_per_class must be >= 1")
    rng = np.random.default_rng(seed)
    x = np.vstack([_uniform_disk(rng, n_per_class, c, radius) for c in centers])
    y = np.repeat(np.arange(len(centers)), n_per_class)
    return Dataset(x, y, len(centers))


def gen_circles(
    centers: Sequence[Sequence[float]] = CIRCLE_CENTERS,
    radius: float = 0.5,
    n_per_class: int = 5000,
    seed: int = 0,
) -> Dataset:
    """Four uniform disks of radius 0.5 around (±1, ±1); one class per disk."""
    return gen_disks(centers, radius, n_per_class, seed)


def gen_motivation(n_per_class: int = 1000, seed: int = 0) -> Dataset:
    """Three uniform disks of radius 1/2 centred at (1, 0), (0, √3), (0, −√3)."""
    return gen_disks(MOTIVATION_CENTERS, 0.5, n_per_class, seed)


# ----------------------------------------------------------------- partitions


@dataclass(frozen=True)
class PartitionSpec:
    kind: str  # "pcdd" | "dirichlet" | "iid"
    clients: int
    classes_per_client: int | None = None
    beta: float | None = None
    seed: int = 0

    def __post_init__(self):
        if self.clients < 1:
            raise PartitionError("need at least one client")
        if self.kind == "pcdd":
            if self.classes_per_client is None or self.classes_per_client < 1:
                raise PartitionError("pcdd needs classes_per_client >= 1")
        elif self.kind == "dirichlet":
            if self.beta is None or not self.beta > 0:
                raise PartitionError("dirichlet needs beta > 0")
        elif self.kind != "iid":
            raise PartitionError(f"unknown partition kind {self.kind!r}")

    @property
    def label(self) -> str:
        if self.kind == "pcdd":
            return f"P{self.clients}C{self.classes_per_client}"
        if self.kind == "dirichlet":
            return f"Dir({self.beta:g})x{self.clients}"
        return f"IIDx{self.clients}"


def pcdd_class_sets(num_classes: int, clients: int, per_client: int, seed: int) -> list[list[int]]:
    """Class ownership for a PρCς split.

    Classes are dealt out in order, ``per_client`` at a time, until every class
    is placed; clients left short then draw the remainder uniformly without
    replacement from the classes they do not yet hold.
    """
    if per_client > num_classes:
        raise PartitionError(f"each client cannot hold {per_client} of {num_classes} classes")
    if clients * per_client < num_classes:
        raise PartitionError(
            f"P{clients}C{per_client} cannot cover {num_classes} classes ({clients}*{per_client} < {num_classes})"
        )
    rng = np.random.default_rng(seed)
    owned = []
    for k in range(clients):
        start = k * per_client
        owned.append(list(range(start, min(start + per_client, num_classes))) if start < num_classes else [])
    for k in range(clients):
        missing = per_client - len(owned[k])
        if missing:
            pool = np.array([c for c in range(num_classes) if c not in owned[k]])
            owned[k].extend(int(c) for c in rng.choice(pool, size=missing, replace=False))
    return [sorted(s) for s in owned]


def partition_pcdd(ds: Dataset, clients: int, classes_per_client: int, seed: int = 0) -> list[ClientShard]:
    owned = pcdd_class_sets(ds.num_classes, clients, classes_per_client, seed)
    rng = np.random.default_rng(derive_seed(seed, 1))
    buckets: list[list[np.ndarray]] = [[] for _ in range(clients)]
    for c in range(ds.num_classes):
        owners = [k for k in range(clients) if c in owned[k]]
        members = rng.permutation(np.flatnonzero(ds.labels == c))
        # array_split hands the remainder to the first (lowest-id) owners
        for k, part in zip(owners, np.array_split(members, len(owners))):
            buckets[k].append(part)
    return [
        _shard(k, np.concatenate(b) if b else np.array([], dtype=np.intp), ds.labels) for k, b in enumerate(buckets)
    ]


def _largest_remainder(weights: np.ndarray, total: int) -> np.ndarray:
    raw = weights * total
    counts = np.floor(raw).astype(np.int64)
    short = total - int(counts.sum())
    if short:
        order = np.argsort(-(raw - counts), kind="stable")
        counts[order[:short]] += 1
    return counts


def partition_dirichlet(ds: Dataset, beta: float, clients: int, seed: int = 0) -> list[ClientShard]:
    if not beta > 0:
        raise PartitionError("beta must be positive")
    rng = np.random.default_rng(seed)
    buckets: list[list[np.ndarray]] = [[] for _ in range(clients)]
    for c in range(ds.num_classes):
        members = rng.permutation(np.flatnonzero(ds.labels == c))
        counts = _largest_remainder(rng.dirichlet(np.full(clients, beta)), len(members))
        for k, part in enumerate(np.split(members, np.cumsum(counts)[:-1])):
            buckets[k].append(part)
    return [_shard(k, np.concatenate(b), ds.labels) for k, b in enumerate(buckets)]


def partition_iid(ds: Dataset, clients: int, seed: int = 0) -> list[ClientShard]:
    rng = np.random.default_rng(seed)
    parts = np.array_split(rng.permutation(len(ds)), clients)
    return [_shard(k, p, ds.labels) for k, p in enumerate(parts)]


def partition(ds: Dataset, spec: PartitionSpec) -> list[ClientShard]:
    if spec.kind == "pcdd":
        return partition_pcdd(ds, spec.clients, spec.classes_per_client, spec.seed)
    if spec.kind == "dirichlet":
        return partition_dirichlet(ds, spec.beta, spec.clients, spec.seed)
    return partition_iid(ds, spec.clients, spec.seed)


def class_histogram(shards: Sequence[ClientShard], ds: Dataset) -> np.ndarray:
    """clients × classes sample counts."""
    return np.array([np.bincount(ds.labels[s.indices], minlength=ds.num_classes) for s in shards])


# ------------------------------------------------------------------------ CSV


def load_csv(path: str | Path) -> Dataset:
    """Read ``f1,...,fm,label`` rows after a header line."""
    path = Path(path)
    with path.open(newline="") as fh:
        rows = list(csv.reader(fh))
    rows = [(i + 1, r) for i, r in enumerate(rows) if any(cell.strip() for cell in r)]
    if not rows:
        raise DataFormatError(f"{path} is empty")
    (_, header), body = rows[0], rows[1:]
    if not body:
        raise DataFormatError(f"{path} has a header but no samples")
    width = len(header)
    if width < 2:
        raise DataFormatError("header needs at least one feature column and a label", line=1)
    feats = np.empty((len(body), width - 1))
    labels = np.empty(len(body), dtype=np.int64)
    for row, (line, cells) in enumerate(body):
        if len(cells) != width:
            raise DataFormatError(f"expected {width} fields, found {len(cells)}", line=line)
        try:
            feats[row] = [float(v) for v in cells[:-1]]
        except ValueError as exc:
            raise DataFormatError(f"non-numeric feature ({exc})", line=line) from None
        try:
            label = int(cells[-1])
        except ValueError:
            raise DataFormatError(f"label {cells[-1]!r} is not an integer", line=line) from None
        if label < 0:
            raise DataFormatError(f"negative label {label}", line=line)
        labels[row] = label
    if not np.all(np.isfinite(feats)):
        raise DataFormatError(f"{path} contains non-finite features")
    return Dataset(feats, labels, int(labels.max()) + 1)


def save_csv(ds: Dataset, path: str | Path) -> None:
    path = Path(path)
    with path.open("w", newline="") as fh:
        writer = csv.writer(fh)
        writer.writerow([f"f{i}" for i in range(ds.input_dim)] + ["label"])
        for x, y in zip(ds.features, ds.labels):
            writer.writerow([format(v, ".17g") for v in x] + [int(y)])
