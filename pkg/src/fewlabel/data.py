"""Synthetic pools, the labeling oracle, and vector-space augmentations.

Each class is a mixture of Gaussian modes living in a random
low-dimensional subspace of the ambient space; the remaining directions
carry nuisance noise of the same scale. Labels sit behind an oracle that
marks and counts every reveal, so active-learning budgets are auditable
after the fact.
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

from .errors import BudgetError, ConfigError, DataError


@dataclass(frozen=True)
class SyntheticSpec:
    classes: int = 10
    modes_per_class: int = 2
    intrinsic_dim: int = 8
    ambient_dim: int = 32
    separation: float = 6.0
    noise: float = 1.0
    train_size: int = 2000
    test_size: int = 1000
    seed: int = 0

    def validate(self):
        if self.classes < 2:
            raise ConfigError("need at least 2 classes")
        if self.modes_per_class < 1:
            raise ConfigError("need at least 1 mode per class")
        if self.intrinsic_dim > self.ambient_dim:
            raise ConfigError("intrinsic_dim must not exceed ambient_dim")
        if self.train_size <= 0 or self.test_size <= 0:
            raise ConfigError("train_size and test_size must be positive")
        if self.noise < 0 or self.separation < 0:
            raise ConfigError("noise and separation must be non-negative")


@dataclass(frozen=True)
class AugPolicy:
    """Stochastic vector distortion: global scale, then jitter, then masking."""

    jitter: float = 0.0
    mask_frac: float = 0.0
    scale: float = 0.0

    def validate(self):
        if self.jitter < 0 or self.scale < 0:
            raise ConfigError("jitter and scale must be non-negative")
        if not 0.0 <= self.mask_frac <= 1.0:
            raise ConfigError("mask_frac must lie in [0, 1]")


def default_weak(spec: SyntheticSpec) -> AugPolicy:
    return AugPolicy(jitter=0.5 * spec.noise, mask_frac=0.0, scale=0.0)


def default_strong(spec: SyntheticSpec) -> AugPolicy:
    return AugPolicy(jitter=0.5 * spec.noise, mask_frac=0.25, scale=0.1)


class Dataset:
    """Feature pool with oracle-guarded labels and an access log.

    labeled_mask starts all-false; train labels are only readable for
    indices the oracle has already labeled. Test datasets are evaluation
    sets, exempt from budget accounting, so their labels are open.
    """

    def __init__(self, features: np.ndarray, labels: np.ndarray, split: str,
                 n_classes: int):
        if split not in ("train", "test"):
            raise ConfigError(f"unknown split: {split}")
        self.features = np.asarray(features, dtype=np.float64)
        self._labels = np.asarray(labels, dtype=np.int64)
        if self.features.shape[0] != self._labels.shape[0]:
            raise ConfigError("features and labels disagree on sample count")
        self.split = split
        self.n_classes = n_classes
        self.labeled_mask = np.zeros(len(self._labels), dtype=bool)
        self.access_log: list[tuple[str, tuple[int, ...]]] = []

    def __len__(self) -> int:
        return self.features.shape[0]

    @property
    def dim(self) -> int:
        return self.features.shape[1]

    @property
    def labeled_count(self) -> int:
        return int(self.labeled_mask.sum())

    def labeled_indices(self) -> np.ndarray:
        return np.flatnonzero(self.labeled_mask)

    def unlabeled_indices(self) -> np.ndarray:
        return np.flatnonzero(~self.labeled_mask)

    def oracle_label(self, indices) -> np.ndarray:
        """Reveal labels for `indices`, marking them against the budget."""
        idx = np.asarray(indices, dtype=np.int64).reshape(-1)
        if idx.size and (idx.min() < 0 or idx.max() >= len(self)):
            raise IndexError("oracle index out of range")
        if len(np.unique(idx)) != idx.size:
            raise BudgetError("duplicate indices in one oracle call")
        if np.any(self.labeled_mask[idx]):
            dup = idx[self.labeled_mask[idx]]
            raise BudgetError(f"index {int(dup[0])} already labeled")
        self.labeled_mask[idx] = True
        self.access_log.append(("label", tuple(int(i) for i in idx)))
        return self._labels[idx].copy()

    def labels_of(self, indices) -> np.ndarray:
        """Read labels of already-labeled items (or anything, on a test split)."""
        idx = np.asarray(indices, dtype=np.int64).reshape(-1)
        if self.split == "train":
            if not np.all(self.labeled_mask[idx]):
                raise BudgetError("reading a label that was never purchased")
            self.access_log.append(("read", tuple(int(i) for i in idx)))
        return self._labels[idx].copy()

    def class_indices(self) -> dict[int, np.ndarray]:
        """Index lists per true class; used only by stratified seeding."""
        self.access_log.append(("stratify", ()))
        return {c: np.flatnonzero(self._labels == c) for c in range(self.n_classes)}

    def fresh_copy(self) -> "Dataset":
        """Same pool, cleared labeling state; one grid cell per copy."""
        return Dataset(self.features, self._labels, self.split, self.n_classes)


def _balanced_labels(n: int, k: int, rng: np.random.Generator) -> np.ndarray:
    counts = [n // k + (1 if c < n % k else 0) for c in range(k)]
    labels = np.repeat(np.arange(k), counts)
    return labels[rng.permutation(n)]


def _mode_means(spec: SyntheticSpec, rng: np.random.Generator) -> np.ndarray:
    """Mode centers on the radius-`separation` sphere, placed sequentially.

    Each center is redrawn until it clears 6*noise from all earlier ones
    (low Bayes error between neighbouring modes); after 1000 tries the
    best candidate seen is kept so degenerate configs still terminate.
    """
    n_modes = spec.classes * spec.modes_per_class
    min_gap = 6.0 * spec.noise
    means = np.zeros((n_modes, spec.intrinsic_dim))
    for i in range(n_modes):
        best, best_gap = None, -1.0
        for _ in range(1000):
            v = rng.standard_normal(spec.intrinsic_dim)
            v = spec.separation * v / np.linalg.norm(v)
            gap = math.inf if i == 0 else float(
                np.sqrt(((means[:i] - v) ** 2).sum(axis=1)).min())
            if gap >= min_gap:
                best = v
                break
            if gap > best_gap:
                best, best_gap = v, gap
        means[i] = best
    return means


def generate(spec: SyntheticSpec) -> tuple[Dataset, Dataset]:
    """Build (train, test) pools; identical spec and seed give identical bits."""
    spec.validate()
    rng = np.random.default_rng(spec.seed)
    means = _mode_means(spec, rng)
    basis = rng.standard_normal((spec.ambient_dim, spec.ambient_dim))
    q, r = np.linalg.qr(basis)
    q *= np.sign(np.diag(r))

    def draw(n: int, split: str) -> Dataset:
        labels = _balanced_labels(n, spec.classes, rng)
        modes = rng.integers(spec.modes_per_class, size=n)
        signal = means[labels * spec.modes_per_class + modes]
        signal = signal + spec.noise * rng.standard_normal((n, spec.intrinsic_dim))
        nuisance = spec.noise * rng.standard_normal((n, spec.ambient_dim - spec.intrinsic_dim))
        raw = np.concatenate([signal, nuisance], axis=1)
        return Dataset(raw @ q.T, labels, split, spec.classes)

    return draw(spec.train_size, "train"), draw(spec.test_size, "test")


def augment(x: np.ndarray, policy: AugPolicy, rng: np.random.Generator) -> np.ndarray:
    """Scale, then jitter, then mask; rng draws always happen in that order."""
    x = np.asarray(x, dtype=np.float64)
    d = x.shape[-1]
    factor = rng.uniform(1.0 - policy.scale, 1.0 + policy.scale)
    out = x * factor
    out = out + policy.jitter * rng.standard_normal(d)
    n_masked = int(math.ceil(policy.mask_frac * d))
    masked = rng.choice(d, size=n_masked, replace=False)
    out[masked] = 0.0
    return out


def augment_batch(batch: np.ndarray, policy: AugPolicy,
                  rng: np.random.Generator) -> np.ndarray:
    """Row-by-row augmentation in row order (a fixed rng consumption order)."""
    return np.stack([augment(row, policy, rng) for row in np.atleast_2d(batch)])


def batches(dataset: Dataset, batch_size: int, rng: np.random.Generator,
            which: str = "all") -> list[np.ndarray]:
    """Seeded shuffle into index batches; the final short batch is kept."""
    if batch_size < 1:
        raise ConfigError("batch_size must be at least 1")
    if which == "all":
        pool = np.arange(len(dataset))
    elif which == "labeled":
        pool = dataset.labeled_indices()
    elif which == "unlabeled":
        pool = dataset.unlabeled_indices()
    else:
        raise ConfigError(f"unknown batch filter: {which}")
    if pool.size == 0:
        return []
    order = pool[rng.permutation(pool.size)]
    return [order[i:i + batch_size] for i in range(0, order.size, batch_size)]


def export_csv(path, train: Dataset, test: Dataset):
    """Debug dump: f0..f{d-1},label,split with full-precision floats."""
    d = train.dim
    header = ",".join([f"f{i}" for i in range(d)] + ["label", "split"])
    with open(path, "w") as fh:
        fh.write(header + "\n")
        for ds in (train, test):
            for row, label in zip(ds.features, ds._labels):
                vals = ",".join(format(v, ".17g") for v in row)
                fh.write(f"{vals},{int(label)},{ds.split}\n")


def import_csv(path) -> tuple[Dataset, Dataset]:
    with open(path) as fh:
        header = fh.readline().strip().split(",")
        if header[-2:] != ["label", "split"]:
            raise ConfigError("dataset CSV must end with label,split columns")
        d = len(header) - 2
        rows = {"train": [], "test": []}
        labels = {"train": [], "test": []}
        for line in fh:
            parts = line.strip().split(",")
            split = parts[-1]
            if split not in rows:
                raise ConfigError(f"unknown split in CSV: {split}")
            rows[split].append([float(v) for v in parts[:d]])
            labels[split].append(int(parts[-2]))
    if not rows["train"] or not rows["test"]:
        raise DataError("dataset CSV must contain both train and test rows")
    n_classes = max(max(labels["train"]), max(labels["test"])) + 1
    train = Dataset(np.array(rows["train"]), np.array(labels["train"]), "train", n_classes)
    test = Dataset(np.array(rows["test"]), np.array(labels["test"]), "test", n_classes)
    return train, test
