"""Datasets and per-epoch partitioning across workers.

CSV files hold ``d`` feature columns followed by one label column.  Labels
in files are 1-based (``1..K``) and become 0-based in memory.
"""

import csv
import hashlib
from dataclasses import dataclass

import numpy as np

from . import model
from .seeding import FEATURES, LABELS, PARTITION, substream


@dataclass(frozen=True)
class Dataset:
    X: np.ndarray
    y: np.ndarray
    K: int
    w_star: np.ndarray = None
    source: str = "synthetic"
    checksum: str = ""

    def __post_init__(self):
        X = np.array(self.X, dtype=np.float64)
        y = np.array(self.y, dtype=np.int64)
        if X.ndim != 2 or y.shape != (X.shape[0],):
            raise ValueError("X must be (S, d) and y must be (S,)")
        if y.size and (y.min() < 0 or y.max() >= self.K):
            raise ValueError(f"labels outside [0, {self.K})")
        if not np.all(np.isfinite(X)):
            raise ValueError("non-finite features")
        X.flags.writeable = False
        y.flags.writeable = False
        object.__setattr__(self, "X", X)
        object.__setattr__(self, "y", y)

    @property
    def S(self):
        return self.X.shape[0]

    @property
    def d(self):
        return self.X.shape[1]

    def __len__(self):
        return self.S

    def sample(self, i):
        return model.DatasetSample(self.X[i], int(self.y[i]))

    def subset(self, idx):
        return Dataset(self.X[idx], self.y[idx], self.K, self.w_star, self.source, self.checksum)

    def fingerprint(self):
        h = hashlib.sha256()
        h.update(np.ascontiguousarray(self.X).tobytes())
        h.update(np.ascontiguousarray(self.y).tobytes())
        h.update(str(self.K).encode())
        return h.hexdigest()


def draw_features(S, d, feature_scale, seed, purpose=FEATURES):
    return substream(seed, purpose).normal(size=(S, d)) * feature_scale


def draw_labels(X, w_star, spec, rng):
    """One uniform per row, mapped through the inverse CDF of sigma(x; w*)."""
    u = rng.random(X.shape[0])
    return model.inverse_cdf(model.predict_proba(X, w_star, spec), u)


def generate_synthetic(d, K, S, w_star, feature_scale, seed, spec=None):
    """Gaussian features, labels drawn from the model distribution at ``w_star``."""
    if S < 1:
        raise ValueError("S must be >= 1")
    spec = spec or model.ModelSpec.softmax(d, K)
    w_star = spec.check(w_star)
    X = draw_features(S, d, feature_scale, seed)
    y = draw_labels(X, w_star, spec, substream(seed, LABELS))
    return Dataset(X, y, K, w_star.copy(), "synthetic", "")


def save_csv(dataset, path, header=True):
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh)
        if header:
            w.writerow([f"x{i}" for i in range(dataset.d)] + ["label"])
        for x, y in zip(dataset.X, dataset.y):
            w.writerow([repr(float(v)) for v in x] + [int(y) + 1])


def load_csv(path, K):
    """Parse a dataset file; errors name the offending row (1-based line)."""
    with open(path, "rb") as fh:
        raw = fh.read()
    checksum = hashlib.sha256(raw).hexdigest()
    rows = list(csv.reader(raw.decode().splitlines()))
    start = 0
    if rows and rows[0]:
        try:
            [float(v) for v in rows[0]]
        except ValueError:
            start = 1
    X, y, width = [], [], None
    for lineno, row in enumerate(rows[start:], start=start + 1):
        if not row or all(not c.strip() for c in row):
            continue
        if width is None:
            width = len(row)
            if width < 2:
                raise ValueError(f"row {lineno}: need at least one feature and a label")
        if len(row) != width:
            raise ValueError(f"row {lineno}: expected {width} columns, got {len(row)}")
        try:
            feats = [float(v) for v in row[:-1]]
            label = int(row[-1])
        except ValueError as exc:
            raise ValueError(f"row {lineno}: {exc}") from None
        if not 1 <= label <= K:
            raise ValueError(f"row {lineno}: label {label} outside [1, {K}]")
        X.append(feats)
        y.append(label - 1)
    if not X:
        raise ValueError("no samples")
    return Dataset(np.array(X), np.array(y), K, None, f"csv:{path}", checksum)


@dataclass(frozen=True)
class PartitionPlan:
    epoch: int
    assignment: tuple  # one index array per worker


def repartition(dataset_size, M, epoch, seed):
    """Seeded permutation of ``range(S)`` split into M contiguous chunks.

    Chunk sizes differ by at most one; earlier workers get the extra sample.
    """
    S = int(dataset_size)
    if M < 1:
        raise ValueError("M must be >= 1")
    if M > S:
        raise ValueError(f"more workers ({M}) than samples ({S})")
    perm = substream(seed, PARTITION, epoch).permutation(S)
    return PartitionPlan(epoch, tuple(np.array_split(perm, M)))
