"""Feature CSV loading, min-max normalization, Pearson channel ranking and splits."""
from __future__ import annotations

import csv
import json
import math
from dataclasses import dataclass, field, replace
from pathlib import Path

import numpy as np


class DataError(ValueError):
    pass


class UndefinedCorrelationError(ValueError):
    pass


@dataclass
class Normalization:
    """Per-channel (min, max) recorded on the training data."""

    mins: np.ndarray
    maxs: np.ndarray

    def apply(self, X) -> np.ndarray:
        X = np.asarray(X, dtype=float)
        span = self.maxs - self.mins
        const = span == 0
        out = (X - self.mins) / np.where(const, 1.0, span)
        out[:, const] = 0.5
        return np.clip(out, 0.0, 1.0)

    def to_dict(self, channel_names) -> dict:
        return {"version": 1, "channels": list(channel_names),
                "min": [repr(float(v)) for v in self.mins],
                "max": [repr(float(v)) for v in self.maxs]}

    @classmethod
    def from_dict(cls, d: dict) -> "Normalization":
        return cls(np.array(d["min"], dtype=float), np.array(d["max"], dtype=float))


@dataclass
class Dataset:
    features: np.ndarray
    labels: np.ndarray
    channel_names: list[str]
    n_classes: int = 4
    normalization: Normalization | None = None

    def __post_init__(self):
        self.features = np.asarray(self.features, dtype=float)
        self.labels = np.asarray(self.labels, dtype=int)
        if self.features.ndim != 2:
            raise DataError("features must be a samples x channels matrix")
        if self.features.shape[0] != self.labels.shape[0]:
            raise DataError("features and labels differ in length")
        if self.features.shape[1] != len(self.channel_names):
            raise DataError("channel_names length does not match channel count")
        if not np.all(np.isfinite(self.features)):
            raise DataError("features contain missing or non-finite values")
        if self.labels.size and (self.labels.min() < 1 or self.labels.max() > self.n_classes):
            raise DataError(f"labels must lie in [1, {self.n_classes}]")

    def __len__(self):
        return self.features.shape[0]

    @property
    def n_channels(self) -> int:
        return self.features.shape[1]

    def subset(self, rows) -> "Dataset":
        return replace(self, features=self.features[rows], labels=self.labels[rows])


def load_csv(path: str | Path, label_column: str = "label", n_classes: int | None = None) -> Dataset:
    """Read a header-row CSV; every non-label column is a numeric feature.

    Errors name the offending file row (header is row 1).
    """
    with open(path, newline="") as fh:
        reader = csv.reader(fh)
        try:
            header = next(reader)
        except StopIteration:
            raise DataError(f"{path}: empty file") from None
        header = [h.strip() for h in header]
        if label_column not in header:
            raise DataError(f"{path}: no label column {label_column!r} in header")
        li = header.index(label_column)
        names = [h for i, h in enumerate(header) if i != li]
        feats, labels = [], []
        for rowno, row in enumerate(reader, start=2):
            if not row or all(not c.strip() for c in row):
                continue
            if len(row) != len(header):
                raise DataError(f"{path}: row {rowno}: expected {len(header)} cells, got {len(row)}")
            vals = []
            for i, cell in enumerate(row):
                cell = cell.strip()
                if cell == "":
                    raise DataError(f"{path}: row {rowno}: missing value in column {header[i]!r}")
                try:
                    v = float(cell)
                except ValueError:
                    raise DataError(f"{path}: row {rowno}: non-numeric value {cell!r} "
                                    f"in column {header[i]!r}") from None
                if not math.isfinite(v):
                    raise DataError(f"{path}: row {rowno}: non-finite value in column {header[i]!r}")
                vals.append(v)
            lab = vals.pop(li)
            if lab != int(lab) or lab < 1 or (n_classes is not None and lab > n_classes):
                raise DataError(f"{path}: row {rowno}: label {row[li].strip()!r} out of range")
            labels.append(int(lab))
            feats.append(vals)
    k = n_classes if n_classes is not None else (max(labels) if labels else 1)
    X = np.array(feats, dtype=float).reshape(len(feats), len(names))
    return Dataset(X, np.array(labels, dtype=int), names, k)


def load_features_csv(path: str | Path, channel_names, label_column: str = "label") -> np.ndarray:
    """Feature matrix restricted to `channel_names` (in that order); label column optional."""
    with open(path, newline="") as fh:
        reader = csv.reader(fh)
        header = [h.strip() for h in next(reader)]
        missing = [c for c in channel_names if c not in header]
        if missing:
            raise DataError(f"{path}: missing channels {missing[:5]}")
        cols = [header.index(c) for c in channel_names]
        rows = []
        for rowno, row in enumerate(reader, start=2):
            if not row:
                continue
            try:
                rows.append([float(row[c]) for c in cols])
            except (ValueError, IndexError):
                raise DataError(f"{path}: row {rowno}: malformed feature row") from None
    return np.array(rows, dtype=float).reshape(len(rows), len(cols))


def write_csv(ds: Dataset, path: str | Path, label_column: str = "label") -> None:
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow([*ds.channel_names, label_column])
        for x, y in zip(ds.features, ds.labels):
            w.writerow([repr(float(v)) for v in x] + [int(y)])


def pearson(x, y) -> float:
    """Sample Pearson correlation; raises when either vector is constant."""
    x = np.asarray(x, dtype=float)
    y = np.asarray(y, dtype=float)
    if x.shape != y.shape or x.ndim != 1 or x.size < 2:
        raise ValueError("pearson needs two equal-length vectors of length >= 2")
    if x.min() == x.max() or y.min() == y.max():
        raise UndefinedCorrelationError("correlation is undefined for a constant vector")
    dx = x - x.mean()
    dy = y - y.mean()
    sx = math.sqrt(float(dx @ dx))
    sy = math.sqrt(float(dy @ dy))
    return max(-1.0, min(1.0, float(dx @ dy) / (sx * sy)))


@dataclass
class ChannelRanking:
    names: list[str]
    correlations: list[float | None]  # None: constant channel
    order: list[int] = field(default_factory=list)  # channel indices, best first

    def rank_of(self, channel: int) -> int:
        return self.order.index(channel)

    def to_dict(self) -> dict:
        return {"version": 1, "channels": [
            {"rank": r, "index": i, "name": self.names[i],
             "r": None if self.correlations[i] is None else repr(self.correlations[i])}
            for r, i in enumerate(self.order)]}


def rank_channels(ds: Dataset) -> ChannelRanking:
    """Order channels by |r| with the numeric label, descending; ties by index."""
    labels = ds.labels.astype(float)
    corrs: list[float | None] = []
    for j in range(ds.n_channels):
        try:
            corrs.append(pearson(ds.features[:, j], labels))
        except UndefinedCorrelationError:
            corrs.append(None)
    defined = sorted((j for j, r in enumerate(corrs) if r is not None), key=lambda j: (-abs(corrs[j]), j))
    undefined = [j for j, r in enumerate(corrs) if r is None]
    return ChannelRanking(list(ds.channel_names), corrs, defined + undefined)


def select_channels(ds: Dataset, k: int) -> tuple[Dataset, ChannelRanking]:
    """Keep the k channels most correlated with the label, in original column order."""
    if not 1 <= k <= ds.n_channels:
        raise ValueError(f"k must be in [1, {ds.n_channels}], got {k}")
    ranking = rank_channels(ds)
    keep = sorted(ranking.order[:k])
    reduced = replace(ds, features=ds.features[:, keep],
                      channel_names=[ds.channel_names[j] for j in keep],
                      normalization=None)
    return reduced, ranking


def fit_normalization(X) -> Normalization:
    X = np.asarray(X, dtype=float)
    return Normalization(X.min(axis=0), X.max(axis=0))


def normalize(ds: Dataset, stats: Normalization | None = None) -> Dataset:
    """Min-max scale each channel to [0, 1]; constant channels become 0.5.

    With `stats` given, those are applied verbatim (clamping to [0, 1]).
    """
    stats = stats if stats is not None else fit_normalization(ds.features)
    return replace(ds, features=stats.apply(ds.features), normalization=stats)


def split(ds: Dataset, train_fraction: float = 0.8, seed: int = 0) -> tuple[Dataset, Dataset]:
    if not 0 < train_fraction < 1:
        raise ValueError("train_fraction must be in (0, 1)")
    n = len(ds)
    n_train = int(round(n * train_fraction))
    if n_train == 0 or n_train == n:
        raise ValueError(f"train_fraction {train_fraction} leaves an empty part for {n} samples")
    perm = np.random.default_rng(seed).permutation(n)
    return ds.subset(np.sort(perm[:n_train])), ds.subset(np.sort(perm[n_train:]))


def synthetic_blobs(n_samples: int = 12800, n_features: int = 44, n_classes: int = 4,
                    separation: float = 0.5, n_noise: int = 0, trend: float = 0.0,
                    seed: int = 0) -> Dataset:
    """Gaussian class clusters with unit noise; class means ~ N(0, separation^2).

    `trend` adds a component proportional to the label to every informative
    mean, so those channels correlate with the numeric label. `n_noise`
    extra channels carry no class information. Classes are balanced.
    """
    rng = np.random.default_rng(seed)
    means = rng.normal(0.0, separation, (n_classes, n_features))
    if trend:
        signs = rng.choice([-1.0, 1.0], n_features)
        means += trend * np.arange(1, n_classes + 1)[:, None] * signs
    labels = np.arange(n_samples) % n_classes + 1
    rng.shuffle(labels)
    X = means[labels - 1] + rng.normal(0.0, 1.0, (n_samples, n_features))
    if n_noise:
        X = np.hstack([X, rng.normal(0.0, 1.0, (n_samples, n_noise))])
    names = [f"ch{j:02d}" for j in range(n_features + n_noise)]
    return Dataset(X, labels, names, n_classes)


def save_json(obj: dict, path: str | Path) -> None:
    Path(path).write_text(json.dumps(obj, indent=2) + "\n")
