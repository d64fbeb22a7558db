"""Confusion matrices, per-class precision/recall/F1, error rates and stage timing."""
from __future__ import annotations

import random
import time
from dataclasses import dataclass, field
from typing import Sequence

import numpy as np

from . import encinfer
from .fixedpoint import FixedPointCodec
from .paillier import PrivateKey, PublicKey

CLASS_NAMES = ["eye opened", "eye closed", "both hands", "both feet"]


@dataclass
class ConfusionMatrix:
    """Rows are truth, columns prediction; class c sits at index c - 1."""

    counts: np.ndarray
    class_names: list[str] = field(default_factory=list)

    def __post_init__(self):
        self.counts = np.asarray(self.counts, dtype=np.int64)
        k = self.counts.shape[0]
        if self.counts.shape != (k, k) or np.any(self.counts < 0):
            raise ValueError("counts must be a non-negative square matrix")
        if not self.class_names:
            self.class_names = CLASS_NAMES[:] if k == 4 else [str(c) for c in range(1, k + 1)]

    @property
    def k(self) -> int:
        return self.counts.shape[0]

    @property
    def total(self) -> int:
        return int(self.counts.sum())

    def to_csv(self) -> str:
        lines = ["truth\\prediction," + ",".join(self.class_names)]
        for name, row in zip(self.class_names, self.counts):
            lines.append(name + "," + ",".join(str(int(v)) for v in row))
        return "\n".join(lines) + "\n"

    def render(self, width: int = 6) -> str:
        """Text table with a shade per cell proportional to its row share."""
        shades = " .:-=+*#%@"
        lines = [" " * 12 + "".join(f"{n[:width]:>{width + 1}}" for n in self.class_names)]
        for name, row in zip(self.class_names, self.counts):
            tot = row.sum() or 1
            cells = "".join(f"{int(v):>{width}}{shades[min(9, int(10 * v / tot))]}" for v in row)
            lines.append(f"{name[:12]:<12}{cells}")
        return "\n".join(lines)


def confusion(truth: Sequence[int], pred: Sequence[int], k: int,
              class_names: list[str] | None = None) -> ConfusionMatrix:
    truth = np.asarray(truth, dtype=int)
    pred = np.asarray(pred, dtype=int)
    if truth.shape != pred.shape:
        raise ValueError("truth and prediction vectors differ in length")
    for name, v in (("truth", truth), ("prediction", pred)):
        if v.size and (v.min() < 1 or v.max() > k):
            raise ValueError(f"{name} labels must lie in [1, {k}]")
    counts = np.zeros((k, k), dtype=np.int64)
    np.add.at(counts, (truth - 1, pred - 1), 1)
    return ConfusionMatrix(counts, class_names or [])


@dataclass
class ClassMetrics:
    name: str
    precision: float | None
    recall: float | None
    f1: float | None
    support: int


@dataclass
class MetricsReport:
    per_class: list[ClassMetrics]
    mean_precision: float | None
    mean_recall: float | None
    mean_f1: float | None
    accuracy: float | None
    undefined: dict[str, list[str]]

    def table(self) -> str:
        def pct(v):
            return "undefined" if v is None else f"{100 * v:.2f}%"

        names = [c.name for c in self.per_class]
        w = max(12, *(len(n) + 2 for n in names))
        head = f"{'':<10}" + "".join(f"{n:>{w}}" for n in names) + f"{'mean':>{w}}"
        rows = [head]
        for attr in ("precision", "recall", "f1"):
            cells = "".join(f"{pct(getattr(c, attr)):>{w}}" for c in self.per_class)
            rows.append(f"{attr:<10}" + cells + f"{pct(getattr(self, 'mean_' + attr)):>{w}}")
        rows.append(f"accuracy: {pct(self.accuracy)}")
        return "\n".join(rows)

    def to_csv(self) -> str:
        def fmt(v):
            return "undefined" if v is None else repr(v)

        lines = ["class,precision,recall,f1,support"]
        for c in self.per_class:
            lines.append(f"{c.name},{fmt(c.precision)},{fmt(c.recall)},{fmt(c.f1)},{c.support}")
        lines.append(f"mean,{fmt(self.mean_precision)},{fmt(self.mean_recall)},{fmt(self.mean_f1)},"
                     f"{sum(c.support for c in self.per_class)}")
        return "\n".join(lines) + "\n"


def _mean(values):
    vals = [v for v in values if v is not None]
    return sum(vals) / len(vals) if vals else None


def f1_score(precision: float | None, recall: float | None) -> float | None:
    if precision is None or recall is None:
        return None
    if precision + recall == 0:
        return 0.0
    return 2 * precision * recall / (precision + recall)


def metrics(cm: ConfusionMatrix) -> MetricsReport:
    """Per-class precision, recall and F1 plus their unweighted means.

    A metric whose denominator is zero is reported as None and left out of
    the mean; the affected classes are listed in `undefined`.
    """
    c = cm.counts
    per_class = []
    undefined: dict[str, list[str]] = {"precision": [], "recall": [], "f1": []}
    for i, name in enumerate(cm.class_names):
        tp = int(c[i, i])
        col, row = int(c[:, i].sum()), int(c[i, :].sum())
        p = tp / col if col else None
        r = tp / row if row else None
        f = f1_score(p, r)
        for key, v in (("precision", p), ("recall", r), ("f1", f)):
            if v is None:
                undefined[key].append(name)
        per_class.append(ClassMetrics(name, p, r, f, row))
    acc = float(np.trace(c) / c.sum()) if c.sum() else None
    return MetricsReport(per_class, _mean(m.precision for m in per_class),
                         _mean(m.recall for m in per_class), _mean(m.f1 for m in per_class),
                         acc, undefined)


def error_rate(misclassified: int, train_size: int, test_size: int) -> dict[str, float]:
    """`literal` divides by the training-set size; `standard` by the test-set size."""
    if misclassified < 0:
        raise ValueError("misclassified count must be >= 0")
    if train_size <= 0 or test_size <= 0:
        raise ValueError("set sizes must be positive")
    return {"literal": misclassified / train_size, "standard": misclassified / test_size}


# -- timing -----------------------------------------------------------------

STAGES = ("encode_encrypt", "inference", "decrypt_decode")


@dataclass
class StageTiming:
    count: int = 0
    total_seconds: float = 0.0

    @property
    def mean_seconds(self) -> float:
        return self.total_seconds / self.count if self.count else 0.0


@dataclass
class TimingReport:
    stages: dict[str, StageTiming] = field(default_factory=lambda: {s: StageTiming() for s in STAGES})

    def table(self) -> str:
        rows = [f"{'stage':<16}{'samples':>8}{'total s':>12}{'mean s/sample':>16}"]
        for name, st in self.stages.items():
            rows.append(f"{name:<16}{st.count:>8}{st.total_seconds:>12.4f}{st.mean_seconds:>16.6f}")
        return "\n".join(rows)

    def to_csv(self) -> str:
        lines = ["stage,count,total_seconds,mean_seconds"]
        lines += [f"{n},{s.count},{s.total_seconds!r},{s.mean_seconds!r}" for n, s in self.stages.items()]
        return "\n".join(lines) + "\n"


def bench(pk: PublicKey, sk: PrivateKey, qmodel: encinfer.QuantizedModel, X,
          n_samples: int, rng: random.Random | None = None) -> tuple[TimingReport, list[int]]:
    """Time the three online stages one after another over the first n samples.

    Returns the report and the predicted classes (so callers can check them).
    """
    report = TimingReport()
    X = np.asarray(X, dtype=float)[:n_samples]
    if len(X) == 0:
        return report, []
    codec = FixedPointCodec(qmodel.frac_bits, pk.n)
    clock = time.perf_counter

    t = clock()
    encrypted = [encinfer.encrypt_sample(pk, codec, x, rng) for x in X]
    report.stages["encode_encrypt"] = StageTiming(len(X), clock() - t)

    t = clock()
    logits = [encinfer.enc_forward(pk, qmodel, v) for v in encrypted]
    report.stages["inference"] = StageTiming(len(X), clock() - t)

    t = clock()
    preds = [encinfer.decrypt_logits(sk, codec, v)[1] for v in logits]
    report.stages["decrypt_decode"] = StageTiming(len(X), clock() - t)
    return report, preds
