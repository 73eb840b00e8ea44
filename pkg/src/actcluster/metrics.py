"""Clustering evaluation: contingency tables, accuracy-maximizing label
alignment, ACC / macro-F1 / ARI / NMI, window-to-point label reconciliation,
and subject-weighted aggregation.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np
from scipy.optimize import linear_sum_assignment


@dataclass
class ContingencyTable:
    counts: np.ndarray  # (clusters, classes)

    def __post_init__(self):
        self.counts = np.asarray(self.counts, dtype=np.int64)
        if self.counts.ndim != 2:
            raise ValueError("contingency counts must be 2-D")

    @property
    def cluster_sizes(self) -> np.ndarray:
        return self.counts.sum(axis=1)

    @property
    def class_sizes(self) -> np.ndarray:
        return self.counts.sum(axis=0)

    @property
    def n(self) -> int:
        return int(self.counts.sum())


def contingency(preds, labels, n_clusters=None, n_classes=None) -> ContingencyTable:
    preds = np.asarray(preds, dtype=np.int64)
    labels = np.asarray(labels, dtype=np.int64)
    if preds.shape != labels.shape or preds.size == 0:
        raise ValueError("preds and labels must be equal-length and nonempty")
    I = n_clusters if n_clusters is not None else int(preds.max()) + 1
    J = n_classes if n_classes is not None else int(labels.max()) + 1
    counts = np.zeros((I, J), dtype=np.int64)
    np.add.at(counts, (preds, labels), 1)
    return ContingencyTable(counts)


# ---------------------------------------------------------------------------
# alignment
# ---------------------------------------------------------------------------

def _pad_square(counts):
    I, J = counts.shape
    K = max(I, J)
    out = np.zeros((K, K), dtype=np.int64)
    out[:I, :J] = counts
    return out


def _max_matching(counts) -> int:
    rows, cols = linear_sum_assignment(counts, maximize=True)
    return int(counts[rows, cols].sum())


def align_labels(table: ContingencyTable) -> np.ndarray:
    """Cluster -> class permutation maximizing the matched count.

    Among optimal assignments, returns the lexicographically smallest
    permutation (fixing clusters in ascending order to the smallest viable
    class).  Rectangular tables are zero-padded square first.
    """
    counts = _pad_square(table.counts)
    K = counts.shape[0]
    best = _max_matching(counts)
    perm = np.empty(K, dtype=np.int64)
    free_cols = list(range(K))
    remaining = counts
    for i in range(K):
        for cpos, c in enumerate(list(free_cols)):
            fixed = counts[i, c]
            sub = np.delete(remaining[1:], cpos, axis=1)
            rest = _max_matching(sub) if sub.size else 0
            if fixed + rest == best:
                perm[i] = c
                free_cols.pop(cpos)
                remaining = np.delete(remaining[1:], cpos, axis=1)
                best = rest
                break
        else:  # pragma: no cover - matching always completes
            raise RuntimeError("alignment failed to complete")
    return perm


def accuracy(preds, labels) -> float:
    """Matched fraction after accuracy-maximizing alignment."""
    table = contingency(preds, labels)
    counts = _pad_square(table.counts)
    return _max_matching(counts) / table.n


def macro_f1(preds, labels) -> float:
    """Unweighted mean of per-class F1 after alignment; zero-support classes
    contribute F1 = 0."""
    preds = np.asarray(preds, dtype=np.int64)
    labels = np.asarray(labels, dtype=np.int64)
    table = contingency(preds, labels)
    perm = align_labels(table)
    mapped = perm[preds]
    n_classes = table.counts.shape[1]
    f1s = []
    for j in range(n_classes):
        tp = int(np.sum((mapped == j) & (labels == j)))
        fp = int(np.sum((mapped == j) & (labels != j)))
        fn = int(np.sum((mapped != j) & (labels == j)))
        denom = 2 * tp + fp + fn
        f1s.append(2 * tp / denom if denom > 0 else 0.0)
    return float(np.mean(f1s))


# ---------------------------------------------------------------------------
# pair-counting and information-theoretic indices
# ---------------------------------------------------------------------------

def _comb2(x):
    x = np.asarray(x, dtype=np.float64)
    return x * (x - 1.0) / 2.0


def ari(table: ContingencyTable) -> float:
    """Adjusted Rand index via the pair-counting formula; 0 when the
    expected-index denominator vanishes."""
    if table.n < 2:
        raise ValueError("ari needs n >= 2")
    sum_ij = _comb2(table.counts).sum()
    sum_i = _comb2(table.cluster_sizes).sum()
    sum_j = _comb2(table.class_sizes).sum()
    total = _comb2(table.n)
    expected = sum_i * sum_j / total
    denom = 0.5 * (sum_i + sum_j) - expected
    if denom == 0.0:
        return 0.0
    return float((sum_ij - expected) / denom)


def nmi(table: ContingencyTable) -> float:
    """2 I(U;V) / (H(U) + H(V)) with 0 log 0 = 0; 0 when both entropies
    vanish."""
    n = table.n
    if n < 1:
        raise ValueError("nmi needs n >= 1")
    pij = table.counts / n
    pi = table.cluster_sizes / n
    pj = table.class_sizes / n
    nz = pij > 0
    outer = pi[:, None] * pj[None, :]
    mi = float((pij[nz] * np.log(pij[nz] / outer[nz])).sum())
    hu = float(-(pi[pi > 0] * np.log(pi[pi > 0])).sum())
    hv = float(-(pj[pj > 0] * np.log(pj[pj > 0])).sum())
    if hu + hv == 0.0:
        return 0.0
    return 2.0 * mi / (hu + hv)


# ---------------------------------------------------------------------------
# window <-> point reconciliation
# ---------------------------------------------------------------------------

def pointwise_labels(window_preds, offsets, window_len, n_points, n_classes):
    """Per-point modal predicted label over covering windows.

    Returns (point_preds [n_points], covered mask).  Ties go to the
    smallest label; uncovered points are masked out.
    """
    window_preds = np.asarray(window_preds, dtype=np.int64)
    offsets = np.asarray(offsets, dtype=np.int64)
    votes = np.zeros((n_points, n_classes), dtype=np.int64)
    for off, lbl in zip(offsets, window_preds):
        votes[off:off + window_len, lbl] += 1
    covered = votes.sum(axis=1) > 0
    point_preds = votes.argmax(axis=1)
    return point_preds, covered


# ---------------------------------------------------------------------------
# reports
# ---------------------------------------------------------------------------

@dataclass
class MetricsReport:
    acc: float
    nmi: float
    ari: float
    f1: float
    subject_setting: str = ""      # 'subject-dependent' | 'subject-independent'
    granularity: str = ""          # 'window' | 'point'
    per_subject: list = field(default_factory=list)
    weights: list = field(default_factory=list)

    def as_dict(self, scale=1.0):
        return {"acc": self.acc * scale, "nmi": self.nmi * scale,
                "ari": self.ari * scale, "f1": self.f1 * scale}


def score(preds, labels) -> MetricsReport:
    """All four metrics for one prediction/label pairing."""
    table = contingency(preds, labels)
    return MetricsReport(
        acc=accuracy(preds, labels),
        nmi=nmi(table),
        ari=ari(table) if table.n >= 2 else 0.0,
        f1=macro_f1(preds, labels))


def aggregate_subject_dependent(reports, point_counts) -> MetricsReport:
    """Weighted arithmetic mean of each metric, weighting each subject by
    its number of data points."""
    if not reports:
        raise ValueError("aggregate_subject_dependent needs >= 1 subject")
    w = np.asarray(point_counts, dtype=np.float64)
    if w.sum() <= 0:
        raise ValueError("aggregate_subject_dependent: zero total weight")
    w = w / w.sum()
    agg = MetricsReport(
        acc=float(sum(wi * r.acc for wi, r in zip(w, reports))),
        nmi=float(sum(wi * r.nmi for wi, r in zip(w, reports))),
        ari=float(sum(wi * r.ari for wi, r in zip(w, reports))),
        f1=float(sum(wi * r.f1 for wi, r in zip(w, reports))),
        subject_setting="subject-dependent")
    agg.per_subject = list(reports)
    agg.weights = [float(x) for x in w]
    return agg
