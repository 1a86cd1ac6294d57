# evaluation/services/metrics.py
import logging
from typing import Dict, Optional, Sequence

import numpy as np
from scipy.spatial.distance import cdist

from evaluation.exceptions import LabelRangeError, LengthMismatchError, MetricsError
from evaluation.types import CASES, ClassMetrics, ConfusionMatrix

logger = logging.getLogger(__name__)


def _cases(values: Sequence[int], what: str) -> np.ndarray:
    array = np.asarray(values, dtype=np.int64).reshape(-1)
    bad = array[(array < CASES[0]) | (array > CASES[-1])]
    if bad.size:
        raise LabelRangeError(f"{what} contain values outside 1..4: {sorted(set(bad.tolist()))[:5]}")
    return array


def confusion(preds: Sequence[int], labels: Sequence[int]) -> ConfusionMatrix:
    if len(preds) != len(labels):
        raise LengthMismatchError(f"{len(preds)} predictions for {len(labels)} labels")
    predicted = _cases(preds, "predictions")
    truth = _cases(labels, "labels")
    counts = np.zeros((len(CASES), len(CASES)), dtype=np.int64)
    np.add.at(counts, (truth - 1, predicted - 1), 1)
    return ConfusionMatrix(counts=counts)


def _safe_ratio(num: np.ndarray, den: np.ndarray) -> np.ndarray:
    out = np.zeros_like(num, dtype=np.float64)
    np.divide(num, den, out=out, where=den > 0)
    return out


def f1_scores(cm: ConfusionMatrix) -> ClassMetrics:
    """Per-class precision, recall and F1; every 0/0 is 0."""
    counts = cm.counts.astype(np.float64)
    tp = np.diag(counts)
    fp = counts.sum(axis=0) - tp
    fn = counts.sum(axis=1) - tp

    precision = _safe_ratio(tp, tp + fp)
    recall = _safe_ratio(tp, tp + fn)
    f1 = _safe_ratio(2 * precision * recall, precision + recall)
    return ClassMetrics(precision=precision, recall=recall, f1=f1, average_f1=float(f1.mean()))


def davies_bouldin(embeddings: np.ndarray, labels: Sequence[int]) -> float:
    """
    Mean over clusters of the worst (S_i + S_j) / M_ij, where S_i is the mean
    Euclidean distance of cluster i to its centroid and M_ij the distance
    between centroids. Coincident centroids of distinct clusters give inf.
    """
    x = np.asarray(embeddings, dtype=np.float64)
    labels = np.asarray(labels).reshape(-1)
    if x.ndim != 2 or x.shape[0] != labels.size:
        raise LengthMismatchError(f"{labels.size} labels for embeddings of shape {x.shape}")
    clusters = np.unique(labels)
    if clusters.size < 2:
        raise MetricsError(f"Davies-Bouldin needs at least two clusters, got {clusters.size}")

    centroids = np.stack([x[labels == c].mean(axis=0) for c in clusters])
    scatter = np.array([
        cdist(x[labels == c], centroids[i:i + 1]).mean() for i, c in enumerate(clusters)
    ])
    separation = cdist(centroids, centroids)

    ratios = np.full(separation.shape, -np.inf)
    off_diagonal = ~np.eye(clusters.size, dtype=bool)
    coincident = off_diagonal & (separation == 0)
    if coincident.any():
        logger.warning("Davies-Bouldin: %d pairs of clusters share a centroid", int(coincident.sum()) // 2)
    with np.errstate(divide="ignore", invalid="ignore"):
        pair_scatter = scatter[:, None] + scatter[None, :]
        ratios[off_diagonal] = (pair_scatter / separation)[off_diagonal]
    ratios[coincident] = np.inf
    return float(ratios.max(axis=1).mean())


def switch_stats(omega: Sequence[float], labels: Sequence[int]) -> Dict[str, Optional[float]]:
    """Fraction of records routed to the RP head (ω = 1), per true case."""
    omega = np.asarray(omega, dtype=np.float64).reshape(-1)
    truth = _cases(labels, "labels")
    if omega.size != truth.size:
        raise LengthMismatchError(f"{omega.size} switch values for {truth.size} labels")
    return {
        str(case): (float(omega[truth == case].mean()) if np.any(truth == case) else None)
        for case in CASES
    }
