"""
Mini-batch k-means (Sculley, "Web-scale k-means clustering") over flattened sliding windows.
"""
import logging
from dataclasses import dataclass
from typing import Optional

import numpy as np
from scipy.spatial.distance import cdist

from .errors import InvalidArgumentError
from .options import KMeansConfig
from .series import LabelArray, TimeSeries
from .utils import make_rng

__all__ = (
    "KMeansModel",
    "window_features",
    "fit",
    "predict",
    "fit_predict",
    "inertia",
)

logger = logging.getLogger(__name__)


@dataclass(eq=False)
class KMeansModel:
    centroids: np.ndarray  # k x (d * seq_len)
    counts: np.ndarray
    seq_len: int = 1

    @property
    def n_clusters(self) -> int:
        return self.centroids.shape[0]

    def assign(self, samples: np.ndarray) -> np.ndarray:
        """
        0-based index of the nearest centroid per sample (lowest index on ties).
        """
        return cdist(samples, self.centroids, "sqeuclidean").argmin(axis=1)


def window_features(series: TimeSeries, seq_len: int) -> np.ndarray:
    """
    One row per window of ``seq_len`` steps (stride 1), time-major flattening.

    >>> window_features(TimeSeries([[0.0, 1.0, 2.0], [5.0, 6.0, 7.0]]), 2).tolist()
    [[0.0, 5.0, 1.0, 6.0], [1.0, 6.0, 2.0, 7.0]]
    """
    if seq_len < 1:
        raise InvalidArgumentError(f"seq_len must be >= 1, got {seq_len}")
    if seq_len > series.n:
        raise InvalidArgumentError(f"seq_len {seq_len} exceeds series length {series.n}")
    windows = np.lib.stride_tricks.sliding_window_view(series.values.T, seq_len, axis=0)
    return windows.transpose(0, 2, 1).reshape(windows.shape[0], -1).copy()


def _reseed_empty(model: KMeansModel, samples: np.ndarray, assignment: np.ndarray):
    sizes = np.bincount(assignment, minlength=model.n_clusters)
    for empty in np.flatnonzero(sizes == 0):
        largest = int(np.argmax(sizes))
        members = np.flatnonzero(assignment == largest)
        distances = ((samples[members] - model.centroids[largest]) ** 2).sum(axis=1)
        farthest = members[int(np.argmax(distances))]
        logger.debug("centroid %d empty, moved to sample %d of cluster %d", empty, farthest, largest)
        model.centroids[empty] = samples[farthest]
        model.counts[empty] = 1
        assignment[farthest] = empty
        sizes[largest] -= 1
        sizes[empty] = 1


def fit(series: TimeSeries, config: KMeansConfig = KMeansConfig()) -> KMeansModel:
    config.validate()
    samples = window_features(series, config.seq_len)
    m = samples.shape[0]
    k = config.n_clusters
    if k > m:
        raise InvalidArgumentError(f"{k} clusters for {m} windows")

    rng = make_rng(config.seed)
    model = KMeansModel(
        centroids=samples[rng.choice(m, size=k, replace=False)].copy(),
        counts=np.zeros(k, dtype=np.int64),
        seq_len=config.seq_len,
    )
    batch_size = min(config.batch_size, m)
    for _ in range(config.max_iter):
        order = rng.permutation(m)
        for begin in range(0, m, batch_size):
            batch = samples[order[begin : begin + batch_size]]
            nearest = model.assign(batch)
            # per-centroid 1/count steps over a batch add up to a running mean
            sums = np.zeros_like(model.centroids)
            np.add.at(sums, nearest, batch)
            hits = np.bincount(nearest, minlength=k)
            seen = hits > 0
            total = model.counts + hits
            model.centroids[seen] = (
                model.counts[seen, np.newaxis] * model.centroids[seen] + sums[seen]
            ) / total[seen, np.newaxis]
            model.counts = total
        _reseed_empty(model, samples, model.assign(samples))
    logger.debug("mini-batch k-means: k=%d, %d windows, %d epochs", k, m, config.max_iter)
    return model


def predict(series: TimeSeries, model: KMeansModel) -> LabelArray:
    """
    1-based labels per step; a window's label goes to its last step and the first
    ``seq_len - 1`` steps take the first window's label.
    """
    samples = window_features(series, model.seq_len)
    window_labels = model.assign(samples) + 1
    head = np.full(model.seq_len - 1, window_labels[0], dtype=np.int64)
    return LabelArray(np.concatenate([head, window_labels]))


def fit_predict(series: TimeSeries, config: KMeansConfig = KMeansConfig()) -> LabelArray:
    return predict(series, fit(series, config))


def inertia(series: TimeSeries, labels: LabelArray, model: KMeansModel, seq_len: Optional[int] = None) -> float:
    """
    Sum of squared distances between every window and the centroid of the label at the
    window's last step.
    """
    seq_len = seq_len or model.seq_len
    samples = window_features(series, seq_len)
    if len(labels) != series.n:
        raise InvalidArgumentError(f"{len(labels)} labels for {series.n} steps")
    assigned = labels.labels[seq_len - 1 :] - 1
    if assigned.min() < 0 or assigned.max() >= model.n_clusters:
        raise InvalidArgumentError("labels do not match the model's centroids")
    return float(((samples - model.centroids[assigned]) ** 2).sum())
