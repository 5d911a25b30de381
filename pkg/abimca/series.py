import logging
from dataclasses import dataclass
from typing import Iterator, List, Optional, Sequence, Tuple

import numpy as np

from .errors import InvalidArgumentError
from .utils import readonly

__all__ = (
    "TimeSeries",
    "SlidingWindow",
    "LabelArray",
    "Subsequence",
    "StandardizationStats",
    "segment_labels",
    "expand_subsequences",
    "windows",
    "iter_windows",
    "window_count",
    "fit_stats",
    "standardize",
    "unstandardize",
)

logger = logging.getLogger(__name__)

STD_FLOOR = 1e-12


@dataclass(frozen=True, eq=False)
class TimeSeries:
    """
    ``values`` is a d x n matrix: one row per feature, one column per time step.
    Time is the column index (unit spacing).
    """

    values: np.ndarray
    feature_names: Optional[Tuple[str, ...]] = None
    sample_period: float = 1.0

    def __post_init__(self):
        values = np.array(self.values, dtype=np.float64)
        if values.ndim == 1:
            values = values[np.newaxis, :]
        if values.ndim != 2:
            raise InvalidArgumentError(f"expected a d x n matrix, got shape {values.shape}")
        d, n = values.shape
        if d < 1 or n < 2:
            raise InvalidArgumentError(f"time series needs d >= 1 and n >= 2, got d={d}, n={n}")
        if not np.isfinite(values).all():
            f, t = np.argwhere(~np.isfinite(values))[0]
            raise InvalidArgumentError(f"non-finite value at feature {f}, step {t}")
        if not self.sample_period > 0:
            raise InvalidArgumentError(f"sample period must be positive, got {self.sample_period}")

        names = self.feature_names
        if names is None:
            names = tuple(f"x{i}" for i in range(d))
        names = tuple(str(name) for name in names)
        if len(names) != d:
            raise InvalidArgumentError(f"{len(names)} feature names for {d} features")

        object.__setattr__(self, "values", readonly(values))
        object.__setattr__(self, "feature_names", names)

    @classmethod
    def from_rows(cls, rows, feature_names=None, sample_period: float = 1.0) -> "TimeSeries":
        """
        Build from an n x d array (one row per time step).
        """
        rows = np.asarray(rows, dtype=np.float64)
        if rows.ndim == 1:
            rows = rows[:, np.newaxis]
        return cls(rows.T, feature_names, sample_period)

    @property
    def d(self) -> int:
        return self.values.shape[0]

    @property
    def n(self) -> int:
        return self.values.shape[1]

    @property
    def shape(self) -> Tuple[int, int]:
        return self.values.shape

    def __len__(self):
        return self.n

    def __getitem__(self, item) -> "TimeSeries":
        if not isinstance(item, slice):
            raise TypeError("time series supports slicing over time steps only")
        return TimeSeries(self.values[:, item], self.feature_names, self.sample_period)

    def __repr__(self):
        return f"<{type(self).__name__} d={self.d} n={self.n} features={list(self.feature_names)}>"


@dataclass(frozen=True, eq=False)
class SlidingWindow:
    values: np.ndarray
    start_index: int

    @property
    def length(self) -> int:
        return self.values.shape[1]

    @property
    def end_index(self) -> int:
        return self.start_index + self.length - 1


@dataclass(frozen=True)
class Subsequence:
    cluster_id: int
    start: int
    length: int

    @property
    def stop(self) -> int:
        return self.start + self.length


@dataclass(frozen=True)
class LabelArray:
    labels: np.ndarray

    def __post_init__(self):
        labels = np.asarray(self.labels)
        if labels.ndim != 1:
            raise InvalidArgumentError(f"labels must be a vector, got shape {labels.shape}")
        if labels.size and not np.issubdtype(labels.dtype, np.integer):
            as_int = labels.astype(np.int64)
            if not np.array_equal(as_int, labels):
                raise InvalidArgumentError("labels must be integers")
            labels = as_int
        labels = np.array(labels, dtype=np.int64)
        if (labels < 0).any():
            raise InvalidArgumentError("labels must be non-negative")
        object.__setattr__(self, "labels", readonly(labels))

    def __len__(self):
        return self.labels.size

    def __iter__(self) -> Iterator[int]:
        return iter(self.labels.tolist())

    def __eq__(self, other):
        if not isinstance(other, LabelArray):
            return NotImplemented
        return np.array_equal(self.labels, other.labels)

    __hash__ = None

    @property
    def ids(self) -> Tuple[int, ...]:
        return tuple(np.unique(self.labels).tolist())

    @property
    def n_clusters(self) -> int:
        return len(self.ids)

    def tolist(self) -> List[int]:
        return self.labels.tolist()


@dataclass(frozen=True, eq=False)
class StandardizationStats:
    mean: np.ndarray
    std: np.ndarray

    def __post_init__(self):
        mean = np.array(self.mean, dtype=np.float64).ravel()
        std = np.array(self.std, dtype=np.float64).ravel()
        if mean.shape != std.shape:
            raise InvalidArgumentError(f"mean has {mean.size} entries, std has {std.size}")
        object.__setattr__(self, "mean", readonly(mean))
        object.__setattr__(self, "std", readonly(std))

    @property
    def d(self) -> int:
        return self.mean.size


def segment_labels(labels: LabelArray) -> List[Subsequence]:
    """
    Run-length encode a label array into its maximal constant runs.

    >>> [(s.cluster_id, s.start, s.length) for s in segment_labels(LabelArray([1, 1, 2, 2, 2, 1]))]
    [(1, 0, 2), (2, 2, 3), (1, 5, 1)]
    """
    values = labels.labels
    if values.size == 0:
        raise InvalidArgumentError("cannot segment an empty label array")
    boundaries = np.flatnonzero(np.diff(values)) + 1
    starts = np.concatenate(([0], boundaries))
    stops = np.concatenate((boundaries, [values.size]))
    return [Subsequence(int(values[start]), int(start), int(stop - start)) for start, stop in zip(starts, stops)]


def expand_subsequences(subsequences: Sequence[Subsequence]) -> LabelArray:
    if not subsequences:
        return LabelArray(np.zeros(0, dtype=np.int64))
    return LabelArray(np.repeat([s.cluster_id for s in subsequences], [s.length for s in subsequences]))


def window_count(n: int, length: int, stride: int = 1) -> int:
    if length > n:
        return 0
    return (n - length) // stride + 1


def _check_window(series: TimeSeries, length: int, stride: int):
    if length < 2:
        raise InvalidArgumentError(f"window length must be >= 2, got {length}")
    if stride < 1:
        raise InvalidArgumentError(f"stride must be >= 1, got {stride}")
    if length > series.n:
        raise InvalidArgumentError(f"window length {length} exceeds series length {series.n}")


def iter_windows(series: TimeSeries, length: int, stride: int = 1) -> Iterator[SlidingWindow]:
    _check_window(series, length, stride)
    for start in range(0, series.n - length + 1, stride):
        yield SlidingWindow(series.values[:, start : start + length], start)


def windows(series: TimeSeries, length: int, stride: int = 1) -> List[SlidingWindow]:
    """
    Sliding windows at starts 0, stride, 2*stride, ... (views into the series).
    """
    return list(iter_windows(series, length, stride))


def fit_stats(series: TimeSeries) -> StandardizationStats:
    values = series.values
    return StandardizationStats(
        mean=values.mean(axis=1),
        std=np.maximum(values.std(axis=1, ddof=1), STD_FLOOR),
    )


def _check_stats(series: TimeSeries, stats: StandardizationStats):
    if stats.d != series.d:
        raise InvalidArgumentError(f"stats for {stats.d} features, series has {series.d}")
    if not (stats.std > 0).all():
        raise InvalidArgumentError("standard deviations must be strictly positive")


def standardize(series: TimeSeries, stats: StandardizationStats) -> TimeSeries:
    _check_stats(series, stats)
    values = (series.values - stats.mean[:, np.newaxis]) / stats.std[:, np.newaxis]
    return TimeSeries(values, series.feature_names, series.sample_period)


def unstandardize(series: TimeSeries, stats: StandardizationStats) -> TimeSeries:
    _check_stats(series, stats)
    values = series.values * stats.std[:, np.newaxis] + stats.mean[:, np.newaxis]
    return TimeSeries(values, series.feature_names, series.sample_period)
