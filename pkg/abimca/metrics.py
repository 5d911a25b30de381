import logging
import math
from collections import defaultdict
from dataclasses import dataclass
from typing import Dict, List, Mapping, Optional, Sequence, Tuple

import numpy as np
from scipy.special import ndtri
from scipy.stats import rankdata
from sklearn import metrics as sk_metrics

from .errors import InvalidArgumentError
from .geometry import EPS, CurveParams, curve_params
from .series import LabelArray, TimeSeries, segment_labels
from .utils import imdict

__all__ = (
    "SubseqFeatures",
    "MetricReport",
    "cluster_curvature_consistency",
    "weighted_cc",
    "silhouette",
    "calinski_harabasz",
    "davies_bouldin",
    "subsequence_features",
    "feature_matrices",
    "mt3scm",
    "report_rows",
    "METRICS",
    "LOWER_IS_BETTER",
)

logger = logging.getLogger(__name__)

METRICS = ("silhouette", "calinski_harabasz", "davies_bouldin", "mt3scm")
LOWER_IS_BETTER = frozenset({"davies_bouldin"})


@dataclass(frozen=True)
class SubseqFeatures:
    cluster_id: int
    subseq_index: int
    start: int
    mean_kappa: float
    mean_tau: float
    mean_accel: float
    sigma: float
    count: int
    medians: Tuple[float, ...]

    @property
    def sp_row(self) -> List[float]:
        return [self.mean_kappa, self.mean_tau, self.mean_accel, self.sigma, float(self.count)]

    @property
    def sl_row(self) -> List[float]:
        return [*self.medians, self.sigma, float(self.count)]


@dataclass(frozen=True)
class MetricReport:
    mt3scm: float
    wcc: float
    cc_per_cluster: Mapping[int, float]
    sl: float
    sp: float
    silhouette: float
    calinski_harabasz: Optional[float]
    davies_bouldin: Optional[float]
    n_clusters: int
    n_subsequences: int
    cc_mean: float
    # fewer than two clusters: sl and sp are pinned to 0
    degenerate: bool = False

    def metric(self, name: str) -> Optional[float]:
        if name not in METRICS:
            raise InvalidArgumentError(f"unknown metric: {name!r}")
        return getattr(self, name)


def _labels_vector(labels, n: Optional[int] = None) -> np.ndarray:
    values = labels.labels if isinstance(labels, LabelArray) else np.asarray(labels)
    if n is not None and values.size != n:
        raise InvalidArgumentError(f"{values.size} labels for {n} steps")
    return values


def _std(values: np.ndarray) -> float:
    if values.size < 2:
        return 0.0
    return float(np.std(values, ddof=1))


def _sigma(kappa, tau, accel) -> float:
    return (_std(kappa) + _std(tau) + _std(accel)) / 3.0


def cluster_curvature_consistency(
    params: CurveParams, labels: LabelArray, include_label_zero: bool = True
) -> Mapping[int, float]:
    """
    cc_i = 1 - mean(std(kappa), std(tau), std(accel)) over every step of cluster i,
    clamped below at -1. Single-step clusters get 0.
    """
    values = _labels_vector(labels, params.n)
    consistency = {}
    for cluster_id in np.unique(values).tolist():
        if cluster_id == 0 and not include_label_zero:
            continue
        mask = values == cluster_id
        if mask.sum() < 2:
            consistency[cluster_id] = 0.0
            continue
        sigma = _sigma(params.kappa[mask], params.tau[mask], params.accel[mask])
        consistency[cluster_id] = max(1.0 - sigma, -1.0)
    return imdict(consistency)


def weighted_cc(cc: Mapping[int, float], counts: Mapping[int, int]) -> float:
    """
    >>> weighted_cc({1: 1.0, 2: 0.0}, {1: 10, 2: 30})
    0.25
    """
    if not cc:
        raise InvalidArgumentError("no clusters to weight")
    if set(cc) != set(counts):
        raise InvalidArgumentError(f"cluster ids differ: {sorted(cc)} vs {sorted(counts)}")
    keys = sorted(cc)
    total = math.fsum(counts[key] for key in keys)
    if total <= 0:
        raise InvalidArgumentError("cluster counts must be positive")
    return math.fsum(cc[key] * counts[key] for key in keys) / total


def _canonical(labels: np.ndarray) -> np.ndarray:
    """
    Cluster ids renumbered 0.. in order of first appearance, so that any relabeling of the
    same partition reaches sklearn as the same array.

    >>> _canonical(np.array([7, 7, 2, 9, 2])).tolist()
    [0, 0, 1, 2, 1]
    """
    _, first, inverse = np.unique(labels, return_index=True, return_inverse=True)
    rank = np.empty_like(first)
    rank[np.argsort(first)] = np.arange(first.size)
    return rank[inverse.reshape(-1)]


def silhouette(points, labels) -> float:
    """
    Mean silhouette coefficient (Euclidean). 0 for fewer than two clusters; singleton
    clusters contribute 0.
    """
    points = np.asarray(points, dtype=np.float64)
    labels = _canonical(_labels_vector(labels))
    if points.ndim == 1:
        points = points[:, np.newaxis]
    m = points.shape[0]
    if m != labels.size:
        raise InvalidArgumentError(f"{m} points for {labels.size} labels")
    if m < 2:
        raise InvalidArgumentError("silhouette needs at least 2 points")
    k = np.unique(labels).size
    if k < 2 or k == m:
        return 0.0
    return float(sk_metrics.silhouette_score(points, labels, metric="euclidean"))


def _check_partition(points, labels):
    points = np.asarray(points, dtype=np.float64)
    labels = _canonical(_labels_vector(labels))
    if points.ndim == 1:
        points = points[:, np.newaxis]
    if points.shape[0] != labels.size:
        raise InvalidArgumentError(f"{points.shape[0]} points for {labels.size} labels")
    k = np.unique(labels).size
    if k < 2:
        raise InvalidArgumentError(f"need at least 2 clusters, got {k}")
    return points, labels, k


def calinski_harabasz(points, labels) -> float:
    points, labels, k = _check_partition(points, labels)
    if points.shape[0] <= k:
        raise InvalidArgumentError(f"need more points than clusters, got {points.shape[0]} points for {k} clusters")
    return float(sk_metrics.calinski_harabasz_score(points, labels))


def davies_bouldin(points, labels) -> float:
    points, labels, k = _check_partition(points, labels)
    if points.shape[0] == k:
        # every cluster is a single point: no scatter anywhere
        return 0.0
    return float(sk_metrics.davies_bouldin_score(points, labels))


def _standardized(values: np.ndarray) -> np.ndarray:
    std = values.std(ddof=1)
    if std < EPS:
        return np.zeros_like(values)
    return (values - values.mean()) / std


def _normal_scores(values: np.ndarray) -> np.ndarray:
    """
    Rank-based normal scores with unit sample std; ties share their mean rank.
    """
    quantiles = (rankdata(values) - 0.5) / values.size
    return _standardized(ndtri(quantiles))


def _standardize_params(params: CurveParams) -> CurveParams:
    # curvature and torsion are heavy tailed: a plain z-score leaves most steps near 0
    return CurveParams(
        kappa=_normal_scores(params.kappa),
        tau=_normal_scores(params.tau),
        speed=params.speed,
        accel=_normal_scores(params.accel),
    )


def _scaled_columns(matrix: np.ndarray) -> np.ndarray:
    if matrix.shape[0] < 2:
        return matrix
    std = matrix.std(axis=0)
    scaled = np.zeros_like(matrix)
    varying = std >= EPS
    scaled[:, varying] = (matrix[:, varying] - matrix[:, varying].mean(axis=0)) / std[varying]
    return scaled


def subsequence_features(
    series: TimeSeries, params: CurveParams, labels: LabelArray, include_label_zero: bool = True
) -> List[SubseqFeatures]:
    if params.n != series.n:
        raise InvalidArgumentError(f"curve parameters for {params.n} steps, series has {series.n}")
    _labels_vector(labels, series.n)

    features = []
    seen: Dict[int, int] = defaultdict(int)
    for subsequence in segment_labels(labels):
        if subsequence.cluster_id == 0 and not include_label_zero:
            continue
        steps = slice(subsequence.start, subsequence.stop)
        kappa, tau, accel = params.kappa[steps], params.tau[steps], params.accel[steps]
        features.append(
            SubseqFeatures(
                cluster_id=subsequence.cluster_id,
                subseq_index=seen[subsequence.cluster_id],
                start=subsequence.start,
                mean_kappa=float(kappa.mean()),
                mean_tau=float(tau.mean()),
                mean_accel=float(accel.mean()),
                sigma=_sigma(kappa, tau, accel),
                count=subsequence.length,
                medians=tuple(np.median(series.values[:, steps], axis=1).tolist()),
            )
        )
        seen[subsequence.cluster_id] += 1
    return features


def feature_matrices(features: Sequence[SubseqFeatures]) -> Tuple[np.ndarray, np.ndarray, np.ndarray]:
    """
    Per-subsequence rows ``[kappa, tau, accel, sigma, N]`` and ``[medians..., sigma, N]``
    plus the cluster id of each row.
    """
    sp_matrix = np.array([f.sp_row for f in features], dtype=np.float64)
    sl_matrix = np.array([f.sl_row for f in features], dtype=np.float64)
    ids = np.array([f.cluster_id for f in features], dtype=np.int64)
    return sp_matrix, sl_matrix, ids


def _derived_silhouette(matrix: np.ndarray, ids: np.ndarray) -> float:
    if ids.size < 2:
        return 0.0
    return silhouette(matrix, ids)


def _standard_metrics(points: np.ndarray, labels: np.ndarray):
    m = labels.size
    k = np.unique(labels).size
    if m < 2 or k < 2:
        return 0.0, None, None
    sil = silhouette(points, labels)
    ch = calinski_harabasz(points, labels) if m > k else None
    db = davies_bouldin(points, labels)
    return sil, ch, db


def mt3scm(
    series: TimeSeries,
    labels: LabelArray,
    include_label_zero: bool = True,
    standardize_curve_params: bool = False,
    params: Optional[CurveParams] = None,
    standardize_features: bool = False,
) -> MetricReport:
    """
    Multivariate time series sub-sequence clustering metric: the mean of the weighted
    curvature consistency and the silhouettes over per-subsequence curve features (sp) and
    per-subsequence median locations (sl).

    Curve parameters are computed once on the whole (un-standardized) series.
    ``standardize_curve_params`` replaces kappa, tau and accel by rank-based normal scores
    over the whole series, so cc_i measures spread relative to the series' own spread.
    ``standardize_features`` z-scores every column of both feature matrices before the
    silhouettes, so the subsequence length does not outweigh the other columns.
    """
    values = _labels_vector(labels, series.n)
    if params is None:
        params = curve_params(series)
    if standardize_curve_params:
        params = _standardize_params(params)

    cc = cluster_curvature_consistency(params, labels, include_label_zero)
    if not cc:
        raise InvalidArgumentError("no clusters to evaluate")
    counts = {cluster_id: int((values == cluster_id).sum()) for cluster_id in cc}
    wcc = weighted_cc(cc, counts)

    features = subsequence_features(series, params, labels, include_label_zero)
    sp_matrix, sl_matrix, ids = feature_matrices(features)
    if standardize_features:
        sp_matrix, sl_matrix = _scaled_columns(sp_matrix), _scaled_columns(sl_matrix)
    degenerate = len(cc) < 2
    if degenerate:
        logger.warning("fewer than two clusters: sl and sp set to 0")
        sp = sl = 0.0
    else:
        sp = _derived_silhouette(sp_matrix, ids)
        sl = _derived_silhouette(sl_matrix, ids)

    mask = np.ones(series.n, dtype=bool) if include_label_zero else values != 0
    sil, ch, db = _standard_metrics(series.values[:, mask].T, values[mask])

    return MetricReport(
        mt3scm=(wcc + sl + sp) / 3,
        wcc=wcc,
        cc_per_cluster=cc,
        sl=sl,
        sp=sp,
        silhouette=sil,
        calinski_harabasz=ch,
        davies_bouldin=db,
        n_clusters=len(cc),
        n_subsequences=len(features),
        cc_mean=math.fsum(cc.values()) / len(cc),
        degenerate=degenerate,
    )


def report_rows(report: MetricReport) -> List[Tuple[str, str]]:
    def fmt(value):
        return "undefined" if value is None else f"{value:.17g}"

    rows = [
        ("mt3scm", fmt(report.mt3scm)),
        ("wcc", fmt(report.wcc)),
        ("sl", fmt(report.sl)),
        ("sp", fmt(report.sp)),
        ("cc_mean", fmt(report.cc_mean)),
        ("silhouette", fmt(report.silhouette)),
        ("calinski_harabasz", fmt(report.calinski_harabasz)),
        ("davies_bouldin", fmt(report.davies_bouldin)),
        ("n_clusters", str(report.n_clusters)),
        ("n_subsequences", str(report.n_subsequences)),
        ("degenerate", str(report.degenerate).lower()),
    ]
    rows.extend((f"cc_{cluster_id}", fmt(value)) for cluster_id, value in sorted(report.cc_per_cluster.items()))
    return rows
