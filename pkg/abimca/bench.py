import logging
import os
import re
import time
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass, field
from functools import lru_cache
from typing import Dict, List, Mapping, Optional, Sequence, Tuple

import numpy as np
import pandas as pd
from threadpoolctl import threadpool_limits
from tqdm import tqdm

from .datasets import load_dataset, save_labels
from .engine import StepResult, run_online
from .errors import AbimcaError, ConfigurationError, InvalidArgumentError
from .geometry import curve_params
from .kmeans import fit_predict
from .metrics import LOWER_IS_BETTER, METRICS, MetricReport, mt3scm, report_rows
from .options import AbimcaConfig, Algorithm, KMeansConfig, read_config, write_config
from .series import LabelArray, TimeSeries, fit_stats, standardize
from .utils import imdict, make_rng

__all__ = (
    "Bound",
    "DEFAULT_SPACES",
    "RunRecord",
    "OutperformanceTable",
    "sample_params",
    "run_name",
    "run_once",
    "run_defaults",
    "rerun",
    "random_search",
    "best_by_metric",
    "group_records",
    "outperformance",
    "write_series_labels",
    "write_score_trace",
    "write_trajectory",
    "emit_plot_data",
    "save_record",
    "load_records",
)

logger = logging.getLogger(__name__)

# metrics.csv key prefix of the report that leaves label 0 out
WITHOUT_ZERO = "without_zero."


@dataclass(frozen=True)
class Bound:
    lower: float
    upper: float
    integer: bool = False

    def __post_init__(self):
        if self.lower > self.upper:
            raise ConfigurationError(f"lower bound {self.lower} exceeds upper bound {self.upper}")

    def sample(self, rng: np.random.Generator):
        value = rng.uniform(self.lower, self.upper)
        if self.integer:
            return int(min(max(round(value), self.lower), self.upper))
        return float(value)


DEFAULT_SPACES = imdict(
    {
        Algorithm.abimca.value: imdict(
            {
                "learning-rate": Bound(0.0, 0.01),
                "omega": Bound(5, 15, integer=True),
                "step-size": Bound(1, 3, integer=True),
                "seq-len": Bound(5, 20, integer=True),
                "eta": Bound(0.001, 10.0),
                "theta-factor": Bound(1.0, 3.0),
            }
        ),
        Algorithm.kmeans.value: imdict(
            {
                "n-clusters": Bound(1, 30, integer=True),
                "max-iter": Bound(1, 200, integer=True),
                "batch-size": Bound(128, 2048, integer=True),
                "seq-len": Bound(1, 100, integer=True),
            }
        ),
    }
)


@dataclass
class RunRecord:
    run_id: str
    algorithm: str
    dataset: str
    params: Dict[str, object]
    seed: int
    report: Optional[MetricReport] = None
    # the same labels scored with label 0 left out; None when every label is 0
    report_without_zero: Optional[MetricReport] = None
    wall_time: float = 0.0
    failed: bool = False
    error: Optional[str] = None
    labels: Optional[LabelArray] = field(default=None, repr=False, compare=False)
    steps: Optional[List[StepResult]] = field(default=None, repr=False, compare=False)

    def value(self, metric: str, include_label_zero: bool = True) -> Optional[float]:
        report = self.report if include_label_zero else self.report_without_zero
        if self.failed or report is None:
            return None
        return report.metric(metric)


@dataclass(frozen=True)
class OutperformanceTable:
    """
    Per algorithm and metric: datasets won against the baseline (``counts``), datasets
    lost, and ties (equal, undefined or missing values). Every row adds up to
    ``len(datasets)``.
    """

    baseline: str
    datasets: Tuple[str, ...]
    counts: Mapping[str, Mapping[str, int]]
    totals: Mapping[str, int]
    losses: Mapping[str, Mapping[str, int]]
    ties: Mapping[str, Mapping[str, int]]


def sample_params(space: Mapping[str, Bound], rng: np.random.Generator) -> Dict[str, object]:
    # sorted names: a draw never depends on mapping order
    return {name: space[name].sample(rng) for name in sorted(space)}


def run_name(algorithm: Algorithm, dataset: str, suffix: Optional[str] = None) -> str:
    """
    Directory-safe run id.

    >>> run_name(Algorithm.abimca, "csv:data/x.csv", "0001")
    'abimca-csv-data-x.csv-0001'
    """
    parts = [algorithm.value, re.sub(r"[^A-Za-z0-9._-]+", "-", dataset).strip("-")]
    if suffix:
        parts.append(suffix)
    return "-".join(parts)


@lru_cache(maxsize=8)
def _dataset(dataset_id: str) -> TimeSeries:
    series, _ = load_dataset(dataset_id)
    return series


def _cluster(algorithm: Algorithm, series: TimeSeries, params: Mapping, seed: int):
    if algorithm is Algorithm.abimca:
        config = AbimcaConfig.from_mapping(params, seed=seed)
        labels, steps, _ = run_online(series, config)
        return labels, steps
    config = KMeansConfig.from_mapping(params, seed=seed)
    return fit_predict(standardize(series, fit_stats(series)), config), None


def _evaluate(series: TimeSeries, labels: LabelArray) -> Tuple[MetricReport, Optional[MetricReport]]:
    params = curve_params(series)
    report = mt3scm(series, labels, params=params)
    if 0 not in labels.ids:
        return report, report
    if labels.ids == (0,):
        return report, None
    return report, mt3scm(series, labels, include_label_zero=False, params=params)


def run_once(
    algorithm, dataset: str, params: Mapping, seed: int, run_id: Optional[str] = None, keep_steps: bool = False
) -> RunRecord:
    """
    Cluster the (standardized) dataset and evaluate every metric on the raw series.
    Errors inside the run are recorded on the returned record.
    """
    algorithm = Algorithm.parse(algorithm)
    series = _dataset(dataset)
    record = RunRecord(
        run_id=run_id or run_name(algorithm, dataset),
        algorithm=algorithm.value,
        dataset=dataset,
        params=dict(params),
        seed=int(seed),
    )
    started = time.perf_counter()
    try:
        labels, steps = _cluster(algorithm, series, params, seed)
        record.report, record.report_without_zero = _evaluate(series, labels)
        record.labels = labels
        record.steps = steps if keep_steps else None
    except AbimcaError as e:
        record.failed = True
        record.error = f"{type(e).__name__}: {e}"
        logger.warning("run %s failed: %s", record.run_id, record.error)
    record.wall_time = time.perf_counter() - started
    return record


def run_defaults(algorithm, dataset: str, seed: int = 0) -> RunRecord:
    algorithm = Algorithm.parse(algorithm)
    defaults = AbimcaConfig() if algorithm is Algorithm.abimca else KMeansConfig()
    params = dict(line.split("=", 1) for line in defaults.encode())
    params.pop("seed", None)
    return run_once(algorithm, dataset, params, seed, run_id=run_name(algorithm, dataset, "defaults"))


def rerun(record: RunRecord) -> RunRecord:
    return run_once(record.algorithm, record.dataset, record.params, record.seed, record.run_id)


def _run_task(task) -> RunRecord:
    with threadpool_limits(limits=1):
        return run_once(*task)


def random_search(
    algorithm,
    dataset: str,
    space: Optional[Mapping[str, Bound]] = None,
    samples: int = 300,
    seed: int = 0,
    workers: int = 1,
    progress: bool = False,
) -> List[RunRecord]:
    """
    ``samples`` independent uniform draws inside ``space`` (integers rounded), one run each.
    Records come back in draw order whatever the number of workers.
    """
    algorithm = Algorithm.parse(algorithm)
    if samples < 1:
        raise ConfigurationError(f"samples must be >= 1, got {samples}")
    space = DEFAULT_SPACES[algorithm.value] if space is None else space
    _dataset(dataset)

    rng = make_rng(seed)
    tasks = []
    for index in range(samples):
        params = sample_params(space, rng)
        run_seed = int(rng.integers(0, 2**31 - 1))
        tasks.append((algorithm.value, dataset, params, run_seed, run_name(algorithm, dataset, f"{index:04d}")))

    bar = dict(total=samples, disable=not progress, desc=f"{algorithm.value}/{dataset}")
    if workers > 1:
        with ProcessPoolExecutor(max_workers=workers) as pool:
            records = list(tqdm(pool.map(_run_task, tasks), **bar))
    else:
        records = [run_once(*task) for task in tqdm(tasks, **bar)]
    failed = sum(record.failed for record in records)
    logger.info("%s on %s: %d runs, %d failed", algorithm.value, dataset, len(records), failed)
    return records


def _better(metric: str, a: float, b: float) -> bool:
    return a < b if metric in LOWER_IS_BETTER else a > b


def best_by_metric(records: Sequence[RunRecord]) -> Dict[str, RunRecord]:
    """
    Best record per metric; failed runs and undefined metric values are skipped.
    """
    if not records:
        raise InvalidArgumentError("no records")
    usable = [record for record in records if not record.failed and record.report is not None]
    if not usable:
        raise InvalidArgumentError("every run failed")
    best = {}
    for metric in METRICS:
        for record in usable:
            value = record.value(metric)
            if value is None:
                continue
            if metric not in best or _better(metric, value, best[metric].value(metric)):
                best[metric] = record
    return best


def group_records(records: Sequence[RunRecord]) -> Dict[str, Dict[str, List[RunRecord]]]:
    grouped: Dict[str, Dict[str, List[RunRecord]]] = {}
    for record in records:
        grouped.setdefault(record.algorithm, {}).setdefault(record.dataset, []).append(record)
    return grouped


def _best_values(records: Sequence[RunRecord]) -> Dict[str, float]:
    try:
        best = best_by_metric(records)
    except InvalidArgumentError:
        return {}
    return {metric: record.value(metric) for metric, record in best.items()}


def outperformance(
    records_by_algorithm: Mapping[str, Mapping[str, Sequence[RunRecord]]], baseline_id: str
) -> OutperformanceTable:
    """
    Per algorithm and metric, the number of the baseline's datasets on which the
    algorithm's best value strictly beats the baseline's best value, and the number on
    which it strictly loses. Ties and undefined values count for nobody.
    """
    if baseline_id not in records_by_algorithm:
        raise ConfigurationError(f"baseline {baseline_id!r} has no records")
    baseline = {dataset: _best_values(records) for dataset, records in records_by_algorithm[baseline_id].items()}

    counts, losses, ties = {}, {}, {}
    for algorithm, by_dataset in records_by_algorithm.items():
        won = {metric: 0 for metric in METRICS}
        lost = {metric: 0 for metric in METRICS}
        for dataset, best in baseline.items():
            ours = _best_values(by_dataset.get(dataset, ()))
            for metric in METRICS:
                a, b = ours.get(metric), best.get(metric)
                if a is None or b is None:
                    continue
                if _better(metric, a, b):
                    won[metric] += 1
                elif _better(metric, b, a):
                    lost[metric] += 1
        counts[algorithm] = imdict(won)
        losses[algorithm] = imdict(lost)
        ties[algorithm] = imdict({metric: len(baseline) - won[metric] - lost[metric] for metric in METRICS})
    totals = imdict({algorithm: sum(row.values()) for algorithm, row in counts.items()})
    return OutperformanceTable(
        baseline_id, tuple(sorted(baseline)), imdict(counts), totals, imdict(losses), imdict(ties)
    )


def write_series_labels(path, series: TimeSeries, labels: LabelArray) -> None:
    frame = pd.DataFrame(series.values.T, columns=list(series.feature_names))
    frame.insert(0, "t", np.arange(series.n))
    frame["label"] = labels.labels
    frame.to_csv(path, index=False, float_format="%.17g")


def write_score_trace(path, steps: Sequence[StepResult], config: AbimcaConfig) -> None:
    """
    Columns t, s_b, s_1..s_c, eta, rho; subsequence scores are empty before their model exists.
    """
    models = max((len(step.subseq_scores) for step in steps), default=0)
    rows = []
    for step in steps:
        row = {"t": step.t, "s_b": step.base_score}
        for i in range(models):
            row[f"s_{i + 1}"] = step.subseq_scores[i] if i < len(step.subseq_scores) else np.nan
        row["eta"] = config.detection_threshold
        row["rho"] = config.recognition_threshold
        rows.append(row)
    columns = ["t", "s_b", *(f"s_{i + 1}" for i in range(models)), "eta", "rho"]
    pd.DataFrame(rows, columns=columns).to_csv(path, index=False, float_format="%.17g")


def write_trajectory(path, series: TimeSeries, labels: Optional[LabelArray] = None) -> None:
    params = curve_params(series)
    frame = pd.DataFrame(series.values.T, columns=list(series.feature_names))
    frame.insert(0, "t", np.arange(series.n))
    frame["kappa"] = params.kappa
    frame["tau"] = params.tau
    frame["speed"] = params.speed
    frame["accel"] = params.accel
    if labels is not None:
        frame["label"] = labels.labels
    frame.to_csv(path, index=False, float_format="%.17g")


def emit_plot_data(
    directory: str,
    series: TimeSeries,
    labels: LabelArray,
    steps: Optional[Sequence[StepResult]] = None,
    config: Optional[AbimcaConfig] = None,
) -> List[str]:
    os.makedirs(directory, exist_ok=True)
    written = [os.path.join(directory, "series.csv"), os.path.join(directory, "trajectory.csv")]
    write_series_labels(written[0], series, labels)
    write_trajectory(written[1], series, labels)
    if steps is not None:
        written.append(os.path.join(directory, "trace.csv"))
        write_score_trace(written[-1], steps, config or AbimcaConfig())
    return written


def save_record(record: RunRecord, root: str) -> str:
    """
    ``<root>/runs/<run_id>/``: params.cfg, metrics.csv, labels.csv, trace.csv (online runs).
    """
    path = os.path.join(root, "runs", record.run_id)
    os.makedirs(path, exist_ok=True)
    meta = {"algorithm": record.algorithm, "dataset": record.dataset, "seed": record.seed}
    write_config(os.path.join(path, "params.cfg"), {**meta, **record.params})

    rows = [("failed", str(record.failed).lower()), ("wall_time", f"{record.wall_time:.6f}")]
    if record.error:
        rows.append(("error", record.error))
    if record.report is not None:
        rows.extend(report_rows(record.report))
    if record.report_without_zero is not None:
        rows.extend((WITHOUT_ZERO + name, value) for name, value in report_rows(record.report_without_zero))
    pd.DataFrame(rows, columns=["metric", "value"]).to_csv(os.path.join(path, "metrics.csv"), index=False)

    if record.labels is not None:
        save_labels(os.path.join(path, "labels.csv"), record.labels)
    if record.steps is not None:
        config = AbimcaConfig.from_mapping(record.params, seed=record.seed)
        write_score_trace(os.path.join(path, "trace.csv"), record.steps, config)
    return path


def _optional_float(value: str) -> Optional[float]:
    return None if value == "undefined" else float(value)


def _report_from_rows(values: Mapping[str, str]) -> MetricReport:
    cc = {int(key[3:]): float(value) for key, value in values.items() if key.startswith("cc_") and key != "cc_mean"}
    return MetricReport(
        mt3scm=float(values["mt3scm"]),
        wcc=float(values["wcc"]),
        cc_per_cluster=imdict(cc),
        sl=float(values["sl"]),
        sp=float(values["sp"]),
        silhouette=float(values["silhouette"]),
        calinski_harabasz=_optional_float(values["calinski_harabasz"]),
        davies_bouldin=_optional_float(values["davies_bouldin"]),
        n_clusters=int(values["n_clusters"]),
        n_subsequences=int(values["n_subsequences"]),
        cc_mean=float(values["cc_mean"]),
        degenerate=values["degenerate"] == "true",
    )


def load_records(root: str) -> List[RunRecord]:
    runs = os.path.join(root, "runs")
    if not os.path.isdir(runs):
        raise ConfigurationError(f"{root}: no runs directory")
    records = []
    for run_id in sorted(os.listdir(runs)):
        path = os.path.join(runs, run_id)
        params = read_config(os.path.join(path, "params.cfg"))
        algorithm, dataset, seed = params.pop("algorithm"), params.pop("dataset"), int(params.pop("seed"))
        frame = pd.read_csv(os.path.join(path, "metrics.csv"), dtype=str, keep_default_na=False)
        values = dict(zip(frame["metric"], frame["value"]))
        failed = values.get("failed") == "true"
        without_zero = {
            key[len(WITHOUT_ZERO) :]: value for key, value in values.items() if key.startswith(WITHOUT_ZERO)
        }
        records.append(
            RunRecord(
                run_id=run_id,
                algorithm=algorithm,
                dataset=dataset,
                params=params,
                seed=seed,
                report=None if failed or "mt3scm" not in values else _report_from_rows(values),
                report_without_zero=_report_from_rows(without_zero) if without_zero else None,
                wall_time=float(values.get("wall_time", 0.0)),
                failed=failed,
                error=values.get("error"),
            )
        )
    return records
