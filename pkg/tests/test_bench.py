import os

import numpy as np
import pandas as pd
import pytest

from abimca.bench import (
    DEFAULT_SPACES,
    Bound,
    RunRecord,
    best_by_metric,
    emit_plot_data,
    group_records,
    load_records,
    outperformance,
    random_search,
    rerun,
    run_defaults,
    run_name,
    run_once,
    sample_params,
    save_record,
)
from abimca.datasets import load_dataset, save_csv
from abimca.engine import run_online
from abimca.errors import ConfigurationError, InvalidArgumentError
from abimca.metrics import METRICS, MetricReport
from abimca.options import AbimcaConfig, Algorithm
from abimca.series import LabelArray
from abimca.utils import make_rng


def make_report(mt3scm=0.0, silhouette=0.0, calinski_harabasz=None, davies_bouldin=None):
    return MetricReport(
        mt3scm=mt3scm,
        wcc=0.0,
        cc_per_cluster={1: 0.0},
        sl=0.0,
        sp=0.0,
        silhouette=silhouette,
        calinski_harabasz=calinski_harabasz,
        davies_bouldin=davies_bouldin,
        n_clusters=2,
        n_subsequences=2,
        cc_mean=0.0,
        degenerate=False,
    )


def make_record(algorithm, dataset, run_id=None, failed=False, **values):
    return RunRecord(
        run_id=run_id or f"{algorithm}-{dataset}",
        algorithm=algorithm,
        dataset=dataset,
        params={},
        seed=0,
        report=None if failed else make_report(**values),
        failed=failed,
    )


@pytest.fixture
def dataset(csv_series):
    return f"csv:{csv_series}"


@pytest.mark.parametrize("algorithm", [a.value for a in Algorithm])
def test_sample_params(algorithm):
    space = DEFAULT_SPACES[algorithm]
    rng = make_rng(0)
    for _ in range(300):
        params = sample_params(space, rng)
        assert set(params) == set(space)
        for name, value in params.items():
            bound = space[name]
            assert bound.lower <= value <= bound.upper
            if bound.integer:
                assert isinstance(value, int)

    assert sample_params(space, make_rng(5)) == sample_params(space, make_rng(5))


def test_bound():
    rng = make_rng(1)
    values = {Bound(1, 3, integer=True).sample(rng) for _ in range(200)}
    assert values == {1, 2, 3}
    with pytest.raises(ConfigurationError):
        Bound(2.0, 1.0)


def test_run_once_kmeans(dataset):
    record = run_once("mini-batch-kmeans", dataset, {"n-clusters": 3, "max-iter": 5, "seq-len": 2}, seed=1)
    assert not record.failed
    assert record.report.n_clusters <= 3
    assert len(record.labels) == 120
    assert -1.0 <= record.value("mt3scm") <= 1.0
    assert record.wall_time > 0

    again = rerun(record)
    assert again.labels == record.labels
    assert again.report == record.report


def test_run_once_abimca(dataset):
    params = {"omega": 3, "seq-len": 8, "eta": 0.5, "theta-factor": 2.0, "learning-rate": 0.01}
    record = run_once(Algorithm.abimca, dataset, params, seed=3, keep_steps=True)
    assert not record.failed
    assert len(record.steps) == 120 - 8 + 1

    # the first window ends at step 7: earlier steps carry label 0
    assert 0 in record.report.cc_per_cluster
    if record.labels.ids != (0,):
        assert 0 not in record.report_without_zero.cc_per_cluster
        assert record.report_without_zero.n_clusters == record.report.n_clusters - 1
        assert record.value("mt3scm", include_label_zero=False) == record.report_without_zero.mt3scm

    again = rerun(record)
    assert again.labels == record.labels
    assert again.steps is None


def test_run_once_failure(dataset):
    record = run_once("mini-batch-kmeans", dataset, {"n-clusters": 500}, seed=0)
    assert record.failed
    assert record.report is None
    assert record.error.startswith("InvalidArgumentError")
    assert record.value("mt3scm") is None


def test_random_search(dataset):
    space = {"n-clusters": Bound(2, 4, integer=True), "max-iter": Bound(1, 5, integer=True)}
    records = random_search("mini-batch-kmeans", dataset, space=space, samples=4, seed=2)
    assert [r.run_id for r in records] == [run_name(Algorithm.kmeans, dataset, f"{i:04d}") for i in range(4)]
    assert not any("/" in r.run_id for r in records)
    assert not any(r.failed for r in records)

    again = random_search("mini-batch-kmeans", dataset, space=space, samples=4, seed=2)
    assert [r.params for r in again] == [r.params for r in records]
    assert [r.report for r in again] == [r.report for r in records]

    best = best_by_metric(records)
    assert best["mt3scm"].value("mt3scm") == max(r.value("mt3scm") for r in records)

    with pytest.raises(ConfigurationError):
        random_search("mini-batch-kmeans", dataset, space=space, samples=0)
    with pytest.raises(ConfigurationError):
        random_search("birch", dataset)


def test_best_by_metric():
    records = [
        make_record("a", "x", "r1", mt3scm=0.2, silhouette=0.5, davies_bouldin=1.0),
        make_record("a", "x", "r2", mt3scm=0.4, silhouette=0.1, davies_bouldin=0.5),
        make_record("a", "x", "r3", failed=True),
    ]
    best = best_by_metric(records)
    assert best["mt3scm"].run_id == "r2"
    assert best["silhouette"].run_id == "r1"
    assert best["davies_bouldin"].run_id == "r2"
    # undefined everywhere
    assert "calinski_harabasz" not in best

    with pytest.raises(InvalidArgumentError):
        best_by_metric([])
    with pytest.raises(InvalidArgumentError):
        best_by_metric(records[2:])


def test_outperformance():
    records = [
        make_record("ours", "x", mt3scm=0.5, silhouette=0.2, davies_bouldin=0.4),
        make_record("ours", "y", mt3scm=0.1, silhouette=0.3, davies_bouldin=1.0),
        make_record("base", "x", mt3scm=0.3, silhouette=0.2, davies_bouldin=0.6),
        make_record("base", "y", mt3scm=0.2, silhouette=0.3, davies_bouldin=0.8),
    ]
    grouped = group_records(records)
    table = outperformance(grouped, "base")
    assert table.datasets == ("x", "y")
    assert dict(table.counts["ours"]) == {"silhouette": 0, "calinski_harabasz": 0, "davies_bouldin": 1, "mt3scm": 1}
    assert table.totals["ours"] == 2
    assert table.totals["base"] == 0
    assert dict(table.losses["ours"]) == {"silhouette": 0, "calinski_harabasz": 0, "davies_bouldin": 1, "mt3scm": 1}
    assert dict(table.ties["ours"]) == {"silhouette": 2, "calinski_harabasz": 2, "davies_bouldin": 0, "mt3scm": 0}
    assert dict(table.ties["base"]) == {metric: 2 for metric in METRICS}

    reverse = outperformance(grouped, "ours")
    for metric in METRICS:
        # ties count for neither side
        assert table.counts["ours"][metric] + reverse.counts["base"][metric] <= 2
    assert reverse.counts["base"]["mt3scm"] == 1
    assert reverse.counts["base"]["silhouette"] == 0

    with pytest.raises(ConfigurationError):
        outperformance(grouped, "birch")


def test_save_load_records(tmp_path, dataset):
    record = run_once("mini-batch-kmeans", dataset, {"n-clusters": 3, "max-iter": 5}, seed=1)
    failed = run_once("mini-batch-kmeans", dataset, {"n-clusters": 500}, seed=0, run_id="broken")
    root = str(tmp_path / "results")
    path = save_record(record, root)
    save_record(failed, root)
    assert sorted(os.listdir(path)) == ["labels.csv", "metrics.csv", "params.cfg"]

    loaded = {r.run_id: r for r in load_records(root)}
    assert set(loaded) == {record.run_id, "broken"}
    restored = loaded[record.run_id]
    assert restored.algorithm == "mini-batch-kmeans"
    assert restored.dataset == dataset
    assert restored.seed == 1
    assert restored.params == {"n-clusters": "3", "max-iter": "5"}
    for metric in METRICS:
        expected = record.value(metric)
        if expected is None:
            assert restored.value(metric) is None
        else:
            assert restored.value(metric) == pytest.approx(expected, rel=1e-12)
    assert loaded["broken"].failed
    assert loaded["broken"].value("mt3scm") is None
    assert loaded["broken"].report_without_zero is None

    with pytest.raises(ConfigurationError):
        load_records(str(tmp_path / "missing"))


def test_save_record_trace(tmp_path, dataset):
    params = {"omega": 2, "seq-len": 6, "eta": 0.5}
    record = run_once("abimca", dataset, params, seed=0, keep_steps=True)
    path = save_record(record, str(tmp_path))
    trace = pd.read_csv(os.path.join(path, "trace.csv"))
    assert list(trace.columns[:2]) == ["t", "s_b"]
    assert list(trace.columns[-2:]) == ["eta", "rho"]
    assert len(trace) == 120 - 6 + 1
    np.testing.assert_allclose(trace["rho"], 1.0)

    (restored,) = load_records(str(tmp_path))
    if record.report_without_zero is not None:
        expected = record.report_without_zero
        assert set(restored.report_without_zero.cc_per_cluster) == set(expected.cc_per_cluster)
        assert restored.value("mt3scm", include_label_zero=False) == pytest.approx(expected.mt3scm, rel=1e-12)


def test_emit_plot_data(tmp_path, small_series, small_labels):
    config = AbimcaConfig(train_cycles=2)
    labels, steps, _ = run_online(small_series, config)
    written = emit_plot_data(str(tmp_path / "plots"), small_series, labels, steps, config)
    assert [os.path.basename(p) for p in written] == ["series.csv", "trajectory.csv", "trace.csv"]

    series = pd.read_csv(written[0])
    assert list(series.columns) == ["t", "a", "b", "c", "label"]
    assert series["label"].tolist() == labels.tolist()

    trajectory = pd.read_csv(written[1])
    assert {"kappa", "tau", "speed", "accel"} <= set(trajectory.columns)
    assert np.isfinite(trajectory[["kappa", "tau", "speed", "accel"]].to_numpy()).all()

    written = emit_plot_data(str(tmp_path / "static"), small_series, LabelArray(small_labels.labels))
    assert len(written) == 2


def test_run_defaults(dataset):
    record = run_defaults("mini-batch-kmeans", dataset)
    assert record.run_id.endswith("-defaults")
    assert record.params["n-clusters"] == "4"
    assert "seed" not in record.params
    assert not record.failed


def test_random_search_abimca_rerun(dataset):
    space = DEFAULT_SPACES[Algorithm.abimca.value]
    records = random_search("abimca", dataset, samples=3, seed=11)
    assert len(records) == 3
    for record in records:
        for name, value in record.params.items():
            assert space[name].lower <= value <= space[name].upper

        again = rerun(record)
        assert again.failed == record.failed
        assert again.labels == record.labels
        for metric in METRICS:
            for include_label_zero in (True, False):
                expected = record.value(metric, include_label_zero)
                if expected is None:
                    assert again.value(metric, include_label_zero) is None
                else:
                    assert again.value(metric, include_label_zero) == pytest.approx(expected, abs=1e-9)


@pytest.fixture(scope="module")
def synthetic_datasets(tmp_path_factory):
    root = tmp_path_factory.mktemp("synthetic")
    datasets = []
    for name, overrides in (
        ("lorenz", {"steps": 300}),
        ("thomas", {"steps": 300}),
        ("step-regimes", {"dwell": 25, "repeats": 1}),
    ):
        series, labels = load_dataset(name, **overrides)
        path = root / f"{name}.csv"
        save_csv(path, series, labels)
        datasets.append(f"csv:{path}")
    return datasets


def test_outperformance_search_records(synthetic_datasets):
    abimca, kmeans = Algorithm.abimca.value, Algorithm.kmeans.value
    spaces = {
        abimca: {"omega": Bound(2, 3, integer=True), "seq-len": Bound(5, 8, integer=True), "eta": Bound(0.05, 1.0)},
        kmeans: {"n-clusters": Bound(2, 5, integer=True), "max-iter": Bound(5, 20, integer=True)},
    }
    records = []
    for algorithm, space in spaces.items():
        for dataset in synthetic_datasets:
            records.extend(random_search(algorithm, dataset, space=space, samples=2, seed=5))
    grouped = group_records(records)

    forward = outperformance(grouped, kmeans)
    backward = outperformance(grouped, abimca)
    assert forward.datasets == backward.datasets == tuple(sorted(synthetic_datasets))
    n = len(synthetic_datasets)
    for metric in METRICS:
        wins, losses = forward.counts[abimca][metric], backward.counts[kmeans][metric]
        ties = forward.ties[abimca][metric]
        assert wins + losses + ties == n
        assert forward.losses[abimca][metric] == losses
        assert backward.losses[kmeans][metric] == wins
        assert backward.ties[kmeans][metric] == ties
        # against itself every dataset is a tie
        assert forward.counts[kmeans][metric] == forward.losses[kmeans][metric] == 0
        assert forward.ties[kmeans][metric] == n
    assert forward.totals[abimca] + backward.totals[kmeans] + sum(forward.ties[abimca].values()) == n * len(METRICS)
