import json

import pandas as pd
import pytest
from typer.testing import CliRunner

from abimca.cli import app
from abimca.datasets import load_csv, load_labels, save_csv, save_labels
from abimca.engine import SubseqRegistry

runner = CliRunner()


def invoke(*args):
    return runner.invoke(app, [str(arg) for arg in args])


@pytest.fixture
def stepped_csv(tmp_path):
    path = tmp_path / "stepped.csv"
    result = invoke("generate", "-d", "step-regimes", "-o", path, "-p", "dwell=20", "-p", "repeats=1")
    assert result.exit_code == 0, result.output
    return path


def test_generate(tmp_path, stepped_csv):
    series, labels = load_csv(stepped_csv, has_labels=True)
    assert series.shape == (3, 80)
    assert labels.ids == (1, 2, 3, 4)

    path = tmp_path / "lorenz.csv"
    result = invoke("generate", "--dataset", "lorenz", "--output", path, "--param", "steps=300")
    assert result.exit_code == 0, result.output
    assert "3 features x 300 steps" in result.output

    result = invoke("generate", "-d", "mackey-glass", "-o", path)
    assert result.exit_code == 2
    result = invoke("generate", "-d", "lorenz", "-o", path, "-p", "rho=28")
    assert result.exit_code == 2


def test_curve(tmp_path, stepped_csv):
    output = tmp_path / "curve.csv"
    result = invoke("curve", "-i", stepped_csv, "-o", output)
    assert result.exit_code == 0, result.output
    frame = pd.read_csv(output)
    assert {"kappa", "tau", "speed", "accel", "label"} <= set(frame.columns)
    assert len(frame) == 80


def test_evaluate(tmp_path, csv_series):
    output = tmp_path / "metrics.csv"
    result = invoke("evaluate", "-s", csv_series, "-o", output)
    assert result.exit_code == 0, result.output
    assert "mt3scm" in result.output
    metrics = dict(pd.read_csv(output, dtype=str).values)
    assert -1.0 <= float(metrics["mt3scm"]) <= 1.0
    assert metrics["n_clusters"] == "3"


def test_evaluate_labels_file(tmp_path, small_series, small_labels):
    series_path = tmp_path / "plain.csv"
    save_csv(series_path, small_series)
    result = invoke("evaluate", "-s", series_path)
    assert result.exit_code == 2
    assert "no label column" in result.output

    labels_path = tmp_path / "labels.csv"
    save_labels(labels_path, small_labels)
    result = invoke(
        "evaluate", "-s", series_path, "-l", labels_path, "--standardize-curve-params", "--standardize-features"
    )
    assert result.exit_code == 0, result.output


def test_features(tmp_path, csv_series):
    result = invoke("features", "-s", csv_series, "-o", tmp_path / "features")
    assert result.exit_code == 0, result.output
    sp = pd.read_csv(tmp_path / "features" / "sp.csv")
    sl = pd.read_csv(tmp_path / "features" / "sl.csv")
    assert sp["cluster"].tolist() == [1, 2, 1, 3]
    assert sp["start"].tolist() == [0, 30, 60, 90]
    assert list(sl.columns[2:5]) == ["median_a", "median_b", "median_c"]


def test_cluster_predict(tmp_path, stepped_csv):
    labels_out = tmp_path / "labels.csv"
    registry = tmp_path / "models"
    result = invoke(
        "cluster",
        "-i",
        stepped_csv,
        "--labels-out",
        labels_out,
        "--trace-out",
        tmp_path / "trace.csv",
        "--registry-out",
        registry,
        "--plot-dir",
        tmp_path / "plots",
        "--omega",
        3,
        "--eta",
        0.5,
    )
    assert result.exit_code == 0, result.output
    labels = load_labels(labels_out)
    assert len(labels) == 80
    assert (tmp_path / "plots" / "trajectory.csv").exists()
    trace = pd.read_csv(tmp_path / "trace.csv")
    assert (trace["eta"] == 0.5).all()

    models, stored = SubseqRegistry.open(str(registry))
    assert stored.train_cycles == 3
    assert stored.detection_threshold == 0.5

    if len(models):
        output = tmp_path / "predicted.csv"
        result = invoke("predict", "-i", stepped_csv, "-r", registry, "-o", output, "--no-allow-unknown")
        assert result.exit_code == 0, result.output
        assert 0 not in load_labels(output).ids


def test_cluster_config_file(tmp_path, stepped_csv):
    config = tmp_path / "abimca.cfg"
    config.write_text("omega = 2\neta = 0.5\nseq-len = 6\n")
    registry = tmp_path / "models"
    args = ["-i", stepped_csv, "--labels-out", tmp_path / "l.csv", "--registry-out", registry]
    result = invoke("cluster", *args, "-c", config, "--seq-len", 8)
    assert result.exit_code == 0, result.output
    # flags override the file, the file overrides the defaults
    assert "73 windows" in result.output
    _, stored = SubseqRegistry.open(str(registry))
    assert stored.train_cycles == 2
    assert stored.window_length == 8


@pytest.mark.parametrize(
    "content",
    ["omega = many\n", "colour = blue\n", "theta-factor = 1\n", "no separator\n"],
)
def test_cluster_bad_config(tmp_path, stepped_csv, content):
    config = tmp_path / "bad.cfg"
    config.write_text(content)
    result = invoke("cluster", "-i", stepped_csv, "--labels-out", tmp_path / "l.csv", "-c", config)
    assert result.exit_code == 2
    assert result.output.startswith("error:")


def test_cluster_bad_input(tmp_path):
    path = tmp_path / "bad.csv"
    path.write_text("a,b\n1,2\n3,x\n")
    result = invoke("cluster", "-i", path, "--labels-out", tmp_path / "l.csv")
    assert result.exit_code == 2


def test_cluster_divergence(tmp_path, stepped_csv):
    result = invoke("cluster", "-i", stepped_csv, "--labels-out", tmp_path / "l.csv", "--learning-rate", 1e6)
    assert result.exit_code == 3


def test_kmeans(tmp_path, stepped_csv):
    labels_out = tmp_path / "labels.csv"
    centroids = tmp_path / "centroids.csv"
    result = invoke(
        "kmeans", "-i", stepped_csv, "--labels-out", labels_out, "--centroids-out", centroids, "-k", 4, "--seq-len", 2
    )
    assert result.exit_code == 0, result.output
    assert len(load_labels(labels_out)) == 80
    assert pd.read_csv(centroids).shape == (4, 6)

    result = invoke("kmeans", "-i", stepped_csv, "--labels-out", labels_out, "-k", 500)
    assert result.exit_code == 2


def test_search_report(tmp_path, csv_series):
    results = tmp_path / "results"
    result = invoke(
        "search", "-a", "mini-batch-kmeans", "-d", f"csv:{csv_series}", "-o", results, "-n", 3, "--seed", 1
    )
    assert result.exit_code == 0, result.output
    assert "3 runs" in result.output
    assert len(list((results / "runs").iterdir())) == 3

    summary = json.loads((results / "summary.json").read_text())
    if summary:
        assert set(summary) == {"mini-batch-kmeans"}

    result = invoke("report", "-i", results)
    assert result.exit_code == 0, result.output
    assert "datasets won against mini-batch-kmeans" in result.output

    result = invoke("report", "-i", results, "-b", "abimca")
    assert result.exit_code == 2


def test_search_config_file(tmp_path, csv_series):
    results = tmp_path / "results"
    config = tmp_path / "search.cfg"
    config.write_text(
        f"algorithm = mini-batch-kmeans\ndataset = csv:{csv_series}\nresults-dir = {results}\nsamples = 5\nseed = 4\n"
    )
    # flags override the file
    result = invoke("search", "-c", config, "-n", 2)
    assert result.exit_code == 0, result.output
    assert "2 runs" in result.output
    assert len(list((results / "runs").iterdir())) == 2

    config.write_text("samples = 2\n")
    result = invoke("search", "-c", config)
    assert result.exit_code == 2
    assert "no dataset" in result.output

    config.write_text(f"dataset = csv:{csv_series}\nresults-dir = {results}\nbudget = 3\n")
    result = invoke("search", "-c", config)
    assert result.exit_code == 2
    assert result.output.startswith("error:")
