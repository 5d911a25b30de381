"""
Command line interface: ``abimca <command> --help``.

Every command that takes algorithm settings also accepts ``--config`` with a key/value
file; flags given on the command line override the file.
"""
import logging
import os
from contextlib import contextmanager
from pathlib import Path
from typing import Dict, List, Optional, Sequence, Tuple

import numpy as np
import pandas as pd
import typer

from .bench import (
    best_by_metric,
    emit_plot_data,
    group_records,
    load_records,
    outperformance,
    random_search,
    save_record,
    write_score_trace,
    write_trajectory,
)
from .datasets import DATASETS, load_dataset, load_labels, save_csv, save_labels
from .engine import SubseqRegistry, predict_offline, run_online
from .errors import (
    ConfigurationError,
    GenerationError,
    InvalidArgumentError,
    ParseError,
    TrainingError,
)
from .geometry import curve_params
from .kmeans import fit, predict
from .metrics import METRICS, feature_matrices, mt3scm, report_rows, subsequence_features
from .options import AbimcaConfig, Algorithm, KMeansConfig, SearchConfig, parse_config_lines, read_config
from .series import LabelArray, TimeSeries, fit_stats, standardize
from .utils import json_dumps

logger = logging.getLogger(__name__)

EXIT_CONFIGURATION = 2
EXIT_RUNTIME = 3

app = typer.Typer(
    name="abimca",
    help="Subsequence clustering of multivariate time series and the MT3SCM metric",
    add_completion=False,
)


@app.callback()
def main(verbose: bool = typer.Option(False, "--verbose", "-v", help="Debug logging")):
    logging.basicConfig(
        level=logging.DEBUG if verbose else logging.WARNING,
        format="%(asctime)s %(levelname)s %(name)s: %(message)s",
    )


@contextmanager
def _exit_codes():
    try:
        yield
    except (ConfigurationError, ParseError, InvalidArgumentError) as e:
        typer.echo(f"error: {e}", err=True)
        raise typer.Exit(EXIT_CONFIGURATION)
    except (TrainingError, GenerationError) as e:
        typer.echo(f"error: {e}", err=True)
        raise typer.Exit(EXIT_RUNTIME)


def _literal(value: str):
    for kind in (int, float):
        try:
            return kind(value)
        except ValueError:
            pass
    return value


def _pairs(items: Sequence[str]) -> Dict[str, str]:
    return parse_config_lines(items, "--param")


def _layered(config: Optional[Path], base: Optional[Dict[str, str]] = None, **flags) -> Dict[str, object]:
    """
    Defaults < ``base`` < config file < flags (flags left at None do not count).
    """
    values: Dict[str, object] = dict(base or {})
    if config is not None:
        values.update(read_config(config))
    values.update({name.replace("_", "-"): value for name, value in flags.items() if value is not None})
    return values


def _read_series(path: Path) -> Tuple[TimeSeries, Optional[LabelArray]]:
    return load_dataset(f"csv:{path}")


def _read_labeled(series_path: Path, labels_path: Optional[Path]) -> Tuple[TimeSeries, LabelArray]:
    series, labels = _read_series(series_path)
    if labels_path is not None:
        labels = load_labels(labels_path)
    if labels is None:
        raise ConfigurationError(f"{series_path} has no label column and no --labels file was given")
    if len(labels) != series.n:
        raise InvalidArgumentError(f"{len(labels)} labels for {series.n} steps")
    return series, labels


def _echo_rows(rows: Sequence[Tuple[str, str]]):
    width = max(len(name) for name, _ in rows)
    for name, value in rows:
        typer.echo(f"{name:<{width}}  {value}")


def _write_rows(path: Path, rows: Sequence[Tuple[str, str]]):
    pd.DataFrame(list(rows), columns=["metric", "value"]).to_csv(path, index=False)


@app.command()
def generate(
    dataset: str = typer.Option(..., "--dataset", "-d", help=f"One of: {', '.join(DATASETS)}"),
    output: Path = typer.Option(..., "--output", "-o", help="CSV file to write"),
    seed: Optional[int] = typer.Option(None, "--seed", help="Noise seed (step-regimes)"),
    param: List[str] = typer.Option([], "--param", "-p", help="Generator parameter as key=value, repeatable"),
):
    """
    Write a bundled dataset as CSV (with a label column when the dataset has ground truth).
    """
    with _exit_codes():
        if dataset not in DATASETS:
            raise ConfigurationError(f"unknown dataset: {dataset!r}")
        overrides = {key.replace("-", "_"): _literal(value) for key, value in _pairs(param).items()}
        if seed is not None:
            overrides["seed"] = seed
        series, labels = load_dataset(dataset, **overrides)
        save_csv(output, series, labels)
    typer.echo(f"{dataset}: {series.d} features x {series.n} steps -> {output}")


@app.command()
def curve(
    input: Path = typer.Option(..., "--input", "-i", help="Series CSV"),
    output: Path = typer.Option(..., "--output", "-o", help="CSV with per-step kappa, tau, speed, accel"),
):
    """
    Per-step curvature, torsion, speed and acceleration of the feature-space trajectory.
    """
    with _exit_codes():
        series, labels = _read_series(input)
        write_trajectory(output, series, labels)
    typer.echo(f"curve parameters for {series.n} steps -> {output}")


@app.command()
def evaluate(
    series: Path = typer.Option(..., "--series", "-s", help="Series CSV"),
    labels: Optional[Path] = typer.Option(None, "--labels", "-l", help="Labels CSV (default: label column)"),
    output: Optional[Path] = typer.Option(None, "--output", "-o", help="metric,value CSV"),
    include_label_zero: bool = typer.Option(True, "--include-label-zero/--exclude-label-zero"),
    standardize_curve_params: bool = typer.Option(False, "--standardize-curve-params", help="Rank-based normal scores"),
    standardize_features: bool = typer.Option(False, "--standardize-features", help="z-score feature columns"),
):
    """
    MT3SCM and the standard internal metrics of a labelling.
    """
    with _exit_codes():
        data, assigned = _read_labeled(series, labels)
        report = mt3scm(
            data,
            assigned,
            include_label_zero=include_label_zero,
            standardize_curve_params=standardize_curve_params,
            standardize_features=standardize_features,
        )
        rows = report_rows(report)
        if output is not None:
            _write_rows(output, rows)
    _echo_rows(rows)


@app.command()
def features(
    series: Path = typer.Option(..., "--series", "-s", help="Series CSV"),
    labels: Optional[Path] = typer.Option(None, "--labels", "-l", help="Labels CSV (default: label column)"),
    output_dir: Path = typer.Option(..., "--output-dir", "-o", help="Writes sp.csv and sl.csv"),
):
    """
    Per-subsequence feature rows behind the sp and sl silhouettes.
    """
    with _exit_codes():
        data, assigned = _read_labeled(series, labels)
        rows = subsequence_features(data, curve_params(data), assigned)
        if not rows:
            raise InvalidArgumentError("no subsequences")
        sp_matrix, sl_matrix, ids = feature_matrices(rows)
    os.makedirs(output_dir, exist_ok=True)

    sp = pd.DataFrame(sp_matrix, columns=["kappa", "tau", "accel", "sigma", "count"])
    sl = pd.DataFrame(sl_matrix, columns=[*(f"median_{name}" for name in data.feature_names), "sigma", "count"])
    for frame in (sp, sl):
        frame.insert(0, "cluster", ids)
        frame.insert(1, "start", [row.start for row in rows])
    sp.to_csv(output_dir / "sp.csv", index=False, float_format="%.17g")
    sl.to_csv(output_dir / "sl.csv", index=False, float_format="%.17g")
    typer.echo(f"{len(rows)} subsequences -> {output_dir}")


@app.command()
def cluster(
    input: Path = typer.Option(..., "--input", "-i", help="Series CSV"),
    labels_out: Path = typer.Option(..., "--labels-out", help="Labels CSV to write"),
    trace_out: Optional[Path] = typer.Option(None, "--trace-out", help="Score trace CSV"),
    registry_out: Optional[Path] = typer.Option(None, "--registry-out", help="Directory for subsequence models"),
    plot_dir: Optional[Path] = typer.Option(None, "--plot-dir", help="Series, trajectory and trace CSVs"),
    config: Optional[Path] = typer.Option(None, "--config", "-c", help="key = value settings file"),
    learning_rate: Optional[float] = typer.Option(None, "--learning-rate"),
    omega: Optional[int] = typer.Option(None, "--omega", help="Training iterations per window"),
    eta: Optional[float] = typer.Option(None, "--eta", help="Detection threshold"),
    theta_factor: Optional[float] = typer.Option(None, "--theta-factor", help="Recognition / detection ratio"),
    seq_len: Optional[int] = typer.Option(None, "--seq-len", help="Window length"),
    step_size: Optional[int] = typer.Option(None, "--step-size", help="Window stride"),
    seed: Optional[int] = typer.Option(None, "--seed"),
):
    """
    Online subsequence clustering with the iteratively trained autoencoder.
    """
    with _exit_codes():
        settings = AbimcaConfig.from_mapping(
            _layered(
                config,
                learning_rate=learning_rate,
                omega=omega,
                eta=eta,
                theta_factor=theta_factor,
                seq_len=seq_len,
                step_size=step_size,
                seed=seed,
            )
        )
        series, _ = _read_series(input)
        labels, steps, registry = run_online(series, settings)
        save_labels(labels_out, labels)
        if trace_out is not None:
            write_score_trace(trace_out, steps, settings)
        if registry_out is not None:
            registry.to_dir(str(registry_out), settings)
        if plot_dir is not None:
            emit_plot_data(str(plot_dir), series, labels, steps, settings)
    typer.echo(f"{len(steps)} windows, {len(registry)} subsequence models, labels -> {labels_out}")


@app.command("predict")
def predict_command(
    input: Path = typer.Option(..., "--input", "-i", help="Series CSV"),
    registry: Path = typer.Option(..., "--registry", "-r", help="Directory written by 'cluster'"),
    output: Path = typer.Option(..., "--output", "-o", help="Labels CSV to write"),
    config: Optional[Path] = typer.Option(None, "--config", "-c", help="key = value settings file"),
    allow_unknown: Optional[bool] = typer.Option(
        None, "--allow-unknown/--no-allow-unknown", help="Label unrecognized windows 0"
    ),
):
    """
    Label a series with stored subsequence models only.
    """
    with _exit_codes():
        models, stored = SubseqRegistry.open(str(registry))
        base = parse_config_lines(stored.encode()) if stored is not None else None
        settings = AbimcaConfig.from_mapping(_layered(config, base, allow_unknown_in_predict=allow_unknown))
        series, _ = _read_series(input)
        labels = predict_offline(series, models, settings)
        save_labels(output, labels)
    typer.echo(f"{series.n} steps labelled with {len(models)} models -> {output}")


@app.command()
def kmeans(
    input: Path = typer.Option(..., "--input", "-i", help="Series CSV"),
    labels_out: Path = typer.Option(..., "--labels-out", help="Labels CSV to write"),
    centroids_out: Optional[Path] = typer.Option(None, "--centroids-out", help="Centroids CSV"),
    config: Optional[Path] = typer.Option(None, "--config", "-c", help="key = value settings file"),
    n_clusters: Optional[int] = typer.Option(None, "--n-clusters", "-k"),
    max_iter: Optional[int] = typer.Option(None, "--max-iter"),
    batch_size: Optional[int] = typer.Option(None, "--batch-size"),
    seq_len: Optional[int] = typer.Option(None, "--seq-len"),
    seed: Optional[int] = typer.Option(None, "--seed"),
):
    """
    Mini-batch k-means baseline on the standardized series.
    """
    with _exit_codes():
        settings = KMeansConfig.from_mapping(
            _layered(
                config,
                n_clusters=n_clusters,
                max_iter=max_iter,
                batch_size=batch_size,
                seq_len=seq_len,
                seed=seed,
            )
        )
        series, _ = _read_series(input)
        scaled = standardize(series, fit_stats(series))
        model = fit(scaled, settings)
        labels = predict(scaled, model)
        save_labels(labels_out, labels)
        if centroids_out is not None:
            pd.DataFrame(model.centroids).to_csv(centroids_out, index=False, float_format="%.17g")
    typer.echo(f"{model.n_clusters} centroids, labels -> {labels_out}")


def _best_rows(records) -> List[Tuple[str, str]]:
    best = best_by_metric(records)
    return [
        (metric, f"{best[metric].value(metric):.6g} ({best[metric].run_id})" if metric in best else "undefined")
        for metric in METRICS
    ]


@app.command()
def search(
    algorithm: List[str] = typer.Option([], "--algorithm", "-a", help="Algorithm id, repeatable (default: all)"),
    dataset: List[str] = typer.Option([], "--dataset", "-d", help="Dataset id or csv:<path>, repeatable"),
    results_dir: Optional[Path] = typer.Option(None, "--results-dir", "-o", help="Root of runs/<id>/"),
    config: Optional[Path] = typer.Option(None, "--config", "-c", help="key = value settings file"),
    samples: Optional[int] = typer.Option(None, "--samples", "-n", help="Random draws per algorithm and dataset"),
    seed: Optional[int] = typer.Option(None, "--seed"),
    workers: Optional[int] = typer.Option(None, "--workers", "-j"),
    progress: Optional[bool] = typer.Option(None, "--progress/--no-progress"),
):
    """
    Random search over the default parameter bounds; every run is saved.
    """
    summary = {}
    with _exit_codes():
        settings = SearchConfig.from_mapping(
            _layered(
                config,
                algorithm=",".join(algorithm) or None,
                dataset=",".join(dataset) or None,
                results_dir=None if results_dir is None else str(results_dir),
                samples=samples,
                seed=seed,
                workers=workers,
                progress=progress,
            )
        )
        for name in settings.algorithms:
            for dataset_id in settings.datasets:
                records = random_search(
                    name,
                    dataset_id,
                    samples=settings.samples,
                    seed=settings.seed,
                    workers=settings.workers,
                    progress=settings.progress,
                )
                for record in records:
                    save_record(record, settings.results_dir)
                failed = sum(record.failed for record in records)
                typer.echo(f"{name.value} on {dataset_id}: {len(records)} runs, {failed} failed")
                if failed < len(records):
                    _echo_rows(_best_rows(records))
                    summary.setdefault(name.value, {})[dataset_id] = {
                        metric: record.run_id for metric, record in best_by_metric(records).items()
                    }
    os.makedirs(settings.results_dir, exist_ok=True)
    with open(os.path.join(settings.results_dir, "summary.json"), "w", encoding="utf-8") as fd:
        fd.write(json_dumps(summary))


@app.command()
def report(
    results_dir: Path = typer.Option(..., "--results-dir", "-i", help="Directory written by 'search'"),
    baseline: str = typer.Option(Algorithm.kmeans.value, "--baseline", "-b"),
):
    """
    Best value per metric for every algorithm and dataset, and outperformance counts
    against the baseline.
    """
    with _exit_codes():
        grouped = group_records(load_records(str(results_dir)))
        for name, by_dataset in sorted(grouped.items()):
            for dataset_id, records in sorted(by_dataset.items()):
                typer.echo(f"[{name} / {dataset_id}]")
                if all(record.failed for record in records):
                    typer.echo("every run failed")
                    continue
                _echo_rows(_best_rows(records))
        table = outperformance(grouped, baseline)

    typer.echo(f"[datasets won against {table.baseline}, out of {len(table.datasets)}]")
    header = ["algorithm", *METRICS, "total"]
    rows = [
        [name, *(str(table.counts[name][metric]) for metric in METRICS), str(table.totals[name])]
        for name in sorted(table.counts)
    ]
    widths = np.max([[len(cell) for cell in row] for row in [header, *rows]], axis=0)
    for row in [header, *rows]:
        typer.echo("  ".join(cell.ljust(width) for cell, width in zip(row, widths)))
