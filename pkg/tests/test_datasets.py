import numpy as np
import pytest

from abimca.datasets import (
    LorenzParams,
    StepRegimeSpec,
    ThomasParams,
    gen_lorenz,
    gen_perfect_metric_dataset,
    gen_random_segmentation,
    gen_step_regimes,
    gen_thomas,
    load_csv,
    load_dataset,
    load_labels,
    lorenz_derivative,
    save_csv,
    save_labels,
)
from abimca.errors import ConfigurationError, InvalidArgumentError, ParseError
from abimca.geometry import curve_params
from abimca.series import segment_labels


def euler(derivative, start, dt, steps):
    state = np.asarray(start, dtype=np.float64)
    states = [state]
    for _ in range(steps - 1):
        state = state + dt * derivative(state)
        states.append(state)
    return np.array(states)


def test_lorenz():
    series = gen_lorenz()
    assert series.shape == (3, 10000)
    assert series.feature_names == ("x", "y", "z")
    np.testing.assert_array_equal(series.values[:, 0], [0.0, 1.0, 1.05])
    assert np.abs(series.values).max() < 100
    # not periodic: the trajectory keeps moving
    assert np.linalg.norm(np.diff(series.values[:, -100:], axis=1), axis=0).min() > 0


def test_lorenz_euler_oracle():
    series = gen_lorenz(LorenzParams(steps=100))
    # fine Euler sampled at every 1000th step
    fine = euler(lorenz_derivative, (0.0, 1.0, 1.05), 1e-5, 99 * 1000 + 1)[::1000]
    np.testing.assert_allclose(series.values.T, fine, rtol=0, atol=1e-2)


def test_thomas():
    series = gen_thomas()
    assert series.shape == (3, 5000)
    assert np.abs(series.values).max() < 10

    coarse = gen_thomas(ThomasParams(steps=100))
    fine = gen_thomas(ThomasParams(dt=0.025, steps=199))
    np.testing.assert_allclose(coarse.values, fine.values[:, ::2], rtol=0, atol=1e-2)


@pytest.mark.parametrize("params", [LorenzParams(dt=0.0), LorenzParams(steps=1), ThomasParams(dt=-0.1)])
def test_integration_invalid(params):
    generate = gen_lorenz if isinstance(params, LorenzParams) else gen_thomas
    with pytest.raises(InvalidArgumentError):
        generate(params)


def test_step_regimes(stepped):
    series, labels = stepped
    assert series.shape == (3, 800)
    assert [(s.cluster_id, s.start, s.length) for s in segment_labels(labels)] == [
        (regime, start, 100) for start, regime in zip(range(0, 800, 100), [1, 2, 3, 4] * 2)
    ]
    # noise around the regime level
    first = series.values[:, :100]
    np.testing.assert_allclose(first.mean(axis=1), [1.0, 1.0, 1.0], atol=0.01)
    assert 0.005 < first.std(axis=1, ddof=1).mean() < 0.02

    again, _ = gen_step_regimes(StepRegimeSpec())
    np.testing.assert_array_equal(again.values, series.values)


@pytest.mark.parametrize(
    "spec",
    [
        StepRegimeSpec(regime_levels=((1.0, 1.0),)),
        StepRegimeSpec(dwell=1),
        StepRegimeSpec(repeats=0),
        StepRegimeSpec(noise_std=-1.0),
    ],
)
def test_step_regimes_invalid(spec):
    with pytest.raises(InvalidArgumentError):
        gen_step_regimes(spec)


def test_perfect_metric_dataset():
    series, labels = gen_perfect_metric_dataset(6)
    assert series.shape == (3, 6 * 1024)
    assert labels.ids == (1, 2, 3, 4)
    assert len(segment_labels(labels)) == 24

    # closed loop at unit arc length: cycles repeat exactly, no jump at the seam
    np.testing.assert_array_equal(series.values[:, 1024:2048], series.values[:, :1024])
    gaps = np.linalg.norm(np.diff(series.values[:, 1000:1100], axis=1), axis=0)
    np.testing.assert_allclose(gaps, 1.0, rtol=1e-4)

    params = curve_params(series)
    assert np.abs(params.tau).max() < 1e-9
    means = []
    for cluster_id in labels.ids:
        mask = labels.labels == cluster_id
        for values in (params.kappa, params.accel):
            assert values[mask].std(ddof=1) < 2e-3
        assert params.kappa[mask].mean() == pytest.approx(params.accel[mask].mean(), rel=1e-2)
        means.append(params.kappa[mask].mean())
    # every arc has its own curvature
    assert np.diff(np.sort(means)).min() > 5e-4

    with pytest.raises(InvalidArgumentError):
        gen_perfect_metric_dataset(0)
    with pytest.raises(InvalidArgumentError):
        gen_perfect_metric_dataset(6, samples_per_turn=10)


def test_random_segmentation():
    labels = gen_random_segmentation(1000, 12, n_labels=3, seed=5)
    assert len(labels) == 1000
    assert set(labels.ids) <= {1, 2, 3}
    # neighbouring segments with the same label merge
    assert len(segment_labels(labels)) <= 12
    assert gen_random_segmentation(1000, 12, n_labels=3, seed=5) == labels

    with pytest.raises(InvalidArgumentError):
        gen_random_segmentation(10, 11)


def test_csv(tmp_path, small_series, small_labels):
    path = tmp_path / "series.csv"
    save_csv(path, small_series, small_labels)
    series, labels = load_csv(path, has_labels=True)
    assert series.feature_names == small_series.feature_names
    np.testing.assert_allclose(series.values, small_series.values, rtol=0, atol=1e-9)
    assert labels == small_labels

    series, labels = load_csv(path)
    assert series.d == 4
    assert labels is None

    label_path = tmp_path / "labels.csv"
    save_labels(label_path, small_labels)
    assert load_labels(label_path) == small_labels


@pytest.mark.parametrize(
    "content, row, column",
    [
        ("a,b\n1,2\n3,x\n", 2, "b"),
        ("a,b\n1,2\n3,\n", 2, "b"),
        ("a,b\n1,2\n3,4,5\n", 2, None),
    ],
)
def test_csv_invalid(tmp_path, content, row, column):
    path = tmp_path / "bad.csv"
    path.write_text(content)
    with pytest.raises(ParseError) as error:
        load_csv(path)
    assert error.value.row == row
    assert error.value.column == column


def test_csv_empty(tmp_path):
    path = tmp_path / "empty.csv"
    path.write_text("")
    with pytest.raises(ParseError):
        load_csv(path)


def test_load_dataset(csv_series):
    series, labels = load_dataset("step-regimes", dwell=10, repeats=1)
    assert series.n == 40
    assert labels.ids == (1, 2, 3, 4)

    series, labels = load_dataset(f"csv:{csv_series}")
    assert series.d == 3
    assert labels is not None

    with pytest.raises(ConfigurationError):
        load_dataset("mackey-glass")
    with pytest.raises(ConfigurationError):
        load_dataset("lorenz", sigma=3.0)
