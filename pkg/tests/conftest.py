import numpy as np
import pytest

from abimca.datasets import LorenzParams, StepRegimeSpec, gen_lorenz, gen_step_regimes, save_csv
from abimca.series import LabelArray, TimeSeries


@pytest.fixture
def small_series():
    rng = np.random.default_rng(7)
    t = np.linspace(0, 4 * np.pi, 120)
    values = np.vstack([np.sin(t), np.cos(0.5 * t), 0.3 * t]) + rng.normal(0, 0.01, size=(3, t.size))
    return TimeSeries(values, ("a", "b", "c"))


@pytest.fixture
def small_labels():
    return LabelArray(np.repeat([1, 2, 1, 3], 30))


@pytest.fixture(scope="session")
def lorenz_short():
    return gen_lorenz(LorenzParams(steps=2000))


@pytest.fixture(scope="session")
def stepped():
    return gen_step_regimes(StepRegimeSpec())


@pytest.fixture
def csv_series(tmp_path, small_series, small_labels):
    path = tmp_path / "series.csv"
    save_csv(path, small_series, small_labels)
    return path
