import logging
import math
import re
from dataclasses import dataclass, field
from typing import Callable, Optional, Sequence, Tuple

import numpy as np
import pandas as pd

from .errors import ConfigurationError, GenerationError, InvalidArgumentError, ParseError
from .series import LabelArray, TimeSeries
from .utils import make_rng

__all__ = (
    "LorenzParams",
    "ThomasParams",
    "StepRegimeSpec",
    "gen_lorenz",
    "gen_thomas",
    "gen_step_regimes",
    "gen_perfect_metric_dataset",
    "gen_random_segmentation",
    "load_csv",
    "save_csv",
    "load_labels",
    "save_labels",
    "load_dataset",
    "DATASETS",
)

logger = logging.getLogger(__name__)

LABEL_COLUMN = "label"

# tetrahedron corners: every feature is balanced, every pair of levels differs in two features
DEFAULT_REGIME_LEVELS = (
    (1.0, 1.0, 1.0),
    (1.0, -1.0, -1.0),
    (-1.0, 1.0, -1.0),
    (-1.0, -1.0, 1.0),
)

PERFECT_SAMPLES_PER_TURN = 1024
# left turns of the four arcs and the first two radii; the last two radii close the loop
PERFECT_TURNS = (math.pi / 3, 2 * math.pi / 3, math.pi / 2, math.pi / 2)
PERFECT_RADII = (1.0, 0.5)


@dataclass(frozen=True)
class LorenzParams:
    s: float = 10.0
    r: float = 28.0
    b: float = 2.667
    x0: float = 0.0
    y0: float = 1.0
    z0: float = 1.05
    dt: float = 0.01
    steps: int = 10000

    def validate(self):
        _check_integration(self.dt, self.steps)


@dataclass(frozen=True)
class ThomasParams:
    b: float = 0.1615
    x0: float = 1.0
    y0: float = 1.0
    z0: float = 1.0
    dt: float = 0.05
    steps: int = 5000

    def validate(self):
        _check_integration(self.dt, self.steps)


@dataclass(frozen=True)
class StepRegimeSpec:
    regime_levels: Tuple[Tuple[float, ...], ...] = field(default=DEFAULT_REGIME_LEVELS)
    dwell: int = 100
    repeats: int = 2
    noise_std: float = 0.01
    seed: int = 0

    def validate(self):
        levels = np.asarray(self.regime_levels, dtype=np.float64)
        if levels.ndim != 2 or levels.shape[0] < 2:
            raise InvalidArgumentError(f"need at least 2 regime level vectors, got shape {levels.shape}")
        if not np.isfinite(levels).all():
            raise InvalidArgumentError("regime levels must be finite")
        if self.dwell < 2:
            raise InvalidArgumentError(f"dwell must be >= 2, got {self.dwell}")
        if self.repeats < 1:
            raise InvalidArgumentError(f"repeats must be >= 1, got {self.repeats}")
        if not self.noise_std >= 0:
            raise InvalidArgumentError(f"noise std must be >= 0, got {self.noise_std}")


def _check_integration(dt, steps):
    if not dt > 0:
        raise InvalidArgumentError(f"dt must be positive, got {dt}")
    if steps < 2:
        raise InvalidArgumentError(f"steps must be >= 2, got {steps}")


def _rk4(derivative: Callable[[np.ndarray], np.ndarray], start, dt: float, steps: int) -> np.ndarray:
    states = np.empty((steps, len(start)), dtype=np.float64)
    state = np.asarray(start, dtype=np.float64)
    states[0] = state
    for i in range(1, steps):
        k1 = derivative(state)
        k2 = derivative(state + 0.5 * dt * k1)
        k3 = derivative(state + 0.5 * dt * k2)
        k4 = derivative(state + dt * k3)
        state = state + dt / 6.0 * (k1 + 2.0 * k2 + 2.0 * k3 + k4)
        if not np.isfinite(state).all():
            raise GenerationError(f"integration diverged at step {i}: {state.tolist()}")
        states[i] = state
    return states


def lorenz_derivative(state, s=10.0, r=28.0, b=2.667):
    x, y, z = state
    return np.array([s * (y - x), r * x - y - x * z, x * y - b * z])


def thomas_derivative(state, b=0.1615):
    x, y, z = state
    return np.array([math.sin(y) - b * x, math.sin(z) - b * y, math.sin(x) - b * z])


def gen_lorenz(params: LorenzParams = LorenzParams()) -> TimeSeries:
    params.validate()
    states = _rk4(
        lambda state: lorenz_derivative(state, params.s, params.r, params.b),
        (params.x0, params.y0, params.z0),
        params.dt,
        params.steps,
    )
    logger.info("lorenz trajectory: %d steps, dt=%s", params.steps, params.dt)
    return TimeSeries(states.T, ("x", "y", "z"))


def gen_thomas(params: ThomasParams = ThomasParams()) -> TimeSeries:
    params.validate()
    states = _rk4(
        lambda state: thomas_derivative(state, params.b),
        (params.x0, params.y0, params.z0),
        params.dt,
        params.steps,
    )
    logger.info("thomas trajectory: %d steps, dt=%s", params.steps, params.dt)
    return TimeSeries(states.T, ("x", "y", "z"))


def gen_step_regimes(spec: StepRegimeSpec = StepRegimeSpec()) -> Tuple[TimeSeries, LabelArray]:
    """
    Piecewise constant operating points with white noise; labels are the 1-based regime index.

    >>> series, labels = gen_step_regimes(StepRegimeSpec(((0.0,), (1.0,)), dwell=3, repeats=1, noise_std=0))
    >>> labels.tolist()
    [1, 1, 1, 2, 2, 2]
    """
    spec.validate()
    levels = np.asarray(spec.regime_levels, dtype=np.float64)
    n_regimes, d = levels.shape
    regime = np.tile(np.repeat(np.arange(n_regimes), spec.dwell), spec.repeats)
    values = levels[regime].T.copy()
    if spec.noise_std > 0:
        values += make_rng(spec.seed).normal(0.0, spec.noise_std, size=values.shape)
    return TimeSeries(values), LabelArray(regime + 1)


def _closed_arc_loop(turns: Sequence[float], r1: float, r2: float) -> np.ndarray:
    """
    Radii of four tangent-joined circular arcs (left turns ``turns``, adding up to one
    revolution) that close the loop, given the first two radii.
    """
    headings = np.concatenate(([0.0], np.cumsum(turns)))
    # displacement of a unit-radius arc from heading h0 to h1
    chords = np.array(
        [np.sin(headings[1:]) - np.sin(headings[:-1]), np.cos(headings[:-1]) - np.cos(headings[1:])]
    )
    r3, r4 = np.linalg.solve(chords[:, 2:], -chords[:, :2] @ np.array([r1, r2]))
    return np.array([r1, r2, r3, r4])


def gen_perfect_metric_dataset(
    cycle_repeats: int = 6, samples_per_turn: int = PERFECT_SAMPLES_PER_TURN
) -> Tuple[TimeSeries, LabelArray]:
    """
    Four clusters with step-invariant but distinct curve parameters.

    A closed planar loop of four tangent-joined circular arcs of different radii, tilted in
    3-D, sampled at unit arc length and traversed ``cycle_repeats`` times; arc i is cluster
    i. Each arc has its own curvature (equal to its per-step acceleration) and zero
    torsion. Every cycle repeats the same samples bit for bit, so the medians of a
    cluster's subsequences coincide; curve parameters only deviate within two steps of a
    junction and at the ends of the series.
    """
    if cycle_repeats < 1:
        raise InvalidArgumentError(f"cycle_repeats must be >= 1, got {cycle_repeats}")
    if samples_per_turn < 64:
        raise InvalidArgumentError(f"samples_per_turn must be >= 64, got {samples_per_turn}")

    turns = np.asarray(PERFECT_TURNS)
    radii = _closed_arc_loop(turns, *PERFECT_RADII)
    lengths = turns * radii
    scale = samples_per_turn / lengths.sum()
    radii, lengths = radii * scale, lengths * scale

    headings = np.concatenate(([0.0], np.cumsum(turns)[:-1]))
    chords = radii * np.array(
        [np.sin(headings + turns) - np.sin(headings), np.cos(headings) - np.cos(headings + turns)]
    )
    origins = np.concatenate((np.zeros((2, 1)), np.cumsum(chords, axis=1)[:, :-1]), axis=1)
    bounds = np.concatenate(([0.0], np.cumsum(lengths)))

    s = np.arange(samples_per_turn, dtype=np.float64)
    arc = np.clip(np.searchsorted(bounds, s, side="right") - 1, 0, len(turns) - 1)
    heading = headings[arc] + (s - bounds[arc]) / radii[arc]
    x = origins[0, arc] + radii[arc] * (np.sin(heading) - np.sin(headings[arc]))
    y = origins[1, arc] + radii[arc] * (np.cos(headings[arc]) - np.cos(heading))

    u = np.array([1.0, 0.0, 0.0])
    v = np.array([0.0, 1.0, 1.0]) / math.sqrt(2.0)
    turn = np.outer(u, x) + np.outer(v, y)

    values = np.tile(turn, (1, cycle_repeats))
    labels = np.tile(arc + 1, cycle_repeats)
    return TimeSeries(values, ("x", "y", "z")), LabelArray(labels)


def gen_random_segmentation(n: int, segments: int, n_labels: int = 2, seed: int = 0) -> LabelArray:
    """
    Random contiguous segmentation: ``segments - 1`` distinct change points and one random
    label in ``1..n_labels`` per segment (neighbouring segments may share a label).
    """
    if not 1 <= segments <= n:
        raise InvalidArgumentError(f"need 1 <= segments <= n, got segments={segments}, n={n}")
    if n_labels < 1:
        raise InvalidArgumentError(f"n_labels must be >= 1, got {n_labels}")
    rng = make_rng(seed)
    change_points = np.sort(rng.choice(np.arange(1, n), size=segments - 1, replace=False))
    lengths = np.diff(np.concatenate(([0], change_points, [n])))
    segment_labels = rng.integers(1, n_labels + 1, size=segments)
    return LabelArray(np.repeat(segment_labels, lengths))


def _read_frame(path) -> pd.DataFrame:
    try:
        frame = pd.read_csv(path, dtype=str, keep_default_na=False, skipinitialspace=True)
    except pd.errors.EmptyDataError:
        raise ParseError(f"{path}: empty file") from None
    except pd.errors.ParserError as e:
        match = re.search(r"line (\d+)", str(e))
        # header is line 1
        row = int(match.group(1)) - 1 if match else None
        raise ParseError(f"{path}: ragged row", row=row) from None
    except OSError as e:
        raise ParseError(f"{path}: {e}") from e
    if frame.empty:
        raise ParseError(f"{path}: no data rows")
    return frame


def _numeric_column(path, frame: pd.DataFrame, column) -> np.ndarray:
    raw = frame[column]
    numbers = pd.to_numeric(raw, errors="coerce").to_numpy(dtype=np.float64)
    bad = np.flatnonzero(~np.isfinite(numbers))
    if bad.size:
        row = int(bad[0])
        value = raw.iloc[row]
        if value is None or (isinstance(value, float) and math.isnan(value)) or value == "":
            raise ParseError(f"{path}: missing cell", row=row + 1, column=column)
        raise ParseError(f"{path}: invalid cell {value!r}", row=row + 1, column=column)
    return numbers


def _label_column(path, frame: pd.DataFrame, column) -> LabelArray:
    numbers = _numeric_column(path, frame, column)
    bad = np.flatnonzero((numbers < 0) | (numbers != np.round(numbers)))
    if bad.size:
        row = int(bad[0])
        raise ParseError(f"{path}: label must be a non-negative integer", row=row + 1, column=column)
    return LabelArray(numbers.astype(np.int64))


def load_csv(path, has_labels: bool = False) -> Tuple[TimeSeries, Optional[LabelArray]]:
    """
    Header row of feature names, one row per time step. With ``has_labels`` the last
    column holds integer labels.
    """
    frame = _read_frame(path)
    columns = list(frame.columns)
    labels = None
    if has_labels:
        if len(columns) < 2:
            raise ParseError(f"{path}: expected feature columns and a label column")
        labels = _label_column(path, frame, columns[-1])
        columns = columns[:-1]
    values = np.vstack([_numeric_column(path, frame, column) for column in columns])
    if values.shape[1] < 2:
        raise ParseError(f"{path}: need at least 2 rows, got {values.shape[1]}")
    logger.debug("loaded %s: %d features x %d steps", path, *values.shape)
    return TimeSeries(values, tuple(str(c) for c in columns)), labels


def save_csv(path, series: TimeSeries, labels: Optional[LabelArray] = None) -> None:
    frame = pd.DataFrame(series.values.T, columns=list(series.feature_names))
    if labels is not None:
        if len(labels) != series.n:
            raise InvalidArgumentError(f"{len(labels)} labels for {series.n} steps")
        frame[LABEL_COLUMN] = labels.labels
    frame.to_csv(path, index=False, float_format="%.17g")


def load_labels(path) -> LabelArray:
    frame = _read_frame(path)
    if frame.shape[1] != 1:
        raise ParseError(f"{path}: label file must have exactly one column, got {frame.shape[1]}")
    return _label_column(path, frame, frame.columns[0])


def save_labels(path, labels: LabelArray) -> None:
    pd.DataFrame({LABEL_COLUMN: labels.labels}).to_csv(path, index=False)


def _lorenz(**overrides):
    return gen_lorenz(LorenzParams(**overrides)), None


def _thomas(**overrides):
    return gen_thomas(ThomasParams(**overrides)), None


def _step_regimes(**overrides):
    return gen_step_regimes(StepRegimeSpec(**overrides))


def _perfect(**overrides):
    return gen_perfect_metric_dataset(**overrides)


DATASETS = {
    "lorenz": _lorenz,
    "thomas": _thomas,
    "step-regimes": _step_regimes,
    "perfect-metric": _perfect,
}


def load_dataset(dataset_id: str, **overrides) -> Tuple[TimeSeries, Optional[LabelArray]]:
    """
    Bundled generator by id, or ``csv:<path>`` (labels taken from a ``label`` column when present).
    """
    if dataset_id.startswith("csv:"):
        path = dataset_id[len("csv:") :]
        header = _read_frame(path).columns
        return load_csv(path, has_labels=header[-1] == LABEL_COLUMN)
    try:
        factory = DATASETS[dataset_id]
    except KeyError:
        raise ConfigurationError(f"unknown dataset: {dataset_id!r}") from None
    try:
        return factory(**overrides)
    except TypeError as e:
        raise ConfigurationError(f"bad parameters for dataset {dataset_id!r}: {e}") from e
