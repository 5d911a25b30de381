import logging
from dataclasses import dataclass

import numpy as np

from .errors import InvalidArgumentError
from .series import TimeSeries

__all__ = (
    "CurveParams",
    "FrenetFrame",
    "differentiate",
    "frenet_frame",
    "curve_params",
    "closed_form_curvature",
)

logger = logging.getLogger(__name__)

EPS = 1e-12
MIN_STEPS = 4


@dataclass(frozen=True, eq=False)
class CurveParams:
    kappa: np.ndarray
    tau: np.ndarray
    speed: np.ndarray
    accel: np.ndarray

    @property
    def n(self) -> int:
        return self.kappa.size

    def as_matrix(self) -> np.ndarray:
        """
        n x 4 matrix with columns kappa, tau, speed, accel.
        """
        return np.column_stack([self.kappa, self.tau, self.speed, self.accel])


@dataclass(frozen=True, eq=False)
class FrenetFrame:
    """
    Unit tangent ``e1``, normal ``e2`` and binormal ``e3`` per step (d x n each). Columns
    where the construction degenerates are zero and flagged in the ``*_defined`` masks.
    """

    e1: np.ndarray
    e2: np.ndarray
    e3: np.ndarray
    e1_defined: np.ndarray
    e2_defined: np.ndarray
    e3_defined: np.ndarray
    # first three derivatives, reused by curve_params
    derivatives: tuple = ()


def _values(series) -> np.ndarray:
    if isinstance(series, TimeSeries):
        return series.values
    values = np.asarray(series, dtype=np.float64)
    if values.ndim != 2:
        raise InvalidArgumentError(f"expected a d x n matrix, got shape {values.shape}")
    return values


def _space_curve(series) -> np.ndarray:
    values = _values(series)
    d, n = values.shape
    if d < 2:
        raise InvalidArgumentError("curve geometry needs at least 2 features")
    if n < MIN_STEPS:
        raise InvalidArgumentError(f"curve geometry needs at least {MIN_STEPS} steps, got {n}")
    if d == 2:
        values = np.vstack([values, np.zeros((1, n))])
    return values


def _gradient(values: np.ndarray) -> np.ndarray:
    # central differences inside, second order one-sided stencils at both ends
    return np.gradient(values, axis=1, edge_order=2)


def differentiate(series, order: int = 1) -> np.ndarray:
    """
    ``order``-th time derivative (unit spacing), obtained by applying the first-derivative
    operator ``order`` times.

    >>> differentiate(TimeSeries([[0.0, 3.0, 6.0, 9.0]])).tolist()
    [[3.0, 3.0, 3.0, 3.0]]
    """
    values = _values(series)
    if order not in (1, 2, 3):
        raise InvalidArgumentError(f"order must be 1, 2 or 3, got {order}")
    if values.shape[1] < MIN_STEPS:
        raise InvalidArgumentError(f"differentiation needs at least {MIN_STEPS} steps, got {values.shape[1]}")
    for _ in range(order):
        values = _gradient(values)
    return values


def _normalize(vectors: np.ndarray):
    norms = np.linalg.norm(vectors, axis=0)
    defined = norms >= EPS
    unit = np.zeros_like(vectors)
    unit[:, defined] = vectors[:, defined] / norms[defined]
    return unit, defined, norms


def _dot(a: np.ndarray, b: np.ndarray) -> np.ndarray:
    return np.einsum("ij,ij->j", a, b)


def frenet_frame(series) -> FrenetFrame:
    """
    Gram-Schmidt frame of the trajectory. Inputs with two features are embedded in 3-D with
    a zero third feature.
    """
    values = _space_curve(series)
    first = _gradient(values)
    second = _gradient(first)
    third = _gradient(second)

    e1, e1_defined, _ = _normalize(first)

    e2_bar = second - _dot(second, e1) * e1
    e2, e2_defined, _ = _normalize(e2_bar)
    e2_defined &= e1_defined
    e2[:, ~e2_defined] = 0.0

    e3_bar = third - _dot(third, e1) * e1 - _dot(third, e2) * e2
    e3, e3_defined, _ = _normalize(e3_bar)
    e3_defined &= e2_defined
    e3[:, ~e3_defined] = 0.0

    return FrenetFrame(e1, e2, e3, e1_defined, e2_defined, e3_defined, (first, second, third))


def curve_params(series) -> CurveParams:
    """
    Curvature, torsion, speed and acceleration per step:

    kappa = <de1/dt, e2> / |x'|, tau = <de2/dt, e3> / |x'|, v = |x'|, a = |x''|.

    Degenerate steps get kappa = tau = 0.
    """
    frame = frenet_frame(series)
    first, second, _ = frame.derivatives
    speed = np.linalg.norm(first, axis=0)
    accel = np.linalg.norm(second, axis=0)

    kappa = np.zeros_like(speed)
    tau = np.zeros_like(speed)
    moving = frame.e1_defined

    e1_dot = _gradient(frame.e1)
    bent = frame.e2_defined
    kappa[bent] = _dot(e1_dot, frame.e2)[bent] / speed[bent]

    e2_dot = _gradient(frame.e2)
    twisted = frame.e3_defined
    tau[twisted] = _dot(e2_dot, frame.e3)[twisted] / speed[twisted]

    degenerate = int((~moving).sum())
    if degenerate:
        logger.debug("%d stationary steps in curve of %d steps", degenerate, speed.size)
    return CurveParams(kappa=kappa, tau=tau, speed=speed, accel=accel)


def closed_form_curvature(series) -> np.ndarray:
    """
    |x' x x''| / |x'|^3, zero where the speed vanishes.
    """
    values = _space_curve(series)
    first = _gradient(values)
    second = _gradient(first)
    speed = np.linalg.norm(first, axis=0)
    # generalized cross product norm, valid for any d
    cross_sq = (speed**2) * np.linalg.norm(second, axis=0) ** 2 - _dot(first, second) ** 2
    kappa = np.zeros_like(speed)
    moving = speed >= EPS
    kappa[moving] = np.sqrt(np.maximum(cross_sq[moving], 0.0)) / speed[moving] ** 3
    return kappa
