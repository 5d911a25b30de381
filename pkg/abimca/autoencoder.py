"""
Recurrent autoencoder: bidirectional one-layer GRU encoder, logistic latent code of size
d - 1, GRU decoder fed the latent code at every step with an affine read-out.

GRU cell (gate blocks stacked in the order reset, update, candidate)::

    r  = sigmoid(W_r x + U_r h + b_r)
    z  = sigmoid(W_z x + U_z h + b_z)
    n  = tanh(W_n x + U_n (r * h) + b_n)
    h' = (1 - z) * n + z * h
"""
import hashlib
import io
import logging
import os
from dataclasses import dataclass
from typing import Dict, Iterator, List, Optional, Tuple

import numpy as np
from scipy.special import expit

from .errors import InvalidArgumentError, ParseError, TrainingError
from .options import TrainConfig
from .series import SlidingWindow
from .utils import make_rng

__all__ = (
    "AeModel",
    "ForwardCache",
    "LossBreakdown",
    "init_model",
    "forward",
    "loss",
    "backward",
    "sgd_step",
    "train_window",
    "PARAM_ORDER",
)

logger = logging.getLogger(__name__)

FORMAT_HEADER = "# abimca-ae-model v1"
SPARSITY = 0.1
INIT_STD = 0.01

PARAM_ORDER = (
    "enc_fwd_W",
    "enc_fwd_U",
    "enc_fwd_b",
    "enc_bwd_W",
    "enc_bwd_U",
    "enc_bwd_b",
    "latent_W",
    "latent_b",
    "dec_W",
    "dec_U",
    "dec_b",
    "out_W",
    "out_b",
)


def param_shapes(d: int) -> Dict[str, Tuple[int, ...]]:
    h = d - 1
    return {
        "enc_fwd_W": (3 * h, d),
        "enc_fwd_U": (3 * h, h),
        "enc_fwd_b": (3 * h,),
        "enc_bwd_W": (3 * h, d),
        "enc_bwd_U": (3 * h, h),
        "enc_bwd_b": (3 * h,),
        "latent_W": (h, 2 * h),
        "latent_b": (h,),
        "dec_W": (3 * h, h),
        "dec_U": (3 * h, h),
        "dec_b": (3 * h,),
        "out_W": (d, h),
        "out_b": (d,),
    }


class AeModel:
    """
    Parameter set of the autoencoder. Also used for gradients (same names and shapes).
    """

    def __init__(self, d: int, params: Optional[Dict[str, np.ndarray]] = None):
        if d < 2:
            raise InvalidArgumentError(f"autoencoder needs d >= 2, got {d}")
        shapes = param_shapes(d)
        if params is None:
            params = {name: np.zeros(shape) for name, shape in shapes.items()}
        missing = set(shapes) - set(params)
        if missing:
            raise InvalidArgumentError(f"missing parameters: {sorted(missing)}")
        self._params = {}
        for name in PARAM_ORDER:
            value = np.array(params[name], dtype=np.float64)
            if value.shape != shapes[name]:
                raise InvalidArgumentError(f"{name}: expected shape {shapes[name]}, got {value.shape}")
            self._params[name] = value
        self.d = d
        self._frozen = False

    @property
    def hidden(self) -> int:
        return self.d - 1

    @property
    def frozen(self) -> bool:
        return self._frozen

    def __getitem__(self, name) -> np.ndarray:
        return self._params[name]

    def __iter__(self) -> Iterator[str]:
        return iter(PARAM_ORDER)

    def items(self):
        return ((name, self._params[name]) for name in PARAM_ORDER)

    def __repr__(self):
        size = sum(value.size for value in self._params.values())
        state = " frozen" if self._frozen else ""
        return f"<{type(self).__name__}{state} d={self.d} hidden={self.hidden} parameters={size}>"

    def copy(self) -> "AeModel":
        return AeModel(self.d, {name: value.copy() for name, value in self.items()})

    def freeze(self) -> "AeModel":
        for value in self._params.values():
            value.setflags(write=False)
        self._frozen = True
        return self

    def is_finite(self) -> bool:
        return all(np.isfinite(value).all() for value in self._params.values())

    def digest(self) -> str:
        return hashlib.sha256(self.to_bytes()).hexdigest()

    def allclose(self, other: "AeModel", **kwargs) -> bool:
        return self.d == other.d and all(np.allclose(self[name], other[name], **kwargs) for name in PARAM_ORDER)

    def to_bytes(self) -> bytes:
        out = io.StringIO()
        out.write(f"{FORMAT_HEADER}\n")
        out.write(f"# parameter order (row-major): {' '.join(PARAM_ORDER)}\n")
        out.write(f"d {self.d}\n")
        out.write(f"hidden {self.hidden}\n")
        for name, value in self.items():
            out.write(f"{name} {' '.join(str(n) for n in value.shape)}\n")
            for row in np.atleast_2d(value):
                out.write(" ".join(format(v, ".17g") for v in row))
                out.write("\n")
        return out.getvalue().encode()

    @classmethod
    def from_bytes(cls, data: bytes) -> "AeModel":
        lines = [line for line in data.decode().splitlines() if line.strip()]
        if not lines or lines[0].strip() != FORMAT_HEADER:
            raise ParseError("not an autoencoder model file")
        lines = [line for line in lines if not line.startswith("#")]
        try:
            d = int(_expect(lines, 0, "d"))
            hidden = int(_expect(lines, 1, "hidden"))
            if hidden != d - 1:
                raise ParseError(f"hidden size {hidden} does not match d={d}")
            shapes = param_shapes(d)
            params = {}
            pos = 2
            for name in PARAM_ORDER:
                key, *dims = lines[pos].split()
                if key != name:
                    raise ParseError(f"expected parameter {name}, found {key}", row=pos + 1)
                shape = tuple(int(v) for v in dims)
                if shape != shapes[name]:
                    raise ParseError(f"{name}: expected shape {shapes[name]}, got {shape}", row=pos + 1)
                rows = shape[0] if len(shape) == 2 else 1
                values = [[float(v) for v in lines[pos + 1 + i].split()] for i in range(rows)]
                params[name] = np.array(values, dtype=np.float64).reshape(shape)
                pos += 1 + rows
        except (IndexError, ValueError) as e:
            if isinstance(e, ParseError):
                raise
            raise ParseError(f"truncated or malformed model file: {e}") from e
        return cls(d, params)

    def to_file(self, filename: str):
        with open(filename, "wb") as fd:
            fd.write(self.to_bytes())

    @classmethod
    def open(cls, filename: str) -> "AeModel":
        if not os.path.exists(filename):
            raise FileNotFoundError(filename)
        with open(filename, "rb") as fd:
            return cls.from_bytes(fd.read())


def _expect(lines, pos, key):
    name, value = lines[pos].split()
    if name != key:
        raise ParseError(f"expected {key!r}, found {name!r}", row=pos + 1)
    return value


@dataclass(frozen=True)
class LossBreakdown:
    total: float
    mse: float
    penalty: float


@dataclass
class _GruTrace:
    inputs: np.ndarray  # T x D
    states: np.ndarray  # (T + 1) x H, states[0] is the initial zero state
    reset: np.ndarray  # T x H
    update: np.ndarray
    candidate: np.ndarray


@dataclass
class ForwardCache:
    forward: _GruTrace
    backward: _GruTrace
    encoded: np.ndarray  # concatenated final hidden states, 2H
    latent: np.ndarray
    decoder: _GruTrace
    reconstruction: np.ndarray  # d x T


def init_model(d: int, seed=0) -> AeModel:
    """
    Sparse normal initialization: 10% of every weight matrix is zeroed, the rest is drawn
    from N(0, 0.01^2); biases start at zero.
    """
    if d < 2:
        raise InvalidArgumentError(f"autoencoder needs d >= 2, got {d}")
    rng = make_rng(seed)
    params = {}
    for name, shape in param_shapes(d).items():
        if len(shape) == 1:
            params[name] = np.zeros(shape)
            continue
        values = rng.normal(0.0, INIT_STD, size=shape)
        values[rng.random(shape) < SPARSITY] = 0.0
        params[name] = values
    return AeModel(d, params)


def _gru_forward(W, U, b, inputs: np.ndarray) -> _GruTrace:
    steps = inputs.shape[0]
    hidden = U.shape[1]
    projected = inputs @ W.T + b
    states = np.zeros((steps + 1, hidden))
    reset = np.empty((steps, hidden))
    update = np.empty((steps, hidden))
    candidate = np.empty((steps, hidden))
    U_rz, U_n = U[: 2 * hidden], U[2 * hidden :]
    h = states[0]
    for t in range(steps):
        gates = expit(projected[t, : 2 * hidden] + U_rz @ h)
        r, z = gates[:hidden], gates[hidden:]
        n = np.tanh(projected[t, 2 * hidden :] + U_n @ (r * h))
        h = (1.0 - z) * n + z * h
        states[t + 1] = h
        reset[t], update[t], candidate[t] = r, z, n
    return _GruTrace(inputs, states, reset, update, candidate)


def _gru_backward(W, U, trace: _GruTrace, d_states: np.ndarray, d_final: np.ndarray):
    """
    Backpropagation through time. ``d_states[t]`` is the external gradient on the state
    after step t, ``d_final`` the gradient on the last state.
    Returns gradients of W, U, b and of the inputs.
    """
    steps, hidden = trace.reset.shape
    U_r, U_z, U_n = U[:hidden], U[hidden : 2 * hidden], U[2 * hidden :]
    d_gates = np.empty((steps, 3 * hidden))
    d_h = d_final.copy()
    for t in range(steps - 1, -1, -1):
        d_h = d_h + d_states[t]
        h_prev = trace.states[t]
        r, z, n = trace.reset[t], trace.update[t], trace.candidate[t]

        d_n = d_h * (1.0 - z) * (1.0 - n * n)
        d_rh = U_n.T @ d_n
        d_r = d_rh * h_prev * r * (1.0 - r)
        d_z = d_h * (h_prev - n) * z * (1.0 - z)

        d_gates[t, :hidden] = d_r
        d_gates[t, hidden : 2 * hidden] = d_z
        d_gates[t, 2 * hidden :] = d_n
        d_h = d_h * z + d_rh * r + U_r.T @ d_r + U_z.T @ d_z

    h_prev = trace.states[:-1]
    d_W = d_gates.T @ trace.inputs
    d_b = d_gates.sum(axis=0)
    d_U = np.empty_like(U)
    d_U[: 2 * hidden] = d_gates[:, : 2 * hidden].T @ h_prev
    d_U[2 * hidden :] = d_gates[:, 2 * hidden :].T @ (trace.reset * h_prev)
    d_inputs = d_gates @ W
    return d_W, d_U, d_b, d_inputs


def _window_values(model: AeModel, window) -> np.ndarray:
    values = window.values if isinstance(window, SlidingWindow) else np.asarray(window, dtype=np.float64)
    if values.ndim != 2 or values.shape[0] != model.d:
        raise InvalidArgumentError(f"window of shape {values.shape} does not match model with d={model.d}")
    if values.shape[1] < 1:
        raise InvalidArgumentError("empty window")
    return values


def forward(model: AeModel, window) -> Tuple[np.ndarray, np.ndarray, ForwardCache]:
    """
    Encode and reconstruct one window. Returns (reconstruction d x T, latent code, cache).
    """
    values = _window_values(model, window)
    sequence = values.T
    fwd = _gru_forward(model["enc_fwd_W"], model["enc_fwd_U"], model["enc_fwd_b"], sequence)
    bwd = _gru_forward(model["enc_bwd_W"], model["enc_bwd_U"], model["enc_bwd_b"], sequence[::-1])
    encoded = np.concatenate([fwd.states[-1], bwd.states[-1]])
    latent = expit(model["latent_W"] @ encoded + model["latent_b"])

    repeated = np.tile(latent, (sequence.shape[0], 1))
    dec = _gru_forward(model["dec_W"], model["dec_U"], model["dec_b"], repeated)
    reconstruction = (dec.states[1:] @ model["out_W"].T + model["out_b"]).T
    cache = ForwardCache(fwd, bwd, encoded, latent, dec, reconstruction)
    return reconstruction, latent, cache


def loss(window, reconstruction: np.ndarray, latent: np.ndarray, config: TrainConfig = TrainConfig()) -> LossBreakdown:
    """
    Mean squared reconstruction error over all d * T entries plus
    ``penalty_weight * sum |h_i - latent_center|``.
    """
    values = window.values if isinstance(window, SlidingWindow) else np.asarray(window, dtype=np.float64)
    if values.shape != reconstruction.shape:
        raise InvalidArgumentError(f"window shape {values.shape} != reconstruction shape {reconstruction.shape}")
    mse = float(np.sum((reconstruction - values) ** 2) / values.size)
    penalty = float(config.penalty_weight * np.sum(np.abs(latent - config.latent_center)))
    return LossBreakdown(total=mse + penalty, mse=mse, penalty=penalty)


def backward(model: AeModel, cache: ForwardCache, window, config: TrainConfig = TrainConfig()) -> AeModel:
    """
    Exact gradients of :func:`loss` with respect to every parameter.
    """
    values = _window_values(model, window)
    hidden = model.hidden
    steps = values.shape[1]

    d_out = 2.0 * (cache.reconstruction - values).T / values.size  # T x d
    dec_states = cache.decoder.states[1:]
    grads = {
        "out_W": d_out.T @ dec_states,
        "out_b": d_out.sum(axis=0),
    }

    d_dec_states = d_out @ model["out_W"]
    d_W, d_U, d_b, d_repeated = _gru_backward(
        model["dec_W"], model["dec_U"], cache.decoder, d_dec_states, np.zeros(hidden)
    )
    grads["dec_W"], grads["dec_U"], grads["dec_b"] = d_W, d_U, d_b

    latent = cache.latent
    d_latent = d_repeated.sum(axis=0) + config.penalty_weight * np.sign(latent - config.latent_center)
    d_pre = d_latent * latent * (1.0 - latent)
    grads["latent_W"] = np.outer(d_pre, cache.encoded)
    grads["latent_b"] = d_pre
    d_encoded = model["latent_W"].T @ d_pre

    no_external = np.zeros((steps, hidden))
    for prefix, trace, d_final in (
        ("enc_fwd", cache.forward, d_encoded[:hidden]),
        ("enc_bwd", cache.backward, d_encoded[hidden:]),
    ):
        d_W, d_U, d_b, _ = _gru_backward(model[f"{prefix}_W"], model[f"{prefix}_U"], trace, no_external, d_final)
        grads[f"{prefix}_W"], grads[f"{prefix}_U"], grads[f"{prefix}_b"] = d_W, d_U, d_b

    return AeModel(model.d, grads)


def sgd_step(model: AeModel, gradients: AeModel, learning_rate: float) -> AeModel:
    """
    In-place plain SGD update ``theta -= learning_rate * grad``; returns the model.
    """
    if not learning_rate > 0:
        raise InvalidArgumentError(f"learning rate must be > 0, got {learning_rate}")
    if model.frozen:
        raise InvalidArgumentError("cannot update a frozen model")
    if not gradients.is_finite():
        raise TrainingError("non-finite gradient")
    for name, value in model.items():
        value -= learning_rate * gradients[name]
    if not model.is_finite():
        raise TrainingError("non-finite parameter after update")
    return model


def train_window(model: AeModel, window, config: TrainConfig, iterations: int = 1) -> List[LossBreakdown]:
    """
    ``iterations`` rounds of forward, loss, backward and SGD on one window. Returns the loss
    seen before each update.
    """
    history = []
    for _ in range(iterations):
        reconstruction, latent, cache = forward(model, window)
        breakdown = loss(window, reconstruction, latent, config)
        if not np.isfinite(breakdown.total):
            raise TrainingError("non-finite loss")
        history.append(breakdown)
        sgd_step(model, backward(model, cache, window, config), config.learning_rate)
    return history
