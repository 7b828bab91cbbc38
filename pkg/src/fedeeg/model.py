"""Small dense binary classifier with analytic gradients and plain SGD.

Parameters live in one flat float64 vector so federation code can average,
serialize, and ship them without knowing the layer structure.  Hidden layers
use tanh (smooth everywhere, so finite-difference checks are clean) and the
output head is a sigmoid probability.
"""

from __future__ import annotations

import struct
from dataclasses import dataclass

import numpy as np
from scipy.special import expit

# Probabilities are clamped away from {0, 1} before any log.
PROB_EPS = 1e-12


class LayoutError(ValueError):
    """Parameter vector or input width does not match the model layout."""


@dataclass(frozen=True)
class ModelConfig:
    """Architecture and initialization of the classifier.

    ``init_scale=None`` draws each layer uniformly from
    [-1/sqrt(fan_in), +1/sqrt(fan_in)]; a number overrides that half-width
    for every layer (0 gives an all-zero network).  Biases start at zero.
    """

    input_dim: int
    hidden_dims: tuple[int, ...] = (32, 16)
    seed: int = 0
    init_scale: float | None = None

    def __post_init__(self) -> None:
        object.__setattr__(self, "hidden_dims", tuple(int(h) for h in self.hidden_dims))
        if self.input_dim < 1:
            raise ValueError(f"input_dim must be >= 1, got {self.input_dim}")
        if any(h < 1 for h in self.hidden_dims):
            raise ValueError(f"hidden widths must be >= 1, got {self.hidden_dims}")
        if self.init_scale is not None and self.init_scale < 0:
            raise ValueError(f"init_scale must be >= 0, got {self.init_scale}")

    def layer_shapes(self) -> list[tuple[int, int]]:
        """(fan_in, fan_out) per dense layer, final layer ending in one unit."""
        dims = (self.input_dim, *self.hidden_dims, 1)
        return list(zip(dims[:-1], dims[1:]))

    @property
    def n_params(self) -> int:
        return sum(fi * fo + fo for fi, fo in self.layer_shapes())


@dataclass(frozen=True)
class Batch:
    """A design matrix with {0,1} labels."""

    inputs: np.ndarray
    labels: np.ndarray

    def __post_init__(self) -> None:
        if self.inputs.ndim != 2:
            raise ValueError(f"inputs must be 2-d, got shape {self.inputs.shape}")
        if self.labels.shape != (self.inputs.shape[0],):
            raise ValueError(
                f"labels shape {self.labels.shape} does not match "
                f"{self.inputs.shape[0]} rows"
            )
        if self.inputs.shape[0] < 1:
            raise ValueError("batch must contain at least one row")
        lab = np.asarray(self.labels)
        if not np.isin(lab, (0, 1)).all():
            raise ValueError("labels must be 0 or 1")

    @property
    def size(self) -> int:
        return self.inputs.shape[0]


def init_params(config: ModelConfig) -> np.ndarray:
    """Deterministic flat parameter vector for ``config``.

    Weights are uniform in [-scale, +scale] per layer, biases zero.
    """
    rng = np.random.default_rng(config.seed)
    parts = []
    for fan_in, fan_out in config.layer_shapes():
        scale = config.init_scale
        if scale is None:
            scale = 1.0 / np.sqrt(fan_in)
        parts.append(rng.uniform(-scale, scale, size=fan_in * fan_out))
        parts.append(np.zeros(fan_out))
    return np.concatenate(parts)


def unpack_params(params: np.ndarray, config: ModelConfig) -> list[tuple[np.ndarray, np.ndarray]]:
    """View the flat vector as [(W, b), ...] without copying."""
    params = np.asarray(params)
    if params.shape != (config.n_params,):
        raise LayoutError(
            f"parameter vector has length {params.size}, layout needs {config.n_params}"
        )
    out = []
    off = 0
    for fan_in, fan_out in config.layer_shapes():
        w = params[off : off + fan_in * fan_out].reshape(fan_in, fan_out)
        off += fan_in * fan_out
        b = params[off : off + fan_out]
        off += fan_out
        out.append((w, b))
    return out


def _forward_full(
    params: np.ndarray, config: ModelConfig, inputs: np.ndarray
) -> tuple[list[np.ndarray], np.ndarray]:
    """All layer activations plus the unclamped output probability."""
    if inputs.ndim != 2 or inputs.shape[1] != config.input_dim:
        raise LayoutError(
            f"inputs of shape {inputs.shape} do not match input_dim={config.input_dim}"
        )
    layers = unpack_params(params, config)
    acts = [inputs]
    a = inputs
    for w, b in layers[:-1]:
        a = np.tanh(a @ w + b)
        acts.append(a)
    w_out, b_out = layers[-1]
    z = (a @ w_out + b_out)[:, 0]
    return acts, expit(z)


def forward(params: np.ndarray, config: ModelConfig, inputs: np.ndarray) -> np.ndarray:
    """Per-row probability of the positive class, clamped to [eps, 1-eps]."""
    _, p = _forward_full(params, config, inputs)
    return np.clip(p, PROB_EPS, 1.0 - PROB_EPS)


def loss_and_grad(
    params: np.ndarray, config: ModelConfig, batch: Batch
) -> tuple[float, np.ndarray]:
    """Mean binary cross-entropy and its exact gradient in the flat layout."""
    acts, p = _forward_full(params, config, batch.inputs)
    y = np.asarray(batch.labels, dtype=np.float64)
    p_safe = np.clip(p, PROB_EPS, 1.0 - PROB_EPS)
    loss = -float(np.mean(y * np.log(p_safe) + (1.0 - y) * np.log(1.0 - p_safe)))

    layers = unpack_params(params, config)
    grads: list[np.ndarray] = [np.empty(0)] * len(layers)
    # Sigmoid + BCE collapse to (p - y) at the output pre-activation.
    delta = ((p - y) / batch.size)[:, None]
    for li in range(len(layers) - 1, -1, -1):
        w, _ = layers[li]
        a_prev = acts[li]
        gw = a_prev.T @ delta
        gb = delta.sum(axis=0)
        grads[li] = np.concatenate([gw.ravel(), gb])
        if li > 0:
            delta = (delta @ w.T) * (1.0 - acts[li] ** 2)
    return loss, np.concatenate(grads)


def sgd_step(params: np.ndarray, grad: np.ndarray, eta: float) -> np.ndarray:
    """One gradient step ``params - eta * grad`` (eta=0 is a no-op)."""
    params = np.asarray(params)
    grad = np.asarray(grad)
    if params.shape != grad.shape:
        raise LayoutError(f"gradient shape {grad.shape} != parameter shape {params.shape}")
    if eta < 0:
        raise ValueError(f"eta must be >= 0, got {eta}")
    return params - eta * grad


def params_to_bytes(params: np.ndarray) -> bytes:
    """u32 little-endian count followed by float64 little-endian values."""
    arr = np.ascontiguousarray(np.asarray(params, dtype=np.float64))
    if arr.ndim != 1:
        raise LayoutError(f"parameter vector must be 1-d, got shape {arr.shape}")
    return struct.pack("<I", arr.size) + arr.astype("<f8").tobytes()


def params_from_bytes(data: bytes) -> np.ndarray:
    if len(data) < 4:
        raise LayoutError("parameter blob shorter than its length prefix")
    (count,) = struct.unpack_from("<I", data, 0)
    expected = 4 + 8 * count
    if len(data) != expected:
        raise LayoutError(f"parameter blob has {len(data)} bytes, expected {expected}")
    return np.frombuffer(data, dtype="<f8", offset=4).astype(np.float64)
