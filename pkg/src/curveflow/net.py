"""Time-conditioned MLPs with analytic gradients, Adam and EMA.

Networks map ``[state, sin(f t), cos(f t)]`` to an output vector. The
frequencies ``f`` are ``pi * 2**k`` for ``k < n_freqs``. A network with
``n_freqs == 0`` is time-free (used for the encoder and the one-step student).
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from . import kernels
from .errors import ConfigError, NumericalError, ShapeError

ACTIVATIONS = {"silu": 0, "relu": 1, "tanh": 2}


@dataclass
class NetworkParams:
    """Weights ``(out, in)`` and biases ``(out,)`` of each dense layer."""

    weights: list
    biases: list
    freqs: np.ndarray
    activation: str = "silu"

    def __post_init__(self):
        if self.activation not in ACTIVATIONS:
            raise ConfigError(f"unknown activation {self.activation!r}")
        self.freqs = np.asarray(self.freqs, dtype=np.float64)
        for k in range(1, len(self.weights)):
            if self.weights[k].shape[1] != self.weights[k - 1].shape[0]:
                raise ShapeError(f"layer {k} input dim does not match layer {k - 1} output dim")
        for k, (w, b) in enumerate(zip(self.weights, self.biases)):
            if b.shape != (w.shape[0],):
                raise ShapeError(f"bias {k} has shape {b.shape}, expected ({w.shape[0]},)")

    @property
    def n_freqs(self) -> int:
        return len(self.freqs)

    @property
    def in_dim(self) -> int:
        return self.weights[0].shape[1]

    @property
    def data_dim(self) -> int:
        return self.in_dim - 2 * self.n_freqs

    @property
    def out_dim(self) -> int:
        return self.weights[-1].shape[0]

    @property
    def layer_sizes(self) -> list[int]:
        return [self.in_dim] + [w.shape[0] for w in self.weights]

    @property
    def time_conditioned(self) -> bool:
        return self.n_freqs > 0

    def tensors(self) -> list[np.ndarray]:
        """Parameter arrays in declaration order ``W0, b0, W1, b1, ...``."""
        out = []
        for w, b in zip(self.weights, self.biases):
            out.extend((w, b))
        return out

    def n_params(self) -> int:
        return sum(a.size for a in self.tensors())

    def copy(self) -> "NetworkParams":
        return NetworkParams(
            [w.copy() for w in self.weights],
            [b.copy() for b in self.biases],
            self.freqs.copy(),
            self.activation,
        )

    def zeros_like(self) -> "NetworkParams":
        return NetworkParams(
            [np.zeros_like(w) for w in self.weights],
            [np.zeros_like(b) for b in self.biases],
            self.freqs.copy(),
            self.activation,
        )

    def with_tensors(self, tensors) -> "NetworkParams":
        ws = [np.ascontiguousarray(t, dtype=np.float64) for t in tensors[0::2]]
        bs = [np.ascontiguousarray(t, dtype=np.float64) for t in tensors[1::2]]
        return NetworkParams(ws, bs, self.freqs.copy(), self.activation)

    def flat(self) -> np.ndarray:
        return np.concatenate([a.ravel() for a in self.tensors()])

    def from_flat(self, vec) -> "NetworkParams":
        vec = np.asarray(vec, dtype=np.float64)
        out, i = [], 0
        for a in self.tensors():
            out.append(vec[i : i + a.size].reshape(a.shape))
            i += a.size
        return self.with_tensors(out)

    def is_finite(self) -> bool:
        return all(np.isfinite(a).all() for a in self.tensors())


def time_frequencies(n_freqs: int) -> np.ndarray:
    return np.pi * 2.0 ** np.arange(n_freqs, dtype=np.float64)


def init_params(layer_sizes, n_freqs, seed, activation="silu", data_dim=None) -> NetworkParams:
    """Fan-in scaled uniform weights, zero biases.

    ``layer_sizes[0]`` is the full input width, so it must equal
    ``data_dim + 2 * n_freqs``. When ``data_dim`` is omitted it is inferred
    and only has to be positive.

    Raises:
        ConfigError: on invalid sizes or an inconsistent input width.
    """
    sizes = [int(s) for s in layer_sizes]
    if len(sizes) < 2 or any(s <= 0 for s in sizes):
        raise ConfigError(f"layer_sizes must have >= 2 positive entries, got {layer_sizes}")
    if n_freqs < 0:
        raise ConfigError("n_freqs must be >= 0")
    inferred = sizes[0] - 2 * n_freqs
    if inferred < 1 or (data_dim is not None and inferred != data_dim):
        want = "data_dim + 2*n_freqs" if data_dim is None else f"{data_dim} + 2*{n_freqs}"
        raise ConfigError(f"input width {sizes[0]} must equal {want}")
    rng = np.random.default_rng(seed)
    weights, biases = [], []
    for fan_in, fan_out in zip(sizes[:-1], sizes[1:]):
        bound = np.sqrt(3.0 / fan_in)
        weights.append(rng.uniform(-bound, bound, size=(fan_out, fan_in)))
        biases.append(np.zeros(fan_out))
    return NetworkParams(weights, biases, time_frequencies(n_freqs), activation)


def build_inputs(params: NetworkParams, state, t=None) -> np.ndarray:
    """Concatenate the state batch with its sinusoidal time features."""
    state = np.asarray(state, dtype=np.float64)
    if state.ndim != 2 or state.shape[1] != params.data_dim:
        raise ShapeError(f"state has shape {state.shape}, expected (B, {params.data_dim})")
    if not params.time_conditioned:
        return np.ascontiguousarray(state)
    if t is None:
        raise ShapeError("time-conditioned network needs t")
    t = np.broadcast_to(np.asarray(t, dtype=np.float64), (state.shape[0],))
    phase = t[:, None] * params.freqs[None, :]
    return np.concatenate([state, np.sin(phase), np.cos(phase)], axis=1)


def forward(params: NetworkParams, state, t=None) -> np.ndarray:
    """Evaluate the network on one state vector or a ``(B, d)`` batch."""
    state = np.asarray(state, dtype=np.float64)
    single = state.ndim == 1
    batch = state[None, :] if single else state
    if single and t is not None and np.ndim(t) == 0:
        t = np.array([t])
    out, _ = kernels.mlp_forward(
        build_inputs(params, batch, t), params.weights, params.biases, ACTIVATIONS[params.activation]
    )
    return out[0] if single else out


def forward_with_cache(params: NetworkParams, state, t=None):
    inputs = build_inputs(params, state, t)
    return kernels.mlp_forward(inputs, params.weights, params.biases, ACTIVATIONS[params.activation])


def backward(params: NetworkParams, cache, grad_out, need_state_grad=True):
    """VJP of the cached forward pass.

    Returns:
        ``(grads, state_grad)``: grads as a NetworkParams, and dL/dstate
        (the time-feature columns are dropped) or ``None``.
    """
    dws, dbs, dx = kernels.mlp_backward(
        np.ascontiguousarray(grad_out, dtype=np.float64),
        params.weights,
        cache,
        ACTIVATIONS[params.activation],
        need_state_grad,
    )
    grads = NetworkParams(dws, dbs, params.freqs.copy(), params.activation)
    if dx is not None:
        dx = dx[:, : params.data_dim]
    return grads, dx


def _first_nonfinite_layer(cache, out):
    for k, (h, z) in enumerate(cache):
        if z is not None and not np.isfinite(z).all():
            return k
        if not np.isfinite(h).all():
            return max(k - 1, 0)
    return len(cache) - 1 if not np.isfinite(out).all() else None


LOSS_KINDS = ("squared_error", "weighted_squared_error")


def loss_gradients(params, inputs, times, loss_kind, targets, weights=None):
    """Batch-mean squared-error loss and its exact parameter gradients.

    Args:
        params: network.
        inputs: ``(B, d)`` states.
        times: ``(B,)`` times (ignored by time-free networks).
        loss_kind: ``"squared_error"`` for ``mean ||f - y||^2`` or
            ``"weighted_squared_error"`` for ``mean w_b ||f - y||^2``.
        targets: ``(B, out)`` targets.
        weights: ``(B,)`` per-sample weights for the weighted kind.

    Returns:
        ``(loss, grads)`` with grads shaped like ``params``.

    Raises:
        NumericalError: a non-finite activation, carrying the layer index.
    """
    if loss_kind not in LOSS_KINDS:
        raise ConfigError(f"loss_kind must be one of {LOSS_KINDS}")
    inputs = np.asarray(inputs, dtype=np.float64)
    if inputs.ndim != 2 or inputs.shape[0] == 0:
        raise ShapeError("inputs must be a non-empty (B, d) batch")
    targets = np.asarray(targets, dtype=np.float64)
    out, cache = forward_with_cache(params, inputs, times)
    if targets.shape != out.shape:
        raise ShapeError(f"targets shape {targets.shape} != output shape {out.shape}")
    if not np.isfinite(out).all():
        layer = _first_nonfinite_layer(cache, out)
        raise NumericalError(f"non-finite activation at layer {layer}", index=layer)
    n = inputs.shape[0]
    resid = out - targets
    per = np.sum(resid * resid, axis=1)
    if loss_kind == "weighted_squared_error":
        w = np.broadcast_to(np.asarray(weights, dtype=np.float64), (n,))
        loss = float(np.mean(w * per))
        grad_out = (2.0 / n) * w[:, None] * resid
    else:
        loss = float(np.mean(per))
        grad_out = (2.0 / n) * resid
    grads, _ = backward(params, cache, grad_out, need_state_grad=False)
    return loss, grads


@dataclass
class AdamState:
    first_moment: NetworkParams
    second_moment: NetworkParams
    step_count: int = 0
    lr: float = 3e-4
    beta1: float = 0.9
    beta2: float = 0.999
    eps: float = 1e-8

    @classmethod
    def fresh(cls, params: NetworkParams, lr=3e-4, beta1=0.9, beta2=0.999, eps=1e-8):
        for name, v in (("lr", lr), ("eps", eps)):
            if not v > 0:
                raise ConfigError(f"adam {name} must be positive")
        for name, v in (("beta1", beta1), ("beta2", beta2)):
            if not 0 <= v < 1:
                raise ConfigError(f"adam {name} must be in [0, 1)")
        return cls(params.zeros_like(), params.zeros_like(), 0, lr, beta1, beta2, eps)


def _check_same_shapes(a: NetworkParams, b: NetworkParams):
    ta, tb = a.tensors(), b.tensors()
    if len(ta) != len(tb) or any(x.shape != y.shape for x, y in zip(ta, tb)):
        raise ShapeError("parameter shapes do not match")


def adam_step(params, state: AdamState, grads, lr=None):
    """Bias-corrected Adam. ``lr`` overrides ``state.lr`` (for warm-up)."""
    _check_same_shapes(params, grads)
    _check_same_shapes(params, state.first_moment)
    lr = state.lr if lr is None else lr
    step = state.step_count + 1
    b1, b2 = state.beta1, state.beta2
    c1 = 1.0 - b1**step
    c2 = 1.0 - b2**step
    new_p, new_m, new_v = [], [], []
    for p, m, v, g in zip(params.tensors(), state.first_moment.tensors(),
                          state.second_moment.tensors(), grads.tensors()):
        m = b1 * m + (1.0 - b1) * g
        v = b2 * v + (1.0 - b2) * (g * g)
        new_p.append(p - lr * (m / c1) / (np.sqrt(v / c2) + state.eps))
        new_m.append(m)
        new_v.append(v)
    new_state = AdamState(
        params.with_tensors(new_m), params.with_tensors(new_v), step,
        state.lr, b1, b2, state.eps,
    )
    return params.with_tensors(new_p), new_state


@dataclass
class EmaState:
    shadow: NetworkParams
    decay: float = 0.9999
    start_step: int = 0

    def __post_init__(self):
        if not 0.0 <= self.decay < 1.0:
            raise ConfigError(f"ema decay must be in [0, 1), got {self.decay}")
        if self.start_step < 0:
            raise ConfigError("ema start_step must be >= 0")


def ema_update(state: EmaState, params: NetworkParams, global_step: int) -> EmaState:
    _check_same_shapes(params, state.shadow)
    if global_step < state.start_step:
        return EmaState(params.copy(), state.decay, state.start_step)
    d = state.decay
    shadow = [d * s + (1.0 - d) * p for s, p in zip(state.shadow.tensors(), params.tensors())]
    return EmaState(params.with_tensors(shadow), d, state.start_step)


__all__ = [
    "AdamState",
    "EmaState",
    "NetworkParams",
    "adam_step",
    "backward",
    "ema_update",
    "forward",
    "forward_with_cache",
    "init_params",
    "loss_gradients",
]
