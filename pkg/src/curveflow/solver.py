"""Integrators for the generative ODE, run backward from t=1 (prior) to t=0.

Every solver takes a batched vector field ``field(z, t) -> v`` with ``z`` of
shape ``(B, d)`` and scalar ``t``, and treats the whole batch as one system.
One call of the field counts as one function evaluation (NFE) per trajectory.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field as dc_field

import numpy as np

from . import net
from .errors import ConfigError, NumericalError
from .interpolant import LINEAR, InterpolantKind, vp_alpha
from .loss import VELOCITY, XPRED

EULER = "euler"
HEUN = "heun"
RK45 = "rk45"
SOLVER_KINDS = (EULER, HEUN, RK45)


@dataclass(frozen=True)
class SolverConfig:
    kind: str = EULER
    n_steps: int | None = 128
    atol: float | None = None
    rtol: float | None = None
    t_start: float = 1.0
    t_end: float = 0.0

    def __post_init__(self):
        if self.kind not in SOLVER_KINDS:
            raise ConfigError(f"solver must be one of {SOLVER_KINDS}, got {self.kind!r}")
        if not self.t_start > self.t_end:
            raise ConfigError("t_start must exceed t_end")
        if self.kind == RK45:
            if not (self.atol and self.rtol and self.atol > 0 and self.rtol > 0):
                raise ConfigError("rk45 needs positive atol and rtol")
        elif self.n_steps is None or int(self.n_steps) < 1:
            raise ConfigError("fixed-step solvers need n_steps >= 1")

    def to_json(self) -> dict:
        return {
            "kind": self.kind,
            "n_steps": self.n_steps,
            "atol": self.atol,
            "rtol": self.rtol,
            "t_start": self.t_start,
            "t_end": self.t_end,
        }

    @classmethod
    def from_json(cls, obj) -> "SolverConfig":
        return cls(**{k: obj[k] for k in ("kind", "n_steps", "atol", "rtol", "t_start", "t_end") if k in obj})


@dataclass
class Trajectory:
    """Accepted solver states. ``states`` has shape ``(len(times), B, d)``.

    ``velocities[k]`` is the field value used to leave ``states[k]``
    (fixed-step Euler only; empty otherwise).
    """

    times: np.ndarray
    states: np.ndarray
    nfe: int
    velocities: np.ndarray | None = None
    extra: dict = dc_field(default_factory=dict)

    @property
    def final(self) -> np.ndarray:
        return self.states[-1]


class CountingField:
    """Wraps a field and counts evaluations."""

    def __init__(self, fn):
        self.fn = fn
        self.nfe = 0

    def __call__(self, z, t):
        self.nfe += 1
        return self.fn(z, t)


@dataclass
class Generator:
    """A trained generator network seen as a vector field of the generative ODE."""

    params: net.NetworkParams
    parameterization: str = VELOCITY
    interp: InterpolantKind = dc_field(default_factory=InterpolantKind)

    def __call__(self, z, t):
        return ode_rhs(self, z, t)

    def default_t_end(self, t_min=1e-5) -> float:
        if self.parameterization == VELOCITY and self.interp.kind == LINEAR:
            return 0.0
        return t_min


def ode_rhs(gen: Generator, state, t):
    """Instantaneous velocity of the generative ODE at ``(state, t)``.

    Raises:
        ConfigError: at ``t = 0`` for the x-prediction parameterization.
    """
    state = np.atleast_2d(np.asarray(state, dtype=np.float64))
    t = float(t)
    out = net.forward(gen.params, state, t)
    if gen.interp.kind == LINEAR:
        if gen.parameterization == VELOCITY:
            return out
        if t <= 0.0:
            raise ConfigError("x-prediction field is singular at t = 0")
        return (state - out) / t
    # variance-preserving path: x-prediction, DDIM-style probability-flow velocity
    if t <= 0.0:
        raise ConfigError("vp field is singular at t = 0")
    a, b = gen.interp.vp_a, gen.interp.vp_b
    alpha = float(vp_alpha(t, a, b))
    sig = math.sqrt(1.0 - alpha * alpha)
    dalpha = -0.5 * (a * t + b) * alpha
    dsig = -alpha * dalpha / sig
    zhat = (state - alpha * out) / sig
    return dalpha * out + dsig * zhat


def _check_finite(z, step):
    if not np.isfinite(z).all():
        raise NumericalError(f"non-finite state at step {step}", index=step)


def euler_solve(fn, z_init, config: SolverConfig, keep_states=True) -> Trajectory:
    """Fixed-step explicit Euler, ``nfe = n_steps``."""
    if config.kind != EULER:
        raise ConfigError("euler_solve needs kind='euler'")
    f = CountingField(fn)
    z = np.atleast_2d(np.asarray(z_init, dtype=np.float64)).copy()
    z0 = z
    n = int(config.n_steps)
    times = np.linspace(config.t_start, config.t_end, n + 1)
    states = [z] if keep_states else None
    vels = [] if keep_states else None
    for k in range(n):
        h = times[k + 1] - times[k]
        v = f(z, times[k])
        z = z + h * v
        _check_finite(z, k)
        if keep_states:
            states.append(z)
            vels.append(v)
    if not keep_states:
        return Trajectory(times[[0, -1]], np.stack([z0, z]), f.nfe)
    return Trajectory(times, np.stack(states), f.nfe, np.stack(vels))


def heun_solve(fn, z_init, config: SolverConfig, keep_states=True) -> Trajectory:
    """Heun's second-order method; both stages every step, ``nfe = 2 n_steps``."""
    if config.kind != HEUN:
        raise ConfigError("heun_solve needs kind='heun'")
    f = CountingField(fn)
    z = np.atleast_2d(np.asarray(z_init, dtype=np.float64)).copy()
    n = int(config.n_steps)
    times = np.linspace(config.t_start, config.t_end, n + 1)
    states = [z]
    for k in range(n):
        h = times[k + 1] - times[k]
        v0 = f(z, times[k])
        zp = z + h * v0
        v1 = f(zp, times[k + 1])
        z = z + 0.5 * h * (v0 + v1)
        _check_finite(z, k)
        if keep_states:
            states.append(z)
    if not keep_states:
        states = [states[0], z]
        times = times[[0, -1]]
    return Trajectory(times, np.stack(states), f.nfe)


# Dormand-Prince 5(4) tableau
_C = np.array([0.0, 1 / 5, 3 / 10, 4 / 5, 8 / 9, 1.0, 1.0])
_A = [
    [],
    [1 / 5],
    [3 / 40, 9 / 40],
    [44 / 45, -56 / 15, 32 / 9],
    [19372 / 6561, -25360 / 2187, 64448 / 6561, -212 / 729],
    [9017 / 3168, -355 / 33, 46732 / 5247, 49 / 176, -5103 / 18656],
    [35 / 384, 0.0, 500 / 1113, 125 / 192, -2187 / 6784, 11 / 84],
]
_B5 = np.array([35 / 384, 0.0, 500 / 1113, 125 / 192, -2187 / 6784, 11 / 84, 0.0])
_B4 = np.array([5179 / 57600, 0.0, 7571 / 16695, 393 / 640, -92097 / 339200, 187 / 2100, 1 / 40])
_E = _B5 - _B4

SAFETY = 0.9
MIN_FACTOR = 0.2
MAX_FACTOR = 10.0
H_MIN = 1e-12
_PI_ALPHA = 0.7 / 5
_PI_BETA = 0.4 / 5


def _rms(x):
    return float(np.sqrt(np.mean(x * x)))


def _initial_step(f, t0, y0, f0, direction, atol, rtol, span):
    scale = atol + np.abs(y0) * rtol
    d0 = _rms(y0 / scale)
    d1 = _rms(f0 / scale)
    h0 = 1e-6 if d0 < 1e-5 or d1 < 1e-5 else 0.01 * d0 / d1
    h0 = min(h0, span)
    y1 = y0 + direction * h0 * f0
    f1 = f(y1, t0 + direction * h0)
    d2 = _rms((f1 - f0) / scale) / h0
    if d1 <= 1e-15 and d2 <= 1e-15:
        h1 = max(1e-6, h0 * 1e-3)
    else:
        h1 = (0.01 / max(d1, d2)) ** (1 / 5)
    return min(100 * h0, h1, span)


def rk45_solve(fn, z_init, config: SolverConfig, keep_states=True) -> Trajectory:
    """Adaptive Dormand-Prince 5(4) with a PI step-size controller.

    Error norm is the RMS over all batch components of
    ``err / (atol + rtol * max(|y|, |y_new|))``. NFE counts the initial
    evaluation, the step-size probe, and six evaluations per attempted step
    (the seventh stage is reused as the next step's first, FSAL).

    Raises:
        NumericalError: when the step size falls below 1e-12.
    """
    if config.kind != RK45:
        raise ConfigError("rk45_solve needs kind='rk45'")
    f = CountingField(fn)
    atol, rtol = float(config.atol), float(config.rtol)
    t, t_end = float(config.t_start), float(config.t_end)
    direction = -1.0 if t_end < t else 1.0
    span = abs(t_end - t)
    y = np.atleast_2d(np.asarray(z_init, dtype=np.float64)).copy()
    k1 = f(y, t)
    h = _initial_step(f, t, y, k1, direction, atol, rtol, span)
    times, states = [t], [y]
    err_prev = 1.0
    n_accept = n_reject = 0
    while direction * (t_end - t) > 0:
        if h < H_MIN:
            raise NumericalError(f"rk45 step size underflow at t={t:.6g}", index=len(times) - 1)
        last = h >= abs(t_end - t)
        if last:
            h = abs(t_end - t)
        hs = direction * h
        ks = [k1]
        for i in range(1, 7):
            yi = y + hs * sum(a * k for a, k in zip(_A[i], ks))
            ks.append(f(yi, t + _C[i] * hs))
        y_new = y + hs * sum(b * k for b, k in zip(_B5[:6], ks[:6]))
        err_vec = hs * sum(e * k for e, k in zip(_E, ks))
        scale = atol + rtol * np.maximum(np.abs(y), np.abs(y_new))
        err = _rms(err_vec / scale)
        if not math.isfinite(err):
            h *= MIN_FACTOR
            n_reject += 1
            continue
        if err <= 1.0:
            t = t_end if last else t + hs
            y = y_new
            k1 = ks[6]
            n_accept += 1
            if keep_states:
                times.append(t)
                states.append(y)
            if err == 0.0:
                factor = MAX_FACTOR
            else:
                factor = SAFETY * err ** (-_PI_ALPHA) * err_prev ** _PI_BETA
            err_prev = max(err, 1e-4)
            h *= min(MAX_FACTOR, max(MIN_FACTOR, factor))
        else:
            n_reject += 1
            h *= max(MIN_FACTOR, SAFETY * err ** (-1 / 5))
        _check_finite(y, n_accept)
    if not keep_states:
        times, states = [config.t_start, t], [states[0], y]
    return Trajectory(
        np.array(times), np.stack(states), f.nfe,
        extra={"accepted": n_accept, "rejected": n_reject},
    )


def solve(fn, z_init, config: SolverConfig, keep_states=True) -> Trajectory:
    if config.kind == EULER:
        return euler_solve(fn, z_init, config, keep_states)
    if config.kind == HEUN:
        return heun_solve(fn, z_init, config, keep_states)
    return rk45_solve(fn, z_init, config, keep_states)


def solve_chunked(fn, z_init, config: SolverConfig, chunk=1024, threads=1) -> tuple[np.ndarray, int]:
    """Terminal states for many initial conditions, solved in fixed-size chunks.

    Chunk boundaries never depend on ``threads``, so the result does not
    either. Returns ``(terminal_states, nfe_per_sample)``; for the adaptive
    solver the per-sample NFE is the mean over chunks.
    """
    from .parallel import map_chunks

    z_init = np.atleast_2d(np.asarray(z_init, dtype=np.float64))
    results = map_chunks(lambda zc: solve(fn, zc, config, keep_states=False), z_init, chunk, threads)
    finals = np.concatenate([r.final for r in results], axis=0)
    nfe_total = sum(r.nfe * r.final.shape[0] for r in results)
    return finals, nfe_total / max(z_init.shape[0], 1)
