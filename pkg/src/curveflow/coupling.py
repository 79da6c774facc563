"""Forward couplings between data and the standard-normal prior.

The learned coupling is a diagonal Gaussian ``q(z|x)`` produced by a time-free
MLP whose output is ``[mean, log-variance]``. Latents share the data dimension.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from . import net
from .errors import ConfigError, NumericalError, ShapeError

LOGVAR_MIN = -20.0
LOGVAR_MAX = 4.0


@dataclass
class CouplingSample:
    """A batch of coupled pairs. ``mu``/``sigma``/``eps`` are None when independent."""

    x: np.ndarray
    z: np.ndarray
    mu: np.ndarray | None = None
    sigma: np.ndarray | None = None
    eps: np.ndarray | None = None
    # backward bookkeeping for the encoder path
    _cache: object = None
    _clipped: np.ndarray | None = None


def encoder_layer_sizes(data_dim: int, hidden: list[int]) -> list[int]:
    return [data_dim, *hidden, 2 * data_dim]


def init_encoder(data_dim: int, hidden, seed: int, activation="silu", zero_output=True):
    """Time-free encoder network. With ``zero_output`` the last layer starts at
    zero so the initial coupling equals the independent one."""
    params = net.init_params(encoder_layer_sizes(data_dim, list(hidden)), 0, seed, activation)
    if zero_output:
        params.weights[-1][:] = 0.0
    return params


def independent_sample(x, rng) -> CouplingSample:
    x = np.asarray(x, dtype=np.float64)
    return CouplingSample(x=x, z=rng.standard_normal(x.shape))


def encode(phi: net.NetworkParams, x, rng=None, eps=None) -> CouplingSample:
    """Reparameterized draw ``z = mu + sigma * eps`` from ``q_phi(z|x)``.

    Args:
        phi: encoder network with output width ``2 * data_dim``.
        x: ``(B, d)`` data batch (a single vector is promoted).
        rng: numpy Generator, used when ``eps`` is not given.
        eps: optional fixed standard-normal draw (test hook).
    """
    x = np.atleast_2d(np.asarray(x, dtype=np.float64))
    d = x.shape[1]
    if phi.data_dim != d or phi.out_dim != 2 * d:
        raise ShapeError(f"encoder expects data dim {phi.data_dim} with output {2 * d}")
    out, cache = net.forward_with_cache(phi, x)
    if not np.isfinite(out).all():
        raise NumericalError("encoder produced a non-finite output")
    mu = out[:, :d]
    raw_logvar = out[:, d:]
    logvar = np.clip(raw_logvar, LOGVAR_MIN, LOGVAR_MAX)
    sigma = np.exp(0.5 * logvar)
    if eps is None:
        if rng is None:
            raise ConfigError("encode needs rng or eps")
        eps = rng.standard_normal(x.shape)
    eps = np.broadcast_to(np.asarray(eps, dtype=np.float64), x.shape)
    z = mu + sigma * eps
    clipped = (raw_logvar < LOGVAR_MIN) | (raw_logvar > LOGVAR_MAX)
    return CouplingSample(x=x, z=z, mu=mu, sigma=sigma, eps=eps, _cache=cache, _clipped=clipped)


def encode_backward(phi, sample: CouplingSample, grad_mu, grad_logvar):
    """Encoder parameter gradients from dL/dmu and dL/dlogvar (post-clamp)."""
    grad_logvar = np.where(sample._clipped, 0.0, grad_logvar)
    grad_out = np.concatenate([grad_mu, grad_logvar], axis=1)
    grads, _ = net.backward(phi, sample._cache, grad_out, need_state_grad=False)
    return grads


def reparam_backward(sample: CouplingSample, grad_z):
    """Split dL/dz into (dL/dmu, dL/dlogvar) through ``z = mu + exp(lv/2) eps``."""
    return grad_z, grad_z * sample.eps * 0.5 * sample.sigma


def gaussian_kl(mu, sigma):
    """KL(N(mu, diag sigma^2) || N(0, I)) summed over the last axis."""
    mu = np.asarray(mu, dtype=np.float64)
    sigma = np.asarray(sigma, dtype=np.float64)
    if np.any(sigma <= 0):
        raise ConfigError("sigma must be strictly positive")
    val = 0.5 * np.sum(sigma * sigma + mu * mu - 1.0 - 2.0 * np.log(sigma), axis=-1)
    return val if np.ndim(val) else float(val)


def gaussian_kl_grads(mu, sigma):
    """Gradients of :func:`gaussian_kl` w.r.t. mu and the log-variance."""
    return mu, 0.5 * (sigma * sigma - 1.0)
