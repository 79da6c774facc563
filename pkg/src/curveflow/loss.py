"""Training objectives.

All losses are batch means. The generator network is used either as a
velocity field ``v(x_t, t)`` or as a data predictor ``x_hat(x_t, t)``; on the
linear path the two are related by ``v = (x_t - x_hat) / t``.

``joint_loss`` is the coupling-learning objective: reconstruction weighted by
``1/t^2`` (equivalently velocity matching) plus ``beta`` times the per-sample
Gaussian KL of the encoder, with gradients for both networks. ``beta = inf``
means the independent coupling (no encoder).
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

from . import coupling, net
from .errors import ConfigError, NumericalError, ShapeError
from .interpolant import LINEAR, VP, InterpolantKind, interpolate, vp_alpha

VELOCITY = "velocity"
XPRED = "x"
PARAMETERIZATIONS = (VELOCITY, XPRED)


@dataclass
class LossBreakdown:
    total: float
    recon_term: float
    kl_term: float
    beta: float

    @property
    def independent(self) -> bool:
        return math.isinf(self.beta)


def sample_time(rng, t_min=1e-5, t_max=1.0, size=None):
    """Uniform draw(s) on ``[t_min, t_max]``."""
    if not (0.0 <= t_min < t_max <= 1.0):
        raise ConfigError(f"need 0 <= t_min < t_max <= 1, got [{t_min}, {t_max}]")
    return rng.uniform(t_min, t_max, size=size)


def _apply(theta, xt, t):
    if isinstance(theta, net.NetworkParams):
        return net.forward(theta, xt, t)
    return np.asarray(theta(xt, t), dtype=np.float64)


def _batch(x, z, t):
    x = np.atleast_2d(np.asarray(x, dtype=np.float64))
    z = np.atleast_2d(np.asarray(z, dtype=np.float64))
    if x.shape != z.shape:
        raise ShapeError(f"x shape {x.shape} != z shape {z.shape}")
    t = np.broadcast_to(np.asarray(t, dtype=np.float64), (x.shape[0],))
    return x, z, t


def predict_x(theta, xt, t, parameterization=VELOCITY):
    """Data prediction from either parameterization (linear path)."""
    out = _apply(theta, xt, t)
    if parameterization == XPRED:
        return out
    return xt - np.asarray(t)[:, None] * out


def predict_velocity(theta, xt, t, parameterization=VELOCITY):
    """Velocity from either parameterization (linear path)."""
    out = _apply(theta, xt, t)
    if parameterization == VELOCITY:
        return out
    return (xt - out) / np.asarray(t)[:, None]


def weighted_x_loss(theta, x, z, t, parameterization=XPRED):
    """Mean of ``||x - x_hat(x_t, t)||^2 / t^2`` on the linear path.

    Raises:
        ConfigError: if any ``t <= 0``.
    """
    x, z, t = _batch(x, z, t)
    if np.any(t <= 0.0):
        raise ConfigError("weighted_x_loss needs t > 0 (1/t^2 weight)")
    xt = interpolate(InterpolantKind(LINEAR), x, z, t)
    xhat = predict_x(theta, xt, t, parameterization)
    return float(np.mean(np.sum((x - xhat) ** 2, axis=1) / (t * t)))


def velocity_matching_loss(theta, x, z, t, parameterization=VELOCITY):
    """Mean of ``||(z - x) - v(x_t, t)||^2`` on the linear path."""
    x, z, t = _batch(x, z, t)
    xt = interpolate(InterpolantKind(LINEAR), x, z, t)
    v = predict_velocity(theta, xt, t, parameterization)
    return float(np.mean(np.sum(((z - x) - v) ** 2, axis=1)))


def _recon_and_grads(theta, x, z, t, parameterization, interp: InterpolantKind):
    """Reconstruction term, its theta gradients, and dL/dz."""
    n = x.shape[0]
    if interp.kind == VP:
        # x-prediction with unit weight on the variance-preserving path
        alpha = vp_alpha(t, interp.vp_a, interp.vp_b)[:, None]
        sig = np.sqrt(1.0 - alpha * alpha)
        xt = alpha * x + sig * z
        out, cache = net.forward_with_cache(theta, xt, t)
        resid = x - out
        recon = float(np.mean(np.sum(resid * resid, axis=1)))
        grads, g_xt = net.backward(theta, cache, (-2.0 / n) * resid)
        return recon, grads, sig * g_xt
    tc = t[:, None]
    xt = (1.0 - tc) * x + tc * z
    out, cache = net.forward_with_cache(theta, xt, t)
    if parameterization == VELOCITY:
        resid = (z - x) - out
        recon = float(np.mean(np.sum(resid * resid, axis=1)))
        grads, g_xt = net.backward(theta, cache, (-2.0 / n) * resid)
        return recon, grads, tc * g_xt + (2.0 / n) * resid
    w = 1.0 / (tc * tc)
    resid = x - out
    recon = float(np.mean(np.sum(w * resid * resid, axis=1)))
    grads, g_xt = net.backward(theta, cache, (-2.0 / n) * w * resid)
    return recon, grads, tc * g_xt


def joint_loss(
    theta,
    phi,
    x,
    beta,
    rng,
    parameterization=VELOCITY,
    t_min=1e-5,
    t_max=1.0,
    interp: InterpolantKind | None = None,
    t=None,
    eps=None,
):
    """Joint objective and gradients for generator ``theta`` and encoder ``phi``.

    Draw order from ``rng`` is fixed: times first, then the latent noise. With
    ``beta = inf`` (or ``phi is None``) the latent is a fresh prior draw and
    no encoder gradient is returned.

    Args:
        t, eps: optional fixed draws (used by gradient checks).

    Returns:
        ``(LossBreakdown, grads_theta, grads_phi_or_None)``.

    Raises:
        NumericalError: non-finite per-sample loss, carrying the sample index.
    """
    interp = interp or InterpolantKind(LINEAR)
    if parameterization not in PARAMETERIZATIONS:
        raise ConfigError(f"parameterization must be one of {PARAMETERIZATIONS}")
    beta = float(beta)
    if not (beta > 0):
        raise ConfigError("beta must be positive (use inf for the independent coupling)")
    if parameterization == XPRED and t_min <= 0.0 and interp.kind == LINEAR:
        raise ConfigError("x-prediction needs t_min > 0")
    x = np.atleast_2d(np.asarray(x, dtype=np.float64))
    n, d = x.shape
    if t is None:
        t = sample_time(rng, t_min, t_max, size=n)
    t = np.broadcast_to(np.asarray(t, dtype=np.float64), (n,)).copy()
    independent = math.isinf(beta) or phi is None

    if independent:
        z = rng.standard_normal((n, d)) if eps is None else np.asarray(eps, dtype=np.float64)
        sample = None
    else:
        sample = coupling.encode(phi, x, rng, eps)
        z = sample.z

    recon, g_theta, g_z = _recon_and_grads(theta, x, z, t, parameterization, interp)
    if not math.isfinite(recon):
        bad = _first_bad_sample(theta, x, z, t, parameterization, interp)
        raise NumericalError(f"non-finite loss at sample {bad}", index=bad)

    if independent:
        return LossBreakdown(recon, recon, 0.0, math.inf), g_theta, None

    kl_per = coupling.gaussian_kl(sample.mu, sample.sigma)
    kl = float(np.mean(kl_per))
    g_mu, g_lv = coupling.reparam_backward(sample, g_z)
    k_mu, k_lv = coupling.gaussian_kl_grads(sample.mu, sample.sigma)
    g_mu = g_mu + (beta / n) * k_mu
    g_lv = g_lv + (beta / n) * k_lv
    g_phi = coupling.encode_backward(phi, sample, g_mu, g_lv)
    total = recon + beta * kl
    if not math.isfinite(total):
        bad = int(np.argmax(~np.isfinite(kl_per)))
        raise NumericalError(f"non-finite loss at sample {bad}", index=bad)
    return LossBreakdown(total, recon, kl, beta), g_theta, g_phi


def _first_bad_sample(theta, x, z, t, parameterization, interp):
    for i in range(x.shape[0]):
        r, _, _ = _recon_and_grads(theta, x[i : i + 1], z[i : i + 1], t[i : i + 1], parameterization, interp)
        if not math.isfinite(r):
            return i
    return None
