"""Diagnostics for trained models.

* trajectory curvature from an Euler pass,
* the Monte-Carlo upper bound on the degree of intersection and an exact
  quadrature value for small finite datasets,
* sliced Wasserstein distance as a sample-quality measure,
* latent-norm statistics and reconstruction quality of the learned coupling.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from . import coupling
from .errors import ConfigError, NumericalError, ShapeError
from .interpolant import InterpolantKind, interpolate
from .loss import VELOCITY, predict_x
from .parallel import map_chunks
from .solver import EULER, SolverConfig, euler_solve, solve, solve_chunked


@dataclass
class CurvatureReport:
    mean_curvature: float
    n_trajectories: int
    n_steps: int
    solver: SolverConfig
    std_error: float = 0.0

    def to_json(self) -> dict:
        return {
            "mean_curvature": self.mean_curvature,
            "std_error": self.std_error,
            "n_trajectories": self.n_trajectories,
            "n_steps": self.n_steps,
            "solver": self.solver.to_json(),
        }


@dataclass
class IntersectionEstimate:
    bound_value: float
    n_samples: int
    t_min: float
    std_error: float = 0.0

    def to_json(self) -> dict:
        return {
            "bound_value": self.bound_value,
            "std_error": self.std_error,
            "n_samples": self.n_samples,
            "t_min": self.t_min,
        }


def per_trajectory_curvature(fn, z_init, n_steps=128, t_end=0.0):
    """Curvature of each trajectory, averaged over the Euler grid and divided by dim."""
    if n_steps < 2:
        raise ConfigError("curvature needs n_steps >= 2")
    cfg = SolverConfig(EULER, n_steps, t_start=1.0, t_end=t_end)
    tr = euler_solve(fn, z_init, cfg)
    chord = tr.states[0] - tr.states[-1]
    dev = chord[None, :, :] - tr.velocities
    d = tr.states.shape[2]
    return np.mean(np.sum(dev * dev, axis=2), axis=0) / d


def curvature(fn, prior_samples, n_steps=128, t_end=0.0, threads=None, chunk=1000) -> CurvatureReport:
    """Mean squared deviation of per-step velocities from the chord ``z_1 - z_0``."""
    z = np.atleast_2d(np.asarray(prior_samples, dtype=np.float64))
    per = np.concatenate(map_chunks(lambda zc: per_trajectory_curvature(fn, zc, n_steps, t_end), z, chunk, threads))
    n = len(per)
    se = float(per.std(ddof=1) / np.sqrt(n)) if n > 1 else 0.0
    return CurvatureReport(float(per.mean()), n, n_steps, SolverConfig(EULER, n_steps, t_end=t_end), se)


def intersection_bound(theta, phi, data, n_mc, t_min, rng, parameterization=VELOCITY, batch=4096) -> IntersectionEstimate:
    """Monte-Carlo mean of ``||x - x_hat(x_t, t)||^2 / t^2``.

    Args:
        theta: generator NetworkParams or a callable ``(x_t, t) -> output``.
        phi: encoder NetworkParams, or None for the independent coupling.
        data: ``(N, d)`` array sampled uniformly with replacement.
        parameterization: how to read ``theta``'s output.
    """
    if n_mc < 1:
        raise ConfigError("n_mc must be >= 1")
    if not 0.0 < t_min < 1.0:
        raise ConfigError("t_min must be in (0, 1)")
    data = np.atleast_2d(np.asarray(data, dtype=np.float64))
    vals = []
    done = 0
    while done < n_mc:
        m = min(batch, n_mc - done)
        x = data[rng.integers(0, len(data), size=m)]
        t = rng.uniform(t_min, 1.0, size=m)
        if phi is None:
            z = rng.standard_normal(x.shape)
        else:
            z = coupling.encode(phi, x, rng).z
        xt = interpolate(InterpolantKind(), x, z, t)
        xhat = predict_x(theta, xt, t, parameterization)
        vals.append(np.sum((x - xhat) ** 2, axis=1) / (t * t))
        done += m
    v = np.concatenate(vals)
    se = float(v.std(ddof=1) / np.sqrt(len(v))) if len(v) > 1 else 0.0
    return IntersectionEstimate(float(v.mean()), len(v), t_min, se)


# ---------------------------------------------------------------- exact oracle

QUAD_HALF_WIDTH = 10.0


def _posterior_weights(points, probs, z_mean, z_std, xt, t):
    """Posterior over data indices given ``x_t`` for Gaussian ``z | x_i``."""
    t = np.asarray(t, dtype=np.float64).reshape(-1, 1)
    means = (1.0 - t)[:, :, None] * points[None, :, :] + t[:, :, None] * z_mean[None, :, :]
    var = (t * t)[:, :, None] * (z_std * z_std)[None, :, :]
    diff = xt[:, None, :] - means
    logp = -0.5 * np.sum(diff * diff / var + np.log(var), axis=2) + np.log(probs)[None, :]
    logp -= logp.max(axis=1, keepdims=True)
    w = np.exp(logp)
    return w / w.sum(axis=1, keepdims=True)


def optimal_decoder(points, probs=None, z_mean=None, z_std=None):
    """Closed-form ``E[x | x_t]`` for a finite dataset with Gaussian ``z | x``.

    Defaults give the independent coupling with a standard-normal prior.
    Returns a callable ``(x_t, t) -> x_hat`` (x-prediction).
    """
    pts, probs, zm, zs = _gaussian_coupling(points, probs, z_mean, z_std)

    def decoder(xt, t):
        xt = np.atleast_2d(np.asarray(xt, dtype=np.float64))
        t = np.broadcast_to(np.asarray(t, dtype=np.float64), (xt.shape[0],))
        return _posterior_weights(pts, probs, zm, zs, xt, t) @ pts

    return decoder


def _gaussian_coupling(points, probs, z_mean, z_std):
    pts = np.atleast_2d(np.asarray(points, dtype=np.float64))
    n, d = pts.shape
    probs = np.full(n, 1.0 / n) if probs is None else np.asarray(probs, dtype=np.float64)
    probs = probs / probs.sum()
    zm = np.zeros((n, d)) if z_mean is None else np.broadcast_to(np.asarray(z_mean, dtype=np.float64), (n, d))
    zs = np.ones((n, d)) if z_std is None else np.broadcast_to(np.asarray(z_std, dtype=np.float64), (n, d))
    if np.any(zs <= 0):
        raise ConfigError("z_std must be positive")
    return pts, probs, np.asarray(zm), np.asarray(zs)


@dataclass
class FiniteCoupling:
    """Explicit coupling table: pair ``k`` is ``(xs[k], zs[k])`` with mass ``probs[k]``."""

    xs: np.ndarray
    zs: np.ndarray
    probs: np.ndarray | None = None


@dataclass
class GaussianCoupling:
    """Finite data with ``z | x_i ~ N(z_mean[i], diag z_std[i]^2)``."""

    points: np.ndarray
    probs: np.ndarray | None = None
    z_mean: np.ndarray | None = None
    z_std: np.ndarray | None = None
    n_quad: int = 200


def exact_intersection_small(coupling_spec, n_t_grid=64, t_min=1e-5, t_max=1.0, match_tol=1e-9) -> float:
    """Degree of intersection by deterministic quadrature.

    Two supported forms:

    ``FiniteCoupling``
        pairs whose interpolants coincide (within ``match_tol``) at a given
        ``t`` share a conditional mean; elsewhere the posterior is a point mass.
    ``GaussianCoupling``
        the posterior over data indices is exact; the expectation over ``z``
        is a tensor Gauss-Legendre rule on ``[-10, 10]`` per dimension
        (``n_quad`` nodes each), so keep ``d <= 2``.

    ``t`` is integrated with Gauss-Legendre on ``[t_min, t_max]`` and the
    result is the average over that interval.
    """
    tn, tw = np.polynomial.legendre.leggauss(n_t_grid)
    ts = 0.5 * (t_max - t_min) * tn + 0.5 * (t_max + t_min)
    tw = 0.5 * tw
    if isinstance(coupling_spec, FiniteCoupling):
        return float(sum(w * _finite_slice(coupling_spec, t, match_tol) for t, w in zip(ts, tw)))
    if isinstance(coupling_spec, GaussianCoupling):
        return float(sum(w * gaussian_intersection_slice(coupling_spec, t) for t, w in zip(ts, tw)))
    raise ConfigError(f"unsupported coupling form {type(coupling_spec).__name__}")


def _finite_slice(c: FiniteCoupling, t, tol):
    xs = np.atleast_2d(np.asarray(c.xs, dtype=np.float64))
    zs = np.atleast_2d(np.asarray(c.zs, dtype=np.float64))
    if xs.shape != zs.shape:
        raise ShapeError("coupling xs and zs must have equal shapes")
    if len(xs) > 32 * 32:
        raise ConfigError("finite coupling table too large for the exact oracle")
    p = np.full(len(xs), 1.0 / len(xs)) if c.probs is None else np.asarray(c.probs, dtype=np.float64)
    p = p / p.sum()
    xt = (1.0 - t) * xs + t * zs
    vel = zs - xs
    dist = np.max(np.abs(xt[:, None, :] - xt[None, :, :]), axis=2)
    same = dist <= tol * (1.0 + np.max(np.abs(xt)))
    total = 0.0
    for k in range(len(xs)):
        grp = same[k]
        cond = (p[grp, None] * vel[grp]).sum(axis=0) / p[grp].sum()
        total += p[k] * np.sum((vel[k] - cond) ** 2)
    return total


def gaussian_intersection_slice(c: GaussianCoupling, t):
    """``E ||x - E[x|x_t]||^2 / t^2`` at a single time ``t``."""
    pts, probs, zm, zs = _gaussian_coupling(c.points, c.probs, c.z_mean, c.z_std)
    n, d = pts.shape
    if d > 3:
        raise ConfigError("Gaussian quadrature oracle supports d <= 3")
    # Gauss-Legendre on [-L, L] against the normal density; the posterior mean is
    # steep for small t, which Gauss-Hermite resolves poorly
    gx, gw = np.polynomial.legendre.leggauss(c.n_quad)
    gx = QUAD_HALF_WIDTH * gx
    gw = QUAD_HALF_WIDTH * gw * np.exp(-0.5 * gx * gx) / np.sqrt(2.0 * np.pi)
    grids = np.meshgrid(*([gx] * d), indexing="ij")
    nodes = np.stack([g.ravel() for g in grids], axis=1)
    wts = np.ones(len(nodes))
    for j, g in enumerate(np.meshgrid(*([gw] * d), indexing="ij")):
        wts = wts * g.ravel()
    total = 0.0
    for i in range(n):
        z = zm[i] + zs[i] * nodes
        xt = (1.0 - t) * pts[i] + t * z
        w = _posterior_weights(pts, probs, zm, zs, xt, np.full(len(xt), t))
        xhat = w @ pts
        total += probs[i] * np.sum(wts * np.sum((pts[i] - xhat) ** 2, axis=1))
    return total / (t * t)


# ------------------------------------------------------------- sample quality


def _quantiles(sorted_vals, m):
    n = len(sorted_vals)
    if n == m:
        return sorted_vals
    q = (np.arange(m) + 0.5) / m
    idx = np.minimum((q * n).astype(np.int64), n - 1)
    return sorted_vals[idx]


def wasserstein_1d(a, b, p=2):
    """Empirical ``W_p`` between two 1D samples via their quantile functions."""
    a = np.sort(np.asarray(a, dtype=np.float64).ravel())
    b = np.sort(np.asarray(b, dtype=np.float64).ravel())
    m = int(np.lcm(len(a), len(b))) if len(a) * len(b) <= 4_000_000 else max(len(a), len(b))
    qa, qb = _quantiles(a, m), _quantiles(b, m)
    return float(np.mean(np.abs(qa - qb) ** p) ** (1.0 / p))


def sliced_wasserstein(samples_a, samples_b, n_projections=128, rng=None) -> float:
    """Mean over random unit directions of the 1D 2-Wasserstein distance."""
    a = np.atleast_2d(np.asarray(samples_a, dtype=np.float64))
    b = np.atleast_2d(np.asarray(samples_b, dtype=np.float64))
    if a.shape[0] == 0 or b.shape[0] == 0:
        raise ShapeError("sample sets must be non-empty")
    if a.shape[1] != b.shape[1]:
        raise ShapeError(f"dimension mismatch: {a.shape[1]} vs {b.shape[1]}")
    rng = np.random.default_rng(rng)
    dirs = rng.standard_normal((n_projections, a.shape[1]))
    dirs /= np.linalg.norm(dirs, axis=1, keepdims=True)
    pa, pb = a @ dirs.T, b @ dirs.T
    return float(np.mean([wasserstein_1d(pa[:, k], pb[:, k]) for k in range(n_projections)]))


def sample(fn, n, solver_config: SolverConfig, rng, dim, threads=None, chunk=1024):
    """Terminal states of the generative ODE from ``n`` prior draws."""

    z = rng.standard_normal((n, dim))
    return solve_chunked(fn, z, solver_config, chunk, threads)


def nfe_sweep(fn, data, nfes, rng, n=2000, n_projections=128, threads=None, t_end=0.0):
    """Euler sampling with ``n_steps = NFE`` for each budget; SW to ``data``."""
    data = np.atleast_2d(np.asarray(data, dtype=np.float64))
    z = rng.standard_normal((n, data.shape[1]))
    proj_seed = int(rng.integers(2**31))
    out = []
    for k in nfes:

        xs, _ = solve_chunked(fn, z, SolverConfig(EULER, int(k), t_end=t_end), threads=threads)
        out.append({"nfe": int(k), "sw_distance": sliced_wasserstein(xs, data, n_projections, proj_seed)})
    return out


# -------------------------------------------------------------- coupling checks


@dataclass
class LatentNormStats:
    mean: float
    std: float
    quantiles: dict
    norms: np.ndarray = field(repr=False)

    def to_json(self, with_norms=False) -> dict:
        d = {"mean": self.mean, "std": self.std, "quantiles": self.quantiles}
        if with_norms:
            d["norms"] = self.norms.tolist()
        return d


def _norm_stats(norms) -> LatentNormStats:
    qs = (0.05, 0.25, 0.5, 0.75, 0.95)
    return LatentNormStats(
        float(norms.mean()), float(norms.std()),
        {f"{q:.2f}": float(v) for q, v in zip(qs, np.quantile(norms, qs))}, norms,
    )


def latent_norm_stats(phi, data, rng, n) -> LatentNormStats:
    """Statistics of ``||z||`` for ``z ~ q_phi(z|x)``, ``x`` drawn from ``data``.

    ``phi = None`` means the independent coupling (``z`` from the prior).
    """
    if n < 1:
        raise ConfigError("n must be >= 1")
    data = np.atleast_2d(np.asarray(data, dtype=np.float64))
    x = data[rng.integers(0, len(data), size=n)]
    z = rng.standard_normal(x.shape) if phi is None else coupling.encode(phi, x, rng).z
    return _norm_stats(np.linalg.norm(z, axis=1))


def prior_norm_stats(dim, rng, n) -> LatentNormStats:
    return _norm_stats(np.linalg.norm(rng.standard_normal((n, dim)), axis=1))


def latent_norm_deviation(stats: LatentNormStats, dim, rng, n=None) -> float:
    """1D 1-Wasserstein distance between encoded norms and prior norms."""
    n = n or len(stats.norms)
    return wasserstein_1d(stats.norms, prior_norm_stats(dim, rng, n).norms, p=1)


def reconstruction_metric(fn, phi, data, solver_config: SolverConfig, rng, n=2000,
                          n_projections=128, threads=None, stats=None) -> float:
    """Encode data, decode with the generative ODE, SW against the data.

    Chunks whose solve fails are dropped and counted in ``stats["n_failed"]``.
    """
    data = np.atleast_2d(np.asarray(data, dtype=np.float64))
    x = data[rng.integers(0, len(data), size=n)]
    z = rng.standard_normal(x.shape) if phi is None else coupling.encode(phi, x, rng).z
    proj_seed = int(rng.integers(2**31))

    def run(zc):
        try:
            return solve(fn, zc, solver_config, keep_states=False).final, 0
        except NumericalError:
            return None, len(zc)

    parts = map_chunks(run, z, 1024, threads)
    good = [p for p, _ in parts if p is not None]
    failed = sum(k for _, k in parts)
    if stats is not None:
        stats["n_failed"] = failed
    if not good:
        raise NumericalError("every reconstruction solve failed")
    return sliced_wasserstein(np.concatenate(good), data, n_projections, proj_seed)


__all__ = [
    "CurvatureReport",
    "FiniteCoupling",
    "GaussianCoupling",
    "IntersectionEstimate",
    "curvature",
    "exact_intersection_small",
    "intersection_bound",
    "latent_norm_stats",
    "nfe_sweep",
    "optimal_decoder",
    "reconstruction_metric",
    "sliced_wasserstein",
]

