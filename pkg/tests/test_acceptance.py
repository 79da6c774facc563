"""Acceptance criteria, one test each.

Each test records a single PASS/FAIL line (shown in the terminal summary)
and then asserts. Trained models are shared between criteria 5-9.
"""

import json
import math

import numpy as np
import pytest

from curveflow import distill, loss, metrics, net
from curveflow.cli import main
from curveflow.config import DatasetSpec, RunConfig
from curveflow.data import make_synthetic
from curveflow.solver import SolverConfig, euler_solve, solve
from curveflow.train import train

from conftest import ACCEPTANCE_LINES, central_fd, rel_err

SEEDS = (0, 1, 2)
HELD_OUT_SEED = 999
N_TRAJ = 1000
N_EVAL = 2000
N_PROJ = 128


def record(num, ok, detail):
    line = f"criterion {num:2d}: {'PASS' if ok else 'FAIL'}  {detail}"
    ACCEPTANCE_LINES[num] = line
    print(line)
    return ok


_MODELS = {}


def trained(beta, seed):
    key = (beta, seed)
    if key not in _MODELS:
        cfg = RunConfig(beta=beta, seed=seed, dataset=DatasetSpec(normalize=False))
        _MODELS[key] = train(cfg)
    return _MODELS[key]


def held_out(n=5000):
    return make_synthetic("gaussians8", n, HELD_OUT_SEED).points


def prior(seed, n=N_TRAJ):
    return np.random.default_rng(10_000 + seed).standard_normal((n, 2))


# ------------------------------------------------------------------ 1


def test_criterion_01_gradient_correctness():
    worst = 0.0
    for seed in range(3):
        rng = np.random.default_rng(seed)
        theta = net.init_params([2 + 4, 9, 7, 2], 2, seed)
        phi = net.init_params([2, 6, 4], 0, seed + 50)
        x = rng.standard_normal((5, 2))
        t = rng.uniform(0.05, 1.0, 5)
        eps = rng.standard_normal((5, 2))
        for param in (loss.VELOCITY, loss.XPRED):
            _, g_t, g_p = loss.joint_loss(theta, phi, x, 1.7, None, param, t=t, eps=eps)

            def f_theta(v):
                return loss.joint_loss(theta.from_flat(v), phi, x, 1.7, None, param, t=t, eps=eps)[0].total

            def f_phi(v):
                return loss.joint_loss(theta, phi.from_flat(v), x, 1.7, None, param, t=t, eps=eps)[0].total

            worst = max(worst, rel_err(g_t.flat(), central_fd(f_theta, theta.flat())),
                        rel_err(g_p.flat(), central_fd(f_phi, phi.flat())))
    ok = worst < 1e-4
    record(1, ok, f"max relative error {worst:.2e} (need < 1e-4)")
    assert ok


# ------------------------------------------------------------------ 2


def test_criterion_02_parameterization_bridge():
    worst = 0.0
    for seed in range(20):
        rng = np.random.default_rng(seed)
        d = int(rng.integers(1, 5))
        xnet = net.init_params([d + 6, 16, d], 3, seed)
        x, z = rng.standard_normal((64, d)), rng.standard_normal((64, d))
        t = rng.uniform(1e-3, 1.0, 64)
        a = loss.weighted_x_loss(xnet, x, z, t)
        b = loss.velocity_matching_loss(lambda xt, tt: (xt - net.forward(xnet, xt, tt)) / tt[:, None], x, z, t)
        worst = max(worst, abs(a - b) / abs(a))
    ok = worst < 1e-10
    record(2, ok, f"max relative disagreement {worst:.2e} (need < 1e-10)")
    assert ok


# ------------------------------------------------------------------ 3


def _field(z, t):
    return np.cos(3 * t) * z + np.sin(t)


def _exact(z1):
    from scipy.integrate import solve_ivp

    out = solve_ivp(lambda t, y: np.cos(3 * t) * y + np.sin(t), (1.0, 0.0), z1.ravel(), rtol=1e-13, atol=1e-13)
    return out.y[:, -1].reshape(z1.shape)


def test_criterion_03_solver_orders():
    z1 = np.array([[0.4, -1.1], [1.5, 0.2]])
    ref = _exact(z1)
    ns = np.array([16, 32, 64, 128, 256])
    slopes = {}
    for kind in ("euler", "heun"):
        errs = [np.abs(solve(_field, z1, SolverConfig(kind, int(n))).final - ref).max() for n in ns]
        slopes[kind] = -np.polyfit(np.log(ns), np.log(errs), 1)[0]
    rk = solve(_field, z1, SolverConfig("rk45", None, 1e-5, 1e-5))
    rk_err = np.abs(rk.final - ref).max()
    ok = abs(slopes["euler"] - 1) <= 0.1 and abs(slopes["heun"] - 2) <= 0.15 and rk_err < 1e-4
    record(3, ok, f"euler slope {slopes['euler']:.3f}, heun slope {slopes['heun']:.3f}, "
                  f"rk45 error {rk_err:.1e} with {rk.nfe} NFE")
    assert ok


# ------------------------------------------------------------------ 4


def test_criterion_04_bound_and_tightness():
    pts = np.array([[-1.0], [1.0]])
    t_min = 1e-3
    exact = metrics.exact_intersection_small(metrics.GaussianCoupling(pts), 96, t_min)
    opt = metrics.intersection_bound(metrics.optimal_decoder(pts), None, pts, 200_000, t_min,
                                     np.random.default_rng(0), loss.XPRED)
    tight = abs(opt.bound_value - exact) <= 3 * opt.std_error
    dominated = True
    subopt = []
    decoders = [lambda xt, t: np.zeros_like(xt), lambda xt, t: np.tanh(xt / np.asarray(t)[:, None])]
    decoders += [net.init_params([1 + 4, 16, 1], 2, s) for s in range(3)]
    for i, dec in enumerate(decoders):
        est = metrics.intersection_bound(dec, None, pts, 50_000, t_min, np.random.default_rng(i + 1), loss.XPRED)
        subopt.append(est.bound_value)
        dominated &= est.bound_value >= exact - 3 * est.std_error
    ok = tight and dominated
    record(4, ok, f"exact I(q) {exact:.5f}, optimal-decoder bound {opt.bound_value:.5f} ± {opt.std_error:.5f}; "
                  f"suboptimal bounds min {min(subopt):.4f}")
    assert ok


# ------------------------------------------------------------------ 5


def _curvature(beta, seed):
    return metrics.curvature(trained(beta, seed).model(), prior(seed), 128).mean_curvature


def test_criterion_05_curvature_trend():
    rows = []
    ok = True
    for seed in SEEDS:
        c = {b: _curvature(b, seed) for b in ("inf", 30.0, 3.0)}
        rows.append(f"seed {seed}: " + " > ".join(f"{c[b]:.3f}" for b in ("inf", 30.0, 3.0)))
        ok &= c["inf"] > c[30.0] > c[3.0]
    record(5, ok, "curvature independent > beta=30 > beta=3, " + "; ".join(rows))
    assert ok


# ------------------------------------------------------------------ 6


def _sw_at_nfe(beta, seed, nfe, ref):
    xs = euler_solve(trained(beta, seed).model(), prior(seed, N_EVAL), SolverConfig("euler", nfe),
                     keep_states=False).final
    return metrics.sliced_wasserstein(xs, ref, N_PROJ, seed)


def test_criterion_06_few_nfe_quality():
    ref = held_out()
    ok = True
    rows = []
    for seed in SEEDS:
        sw = {(b, k): _sw_at_nfe(b, seed, k, ref) for b in ("inf", 3.0) for k in (2, 5, 128)}
        few = all(sw[(3.0, k)] < sw[("inf", k)] for k in (2, 5))
        hi = max(sw[(3.0, 128)], sw[("inf", 128)]) <= 2 * min(sw[(3.0, 128)], sw[("inf", 128)])
        ok &= few and hi
        rows.append(f"seed {seed}: " + ", ".join(
            f"NFE {k} {sw[(3.0, k)]:.3f} vs {sw[('inf', k)]:.3f}" for k in (2, 5, 128)))
    record(6, ok, "SW beta=3 vs independent; " + "; ".join(rows))
    assert ok


# ------------------------------------------------------------------ 7


def _prior_hole(beta, seed, ref):
    res = trained(beta, seed)
    gen = res.model()
    rng = np.random.default_rng(20_000 + seed)
    cfg = SolverConfig("euler", 128)
    direct = metrics.sliced_wasserstein(
        euler_solve(gen, prior(seed, N_EVAL), cfg, keep_states=False).final, ref, N_PROJ, seed)
    recon = metrics.reconstruction_metric(gen, res.coupling_encoder(), res.dataset.points, cfg, rng, N_EVAL, N_PROJ)
    stats = metrics.latent_norm_stats(res.coupling_encoder(), res.dataset.points, rng, 5000)
    return direct - recon, metrics.latent_norm_deviation(stats, 2, rng)


def test_criterion_07_prior_hole_trend():
    ref = held_out()
    betas = (0.3, 3.0, 30.0)
    per = {b: np.array([_prior_hole(b, s, ref) for s in SEEDS]) for b in betas}
    gap = {b: per[b][:, 0].mean() for b in betas}
    dev = {b: per[b][:, 1].mean() for b in betas}
    ok = gap[0.3] > gap[3.0] > gap[30.0] and dev[0.3] > dev[3.0] > dev[30.0]
    record(7, ok, "seed-mean over beta 0.3/3/30: direct-minus-reconstruction SW gap "
                  + " > ".join(f"{gap[b]:.3f}" for b in betas)
                  + "; latent-norm deviation " + " > ".join(f"{dev[b]:.3f}" for b in betas))
    assert ok


# ------------------------------------------------------------------ 8

N_PAIRS = 10_000
STUDENT_ITERS = 3000


def _distill(beta, seed, ref):
    gen = trained(beta, seed).model()
    pairs = distill.generate_pairs(gen, N_PAIRS, SolverConfig("euler", 128), np.random.default_rng(30_000 + seed))
    tr, te = pairs.split(0.1, seed)
    student = distill.train_student(tr, distill.StudentConfig(iterations=STUDENT_ITERS, seed=seed))
    z = prior(seed, N_EVAL)
    return distill.distillation_error(student, te), metrics.sliced_wasserstein(net.forward(student, z), ref, N_PROJ, seed)


def test_criterion_08_distillation_trend():
    ref = held_out()
    ok = True
    rows = []
    for seed in SEEDS:
        mse_b, sw_b = _distill(3.0, seed, ref)
        mse_i, sw_i = _distill("inf", seed, ref)
        ok &= mse_b < mse_i and sw_b < sw_i
        rows.append(f"seed {seed}: mse {mse_b:.4f} vs {mse_i:.4f}, sw {sw_b:.3f} vs {sw_i:.3f}")
    record(8, ok, "beta=3 teacher vs independent teacher (Euler-128 pairs); " + "; ".join(rows))
    assert ok


# ------------------------------------------------------------------ 9


def _one_step_discrepancy(beta, seed):
    gen = trained(beta, seed).model()
    z = prior(seed)
    one = euler_solve(gen, z, SolverConfig("euler", 1), keep_states=False).final
    many = euler_solve(gen, z, SolverConfig("euler", 128), keep_states=False).final
    return float(np.mean(np.sum((one - many) ** 2, axis=1)))


def test_criterion_09_zero_curvature_shortcut():
    c = np.array([0.7, -0.2])
    z = np.random.default_rng(0).standard_normal((100, 2))
    field = lambda s, t: np.broadcast_to(c, s.shape)
    const_gap = np.abs(euler_solve(field, z, SolverConfig("euler", 1)).final
                       - euler_solve(field, z, SolverConfig("euler", 128)).final).max()
    ratios = [_one_step_discrepancy("inf", s) / _one_step_discrepancy(3.0, s) for s in SEEDS]
    ok = const_gap < 1e-12 and min(ratios) >= 5.0
    record(9, ok, f"constant field gap {const_gap:.1e}; independent/beta=3 discrepancy ratio per seed "
                  + ", ".join(f"{r:.1f}x" for r in ratios))
    assert ok


# ------------------------------------------------------------------ 10


def test_criterion_10_cli_determinism(tmp_path):
    cfg = {"dataset": {"name": "gaussians8", "n": 1000, "seed": 3}, "beta": 3.0, "iterations": 60,
           "generator_hidden": [16, 16], "encoder_hidden": [8], "log_every": 20, "checkpoint_every": 30}
    cpath = tmp_path / "cfg.json"
    cpath.write_text(json.dumps(cfg))
    mismatched = []
    for run in ("a", "b"):
        d = tmp_path / run
        gen = str(d / "train" / "generator.cflo")
        cmds = [
            ["train", str(cpath), "--out", str(d / "train"), "--quiet"],
            ["sample", gen, "--out", str(d / "sample"), "--n", "100", "--steps", "16"],
            ["sample", gen, "--out", str(d / "sample_rk"), "--n", "100", "--solver", "rk45"],
            ["eval", gen, "--encoder", str(d / "train" / "encoder.cflo"), "--out", str(d / "eval"), "--n-traj", "100",
             "--n-mc", "500", "--n-samples", "200", "--nfe", "2,8"],
            ["curvature", gen, "--out", str(d / "curv"), "--n-traj", "100"],
            ["distill", gen, "--out", str(d / "distill"), "--pairs", "500", "--steps", "8", "--iterations", "50",
             "--n-samples", "100"],
            ["export-trajectories", gen, "--out", str(d / "traj"), "--n", "4", "--steps", "8"],
            ["export-dataset", "--out", str(d / "data"), "--n", "100"],
        ]
        for c in cmds:
            assert main([*c, "--seed", "7", "--threads", "2" if run == "b" else "1"]) == 0, c
    files = sorted(p.relative_to(tmp_path / "a") for p in (tmp_path / "a").rglob("*") if p.is_file())
    for rel in files:
        if rel.name == "train_log.csv":
            continue  # carries wall-clock time by design
        if (tmp_path / "a" / rel).read_bytes() != (tmp_path / "b" / rel).read_bytes():
            mismatched.append(str(rel))
    ok = not mismatched and len(files) > 10
    record(10, ok, f"{len(files) - 1} artifacts from 8 commands byte-identical across reruns (threads 1 vs 2)"
           if ok else f"differing artifacts: {mismatched}")
    assert ok
