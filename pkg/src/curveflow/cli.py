"""``curveflow`` command-line interface.

Exit codes: 0 success, 2 configuration or I/O error, 3 numerical failure.
Every command writes into ``--out`` and is deterministic given its flags.
"""

from __future__ import annotations

import argparse
import json
import os
import sys

import numpy as np

from . import checkpoint, data, distill, metrics, net
from .config import RunConfig
from .errors import CheckpointError, ConfigError, NumericalError, ShapeError, UnsupportedOperation
from .interpolant import InterpolantKind
from .solver import EULER, RK45, SOLVER_KINDS, Generator, SolverConfig, euler_solve, solve_chunked
from .train import train

EXIT_OK = 0
EXIT_CONFIG = 2
EXIT_NUMERICAL = 3


def _write_json(path, obj):
    with open(path, "w") as fh:
        json.dump(obj, fh, sort_keys=True, indent=2)
        fh.write("\n")


def _out_path(args, name):
    os.makedirs(args.out, exist_ok=True)
    return os.path.join(args.out, name)


def load_generator(path):
    """Returns ``(Generator, meta, normalizer)`` from a generator checkpoint."""
    params, meta = checkpoint.load_network(path, role="generator")
    try:
        gen = Generator(params, meta["parameterization"], InterpolantKind.from_json(meta["interpolant"]))
    except KeyError as exc:
        raise CheckpointError(f"{path}: missing {exc} in metadata") from exc
    norm = meta.get("normalization", "identity")
    if norm == "identity":
        ds = data.Dataset(np.zeros((1, params.data_dim)))
    else:
        ds = data.Dataset(np.zeros((1, params.data_dim)), mean=np.array(norm["mean"]), scale=np.array(norm["scale"]))
    return gen, meta, ds


def _run_config(meta) -> RunConfig:
    if "config" not in meta:
        raise CheckpointError("checkpoint carries no training config")
    return RunConfig.from_dict(meta["config"])


def _t_end(gen, meta):
    return gen.default_t_end(meta.get("config", {}).get("t_min", 1e-5))


def _solver_config(args, t_end) -> SolverConfig:
    if args.solver == RK45:
        return SolverConfig(RK45, None, args.atol, args.rtol, t_end=t_end)
    return SolverConfig(args.solver, args.steps, t_end=t_end)


def _eval_data(cfg: RunConfig, held_out: bool, path=None, norm_ds=None) -> np.ndarray:
    """Data in the model's (normalized) space; synthetic held-out sets use seed + 1."""
    spec = cfg.dataset
    if path or spec.path:
        raw = data.load_csv(path or spec.path).points
    else:
        raw = data.make_synthetic(spec.name, spec.n, spec.seed + (1 if held_out else 0)).points
    return norm_ds.normalize_points(raw)


# ------------------------------------------------------------------ commands


def cmd_train(args):
    cfg = RunConfig.load(args.config)
    if args.seed is not None:
        cfg.seed = args.seed
    os.makedirs(args.out, exist_ok=True)
    _write_json(_out_path(args, "config.json"), cfg.to_json())
    res = train(cfg, args.out, progress=None if args.quiet else _print_progress)
    print(json.dumps({"config_hash": cfg.hash(), "final": list(res.history[-1]) if res.history else None}))
    return EXIT_OK


def _print_progress(row):
    print(f"step {row[0]} loss {row[1]:.5f} recon {row[2]:.5f} kl {row[3]:.5f}", file=sys.stderr)


def cmd_sample(args):
    gen, meta, norm = load_generator(args.checkpoint)
    scfg = _solver_config(args, _t_end(gen, meta))
    z = np.random.default_rng(args.seed).standard_normal((args.n, gen.params.data_dim))
    xs, nfe_per = solve_chunked(gen, z, scfg, threads=args.threads)
    if not args.normalized:
        xs = norm.denormalize_points(xs)
    header = [f"x{j}" for j in range(xs.shape[1])]
    data.save_csv(_out_path(args, "samples.csv"), xs, header)
    _write_json(_out_path(args, "samples.json"), {
        "nfe_total": nfe_per * args.n,
        "nfe_per_sample": nfe_per,
        "solver": scfg.to_json(),
        "n": args.n,
        "seed": args.seed,
        "denormalized": not args.normalized,
        "config_hash": meta.get("config_hash"),
    })
    return EXIT_OK


def _load_encoder(path, gen_meta, force):
    if path is None:
        return None
    enc, meta = checkpoint.load_network(path, role="encoder")
    if meta.get("config_hash") != gen_meta.get("config_hash") and not force:
        raise ConfigError(
            f"encoder config hash {meta.get('config_hash')} != generator {gen_meta.get('config_hash')}; "
            "pass --force to evaluate anyway"
        )
    return enc


def cmd_eval(args):
    gen, meta, norm = load_generator(args.checkpoint)
    cfg = _run_config(meta)
    enc = _load_encoder(args.encoder, meta, args.force)
    train_pts = _eval_data(cfg, False, args.data, norm)
    held = _eval_data(cfg, True, args.data, norm)
    rng = np.random.default_rng(args.seed)
    dim = gen.params.data_dim
    t_end = _t_end(gen, meta)
    curv = metrics.curvature(gen, rng.standard_normal((args.n_traj, dim)), args.steps, t_end, args.threads)
    t_min = max(cfg.t_min, 1e-5)
    bound = metrics.intersection_bound(gen.params, enc, train_pts, args.n_mc, t_min, rng, gen.parameterization)
    scfg = SolverConfig(EULER, args.steps, t_end=t_end)
    xs, _ = metrics.sample(gen, args.n_samples, scfg, rng, dim, args.threads)
    proj_seed = int(rng.integers(2**31))
    sw = metrics.sliced_wasserstein(xs, held, args.n_projections, proj_seed)
    lat = metrics.latent_norm_stats(enc, train_pts, rng, args.n_samples)
    report = {
        "config_hash": meta.get("config_hash"),
        "curvature": curv.to_json(),
        "intersection_bound": bound.to_json(),
        "sliced_wasserstein_vs_data": sw,
        "latent_norm": {
            **lat.to_json(),
            "prior": metrics.prior_norm_stats(dim, rng, args.n_samples).to_json(),
            "deviation_from_prior": metrics.latent_norm_deviation(lat, dim, rng),
        },
        "nfe_sweep": metrics.nfe_sweep(gen, held, args.nfe, rng, args.n_samples, args.n_projections,
                                       args.threads, t_end),
    }
    if enc is not None:
        stats = {}
        report["reconstruction"] = {
            "sliced_wasserstein": metrics.reconstruction_metric(
                gen, enc, train_pts, scfg, rng, args.n_samples, args.n_projections, args.threads, stats),
            "n_failed": stats["n_failed"],
        }
    _write_json(_out_path(args, "eval.json"), report)
    return EXIT_OK


def cmd_curvature(args):
    gen, meta, _ = load_generator(args.checkpoint)
    z = np.random.default_rng(args.seed).standard_normal((args.n_traj, gen.params.data_dim))
    rep = metrics.curvature(gen, z, args.steps, _t_end(gen, meta), args.threads)
    _write_json(_out_path(args, "curvature.json"), {**rep.to_json(), "config_hash": meta.get("config_hash")})
    return EXIT_OK


def cmd_distill(args):
    gen, meta, norm = load_generator(args.checkpoint)
    cfg = _run_config(meta)
    scfg = _solver_config(args, _t_end(gen, meta))
    rng = np.random.default_rng(args.seed)
    pairs = distill.generate_pairs(gen, args.pairs, scfg, rng, meta.get("config_hash", ""), args.threads)
    pairs.save(_out_path(args, "pairs.cflo"))
    train_pairs, test_pairs = pairs.split(args.test_fraction, args.seed)
    scfg_student = distill.StudentConfig(
        hidden=list(gen.params.layer_sizes[1:-1]), activation=gen.params.activation,
        lr=cfg.lr, adam_beta1=cfg.adam_beta1, adam_beta2=cfg.adam_beta2, adam_eps=cfg.adam_eps,
        batch_size=cfg.batch_size, iterations=args.iterations, ema_decay=cfg.ema_decay,
        ema_start=cfg.ema_start, seed=args.seed,
    )
    student = distill.train_student(train_pairs, scfg_student)
    checkpoint.save_network(_out_path(args, "student.cflo"), student, "student",
                            teacher_config_hash=meta.get("config_hash"), student_config=scfg_student.to_json(),
                            normalization=meta.get("normalization", "identity"))
    held = _eval_data(cfg, True, None, norm)
    zs = rng.standard_normal((args.n_samples, gen.params.data_dim))
    sw = metrics.sliced_wasserstein(net.forward(student, zs), held, 128, int(rng.integers(2**31)))
    _write_json(_out_path(args, "distill.json"), {
        "teacher_nfe": pairs.nfe_per_pair,
        "teacher_nfe_total": pairs.teacher_nfe_total,
        "teacher_solver": scfg.to_json(),
        "pair_count": len(pairs),
        "dropped_pairs": pairs.n_dropped,
        "test_mse": distill.distillation_error(student, test_pairs),
        "sw_distance": sw,
        "config_hash": meta.get("config_hash"),
    })
    return EXIT_OK


def cmd_export_trajectories(args):
    gen, meta, norm = load_generator(args.checkpoint)
    z = np.random.default_rng(args.seed).standard_normal((args.n, gen.params.data_dim))
    tr = euler_solve(gen, z, SolverConfig(EULER, args.steps, t_end=_t_end(gen, meta)))
    d = z.shape[1]
    rows = []
    for i in range(args.n):
        states = tr.states[:, i, :] if args.normalized else norm.denormalize_points(tr.states[:, i, :])
        for k, (t, s) in enumerate(zip(tr.times, states)):
            rows.append([i, k, t, *s])
    path = _out_path(args, "trajectories.csv")
    with open(path, "w") as fh:
        fh.write(",".join(["trajectory", "step", "t", *[f"x{j}" for j in range(d)]]) + "\n")
        for r in rows:
            fh.write(f"{r[0]},{r[1]}," + ",".join(repr(float(v)) for v in r[2:]) + "\n")
    _write_json(_out_path(args, "trajectories.json"), {
        "n": args.n, "n_steps": args.steps, "nfe_per_trajectory": tr.nfe, "seed": args.seed,
        "denormalized": not args.normalized, "config_hash": meta.get("config_hash"),
    })
    return EXIT_OK


def cmd_export_dataset(args):
    if args.data:
        ds = data.load_csv(args.data)
    else:
        ds = data.make_synthetic(args.name, args.n, args.seed)
    if args.normalize:
        ds = data.normalize(ds)
    data.save_csv(_out_path(args, "dataset.csv"), ds.points, [f"x{j}" for j in range(ds.dim)])
    _write_json(_out_path(args, "dataset.json"), {
        "name": ds.name, "n": len(ds), "seed": args.seed, "normalization": ds.normalization_json(),
    })
    return EXIT_OK


# -------------------------------------------------------------------- parser


def _int_list(s):
    try:
        return [int(v) for v in s.split(",") if v]
    except ValueError:
        raise argparse.ArgumentTypeError(f"expected comma-separated integers, got {s!r}") from None


def _add_common(p, seed_default=0):
    p.add_argument("--out", required=True, help="output directory")
    p.add_argument("--seed", type=int, default=seed_default)
    p.add_argument("--threads", type=int, default=None, help="worker threads (default: $CURVEFLOW_THREADS or 1)")


def _add_solver(p, steps=128):
    p.add_argument("--solver", choices=SOLVER_KINDS, default=EULER)
    p.add_argument("--steps", type=int, default=steps)
    p.add_argument("--atol", type=float, default=1e-5)
    p.add_argument("--rtol", type=float, default=1e-5)


def build_parser() -> argparse.ArgumentParser:
    ap = argparse.ArgumentParser(prog="curveflow", description="Train and analyse curvature-minimizing flow models.")
    sub = ap.add_subparsers(dest="command", required=True)

    p = sub.add_parser("train", help="train a generator (and encoder) from a JSON config")
    p.add_argument("config")
    _add_common(p, None)
    p.add_argument("--quiet", action="store_true")
    p.set_defaults(func=cmd_train)

    p = sub.add_parser("sample", help="draw samples with a chosen ODE solver")
    p.add_argument("checkpoint")
    _add_common(p)
    _add_solver(p)
    p.add_argument("--n", type=int, default=1000)
    p.add_argument("--normalized", action="store_true", help="keep samples in the training space")
    p.set_defaults(func=cmd_sample)

    p = sub.add_parser("eval", help="curvature, intersection bound, sample quality and coupling report")
    p.add_argument("checkpoint")
    p.add_argument("--encoder", default=None)
    p.add_argument("--data", default=None, help="CSV to evaluate against (default: the training dataset spec)")
    p.add_argument("--force", action="store_true", help="ignore a generator/encoder config-hash mismatch")
    _add_common(p)
    p.add_argument("--steps", type=int, default=128)
    p.add_argument("--n-traj", type=int, default=1000)
    p.add_argument("--n-mc", type=int, default=20000)
    p.add_argument("--n-samples", type=int, default=2000)
    p.add_argument("--n-projections", type=int, default=128)
    p.add_argument("--nfe", type=_int_list, default=[1, 2, 5, 10, 128])
    p.set_defaults(func=cmd_eval)

    p = sub.add_parser("curvature", help="mean trajectory curvature")
    p.add_argument("checkpoint")
    _add_common(p)
    p.add_argument("--n-traj", type=int, default=1000)
    p.add_argument("--steps", type=int, default=128)
    p.set_defaults(func=cmd_curvature)

    p = sub.add_parser("distill", help="distill the teacher ODE into a one-step student")
    p.add_argument("checkpoint")
    _add_common(p)
    _add_solver(p)
    p.add_argument("--pairs", type=int, default=50000)
    p.add_argument("--iterations", type=int, default=4000)
    p.add_argument("--test-fraction", type=float, default=0.1)
    p.add_argument("--n-samples", type=int, default=2000)
    p.set_defaults(func=cmd_distill)

    p = sub.add_parser("export-trajectories", help="Euler trajectories as CSV for plotting")
    p.add_argument("checkpoint")
    _add_common(p)
    p.add_argument("--n", type=int, default=64)
    p.add_argument("--steps", type=int, default=128)
    p.add_argument("--normalized", action="store_true")
    p.set_defaults(func=cmd_export_trajectories)

    p = sub.add_parser("export-dataset", help="write a synthetic or CSV dataset")
    p.add_argument("--name", choices=data.SYNTHETIC, default="gaussians8")
    p.add_argument("--data", default=None)
    p.add_argument("--n", type=int, default=20000)
    p.add_argument("--normalize", action="store_true")
    _add_common(p)
    p.set_defaults(func=cmd_export_dataset)
    return ap


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    try:
        return args.func(args)
    except NumericalError as exc:
        print(f"curveflow: numerical failure: {exc}", file=sys.stderr)
        return EXIT_NUMERICAL
    except (ConfigError, CheckpointError, ShapeError, UnsupportedOperation, OSError) as exc:
        print(f"curveflow: {exc}", file=sys.stderr)
        return EXIT_CONFIG


if __name__ == "__main__":
    sys.exit(main())
