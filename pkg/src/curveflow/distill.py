"""One-step distillation of a teacher ODE into a time-free student network."""

from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np

from . import checkpoint, net
from .errors import CheckpointError, ConfigError, NumericalError, ShapeError
from .parallel import map_chunks
from .solver import SolverConfig, solve

MAX_DROP_FRACTION = 0.01


@dataclass
class PairSet:
    z_inputs: np.ndarray
    x_outputs: np.ndarray
    teacher_solver: SolverConfig
    teacher_checkpoint_hash: str = ""
    nfe_per_pair: float = 0.0
    n_dropped: int = 0

    def __post_init__(self):
        self.z_inputs = np.atleast_2d(np.asarray(self.z_inputs, dtype=np.float64))
        self.x_outputs = np.atleast_2d(np.asarray(self.x_outputs, dtype=np.float64))
        if self.z_inputs.shape[0] != self.x_outputs.shape[0]:
            raise ShapeError("z_inputs and x_outputs must have equal lengths")

    def __len__(self):
        return self.z_inputs.shape[0]

    @property
    def teacher_nfe_total(self) -> float:
        return self.nfe_per_pair * len(self)

    def subset(self, idx) -> "PairSet":
        return PairSet(self.z_inputs[idx], self.x_outputs[idx], self.teacher_solver,
                       self.teacher_checkpoint_hash, self.nfe_per_pair, 0)

    def split(self, test_fraction=0.1, seed=0):
        """Disjoint random ``(train, test)`` split."""
        if not 0.0 < test_fraction < 1.0:
            raise ConfigError("test_fraction must be in (0, 1)")
        n = len(self)
        n_test = max(1, int(round(test_fraction * n)))
        if n_test >= n:
            raise ConfigError("too few pairs to split")
        perm = np.random.default_rng(seed).permutation(n)
        return self.subset(np.sort(perm[n_test:])), self.subset(np.sort(perm[:n_test]))

    def save(self, path, **extra):
        meta = {
            "role": "pairs",
            "teacher_solver": self.teacher_solver.to_json(),
            "teacher_checkpoint_hash": self.teacher_checkpoint_hash,
            "nfe_per_pair": self.nfe_per_pair,
            "n_dropped": self.n_dropped,
        }
        meta.update(extra)
        checkpoint.write_checkpoint(path, meta, [("z_inputs", [self.z_inputs]), ("x_outputs", [self.x_outputs])])

    @classmethod
    def load(cls, path) -> "PairSet":
        meta, blocks = checkpoint.read_checkpoint(path, role="pairs")
        try:
            return cls(blocks["z_inputs"][0], blocks["x_outputs"][0],
                       SolverConfig.from_json(meta["teacher_solver"]),
                       meta.get("teacher_checkpoint_hash", ""), meta.get("nfe_per_pair", 0.0),
                       meta.get("n_dropped", 0))
        except (KeyError, IndexError) as exc:
            raise CheckpointError(f"{path}: malformed pair set") from exc


def _solve_dropping(fn, zc, config):
    """Solve a chunk; on failure fall back to per-pair solves and drop the bad ones."""
    try:
        tr = solve(fn, zc, config, keep_states=False)
        return zc, tr.final, tr.nfe * len(zc)
    except NumericalError:
        pass
    keep_z, keep_x, nfe = [], [], 0
    for z in zc:
        try:
            tr = solve(fn, z[None, :], config, keep_states=False)
        except NumericalError:
            continue
        if np.isfinite(tr.final).all():
            keep_z.append(z)
            keep_x.append(tr.final[0])
            nfe += tr.nfe
    d = zc.shape[1]
    return (np.array(keep_z).reshape(-1, d), np.array(keep_x).reshape(-1, d), nfe)


def generate_pairs(teacher, n_pairs, solver_config: SolverConfig, rng, teacher_hash="",
                   threads=None, chunk=1024, dim=None) -> PairSet:
    """Draw ``z`` from the prior and record the teacher's terminal state.

    ``teacher`` is a vector field ``(z, t) -> v`` (for example a
    ``Generator``); ``dim`` defaults to its network's data dimension.

    Raises:
        NumericalError: more than 1% of the solves failed.
    """
    if n_pairs < 1:
        raise ConfigError("n_pairs must be >= 1")
    if dim is None:
        dim = teacher.params.data_dim
    z = rng.standard_normal((n_pairs, dim))
    parts = map_chunks(lambda zc: _solve_dropping(teacher, zc, solver_config), z, chunk, threads)
    zs = np.concatenate([p[0] for p in parts])
    xs = np.concatenate([p[1] for p in parts])
    dropped = n_pairs - len(zs)
    if dropped > MAX_DROP_FRACTION * n_pairs:
        raise NumericalError(f"{dropped} of {n_pairs} teacher solves failed")
    nfe = sum(p[2] for p in parts) / max(len(zs), 1)
    return PairSet(zs, xs, solver_config, teacher_hash, nfe, dropped)


@dataclass
class StudentConfig:
    """Student network and optimizer settings (defaults mirror the teacher's Adam)."""

    hidden: list = field(default_factory=lambda: [128, 128, 128])
    activation: str = "silu"
    lr: float = 2e-3
    warmup_steps: int = 200
    adam_beta1: float = 0.9
    adam_beta2: float = 0.999
    adam_eps: float = 1e-8
    batch_size: int = 256
    iterations: int = 4000
    ema_decay: float = 0.999
    ema_start: int = 300
    seed: int = 0

    def to_json(self) -> dict:
        return dict(self.__dict__)


def init_student(dim, cfg: StudentConfig) -> net.NetworkParams:
    return net.init_params([dim, *cfg.hidden, dim], 0, cfg.seed, cfg.activation)


def train_student(pairs: PairSet, cfg: StudentConfig | None = None, on_checkpoint=None,
                  checkpoint_every=0) -> net.NetworkParams:
    """Fit ``G(z) ~ x_hat`` by mean squared error; returns the EMA parameters.

    ``on_checkpoint(step, ema_params)`` is called every ``checkpoint_every``
    steps when both are given.

    Raises:
        NumericalError: the loss became non-finite.
    """
    cfg = cfg or StudentConfig()
    if len(pairs) < 1:
        raise ConfigError("no training pairs")
    dim = pairs.z_inputs.shape[1]
    params = init_student(dim, cfg)
    adam = net.AdamState.fresh(params, cfg.lr, cfg.adam_beta1, cfg.adam_beta2, cfg.adam_eps)
    ema = net.EmaState(params.copy(), cfg.ema_decay, cfg.ema_start)
    rng = np.random.default_rng(np.random.SeedSequence(cfg.seed).spawn(1)[0])
    for step in range(cfg.iterations):
        idx = rng.integers(0, len(pairs), size=min(cfg.batch_size, len(pairs)))
        loss, grads = net.loss_gradients(params, pairs.z_inputs[idx], None, "squared_error", pairs.x_outputs[idx])
        if not math.isfinite(loss):
            raise NumericalError(f"student loss diverged at step {step}", index=step)
        lr = cfg.lr * min(1.0, (step + 1) / cfg.warmup_steps) if cfg.warmup_steps else cfg.lr
        params, adam = net.adam_step(params, adam, grads, lr)
        ema = net.ema_update(ema, params, step + 1)
        if on_checkpoint is not None and checkpoint_every and (step + 1) % checkpoint_every == 0:
            on_checkpoint(step + 1, ema.shadow)
    return ema.shadow


def distillation_error(student, test_pairs: PairSet) -> float:
    """Mean over test pairs of ``||G(z) - x_hat||^2 / d``.

    ``student`` is NetworkParams or a callable ``z -> x``.
    """
    pred = student(test_pairs.z_inputs) if callable(student) else net.forward(student, test_pairs.z_inputs)
    pred = np.atleast_2d(pred)
    return float(np.mean((pred - test_pairs.x_outputs) ** 2))
