"""Training loop for the generator and (optionally) the learned coupling."""

from __future__ import annotations

import csv
import math
import os
import time
from dataclasses import dataclass, field

import numpy as np

from . import checkpoint, coupling, data, net
from .config import RunConfig
from .errors import NumericalError
from .loss import joint_loss
from .solver import Generator

LOG_COLUMNS = ["step", "total_loss", "recon_term", "kl_term", "wall_time"]


@dataclass
class TrainResult:
    config: RunConfig
    dataset: data.Dataset
    generator: net.NetworkParams
    generator_ema: net.NetworkParams
    encoder: net.NetworkParams | None
    encoder_ema: net.NetworkParams | None
    history: list = field(default_factory=list)

    def model(self, use_ema=True) -> Generator:
        params = self.generator_ema if use_ema else self.generator
        return Generator(params, self.config.parameterization, self.config.interp)

    def coupling_encoder(self, use_ema=True):
        return self.encoder_ema if use_ema else self.encoder


def load_dataset(cfg: RunConfig) -> data.Dataset:
    spec = cfg.dataset
    if spec.path:
        ds = data.load_csv(spec.path)
    else:
        ds = data.make_synthetic(spec.name, spec.n, spec.seed)
    return data.normalize(ds) if spec.normalize else ds


def init_models(cfg: RunConfig, dim: int):
    seeds = np.random.SeedSequence(cfg.seed).generate_state(3)
    gen_sizes = [dim + 2 * cfg.n_freqs, *cfg.generator_hidden, dim]
    gen = net.init_params(gen_sizes, cfg.n_freqs, int(seeds[0]), cfg.activation)
    enc = None
    if not cfg.independent:
        enc = coupling.init_encoder(dim, cfg.encoder_hidden, int(seeds[1]), cfg.activation)
    return gen, enc, np.random.default_rng(int(seeds[2]))


def warmup_lr(cfg: RunConfig, step: int) -> float:
    if cfg.warmup_steps <= 0:
        return cfg.lr
    return cfg.lr * min(1.0, (step + 1) / cfg.warmup_steps)


def _save(result: TrainResult, out_dir, tag):
    cfg = result.config
    meta = {"config": cfg.to_json(), "config_hash": cfg.hash(), "global_step": tag[1]}
    checkpoint.save_network(
        os.path.join(out_dir, f"generator{tag[0]}.cflo"), result.generator, "generator",
        ema=result.generator_ema, parameterization=cfg.parameterization,
        interpolant=cfg.interp.to_json(), normalization=result.dataset.normalization_json(), **meta,
    )
    if result.encoder is not None:
        checkpoint.save_network(
            os.path.join(out_dir, f"encoder{tag[0]}.cflo"), result.encoder, "encoder",
            ema=result.encoder_ema, **meta,
        )


def train(cfg: RunConfig, out_dir=None, progress=None) -> TrainResult:
    """Minimize the joint loss with Adam, linear warm-up and EMA tracking.

    When ``out_dir`` is given, writes ``generator.cflo`` (+ ``encoder.cflo``),
    intermediate ``generator_step{k}.cflo`` every ``checkpoint_every`` steps,
    and ``train_log.csv``.

    Raises:
        NumericalError: the loss became non-finite.
    """
    cfg.validate()
    ds = load_dataset(cfg)
    pts = ds.points
    gen, enc, rng = init_models(cfg, ds.dim)
    adam_g = net.AdamState.fresh(gen, cfg.lr, cfg.adam_beta1, cfg.adam_beta2, cfg.adam_eps)
    ema_g = net.EmaState(gen.copy(), cfg.ema_decay, cfg.ema_start)
    adam_e = ema_e = None
    if enc is not None:
        adam_e = net.AdamState.fresh(enc, cfg.lr, cfg.adam_beta1, cfg.adam_beta2, cfg.adam_eps)
        ema_e = net.EmaState(enc.copy(), cfg.ema_decay, cfg.ema_start)
    result = TrainResult(cfg, ds, gen, gen, enc, enc)

    log_fh = writer = None
    if out_dir is not None:
        os.makedirs(out_dir, exist_ok=True)
        log_fh = open(os.path.join(out_dir, "train_log.csv"), "w", newline="")
        writer = csv.writer(log_fh)
        writer.writerow(LOG_COLUMNS)
    t0 = time.perf_counter()
    beta = math.inf if cfg.independent else cfg.beta
    try:
        for step in range(cfg.iterations):
            x = pts[rng.integers(0, len(pts), size=cfg.batch_size)]
            br, g_gen, g_enc = joint_loss(
                gen, enc, x, beta, rng, cfg.parameterization, cfg.t_min, cfg.t_max, cfg.interp
            )
            if not math.isfinite(br.total):
                raise NumericalError(f"non-finite loss at step {step}", index=step)
            lr = warmup_lr(cfg, step)
            gen, adam_g = net.adam_step(gen, adam_g, g_gen, lr)
            ema_g = net.ema_update(ema_g, gen, step + 1)
            if enc is not None:
                enc, adam_e = net.adam_step(enc, adam_e, g_enc, lr)
                ema_e = net.ema_update(ema_e, enc, step + 1)
            if (step + 1) % cfg.log_every == 0 or step + 1 == cfg.iterations:
                row = (step + 1, br.total, br.recon_term, br.kl_term)
                result.history.append(row)
                if writer is not None:
                    writer.writerow([*row, round(time.perf_counter() - t0, 3)])
                if progress is not None:
                    progress(row)
            if out_dir is not None and cfg.checkpoint_every and (step + 1) % cfg.checkpoint_every == 0:
                result.generator, result.generator_ema = gen, ema_g.shadow
                result.encoder = enc
                result.encoder_ema = ema_e.shadow if ema_e else None
                _save(result, out_dir, (f"_step{step + 1}", step + 1))
    finally:
        if log_fh is not None:
            log_fh.close()

    result.generator, result.generator_ema = gen, ema_g.shadow
    result.encoder = enc
    result.encoder_ema = ema_e.shadow if ema_e else None
    if out_dir is not None:
        _save(result, out_dir, ("", cfg.iterations))
    return result
