import numpy as np
import pytest

from curveflow import distill, net
from curveflow.errors import CheckpointError, ConfigError, NumericalError, ShapeError
from curveflow.solver import SolverConfig, solve

C = np.array([0.5, -1.5])


def straight_teacher(z, t):
    return np.broadcast_to(C, z.shape)


def bent_teacher(z, t):
    return np.stack([np.sin(2 * z[:, 1]) * t, z[:, 0] ** 2 - 1.0], axis=1)


def pairs_from(field, n=2000, seed=0, cfg=None):
    return distill.generate_pairs(field, n, cfg or SolverConfig("euler", 8), np.random.default_rng(seed), dim=2)


def test_straight_teacher_pairs():
    ps = pairs_from(straight_teacher, 100)
    np.testing.assert_allclose(ps.x_outputs, ps.z_inputs - C, atol=1e-14)


def test_pairs_reproducible_and_nfe_bookkeeping():
    a = pairs_from(bent_teacher, 300, seed=4)
    b = pairs_from(bent_teacher, 300, seed=4)
    assert a.x_outputs.tobytes() == b.x_outputs.tobytes()
    assert a.nfe_per_pair == 8
    assert a.teacher_nfe_total == 300 * 8


def test_pair_integrity_resolve_subset():
    cfg = SolverConfig("rk45", None, 1e-5, 1e-5)
    ps = pairs_from(bent_teacher, 200, cfg=cfg)
    fixed = pairs_from(bent_teacher, 200, cfg=SolverConfig("heun", 5))
    idx = np.arange(0, 200, 100)
    again = solve(bent_teacher, fixed.z_inputs[idx], fixed.teacher_solver).final
    assert np.array_equal(again, fixed.x_outputs[idx])
    again = solve(bent_teacher, ps.z_inputs[idx], ps.teacher_solver).final
    np.testing.assert_allclose(again, ps.x_outputs[idx], atol=1e-4)


def test_failed_pairs_dropped_and_counted():
    def flaky(z, t):
        out = np.zeros_like(z)
        out[z[:, 0] > 3.0] = np.nan
        return out

    # about 0.1% of standard-normal draws exceed 3
    ps = distill.generate_pairs(flaky, 5000, SolverConfig("euler", 2), np.random.default_rng(0), dim=2)
    assert 0 < ps.n_dropped <= 50 and len(ps) == 5000 - ps.n_dropped
    assert np.isfinite(ps.x_outputs).all()


def test_too_many_failures_is_error():
    def bad(z, t):
        out = np.zeros_like(z)
        out[z[:, 0] > 0.0] = np.nan
        return out

    with pytest.raises(NumericalError):
        distill.generate_pairs(bad, 500, SolverConfig("euler", 2), np.random.default_rng(0), dim=2)


def test_split_disjoint_and_sized():
    ps = pairs_from(straight_teacher, 1000)
    tr, te = ps.split(0.1, seed=3)
    assert len(tr) == 900 and len(te) == 100
    rows = {tuple(r) for r in tr.z_inputs}
    assert not any(tuple(r) in rows for r in te.z_inputs)
    with pytest.raises(ConfigError):
        ps.split(1.0)


def test_pairset_roundtrip(tmp_path):
    ps = pairs_from(bent_teacher, 50)
    ps.save(tmp_path / "p.cflo")
    back = distill.PairSet.load(tmp_path / "p.cflo")
    assert np.array_equal(back.z_inputs, ps.z_inputs) and np.array_equal(back.x_outputs, ps.x_outputs)
    assert back.teacher_solver == ps.teacher_solver
    with pytest.raises(CheckpointError):
        distill.PairSet.load(tmp_path / "missing.cflo")


def test_pairset_length_mismatch():
    with pytest.raises(ShapeError):
        distill.PairSet(np.zeros((3, 2)), np.zeros((2, 2)), SolverConfig())


def test_distillation_error_oracles():
    z = np.random.default_rng(0).standard_normal((20, 3))
    ps = distill.PairSet(z, np.ones((20, 3)), SolverConfig())
    assert distill.distillation_error(lambda zz: np.zeros_like(zz), ps) == pytest.approx(1.0)
    assert distill.distillation_error(lambda zz: np.ones_like(zz), ps) == 0.0


def test_straight_teacher_student_learns_affine_map():
    ps = pairs_from(straight_teacher, 2000)
    tr, te = ps.split()
    cfg = distill.StudentConfig(hidden=[], iterations=3000, lr=1e-2, ema_decay=0.99, batch_size=128, seed=1)
    student = distill.train_student(tr, cfg)
    assert distill.distillation_error(student, te) < 1e-6


def test_linear_student_worse_than_mlp_on_nonlinear_teacher():
    ps = pairs_from(bent_teacher, 3000)
    tr, te = ps.split()
    lin = distill.train_student(tr, distill.StudentConfig(hidden=[], iterations=1500, seed=0))
    mlp = distill.train_student(tr, distill.StudentConfig(hidden=[32, 32], iterations=1500, seed=0))
    assert distill.distillation_error(lin, te) > distill.distillation_error(mlp, te)


def test_student_deterministic_and_checkpoint_trend():
    ps = pairs_from(bent_teacher, 2000)
    tr, te = ps.split()
    errs = []
    cfg = distill.StudentConfig(hidden=[32, 32], iterations=1500, seed=2, ema_start=0, ema_decay=0.99)
    a = distill.train_student(tr, cfg, lambda step, p: errs.append(distill.distillation_error(p, te)), 500)
    b = distill.train_student(tr, cfg)
    assert a.flat().tobytes() == b.flat().tobytes()
    assert len(errs) == 3 and errs[0] > errs[1] > errs[2]


def test_student_divergence_raises():
    ps = distill.PairSet(np.ones((10, 2)), np.full((10, 2), 1e200), SolverConfig())
    with pytest.raises(NumericalError):
        with np.errstate(all="ignore"):
            distill.train_student(ps, distill.StudentConfig(hidden=[4], iterations=50))
