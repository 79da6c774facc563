import json
import os

import pytest

from curveflow import checkpoint
from curveflow.cli import main

TINY = {
    "dataset": {"name": "gaussians8", "n": 500, "seed": 1},
    "beta": 3.0,
    "iterations": 40,
    "generator_hidden": [16, 16],
    "encoder_hidden": [8],
    "log_every": 20,
    "warmup_steps": 10,
    "ema_start": 5,
}


def write_cfg(tmp_path, name="cfg.json", **over):
    cfg = {**TINY, **over}
    p = tmp_path / name
    p.write_text(json.dumps(cfg))
    return str(p)


@pytest.fixture(scope="module")
def trained(tmp_path_factory):
    d = tmp_path_factory.mktemp("run")
    cfg = write_cfg(d)
    assert main(["train", cfg, "--out", str(d / "run"), "--quiet"]) == 0
    return d / "run"


def test_train_outputs(trained):
    names = set(os.listdir(trained))
    assert {"generator.cflo", "encoder.cflo", "train_log.csv", "config.json"} <= names
    header = (trained / "train_log.csv").read_text().splitlines()[0]
    assert header == "step,total_loss,recon_term,kl_term,wall_time"
    meta, _ = checkpoint.read_checkpoint(trained / "generator.cflo", "generator")
    assert meta["config"]["beta"] == 3.0 and len(meta["config_hash"]) == 16


def test_independent_run_has_no_encoder(tmp_path):
    assert main(["train", write_cfg(tmp_path, beta="inf"), "--out", str(tmp_path / "r"), "--quiet"]) == 0
    assert not (tmp_path / "r" / "encoder.cflo").exists()


def test_zero_iterations_writes_initial_checkpoint(tmp_path):
    assert main(["train", write_cfg(tmp_path, iterations=0), "--out", str(tmp_path / "r"), "--quiet"]) == 0
    meta, _ = checkpoint.read_checkpoint(tmp_path / "r" / "generator.cflo")
    assert meta["global_step"] == 0


def test_intermediate_checkpoints(tmp_path):
    assert main(["train", write_cfg(tmp_path, checkpoint_every=20), "--out", str(tmp_path / "r"), "--quiet"]) == 0
    assert (tmp_path / "r" / "generator_step20.cflo").exists()
    assert (tmp_path / "r" / "encoder_step40.cflo").exists()


def test_train_bytes_identical(tmp_path):
    cfg = write_cfg(tmp_path)
    for name in ("a", "b"):
        assert main(["train", cfg, "--out", str(tmp_path / name), "--quiet"]) == 0
    for f in ("generator.cflo", "encoder.cflo", "config.json"):
        assert (tmp_path / "a" / f).read_bytes() == (tmp_path / "b" / f).read_bytes()


def test_invalid_config_exit_code(tmp_path, capsys):
    p = tmp_path / "bad.json"
    p.write_text(json.dumps({"beta": -2, "batch_size": 0}))
    assert main(["train", str(p), "--out", str(tmp_path / "r")]) == 2
    err = capsys.readouterr().err
    assert "beta" in err and "batch_size" in err


@pytest.mark.filterwarnings("ignore::RuntimeWarning")
def test_nan_loss_exit_code(tmp_path):
    big = tmp_path / "big.csv"
    big.write_text("1e200,1e200\n-1e200,3e200\n")
    cfg = write_cfg(tmp_path, dataset={"path": str(big), "normalize": False}, iterations=5)
    assert main(["train", cfg, "--out", str(tmp_path / "r"), "--quiet"]) == 3


def test_corrupt_checkpoint_exit_code(tmp_path):
    bad = tmp_path / "x.cflo"
    bad.write_bytes(b"nonsense")
    assert main(["sample", str(bad), "--out", str(tmp_path / "s")]) == 2


COMMANDS = [
    ("sample", ["--n", "50", "--steps", "8"], ["samples.csv", "samples.json"]),
    ("sample", ["--n", "50", "--solver", "rk45"], ["samples.csv", "samples.json"]),
    ("curvature", ["--n-traj", "50", "--steps", "16"], ["curvature.json"]),
    ("export-trajectories", ["--n", "3", "--steps", "5"], ["trajectories.csv", "trajectories.json"]),
    ("distill", ["--pairs", "200", "--steps", "4", "--iterations", "30", "--n-samples", "100"],
     ["pairs.cflo", "student.cflo", "distill.json"]),
]


@pytest.mark.parametrize("cmd,flags,files", COMMANDS)
def test_commands_deterministic(trained, tmp_path, cmd, flags, files):
    gen = str(trained / "generator.cflo")
    for name, threads in (("a", "1"), ("b", "3")):
        assert main([cmd, gen, "--out", str(tmp_path / name), "--seed", "5", "--threads", threads, *flags]) == 0
    for f in files:
        assert (tmp_path / "a" / f).read_bytes() == (tmp_path / "b" / f).read_bytes()


def test_eval_report(trained, tmp_path):
    args = ["eval", str(trained / "generator.cflo"), "--encoder", str(trained / "encoder.cflo"), "--n-traj", "50",
            "--n-mc", "200", "--n-samples", "100", "--nfe", "1,4", "--steps", "8"]
    assert main([*args, "--out", str(tmp_path / "a")]) == 0
    assert main([*args, "--out", str(tmp_path / "b")]) == 0
    a = (tmp_path / "a" / "eval.json").read_bytes()
    assert a == (tmp_path / "b" / "eval.json").read_bytes()
    rep = json.loads(a)
    assert {"curvature", "intersection_bound", "sliced_wasserstein_vs_data", "latent_norm", "nfe_sweep"} <= set(rep)
    assert [r["nfe"] for r in rep["nfe_sweep"]] == [1, 4]


def test_eval_refuses_mismatched_encoder(trained, tmp_path):
    other = write_cfg(tmp_path, seed=99)
    assert main(["train", other, "--out", str(tmp_path / "o"), "--quiet"]) == 0
    args = ["eval", str(trained / "generator.cflo"), "--encoder", str(tmp_path / "o" / "encoder.cflo"),
            "--n-traj", "20", "--n-mc", "50", "--n-samples", "50", "--nfe", "2", "--steps", "4"]
    assert main([*args, "--out", str(tmp_path / "e")]) == 2
    assert main([*args, "--out", str(tmp_path / "e"), "--force"]) == 0


def test_sample_sidecar(trained, tmp_path):
    assert main(["sample", str(trained / "generator.cflo"), "--out", str(tmp_path), "--n", "10",
                 "--solver", "heun", "--steps", "3"]) == 0
    side = json.loads((tmp_path / "samples.json").read_text())
    assert side["nfe_per_sample"] == 6 and side["nfe_total"] == 60 and side["solver"]["kind"] == "heun"
    assert len((tmp_path / "samples.csv").read_text().splitlines()) == 11


def test_export_dataset(tmp_path):
    for name in ("a", "b"):
        assert main(["export-dataset", "--name", "moons", "--n", "30", "--out", str(tmp_path / name),
                     "--normalize"]) == 0
    assert (tmp_path / "a" / "dataset.csv").read_bytes() == (tmp_path / "b" / "dataset.csv").read_bytes()


def test_threads_env_fallback(trained, tmp_path, monkeypatch):
    gen = str(trained / "generator.cflo")
    assert main(["sample", gen, "--out", str(tmp_path / "a"), "--n", "40", "--steps", "4"]) == 0
    monkeypatch.setenv("CURVEFLOW_THREADS", "4")
    assert main(["sample", gen, "--out", str(tmp_path / "b"), "--n", "40", "--steps", "4"]) == 0
    assert (tmp_path / "a" / "samples.csv").read_bytes() == (tmp_path / "b" / "samples.csv").read_bytes()
