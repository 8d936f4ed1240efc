"""End-to-end command-line contract tests (run in-process via cli.main)."""

import json
import os

import numpy as np
import pytest

from drail_lab import cli
from drail_lab.discriminators import build_drail, save_discriminator
from drail_lab.envs import dataset_load
from drail_lab.policy_opt import build_policy, save_policy


def run_cli(*argv):
    return cli.main(list(argv))


@pytest.fixture(scope="module")
def sine_dataset(tmp_path_factory):
    path = str(tmp_path_factory.mktemp("data") / "sine.drld")
    assert run_cli("gen-expert", "--env", "sine", "--n", "400", "--seed", "1", "-o", path) == 0
    return path


@pytest.fixture(scope="module")
def point_dataset(tmp_path_factory):
    path = str(tmp_path_factory.mktemp("data") / "point.drld")
    assert run_cli("gen-expert", "--env", "point_reach", "--n", "60", "--seed", "3", "-o", path) == 0
    return path


def _tiny_config(expert_path, **extra):
    cfg = {
        "method": "drail",
        "env": "sine",
        "expert_path": expert_path,
        "total_env_steps": 128,
        "seed": 5,
        "disc_hidden": [16, 16],
        "disc_batch": 32,
        "schedule_steps": 16,
        "policy_hidden": [16, 16],
        "value_hidden": [16, 16],
        "eval_episodes": 8,
        "ppo": {"rollout_steps": 64, "minibatch_size": 32, "epochs": 2},
    }
    cfg.update(extra)
    return cfg


# --- gen-expert ----------------------------------------------------------------


def test_gen_expert_sine_counts_and_output(tmp_path, capsys):
    out = str(tmp_path / "e.drld")
    assert run_cli("gen-expert", "--env", "sine", "--n", "1000", "--seed", "1", "-o", out) == 0
    assert "1000 transitions" in capsys.readouterr().out
    assert len(dataset_load(out)) == 1000
    manifest = json.loads(open(out + ".manifest.json").read())
    assert manifest["config"]["env"] == "sine"
    assert manifest["seed"] == 1
    assert manifest["artifacts"]["dataset"] == out


def test_gen_expert_is_byte_identical(tmp_path):
    a = str(tmp_path / "a.drld")
    b = str(tmp_path / "b.drld")
    for out in (a, b):
        assert run_cli("gen-expert", "--env", "sine", "--n", "200", "--seed", "9", "-o", out) == 0
    assert open(a, "rb").read() == open(b, "rb").read()


def test_gen_expert_point_reach_trajectories(tmp_path):
    out = str(tmp_path / "p.drld")
    assert run_cli("gen-expert", "--env", "point_reach", "--n", "20", "--seed", "0", "-o", out) == 0
    assert dataset_load(out).num_trajectories == 20


def test_gen_expert_rejects_unknown_env(tmp_path, capsys):
    rc = run_cli("gen-expert", "--env", "nosuch", "--n", "5", "-o", str(tmp_path / "x.drld"))
    assert rc == 2
    err = capsys.readouterr().err
    assert "sine" in err and "point_reach" in err


# --- train -----------------------------------------------------------------------


def test_train_smoke_writes_run_artifacts(tmp_path, sine_dataset, capsys):
    cfg_path = tmp_path / "cfg.json"
    cfg_path.write_text(json.dumps(_tiny_config(sine_dataset)))
    run_dir = str(tmp_path / "run")
    assert run_cli("train", "--config", str(cfg_path), "-o", run_dir) == 0
    for name in ("manifest.json", "metrics.csv", "policy.drlp", "discriminator.drlp", "final_eval.json"):
        assert os.path.isfile(os.path.join(run_dir, name)), name
    assert "run complete" in capsys.readouterr().out
    manifest = json.loads(open(os.path.join(run_dir, "manifest.json")).read())
    assert manifest["config"]["method"] == "drail"
    assert manifest["config"]["total_env_steps"] == 128


def test_train_set_override_reaches_manifest(tmp_path, sine_dataset):
    cfg_path = tmp_path / "cfg.json"
    cfg_path.write_text(json.dumps(_tiny_config(sine_dataset)))
    run_dir = str(tmp_path / "run")
    assert run_cli("train", "--config", str(cfg_path), "-o", run_dir,
                   "--set", "method=gail", "--set", "ppo.lr=0.0001") == 0
    manifest = json.loads(open(os.path.join(run_dir, "manifest.json")).read())
    assert manifest["config"]["method"] == "gail"
    assert manifest["config"]["ppo"]["lr"] == 0.0001
    assert not os.path.isfile(os.path.join(run_dir, "..", "discriminator.drlp"))


def test_train_rerun_from_manifest_reproduces_metrics(tmp_path, sine_dataset):
    cfg_path = tmp_path / "cfg.json"
    cfg_path.write_text(json.dumps(_tiny_config(sine_dataset)))
    first = str(tmp_path / "first")
    second = str(tmp_path / "second")
    assert run_cli("train", "--config", str(cfg_path), "-o", first) == 0
    assert run_cli("train", "--config", os.path.join(first, "manifest.json"), "-o", second) == 0
    a = open(os.path.join(first, "metrics.csv"), "rb").read()
    b = open(os.path.join(second, "metrics.csv"), "rb").read()
    assert a == b


def test_train_missing_expert_path_fails_fast(tmp_path, capsys):
    cfg_path = tmp_path / "cfg.json"
    cfg_path.write_text(json.dumps(_tiny_config("")))
    assert run_cli("train", "--config", str(cfg_path), "-o", str(tmp_path / "r")) == 2
    assert "expert_path" in capsys.readouterr().err


def test_train_nonexistent_expert_file(tmp_path, capsys):
    cfg_path = tmp_path / "cfg.json"
    cfg_path.write_text(json.dumps(_tiny_config("/nonexistent/e.drld")))
    assert run_cli("train", "--config", str(cfg_path), "-o", str(tmp_path / "r")) == 2
    assert "not found" in capsys.readouterr().err


def test_train_unknown_config_key_named(tmp_path, sine_dataset, capsys):
    cfg = _tiny_config(sine_dataset)
    cfg["disc_widht"] = [8]
    cfg_path = tmp_path / "cfg.json"
    cfg_path.write_text(json.dumps(cfg))
    assert run_cli("train", "--config", str(cfg_path), "-o", str(tmp_path / "r")) == 2
    assert "disc_widht" in capsys.readouterr().err


@pytest.mark.filterwarnings("ignore::RuntimeWarning")
def test_train_numerical_abort_exit_code(tmp_path, sine_dataset, capsys):
    # an absurd discriminator lr overflows the forward pass within one iteration
    cfg_path = tmp_path / "cfg.json"
    cfg_path.write_text(json.dumps(_tiny_config(sine_dataset, disc_lr=1e154)))
    assert run_cli("train", "--config", str(cfg_path), "-o", str(tmp_path / "r")) == 3
    assert "numerical abort" in capsys.readouterr().err


def test_train_bc_method(tmp_path, sine_dataset):
    cfg = _tiny_config(sine_dataset, method="bc", bc_epochs=3)
    cfg_path = tmp_path / "cfg.json"
    cfg_path.write_text(json.dumps(cfg))
    run_dir = str(tmp_path / "run")
    assert run_cli("train", "--config", str(cfg_path), "-o", run_dir) == 0
    assert os.path.isfile(os.path.join(run_dir, "policy.drlp"))
    assert not os.path.isfile(os.path.join(run_dir, "discriminator.drlp"))


# --- eval -------------------------------------------------------------------------


def test_eval_reports_episode_count(tmp_path, capsys):
    ckpt = str(tmp_path / "p.drlp")
    save_policy(ckpt, build_policy(1, 1, (8, 8), seed=0))
    assert run_cli("eval", ckpt, "--env", "sine", "--episodes", "7", "--seed", "2") == 0
    report = json.loads(capsys.readouterr().out)
    assert report["episodes"] == 7
    assert set(report) == {"success_rate", "mean_return", "episodes", "per_seed"}


def test_eval_bc_policy_reaches_expert_success(tmp_path, point_dataset, capsys):
    # behavior-cloned controller stands in for the scripted expert
    cfg = {
        "method": "bc",
        "env": "point_reach",
        "expert_path": point_dataset,
        "seed": 0,
        "bc_epochs": 400,
        "eval_episodes": 20,
    }
    cfg_path = tmp_path / "cfg.json"
    cfg_path.write_text(json.dumps(cfg))
    run_dir = str(tmp_path / "run")
    assert run_cli("train", "--config", str(cfg_path), "-o", run_dir) == 0
    capsys.readouterr()
    ckpt = os.path.join(run_dir, "policy.drlp")
    assert run_cli("eval", ckpt, "--env", "point_reach", "--episodes", "30", "--seed", "11") == 0
    report = json.loads(capsys.readouterr().out)
    assert report["success_rate"] >= 0.99


def test_eval_corrupt_checkpoint(tmp_path, capsys):
    bad = tmp_path / "bad.drlp"
    bad.write_bytes(b"JUNKJUNKJUNK")
    assert run_cli("eval", str(bad), "--env", "sine") == 2
    assert "bad magic" in capsys.readouterr().err


def test_eval_rejects_discriminator_checkpoint(tmp_path, capsys):
    ckpt = str(tmp_path / "d.drlp")
    save_discriminator(ckpt, build_drail(1, 1, hidden=(8, 8), T=8, seed=0))
    assert run_cli("eval", ckpt, "--env", "sine") == 2


# --- reward-map --------------------------------------------------------------------


def test_reward_map_layout_and_untrained_values(tmp_path):
    # label_dim=0 keeps both branches identical, so an untrained classifier
    # scores exactly 0.5 everywhere; labeled fresh nets have much wider spread
    ckpt = str(tmp_path / "d.drlp")
    save_discriminator(ckpt, build_drail(1, 1, label_dim=0, hidden=(16, 16), T=16, seed=4))
    out = str(tmp_path / "grid.csv")
    assert run_cli("reward-map", ckpt, "--resolution", "101x121", "--seed", "3", "-o", out) == 0
    lines = open(out).read().splitlines()
    assert len(lines) == 102
    assert all(len(line.split(",")) == 122 for line in lines)
    cells = np.array([[float(v) for v in line.split(",")[1:]] for line in lines[1:]])
    assert np.all(np.abs(cells - 0.5) < 0.05)


def test_reward_map_deterministic(tmp_path):
    ckpt = str(tmp_path / "d.drlp")
    save_discriminator(ckpt, build_drail(1, 1, hidden=(8, 8), T=8, seed=1))
    a = str(tmp_path / "a.csv")
    b = str(tmp_path / "b.csv")
    for out in (a, b):
        assert run_cli("reward-map", ckpt, "--resolution", "21x31", "--seed", "7", "-o", out) == 0
    assert open(a, "rb").read() == open(b, "rb").read()


def test_reward_map_rejects_policy_checkpoint(tmp_path, capsys):
    ckpt = str(tmp_path / "p.drlp")
    save_policy(ckpt, build_policy(1, 1, (8, 8), seed=0))
    out = str(tmp_path / "grid.csv")
    assert run_cli("reward-map", ckpt, "-o", out) == 2


def test_reward_map_bad_resolution(tmp_path, capsys):
    ckpt = str(tmp_path / "d.drlp")
    save_discriminator(ckpt, build_drail(1, 1, hidden=(8, 8), T=8, seed=1))
    assert run_cli("reward-map", ckpt, "--resolution", "101", "-o", str(tmp_path / "g.csv")) == 2
    assert "resolution" in capsys.readouterr().err


# --- inspect -----------------------------------------------------------------------


def test_inspect_dataset(sine_dataset, capsys):
    assert run_cli("inspect", sine_dataset) == 0
    out = capsys.readouterr().out
    assert "dataset" in out and "transitions=400" in out


def test_inspect_checkpoints(tmp_path, capsys):
    pol = str(tmp_path / "p.drlp")
    save_policy(pol, build_policy(2, 2, (8, 8), seed=0))
    assert run_cli("inspect", pol) == 0
    assert "kind policy" in capsys.readouterr().out

    drl = str(tmp_path / "d.drlp")
    save_discriminator(drl, build_drail(1, 1, hidden=(8, 8), T=8, seed=0))
    assert run_cli("inspect", drl) == 0
    out = capsys.readouterr().out
    assert "kind drail" in out and "T=8" in out


def test_inspect_unknown_format(tmp_path, capsys):
    path = tmp_path / "x.bin"
    path.write_bytes(b"\x00\x01\x02\x03more")
    assert run_cli("inspect", str(path)) == 2
    assert "unrecognized" in capsys.readouterr().err
