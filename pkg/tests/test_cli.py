import json
import os

import numpy as np
import pytest

from memstage.cli import main, read_config_file
from memstage.data import SyntheticConfig, generate_synthetic, write_long_csv
from memstage.exceptions import ConfigError
from memstage.model import ModelConfig, ModelParams, load_checkpoint


GEN_CFG = """
n_patients = 20
visits_min = 4
visits_max = 4
n_features = 6
n_stages = 3
missing_rate = 0.1
seed = 7
"""

TRAIN_CFG = """
mode = unsupervised
epochs = 2
batch_size = 8
hidden_size = 8
latent_size = 4
memory_slots = 3
memory_width = 8
learning_rate = 0.001
kl_anneal_steps = 700
clusters = 3
seed = 1
"""


@pytest.fixture
def workspace(tmp_path, monkeypatch):
    monkeypatch.chdir(tmp_path)
    (tmp_path / "gen.cfg").write_text(GEN_CFG)
    (tmp_path / "train.cfg").write_text(TRAIN_CFG)
    return tmp_path


def test_read_config_rejects_unknown_key(tmp_path):
    path = tmp_path / "bad.cfg"
    path.write_text("epochs = 3\nbogus_key = 1\n")
    with pytest.raises(ConfigError, match="bogus_key"):
        read_config_file(path, {"epochs": int})


def test_generate_row_count_and_determinism(workspace):
    assert main(["generate", "--config", "gen.cfg", "--out", "a.csv"]) == 0
    assert main(["generate", "--config", "gen.cfg", "--out", "b.csv"]) == 0
    lines = (workspace / "a.csv").read_text().splitlines()
    assert len(lines) == 20 * 4 + 1
    assert (workspace / "a.csv").read_bytes() == (workspace / "b.csv").read_bytes()
    manifest = json.loads((workspace / "a.csv.manifest.json").read_text())
    assert manifest["command"] == "generate"
    assert manifest["seed"] == 7
    assert manifest["config"]["n_patients"] == 20


def test_generate_seed_flag_overrides_config(workspace):
    assert main(["generate", "--config", "gen.cfg", "--seed", "9", "--out", "c.csv"]) == 0
    manifest = json.loads((workspace / "c.csv.manifest.json").read_text())
    assert manifest["seed"] == 9


def test_train_eval_round_trip_deterministic(workspace):
    assert main(["generate", "--config", "gen.cfg", "--out", "cohort.csv"]) == 0
    assert main(["train", "--data", "cohort.csv", "--config", "train.cfg",
                 "--out", "m.ckpt"]) == 0
    assert os.path.exists("m.ckpt.log")
    assert os.path.exists("m.ckpt.manifest.json")
    # rerunning training with the same config and seed gives the same bytes
    assert main(["train", "--data", "cohort.csv", "--config", "train.cfg",
                 "--out", "m2.ckpt"]) == 0
    assert (workspace / "m.ckpt").read_bytes() == (workspace / "m2.ckpt").read_bytes()
    assert (workspace / "m.ckpt.log").read_bytes() == (workspace / "m2.ckpt.log").read_bytes()

    assert main(["eval", "--checkpoint", "m.ckpt", "--data", "cohort.csv",
                 "--k", "3", "--out", "e1"]) == 0
    assert main(["eval", "--checkpoint", "m.ckpt", "--data", "cohort.csv",
                 "--k", "3", "--out", "e2"]) == 0
    m1 = (workspace / "e1" / "metrics.txt").read_bytes()
    m2 = (workspace / "e2" / "metrics.txt").read_bytes()
    assert m1 == m2
    assert (workspace / "e1" / "assignments.csv").read_bytes() == \
        (workspace / "e2" / "assignments.csv").read_bytes()
    table = (workspace / "e1" / "assignments.csv").read_text()
    assert table.splitlines()[0] == "patient_id,visit_index,cluster,pc1,pc2"
    assert "np.float64" not in table  # plain decimal floats only
    cell = table.splitlines()[1].split(",")[3]
    assert float(cell) == float(cell)  # parses back
    assert (workspace / "e1" / "clusters.svg").read_text().startswith("<svg")
    for line in m1.decode().splitlines():
        assert line.startswith("metric=")
        assert " k=3 " in line


def test_train_zero_lr_checkpoint_equals_initialization(workspace):
    assert main(["generate", "--config", "gen.cfg", "--out", "cohort.csv"]) == 0
    cfg = (workspace / "train.cfg").read_text().replace("learning_rate = 0.001",
                                                        "learning_rate = 0.0")
    (workspace / "zero.cfg").write_text(cfg)
    assert main(["train", "--data", "cohort.csv", "--config", "zero.cfg",
                 "--out", "z.ckpt"]) == 0
    params, meta = load_checkpoint("z.ckpt")
    reference = ModelParams(
        ModelConfig(n_features=6, n_hidden=8, latent_size=4, memory_slots=3,
                    memory_width=8, mode="unsupervised"),
        seed=1,
    )
    for a, b in zip(params.tensors(), reference.tensors()):
        assert np.array_equal(a.value, b.value), a.name


def test_supervised_without_labels_fails_before_training(workspace, capsys):
    cohort = generate_synthetic(SyntheticConfig(n_patients=20, visits_min=4, visits_max=4,
                                                n_features=6, seed=7))
    for s in cohort.sequences:
        s.labels = None
    write_long_csv("nolabel.csv", cohort)
    rc = main(["train", "--data", "nolabel.csv", "--config", "train.cfg",
               "--mode", "supervised", "--out", "x.ckpt"])
    assert rc == 2
    err = capsys.readouterr().err
    assert "error_code=config_error" in err
    assert not os.path.exists("x.ckpt")


def test_eval_width_mismatch_reports_compatibility_error(workspace, capsys):
    assert main(["generate", "--config", "gen.cfg", "--out", "cohort.csv"]) == 0
    assert main(["train", "--data", "cohort.csv", "--config", "train.cfg",
                 "--out", "m.ckpt"]) == 0
    other = generate_synthetic(SyntheticConfig(n_patients=10, n_features=4, seed=1))
    write_long_csv("narrow.csv", other)
    rc = main(["eval", "--checkpoint", "m.ckpt", "--data", "narrow.csv", "--out", "e"])
    assert rc == 2
    assert "error_code=compatibility_error" in capsys.readouterr().err


def test_eval_defaults_k_from_checkpoint(workspace):
    assert main(["generate", "--config", "gen.cfg", "--out", "cohort.csv"]) == 0
    assert main(["train", "--data", "cohort.csv", "--config", "train.cfg",
                 "--out", "m.ckpt"]) == 0
    assert main(["eval", "--checkpoint", "m.ckpt", "--data", "cohort.csv",
                 "--out", "e"]) == 0
    text = (workspace / "e" / "metrics.txt").read_text()
    assert " k=3 " in text
    manifest = json.loads((workspace / "e" / "manifest.json").read_text())
    assert manifest["config"]["k"] == 3


def test_scaled_toy_training_finishes_quickly(workspace):
    # benchmark cohort scaled to 40 patients x 6 visits, hidden size 16:
    # a full default-length training run stays far inside five minutes
    import time

    (workspace / "toy_gen.cfg").write_text(
        "n_patients = 40\nvisits_min = 6\nvisits_max = 6\nn_features = 10\n"
        "n_stages = 3\nmissing_rate = 0.1\nseed = 0\n")
    (workspace / "toy_train.cfg").write_text(
        "mode = unsupervised\nepochs = 70\nbatch_size = 32\nhidden_size = 16\n"
        "latent_size = 16\nmemory_slots = 4\nmemory_width = 16\n"
        "learning_rate = 0.001\nkl_anneal_steps = 700\nclusters = 3\nseed = 0\n")
    t0 = time.perf_counter()
    assert main(["generate", "--config", "toy_gen.cfg", "--out", "toy.csv"]) == 0
    assert main(["train", "--data", "toy.csv", "--config", "toy_train.cfg",
                 "--out", "toy.ckpt"]) == 0
    assert time.perf_counter() - t0 < 300.0


def test_eval_workers_flag_gives_identical_outputs(workspace):
    assert main(["generate", "--config", "gen.cfg", "--out", "cohort.csv"]) == 0
    assert main(["train", "--data", "cohort.csv", "--config", "train.cfg",
                 "--out", "m.ckpt"]) == 0
    assert main(["eval", "--checkpoint", "m.ckpt", "--data", "cohort.csv",
                 "--out", "w1"]) == 0
    assert main(["eval", "--checkpoint", "m.ckpt", "--data", "cohort.csv",
                 "--workers", "4", "--out", "w4"]) == 0
    assert (workspace / "w1" / "metrics.txt").read_bytes() == \
        (workspace / "w4" / "metrics.txt").read_bytes()
    assert (workspace / "w1" / "assignments.csv").read_bytes() == \
        (workspace / "w4" / "assignments.csv").read_bytes()


def test_gradcheck_command_passes_and_fault_injection_fails(workspace, capsys):
    assert main(["gradcheck", "--mode", "unsupervised"]) == 0
    out = capsys.readouterr().out
    assert "PASS mode=unsupervised" in out
    rc = main(["gradcheck", "--mode", "unsupervised", "--corrupt-tensor", "enc.wx"])
    assert rc == 1
    out = capsys.readouterr().out
    assert "FAIL" in out and "enc.wx" in out


def test_gradcheck_refuses_oversize_config(workspace, capsys):
    (workspace / "big.cfg").write_text("hidden_size = 128\nlatent_size = 128\n"
                                       "memory_slots = 16\nmemory_width = 128\n")
    rc = main(["gradcheck", "--config", "big.cfg", "--mode", "unsupervised"])
    assert rc == 2
    assert "error_code=config_error" in capsys.readouterr().err


def test_missing_file_reports_io_error(workspace, capsys):
    rc = main(["train", "--data", "missing.csv", "--out", "m.ckpt"])
    assert rc == 2
    assert "error_code=io_error" in capsys.readouterr().err
