import csv
import json

import numpy as np
import pytest

from gnstode import io
from gnstode.cli import main

GEN = ["generate", "--n", "5", "--timesteps", "9", "--counts", "3,2,2", "--substeps", "3", "--softening", "0.1"]
TRAIN = ["--epochs", "2", "--batch-size", "8", "--hidden-width", "6", "--k", "3",
         "--spatial-steps", "1", "--temporal-steps", "1"]


def generate(tmp_path, name="data", *extra):
    out = tmp_path / name
    assert main(GEN + ["--out-dir", str(out), *extra]) == 0
    return out


def train(tmp_path, data, name="m.ckpt", *extra):
    ck = tmp_path / name
    argv = ["train", "--train", str(data / "train.gnst"), "--val", str(data / "val.gnst"), *TRAIN, "--out", str(ck)]
    assert main(argv + list(extra)) == 0
    return ck


@pytest.fixture(scope="module")
def trained(tmp_path_factory):
    tmp = tmp_path_factory.mktemp("cli")
    data = generate(tmp)
    return tmp, data, train(tmp, data)


def test_generate_writes_three_splits(tmp_path):
    out = generate(tmp_path)
    for split, count in (("train", 3), ("val", 2), ("test", 2)):
        header, trajs = io.read_dataset(out / f"{split}.gnst")
        assert header.n_traj == count and header.T == 9 and header.n == 5


def test_generate_stride(tmp_path):
    out = generate(tmp_path, "s", "--stride", "4")
    header, _ = io.read_dataset(out / "train.gnst")
    assert header.T == 3 and header.dt_effective == pytest.approx(0.04)


def test_default_stride_five_gives_forty_stamps(tmp_path):
    out = tmp_path / "d"
    assert main(["generate", "--counts", "1,0,0", "--substeps", "1", "--stride", "5", "--out-dir", str(out)]) == 0
    header, _ = io.read_dataset(out / "train.gnst")
    assert (header.n, header.T, header.intensity, header.constant) == (20, 40, 0.42, 2.0)


def test_generate_byte_identical(tmp_path):
    a, b = generate(tmp_path, "a"), generate(tmp_path, "b")
    for split in ("train", "val", "test"):
        assert (a / f"{split}.gnst").read_bytes() == (b / f"{split}.gnst").read_bytes()


@pytest.mark.parametrize(
    "extra",
    [["--counts", "1,2"], ["--n", "1"], ["--stride", "0"], ["--intensity", "-1"], ["--system", "plasma"]],
)
def test_generate_usage_errors(tmp_path, extra, capsys):
    with pytest.raises(SystemExit) as exc:
        main(GEN + ["--out-dir", str(tmp_path), *extra])
    assert exc.value.code == 2


def test_train_writes_checkpoint_and_log(trained):
    tmp, data, ck = trained
    params, cfg = io.load_checkpoint(ck)
    assert cfg.epochs == 2 and cfg.model.hidden_width == 6
    rows = list(csv.reader(open(ck.with_suffix(".csv"))))
    assert rows[0] == ["epoch", "train_loss", "val_loss"] and len(rows) == 3
    assert not [p for p in tmp.iterdir() if p.name.endswith(".tmp")]


def test_train_is_reproducible(trained, tmp_path):
    _, data, ck = trained
    again = train(tmp_path, data, "again.ckpt")
    assert again.read_bytes() == ck.read_bytes()


def test_train_ablation_flags(trained, tmp_path):
    _, data, _ = trained
    ck = train(tmp_path, data, "ab.ckpt", "--ablate-spatial", "--ablate-temporal")
    _, cfg = io.load_checkpoint(ck)
    assert cfg.model.ablate_spatial and cfg.model.ablate_temporal


def test_train_rejects_mixed_systems(trained, tmp_path):
    _, data, _ = trained
    coul = tmp_path / "c"
    assert main(GEN + ["--system", "coulomb", "--out-dir", str(coul)]) == 0
    with pytest.raises(SystemExit):
        main(["train", "--train", str(data / "train.gnst"), "--val", str(coul / "val.gnst"), *TRAIN,
              "--out", str(tmp_path / "x.ckpt")])
    assert not (tmp_path / "x.ckpt").exists()


def test_evaluate_report(trained, tmp_path, capsys):
    _, data, ck = trained
    out = tmp_path / "r.json"
    assert main(["evaluate", "--test", str(data / "test.gnst"), "--ckpt", str(ck), str(ck),
                 "--repeat", "2", "--out", str(out)]) == 0
    doc = json.loads(out.read_text())
    assert doc["repeat"] == 2 and len(doc["runs"]) == 2
    assert doc["rmse"] == pytest.approx(doc["runs"][0]["rmse"])
    assert doc["config"]["system"] == "gravity" and doc["config"]["scale"] == 5 and doc["config"]["stride"] == 1
    assert doc["config"]["intensity"] == 0.42
    capsys.readouterr()
    assert main(["evaluate", "--test", str(data / "test.gnst"), "--ckpt", str(ck)]) == 0
    assert json.loads(capsys.readouterr().out)["repeat"] == 1


def test_evaluate_repeat_mismatch(trained):
    _, data, ck = trained
    with pytest.raises(SystemExit):
        main(["evaluate", "--test", str(data / "test.gnst"), "--ckpt", str(ck), "--repeat", "3"])


def test_evaluate_rejects_wrong_system(trained, tmp_path, capsys):
    _, _, ck = trained
    coul = tmp_path / "c"
    assert main(GEN + ["--system", "coulomb", "--out-dir", str(coul)]) == 0
    with pytest.raises(SystemExit):
        main(["evaluate", "--test", str(coul / "test.gnst"), "--ckpt", str(ck)])
    assert "d=6" in capsys.readouterr().err


def test_rollout_csv(trained, tmp_path):
    _, data, ck = trained
    out = tmp_path / "roll.csv"
    assert main(["rollout", "--ckpt", str(ck), "--data", str(data / "test.gnst"), "--traj-index", "1",
                 "--out", str(out)]) == 0
    rows = list(csv.reader(open(out)))
    assert len(rows) == 2 * 9 * 5 + 1
    assert rows[0] == ["source", "traj", "t", "particle", "m", "x", "y", "vx", "vy"]
    _, trajs = io.read_dataset(data / "test.gnst")
    first = rows[1]
    assert first[:4] == ["truth", "1", "0", "0"]
    assert np.array_equal([float(x) for x in first[4:]], trajs[1].states[0, 0])
    pred_first = rows[1 + 9 * 5]
    assert pred_first[0] == "predicted" and [float(x) for x in pred_first[4:]] == [float(x) for x in first[4:]]


def test_rollout_bad_index(trained, tmp_path):
    _, data, ck = trained
    with pytest.raises(SystemExit):
        main(["rollout", "--ckpt", str(ck), "--data", str(data / "test.gnst"), "--traj-index", "9",
              "--out", str(tmp_path / "x.csv")])


def test_corrupt_input_is_an_error_not_a_crash(tmp_path, capsys):
    bad = tmp_path / "bad.gnst"
    bad.write_bytes(b"NOTADATASET")
    assert main(["rollout", "--ckpt", str(bad), "--data", str(bad), "--out", str(tmp_path / "o.csv")]) == 1
    assert "magic" in capsys.readouterr().err


def test_thread_count_does_not_change_outputs(trained, tmp_path, monkeypatch):
    _, data, ck = trained
    a, b = tmp_path / "a.json", tmp_path / "b.json"
    assert main(["evaluate", "--test", str(data / "test.gnst"), "--ckpt", str(ck), "--out", str(a)]) == 0
    monkeypatch.setenv("GNSTODE_THREADS", "3")
    assert main(["evaluate", "--test", str(data / "test.gnst"), "--ckpt", str(ck), "--out", str(b)]) == 0
    assert a.read_bytes() == b.read_bytes()
