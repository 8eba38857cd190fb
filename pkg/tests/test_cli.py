import csv
import json
import socket

import pytest

from avpgate.cli import run
from avpgate.config import dump, RunConfig
from avpgate.model import ModelConfig, load_checkpoint
from avpgate.seqio import read_fasta, serialize_fasta
from avpgate.synthetic import smoke_corpus

EMB = "fallback:dim=8:seed=0"


@pytest.fixture(scope="module")
def workdir(tmp_path_factory):
    d = tmp_path_factory.mktemp("cli")
    ds = smoke_corpus(3, n_pos=12, n_neg=12)
    (d / "train.fasta").write_text(serialize_fasta(ds.items))
    (d / "train.csv").write_text("id,label\n" + "".join(f"{s.id},{s.label}\n" for s in ds.items))
    small = ModelConfig(embed_dim=8, conv_kernels=(3,), conv_channels=4, lstm_hidden=2, attn_dim=4,
                        gate_hidden=4, mlp_hidden=(4,))
    cfg = RunConfig().with_overrides(model=small.to_dict(), train={"max_epochs": 2, "batch_size": 8, "seed": 1})
    (d / "run.cfg").write_text(dump(cfg))
    return d


@pytest.fixture(scope="module")
def trained(workdir):
    code = run(["train", "--in", str(workdir / "train.fasta"), "--labels", str(workdir / "train.csv"),
                "--out", str(workdir / "m.ckpt"), "--config", str(workdir / "run.cfg"), "--embedder", EMB,
                "--dynamics", str(workdir / "dyn.csv")])
    assert code == 0
    return workdir / "m.ckpt"


def read_rows(path):
    with open(path, newline="") as fh:
        return list(csv.reader(fh))


def test_featurize_default_width(workdir, tmp_path):
    out = tmp_path / "f.csv"
    assert run(["featurize", "--in", str(workdir / "train.fasta"), "--out", str(out), "--threads", "2"]) == 0
    rows = read_rows(out)
    assert len(rows[0]) == 1 + 3270 and len(rows) == 25
    assert rows[0][1] == "AAC.0"


def test_featurize_is_byte_identical(workdir, tmp_path):
    for k in range(2):
        run(["featurize", "--in", str(workdir / "train.fasta"), "--out", str(tmp_path / f"{k}.csv")])
    assert (tmp_path / "0.csv").read_bytes() == (tmp_path / "1.csv").read_bytes()


def test_augment_deterministic(workdir, tmp_path):
    for k in range(2):
        assert run(["augment", "--in", str(workdir / "train.fasta"), "--out", str(tmp_path / f"{k}.fa"),
                    "--copies", "2", "--seed", "4", "--keep-original"]) == 0
    assert (tmp_path / "0.fa").read_bytes() == (tmp_path / "1.fa").read_bytes()
    assert len(read_fasta(tmp_path / "0.fa")) == 24 * 3


def test_train_writes_checkpoint_and_dynamics(trained, workdir):
    params, cfg, meta = load_checkpoint(trained)
    assert cfg.embed_dim == 8 and meta["stage"] == 1
    rows = read_rows(workdir / "dyn.csv")
    assert rows[0][:2] == ["epoch", "total_loss"] and len(rows) == 3


def test_predict_evaluate_pipeline(trained, workdir, tmp_path):
    pred = tmp_path / "pred.csv"
    assert run(["predict", "--checkpoint", str(trained), "--in", str(workdir / "train.fasta"), "--out", str(pred),
                "--embedder", EMB, "--interpret", str(tmp_path / "interp")]) == 0
    rows = read_rows(pred)
    assert rows[0] == ["id", "prob_0", "prob_1", "label", "gate_lambda"] and len(rows) == 25
    assert (tmp_path / "interp" / "attention.csv").exists()
    metrics = tmp_path / "m.json"
    assert run(["evaluate", "--predictions", str(pred), "--labels", str(workdir / "train.csv"),
                "--out", str(metrics), "--curves", str(tmp_path / "c")]) == 0
    doc = json.loads(metrics.read_text())
    assert 0 <= doc["ACC"] <= 1 and (tmp_path / "c_roc.csv").exists()


def test_predict_twice_identical(trained, workdir, tmp_path):
    for k in range(2):
        run(["predict", "--checkpoint", str(trained), "--in", str(workdir / "train.fasta"),
             "--out", str(tmp_path / f"{k}.csv"), "--embedder", EMB, "--tta", "--seed", "3"])
    assert (tmp_path / "0.csv").read_bytes() == (tmp_path / "1.csv").read_bytes()


def test_finetune(trained, workdir, tmp_path):
    out = tmp_path / "ft.ckpt"
    assert run(["finetune", "--checkpoint", str(trained), "--in", str(workdir / "train.fasta"),
                "--labels", str(workdir / "train.csv"), "--out", str(out), "--config", str(workdir / "run.cfg"),
                "--embedder", EMB]) == 0
    _, _, meta = load_checkpoint(out)
    assert meta["stage"] == 2 and meta["train"]["weight_decay"] == 0.0


def test_evaluate_perfect_fixture(tmp_path):
    (tmp_path / "p.csv").write_text("id,prob_neg,prob_pos\na,0.1,0.9\nb,0.8,0.2\nc,0.3,0.7\nd,0.95,0.05\n")
    (tmp_path / "l.csv").write_text("a,1\nb,0\nc,1\nd,0\n")
    assert run(["evaluate", "--predictions", str(tmp_path / "p.csv"), "--labels", str(tmp_path / "l.csv"),
                "--out", str(tmp_path / "m.json")]) == 0
    doc = json.loads((tmp_path / "m.json").read_text())
    assert doc["ACC"] == 1.0 and doc["MCC"] == 1.0


def test_compose_stats(workdir, tmp_path):
    out = tmp_path / "comp.csv"
    assert run(["compose-stats", "--in", str(workdir / "train.fasta"), "--labels", str(workdir / "train.csv"),
                "--out", str(out)]) == 0
    rows = read_rows(out)
    assert rows[0][0] == "residue" and len(rows) == 21


def test_predict_without_checkpoint(workdir, capsys):
    assert run(["predict", "--in", str(workdir / "train.fasta"), "--out", "x.csv"]) == 1
    assert "--checkpoint" in capsys.readouterr().err


def test_unknown_subcommand(capsys):
    assert run(["frobnicate"]) == 1
    assert "usage" in capsys.readouterr().err


def test_no_subcommand():
    assert run([]) == 1


def test_missing_embedder_is_validation_error(trained, workdir, tmp_path, capsys):
    assert run(["predict", "--checkpoint", str(trained), "--in", str(workdir / "train.fasta"),
                "--out", str(tmp_path / "p.csv")]) == 1
    assert "--embedder" in capsys.readouterr().err


def test_missing_input_file_is_io_error(tmp_path):
    assert run(["featurize", "--in", str(tmp_path / "missing.fa"), "--out", str(tmp_path / "f.csv")]) == 2


def test_bad_fasta_is_validation_error(tmp_path):
    (tmp_path / "bad.fa").write_text(">a\nACXG\n")
    assert run(["featurize", "--in", str(tmp_path / "bad.fa"), "--out", str(tmp_path / "f.csv")]) == 1


def test_corrupt_checkpoint_is_io_error(workdir, tmp_path):
    (tmp_path / "x.ckpt").write_bytes(b"AVPCKPT2" + bytes(40))
    assert run(["predict", "--checkpoint", str(tmp_path / "x.ckpt"), "--in", str(workdir / "train.fasta"),
                "--out", str(tmp_path / "p.csv"), "--embedder", EMB]) == 2


def test_serve_port_busy(trained):
    with socket.socket() as s:
        s.bind(("127.0.0.1", 0))
        s.listen(1)
        port = s.getsockname()[1]
        assert run(["serve", "--checkpoint", str(trained), "--port", str(port), "--embedder", EMB]) == 2


def test_config_command(capsys):
    assert run(["config"]) == 0
    assert capsys.readouterr().out == dump()
