import csv
import json

import pytest

from gridvgae.cli import EXIT_CONFIG, EXIT_DATA, EXIT_IO, main
from gridvgae.config import ModelConfig, dump_config
from gridvgae.graph import read_corpus

TINY = ModelConfig(decoder="iterative_gcn", encoder_hidden=(8,), latent_dim=4, decoder_hidden=(8, 6),
                   epochs=2)


def manifest(d):
    return json.loads((d / "manifest.json").read_text())


@pytest.fixture(scope="module")
def corpus_dir(tmp_path_factory):
    d = tmp_path_factory.mktemp("cli") / "real"
    assert main(["synth-data", "--preset", "homogeneous", "--count", "6", "--seed", "3", "--out", str(d)]) == 0
    return d


def test_synth_data(corpus_dir, tmp_path):
    assert len(read_corpus(corpus_dir)) == 6
    m = manifest(corpus_dir)
    assert m["command"] == "synth-data" and m["seeds"] == {"corpus": 3}
    main(["synth-data", "--count", "6", "--seed", "3", "--out", str(tmp_path / "again")])
    for f in sorted(corpus_dir.glob("graph_*.edgelist")):
        assert f.read_bytes() == (tmp_path / "again" / f.name).read_bytes()


def test_train_generate_evaluate(corpus_dir, tmp_path):
    cfg = tmp_path / "model.json"
    dump_config(TINY, cfg)
    run = tmp_path / "run"
    assert main(["train", "--corpus", str(corpus_dir), "--config", str(cfg), "--seed", "5",
                 "--out", str(run)]) == 0
    m = manifest(run)
    assert m["config"]["seed"] == 5 and m["config"]["epochs"] == 2
    assert len(m["outputs"]["checkpoint_sha256"]) == 64
    rows = list(csv.DictReader((run / "losses.csv").open()))
    assert [int(r["epoch"]) for r in rows] == [1, 2]

    syn = tmp_path / "syn"
    assert main(["generate", "--checkpoint", str(run / "checkpoint.gvgae"), "--count", "4",
                 "--seed", "1", "--out", str(syn)]) == 0
    assert len(read_corpus(syn)) == 4
    assert manifest(syn)["inputs"]["checkpoint_sha256"] == m["outputs"]["checkpoint_sha256"]

    rep = tmp_path / "rep"
    assert main(["evaluate", "--real", str(corpus_dir), "--synth", str(syn), "--out", str(rep)]) == 0
    report = json.loads((rep / "report.json").read_text())
    assert report["schema_version"] == 1
    assert (rep / "histograms.csv").exists() and (rep / "graphs.csv").exists()


def test_dingo_preset_trains_for_25_epochs(tmp_path):
    real = tmp_path / "real"
    main(["synth-data", "--count", "2", "--seed", "0", "--out", str(real)])
    assert main(["train", "--corpus", str(real), "--preset", "dingo-like", "--out", str(tmp_path / "r")]) == 0
    rows = list(csv.DictReader((tmp_path / "r" / "losses.csv").open()))
    assert len(rows) == 25
    for r in rows:
        assert float(r["total"]) - float(r["recon"]) == pytest.approx(2.0 * float(r["kl"]), rel=1e-9)


def test_config_error_before_compute(corpus_dir, tmp_path, capsys):
    bad = tmp_path / "bad.json"
    bad.write_text(json.dumps({"decoder": "transformer"}))
    out = tmp_path / "never"
    assert main(["train", "--corpus", str(corpus_dir), "--config", str(bad), "--out", str(out)]) == EXIT_CONFIG
    assert "unknown decoder" in capsys.readouterr().err
    assert not out.exists()
    bad.write_text("{not json")
    assert main(["train", "--corpus", str(corpus_dir), "--config", str(bad), "--out", str(out)]) == EXIT_CONFIG


def test_data_errors(corpus_dir, tmp_path):
    assert main(["evaluate", "--real", str(tmp_path / "missing"), "--synth", str(corpus_dir),
                 "--out", str(tmp_path / "r")]) == EXIT_DATA
    junk = tmp_path / "junk.gvgae"
    junk.write_bytes(b"not a checkpoint")
    assert main(["generate", "--checkpoint", str(junk), "--out", str(tmp_path / "g")]) == EXIT_DATA


def test_io_error(tmp_path):
    assert main(["generate", "--checkpoint", str(tmp_path / "absent.gvgae"),
                 "--out", str(tmp_path / "g")]) == EXIT_IO


def test_generation_refusal_is_a_config_error(corpus_dir, tmp_path):
    cfg = tmp_path / "ip.json"
    dump_config(TINY.replace(decoder="inner_product", epochs=1), cfg)
    main(["train", "--corpus", str(corpus_dir), "--config", str(cfg), "--out", str(tmp_path / "ip")])
    assert main(["generate", "--checkpoint", str(tmp_path / "ip" / "checkpoint.gvgae"),
                 "--out", str(tmp_path / "g")]) == EXIT_CONFIG


def test_worker_env(corpus_dir, tmp_path, monkeypatch):
    monkeypatch.setenv("GRIDVGAE_WORKERS", "3")
    assert main(["evaluate", "--real", str(corpus_dir), "--synth", str(corpus_dir),
                 "--out", str(tmp_path / "r")]) == 0
    assert manifest(tmp_path / "r")["workers"] == 3
    monkeypatch.setenv("GRIDVGAE_WORKERS", "zero")
    assert main(["evaluate", "--real", str(corpus_dir), "--synth", str(corpus_dir),
                 "--out", str(tmp_path / "r2")]) == EXIT_CONFIG


def test_usage_errors_exit_2():
    with pytest.raises(SystemExit) as exc:
        main(["train"])
    assert exc.value.code == 2
