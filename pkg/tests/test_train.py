import hashlib
import json
import math
import struct

import numpy as np
import pytest

import gridvgae.train as train_mod
from gridvgae.autodiff import Tensor
from gridvgae.config import ModelConfig
from gridvgae.graph import synthetic_corpus
from gridvgae.train import (FORMAT_VERSION, MAGIC, CheckpointError, TrainingError, checkpoint_bytes,
                            checkpoint_from_bytes, encode_eval, load_checkpoint, save_checkpoint,
                            train, write_loss_csv)

from conftest import trained

TINY = ModelConfig(decoder="iterative_gcn", encoder_hidden=(8,), latent_dim=4, decoder_hidden=(8, 6),
                   epochs=2, batch_size=4, seed=3)


@pytest.fixture(scope="module")
def tiny_run():
    corpus = synthetic_corpus("homogeneous", 10, 0)
    return corpus, *train(corpus, TINY)


def test_records_and_total(tiny_run):
    _, ckpt, records = tiny_run
    assert [r.epoch for r in records] == [1, 2]
    for r in records:
        assert r.total == pytest.approx(r.recon + TINY.beta * r.kl, rel=1e-14)
    assert ckpt.final_loss["total"] == records[-1].total
    assert all(not t.requires_grad for t in ckpt.params.values())


def test_training_is_deterministic(tiny_run):
    corpus, ckpt, _ = tiny_run
    again, _ = train(corpus, TINY)
    assert checkpoint_bytes(again) == checkpoint_bytes(ckpt)
    other, _ = train(corpus, TINY, seed=4)
    assert checkpoint_bytes(other) != checkpoint_bytes(ckpt)


def test_one_adam_step_per_batch(monkeypatch):
    calls = []
    real = train_mod.adam_step
    monkeypatch.setattr(train_mod, "adam_step", lambda *a: calls.append(1) or real(*a))
    train(synthetic_corpus("homogeneous", 10, 0), TINY)
    assert len(calls) == TINY.epochs * math.ceil(10 / TINY.batch_size)


def test_non_finite_loss_is_reported(monkeypatch):
    def bad_loss(*args, **kwargs):
        nan = Tensor(np.array([[np.nan]]))
        return nan, nan, nan
    monkeypatch.setattr(train_mod, "graph_loss", bad_loss)
    with pytest.raises(TrainingError, match="epoch 1"):
        train(synthetic_corpus("homogeneous", 3, 0), TINY)


def test_empty_corpus_is_rejected():
    with pytest.raises(ValueError):
        train(synthetic_corpus("homogeneous", 0, 0), TINY)


def test_iterative_loss_decreases_on_homogeneous_preset():
    records = trained("iterative_gcn", 1)[2]
    assert len(records) == 10
    assert records[-1].total < records[0].total


# ---------------------------------------------------------------------------
# checkpoint format


def test_checkpoint_round_trip(tiny_run, tmp_path):
    corpus, ckpt, _ = tiny_run
    path = tmp_path / "m.gvgae"
    digest = save_checkpoint(ckpt, path)
    assert digest == hashlib.sha256(path.read_bytes()).hexdigest()
    back = load_checkpoint(path)
    assert back.config == ckpt.config
    assert back.seed == ckpt.seed
    assert list(back.params) == list(ckpt.params)
    for k in ckpt.params:
        assert np.array_equal(back.params[k].data, ckpt.params[k].data)
    assert checkpoint_bytes(back) == checkpoint_bytes(ckpt)
    mu, lv = encode_eval(back, corpus[0])
    mu0, lv0 = encode_eval(ckpt, corpus[0])
    assert np.array_equal(mu, mu0) and np.array_equal(lv, lv0)


def _split(blob):
    pos = len(MAGIC)
    (hlen,) = struct.unpack("<Q", blob[pos:pos + 8])
    header = json.loads(blob[pos + 8:pos + 8 + hlen])
    return header, blob[pos + 8 + hlen:]


def _join(header, payload):
    h = json.dumps(header, sort_keys=True, separators=(",", ":")).encode()
    return MAGIC + struct.pack("<Q", len(h)) + h + payload


def test_checkpoint_rejects_corruption(tiny_run):
    blob = checkpoint_bytes(tiny_run[1])
    with pytest.raises(CheckpointError, match="magic"):
        checkpoint_from_bytes(b"XX" + blob[2:])
    with pytest.raises(CheckpointError, match="truncated"):
        checkpoint_from_bytes(blob[:len(MAGIC) + 4])
    with pytest.raises(CheckpointError, match="truncated"):
        checkpoint_from_bytes(blob[:-8])
    flipped = bytearray(blob)
    flipped[-3] ^= 0xFF
    with pytest.raises(CheckpointError, match="checksum"):
        checkpoint_from_bytes(bytes(flipped))
    header, payload = _split(blob)
    header["format_version"] = FORMAT_VERSION + 1
    with pytest.raises(CheckpointError, match="version"):
        checkpoint_from_bytes(_join(header, payload))
    header["format_version"] = FORMAT_VERSION
    header["config"]["decoder"] = "nope"
    with pytest.raises(CheckpointError, match="header"):
        checkpoint_from_bytes(_join(header, payload))


def test_loss_csv(tiny_run, tmp_path):
    records = tiny_run[2]
    path = tmp_path / "losses.csv"
    write_loss_csv(records, path)
    lines = path.read_text().splitlines()
    assert lines[0] == "epoch,recon,kl,total"
    assert len(lines) == 1 + len(records)
    epoch, recon, kl, total = lines[1].split(",")
    assert int(epoch) == 1 and float(recon) == records[0].recon and float(total) == records[0].total
