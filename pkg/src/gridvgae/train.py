"""Training loop and the versioned binary checkpoint format.

Checkpoint layout (all integers little-endian)::

    b"GVGAE-CKPT\\n"                 magic, 11 bytes
    uint64                          header length H
    H bytes                         UTF-8 JSON header (sorted keys)
    payload                         parameters as float64 LE, in header order

The header holds ``format_version``, ``config``, ``seed``, ``final_loss``,
``params`` (list of ``{"name", "shape"}``) and ``payload_sha256``.
"""
from __future__ import annotations

import hashlib
import json
import logging
import math
import os
import struct
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from .autodiff import Tape, Tensor, backward
from .config import ModelConfig, model_config_from_dict
from .graph import Corpus
from .model import encode, graph_loss, init_params
from .optim import AdamState, adam_step

log = logging.getLogger(__name__)

FORMAT_VERSION = 1
MAGIC = b"GVGAE-CKPT\n"

# stream ids under the training seed
_INIT, _SHUFFLE, _STEP = 0, 1, 2


class TrainingError(RuntimeError):
    pass


class CheckpointError(ValueError):
    pass


@dataclass(frozen=True)
class LossRecord:
    epoch: int
    recon: float
    kl: float
    total: float


@dataclass
class Checkpoint:
    config: ModelConfig
    params: dict
    seed: int
    final_loss: dict = field(default_factory=dict)
    format_version: int = FORMAT_VERSION

    def numpy_params(self) -> dict:
        return {k: t.data for k, t in self.params.items()}


def _graph_rng(seed: int, epoch: int, index: int) -> np.random.Generator:
    return np.random.default_rng([seed, _STEP, epoch, index])


def train(corpus: Corpus, cfg: ModelConfig, seed: int | None = None,
          progress=None) -> tuple[Checkpoint, list[LossRecord]]:
    """Fit a VGAE on ``corpus``; one Adam step per batch of ``cfg.batch_size`` graphs.

    Gradients of a batch are averaged over its graphs. Each graph's dropout
    masks, latent noise and exploration edges come from a stream keyed by
    ``(seed, epoch, graph index)``, so results do not depend on evaluation order.
    """
    if len(corpus) == 0:
        raise ValueError("cannot train on an empty corpus")
    seed = cfg.seed if seed is None else int(seed)
    params = init_params(cfg, np.random.default_rng([seed, _INIT]))
    state = AdamState(lr=cfg.learning_rate)
    shuffle_rng = np.random.default_rng([seed, _SHUFFLE])
    records: list[LossRecord] = []

    for epoch in range(cfg.epochs):
        order = shuffle_rng.permutation(len(corpus))
        recon_sum = kl_sum = 0.0
        for start in range(0, len(order), cfg.batch_size):
            batch = order[start:start + cfg.batch_size]
            acc = {name: np.zeros_like(t.data) for name, t in params.items()}
            for idx in batch:
                g = corpus[int(idx)]
                with Tape() as tape:
                    total, recon, kl = graph_loss(g, params, cfg, _graph_rng(seed, epoch, int(idx)))
                if not math.isfinite(total.item()):
                    raise TrainingError(f"non-finite loss at epoch {epoch + 1}, graph {int(idx)} "
                                        f"(recon={recon.item()!r}, kl={kl.item()!r})")
                backward(tape, total)
                for name, t in params.items():
                    if t.grad is not None:
                        acc[name] += t.grad
                        t.grad = None
                recon_sum += recon.item()
                kl_sum += kl.item()
            scale = 1.0 / len(batch)
            adam_step(params, {k: v * scale for k, v in acc.items()}, state)
        recon_mean = recon_sum / len(corpus)
        kl_mean = kl_sum / len(corpus)
        rec = LossRecord(epoch + 1, recon_mean, kl_mean, recon_mean + cfg.beta * kl_mean)
        records.append(rec)
        log.info("epoch %d: recon=%.6f kl=%.6f total=%.6f", rec.epoch, rec.recon, rec.kl, rec.total)
        if progress is not None:
            progress(rec)

    for t in params.values():
        t.requires_grad = False
    last = records[-1]
    ckpt = Checkpoint(cfg, params, seed,
                      final_loss={"epoch": last.epoch, "recon": last.recon, "kl": last.kl, "total": last.total})
    return ckpt, records


def encode_eval(ckpt: Checkpoint, g):
    """Eval-mode encoder output ``(mu, logvar)`` as numpy arrays."""
    mu, logvar = encode(g, ckpt.params, ckpt.config, train=False)
    return mu.data, logvar.data


# --------------------------------------------------------------------------
# serialization

def checkpoint_bytes(ckpt: Checkpoint) -> bytes:
    names = list(ckpt.params)
    payload = b"".join(np.ascontiguousarray(ckpt.params[k].data, dtype="<f8").tobytes() for k in names)
    header = {
        "format_version": ckpt.format_version,
        "config": ckpt.config.to_dict(),
        "seed": ckpt.seed,
        "final_loss": ckpt.final_loss,
        "params": [{"name": k, "shape": list(ckpt.params[k].shape)} for k in names],
        "payload_sha256": hashlib.sha256(payload).hexdigest(),
    }
    hbytes = json.dumps(header, sort_keys=True, separators=(",", ":")).encode("utf-8")
    return MAGIC + struct.pack("<Q", len(hbytes)) + hbytes + payload


def checkpoint_from_bytes(blob: bytes) -> Checkpoint:
    if not blob.startswith(MAGIC):
        raise CheckpointError("not a checkpoint file (bad magic)")
    pos = len(MAGIC)
    if len(blob) < pos + 8:
        raise CheckpointError("truncated checkpoint: missing header length")
    (hlen,) = struct.unpack("<Q", blob[pos:pos + 8])
    pos += 8
    if len(blob) < pos + hlen:
        raise CheckpointError("truncated checkpoint: header incomplete")
    try:
        header = json.loads(blob[pos:pos + hlen].decode("utf-8"))
    except (UnicodeDecodeError, json.JSONDecodeError) as exc:
        raise CheckpointError(f"corrupt checkpoint header: {exc}") from None
    pos += hlen
    version = header.get("format_version")
    if version != FORMAT_VERSION:
        raise CheckpointError(f"checkpoint format version {version!r} is not supported "
                              f"(expected {FORMAT_VERSION})")
    payload = blob[pos:]
    try:
        specs = [(p["name"], tuple(p["shape"])) for p in header["params"]]
        expected = sum(8 * r * c for _, (r, c) in specs)
        digest = header["payload_sha256"]
        cfg = model_config_from_dict(header["config"])
        seed = int(header["seed"])
    except (KeyError, TypeError, ValueError) as exc:
        raise CheckpointError(f"corrupt checkpoint header: {exc}") from None
    if len(payload) != expected:
        raise CheckpointError(f"checkpoint payload has {len(payload)} bytes, expected {expected} "
                              f"(truncated or corrupt)")
    if hashlib.sha256(payload).hexdigest() != digest:
        raise CheckpointError("checkpoint payload checksum mismatch")
    params = {}
    off = 0
    for name, (r, c) in specs:
        arr = np.frombuffer(payload, dtype="<f8", count=r * c, offset=off).astype(np.float64).reshape(r, c)
        params[name] = Tensor(arr, name=name)
        off += 8 * r * c
    return Checkpoint(cfg, params, seed, header.get("final_loss", {}), version)


def save_checkpoint(ckpt: Checkpoint, path: str | os.PathLike) -> str:
    """Write atomically; returns the SHA-256 of the file."""
    blob = checkpoint_bytes(ckpt)
    path = Path(path)
    tmp = path.with_name(path.name + ".tmp")
    with open(tmp, "wb") as fh:
        fh.write(blob)
    os.replace(tmp, path)
    return hashlib.sha256(blob).hexdigest()


def load_checkpoint(path: str | os.PathLike) -> Checkpoint:
    with open(path, "rb") as fh:
        return checkpoint_from_bytes(fh.read())


def file_sha256(path: str | os.PathLike) -> str:
    with open(path, "rb") as fh:
        return hashlib.sha256(fh.read()).hexdigest()


def write_loss_csv(records: list[LossRecord], path: str | os.PathLike):
    with open(path, "w", encoding="utf-8", newline="\n") as fh:
        fh.write("epoch,recon,kl,total\n")
        for r in records:
            fh.write(f"{r.epoch},{r.recon!r},{r.kl!r},{r.total!r}\n")
