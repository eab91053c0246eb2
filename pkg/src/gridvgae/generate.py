"""Sampling synthetic grids from a trained checkpoint.

Randomness for graph ``i`` comes from named substreams ``[seed, stream, i]``
(node count, latent, seed edges, exploration), so generating ``k + 1`` graphs
reproduces the first ``k`` exactly.
"""
from __future__ import annotations

import numpy as np

from .autodiff import Tensor
from .config import GCN_FAMILY, ConfigError, GenConfig
from .graph import Corpus, Graph
from .model import decode_gcn, decode_iterative_gcn, probabilities, sample_pairs
from .train import Checkpoint

STREAMS = {"node_count": 0, "latent": 1, "seed_edges": 2, "exploration": 3}


class GenerationRefused(ConfigError):
    pass


def substream(seed: int, name: str, index: int) -> np.random.Generator:
    return np.random.default_rng([int(seed), STREAMS[name], int(index)])


def sample_latent(n: int, d: int, rng: np.random.Generator) -> Tensor:
    if n < 1 or d < 1:
        raise ValueError(f"latent shape must be positive, got {(n, d)}")
    return Tensor(rng.standard_normal((n, d)))


def sample_seed_edges(n: int, density: float, rng: np.random.Generator) -> np.ndarray:
    """Independent Bernoulli(``density``) draw for each pair ``u < v``; ``(m, 2)`` array."""
    if not 0.0 < density < 1.0:
        raise ValueError(f"density must lie in (0, 1), got {density}")
    return sample_pairs(n, density, rng)


def threshold_edges(p, tau: float) -> Graph:
    """Graph with edge ``(u, v)``, ``u < v``, wherever ``p[u, v] > tau`` (strict)."""
    p = p.data if isinstance(p, Tensor) else np.asarray(p, dtype=np.float64)
    n = p.shape[0]
    iu, ju = np.triu_indices(n, 1)
    keep = p[iu, ju] > tau
    return Graph(n, frozenset(zip(iu[keep].tolist(), ju[keep].tolist())))


def generate_one(ckpt: Checkpoint, gen: GenConfig, index: int) -> tuple[Graph, np.ndarray]:
    """Graph ``index`` of a generation run, with its edge-probability matrix."""
    cfg = ckpt.config
    lo, hi = gen.n_nodes_range
    n = int(substream(gen.seed, "node_count", index).integers(lo, hi + 1))
    z = sample_latent(n, cfg.latent_dim, substream(gen.seed, "latent", index))
    seeds = sample_seed_edges(n, gen.initial_edge_density, substream(gen.seed, "seed_edges", index))
    if cfg.decoder == "iterative_gcn":
        logits, candidates = decode_iterative_gcn(
            z, gen, ckpt.params, cfg, seed_edges=seeds,
            explore_rng=substream(gen.seed, "exploration", index), return_candidates=True)
    else:
        logits, candidates = decode_gcn(z, seeds, ckpt.params, cfg), None
    p = probabilities(logits)
    if candidates is not None:
        # pairs dropped by the last refinement round are discarded outright
        p = np.where(candidates, p, 0.0)
    return threshold_edges(p, gen.threshold), p


def generate_graphs(ckpt: Checkpoint, gen: GenConfig, name: str = "synthetic") -> Corpus:
    if ckpt.config.decoder not in GCN_FAMILY:
        raise GenerationRefused(
            f"checkpoint uses the {ckpt.config.decoder!r} decoder; inner-product and MLP decoders "
            f"are excluded from graph generation because they do not reconstruct grid topologies "
            f"during training. Use a 'gcn' or 'iterative_gcn' checkpoint.")
    return Corpus([generate_one(ckpt, gen, i)[0] for i in range(gen.count)], name)
