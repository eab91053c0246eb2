"""VGAE encoder, the four edge decoders, and the beta-weighted loss.

All decoders return *logits*; ``sigmoid(logits)`` is the edge-probability matrix.
Logit matrices are exactly symmetric and their diagonal carries no meaning.
"""
from __future__ import annotations

import math

import numpy as np

from . import autodiff as ad
from .autodiff import Propagation, Tensor
from .config import GCN_FAMILY, ConfigError, GenConfig, ModelConfig
from .graph import Graph, dense_adjacency

Params = dict  # name -> Tensor


class DegenerateConfigError(ConfigError):
    pass


# --------------------------------------------------------------------------
# parameters

def _glorot(rng: np.random.Generator, fan_in: int, fan_out: int) -> np.ndarray:
    a = math.sqrt(6.0 / (fan_in + fan_out))
    return rng.uniform(-a, a, size=(fan_in, fan_out))


def _linear(params: Params, rng, name: str, fan_in: int, fan_out: int):
    params[f"{name}.W"] = Tensor(_glorot(rng, fan_in, fan_out), requires_grad=True, name=f"{name}.W")
    params[f"{name}.b"] = Tensor(np.zeros((1, fan_out)), requires_grad=True, name=f"{name}.b")


def _norm(params: Params, name: str, width: int):
    params[f"{name}.g"] = Tensor(np.ones((1, width)), requires_grad=True, name=f"{name}.g")
    params[f"{name}.b"] = Tensor(np.zeros((1, width)), requires_grad=True, name=f"{name}.b")


N_FEATURES = 2


def init_params(cfg: ModelConfig, rng: np.random.Generator) -> Params:
    p: Params = {}
    width = N_FEATURES
    for i, h in enumerate(cfg.encoder_hidden):
        _linear(p, rng, f"enc.gcn{i}", width, h)
        _norm(p, f"enc.ln{i}", h)
        width = h
    _linear(p, rng, "enc.mu", width, cfg.latent_dim)
    _linear(p, rng, "enc.logvar", width, cfg.latent_dim)

    d = cfg.latent_dim
    hid = cfg.decoder_hidden
    if cfg.decoder == "mlp":
        # first layer acts on [z_i || z_j]; its weight is stored as the two halves
        w0 = _glorot(rng, 2 * d, hid[0])
        p["dec.mlp0.Wi"] = Tensor(w0[:d], requires_grad=True)
        p["dec.mlp0.Wj"] = Tensor(w0[d:], requires_grad=True)
        p["dec.mlp0.b"] = Tensor(np.zeros((1, hid[0])), requires_grad=True)
        for i in range(1, len(hid)):
            _linear(p, rng, f"dec.mlp{i}", hid[i - 1], hid[i])
        _linear(p, rng, "dec.out", hid[-1], 1)
    elif cfg.decoder in GCN_FAMILY:
        _linear(p, rng, "dec.proj", d, hid[0])
        _norm(p, "dec.ln", hid[0])
        widths = _gcn_widths(hid)
        for i in range(len(widths) - 1):
            _linear(p, rng, f"dec.gcn{i}", widths[i], widths[i + 1])
        # bilinear pair scorer h_i^T W h_j + b over normalized rows, starting as a
        # scaled inner product
        p["dec.score.W"] = Tensor(np.eye(widths[-1]) / math.sqrt(widths[-1]), requires_grad=True)
        p["dec.score.b"] = Tensor(np.zeros((1, 1)), requires_grad=True)
        if cfg.decoder == "iterative_gcn":
            # refinement over per-pair [fresh score, previous score, retained flag];
            # starts by passing the fresh score through
            p["dec.refine.W"] = Tensor(np.array([[1.0], [0.0], [0.0]]), requires_grad=True)
            p["dec.refine.b"] = Tensor(np.zeros((1, 1)), requires_grad=True)
    for name, t in p.items():
        t.name = name
    return p


def _gcn_widths(hidden) -> list[int]:
    hidden = list(hidden)
    # projection width followed by at least one GCN layer
    return hidden if len(hidden) > 1 else hidden * 2


# --------------------------------------------------------------------------
# encoder

def node_features(g: Graph) -> np.ndarray:
    """Per node ``[1, deg / max(1, max_deg)]``."""
    deg = g.degrees().astype(np.float64)
    top = max(1.0, float(deg.max())) if g.n_nodes else 1.0
    return np.column_stack([np.ones(g.n_nodes), deg / top])


def propagation_for(g_or_edges, n_nodes: int | None = None) -> Propagation:
    if isinstance(g_or_edges, Propagation):
        return g_or_edges
    if isinstance(g_or_edges, Graph):
        return Propagation(g_or_edges.n_nodes, g_or_edges.edge_array())
    return Propagation(n_nodes, np.asarray(g_or_edges, dtype=np.int64).reshape(-1, 2))


def gcn_layer(h: Tensor, g, w: Tensor, b: Tensor) -> Tensor:
    """``D^-1/2 (A + I) D^-1/2 H W + b``; ``g`` is a Graph or a prepared Propagation."""
    prop = propagation_for(g)
    if h.shape[0] != prop.n_nodes:
        raise ad.ShapeError(f"gcn_layer: features have {h.shape[0]} rows for {prop.n_nodes} nodes")
    return ad.add(ad.propagate(ad.matmul(h, w), prop), b)


def encode(g: Graph, params: Params, cfg: ModelConfig, train: bool = False,
           rng: np.random.Generator | None = None) -> tuple[Tensor, Tensor]:
    prop = propagation_for(g)
    h = Tensor(node_features(g))
    for i in range(len(cfg.encoder_hidden)):
        h = gcn_layer(h, prop, params[f"enc.gcn{i}.W"], params[f"enc.gcn{i}.b"])
        h = ad.layer_norm(h, params[f"enc.ln{i}.g"], params[f"enc.ln{i}.b"])
        h = ad.relu(h)
        h = ad.dropout(h, cfg.dropout, rng, train)
    mu = gcn_layer(h, prop, params["enc.mu.W"], params["enc.mu.b"])
    logvar = gcn_layer(h, prop, params["enc.logvar.W"], params["enc.logvar.b"])
    return mu, logvar


def reparameterize(mu: Tensor, logvar: Tensor, rng: np.random.Generator, clamp: float = 10.0) -> Tensor:
    """``mu + exp(logvar / 2) * eps`` with ``logvar`` clamped to ``[-clamp, clamp]``."""
    if mu.shape != logvar.shape:
        raise ad.ShapeError(f"reparameterize: shape mismatch {mu.shape} vs {logvar.shape}")
    std = ad.exp(ad.scale(ad.clamp(logvar, -clamp, clamp), 0.5))
    eps = Tensor._wrap(rng.standard_normal(mu.shape), False)
    return ad.add(mu, ad.mul(std, eps))


# --------------------------------------------------------------------------
# decoders

def _symmetrize(s: Tensor) -> Tensor:
    return ad.scale(ad.add(s, ad.transpose(s)), 0.5)


def _add_scalar(s: Tensor, b: Tensor) -> Tensor:
    n, m = s.shape
    return ad.reshape(ad.add(ad.reshape(s, n * m, 1), b), n, m)


def decode_inner_product(z: Tensor) -> Tensor:
    return ad.matmul(z, ad.transpose(z))


def decode_mlp(z: Tensor, params: Params, cfg: ModelConfig, train: bool = False,
               rng: np.random.Generator | None = None) -> Tensor:
    if "dec.mlp0.Wi" not in params:
        raise ValueError("decode_mlp: parameters do not belong to an MLP decoder")
    n = z.shape[0]
    u = ad.matmul(z, params["dec.mlp0.Wi"])
    v = ad.matmul(z, params["dec.mlp0.Wj"])
    h = ad.add(ad.pair_sum(u, v), params["dec.mlp0.b"])
    h = ad.dropout(ad.relu(h), cfg.dropout, rng, train)
    for i in range(1, len(cfg.decoder_hidden)):
        h = ad.add(ad.matmul(h, params[f"dec.mlp{i}.W"]), params[f"dec.mlp{i}.b"])
        h = ad.dropout(ad.relu(h), cfg.dropout, rng, train)
    out = ad.add(ad.matmul(h, params["dec.out.W"]), params["dec.out.b"])
    return _symmetrize(ad.reshape(out, n, n))


def _project(z: Tensor, params: Params, cfg: ModelConfig, train: bool, rng) -> Tensor:
    h = ad.add(ad.matmul(z, params["dec.proj.W"]), params["dec.proj.b"])
    h = ad.layer_norm(h, params["dec.ln.g"], params["dec.ln.b"])
    return ad.dropout(ad.relu(h), cfg.dropout, rng, train)


def _gcn_scores(h0: Tensor, prop: Propagation, params: Params, cfg: ModelConfig, train: bool, rng) -> Tensor:
    n_layers = len(_gcn_widths(cfg.decoder_hidden)) - 1
    h = h0
    for i in range(n_layers):
        h = gcn_layer(h, prop, params[f"dec.gcn{i}.W"], params[f"dec.gcn{i}.b"])
        if i < n_layers - 1:
            h = ad.dropout(ad.relu(h), cfg.dropout, rng, train)
    # centering over nodes and unit-scale rows keep any one node from scoring
    # high against everyone
    h = ad.layer_norm(ad.center_columns(h))
    s = ad.matmul(ad.matmul(h, params["dec.score.W"]), ad.transpose(h))
    return _add_scalar(_symmetrize(s), params["dec.score.b"])


def decode_gcn(z: Tensor, seed_edges, params: Params, cfg: ModelConfig, train: bool = False,
               rng: np.random.Generator | None = None) -> Tensor:
    """Project ``z``, run the GCN stack over ``seed_edges`` and score every pair.

    ``seed_edges`` is a Graph, an ``(m, 2)`` edge array or a Propagation.
    """
    if "dec.proj.W" not in params:
        raise ValueError("decode_gcn: parameters do not belong to a GCN-family decoder")
    prop = propagation_for(seed_edges, z.shape[0])
    if prop.n_nodes != z.shape[0]:
        raise ad.ShapeError(f"decode_gcn: seed edges for {prop.n_nodes} nodes, latent has {z.shape[0]} rows")
    return _gcn_scores(_project(z, params, cfg, train, rng), prop, params, cfg, train, rng)


def top_k_edges(logits: np.ndarray, k: int) -> np.ndarray:
    """The ``k`` highest-scoring pairs ``u < v`` as an ``(k, 2)`` array; ties go to the lower pair index."""
    n = logits.shape[0]
    iu, ju = np.triu_indices(n, 1)
    order = np.argsort(-logits[iu, ju], kind="stable")[:k]
    return np.column_stack([iu[order], ju[order]])


def sample_pairs(n: int, density: float, rng: np.random.Generator,
                 exclude: np.ndarray | None = None) -> np.ndarray:
    """Each pair ``u < v`` independently with probability ``density``, skipping ``exclude``."""
    iu, ju = np.triu_indices(n, 1)
    draw = rng.random(iu.shape[0]) < density
    if exclude is not None and len(exclude):
        taken = np.zeros((n, n), dtype=bool)
        taken[exclude[:, 0], exclude[:, 1]] = True
        draw &= ~taken[iu, ju]
    return np.column_stack([iu[draw], ju[draw]])


def decode_iterative_gcn(z: Tensor, gen: GenConfig, params: Params, cfg: ModelConfig,
                         rng: np.random.Generator | None = None, seed_edges=None,
                         explore_rng: np.random.Generator | None = None,
                         train: bool = False, dropout_rng: np.random.Generator | None = None,
                         return_candidates: bool = False):
    """GCN decode followed by ``gen.iterations`` keep-top / explore / rescore rounds.

    Seed edges are drawn at ``gen.initial_edge_density`` from ``rng`` unless given.
    Each round keeps the ``ceil(retention * n(n-1)/2)`` best pairs and discards
    the rest, adds exploration pairs from ``explore_rng`` (defaults to ``rng``),
    reruns the GCN stack over that candidate set, and rescores every pair with
    a fully connected layer over [fresh score, previous score, retained flag].

    With ``return_candidates`` the boolean matrix of surviving candidate pairs
    is returned as well (``None`` when no round ran).
    """
    if "dec.refine.W" not in params:
        raise ValueError("decode_iterative_gcn: parameters do not belong to an iterative GCN decoder")
    n = z.shape[0]
    if seed_edges is None:
        if rng is None:
            raise ValueError("decode_iterative_gcn: need an rng to draw seed edges")
        seed_edges = sample_pairs(n, gen.initial_edge_density, rng)
    explore_rng = explore_rng if explore_rng is not None else rng
    h0 = _project(z, params, cfg, train, dropout_rng)
    logits = _gcn_scores(h0, propagation_for(seed_edges, n), params, cfg, train, dropout_rng)
    candidates = None
    if gen.iterations > 0:
        k = math.ceil(gen.edge_retention_ratio * (n * (n - 1) // 2))
        if k == 0:
            raise DegenerateConfigError(f"edge retention keeps no edges on a {n}-node graph")
    for _ in range(gen.iterations):
        kept = top_k_edges(logits.data, k)
        if gen.exploration_edge_density > 0:
            if explore_rng is None:
                raise ValueError("decode_iterative_gcn: need an rng for exploration edges")
            extra = sample_pairs(n, gen.exploration_edge_density, explore_rng, exclude=kept)
            edges = np.concatenate([kept, extra])
        else:
            edges = kept
        flag = _pair_matrix(n, kept)
        candidates = _pair_matrix(n, edges).astype(bool)
        fresh = _gcn_scores(h0, Propagation(n, edges), params, cfg, train, dropout_rng)
        feats = ad.concat_cols([ad.reshape(fresh, n * n, 1), ad.reshape(logits, n * n, 1),
                                Tensor._wrap(flag.reshape(n * n, 1), False)])
        out = ad.add(ad.matmul(feats, params["dec.refine.W"]), params["dec.refine.b"])
        logits = ad.reshape(out, n, n)
    if return_candidates:
        return logits, candidates
    return logits


def _pair_matrix(n: int, edges: np.ndarray) -> np.ndarray:
    m = np.zeros((n, n))
    if len(edges):
        m[edges[:, 0], edges[:, 1]] = 1.0
        m[edges[:, 1], edges[:, 0]] = 1.0
    return m


def probabilities(logits: Tensor | np.ndarray) -> np.ndarray:
    x = logits.data if isinstance(logits, Tensor) else np.asarray(logits, dtype=np.float64)
    return ad._sigmoid(x)


# --------------------------------------------------------------------------
# losses

def kl_divergence(mu: Tensor, logvar: Tensor) -> Tensor:
    """``-1/2 * sum(1 + logvar - mu^2 - exp(logvar)) / n_nodes``."""
    if mu.shape != logvar.shape:
        raise ad.ShapeError(f"kl_divergence: shape mismatch {mu.shape} vs {logvar.shape}")
    n = mu.shape[0]
    inner = ad.sub(ad.sub(logvar, ad.mul(mu, mu)), ad.exp(logvar))
    # the "+1" contributes n*d to the sum; written as (-n*d - sum) so that
    # mu = logvar = 0 gives +0.0 rather than -0.0
    total = ad.tensor_sum(inner)
    const = Tensor._wrap(np.array([[-float(mu.data.size)]]), False)
    return ad.scale(ad.sub(const, total), 0.5 / n)


def pos_weight_for(n_nodes: int, n_edges: int) -> float:
    if n_edges == 0:
        raise ValueError("graph has no edges; positive-class weight is undefined")
    return (n_nodes * n_nodes - n_nodes - 2 * n_edges) / (2 * n_edges)


def offdiag_mask(n: int) -> np.ndarray:
    return 1.0 - np.eye(n)


def vgae_loss(logits: Tensor, adjacency: np.ndarray, mu: Tensor, logvar: Tensor,
              beta: float) -> tuple[Tensor, Tensor, Tensor]:
    """Returns ``(total, recon, kl)`` with ``total = recon + beta * kl``.

    ``recon`` is the class-balanced binary cross-entropy over off-diagonal
    entries of ``adjacency``.
    """
    a = np.asarray(adjacency, dtype=np.float64)
    if a.shape != logits.shape:
        raise ad.ShapeError(f"vgae_loss: logits {logits.shape} vs adjacency {a.shape}")
    n = a.shape[0]
    n_edges = int(round(np.triu(a, 1).sum()))
    recon = ad.bce_with_logits(logits, a, pos_weight_for(n, n_edges), mask=offdiag_mask(n))
    kl = kl_divergence(mu, logvar)
    total = ad.add(recon, ad.scale(kl, beta))
    return total, recon, kl


def graph_loss(g: Graph, params: Params, cfg: ModelConfig, rng: np.random.Generator,
               train: bool = True) -> tuple[Tensor, Tensor, Tensor]:
    """Full per-graph forward pass: encode, sample, decode, score against ``g``.

    ``rng`` drives dropout masks, latent noise and (iterative decoder)
    exploration edges. Seed edges for GCN-family decoders are the true edges.
    """
    mu, logvar = encode(g, params, cfg, train=train, rng=rng)
    logvar = ad.clamp(logvar, -cfg.logvar_clamp, cfg.logvar_clamp)
    z = reparameterize(mu, logvar, rng, clamp=cfg.logvar_clamp)
    logits = decode(z, g, params, cfg, rng, train=train)
    return vgae_loss(logits, dense_adjacency(g), mu, logvar, cfg.beta)


def training_gen(cfg: ModelConfig) -> GenConfig:
    return GenConfig(edge_retention_ratio=cfg.train_retention_ratio,
                     exploration_edge_density=cfg.train_exploration_density,
                     iterations=cfg.train_iterations)


def decode(z: Tensor, g: Graph, params: Params, cfg: ModelConfig, rng, train: bool = True) -> Tensor:
    """Decoder dispatch used for training (GCN family sees the true edges)."""
    if cfg.decoder == "inner_product":
        return decode_inner_product(z)
    if cfg.decoder == "mlp":
        return decode_mlp(z, params, cfg, train=train, rng=rng)
    if cfg.decoder == "gcn":
        return decode_gcn(z, g, params, cfg, train=train, rng=rng)
    return decode_iterative_gcn(z, training_gen(cfg), params, cfg, seed_edges=g.edge_array(),
                                explore_rng=rng, train=train, dropout_rng=rng)
