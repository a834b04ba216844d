"""Attention-based GNN property predictor over an entity-property graph.

Entities aggregate their used properties, their top-k similar entities and
themselves; properties aggregate their users and themselves. Aggregation
coefficients come from a small attention network normalised with a softmax
over each node's neighbour list, or are uniform when attention is disabled.
An MLP over the element-wise product of an entity and a property
representation gives the probability that the entity uses the property.
"""

from __future__ import annotations

import dataclasses
import json
import logging
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np
import torch
import torch.nn.functional as F
from torch import nn

from .graph import EntityPropertyGraph

log = logging.getLogger(__name__)

DTYPE = torch.float64
LOG_CLAMP = 1e-12
CHECKPOINT_VERSION = 1

# ζ (entity <- property), η (entity <- entity), θ (property <- entity)
ROLES = ("entity-property", "entity-entity", "property-entity")


@dataclass
class GnnConfig:
    d1: int = 16
    d2: int = 16
    layers: int = 1
    k: int = 10
    learning_rate: float = 0.01
    negatives_per_positive: int = 4
    batch_size: int = 512
    epochs: int = 100
    seed: int = 0
    attention_enabled: bool = True
    per_role_attention: bool = False
    init_std: float = 1.0
    min_learning_rate: float = 1e-4

    def __post_init__(self):
        for name in ("d1", "d2", "layers", "k", "negatives_per_positive", "batch_size", "epochs"):
            if getattr(self, name) < 1:
                raise ValueError(f"{name} must be >= 1")
        if self.learning_rate <= 0:
            raise ValueError("learning_rate must be > 0")


class AttentionParams(nn.Module):
    """Parameters of w2^T selu(W1 [x; c] + b1) + b2."""

    def __init__(self, d1: int, d2: int):
        super().__init__()
        self.W1 = nn.Parameter(torch.zeros(d2, 2 * d1, dtype=DTYPE))
        self.b1 = nn.Parameter(torch.zeros(d2, dtype=DTYPE))
        self.w2 = nn.Parameter(torch.zeros(d2, dtype=DTYPE))
        self.b2 = nn.Parameter(torch.zeros((), dtype=DTYPE))

    def logits(self, neighbors: torch.Tensor, centers: torch.Tensor) -> torch.Tensor:
        x = torch.cat([neighbors, centers], dim=-1)
        return F.selu(x @ self.W1.T + self.b1) @ self.w2 + self.b2


class GnnParams(nn.Module):
    def __init__(self, n: int, m: int, d1: int = 16, d2: int = 16, layers: int = 1,
                 per_role_attention: bool = False):
        super().__init__()
        self.n, self.m, self.d1, self.d2 = n, m, d1, d2
        self.per_role_attention = per_role_attention
        self.entity_embeddings = nn.Parameter(torch.zeros(n, d1, dtype=DTYPE))
        self.property_embeddings = nn.Parameter(torch.zeros(m, d1, dtype=DTYPE))
        self.agg_weight = nn.Parameter(torch.zeros(d1, d1, dtype=DTYPE))
        self.agg_bias = nn.Parameter(torch.zeros(d1, dtype=DTYPE))
        names = ROLES if per_role_attention else ("shared",)
        self.attention = nn.ModuleDict({_key(r): AttentionParams(d1, d2) for r in names})
        self.mlp_weights = nn.ParameterList(
            [nn.Parameter(torch.zeros(d1, d1, dtype=DTYPE)) for _ in range(layers)])
        self.mlp_biases = nn.ParameterList(
            [nn.Parameter(torch.zeros(d1, dtype=DTYPE)) for _ in range(layers)])
        self.out_weight = nn.Parameter(torch.zeros(d1, dtype=DTYPE))
        self.out_bias = nn.Parameter(torch.zeros((), dtype=DTYPE))

    @property
    def layers(self) -> int:
        return len(self.mlp_weights)

    def attention_for(self, role: str) -> AttentionParams:
        if role not in ROLES:
            raise ValueError(f"unknown attention role {role!r}")
        return self.attention[_key(role) if self.per_role_attention else "shared"]

    def init_gaussian(self, std: float, seed: int) -> "GnnParams":
        gen = torch.Generator().manual_seed(seed)
        with torch.no_grad():
            for _, p in sorted(self.named_parameters()):
                p.copy_(torch.randn(p.shape, generator=gen, dtype=DTYPE) * std)
        return self

    def is_finite(self) -> bool:
        return all(bool(torch.isfinite(p).all()) for p in self.parameters())


def _key(role: str) -> str:
    return role.replace("-", "_")


# --- forward pass ---------------------------------------------------------

def segment_softmax(logits: torch.Tensor, segments: torch.Tensor, n_segments: int) -> torch.Tensor:
    """Softmax of ``logits`` within groups sharing a segment id."""
    if logits.numel() == 0:
        return logits
    seg_max = torch.full((n_segments,), -torch.inf, dtype=logits.dtype)
    seg_max = seg_max.scatter_reduce(0, segments, logits.detach(), reduce="amax")
    ex = torch.exp(logits - seg_max[segments])
    denom = torch.zeros(n_segments, dtype=logits.dtype).index_add(0, segments, ex)
    return ex / denom[segments]


class _EdgeTensors:
    def __init__(self, graph: EntityPropertyGraph):
        ei, pj = graph.ep_edges()
        ci, nj = graph.ee_edges()
        self.ep_entity = torch.from_numpy(ei)
        self.ep_property = torch.from_numpy(pj)
        self.ee_center = torch.from_numpy(ci)
        self.ee_neighbor = torch.from_numpy(nj)
        self.n, self.m = graph.n, graph.m


def _aggregate(params: GnnParams, role: str, centers: torch.Tensor, neighbors: torch.Tensor,
               center_emb: torch.Tensor, neighbor_emb: torch.Tensor, n_centers: int,
               attention: bool) -> torch.Tensor:
    """selu(W (sum_j coeff_ij x_j) + b) per center, zero for centers without neighbours."""
    d1 = params.d1
    if centers.numel() == 0:
        return torch.zeros(n_centers, d1, dtype=DTYPE)
    x = neighbor_emb[neighbors]
    if attention:
        att = params.attention_for(role)
        coeff = segment_softmax(att.logits(x, center_emb[centers]), centers, n_centers)
    else:
        counts = torch.zeros(n_centers, dtype=DTYPE).index_add(
            0, centers, torch.ones_like(centers, dtype=DTYPE))
        coeff = 1.0 / counts[centers]
    summed = torch.zeros(n_centers, d1, dtype=DTYPE).index_add(0, centers, coeff[:, None] * x)
    has = torch.zeros(n_centers, dtype=torch.bool)
    has[centers] = True
    out = F.selu(summed @ params.agg_weight.T + params.agg_bias)
    return out * has[:, None].to(DTYPE)


def forward_all(graph: EntityPropertyGraph, params: GnnParams, attention: bool = True,
                edges: _EdgeTensors | None = None) -> tuple[torch.Tensor, torch.Tensor]:
    """Latent vectors (H, K) for every entity and property node."""
    edges = edges or _EdgeTensors(graph)
    E, P = params.entity_embeddings, params.property_embeddings
    W, b = params.agg_weight, params.agg_bias
    h_p = _aggregate(params, "entity-property", edges.ep_entity, edges.ep_property, E, P,
                     graph.n, attention)
    h_e = _aggregate(params, "entity-entity", edges.ee_center, edges.ee_neighbor, E, E,
                     graph.n, attention)
    H = h_p + h_e + F.selu(E @ W.T + b)
    k_e = _aggregate(params, "property-entity", edges.ep_property, edges.ep_entity, P, E,
                     graph.m, attention)
    K = k_e + F.selu(P @ W.T + b)
    return H, K


def score_logits(params: GnnParams, h: torch.Tensor, k: torch.Tensor) -> torch.Tensor:
    g = h * k
    for Wl, bl in zip(params.mlp_weights, params.mlp_biases):
        g = F.selu(g @ Wl.T + bl)
    return g @ params.out_weight + params.out_bias


def bce(y: torch.Tensor, target: torch.Tensor) -> torch.Tensor:
    """Summed binary cross-entropy with logs clamped at 1e-12."""
    lp = torch.log(torch.clamp(y, min=LOG_CLAMP))
    ln = torch.log(torch.clamp(1.0 - y, min=LOG_CLAMP))
    return -(target * lp + (1.0 - target) * ln).sum()


def loss(graph: EntityPropertyGraph, params: GnnParams, batch, attention: bool = True,
         edges: _EdgeTensors | None = None) -> torch.Tensor:
    """Loss over ``batch``: an (i, j, y*) triple array or a sequence of triples."""
    arr = np.asarray(batch, dtype=np.float64).reshape(-1, 3)
    i = torch.from_numpy(arr[:, 0].astype(np.int64))
    j = torch.from_numpy(arr[:, 1].astype(np.int64))
    target = torch.from_numpy(arr[:, 2])
    H, K = forward_all(graph, params, attention, edges)
    y = torch.sigmoid(score_logits(params, H[i], K[j]))
    return bce(y, target)


# --- per-node API (used for inspection and tests) ------------------------

@dataclass
class ForwardTrace:
    """Intermediates of one node's forward pass."""

    self_term: np.ndarray
    property_term: np.ndarray | None = None   # h_i^P
    entity_term: np.ndarray | None = None     # h_i^E or k_j^E
    property_coefficients: np.ndarray | None = None
    entity_coefficients: np.ndarray | None = None
    output: np.ndarray = field(default_factory=lambda: np.zeros(0))


def attention_coefficients(params: GnnParams, center, neighbors, kind: str) -> np.ndarray:
    """Softmax-normalised attention weights of ``neighbors`` for one ``center``."""
    nb = torch.as_tensor(np.asarray(neighbors, dtype=np.float64)).reshape(-1, params.d1)
    if nb.shape[0] == 0:
        return np.zeros(0)
    c = torch.as_tensor(np.asarray(center, dtype=np.float64)).reshape(1, params.d1)
    with torch.no_grad():
        logits = params.attention_for(kind).logits(nb, c.expand(nb.shape[0], -1))
        return torch.softmax(logits, dim=0).numpy()


def _node_term(params: GnnParams, center, neighbors, kind: str, attention: bool):
    if len(neighbors) == 0:
        return np.zeros(params.d1), np.zeros(0)
    if attention:
        coeff = attention_coefficients(params, center, neighbors, kind)
    else:
        coeff = np.full(len(neighbors), 1.0 / len(neighbors))
    with torch.no_grad():
        agg = torch.from_numpy(coeff @ np.asarray(neighbors))
        out = F.selu(params.agg_weight @ agg + params.agg_bias).numpy()
    return out, coeff


def _self_term(params: GnnParams, emb: torch.Tensor) -> np.ndarray:
    with torch.no_grad():
        return F.selu(params.agg_weight @ emb + params.agg_bias).numpy()


def entity_forward(graph: EntityPropertyGraph, params: GnnParams, i: int,
                   attention: bool = True, trace: bool = False):
    E = params.entity_embeddings.detach().numpy()
    P = params.property_embeddings.detach().numpy()
    hp, zeta = _node_term(params, E[i], P[graph.entity_props[i]], "entity-property", attention)
    he, eta = _node_term(params, E[i], E[graph.entity_neighbors[i]], "entity-entity", attention)
    own = _self_term(params, params.entity_embeddings[i])
    h = hp + he + own
    if trace:
        return ForwardTrace(own, hp, he, zeta, eta, h)
    return h


def property_forward(graph: EntityPropertyGraph, params: GnnParams, j: int,
                     attention: bool = True, trace: bool = False):
    E = params.entity_embeddings.detach().numpy()
    P = params.property_embeddings.detach().numpy()
    ke, theta = _node_term(params, P[j], E[graph.property_entities[j]], "property-entity",
                           attention)
    own = _self_term(params, params.property_embeddings[j])
    k = ke + own
    if trace:
        return ForwardTrace(own, None, ke, None, theta, k)
    return k


def score(params: GnnParams, h, k) -> float:
    """y_ij for one pair, kept inside the open interval by the loss clamp."""
    with torch.no_grad():
        z = score_logits(params, torch.as_tensor(np.asarray(h, dtype=np.float64)),
                         torch.as_tensor(np.asarray(k, dtype=np.float64)))
        return float(torch.sigmoid(z).clamp(LOG_CLAMP, 1 - LOG_CLAMP))


# --- training --------------------------------------------------------------

@dataclass
class TrainResult:
    params: GnnParams
    config: GnnConfig
    history: list[float]  # loss on a fixed evaluation sample, index 0 = before training
    entity_nodes: list[str] = field(default_factory=list)
    property_nodes: list[str] = field(default_factory=list)


def positive_pairs(graph: EntityPropertyGraph) -> np.ndarray:
    ei, pj = graph.ep_edges()
    return np.stack([ei, pj], axis=1)


def sample_negatives(graph: EntityPropertyGraph, positives: np.ndarray, per_positive: int,
                     rng: np.random.Generator) -> np.ndarray:
    """Uniform negatives among each entity's unused properties."""
    counts = np.bincount(positives[:, 0], minlength=graph.n)
    rows = []
    for i in range(graph.n):
        if counts[i] == 0:
            continue
        used = set(graph.entity_props[i])
        unused = np.array([j for j in range(graph.m) if j not in used], dtype=np.int64)
        if unused.size == 0:
            continue
        js = rng.choice(unused, size=counts[i] * per_positive, replace=True)
        rows.append(np.stack([np.full_like(js, i), js], axis=1))
    if not rows:
        return np.zeros((0, 2), dtype=np.int64)
    return np.concatenate(rows)


def _examples(pos: np.ndarray, neg: np.ndarray) -> np.ndarray:
    return np.concatenate([
        np.column_stack([pos, np.ones(len(pos))]),
        np.column_stack([neg, np.zeros(len(neg))]),
    ]).astype(np.float64)


def train(graph: EntityPropertyGraph, config: GnnConfig, callback=None) -> TrainResult:
    """Fit the model with Adam and linearly (power-1 polynomial) decayed learning rate.

    ``callback(epoch, params)`` runs after every epoch (1-based), e.g. for
    validation-based model selection.
    """
    pos = positive_pairs(graph)
    if len(pos) == 0:
        raise ValueError("graph has no entity-property edges to learn from")
    torch.set_num_threads(1)
    rng = np.random.default_rng(config.seed)
    params = GnnParams(graph.n, graph.m, config.d1, config.d2, config.layers,
                       config.per_role_attention).init_gaussian(config.init_std, config.seed)
    edges = _EdgeTensors(graph)
    attention = config.attention_enabled

    eval_set = _examples(pos, sample_negatives(graph, pos, config.negatives_per_positive,
                                               np.random.default_rng(config.seed + 1)))

    def eval_loss() -> float:
        with torch.no_grad():
            return float(loss(graph, params, eval_set, attention, edges))

    n_examples = len(pos) * (1 + config.negatives_per_positive)
    steps_per_epoch = max(1, -(-n_examples // config.batch_size))
    total = config.epochs * steps_per_epoch
    opt = torch.optim.Adam(params.parameters(), lr=config.learning_rate,
                           betas=(0.9, 0.999), eps=1e-8)
    floor = config.min_learning_rate / config.learning_rate
    sched = torch.optim.lr_scheduler.LambdaLR(
        opt, lambda t: max(1.0 - t / total, floor))

    history = [eval_loss()]
    for epoch in range(config.epochs):
        data = _examples(pos, sample_negatives(graph, pos, config.negatives_per_positive, rng))
        data = data[rng.permutation(len(data))]
        for start in range(0, len(data), config.batch_size):
            opt.zero_grad()
            batch_loss = loss(graph, params, data[start:start + config.batch_size],
                              attention, edges)
            batch_loss.backward()
            opt.step()
            sched.step()
        if not params.is_finite():
            raise FloatingPointError(f"non-finite parameters after epoch {epoch}")
        history.append(eval_loss())
        log.debug("epoch %d loss %.6f", epoch, history[-1])
        if callback is not None:
            callback(epoch + 1, params)
    return TrainResult(params, config, history, list(graph.entity_nodes),
                       list(graph.property_nodes))


# --- ranking -----------------------------------------------------------------

def predict_all(graph: EntityPropertyGraph, params: GnnParams, attention: bool = True) -> np.ndarray:
    """n x m matrix of y_ij."""
    with torch.no_grad():
        H, K = forward_all(graph, params, attention)
        g = H[:, None, :] * K[None, :, :]
        for Wl, bl in zip(params.mlp_weights, params.mlp_biases):
            g = F.selu(g @ Wl.T + bl)
        return torch.sigmoid(g @ params.out_weight + params.out_bias).numpy()


def rank_properties(graph: EntityPropertyGraph, params: GnnParams, entity: str,
                    m: int | None = 10, attention: bool = True,
                    scores: np.ndarray | None = None) -> list[tuple[str, float]]:
    """Top-``m`` unused properties for ``entity`` by predicted probability.

    ``m=None`` returns the full candidate ranking. Precomputed ``scores`` from
    :func:`predict_all` may be passed to avoid recomputation.
    """
    if entity not in graph.entity_index:
        raise KeyError(f"unknown entity {entity!r}")
    i = graph.entity_index[entity]
    if scores is None:
        with torch.no_grad():
            H, K = forward_all(graph, params, attention)
            row = torch.sigmoid(score_logits(params, H[i].expand(graph.m, -1), K)).numpy()
    else:
        row = scores[i]
    used = set(graph.entity_props[i])
    cands = [(graph.property_nodes[j], float(row[j])) for j in range(graph.m) if j not in used]
    cands.sort(key=lambda t: (-t[1], t[0]))
    return cands if m is None else cands[:m]


# --- checkpoints --------------------------------------------------------------

def save_checkpoint(path: str | Path, result: TrainResult, graph: EntityPropertyGraph) -> None:
    state = {name: p.detach().numpy().tolist() for name, p in result.params.named_parameters()}
    shapes = {name: list(p.shape) for name, p in result.params.named_parameters()}
    doc = {
        "format": "kbenrich-gnn",
        "version": CHECKPOINT_VERSION,
        "config": dataclasses.asdict(result.config),
        "entity_nodes": graph.entity_nodes,
        "property_nodes": graph.property_nodes,
        "shapes": shapes,
        "params": state,
        "history": result.history,
    }
    Path(path).write_text(json.dumps(doc, sort_keys=True) + "\n", encoding="utf-8")


def load_checkpoint(path: str | Path) -> TrainResult:
    doc = json.loads(Path(path).read_text(encoding="utf-8"))
    if doc.get("format") != "kbenrich-gnn" or doc.get("version") != CHECKPOINT_VERSION:
        raise ValueError(f"{path}: not a version-{CHECKPOINT_VERSION} GNN checkpoint")
    config = GnnConfig(**doc["config"])
    params = GnnParams(len(doc["entity_nodes"]), len(doc["property_nodes"]), config.d1,
                       config.d2, config.layers, config.per_role_attention)
    with torch.no_grad():
        for name, p in params.named_parameters():
            value = torch.tensor(doc["params"][name], dtype=DTYPE)
            if list(value.shape) != doc["shapes"][name] or value.shape != p.shape:
                raise ValueError(f"shape mismatch for {name}")
            p.copy_(value)
    return TrainResult(params, config, doc.get("history", []),
                       doc["entity_nodes"], doc["property_nodes"])
