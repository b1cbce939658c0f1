"""Heterogeneous GNN with node-level and relation-level attention."""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from . import tensor as T
from .graph import NODE_TYPES, RELATIONS, GraphView, HeteroGraph, NodeType, RelationType, as_view
from .tensor import ContractError, Tensor


def xavier(rng: np.random.Generator, shape: tuple[int, ...], fan_in: int, fan_out: int) -> np.ndarray:
    bound = np.sqrt(6.0 / (fan_in + fan_out))
    return rng.uniform(-bound, bound, size=shape)


def param(data: np.ndarray, name: str) -> Tensor:
    return Tensor(data, requires_grad=True, name=name)


@dataclass
class EncoderParams:
    """Trainable weights of the graph encoder, keyed by checkpoint name.

    Names follow ``enc/input/<type>/W``, ``enc/L<l>/rel=<relation>/<W_r|att|W_h|W_a>``
    and ``enc/L<l>/relatt/<W_R|q|b>``.
    """

    tensors: dict[str, Tensor]
    layers: int
    heads: int
    hidden: int

    def __post_init__(self):
        if self.hidden % self.heads:
            raise ContractError(f"hidden size {self.hidden} not divisible by {self.heads} heads")

    @property
    def head_dim(self) -> int:
        return self.hidden // self.heads

    def __getitem__(self, name: str) -> Tensor:
        return self.tensors[name]

    def rel(self, layer: int, rel: RelationType, what: str) -> Tensor:
        return self.tensors[f"enc/L{layer}/rel={rel.value}/{what}"]

    def relatt(self, layer: int, what: str) -> Tensor:
        return self.tensors[f"enc/L{layer}/relatt/{what}"]

    @classmethod
    def init(cls, feature_dims: dict[NodeType, int], n_users: int, *, hidden: int = 128,
             heads: int = 4, layers: int = 2, rng: np.random.Generator,
             user_features: np.ndarray | None = None) -> "EncoderParams":
        d = hidden
        dm = d // heads
        ts: dict[str, Tensor] = {}
        if user_features is None:
            du = feature_dims.get(NodeType.USER) or d
            user_features = rng.normal(0.0, 1.0, size=(n_users, du))
        ts["enc/input/user/x"] = param(user_features, "enc/input/user/x")
        dims = dict(feature_dims)
        dims[NodeType.USER] = user_features.shape[1]
        for t in NODE_TYPES:
            name = f"enc/input/{t.value}/W"
            ts[name] = param(xavier(rng, (dims[t], d), dims[t], d), name)
        for layer in range(layers):
            for rel in RELATIONS:
                pre = f"enc/L{layer}/rel={rel.value}"
                ts[f"{pre}/W_r"] = param(xavier(rng, (d, d), d, d), f"{pre}/W_r")
                ts[f"{pre}/att"] = param(xavier(rng, (heads, 2 * dm), 2 * dm, 1), f"{pre}/att")
                ts[f"{pre}/W_h"] = param(xavier(rng, (d, heads * dm), d, dm), f"{pre}/W_h")
                ts[f"{pre}/W_a"] = param(xavier(rng, (heads * dm, d), heads * dm, d), f"{pre}/W_a")
            pre = f"enc/L{layer}/relatt"
            ts[f"{pre}/W_R"] = param(xavier(rng, (d, d), d, d), f"{pre}/W_R")
            ts[f"{pre}/q"] = param(xavier(rng, (d,), d, 1), f"{pre}/q")
            ts[f"{pre}/b"] = param(np.zeros(d), f"{pre}/b")
        return cls(ts, layers, heads, hidden)


@dataclass
class EncoderOptions:
    leaky_slope: float = 0.2
    weighted_interaction: bool = True
    edge_weight_bias: bool = False
    relation_fusion: str = "attention"
    relation_score_scope: str = "graph"


@dataclass
class EncoderTrace:
    """Attention weights observed during one encode, kept for inspection."""

    alpha: dict[tuple[int, RelationType], tuple[np.ndarray, np.ndarray, np.ndarray]] = field(
        default_factory=dict)
    beta: dict[int, np.ndarray] = field(default_factory=dict)
    active: dict[int, np.ndarray] = field(default_factory=dict)


def project_inputs(g: HeteroGraph | GraphView, params: EncoderParams) -> Tensor:
    """Project per-type features into the shared space; rows in global node order."""
    base = as_view(g).base
    parts = []
    for t in NODE_TYPES:
        if base.counts[t] == 0:
            continue
        if t is NodeType.USER:
            x = params["enc/input/user/x"]
            if x.shape[0] != base.counts[t]:
                raise ContractError(f"user feature rows {x.shape[0]} != {base.counts[t]} users")
        else:
            feats = base.features[t]
            if feats is None or feats.shape[0] != base.counts[t]:
                raise ContractError(f"missing {t.value} feature rows")
            x = Tensor(feats)
        W = params[f"enc/input/{t.value}/W"]
        if x.shape[1] != W.shape[0]:
            raise ContractError(
                f"{t.value} feature dim {x.shape[1]} does not match projection {W.shape}")
        parts.append(x @ W)
    return T.concat(parts, axis=0)


def relation_embeddings(view: GraphView, h: Tensor, params: EncoderParams, layer: int,
                        rel: RelationType, opts: EncoderOptions = EncoderOptions(),
                        trace: EncoderTrace | None = None) -> tuple[Tensor, np.ndarray]:
    """Node-level attention under one relation, for every node at once.

    Returns the ``(N, d)`` relation-specific embeddings (zero rows for nodes
    without neighbours) and the boolean mask of nodes that have neighbours.
    """
    n = view.num_nodes
    M, dm = params.heads, params.head_dim
    msg = view.messages(rel)
    active = np.zeros(n, dtype=bool)
    active[msg.dst] = True
    if msg.dst.size == 0:
        return Tensor(np.zeros((n, params.hidden))), active
    E = msg.dst.size

    z = T.reshape(h @ params.rel(layer, rel, "W_r"), (n, M, dm))
    att = params.rel(layer, rel, "att")
    a_dst = T.getitem(att, (slice(None), slice(0, dm)))
    a_src = T.getitem(att, (slice(None), slice(dm, 2 * dm)))
    s_dst = T.sum(z * a_dst, axis=2)
    s_src = T.sum(z * a_src, axis=2)
    e = T.gather_rows(s_dst, msg.dst) + T.gather_rows(s_src, msg.src)
    if opts.edge_weight_bias:
        e = e + np.log1p(np.maximum(msg.weight, 0.0))[:, None]
    e = T.leaky_relu(e, opts.leaky_slope)
    alpha = T.segment_softmax(e, msg.dst, n)
    if trace is not None:
        trace.alpha[(layer, rel)] = (msg.dst.copy(), msg.src.copy(), alpha.data.copy())

    neigh = T.edge_aggregate(alpha, z, msg.dst, msg.src, n)
    # sum_j a_ij (h_i * h_j) W_h == (h_i * sum_j a_ij h_j) W_h, evaluated per node not per edge
    d_in = h.shape[1]
    coef = alpha if opts.weighted_interaction else Tensor(np.ones((E, M)))
    pooled = T.edge_aggregate(coef, h, msg.dst, msg.src, n) * T.reshape(h, (n, 1, d_in))
    W_h = T.permute(T.reshape(params.rel(layer, rel, "W_h"), (d_in, M, dm)), (1, 0, 2))
    inter = T.permute(T.permute(pooled, (1, 0, 2)) @ W_h, (1, 0, 2))
    agg = T.relu(neigh + inter)
    out = T.reshape(agg, (n, M * dm)) @ params.rel(layer, rel, "W_a")
    return out, active


def node_level_attention(view: HeteroGraph | GraphView, node: int, relation: RelationType,
                         h: Tensor, params: EncoderParams, layer: int,
                         opts: EncoderOptions = EncoderOptions()) -> Tensor:
    """Relation-specific embedding of one node (global index)."""
    view = as_view(view)
    t = view.base.node_type_of(node)
    if not relation.touches(t):
        raise ContractError(f"relation {relation.value} is not incident to {t.value} nodes")
    out, _ = relation_embeddings(view, h, params, layer, relation, opts)
    return out[node]


def relation_level_attention(rel_embs: list[Tensor], active: np.ndarray, params: EncoderParams,
                             layer: int, opts: EncoderOptions = EncoderOptions(),
                             score_active: np.ndarray | None = None) -> tuple[Tensor, np.ndarray]:
    """Fuse per-relation embeddings with relation-level attention.

    ``active`` is ``(N, R)``: which relations each node participates in. The
    relation score is averaged over the nodes in ``score_active`` (defaults to
    ``active``). Returns the fused ``(N, d)`` embeddings (zero rows for nodes
    with no active relation) and the ``(N, R)`` attention weights.
    """
    if not rel_embs:
        raise ContractError("relation-level attention needs at least one relation embedding")
    n, R = active.shape
    score_active = active if score_active is None else score_active
    if opts.relation_fusion == "mean":
        w_logits = Tensor(np.zeros(R))
    else:
        W_R, q, b = params.relatt(layer, "W_R"), params.relatt(layer, "q"), params.relatt(layer, "b")
        scores = []
        for r, H in enumerate(rel_embs):
            cnt = int(score_active[:, r].sum())
            if cnt == 0:
                scores.append(Tensor(np.zeros(1)))
                continue
            s = T.sum(T.tanh(H @ W_R + b) * q, axis=1)
            s = T.apply_mask(s, score_active[:, r])
            scores.append(T.reshape(T.scale(T.sum(s), 1.0 / cnt), (1,)))
        w_logits = T.concat(scores, axis=0)
    mask = active.astype(np.float64)
    shift = np.max(np.where(active.any(axis=0), w_logits.data, -np.inf)) if active.any() else 0.0
    ex = T.exp(w_logits - shift)
    numer = T.reshape(ex, (1, R)) * mask
    denom = T.sum(numer, axis=1, keepdims=True) + (~active.any(axis=1)).astype(np.float64)[:, None]
    beta = numer / denom
    fused = None
    for r, H in enumerate(rel_embs):
        term = T.getitem(beta, (slice(None), slice(r, r + 1))) * H
        fused = term if fused is None else fused + term
    return fused, beta.data


def encode(view: HeteroGraph | GraphView, params: EncoderParams,
           opts: EncoderOptions = EncoderOptions(), trace: EncoderTrace | None = None,
           h0: Tensor | None = None) -> Tensor:
    """Final GNN embeddings for all nodes in global order.

    Nodes with no incident relation at a layer keep their previous embedding.
    """
    view = as_view(view)
    h = project_inputs(view, params) if h0 is None else h0
    base_view = view.base.full_view() if opts.relation_score_scope == "base" else None
    for layer in range(params.layers):
        embs, actives, base_act = [], [], []
        for rel in RELATIONS:
            H, act = relation_embeddings(view, h, params, layer, rel, opts, trace)
            embs.append(H)
            actives.append(act)
            if base_view is not None:
                a = np.zeros(view.num_nodes, dtype=bool)
                a[base_view.messages(rel).dst] = True
                base_act.append(a)
        active = np.stack(actives, axis=1)
        score_active = np.stack(base_act, axis=1) if base_act else None
        fused, beta = relation_level_attention(embs, active, params, layer, opts, score_active)
        isolated = (~active.any(axis=1)).astype(np.float64)[:, None]
        h = fused + h * isolated
        if trace is not None:
            trace.beta[layer] = beta
            trace.active[layer] = active
    return h
