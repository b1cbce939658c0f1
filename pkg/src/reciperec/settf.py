"""Ingredient set transformer and fusion with the graph embedding.

Sets are processed in padded batches of shape ``(R, n_max, d)`` with a
boolean row mask; padded rows are excluded from keys and from pooling, so
results do not depend on padding or on row order.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from . import tensor as T
from .encoder import param, xavier
from .tensor import ContractError, DimensionError, Tensor

_NEG = -1e30


@dataclass
class SetTransformerParams:
    tensors: dict[str, Tensor]
    heads: int
    pooling: str = "mean"
    pool_before_ffn: bool = True

    def __getitem__(self, name: str) -> Tensor:
        return self.tensors[f"settf/{name}"]

    @property
    def in_dim(self) -> int:
        return self["W_Q"].shape[0]

    @property
    def out_dim(self) -> int:
        return self["W_Q"].shape[1]

    @classmethod
    def init(cls, d: int, d_o: int, heads: int, rng: np.random.Generator,
             pooling: str = "mean", pool_before_ffn: bool = True) -> "SetTransformerParams":
        if d_o % heads:
            raise ContractError(f"output dim {d_o} not divisible by {heads} heads")
        ts = {}

        def add(name, shape, fan_in, fan_out):
            ts[f"settf/{name}"] = param(xavier(rng, shape, fan_in, fan_out), f"settf/{name}")

        for name in ("W_Q", "W_K", "W_V", "W_m"):
            add(name, (d, d_o), d, d_o)
        for ffn in ("mab_ffn", "out_ffn"):
            add(f"{ffn}/W1", (d_o, d_o), d_o, d_o)
            ts[f"settf/{ffn}/b1"] = param(np.zeros(d_o), f"settf/{ffn}/b1")
            add(f"{ffn}/W2", (d_o, d_o), d_o, d_o)
            ts[f"settf/{ffn}/b2"] = param(np.zeros(d_o), f"settf/{ffn}/b2")
        add("W_O", (d_o, d_o), d_o, d_o)
        return cls(ts, heads, pooling, pool_before_ffn)


def attention(Q, K, V, mask: np.ndarray | None = None, temperature: float | None = None) -> Tensor:
    """Scaled dot-product attention ``softmax(Q K^T / temperature) V``.

    ``temperature`` defaults to ``sqrt(d)`` for query width ``d``. Works on
    matrices or on leading batch axes; ``mask`` marks valid key rows.
    """
    Q, K, V = T.as_tensor(Q), T.as_tensor(K), T.as_tensor(V)
    if Q.shape[-1] != K.shape[-1]:
        raise ContractError(f"query/key widths differ: {Q.shape} vs {K.shape}")
    if K.shape[-2] != V.shape[-2]:
        raise ContractError(f"keys and values not row-aligned: {K.shape} vs {V.shape}")
    if temperature is None:
        temperature = np.sqrt(Q.shape[-1])
    weights = T.softmax_scaled(Q @ T.transpose(K), temperature, mask)
    return weights @ V


def _ffn(x: Tensor, p: SetTransformerParams, which: str) -> Tensor:
    hidden = T.relu(x @ p[f"{which}/W1"] + p[f"{which}/b1"])
    return hidden @ p[f"{which}/W2"] + p[f"{which}/b2"]


def multihead_attention(X1: Tensor, X2: Tensor, p: SetTransformerParams,
                        key_mask: np.ndarray | None = None) -> Tensor:
    """Attention of ``X1`` on ``X2`` with per-head column blocks of W_Q/W_K/W_V.

    The softmax temperature is ``sqrt(d)`` with ``d`` the input width.
    """
    d = X1.shape[-1]
    H = p.heads
    dh = p.out_dim // H
    Q, K, V = X1 @ p["W_Q"], X2 @ p["W_K"], X2 @ p["W_V"]
    outs = []
    for m in range(H):
        cols = (Ellipsis, slice(m * dh, (m + 1) * dh))
        outs.append(attention(T.getitem(Q, cols), T.getitem(K, cols), T.getitem(V, cols),
                              mask=key_mask, temperature=np.sqrt(d)))
    return T.concat(outs, axis=-1)


def mab(X1: Tensor, X2: Tensor, p: SetTransformerParams, key_mask: np.ndarray | None = None) -> Tensor:
    return _ffn(X1 @ p["W_m"] + multihead_attention(X1, X2, p, key_mask), p, "mab_ffn")


def sab(X, p: SetTransformerParams, mask: np.ndarray | None = None) -> Tensor:
    """Self-attention block; row-permutation equivariant."""
    X = T.as_tensor(X)
    if X.shape[-2] < 1:
        raise ContractError("set attention needs at least one row")
    key_mask = None if mask is None else mask[..., None, :]
    return mab(X, X, p, key_mask)


def _pool(S: Tensor, mask: np.ndarray, mode: str) -> Tensor:
    m = mask.astype(np.float64)[..., None]
    if mode == "max":
        return T.max_axis(S + (1.0 - m) * _NEG, axis=-2)
    total = T.sum(T.apply_mask(S, m), axis=-2)
    if mode == "sum":
        return total
    count = np.maximum(mask.sum(axis=-1), 1).astype(np.float64)[..., None]
    return total / count


def encode_sets(X, mask: np.ndarray, p: SetTransformerParams) -> Tensor:
    """Batched set encoding: ``X`` is ``(R, n_max, d)``, ``mask`` is ``(R, n_max)``.

    Sets with no valid rows yield zero vectors.
    """
    X = T.as_tensor(X)
    mask = np.asarray(mask, dtype=bool)
    S = sab(X, p, mask)
    if p.pool_before_ffn:
        out = _ffn(_pool(S, mask, p.pooling), p, "out_ffn")
    else:
        out = _pool(_ffn(S, p, "out_ffn"), mask, p.pooling)
    nonempty = mask.any(axis=-1).astype(np.float64)[..., None]
    return T.apply_mask(out, nonempty)


def encode_recipe_set(X, p: SetTransformerParams) -> Tensor:
    """Encode one ingredient set ``X`` of shape ``(n, d)`` into a ``d_o`` vector."""
    X = T.as_tensor(X)
    if X.ndim != 2 or X.shape[0] < 1:
        raise ContractError(f"ingredient set must be a non-empty (n, d) matrix, got {X.shape}")
    out = encode_sets(T.reshape(X, (1,) + X.shape), np.ones((1, X.shape[0]), dtype=bool), p)
    return T.reshape(out, (p.out_dim,))


def fuse(h_graph, h_set, p: SetTransformerParams) -> Tensor:
    """Final recipe embedding ``(h_graph + h_set) W_O``; rows or single vectors."""
    h_graph, h_set = T.as_tensor(h_graph), T.as_tensor(h_set)
    if h_graph.shape != h_set.shape or h_graph.shape[-1] != p["W_O"].shape[0]:
        raise DimensionError(
            f"cannot fuse {h_graph.shape} with {h_set.shape} via W_O {p['W_O'].shape}")
    if h_graph.ndim == 1:
        return T.reshape(T.reshape(h_graph + h_set, (1, -1)) @ p["W_O"], (p.out_dim,))
    return (h_graph + h_set) @ p["W_O"]


def padded_sets(members: list[np.ndarray]) -> tuple[np.ndarray, np.ndarray]:
    """Index matrix and validity mask for a ragged list of index arrays."""
    n_max = max([m.size for m in members] + [1])
    idx = np.zeros((len(members), n_max), dtype=np.int64)
    mask = np.zeros((len(members), n_max), dtype=bool)
    for i, m in enumerate(members):
        idx[i, : m.size] = m
        mask[i, : m.size] = True
    return idx, mask
