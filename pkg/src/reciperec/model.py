"""The full recommender: graph encoder, ingredient set transformer and predictor."""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from . import tensor as T
from .config import TrainConfig
from .encoder import (EncoderOptions, EncoderParams, EncoderTrace, encode, param,
                      project_inputs, xavier)
from .graph import STREAM_INIT, GraphView, HeteroGraph, NodeType, RelationType, as_view, stream_rng
from .objectives import ScorePredictor
from .settf import SetTransformerParams, encode_sets, padded_sets
from .tensor import ContractError, Tensor


@dataclass
class Embeddings:
    users: Tensor
    recipes: Tensor
    graph: Tensor  # GNN output for every node, global order


class RecipeRec:
    def __init__(self, config: TrainConfig, encoder: EncoderParams,
                 settf: SetTransformerParams | None, predictor: ScorePredictor):
        self.config = config
        self.encoder = encoder
        self.settf = settf
        self.predictor = predictor

    @classmethod
    def init(cls, g: HeteroGraph, config: TrainConfig) -> "RecipeRec":
        rng = stream_rng(config.seed, STREAM_INIT)
        dims = {t: (x.shape[1] if x is not None else None) for t, x in g.features.items()}
        for t in (NodeType.RECIPE, NodeType.INGREDIENT):
            if dims[t] is None:
                raise ContractError(f"graph has no {t.value} features")
        enc = EncoderParams.init(dims, g.counts[NodeType.USER], hidden=config.hidden,
                                 heads=config.heads, layers=config.layers, rng=rng,
                                 user_features=g.features[NodeType.USER])
        if config.use_set_transformer:
            settf = SetTransformerParams.init(config.hidden, config.hidden, config.settf_heads, rng,
                                              config.pooling, config.pool_before_ffn)
        else:
            # the fusion projection is still applied without the set branch
            d = config.hidden
            W_O = param(xavier(rng, (d, d), d, d), "settf/W_O")
            settf = SetTransformerParams({"settf/W_O": W_O}, config.settf_heads)
        pred = ScorePredictor(config.predictor, dim=config.hidden, hidden=config.mlp_hidden, rng=rng)
        return cls(config, enc, settf, pred)

    @property
    def encoder_options(self) -> EncoderOptions:
        c = self.config
        return EncoderOptions(leaky_slope=c.leaky_slope, weighted_interaction=c.weighted_interaction,
                              edge_weight_bias=c.edge_weight_bias, relation_fusion=c.relation_fusion,
                              relation_score_scope=c.relation_score_scope)

    def parameters(self) -> dict[str, Tensor]:
        out = dict(self.encoder.tensors)
        out.update(self.settf.tensors)
        out.update(self.predictor.tensors)
        return out

    def forward(self, g: HeteroGraph | GraphView, trace: EncoderTrace | None = None) -> Embeddings:
        view = as_view(g)
        base = view.base
        h0 = project_inputs(view, self.encoder)
        hg = encode(view, self.encoder, self.encoder_options, trace, h0=h0)
        nu, nr = base.counts[NodeType.USER], base.counts[NodeType.RECIPE]
        users = T.getitem(hg, slice(0, nu))
        recipes_g = T.getitem(hg, slice(nu, nu + nr))
        W_O = self.settf["W_O"]
        if self.config.use_set_transformer:
            h_set = self.recipe_set_embeddings(view, h0)
            recipes = (recipes_g + h_set) @ W_O
        else:
            recipes = recipes_g @ W_O
        return Embeddings(users, recipes, hg)

    def recipe_set_embeddings(self, view: GraphView, h0: Tensor) -> Tensor:
        """Set-transformer embedding per recipe from its kept ingredient edges."""
        base = view.base
        nr, ni = base.counts[NodeType.RECIPE], base.counts[NodeType.INGREDIENT]
        r, i, _ = view.kept_edges(RelationType.RECIPE_INGREDIENT)
        members = [[] for _ in range(nr)]
        for a, b in zip(r.tolist(), i.tolist()):
            members[a].append(b)
        idx, mask = padded_sets([np.array(m, dtype=np.int64) for m in members])
        off = base.offsets[NodeType.INGREDIENT]
        h_ing = T.getitem(h0, slice(off, off + ni))
        if ni == 0:
            return Tensor(np.zeros((nr, self.config.hidden)))
        X = T.gather_rows(h_ing, idx)
        return encode_sets(X, mask, self.settf)

    def embed_arrays(self, g: HeteroGraph | GraphView) -> tuple[np.ndarray, np.ndarray]:
        with T.no_grad():
            emb = self.forward(g)
        return emb.users.data, emb.recipes.data

    def state_arrays(self) -> dict[str, np.ndarray]:
        return {k: v.data for k, v in self.parameters().items()}

    def load_arrays(self, arrays: dict[str, np.ndarray]) -> None:
        params = self.parameters()
        for k, p in params.items():
            if k not in arrays:
                raise ContractError(f"checkpoint lacks parameter {k}")
            if arrays[k].shape != p.shape:
                raise ContractError(
                    f"checkpoint parameter {k} has shape {arrays[k].shape}, model expects {p.shape}")
            p.data = np.array(arrays[k], dtype=np.float64)
