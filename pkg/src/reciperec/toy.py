"""Small random graphs and model setups for checks and tests."""

from __future__ import annotations

import numpy as np

from .config import TrainConfig
from .graph import HeteroGraph, NodeType, RelationType, leave_one_out_split
from .model import RecipeRec
from .objectives import contrastive_loss, joint_loss, rec_loss
from .graph import augment
from . import tensor as T


def random_graph(rng: np.random.Generator, n_users: int = 3, n_recipes: int = 4,
                 n_ingredients: int = 3, p: float = 0.5, dims=(3, 5, 4),
                 user_features: bool = True) -> HeteroGraph:
    counts = {NodeType.USER: n_users, NodeType.RECIPE: n_recipes, NodeType.INGREDIENT: n_ingredients}

    def bern(n, m, symmetric=False):
        hit = rng.random((n, m)) < p
        if symmetric:
            hit = np.triu(hit, 1)
        s, d = np.nonzero(hit)
        return s, d, rng.uniform(0.1, 1.0, size=s.size)

    edges = {
        RelationType.USER_RECIPE: bern(n_users, n_recipes),
        RelationType.RECIPE_RECIPE: bern(n_recipes, n_recipes, True),
        RelationType.RECIPE_INGREDIENT: bern(n_recipes, n_ingredients),
        RelationType.INGREDIENT_INGREDIENT: bern(n_ingredients, n_ingredients, True),
    }
    feats = {
        NodeType.USER: rng.uniform(-1, 1, (n_users, dims[0])) if user_features else None,
        NodeType.RECIPE: rng.uniform(-1, 1, (n_recipes, dims[1])),
        NodeType.INGREDIENT: rng.uniform(-1, 1, (n_ingredients, dims[2])),
    }
    return HeteroGraph(counts, edges, feats)


def toy_config(**kw) -> TrainConfig:
    base = dict(hidden=4, heads=2, settf_heads=2, layers=2, mlp_hidden=4, tau=0.5)
    base.update(kw)
    return TrainConfig(**base)


def toy_joint_loss(g: HeteroGraph, model: RecipeRec, seed: int = 0):
    """A closure computing the full joint loss with fixed triplets and fixed views."""
    c = model.config
    items = g.user_items()
    users, pos, neg = [], [], []
    rng = np.random.default_rng(seed)
    n_rec = g.counts[NodeType.RECIPE]
    for u, its in enumerate(items):
        for r in its.tolist():
            free = np.setdiff1d(np.arange(n_rec), its)
            if free.size:
                users.append(u)
                pos.append(r)
                neg.append(int(rng.choice(free)))
    users, pos, neg = map(np.array, (users, pos, neg))
    v1 = augment(g, c.node_drop, c.edge_drop, seed + 1)
    v2 = augment(g, c.node_drop, c.edge_drop, seed + 2)
    u_ids = np.unique(users)
    r_ids = np.unique(pos)
    types = np.r_[np.zeros(u_ids.size), np.ones(r_ids.size)]

    def nodes(e):
        return T.concat([T.gather_rows(e.users, u_ids), T.gather_rows(e.recipes, r_ids)], axis=0)

    def f():
        clean = model.forward(g)
        l_rec = rec_loss(model.predictor, users, pos, neg, clean.users, clean.recipes)
        e1, e2 = model.forward(v1), model.forward(v2)
        l_con = contrastive_loss(nodes(e1), nodes(e2), types, c.tau, c.contrastive_similarity)
        return joint_loss(l_rec, l_con, c.lam)

    return f


def toy_setup(seed: int = 0, **cfg):
    """A <=10-node graph with at least one interaction, a split and a tiny model."""
    rng = np.random.default_rng(seed)
    while True:
        g = random_graph(rng, 3, 4, 3, p=0.6)
        if g.num_edges(RelationType.USER_RECIPE) >= 2:
            break
    config = toy_config(seed=seed, **cfg)
    model = RecipeRec.init(g, config)
    return g, leave_one_out_split(g, seed, n_negatives=1), model
