"""Synthetic user-recipe-ingredient graphs with planted preference clusters."""

from __future__ import annotations

from pathlib import Path

import numpy as np

from .config import SyntheticSpec
from .graph import HeteroGraph, NodeType, RelationType, save_graph


def _balanced_clusters(n: int, k: int, rng: np.random.Generator) -> np.ndarray:
    return rng.permutation(np.arange(n) % k)


def expected_user_recipe_edges(spec: SyntheticSpec, user_cl: np.ndarray, recipe_cl: np.ndarray) -> float:
    per_cluster = np.bincount(recipe_cl, minlength=spec.n_clusters)
    total = 0.0
    for c in user_cl.tolist():
        same = per_cluster[c]
        total += same * spec.p_intra + (spec.n_recipes - same) * spec.p_inter
    return total


def generate(spec: SyntheticSpec) -> tuple[HeteroGraph, dict[str, np.ndarray]]:
    """Build the graph; also returns the planted cluster labels per node type."""
    spec.validate()
    rng = np.random.default_rng(spec.seed)
    K = spec.n_clusters
    ucl = _balanced_clusters(spec.n_users, K, rng)
    rcl = _balanced_clusters(spec.n_recipes, K, rng)
    icl = _balanced_clusters(spec.n_ingredients, K, rng)

    prob = np.where(ucl[:, None] == rcl[None, :], spec.p_intra, spec.p_inter)
    hit = rng.random(prob.shape) < prob
    us, rs = np.nonzero(hit)
    ratings = rng.integers(1, 6, size=us.size).astype(np.float64)

    rr_s, rr_d, rr_w = [], [], []
    for r in range(spec.n_recipes):
        peers = np.flatnonzero((rcl == rcl[r]) & (np.arange(spec.n_recipes) != r))
        k = min(spec.recipe_neighbors, peers.size)
        for p in rng.choice(peers, size=k, replace=False).tolist():
            rr_s.append(r)
            rr_d.append(p)
            rr_w.append(round(float(rng.uniform(0.5, 1.0)), 6))

    lo, hi = spec.ingredients_per_recipe
    ri_s, ri_d, ri_w = [], [], []
    for r in range(spec.n_recipes):
        n = int(rng.integers(lo, hi + 1))
        own = np.flatnonzero(icl == rcl[r])
        chosen = set()
        for _ in range(n):
            pool = own if (own.size and rng.random() < 0.8) else np.arange(spec.n_ingredients)
            chosen.add(int(rng.choice(pool)))
        for i in sorted(chosen):
            ri_s.append(r)
            ri_d.append(i)
            ri_w.append(round(float(rng.uniform(0.1, 1.0)), 6))

    ii_s, ii_d, ii_w = [], [], []
    for i in range(spec.n_ingredients):
        peers = np.flatnonzero((icl == icl[i]) & (np.arange(spec.n_ingredients) != i))
        k = min(spec.ingredient_neighbors, peers.size)
        for p in rng.choice(peers, size=k, replace=False).tolist():
            ii_s.append(i)
            ii_d.append(p)
            ii_w.append(round(float(rng.uniform(0.0, 1.0)), 6))

    def feats(labels, dim):
        centers = rng.normal(0.0, 1.0, size=(K, dim))
        x = centers[labels] + spec.feature_noise * rng.normal(0.0, 1.0, size=(labels.size, dim))
        return np.round(x, 6)

    features = {
        NodeType.USER: np.round(rng.normal(0.0, 1.0, size=(spec.n_users, spec.user_dim)), 6),
        NodeType.RECIPE: feats(rcl, spec.recipe_dim),
        NodeType.INGREDIENT: feats(icl, spec.ingredient_dim),
    }
    counts = {NodeType.USER: spec.n_users, NodeType.RECIPE: spec.n_recipes,
              NodeType.INGREDIENT: spec.n_ingredients}
    edges = {
        RelationType.USER_RECIPE: (us, rs, ratings),
        RelationType.RECIPE_RECIPE: (np.array(rr_s), np.array(rr_d), np.array(rr_w)),
        RelationType.RECIPE_INGREDIENT: (np.array(ri_s), np.array(ri_d), np.array(ri_w)),
        RelationType.INGREDIENT_INGREDIENT: (np.array(ii_s), np.array(ii_d), np.array(ii_w)),
    }
    g = HeteroGraph(counts, edges, features)
    return g, {"user": ucl, "recipe": rcl, "ingredient": icl}


def write_synthetic(spec: SyntheticSpec, out_dir: str | Path) -> HeteroGraph:
    g, clusters = generate(spec)
    save_graph(g, out_dir)
    with open(Path(out_dir) / "clusters.csv", "w") as fh:
        fh.write("node_type,node_id,cluster\n")
        for t, labels in clusters.items():
            for i, c in enumerate(labels.tolist()):
                fh.write(f"{t},{i},{c}\n")
    return g
