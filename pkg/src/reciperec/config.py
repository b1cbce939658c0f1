"""Training configuration: defaults, JSON (de)serialisation and validation."""

from __future__ import annotations

import dataclasses
import json
from dataclasses import dataclass, fields
from pathlib import Path
from typing import Any


class ConfigError(ValueError):
    """Invalid configuration; ``problems`` lists ``(field path, message)`` pairs."""

    def __init__(self, message: str, problems: list[tuple[str, str]] | None = None):
        super().__init__(message)
        self.problems = problems or []


PREDICTORS = ("inner_product", "cosine", "mlp")
POOLING = ("mean", "sum", "max")
SIMILARITIES = ("cosine", "inner_product")
RELATION_FUSION = ("attention", "mean")


@dataclass
class TrainConfig:
    lr: float = 0.005
    heads: int = 4
    hidden: int = 128
    tau: float = 0.07
    lam: float = 0.1
    node_drop: float = 0.1
    edge_drop: float = 0.1
    batch_size: int = 1024
    epochs: int = 100
    layers: int = 2
    predictor: str = "inner_product"
    leaky_slope: float = 0.2
    pooling: str = "mean"
    pool_before_ffn: bool = True
    settf_heads: int = 4
    use_set_transformer: bool = True
    relation_fusion: str = "attention"
    relation_score_scope: str = "graph"
    weighted_interaction: bool = True
    edge_weight_bias: bool = False
    contrastive_similarity: str = "cosine"
    rec_on_views: bool = False
    mlp_hidden: int = 128
    adam_beta1: float = 0.9
    adam_beta2: float = 0.999
    adam_eps: float = 1e-8
    seed: int = 0
    checkpoint_every: int = 0
    eval_every: int = 0

    def to_dict(self) -> dict[str, Any]:
        return dataclasses.asdict(self)

    def to_json(self) -> str:
        return json.dumps(self.to_dict(), indent=2, sort_keys=True)

    @classmethod
    def from_dict(cls, raw: dict[str, Any], prefix: str = "") -> "TrainConfig":
        if not isinstance(raw, dict):
            raise ConfigError("config must be a JSON object", [(prefix or "$", "not an object")])
        known = {f.name: f for f in fields(cls)}
        problems: list[tuple[str, str]] = []
        values: dict[str, Any] = {}
        for key, val in raw.items():
            path = f"{prefix}{key}"
            if key not in known:
                problems.append((path, "unknown key"))
                continue
            expected = type(getattr(cls(), key))
            if expected is float and isinstance(val, int) and not isinstance(val, bool):
                val = float(val)
            if (expected is int and isinstance(val, bool)) or not isinstance(val, expected):
                problems.append((path, f"expected {expected.__name__}, got {type(val).__name__}"))
                continue
            values[key] = val
        if problems:
            raise ConfigError(_format(problems), problems)
        cfg = cls(**values)
        cfg.validate(prefix)
        return cfg

    @classmethod
    def load(cls, path: str | Path) -> "TrainConfig":
        with open(path) as fh:
            try:
                raw = json.load(fh)
            except json.JSONDecodeError as exc:
                raise ConfigError(f"{path}: invalid JSON ({exc})", [("$", str(exc))]) from exc
        return cls.from_dict(raw)

    def replace(self, **changes) -> "TrainConfig":
        cfg = dataclasses.replace(self, **changes)
        cfg.validate()
        return cfg

    def validate(self, prefix: str = "") -> None:
        p: list[tuple[str, str]] = []

        def need(cond: bool, name: str, msg: str) -> None:
            if not cond:
                p.append((f"{prefix}{name}", msg))

        need(self.lr >= 0, "lr", "must be >= 0")
        need(self.heads >= 1, "heads", "must be >= 1")
        need(self.hidden >= 1, "hidden", "must be >= 1")
        need(self.heads >= 1 and self.hidden % self.heads == 0, "hidden",
             f"must be divisible by heads ({self.heads})")
        need(self.settf_heads >= 1 and self.hidden % self.settf_heads == 0, "settf_heads",
             "must divide hidden")
        need(self.tau > 0, "tau", "must be > 0")
        need(self.lam >= 0, "lam", "must be >= 0")
        need(0 <= self.node_drop < 1, "node_drop", "must be in [0, 1)")
        need(0 <= self.edge_drop < 1, "edge_drop", "must be in [0, 1)")
        need(self.batch_size >= 1, "batch_size", "must be >= 1")
        need(self.epochs >= 0, "epochs", "must be >= 0")
        need(self.layers >= 1, "layers", "must be >= 1")
        need(self.predictor in PREDICTORS, "predictor", f"must be one of {PREDICTORS}")
        need(self.pooling in POOLING, "pooling", f"must be one of {POOLING}")
        need(self.relation_fusion in RELATION_FUSION, "relation_fusion",
             f"must be one of {RELATION_FUSION}")
        need(self.relation_score_scope in ("graph", "base"), "relation_score_scope",
             "must be 'graph' or 'base'")
        need(self.contrastive_similarity in SIMILARITIES, "contrastive_similarity",
             f"must be one of {SIMILARITIES}")
        need(self.leaky_slope >= 0, "leaky_slope", "must be >= 0")
        need(self.mlp_hidden >= 1, "mlp_hidden", "must be >= 1")
        need(0 <= self.adam_beta1 < 1, "adam_beta1", "must be in [0, 1)")
        need(0 <= self.adam_beta2 < 1, "adam_beta2", "must be in [0, 1)")
        need(self.adam_eps > 0, "adam_eps", "must be > 0")
        need(self.checkpoint_every >= 0, "checkpoint_every", "must be >= 0")
        need(self.eval_every >= 0, "eval_every", "must be >= 0")
        if p:
            raise ConfigError(_format(p), p)


def _format(problems: list[tuple[str, str]]) -> str:
    return "invalid config:\n" + "\n".join(f"  {path}: {msg}" for path, msg in problems)


@dataclass
class SyntheticSpec:
    """Planted-cluster generator settings (desk-scale stand-in for a real dataset)."""

    n_users: int = 50
    n_recipes: int = 200
    n_ingredients: int = 30
    n_clusters: int = 4
    p_intra: float = 0.3
    p_inter: float = 0.01
    ingredients_per_recipe: tuple[int, int] = (3, 8)
    recipe_neighbors: int = 4
    ingredient_neighbors: int = 3
    user_dim: int = 16
    recipe_dim: int = 32
    ingredient_dim: int = 12
    feature_noise: float = 1.0
    seed: int = 7

    def validate(self) -> None:
        p = []
        for name in ("n_users", "n_recipes", "n_ingredients", "n_clusters",
                     "user_dim", "recipe_dim", "ingredient_dim"):
            if getattr(self, name) < 1:
                p.append((name, "must be >= 1"))
        if not self.p_intra > self.p_inter:
            p.append(("p_intra", "must exceed p_inter so a planted signal exists"))
        if not (0 <= self.p_inter <= 1 and 0 <= self.p_intra <= 1):
            p.append(("p_intra", "probabilities must lie in [0, 1]"))
        lo, hi = self.ingredients_per_recipe
        if not 0 <= lo <= hi:
            p.append(("ingredients_per_recipe", "need 0 <= low <= high"))
        if p:
            raise ConfigError(_format(p), p)
