"""Leave-one-out top-K evaluation against frozen sampled negatives."""

from __future__ import annotations

import csv
import io
import json
import math
from dataclasses import dataclass
from pathlib import Path

import numpy as np

from .graph import InteractionSplit
from .objectives import ScorePredictor
from .tensor import ContractError

METRICS = ("precision", "hr", "ndcg", "map")
K_VALUES = tuple(range(1, 11))


@dataclass
class RankedList:
    user: int
    candidates: list[int]  # best first
    positive: int
    rank: int  # 1-based rank of the positive


def rank_candidates(user: int, positive: int, candidates: np.ndarray, scores: np.ndarray) -> RankedList:
    """Sort by descending score, breaking ties by ascending recipe id."""
    candidates = np.asarray(candidates, dtype=np.int64)
    order = np.lexsort((candidates, -np.asarray(scores, dtype=np.float64)))
    ranked = candidates[order]
    rank = int(np.nonzero(ranked == positive)[0][0]) + 1
    return RankedList(user, ranked.tolist(), positive, rank)


def rank_user(user: int, split: InteractionSplit, user_emb: np.ndarray, recipe_emb: np.ndarray,
              pred: ScorePredictor) -> RankedList:
    if user not in split.test or user not in split.negatives:
        raise ContractError(f"user {user} has no held-out item")
    if user >= user_emb.shape[0]:
        raise ContractError(f"no embedding for user {user}")
    pos = split.test[user]
    cands = np.array([pos] + list(split.negatives[user]), dtype=np.int64)
    if cands.max() >= recipe_emb.shape[0]:
        raise ContractError(f"no embedding for recipe {int(cands.max())}")
    scores = pred.score_matrix(user_emb[user : user + 1], recipe_emb[cands])[0]
    return rank_candidates(user, pos, cands, scores)


def metrics_at_k(lists: list[RankedList], k: int) -> tuple[float, float, float, float]:
    """Mean (precision, hit rate, NDCG, MAP) at ``k`` with one relevant item per list."""
    if not lists:
        raise ContractError("no ranked lists to evaluate")
    if k < 1:
        raise ContractError(f"K must be >= 1, got {k}")
    pre = hr = ndcg = ap = 0.0
    for rl in lists:
        if rl.rank <= k:
            hr += 1.0
            pre += 1.0 / k
            ndcg += 1.0 / math.log2(rl.rank + 1)
            ap += 1.0 / rl.rank
    n = len(lists)
    return pre / n, hr / n, ndcg / n, ap / n


@dataclass
class MetricReport:
    values: dict[int, dict[str, float]]
    n_users: int

    @classmethod
    def from_lists(cls, lists: list[RankedList], ks=K_VALUES) -> "MetricReport":
        vals = {}
        for k in ks:
            vals[k] = dict(zip(METRICS, metrics_at_k(lists, k)))
        return cls(vals, len(lists))

    def get(self, metric: str, k: int) -> float:
        return self.values[k][metric]

    def to_json(self) -> dict:
        return {"n_users": self.n_users,
                "metrics": {m: {str(k): self.values[k][m] for k in sorted(self.values)}
                            for m in METRICS}}

    @classmethod
    def from_json(cls, obj: dict) -> "MetricReport":
        ks = sorted({int(k) for m in METRICS for k in obj["metrics"][m]})
        vals = {k: {m: float(obj["metrics"][m][str(k)]) for m in METRICS} for k in ks}
        return cls(vals, int(obj["n_users"]))

    def to_text(self) -> str:
        ks = sorted(self.values)
        head = "metric     " + "".join(f"{'@' + str(k):>9}" for k in ks)
        lines = [head, "-" * len(head)]
        for m in METRICS:
            lines.append(f"{m:<11}" + "".join(f"{self.values[k][m]:9.4f}" for k in ks))
        lines.append(f"users: {self.n_users}")
        return "\n".join(lines) + "\n"

    def to_csv(self) -> str:
        buf = io.StringIO()
        w = csv.writer(buf, lineterminator="\n")
        w.writerow(["k"] + list(METRICS))
        for k in sorted(self.values):
            w.writerow([k] + [repr(self.values[k][m]) for m in METRICS])
        return buf.getvalue()

    def write(self, out_dir, stem: str = "report") -> None:
        d = Path(out_dir)
        d.mkdir(parents=True, exist_ok=True)
        (d / f"{stem}.json").write_text(json.dumps(self.to_json(), indent=2, sort_keys=True))
        (d / f"{stem}.txt").write_text(self.to_text())
        (d / f"{stem}.csv").write_text(self.to_csv())


def rank_all(split: InteractionSplit, user_emb: np.ndarray, recipe_emb: np.ndarray,
             pred: ScorePredictor) -> list[RankedList]:
    return [rank_user(u, split, user_emb, recipe_emb, pred) for u in split.eval_users]


def evaluate(g, split: InteractionSplit, model) -> MetricReport:
    """Encode the full graph once and report metrics at K = 1..10."""
    users, recipes = model.embed_arrays(g)
    return MetricReport.from_lists(rank_all(split, users, recipes, model.predictor))
