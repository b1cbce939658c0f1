"""Heterogeneous user-recipe-ingredient graph: storage, I/O, splits and augmentation."""

from __future__ import annotations

import csv
import enum
import hashlib
import json
import logging
from dataclasses import dataclass, field
from pathlib import Path
from typing import Iterable, Mapping

import numpy as np

from .tensor import ContractError

log = logging.getLogger(__name__)


class GraphLoadError(ValueError):
    pass


class SamplingError(RuntimeError):
    pass


class NodeType(str, enum.Enum):
    USER = "user"
    RECIPE = "recipe"
    INGREDIENT = "ingredient"


NODE_TYPES = (NodeType.USER, NodeType.RECIPE, NodeType.INGREDIENT)


class RelationType(str, enum.Enum):
    USER_RECIPE = "user-recipe"
    RECIPE_RECIPE = "recipe-recipe"
    RECIPE_INGREDIENT = "recipe-ingredient"
    INGREDIENT_INGREDIENT = "ingredient-ingredient"

    @property
    def src_type(self) -> NodeType:
        return NodeType(self.value.split("-")[0])

    @property
    def dst_type(self) -> NodeType:
        return NodeType(self.value.split("-")[1])

    @property
    def symmetric(self) -> bool:
        return self.src_type is self.dst_type

    def touches(self, t: NodeType) -> bool:
        return t is self.src_type or t is self.dst_type


RELATIONS = (
    RelationType.USER_RECIPE,
    RelationType.RECIPE_RECIPE,
    RelationType.RECIPE_INGREDIENT,
    RelationType.INGREDIENT_INGREDIENT,
)

# named random streams; mixed into every seed so streams never collide
STREAM_INIT = 1
STREAM_SPLIT = 2
STREAM_NEGATIVES = 3
STREAM_AUGMENT = 4
STREAM_BATCH = 5


def stream_rng(seed: int, stream: int, *extra: int) -> np.random.Generator:
    return np.random.default_rng([int(seed), int(stream), *map(int, extra)])


@dataclass
class _Messages:
    dst: np.ndarray  # global node index receiving the message
    src: np.ndarray  # global node index sending it
    weight: np.ndarray
    edge: np.ndarray  # index into the stored edge arrays


class HeteroGraph:
    """Typed nodes, typed weighted edges and per-type feature matrices.

    Symmetric relations are stored with both directions present. Node ids are
    dense and 0-based per type; :meth:`global_index` maps them into one
    stacked index space ordered user, recipe, ingredient.
    """

    def __init__(
        self,
        counts: Mapping[NodeType, int],
        edges: Mapping[RelationType, tuple[np.ndarray, np.ndarray, np.ndarray]],
        features: Mapping[NodeType, np.ndarray | None],
    ):
        self.counts = {t: int(counts.get(t, 0)) for t in NODE_TYPES}
        self.src: dict[RelationType, np.ndarray] = {}
        self.dst: dict[RelationType, np.ndarray] = {}
        self.weight: dict[RelationType, np.ndarray] = {}
        for rel in RELATIONS:
            s, d, w = edges.get(rel, (np.zeros(0), np.zeros(0), np.zeros(0)))
            s, d, w = _dedupe(np.asarray(s, np.int64), np.asarray(d, np.int64),
                              np.asarray(w, np.float64), rel.symmetric)
            self.src[rel], self.dst[rel], self.weight[rel] = s, d, w
        self.features = {t: (None if features.get(t) is None
                             else np.asarray(features[t], dtype=np.float64))
                         for t in NODE_TYPES}
        self.offsets = {
            NodeType.USER: 0,
            NodeType.RECIPE: self.counts[NodeType.USER],
            NodeType.INGREDIENT: self.counts[NodeType.USER] + self.counts[NodeType.RECIPE],
        }
        self.num_nodes = sum(self.counts.values())
        self._check()
        self._messages = {rel: self._build_messages(rel) for rel in RELATIONS}
        self._adj_cache: dict[tuple[NodeType, RelationType], list] = {}

    def _check(self) -> None:
        for rel in RELATIONS:
            s, d = self.src[rel], self.dst[rel]
            for ids, t, end in ((s, rel.src_type, "src"), (d, rel.dst_type, "dst")):
                if ids.size and (ids.min() < 0 or ids.max() >= self.counts[t]):
                    raise GraphLoadError(f"{rel.value}: {end} id out of range for {t.value}")
        for t, x in self.features.items():
            if x is not None and (x.ndim != 2 or x.shape[0] != self.counts[t]):
                raise GraphLoadError(
                    f"{t.value} features: expected {self.counts[t]} rows, got shape {x.shape}")

    def _build_messages(self, rel: RelationType) -> _Messages:
        s, d, w = self.src[rel], self.dst[rel], self.weight[rel]
        gs = s + self.offsets[rel.src_type]
        gd = d + self.offsets[rel.dst_type]
        eid = np.arange(s.size)
        if rel.symmetric:
            return _Messages(gd, gs, w, eid)
        # bipartite: messages flow both ways over the same stored edge
        return _Messages(np.concatenate([gd, gs]), np.concatenate([gs, gd]),
                         np.concatenate([w, w]), np.concatenate([eid, eid]))

    # -- queries ---------------------------------------------------------

    def global_index(self, t: NodeType, ids) -> np.ndarray:
        return np.asarray(ids, dtype=np.int64) + self.offsets[t]

    def node_type_of(self, gid: int) -> NodeType:
        for t in reversed(NODE_TYPES):
            if gid >= self.offsets[t]:
                return t
        raise IndexError(gid)

    def type_vector(self) -> np.ndarray:
        """Per global node: 0 user, 1 recipe, 2 ingredient."""
        return np.repeat(np.arange(3), [self.counts[t] for t in NODE_TYPES])

    def num_edges(self, rel: RelationType) -> int:
        """Edge count; symmetric relations count each unordered pair once."""
        s, d = self.src[rel], self.dst[rel]
        if rel.symmetric:
            return int(np.sum(s < d) + np.sum(s == d))
        return int(s.size)

    def messages(self, rel: RelationType) -> _Messages:
        return self._messages[rel]

    def edge_set(self, rel: RelationType) -> set[tuple[int, int, float]]:
        return set(zip(self.src[rel].tolist(), self.dst[rel].tolist(), self.weight[rel].tolist()))

    def user_items(self) -> list[np.ndarray]:
        rel = RelationType.USER_RECIPE
        out = [[] for _ in range(self.counts[NodeType.USER])]
        for u, r in zip(self.src[rel].tolist(), self.dst[rel].tolist()):
            out[u].append(r)
        return [np.array(sorted(set(x)), dtype=np.int64) for x in out]

    def recipe_ingredients(self) -> list[np.ndarray]:
        rel = RelationType.RECIPE_INGREDIENT
        out = [[] for _ in range(self.counts[NodeType.RECIPE])]
        for r, i in zip(self.src[rel].tolist(), self.dst[rel].tolist()):
            out[r].append(i)
        return [np.array(sorted(x), dtype=np.int64) for x in out]

    def summary(self) -> dict:
        return {
            "nodes": {t.value: self.counts[t] for t in NODE_TYPES},
            "edges": {rel.value: self.num_edges(rel) for rel in RELATIONS},
            "feature_dims": {t.value: (None if x is None else int(x.shape[1]))
                             for t, x in self.features.items()},
        }

    def full_view(self) -> "GraphView":
        return GraphView(
            base=self,
            node_keep={t: np.ones(self.counts[t], dtype=bool) for t in NODE_TYPES},
            edge_draw={rel: np.ones(self.src[rel].size, dtype=bool) for rel in RELATIONS},
            seed=None,
        )


def _dedupe(s, d, w, symmetric):
    """Sort edges and drop repeats, keeping the first occurrence's weight.

    Symmetric relations are reduced to unordered pairs first, then mirrored.
    """
    if not s.size:
        return s, d, w
    if symmetric:
        s, d = np.minimum(s, d), np.maximum(s, d)
    order = np.lexsort((d, s))  # stable: first occurrence leads its run
    s, d, w = s[order], d[order], w[order]
    keep = np.ones(s.size, dtype=bool)
    keep[1:] = (s[1:] != s[:-1]) | (d[1:] != d[:-1])
    s, d, w = s[keep], d[keep], w[keep]
    if symmetric:
        loop = s == d
        s, d, w = (np.concatenate([s, d[~loop]]), np.concatenate([d, s[~loop]]),
                   np.concatenate([w, w[~loop]]))
        order = np.lexsort((d, s))
        s, d, w = s[order], d[order], w[order]
    return s, d, w


@dataclass
class GraphView:
    """A stochastic view of a graph produced by node and edge dropout.

    ``edge_draw`` records the raw edge-dropout coin flips; ``edge_keep`` also
    removes edges incident to dropped nodes.
    """

    base: HeteroGraph
    node_keep: dict[NodeType, np.ndarray]
    edge_draw: dict[RelationType, np.ndarray]
    seed: int | None
    edge_keep: dict[RelationType, np.ndarray] = field(init=False)

    def __post_init__(self):
        g = self.base
        self.edge_keep = {}
        for rel in RELATIONS:
            keep = (self.edge_draw[rel]
                    & self.node_keep[rel.src_type][g.src[rel]]
                    & self.node_keep[rel.dst_type][g.dst[rel]])
            self.edge_keep[rel] = keep
        self._messages: dict[RelationType, _Messages] = {}

    @property
    def counts(self):
        return self.base.counts

    @property
    def num_nodes(self) -> int:
        return self.base.num_nodes

    def messages(self, rel: RelationType) -> _Messages:
        if rel not in self._messages:
            m = self.base.messages(rel)
            k = self.edge_keep[rel][m.edge]
            self._messages[rel] = _Messages(m.dst[k], m.src[k], m.weight[k], m.edge[k])
        return self._messages[rel]

    def kept_edges(self, rel: RelationType) -> tuple[np.ndarray, np.ndarray, np.ndarray]:
        k = self.edge_keep[rel]
        g = self.base
        return g.src[rel][k], g.dst[rel][k], g.weight[rel][k]

    def is_identity(self) -> bool:
        return all(v.all() for v in self.node_keep.values()) and all(
            v.all() for v in self.edge_keep.values())


def as_view(g: HeteroGraph | GraphView) -> GraphView:
    return g if isinstance(g, GraphView) else g.full_view()


# ---------------------------------------------------------------------------
# neighbours


def neighbors(g: HeteroGraph | GraphView, node_type: NodeType, node: int,
              relation: RelationType) -> list[tuple[int, float]]:
    """Neighbours of ``node`` under ``relation`` as ``(id, weight)``, ascending id."""
    node_type = NodeType(node_type)
    relation = RelationType(relation)
    if not relation.touches(node_type):
        raise ContractError(f"relation {relation.value} is not incident to {node_type.value} nodes")
    view = as_view(g)
    base = view.base
    if not 0 <= node < base.counts[node_type]:
        raise ContractError(f"{node_type.value} id {node} out of range")
    s, d, w = base.src[relation], base.dst[relation], base.weight[relation]
    keep = view.edge_keep[relation]
    found: dict[int, float] = {}
    if relation.src_type is node_type:
        sel = (s == node) & keep
        found.update(zip(d[sel].tolist(), w[sel].tolist()))
    if relation.dst_type is node_type and not relation.symmetric:
        sel = (d == node) & keep
        found.update(zip(s[sel].tolist(), w[sel].tolist()))
    return sorted(found.items())


# ---------------------------------------------------------------------------
# file I/O

_NODE_FILE = "nodes.csv"
_EDGE_FILE = "edges.csv"


def _feature_name(t: NodeType) -> str:
    return f"features_{t.value}.csv"


def load_graph(node_files: Iterable[str | Path], edge_files: Iterable[str | Path],
               feature_files: Mapping[NodeType | str, str | Path] | Iterable[str | Path]) -> HeteroGraph:
    """Read the CSV schemas into a validated :class:`HeteroGraph`."""
    seen: dict[NodeType, set[int]] = {t: set() for t in NODE_TYPES}
    for path in node_files:
        with open(path, newline="") as fh:
            rows = csv.reader(fh)
            _expect_header(path, next(rows, None), ["node_id", "node_type"])
            for lineno, row in enumerate(rows, start=2):
                if not row:
                    continue
                try:
                    nid, t = int(row[0]), NodeType(row[1].strip())
                except (ValueError, IndexError) as exc:
                    raise GraphLoadError(f"{path}:{lineno}: bad node row {row!r}") from exc
                seen[t].add(nid)
    counts = {}
    for t, ids in seen.items():
        if ids and ids != set(range(len(ids))):
            raise GraphLoadError(f"{t.value} node ids are not dense 0..{len(ids) - 1}")
        counts[t] = len(ids)

    buf: dict[RelationType, tuple[list, list, list]] = {r: ([], [], []) for r in RELATIONS}
    for path in edge_files:
        with open(path, newline="") as fh:
            rows = csv.reader(fh)
            _expect_header(path, next(rows, None), ["relation", "src_id", "dst_id", "weight"])
            for lineno, row in enumerate(rows, start=2):
                if not row:
                    continue
                try:
                    rel = RelationType(row[0].strip())
                    s, d, w = int(row[1]), int(row[2]), float(row[3])
                except (ValueError, IndexError) as exc:
                    raise GraphLoadError(f"{path}:{lineno}: bad edge row {row!r}") from exc
                if not (0 <= s < counts[rel.src_type] and 0 <= d < counts[rel.dst_type]):
                    raise GraphLoadError(
                        f"{path}:{lineno}: dangling {rel.value} edge {s}->{d} "
                        f"({rel.src_type.value}s: {counts[rel.src_type]}, "
                        f"{rel.dst_type.value}s: {counts[rel.dst_type]})")
                bs, bd, bw = buf[rel]
                bs.append(s)
                bd.append(d)
                bw.append(w)
    edges = {r: tuple(np.array(x) for x in v) for r, v in buf.items()}

    if not isinstance(feature_files, Mapping):
        feature_files = {_type_from_filename(p): p for p in feature_files}
    features: dict[NodeType, np.ndarray | None] = {t: None for t in NODE_TYPES}
    for t, path in feature_files.items():
        t = NodeType(t)
        features[t] = _load_features(path, counts[t])
    g = HeteroGraph(counts, edges, features)
    log.info("loaded graph %s", g.summary())
    return g


def _type_from_filename(path) -> NodeType:
    stem = Path(path).stem
    for t in NODE_TYPES:
        if stem.endswith(t.value):
            return t
    raise GraphLoadError(f"{path}: cannot tell node type from file name")


def _expect_header(path, header, expected):
    if header is None or [h.strip() for h in header[: len(expected)]] != expected:
        raise GraphLoadError(f"{path}:1: expected header {','.join(expected)}, got {header}")


def _load_features(path, n: int) -> np.ndarray:
    rows: dict[int, list[float]] = {}
    width = None
    with open(path, newline="") as fh:
        reader = csv.reader(fh)
        header = next(reader, None)
        if header is None or header[0].strip() != "node_id":
            raise GraphLoadError(f"{path}:1: expected header node_id,f_0,...")
        for lineno, row in enumerate(reader, start=2):
            if not row:
                continue
            if width is None:
                width = len(row) - 1
            elif len(row) - 1 != width:
                raise GraphLoadError(
                    f"{path}:{lineno}: feature dimension {len(row) - 1} differs from {width}")
            try:
                rows[int(row[0])] = [float(v) for v in row[1:]]
            except ValueError as exc:
                raise GraphLoadError(f"{path}:{lineno}: bad feature row") from exc
    missing = set(range(n)) - set(rows)
    if missing:
        raise GraphLoadError(f"{path}: missing feature rows for ids {sorted(missing)[:5]}")
    extra = set(rows) - set(range(n))
    if extra:
        raise GraphLoadError(f"{path}: feature rows for unknown ids {sorted(extra)[:5]}")
    return np.array([rows[i] for i in range(n)], dtype=np.float64).reshape(n, width or 0)


def dataset_files(data_dir: str | Path) -> dict[str, list[Path] | dict[NodeType, Path]]:
    d = Path(data_dir)
    feats = {t: d / _feature_name(t) for t in NODE_TYPES if (d / _feature_name(t)).exists()}
    return {"nodes": [d / _NODE_FILE], "edges": [d / _EDGE_FILE], "features": feats}


def load_dataset(data_dir: str | Path) -> HeteroGraph:
    f = dataset_files(data_dir)
    for p in f["nodes"] + f["edges"]:
        if not p.exists():
            raise GraphLoadError(f"missing {p}")
    return load_graph(f["nodes"], f["edges"], f["features"])


def dataset_fingerprint(data_dir: str | Path) -> dict[str, str]:
    out = {}
    for p in sorted(Path(data_dir).glob("*.csv")):
        out[p.name] = hashlib.sha256(p.read_bytes()).hexdigest()
    return out


def _fmt(x: float) -> str:
    return repr(float(x))


def save_graph(g: HeteroGraph, out_dir: str | Path) -> None:
    """Write ``g`` in the CSV schemas; symmetric relations are written once per pair."""
    d = Path(out_dir)
    d.mkdir(parents=True, exist_ok=True)
    with open(d / _NODE_FILE, "w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(["node_id", "node_type"])
        for t in NODE_TYPES:
            for i in range(g.counts[t]):
                w.writerow([i, t.value])
    with open(d / _EDGE_FILE, "w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(["relation", "src_id", "dst_id", "weight"])
        for rel in RELATIONS:
            for s, t_, wt in zip(g.src[rel].tolist(), g.dst[rel].tolist(), g.weight[rel].tolist()):
                if rel.symmetric and s > t_:
                    continue
                w.writerow([rel.value, s, t_, _fmt(wt)])
    for t in NODE_TYPES:
        x = g.features[t]
        if x is None:
            continue
        with open(d / _feature_name(t), "w", newline="") as fh:
            w = csv.writer(fh, lineterminator="\n")
            w.writerow(["node_id"] + [f"f_{k}" for k in range(x.shape[1])])
            for i, row in enumerate(x.tolist()):
                w.writerow([i] + [_fmt(v) for v in row])


# ---------------------------------------------------------------------------
# leave-one-out split and negatives


@dataclass
class InteractionSplit:
    n_recipes: int
    train: list[np.ndarray]  # per user, sorted recipe ids
    test: dict[int, int]
    negatives: dict[int, list[int]]
    seed: int
    excluded: list[int] = field(default_factory=list)

    @property
    def eval_users(self) -> list[int]:
        return sorted(self.test)

    def train_pairs(self) -> np.ndarray:
        pairs = [(u, r) for u, items in enumerate(self.train) for r in items.tolist()]
        return np.array(pairs, dtype=np.int64).reshape(-1, 2)

    def to_json(self) -> dict:
        return {
            "seed": self.seed,
            "n_recipes": self.n_recipes,
            "test": [[u, self.test[u]] for u in self.eval_users],
            "negatives": {str(u): list(self.negatives[u]) for u in self.eval_users},
            "excluded_users": self.excluded,
            "exclusion_rule": "users with fewer than 2 interactions are not evaluated",
        }

    def save(self, path: str | Path) -> None:
        Path(path).write_text(json.dumps(self.to_json()))

    @classmethod
    def from_json(cls, obj: dict, g: HeteroGraph) -> "InteractionSplit":
        test = {int(u): int(r) for u, r in obj["test"]}
        negs = {int(u): [int(x) for x in v] for u, v in obj["negatives"].items()}
        n_users, n_rec = g.counts[NodeType.USER], g.counts[NodeType.RECIPE]
        if int(obj["n_recipes"]) != n_rec:
            raise ContractError(f"split was made for {obj['n_recipes']} recipes, graph has {n_rec}")
        items = g.user_items()
        for u, r in test.items():
            if not 0 <= u < n_users or not _contains(items[u], r):
                raise ContractError(f"split holds out ({u}, {r}), which is not an interaction of this graph")
        train = [np.array([r for r in its.tolist() if r != test.get(u)], dtype=np.int64)
                 for u, its in enumerate(items)]
        return cls(g.counts[NodeType.RECIPE], train, test, negs, int(obj["seed"]),
                   [int(u) for u in obj.get("excluded_users", [])])

    @classmethod
    def load(cls, path: str | Path, g: HeteroGraph) -> "InteractionSplit":
        return cls.from_json(json.loads(Path(path).read_text()), g)


def leave_one_out_split(g: HeteroGraph, seed: int, n_negatives: int = 100) -> InteractionSplit:
    """Hold out one uniformly chosen interaction per user with at least two.

    Evaluation negatives are drawn once here and frozen with the split.
    """
    rng = stream_rng(seed, STREAM_SPLIT)
    n_rec = g.counts[NodeType.RECIPE]
    train, test, negatives, excluded = [], {}, {}, []
    for u, items in enumerate(g.user_items()):
        if items.size < 2:
            train.append(items)
            excluded.append(u)
            continue
        pick = int(rng.integers(items.size))
        pool = np.setdiff1d(np.arange(n_rec), items, assume_unique=True)
        if pool.size < n_negatives:
            log.warning("user %d: only %d candidate negatives, not evaluated", u, pool.size)
            train.append(items)
            excluded.append(u)
            continue
        test[u] = int(items[pick])
        train.append(np.delete(items, pick))
        negatives[u] = sorted(rng.choice(pool, size=n_negatives, replace=False).tolist())
    return InteractionSplit(n_rec, train, test, negatives, seed, excluded)


def sample_training_negative(split: InteractionSplit, user: int, rng: np.random.Generator) -> int:
    """A recipe drawn uniformly from those absent from ``user``'s training set."""
    if not 0 <= user < len(split.train):
        raise ContractError(f"unknown user {user}")
    pos = split.train[user]
    if pos.size >= split.n_recipes:
        raise SamplingError(f"user {user} interacted with every recipe; no negative exists")
    while True:
        r = int(rng.integers(split.n_recipes))
        if not _contains(pos, r):
            return r


def sample_training_negatives(split: InteractionSplit, users: np.ndarray,
                              rng: np.random.Generator) -> np.ndarray:
    return np.array([sample_training_negative(split, int(u), rng) for u in users], dtype=np.int64)


def _contains(sorted_arr: np.ndarray, x: int) -> bool:
    i = np.searchsorted(sorted_arr, x)
    return bool(i < sorted_arr.size and sorted_arr[i] == x)


# ---------------------------------------------------------------------------
# augmentation


def augment(g: HeteroGraph, node_drop: float, edge_drop: float, seed: int) -> GraphView:
    """Drop each node with prob ``node_drop`` and each edge with prob ``edge_drop``.

    Undirected pairs of symmetric relations are kept or dropped together.
    """
    if not (0 <= node_drop < 1 and 0 <= edge_drop < 1):
        raise ContractError(f"dropout ratios must lie in [0, 1), got {node_drop}, {edge_drop}")
    rng = np.random.default_rng(seed)
    node_keep = {t: rng.random(g.counts[t]) >= node_drop for t in NODE_TYPES}
    edge_draw = {}
    for rel in RELATIONS:
        s, d = g.src[rel], g.dst[rel]
        if rel.symmetric:
            lo, hi = np.minimum(s, d), np.maximum(s, d)
            pairs, inverse = np.unique(np.stack([lo, hi], axis=1), axis=0, return_inverse=True)
            draw = rng.random(pairs.shape[0]) >= edge_drop
            edge_draw[rel] = draw[inverse.reshape(-1)]
        else:
            edge_draw[rel] = rng.random(s.size) >= edge_drop
    return GraphView(g, node_keep, edge_draw, seed)
