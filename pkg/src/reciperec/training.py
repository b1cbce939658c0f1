"""Epoch loop for the joint ranking + contrastive objective."""

from __future__ import annotations

import logging
import time
from dataclasses import dataclass, field

import numpy as np

from . import tensor as T
from .config import TrainConfig
from .graph import (STREAM_AUGMENT, STREAM_BATCH, STREAM_NEGATIVES, HeteroGraph, InteractionSplit,
                    NodeType, augment, sample_training_negatives, stream_rng)
from .model import RecipeRec
from .objectives import Adam, contrastive_loss, joint_loss, rec_loss

log = logging.getLogger(__name__)


class TrainingDiverged(RuntimeError):
    pass


@dataclass
class EpochStats:
    epoch: int
    loss: list[float] = field(default_factory=list)
    rec: list[float] = field(default_factory=list)
    con: list[float] = field(default_factory=list)
    seconds: float = 0.0

    @property
    def mean_loss(self) -> float:
        return float(np.mean(self.loss)) if self.loss else 0.0

    def to_json(self) -> dict:
        return {"epoch": self.epoch, "loss": self.loss, "rec": self.rec, "con": self.con,
                "mean_loss": self.mean_loss, "seconds": self.seconds}


def view_seed(seed: int, epoch: int, which: int) -> int:
    ss = np.random.SeedSequence([int(seed), STREAM_AUGMENT, int(epoch), int(which)])
    return int(ss.generate_state(1)[0])


def make_optimizer(model: RecipeRec) -> Adam:
    c = model.config
    return Adam(model.parameters(), lr=c.lr, beta1=c.adam_beta1, beta2=c.adam_beta2, eps=c.adam_eps)


def contrastive_batch(users: np.ndarray, recipes: np.ndarray, g: HeteroGraph) -> tuple[np.ndarray, np.ndarray, np.ndarray]:
    """Unique users and recipes of an interaction batch: (user ids, recipe ids, type codes)."""
    u = np.unique(users)
    r = np.unique(recipes)
    types = np.concatenate([np.zeros(u.size, np.int64), np.ones(r.size, np.int64)])
    return u, r, types


def _gather_nodes(emb, u: np.ndarray, r: np.ndarray):
    return T.concat([T.gather_rows(emb.users, u), T.gather_rows(emb.recipes, r)], axis=0)


def train_epoch(g: HeteroGraph, split: InteractionSplit, model: RecipeRec, optimizer: Adam,
                epoch: int) -> EpochStats:
    """One pass over the training interactions.

    Two augmented views are drawn once for the epoch. Each batch encodes the
    clean graph for the ranking loss and both views for the contrastive loss,
    then takes one optimizer step on the joint loss.
    """
    c = model.config
    start = time.perf_counter()
    stats = EpochStats(epoch)
    pairs = split.train_pairs()
    if pairs.shape[0] == 0:
        stats.seconds = time.perf_counter() - start
        return stats
    order = stream_rng(c.seed, STREAM_BATCH, epoch).permutation(pairs.shape[0])
    pairs = pairs[order]
    neg = sample_training_negatives(split, pairs[:, 0], stream_rng(c.seed, STREAM_NEGATIVES, epoch))
    use_con = c.lam > 0
    views = None
    if use_con or c.rec_on_views:
        views = (augment(g, c.node_drop, c.edge_drop, view_seed(c.seed, epoch, 0)),
                 augment(g, c.node_drop, c.edge_drop, view_seed(c.seed, epoch, 1)))

    for lo in range(0, pairs.shape[0], c.batch_size):
        users = pairs[lo : lo + c.batch_size, 0]
        pos = pairs[lo : lo + c.batch_size, 1]
        negs = neg[lo : lo + c.batch_size]
        optimizer.zero_grad()
        e1 = e2 = None
        if views is not None:
            e1, e2 = model.forward(views[0]), model.forward(views[1])
        if c.rec_on_views:
            l_rec = rec_loss(model.predictor, users, pos, negs, e1.users, e1.recipes)
        else:
            clean = model.forward(g)
            l_rec = rec_loss(model.predictor, users, pos, negs, clean.users, clean.recipes)
        l_con = None
        if use_con:
            u, r, types = contrastive_batch(users, pos, g)
            l_con = contrastive_loss(_gather_nodes(e1, u, r), _gather_nodes(e2, u, r), types,
                                     tau=c.tau, similarity=c.contrastive_similarity)
        loss = joint_loss(l_rec, l_con, c.lam)
        value = loss.item()
        if not np.isfinite(value):
            norms = {k: float(np.linalg.norm(p.data)) for k, p in model.parameters().items()}
            T.get_tape().reset()
            raise TrainingDiverged(f"non-finite loss {value} at epoch {epoch}; parameter norms: {norms}")
        T.backward(loss)
        optimizer.step()
        stats.loss.append(value)
        stats.rec.append(l_rec.item())
        stats.con.append(l_con.item() if l_con is not None else 0.0)
    stats.seconds = time.perf_counter() - start
    return stats
