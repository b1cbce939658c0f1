"""Score predictors, ranking and contrastive losses, and the Adam optimizer."""

from __future__ import annotations

import logging

import numpy as np

from . import tensor as T
from .encoder import param, xavier
from .tensor import ContractError, DimensionError, Tensor

log = logging.getLogger(__name__)


def _row_norms(x: Tensor) -> tuple[Tensor, np.ndarray]:
    sq = T.sum(x * x, axis=-1)
    zero = sq.data == 0.0
    # zero rows get a unit norm so cosine with them evaluates to 0 rather than NaN
    return T.sqrt(sq + zero.astype(np.float64)), zero


def l2_normalize(x: Tensor) -> Tensor:
    norms, _ = _row_norms(x)
    return x / T.reshape(norms, norms.shape + (1,))


class ScorePredictor:
    """Pairwise preference score between user and recipe embeddings."""

    def __init__(self, kind: str = "inner_product", dim: int | None = None,
                 hidden: int = 128, rng: np.random.Generator | None = None,
                 tensors: dict[str, Tensor] | None = None):
        if kind not in ("inner_product", "cosine", "mlp"):
            raise ContractError(f"unknown score predictor {kind!r}")
        self.kind = kind
        self.tensors: dict[str, Tensor] = {}
        if kind == "mlp":
            if tensors is not None:
                self.tensors = tensors
            else:
                if dim is None or rng is None:
                    raise ContractError("mlp predictor needs dim and rng")
                self.tensors = {
                    "pred/W1": param(xavier(rng, (2 * dim, hidden), 2 * dim, hidden), "pred/W1"),
                    "pred/b1": param(np.zeros(hidden), "pred/b1"),
                    "pred/W2": param(xavier(rng, (hidden, 1), hidden, 1), "pred/W2"),
                    "pred/b2": param(np.zeros(1), "pred/b2"),
                }

    def __call__(self, hu, hr) -> Tensor:
        return self.score_rows(hu, hr)

    def score_rows(self, hu, hr) -> Tensor:
        """Scores for aligned rows of ``hu`` and ``hr``; 1-D inputs give a scalar."""
        hu, hr = T.as_tensor(hu), T.as_tensor(hr)
        if hu.shape != hr.shape:
            raise DimensionError(f"score operands differ in shape: {hu.shape} vs {hr.shape}")
        single = hu.ndim == 1
        if single:
            hu, hr = T.reshape(hu, (1, -1)), T.reshape(hr, (1, -1))
        if self.kind == "inner_product":
            s = T.sum(hu * hr, axis=1)
        elif self.kind == "cosine":
            nu, zu = _row_norms(hu)
            nr, zr = _row_norms(hr)
            if zu.any() or zr.any():
                log.debug("cosine score against a zero vector; returning 0 for %d pairs",
                          int((zu | zr).sum()))
            s = T.sum(hu * hr, axis=1) / (nu * nr)
        else:
            x = T.concat([hu, hr], axis=1)
            hidden = T.relu(x @ self.tensors["pred/W1"] + self.tensors["pred/b1"])
            s = T.reshape(hidden @ self.tensors["pred/W2"] + self.tensors["pred/b2"], (hu.shape[0],))
        return T.reshape(s, ()) if single else s

    def score_matrix(self, hu: np.ndarray, hr: np.ndarray) -> np.ndarray:
        """All user x candidate scores as plain arrays (no gradient)."""
        with T.no_grad():
            if self.kind == "inner_product":
                return hu @ hr.T
            if self.kind == "cosine":
                nu = np.linalg.norm(hu, axis=1)
                nr = np.linalg.norm(hr, axis=1)
                nu[nu == 0] = 1.0
                nr[nr == 0] = 1.0
                return (hu @ hr.T) / np.outer(nu, nr)
            out = np.empty((hu.shape[0], hr.shape[0]))
            for i in range(hu.shape[0]):
                rows = np.repeat(hu[i : i + 1], hr.shape[0], axis=0)
                out[i] = self.score_rows(rows, hr).data
            return out


def score(pred: ScorePredictor, h_u, h_r) -> float:
    return float(pred.score_rows(h_u, h_r).data)


def hinge_terms(s_pos, s_neg) -> Tensor:
    return T.relu(1.0 - T.as_tensor(s_pos) + s_neg)


def rec_loss(pred: ScorePredictor, users, pos, neg, user_emb: Tensor, recipe_emb: Tensor) -> Tensor:
    """Summed margin ranking loss ``max(0, 1 - s(u, pos) + s(u, neg))``."""
    hu = T.gather_rows(user_emb, users)
    s_pos = pred.score_rows(hu, T.gather_rows(recipe_emb, pos))
    s_neg = pred.score_rows(hu, T.gather_rows(recipe_emb, neg))
    return T.sum(hinge_terms(s_pos, s_neg))


def similarity_matrix(h1: Tensor, h2: Tensor, kind: str = "cosine") -> Tensor:
    if kind == "cosine":
        h1, h2 = l2_normalize(h1), l2_normalize(h2)
    elif kind != "inner_product":
        raise ContractError(f"unknown similarity {kind!r}")
    return h1 @ T.transpose(h2)


def contrastive_loss(h1, h2, node_types, tau: float = 0.07, similarity: str = "cosine") -> Tensor:
    """InfoNCE between two views, summed over the batch.

    Row ``i`` of ``h1`` is pulled toward row ``i`` of ``h2`` and pushed from
    rows of ``h2`` belonging to other nodes of the same type. The denominator
    includes the positive pair.
    """
    h1, h2 = T.as_tensor(h1), T.as_tensor(h2)
    if h1.shape != h2.shape or h1.shape[0] == 0:
        raise ContractError(f"contrastive views must be non-empty and aligned: {h1.shape}, {h2.shape}")
    if not tau > 0:
        raise ContractError(f"temperature must be positive, got {tau}")
    types = np.asarray(node_types)
    same = types[:, None] == types[None, :]
    singletons = same.sum(axis=1) == 1
    if singletons.any():
        log.debug("%d batch nodes have no same-type negatives", int(singletons.sum()))
    logits = T.scale(similarity_matrix(h1, h2, similarity), 1.0 / tau)
    logp = T.log_softmax(logits, mask=same)
    n = h1.shape[0]
    diag = T.getitem(logp, (np.arange(n), np.arange(n)))
    return T.neg(T.sum(diag))


def joint_loss(l_rec: Tensor, l_con: Tensor | None, lam: float) -> Tensor:
    if lam < 0:
        raise ContractError(f"lambda must be non-negative, got {lam}")
    if l_con is None or lam == 0:
        return l_rec
    return l_rec + T.scale(l_con, lam)


class Adam:
    """Adam with bias correction; state is addressable by parameter name."""

    def __init__(self, params: dict[str, Tensor], lr: float = 0.005, beta1: float = 0.9,
                 beta2: float = 0.999, eps: float = 1e-8):
        self.params = params
        self.lr, self.beta1, self.beta2, self.eps = lr, beta1, beta2, eps
        self.t = 0
        self.m = {k: np.zeros_like(p.data) for k, p in params.items()}
        self.v = {k: np.zeros_like(p.data) for k, p in params.items()}

    def zero_grad(self) -> None:
        for p in self.params.values():
            p.zero_grad()

    def step(self) -> None:
        self.t += 1
        b1, b2 = self.beta1, self.beta2
        c1 = 1.0 - b1 ** self.t
        c2 = 1.0 - b2 ** self.t
        for k, p in self.params.items():
            g = p.grad
            m = self.m[k] = b1 * self.m[k] + (1.0 - b1) * g
            v = self.v[k] = b2 * self.v[k] + (1.0 - b2) * g * g
            p.data = p.data - self.lr * (m / c1) / (np.sqrt(v / c2) + self.eps)

    def state(self) -> dict[str, np.ndarray]:
        out = {f"optim/m/{k}": v for k, v in self.m.items()}
        out.update({f"optim/v/{k}": v for k, v in self.v.items()})
        return out

    def load_state(self, arrays: dict[str, np.ndarray], t: int) -> None:
        for k in self.params:
            self.m[k] = arrays[f"optim/m/{k}"].copy()
            self.v[k] = arrays[f"optim/v/{k}"].copy()
        self.t = t
