"""Built-in release gate: gradient, attention, invariance and metric checks on toy fixtures."""

from __future__ import annotations

import contextlib
import itertools
import math
import time
from dataclasses import dataclass, field

import numpy as np

from . import tensor as T
from .encoder import EncoderTrace
from .evaluation import K_VALUES, RankedList, metrics_at_k
from .gradcheck import check_gradients, check_ops
from .graph import augment
from .model import RecipeRec
from .settf import SetTransformerParams, encode_recipe_set, encode_sets
from .toy import random_graph, toy_config, toy_joint_loss, toy_setup

GRAD_TOL = 1e-4
SUM_TOL = 1e-9
PERM_TOL = 1e-12


@dataclass
class CheckResult:
    name: str
    passed: bool
    observed: str
    expected: str

    def line(self) -> str:
        status = "PASS" if self.passed else "FAIL"
        return f"{status} {self.name}: observed {self.observed}, expected {self.expected}"


@dataclass
class SelfCheckReport:
    results: list[CheckResult] = field(default_factory=list)
    seconds: float = 0.0

    @property
    def passed(self) -> bool:
        return all(r.passed for r in self.results)

    @property
    def failures(self) -> list[CheckResult]:
        return [r for r in self.results if not r.passed]

    def to_text(self) -> str:
        lines = [r.line() for r in self.results]
        n_fail = len(self.failures)
        lines.append(f"{len(self.results) - n_fail}/{len(self.results)} checks passed "
                     f"in {self.seconds:.1f}s")
        return "\n".join(lines)


def check_op_gradients(seed: int = 0, tol: float = GRAD_TOL) -> list[CheckResult]:
    errs = check_ops(np.random.default_rng(seed))
    return [CheckResult(f"gradient/op/{name}", err < tol, f"rel err {err:.2e}", f"< {tol:g}")
            for name, err in errs.items()]


def check_model_gradients(seeds=(0,), sample: int | None = 3,
                          tol: float = GRAD_TOL) -> list[CheckResult]:
    """Joint-loss gradients of a tiny model on a <=10-node graph, every parameter tensor."""
    out = []
    for seed in seeds:
        g, _, model = toy_setup(seed)
        f = toy_joint_loss(g, model, seed)
        errs = check_gradients(f, model.parameters(), sample=sample,
                               rng=np.random.default_rng(seed))
        worst = max(errs, key=errs.get)
        bad = sorted(k for k, v in errs.items() if not v < tol)
        observed = f"max rel err {errs[worst]:.2e} at {worst}"
        if bad:
            observed += f"; failing: {', '.join(bad)}"
        out.append(CheckResult(f"gradient/joint-loss/seed={seed}", not bad, observed, f"< {tol:g}"))
    return out


def attention_row_sums(seed: int) -> tuple[float, float]:
    """Worst deviation from 1 of alpha and beta row sums for one random toy graph and model."""
    rng = np.random.default_rng(seed)
    g = random_graph(rng, int(rng.integers(1, 4)), int(rng.integers(1, 5)),
                     int(rng.integers(1, 4)), p=float(rng.uniform(0.2, 0.9)))
    model = RecipeRec.init(g, toy_config(seed=seed))
    view = augment(g, 0.3, 0.3, seed) if seed % 2 else g
    trace = EncoderTrace()
    with T.no_grad():
        model.forward(view, trace)
    a_dev = b_dev = 0.0
    for dst, _, alpha in trace.alpha.values():
        sums = np.zeros((g.num_nodes, alpha.shape[1]))
        np.add.at(sums, dst, alpha)
        a_dev = max(a_dev, float(np.max(np.abs(sums[np.unique(dst)] - 1.0))))
    for layer, beta in trace.beta.items():
        rows = trace.active[layer].any(axis=1)
        if rows.any():
            b_dev = max(b_dev, float(np.max(np.abs(beta[rows].sum(axis=1) - 1.0))))
    return a_dev, b_dev


def check_attention_normalization(n_graphs: int = 100, tol: float = SUM_TOL) -> list[CheckResult]:
    a_dev = b_dev = 0.0
    for s in range(n_graphs):
        a, b = attention_row_sums(s)
        a_dev, b_dev = max(a_dev, a), max(b_dev, b)
    return [CheckResult("attention/alpha-rows", a_dev <= tol, f"max |sum-1| {a_dev:.1e}", f"<= {tol:g}"),
            CheckResult("attention/beta-rows", b_dev <= tol, f"max |sum-1| {b_dev:.1e}", f"<= {tol:g}")]


def permutation_deviation(seed: int, max_n: int = 6, d: int = 4, heads: int = 2) -> float:
    """Largest change of the set encoding over all row orders of one random set."""
    rng = np.random.default_rng(seed)
    n = int(rng.integers(1, max_n + 1))
    p = SetTransformerParams.init(d, d, heads, rng)
    for t in p.tensors.values():
        t.data = rng.normal(0.0, 1.0, size=t.shape)
    X = rng.normal(0.0, 1.0, size=(n, d))
    perms = np.array(list(itertools.permutations(range(n))))
    with T.no_grad():
        ref = encode_recipe_set(X, p).data
        batch = encode_sets(X[perms], np.ones(perms.shape, dtype=bool), p).data
    return float(np.max(np.abs(batch - ref)))


def check_permutation_invariance(trials: int = 100, tol: float = PERM_TOL) -> list[CheckResult]:
    dev = max(permutation_deviation(s) for s in range(trials))
    return [CheckResult("set-transformer/permutation-invariance", dev <= tol,
                        f"max deviation {dev:.1e}", f"<= {tol:g}")]


def brute_force_metrics(lists: list[RankedList], k: int) -> tuple[float, float, float, float]:
    """Precision, HR, NDCG and MAP at ``k`` computed from their definitions over the top-k list."""
    pre = hr = ndcg = ap = 0.0
    for rl in lists:
        rel = [1 if c == rl.positive else 0 for c in rl.candidates[:k]]
        n_rel = sum(rel)
        pre += n_rel / k
        hr += 1.0 if n_rel > 0 else 0.0
        dcg = sum(r / math.log2(i + 2) for i, r in enumerate(rel))
        ndcg += dcg / 1.0  # ideal DCG with one relevant item
        hits, s = 0, 0.0
        for i, r in enumerate(rel):
            if r:
                hits += 1
                s += hits / (i + 1)
        ap += s / 1.0  # one relevant item
    n = len(lists)
    return pre / n, hr / n, ndcg / n, ap / n


def random_ranked_lists(rng: np.random.Generator, n_lists: int, n_candidates: int = 101) -> list[RankedList]:
    lists = []
    for u in range(n_lists):
        cands = rng.permutation(1000)[:n_candidates].tolist()
        rank = int(rng.integers(1, n_candidates + 1))
        lists.append(RankedList(u, cands, cands[rank - 1], rank))
    return lists


def check_metric_oracle(n_lists: int = 1000, seed: int = 0) -> list[CheckResult]:
    rng = np.random.default_rng(seed)
    mismatches = []
    # one list per trial, then all of them pooled
    lists = random_ranked_lists(rng, n_lists)
    groups = [[rl] for rl in lists] + [lists]
    for grp in groups:
        for k in K_VALUES:
            if metrics_at_k(grp, k) != brute_force_metrics(grp, k):
                mismatches.append((grp[0].user, k))
    return [CheckResult("metrics/brute-force-oracle", not mismatches,
                        f"{len(mismatches)} mismatches", "0 (exact equality)")]


def run_selfcheck(full_gradients: bool = False, corrupt: str | None = None) -> SelfCheckReport:
    """Run every check. ``corrupt`` names an op whose backward is deliberately scaled."""
    start = time.perf_counter()
    report = SelfCheckReport()
    guard = T.corrupt_gradient(corrupt, 1.5) if corrupt else contextlib.nullcontext()
    with guard:
        report.results += check_op_gradients()
        report.results += check_model_gradients(sample=None if full_gradients else 3)
    report.results += check_attention_normalization()
    report.results += check_permutation_invariance()
    report.results += check_metric_oracle()
    report.seconds = time.perf_counter() - start
    return report
