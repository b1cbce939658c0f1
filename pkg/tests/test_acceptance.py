"""End-to-end acceptance criteria, one test per criterion.

Each test prints a single ``PASS``/``FAIL`` line (also repeated in the pytest
terminal summary). Run standalone with ``pytest tests/test_acceptance.py -v -s``.
Criterion 9 needs the published dataset; point ``RECIPEREC_URI_GRAPH`` at its
directory or it is skipped.
"""

from __future__ import annotations

import math
import os
import time
from pathlib import Path

import numpy as np
import pytest

from conftest import ACCEPTANCE_LINES
from reciperec.cli import main
from reciperec.config import SyntheticSpec, TrainConfig
from reciperec.evaluation import K_VALUES, metrics_at_k
from reciperec.graph import NodeType, RelationType, augment, load_dataset
from reciperec.objectives import contrastive_loss, similarity_matrix
from reciperec.runner import train_run
from reciperec.selfcheck import (attention_row_sums, brute_force_metrics, check_model_gradients,
                                 check_op_gradients, permutation_deviation, random_ranked_lists)
from reciperec.synth import generate
from reciperec.toy import toy_setup

ABLATION_SEEDS = range(5)
URI_DIR = Path(os.environ.get("RECIPEREC_URI_GRAPH", "/root/data/uri-graph"))


def report(number: int, title: str, passed: bool, detail: str) -> None:
    line = f"{'PASS' if passed else 'FAIL'} [{number}] {title}: {detail}"
    ACCEPTANCE_LINES.append(line)
    print(line)
    assert passed, line


@pytest.fixture(scope="module")
def seed7_graph():
    return generate(SyntheticSpec(seed=7))[0]


@pytest.fixture(scope="module")
def ablation(seed7_graph):
    """HR@10 per training seed for the full model and both ablations, 50 epochs each."""
    variants = {"full": {}, "no-contrastive": {"lam": 0.0}, "mean-fusion": {"relation_fusion": "mean"}}
    hr: dict[str, list[float]] = {}
    seconds: dict[str, list[float]] = {}
    for name, changes in variants.items():
        for seed in ABLATION_SEEDS:
            cfg = TrainConfig(epochs=50, seed=seed, **changes)
            t0 = time.perf_counter()
            res = train_run(cfg, seed7_graph)
            seconds.setdefault(name, []).append(time.perf_counter() - t0)
            hr.setdefault(name, []).append(res.report.get("hr", 10))
    return hr, seconds


def test_criterion_1_gradient_check():
    t0 = time.perf_counter()
    results = check_op_gradients(seed=0) + check_model_gradients(seeds=(0,), sample=None)
    elapsed = time.perf_counter() - t0
    failed = [r.name for r in results if not r.passed]
    detail = (f"{len(results) - len(failed)}/{len(results)} checks under 1e-4 "
              f"({results[-1].observed}), {elapsed:.0f}s")
    if failed:
        detail += f"; failing {failed}"
    report(1, "finite-difference gradients", not failed and elapsed < 120, detail)


def test_criterion_2_attention_rows_sum_to_one():
    worst = max(max(attention_row_sums(s)) for s in range(100))
    report(2, "alpha/beta normalisation", worst <= 1e-9, f"max |row sum - 1| = {worst:.1e} over 100 graphs")


def test_criterion_3_permutation_invariance():
    worst = max(permutation_deviation(s) for s in range(100))
    report(3, "set encoder permutation invariance", worst <= 1e-12,
           f"max deviation {worst:.1e} over 100 trials, n <= 6")


def test_criterion_4_metric_oracle():
    lists = random_ranked_lists(np.random.default_rng(4), 1000)
    mismatches = sum(metrics_at_k([rl], k) != brute_force_metrics([rl], k)
                     for k in K_VALUES for rl in lists)
    mismatches += sum(metrics_at_k(lists, k) != brute_force_metrics(lists, k) for k in K_VALUES)
    report(4, "metrics vs brute force", mismatches == 0, f"{mismatches} mismatches, 1000 lists, K=1..10")


def test_criterion_5_synthetic_hr(ablation):
    hr, seconds = ablation
    got, took = hr["full"][0], seconds["full"][0]
    report(5, "seed-7 synthetic HR@10", got >= 0.30 and took < 600,
           f"HR@10 = {got:.3f} (>= 0.30), 50 epochs in {took:.0f}s")


def test_criterion_6_ablation_direction(ablation):
    hr, _ = ablation
    means = {k: float(np.mean(v)) for k, v in hr.items()}
    ok = means["full"] > means["no-contrastive"] and means["full"] > means["mean-fusion"]
    detail = ", ".join(f"{k} {m:.3f} {np.round(hr[k], 3).tolist()}" for k, m in means.items())
    report(6, "ablation direction over 5 seeds", ok, f"mean HR@10: {detail}")


def test_criterion_7_contrastive_sanity():
    g, _, model = toy_setup(0)
    e1 = model.forward(augment(g, 0.0, 0.0, 1)).graph
    e2 = model.forward(augment(g, 0.0, 0.0, 2)).graph
    S = similarity_matrix(e1, e2).data
    row_max_ok = bool(np.all(S.max(axis=1) <= np.diag(S) + 1e-12))
    tau, worst = 0.07, 0.0
    for B in (2, 4, 8, 16):
        closed = -math.log(math.exp(1 / tau) / (math.exp(1 / tau) + B - 1))
        worst = max(worst, abs(contrastive_loss(np.eye(B), np.eye(B), np.zeros(B), tau=tau).item() - B * closed))
    report(7, "identical views and orthogonal closed form", row_max_ok and worst <= 1e-9,
           f"positive is row max: {row_max_ok}; closed-form error {worst:.1e}")


def test_criterion_8_bitwise_reproducible(tmp_path):
    data = tmp_path / "data"
    assert main(["gen-synth", "--out", str(data), "--seed", "7"]) == 0
    for run in ("a", "b"):
        assert main(["train", "--data", str(data), "--out", str(tmp_path / run), "--epochs", "3"]) == 0
    same = {name: (tmp_path / "a" / name).read_bytes() == (tmp_path / "b" / name).read_bytes()
            for name in ("checkpoint.zip", "report.json", "report.txt", "report.csv")}
    report(8, "two train runs bit-identical", all(same.values()),
           ", ".join(f"{k} {'identical' if v else 'DIFFERENT'}" for k, v in same.items()))


URI_NODES = {NodeType.USER: 7958, NodeType.RECIPE: 68794, NodeType.INGREDIENT: 8847}
URI_EDGES = {RelationType.USER_RECIPE: 135353, RelationType.RECIPE_RECIPE: 647146,
             RelationType.RECIPE_INGREDIENT: 463485, RelationType.INGREDIENT_INGREDIENT: 146188}


def test_criterion_9_published_graph():
    if not URI_DIR.is_dir():
        line = f"SKIP [9] published graph counts and smoke train: no dataset at {URI_DIR}"
        ACCEPTANCE_LINES.append(line)
        print(line)
        pytest.skip(f"published dataset not found at {URI_DIR}")
    g = load_dataset(URI_DIR)
    counts_ok = dict(g.counts) == URI_NODES and all(g.src[r].size == n for r, n in URI_EDGES.items())
    res = train_run(TrainConfig(epochs=2), g)
    finite = all(np.isfinite(t["mean_loss"]) for t in res.trace)
    report(9, "published graph counts and smoke train", counts_ok and finite,
           f"counts match: {counts_ok}; finite losses over 2 epochs: {finite}")


if __name__ == "__main__":
    raise SystemExit(pytest.main([__file__, "-v", "-s"]))
