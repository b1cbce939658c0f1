import math

import numpy as np
import pytest

from reciperec.evaluation import (K_VALUES, METRICS, MetricReport, RankedList, evaluate,
                                  metrics_at_k, rank_candidates, rank_user)
from reciperec.graph import InteractionSplit, leave_one_out_split
from reciperec.model import RecipeRec
from reciperec.objectives import ScorePredictor
from reciperec.selfcheck import brute_force_metrics, random_ranked_lists
from reciperec.tensor import ContractError
from reciperec.toy import toy_config


def at_rank(r, n=101):
    cands = list(range(n))
    return RankedList(0, cands, cands[r - 1], r)


def test_rank_one_gives_all_ones():
    assert metrics_at_k([at_rank(1)], 1) == (1.0, 1.0, 1.0, 1.0)


def test_rank_three_at_five():
    pre, hr, ndcg, ap = metrics_at_k([at_rank(3)], 5)
    assert hr == 1.0 and math.isclose(pre, 0.2) and ndcg == 0.5 and math.isclose(ap, 1 / 3)


def test_miss_is_all_zero():
    assert metrics_at_k([at_rank(7)], 5) == (0.0, 0.0, 0.0, 0.0)


def test_metrics_equal_brute_force_exactly():
    rng = np.random.default_rng(5)
    lists = random_ranked_lists(rng, 1000)
    for k in K_VALUES:
        for rl in lists:
            assert metrics_at_k([rl], k) == brute_force_metrics([rl], k)
        assert metrics_at_k(lists, k) == brute_force_metrics(lists, k)


def test_empty_and_bad_k():
    with pytest.raises(ContractError):
        metrics_at_k([], 3)
    with pytest.raises(ContractError):
        metrics_at_k([at_rank(1)], 0)


def test_rank_positive_strictly_highest():
    rl = rank_candidates(0, 5, np.array([5, 1, 2]), np.array([9.0, 1.0, 2.0]))
    assert rl.rank == 1 and rl.candidates == [5, 2, 1]


def test_ties_break_by_ascending_id():
    rl = rank_candidates(0, 7, np.array([7, 3, 9, 1]), np.zeros(4))
    assert rl.candidates == [1, 3, 7, 9] and rl.rank == 3
    again = rank_candidates(0, 7, np.array([9, 1, 7, 3]), np.zeros(4))
    assert again.candidates == rl.candidates


def test_random_embeddings_give_uniform_rank():
    rng = np.random.default_rng(21)
    n_users, n_rec = 1000, 400
    negatives, test = {}, {}
    for u in range(n_users):
        cands = rng.choice(n_rec, size=101, replace=False)
        test[u] = int(cands[0])
        negatives[u] = sorted(cands[1:].tolist())
    split = InteractionSplit(n_rec, [np.zeros(0, np.int64)] * n_users, test, negatives, 0)
    U, R = rng.normal(size=(n_users, 8)), rng.normal(size=(n_rec, 8))
    pred = ScorePredictor()
    ranks = [rank_user(u, split, U, R, pred).rank for u in range(n_users)]
    assert abs(np.mean(ranks) - 51) <= 3
    rep = MetricReport.from_lists([rank_user(u, split, U, R, pred) for u in range(n_users)])
    assert abs(rep.get("hr", 10) - 10 / 101) < 0.04


def test_report_identities_and_schema(synth_graph, tmp_path):
    split = leave_one_out_split(synth_graph, 0)
    model = RecipeRec.init(synth_graph, toy_config(hidden=8, heads=2, settf_heads=2))
    rep = evaluate(synth_graph, split, model)
    assert sorted(rep.values) == list(K_VALUES)
    assert all(set(v) == set(METRICS) for v in rep.values.values())
    hr = [rep.get("hr", k) for k in K_VALUES]
    assert all(a <= b for a, b in zip(hr, hr[1:]))
    for k in K_VALUES:
        v = rep.values[k]
        assert math.isclose(v["precision"], v["hr"] / k, rel_tol=1e-12)
        assert v["map"] <= v["ndcg"] + 1e-15 <= v["hr"] + 2e-15
    assert evaluate(synth_graph, split, model).to_json() == rep.to_json()
    rep.write(tmp_path)
    assert MetricReport.from_json(rep.to_json()).to_json() == rep.to_json()
    assert (tmp_path / "report.txt").read_text().count("\n") == 7
    assert len((tmp_path / "report.csv").read_text().splitlines()) == 11


def test_rank_user_without_test_item():
    split = InteractionSplit(3, [np.array([0])], {}, {}, 0)
    with pytest.raises(ContractError):
        rank_user(0, split, np.zeros((1, 2)), np.zeros((3, 2)), ScorePredictor())
