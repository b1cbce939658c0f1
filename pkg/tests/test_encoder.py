import numpy as np
import pytest

import oracles
from reciperec import tensor as T
from reciperec.encoder import (EncoderOptions, EncoderParams, EncoderTrace, encode,
                               node_level_attention, project_inputs, relation_embeddings,
                               relation_level_attention)
from reciperec.gradcheck import check_gradients
from reciperec.graph import RELATIONS, HeteroGraph, NodeType, RelationType, augment, as_view
from reciperec.selfcheck import attention_row_sums
from reciperec.tensor import ContractError, Tensor
from reciperec.toy import random_graph

U, R, I = NodeType.USER, NodeType.RECIPE, NodeType.INGREDIENT
UR, RR, RI, II = RELATIONS


def make_params(g, seed=42, hidden=4, heads=2, layers=2, spread=1.0):
    rng = np.random.default_rng(seed)
    dims = {t: g.features[t].shape[1] for t in (R, I)}
    p = EncoderParams.init(dims, g.counts[U], hidden=hidden, heads=heads, layers=layers, rng=rng,
                           user_features=g.features[U])
    for t in p.tensors.values():
        t.data = rng.uniform(-spread, spread, size=t.shape)
    return p


def arrays(p):
    return {k: v.data for k, v in p.tensors.items()}


def three_node_graph():
    feats = {U: np.array([[0.3, -0.7]]), R: np.array([[1.0, 0.5, -0.2], [-0.4, 0.8, 0.1]]),
             I: np.zeros((0, 2))}
    edges = {UR: (np.array([0, 0]), np.array([0, 1]), np.array([4.0, 2.0])),
             RR: (np.array([0]), np.array([1]), np.array([0.9]))}
    return HeteroGraph({U: 1, R: 2, I: 0}, edges, feats)


def test_relation_embeddings_match_oracle_on_three_nodes():
    g = three_node_graph()
    p = make_params(g, seed=42)
    h = project_inputs(g, p)
    h_np = oracles.project(g, arrays(p))
    assert np.allclose(h.data, h_np, atol=1e-12)
    for rel in (UR, RR):
        out, active = relation_embeddings(as_view(g), h, p, 0, rel)
        nb = oracles.neighbour_lists(g, rel)
        for i in range(g.num_nodes):
            ref = oracles.relation_node(h_np, i, nb[i], arrays(p), 0, rel, p.heads)
            if ref is None:
                assert not active[i] and np.array_equal(out.data[i], np.zeros(p.hidden))
            else:
                assert np.max(np.abs(out.data[i] - ref)) <= 1e-10


def test_layer_fusion_matches_oracle():
    g = three_node_graph()
    p = make_params(g, seed=42, layers=1)
    got = encode(g, p).data
    ref = oracles.encoder_layer(g, oracles.project(g, arrays(p)), arrays(p), 0, p.heads)
    assert np.max(np.abs(got - ref)) <= 1e-10


@pytest.mark.parametrize("seed", range(5))
def test_full_encode_matches_oracle_on_ten_nodes(seed):
    g = random_graph(np.random.default_rng(seed), 3, 4, 3, p=0.5)
    p = make_params(g, seed=seed)
    got = encode(g, p).data
    ref = oracles.encode(g, arrays(p), p.layers, p.heads)
    assert np.max(np.abs(got - ref)) <= 1e-9


def test_encode_on_view_matches_oracle_with_dropped_edges():
    g = random_graph(np.random.default_rng(3), 3, 4, 3, p=0.7)
    v = augment(g, 0.2, 0.3, 5)
    p = make_params(g, seed=3, layers=1)
    got = encode(v, p).data
    ref = oracles.encoder_layer(g, oracles.project(g, arrays(p)), arrays(p), 0, p.heads,
                                edge_keep=v.edge_keep)
    assert np.max(np.abs(got - ref)) <= 1e-10


def test_single_neighbour_gets_full_attention():
    g = three_node_graph()
    p = make_params(g, seed=1)
    tr = EncoderTrace()
    encode(g, p, trace=tr)
    dst, src, alpha = tr.alpha[(0, RR)]
    assert np.array_equal(alpha, np.ones_like(alpha))


def test_two_identical_neighbours_split_attention():
    feats = {U: np.array([[1.0, 2.0]]), R: np.array([[0.5, 0.5], [0.5, 0.5]]), I: np.zeros((0, 2))}
    g = HeteroGraph({U: 1, R: 2, I: 0}, {UR: (np.array([0, 0]), np.array([0, 1]), np.ones(2))}, feats)
    p = make_params(g, seed=5)
    tr = EncoderTrace()
    encode(g, p, trace=tr)
    dst, src, alpha = tr.alpha[(0, UR)]
    assert np.allclose(alpha[dst == 0], 0.5, atol=1e-15)


def test_single_relation_beta_is_one():
    rng = np.random.default_rng(0)
    H = Tensor(rng.normal(size=(5, 4)))
    p = make_params(random_graph(rng), hidden=4)
    active = np.ones((5, 1), dtype=bool)
    fused, beta = relation_level_attention([H], active, p, 0)
    assert np.array_equal(beta, np.ones((5, 1)))
    assert np.allclose(fused.data, H.data, atol=0)


def test_identical_relations_split_beta_evenly():
    rng = np.random.default_rng(0)
    H = Tensor(rng.normal(size=(5, 4)))
    p = make_params(random_graph(rng), hidden=4)
    fused, beta = relation_level_attention([H, H], np.ones((5, 2), dtype=bool), p, 0)
    assert np.allclose(beta, 0.5, atol=1e-15)


def test_alpha_and_beta_rows_sum_to_one():
    worst = max(max(attention_row_sums(s)) for s in range(100))
    assert worst <= 1e-9


def test_isolated_nodes_pass_through():
    feats = {U: np.ones((2, 3)), R: np.ones((2, 3)), I: np.ones((1, 3))}
    g = HeteroGraph({U: 2, R: 2, I: 1}, {}, feats)
    p = make_params(g, layers=1)
    h0 = project_inputs(g, p).data
    assert np.array_equal(encode(g, p).data, h0)


def test_output_width_is_hidden():
    g = random_graph(np.random.default_rng(2), 3, 4, 3)
    p = make_params(g, hidden=8, heads=4)
    assert encode(g, p).shape == (g.num_nodes, 8)


def test_neighbour_storage_order_does_not_matter():
    rng = np.random.default_rng(9)
    g = random_graph(rng, 3, 5, 4, p=0.6)
    p = make_params(g, seed=9)
    ref = encode(g, p).data
    for trial in range(5):
        edges = {}
        for rel in RELATIONS:
            perm = rng.permutation(g.src[rel].size)
            edges[rel] = (g.src[rel][perm], g.dst[rel][perm], g.weight[rel][perm])
        g2 = HeteroGraph(g.counts, edges, g.features)
        # bypass the canonical sort too: shuffle stored message order directly
        for rel in RELATIONS:
            m = g2._messages[rel]
            perm = rng.permutation(m.dst.size)
            m.dst, m.src, m.weight, m.edge = m.dst[perm], m.src[perm], m.weight[perm], m.edge[perm]
        assert np.max(np.abs(encode(g2, p).data - ref)) <= 1e-12


def test_alpha_shift_invariance():
    e = np.array([0.3, -1.0, 2.0, 0.1, 0.7])
    seg = np.array([0, 0, 0, 1, 1])
    a = T.segment_softmax(Tensor(e), seg, 2).data
    b = T.segment_softmax(Tensor(e + np.where(seg == 0, 5.0, 0.0)), seg, 2).data
    assert np.allclose(a, b, atol=1e-12)


def gat_oracle(h, nbrs, W, a, slope=0.2):
    z = h @ W
    out = np.zeros((h.shape[0], W.shape[1]))
    for i, js in nbrs.items():
        if not js:
            continue
        e = [oracles.leaky(float(a[0, : W.shape[1]] @ z[i] + a[0, W.shape[1]:] @ z[j]), slope) for j in js]
        w = oracles.softmax(e)
        out[i] = np.maximum(sum(wj * z[j] for wj, j in zip(w, js)), 0.0)
    return out


def test_reduces_to_plain_graph_attention_without_interaction_term():
    g = random_graph(np.random.default_rng(4), 3, 4, 3, p=0.6)
    p = make_params(g, heads=1, layers=1)
    for rel in RELATIONS:
        p.rel(0, rel, "W_h").data[:] = 0.0
        p.rel(0, rel, "W_a").data = np.eye(4)
    h = project_inputs(g, p)
    for rel in RELATIONS:
        out, _ = relation_embeddings(as_view(g), h, p, 0, rel)
        ref = gat_oracle(h.data, oracles.neighbour_lists(g, rel), p.rel(0, rel, "W_r").data,
                         p.rel(0, rel, "att").data)
        assert np.max(np.abs(out.data - ref)) <= 1e-12


def test_unweighted_interaction_option_matches_oracle():
    g = random_graph(np.random.default_rng(6), 3, 4, 3, p=0.6)
    p = make_params(g, layers=1)
    h = project_inputs(g, p)
    opts = EncoderOptions(weighted_interaction=False)
    out, _ = relation_embeddings(as_view(g), h, p, 0, UR, opts)
    nb = oracles.neighbour_lists(g, UR)
    for i in range(g.num_nodes):
        ref = oracles.relation_node(h.data, i, nb[i], arrays(p), 0, UR, p.heads, weighted=False)
        if ref is not None:
            assert np.max(np.abs(out.data[i] - ref)) <= 1e-10


def test_mean_fusion_uses_uniform_beta():
    g = random_graph(np.random.default_rng(8), 3, 4, 3, p=0.6)
    p = make_params(g, layers=1)
    tr = EncoderTrace()
    encode(g, p, EncoderOptions(relation_fusion="mean"), tr)
    beta, active = tr.beta[0], tr.active[0]
    for i in range(g.num_nodes):
        if active[i].any():
            assert np.allclose(beta[i][active[i]], 1.0 / active[i].sum(), atol=1e-15)


def test_node_level_attention_rejects_foreign_relation():
    g = three_node_graph()
    p = make_params(g)
    h = project_inputs(g, p)
    with pytest.raises(ContractError):
        node_level_attention(g, 0, RelationType.INGREDIENT_INGREDIENT, h, p, 0)
    single = node_level_attention(g, 1, RelationType.RECIPE_RECIPE, h, p, 0)
    assert single.shape == (p.hidden,)


def test_heads_must_divide_hidden():
    with pytest.raises(ContractError):
        make_params(three_node_graph(), hidden=6, heads=4)


def test_parameter_names_are_unique_and_complete():
    g = three_node_graph()
    p = make_params(g, layers=2)
    names = list(p.tensors)
    assert len(names) == len(set(names))
    assert "enc/input/user/x" in names
    assert sum(n.startswith("enc/L1/rel=") for n in names) == 4 * len(RELATIONS)


def test_encoder_gradients_pass_finite_differences():
    g = random_graph(np.random.default_rng(12), 3, 4, 3, p=0.6)
    p = make_params(g, seed=12, spread=0.5)
    w = np.random.default_rng(0).normal(size=(g.num_nodes, p.hidden))
    errs = check_gradients(lambda: T.sum(encode(g, p) * w), p.tensors)
    assert max(errs.values()) < 1e-4, max(errs.items(), key=lambda kv: kv[1])
