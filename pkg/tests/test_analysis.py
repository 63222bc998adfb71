import math
from types import SimpleNamespace

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from subgraph_kgc import analysis
from subgraph_kgc.contrastive import EncoderParams, LossConfig
from subgraph_kgc.evaluator import RankDump, evaluate
from subgraph_kgc.exceptions import DomainError
from subgraph_kgc.kg_store import UNREACHABLE
from subgraph_kgc.sampler import SamplerConfig, precompute_all
from subgraph_kgc.scheduler import MiniBatch

from conftest import floyd_warshall, graph_from_edges, random_graph


def make_dump(query_heads, fp_tails, rels=None, ranks=None):
    n = len(query_heads)
    return RankDump(
        heads=np.asarray(query_heads, dtype=np.int64),
        rels=np.zeros(n, dtype=np.int64) if rels is None else np.asarray(rels),
        tails=np.zeros(n, dtype=np.int64),
        directions=np.array(["forward"] * n),
        ranks=np.ones(n, dtype=np.int64) if ranks is None else np.asarray(ranks),
        fp_tails=[np.asarray(f, dtype=np.int64) for f in fp_tails],
    )


def test_gini_examples():
    assert analysis.gini([5, 5, 5, 5]) == pytest.approx(0.0, abs=1e-12)
    assert analysis.gini([1, 0, 0, 0]) == pytest.approx(0.75)
    assert analysis.gini(np.ones(100)) == pytest.approx(0.0, abs=1e-12)
    assert analysis.gini(np.eye(1, 1000).ravel()) == pytest.approx(0.999)
    assert analysis.gini([0, 0]) == 0.0


def naive_gini(x):
    x = np.asarray(x, dtype=float)
    return np.abs(x[:, None] - x[None, :]).sum() / (2 * len(x) ** 2 * x.mean())


@settings(max_examples=100, deadline=None)
@given(st.lists(st.integers(0, 50), min_size=1, max_size=30).filter(lambda v: sum(v) > 0), st.integers(1, 1000))
def test_gini_matches_pairwise_form_and_is_scale_invariant(counts, c):
    g = analysis.gini(counts)
    assert g == pytest.approx(naive_gini(counts), abs=1e-12)
    assert abs(analysis.gini(np.array(counts) * c) - g) <= 1e-12


def test_fp_ratio_on_path(path_graph):
    assert analysis.fp_ratio_by_distance(path_graph, make_dump([0], [[1]]))[1] == pytest.approx(1 / 3)
    zero = analysis.fp_ratio_by_distance(path_graph, make_dump([0, 1], [[], []]))
    assert all(v == 0 for v in zero.values())
    # the same unordered pair from both ends counts once
    twice = analysis.fp_ratio_by_distance(path_graph, make_dump([0, 1], [[1], [0]]))
    assert twice[1] == pytest.approx(1 / 3)


def test_pair_distance_counts_match_oracle():
    rng = np.random.default_rng(0)
    for _ in range(5):
        kg = random_graph(rng, int(rng.integers(5, 50)), 0.08)
        fw = floyd_warshall(kg)
        iu = np.triu_indices(kg.num_entities, 1)
        vals, cnt = np.unique(fw[iu], return_counts=True)
        assert analysis.pair_distance_counts(kg) == dict(zip(vals.tolist(), cnt.tolist()))


def test_pairs_at_distance_match_oracle():
    rng = np.random.default_rng(1)
    for _ in range(5):
        kg = random_graph(rng, int(rng.integers(5, 50)), 0.1)
        fw = floyd_warshall(kg)
        pairs = analysis.pairs_at_distance(kg, 6)
        for d in range(1, 7):
            want = {(i, j) for i, j in zip(*np.nonzero(np.triu(fw == d, 1)))}
            assert {tuple(p) for p in pairs[d].tolist()} == want


@settings(max_examples=30, deadline=None)
@given(st.integers(0, 10_000))
def test_fp_ratios_are_fractions(seed):
    rng = np.random.default_rng(seed)
    kg = random_graph(rng, 20, 0.15)
    params = EncoderParams.initialize(kg.num_entities, kg.num_relations_total, 4, seed=seed)
    _, dump = evaluate(params, kg, kg.triples[:5], filtered=False, return_dump=True)
    for d, v in analysis.fp_ratio_by_distance(kg, dump).items():
        assert 0.0 <= v <= 1.0


def test_degree_groups_partition():
    groups = analysis.degree_groups(SimpleNamespace(degree=np.arange(1, 11)))
    assert [g.tolist() for g in groups] == [[1, 2], [3, 4], [5, 6], [7, 8], [9, 10]]
    groups = analysis.degree_groups(SimpleNamespace(degree=np.arange(1, 8)))
    assert [len(g) for g in groups] == [1, 1, 1, 2, 2]
    with pytest.raises(DomainError):
        analysis.degree_groups(SimpleNamespace(degree=np.array([1, 2, 2, 3, 4])))


def test_fp_ratio_by_degree_group_hand_values():
    kg = SimpleNamespace(degree=np.array([1, 2, 3, 4, 5, 5]))
    out = analysis.fp_ratio_by_degree_group(kg, make_dump([0, 1], [[4, 5], [5, 0]]))
    assert list(out.values()) == pytest.approx([1.0, 0.0, 0.0, 0.0, 1.5])
    assert list(out)[4] == "Q5[5-5]"
    zero = analysis.fp_ratio_by_degree_group(kg, make_dump([0], [[]]))
    assert all(v == 0 for v in zero.values())
    kg = SimpleNamespace(degree=np.array([1, 2, 3, 4, 5, 6, 6, 6]))
    alt = analysis.fp_ratio_by_degree_group(kg, make_dump([0], [[4, 5]]), per_degree=True)
    # Q5 holds degrees 5 and 6: (1/1 + 1/3) / 2
    assert list(alt.values())[4] == pytest.approx((1 + 1 / 3) / 2)


def constant_batch(n=4):
    return MiniBatch(
        0, 0, np.arange(n // 2), np.zeros(n // 2, bool),
        heads=np.zeros(n, dtype=np.int64), rels=np.zeros(n, dtype=np.int64), tails=np.ones(n, dtype=np.int64),
        head_dist=np.zeros(n, dtype=np.int64), tail_dist=np.ones(n, dtype=np.int64), psi=np.ones(n),
        fn_mask=np.zeros((n, n), bool),
    )


def test_histogram_all_zero_cosines():
    params = EncoderParams(np.array([[1.0, 0.0], [0.0, 1.0]]), np.zeros((1, 2)), np.array([[1.0, 0.0], [0.0, 1.0]]))
    edges = np.linspace(-1, 1, 6)
    hist = analysis.negative_score_histogram(params, {0: [constant_batch()]}, edges)
    np.testing.assert_allclose(hist[0], [0, 0, 1, 0, 0])
    with pytest.raises(DomainError):
        analysis.negative_score_histogram(params, {0: []}, [0.0, 1.0])


def test_histogram_hand_binned():
    a = np.radians([0, 60, 180, 90])
    tails = np.stack([np.cos(a), np.sin(a)], axis=1)
    params = EncoderParams(np.array([[1.0, 0.0]] * 4), np.zeros((1, 2)), tails)
    b = constant_batch()
    b.tails = np.arange(4)
    # every row queries along 0 degrees: negatives per row are the three other tails
    cos = analysis.negative_cosines(params, b)
    assert len(cos) == 12
    hist = analysis.negative_score_histogram(params, {1: [b]}, [-1.0, -0.5, 0.25, 0.75, 1.0])
    want = np.array([3, 3, 3, 3]) / 12  # cos -1 / 0 / 0.5 / 1 each three times
    np.testing.assert_allclose(hist[1], want)
    assert hist[1].sum() == pytest.approx(1.0, abs=1e-9)


def test_untrained_similarity_near_zero():
    # ring of 200: every distance 1..8 has 200 pairs
    kg = graph_from_edges([(i, (i + 1) % 200) for i in range(200)])
    params = EncoderParams.initialize(kg.num_entities, kg.num_relations_total, 32, seed=0)
    table = analysis.distance_similarity_table(params, kg, max_distance=8)
    assert len(table) == 8
    assert all(abs(v) <= 0.1 for v in table.values())


def test_similarity_marks_missing_distances(path_graph):
    params = EncoderParams.initialize(4, 2, 8, seed=0)
    table = analysis.distance_similarity_table(params, path_graph, max_distance=5)
    assert table[4] is None and table[5] is None
    assert table[1] is not None


def test_similarity_budget_subsamples():
    kg = random_graph(np.random.default_rng(3), 40, 0.2)
    params = EncoderParams.initialize(kg.num_entities, kg.num_relations_total, 8, seed=0)
    full = analysis.distance_similarity_table(params, kg, 2, budget=10**9)
    sub = analysis.distance_similarity_table(params, kg, 2, budget=50, seed=1)
    assert sub[1] != full[1]
    assert abs(sub[1] - full[1]) < 0.2


def test_relation_types():
    kg = graph_from_edges([(0, 0, 1), (2, 1, 3), (2, 1, 4), (2, 1, 5), (6, 2, 9), (7, 2, 9), (8, 2, 9), (0, 3, 2), (0, 3, 3), (1, 3, 2), (1, 3, 3)])
    assert analysis.relation_types(kg) == {0: "1-1", 1: "1-N", 2: "N-1", 3: "N-N"}


def test_relation_type_shares_sum_to_one():
    kg = random_graph(np.random.default_rng(4), 30, 0.15)
    params = EncoderParams.initialize(kg.num_entities, kg.num_relations_total, 4, seed=0)
    _, dump = evaluate(params, kg, kg.triples[:12], return_dump=True)
    out = analysis.relation_type_breakdown(kg, dump)
    assert sum(share for share, _ in out.values()) == pytest.approx(1.0, abs=1e-9)
    for share, h1 in out.values():
        assert h1 is None or 0 <= h1 <= 1


def test_betweenness_examples(star_graph):
    path = graph_from_edges([(0, 1), (1, 2)])
    np.testing.assert_allclose(analysis.betweenness(path), [0, 1, 0])
    bc = analysis.betweenness(star_graph)
    assert bc[0] == pytest.approx(1.0)
    np.testing.assert_allclose(bc[1:], 0)
    with pytest.raises(DomainError):
        analysis.betweenness(star_graph, node_cap=3)


def betweenness_oracle(kg):
    """Pair-dependency sums with path counts from adjacency-matrix powers."""
    n = kg.num_entities
    dist = floyd_warshall(kg)
    A = np.zeros((n, n))
    for h, _, t in kg.triples:
        if h != t:
            A[h, t] = A[t, h] = 1
    powers = [np.eye(n)]
    for _ in range(n):
        powers.append(powers[-1] @ A)
    # walks of length d(s, t) are exactly the shortest paths
    sigma = np.zeros((n, n))
    for s in range(n):
        for t in range(n):
            if dist[s, t] != UNREACHABLE:
                sigma[s, t] = powers[dist[s, t]][s, t]
    bc = np.zeros(n)
    for s in range(n):
        for t in range(s + 1, n):
            if dist[s, t] == UNREACHABLE:
                continue
            for v in range(n):
                if v in (s, t) or dist[s, v] == UNREACHABLE or dist[v, t] == UNREACHABLE:
                    continue
                if dist[s, v] + dist[v, t] == dist[s, t]:
                    bc[v] += sigma[s, v] * sigma[v, t] / sigma[s, t]
    return bc / ((n - 1) * (n - 2) / 2)


def test_betweenness_matches_oracle():
    rng = np.random.default_rng(5)
    for _ in range(8):
        kg = random_graph(rng, int(rng.integers(4, 31)), 0.15)
        np.testing.assert_allclose(analysis.betweenness(kg), betweenness_oracle(kg), atol=1e-9)


def test_extremes_and_centrality(star_graph):
    most, least = analysis.extreme_triples([5, 1, 5, 0], n=2)
    np.testing.assert_array_equal(most, [0, 2])
    np.testing.assert_array_equal(least, [3, 1])
    stats = analysis.centrality_stats(star_graph, {"a": [0], "b": [0, 1, 2, 3]})
    assert stats["a"] == pytest.approx((2.5, 0.5))
    assert stats["b"] == pytest.approx((8 / 5, 1 / 5))
    with pytest.raises(DomainError):
        analysis.centrality_stats(star_graph, {"empty": []})


def test_distribution_reports_shares():
    kg = random_graph(np.random.default_rng(6), 25, 0.15)
    rng = np.random.default_rng(0)
    rep = analysis.distribution_reports(kg, rng.integers(0, 9, kg.num_triples), rng.integers(0, 9, kg.num_entities), np.ones(kg.num_entities))
    rows = np.array([r[2:] for r in rep["entity_frequency"]], dtype=float)
    np.testing.assert_allclose(rows.sum(axis=0), 1.0, atol=1e-9)
    degrees = [r[1] for r in rep["entity_frequency"]]
    assert degrees == sorted(degrees)
    gini = dict(rep["gini"])
    assert gini["random_entity_visits"] == pytest.approx(0.0, abs=1e-12)
    sorted_visits = [v for _, v in rep["triple_visits_sorted"]]
    assert sorted_visits == sorted(sorted_visits, reverse=True)


def test_fp_loss_comparison():
    # perfect matching: every entity has degree 1 so psi = ln 2 everywhere
    kg = graph_from_edges([(2 * i, 2 * i + 1) for i in range(8)])
    store = precompute_all(kg, SamplerConfig(max_triples=4))
    params = EncoderParams.initialize(kg.num_entities, kg.num_relations_total, 8, seed=0)
    cfg = LossConfig()
    out = analysis.fp_loss_comparison(params, kg, [0, 3, 5], [0, 3, 5], store, 8, cfg)
    assert out["false_positives"] == out["all_triples"]
    weighted, plain = out["all_triples"]
    assert weighted / plain == pytest.approx(math.log(2), rel=1e-12)


def test_report_files(tmp_path):
    rep = analysis.StructReport()
    rep.add("fp_ratio_by_distance", [(1, 0.5), (2, None)])
    rep.add("relation_types", [("born in", "N-1")])
    rep.save(tmp_path)
    assert (tmp_path / "fp_ratio_by_distance.csv").read_text() == "label,value\n1,0.5\n2,\n"
    assert (tmp_path / "fp_ratio_by_distance.dat").read_text() == "# fp_ratio_by_distance\n1 0.5\n2 NaN\n"
    assert (tmp_path / "relation_types.dat").read_text().splitlines()[1] == "born_in N-1"
