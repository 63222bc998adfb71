from functools import lru_cache

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st
from scipy import stats

from subgraph_kgc.exceptions import ConfigError, ContractViolation, DomainError
from subgraph_kgc.kg_store import UNREACHABLE
from subgraph_kgc.sampler import (
    NEIGHBOR_MODES,
    SamplerConfig,
    Subgraph,
    SubgraphStore,
    approx_distance,
    center_rng,
    combine_distances,
    compute_center_distances,
    neighbor_distribution,
    precompute_all,
    sample_subgraph,
    select_start_entity,
    walk_trace,
)

from conftest import floyd_warshall, graph_from_edges, random_graph


def inclusion_oracle(kg, center, restart_prob, max_triples, mode):
    """Exact probability that each triple ends up in the sampled subgraph.

    Enumerates the walk as a Markov chain over (node, collected set); within a
    fixed collected set the restart/step dynamics form a linear system.
    """
    n, m = kg.num_entities, kg.num_triples
    h, _, t = kg.triples[center]
    dh, dt = kg.degree[h], kg.degree[t]
    starts = {int(h): (1 / dh) / (1 / dh + 1 / dt)}
    starts[int(t)] = starts.get(int(t), 0.0) + 1 - starts[int(h)]
    target = min(max_triples, m)
    steps = {}
    for u in range(n):
        out = []
        if kg.degree[u]:
            p = neighbor_distribution(kg, u, mode)
            for slot, v in enumerate(kg.indices[kg.indptr[u]:kg.indptr[u + 1]]):
                tids = kg.edge_triples(u, slot)
                out.append((int(v), p[slot], [int(x) for x in tids]))
        steps[u] = out

    @lru_cache(maxsize=None)
    def solve(s, collected):
        if len(collected) >= target:
            vec = np.zeros(m)
            vec[list(collected)] = 1.0
            return np.tile(vec, (n, 1))
        A = np.eye(n)
        B = np.zeros((n, m))
        for u in range(n):
            if not steps[u]:
                A[u, s] -= 1.0
                continue
            A[u, s] -= restart_prob
            for v, p, tids in steps[u]:
                for tid in tids:
                    w = (1 - restart_prob) * p / len(tids)
                    if tid in collected:
                        A[u, v] -= w
                    else:
                        B[u] += w * solve(s, collected | frozenset([tid]))[v]
        return np.linalg.solve(A, B)

    return sum(ps * solve(s, frozenset([int(center)]))[s] for s, ps in starts.items())


def test_config_validation():
    with pytest.raises(ConfigError):
        SamplerConfig(restart_prob=0.0)
    with pytest.raises(ConfigError):
        SamplerConfig(restart_prob=1.5)
    with pytest.raises(ConfigError):
        SamplerConfig(max_triples=0)
    with pytest.raises(ConfigError):
        SamplerConfig(neighbor_mode="nope")
    assert SamplerConfig().restart_prob == pytest.approx(1 / 25)


def test_start_entity_exact_probabilities():
    # deg(h)=3, deg(t)=1
    kg = graph_from_edges([(0, 1), (0, 2), (0, 3)])
    rng = np.random.default_rng(0)
    draws = np.array([select_start_entity(kg, 0, rng) for _ in range(100_000)])
    assert abs(np.mean(draws == 1) - 0.75) <= 0.01
    kg = graph_from_edges([(0, 1), (0, 2), (1, 3)])
    draws = np.array([select_start_entity(kg, 0, rng) for _ in range(20_000)])
    assert abs(np.mean(draws == 0) - 0.5) <= 0.02


def test_neighbor_distribution_examples():
    # neighbors of 0 have degrees 1 and 2
    kg = graph_from_edges([(0, 1), (0, 2), (2, 3)])
    np.testing.assert_allclose(neighbor_distribution(kg, 0, "inverse_degree"), [2 / 3, 1 / 3])
    star = graph_from_edges([(0, i) for i in range(1, 5)])
    np.testing.assert_allclose(neighbor_distribution(star, 0, "uniform"), [0.25] * 4)
    kg = graph_from_edges([(0, 1), (0, 2), (2, 3), (2, 4)])
    np.testing.assert_allclose(neighbor_distribution(kg, 0, "degree_proportional"), [0.25, 0.75])
    with pytest.raises(DomainError):
        neighbor_distribution(graph_from_edges([(0, 1)], n=3), 2)


@settings(max_examples=50, deadline=None)
@given(st.integers(0, 10_000), st.sampled_from(NEIGHBOR_MODES))
def test_neighbor_distribution_sums_to_one(seed, mode):
    kg = random_graph(np.random.default_rng(seed), 9, 0.4)
    for u in np.flatnonzero(kg.degree):
        p = neighbor_distribution(kg, u, mode)
        assert np.all(p >= 0)
        assert abs(p.sum() - 1) <= 1e-12


@settings(max_examples=50, deadline=None)
@given(st.integers(0, 10_000))
def test_inverse_degree_favours_low_degree_neighbors(seed):
    kg = random_graph(np.random.default_rng(seed), 8, 0.45)
    for u in np.flatnonzero(kg.degree):
        nb = kg.indices[kg.indptr[u]:kg.indptr[u + 1]]
        inv = neighbor_distribution(kg, u, "inverse_degree")
        uni = neighbor_distribution(kg, u, "uniform")
        top = kg.degree[nb] == kg.degree[nb].max()
        assert inv[top].sum() <= uni[top].sum() + 1e-12


def stationary(kg, start, restart_prob, mode):
    n = kg.num_entities
    P = np.zeros((n, n))
    for u in range(n):
        P[u, start] += restart_prob if kg.degree[u] else 1.0
        if kg.degree[u]:
            nb = kg.indices[kg.indptr[u]:kg.indptr[u + 1]]
            P[u, nb] += (1 - restart_prob) * neighbor_distribution(kg, u, mode)
    w, v = np.linalg.eig(P.T)
    pi = np.real(v[:, np.argmin(np.abs(w - 1))])
    return pi / pi.sum()


def test_inverse_degree_visits_hub_less_than_uniform():
    # hub 0 joined to a chain and to leaves
    kg = graph_from_edges([(0, 1), (0, 2), (0, 3), (0, 4), (4, 5), (5, 6), (6, 7)])
    inv = stationary(kg, 7, 1 / 25, "inverse_degree")
    uni = stationary(kg, 7, 1 / 25, "uniform")
    assert inv[0] < uni[0]


@pytest.mark.parametrize("mode", NEIGHBOR_MODES)
def test_walk_neighbor_choice_matches_distribution(mode):
    kg = graph_from_edges([(0, 1), (0, 2), (0, 3), (1, 2), (3, 4), (4, 5), (2, 5), (5, 6), (6, 7)])
    cfg = SamplerConfig(restart_prob=0.1, neighbor_mode=mode)
    nodes, restarted = walk_trace(kg, 0, 120_000, cfg, np.random.default_rng(7))
    prev = np.concatenate([[0], nodes[:-1]])
    for u in (0, 2, 5):
        nb = kg.indices[kg.indptr[u]:kg.indptr[u + 1]]
        moved = (prev == u) & ~restarted
        counts = np.array([np.sum(nodes[moved] == v) for v in nb])
        assert counts.sum() == moved.sum()
        expected = neighbor_distribution(kg, u, mode)
        np.testing.assert_allclose(counts / counts.sum(), expected, atol=0.01)
        assert stats.chisquare(counts, expected * counts.sum()).pvalue > 0.01


def test_restart_frequency():
    kg = graph_from_edges([(0, 1), (1, 2), (2, 3)])
    _, restarted = walk_trace(kg, 0, 50_000, SamplerConfig(restart_prob=0.2), np.random.default_rng(1))
    assert abs(restarted.mean() - 0.2) < 0.01


def test_path_graph_two_triples():
    kg = graph_from_edges([(0, 1), (1, 2)])
    cfg = SamplerConfig(restart_prob=1e-9, max_triples=2)
    sub = sample_subgraph(kg, 0, cfg, np.random.default_rng(0))
    assert sorted(sub.triple_ids.tolist()) == [0, 1]


def test_single_triple_budget(path_graph):
    for c in range(path_graph.num_triples):
        sub = sample_subgraph(path_graph, c, SamplerConfig(max_triples=1), np.random.default_rng(c))
        assert sub.triple_ids.tolist() == [c]


def test_star_every_run_collects_four(star_graph):
    cfg = SamplerConfig(restart_prob=1 / 25, max_triples=4)
    counts = np.zeros(4)
    for i in range(1000):
        sub = sample_subgraph(star_graph, 0, cfg, np.random.default_rng(i))
        assert len(sub.triple_ids) == 4 == len(set(sub.triple_ids.tolist()))
        counts[sub.triple_ids] += 1
    oracle = inclusion_oracle(star_graph, 0, 1 / 25, 4, "inverse_degree")
    np.testing.assert_allclose(counts / 1000, oracle, atol=0.02)


@pytest.mark.parametrize("mode", NEIGHBOR_MODES)
@pytest.mark.parametrize(
    "edges,center,budget",
    [
        ([(0, i) for i in range(1, 5)], 0, 3),
        ([(0, 1), (1, 2), (2, 0), (2, 3), (3, 4), (0, 1, 1), (4, 5)], 2, 4),
    ],
)
def test_inclusion_frequencies_match_exact_chain(mode, edges, center, budget):
    kg = graph_from_edges(edges, relations=2)
    p_r = 0.2
    cfg = SamplerConfig(restart_prob=p_r, max_triples=budget, neighbor_mode=mode)
    runs = 3000
    counts = np.zeros(kg.num_triples)
    for i in range(runs):
        sub = sample_subgraph(kg, center, cfg, center_rng(i, center))
        counts[sub.triple_ids] += 1
    oracle = inclusion_oracle(kg, center, p_r, budget, mode)
    assert oracle[center] == pytest.approx(1.0)
    assert oracle.sum() == pytest.approx(budget)
    np.testing.assert_allclose(counts / runs, oracle, atol=0.03)


def test_small_component_is_exhausted():
    # component of the center has only 2 triples; the rest live elsewhere
    kg = graph_from_edges([(0, 1), (1, 2), (3, 4), (4, 5), (5, 6)])
    sub = sample_subgraph(kg, 0, SamplerConfig(max_triples=10), np.random.default_rng(0))
    assert sorted(sub.triple_ids.tolist()) == [0, 1]


def test_center_distances_on_path(path_graph):
    sub = compute_center_distances(path_graph, Subgraph(0, 0, np.arange(3)))
    np.testing.assert_array_equal(sub.distances([0, 1, 2, 3]), [0, 1, 2, 3])
    assert sub.distance(0) == 0


def test_center_distances_match_floyd_warshall():
    rng = np.random.default_rng(11)
    for _ in range(10):
        kg = random_graph(rng, int(rng.integers(5, 40)), 0.1)
        fw = floyd_warshall(kg)
        for c in range(kg.num_triples):
            sub = compute_center_distances(kg, Subgraph(c, int(kg.triples[c, 0]), np.arange(kg.num_triples)))
            np.testing.assert_array_equal(sub.dist_values, fw[kg.triples[c, 0], sub.dist_entities])


def test_approx_distance_rules(path_graph):
    sub = compute_center_distances(path_graph, Subgraph(0, 0, np.arange(3)))
    assert approx_distance(sub, 2, 3) == 6
    assert approx_distance(sub, 0, 3) == 3
    assert approx_distance(sub, 0, 0) == 1
    assert combine_distances(2, 3) == 6
    assert combine_distances(0, 4) == 4
    assert combine_distances(UNREACHABLE, 2) == UNREACHABLE
    assert combine_distances(2, UNREACHABLE) == UNREACHABLE
    np.testing.assert_array_equal(combine_distances([1, 0, -1], [5, 0, 0]), [5, 1, -1])
    with pytest.raises(ContractViolation):
        approx_distance(Subgraph(0, 0, np.arange(1), np.array([0, 1]), np.array([0, 1])), 0, 3)


def test_unreachable_distance_recorded():
    kg = graph_from_edges([(0, 1), (2, 3)])
    sub = compute_center_distances(kg, Subgraph(0, 0, np.array([0, 1])))
    assert sub.distance(3) == UNREACHABLE
    assert approx_distance(sub, 1, 3) == UNREACHABLE


@settings(max_examples=25, deadline=None)
@given(st.integers(0, 10_000), st.integers(1, 20), st.sampled_from(NEIGHBOR_MODES))
def test_subgraph_invariants(seed, budget, mode):
    kg = random_graph(np.random.default_rng(seed), 15, 0.2)
    store = precompute_all(kg, SamplerConfig(max_triples=budget, neighbor_mode=mode, seed=seed))
    assert len(store) == kg.num_triples
    short = 0
    for c, sub in enumerate(store):
        ids = sub.triple_ids.tolist()
        assert ids[0] == c
        assert len(ids) == len(set(ids))
        comp = kg.component[kg.triples[c, 0]]
        target = min(budget, kg.component_triples[comp])
        # the step cap may stop a walk short of its target
        assert len(ids) <= target
        short += len(ids) < target
        assert sub.distance(kg.triples[c, 0]) == 0
        ends = np.unique(kg.triples[ids][:, [0, 2]])
        np.testing.assert_array_equal(sub.dist_entities, ends)
    assert short <= 0.1 * len(store)


def test_store_roundtrip_and_determinism(tmp_path):
    kg = random_graph(np.random.default_rng(5), 40, 0.1)
    cfg = SamplerConfig(max_triples=12, seed=9)
    a = precompute_all(kg, cfg)
    b = precompute_all(kg, cfg)
    assert a == b
    path = tmp_path / "store.txt"
    a.save(path)
    assert SubgraphStore.load(path) == a
    text = path.read_text().splitlines()
    assert text[0] == "# sampler=brwr"
    assert text[1].startswith("C 0 ")


def test_three_triple_graph_store_size():
    kg = graph_from_edges([(0, 1), (1, 2), (0, 2)])
    assert len(precompute_all(kg, SamplerConfig(max_triples=5))) == 3


def test_parallel_store_equals_serial():
    kg = random_graph(np.random.default_rng(2), 60, 0.08)
    cfg = SamplerConfig(max_triples=20, seed=4)
    serial = precompute_all(kg, cfg, workers=1)
    parallel = precompute_all(kg, cfg, workers=2, chunk_size=16)
    assert serial == parallel


def test_unreachable_saved_as_inf(tmp_path):
    sub = Subgraph(0, 0, np.array([0]), np.array([0, 1]), np.array([0, UNREACHABLE]))
    store = SubgraphStore([sub], sampler="rwr")
    path = tmp_path / "s.txt"
    store.save(path)
    assert "D 1 INF" in path.read_text()
    assert SubgraphStore.load(path) == store
