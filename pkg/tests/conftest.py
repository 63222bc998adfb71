import numpy as np
import pytest

from subgraph_kgc.kg_store import UNREACHABLE, KnowledgeGraph


def graph_from_edges(edges, n=None, relations=None):
    """Graph over entities ``e0..e{n-1}``; ``edges`` are ``(u, v)`` or ``(u, r, v)``."""
    rows = []
    for e in edges:
        if len(e) == 2:
            rows.append((e[0], 0, e[1]))
        else:
            rows.append(tuple(e))
    n = n if n is not None else 1 + max(max(u, v) for u, _, v in rows)
    n_rel = relations or 1 + max(r for _, r, _ in rows)
    return KnowledgeGraph([f"e{i}" for i in range(n)], [f"r{i}" for i in range(n_rel)], np.array(rows, dtype=np.int64))


def random_graph(rng, n, p, n_rel=3):
    """Erdos-Renyi style graph with random edge direction and relation."""
    edges = []
    for u in range(n):
        for v in range(u + 1, n):
            if rng.random() < p:
                a, b = (u, v) if rng.random() < 0.5 else (v, u)
                edges.append((a, int(rng.integers(n_rel)), b))
    if not edges:
        edges.append((0, 0, 1))
    return graph_from_edges(edges, n=n, relations=n_rel)


def floyd_warshall(kg):
    n = kg.num_entities
    d = np.full((n, n), np.inf)
    np.fill_diagonal(d, 0)
    for h, _, t in kg.triples:
        if h != t:
            d[h, t] = d[t, h] = 1
    for k in range(n):
        d = np.minimum(d, d[:, k:k + 1] + d[k:k + 1, :])
    return np.where(np.isinf(d), UNREACHABLE, d).astype(np.int64)


@pytest.fixture
def path_graph():
    # a - b - c - d
    return graph_from_edges([(0, 1), (1, 2), (2, 3)])


@pytest.fixture
def star_graph():
    # center 0 with leaves 1..4
    return graph_from_edges([(0, i) for i in range(1, 5)])


@pytest.fixture
def rng():
    return np.random.default_rng(12345)


ACCEPTANCE = {}


def pytest_terminal_summary(terminalreporter):
    if not ACCEPTANCE:
        return
    terminalreporter.section("acceptance criteria")
    for n in sorted(ACCEPTANCE):
        terminalreporter.write_line(ACCEPTANCE[n])
