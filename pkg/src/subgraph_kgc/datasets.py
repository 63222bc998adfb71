"""Seeded synthetic knowledge graphs for desk-scale experiments."""

import numpy as np

from .kg_store import KnowledgeGraph


def make_clustered_kg(n_entities=200, n_triples=2000, n_relations=20, n_clusters=4, n_test=200, max_offset=5, cross_fraction=0.05, seed=0):
    """Entities on one ring per cluster; relation ``f * max_offset + (o - 1)``
    links ring position ``i`` to ``i + o`` in the same cluster.

    A ``cross_fraction`` of triples instead point to a random entity of
    another cluster, which keeps the graph connected.

    Returns ``(kg, test)`` where ``test`` is an ``(n_test, 3)`` id array of
    held-out triples drawn from the same process. All entities are in the
    vocabulary even if a split never mentions them.
    """
    if n_entities % n_clusters:
        raise ValueError("n_entities must be divisible by n_clusters")
    if n_relations % max_offset:
        raise ValueError("n_relations must be a multiple of max_offset")
    size = n_entities // n_clusters
    capacity = n_entities * n_relations
    if n_triples + n_test > capacity:
        raise ValueError(f"at most {capacity} distinct triples exist")
    rng = np.random.default_rng(seed)
    picks = rng.choice(capacity, size=n_triples + n_test, replace=False)
    head, rel = np.divmod(picks, n_relations)
    offset = rel % max_offset + 1
    cluster, pos = np.divmod(head, size)
    tail = cluster * size + (pos + offset) % size
    cross = rng.random(len(picks)) < cross_fraction
    if n_clusters > 1:
        other = (cluster + rng.integers(1, n_clusters, size=len(picks))) % n_clusters
        tail = np.where(cross, other * size + rng.integers(0, size, size=len(picks)), tail)
    # a cross link may collide with an existing triple; keep the first occurrence
    _, first = np.unique(np.stack([head, rel, tail], axis=1), axis=0, return_index=True)
    keep = np.sort(first)
    if len(keep) < n_triples + n_test:
        raise ValueError("too many collisions; lower cross_fraction")
    head, rel, tail = head[keep], rel[keep], tail[keep]
    names = [f"c{e // size}_{e % size:03d}" for e in range(n_entities)]
    rel_names = [f"rel{r:02d}" for r in range(n_relations)]
    labeled = [(names[h], rel_names[r], names[t]) for h, r, t in zip(head, rel, tail)]
    train = sorted(labeled[:n_triples])
    kg = KnowledgeGraph.from_labeled(train, extra_entities=names)
    # pin relation ids to their names so the layout is seed independent
    kg = _reindex_relations(kg, rel_names)
    test = np.array(
        [(kg.entity_index[h], kg.relation_index[r], kg.entity_index[t]) for h, r, t in labeled[n_triples:]],
        dtype=np.int64,
    ).reshape(-1, 3)
    return kg, test


def _reindex_relations(kg, rel_names):
    order = [kg.relation_index[r] for r in rel_names if r in kg.relation_index]
    remap = np.empty(kg.num_relations, dtype=np.int64)
    remap[order] = np.arange(len(order))
    triples = kg.triples.copy()
    triples[:, 1] = remap[triples[:, 1]]
    names = [kg.relations[i] for i in order]
    return KnowledgeGraph(kg.entities, names, triples, kg.metadata)


def make_preferential_attachment_kg(n_nodes=500, m=5, n_relations=10, seed=0):
    """Barabasi-Albert style growth: each new node links to ``m`` distinct
    existing nodes picked proportionally to degree. Edge direction and
    relation labels are random."""
    rng = np.random.default_rng(seed)
    edges = []
    targets = list(range(m))
    repeated = []
    for new in range(m, n_nodes):
        for t in targets:
            edges.append((new, t))
        repeated.extend(targets)
        repeated.extend([new] * m)
        chosen = set()
        while len(chosen) < m:
            chosen.add(repeated[int(rng.integers(len(repeated)))])
        targets = sorted(chosen)
    labeled = []
    for u, v in edges:
        if rng.random() < 0.5:
            u, v = v, u
        labeled.append((f"n{u}", f"r{int(rng.integers(n_relations))}", f"n{v}"))
    return KnowledgeGraph.from_labeled(labeled, extra_entities=[f"n{i}" for i in range(n_nodes)])
