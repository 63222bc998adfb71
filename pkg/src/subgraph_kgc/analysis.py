"""Structural diagnostics over rank dumps, visit counters and trained encoders."""

import csv
import math
import os
from collections import deque
from dataclasses import dataclass, field

import numpy as np

from .contrastive import batch_loss, encode_queries, encode_tails
from .exceptions import DomainError
from .kg_store import bfs_distances
from .sampler import center_rng
from .scheduler import _draw_excluding, build_batch

DEFAULT_NODE_CAP = 5000
RELATION_TYPES = ("1-1", "1-N", "N-1", "N-N")


@dataclass
class StructReport:
    """Named tables of ``(label, value)`` rows."""

    tables: dict = field(default_factory=dict)

    def add(self, name, rows):
        self.tables[name] = [tuple(r) for r in rows]

    def __getitem__(self, name):
        return self.tables[name]

    def save(self, directory, header=("label", "value")):
        """Write ``<name>.csv`` and a gnuplot-ready ``<name>.dat`` per table."""
        os.makedirs(directory, exist_ok=True)
        for name, rows in self.tables.items():
            with open(os.path.join(directory, f"{name}.csv"), "w", encoding="utf-8", newline="") as fh:
                w = csv.writer(fh, lineterminator="\n")
                w.writerow(header if rows and len(rows[0]) == len(header) else [f"c{i}" for i in range(len(rows[0]) if rows else 0)])
                for r in rows:
                    w.writerow([_fmt(v) for v in r])
            with open(os.path.join(directory, f"{name}.dat"), "w", encoding="utf-8", newline="\n") as fh:
                fh.write(f"# {name}\n")
                for r in rows:
                    fh.write(" ".join(_fmt(v, dat=True) for v in r) + "\n")


def _fmt(v, dat=False):
    if v is None or (isinstance(v, float) and math.isnan(v)):
        return "NaN" if dat else ""
    if isinstance(v, (float, np.floating)):
        return f"{float(v):.10g}"
    s = str(v)
    return s.replace(" ", "_") if dat else s


def gini(counts):
    """Gini coefficient of a non-negative count vector (0 when all equal)."""
    x = np.sort(np.asarray(counts, dtype=np.float64))
    n = len(x)
    total = x.sum()
    if n == 0 or total == 0:
        return 0.0
    ranks = np.arange(1, n + 1)
    return float(2.0 * np.sum(ranks * x) / (n * total) - (n + 1.0) / n)


def pair_distance_counts(kg):
    """Number of unordered entity pairs at each hop distance (UNREACHABLE included)."""
    counts = {}
    n = kg.num_entities
    for s in range(n):
        d = bfs_distances(kg, s)[s + 1:]
        vals, cnt = np.unique(d, return_counts=True)
        for v, c in zip(vals.tolist(), cnt.tolist()):
            counts[v] = counts.get(v, 0) + c
    return dict(sorted(counts.items()))


def fp_ratio_by_distance(kg, dump, pair_counts=None):
    """Share of entity pairs at distance ``d`` that show up as a false positive.

    Each FP is the pair (query head, FP tail); pairs are unordered and counted
    once however many queries produce them.
    """
    if len(dump) == 0:
        raise DomainError("empty rank dump")
    pair_counts = pair_counts if pair_counts is not None else pair_distance_counts(kg)
    fp_pairs = {}
    cache = {}
    qh = dump.query_heads()
    for i in range(len(dump)):
        fps = dump.fp_tails[i]
        if len(fps) == 0:
            continue
        h = int(qh[i])
        if h not in cache:
            cache[h] = bfs_distances(kg, h)
        for t, d in zip(fps.tolist(), cache[h][fps].tolist()):
            if t == h:
                continue
            fp_pairs[(min(h, t), max(h, t))] = d
    hits = {}
    for d in fp_pairs.values():
        hits[d] = hits.get(d, 0) + 1
    return {d: hits.get(d, 0) / c for d, c in pair_counts.items() if c > 0}


def degree_groups(kg, n_groups=5):
    """Split the sorted distinct degrees into ``n_groups`` runs of equal size.

    When the count does not divide evenly the last groups take one extra.
    """
    distinct = np.unique(kg.degree)
    if len(distinct) < n_groups:
        raise DomainError(f"need at least {n_groups} distinct degrees, found {len(distinct)}")
    base, rem = divmod(len(distinct), n_groups)
    sizes = [base + (1 if g >= n_groups - rem else 0) for g in range(n_groups)]
    bounds = np.concatenate([[0], np.cumsum(sizes)])
    return [distinct[bounds[g]:bounds[g + 1]] for g in range(n_groups)]


def fp_ratio_by_degree_group(kg, dump, per_degree=False):
    """FPs per entity in each degree quintile, bucketed by the FP tail's degree.

    Default: total FPs in the group / entities in the group. With
    ``per_degree=True``: mean over the group's distinct degrees of
    FPs-at-that-degree / entities-at-that-degree.
    """
    groups = degree_groups(kg)
    fp_tails = np.concatenate([np.asarray(f, dtype=np.int64) for f in dump.fp_tails] + [np.zeros(0, np.int64)])
    fp_by_degree = np.bincount(kg.degree[fp_tails], minlength=kg.degree.max() + 1) if len(fp_tails) else np.zeros(kg.degree.max() + 1)
    ent_by_degree = np.bincount(kg.degree, minlength=kg.degree.max() + 1)
    out = {}
    for g, degs in enumerate(groups):
        label = f"Q{g + 1}[{degs[0]}-{degs[-1]}]"
        if per_degree:
            out[label] = float(np.mean(fp_by_degree[degs] / ent_by_degree[degs]))
        else:
            out[label] = float(fp_by_degree[degs].sum() / ent_by_degree[degs].sum())
    return out


def distribution_reports(kg, triple_counts, entity_counts, random_entity_counts=None):
    """Frequency curves and Gini coefficients for the visit tallies.

    ``entity_frequency`` lists entities by ascending degree with their share
    of occurrences in the graph and in the scheduled batches; the
    ``*_sorted`` tables are counts in descending order.
    """
    triple_counts = np.asarray(triple_counts)
    entity_counts = np.asarray(entity_counts)
    rep = StructReport()
    occurrences = np.bincount(kg.triples[:, [0, 2]].ravel(), minlength=kg.num_entities).astype(float)
    order = np.lexsort((np.arange(kg.num_entities), kg.degree))
    kg_share = occurrences / max(occurrences.sum(), 1.0)
    batch_share = entity_counts / max(entity_counts.sum(), 1)
    rows = []
    for rank, e in enumerate(order):
        row = [rank, int(kg.degree[e]), kg_share[e], batch_share[e]]
        if random_entity_counts is not None:
            rc = np.asarray(random_entity_counts)
            row.append(rc[e] / max(rc.sum(), 1))
        rows.append(row)
    rep.add("entity_frequency", rows)
    rep.add("triple_visits_sorted", enumerate(np.sort(triple_counts)[::-1].tolist()))
    rep.add("entity_visits_sorted", enumerate(np.sort(entity_counts)[::-1].tolist()))
    g = [
        ("kg_entity_occurrences", gini(occurrences)),
        ("triple_visits", gini(triple_counts)),
        ("entity_visits", gini(entity_counts)),
    ]
    if random_entity_counts is not None:
        g.append(("random_entity_visits", gini(random_entity_counts)))
    rep.add("gini", g)
    return rep


def negative_cosines(params, batch):
    """Cosines of every unmasked in-batch negative pair."""
    xq = encode_queries(params, batch.heads, batch.rels)
    xt = encode_tails(params, batch.tails)
    cos = xq @ xt.T
    neg = ~batch.fn_mask & ~np.eye(batch.size, dtype=bool)
    return cos[neg]


def negative_score_histogram(params, batches, bin_edges):
    """Fraction of in-batch negative cosines per bin, per epoch.

    ``batches`` maps epoch -> list of batches; ``params`` is either one
    parameter set or a mapping epoch -> parameters (the encoder as it was in
    that epoch).
    """
    edges = np.asarray(bin_edges, dtype=np.float64)
    if np.any(np.diff(edges) <= 0) or edges[0] > -1.0 or edges[-1] < 1.0:
        raise DomainError("bin edges must be strictly increasing and cover [-1, 1]")
    out = {}
    for epoch, blist in batches.items():
        p = params[epoch] if isinstance(params, dict) else params
        cos = np.concatenate([negative_cosines(p, b) for b in blist] + [np.zeros(0)])
        counts, _ = np.histogram(np.clip(cos, edges[0], edges[-1]), bins=edges)
        out[epoch] = counts / max(counts.sum(), 1)
    return out


def pairs_at_distance(kg, max_distance):
    """Unordered entity pairs grouped by exact hop distance ``1..max_distance``."""
    pairs = {d: [] for d in range(1, max_distance + 1)}
    for s in range(kg.num_entities):
        dist = bfs_distances(kg, s)
        for d in range(1, max_distance + 1):
            others = np.flatnonzero(dist == d)
            others = others[others > s]
            pairs[d].extend((s, int(o)) for o in others)
    return {d: np.array(p, dtype=np.int64).reshape(-1, 2) for d, p in pairs.items()}


def distance_similarity_table(params, kg, max_distance=8, budget=100_000, seed=0):
    """Mean tail-embedding cosine of entity pairs at each exact distance.

    Exhaustive when a distance has at most ``budget`` pairs, otherwise a
    uniform sample of ``budget`` pairs. Distances without pairs map to None.
    """
    rng = np.random.default_rng(seed)
    xt = encode_tails(params)
    out = {}
    for d, pairs in pairs_at_distance(kg, max_distance).items():
        if len(pairs) == 0:
            out[d] = None
            continue
        if len(pairs) > budget:
            pairs = pairs[rng.choice(len(pairs), size=budget, replace=False)]
        out[d] = float(np.mean(np.sum(xt[pairs[:, 0]] * xt[pairs[:, 1]], axis=1)))
    return out


def relation_types(kg, threshold=1.5):
    """Classify each forward relation as 1-1, 1-N, N-1 or N-N.

    Uses mean tails per head and mean heads per tail; ``>= threshold`` counts
    as "N".
    """
    types = {}
    for r in range(kg.num_relations):
        tr = kg.triples[kg.triples[:, 1] == r]
        if len(tr) == 0:
            types[r] = "1-1"
            continue
        tph = len(tr) / len(np.unique(tr[:, 0]))
        hpt = len(tr) / len(np.unique(tr[:, 2]))
        many_heads = hpt >= threshold
        many_tails = tph >= threshold
        types[r] = {(False, False): "1-1", (False, True): "1-N", (True, False): "N-1", (True, True): "N-N"}[
            (many_heads, many_tails)
        ]
    return types


def relation_type_breakdown(kg, dump, threshold=1.5):
    """Share of evaluated triples and Hits@1 per relation type."""
    if len(dump) == 0:
        raise DomainError("empty rank dump")
    types = relation_types(kg, threshold)
    row_type = np.array([types[int(r)] for r in dump.rels])
    forward = dump.directions == "forward"
    n_triples = max(int(forward.sum()), 1)
    out = {}
    for name in RELATION_TYPES:
        sel = row_type == name
        share = float((sel & forward).sum() / n_triples)
        hits1 = float(np.mean(dump.ranks[sel] <= 1)) if sel.any() else None
        out[name] = (share, hits1)
    return out


def betweenness(kg, normalized=True, node_cap=DEFAULT_NODE_CAP):
    """Exact Brandes betweenness on the undirected graph.

    Normalised by ``(n-1)(n-2)/2``, the number of pairs a node can sit
    between. Refuses graphs larger than ``node_cap``.
    """
    n = kg.num_entities
    if n > node_cap:
        raise DomainError(f"graph has {n} entities, above the exact-betweenness cap of {node_cap}")
    adj = [kg.indices[kg.indptr[v]:kg.indptr[v + 1]].tolist() for v in range(n)]
    bc = [0.0] * n
    for s in range(n):
        stack = []
        preds = [[] for _ in range(n)]
        sigma = [0] * n
        dist = [-1] * n
        sigma[s] = 1
        dist[s] = 0
        q = deque([s])
        while q:
            v = q.popleft()
            stack.append(v)
            for w in adj[v]:
                if dist[w] < 0:
                    dist[w] = dist[v] + 1
                    q.append(w)
                if dist[w] == dist[v] + 1:
                    sigma[w] += sigma[v]
                    preds[w].append(v)
        delta = [0.0] * n
        while stack:
            w = stack.pop()
            for v in preds[w]:
                delta[v] += sigma[v] / sigma[w] * (1.0 + delta[w])
            if w != s:
                bc[w] += delta[w]
    out = np.array(bc) / 2.0
    if normalized and n > 2:
        out /= (n - 1) * (n - 2) / 2.0
    return out


def extreme_triples(counts, n=1000):
    """Ids of the ``n`` most and ``n`` least visited triples (ties by id)."""
    counts = np.asarray(counts)
    ids = np.arange(len(counts))
    order = np.lexsort((ids, -counts))
    n = min(n, len(counts))
    most = order[:n]
    least = np.lexsort((ids, counts))[:n]
    return most, least


def centrality_stats(kg, triple_sets, node_cap=DEFAULT_NODE_CAP, bc=None):
    """Mean degree and mean normalised betweenness of each set's entities."""
    if bc is None:
        bc = betweenness(kg, node_cap=node_cap)
    out = {}
    for name, tids in triple_sets.items():
        tids = np.asarray(tids, dtype=np.int64)
        if len(tids) == 0:
            raise DomainError(f"triple set {name!r} is empty")
        ents = np.unique(kg.triples[tids][:, [0, 2]])
        out[name] = (float(kg.degree[ents].mean()), float(bc[ents].mean()))
    return out


def batch_for_triple(kg, store, tid, batch_size, seed=0):
    """Batch whose first forward row is ``tid``, the rest drawn from its subgraph."""
    rng = center_rng(seed, tid)
    half = batch_size // 2
    pool = store[tid].triple_ids
    pool = pool[pool != tid]
    k = min(half - 1, len(pool))
    others = rng.choice(pool, size=k, replace=False) if k else np.zeros(0, dtype=np.int64)
    extra = _draw_excluding(rng, kg.num_triples, half - 1 - k, np.concatenate([[tid], others]))
    ids = np.concatenate([[tid], others, extra]).astype(np.int64)
    topped = np.zeros(len(ids), dtype=bool)
    topped[1 + k:] = True
    return build_batch(kg, ids, topped, center_id=tid, sub=store[tid])


def fp_loss_comparison(params, kg, fp_triples, all_triples, store, batch_size, loss_cfg, seed=0):
    """Average ``psi * L`` and plain ``L`` over each triple set.

    Each triple is scored as the first row of a batch rebuilt from its own
    subgraph with the current parameters.
    """
    out = {}
    for name, tids in (("false_positives", fp_triples), ("all_triples", all_triples)):
        weighted, plain = [], []
        for tid in np.asarray(tids, dtype=np.int64):
            batch = batch_for_triple(kg, store, int(tid), batch_size, seed)
            _, per_row = batch_loss(params, batch, loss_cfg)
            plain.append(per_row[0])
            weighted.append(batch.psi[0] * per_row[0])
        out[name] = (float(np.mean(weighted)) if weighted else None, float(np.mean(plain)) if plain else None)
    return out
