"""Link-prediction evaluation: MRR and Hits@{1,3,10} over both directions.

Every test triple ``(h, r, t)`` yields a forward query ``(h, r, ?)`` and a
backward query ``(t, r^-1, ?)``. Candidates are all entities scored by cosine;
in filtered mode other known-true tails are removed. Ties count against the
gold entity.
"""

import csv
import json
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field

import numpy as np

from .contrastive import encode_queries, encode_tails
from .exceptions import DomainError
from .kg_store import TripleIndex

HITS_AT = (1, 3, 10)


@dataclass
class Metrics:
    mrr: float
    hits1: float
    hits3: float
    hits10: float
    num_queries: int
    per_direction: dict = field(default_factory=dict)

    @classmethod
    def from_ranks(cls, ranks, directions=None):
        ranks = np.asarray(ranks, dtype=np.float64)
        if len(ranks) == 0:
            raise DomainError("cannot compute metrics from zero queries")
        m = cls(
            mrr=float(np.mean(1.0 / ranks)),
            hits1=float(np.mean(ranks <= 1)),
            hits3=float(np.mean(ranks <= 3)),
            hits10=float(np.mean(ranks <= 10)),
            num_queries=len(ranks),
        )
        if directions is not None:
            directions = np.asarray(directions)
            for name in ("forward", "backward"):
                sel = directions == name
                if sel.any():
                    m.per_direction[name] = cls.from_ranks(ranks[sel])
        return m

    def as_row(self):
        return {"mrr": self.mrr, "hits1": self.hits1, "hits3": self.hits3, "hits10": self.hits10}

    def rows(self):
        yield "both", self
        for name, sub in self.per_direction.items():
            yield name, sub

    def to_csv(self, path):
        with open(path, "w", encoding="utf-8", newline="") as fh:
            w = csv.writer(fh, lineterminator="\n")
            w.writerow(["direction", "mrr", "hits1", "hits3", "hits10", "queries"])
            for name, m in self.rows():
                w.writerow([name, f"{m.mrr:.10f}", f"{m.hits1:.10f}", f"{m.hits3:.10f}", f"{m.hits10:.10f}", m.num_queries])

    def to_text(self):
        lines = [f"{'direction':<10} {'MRR':>8} {'Hits@1':>8} {'Hits@3':>8} {'Hits@10':>8} {'queries':>8}"]
        for name, m in self.rows():
            lines.append(
                f"{name:<10} {m.mrr:>8.4f} {m.hits1:>8.4f} {m.hits3:>8.4f} {m.hits10:>8.4f} {m.num_queries:>8d}"
            )
        return "\n".join(lines) + "\n"


@dataclass
class RankDump:
    """One row per evaluated query; ``fp_tails`` are the candidates ranked above gold."""

    heads: np.ndarray
    rels: np.ndarray
    tails: np.ndarray
    directions: np.ndarray
    ranks: np.ndarray
    fp_tails: list

    def __len__(self):
        return len(self.ranks)

    def query_heads(self):
        """Head of the query actually asked (the tail for backward rows)."""
        return np.where(self.directions == "forward", self.heads, self.tails)

    def save_csv(self, path, kg):
        with open(path, "w", encoding="utf-8", newline="") as fh:
            w = csv.writer(fh, lineterminator="\n")
            w.writerow(["h", "r", "t", "direction", "rank", "fp_tails"])
            for i in range(len(self)):
                w.writerow(
                    [
                        kg.entities[self.heads[i]],
                        kg.relations[self.rels[i]],
                        kg.entities[self.tails[i]],
                        self.directions[i],
                        int(self.ranks[i]),
                        json.dumps([kg.entities[e] for e in self.fp_tails[i]], ensure_ascii=False),
                    ]
                )

    @classmethod
    def load_csv(cls, path, kg):
        h, r, t, d, ranks, fps = [], [], [], [], [], []
        with open(path, encoding="utf-8", newline="") as fh:
            for row in csv.DictReader(fh):
                h.append(kg.entity_index[row["h"]])
                r.append(kg.relation_index[row["r"]])
                t.append(kg.entity_index[row["t"]])
                d.append(row["direction"])
                ranks.append(int(row["rank"]))
                raw = row.get("fp_tails") or "[]"
                fps.append(np.array([kg.entity_index[e] for e in json.loads(raw)], dtype=np.int64))
        return cls(
            np.array(h, dtype=np.int64),
            np.array(r, dtype=np.int64),
            np.array(t, dtype=np.int64),
            np.array(d),
            np.array(ranks, dtype=np.int64),
            fps,
        )


def build_filter_index(kg, *splits):
    """Known-true triples from the training graph plus any extra splits."""
    parts = [kg.triples] + [np.asarray(s, dtype=np.int64).reshape(-1, 3) for s in splits]
    return TripleIndex(np.concatenate(parts), kg.num_entities, kg.num_relations)


def rank_from_scores(scores, gold, excluded=None):
    """1 + number of surviving non-gold candidates scoring >= the gold score."""
    scores = np.asarray(scores)
    ahead = scores >= scores[gold]
    ahead[gold] = False
    if excluded is not None:
        ahead &= ~np.asarray(excluded, dtype=bool)
    return 1 + int(ahead.sum())


def rank_tail(params, kg, query, gold, filter_set=()):
    """Rank of ``gold`` for query ``(h, r)`` among all entities.

    ``filter_set`` holds known-true tails; all of them except ``gold`` are
    removed from the candidate list.
    """
    h, r = query
    xq = encode_queries(params, np.array([h]), np.array([r]))[0]
    scores = encode_tails(params) @ xq
    excluded = np.zeros(len(scores), dtype=bool)
    excluded[np.asarray(list(filter_set), dtype=np.int64)] = True
    excluded[gold] = False
    return rank_from_scores(scores, gold, excluded)


def _queries(kg, test):
    test = np.asarray(test, dtype=np.int64).reshape(-1, 3)
    if len(test) == 0:
        raise DomainError("empty test set")
    if test[:, [0, 2]].max() >= kg.num_entities or test[:, [0, 2]].min() < 0:
        raise DomainError("test set references entities outside the training vocabulary")
    n = len(test)
    q_heads = np.concatenate([test[:, 0], test[:, 2]])
    q_rels = np.concatenate([test[:, 1], test[:, 1] + kg.num_relations])
    gold = np.concatenate([test[:, 2], test[:, 0]])
    directions = np.array(["forward"] * n + ["backward"] * n)
    return test, q_heads, q_rels, gold, directions


def _rank_chunk(params, xt, known, filtered, q_heads, q_rels, gold, keep_fp):
    scores = encode_queries(params, q_heads, q_rels) @ xt.T
    ranks = np.empty(len(gold), dtype=np.int64)
    fps = []
    for i in range(len(gold)):
        g = int(gold[i])
        row = scores[i]
        ahead = row >= row[g]
        ahead[g] = False
        if filtered:
            ahead[known.tails(q_heads[i], q_rels[i])] = False
        ranks[i] = 1 + int(ahead.sum())
        if keep_fp:
            fps.append(np.flatnonzero(ahead))
    return ranks, fps


def evaluate(params, kg, test, known=None, filtered=True, chunk_size=256, return_dump=False, workers=1):
    """Forward+backward ranking metrics for ``test`` triples.

    ``known`` is the filter index (see :func:`build_filter_index`); it
    defaults to the training graph plus ``test`` itself. Chunks of queries
    are ranked independently, so ``workers`` threads give the same result
    as one.
    """
    test, q_heads, q_rels, gold, directions = _queries(kg, test)
    params.check_finite()
    if known is None:
        known = build_filter_index(kg, test)
    xt = encode_tails(params)
    starts = range(0, len(gold), chunk_size)

    def run(a):
        b = min(a + chunk_size, len(gold))
        return _rank_chunk(params, xt, known, filtered, q_heads[a:b], q_rels[a:b], gold[a:b], return_dump)

    if workers and workers > 1 and len(starts) > 1:
        with ThreadPoolExecutor(max_workers=workers) as ex:
            parts = list(ex.map(run, starts))
    else:
        parts = [run(a) for a in starts]
    ranks = np.concatenate([p[0] for p in parts])
    fps = [f for p in parts for f in p[1]]
    metrics = Metrics.from_ranks(ranks, directions)
    if not return_dump:
        return metrics
    n = len(test)
    dump = RankDump(
        heads=np.concatenate([test[:, 0], test[:, 0]]),
        rels=np.concatenate([test[:, 1], test[:, 1]]),
        tails=np.concatenate([test[:, 2], test[:, 2]]),
        directions=directions,
        ranks=ranks,
        fp_tails=fps,
    )
    assert len(dump) == 2 * n
    return metrics, dump


def random_baseline(kg, test, known=None, filtered=True):
    """Expected metrics when candidates are ranked uniformly at random.

    With ``n`` surviving candidates (gold included) the rank is uniform on
    ``1..n``, so ``E[1/rank] = H_n / n`` and ``P(rank <= k) = min(k, n) / n``.
    """
    test, q_heads, q_rels, gold, directions = _queries(kg, test)
    if known is None:
        known = build_filter_index(kg, test)
    sizes = np.empty(len(gold), dtype=np.int64)
    for i in range(len(gold)):
        n = kg.num_entities
        if filtered:
            n -= int(np.sum(known.tails(q_heads[i], q_rels[i]) != gold[i]))
        sizes[i] = n
    harmonic = np.cumsum(1.0 / np.arange(1, kg.num_entities + 1))
    mrr = float(np.mean(harmonic[sizes - 1] / sizes))
    hits = {k: float(np.mean(np.minimum(k, sizes) / sizes)) for k in HITS_AT}
    return Metrics(mrr, hits[1], hits[3], hits[10], len(gold))
