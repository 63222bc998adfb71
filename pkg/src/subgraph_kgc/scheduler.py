"""Mini-batch scheduling: least-visited subgraph selection and batch assembly.

A batch of size ``B`` holds ``B/2`` forward triples in rows ``0..B/2-1`` and
their inverses ``(t, r^-1, h)`` in rows ``B/2..B-1``. Every row's tail is a
negative for every other row, except where the resulting triple is known to
be true (false-negative mask).
"""

import math
import warnings
from dataclasses import dataclass

import numpy as np

from .exceptions import ConfigError, ContractViolation
from .kg_store import UNREACHABLE, bfs_distances
from .sampler import combine_distances

SCHEDULER_MODES = ("saam", "random", "mixed")


class VisitCounter:
    """Non-decreasing per-item counts; ties resolve to the lowest index."""

    def __init__(self, size):
        self.counts = np.zeros(int(size), dtype=np.int64)

    def __len__(self):
        return len(self.counts)

    @property
    def total(self):
        return int(self.counts.sum())

    @property
    def spread(self):
        return int(self.counts.max() - self.counts.min()) if len(self.counts) else 0

    def increment(self, ids):
        ids = np.asarray(ids, dtype=np.int64)
        if len(ids) and (ids.min() < 0 or ids.max() >= len(self.counts)):
            raise ContractViolation(f"visit for unknown id among {ids.tolist()[:5]}")
        np.add.at(self.counts, ids, 1)

    def argmin(self):
        return int(np.argmin(self.counts))

    def save(self, path, label="triple_id"):
        with open(path, "w", encoding="utf-8", newline="\n") as fh:
            fh.write(f"{label}\tcount\n")
            for i, c in enumerate(self.counts):
                fh.write(f"{i}\t{c}\n")

    @classmethod
    def load(cls, path):
        with open(path, encoding="utf-8") as fh:
            next(fh)
            rows = [line.split("\t") for line in fh if line.strip()]
        counter = cls(len(rows))
        for i, (idx, count) in enumerate(rows):
            if int(idx) != i:
                raise ValueError(f"{path}: ids must be dense and ordered")
            counter.counts[i] = int(count)
        return counter


@dataclass
class MiniBatch:
    center_id: int
    reference_head: int
    triple_ids: np.ndarray
    topped_up: np.ndarray
    heads: np.ndarray
    rels: np.ndarray
    tails: np.ndarray
    head_dist: np.ndarray
    tail_dist: np.ndarray
    psi: np.ndarray
    fn_mask: np.ndarray

    @property
    def size(self):
        return len(self.heads)

    def approx_distances(self):
        """``(B, B)`` approximate distance between row-i head and row-j tail."""
        return combine_distances(self.head_dist[:, None], self.tail_dist[None, :])

    def omega(self):
        """Structural hardness 1/distance, 0 where unreachable."""
        d = self.approx_distances()
        out = np.zeros(d.shape, dtype=np.float64)
        ok = d != UNREACHABLE
        out[ok] = 1.0 / d[ok]
        return out


def next_center(store, counter):
    """Subgraph id whose center has been selected least often."""
    if len(store) == 0:
        raise ContractViolation("empty subgraph store")
    return counter.argmin()


def record_visits(counter, batch):
    """Count each forward triple of ``batch`` once; inverse rows are not counted."""
    counter.increment(batch.triple_ids)
    return counter


def _draw_excluding(rng, n_total, k, exclude):
    """``k`` distinct ids from ``range(n_total)`` avoiding ``exclude``."""
    exclude = set(int(x) for x in exclude)
    available = n_total - len(exclude)
    if k > available:
        raise ConfigError(f"need {k} more triples but only {available} are available")
    if k == 0:
        return np.zeros(0, dtype=np.int64)
    if available <= 4 * k:
        pool = np.setdiff1d(np.arange(n_total), np.fromiter(exclude, dtype=np.int64, count=len(exclude)))
        return rng.choice(pool, size=k, replace=False)
    picked = []
    seen = set(exclude)
    while len(picked) < k:
        for c in rng.integers(0, n_total, size=2 * (k - len(picked))):
            c = int(c)
            if c not in seen:
                seen.add(c)
                picked.append(c)
                if len(picked) == k:
                    break
    return np.array(picked, dtype=np.int64)


def build_batch(kg, triple_ids, topped_up, center_id=-1, sub=None, reference_head=None):
    """Turn chosen forward triples into a full batch with inverses and loss inputs."""
    triple_ids = np.asarray(triple_ids, dtype=np.int64)
    fwd = kg.triples[triple_ids]
    heads = np.concatenate([fwd[:, 0], fwd[:, 2]])
    rels = np.concatenate([fwd[:, 1], fwd[:, 1] + kg.num_relations])
    tails = np.concatenate([fwd[:, 2], fwd[:, 0]])

    if reference_head is None:
        reference_head = sub.center_head if sub is not None else int(heads[0])
    needed = np.unique(np.concatenate([heads, tails]))
    dist = None
    if sub is not None and sub.has_distances and sub.center_head == reference_head:
        pos = np.searchsorted(sub.dist_entities, needed)
        pos = np.minimum(pos, len(sub.dist_entities) - 1)
        if np.all(sub.dist_entities[pos] == needed):
            full = np.full(kg.num_entities, UNREACHABLE, dtype=np.int64)
            full[needed] = sub.dist_values[pos]
            dist = full
    if dist is None:
        dist = bfs_distances(kg, reference_head)

    deg = kg.degree[tails]
    if np.any(deg == 0):
        warnings.warn("batch contains a tail with no neighbors; its frequency weight is 0", RuntimeWarning, stacklevel=2)
    psi = np.log1p(deg.astype(np.float64))

    n = len(heads)
    mask = kg.known.contains(
        np.repeat(heads, n).reshape(n, n),
        np.repeat(rels, n).reshape(n, n),
        np.tile(tails, n).reshape(n, n),
    )
    np.fill_diagonal(mask, False)
    return MiniBatch(
        center_id=int(center_id),
        reference_head=int(reference_head),
        triple_ids=triple_ids,
        topped_up=np.asarray(topped_up, dtype=bool),
        heads=heads,
        rels=rels,
        tails=tails,
        head_dist=dist[heads],
        tail_dist=dist[tails],
        psi=psi,
        fn_mask=mask,
    )


def assemble_batch(kg, sub, batch_size, mode, rng, random_ids=None):
    """Draw the forward triples of one batch and attach inverses and loss inputs.

    ``saam`` takes ``B/2`` distinct triples from ``sub`` (topped up uniformly
    from the whole training set if the subgraph is too small); ``random``
    takes ``B/2`` triples from the training set (``random_ids`` if given);
    ``mixed`` takes half of the forward rows each way.
    """
    if mode not in SCHEDULER_MODES:
        raise ConfigError(f"scheduler mode must be one of {SCHEDULER_MODES}, got {mode!r}")
    if batch_size < 2 or batch_size % 2:
        raise ConfigError(f"batch_size must be an even integer >= 2, got {batch_size}")
    half = batch_size // 2
    if mode == "random":
        n_sub, n_rand = 0, half
    elif mode == "mixed":
        n_rand = half // 2
        n_sub = half - n_rand
    else:
        n_sub, n_rand = half, 0
    if n_sub and sub is None:
        raise ContractViolation(f"{mode} batches need a subgraph")

    chosen = np.zeros(0, dtype=np.int64)
    topped = np.zeros(0, dtype=bool)
    if n_sub:
        pool = sub.triple_ids
        if len(pool) >= n_sub:
            chosen = rng.choice(pool, size=n_sub, replace=False)
            topped = np.zeros(n_sub, dtype=bool)
        else:
            extra = _draw_excluding(rng, kg.num_triples, n_sub - len(pool), pool)
            chosen = np.concatenate([rng.permutation(pool), extra])
            topped = np.concatenate([np.zeros(len(pool), bool), np.ones(len(extra), bool)])
    if n_rand:
        if random_ids is not None:
            rand = np.asarray(random_ids, dtype=np.int64)
        else:
            rand = _draw_excluding(rng, kg.num_triples, n_rand, chosen)
        chosen = np.concatenate([chosen, rand])
        topped = np.concatenate([topped, np.zeros(len(rand), bool) if mode == "random" else np.ones(len(rand), bool)])

    center_id = sub.center if sub is not None else -1
    return build_batch(kg, chosen, topped, center_id=center_id, sub=sub)


class Scheduler:
    """Drives batch selection for one training run and keeps all visit tallies.

    ``center_visits`` counts how often each subgraph was chosen (drives
    :func:`next_center`); ``triple_visits`` and ``entity_visits`` count
    forward-triple batch membership.
    """

    def __init__(self, kg, store, batch_size, mode="saam", seed=0):
        if mode not in SCHEDULER_MODES:
            raise ConfigError(f"scheduler mode must be one of {SCHEDULER_MODES}, got {mode!r}")
        if batch_size < 2 or batch_size % 2:
            raise ConfigError(f"batch_size must be an even integer >= 2, got {batch_size}")
        if mode != "random" and (store is None or len(store) != kg.num_triples):
            raise ContractViolation("subgraph store must hold one subgraph per training triple")
        self.kg = kg
        self.store = store
        self.batch_size = int(batch_size)
        self.mode = mode
        self.rng = np.random.default_rng(np.random.SeedSequence([int(seed), 0x5CED]))
        self.center_visits = VisitCounter(kg.num_triples)
        self.triple_visits = VisitCounter(kg.num_triples)
        self.entity_visits = VisitCounter(kg.num_entities)

    def iterations_per_epoch(self):
        if self.mode == "random":
            return math.ceil(self.kg.num_triples / (self.batch_size // 2))
        return math.ceil(self.kg.num_triples / self.batch_size)

    def _record(self, batch):
        record_visits(self.triple_visits, batch)
        fwd = self.kg.triples[batch.triple_ids]
        self.entity_visits.increment(np.concatenate([fwd[:, 0], fwd[:, 2]]))

    def epoch(self):
        """Yield the batches of one epoch, updating counters as they are drawn."""
        half = self.batch_size // 2
        if self.mode == "random":
            order = self.rng.permutation(self.kg.num_triples)
            for i in range(0, len(order), half):
                ids = order[i:i + half]
                batch = build_batch(self.kg, ids, np.zeros(len(ids), bool))
                self._record(batch)
                yield batch
            return
        for _ in range(self.iterations_per_epoch()):
            cid = next_center(self.store, self.center_visits)
            self.center_visits.increment([cid])
            batch = assemble_batch(self.kg, self.store[cid], self.batch_size, self.mode, self.rng)
            self._record(batch)
            yield batch
