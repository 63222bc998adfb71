"""Random-walk-with-restart subgraph extraction around every training triple.

Each center triple gets its own walk. The walker starts at the head or the
tail (inverse-degree weighted), restarts to that start entity with
probability ``restart_prob`` and otherwise steps to a neighbor drawn from one
of three neighbor distributions. Every traversed edge contributes one of its
triples until ``max_triples`` distinct triples are collected.
"""

import logging
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass, field

import numpy as np

from .exceptions import ConfigError, ContractViolation, DomainError
from .kg_store import UNREACHABLE, bfs_distances

logger = logging.getLogger(__name__)

NEIGHBOR_MODES = ("inverse_degree", "uniform", "degree_proportional")
# sampler names used on the command line
SAMPLER_MODES = {"brwr": "inverse_degree", "rwr": "uniform", "brwr_p": "degree_proportional"}

STEP_CAP_FACTOR = 50


class SamplingError(RuntimeError):
    def __init__(self, center_id, cause):
        self.center_id = center_id
        super().__init__(f"center triple {center_id}: {cause}")


@dataclass(frozen=True)
class SamplerConfig:
    restart_prob: float = 1.0 / 25.0
    max_triples: int = 10_000
    neighbor_mode: str = "inverse_degree"
    seed: int = 0

    def __post_init__(self):
        if not (0.0 < self.restart_prob <= 1.0):
            raise ConfigError(f"restart_prob must be in (0, 1], got {self.restart_prob}")
        if int(self.max_triples) < 1:
            raise ConfigError(f"max_triples must be >= 1, got {self.max_triples}")
        if self.neighbor_mode not in NEIGHBOR_MODES:
            raise ConfigError(
                f"neighbor_mode must be one of {NEIGHBOR_MODES}, got {self.neighbor_mode!r}"
            )
        if not (0 <= int(self.seed) < 2**64):
            raise ConfigError("seed must fit in an unsigned 64-bit integer")


@dataclass
class Subgraph:
    """Triples collected around one center triple.

    ``dist_entities``/``dist_values`` hold the hop distance from the center
    head to every entity touched by ``triple_ids`` (UNREACHABLE = -1).
    """

    center: int
    center_head: int
    triple_ids: np.ndarray
    dist_entities: np.ndarray = field(default_factory=lambda: np.zeros(0, dtype=np.int64))
    dist_values: np.ndarray = field(default_factory=lambda: np.zeros(0, dtype=np.int64))

    def __len__(self):
        return len(self.triple_ids)

    @property
    def has_distances(self):
        return len(self.dist_entities) > 0

    def distances(self, entities):
        """Vectorised lookup; raises if any entity has no recorded distance."""
        entities = np.asarray(entities, dtype=np.int64)
        pos = np.searchsorted(self.dist_entities, entities)
        pos = np.minimum(pos, max(len(self.dist_entities) - 1, 0))
        ok = len(self.dist_entities) > 0 and np.all(self.dist_entities[pos] == entities)
        if not ok:
            missing = entities[self.dist_entities[pos] != entities] if len(self.dist_entities) else entities
            raise ContractViolation(
                f"no center distance recorded for entities {missing.tolist()[:5]} "
                f"in subgraph of center {self.center}"
            )
        return self.dist_values[pos]

    def distance(self, entity):
        return int(self.distances([entity])[0])

    def __eq__(self, other):
        if not isinstance(other, Subgraph):
            return NotImplemented
        return (
            self.center == other.center
            and self.center_head == other.center_head
            and np.array_equal(self.triple_ids, other.triple_ids)
            and np.array_equal(self.dist_entities, other.dist_entities)
            and np.array_equal(self.dist_values, other.dist_values)
        )


class SubgraphStore:
    """One subgraph per training triple, indexed by center triple id."""

    def __init__(self, subgraphs, sampler="brwr"):
        self.subgraphs = list(subgraphs)
        self.sampler = sampler
        for i, sub in enumerate(self.subgraphs):
            if sub.center != i:
                raise ContractViolation(f"store slot {i} holds center {sub.center}")

    def __len__(self):
        return len(self.subgraphs)

    def __getitem__(self, i):
        return self.subgraphs[i]

    def __iter__(self):
        return iter(self.subgraphs)

    def __eq__(self, other):
        if not isinstance(other, SubgraphStore):
            return NotImplemented
        return self.sampler == other.sampler and self.subgraphs == other.subgraphs

    def save(self, path):
        with open(path, "w", encoding="utf-8", newline="\n") as fh:
            fh.write(f"# sampler={self.sampler}\n")
            for sub in self.subgraphs:
                fh.write(f"C {sub.center} {sub.center_head}\n")
                for tid in sub.triple_ids:
                    fh.write(f"T {tid}\n")
                for e, d in zip(sub.dist_entities, sub.dist_values):
                    fh.write(f"D {e} {'INF' if d == UNREACHABLE else d}\n")
                fh.write("\n")

    @classmethod
    def load(cls, path):
        subgraphs, sampler = [], "brwr"
        cur = None

        def flush():
            if cur is not None:
                subgraphs.append(
                    Subgraph(
                        cur[0],
                        cur[1],
                        np.array(cur[2], dtype=np.int64),
                        np.array(cur[3], dtype=np.int64),
                        np.array(cur[4], dtype=np.int64),
                    )
                )

        with open(path, encoding="utf-8") as fh:
            for lineno, line in enumerate(fh, start=1):
                line = line.strip()
                if not line:
                    continue
                if line.startswith("#"):
                    if line.startswith("# sampler="):
                        sampler = line.split("=", 1)[1].strip()
                    continue
                tag, *rest = line.split()
                try:
                    if tag == "C":
                        flush()
                        center = int(rest[0])
                        head = int(rest[1]) if len(rest) > 1 else -1
                        cur = (center, head, [], [], [])
                    elif tag == "T":
                        cur[2].append(int(rest[0]))
                    elif tag == "D":
                        cur[3].append(int(rest[0]))
                        cur[4].append(UNREACHABLE if rest[1] == "INF" else int(rest[1]))
                    else:
                        raise ValueError(f"unknown record tag {tag!r}")
                except (ValueError, IndexError, TypeError) as exc:
                    raise ValueError(f"{path}:{lineno}: bad subgraph record: {exc}") from exc
        flush()
        return cls(subgraphs, sampler=sampler)


def select_start_entity(kg, center, rng):
    """Pick the walk's start entity: head or tail with inverse-degree odds."""
    h, _, t = (int(x) for x in kg.triples[center])
    dh, dt = int(kg.degree[h]), int(kg.degree[t])
    if dh == 0 and dt == 0:
        if h != t:
            raise ContractViolation(f"both endpoints of triple {center} are isolated")
        return h
    if dh == 0:
        return t
    if dt == 0:
        return h
    p_head = (1.0 / dh) / (1.0 / dh + 1.0 / dt)
    return h if rng.random() < p_head else t


def neighbor_distribution(kg, u, mode="inverse_degree"):
    """Probability of stepping from ``u`` to each of its (sorted) neighbors."""
    u = kg.check_entity(u)
    nbrs = kg.indices[kg.indptr[u]:kg.indptr[u + 1]]
    if len(nbrs) == 0:
        raise DomainError(f"entity {u} has no neighbors")
    deg = kg.degree[nbrs].astype(np.float64)
    if mode == "inverse_degree":
        w = 1.0 / deg
    elif mode == "uniform":
        w = np.ones_like(deg)
    elif mode == "degree_proportional":
        w = deg
    else:
        raise ConfigError(f"unknown neighbor mode {mode!r}")
    return w / w.sum()


def _walk_tables(kg, mode):
    """Per-slot cumulative neighbor probabilities, cached on the graph."""
    cache = kg.__dict__.setdefault("_walk_cache", {})
    if mode not in cache:
        deg = kg.degree[kg.indices].astype(np.float64)
        if mode == "inverse_degree":
            w = 1.0 / deg
        elif mode == "uniform":
            w = np.ones_like(deg)
        elif mode == "degree_proportional":
            w = deg
        else:
            raise ConfigError(f"unknown neighbor mode {mode!r}")
        cum = np.empty_like(w)
        for u in np.flatnonzero(kg.degree):
            a, b = kg.indptr[u], kg.indptr[u + 1]
            c = np.cumsum(w[a:b])
            cum[a:b] = c / c[-1]
        cache[mode] = cum
    return cache[mode]


def _pick_slot(cum, start, deg, x):
    """Adjacency slot chosen by the uniform draw ``x`` from a neighbor CDF."""
    if deg == 1:
        return start
    return start + min(int(np.searchsorted(cum[start:start + deg], x, side="right")), deg - 1)


def walk_trace(kg, start, n_steps, cfg, rng):
    """Raw walk without triple collection: node after each step and restart flags."""
    start = kg.check_entity(start)
    cum = _walk_tables(kg, cfg.neighbor_mode)
    nodes = np.empty(n_steps, dtype=np.int64)
    restarted = np.zeros(n_steps, dtype=bool)
    u = start
    for i, (restart_u, step_u) in enumerate(rng.random((n_steps, 2))):
        if restart_u < cfg.restart_prob or kg.degree[u] == 0:
            u = start
            restarted[i] = True
        else:
            u = int(kg.indices[_pick_slot(cum, kg.indptr[u], kg.degree[u], step_u)])
        nodes[i] = u
    return nodes, restarted


def _walk_target(kg, center, max_triples):
    h = kg.triples[center, 0]
    supply = int(kg.component_triples[kg.component[h]])
    return min(int(max_triples), supply)


def sample_subgraph(kg, center, cfg, rng):
    """Collect up to ``cfg.max_triples`` distinct triples by walking from the center.

    The walk stops once the target is met (capped by the triples available in
    the center's connected component) or after ``50 * max_triples`` steps.
    Distances are not filled in; see :func:`compute_center_distances`.
    """
    center = int(center)
    if not (0 <= center < kg.num_triples):
        raise DomainError(f"center triple {center} out of range")
    start = select_start_entity(kg, center, rng)
    target = _walk_target(kg, center, cfg.max_triples)
    collected = {center: None}
    if target <= 1:
        return Subgraph(center, int(kg.triples[center, 0]), np.array([center], dtype=np.int64))

    cum = _walk_tables(kg, cfg.neighbor_mode)
    indptr, indices, degree = kg.indptr, kg.indices, kg.degree
    slot_indptr, slot_triples = kg.slot_indptr, kg.slot_triples
    p_r = cfg.restart_prob
    cap = STEP_CAP_FACTOR * int(cfg.max_triples)

    u = start
    steps = 0
    chunk = 1024
    while len(collected) < target and steps < cap:
        draws = rng.random((chunk, 3))
        for restart_u, step_u, pick_u in draws:
            steps += 1
            if restart_u < p_r or degree[u] == 0:
                u = start
            else:
                s = _pick_slot(cum, indptr[u], degree[u], step_u)
                lo, hi = slot_indptr[s], slot_indptr[s + 1]
                tid = slot_triples[lo] if hi - lo == 1 else slot_triples[lo + int(pick_u * (hi - lo))]
                collected[int(tid)] = None
                u = indices[s]
            if len(collected) >= target or steps >= cap:
                break
    if len(collected) < target:
        logger.debug("center %d: step cap hit with %d/%d triples", center, len(collected), target)
    return Subgraph(center, int(kg.triples[center, 0]), np.fromiter(collected, dtype=np.int64))


def compute_center_distances(kg, sub):
    """Fill hop distances from the center head for every entity in the subgraph."""
    dist = bfs_distances(kg, sub.center_head)
    ents = np.unique(kg.triples[sub.triple_ids][:, [0, 2]])
    return Subgraph(sub.center, sub.center_head, sub.triple_ids, ents, dist[ents])


def approx_distance(sub, h, t):
    """Product of the two center-head distances, with a zero factor read as 1."""
    d1, d2 = sub.distances([h, t])
    return combine_distances(d1, d2)


def combine_distances(d1, d2):
    """Vectorised ``approx_distance`` on raw center-head distances."""
    d1 = np.asarray(d1, dtype=np.int64)
    d2 = np.asarray(d2, dtype=np.int64)
    out = np.maximum(d1, 1) * np.maximum(d2, 1)
    out = np.where((d1 == UNREACHABLE) | (d2 == UNREACHABLE), UNREACHABLE, out)
    return out if out.ndim else int(out)


def center_rng(seed, center):
    return np.random.default_rng(np.random.SeedSequence([int(seed), int(center)]))


def _sample_range(kg, cfg, centers):
    out = []
    for c in centers:
        try:
            sub = sample_subgraph(kg, c, cfg, center_rng(cfg.seed, c))
            out.append(compute_center_distances(kg, sub))
        except Exception as exc:
            raise SamplingError(int(c), exc) from exc
    return out


_WORKER_KG = None


def _init_worker(kg):
    global _WORKER_KG
    _WORKER_KG = kg


def _worker_range(cfg, centers):
    return _sample_range(_WORKER_KG, cfg, centers)


def precompute_all(kg, cfg, workers=1, chunk_size=256):
    """Sample and annotate one subgraph per training triple.

    Each center seeds its own generator from ``(cfg.seed, center)``, so the
    result does not depend on ``workers``.
    """
    centers = np.arange(kg.num_triples)
    if workers is None or workers <= 1 or kg.num_triples <= chunk_size:
        subs = _sample_range(kg, cfg, centers)
    else:
        chunks = [centers[i:i + chunk_size] for i in range(0, len(centers), chunk_size)]
        subs = []
        with ProcessPoolExecutor(max_workers=workers, initializer=_init_worker, initargs=(kg,)) as ex:
            for part in ex.map(_worker_range, [cfg] * len(chunks), chunks):
                subs.extend(part)
    name = {v: k for k, v in SAMPLER_MODES.items()}[cfg.neighbor_mode]
    return SubgraphStore(subs, sampler=name)
