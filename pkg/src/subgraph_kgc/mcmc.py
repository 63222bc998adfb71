"""Metropolis-Hastings negative sampling along DFS paths.

The target over candidate tails for a query ``(h, r)`` is
``max(cos(x_hr, x_y), COS_FLOOR) ** alpha``. Proposals mix a uniform draw
over all entities with a uniform draw over the ``k`` tails nearest to the
current state (by tail-embedding cosine), half and half.
"""

import logging
import warnings
from dataclasses import dataclass

import numpy as np

from .contrastive import encode, encode_tails
from .exceptions import ConfigError
from .sampler import Subgraph, SubgraphStore, center_rng, compute_center_distances

logger = logging.getLogger(__name__)

COS_FLOOR = 1e-6


@dataclass(frozen=True)
class McmcConfig:
    alpha: float = 0.5
    k: int = 16
    d: int = 512
    burn_in: int = 100
    seed: int = 0
    max_retries: int = 10

    def __post_init__(self):
        if not (0.0 < self.alpha < 1.0):
            raise ConfigError(f"alpha must be in (0, 1), got {self.alpha}")
        if self.k < 1 or self.d < 1:
            raise ConfigError("k and d must be positive")
        if self.burn_in < 0:
            raise ConfigError("burn_in must be >= 0")


class NearestTails:
    """Exact ``k``-nearest tails by cosine, excluding the entity itself.

    Ties go to the smaller id. Results are memoised per entity, which is
    exact as long as the embeddings do not change.
    """

    def __init__(self, params, k):
        self.xt = encode_tails(params)
        self.n = self.xt.shape[0]
        self.k = int(k)
        if self.n <= self.k:
            raise ConfigError(f"k={self.k} needs more than {self.k} entities, have {self.n}")
        self._cache = {}

    def neighbors(self, x):
        x = int(x)
        if x not in self._cache:
            cos = self.xt @ self.xt[x]
            ids = np.arange(self.n)
            keep = ids != x
            order = np.lexsort((ids[keep], -cos[keep]))
            self._cache[x] = np.sort(ids[keep][order[: self.k]])
        return self._cache[x]

    def density(self, y, x):
        """q(y | x)."""
        nn = self.neighbors(x)
        pos = np.searchsorted(nn, y)
        inside = pos < len(nn) and nn[pos] == y
        return 0.5 / self.n + (0.5 / self.k if inside else 0.0)


def propose(kg, params, x, k, rng, table=None):
    """Draw ``y ~ q(.|x)``; return ``(y, q(y|x), q(x|y))``."""
    table = table if table is not None else NearestTails(params, k)
    if rng.random() < 0.5:
        y = int(rng.integers(table.n))
    else:
        y = int(rng.choice(table.neighbors(x)))
    return y, table.density(y, x), table.density(x, y)


def target_density(cos, alpha):
    return np.maximum(cos, COS_FLOOR) ** alpha


def acceptance_probability(cos_x, cos_y, q_yx, q_xy, alpha):
    ratio = (target_density(cos_y, alpha) / target_density(cos_x, alpha)) * (q_xy / q_yx)
    return float(min(1.0, ratio))


def mh_step(kg, params, h, r, x, proposal, rng, alpha=0.5, x_hr=None, xt=None):
    """One accept/reject move from state ``x`` given ``proposal = (y, q(y|x), q(x|y))``."""
    y, q_yx, q_xy = proposal
    if x_hr is None:
        x_hr = encode(params, "head_rel", h, r)
    if xt is None:
        cos_x = float(x_hr @ encode(params, "tail", x))
        cos_y = float(x_hr @ encode(params, "tail", y))
    else:
        cos_x, cos_y = float(x_hr @ xt[x]), float(x_hr @ xt[y])
    a = acceptance_probability(cos_x, cos_y, q_yx, q_xy, alpha)
    return y if rng.random() <= a else x


def run_chain(kg, params, h, r, start, steps, cfg, rng):
    """Plain M-H chain for a fixed query; returns the visited states."""
    table = NearestTails(params, cfg.k)
    x_hr = encode(params, "head_rel", h, r)
    x = int(start)
    out = np.empty(steps, dtype=np.int64)
    for i in range(steps):
        prop = propose(kg, params, x, cfg.k, rng, table)
        x = mh_step(kg, params, h, r, x, prop, rng, cfg.alpha, x_hr=x_hr, xt=table.xt)
        out[i] = x
    return out


def _heads_index(kg):
    cache = kg.__dict__.setdefault("_heads_cache", None)
    if cache is None:
        order = np.argsort(kg.triples[:, 0], kind="stable")
        counts = np.bincount(kg.triples[:, 0], minlength=kg.num_entities)
        indptr = np.zeros(kg.num_entities + 1, dtype=np.int64)
        np.cumsum(counts, out=indptr[1:])
        cache = (indptr, order)
        kg.__dict__["_heads_cache"] = cache
    return cache


def dfs_path(kg, start, d, first_triple=None):
    """Triples met by a depth-first traversal from ``start``, at most ``d``."""
    path = []
    used = set()
    visited = {int(start)}
    if first_triple is not None:
        first_triple = int(first_triple)
        path.append(first_triple)
        used.add(first_triple)
        h, _, t = kg.triples[first_triple]
        visited.update((int(h), int(t)))
        stack = [(int(t), 0), (int(h), 0)] if int(start) == int(h) else [(int(h), 0), (int(t), 0)]
    else:
        stack = [(int(start), 0)]
    while stack and len(path) < d:
        u, slot = stack[-1]
        if slot >= kg.degree[u]:
            stack.pop()
            continue
        stack[-1] = (u, slot + 1)
        v = int(kg.indices[kg.indptr[u] + slot])
        if v in visited:
            continue
        tid = int(kg.edge_triples(u, slot)[0])
        if tid in used:
            continue
        visited.add(v)
        used.add(tid)
        path.append(tid)
        stack.append((v, 0))
    return path


@dataclass
class McmcSample:
    dfs_triples: list
    negative_triples: list

    def rows(self, kg):
        """Forward rows then inverse rows as ``(head, rel, tail)`` id triples."""
        ids = list(self.dfs_triples) + list(self.negative_triples)
        fwd = kg.triples[np.array(ids, dtype=np.int64)].reshape(-1, 3)
        inv = np.stack([fwd[:, 2], fwd[:, 1] + kg.num_relations, fwd[:, 0]], axis=1)
        return np.concatenate([fwd, inv])

    def triple_ids(self):
        seen = dict.fromkeys(list(self.dfs_triples) + list(self.negative_triples))
        return np.fromiter(seen, dtype=np.int64)


def sample_mcmc_subgraph(kg, params, start, cfg, rng=None, first_triple=None):
    """DFS path of ``cfg.d`` triples plus M-H sampled negative-anchored triples.

    The chain state carries over from one path triple to the next; the first
    ``cfg.burn_in`` path triples only advance the chain. After that, each
    path triple contributes ``cfg.k`` states, and each state ``y`` anchors a
    random training triple with head ``y``.
    """
    rng = rng if rng is not None else np.random.default_rng(cfg.seed)
    path = dfs_path(kg, start, cfg.d, first_triple=first_triple)
    table = NearestTails(params, cfg.k)
    indptr, by_head = _heads_index(kg)

    x = int(rng.integers(kg.num_entities))
    i = 0
    negatives = []
    for tid in path:
        h, r, _ = (int(v) for v in kg.triples[tid])
        x_hr = encode(params, "head_rel", h, r)
        if i < cfg.burn_in:
            i += 1
            prop = propose(kg, params, x, cfg.k, rng, table)
            x = mh_step(kg, params, h, r, x, prop, rng, cfg.alpha, x_hr=x_hr, xt=table.xt)
            continue
        for _ in range(cfg.k):
            anchored = None
            for _attempt in range(cfg.max_retries + 1):
                prop = propose(kg, params, x, cfg.k, rng, table)
                x = mh_step(kg, params, h, r, x, prop, rng, cfg.alpha, x_hr=x_hr, xt=table.xt)
                lo, hi = indptr[x], indptr[x + 1]
                if hi > lo:
                    anchored = int(by_head[lo + int(rng.integers(hi - lo))])
                    break
            if anchored is None:
                warnings.warn(
                    f"no outgoing triple for sampled heads after {cfg.max_retries} retries; skipped",
                    RuntimeWarning,
                    stacklevel=2,
                )
                continue
            negatives.append(anchored)
    return McmcSample(path, negatives)


def mcmc_store(kg, params, cfg):
    """One M-H subgraph per training triple, DFS rooted at the center's head."""
    subs = []
    for c in range(kg.num_triples):
        h = int(kg.triples[c, 0])
        sample = sample_mcmc_subgraph(kg, params, h, cfg, center_rng(cfg.seed, c), first_triple=c)
        sub = Subgraph(c, h, sample.triple_ids())
        subs.append(compute_center_distances(kg, sub))
    return SubgraphStore(subs, sampler="mcmc")
