"""Knowledge graph ingestion and indexing.

Entities and relations get dense integer ids in order of first appearance.
Every forward relation ``k`` (``0 <= k < R``) has an inverse ``k + R``.
Adjacency is the undirected, de-duplicated view of the forward triples;
self-loops are kept as triples but do not make an entity its own neighbor.
"""

import logging
import warnings

import numpy as np
from scipy.sparse import coo_matrix
from scipy.sparse.csgraph import connected_components

from .exceptions import DomainError, KGFormatError

logger = logging.getLogger(__name__)

UNREACHABLE = -1

__all__ = [
    "UNREACHABLE",
    "KnowledgeGraph",
    "TripleIndex",
    "ingest_triples",
    "read_triple_file",
    "read_entity_meta",
    "load_split",
    "export_triples",
    "neighbors",
    "frequency_weight",
    "frequency_weights",
    "bfs_distances",
]


class TripleIndex:
    """Membership test over a set of forward triples and their inverses.

    Triples are packed into int64 keys ``(h * R_total + r) * E + t`` and kept
    sorted, so lookups are vectorised ``searchsorted`` calls.
    """

    def __init__(self, triples, num_entities, num_relations):
        triples = np.asarray(triples, dtype=np.int64).reshape(-1, 3)
        self.num_entities = int(num_entities)
        self.num_relations = int(num_relations)
        h, r, t = triples[:, 0], triples[:, 1], triples[:, 2]
        fwd = self._pack(h, r, t)
        inv = self._pack(t, r + self.num_relations, h)
        self._keys = np.unique(np.concatenate([fwd, inv]))

    def _pack(self, h, r, t):
        h = np.asarray(h, dtype=np.int64)
        r = np.asarray(r, dtype=np.int64)
        t = np.asarray(t, dtype=np.int64)
        return (h * (2 * self.num_relations) + r) * self.num_entities + t

    def contains(self, h, r, t):
        """Vectorised membership; ``r`` may be a forward or an inverse id."""
        keys = self._pack(h, r, t)
        pos = np.searchsorted(self._keys, keys)
        pos = np.minimum(pos, len(self._keys) - 1)
        if len(self._keys) == 0:
            return np.zeros(np.shape(keys), dtype=bool)
        return self._keys[pos] == keys

    def tails(self, h, r):
        """Sorted array of every ``t`` with ``(h, r, t)`` in the index."""
        lo = self._pack(h, r, 0)
        hi = lo + self.num_entities
        a, b = np.searchsorted(self._keys, [lo, hi])
        return (self._keys[a:b] - lo).astype(np.int64)

    def __len__(self):
        return len(self._keys)


class KnowledgeGraph:
    """Immutable knowledge graph with dense ids and undirected adjacency.

    Parameters
    ----------
    entities : list of str
        Entity names; position is the entity id.
    relations : list of str
        Forward relation names; position is the relation id.
    triples : array-like of shape (n, 3)
        Forward ``(head, relation, tail)`` id triples, unique.
    metadata : dict, optional
        ``entity_id -> (name, description)``. Stored verbatim, never encoded.
    """

    def __init__(self, entities, relations, triples, metadata=None):
        self.entities = list(entities)
        self.relations = list(relations)
        self.entity_index = {e: i for i, e in enumerate(self.entities)}
        self.relation_index = {r: i for i, r in enumerate(self.relations)}
        self.metadata = dict(metadata or {})

        triples = np.asarray(triples, dtype=np.int64).reshape(-1, 3)
        n_ent, n_rel = len(self.entities), len(self.relations)
        if len(triples):
            if triples[:, [0, 2]].min() < 0 or triples[:, [0, 2]].max() >= n_ent:
                raise DomainError("triple endpoint outside the entity vocabulary")
            if triples[:, 1].min() < 0 or triples[:, 1].max() >= n_rel:
                raise DomainError("triple relation outside the relation vocabulary")
        self.triples = triples
        self.triples.setflags(write=False)

        self._build_adjacency()
        self.known = TripleIndex(triples, n_ent, n_rel)

    def _build_adjacency(self):
        n = self.num_entities
        h, t = self.triples[:, 0], self.triples[:, 2]
        loop = h == t
        u = np.concatenate([h[~loop], t[~loop]])
        v = np.concatenate([t[~loop], h[~loop]])
        tid = np.concatenate([np.flatnonzero(~loop)] * 2)

        order = np.lexsort((tid, v, u))
        u, v, tid = u[order], v[order], tid[order]
        if len(u):
            new_slot = np.ones(len(u), dtype=bool)
            new_slot[1:] = (u[1:] != u[:-1]) | (v[1:] != v[:-1])
        else:
            new_slot = np.zeros(0, dtype=bool)
        slot_of = np.cumsum(new_slot) - 1

        self.indices = v[new_slot]
        slot_owner = u[new_slot]
        self.degree = np.bincount(slot_owner, minlength=n).astype(np.int64)
        self.indptr = np.zeros(n + 1, dtype=np.int64)
        np.cumsum(self.degree, out=self.indptr[1:])

        # triples carried by each adjacency slot (parallel edges share a slot)
        n_slots = len(self.indices)
        self.slot_indptr = np.zeros(n_slots + 1, dtype=np.int64)
        if n_slots:
            np.cumsum(np.bincount(slot_of, minlength=n_slots), out=self.slot_indptr[1:])
        self.slot_triples = tid

        for arr in (self.indices, self.degree, self.indptr, self.slot_indptr, self.slot_triples):
            arr.setflags(write=False)

        # connected components including self-loop-only entities
        if n:
            adj = coo_matrix(
                (np.ones(len(self.triples)), (self.triples[:, 0], self.triples[:, 2])),
                shape=(n, n),
            )
            _, self.component = connected_components(adj, directed=False)
            comp_triples = np.bincount(
                self.component[self.triples[:, 0]], minlength=self.component.max() + 1
            )
            self.component_triples = comp_triples
        else:
            self.component = np.zeros(0, dtype=np.int64)
            self.component_triples = np.zeros(0, dtype=np.int64)

    @property
    def num_entities(self):
        return len(self.entities)

    @property
    def num_relations(self):
        """Number of forward relations."""
        return len(self.relations)

    @property
    def num_relations_total(self):
        """Forward plus inverse relation ids."""
        return 2 * len(self.relations)

    @property
    def num_triples(self):
        return len(self.triples)

    @property
    def num_edges(self):
        """Undirected edges after merging parallel relations."""
        return int(self.degree.sum()) // 2

    @property
    def average_degree(self):
        return float(self.degree.sum()) / max(self.num_entities, 1)

    def inverse_relation(self, r):
        return (np.asarray(r) + self.num_relations) % self.num_relations_total

    def is_inverse(self, r):
        return np.asarray(r) >= self.num_relations

    def relation_name(self, r):
        r = int(r)
        if r < self.num_relations:
            return self.relations[r]
        return self.relations[r - self.num_relations] + "^-1"

    def neighbors(self, v):
        return neighbors(self, v)

    def edge_triples(self, u, slot):
        """Triple ids on the ``slot``-th adjacency entry of ``u``."""
        s = self.indptr[u] + slot
        return self.slot_triples[self.slot_indptr[s]:self.slot_indptr[s + 1]]

    def check_entity(self, v):
        if not (0 <= int(v) < self.num_entities):
            raise DomainError(f"entity id {v} out of range [0, {self.num_entities})")
        return int(v)

    def __repr__(self):
        return (
            f"KnowledgeGraph(entities={self.num_entities}, "
            f"relations={self.num_relations}, triples={self.num_triples})"
        )

    @classmethod
    def from_labeled(cls, labeled_triples, extra_entities=(), metadata=None):
        """Build from ``(head, relation, tail)`` string triples.

        Ids follow first appearance (head before tail); ``extra_entities`` not
        seen in any triple are appended afterwards as isolated entities.
        """
        ent_index, rel_index = {}, {}
        ids = []
        seen = {}
        for n, (h, r, t) in enumerate(labeled_triples):
            key = (h, r, t)
            if key in seen:
                raise KGFormatError(
                    f"duplicate triple {h!r} {r!r} {t!r} (first at item {seen[key]})",
                    lineno=n + 1,
                )
            seen[key] = n + 1
            hi = ent_index.setdefault(h, len(ent_index))
            ri = rel_index.setdefault(r, len(rel_index))
            ti = ent_index.setdefault(t, len(ent_index))
            ids.append((hi, ri, ti))
        for e in extra_entities:
            ent_index.setdefault(e, len(ent_index))
        meta = {}
        for name, value in (metadata or {}).items():
            if name in ent_index:
                meta[ent_index[name]] = value
        return cls(list(ent_index), list(rel_index), np.array(ids, dtype=np.int64).reshape(-1, 3), meta)


def read_triple_file(path):
    """Yield ``(lineno, head, relation, tail)`` from a TAB-separated file."""
    with open(path, encoding="utf-8", newline="\n") as fh:
        for lineno, line in enumerate(fh, start=1):
            line = line.rstrip("\n").rstrip("\r")
            if not line:
                continue
            parts = line.split("\t")
            if len(parts) != 3 or not all(parts):
                raise KGFormatError(
                    f"expected 'head<TAB>relation<TAB>tail', got {len(parts)} field(s)",
                    path=path,
                    lineno=lineno,
                )
            yield lineno, parts[0], parts[1], parts[2]


def read_entity_meta(path):
    """Parse ``entity_id<TAB>name<TAB>description`` into ``{id: (name, desc)}``."""
    meta = {}
    with open(path, encoding="utf-8", newline="\n") as fh:
        for lineno, line in enumerate(fh, start=1):
            line = line.rstrip("\n").rstrip("\r")
            if not line:
                continue
            parts = line.split("\t")
            if len(parts) < 2 or len(parts) > 3 or not parts[0]:
                raise KGFormatError(
                    "expected 'entity_id<TAB>name<TAB>description'", path=path, lineno=lineno
                )
            if parts[0] in meta:
                raise KGFormatError(f"duplicate entity {parts[0]!r}", path=path, lineno=lineno)
            meta[parts[0]] = (parts[1], parts[2] if len(parts) == 3 else "")
    return meta


def ingest_triples(path, entity_meta=None):
    """Load a triple file (and optional entity metadata) into a KnowledgeGraph."""
    labeled = []
    first_line = {}
    for lineno, h, r, t in read_triple_file(path):
        key = (h, r, t)
        if key in first_line:
            raise KGFormatError(
                f"duplicate triple (first seen on line {first_line[key]})",
                path=path,
                lineno=lineno,
            )
        first_line[key] = lineno
        labeled.append(key)
    meta = read_entity_meta(entity_meta) if entity_meta is not None else {}
    kg = KnowledgeGraph.from_labeled(labeled, extra_entities=list(meta), metadata=meta)
    logger.info("ingested %s from %s", kg, path)
    return kg


def load_split(path, kg):
    """Map a held-out split onto ``kg``'s vocabulary.

    Unknown entities or relations are rejected: evaluation is transductive.
    """
    rows = []
    for lineno, h, r, t in read_triple_file(path):
        for name, vocab, kind in ((h, kg.entity_index, "entity"), (r, kg.relation_index, "relation"), (t, kg.entity_index, "entity")):
            if name not in vocab:
                raise DomainError(f"{path}:{lineno}: unseen {kind} {name!r}")
        rows.append((kg.entity_index[h], kg.relation_index[r], kg.entity_index[t]))
    return np.array(rows, dtype=np.int64).reshape(-1, 3)


def export_triples(kg, path, triples=None):
    triples = kg.triples if triples is None else triples
    with open(path, "w", encoding="utf-8", newline="\n") as fh:
        for h, r, t in triples:
            fh.write(f"{kg.entities[h]}\t{kg.relations[r]}\t{kg.entities[t]}\n")


def neighbors(kg, v):
    """Sorted, duplicate-free undirected neighbors of ``v``."""
    v = kg.check_entity(v)
    return kg.indices[kg.indptr[v]:kg.indptr[v + 1]]


def frequency_weight(kg, t):
    """ln(|N(t)| + 1). Returns 0 (with a warning) for isolated entities."""
    t = kg.check_entity(t)
    deg = int(kg.degree[t])
    if deg == 0:
        warnings.warn(
            f"entity {t} has no neighbors; its frequency weight is 0", RuntimeWarning, stacklevel=2
        )
    return float(np.log(deg + 1.0))


def frequency_weights(kg):
    return np.log1p(kg.degree.astype(np.float64))


def _expand(kg, frontier):
    """Concatenated neighbor lists of every node in ``frontier``."""
    starts = kg.indptr[frontier]
    counts = kg.degree[frontier]
    total = int(counts.sum())
    if total == 0:
        return np.zeros(0, dtype=np.int64)
    offsets = np.repeat(starts - np.cumsum(counts) + counts, counts)
    return kg.indices[offsets + np.arange(total)]


def bfs_distances(kg, source):
    """Hop distances from ``source`` to every entity; UNREACHABLE where disconnected."""
    source = kg.check_entity(source)
    dist = np.full(kg.num_entities, UNREACHABLE, dtype=np.int64)
    dist[source] = 0
    frontier = np.array([source], dtype=np.int64)
    level = 0
    while len(frontier):
        level += 1
        nxt = _expand(kg, frontier)
        nxt = np.unique(nxt[dist[nxt] == UNREACHABLE])
        dist[nxt] = level
        frontier = nxt
    return dist
