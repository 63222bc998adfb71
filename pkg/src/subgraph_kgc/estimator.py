"""scikit-learn style wrapper around sampling, scheduling, training and ranking."""

import numpy as np
from sklearn.base import BaseEstimator
from sklearn.utils.validation import check_array, check_is_fitted

from .contrastive import EncoderParams, LossConfig, TrainConfig, encode_queries, encode_tails, train
from .evaluator import build_filter_index, evaluate
from .exceptions import DomainError
from .kg_store import KnowledgeGraph
from .mcmc import McmcConfig, mcmc_store
from .sampler import SAMPLER_MODES, SamplerConfig, precompute_all


def check_triples(X, width=3):
    """Coerce labelled triples (or ``(head, relation)`` queries) to an object array."""
    X = check_array(X, dtype=object, ensure_2d=True, ensure_min_samples=1)
    if X.shape[1] != width:
        raise ValueError(f"expected {width} columns, got {X.shape[1]}")
    return X.astype(str).astype(object)


def _lookup(vocab, labels, kind):
    try:
        return np.array([vocab[x] for x in labels], dtype=np.int64)
    except KeyError as exc:
        raise DomainError(f"unseen {kind} {exc.args[0]!r}") from None


class SubgraphContrastiveKGC(BaseEstimator):
    """Link predictor trained on subgraph mini-batches.

    ``fit`` takes labelled ``(head, relation, tail)`` rows; ``predict`` takes
    ``(head, relation)`` rows and returns the best-scoring tail label.
    Relations may be suffixed with ``^-1`` to ask for heads instead.
    """

    def __init__(
        self,
        sampler="brwr",
        restart_prob=1.0 / 25.0,
        max_triples=10_000,
        scheduler="saam",
        batch_size=1024,
        margin=0.02,
        use_hardness=True,
        use_freq_weight=True,
        dim=32,
        epochs=1,
        lr=1e-3,
        mcmc_alpha=0.5,
        mcmc_k=16,
        dfs_length=512,
        burn_in=100,
        seed=0,
        workers=1,
    ):
        self.sampler = sampler
        self.restart_prob = restart_prob
        self.max_triples = max_triples
        self.scheduler = scheduler
        self.batch_size = batch_size
        self.margin = margin
        self.use_hardness = use_hardness
        self.use_freq_weight = use_freq_weight
        self.dim = dim
        self.epochs = epochs
        self.lr = lr
        self.mcmc_alpha = mcmc_alpha
        self.mcmc_k = mcmc_k
        self.dfs_length = dfs_length
        self.burn_in = burn_in
        self.seed = seed
        self.workers = workers

    def _train_config(self):
        loss = LossConfig(self.margin, self.use_hardness, self.use_freq_weight)
        return TrainConfig(self.dim, self.batch_size, self.scheduler, self.epochs, self.lr, self.seed, loss)

    def _sample(self, kg):
        if self.sampler == "mcmc":
            init = EncoderParams.initialize(kg.num_entities, kg.num_relations_total, self.dim, self.seed)
            cfg = McmcConfig(self.mcmc_alpha, self.mcmc_k, self.dfs_length, self.burn_in, self.seed)
            return mcmc_store(kg, init, cfg)
        if self.sampler not in SAMPLER_MODES:
            raise ValueError(f"sampler must be one of {tuple(SAMPLER_MODES) + ('mcmc',)}, got {self.sampler!r}")
        cfg = SamplerConfig(self.restart_prob, self.max_triples, SAMPLER_MODES[self.sampler], self.seed)
        return precompute_all(kg, cfg, workers=self.workers)

    def fit(self, X, y=None):
        if isinstance(X, KnowledgeGraph):
            kg = X
        else:
            X = check_triples(X)
            kg = KnowledgeGraph.from_labeled([tuple(row) for row in X])
        tcfg = self._train_config()
        self.kg_ = kg
        self.store_ = self._sample(kg)
        self.params_, log = train(kg, self.store_, tcfg)
        self.loss_curve_ = np.array(log.epoch_loss)
        self.n_iter_ = len(log.iterations)
        self.triple_visits_ = log.scheduler.triple_visits.counts.copy()
        self.entity_visits_ = log.scheduler.entity_visits.counts.copy()
        return self

    def _queries(self, X):
        X = check_triples(X, width=2)
        kg = self.kg_
        heads = _lookup(kg.entity_index, X[:, 0], "entity")
        rel_index = dict(kg.relation_index)
        rel_index.update({f"{name}^-1": i + kg.num_relations for name, i in kg.relation_index.items()})
        rels = _lookup(rel_index, X[:, 1], "relation")
        return heads, rels

    def transform(self, X):
        """Unit query embeddings for ``(head, relation)`` rows."""
        check_is_fitted(self, "params_")
        return encode_queries(self.params_, *self._queries(X))

    def decision_function(self, X):
        """Cosine score of every entity as the tail of each query."""
        return self.transform(X) @ encode_tails(self.params_).T

    def predict(self, X, k=1):
        """Tail labels ranked by score: shape ``(n,)`` for ``k=1`` else ``(n, k)``."""
        scores = self.decision_function(X)
        ids = np.argsort(-scores, axis=1, kind="stable")[:, :k]
        labels = np.asarray(self.kg_.entities, dtype=object)[ids]
        return labels[:, 0] if k == 1 else labels

    def _ids(self, X):
        X = check_triples(X)
        kg = self.kg_
        return np.stack(
            [
                _lookup(kg.entity_index, X[:, 0], "entity"),
                _lookup(kg.relation_index, X[:, 1], "relation"),
                _lookup(kg.entity_index, X[:, 2], "entity"),
            ],
            axis=1,
        )

    def evaluate(self, X, filtered=True):
        """Filtered ranking metrics on labelled test triples."""
        check_is_fitted(self, "params_")
        test = self._ids(X)
        return evaluate(self.params_, self.kg_, test, known=build_filter_index(self.kg_, test), filtered=filtered)

    def score(self, X, y=None):
        """Filtered MRR over forward and backward queries."""
        return self.evaluate(X).mrr
