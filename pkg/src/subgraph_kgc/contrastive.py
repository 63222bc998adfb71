"""Bi-encoder stand-in, structure-aware contrastive loss and its training loop.

The encoder is a lookup model: ``x_hr = normalize(E_h[h] + R[r])`` and
``x_t = normalize(E_t[t])``. For a batch of ``B`` rows the logit of row ``i``
against tail ``j`` is::

    s_ij = (cos(x_hr_i, x_t_j) + beta * omega_ij - margin * [i == j]) / tau

and the row loss is the softmax cross-entropy of the diagonal over the row's
unmasked entries. Row losses are summed, optionally weighted by
``ln(deg(tail) + 1)``.
"""

import csv
import logging
import math
import struct
from dataclasses import dataclass, field

import numpy as np

from .exceptions import ConfigError, ContractViolation, NumericalError
from .scheduler import Scheduler

logger = logging.getLogger(__name__)

TAU_MIN = 0.01
TAU_MAX = 1.0
TAU_INIT = 0.05
_ZERO_NORM = 1e-12

CHECKPOINT_MAGIC = b"SATK"
CHECKPOINT_VERSION = 1
_HEADER = struct.Struct("<4sIIII")


@dataclass
class EncoderParams:
    entity_embeddings: np.ndarray
    relation_embeddings: np.ndarray
    tail_embeddings: np.ndarray
    beta: float = 0.0
    log_inv_temperature: float = math.log(1.0 / TAU_INIT)

    def __post_init__(self):
        if self.dim < 2:
            raise ConfigError(f"embedding dimension must be >= 2, got {self.dim}")

    @property
    def dim(self):
        return self.entity_embeddings.shape[1]

    @property
    def num_entities(self):
        return self.entity_embeddings.shape[0]

    @property
    def num_relations_total(self):
        return self.relation_embeddings.shape[0]

    @property
    def temperature(self):
        return float(np.clip(math.exp(-self.log_inv_temperature), TAU_MIN, TAU_MAX))

    @property
    def temperature_clamped(self):
        raw = math.exp(-self.log_inv_temperature)
        return raw < TAU_MIN or raw > TAU_MAX

    @classmethod
    def initialize(cls, num_entities, num_relations_total, dim, seed=0):
        """Uniform(-1/sqrt(d), 1/sqrt(d)) embeddings, beta = 0, tau = 0.05."""
        if dim < 2:
            raise ConfigError(f"embedding dimension must be >= 2, got {dim}")
        rng = np.random.default_rng(np.random.SeedSequence([int(seed), 0xE3B]))
        bound = 1.0 / math.sqrt(dim)
        return cls(
            rng.uniform(-bound, bound, size=(num_entities, dim)),
            rng.uniform(-bound, bound, size=(num_relations_total, dim)),
            rng.uniform(-bound, bound, size=(num_entities, dim)),
        )

    def copy(self):
        return EncoderParams(
            self.entity_embeddings.copy(),
            self.relation_embeddings.copy(),
            self.tail_embeddings.copy(),
            float(self.beta),
            float(self.log_inv_temperature),
        )

    def check_finite(self):
        for name in ("entity_embeddings", "relation_embeddings", "tail_embeddings"):
            if not np.all(np.isfinite(getattr(self, name))):
                raise NumericalError(f"non-finite values in {name}")
        if not (math.isfinite(self.beta) and math.isfinite(self.log_inv_temperature)):
            raise NumericalError("non-finite beta or temperature")

    def save(self, path):
        with open(path, "wb") as fh:
            fh.write(
                _HEADER.pack(
                    CHECKPOINT_MAGIC,
                    CHECKPOINT_VERSION,
                    self.dim,
                    self.num_entities,
                    self.num_relations_total,
                )
            )
            for arr in (self.entity_embeddings, self.relation_embeddings, self.tail_embeddings):
                fh.write(np.ascontiguousarray(arr, dtype="<f4").tobytes())
            fh.write(np.array([self.beta, self.log_inv_temperature], dtype="<f4").tobytes())

    @classmethod
    def load(cls, path):
        with open(path, "rb") as fh:
            raw = fh.read()
        if len(raw) < _HEADER.size:
            raise ValueError(f"{path}: truncated checkpoint header")
        magic, version, dim, n_ent, n_rel = _HEADER.unpack_from(raw)
        if magic != CHECKPOINT_MAGIC:
            raise ValueError(f"{path}: bad checkpoint magic {magic!r}")
        if version != CHECKPOINT_VERSION:
            raise ValueError(f"{path}: unsupported checkpoint version {version}")
        expected = _HEADER.size + 4 * (dim * (2 * n_ent + n_rel) + 2)
        if len(raw) != expected:
            raise ValueError(f"{path}: expected {expected} bytes, found {len(raw)}")
        body = np.frombuffer(raw, dtype="<f4", offset=_HEADER.size).astype(np.float64)
        a = n_ent * dim
        b = a + n_rel * dim
        c = b + n_ent * dim
        return cls(
            body[:a].reshape(n_ent, dim).copy(),
            body[a:b].reshape(n_rel, dim).copy(),
            body[b:c].reshape(n_ent, dim).copy(),
            float(body[c]),
            float(body[c + 1]),
        )


@dataclass(frozen=True)
class LossConfig:
    margin: float = 0.02
    use_hardness: bool = True
    use_freq_weight: bool = True

    def __post_init__(self):
        if not (self.margin >= 0.0):
            raise ConfigError(f"margin must be >= 0, got {self.margin}")


def _normalize(u):
    norms = np.linalg.norm(u, axis=-1, keepdims=True)
    small = norms < _ZERO_NORM
    if np.any(small):
        u = u.copy()
        u[..., :1] += np.where(small, _ZERO_NORM, 0.0)[..., :1]
        norms = np.linalg.norm(u, axis=-1, keepdims=True)
    return u / norms, norms


def encode_queries(params, heads, rels):
    """Unit ``x_hr`` rows for aligned ``heads``/``rels`` arrays."""
    u = params.entity_embeddings[heads] + params.relation_embeddings[rels]
    return _normalize(u)[0]


def encode_tails(params, tails=None):
    """Unit ``x_t`` rows; all entities when ``tails`` is None."""
    v = params.tail_embeddings if tails is None else params.tail_embeddings[tails]
    return _normalize(v)[0]


def encode(params, role, *ids):
    """Single-vector encoder: ``encode(p, "head_rel", h, r)`` or ``encode(p, "tail", t)``."""
    if role == "head_rel":
        h, r = ids
        vec = params.entity_embeddings[h] + params.relation_embeddings[r]
    elif role == "tail":
        (t,) = ids
        vec = params.tail_embeddings[t]
    else:
        raise ValueError(f"unknown role {role!r}")
    if not np.all(np.isfinite(vec)):
        raise NumericalError(f"non-finite parameters while encoding {role} {ids}")
    return _normalize(vec[None, :])[0][0]


def hardness(distance):
    """Reciprocal distance; 0 for UNREACHABLE (-1)."""
    if distance == -1 or distance is None:
        return 0.0
    if distance < 1:
        raise ContractViolation(f"hardness needs a distance >= 1, got {distance}")
    return 1.0 / distance


def score(x_hr, x_t, omega, beta):
    return float(np.dot(x_hr, x_t)) + beta * omega


@dataclass
class Gradients:
    entity_embeddings: np.ndarray
    relation_embeddings: np.ndarray
    tail_embeddings: np.ndarray
    beta: float
    log_inv_temperature: float

    def norm(self):
        return math.sqrt(
            float(np.sum(self.entity_embeddings**2))
            + float(np.sum(self.relation_embeddings**2))
            + float(np.sum(self.tail_embeddings**2))
            + self.beta**2
            + self.log_inv_temperature**2
        )


def _row_softmax_loss(cos, omega, mask, beta, tau, margin):
    """Logits, softmax weights and per-row loss for a ``(B, B)`` cosine matrix."""
    n = cos.shape[0]
    eye = np.eye(n, dtype=bool)
    logits = (cos + beta * omega - margin * eye) / tau
    if not np.all(np.isfinite(logits)):
        bad = int(np.flatnonzero(~np.all(np.isfinite(logits), axis=1))[0])
        raise NumericalError(f"non-finite logit in batch row {bad}", row=bad)
    allowed = ~mask | eye
    masked = np.where(allowed, logits, -np.inf)
    top = masked.max(axis=1, keepdims=True)
    ex = np.where(allowed, np.exp(masked - top), 0.0)
    z = ex.sum(axis=1, keepdims=True)
    prob = ex / z
    lse = top[:, 0] + np.log(z[:, 0])
    per_row = lse - np.diag(logits)
    if not np.all(np.isfinite(per_row)):
        bad = int(np.flatnonzero(~np.isfinite(per_row))[0])
        raise NumericalError(f"non-finite loss in batch row {bad}", row=bad)
    return logits, prob, per_row


def _forward(params, batch, cfg):
    if batch.size % 2:
        raise ContractViolation("batch size must be even")
    xq, nq = _normalize(params.entity_embeddings[batch.heads] + params.relation_embeddings[batch.rels])
    xt, nt = _normalize(params.tail_embeddings[batch.tails])
    cos = xq @ xt.T
    omega = batch.omega() if cfg.use_hardness else np.zeros_like(cos)
    beta = params.beta if cfg.use_hardness else 0.0
    tau = params.temperature
    logits, prob, per_row = _row_softmax_loss(cos, omega, batch.fn_mask, beta, tau, cfg.margin)
    weights = batch.psi if cfg.use_freq_weight else np.ones(batch.size)
    return {
        "xq": xq, "nq": nq, "xt": xt, "nt": nt, "omega": omega, "tau": tau,
        "logits": logits, "prob": prob, "per_row": per_row, "weights": weights,
    }


def batch_loss(params, batch, cfg):
    """Return ``(total, per_row)``; ``total`` is the weighted sum of ``per_row``."""
    f = _forward(params, batch, cfg)
    return float(np.dot(f["weights"], f["per_row"])), f["per_row"]


def gradients(params, batch, cfg):
    """Analytic gradient of :func:`batch_loss` w.r.t. every parameter.

    Returns ``(loss, Gradients)``; embedding gradients are dense arrays that
    are zero outside the rows touched by the batch.
    """
    f = _forward(params, batch, cfg)
    n = batch.size
    tau = f["tau"]
    g = f["weights"][:, None] * (f["prob"] - np.eye(n))
    g_cos = g / tau

    d_xq = g_cos @ f["xt"]
    d_xt = g_cos.T @ f["xq"]
    d_uq = (d_xq - f["xq"] * np.sum(f["xq"] * d_xq, axis=1, keepdims=True)) / f["nq"]
    d_ut = (d_xt - f["xt"] * np.sum(f["xt"] * d_xt, axis=1, keepdims=True)) / f["nt"]

    d_ent = np.zeros_like(params.entity_embeddings)
    d_rel = np.zeros_like(params.relation_embeddings)
    d_tail = np.zeros_like(params.tail_embeddings)
    np.add.at(d_ent, batch.heads, d_uq)
    np.add.at(d_rel, batch.rels, d_uq)
    np.add.at(d_tail, batch.tails, d_ut)

    d_beta = float(np.sum(g_cos * f["omega"])) if cfg.use_hardness else 0.0
    d_lit = 0.0 if params.temperature_clamped else float(np.sum(g * f["logits"]))
    loss = float(np.dot(f["weights"], f["per_row"]))
    return loss, Gradients(d_ent, d_rel, d_tail, d_beta, d_lit)


class Adam:
    """Adaptive moment estimation with bias correction, no weight decay."""

    def __init__(self, lr=1e-3, beta1=0.9, beta2=0.999, eps=1e-8):
        self.lr, self.beta1, self.beta2, self.eps = lr, beta1, beta2, eps
        self.t = 0
        self.m = {}
        self.v = {}

    def _update(self, key, value, grad):
        m = self.m.get(key, 0.0)
        v = self.v.get(key, 0.0)
        m = self.beta1 * m + (1 - self.beta1) * grad
        v = self.beta2 * v + (1 - self.beta2) * grad * grad
        self.m[key], self.v[key] = m, v
        m_hat = m / (1 - self.beta1**self.t)
        v_hat = v / (1 - self.beta2**self.t)
        return value - self.lr * m_hat / (np.sqrt(v_hat) + self.eps)

    def step(self, params, grads):
        self.t += 1
        for name in ("entity_embeddings", "relation_embeddings", "tail_embeddings"):
            setattr(params, name, self._update(name, getattr(params, name), getattr(grads, name)))
        params.beta = float(self._update("beta", params.beta, grads.beta))
        params.log_inv_temperature = float(
            self._update("log_inv_temperature", params.log_inv_temperature, grads.log_inv_temperature)
        )


@dataclass
class TrainConfig:
    dim: int = 32
    batch_size: int = 1024
    scheduler: str = "saam"
    epochs: int = 1
    lr: float = 1e-3
    seed: int = 0
    loss: LossConfig = field(default_factory=LossConfig)

    def __post_init__(self):
        if self.batch_size < 2 or self.batch_size % 2:
            raise ConfigError(f"batch_size must be an even integer >= 2, got {self.batch_size}")
        if self.epochs < 0:
            raise ConfigError("epochs must be >= 0")
        if not self.lr > 0:
            raise ConfigError("lr must be > 0")


@dataclass
class TrainingLog:
    iterations: list = field(default_factory=list)
    epoch_loss: list = field(default_factory=list)
    scheduler: Scheduler = None

    def save_csv(self, path):
        with open(path, "w", encoding="utf-8", newline="") as fh:
            w = csv.writer(fh, lineterminator="\n")
            w.writerow(["iter", "loss", "beta", "tau"])
            for it, loss, beta, tau in self.iterations:
                w.writerow([it, repr(loss), repr(beta), repr(tau)])


def train(kg, store, cfg, params=None, on_batch=None):
    """Optimise the encoder over ``cfg.epochs`` scheduled epochs.

    ``on_batch(epoch, batch, params)`` is called before each update (used by
    diagnostics that need the in-batch scores). Deterministic given
    ``cfg.seed``.
    """
    if params is None:
        params = EncoderParams.initialize(kg.num_entities, kg.num_relations_total, cfg.dim, cfg.seed)
    sched = Scheduler(kg, store, cfg.batch_size, cfg.scheduler, seed=cfg.seed)
    opt = Adam(lr=cfg.lr)
    log = TrainingLog(scheduler=sched)
    it = 0
    for epoch in range(cfg.epochs):
        total, count = 0.0, 0
        for batch in sched.epoch():
            if on_batch is not None:
                on_batch(epoch, batch, params)
            try:
                loss, grads = gradients(params, batch, cfg.loss)
            except NumericalError as exc:
                raise NumericalError(f"iteration {it}: {exc}", row=exc.row, iteration=it) from exc
            if not math.isfinite(loss):
                raise NumericalError(f"loss diverged at iteration {it}", iteration=it)
            log.iterations.append((it, loss, params.beta, params.temperature))
            opt.step(params, grads)
            total += loss
            count += 1
            it += 1
        try:
            params.check_finite()
        except NumericalError as exc:
            raise NumericalError(f"iteration {it - 1}: {exc}", iteration=it - 1) from exc
        log.epoch_loss.append(total / max(count, 1))
        logger.info("epoch %d: mean loss %.6f beta %.4f tau %.4f", epoch, log.epoch_loss[-1], params.beta, params.temperature)
    return params, log
