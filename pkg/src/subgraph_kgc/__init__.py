"""Knowledge graph completion with random-walk subgraph mini-batches and a
structure-aware contrastive loss."""

from .contrastive import EncoderParams, LossConfig, TrainConfig, batch_loss, gradients, train
from .estimator import SubgraphContrastiveKGC
from .evaluator import Metrics, RankDump, evaluate, random_baseline, rank_tail
from .exceptions import ConfigError, ContractViolation, DomainError, KGFormatError, NumericalError
from .kg_store import UNREACHABLE, KnowledgeGraph, frequency_weight, ingest_triples, load_split, neighbors
from .sampler import SamplerConfig, Subgraph, SubgraphStore, approx_distance, precompute_all, sample_subgraph
from .scheduler import MiniBatch, Scheduler, VisitCounter, assemble_batch, next_center

__version__ = "0.1.0"
