"""Flat ``key = value`` run configuration shared by every subcommand."""

import configparser
import dataclasses
import os
from dataclasses import dataclass, fields

from .contrastive import LossConfig, TrainConfig
from .exceptions import ConfigError
from .mcmc import McmcConfig
from .sampler import SAMPLER_MODES, SamplerConfig
from .scheduler import SCHEDULER_MODES

SAMPLERS = tuple(SAMPLER_MODES) + ("mcmc",)
ABLATIONS = ("pcl", "fmt", "saam")


@dataclass
class RunConfig:
    # inputs
    train: str = ""
    valid: str = ""
    test: str = ""
    entities: str = ""
    store: str = ""
    checkpoint: str = ""
    ranks: str = ""
    counters: str = ""
    out: str = "run"
    # sampling
    sampler: str = "brwr"
    restart_prob: float = 1.0 / 25.0
    max_triples: int = 10_000
    mcmc_alpha: float = 0.5
    mcmc_k: int = 16
    dfs_length: int = 512
    burn_in: int = 100
    # training
    scheduler: str = "saam"
    batch_size: int = 1024
    margin: float = 0.02
    use_hardness: bool = True
    use_freq_weight: bool = True
    ablate: str = ""
    lr: float = 1e-3
    dim: int = 32
    epochs: int = 1
    seed: int = 0
    # evaluation / analysis
    filtered: bool = True
    max_distance: int = 8
    similarity_budget: int = 100_000
    node_cap: int = 5000
    workers: int = 0

    def validate(self):
        if self.sampler not in SAMPLERS:
            raise ConfigError(f"sampler must be one of {SAMPLERS}, got {self.sampler!r}")
        if self.scheduler not in SCHEDULER_MODES:
            raise ConfigError(f"scheduler must be one of {SCHEDULER_MODES}, got {self.scheduler!r}")
        for name in self.ablations():
            if name not in ABLATIONS:
                raise ConfigError(f"unknown ablation {name!r}; choose from {ABLATIONS}")
        if self.workers < 0:
            raise ConfigError("workers must be >= 0 (0 = all available CPUs)")
        if self.max_distance < 1 or self.similarity_budget < 1 or self.node_cap < 1:
            raise ConfigError("max_distance, similarity_budget and node_cap must be positive")
        # the owning modules check their own ranges
        self.sampler_config()
        self.train_config()
        if self.sampler == "mcmc":
            self.mcmc_config()
        return self

    def ablations(self):
        return [a.strip() for a in self.ablate.split(",") if a.strip()]

    def effective_workers(self):
        return self.workers or os.cpu_count() or 1

    def sampler_config(self):
        mode = SAMPLER_MODES.get(self.sampler, "inverse_degree")
        return SamplerConfig(self.restart_prob, self.max_triples, mode, self.seed)

    def mcmc_config(self):
        return McmcConfig(self.mcmc_alpha, self.mcmc_k, self.dfs_length, self.burn_in, self.seed)

    def loss_config(self):
        ab = self.ablations()
        return LossConfig(
            margin=self.margin,
            use_hardness=self.use_hardness and "pcl" not in ab,
            use_freq_weight=self.use_freq_weight and "fmt" not in ab,
        )

    def train_config(self):
        scheduler = "random" if "saam" in self.ablations() else self.scheduler
        return TrainConfig(self.dim, self.batch_size, scheduler, self.epochs, self.lr, self.seed, self.loss_config())

    def to_text(self):
        lines = []
        for f in fields(self):
            v = getattr(self, f.name)
            if isinstance(v, bool):
                v = "true" if v else "false"
            elif isinstance(v, float):
                v = repr(v)
            lines.append(f"{f.name} = {v}")
        return "\n".join(lines) + "\n"

    def write(self, path):
        with open(path, "w", encoding="utf-8", newline="\n") as fh:
            fh.write(self.to_text())


_TYPES = {f.name: f.type for f in fields(RunConfig)}
_BOOL = {"true": True, "yes": True, "1": True, "on": True, "false": False, "no": False, "0": False, "off": False}


def coerce(key, raw):
    """Parse one textual value into the field's type."""
    if key not in _TYPES:
        raise ConfigError(f"unknown config key {key!r}")
    kind = _TYPES[key]
    if kind is bool:
        if isinstance(raw, bool):
            return raw
        try:
            return _BOOL[str(raw).strip().lower()]
        except KeyError:
            raise ConfigError(f"{key}: expected a boolean, got {raw!r}") from None
    try:
        return kind(raw)
    except (TypeError, ValueError):
        raise ConfigError(f"{key}: cannot parse {raw!r} as {kind.__name__}") from None


def read_config_file(path):
    """Return a dict of typed values from a flat ``key = value`` file."""
    try:
        with open(path, encoding="utf-8") as fh:
            text = fh.read()
    except OSError as exc:
        raise ConfigError(f"cannot read config file {path}: {exc.strerror}") from None
    parser = configparser.ConfigParser(
        delimiters=("=",), comment_prefixes=("#", ";"), inline_comment_prefixes=None, interpolation=None
    )
    parser.optionxform = str
    try:
        parser.read_string("[run]\n" + text, source=str(path))
    except configparser.Error as exc:
        msg = " ".join(str(exc).split())
        raise ConfigError(f"malformed config file {path}: {msg}") from None
    return {k: coerce(k, v.strip()) for k, v in parser["run"].items()}


def resolve(file_values=None, overrides=None):
    """File values first, then overrides; ``None`` overrides are ignored."""
    values = dict(file_values or {})
    values.update({k: v for k, v in (overrides or {}).items() if v is not None})
    cfg = RunConfig(**{k: coerce(k, v) for k, v in values.items()})
    return cfg.validate()


def replace(cfg, **changes):
    return dataclasses.replace(cfg, **changes).validate()
