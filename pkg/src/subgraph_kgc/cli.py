"""Command line pipeline: ingest -> sample -> train -> eval -> analyze.

Every option is also a config key (``--restart-prob`` <-> ``restart_prob``);
flags override the ``--config`` file. Errors print one line to stderr::

    error code=2 kind=config message="batch_size must be an even integer >= 2, got 3"
"""

import argparse
import json
import logging
import os
import sys
from dataclasses import fields

import numpy as np

from . import analysis
from .config import ABLATIONS, SAMPLERS, RunConfig, read_config_file, resolve
from .contrastive import EncoderParams, train
from .evaluator import RankDump, build_filter_index, evaluate, random_baseline
from .exceptions import ConfigError, ContractViolation, DomainError, KGFormatError, NumericalError
from .kg_store import ingest_triples, load_split
from .mcmc import mcmc_store
from .sampler import SamplingError, SubgraphStore, precompute_all
from .scheduler import SCHEDULER_MODES, VisitCounter

logger = logging.getLogger("subgraph_kgc")

SUBCOMMANDS = ("ingest", "sample", "train", "eval", "analyze")
EXIT_OK, EXIT_CONFIG, EXIT_DATA, EXIT_NUMERIC = 0, 2, 3, 4

STORE_FILE = "subgraphs.txt"
CHECKPOINT_FILE = "checkpoint.satk"
TRIPLE_COUNTS = "triple_visits.tsv"
ENTITY_COUNTS = "entity_visits.tsv"
CENTER_COUNTS = "center_visits.tsv"

_CHOICES = {"sampler": SAMPLERS, "scheduler": SCHEDULER_MODES}
_HELP = {
    "train": "training triples (head<TAB>relation<TAB>tail)",
    "valid": "validation triples, used as extra filter",
    "test": "test triples for eval",
    "entities": "optional entity metadata (entity_id<TAB>name<TAB>description)",
    "store": "precomputed subgraph store; sampled on the fly when empty",
    "checkpoint": "encoder checkpoint",
    "ranks": "rank dump CSV for analyze",
    "counters": "directory holding visit counter TSVs for analyze",
    "out": "output directory",
    "ablate": f"comma separated subset of {','.join(ABLATIONS)}",
    "workers": "parallel workers for sampling and ranking (0 = all CPUs)",
}


class _Parser(argparse.ArgumentParser):
    def error(self, message):
        raise ConfigError(message)


def build_parser():
    parser = _Parser(prog="subgraph-kgc", description="Subgraph-batched contrastive KG completion")
    sub = parser.add_subparsers(dest="command", metavar="{" + ",".join(SUBCOMMANDS) + "}")
    common = _Parser(add_help=False)
    common.add_argument("--config", help="flat key = value config file")
    common.add_argument("-v", "--verbose", action="store_true")
    for f in fields(RunConfig):
        flag = "--" + f.name.replace("_", "-")
        common.add_argument(flag, dest=f.name, default=None, choices=_CHOICES.get(f.name), help=_HELP.get(f.name))
    for name in SUBCOMMANDS:
        sub.add_parser(name, parents=[common])
    return parser


def parse_config(argv):
    args = build_parser().parse_args(argv)
    if args.command is None:
        raise ConfigError(f"missing subcommand; choose from {SUBCOMMANDS}")
    file_values = read_config_file(args.config) if args.config else {}
    overrides = {f.name: getattr(args, f.name) for f in fields(RunConfig)}
    return args, resolve(file_values, overrides)


def _require(cfg, key):
    value = getattr(cfg, key)
    if not value:
        raise ConfigError(f"{key} is required for this subcommand")
    if not os.path.exists(value):
        raise FileNotFoundError(f"{key}: no such file or directory: {value}")
    return value


def load_graph(cfg):
    return ingest_triples(_require(cfg, "train"), entity_meta=cfg.entities or None)


def load_params(cfg, kg):
    params = EncoderParams.load(_require(cfg, "checkpoint"))
    if params.num_entities != kg.num_entities or params.num_relations_total != kg.num_relations_total:
        raise DomainError(
            f"checkpoint shape ({params.num_entities} entities, {params.num_relations_total} relations) "
            f"does not match the graph ({kg.num_entities}, {kg.num_relations_total})"
        )
    return params


def sample_store(cfg, kg):
    if cfg.sampler == "mcmc":
        if cfg.checkpoint:
            params = load_params(cfg, kg)
        else:
            params = EncoderParams.initialize(kg.num_entities, kg.num_relations_total, cfg.dim, cfg.seed)
        return mcmc_store(kg, params, cfg.mcmc_config())
    return precompute_all(kg, cfg.sampler_config(), workers=cfg.effective_workers())


def load_store(cfg, kg):
    store = SubgraphStore.load(_require(cfg, "store"))
    if len(store) != kg.num_triples:
        raise DomainError(f"store has {len(store)} subgraphs but the graph has {kg.num_triples} triples")
    for sub in store:
        if len(sub.triple_ids) and (sub.triple_ids.min() < 0 or sub.triple_ids.max() >= kg.num_triples):
            raise DomainError(f"store subgraph {sub.center} references unknown triple ids")
    return store


def cmd_ingest(cfg):
    kg = load_graph(cfg)
    with open(os.path.join(cfg.out, "entities_index.tsv"), "w", encoding="utf-8", newline="\n") as fh:
        fh.write("id\tentity\tdegree\n")
        for i, e in enumerate(kg.entities):
            fh.write(f"{i}\t{e}\t{int(kg.degree[i])}\n")
    with open(os.path.join(cfg.out, "relations_index.tsv"), "w", encoding="utf-8", newline="\n") as fh:
        fh.write("id\trelation\n")
        for r in range(kg.num_relations_total):
            fh.write(f"{r}\t{kg.relation_name(r)}\n")
    with open(os.path.join(cfg.out, "graph_stats.csv"), "w", encoding="utf-8", newline="\n") as fh:
        fh.write("stat,value\n")
        fh.write(f"entities,{kg.num_entities}\n")
        fh.write(f"relations,{kg.num_relations}\n")
        fh.write(f"relations_with_inverse,{kg.num_relations_total}\n")
        fh.write(f"triples,{kg.num_triples}\n")
        fh.write(f"undirected_edges,{kg.num_edges}\n")
        fh.write(f"average_degree,{kg.average_degree:.10g}\n")
        fh.write(f"isolated_entities,{int(np.sum(kg.degree == 0))}\n")
    print(kg)


def cmd_sample(cfg):
    kg = load_graph(cfg)
    store = sample_store(cfg, kg)
    path = os.path.join(cfg.out, STORE_FILE)
    store.save(path)
    print(f"wrote {len(store)} subgraphs to {path}")


def cmd_train(cfg):
    kg = load_graph(cfg)
    tcfg = cfg.train_config()
    store = load_store(cfg, kg) if cfg.store else sample_store(cfg, kg)
    params, log = train(kg, store, tcfg)
    params.save(os.path.join(cfg.out, CHECKPOINT_FILE))
    log.save_csv(os.path.join(cfg.out, "train_log.csv"))
    sched = log.scheduler
    sched.triple_visits.save(os.path.join(cfg.out, TRIPLE_COUNTS), "triple_id")
    sched.entity_visits.save(os.path.join(cfg.out, ENTITY_COUNTS), "entity_id")
    sched.center_visits.save(os.path.join(cfg.out, CENTER_COUNTS), "triple_id")
    if log.epoch_loss:
        print(f"trained {tcfg.epochs} epoch(s) with scheduler {tcfg.scheduler}: loss {log.epoch_loss[0]:.4f} -> {log.epoch_loss[-1]:.4f}")


def cmd_eval(cfg):
    kg = load_graph(cfg)
    params = load_params(cfg, kg)
    test = load_split(_require(cfg, "test"), kg)
    extra = [load_split(cfg.valid, kg)] if cfg.valid else []
    known = build_filter_index(kg, *extra, test)
    metrics, dump = evaluate(
        params, kg, test, known=known, filtered=cfg.filtered, return_dump=True, workers=cfg.effective_workers()
    )
    metrics.to_csv(os.path.join(cfg.out, "metrics.csv"))
    text = metrics.to_text()
    base = random_baseline(kg, test, known, filtered=cfg.filtered)
    text += f"random baseline: MRR {base.mrr:.4f} Hits@10 {base.hits10:.4f}\n"
    with open(os.path.join(cfg.out, "metrics.txt"), "w", encoding="utf-8", newline="\n") as fh:
        fh.write(text)
    dump.save_csv(os.path.join(cfg.out, "ranks.csv"), kg)
    print(text, end="")


def cmd_analyze(cfg):
    kg = load_graph(cfg)
    rep = analysis.StructReport()
    types = analysis.relation_types(kg)
    rep.add("relation_types", [(kg.relations[r], t) for r, t in types.items()])
    if cfg.ranks:
        dump = RankDump.load_csv(_require(cfg, "ranks"), kg)
        rep.add("fp_ratio_by_distance", sorted(analysis.fp_ratio_by_distance(kg, dump).items()))
        rep.add("fp_ratio_by_degree_group", analysis.fp_ratio_by_degree_group(kg, dump).items())
        rep.add(
            "hits1_by_relation_type",
            [(name, share, h1) for name, (share, h1) in analysis.relation_type_breakdown(kg, dump).items()],
        )
    if cfg.counters:
        directory = _require(cfg, "counters")
        triples = VisitCounter.load(os.path.join(directory, TRIPLE_COUNTS)).counts
        entities = VisitCounter.load(os.path.join(directory, ENTITY_COUNTS)).counts
        if len(triples) != kg.num_triples or len(entities) != kg.num_entities:
            raise DomainError("visit counters do not match the graph")
        dist = analysis.distribution_reports(kg, triples, entities)
        rep.tables.update(dist.tables)
        if kg.num_entities <= cfg.node_cap:
            most, least = analysis.extreme_triples(triples, n=max(1, min(1000, kg.num_triples // 10)))
            stats = analysis.centrality_stats(kg, {"most_visited": most, "least_visited": least}, node_cap=cfg.node_cap)
            rep.add("centrality_of_extremes", [(k, deg, bc) for k, (deg, bc) in stats.items()])
        else:
            logger.warning("skipping betweenness: %d entities above node cap %d", kg.num_entities, cfg.node_cap)
    if cfg.checkpoint:
        params = load_params(cfg, kg)
        table = analysis.distance_similarity_table(params, kg, cfg.max_distance, cfg.similarity_budget, cfg.seed)
        rep.add("distance_similarity", sorted(table.items()))
    directory = os.path.join(cfg.out, "reports")
    rep.save(directory)
    print(f"wrote {len(rep.tables)} report table(s) to {directory}")


COMMANDS = {"ingest": cmd_ingest, "sample": cmd_sample, "train": cmd_train, "eval": cmd_eval, "analyze": cmd_analyze}


def format_error(code, kind, exc):
    message = " ".join(str(exc).split()) or type(exc).__name__
    return f"error code={code} kind={kind} message={json.dumps(message, ensure_ascii=False)}"


def run(command, cfg):
    """Execute one subcommand with a resolved config; returns the exit status."""
    if command not in COMMANDS:
        raise ConfigError(f"unknown subcommand {command!r}")
    os.makedirs(cfg.out, exist_ok=True)
    cfg.write(os.path.join(cfg.out, f"{command}_config.txt"))
    COMMANDS[command](cfg)
    return EXIT_OK


def main(argv=None):
    try:
        args, cfg = parse_config(sys.argv[1:] if argv is None else argv)
        logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING, format="%(levelname)s %(name)s: %(message)s")
        return run(args.command, cfg)
    except ConfigError as exc:
        return _fail(EXIT_CONFIG, "config", exc)
    except NumericalError as exc:
        return _fail(EXIT_NUMERIC, "numeric", exc)
    except (KGFormatError, DomainError, ContractViolation, SamplingError, OSError, ValueError) as exc:
        return _fail(EXIT_DATA, "data", exc)


def _fail(code, kind, exc):
    print(format_error(code, kind, exc), file=sys.stderr)
    return code

if __name__ == "__main__":
    sys.exit(main())
