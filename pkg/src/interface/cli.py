"""
Command-line surface: synth, pretrain, train, eval, retrieve, ablate,
gradcheck and sweep. Every command resolves one RunConfig (file, preset,
overrides, seed), logs into the output directory and writes CSV reports
stamped with the config hash. Exit codes: 0 success, 2 config error, 3 data
error, 4 numeric failure.
"""
import argparse
import json
import logging
import os
import sys
from dataclasses import dataclass
from typing import List, Optional

import pandas as pd

from src.config import config as env, configure_logging
from src.core.trainer import pretrain, train
from src.data.dataset import Dataset, Split
from src.data.synthetic import generate, split
from src.domain.schema import AttributeSchema, PersonCategory, encode_query
from src.errors import AsmrError, ConfigError, DataError, NumericError, QueryError
from src.evaluation.retrieval import Gallery, epoch_evaluator, evaluate, hamming_weights_frame, metrics_to_wide, retrieve
from src.experiments.ablation import initial_state, run_ablation, run_sweep, summarize
from src.experiments.gradcheck_suite import run_gradcheck
from src.infrastructure import storage
from src.infrastructure.checkpoint import CheckpointWriter, load_checkpoint, save_checkpoint
from src.infrastructure.event_bus import EventBus
from src.infrastructure.reports import MetricsRecorder, write_csv
from src.interface.run_config import RunConfig

logger = logging.getLogger("CLI")

DEFAULT_BUG_BLOCK = "category.0.weight"


@dataclass
class Workspace:
    """Resolved locations for one invocation."""
    out: str
    data_dir: str
    checkpoints: str
    reports: str

    @classmethod
    def resolve(cls, cfg: RunConfig, out: Optional[str]) -> "Workspace":
        out = out or env.OUTPUT_DIR
        return cls(
            out=out,
            data_dir=cfg.paths.data_dir or os.path.join(out, "data"),
            checkpoints=cfg.paths.checkpoints or os.path.join(out, "checkpoints"),
            reports=cfg.paths.reports or os.path.join(out, "reports"),
        )

    def checkpoint(self, name: str) -> str:
        return os.path.join(self.checkpoints, name)

    def report(self, name: str) -> str:
        return os.path.join(self.reports, name)


def resolve_config(args: argparse.Namespace) -> RunConfig:
    cfg = RunConfig.load(args.config) if args.config else RunConfig()
    if args.preset:
        cfg = cfg.with_preset(args.preset)
    if args.set:
        cfg = cfg.with_overrides(args.set)
    if args.seed is not None:
        cfg = cfg.with_seed(args.seed)
    return cfg


def synthesize(cfg: RunConfig) -> Dataset:
    schema = storage.load_schema(cfg.synth.schema_path) if cfg.synth.schema_path else None
    dataset = generate(cfg.synth, schema)
    return split(dataset, cfg.synth.unseen_fraction, cfg.synth.seed, cfg.synth.test_fraction)


def _has_dataset_files(cfg: RunConfig, ws: Workspace) -> bool:
    if cfg.paths.schema and cfg.paths.samples:
        return True
    return os.path.exists(os.path.join(ws.data_dir, storage.SAMPLES_FILE))


def load_dataset(cfg: RunConfig, ws: Workspace) -> Dataset:
    drop = cfg.eval.drop_singletons
    if cfg.paths.schema and cfg.paths.samples:
        return storage.load(cfg.paths.schema, cfg.paths.samples, cfg.paths.splits, drop_singletons=drop)
    if not os.path.exists(os.path.join(ws.data_dir, storage.SAMPLES_FILE)):
        raise DataError(f"No dataset in {ws.data_dir}; run `synth` first or set paths.schema/paths.samples")
    return storage.load_directory(ws.data_dir, drop_singletons=drop)


def dataset_factory(cfg: RunConfig, ws: Workspace):
    """A dataset on disk is shared by every seed; otherwise each seed synthesises its own."""
    if _has_dataset_files(cfg, ws):
        dataset = load_dataset(cfg, ws)
        return lambda seeded: dataset
    return synthesize


def parse_query(spec: str, schema: AttributeSchema) -> PersonCategory:
    """`group:attribute,...`; a group given as `group:` or `group:*` (or left out) is blank."""
    pairs, problems = [], []
    for item in (part.strip() for part in spec.split(",")):
        if not item:
            continue
        if ":" not in item:
            problems.append(f"'{item}' is not of the form group:attribute")
            continue
        group, attribute = (s.strip() for s in item.split(":", 1))
        pairs.append((group, None if attribute in ("", "*") else attribute))
    if problems:
        raise QueryError(f"Malformed query '{spec}'", problems)
    if not any(attribute is not None for _, attribute in pairs):
        raise QueryError(f"Query '{spec}' specifies no attribute")
    try:
        return encode_query(pairs, schema)
    except DataError as e:
        raise QueryError(f"Invalid query '{spec}'", e.problems)


def _print(title: str, frame: pd.DataFrame):
    print(f"\n{title}")
    print(frame.to_string(index=False))


def cmd_synth(cfg: RunConfig, ws: Workspace, args) -> None:
    dataset = synthesize(cfg)
    storage.save(dataset, ws.data_dir)
    stats = dataset.stats()
    write_csv(stats, ws.report("dataset_stats.csv"), cfg.config_hash())
    _print(f"Dataset written to {ws.data_dir}", stats)


def cmd_pretrain(cfg: RunConfig, ws: Workspace, args) -> None:
    dataset = load_dataset(cfg, ws)
    state = initial_state(cfg, dataset)
    bus = EventBus(raise_errors=True)
    CheckpointWriter(bus, ws.checkpoints, cfg.train.checkpoint_every, prefix="pretrain")
    result = pretrain(state, dataset, cfg.train, bus=bus, head_hidden=cfg.model.head_hidden)
    path = save_checkpoint(ws.checkpoint("pretrain.json"), result.state, "pretrain", cfg.train.pretrain_epochs)
    write_csv(result.history, ws.report("pretrain_log.csv"), cfg.config_hash())
    if len(result.history):
        _print(f"Pretraining finished, checkpoint {path}", result.history.tail(1))


def cmd_train(cfg: RunConfig, ws: Workspace, args) -> None:
    dataset = load_dataset(cfg, ws)
    optimizer = None
    if args.checkpoint:
        state, info = load_checkpoint(args.checkpoint, cfg.train)
        if info.stage == "train" and info.optimizer is not None:
            optimizer = info.optimizer
            logger.info(f"Resuming from {args.checkpoint} after epoch {info.epoch}")
        else:
            logger.info(f"Warm start from {info.stage} checkpoint {args.checkpoint}")
    else:
        state = initial_state(cfg, dataset)

    bus = EventBus(raise_errors=True)
    CheckpointWriter(bus, ws.checkpoints, cfg.train.checkpoint_every, prefix="train")
    recorder = MetricsRecorder(bus, stage="train")
    evaluator = epoch_evaluator(dataset) if cfg.train.eval_every and dataset.splits is not None else None
    result = train(state, dataset, cfg.loss, cfg.train, bus=bus, optimizer=optimizer, evaluator=evaluator)

    path = save_checkpoint(ws.checkpoint("train.json"), result.state, "train", result.optimizer.epoch, result.optimizer)
    write_csv(recorder.frame() if recorder.rows else result.history, ws.report("train_log.csv"), cfg.config_hash())
    if len(result.history):
        _print(f"Training finished, checkpoint {path}", result.history.tail(1))


def _checkpoint_path(args, ws: Workspace) -> str:
    return args.checkpoint or ws.checkpoint("train.json")


def cmd_eval(cfg: RunConfig, ws: Workspace, args) -> None:
    dataset = load_dataset(cfg, ws)
    state, _ = load_checkpoint(_checkpoint_path(args, ws), cfg.train)
    metrics, diagnostic = evaluate(state, dataset, cfg.eval.ks, variant=cfg.loss.variant)
    bits, groups = hamming_weights_frame(state, dataset.schema)
    digest = cfg.config_hash()
    write_csv(metrics, ws.report("metrics.csv"), digest)
    write_csv(diagnostic.pairs, ws.report("alignment_pairs.csv"), digest)
    write_csv(bits, ws.report("hamming_weights.csv"), digest)
    write_csv(groups, ws.report("hamming_weights_by_group.csv"), digest)
    _print("Retrieval metrics", pd.DataFrame([metrics_to_wide(metrics)]))
    if not diagnostic.defined:
        print("Similarity/delta rank correlation undefined (constant input)")


def cmd_retrieve(cfg: RunConfig, ws: Workspace, args) -> None:
    if not args.query:
        raise ConfigError("retrieve needs --query group:attribute,...")
    dataset = load_dataset(cfg, ws)
    state, _ = load_checkpoint(_checkpoint_path(args, ws), cfg.train)
    query = parse_query(args.query, dataset.schema)
    part = dataset
    if args.gallery != "dataset":
        tags = (Split.TEST_SEEN, Split.TEST_UNSEEN) if args.gallery == "test" else (Split(args.gallery),)
        part = dataset.subset(*tags)
    gallery = Gallery.from_dataset(state, part)
    run = retrieve(query, state, gallery, args.k or cfg.eval.retrieve_k)
    ranked = pd.DataFrame({
        "rank": range(1, len(run.ranking) + 1),
        "sample_id": run.ranking,
        "similarity": run.similarities,
        "relevant": run.relevance,
    })
    write_csv(ranked, ws.report("retrieval.csv"), cfg.config_hash())
    _print(f"Top {len(ranked)} for {query.category_id} ({run.n_relevant} matches in gallery)", ranked)


def cmd_ablate(cfg: RunConfig, ws: Workspace, args) -> None:
    frame = run_ablation(cfg, dataset_factory(cfg, ws))
    digest = cfg.config_hash()
    write_csv(frame, ws.report("ablation.csv"), digest)
    summary = summarize(frame, ["variant"])
    write_csv(summary, ws.report("ablation_summary.csv"), digest)
    _print("Mean over seeds", summary)


def cmd_sweep(cfg: RunConfig, ws: Workspace, args) -> None:
    key = args.key or cfg.ablation.sweep_key
    values = json.loads(args.values) if args.values else cfg.ablation.sweep_values
    if not key or not values:
        raise ConfigError("sweep needs a key and a non-empty list of values (--key/--values or ablation.sweep_*)")
    if not isinstance(values, list):
        raise ConfigError("--values must be a JSON list")
    frame = run_sweep(cfg, key, values, dataset_factory(cfg, ws))
    digest = cfg.config_hash()
    write_csv(frame, ws.report("sweep.csv"), digest)
    summary = summarize(frame, ["value"])
    write_csv(summary, ws.report("sweep_summary.csv"), digest)
    _print(f"Sweep over {key}, mean over seeds", summary)


def cmd_gradcheck(cfg: RunConfig, ws: Workspace, args) -> None:
    settings = cfg.gradcheck
    if args.inject_bug:
        settings.inject_bug = args.inject_bug
    suite = run_gradcheck(settings)
    write_csv(suite.frame, ws.report("gradcheck.csv"), cfg.config_hash())
    summary = suite.summary()
    _print(f"Gradient check, tolerance {settings.tolerance:g}", summary)
    if not suite.passed:
        failing = summary.loc[~summary["passed"], ["check", "block"]]
        raise NumericError("Gradient check failed", [f"{c}: {b}" for c, b in failing.itertuples(index=False)])
    print("PASS")


COMMANDS = {
    "synth": cmd_synth,
    "pretrain": cmd_pretrain,
    "train": cmd_train,
    "eval": cmd_eval,
    "retrieve": cmd_retrieve,
    "ablate": cmd_ablate,
    "sweep": cmd_sweep,
    "gradcheck": cmd_gradcheck,
}


def build_parser() -> argparse.ArgumentParser:
    common = argparse.ArgumentParser(add_help=False)
    common.add_argument("--config", help="JSON run config")
    common.add_argument("--seed", type=int, help="overrides seed, synth.seed and train.seed")
    common.add_argument("--out", help=f"output directory (default ${{ASMR_OUTPUT_DIR}} or '{env.OUTPUT_DIR}')")
    common.add_argument("--preset", help="hyper-parameter preset: peta, market or pa100k")
    common.add_argument("--set", action="append", default=[], metavar="SECTION.KEY=VALUE",
                        help="override one config key (value parsed as JSON); repeatable")
    common.add_argument("--checkpoint", help="checkpoint to resume, warm-start or evaluate")
    common.add_argument("--log-level", help="logging level (default ${ASMR_LOG_LEVEL} or INFO)")

    parser = argparse.ArgumentParser(prog="asmr", description="Semantic-margin cross-modal embedding trainer")
    sub = parser.add_subparsers(dest="command", required=True)
    sub.add_parser("synth", parents=[common], help="generate and split a synthetic dataset")
    sub.add_parser("pretrain", parents=[common], help="attribute-classification pretraining")
    sub.add_parser("train", parents=[common], help="joint embedding training")
    sub.add_parser("eval", parents=[common], help="CMC / mAP per test split")
    retrieve_cmd = sub.add_parser("retrieve", parents=[common], help="rank gallery images for an attribute query")
    retrieve_cmd.add_argument("--query", help="group:attribute pairs, comma separated; blanks allowed")
    retrieve_cmd.add_argument("--k", type=int, help="number of results (default eval.retrieve_k)")
    retrieve_cmd.add_argument("--gallery", default="test",
                              choices=["test", "test_seen", "test_unseen", "train", "dataset"])
    sub.add_parser("ablate", parents=[common], help="matched-seed ablation over the regulariser variants")
    sweep_cmd = sub.add_parser("sweep", parents=[common], help="retrain over values of one config key")
    sweep_cmd.add_argument("--key", help="config key, e.g. loss.lambda")
    sweep_cmd.add_argument("--values", help="JSON list of values")
    check_cmd = sub.add_parser("gradcheck", parents=[common], help="finite-difference gradient verification")
    check_cmd.add_argument("--inject-bug", nargs="?", const=DEFAULT_BUG_BLOCK, default=None, metavar="BLOCK",
                           help="corrupt one analytic gradient block (negative control)")
    return parser


def main(argv: Optional[List[str]] = None) -> int:
    args = build_parser().parse_args(argv)
    try:
        cfg = resolve_config(args)
        ws = Workspace.resolve(cfg, args.out)
        configure_logging(ws.out, args.log_level)
        logger.info(f"{args.command} (config {cfg.config_hash()}, seed {cfg.seed})")
        COMMANDS[args.command](cfg, ws, args)
    except AsmrError as e:
        logger.error(f"{args.command} failed: {e}")
        print(f"error: {e}", file=sys.stderr)
        return e.exit_code
    return 0
