"""Command-line entry point: ``syntempo <command> [flags]``.

Every command accepts ``--config FILE``, a JSON object whose keys are flag
names (dashes or underscores); flags given on the command line win. Data goes
to stdout or ``--out``; diagnostics go to stderr. Failures print one JSON
object ``{"error": ..., "message": ...}`` to stderr and exit with 2 (usage),
3 (bad input or I/O) or 4 (broken internal invariant).
"""

from __future__ import annotations

import argparse
import json
import logging
import os
import sys
from contextlib import contextmanager
from pathlib import Path

from . import library as libmod
from . import metrics
from . import model as qm
from . import retrieval, synth
from .errors import DataError, InvariantError, KTooLarge, StaleCache
from .oracle import load_oracle
from .syntree import linearize, parse_bracket
from .trainer import TrainConfig, build_candidate_sets, config_dict, load_dataset, train_on_sets

log = logging.getLogger("syntempo")

EXIT_USAGE, EXIT_DATA, EXIT_INVARIANT = 2, 3, 4


class UsageError(Exception):
    pass


class _Parser(argparse.ArgumentParser):
    def error(self, message):
        raise UsageError(message)


def _default_threads() -> int:
    return len(os.sched_getaffinity(0)) if hasattr(os, "sched_getaffinity") else (os.cpu_count() or 1)


def _common(p: argparse.ArgumentParser) -> None:
    p.add_argument("--config", help="JSON file of flag values; command-line flags override it")
    p.add_argument("--seed", type=int, help="random seed (default 0)")
    p.add_argument("--threads", type=int, help="scoring worker threads (default: available CPUs)")
    p.add_argument("--out", help="output path (default stdout where the command allows it)")
    p.add_argument("-v", "--verbose", action="store_true", help="progress messages on stderr")


def _model_flags(p: argparse.ArgumentParser) -> None:
    g = p.add_argument_group("model")
    g.add_argument("--d-model", type=int, help="hidden size (default 64)")
    g.add_argument("--layers", type=int, help="transformer layers per tower (default 2)")
    g.add_argument("--heads", type=int, help="attention heads (default 4)")
    g.add_argument("--ffn-hidden", type=int, help="feed-forward hidden size (default 128)")
    g.add_argument("--no-head-bias", action="store_true", default=None, help="drop the bias of the scoring head")


def _train_flags(p: argparse.ArgumentParser) -> None:
    g = p.add_argument_group("training")
    g.add_argument("--epochs", type=int, help="training epochs (default 10)")
    g.add_argument("--lr", type=float, help="peak learning rate (default 3e-5)")
    g.add_argument("--batch-size", type=int, help="candidate sets per optimizer step (default 1)")
    g.add_argument("--k", type=int, help="candidate templates per source (default 10)")
    g.add_argument("--lambda-mse", type=float, help="weight of the regression loss (default 1)")
    g.add_argument("--lambda-rank", type=float, help="weight of the pairwise rank loss (default 1)")
    g.add_argument("--weight-decay", type=float, help="decoupled weight decay (default 0.01)")
    g.add_argument("--warmup-frac", type=float, help="fraction of steps spent in linear warmup (default 0.1)")
    g.add_argument("--grad-clip", type=float, help="clip the global gradient norm to this value")


def build_parser() -> argparse.ArgumentParser:
    parser = _Parser(prog="syntempo", description="Quality-based syntactic template retrieval.")
    sub = parser.add_subparsers(dest="command", metavar="COMMAND", parser_class=_Parser)

    p = sub.add_parser("index", help="build a template library from parse trees")
    p.add_argument("--targets", help="target-side trees, one bracket string per line")
    p.add_argument("--sources", help="parallel source-side trees (enables the AESOP-R baseline)")
    p.add_argument("--max-levels", type=int, help="levels kept when truncating (default 4)")
    _common(p)

    p = sub.add_parser("train", help="train the scorer on a dataset with a quality oracle")
    p.add_argument("--dataset", help="training JSONL {source_tokens, source_tree, reference_tree}")
    p.add_argument("--dev", help="held-out JSONL in the same format, for per-epoch PCC")
    p.add_argument("--library", help="template library file")
    p.add_argument("--oracle", help="planted-oracle JSON or precomputed JSONL quality table")
    p.add_argument("--log", help="per-epoch JSONL log {epoch, mean_loss, dev_pcc}")
    _model_flags(p)
    _train_flags(p)
    _common(p)

    p = sub.add_parser("score", help="score one (sentence, template) pair")
    p.add_argument("--checkpoint", help="model checkpoint")
    p.add_argument("--source", help="whitespace-tokenized sentence")
    p.add_argument("--template", help="template as a bracket string")
    _common(p)

    for name, helptext in (("retrieve", "top-k templates per sentence"),
                           ("retrieve-diverse", "diverse templates search per sentence")):
        p = sub.add_parser(name, help=helptext)
        p.add_argument("--checkpoint", help="model checkpoint")
        p.add_argument("--library", help="template library file")
        p.add_argument("--input", help="sentences, one whitespace-tokenized sentence per line")
        p.add_argument("--cache", help="template-encoding cache file; built and saved if missing")
        if name == "retrieve":
            p.add_argument("--k", type=int, help="templates per sentence (default 10)")
        else:
            p.add_argument("--d", type=int, help="size of the diverse set (default 10)")
            p.add_argument("--beta", type=float, help="normalized-TED diversity threshold (default 0.2)")
            p.add_argument("--strict-dts", action="store_true", default=None,
                           help="apply the diversity test while filling the heap too")
            p.add_argument("--replay-log", help="write heap mutation events as JSONL")
        _common(p)

    p = sub.add_parser("eval", help="metric report for generated paraphrases")
    p.add_argument("--paraphrases", help="JSONL {source, paraphrases, reference?, trees?}")
    p.add_argument("--references", help="reference sentences, one per line (overrides inline references)")
    p.add_argument("--embeddings", help="JSONL {sentence, vector} for cosine similarity")
    p.add_argument("--templates", help="template used for each top-1 paraphrase, one bracket string per line")
    p.add_argument("--alpha", type=float, help="iBLEU weight (default 0.8)")
    p.add_argument("--max-levels", type=int, help="levels kept for the TED metric (default 4)")
    p.add_argument("--full-depth-ted", action="store_true", default=None, help="compare untruncated trees")
    _common(p)

    p = sub.add_parser("synth", help="write a synthetic corpus with a planted quality oracle")
    p.add_argument("--n-train", type=int, help="training sources (default 2000)")
    p.add_argument("--n-dev", type=int, help="held-out sources (default 400)")
    p.add_argument("--vocab-size", type=int, help="word types (default 200)")
    p.add_argument("--planted-seed", type=int, help="seed of the planted hash features (default 0)")
    _common(p)
    return parser


DEFAULTS = {
    "seed": 0, "max_levels": 4, "k": 10, "d": 10, "beta": 0.2, "alpha": metrics.IBLEU_ALPHA,
    "n_train": 2000, "n_dev": 400, "vocab_size": 200, "planted_seed": 0,
    "strict_dts": False, "full_depth_ted": False, "no_head_bias": False, "verbose": False,
}
REQUIRED = {
    "index": ["targets", "out"],
    "train": ["dataset", "library", "oracle", "out"],
    "score": ["checkpoint", "source", "template"],
    "retrieve": ["checkpoint", "library", "input"],
    "retrieve-diverse": ["checkpoint", "library", "input"],
    "eval": ["paraphrases"],
    "synth": ["out"],
}


def parse_args(argv) -> argparse.Namespace:
    parser = build_parser()
    args = parser.parse_args(argv)
    if args.command is None:
        raise UsageError("a command is required; see --help")
    if args.config:
        try:
            with open(args.config, encoding="utf-8") as fh:
                cfg = json.load(fh)
        except (OSError, json.JSONDecodeError) as exc:
            raise UsageError(f"cannot read config {args.config}: {exc}") from None
        if not isinstance(cfg, dict):
            raise UsageError("config file must hold a JSON object")
        for key, value in cfg.items():
            dest = key.replace("-", "_")
            if dest in ("command", "config") or not hasattr(args, dest):
                raise UsageError(f"unknown config key {key!r} for {args.command}")
            if getattr(args, dest) is None:
                setattr(args, dest, value)
    for key, value in DEFAULTS.items():
        if getattr(args, key, 0) is None:
            setattr(args, key, value)
    if args.threads is None:
        args.threads = _default_threads()
    if args.threads < 1:
        raise UsageError("--threads must be at least 1")
    missing = [f"--{r.replace('_', '-')}" for r in REQUIRED[args.command] if getattr(args, r) is None]
    if missing:
        raise UsageError(f"{args.command}: missing {', '.join(missing)}")
    return args


@contextmanager
def _output(path):
    if path is None:
        yield sys.stdout
    else:
        with open(path, "w", encoding="utf-8", newline="\n") as fh:
            yield fh


# ---------------------------------------------------------------------------
# commands


def cmd_index(args) -> None:
    lib = libmod.build_from_files(args.targets, args.sources, args.max_levels)
    libmod.save(lib, args.out)
    log.info("library: %d templates from %d trees", len(lib), lib.total_frequency)


def _train_config(args) -> TrainConfig:
    fields = {}
    for name in ("epochs", "lr", "batch_size", "k", "lambda_mse", "lambda_rank", "weight_decay",
                 "warmup_frac", "grad_clip", "seed", "max_levels"):
        value = getattr(args, name, None)
        if value is not None:
            fields[name] = value
    return TrainConfig(**fields)


def cmd_train(args) -> None:
    lib = libmod.load(args.library)
    oracle = load_oracle(args.oracle)
    dataset = load_dataset(args.dataset)
    if not dataset:
        raise DataError("empty training set")
    dev = load_dataset(args.dev) if args.dev else None
    config = _train_config(args)
    config.max_levels = lib.max_levels
    train_sets = build_candidate_sets(dataset, lib, oracle, config.k, config.seed, config.max_levels)
    dev_sets = None
    if dev:
        dev_sets = build_candidate_sets(dev, lib, oracle, config.k, config.seed + 1_000_003, config.max_levels)
    hyper_fields = {"d_model": args.d_model, "n_layers": args.layers, "n_heads": args.heads,
                    "ffn_hidden": args.ffn_hidden}
    hyper = qm.Hyper(
        qm.Vocab.build(ex.source_tokens for ex in dataset),
        qm.Vocab.build([e.template.tokens for e in lib] + [t.tokens for cs in train_sets for t in cs.templates]),
        head_bias=not args.no_head_bias,
        **{k: v for k, v in hyper_fields.items() if v is not None},
    )
    params = qm.ModelParams.init(hyper, config.seed)
    log.info("training %d parameters on %d sets; config %s", params.num_parameters(), len(train_sets),
             json.dumps(config_dict(config)))
    result = train_on_sets(params, train_sets, config, dev_sets, args.log)
    qm.save_checkpoint(result.params, args.out)
    summary = {"best_epoch": result.best_epoch, "best_dev_pcc": result.best_dev_pcc,
               "params_hash": result.params.content_hash()}
    print(json.dumps(summary), file=sys.stderr)


def cmd_score(args) -> None:
    params = qm.load_checkpoint(args.checkpoint)
    template = linearize(parse_bracket(args.template))
    s, _ = qm.score(params, args.source.split(), template)
    with _output(args.out) as fh:
        fh.write(f"{s:.6f}\n")


def _read_queries(path) -> list[list[str]]:
    with open(path, encoding="utf-8") as fh:
        queries = [line.split() for line in fh.read().splitlines() if line.strip()]
    if not queries:
        raise DataError(f"no sentences in {path}")
    return queries


def _library_cache(args, params, lib, params_hash):
    if args.cache and Path(args.cache).exists():
        cache = qm.TemplateEncodingCache.load(args.cache)
        if cache.params_hash != params_hash:
            raise StaleCache(f"{args.cache} was built from a different checkpoint")
        if len(cache) != len(lib):
            raise StaleCache(f"{args.cache} holds {len(cache)} templates, library has {len(lib)}")
        return cache
    cache = qm.encode_library(params, lib)
    if args.cache:
        cache.save(args.cache)
    return cache


def _retrieval_setup(args):
    params = qm.load_checkpoint(args.checkpoint)
    lib = libmod.load(args.library)
    queries = _read_queries(args.input)
    params_hash = params.content_hash()
    cache = _library_cache(args, params, lib, params_hash)
    return params, lib, queries, params_hash, cache


def _result_lines(query: int, ranked, lib) -> str:
    return "".join(
        json.dumps({"query": query, "rank": r, "template": lib[i].text, "score": s}) + "\n"
        for r, (i, s) in enumerate(ranked, 1)
    )


def cmd_retrieve(args) -> None:
    params, lib, queries, params_hash, cache = _retrieval_setup(args)
    if args.k > len(lib):
        raise KTooLarge(f"k={args.k} exceeds library size {len(lib)}")
    with _output(args.out) as fh:
        for q, tokens in enumerate(queries):
            scores = qm.score_library(params, tokens, cache, args.threads, params_hash)
            fh.write(_result_lines(q, retrieval.rank_scores(scores, args.k), lib))


def cmd_retrieve_diverse(args) -> None:
    params, lib, queries, params_hash, cache = _retrieval_setup(args)
    replay = open(args.replay_log, "w", encoding="utf-8", newline="\n") if args.replay_log else None
    try:
        with _output(args.out) as fh:
            for q, tokens in enumerate(queries):
                scores = qm.score_library(params, tokens, cache, args.threads, params_hash)
                ds = retrieval.dts_from_scores(scores, lib, args.d, args.beta, args.strict_dts)
                fh.write(_result_lines(q, ds.ranked(), lib))
                if replay:
                    for ev in ds.events:
                        replay.write(json.dumps({"query": q, **ev}) + "\n")
    finally:
        if replay:
            replay.close()


def cmd_eval(args) -> None:
    sets = metrics.load_paraphrase_sets(args.paraphrases, args.references)
    templates = None
    if args.templates:
        with open(args.templates, encoding="utf-8") as fh:
            templates = [parse_bracket(line) for line in fh.read().splitlines() if line.strip()]
    table = metrics.EmbeddingTable.load(args.embeddings) if args.embeddings else None
    rep = metrics.report(sets, templates, table, args.alpha, args.max_levels, args.full_depth_ted)
    with _output(args.out) as fh:
        fh.write(json.dumps(rep, sort_keys=True) + "\n")


def cmd_synth(args) -> None:
    paths = synth.write_corpus(args.out, args.n_train, args.n_dev, args.seed, args.vocab_size, args.planted_seed)
    print(json.dumps(paths, sort_keys=True))


COMMANDS = {
    "index": cmd_index,
    "train": cmd_train,
    "score": cmd_score,
    "retrieve": cmd_retrieve,
    "retrieve-diverse": cmd_retrieve_diverse,
    "eval": cmd_eval,
    "synth": cmd_synth,
}


def _fail(code: int, exc: BaseException) -> int:
    print(json.dumps({"error": type(exc).__name__, "message": str(exc)}), file=sys.stderr)
    return code


def main(argv=None) -> int:
    try:
        args = parse_args(sys.argv[1:] if argv is None else argv)
    except UsageError as exc:
        return _fail(EXIT_USAGE, exc)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING, stream=sys.stderr,
                        format="%(name)s: %(message)s")
    try:
        COMMANDS[args.command](args)
    except (DataError, OSError) as exc:
        return _fail(EXIT_DATA, exc)
    except (InvariantError, AssertionError) as exc:
        return _fail(EXIT_INVARIANT, exc)
    except ValueError as exc:
        # bad flag values that only surface inside the library (e.g. d < 1)
        return _fail(EXIT_USAGE, exc)
    return 0


if __name__ == "__main__":
    sys.exit(main())
