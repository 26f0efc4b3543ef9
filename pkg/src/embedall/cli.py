"""Command line: train / test / test-kg / predict / nn / dump.

Exit status: 0 success, 1 usage error, 2 data error.
"""

from __future__ import annotations

import argparse
import sys

import numpy as np

from .evaluator import (
    KgEvalConfig,
    RankingReport,
    evaluate_classification,
    evaluate_link_prediction,
    kg_triples,
    nearest_neighbors,
    predict_labels,
    rank_candidates,
)
from .io_formats import (
    FORMATS,
    DataError,
    export_text,
    kg_entity_ids,
    load_corpus,
    load_known_triples,
    load_model,
    save_model,
)
from .model_core import LOSSES, SIMILARITIES
from .samplers import MODES, DegenerateRecord, Sampler, TrainMode, generate_positive
from .trainer import TrainConfig, train

EXIT_OK, EXIT_USAGE, EXIT_DATA = 0, 1, 2

# flag -> (default, type, help); the parser is built from this table
TRAIN_FLAGS: dict[str, tuple] = {
    "dim": (10, int, "embedding dimension d"),
    "lr": (0.05, float, "base learning rate"),
    "epoch": (5, int, "number of passes over the data"),
    "negSearchLimit": (10, int, "negatives k per positive pair"),
    "margin": (0.05, float, "margin of the ranking loss"),
    "similarity": ("cosine", str, "similarity: " + "|".join(SIMILARITIES)),
    "loss": ("margin", str, "loss: " + "|".join(LOSSES)),
    "trainMode": ("classification", str, "one of " + "|".join(MODES) + " or multitask:mode=w,..."),
    "ngrams": (1, int, "max n-gram order"),
    "bucket": (2000000, int, "hash buckets for n-grams (unused when ngrams=1)"),
    "minCount": (1, int, "drop features seen fewer times"),
    "maxNorm": (10.0, float, "max L2 norm of embedding rows (0 = unbounded)"),
    "dropoutRHS": (0.0, float, "feature dropout probability on rhs bags"),
    "thread": (1, int, "hogwild worker threads"),
    "seed": (0, int, "random seed"),
    "fileFormat": ("labeled_text", str, "input format: " + "|".join(FORMATS)),
    "timeBudget": (0.0, float, "wall-clock training limit in seconds (0 = none)"),
    "label": ("__label__", str, "label prefix"),
    "ws": (2, int, "word_embedding window on each side"),
    "maxDistance": (0, int, "sentence_embedding max sentence distance (0 = unlimited)"),
    "validationFraction": (0.0, float, "fraction of records held out for validation loss"),
    "constantLR": (0, int, "1 = no learning-rate decay (Adagrad only)"),
    "normExponent": (0.0, float, "divide bag sums by size**p"),
    "shareEmb": (1, int, "1 = one matrix for lhs and rhs"),
    "lowercase": (0, int, "1 = lowercase input text"),
    "verbose": (1, int, "1 = progress lines on stderr"),
}


class _Parser(argparse.ArgumentParser):
    def error(self, message):
        self.print_usage(sys.stderr)
        print(f"{self.prog}: error: {message}", file=sys.stderr)
        raise SystemExit(EXIT_USAGE)


def _add_flags(p: argparse.ArgumentParser, names: dict[str, tuple]) -> None:
    for name, (default, typ, text) in names.items():
        p.add_argument(f"-{name}", dest=name, type=typ, default=default, help=f"{text} (default: {default})")


def build_parser() -> argparse.ArgumentParser:
    parser = _Parser(prog="embedall", allow_abbrev=False,
                     description="Learn entity embeddings by ranking positive pairs above sampled negatives.")
    sub = parser.add_subparsers(dest="command", parser_class=_Parser, required=True)

    p = sub.add_parser("train", allow_abbrev=False, help="train a model and save it")
    p.add_argument("-input", required=True, help="training file")
    p.add_argument("-model", required=True, help="output model path")
    _add_flags(p, TRAIN_FLAGS)

    p = sub.add_parser("test", allow_abbrev=False, help="accuracy (classification) or ranking metrics")
    p.add_argument("-input", required=True, help="test file")
    p.add_argument("-model", required=True, help="model path")
    _add_flags(p, {"testNegatives": (999, int, "random rhs candidates per query in ranking modes"),
                   "seed": (0, int, "random seed for ranking candidates")})

    p = sub.add_parser("test-kg", allow_abbrev=False, help="link prediction, raw or filtered")
    p.add_argument("-input", required=True, help="test triples")
    p.add_argument("-model", required=True, help="model path")
    p.add_argument("-known", default="", help="comma-separated triple files added to the filter set")
    _add_flags(p, {"protocol": ("filtered", str, "raw|filtered")})

    p = sub.add_parser("predict", allow_abbrev=False, help="top labels for queries read from stdin")
    p.add_argument("-model", required=True, help="model path")
    _add_flags(p, {"topK": (1, int, "labels per query")})

    p = sub.add_parser("nn", allow_abbrev=False, help="nearest dictionary features")
    p.add_argument("-model", required=True, help="model path")
    p.add_argument("-query", default=None, help="query text (default: read lines from stdin)")
    _add_flags(p, {"topK": (10, int, "neighbours per query")})

    p = sub.add_parser("dump", allow_abbrev=False, help="text export of the embeddings")
    p.add_argument("-model", required=True, help="model path")
    p.add_argument("-output", default="-", help="output file (default: stdout)")
    return parser


def config_from_args(a: argparse.Namespace) -> TrainConfig:
    mode = TrainMode.parse(a.trainMode, window=a.ws, max_distance=a.maxDistance or None)
    return TrainConfig(
        epochs=a.epoch, base_lr=a.lr, k=a.negSearchLimit, threads=a.thread, seed=a.seed, mode=mode,
        loss=a.loss, margin=a.margin, sim=a.similarity, dim=a.dim,
        max_norm=a.maxNorm if a.maxNorm > 0 else None, p_drop=a.dropoutRHS,
        time_budget=a.timeBudget or None, validation_fraction=a.validationFraction,
        constant_lr=bool(a.constantLR), norm_exponent=a.normExponent, share_embeddings=bool(a.shareEmb),
        verbose=bool(a.verbose),
    )


def _cmd_train(a) -> int:
    if a.fileFormat not in FORMATS:
        raise _Usage(f"unknown -fileFormat {a.fileFormat!r}")
    try:
        config = config_from_args(a)
    except ValueError as e:
        raise _Usage(str(e)) from None
    corpus, dictionary = load_corpus(a.input, a.fileFormat, "build", min_count=a.minCount,
                                     ngram_order=a.ngrams, bucket_count=a.bucket, label_prefix=a.label,
                                     lowercase=bool(a.lowercase))
    model, report = train(config, corpus, dictionary)
    model.hyperparams.update(file_format=a.fileFormat, lowercase=bool(a.lowercase))
    save_model(model, dictionary, a.model)
    print(f"trained {report.epochs_completed:.2f} epochs, {report.steps} steps, "
          f"final loss {report.final_mean_loss:.6f}, {report.examples_per_second:.0f} ex/s", file=sys.stderr)
    return EXIT_OK


def _stored_mode(model) -> TrainMode:
    m = model.hyperparams.get("mode") or {"spec": "classification", "window": 2, "max_distance": None}
    return TrainMode.parse(m["spec"], m["window"], m["max_distance"])


def _cmd_test(a) -> int:
    model, dictionary = load_model(a.model)
    fmt = model.hyperparams.get("file_format", "labeled_text")
    corpus, _ = load_corpus(a.input, fmt, dictionary, lowercase=model.hyperparams.get("lowercase", False))
    mode = _stored_mode(model)
    if mode.name in ("classification", "multilabel"):
        acc = evaluate_classification(model, corpus, dictionary.label_ids())
        print(f"accuracy\t{acc:.4f}\tn\t{len(corpus)}")
        return EXIT_OK
    if mode.name == "multitask":
        mode = mode.tasks[0][0]
    rng = np.random.default_rng(a.seed)
    sampler = Sampler(mode, corpus)
    idx = sampler.trainable()
    if idx.size < 2:
        raise DataError("need at least two usable test records")
    pairs = [generate_positive(mode, corpus.record(int(i)), rng) for i in idx]
    ranks = []
    for q, (lhs, rhs) in enumerate(pairs):
        others = rng.choice(np.delete(np.arange(len(pairs)), q), size=min(a.testNegatives, len(pairs) - 1),
                            replace=False)
        _, rank = rank_candidates(model, lhs, [rhs] + [pairs[o][1] for o in others], target=0)
        ranks.append(rank)
    report = RankingReport.from_ranks(ranks)
    print(report.table())
    print(report.tsv())
    return EXIT_OK


def _cmd_test_kg(a) -> int:
    if a.protocol not in ("raw", "filtered"):
        raise _Usage("-protocol must be raw or filtered")
    model, dictionary = load_model(a.model)
    corpus, _ = load_corpus(a.input, "triple", dictionary)
    known = None
    if a.protocol == "filtered":
        files = [a.input] + [f for f in a.known.split(",") if f]
        known = load_known_triples(files, dictionary)
    report = evaluate_link_prediction(model, kg_triples(corpus), kg_entity_ids(dictionary),
                                      KgEvalConfig(a.protocol, known))
    print(report.table())
    print(report.tsv())
    return EXIT_OK


def _cmd_predict(a) -> int:
    model, dictionary = load_model(a.model)
    labels = dictionary.label_ids()
    lower = model.hyperparams.get("lowercase", False)
    for line in sys.stdin:
        text = line.lower() if lower else line
        tokens = [t for t in text.split() if not t.startswith(dictionary.label_prefix)]
        top = predict_labels(model, dictionary.encode(tokens), labels, a.topK)
        print(" ".join(dictionary.tokens[i] for i, _ in top) if top else "N/A")
    return EXIT_OK


def _cmd_nn(a) -> int:
    model, dictionary = load_model(a.model)
    queries = [a.query] if a.query is not None else [line for line in sys.stdin]
    for q in queries:
        try:
            hits = nearest_neighbors(model, dictionary, q.split(), a.topK)
        except ValueError:
            print("N/A")
            continue
        for tok, score in hits:
            print(f"{tok}\t{score:.6f}")
        if len(queries) > 1:
            print()
    return EXIT_OK


def _cmd_dump(a) -> int:
    model, dictionary = load_model(a.model)
    if a.output == "-":
        export_text(model, dictionary, sys.stdout)
    else:
        with open(a.output, "w", encoding="utf-8") as f:
            export_text(model, dictionary, f)
    return EXIT_OK


class _Usage(Exception):
    pass


COMMANDS = {"train": _cmd_train, "test": _cmd_test, "test-kg": _cmd_test_kg, "predict": _cmd_predict,
            "nn": _cmd_nn, "dump": _cmd_dump}


def run(argv: list[str] | None = None) -> int:
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
    except SystemExit as e:
        return int(e.code or 0)
    try:
        return COMMANDS[args.command](args)
    except _Usage as e:
        print(f"embedall {args.command}: error: {e}", file=sys.stderr)
        return EXIT_USAGE
    except (DataError, DegenerateRecord, ValueError, IndexError, OSError, UnicodeDecodeError) as e:
        print(f"embedall {args.command}: {e}", file=sys.stderr)
        return EXIT_DATA


def main() -> None:
    sys.exit(run())
