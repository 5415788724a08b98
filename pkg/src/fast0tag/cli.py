"""fast0tag command line: synth, train, predict, eval, analyze.

Every option can also come from a ``--config`` file of ``key = value`` lines
(keys are option names with or without dashes); flags given on the command
line win. Exit codes: 0 success, 2 usage/config/data error, 3 numerical
failure. Logs go to stderr.
"""

from __future__ import annotations

import argparse
import json
import logging
import os
import sys

from fast0tag import __version__
from fast0tag.errors import DataError, NumericalError

log = logging.getLogger("fast0tag")

EXIT_OK, EXIT_DATA, EXIT_NUMERIC = 0, 2, 3


class UsageError(DataError):
    pass


# --------------------------------------------------------------------------
# argument plumbing


def _global_options():
    p = argparse.ArgumentParser(add_help=False)
    g = p.add_argument_group("global")
    g.add_argument("--config", help="key = value file; command-line flags override it")
    g.add_argument("--seed", type=int, default=0)
    g.add_argument("--threads", type=int, default=None,
                   help="worker cap for per-image SVM fits (default: all cores)")
    g.add_argument("--log-level", default="INFO")
    return p


def _data_options(p, annotations=True, splits=True, embeddings=True):
    if embeddings:
        p.add_argument("--embeddings", help="GloVe-style text embeddings")
    p.add_argument("--features", help="features TSV or F0TG binary")
    if annotations:
        p.add_argument("--annotations")
    if splits:
        p.add_argument("--splits")
    p.add_argument("--seen", help="seen tags, one per line")
    p.add_argument("--unseen", help="unseen tags, one per line")


def _svm_options(p, lam=1.0):
    p.add_argument("--lambda", dest="lam", type=float, default=lam)
    p.add_argument("--svm-max-iter", type=int, default=2000)
    p.add_argument("--svm-tol", type=float, default=1e-6)
    p.add_argument("--svm-eta0", type=float, default=1.0)


def build_parser():
    common = _global_options()
    parser = argparse.ArgumentParser(prog="fast0tag", description=__doc__.split("\n")[0])
    parser.add_argument("--version", action="version", version=__version__)
    sub = parser.add_subparsers(dest="command", metavar="COMMAND")
    sub.required = True
    commands = {}

    p = sub.add_parser("synth", parents=[common], help="generate a synthetic dataset")
    p.add_argument("--out", help="output directory")
    p.add_argument("--num-images", type=int, default=2000)
    p.add_argument("--num-seen", type=int, default=60)
    p.add_argument("--num-unseen", type=int, default=20)
    p.add_argument("--feature-dim", type=int, default=32)
    p.add_argument("--embed-dim", type=int, default=32)
    p.add_argument("--margin", type=float, default=0.1)
    p.add_argument("--noise-sigma", type=float, default=0.05)
    p.add_argument("--binary", action="store_true", help="write features in F0TG binary form")
    commands["synth"] = p

    p = sub.add_parser("train", parents=[common], help="train a linear or net model")
    p.add_argument("--model", choices=("linear", "net"))
    _data_options(p)
    p.add_argument("--out", help="model file to write")
    p.add_argument("--format", choices=("text", "binary"), default="text")
    p.add_argument("--log", dest="log_csv", help="per-epoch CSV log (net)")
    p.add_argument("--figure", help="training-curve figure (net)")
    _svm_options(p)
    p.add_argument("--ridge", type=float, default=1e-6)
    p.add_argument("--batch-size", type=int, default=1000)
    p.add_argument("--learning-rate", type=float, default=1e-2)
    p.add_argument("--max-epochs", type=int, default=100)
    p.add_argument("--patience", type=int, default=10)
    p.add_argument("--dropout", type=float, default=0.3)
    p.add_argument("--hidden", type=int, nargs=2, metavar=("H1", "H2"))
    p.add_argument("--no-normalize-per-image", dest="normalize_per_image",
                   action="store_false", default=True)
    commands["train"] = p

    p = sub.add_parser("predict", parents=[common], help="rank tags for each image")
    p.add_argument("--model")
    _data_options(p, annotations=False)
    p.add_argument("--split", choices=("train", "val", "test"),
                   help="only images of this split (needs --splits)")
    p.add_argument("--scenario", default="conventional",
                   choices=("conventional", "zeroshot", "zero_shot", "mixed", "seen_unseen"))
    p.add_argument("--top", type=int, help="truncate each ranking")
    p.add_argument("--out", help="predictions TSV (default: stdout)")
    commands["predict"] = p

    p = sub.add_parser("eval", parents=[common], help="MiAP and top-K P/R/F1")
    p.add_argument("--predictions")
    p.add_argument("--annotations")
    p.add_argument("--vocab", action="append",
                   help="candidate vocabulary file(s); default: tags present in the predictions")
    p.add_argument("--k", type=int, action="append", help="repeatable (default 3 and 5)")
    p.add_argument("--report", help="key = value report (default: stdout)")
    p.add_argument("--json", help="JSON report")
    p.add_argument("--figure")
    commands["eval"] = p

    p = sub.add_parser("analyze", help="principal-direction experiments and baselines")
    asub = p.add_subparsers(dest="analysis", metavar="ANALYSIS")
    asub.required = True

    a = asub.add_parser("rankability", parents=[common])
    a.add_argument("--embeddings", dest="embedding_sources", action="append",
                   help="[LABEL=]PATH, repeatable")
    _data_options(a, embeddings=False)
    a.add_argument("--lambda-grid", default="1e-4,1e-3,1e-2,1e-1,1,10")
    a.add_argument("--split", default="val")
    a.add_argument("--out", help="CSV (default: stdout)")
    a.add_argument("--figure")
    _svm_options(a)
    commands["rankability"] = a

    a = asub.add_parser("offsets", parents=[common])
    _data_options(a)
    a.add_argument("--image-id")
    a.add_argument("--pca-k", type=int, default=2, help="0 disables PCA columns")
    a.add_argument("--out", help="CSV (default: stdout)")
    a.add_argument("--figure")
    commands["offsets"] = a

    a = asub.add_parser("seen2unseen", parents=[common])
    a.add_argument("--predictions", help="seen-tag rankings from any tagger")
    a.add_argument("--embeddings")
    a.add_argument("--seen")
    a.add_argument("--unseen")
    a.add_argument("--top-k-pos", type=int, default=5)
    a.add_argument("--scenario", default="zeroshot",
                   choices=("zeroshot", "zero_shot", "mixed", "seen_unseen"))
    a.add_argument("--out", help="predictions TSV (default: stdout)")
    _svm_options(a)
    commands["seen2unseen"] = a

    a = asub.add_parser("ranksvm-oracle", parents=[common])
    _data_options(a)
    a.add_argument("--split", default="test")
    a.add_argument("--out", help="predictions TSV (default: stdout)")
    _svm_options(a)
    commands["ranksvm-oracle"] = a
    return parser, commands


def _read_config(path):
    values = {}
    with open(path, encoding="utf-8") as fh:
        for lineno, raw in enumerate(fh, start=1):
            line = raw.strip()
            if not line or line.startswith("#"):
                continue
            key, sep, value = line.partition("=")
            if not sep:
                raise UsageError(f"{path}:{lineno}: expected 'key = value'")
            values[key.strip().lstrip("-").replace("-", "_")] = value.strip()
    return values


def _apply_config(sub, values, argv, parser):
    """Install config-file values as defaults of ``sub`` and reparse ``argv``."""
    actions = {a.dest: a for a in sub._actions if a.dest not in ("help", "config")}
    # Some flags map to a different dest (e.g. --lambda -> lam).
    by_flag = {s.lstrip("-").replace("-", "_"): a for a in sub._actions for s in a.option_strings}
    defaults = {}
    for key, value in values.items():
        action = actions.get(key) or by_flag.get(key)
        if action is None or action.dest == "config":
            raise UsageError(f"unknown config key {key!r}")
        if isinstance(action, (argparse._StoreTrueAction, argparse._StoreFalseAction)):
            flag = value.lower() in ("1", "true", "yes", "on")
            if value.lower() not in ("1", "0", "true", "false", "yes", "no", "on", "off"):
                raise UsageError(f"config key {key!r}: expected a boolean, got {value!r}")
            defaults[action.dest] = flag if isinstance(action, argparse._StoreTrueAction) else not flag
        elif action.nargs not in (None, "?") or isinstance(action, argparse._AppendAction):
            conv = action.type or str
            try:
                defaults[action.dest] = [conv(v) for v in value.split()]
            except ValueError:
                raise UsageError(f"config key {key!r}: bad value {value!r}") from None
        else:
            conv = action.type or str
            try:
                defaults[action.dest] = conv(value)
            except ValueError:
                raise UsageError(f"config key {key!r}: bad value {value!r}") from None
            if action.choices is not None and defaults[action.dest] not in action.choices:
                raise UsageError(f"config key {key!r}: {value!r} not in {list(action.choices)}")
    sub.set_defaults(**defaults)
    return parser.parse_args(argv)


def _need(args, *names):
    missing = [n for n in names if getattr(args, n, None) in (None, [])]
    if missing:
        flags = ", ".join("--" + n.replace("_", "-") for n in missing)
        raise UsageError(f"missing required option(s): {flags}")


def _open_out(path, binary=False):
    if path is None or path == "-":
        return sys.stdout.buffer if binary else sys.stdout, False
    if binary:
        return open(path, "wb"), True
    return open(path, "w", encoding="utf-8", newline="\n"), True


def _write_text(path, text):
    fh, close = _open_out(path)
    try:
        fh.write(text)
    finally:
        if close:
            fh.close()
        else:
            fh.flush()


# --------------------------------------------------------------------------
# loaders


def _load_table(path):
    from fast0tag.embeddings import normalize, read_embeddings
    return normalize(read_embeddings(path))


def _load_partition(args, table):
    from fast0tag.dataset import read_partition
    return read_partition(args.seen, args.unseen, table)


def _load_dataset(args, vocabulary=None):
    from fast0tag.dataset import read_dataset
    return read_dataset(args.features, args.annotations, args.splits, vocabulary)


def _svm_opts(args):
    from fast0tag.ranksvm import SvmOptions
    return SvmOptions(max_iterations=args.svm_max_iter, eta0=args.svm_eta0, tol=args.svm_tol)


# --------------------------------------------------------------------------
# commands


def cmd_synth(args):
    from fast0tag.synth import SynthSpec, generate, write_synth
    _need(args, "out")
    spec = SynthSpec(num_images=args.num_images, num_seen_tags=args.num_seen,
                     num_unseen_tags=args.num_unseen, feature_dim=args.feature_dim,
                     embed_dim=args.embed_dim, margin=args.margin,
                     noise_sigma=args.noise_sigma, seed=args.seed)
    paths = write_synth(generate(spec), args.out, binary=args.binary)
    for role, path in paths.items():
        log.info("wrote %s: %s", role, path)


def cmd_train(args):
    _need(args, "model", "embeddings", "features", "annotations", "splits", "seen", "unseen", "out")
    table = _load_table(args.embeddings)
    partition = _load_partition(args, table)
    dataset = _load_dataset(args)
    binary = args.format == "binary"
    if args.model == "linear":
        from fast0tag.linear_map import save_linear_binary, save_linear_text, two_stage_train
        model, report = two_stage_train(dataset, table, partition, args.lam, args.ridge,
                                        _svm_opts(args), args.threads)
        log.info("two-stage fit: %d images used, %d without ranking constraints, "
                 "%d diverged, %d SVMs unconverged", report.images_used,
                 len(report.dropped_no_rule), len(report.dropped_diverged), report.svm_unconverged)
        log.info("residual_rms = %.6g", model.residual_rms)
        save = save_linear_binary if binary else save_linear_text
    else:
        from fast0tag.ranknet import TrainConfig, save_net_binary, save_net_text, train
        config = TrainConfig(batch_size=args.batch_size, learning_rate=args.learning_rate,
                             max_epochs=args.max_epochs, patience=args.patience,
                             dropout_rate=args.dropout,
                             normalize_per_image=args.normalize_per_image,
                             seed=args.seed,
                             hidden_sizes=tuple(args.hidden) if args.hidden else None)
        log.info("normalize_per_image = %s", config.normalize_per_image)
        model, history = train(
            dataset, table, partition, config,
            on_epoch=lambda row: log.info("epoch %d: loss %.6g, val MiAP %.6f (best %.6f)", *row))
        log.info("best epoch %d of %d%s", history.best_epoch, len(history.rows),
                 " (early stop)" if history.stopped_early else "")
        if args.log_csv:
            _write_text(args.log_csv, history.to_csv())
        if args.figure:
            from fast0tag.plotting import plot_training_log
            plot_training_log(history, args.figure)
        save = save_net_binary if binary else save_net_text
    fh, close = _open_out(args.out, binary=binary)
    try:
        save(model, fh)
    finally:
        if close:
            fh.close()
    log.info("wrote model: %s", args.out)


def cmd_predict(args):
    from fast0tag.dataset import load_normalized_features, read_splits
    from fast0tag.tagger import read_model, tag_images, write_predictions
    _need(args, "model", "embeddings", "features", "seen", "unseen")
    table = _load_table(args.embeddings)
    partition = _load_partition(args, table)
    model = read_model(args.model)
    with open(args.features, "rb") as fh:
        ids, X = load_normalized_features(fh)
    if model.feature_dim != X.shape[1]:
        raise DataError(f"model expects {model.feature_dim}-d features, file has {X.shape[1]}")
    if args.split:
        _need(args, "splits")
        split_of = read_splits(args.splits, ids)
        rows = [i for i, image_id in enumerate(ids) if split_of.get(image_id) == args.split]
        ids, X = [ids[i] for i in rows], X[rows]
    if args.top is not None and args.top < 1:
        raise UsageError("--top must be positive")
    rankings = tag_images(model, X, table, partition, args.scenario) if len(ids) else []
    fh, close = _open_out(args.out)
    try:
        write_predictions(zip(ids, rankings), fh, args.top)
    finally:
        if close:
            fh.close()
    log.info("ranked %d images (%s)", len(ids), args.scenario)


def _read_vocab(paths):
    names = []
    for path in paths:
        with open(path, encoding="utf-8", newline="") as fh:
            names.extend(line.rstrip("\n") for line in fh if line.strip())
    return set(names)


def cmd_eval(args):
    from fast0tag.dataset import read_annotations
    from fast0tag.evalkit import evaluate
    from fast0tag.tagger import read_predictions
    _need(args, "predictions", "annotations")
    with open(args.predictions, encoding="utf-8", newline="") as fh:
        rankings = read_predictions(fh)
    with open(args.annotations, encoding="utf-8", newline="") as fh:
        annotations = read_annotations(fh)
    if args.vocab:
        vocab = _read_vocab(args.vocab)
    else:
        vocab = {t for names in rankings.values() for t in names}
    truths = {k: annotations.get(k, frozenset()) & vocab for k in rankings}
    ks = sorted(set(args.k or [3, 5]))
    report = evaluate(rankings, truths, ks)
    if args.json:
        _write_text(args.json, report.to_json())
    _write_text(args.report, report.to_text())
    if args.figure:
        from fast0tag.plotting import plot_eval
        plot_eval(report, args.figure)
    if report.images_skipped_no_positives:
        log.info("%d images without relevant candidate tags were skipped",
                 report.images_skipped_no_positives)


def _labelled_tables(sources):
    tables = []
    for source in sources:
        label, sep, path = source.partition("=")
        if not sep:
            path = source
            label = os.path.splitext(os.path.basename(source))[0]
        tables.append((label, _load_table(path)))
    return tables


def cmd_rankability(args):
    from fast0tag.analysis import rankability_experiment
    _need(args, "embedding_sources", "features", "annotations", "splits", "seen", "unseen")
    tables = _labelled_tables(args.embedding_sources)
    partition = _load_partition(args, tables[0][1])
    for label, table in tables[1:]:
        partition.check(table)
    try:
        grid = [float(v) for v in args.lambda_grid.replace(",", " ").split()]
    except ValueError:
        raise UsageError(f"bad --lambda-grid {args.lambda_grid!r}") from None
    dataset = _load_dataset(args)
    report = rankability_experiment(dataset, tables, partition, grid, args.split,
                                    _svm_opts(args), args.threads)
    _write_text(args.out, report.to_csv())
    if args.figure:
        from fast0tag.plotting import plot_rankability
        plot_rankability(report, args.figure)


def cmd_offsets(args):
    from fast0tag.analysis import compute_offsets, offsets_csv, pca_project
    from fast0tag.dataset import derive_rule
    _need(args, "embeddings", "features", "annotations", "splits", "seen", "unseen", "image_id")
    table = _load_table(args.embeddings)
    partition = _load_partition(args, table)
    dataset = _load_dataset(args)
    pos, neg = derive_rule(dataset, args.image_id, partition)
    offsets = compute_offsets(table.matrix(pos), table.matrix(neg))
    coords = None
    if args.pca_k:
        coords = pca_project(offsets, args.pca_k).coords
    _write_text(args.out, offsets_csv(pos, neg, offsets, coords))
    if args.figure:
        if coords is None:
            raise UsageError("--figure needs --pca-k >= 1")
        from fast0tag.plotting import plot_pca
        plot_pca(coords, args.figure, title=f"offsets of {args.image_id}")


def cmd_seen2unseen(args):
    from fast0tag.analysis import seen2unseen
    from fast0tag.tagger import read_predictions, write_predictions
    _need(args, "predictions", "embeddings", "seen", "unseen")
    table = _load_table(args.embeddings)
    partition = _load_partition(args, table)
    with open(args.predictions, encoding="utf-8", newline="") as fh:
        base = read_predictions(fh)
    seen = set(partition.seen)
    rows = []
    for image_id, names in base.items():
        if set(names) != seen:
            raise DataError(f"base ranking for {image_id!r} does not cover exactly the seen tags")
        rows.append((image_id, seen2unseen(names, table, partition.unseen, args.lam,
                                           args.top_k_pos,
                                           include_seen=args.scenario in ("mixed", "seen_unseen"),
                                           svm_opts=_svm_opts(args))))
    fh, close = _open_out(args.out)
    try:
        write_predictions(rows, fh)
    finally:
        if close:
            fh.close()


def cmd_ranksvm_oracle(args):
    from fast0tag.analysis import ranksvm_oracle
    from fast0tag.tagger import write_predictions
    _need(args, "embeddings", "features", "annotations", "splits", "seen", "unseen")
    table = _load_table(args.embeddings)
    partition = _load_partition(args, table)
    dataset = _load_dataset(args)
    result = ranksvm_oracle(dataset, table, partition, args.lam, args.split,
                            _svm_opts(args), args.threads)
    log.info("oracle ranked %d images, skipped %d without a seen-tag rule",
             len(result.rankings), len(result.skipped))
    fh, close = _open_out(args.out)
    try:
        write_predictions(result.rankings.items(), fh)
    finally:
        if close:
            fh.close()


HANDLERS = {
    "synth": cmd_synth,
    "train": cmd_train,
    "predict": cmd_predict,
    "eval": cmd_eval,
    "rankability": cmd_rankability,
    "offsets": cmd_offsets,
    "seen2unseen": cmd_seen2unseen,
    "ranksvm-oracle": cmd_ranksvm_oracle,
}


def _resolved(args):
    return {k: v for k, v in sorted(vars(args).items()) if k not in ("log_level",)}


def main(argv=None) -> int:
    argv = list(sys.argv[1:] if argv is None else argv)
    parser, commands = build_parser()
    args = parser.parse_args(argv)
    name = args.analysis if args.command == "analyze" else args.command
    logging.basicConfig(level=getattr(logging, str(args.log_level).upper(), logging.INFO),
                        format="%(levelname)s %(name)s: %(message)s", stream=sys.stderr,
                        force=True)
    logging.getLogger("matplotlib").setLevel(logging.WARNING)
    try:
        if args.config:
            args = _apply_config(commands[name], _read_config(args.config), argv, parser)
        if args.threads is not None and args.threads < 1:
            raise UsageError("--threads must be positive")
        log.info("resolved config: %s", json.dumps(_resolved(args), default=str))
        HANDLERS[name](args)
    except BrokenPipeError:
        # Downstream reader (e.g. ``head``) closed early; not an error.
        sys.stdout = open(os.devnull, "w")
        return EXIT_OK
    except NumericalError as exc:
        log.error("numerical failure: %s", exc)
        return EXIT_NUMERIC
    except (DataError, OSError) as exc:
        log.error("%s", exc)
        return EXIT_DATA
    return EXIT_OK


if __name__ == "__main__":
    sys.exit(main())
