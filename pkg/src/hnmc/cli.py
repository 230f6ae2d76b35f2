"""Command-line interface: train, evaluate, predict, verify.

Exit codes are a stable contract for scripts: 0 success, 1 usage or input
error, 2 verification failure, 3 runtime numerical failure. Scores print
as percentages with two decimals; repeated runs report mean and a 95%
confidence half-width from the Student t distribution over per-seed scores.
"""

import argparse
import json
import pathlib
import sys

import numpy as np
from scipy import stats

from . import hmm as hh
from . import verify as vv
from .data import (embed_corpus, load_embeddings, one_hot_embeddings,
                   read_conll, synth_corpus)
from .hmm import InferenceError
from .layers import MODEL_KINDS, ArchitectureSpec, build_model
from .training import (TrainConfig, TrainingDiverged, evaluate,
                       load_checkpoint, model_from_checkpoint,
                       save_checkpoint, train)

MANIFEST_VERSION = 1


class UsageError(Exception):
    pass


class _Parser(argparse.ArgumentParser):
    def error(self, message):
        raise UsageError(f"{message}\n{self.format_usage()}")


def _add_train(sub):
    p = sub.add_parser("train", help="train a model, optionally over repeated seeds")
    p.add_argument("--model", required=True, choices=MODEL_KINDS)
    p.add_argument("--arch", type=int, default=1, choices=(1, 2, 3))
    p.add_argument("--hidden-size", type=int, default=None)
    p.add_argument("--activation", default="melu", choices=("melu", "exp", "sigmoid"))
    p.add_argument("--epochs", type=int, default=30)
    p.add_argument("--batch-size", type=int, default=32)
    p.add_argument("--lr", type=float, default=0.005)
    p.add_argument("--lr-layers", default=None,
                   help="comma-separated per-layer learning rates for arch 2/3, e.g. 0.05,0.005")
    p.add_argument("--optimizer", default="adam", choices=("adam", "sgd"))
    p.add_argument("--clip-norm", type=float, default=None)
    p.add_argument("--train", dest="train_path", default=None, help="training corpus (column format)")
    p.add_argument("--dev", dest="dev_path", default=None, help="development corpus")
    p.add_argument("--synthetic", default=None, choices=("hmm_sampled", "lookahead"))
    p.add_argument("--train-size", type=int, default=500)
    p.add_argument("--dev-size", type=int, default=100)
    p.add_argument("--data-seed", type=int, default=12345)
    p.add_argument("--token-column", type=int, default=0)
    p.add_argument("--label-column", type=int, default=-1)
    p.add_argument("--embeddings", default=None, help="embedding text file")
    p.add_argument("--one-hot", action="store_true", help="one-hot embeddings over the training vocabulary")
    p.add_argument("--lowercase", action="store_true")
    p.add_argument("--metric", default="accuracy", choices=("accuracy", "span_f1"))
    p.add_argument("--stop-at-dev", type=float, default=None)
    p.add_argument("--seed", type=int, default=1)
    p.add_argument("--repeats", type=int, default=1)
    p.add_argument("--out", default="hnmc_runs")
    p.set_defaults(func=cmd_train)


def _add_evaluate(sub):
    p = sub.add_parser("evaluate", help="score a checkpoint on a corpus")
    p.add_argument("--checkpoint", required=True)
    p.add_argument("--data", required=True)
    p.add_argument("--metric", default="accuracy", choices=("accuracy", "span_f1"))
    p.add_argument("--embeddings", default=None)
    p.add_argument("--token-column", type=int, default=0)
    p.add_argument("--label-column", type=int, default=-1)
    p.add_argument("--out", default=None)
    p.set_defaults(func=cmd_evaluate)


def _add_predict(sub):
    p = sub.add_parser("predict", help="append predicted labels to a column file")
    p.add_argument("--checkpoint", required=True)
    p.add_argument("--input", required=True)
    p.add_argument("--output", required=True)
    p.add_argument("--embeddings", default=None)
    p.add_argument("--token-column", type=int, default=0)
    p.add_argument("--out", default=None)
    p.set_defaults(func=cmd_predict)


def _add_verify(sub):
    p = sub.add_parser("verify", help="run the oracle verification suite")
    p.add_argument("--seeds", type=int, default=100,
                   help="number of seeded random models per equivalence check")
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--max-states", type=int, default=4)
    p.add_argument("--max-length", type=int, default=6)
    p.add_argument("--skip-gradients", action="store_true")
    p.add_argument("--out", default=None)
    p.add_argument("--corrupt-efb", action="store_true", help=argparse.SUPPRESS)
    p.set_defaults(func=cmd_verify)


def build_parser():
    parser = _Parser(prog="hnmc", description=__doc__)
    sub = parser.add_subparsers(dest="command", required=True, parser_class=_Parser)
    _add_train(sub)
    _add_evaluate(sub)
    _add_predict(sub)
    _add_verify(sub)
    return parser


def _pct(x):
    return f"{100.0 * x:.2f}"


def _mean_ci(scores):
    """Mean and 95% confidence half-width (t distribution, ddof=1)."""
    k = len(scores)
    mean = float(np.mean(scores))
    if k < 2:
        return mean, 0.0
    half = float(stats.t.ppf(0.975, k - 1) * np.std(scores, ddof=1) / np.sqrt(k))
    return mean, half


def _write_manifest(out_dir, payload):
    out_dir = pathlib.Path(out_dir)
    out_dir.mkdir(parents=True, exist_ok=True)
    path = out_dir / "manifest.json"
    with open(path, "w", encoding="utf-8") as fh:
        json.dump(payload, fh, indent=2, sort_keys=True)
        fh.write("\n")
    return path


def _load_train_data(args):
    """Returns (train corpus, dev corpus or None, table, embedding info dict)."""
    if (args.synthetic is None) == (args.train_path is None):
        raise UsageError("exactly one of --synthetic and --train is required")
    if args.synthetic:
        train_corpus, table = synth_corpus(args.synthetic, args.data_seed, args.train_size, "train")
        dev_corpus, _ = synth_corpus(args.synthetic, args.data_seed + 1, args.dev_size, "dev")
        info = {"type": "one-hot", "vocab": sorted(table.vectors)}
        return train_corpus, dev_corpus, table, info
    train_corpus = read_conll(args.train_path, args.token_column, args.label_column)
    train_corpus.split = "train"
    dev_corpus = None
    if args.dev_path:
        dev_corpus = read_conll(args.dev_path, args.token_column, args.label_column,
                                label_names=train_corpus.label_names)
        dev_corpus.split = "dev"
    if args.embeddings and args.one_hot:
        raise UsageError("--embeddings and --one-hot are mutually exclusive")
    if args.embeddings:
        table = load_embeddings(args.embeddings, args.lowercase)
        info = {"type": "file", "path": args.embeddings, "dim": table.dim,
                "lowercase": args.lowercase}
    elif args.one_hot:
        vocab = sorted({t for tokens, _ in train_corpus.sequences for t in tokens})
        table = one_hot_embeddings(vocab)
        info = {"type": "one-hot", "vocab": vocab}
    else:
        raise UsageError("file corpora need --embeddings PATH or --one-hot")
    return train_corpus, dev_corpus, table, info


def _parse_lr_layers(args):
    if args.lr_layers is None:
        return (0.05, 0.005)
    try:
        values = tuple(float(v) for v in args.lr_layers.split(","))
    except ValueError:
        raise UsageError(f"cannot parse --lr-layers {args.lr_layers!r}") from None
    if args.arch in (2, 3) and len(values) != 2:
        raise UsageError(f"architecture {args.arch} has 2 parameter groups; "
                         f"--lr-layers needs 2 entries, got {len(values)}")
    return values


def cmd_train(args):
    train_corpus, dev_corpus, table, emb_info = _load_train_data(args)
    train_data = embed_corpus(train_corpus, table)
    dev_data = embed_corpus(dev_corpus, table) if dev_corpus else None
    spec = ArchitectureSpec(args.model, args.arch, len(train_corpus.label_names),
                            table.dim, args.hidden_size, args.activation)
    config = TrainConfig(
        batch_size=args.batch_size, epochs=args.epochs, lr_model=args.lr,
        lr_layers=_parse_lr_layers(args), optimizer=args.optimizer,
        clip_norm=args.clip_norm, metric=args.metric, stop_at_dev=args.stop_at_dev)
    out_dir = pathlib.Path(args.out)
    out_dir.mkdir(parents=True, exist_ok=True)
    scores, checkpoint_paths = [], []
    for rep in range(args.repeats):
        run_seed = args.seed + rep
        config.seed = run_seed
        model = build_model(spec, np.random.default_rng([run_seed, 17]))
        result = train(model, train_data, dev_data, config)
        score = result.best_score
        if score is None:
            score = evaluate(model, train_data, args.metric, train_corpus.label_names)
        path = out_dir / f"run{rep}.ckpt"
        save_checkpoint(path, model, {
            "labels": train_corpus.label_names,
            "embedding": emb_info,
            "train_config": config.to_dict(),
            "seed": run_seed,
            "epoch": result.best_epoch,
            "score": score,
            "rng_state": result.rng_state,
        })
        checkpoint_paths.append(str(path))
        scores.append(score)
        print(f"run {rep}: seed {run_seed}, best epoch {result.best_epoch}, "
              f"{args.metric} {_pct(score)}%")
    mean, half = _mean_ci(scores)
    print(f"{args.model} arch {args.arch} {args.metric}: {_pct(mean)}% +/- {_pct(half)} "
          f"({args.repeats} runs)")
    _write_manifest(out_dir, {
        "manifest_version": MANIFEST_VERSION,
        "command": "train",
        "flags": {k: v for k, v in vars(args).items() if k != "func"},
        "model": spec.to_dict(),
        "train_config": config.to_dict(),
        "embedding": emb_info,
        "seeds": [args.seed + r for r in range(args.repeats)],
        "scores": scores,
        "mean": mean,
        "ci95_half_width": half,
        "checkpoints": checkpoint_paths,
    })
    return 0


def _table_from_checkpoint(config, embeddings_flag):
    info = config["embedding"]
    if info["type"] == "one-hot":
        return one_hot_embeddings(info["vocab"])
    if embeddings_flag is None:
        raise UsageError("checkpoint was trained on file embeddings; pass --embeddings")
    table = load_embeddings(embeddings_flag, info.get("lowercase", False))
    if table.dim != info["dim"]:
        raise UsageError(f"embedding dimension {table.dim} does not match "
                         f"checkpoint dimension {info['dim']}")
    return table


def cmd_evaluate(args):
    ckpt = load_checkpoint(args.checkpoint)
    model = model_from_checkpoint(ckpt)
    labels = ckpt.config["labels"]
    corpus = read_conll(args.data, args.token_column, args.label_column, label_names=labels)
    table = _table_from_checkpoint(ckpt.config, args.embeddings)
    data = embed_corpus(corpus, table)
    score = evaluate(model, data, args.metric, labels)
    print(f"{args.metric}: {_pct(score)}%")
    if args.out:
        _write_manifest(args.out, {
            "manifest_version": MANIFEST_VERSION,
            "command": "evaluate",
            "flags": {k: v for k, v in vars(args).items() if k != "func"},
            "score": score,
        })
    return 0


def cmd_predict(args):
    ckpt = load_checkpoint(args.checkpoint)
    model = model_from_checkpoint(ckpt)
    labels = ckpt.config["labels"]
    table = _table_from_checkpoint(ckpt.config, args.embeddings)
    if table.dim != model.spec.embedding_dim:
        raise UsageError(f"embedding dimension {table.dim} does not match model "
                         f"input width {model.spec.embedding_dim}")
    out_lines = []
    pending = []  # (raw line, token) of the current sentence

    def flush():
        if not pending:
            return
        tokens = [tok for _, tok in pending]
        predicted = model.predict(table.embed(tokens))
        for (raw, _), idx in zip(pending, predicted):
            out_lines.append(f"{raw} {labels[idx]}")
        pending.clear()

    with open(args.input, encoding="utf-8") as fh:
        for line in fh:
            line = line.rstrip("\n")
            if not line.strip():
                flush()
                out_lines.append("")
                continue
            if line.startswith("-DOCSTART-"):
                flush()
                out_lines.append(line)
                continue
            cols = line.split()
            try:
                token = cols[args.token_column]
            except IndexError:
                raise ValueError(f"{args.input}: ragged line {line!r}") from None
            pending.append((line, token))
    flush()
    with open(args.output, "w", encoding="utf-8") as fh:
        for line in out_lines:
            fh.write(line + "\n")
        if not out_lines:
            pass  # empty input stays an empty output
    if args.out:
        _write_manifest(args.out, {
            "manifest_version": MANIFEST_VERSION,
            "command": "predict",
            "flags": {k: v for k, v in vars(args).items() if k != "func"},
        })
    return 0


def _corrupted_efb(ent, obs):
    # off-by-one negative control: reads the observation sequence rotated
    rotated = list(obs[1:]) + [obs[0]]
    return hh.efb(ent, rotated)


def cmd_verify(args):
    results = vv.run_all(
        n_models=args.seeds, seed=args.seed, max_states=args.max_states,
        max_length=args.max_length,
        efb_impl=_corrupted_efb if args.corrupt_efb else None,
        include_gradients=not args.skip_gradients)
    failed = False
    for res in results:
        status = "PASS" if res.passed else "FAIL"
        failed = failed or not res.passed
        print(f"{status} {res.name}: worst error {res.worst_error:.3e} "
              f"(tolerance {res.tolerance:.0e})")
    if args.out:
        _write_manifest(args.out, {
            "manifest_version": MANIFEST_VERSION,
            "command": "verify",
            "flags": {k: v for k, v in vars(args).items() if k != "func"},
            "results": [{"name": r.name, "worst_error": r.worst_error,
                         "tolerance": r.tolerance, "passed": r.passed} for r in results],
        })
    return 2 if failed else 0


def main(argv=None):
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
    except UsageError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 1
    try:
        return args.func(args)
    except UsageError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 1
    except (TrainingDiverged, InferenceError) as exc:
        print(f"numerical failure: {exc}", file=sys.stderr)
        return 3
    except (ValueError, OSError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 1


def entry():
    sys.exit(main())


if __name__ == "__main__":
    entry()
