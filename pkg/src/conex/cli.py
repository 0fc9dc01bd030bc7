"""Command-line entry point: ``conex {train,eval,ensemble,ablate,per-relation,gradcheck}``.

Options can also come from a ``--config`` file of ``key=value`` lines (keys are
the long option names, with or without leading dashes). Command-line flags win
over the config file, which wins over built-in defaults.

Errors are reported as one line on stderr, ``error: <code>: <message>``, with
a non-zero exit status.
"""
from __future__ import annotations

import argparse
import dataclasses
import sys
from contextlib import nullcontext
from pathlib import Path
from typing import Sequence

from threadpoolctl import threadpool_limits

from . import checkpoint as ckpt
from .evaluation import (
    Metrics,
    ablate_evaluate,
    ensemble_evaluate,
    evaluate,
    per_relation_mrr,
    write_rank_csv,
)
from .gradcheck import run_default
from .kgdata import Dataset, ParseError, add_reciprocals, build_filter_index, load_dataset
from .stats import confidence_interval
from .training import TRAIN_ABLATIONS, TrainConfig, fit

ABLATIONS = ("no-conv",) + TRAIN_ABLATIONS

# option name -> (TrainConfig field, type)
TRAIN_OPTIONS = {
    "model": ("kind", str),
    "d": ("d", int),
    "c": ("c", int),
    "lr": ("lr", float),
    "batch": ("batch_size", int),
    "input-dropout": ("input_dropout", float),
    "feature-dropout": ("feature_dropout", float),
    "label-smoothing": ("label_smoothing", float),
    "epochs": ("epochs", int),
    "seed": ("seed", int),
    "optimizer": ("optimizer", str),
}


class UsageError(Exception):
    code = "usage"


class _Parser(argparse.ArgumentParser):
    def error(self, message):
        raise UsageError(message)


def _read_config_file(path: str) -> dict[str, str]:
    out = {}
    with open(path, encoding="utf-8") as f:
        for lineno, line in enumerate(f, start=1):
            line = line.split("#", 1)[0].strip()
            if not line:
                continue
            key, sep, value = line.partition("=")
            if not sep:
                raise UsageError(f"{path}:{lineno}: expected key=value")
            out[key.strip().lstrip("-").replace("_", "-")] = value.strip()
    return out


def _train_config(args) -> TrainConfig:
    file_values = _read_config_file(args.config) if args.config else {}
    unknown = set(file_values) - set(TRAIN_OPTIONS) - {"dataset", "merge-train-valid", "skip-oov"}
    if unknown:
        raise UsageError(f"unknown config keys: {', '.join(sorted(unknown))}")
    values = {}
    for option, (fieldname, kind) in TRAIN_OPTIONS.items():
        flag = getattr(args, option.replace("-", "_"), None)
        if flag is not None:
            values[fieldname] = flag
        elif option in file_values:
            try:
                values[fieldname] = kind(file_values[option])
            except ValueError:
                raise UsageError(f"bad value for {option}: {file_values[option]!r}") from None
    try:
        return TrainConfig(**values)
    except ValueError as e:
        raise UsageError(str(e)) from None


def _config_metadata(config: TrainConfig) -> dict[str, str]:
    meta = {f.name: getattr(config, f.name) for f in dataclasses.fields(config)}
    meta["kind"] = config.kind.value
    return {f"train.{k}": v for k, v in meta.items()}


def _config_from_metadata(meta: dict[str, str]) -> TrainConfig:
    values = {}
    for f in dataclasses.fields(TrainConfig):
        key = f"train.{f.name}"
        if key in meta:
            raw = meta[key]
            values[f.name] = raw if f.name in ("kind", "optimizer") else type(getattr(TrainConfig(), f.name))(raw)
    return TrainConfig(**values)


def _dataset(args, merge: bool | None = None) -> Dataset:
    directory = getattr(args, "dataset", None)
    if not directory:
        file_values = _read_config_file(args.config) if getattr(args, "config", None) else {}
        directory = file_values.get("dataset")
    if not directory:
        raise UsageError("--dataset is required")
    if merge is None:
        merge = bool(getattr(args, "merge_train_valid", False))
    return load_dataset(directory, merge_train_valid=merge)


def _filter(ds: Dataset):
    v = ds.vocab
    return build_filter_index(*(add_reciprocals(s, v) for s in (ds.train, ds.valid, ds.test)))


def _split(ds: Dataset, name: str):
    return getattr(ds, name), ds.rejected.get(name, [])


def _policy(args) -> str:
    return "skip" if args.skip_oov else "include"


def _load_for(path: str, args) -> tuple[ckpt.Checkpoint, Dataset]:
    checkpoint = ckpt.load_checkpoint(path)
    merged = checkpoint.metadata.get("merge_train_valid", "0") == "1"
    ds = _dataset(args, merge=merged)
    checkpoint.check_vocab(ds.vocab.digest())
    return checkpoint, ds


def _print_metrics(metrics: Metrics, prefix: str = "", out=None) -> None:
    out = out or sys.stdout
    for key, value in metrics.as_dict().items():
        out.write(f"{prefix}{key}\t{value}\n")


# --------------------------------------------------------------------------
# commands


def cmd_train(args) -> int:
    config = _train_config(args)
    ds = _dataset(args)
    out = Path(args.out)
    log_path = Path(args.log) if args.log else out.with_suffix(out.suffix + ".log")
    with open(log_path, "w", encoding="utf-8") as log_file:
        params, history = fit(
            ds, config, validate_every=args.validate_every,
            on_epoch=lambda entry: (log_file.write(entry.line() + "\n"), log_file.flush()),
        )
    meta = {
        "seed": config.seed,
        "epoch": config.epochs,
        "vocab_hash": ds.vocab.digest(),
        "merge_train_valid": int(ds.merged),
        **_config_metadata(config),
    }
    ckpt.save_checkpoint(out, params, meta)
    print(f"checkpoint\t{out}")
    print(f"log\t{log_path}")
    if history:
        print(f"final_loss\t{history[-1].loss}")
    if ds.valid:
        metrics, _ = evaluate(params, ds.valid, _filter(ds), ds.rejected.get("valid", []), _policy(args))
        _print_metrics(metrics, "valid.")
    return 0


def cmd_eval(args) -> int:
    checkpoint, ds = _load_for(args.checkpoint, args)
    triples, oov = _split(ds, args.split)
    metrics, records = evaluate(checkpoint.params, triples, _filter(ds), oov, _policy(args))
    _print_metrics(metrics)
    if args.per_relation:
        for name, mrr in per_relation_mrr(records, ds.vocab).items():
            print(f"relation.{name}.mrr\t{mrr}")
    if args.ranks_csv:
        with open(args.ranks_csv, "w", encoding="utf-8") as f:
            write_rank_csv(records, ds.vocab.base_relation_count, f)
    return 0


def cmd_per_relation(args) -> int:
    checkpoint, ds = _load_for(args.checkpoint, args)
    triples, oov = _split(ds, args.split)
    _, records = evaluate(checkpoint.params, triples, _filter(ds), oov, _policy(args))
    print("relation\tmrr")
    for name, mrr in per_relation_mrr(records, ds.vocab).items():
        print(f"{name}\t{mrr}")
    return 0


def cmd_ensemble(args) -> int:
    if len(args.checkpoint) < 2:
        raise UsageError("ensemble needs at least two --checkpoint values")
    loaded = [ckpt.load_checkpoint(p) for p in args.checkpoint]
    hashes = {c.vocab_hash for c in loaded}
    merges = {c.metadata.get("merge_train_valid", "0") for c in loaded}
    if len(hashes) != 1 or len(merges) != 1:
        raise ckpt.VocabMismatchError("checkpoints were trained on different vocabularies")
    ds = _dataset(args, merge=merges.pop() == "1")
    loaded[0].check_vocab(ds.vocab.digest())
    triples, oov = _split(ds, args.split)
    metrics, _ = ensemble_evaluate([c.params for c in loaded], triples, _filter(ds), oov, _policy(args))
    _print_metrics(metrics)
    return 0


def _report_runs(label: str, runs: list[Metrics]) -> None:
    for key in ("mrr", "hits@10", "hits@3", "hits@1"):
        values = [m.as_dict()[key] for m in runs]
        if len(values) >= 2:
            mean, half = confidence_interval(values)
            print(f"{label}.{key}\t{mean}\t{half}")
        else:
            print(f"{label}.{key}\t{values[0]}")


def cmd_ablate(args) -> int:
    which = args.which
    if which not in ABLATIONS:
        raise UsageError(f"unknown ablation {which!r}; choose from {', '.join(ABLATIONS)}")
    if args.seeds < 1:
        raise UsageError("--seeds must be positive")
    full_runs, ablated_runs = [], []
    if args.checkpoint:
        checkpoint, ds = _load_for(args.checkpoint, args)
        if checkpoint.params.kind.value != "conex" and which == "no-conv":
            raise UsageError("no-conv needs a ConEx checkpoint")
        base = _config_from_metadata(checkpoint.metadata)
        triples, oov = _split(ds, args.split)
        filt = _filter(ds)
        full_runs.append(evaluate(checkpoint.params, triples, filt, oov, _policy(args))[0])
        if which == "no-conv":
            ablated_runs.append(ablate_evaluate(checkpoint.params, triples, filt, "no-conv", oov, _policy(args))[0])
        else:
            params, _ = fit(ds, base.ablated(which))
            ablated_runs.append(evaluate(params, triples, filt, oov, _policy(args))[0])
    else:
        base = _train_config(args)
        if which == "no-conv" and base.kind.value != "conex":
            raise UsageError("no-conv needs --model conex")
        ds = _dataset(args)
        triples, oov = _split(ds, args.split)
        filt = _filter(ds)
        for i in range(args.seeds):
            config = dataclasses.replace(base, seed=base.seed + i)
            params, _ = fit(ds, config)
            full_runs.append(evaluate(params, triples, filt, oov, _policy(args))[0])
            if which == "no-conv":
                ablated = ablate_evaluate(params, triples, filt, "no-conv", oov, _policy(args))[0]
            else:
                params, _ = fit(ds, config.ablated(which))
                ablated = evaluate(params, triples, filt, oov, _policy(args))[0]
            ablated_runs.append(ablated)
    print(f"ablation\t{which}")
    print(f"runs\t{len(full_runs)}")
    _report_runs("full", full_runs)
    _report_runs(which, ablated_runs)
    return 0


def cmd_gradcheck(args) -> int:
    result = run_default(args.seed)
    sys.stdout.write(result.report())
    if result.max_error > args.tolerance:
        print(f"error: gradcheck: max relative error {result.max_error:.3e} exceeds {args.tolerance:g}",
              file=sys.stderr)
        return 1
    return 0


# --------------------------------------------------------------------------
# parser


def _add_common(p: argparse.ArgumentParser, dataset_required: bool = False) -> None:
    p.add_argument("--dataset", required=dataset_required, help="directory with train/valid/test.txt")
    p.add_argument("--config", help="file of key=value option lines")
    p.add_argument("--skip-oov", action="store_true",
                   help="drop test triples with out-of-vocabulary names (default: rank them last)")
    p.add_argument("--threads", type=int, default=None, help="BLAS threads (default: library default)")
    p.add_argument("--deterministic", action="store_true", help="single-threaded numerics")


def _add_train_options(p: argparse.ArgumentParser) -> None:
    p.add_argument("--model", choices=["conex", "complex", "distmult"])
    p.add_argument("--d", type=int, help="embedding dimension (default 200)")
    p.add_argument("--c", type=int, help="convolution channels (default 32)")
    p.add_argument("--lr", type=float, help="learning rate (default 0.001)")
    p.add_argument("--batch", type=int, help="batch size in (head, relation) keys (default 1024)")
    p.add_argument("--input-dropout", type=float, help="default 0.4")
    p.add_argument("--feature-dropout", type=float, help="default 0.5")
    p.add_argument("--label-smoothing", type=float, help="default 0.1")
    p.add_argument("--epochs", type=int, help="default 500")
    p.add_argument("--seed", type=int, help="default 1")
    p.add_argument("--optimizer", choices=["adam", "rmsprop"])
    p.add_argument("--merge-train-valid", action="store_true", help="train on train+valid")


def build_parser() -> argparse.ArgumentParser:
    parser = _Parser(prog="conex", description=__doc__.splitlines()[0])
    sub = parser.add_subparsers(dest="command", required=True, parser_class=_Parser)

    p = sub.add_parser("train", help="train a model and write a checkpoint")
    _add_common(p)
    _add_train_options(p)
    p.add_argument("--out", default="model.ckpt", help="checkpoint path")
    p.add_argument("--log", help="training log path (default: <out>.log)")
    p.add_argument("--validate-every", type=int, default=0, metavar="N",
                   help="log validation MRR every N epochs")
    p.set_defaults(func=cmd_train)

    for name, func, helptext in (("eval", cmd_eval, "filtered MRR and Hits@N of a checkpoint"),
                                 ("per-relation", cmd_per_relation, "MRR per base relation")):
        p = sub.add_parser(name, help=helptext)
        _add_common(p)
        p.add_argument("--checkpoint", required=True)
        p.add_argument("--split", choices=["train", "valid", "test"], default="test")
        if name == "eval":
            p.add_argument("--per-relation", action="store_true")
            p.add_argument("--ranks-csv", help="write per-query ranks to this CSV file")
        p.set_defaults(func=func)

    p = sub.add_parser("ensemble", help="evaluate the probability average of several checkpoints")
    _add_common(p)
    p.add_argument("--checkpoint", action="append", required=True, help="repeat for each member")
    p.add_argument("--split", choices=["train", "valid", "test"], default="test")
    p.set_defaults(func=cmd_ensemble)

    p = sub.add_parser("ablate", help="evaluation- or training-time ablations")
    _add_common(p)
    _add_train_options(p)
    p.add_argument("--which", required=True, help=", ".join(ABLATIONS))
    p.add_argument("--checkpoint", help="start from a trained checkpoint instead of training")
    p.add_argument("--seeds", type=int, default=1, help="number of seeds (confidence intervals for n >= 2)")
    p.add_argument("--split", choices=["train", "valid", "test"], default="test")
    p.set_defaults(func=cmd_ablate)

    p = sub.add_parser("gradcheck", help="finite-difference check of all analytic gradients")
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--tolerance", type=float, default=1e-4)
    p.set_defaults(func=cmd_gradcheck)
    return parser


def _error_code(exc: BaseException) -> str:
    if isinstance(exc, (UsageError, ckpt.CheckpointError)):
        return exc.code
    if isinstance(exc, FileNotFoundError):
        return "missing-file"
    if isinstance(exc, ParseError):
        return "parse"
    return type(exc).__name__


def main(argv: Sequence[str] | None = None) -> int:
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
        threads = 1 if getattr(args, "deterministic", False) else getattr(args, "threads", None)
        limits = threadpool_limits(threads) if threads else nullcontext()
        with limits:
            return args.func(args)
    except Exception as exc:  # noqa: BLE001  (one-line report for every failure)
        message = str(exc).replace("\n", " ")
        if isinstance(exc, ckpt.CheckpointError):
            message = message.split(": ", 1)[-1]
        print(f"error: {_error_code(exc)}: {message}", file=sys.stderr)
        return 2 if isinstance(exc, UsageError) else 1


if __name__ == "__main__":
    sys.exit(main())
