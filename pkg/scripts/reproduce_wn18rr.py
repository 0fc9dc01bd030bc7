"""Full-scale WN18RR run at d=200, c=32 (an overnight job, not part of the test suite).

Trains on train+valid, evaluates on test and compares the filtered MRR with
the reference value 0.481 (tolerance 0.02).

    python scripts/reproduce_wn18rr.py --dataset data/WN18RR --threads 8
"""
import argparse
import time

from threadpoolctl import threadpool_limits

from conex.checkpoint import save_checkpoint
from conex.evaluation import evaluate
from conex.kgdata import add_reciprocals, build_filter_index, load_dataset
from conex.training import TrainConfig, fit

REFERENCE_MRR = 0.481
TOLERANCE = 0.02


def main():
    parser = argparse.ArgumentParser(description=__doc__.splitlines()[0])
    parser.add_argument("--dataset", required=True, help="directory with train/valid/test.txt")
    parser.add_argument("--epochs", type=int, default=500)
    parser.add_argument("--input-dropout", type=float, default=0.4)
    parser.add_argument("--feature-dropout", type=float, default=0.5)
    parser.add_argument("--seed", type=int, default=1)
    parser.add_argument("--threads", type=int, default=None)
    parser.add_argument("--out", default="wn18rr_conex.ckpt")
    args = parser.parse_args()

    ds = load_dataset(args.dataset, merge_train_valid=True)
    print(f"entities {ds.vocab.num_entities}, relations {ds.vocab.num_relations}, "
          f"train {len(ds.train)} (train+valid), test {len(ds.test)}")
    config = TrainConfig(kind="conex", d=200, c=32, lr=0.001, batch_size=1024,
                         input_dropout=args.input_dropout, feature_dropout=args.feature_dropout,
                         label_smoothing=0.1, epochs=args.epochs, seed=args.seed)
    start = time.perf_counter()

    def progress(entry):
        print(f"epoch {entry.epoch}\tloss {entry.loss:.6f}\t{time.perf_counter() - start:.0f}s", flush=True)

    with threadpool_limits(args.threads):
        params, _ = fit(ds, config, on_epoch=progress)
        save_checkpoint(args.out, params, {"seed": args.seed, "epoch": args.epochs,
                                           "vocab_hash": ds.vocab.digest(), "merge_train_valid": 1})
        v = ds.vocab
        filt = build_filter_index(*(add_reciprocals(s, v) for s in (ds.train, ds.valid, ds.test)))
        metrics, _ = evaluate(params, ds.test, filt, ds.rejected["test"])
        skipped, _ = evaluate(params, ds.test, filt, ds.rejected["test"], "skip")
    print(metrics.report(), end="")
    print(f"mrr_without_oov\t{skipped.mrr}")
    ok = abs(metrics.mrr - REFERENCE_MRR) <= TOLERANCE
    print(f"{'PASS' if ok else 'FAIL'}: test MRR {metrics.mrr:.3f} vs {REFERENCE_MRR} +- {TOLERANCE}")


if __name__ == "__main__":
    main()
