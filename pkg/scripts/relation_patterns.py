"""Train ConEx, ComplEx and DistMult on the synthetic pattern KG.

Prints test MRR, per-relation MRR and (for ConEx) the MRR with the gate
removed, for each seed, then the mean over seeds.

    python scripts/relation_patterns.py --seeds 1 2 3
"""
import argparse
import time

import numpy as np
from threadpoolctl import threadpool_limits

from conex.evaluation import ablate_evaluate, evaluate, per_relation_mrr
from conex.kgdata import add_reciprocals, build_filter_index
from conex.synthetic import PATTERN_TRAINING, PatternKGConfig, pattern_kg
from conex.training import TrainConfig, fit


def main():
    parser = argparse.ArgumentParser(description=__doc__.splitlines()[0])
    parser.add_argument("--models", nargs="+", default=["conex", "complex", "distmult"])
    parser.add_argument("--seeds", nargs="+", type=int, default=[1, 2, 3])
    parser.add_argument("--kg-seed", type=int, default=0)
    parser.add_argument("--epochs", type=int, default=PATTERN_TRAINING["epochs"])
    parser.add_argument("--lr", type=float, default=PATTERN_TRAINING["lr"])
    parser.add_argument("--batch", type=int, default=PATTERN_TRAINING["batch_size"])
    args = parser.parse_args()

    ds = pattern_kg(PatternKGConfig(seed=args.kg_seed))
    v = ds.vocab
    filt = build_filter_index(*(add_reciprocals(s, v) for s in (ds.train, ds.valid, ds.test)))
    print(f"# {v.num_entities} entities, train {len(ds.train)}, valid {len(ds.valid)}, test {len(ds.test)}")
    print("model\tseed\tmrr\t" + "\t".join(v.relations) + "\tno_conv_mrr\tseconds")
    settings = dict(PATTERN_TRAINING, epochs=args.epochs, lr=args.lr, batch_size=args.batch)
    with threadpool_limits(1):
        for model in args.models:
            mrrs = []
            for seed in args.seeds:
                start = time.perf_counter()
                params, _ = fit(ds, TrainConfig(kind=model, seed=seed, **settings))
                metrics, records = evaluate(params, ds.test, filt)
                per_rel = per_relation_mrr(records, v)
                no_conv = ablate_evaluate(params, ds.test, filt)[0].mrr if model == "conex" else float("nan")
                mrrs.append(metrics.mrr)
                cells = [f"{per_rel.get(r, float('nan')):.3f}" for r in v.relations]
                print(f"{model}\t{seed}\t{metrics.mrr:.3f}\t" + "\t".join(cells)
                      + f"\t{no_conv:.3f}\t{time.perf_counter() - start:.1f}", flush=True)
            print(f"{model}\tmean\t{np.mean(mrrs):.3f}")


if __name__ == "__main__":
    main()
