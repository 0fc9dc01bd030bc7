"""Write the synthetic pattern KG as train/valid/test.txt for use with the CLI.

    python scripts/make_pattern_kg.py data/patterns
    conex train --dataset data/patterns --d 16 --c 8 --epochs 300 --lr 0.003 --batch 128
"""
import argparse
from pathlib import Path

from conex.synthetic import PatternKGConfig, pattern_kg


def main():
    parser = argparse.ArgumentParser(description=__doc__.splitlines()[0])
    parser.add_argument("out", type=Path)
    parser.add_argument("--entities", type=int, default=60)
    parser.add_argument("--group-size", type=int, default=10)
    parser.add_argument("--holdout", type=float, default=0.05)
    parser.add_argument("--seed", type=int, default=0)
    args = parser.parse_args()

    ds = pattern_kg(PatternKGConfig(args.entities, args.group_size, args.holdout, args.seed))
    args.out.mkdir(parents=True, exist_ok=True)
    for name in ("train", "valid", "test"):
        with open(args.out / f"{name}.txt", "w", encoding="utf-8") as f:
            for h, r, t in getattr(ds, name):
                f.write(f"{ds.vocab.entities[h]}\t{ds.vocab.relations[r]}\t{ds.vocab.entities[t]}\n")
        print(f"{name}\t{len(getattr(ds, name))}")


if __name__ == "__main__":
    main()
