#!/usr/bin/env python3
"""Reproduce the accuracy-comparison experiment from cached data directories.

Trains the four baselines on MNIST and Fashion-MNIST and evaluates each on
its own test set, plus the fair (deduplicated) Fashion test set when one has
been emitted. Writes comparison.md/.json next to --out.
"""

import argparse
import sys
import time
from pathlib import Path

sys.path.insert(0, str(Path(__file__).resolve().parents[1] / "src"))

from fairset.bench import BenchConfig, ComparisonTable, compare, train_baseline
from fairset.idx import load_image_set
from fairset.store import ingest


def main() -> int:
    ap = argparse.ArgumentParser(description=__doc__)
    ap.add_argument("--fashion-dir", default="data/fashion-mnist")
    ap.add_argument("--mnist-dir", default="data/mnist")
    ap.add_argument("--fair-dir", default=None,
                    help="directory holding fair-t10k-* files (optional)")
    ap.add_argument("--models", default="sgd-linear,perceptron,decision-tree,random-forest")
    ap.add_argument("--seed", type=int, default=10)
    ap.add_argument("--out", default="comparison")
    args = ap.parse_args()

    kinds = args.models.split(",")
    cfg = BenchConfig(seed=args.seed)
    datasets = [
        ("mnist", ingest(args.mnist_dir, name="mnist")),
        ("fashion-mnist", ingest(args.fashion_dir, name="fashion-mnist")),
    ]

    rows = {k: {} for k in kinds}
    columns = []
    for name, bundle in datasets:
        sets = [(name, bundle.test)]
        if name == "fashion-mnist" and args.fair_dir:
            fair = load_image_set(
                Path(args.fair_dir) / "fair-t10k-images-idx3-ubyte",
                Path(args.fair_dir) / "fair-t10k-labels-idx1-ubyte",
            )
            sets.append(("fair-fashion-mnist", fair))
        models = {}
        for kind in kinds:
            t0 = time.perf_counter()
            models[kind] = train_baseline(kind, bundle.train, cfg)
            print(f"trained {kind} on {name} in {time.perf_counter() - t0:.0f}s")
        table = compare(models, sets)
        for kind in kinds:
            rows[kind].update(table.rows[kind])
        columns.extend(table.columns)

    table = ComparisonTable(rows=rows, columns=columns,
                            metadata={"seed": args.seed, "hyperparameters": vars(cfg)})
    Path(f"{args.out}.md").write_text(table.to_markdown())
    Path(f"{args.out}.json").write_text(table.to_json())
    print()
    print(table.to_markdown(), end="")
    print(f"\nwritten: {args.out}.md, {args.out}.json")
    return 0


if __name__ == "__main__":
    sys.exit(main())
