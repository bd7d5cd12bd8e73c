#!/usr/bin/env python3
"""Download the canonical MNIST and Fashion-MNIST IDX files.

Defaults to the official hosts; pass --mirror to fetch the same paths from a
proxy (e.g. a GitHub raw mirror) when the originals are unreachable.
"""

import argparse
import sys
import urllib.request
from pathlib import Path

FILES = [
    "train-images-idx3-ubyte.gz",
    "train-labels-idx1-ubyte.gz",
    "t10k-images-idx3-ubyte.gz",
    "t10k-labels-idx1-ubyte.gz",
]

SOURCES = {
    "fashion-mnist": "http://fashion-mnist.s3-website.eu-central-1.amazonaws.com/",
    "mnist": "https://ossci-datasets.s3.amazonaws.com/mnist/",
}


def fetch(url: str, dest: Path) -> None:
    print(f"  {url} -> {dest}")
    with urllib.request.urlopen(url, timeout=60) as r:
        dest.write_bytes(r.read())


def main() -> int:
    ap = argparse.ArgumentParser(description=__doc__)
    ap.add_argument("--dest", default="data", help="target directory (default: data)")
    ap.add_argument("--mirror", default=None,
                    help="base URL to use instead of the official hosts; "
                         "files are fetched from <mirror>/<dataset>/<name>")
    ap.add_argument("--datasets", default="fashion-mnist,mnist")
    args = ap.parse_args()

    dest = Path(args.dest)
    for ds in args.datasets.split(","):
        if ds not in SOURCES:
            print(f"unknown dataset {ds}", file=sys.stderr)
            return 2
        out = dest / ds
        out.mkdir(parents=True, exist_ok=True)
        print(f"{ds}:")
        for name in FILES:
            target = out / name
            if target.exists():
                print(f"  {target} already present, skipping")
                continue
            base = f"{args.mirror.rstrip('/')}/{ds}/" if args.mirror else SOURCES[ds]
            fetch(base + name, target)
    print("done")
    return 0


if __name__ == "__main__":
    sys.exit(main())
