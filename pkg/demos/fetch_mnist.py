#!/usr/bin/env python3
"""Download and unpack the four dataset files into ./data (or argv[1]).

The library itself never touches the network; this helper exists so the
data-dependent tests and demos can run.  Tries a few well-known mirrors
for each file and verifies the IDX header after unpacking.

Usage: python demos/fetch_mnist.py [target-dir] [--fashion]
"""

import gzip
import sys
import urllib.request
from pathlib import Path

FILES = [
    "train-images-idx3-ubyte",
    "train-labels-idx1-ubyte",
    "t10k-images-idx3-ubyte",
    "t10k-labels-idx1-ubyte",
]

MNIST_MIRRORS = [
    "https://ossci-datasets.s3.amazonaws.com/mnist/{}.gz",
    "https://storage.googleapis.com/cvdf-datasets/mnist/{}.gz",
    "https://raw.githubusercontent.com/fgnt/mnist/master/{}.gz",
]
FASHION_MIRRORS = [
    "http://fashion-mnist.s3-website.eu-central-1.amazonaws.com/{}.gz",
]


def fetch(name: str, mirrors, target: Path) -> None:
    dest = target / name
    if dest.exists():
        print(f"{name}: already present")
        return
    last_error = None
    for mirror in mirrors:
        url = mirror.format(name)
        try:
            print(f"{name}: downloading {url}")
            with urllib.request.urlopen(url, timeout=60) as resp:
                blob = gzip.decompress(resp.read())
            if blob[:2] != b"\x00\x00":
                raise ValueError("not an IDX stream after decompression")
            dest.write_bytes(blob)
            print(f"{name}: {len(blob):,} bytes")
            return
        except Exception as exc:  # try the next mirror
            last_error = exc
            print(f"{name}: {exc}")
    raise SystemExit(f"could not fetch {name}: {last_error}")


def main():
    args = [a for a in sys.argv[1:] if not a.startswith("--")]
    fashion = "--fashion" in sys.argv
    target = Path(args[0]) if args else Path("data")
    if fashion:
        target = target / "fashion-mnist"
    target.mkdir(parents=True, exist_ok=True)
    mirrors = FASHION_MIRRORS if fashion else MNIST_MIRRORS
    for name in FILES:
        fetch(name, mirrors, target)
    print(f"done; files in {target}/")


if __name__ == "__main__":
    main()
