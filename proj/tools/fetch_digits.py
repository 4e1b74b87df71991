#!/usr/bin/env python3
"""Export the UCI optical digits (8x8, 1797 images, bundled with scikit-learn)
to the mat CSV dataset format in the dataset cache directory.

The cache directory is $MAT_DATA_CACHE, falling back to ~/.cache/mat. The
written file is checked against a pinned SHA-256 so every machine trains on
byte-identical data.
"""
import argparse
import hashlib
import os
import sys
from pathlib import Path

PINNED_SHA256 = "299c48558f6cc25b2c0cd0d86bc57cc1894c811adf50fc8eaaa8fd93da58550f"


def cache_dir() -> Path:
    env = os.environ.get("MAT_DATA_CACHE")
    if env:
        return Path(env)
    return Path.home() / ".cache" / "mat"


def render() -> bytes:
    from sklearn.datasets import load_digits

    d = load_digits()
    lines = ["# mat dataset v1", "name=digits", "shape=1x8x8", "classes=10"]
    for x, y in zip(d.data, d.target):
        lines.append(",".join([str(int(y))] + ["%.9g" % (v / 16.0) for v in x]))
    return ("\n".join(lines) + "\n").encode()


def main() -> int:
    ap = argparse.ArgumentParser(description=__doc__.splitlines()[0])
    ap.add_argument("--out", type=Path, default=None, help="target file (default: <cache>/digits.csv)")
    args = ap.parse_args()
    out = args.out or cache_dir() / "digits.csv"
    data = render()
    digest = hashlib.sha256(data).hexdigest()
    if digest != PINNED_SHA256:
        print(f"checksum mismatch: got {digest}, pinned {PINNED_SHA256}", file=sys.stderr)
        return 1
    out.parent.mkdir(parents=True, exist_ok=True)
    out.write_bytes(data)
    print(f"wrote {out} ({digest})")
    return 0


if __name__ == "__main__":
    sys.exit(main())
