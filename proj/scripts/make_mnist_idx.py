#!/usr/bin/env python3
"""Build gzipped IDX files from the 10k-digit MNIST sample shipped in the npm
`mnist` package (https://www.npmjs.com/package/mnist).

Usage:
    npm pack mnist && tar xzf mnist-*.tgz
    python3 scripts/make_mnist_idx.py package/src/digits data/mnist

The npm package stores pixel intensities in [0, 1] rounded to three decimals;
they are mapped back to bytes with round(v * 255). Samples are interleaved with
a fixed-seed shuffle so the file is not sorted by label.
"""
import gzip
import json
import random
import struct
import sys
from pathlib import Path


def main() -> int:
    if len(sys.argv) != 3:
        print(__doc__)
        return 1
    src, dst = Path(sys.argv[1]), Path(sys.argv[2])
    dst.mkdir(parents=True, exist_ok=True)

    samples = []
    for digit in range(10):
        flat = json.loads((src / f"{digit}.json").read_text())["data"]
        n = len(flat) // 784
        for i in range(n):
            pixels = bytes(min(255, max(0, round(v * 255))) for v in flat[i * 784:(i + 1) * 784])
            samples.append((pixels, digit))

    random.Random(20240517).shuffle(samples)

    with gzip.GzipFile(dst / "images-idx3-ubyte.gz", "wb", mtime=0) as f:
        f.write(struct.pack(">IIII", 0x00000803, len(samples), 28, 28))
        for pixels, _ in samples:
            f.write(pixels)
    with gzip.GzipFile(dst / "labels-idx1-ubyte.gz", "wb", mtime=0) as f:
        f.write(struct.pack(">II", 0x00000801, len(samples)))
        f.write(bytes(label for _, label in samples))
    print(f"wrote {len(samples)} samples to {dst}")
    return 0


if __name__ == "__main__":
    sys.exit(main())
