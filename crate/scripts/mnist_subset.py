#!/usr/bin/env python3
"""Convert the digit samples bundled in the npm `mnist` package into IDX files.

The package ships 10000 MNIST digits as per-class JSON arrays of pixel
intensities in [0, 1] (three decimals). This writes them as gzipped IDX
files (images magic 0x00000803, labels magic 0x00000801) with a fixed
shuffle so that classes are interleaved.

usage: npm pack mnist && tar xzf mnist-*.tgz
       python3 scripts/mnist_subset.py package/src/digits data/mnist
"""
import gzip
import json
import random
import struct
import sys
from pathlib import Path


def main(src: Path, dst: Path) -> None:
    samples = []
    for digit in range(10):
        data = json.loads((src / f"{digit}.json").read_text())["data"]
        assert len(data) % 784 == 0
        for k in range(len(data) // 784):
            pixels = data[k * 784:(k + 1) * 784]
            raw = bytes(min(255, max(0, round(v * 255))) for v in pixels)
            samples.append((raw, digit))
    random.Random(20240601).shuffle(samples)

    dst.mkdir(parents=True, exist_ok=True)
    n = len(samples)
    with gzip.GzipFile(dst / "subset-images-idx3-ubyte.gz", "wb", mtime=0) as f:
        f.write(struct.pack(">IIII", 0x00000803, n, 28, 28))
        for raw, _ in samples:
            f.write(raw)
    with gzip.GzipFile(dst / "subset-labels-idx1-ubyte.gz", "wb", mtime=0) as f:
        f.write(struct.pack(">II", 0x00000801, n))
        f.write(bytes(label for _, label in samples))
    print(f"wrote {n} samples to {dst}")


if __name__ == "__main__":
    main(Path(sys.argv[1]), Path(sys.argv[2]))
