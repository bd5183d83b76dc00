#!/usr/bin/env python3
"""Build IDX-format MNIST files from the digits bundled with the `mnist` npm package.

The npm package ships 10000 MNIST digits as per-class JSON arrays of pixel
intensities in [0, 1] rounded to three decimals. This script restores the byte
values, splits every fifth sample (in digit-major order) into the test split
and writes gzip-compressed IDX files:

    data/mnist/train-images-idx3-ubyte.gz   (8000 x 28 x 28)
    data/mnist/train-labels-idx1-ubyte.gz
    data/mnist/t10k-images-idx3-ubyte.gz    (2000 x 28 x 28)
    data/mnist/t10k-labels-idx1-ubyte.gz

Usage: scripts/mnist_from_npm.py <path to unpacked npm package> [out dir]
(`npm pack mnist && tar xzf mnist-*.tgz` yields ./package).
"""
import gzip
import json
import struct
import sys
from pathlib import Path


def write_images(path, images):
    with gzip.GzipFile(path, "wb", mtime=0) as f:
        f.write(struct.pack(">IIII", 0x00000803, len(images), 28, 28))
        for img in images:
            f.write(bytes(img))


def write_labels(path, labels):
    with gzip.GzipFile(path, "wb", mtime=0) as f:
        f.write(struct.pack(">II", 0x00000801, len(labels)))
        f.write(bytes(labels))


def main():
    pkg = Path(sys.argv[1])
    out = Path(sys.argv[2]) if len(sys.argv) > 2 else Path(__file__).resolve().parent.parent / "data" / "mnist"
    out.mkdir(parents=True, exist_ok=True)
    samples = []
    for digit in range(10):
        raw = json.loads((pkg / "src" / "digits" / f"{digit}.json").read_text())["data"]
        assert len(raw) % 784 == 0
        for k in range(len(raw) // 784):
            px = [min(255, max(0, round(v * 255))) for v in raw[k * 784:(k + 1) * 784]]
            samples.append((px, digit))
    train = [s for i, s in enumerate(samples) if i % 5 != 4]
    test = [s for i, s in enumerate(samples) if i % 5 == 4]
    write_images(out / "train-images-idx3-ubyte.gz", [s[0] for s in train])
    write_labels(out / "train-labels-idx1-ubyte.gz", [s[1] for s in train])
    write_images(out / "t10k-images-idx3-ubyte.gz", [s[0] for s in test])
    write_labels(out / "t10k-labels-idx1-ubyte.gz", [s[1] for s in test])
    print(f"train {len(train)}, test {len(test)} -> {out}")


if __name__ == "__main__":
    main()
