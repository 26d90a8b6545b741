#!/usr/bin/env python3
"""Build the desk-scale MNIST subset used by the default experiment config.

Source: the `mnist` npm package (10,000 MNIST digits stored as JSON, pixel
values already divided by 255 and rounded to three decimals). Pixels are
mapped back to bytes with round(v * 255), all digits are shuffled with a
fixed seed, and the first 6000 / next 1000 become train / test. Output is
standard IDX (gzipped), readable by any MNIST loader.

Usage:
    npm pack mnist && tar xzf mnist-*.tgz
    python3 scripts/make_mnist_subset.py package/src/digits data/mnist-desk
"""
import gzip
import json
import os
import random
import struct
import sys

N_TRAIN, N_TEST, SEED = 6000, 1000, 20201026


def main(src, out):
    samples = []
    for digit in range(10):
        with open(os.path.join(src, f"{digit}.json")) as fh:
            flat = json.load(fh)["data"]
        assert len(flat) % 784 == 0
        for i in range(0, len(flat), 784):
            pixels = bytes(min(255, max(0, round(v * 255))) for v in flat[i:i + 784])
            samples.append((pixels, digit))
    random.Random(SEED).shuffle(samples)
    os.makedirs(out, exist_ok=True)
    splits = {"train": samples[:N_TRAIN], "t10k": samples[N_TRAIN:N_TRAIN + N_TEST]}
    for name, rows in splits.items():
        with gzip.GzipFile(os.path.join(out, f"{name}-images-idx3-ubyte.gz"), "wb", mtime=0) as fh:
            fh.write(struct.pack(">IIII", 0x803, len(rows), 28, 28))
            for pixels, _ in rows:
                fh.write(pixels)
        with gzip.GzipFile(os.path.join(out, f"{name}-labels-idx1-ubyte.gz"), "wb", mtime=0) as fh:
            fh.write(struct.pack(">II", 0x801, len(rows)))
            fh.write(bytes(label for _, label in rows))


if __name__ == "__main__":
    main(sys.argv[1], sys.argv[2])
