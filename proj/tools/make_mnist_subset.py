#!/usr/bin/env python3
"""Build the bundled MNIST subset (IDX files) from the digit JSON shipped in
the `mnist` npm package (https://github.com/cazala/mnist).

    npm pack mnist && tar xzf mnist-*.tgz
    python3 tools/make_mnist_subset.py package/src/digits data/mnist

Train split: the first 200 digits of every class, test split: the next 100.
Both splits are interleaved with a fixed-seed shuffle.
"""
import json
import random
import struct
import sys
from pathlib import Path

SIDE = 28
TRAIN_PER_CLASS = 200
TEST_PER_CLASS = 100


def write_images(path, images):
    with open(path, "wb") as f:
        f.write(struct.pack(">IIII", 0x00000803, len(images), SIDE, SIDE))
        for img in images:
            f.write(bytes(img))


def write_labels(path, labels):
    with open(path, "wb") as f:
        f.write(struct.pack(">II", 0x00000801, len(labels)))
        f.write(bytes(labels))


def main():
    src, dst = Path(sys.argv[1]), Path(sys.argv[2])
    dst.mkdir(parents=True, exist_ok=True)
    train, test = [], []
    for digit in range(10):
        raw = json.loads((src / f"{digit}.json").read_text())["data"]
        n = len(raw) // (SIDE * SIDE)
        samples = [
            [min(255, max(0, round(v * 255))) for v in raw[k * SIDE * SIDE:(k + 1) * SIDE * SIDE]]
            for k in range(n)
        ]
        train += [(s, digit) for s in samples[:TRAIN_PER_CLASS]]
        test += [(s, digit) for s in samples[TRAIN_PER_CLASS:TRAIN_PER_CLASS + TEST_PER_CLASS]]
    rng = random.Random(20180301)
    rng.shuffle(train)
    rng.shuffle(test)
    for name, split in (("train", train), ("test", test)):
        write_images(dst / f"{name}-images-idx3-ubyte", [s for s, _ in split])
        write_labels(dst / f"{name}-labels-idx1-ubyte", [l for _, l in split])
        print(f"{name}: {len(split)} images")


if __name__ == "__main__":
    main()
