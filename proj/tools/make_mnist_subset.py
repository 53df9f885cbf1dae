#!/usr/bin/env python3
# SPDX-License-Identifier: Apache-2.0
"""Writes the bundled 5k MNIST subset (shipped inside the mlxtend wheel) as
IDX files: 4000 train / 1000 test, shuffled with a fixed seed.

    pip download mlxtend --no-deps -d /tmp/mlx
    python3 tools/make_mnist_subset.py /tmp/mlx/mlxtend-*.whl data/mnist5k
"""
import gzip
import io
import struct
import sys
import zipfile
from pathlib import Path

import numpy as np


def write_idx_images(path, images):
    with open(path, "wb") as f:
        f.write(struct.pack(">IIII", 0x00000803, images.shape[0], 28, 28))
        f.write(images.astype(np.uint8).tobytes())


def write_idx_labels(path, labels):
    with open(path, "wb") as f:
        f.write(struct.pack(">II", 0x00000801, labels.shape[0]))
        f.write(labels.astype(np.uint8).tobytes())


def main():
    wheel, out = sys.argv[1], Path(sys.argv[2])
    out.mkdir(parents=True, exist_ok=True)
    raw = zipfile.ZipFile(wheel).read("mlxtend/data/data/mnist_5k.csv.gz")
    table = np.loadtxt(io.StringIO(gzip.decompress(raw).decode()), delimiter=",")
    images = table[:, :-1].reshape(-1, 28, 28)
    labels = table[:, -1]
    order = np.random.RandomState(20200101).permutation(len(labels))
    images, labels = images[order], labels[order]
    write_idx_images(out / "train-images-idx3-ubyte", images[:4000])
    write_idx_labels(out / "train-labels-idx1-ubyte", labels[:4000])
    write_idx_images(out / "t10k-images-idx3-ubyte", images[4000:])
    write_idx_labels(out / "t10k-labels-idx1-ubyte", labels[4000:])


if __name__ == "__main__":
    main()
