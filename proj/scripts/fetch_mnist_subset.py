#!/usr/bin/env python3
"""Builds a desk-scale MNIST subset in standard IDX format.

Pulls the `mnist` npm package (MIT licensed), which bundles 10,000 real MNIST
digits as JSON arrays of pixel intensities rounded to three decimals. Rounding
a byte b to round(b/255, 3) is injective, so round(v*255) recovers the exact
original pixel bytes. The digits are shuffled with a fixed seed and split
9000/1000 into train/test IDX files (gzip), using the official file names so
tools can point --data-dir at the output directory.

If you have the official 60k/10k MNIST files, use those instead; this subset
exists so the test suite can run in environments without them.

Usage: fetch_mnist_subset.py [out_dir]   (default: <repo>/data/mnist)
"""

import gzip
import json
import pathlib
import random
import shutil
import struct
import subprocess
import sys
import tarfile
import tempfile

PACKAGE = "mnist@1.1.0"
SPLIT_SEED = 1746
TRAIN_COUNT = 9000


def fetch_package(workdir: pathlib.Path) -> pathlib.Path:
    subprocess.run(
        ["npm", "pack", PACKAGE, "--silent"],
        cwd=workdir,
        check=True,
        stdout=subprocess.DEVNULL,
    )
    tarballs = list(workdir.glob("mnist-*.tgz"))
    if len(tarballs) != 1:
        raise RuntimeError(f"expected one tarball, found {tarballs}")
    with tarfile.open(tarballs[0]) as tar:
        tar.extractall(workdir)
    return workdir / "package" / "src" / "digits"


def load_digits(digits_dir: pathlib.Path):
    samples = []
    for label in range(10):
        values = json.loads((digits_dir / f"{label}.json").read_text())["data"]
        if len(values) % 784 != 0:
            raise RuntimeError(f"digit file {label}.json is not a multiple of 784 values")
        for start in range(0, len(values), 784):
            pixels = bytes(round(v * 255) for v in values[start : start + 784])
            samples.append((pixels, label))
    return samples


def write_idx(out_dir: pathlib.Path, stem: str, samples) -> None:
    images = gzip.compress(
        struct.pack(">IIII", 2051, len(samples), 28, 28)
        + b"".join(pixels for pixels, _ in samples)
    )
    labels = gzip.compress(
        struct.pack(">II", 2049, len(samples)) + bytes(label for _, label in samples)
    )
    (out_dir / f"{stem}-images-idx3-ubyte.gz").write_bytes(images)
    (out_dir / f"{stem}-labels-idx1-ubyte.gz").write_bytes(labels)


def main() -> None:
    repo_root = pathlib.Path(__file__).resolve().parent.parent
    out_dir = pathlib.Path(sys.argv[1]) if len(sys.argv) > 1 else repo_root / "data" / "mnist"
    out_dir.mkdir(parents=True, exist_ok=True)

    tmp = pathlib.Path(tempfile.mkdtemp(prefix="mnist_npm_"))
    try:
        samples = load_digits(fetch_package(tmp))
    finally:
        shutil.rmtree(tmp, ignore_errors=True)

    if len(samples) != 10000:
        raise RuntimeError(f"expected 10000 digits, got {len(samples)}")
    random.Random(SPLIT_SEED).shuffle(samples)

    write_idx(out_dir, "train", samples[:TRAIN_COUNT])
    write_idx(out_dir, "t10k", samples[TRAIN_COUNT:])

    histogram = [0] * 10
    for _, label in samples[TRAIN_COUNT:]:
        histogram[label] += 1
    print(f"wrote {TRAIN_COUNT} train / {len(samples) - TRAIN_COUNT} test images to {out_dir}")
    print(f"test class histogram: {histogram}")


if __name__ == "__main__":
    main()
