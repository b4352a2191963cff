#!/usr/bin/env python3
"""Writes a 10k-image MNIST subset as IDX files.

The images come from the `mnist` npm package (src/digits/<d>.json, each a flat
list of intensities in [0, 1]). Bytes are round(v * 255). Images are shuffled
with a fixed seed and split 8000 / 2000 into train and test files.
"""

import argparse
import json
import pathlib
import random
import struct
import subprocess
import tempfile


def fetch_package(workdir: pathlib.Path) -> pathlib.Path:
    subprocess.run(["npm", "pack", "mnist@1.1.0", "--silent"], cwd=workdir, check=True,
                   stdout=subprocess.DEVNULL)
    tarball = next(workdir.glob("mnist-*.tgz"))
    subprocess.run(["tar", "xzf", tarball.name], cwd=workdir, check=True)
    return workdir / "package"


def write_idx(path: pathlib.Path, images, labels_path: pathlib.Path, labels) -> None:
    with open(path, "wb") as f:
        f.write(struct.pack(">IIII", 0x803, len(images), 28, 28))
        for img in images:
            f.write(bytes(img))
    with open(labels_path, "wb") as f:
        f.write(struct.pack(">II", 0x801, len(labels)))
        f.write(bytes(labels))


def main() -> None:
    parser = argparse.ArgumentParser(description=__doc__)
    parser.add_argument("--package", type=pathlib.Path, help="unpacked npm package directory")
    parser.add_argument("--out", type=pathlib.Path, default=pathlib.Path("data/mnist"))
    parser.add_argument("--train", type=int, default=8000)
    parser.add_argument("--seed", type=int, default=20240)
    args = parser.parse_args()

    with tempfile.TemporaryDirectory() as tmp:
        package = args.package or fetch_package(pathlib.Path(tmp))
        samples = []
        for digit in range(10):
            data = json.loads((package / "src" / "digits" / f"{digit}.json").read_text())["data"]
            for i in range(len(data) // 784):
                pixels = [max(0, min(255, round(v * 255))) for v in data[i * 784:(i + 1) * 784]]
                samples.append((pixels, digit))

    random.Random(args.seed).shuffle(samples)
    train, test = samples[:args.train], samples[args.train:]
    args.out.mkdir(parents=True, exist_ok=True)
    write_idx(args.out / "train-images-idx3-ubyte", [s[0] for s in train],
              args.out / "train-labels-idx1-ubyte", [s[1] for s in train])
    write_idx(args.out / "t10k-images-idx3-ubyte", [s[0] for s in test],
              args.out / "t10k-labels-idx1-ubyte", [s[1] for s in test])
    print(f"wrote {len(train)} train and {len(test)} test images to {args.out}")


if __name__ == "__main__":
    main()
