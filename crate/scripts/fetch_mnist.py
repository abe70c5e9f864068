#!/usr/bin/env python3
"""Build MNIST IDX files from the `mnist` npm package.

The npm package ships 10 000 MNIST digits as JSON arrays of pixel intensities
rounded to three decimals (p / 255). Every stored value maps back to a unique
byte via round(v * 255), so the IDX files written here hold the original
pixels. Records are shuffled with a fixed seed so that any prefix covers all
ten classes.

Usage: scripts/fetch_mnist.py [OUT_DIR]   (default: data/mnist)
"""

import json
import pathlib
import random
import struct
import subprocess
import sys
import tarfile
import tempfile

SEED = 0


def main() -> int:
    out = pathlib.Path(sys.argv[1] if len(sys.argv) > 1 else "data/mnist")
    out.mkdir(parents=True, exist_ok=True)
    with tempfile.TemporaryDirectory() as tmp:
        subprocess.run(["npm", "pack", "mnist@1.1.0"], cwd=tmp, check=True,
                       stdout=subprocess.DEVNULL)
        tgz = next(pathlib.Path(tmp).glob("mnist-*.tgz"))
        with tarfile.open(tgz) as tar:
            tar.extractall(tmp)
        records = []
        for digit in range(10):
            path = pathlib.Path(tmp) / "package" / "src" / "digits" / f"{digit}.json"
            data = json.loads(path.read_text())["data"]
            assert len(data) % 784 == 0
            for k in range(len(data) // 784):
                pixels = bytes(round(v * 255) for v in data[784 * k: 784 * (k + 1)])
                records.append((pixels, digit))
    random.Random(SEED).shuffle(records)

    n = len(records)
    with open(out / "train-images-idx3-ubyte", "wb") as f:
        f.write(struct.pack(">IIII", 2051, n, 28, 28))
        for pixels, _ in records:
            f.write(pixels)
    with open(out / "train-labels-idx1-ubyte", "wb") as f:
        f.write(struct.pack(">II", 2049, n))
        f.write(bytes(label for _, label in records))
    print(f"wrote {n} records to {out}")
    return 0


if __name__ == "__main__":
    sys.exit(main())
