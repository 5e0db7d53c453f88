#!/usr/bin/env python3
"""Convert the per-digit JSON files shipped by the `mnist` npm package to IDX.

Each input file `<d>.json` holds {"data": [...]} with 784 floats in [0, 1]
per image. Output: `images-idx3-ubyte` and `labels-idx1-ubyte` in OUT_DIR,
digits in label order.

    npm pack mnist@1.1.0 && tar xzf mnist-1.1.0.tgz
    python3 scripts/mnist_json_to_idx.py package/src/digits data/mnist
"""
import argparse
import json
import struct
from pathlib import Path


def main():
    ap = argparse.ArgumentParser()
    ap.add_argument("digits_dir", type=Path)
    ap.add_argument("out_dir", type=Path)
    args = ap.parse_args()

    pixels = bytearray()
    labels = bytearray()
    for d in range(10):
        data = json.loads((args.digits_dir / f"{d}.json").read_text())["data"]
        if len(data) % 784:
            raise SystemExit(f"{d}.json: {len(data)} values is not a multiple of 784")
        pixels.extend(max(0, min(255, round(v * 255))) for v in data)
        labels.extend([d] * (len(data) // 784))

    n = len(labels)
    args.out_dir.mkdir(parents=True, exist_ok=True)
    (args.out_dir / "images-idx3-ubyte").write_bytes(
        struct.pack(">IIII", 0x803, n, 28, 28) + bytes(pixels)
    )
    (args.out_dir / "labels-idx1-ubyte").write_bytes(struct.pack(">II", 0x801, n) + bytes(labels))
    print(f"wrote {n} images to {args.out_dir}")


if __name__ == "__main__":
    main()
