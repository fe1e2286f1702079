#!/usr/bin/env python3
"""Writes the 1797-image UCI handwritten digits set (as shipped with
scikit-learn) as MNIST-style IDX files: each 8x8 image is resized to 20x20
and centred in a 28x28 frame, pixel range 0..255."""
import argparse
import pathlib
import struct

import numpy as np
from PIL import Image
from sklearn.datasets import load_digits


def main():
    ap = argparse.ArgumentParser()
    ap.add_argument("--out", default="data/digits")
    args = ap.parse_args()
    out = pathlib.Path(args.out)
    out.mkdir(parents=True, exist_ok=True)

    digits = load_digits()
    images = np.zeros((len(digits.images), 28, 28), dtype=np.uint8)
    for i, img in enumerate(digits.images):
        small = Image.fromarray((img * (255.0 / 16.0)).astype(np.uint8))
        images[i, 4:24, 4:24] = np.asarray(small.resize((20, 20), Image.BILINEAR))
    labels = digits.target.astype(np.uint8)

    with open(out / "digits-images-idx3-ubyte", "wb") as f:
        f.write(struct.pack(">IIII", 0x803, len(images), 28, 28))
        f.write(images.tobytes())
    with open(out / "digits-labels-idx1-ubyte", "wb") as f:
        f.write(struct.pack(">II", 0x801, len(labels)))
        f.write(labels.tobytes())
    print(f"wrote {len(images)} images to {out}")


if __name__ == "__main__":
    main()
