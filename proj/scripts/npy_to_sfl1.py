#!/usr/bin/env python3
"""Pack paired image/text embeddings (.npy, shape n x d) into an SFL1 store."""

import argparse
import struct
import sys

import numpy as np

FNV_OFFSET = 0xCBF29CE484222325
FNV_PRIME = 0x100000001B3
MASK = 0xFFFFFFFFFFFFFFFF


def fnv1a64(data: bytes) -> int:
    h = FNV_OFFSET
    for b in data:
        h = ((h ^ b) * FNV_PRIME) & MASK
    return h


def main() -> int:
    ap = argparse.ArgumentParser(description=__doc__)
    ap.add_argument("image", help="n x d image embeddings (.npy)")
    ap.add_argument("text", help="n x d text embeddings (.npy), row i paired with image row i")
    ap.add_argument("out", help="output .sfl path")
    args = ap.parse_args()

    image = np.load(args.image).astype(np.float32)
    text = np.load(args.text).astype(np.float32)
    if image.ndim != 2 or image.shape != text.shape:
        print(f"shape mismatch: image {image.shape}, text {text.shape}", file=sys.stderr)
        return 2
    n, d = image.shape
    # The loader rejects rows off the unit sphere by more than 1e-2.
    image /= np.linalg.norm(image, axis=1, keepdims=True)
    text /= np.linalg.norm(text, axis=1, keepdims=True)

    body = b"SFL1" + struct.pack("<IIQ", 1, d, n)
    body += np.ascontiguousarray(image, dtype="<f4").tobytes()
    body += np.ascontiguousarray(text, dtype="<f4").tobytes()
    with open(args.out, "wb") as f:
        f.write(body)
        f.write(struct.pack("<Q", fnv1a64(body)))
    return 0


if __name__ == "__main__":
    sys.exit(main())
