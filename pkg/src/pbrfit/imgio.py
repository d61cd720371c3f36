"""PFM and PNG image io.

PFM: 'PF' color maps, little-endian float32, scanlines bottom-to-top per the
format convention. PNG: 8-bit after clamping to [0,1] and gamma 1/2.2 (fixed,
no tone mapping, so outputs stay byte-reproducible).
"""

from __future__ import annotations

import numpy as np
from PIL import Image


def write_pfm(path, img):
    img = np.asarray(img, dtype=np.float32)
    if img.ndim != 3 or img.shape[2] != 3:
        raise ValueError("write_pfm expects an HxWx3 array")
    h, w = img.shape[:2]
    with open(path, "wb") as f:
        f.write(b"PF\n")
        f.write(f"{w} {h}\n".encode("ascii"))
        f.write(b"-1.0\n")  # negative scale: little-endian
        f.write(img[::-1].astype("<f4").tobytes())


def read_pfm(path):
    with open(path, "rb") as f:
        magic = f.readline().strip()
        if magic != b"PF":
            raise ValueError(f"not a color PFM file: {magic!r}")
        w, h = (int(tok) for tok in f.readline().split())
        scale = float(f.readline())
        data = np.frombuffer(f.read(w * h * 3 * 4), dtype="<f4" if scale < 0 else ">f4")
    img = data.reshape(h, w, 3)[::-1]
    return np.ascontiguousarray(img, dtype=np.float64)


def write_png(path, img, gamma=1.0 / 2.2):
    """Linear HxWx3 radiance -> clamped, gamma-encoded 8-bit PNG."""
    img = np.clip(np.asarray(img, dtype=np.float64), 0.0, 1.0) ** gamma
    Image.fromarray((img * 255.0 + 0.5).astype(np.uint8), mode="RGB").save(path)


def write_gray_png(path, img):
    img = np.clip(np.asarray(img, dtype=np.float64), 0.0, 1.0)
    Image.fromarray((img * 255.0 + 0.5).astype(np.uint8), mode="L").save(path)
