"""8-bit grayscale PGM (P5) reading and writing.

PGM is the interchange format for every image-facing command: single
images, frame stacks (a directory of numbered frames), and masks
(pixel value 0 marks a missing pixel).
"""

from __future__ import annotations

import os
import re

import numpy as np


def write_pgm(path, image) -> None:
    """Write a 2-D array as binary PGM, clamping values into [0, 255]."""
    img = np.asarray(image, dtype=np.float64)
    if img.ndim != 2:
        raise ValueError(f"image must be 2-D, got shape {img.shape}")
    data = np.clip(np.rint(img), 0, 255).astype(np.uint8)
    h, w = data.shape
    with open(path, "wb") as fh:
        fh.write(f"P5\n{w} {h}\n255\n".encode("ascii"))
        fh.write(data.tobytes())


def read_pgm(path) -> np.ndarray:
    """Read a binary PGM into a float64 array of values in [0, 255]."""
    with open(path, "rb") as fh:
        raw = fh.read()
    fields = []
    pos = 0
    while len(fields) < 4:
        m = re.compile(rb"\s*(#[^\n]*\n)*\s*(\S+)").match(raw, pos)
        if m is None:
            raise ValueError(f"{path}: truncated PGM header")
        fields.append(m.group(2))
        pos = m.end()
    if fields[0] != b"P5":
        raise ValueError(f"{path}: not a binary PGM (magic {fields[0]!r})")
    w, h, maxval = int(fields[1]), int(fields[2]), int(fields[3])
    if maxval > 255:
        raise ValueError(f"{path}: 16-bit PGM not supported (maxval {maxval})")
    pos += 1  # single whitespace byte after maxval
    pixels = np.frombuffer(raw, dtype=np.uint8, count=w * h, offset=pos)
    return pixels.reshape(h, w).astype(np.float64)


def write_stack(directory, frames) -> None:
    """Write a sequence of frames as numbered PGMs in a directory."""
    os.makedirs(directory, exist_ok=True)
    for i, frame in enumerate(frames):
        write_pgm(os.path.join(directory, f"frame_{i:05d}.pgm"), frame)


def read_stack(directory) -> np.ndarray:
    """Read a directory of PGMs (sorted by name) into an (n, h, w) array."""
    names = sorted(f for f in os.listdir(directory) if f.endswith(".pgm"))
    if not names:
        raise ValueError(f"{directory}: no .pgm frames found")
    frames = [read_pgm(os.path.join(directory, f)) for f in names]
    return np.stack(frames)
