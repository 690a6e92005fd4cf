"""Shipped synthetic stand-ins for the imaging experiments.

Real surveillance videos and photographic test images are inputs the
user can supply; these generators produce small deterministic
substitutes (a moving-square stack with ground-truth foreground masks,
piecewise-smooth test images, synthetic text masks) so every pipeline
runs end to end with no downloads.
"""

from __future__ import annotations

import numpy as np

from .imaging import FrameStack, extract_patches


def _smooth_background(size: int) -> np.ndarray:
    r, c = np.mgrid[0:size, 0:size].astype(np.float64)
    bg = 60.0 + 50.0 * (c / size) + 25.0 * np.sin(2 * np.pi * r / size) \
        * np.cos(2 * np.pi * c / size)
    return bg


def moving_square_stack(size: int = 64, n_frames: int = 60, square: int = 12,
                        brightness: float = 235.0):
    """Static textured background with one bright square sweeping across it.

    Returns (FrameStack, ground-truth boolean masks (n_frames, h, w)).
    Rows advance linearly while columns follow a coprime-stride scan, so
    every frame puts the square at a distinct, well-separated position;
    a lingering or revisited position would be absorbed into the
    background model instead of surfacing in the residual.
    """
    bg = _smooth_background(size)
    frames = np.empty((n_frames, size, size))
    masks = np.zeros((n_frames, size, size), dtype=bool)
    span = size - square
    for i in range(n_frames):
        r = int(round(span * i / max(n_frames - 1, 1)))
        c = (11 * i) % (span + 1)
        frame = bg.copy()
        frame[r:r + square, c:c + square] = brightness
        frames[i] = frame
        masks[i, r:r + square, c:c + square] = True
    return FrameStack(frames=np.clip(frames, 0.0, 255.0)), masks


def static_stack(size: int = 64, n_frames: int = 20) -> FrameStack:
    """Every frame identical; any background model reconstructs it exactly."""
    bg = _smooth_background(size)
    return FrameStack(frames=np.repeat(bg[None], n_frames, axis=0))


def piecewise_image(size: int = 256, variant: int = 0) -> np.ndarray:
    """Deterministic piecewise-smooth grayscale test image in [0, 255].

    A gentle ramp with flat geometric regions (disk, rectangle, wedge)
    plus two oriented stripe textures; the textures keep dictionary
    quality relevant (a purely flat image is reconstructed equally well
    by any reasonable basis).  Variants shift the layout so a small
    corpus of distinct images can be generated.
    """
    rng = np.random.default_rng(1000 + variant)
    r, c = np.mgrid[0:size, 0:size].astype(np.float64)
    img = 40.0 + 90.0 * (0.6 * c + 0.4 * r) / size

    cy, cx = rng.uniform(0.25, 0.75, size=2) * size
    radius = rng.uniform(0.12, 0.2) * size
    img[(r - cy) ** 2 + (c - cx) ** 2 < radius**2] = 210.0

    top, left = (rng.uniform(0.05, 0.45, size=2) * size).astype(int)
    hh, ww = (rng.uniform(0.15, 0.3, size=2) * size).astype(int)
    img[top:top + hh, left:left + ww] = 70.0

    slope = rng.uniform(0.5, 1.8)
    wedge = c > slope * (r - rng.uniform(0.3, 0.7) * size) + 0.65 * size
    img[wedge] = 150.0

    angle = rng.uniform(0.0, np.pi)
    freq = rng.uniform(0.5, 1.2)
    band = np.abs(r - rng.uniform(0.55, 0.8) * size) < 0.12 * size
    phase = np.cos(angle) * r[band] + np.sin(angle) * c[band]
    img[band] = 120.0 + 55.0 * np.sin(freq * phase)

    corner = (c > 0.7 * size) & (r < 0.35 * size)
    phase = np.cos(angle + np.pi / 3) * r[corner] + np.sin(angle + np.pi / 3) * c[corner]
    img[corner] = 130.0 + 50.0 * np.sin(phase)
    return np.clip(img, 0.0, 255.0)


def text_mask(shape, fraction: float = 0.15, seed: int = 0) -> np.ndarray:
    """Synthetic text-like mask: short strokes removed until the target
    fraction of pixels is missing.

    Returns a boolean array where True marks a KNOWN pixel.
    """
    h, w = shape
    rng = np.random.default_rng(seed)
    missing = np.zeros((h, w), dtype=bool)
    target = int(fraction * h * w)
    while missing.sum() < target:
        rr = rng.integers(0, h)
        cc = rng.integers(0, w)
        length = int(rng.integers(6, 30))
        thick = int(rng.integers(1, 4))
        if rng.random() < 0.8:  # mostly horizontal strokes, like text
            missing[rr:rr + thick, cc:cc + length] = True
        else:
            missing[rr:rr + length, cc:cc + thick] = True
    return ~missing


def corpus_patches(edge: int = 8, per_image: int = 1000, n_images: int = 6,
                   size: int = 128, seed: int = 0) -> np.ndarray:
    """Clean training patches pooled from the shipped image corpus.

    Returns an e^2 x (per_image * n_images) matrix of mean-removed
    patch columns, the training input for an inpainting dictionary.
    """
    blocks = []
    for v in range(n_images):
        img = piecewise_image(size=size, variant=v)
        ps = extract_patches(img, edge=edge, count_cap=per_image,
                             stride=1, seed=seed + v)
        blocks.append(ps.patches)
    return np.concatenate(blocks, axis=1)
