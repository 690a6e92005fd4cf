"""Patch-based image pipelines built on the factorization solvers.

Three applications share the machinery here:

* background subtraction -- frames become columns of a pixels x frames
  matrix; the fitted factorization models the background and the
  per-frame residual is thresholded into a foreground mask;
* denoising -- overlapping patches become columns of an e^2 x N matrix;
  the solver's thresholding path recodes them and overlapping
  reconstructions are averaged back into an image;
* inpainting -- patches with missing pixels are greedily coded against
  a clean-trained dictionary using mask-aware orthogonal matching
  pursuit.

Patch coding is embarrassingly parallel; reassembly accumulates a sum
and a count per pixel so contribution order never matters.
"""

from __future__ import annotations

import concurrent.futures
import csv
import os
from dataclasses import dataclass

import numpy as np

from .linalg import as_matrix, pinv

# ---------------------------------------------------------------------------
# Quality metrics.
# ---------------------------------------------------------------------------

def psnr(a, b, peak: float = 255.0) -> float:
    """Peak signal-to-noise ratio in dB; +inf for identical images."""
    a = np.asarray(a, dtype=np.float64)
    b = np.asarray(b, dtype=np.float64)
    if a.shape != b.shape:
        raise ValueError(f"shape mismatch: {a.shape} vs {b.shape}")
    mse = float(np.mean((a - b) ** 2))
    if mse == 0.0:
        return float("inf")
    return 10.0 * np.log10(peak * peak / mse)


def sse(a, b) -> float:
    """Sum of squared differences."""
    a = np.asarray(a, dtype=np.float64)
    b = np.asarray(b, dtype=np.float64)
    if a.shape != b.shape:
        raise ValueError(f"shape mismatch: {a.shape} vs {b.shape}")
    return float(np.sum((a - b) ** 2))


def sigma_for_psnr(psnr_db: float, peak: float = 255.0) -> float:
    """Gaussian noise level that produces the given PSNR: invert the formula."""
    return peak / 10.0 ** (psnr_db / 20.0)


def add_gaussian_noise(image, sigma: float, seed: int = 0) -> np.ndarray:
    """Add iid Gaussian noise; values are left unclipped so the measured
    PSNR matches the requested level."""
    rng = np.random.default_rng(seed)
    img = np.asarray(image, dtype=np.float64)
    return img + rng.normal(0.0, sigma, size=img.shape)


# ---------------------------------------------------------------------------
# Patches.
# ---------------------------------------------------------------------------

@dataclass(frozen=True)
class PatchSet:
    """Vectorized overlapping patches with their removed means and origins.

    patches is e^2 x N (one column per patch, row-major pixel order,
    per-patch mean removed); means holds the removed means; origins the
    top-left (row, col) of each patch in the source image.
    """

    edge: int
    patches: np.ndarray
    means: np.ndarray
    origins: np.ndarray
    image_shape: tuple

    @property
    def count(self) -> int:
        return self.patches.shape[1]


def _patch_grid(h: int, w: int, edge: int, stride: int) -> np.ndarray:
    rows = list(range(0, h - edge + 1, stride))
    cols = list(range(0, w - edge + 1, stride))
    if rows[-1] != h - edge:
        rows.append(h - edge)
    if cols[-1] != w - edge:
        cols.append(w - edge)
    return np.array([(r, c) for r in rows for c in cols], dtype=np.intp)


def extract_patches(image, edge: int = 8, count_cap: int | None = None,
                    stride: int = 1, seed: int = 0) -> PatchSet:
    """Slide an edge x edge window over the image and vectorize the patches.

    When count_cap is below the number of window positions, a seeded
    uniform subsample (raster order preserved) is taken.
    """
    img = as_matrix(image, "image")
    h, w = img.shape
    if h < edge or w < edge:
        raise ValueError(f"image {img.shape} smaller than patch edge {edge}")
    origins = _patch_grid(h, w, edge, stride)
    if count_cap is not None and count_cap < len(origins):
        rng = np.random.default_rng(seed)
        pick = np.sort(rng.choice(len(origins), size=count_cap, replace=False))
        origins = origins[pick]
    windows = np.lib.stride_tricks.sliding_window_view(img, (edge, edge))
    patches = windows[origins[:, 0], origins[:, 1]].reshape(len(origins), -1).T
    patches = np.ascontiguousarray(patches, dtype=np.float64)
    means = patches.mean(axis=0)
    return PatchSet(edge=edge, patches=patches - means, means=means,
                    origins=origins, image_shape=(h, w))


def reconstruct_from_patches(patchset: PatchSet, coded, base_image) -> np.ndarray:
    """Average coded patches back into an image.

    coded is e^2 x N in the patch set's order (means are re-added
    here).  Every pixel becomes the mean of all patch contributions
    covering it; pixels covered by no patch are copied from base_image.
    """
    coded = as_matrix(coded, "coded")
    if coded.shape != patchset.patches.shape:
        raise ValueError(
            f"coded shape {coded.shape} != patch shape {patchset.patches.shape}"
        )
    h, w = patchset.image_shape
    e = patchset.edge
    acc = np.zeros((h, w))
    cnt = np.zeros((h, w))
    full = coded + patchset.means
    for n, (r, c) in enumerate(patchset.origins):
        acc[r:r + e, c:c + e] += full[:, n].reshape(e, e)
        cnt[r:r + e, c:c + e] += 1.0
    base = as_matrix(base_image, "base_image")
    if base.shape != (h, w):
        raise ValueError(f"base image shape {base.shape} != {(h, w)}")
    out = base.copy()
    covered = cnt > 0
    out[covered] = acc[covered] / cnt[covered]
    return out


def denoise(noisy_image, estimator, edge: int = 8, count_cap: int = 20000,
            stride: int = 1, seed: int = 0):
    """Train a factorization on the image's own patches and rebuild it
    from the thresholded codes.

    Returns (denoised image clipped to [0, 255], fitted estimator,
    patch set).  The estimator must be configured for at most
    edge^2 components.
    """
    ps = extract_patches(noisy_image, edge=edge, count_cap=count_cap,
                         stride=stride, seed=seed)
    estimator.fit(ps.patches)
    codes = estimator.encode(ps.patches)
    # decode() returns reconstructions of the mean-removed patch columns;
    # reconstruct_from_patches re-adds the stored patch means
    recon = estimator.decode(codes)
    out = reconstruct_from_patches(ps, recon, noisy_image)
    return np.clip(out, 0.0, 255.0), estimator, ps


# ---------------------------------------------------------------------------
# Mask-aware orthogonal matching pursuit and inpainting.
# ---------------------------------------------------------------------------

def omp_masked(b, known, U, sparsity: int, residual_tol: float = 1e-6) -> np.ndarray:
    """Greedy sparse code of a patch against dictionary U, restricted to
    known pixels.

    Repeatedly selects the atom with maximal |correlation| to the masked
    residual (inner product normalized by the restricted atom norm),
    re-solves least squares on the selected set, and stops after
    `sparsity` atoms or when the residual norm drops below residual_tol.
    Atoms whose restricted columns would be linearly dependent are
    skipped.  An all-masked patch codes to zero.
    """
    b = np.asarray(b, dtype=np.float64).ravel()
    known = np.asarray(known, dtype=bool).ravel()
    U = as_matrix(U, "U")
    K = U.shape[1]
    z = np.zeros(K)
    idx = np.flatnonzero(known)
    if idx.size == 0:
        return z
    Um = U[idx]
    target = b[idx]
    atom_norms = np.linalg.norm(Um, axis=0)
    eligible = atom_norms > 1e-12
    r = target.copy()
    selected: list[int] = []
    coef = None
    for _ in range(min(sparsity, K)):
        if np.linalg.norm(r) < residual_tol:
            break
        scores = np.abs(Um.T @ r) / np.maximum(atom_norms, 1e-300)
        scores[~eligible] = -1.0
        if selected:
            scores[selected] = -1.0
        j = int(np.argmax(scores))
        if scores[j] <= 0.0:
            break
        selected.append(j)
        S = Um[:, selected]
        sol, _, rank, _ = np.linalg.lstsq(S, target, rcond=None)
        if rank < len(selected):
            selected.pop()
            eligible[j] = False
            continue
        coef = sol
        r = target - S @ sol
    if selected and coef is not None:
        z[selected] = coef
    return z


@dataclass(frozen=True)
class InpaintTask:
    """An image with missing pixels (known=True marks observed pixels)."""

    image: np.ndarray
    known: np.ndarray
    edge: int = 8
    sparsity: int = 20
    stride: int = 2

    def __post_init__(self):
        if np.asarray(self.image).shape != np.asarray(self.known).shape:
            raise ValueError("mask dimensions must equal image dimensions")


def _code_patch_block(image, known, origins, U, edge, sparsity):
    # worker: returns reconstructed full patches for a block of origins,
    # with the per-patch known-pixel mean re-added; None marks an
    # unrecoverable (fully masked) patch
    out = []
    for r, c in origins:
        km = known[r:r + edge, c:c + edge].ravel()
        bp = image[r:r + edge, c:c + edge].ravel()
        if not km.any():
            out.append(None)
            continue
        mu = bp[km].mean()
        z = omp_masked(bp - mu, km, U, sparsity)
        out.append(U @ z + mu)
    return out


def _fill_uncovered(out, hole) -> np.ndarray:
    # iterative 3x3 neighborhood-mean fill for pixels no patch reached
    out = out.copy()
    hole = hole.copy()
    while hole.any():
        acc = np.zeros_like(out)
        cnt = np.zeros_like(out)
        filled = (~hole).astype(np.float64)
        vals = np.where(hole, 0.0, out)
        for dr in (-1, 0, 1):
            for dc in (-1, 0, 1):
                acc += np.roll(np.roll(vals, dr, axis=0), dc, axis=1)
                cnt += np.roll(np.roll(filled, dr, axis=0), dc, axis=1)
        frontier = hole & (cnt > 0)
        if not frontier.any():
            out[hole] = out[~hole].mean() if (~hole).any() else 0.0
            break
        out[frontier] = acc[frontier] / cnt[frontier]
        hole[frontier] = False
    return out


def inpaint(task: InpaintTask, dictionary, original=None, workers: int = 1):
    """Reconstruct missing pixels by OMP-coding overlapping patches.

    dictionary is an e^2 x K atom matrix (a fitted factorization's U_).
    Overlapping reconstructions are averaged, known pixels are
    overwritten with their true values, and patches with no known pixel
    are filled from the neighborhood mean.  Returns (restored image,
    info dict); info carries psnr/sse against `original` when given.
    """
    image = as_matrix(task.image, "image")
    known = np.asarray(task.known, dtype=bool)
    U = as_matrix(dictionary, "dictionary")
    h, w = image.shape
    e = task.edge
    if U.shape[0] != e * e:
        raise ValueError(f"dictionary rows {U.shape[0]} != edge^2 {e * e}")
    origins = _patch_grid(h, w, e, task.stride)

    if workers > 1:
        blocks = np.array_split(origins, workers)
        with concurrent.futures.ProcessPoolExecutor(max_workers=workers) as ex:
            futures = [
                ex.submit(_code_patch_block, image, known, blk, U, e, task.sparsity)
                for blk in blocks if len(blk)
            ]
            # consume in submission order so accumulation is deterministic
            results = [f.result() for f in futures]
        patches = [p for blk in results for p in blk]
    else:
        patches = _code_patch_block(image, known, origins, U, e, task.sparsity)

    acc = np.zeros((h, w))
    cnt = np.zeros((h, w))
    unrecoverable = 0
    for (r, c), patch in zip(origins, patches):
        if patch is None:
            unrecoverable += 1
            continue
        acc[r:r + e, c:c + e] += patch.reshape(e, e)
        cnt[r:r + e, c:c + e] += 1.0
    out = np.zeros((h, w))
    covered = cnt > 0
    out[covered] = acc[covered] / cnt[covered]
    hole = ~covered & ~known
    out[known] = image[known]
    if hole.any():
        out = _fill_uncovered(out, hole)
        out[known] = image[known]
    out = np.clip(out, 0.0, 255.0)
    info = {"unrecoverable_patches": unrecoverable, "n_patches": len(origins)}
    if original is not None:
        info["psnr"] = psnr(out, original)
        info["sse"] = sse(out, original)
    return out, info


def paint_missing(image, known, value: float = 0.0) -> np.ndarray:
    """Render the masked observation: missing pixels set to a flat value."""
    out = np.asarray(image, dtype=np.float64).copy()
    out[~np.asarray(known, dtype=bool)] = value
    return out


# ---------------------------------------------------------------------------
# Background subtraction.
# ---------------------------------------------------------------------------

@dataclass(frozen=True)
class FrameStack:
    """Grayscale frame sequence with a pixels x frames vectorized view."""

    frames: np.ndarray  # (n_frames, h, w), values in [0, 255]

    def __post_init__(self):
        f = np.asarray(self.frames)
        if f.ndim != 3:
            raise ValueError(f"frames must be (n, h, w), got shape {f.shape}")
        if not np.all(np.isfinite(f)):
            raise ValueError("frames contain non-finite values")

    @property
    def n_frames(self) -> int:
        return self.frames.shape[0]

    @property
    def frame_shape(self) -> tuple:
        return self.frames.shape[1:]

    def matrix(self) -> np.ndarray:
        """Each frame vectorized into one column."""
        n = self.n_frames
        return self.frames.reshape(n, -1).T.astype(np.float64)


@dataclass(frozen=True)
class BackgroundModel:
    stack: FrameStack
    estimator: object


# Foreground pixels must exceed this many grey levels even when the
# adaptive threshold collapses (exactly reconstructed static scenes).
FOREGROUND_FLOOR = 255.0 * 1e-6


def fit_background(stack: FrameStack, estimator) -> BackgroundModel:
    """Factor the vectorized stack; the fit models the background."""
    k = getattr(estimator, "n_components", 1)
    if stack.n_frames < k:
        raise ValueError(f"{stack.n_frames} frames < {k} components")
    estimator.fit(stack.matrix())
    return BackgroundModel(stack=stack, estimator=estimator)


def background_frame(model: BackgroundModel, i: int) -> np.ndarray:
    """Reconstructed background of training frame i."""
    est = model.estimator
    col = est.U_ @ est.Z_[:, i] + est.column_means_[i]
    return col.reshape(model.stack.frame_shape)


def foreground_mask(model: BackgroundModel, frame, threshold: float | None = None):
    """Threshold the residual of a frame into a boolean foreground mask.

    frame is either an index into the trained stack (uses its fitted
    code) or a new (h, w) array (coded by least squares against the
    fitted components).  The default threshold is mean + 2 std of the
    frame's residual magnitudes, floored so exactly reconstructed frames
    give empty masks; pass a number to force a fixed threshold.
    """
    est = model.estimator
    if isinstance(frame, (int, np.integer)):
        observed = model.stack.frames[int(frame)]
        background = background_frame(model, int(frame))
    else:
        observed = as_matrix(frame, "frame")
        if observed.shape != model.stack.frame_shape:
            raise ValueError(
                f"frame shape {observed.shape} != {model.stack.frame_shape}"
            )
        col = observed.ravel()
        mu = col.mean()
        code = pinv(est.U_) @ (col - mu)
        background = (est.U_ @ code + mu).reshape(observed.shape)
    resid = np.abs(observed - background)
    if threshold is None:
        threshold = max(resid.mean() + 2.0 * resid.std(), FOREGROUND_FLOOR)
    return resid > threshold


# ---------------------------------------------------------------------------
# Metrics CSV.
# ---------------------------------------------------------------------------

METRICS_COLUMNS = ("case", "algorithm", "lambda", "rho1", "rho2", "K",
                   "psnr_in", "psnr_out", "sse", "precision", "recall",
                   "fscore", "seconds")


def format_metric(value) -> str:
    if value is None or value == "":
        return ""
    if isinstance(value, float):
        return format(value, ".9g")
    return str(value)


def append_metrics(path, rows, columns=METRICS_COLUMNS) -> None:
    """Append metric rows (dicts) to a CSV, writing the header once."""
    new = not os.path.exists(path) or os.path.getsize(path) == 0
    with open(path, "a", newline="", encoding="ascii") as fh:
        writer = csv.writer(fh)
        if new:
            writer.writerow(columns)
        for row in rows:
            writer.writerow([format_metric(row.get(col)) for col in columns])
