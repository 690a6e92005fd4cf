"""Dense linear-algebra core: centering, truncated SVD, pseudoinverse, matrix IO.

Every matrix in this package is a 2-D float64 numpy array, row-major,
with rows as observations and columns as variables unless a caller says
otherwise.  All functions here are pure: inputs are never mutated.
"""

from __future__ import annotations

import struct
from dataclasses import dataclass

import numpy as np

# Singular values below RANK_CUTOFF * d_max are treated as zero and the
# achieved rank is reported rather than padded.
RANK_CUTOFF = 1e-12


def as_matrix(X, name: str = "X") -> np.ndarray:
    """Validate and convert input to a finite 2-D float64 array.

    Raises ValueError with a diagnostic naming the offending entries when
    the input contains NaN or Inf.
    """
    M = np.asarray(X, dtype=np.float64)
    if M.ndim != 2:
        raise ValueError(f"{name} must be 2-D, got shape {M.shape}")
    if not np.all(np.isfinite(M)):
        bad = np.argwhere(~np.isfinite(M))
        raise ValueError(
            f"{name} contains {len(bad)} non-finite entries "
            f"(first at index {tuple(bad[0])})"
        )
    return M


def center_columns(X) -> tuple[np.ndarray, np.ndarray]:
    """Subtract each column's mean; return (centered matrix, mean vector).

    The mean vector can be added back to undo the shift.
    """
    M = as_matrix(X)
    means = M.mean(axis=0)
    return M - means, means


@dataclass(frozen=True)
class SvdFactors:
    """Truncated SVD triple: X ~ U @ diag(d) @ Z.

    U has orthonormal columns (n x k), d is descending and strictly
    positive, Z has orthonormal rows (k x p).  k is the achieved rank,
    which may be below the requested component count for rank-deficient
    input.
    """

    U: np.ndarray
    d: np.ndarray
    Z: np.ndarray

    @property
    def rank(self) -> int:
        return self.d.shape[0]


def truncated_svd(X, n_components: int) -> SvdFactors:
    """Best rank-k factors of a (centered) matrix with a fixed sign convention.

    Within each left singular vector the entry of largest magnitude is
    made positive (ties broken by lowest index), so output is
    deterministic for identical input.  Singular values below
    RANK_CUTOFF times the largest are dropped; the returned factors
    carry the achieved rank.
    """
    M = as_matrix(X)
    n, p = M.shape
    if not 1 <= n_components <= min(n, p):
        raise ValueError(
            f"n_components must be in [1, {min(n, p)}], got {n_components}"
        )
    U, s, Vt = np.linalg.svd(M, full_matrices=False)
    if s[0] <= 0.0:
        raise ValueError("matrix is identically zero; no components to extract")
    keep = min(n_components, int(np.sum(s > RANK_CUTOFF * s[0])))
    U, s, Vt = U[:, :keep].copy(), s[:keep].copy(), Vt[:keep].copy()
    for k in range(keep):
        j = int(np.argmax(np.abs(U[:, k])))
        if U[j, k] < 0.0:
            U[:, k] = -U[:, k]
            Vt[k] = -Vt[k]
    return SvdFactors(U=U, d=s, Z=Vt)


def pinv(M) -> np.ndarray:
    """Moore-Penrose pseudoinverse (always defined for finite input)."""
    return np.linalg.pinv(as_matrix(M, "M"))


# ---------------------------------------------------------------------------
# Serialization: plain-text CSV (no header, '.' decimal) and a raw
# little-endian float64 binary with an 8-byte (rows, cols) uint32 header.
# ---------------------------------------------------------------------------

def save_matrix_csv(path, M) -> None:
    M = as_matrix(M, "M")
    with open(path, "w", encoding="ascii") as fh:
        for row in M:
            fh.write(",".join(format(v, ".17g") for v in row))
            fh.write("\n")


def load_matrix_csv(path) -> np.ndarray:
    rows = []
    with open(path, "r", encoding="ascii") as fh:
        for line in fh:
            line = line.strip()
            if line:
                rows.append([float(v) for v in line.split(",")])
    if not rows:
        raise ValueError(f"{path} holds no matrix rows")
    return as_matrix(np.array(rows, dtype=np.float64), str(path))


def save_matrix_bin(path, M) -> None:
    M = as_matrix(M, "M")
    with open(path, "wb") as fh:
        fh.write(struct.pack("<II", M.shape[0], M.shape[1]))
        fh.write(np.ascontiguousarray(M, dtype="<f8").tobytes())


def load_matrix_bin(path) -> np.ndarray:
    with open(path, "rb") as fh:
        header = fh.read(8)
        if len(header) != 8:
            raise ValueError(f"{path}: truncated header")
        rows, cols = struct.unpack("<II", header)
        data = np.frombuffer(fh.read(rows * cols * 8), dtype="<f8")
    if data.size != rows * cols:
        raise ValueError(f"{path}: expected {rows * cols} values, got {data.size}")
    return as_matrix(data.reshape(rows, cols).astype(np.float64), str(path))
