"""Dissociative PCA: sparse factorization solvers for source separation,
with synthetic-scene and imaging experiment harnesses."""

from .linalg import (
    SvdFactors,
    center_columns,
    load_matrix_bin,
    load_matrix_csv,
    pinv,
    save_matrix_bin,
    save_matrix_csv,
    truncated_svd,
)
from .solvers import (
    DPCA1a,
    DPCA1b,
    DPCA2,
    PlainPCA,
    explained_variance,
    load_factorization,
    save_factorization,
)
from .thresholding import INERT_FIRM, FirmThresholds, firm, soft_adaptive

__all__ = [
    "SvdFactors",
    "center_columns",
    "truncated_svd",
    "pinv",
    "save_matrix_csv",
    "load_matrix_csv",
    "save_matrix_bin",
    "load_matrix_bin",
    "FirmThresholds",
    "INERT_FIRM",
    "soft_adaptive",
    "firm",
    "PlainPCA",
    "DPCA1a",
    "DPCA1b",
    "DPCA2",
    "explained_variance",
    "save_factorization",
    "load_factorization",
]

__version__ = "0.1.0"
