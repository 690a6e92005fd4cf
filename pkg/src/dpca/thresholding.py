"""Shrinkage operators shared by all the dissociative solvers.

Two operators: an adaptive soft threshold whose per-entry penalty decays
with the entry's own magnitude, and a firm threshold that kills small
values, ramps intermediate ones, and passes large values unchanged.
Both are odd, non-expansive in magnitude, and monotone on [0, inf).
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np


@dataclass(frozen=True)
class FirmThresholds:
    """Kill-below level rho1 and keep-above level rho2, 0 <= rho1 < rho2."""

    rho1: float
    rho2: float

    def __post_init__(self):
        if not 0.0 <= self.rho1 < self.rho2:
            raise ValueError(
                f"need 0 <= rho1 < rho2, got rho1={self.rho1}, rho2={self.rho2}"
            )


# Inert configuration: rho1=0 makes the ramp branch the identity, so only
# exact zeros are touched; used when a solver should skip second-level
# thresholding.
INERT_FIRM = FirmThresholds(0.0, 1e12)


def soft_adaptive(y, lam: float) -> np.ndarray:
    """Elementwise sgn(y) * (|y| - lam / (2|y|))_+.

    The shrinkage amount grows as |y| shrinks, so entries with
    |y|^2 <= lam/2 are crushed to exactly zero while large entries are
    barely moved.  y = 0 maps to 0 (the limit of the clamp).
    """
    if lam < 0.0:
        raise ValueError(f"lam must be nonnegative, got {lam}")
    y = np.asarray(y, dtype=np.float64)
    if lam == 0.0:
        return y.copy()
    mag = np.abs(y)
    with np.errstate(divide="ignore"):
        shrunk = mag - lam / (2.0 * mag)
    return np.sign(y) * np.maximum(shrunk, 0.0)


def firm(y, t: FirmThresholds) -> np.ndarray:
    """Three-branch firm threshold.

    0 for |y| <= rho1; the linear ramp rho2*(|y|-rho1)/(rho2-rho1)*sgn(y)
    for rho1 < |y| < rho2; y itself for |y| >= rho2.  Continuous in |y|
    (the ramp is 0 at rho1 and rho2 at rho2).
    """
    y = np.asarray(y, dtype=np.float64)
    mag = np.abs(y)
    ramp = t.rho2 * (mag - t.rho1) / (t.rho2 - t.rho1) * np.sign(y)
    return np.where(mag <= t.rho1, 0.0, np.where(mag >= t.rho2, y, ramp))
