"""Dissociative PCA solvers and the plain-PCA baseline.

All solvers factor a column-centered data matrix X (n x p) as X ~ U @ Z
with U = U_q @ Psi (n x K) and Z built from Phi @ Z_q (K x p), where
(U_q, d, Z_q) is the truncated SVD seed and Psi / Phi are K x K
dissociation matrices that remix the singular vectors.  Sparsity enters
through an adaptive soft threshold on the loading rows and, for the
firm-threshold variants, a second-level firm threshold on the
reconstructed rows.

Three iterative variants are provided:

* DPCA1a -- one data-space loading update per outer pass, then an inner
  loop refining the component columns from correlation profiles.  Fast
  but can fail to converge.
* DPCA1b -- inner coordinate-descent loop on the loading rows against
  frozen component profiles, a firm-threshold cleanup, then the same
  column refinement as DPCA1a.
* DPCA2 -- per-component residual sweeps updating each (column, row)
  pair together.

Solvers are deterministic state machines: identical input and
parameters give bitwise-identical factorizations.
"""

from __future__ import annotations

import logging
import os
from dataclasses import dataclass

import numpy as np
from scipy.linalg import cho_factor, cho_solve
from sklearn.base import BaseEstimator, TransformerMixin
from sklearn.utils.validation import check_is_fitted

from .linalg import (
    SvdFactors,
    as_matrix,
    center_columns,
    load_matrix_csv,
    pinv,
    save_matrix_csv,
    truncated_svd,
)
from .thresholding import FirmThresholds, firm, soft_adaptive

logger = logging.getLogger(__name__)

# Component energy below this is treated as dead (skipped or reseeded).
DEAD_EPS = 1e-12


def _frob(M) -> float:
    return float(np.linalg.norm(M))


class SeedBasis:
    """Solve helpers tied to one SVD seed (U_q, Z_q).

    The seed grams U_q^T U_q and Z_q Z_q^T are identity for an exact SVD;
    they are still formed and solved (Cholesky on K x K) so the updates
    stay correct for mildly non-orthonormal seeds, with deviation from
    identity checked against a 1e-6 budget.
    """

    def __init__(self, Uq: np.ndarray, Zq: np.ndarray):
        self.Uq = Uq
        self.Zq = Zq
        K = Uq.shape[1]
        gu = Uq.T @ Uq
        gz = Zq @ Zq.T
        eye = np.eye(K)
        for name, g in (("U_q^T U_q", gu), ("Z_q Z_q^T", gz)):
            dev = _frob(g - eye)
            if dev > 1e-6:
                raise ValueError(f"seed gram {name} deviates from identity by {dev:.3g}")
        self._gu_cho = cho_factor(gu)
        self._gz_cho = cho_factor(gz)
        self._gu_pinv = pinv(gu)

    def phi_from_p_space(self, T: np.ndarray) -> np.ndarray:
        """Project thresholded p-space rows onto the seed loading basis.

        T may be a single row (p,) or a stack (m, p); returns (K,) or (m, K)
        rows phi = T Z_q^T (Z_q Z_q^T)^{-1}.
        """
        rhs = self.Zq @ np.atleast_2d(T).T
        out = cho_solve(self._gz_cho, rhs).T
        return out[0] if np.ndim(T) == 1 else out

    def psi_lstsq(self, target: np.ndarray) -> np.ndarray:
        """(U_q^T U_q)^{-1} U_q^T target for an n-vector target."""
        return cho_solve(self._gu_cho, self.Uq.T @ target)

    def psi_pinv(self, coef: np.ndarray) -> np.ndarray:
        """pinv(U_q^T U_q) applied to a K-vector of seed coefficients."""
        return self._gu_pinv @ coef


# ---------------------------------------------------------------------------
# Row / column update steps.  These are the building blocks the solver
# passes are assembled from; exposed for direct testing against dense
# oracles.
# ---------------------------------------------------------------------------

def _project_rows(T, Zq):
    return np.linalg.solve(Zq @ Zq.T, Zq @ np.atleast_2d(T).T).T[0]


def phi_row_from_data(u_k, X, Zq, lam, basis: SeedBasis | None = None):
    """One-shot loading update from the data: threshold u_k^T X, project.

    Returns (phi_row, z_row).  An all-zero u_k yields zero rows (dead
    component).
    """
    t = soft_adaptive(np.asarray(u_k) @ X, lam)
    phi_row = basis.phi_from_p_space(t) if basis is not None else _project_rows(t, Zq)
    return phi_row, phi_row @ Zq


def phi_row_descent_step(k, A, B, Z, Zq, lam, basis: SeedBasis | None = None):
    """Coordinate-descent loading update against frozen profiles A = U^T U,
    B = U^T X.

    Forms y = (b^k - a^k Z + z^k) / a^k_k, thresholds, projects.  Caller
    must ensure A[k, k] > DEAD_EPS.
    """
    y = (B[k] - A[k] @ Z + Z[k]) / A[k, k]
    t = soft_adaptive(y, lam)
    phi_row = basis.phi_from_p_space(t) if basis is not None else _project_rows(t, Zq)
    return phi_row, phi_row @ Zq


def psi_col_from_profiles(k, A, B, U, Uq, basis: SeedBasis | None = None):
    """Component-column update from profiles A = Z Z^T, B = X Z^T.

    Implements the profile form of the column refinement with the
    max(norm, 1) normalization; returns (psi_col, u_col).  Caller must
    ensure A[k, k] > DEAD_EPS.
    """
    target = (B[:, k] - U @ A[:, k]) / A[k, k] + U[:, k]
    if basis is not None:
        psi = basis.psi_lstsq(target)
    else:
        psi = np.linalg.solve(Uq.T @ Uq, Uq.T @ target)
    nrm = float(np.linalg.norm(Uq @ psi))
    if nrm > 1.0:
        psi = psi / nrm
    return psi, Uq @ psi


def psi_col_from_residual(E_k, Uq, z_row, basis: SeedBasis | None = None):
    """Component-column update from the component residual E_k and its row.

    psi = pinv(U_q^T U_q) U_q^T E_k z^T, normalized to give a unit-norm
    column.  Returns (None, None) when the row is zero or the residual
    has no component in span(U_q); the caller reseeds such components.
    """
    z_row = np.asarray(z_row, dtype=np.float64)
    if not np.any(z_row):
        return None, None
    coef = Uq.T @ (E_k @ z_row)
    psi = basis.psi_pinv(coef) if basis is not None else pinv(Uq.T @ Uq) @ coef
    nrm = float(np.linalg.norm(Uq @ psi))
    if nrm <= DEAD_EPS:
        return None, None
    psi = psi / nrm
    return psi, Uq @ psi


def explained_variance(X, Z) -> float:
    """Percentage of data energy captured by the row space of Z.

    100 * [1 - ||X - X pinv(Z) Z||_F^2 / ||X||_F^2], using the
    Moore-Penrose pseudoinverse, so any nonzero Z is accepted.
    """
    X = as_matrix(X)
    Z = as_matrix(Z, "Z")
    total = _frob(X) ** 2
    if total == 0.0:
        raise ValueError("explained variance undefined for an all-zero matrix")
    if not np.any(Z):
        raise ValueError("Z must be nonzero")
    resid = X - X @ pinv(Z) @ Z
    return 100.0 * (1.0 - _frob(resid) ** 2 / total)


# ---------------------------------------------------------------------------
# Estimators.
# ---------------------------------------------------------------------------

class _BaseFactorization(BaseEstimator, TransformerMixin):
    """Shared fit plumbing and the common factorization record.

    Fitted attributes:

    U_, Z_           factor pair, X_centered ~ U_ @ Z_
    psi_, phi_       dissociation matrices
    v_               weighting matrix Psi @ Phi (diagnostic only)
    svd_             SvdFactors seed
    n_components_    achieved component count (rank-limited)
    column_means_    per-column means removed before fitting
    n_iter_          outer passes run
    converged_       True when the relative change dropped below outer_tol
    rel_change_trace_  per-outer-pass relative change of U
    dead_components_ count of dead-component events
    explained_variance_pct_  percentage of variance explained by Z_
    lambda_effective_  sparsity penalty after optional sqrt(n*p) scaling
    """

    def _firm_thresholds(self) -> FirmThresholds | None:
        return None

    def _effective_lambda(self, n: int, p: int) -> float:
        lam = getattr(self, "lam", 0.0)
        if lam < 0.0:
            raise ValueError(f"lam must be nonnegative, got {lam}")
        if getattr(self, "scale_lambda", False):
            lam = lam * float(np.sqrt(n * p))
        return lam

    def _check_loop_params(self):
        if getattr(self, "outer_tol", 1.0) <= 0.0:
            raise ValueError("outer_tol must be positive")
        if getattr(self, "inner_tol", 1.0) <= 0.0:
            raise ValueError("inner_tol must be positive")
        if getattr(self, "max_outer", 1) < 1:
            raise ValueError("max_outer must be at least 1")

    def fit(self, X, y=None):
        X = as_matrix(X)
        n, p = X.shape
        self._check_loop_params()
        if self.center:
            Xc, means = center_columns(X)
        else:
            Xc, means = X.copy(), np.zeros(p)
        svd = truncated_svd(Xc, self.n_components)
        basis = SeedBasis(svd.U, svd.Z)
        lam_eff = self._effective_lambda(n, p)
        t = self._firm_thresholds()

        self.column_means_ = means
        self.svd_ = svd
        self.n_components_ = svd.rank
        self.lambda_effective_ = lam_eff
        self._run(Xc, svd, basis, lam_eff, t)
        self.v_ = self.psi_ @ self.phi_
        self.v_energy_ = _frob(self.v_) ** 2
        self.seed_energy_ = float(np.sum(svd.d**2))
        self.explained_variance_pct_ = (
            explained_variance(Xc, self.Z_) if np.any(self.Z_) else 0.0
        )
        self._z_pinv = None
        logger.debug(
            "%s fit: K=%d iters=%d converged=%s lambda_eff=%.4g "
            "v_energy=%.6g seed_energy=%.6g",
            type(self).__name__, self.n_components_, self.n_iter_,
            self.converged_, lam_eff, self.v_energy_, self.seed_energy_,
        )
        return self

    def _run(self, Xc, svd, basis, lam_eff, t):  # pragma: no cover
        raise NotImplementedError

    # -- common outer loop for the iterative variants ---------------------

    def _outer_loop(self, Xc, svd: SvdFactors, basis: SeedBasis, lam_eff, t):
        K = svd.rank
        p = Xc.shape[1]
        U = svd.U.copy()
        Psi = np.eye(K)
        Phi = np.zeros((K, K))
        Z = np.zeros((K, p))
        trace: list[float] = []
        converged = False
        dead = 0
        n_iter = 0
        for _ in range(self.max_outer):
            n_iter += 1
            U_ref = U.copy()
            dead += self._pass(Xc, U, Z, Psi, Phi, basis, lam_eff, t)
            rel = _frob(U - U_ref) / max(_frob(U_ref), np.finfo(float).tiny)
            trace.append(rel)
            if rel <= self.outer_tol:
                converged = True
                break
        self.U_, self.Z_, self.psi_, self.phi_ = U, Z, Psi, Phi
        self.n_iter_ = n_iter
        self.converged_ = converged
        self.rel_change_trace_ = trace
        self.dead_components_ = dead

    def _phi_pass_plain(self, Xc, U, Z, Phi, basis, lam_eff) -> int:
        # all rows at once; U is fixed during the pass
        T = soft_adaptive(U.T @ Xc, lam_eff)
        Phi[:] = basis.phi_from_p_space(T)
        Z[:] = Phi @ basis.Zq
        return int(np.sum(~np.any(U, axis=0)))

    def _psi_inner(self, U, Psi, A, B, basis) -> int:
        live = [k for k in range(A.shape[0]) if A[k, k] > DEAD_EPS]
        for _ in range(self.max_inner):
            U_prev = U.copy()
            for k in live:
                psi, u = psi_col_from_profiles(k, A, B, U, basis.Uq, basis)
                Psi[:, k] = psi
                U[:, k] = u
            if _frob(U - U_prev) <= self.inner_tol:
                break
        return A.shape[0] - len(live)

    # -- sklearn-facing surface -------------------------------------------

    def transform(self, X):
        """Least-squares scores of new rows against the fitted loading rows."""
        check_is_fitted(self, "Z_")
        X = as_matrix(X)
        if X.shape[1] != self.Z_.shape[1]:
            raise ValueError(
                f"X has {X.shape[1]} columns, expected {self.Z_.shape[1]}"
            )
        if self._z_pinv is None:
            self._z_pinv = pinv(self.Z_)
        return (X - self.column_means_) @ self._z_pinv

    def inverse_transform(self, S):
        check_is_fitted(self, "Z_")
        return np.asarray(S) @ self.Z_ + self.column_means_

    @property
    def components_(self):
        check_is_fitted(self, "Z_")
        return self.Z_

    def encode(self, X):
        """Recode column data through the frozen-dictionary thresholding path.

        One loading pass with U_ frozen (adaptive soft threshold, seed
        projection) followed by the solver's firm threshold when it has
        one.  X must have the same column count as the fitted data: the
        seed projection ties codes to the training columns.  Returns the
        K x p code matrix; column j codes column j of X.
        """
        check_is_fitted(self, "Z_")
        X = as_matrix(X)
        if X.shape != (self.U_.shape[0], self.Z_.shape[1]):
            raise ValueError(
                f"encode expects the fitted data shape "
                f"{(self.U_.shape[0], self.Z_.shape[1])}, got {X.shape}"
            )
        Xc = X - self.column_means_
        basis = SeedBasis(self.svd_.U, self.svd_.Z)
        T = soft_adaptive(self.U_.T @ Xc, self.lambda_effective_)
        Zc = basis.phi_from_p_space(T) @ basis.Zq
        t = self._firm_thresholds()
        return firm(Zc, t) if t is not None else Zc

    def decode(self, codes):
        """Reconstruct column data from a full-width code matrix."""
        check_is_fitted(self, "Z_")
        return self.U_ @ np.asarray(codes) + self.column_means_

    def save(self, directory) -> None:
        """Persist the factorization as a directory of CSV matrices + meta."""
        check_is_fitted(self, "Z_")
        save_factorization(directory, self)


class PlainPCA(_BaseFactorization):
    """Truncated-SVD baseline presented in the common factorization shape.

    U_ holds the left singular vectors, Z_ = diag(d) @ Z_q, so U_ @ Z_ is
    the best rank-K approximation; Psi = I and Phi = diag(d).
    """

    def __init__(self, n_components=8, center=True):
        self.n_components = n_components
        self.center = center

    def _check_loop_params(self):
        pass

    def _run(self, Xc, svd, basis, lam_eff, t):
        K = svd.rank
        self.U_ = svd.U.copy()
        self.psi_ = np.eye(K)
        self.phi_ = np.diag(svd.d)
        self.Z_ = self.phi_ @ svd.Z
        self.n_iter_ = 0
        self.converged_ = True
        self.rel_change_trace_ = []
        self.dead_components_ = 0


class DPCA1a(_BaseFactorization):
    """Dissociative solver with one data-space loading update per pass.

    No second-level firm threshold.  Known to trade convergence
    stability for speed; non-convergence within max_outer returns the
    partial result with converged_ = False.
    """

    def __init__(self, n_components=8, lam=0.0, scale_lambda=False,
                 outer_tol=0.01, inner_tol=1e-5, max_outer=30,
                 max_inner=100, center=True):
        self.n_components = n_components
        self.lam = lam
        self.scale_lambda = scale_lambda
        self.outer_tol = outer_tol
        self.inner_tol = inner_tol
        self.max_outer = max_outer
        self.max_inner = max_inner
        self.center = center

    def _run(self, Xc, svd, basis, lam_eff, t):
        self._outer_loop(Xc, svd, basis, lam_eff, t)

    def _pass(self, Xc, U, Z, Psi, Phi, basis, lam_eff, t) -> int:
        dead = self._phi_pass_plain(Xc, U, Z, Phi, basis, lam_eff)
        A = Z @ Z.T
        B = Xc @ Z.T
        dead += self._psi_inner(U, Psi, A, B, basis)
        return dead


class DPCA1b(_BaseFactorization):
    """Dissociative solver with an inner coordinate-descent loading loop.

    Each outer pass refines the loading rows to tolerance against frozen
    component profiles, firm-thresholds the reconstructed rows once, and
    then refines the component columns.
    """

    def __init__(self, n_components=8, lam=0.0, rho1=None, rho2=None,
                 scale_lambda=False, outer_tol=0.01, inner_tol=1e-5,
                 max_outer=30, max_inner=100, center=True):
        self.n_components = n_components
        self.lam = lam
        self.rho1 = rho1
        self.rho2 = rho2
        self.scale_lambda = scale_lambda
        self.outer_tol = outer_tol
        self.inner_tol = inner_tol
        self.max_outer = max_outer
        self.max_inner = max_inner
        self.center = center

    def _firm_thresholds(self) -> FirmThresholds:
        if self.rho1 is None or self.rho2 is None:
            raise ValueError(
                f"{type(self).__name__} requires firm thresholds rho1 and rho2 "
                "(use rho1=0.0, rho2=1e12 for an inert pair)"
            )
        return FirmThresholds(float(self.rho1), float(self.rho2))

    def _run(self, Xc, svd, basis, lam_eff, t):
        self._outer_loop(Xc, svd, basis, lam_eff, t)

    def _pass(self, Xc, U, Z, Psi, Phi, basis, lam_eff, t) -> int:
        A = U.T @ U
        B = U.T @ Xc
        live = [k for k in range(A.shape[0]) if A[k, k] > DEAD_EPS]
        dead = A.shape[0] - len(live)
        for _ in range(self.max_inner):
            Z_prev = Z.copy()
            for k in live:
                phi_row, z_row = phi_row_descent_step(k, A, B, Z, basis.Zq,
                                                      lam_eff, basis)
                Phi[k] = phi_row
                Z[k] = z_row
            if _frob(Z - Z_prev) <= self.inner_tol:
                break
        Z[:] = firm(Z, t)
        A = Z @ Z.T
        B = Xc @ Z.T
        dead += self._psi_inner(U, Psi, A, B, basis)
        return dead


class DPCA2(_BaseFactorization):
    """Dissociative solver updating each (column, row) pair on residuals.

    For each component in turn, the residual with that component removed
    drives a fresh loading row (soft threshold, seed projection, firm
    threshold) and a fresh unit-norm column.  The component sweep is
    sequential by construction; dead components are reseeded on their
    seed column.
    """

    def __init__(self, n_components=8, lam=0.0, rho1=None, rho2=None,
                 scale_lambda=False, outer_tol=0.01, inner_tol=1e-5,
                 max_outer=30, max_inner=100, center=True):
        self.n_components = n_components
        self.lam = lam
        self.rho1 = rho1
        self.rho2 = rho2
        self.scale_lambda = scale_lambda
        self.outer_tol = outer_tol
        self.inner_tol = inner_tol
        self.max_outer = max_outer
        self.max_inner = max_inner
        self.center = center

    _firm_thresholds = DPCA1b._firm_thresholds

    def _run(self, Xc, svd, basis, lam_eff, t):
        self._outer_loop(Xc, svd, basis, lam_eff, t)

    def _pass(self, Xc, U, Z, Psi, Phi, basis, lam_eff, t) -> int:
        K = U.shape[1]
        dead = 0
        R = Xc - U @ Z
        for k in range(K):
            E_k = R + np.outer(U[:, k], Z[k])
            y = U[:, k] @ E_k
            phi_row = basis.phi_from_p_space(soft_adaptive(y, lam_eff))
            z_row = firm(phi_row @ basis.Zq, t)
            psi, u = psi_col_from_residual(E_k, basis.Uq, z_row, basis)
            if psi is None:
                dead += 1
                Psi[:, k] = 0.0
                Psi[k, k] = 1.0
                Phi[k] = 0.0
                Z[k] = 0.0
                U[:, k] = basis.Uq[:, k]
            else:
                Psi[:, k] = psi
                Phi[k] = phi_row
                Z[k] = z_row
                U[:, k] = u
            R = E_k - np.outer(U[:, k], Z[k])
        return dead


# ---------------------------------------------------------------------------
# Factorization persistence: a directory of CSV matrices plus a
# key=value meta file.
# ---------------------------------------------------------------------------

@dataclass(frozen=True)
class FactorizationRecord:
    U: np.ndarray
    Z: np.ndarray
    psi: np.ndarray
    phi: np.ndarray
    meta: dict


def save_factorization(directory, est: _BaseFactorization) -> None:
    os.makedirs(directory, exist_ok=True)
    save_matrix_csv(os.path.join(directory, "U.csv"), est.U_)
    save_matrix_csv(os.path.join(directory, "Z.csv"), est.Z_)
    save_matrix_csv(os.path.join(directory, "psi.csv"), est.psi_)
    save_matrix_csv(os.path.join(directory, "phi.csv"), est.phi_)
    meta = {
        "lambda": getattr(est, "lam", 0.0),
        "rho1": "" if getattr(est, "rho1", None) is None else est.rho1,
        "rho2": "" if getattr(est, "rho2", None) is None else est.rho2,
        "K": est.n_components_,
        "iterations_run": est.n_iter_,
        "converged": str(bool(est.converged_)).lower(),
        "explained_variance": format(est.explained_variance_pct_, ".12g"),
    }
    with open(os.path.join(directory, "meta"), "w", encoding="ascii") as fh:
        for key, val in meta.items():
            fh.write(f"{key}={val}\n")


def load_factorization(directory) -> FactorizationRecord:
    mats = {
        name: load_matrix_csv(os.path.join(directory, f"{name}.csv"))
        for name in ("U", "Z", "psi", "phi")
    }
    meta: dict = {}
    with open(os.path.join(directory, "meta"), "r", encoding="ascii") as fh:
        for line in fh:
            line = line.strip()
            if line:
                key, _, val = line.partition("=")
                meta[key] = val
    return FactorizationRecord(
        U=mats["U"], Z=mats["Z"], psi=mats["psi"], phi=mats["phi"], meta=meta
    )
