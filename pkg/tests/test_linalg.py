import numpy as np
import pytest

from dpca.linalg import (
    as_matrix,
    center_columns,
    load_matrix_bin,
    load_matrix_csv,
    pinv,
    save_matrix_bin,
    save_matrix_csv,
    truncated_svd,
)


def gram_eigen_svd(X, k):
    """Brute-force oracle: eigendecomposition of the Gram matrix X^T X.

    Independent of the LAPACK SVD route used by truncated_svd.
    """
    X = np.asarray(X, dtype=np.float64)
    evals, W = np.linalg.eigh(X.T @ X)
    order = np.argsort(evals)[::-1]
    evals, W = evals[order], W[:, order]
    d = np.sqrt(np.clip(evals, 0.0, None))
    keep = min(k, int(np.sum(d > 1e-12 * max(d[0], 1e-300))))
    d, W = d[:keep], W[:, :keep]
    U = X @ W / d
    return U, d, W.T


class TestCenterColumns:
    def test_two_point_column(self):
        Xc, mu = center_columns(np.array([[1.0], [3.0]]))
        np.testing.assert_allclose(Xc, [[-1.0], [1.0]])
        np.testing.assert_allclose(mu, [2.0])

    def test_zero_column_unchanged(self):
        Xc, mu = center_columns(np.zeros((4, 2)))
        assert np.all(Xc == 0.0)
        assert np.all(mu == 0.0)

    def test_random_column_sums_vanish(self):
        rng = np.random.default_rng(5)
        X = rng.standard_normal((5, 3)) * 10
        Xc, mu = center_columns(X)
        # direct summation oracle
        np.testing.assert_array_less(np.abs(Xc.sum(axis=0)), 1e-10)
        np.testing.assert_allclose(Xc + mu, X)

    def test_rejects_non_finite(self):
        X = np.ones((3, 3))
        X[1, 2] = np.nan
        with pytest.raises(ValueError, match="non-finite"):
            center_columns(X)

    def test_column_mean_tolerance_scales(self):
        rng = np.random.default_rng(6)
        X = rng.standard_normal((50, 4)) * 1e6
        Xc, _ = center_columns(X)
        scale = np.abs(X).max(axis=0) + 1.0
        assert np.all(np.abs(Xc.mean(axis=0)) <= 1e-10 * scale)


class TestTruncatedSvd:
    def test_diagonal_matrix(self):
        f = truncated_svd(np.diag([3.0, 2.0, 1.0]), 3)
        np.testing.assert_allclose(f.d, [3.0, 2.0, 1.0])
        np.testing.assert_allclose(np.abs(f.U), np.eye(3), atol=1e-12)
        np.testing.assert_allclose(np.abs(f.Z), np.eye(3), atol=1e-12)
        # sign convention: the dominant entry of each left vector is positive
        assert np.all(f.U[np.abs(f.U).argmax(axis=0), np.arange(3)] > 0)

    def test_rank_one_outer_product(self):
        rng = np.random.default_rng(0)
        a, b = rng.standard_normal(7), rng.standard_normal(5)
        f = truncated_svd(np.outer(a, b), 1)
        assert f.rank == 1
        np.testing.assert_allclose(
            f.d[0], np.linalg.norm(a) * np.linalg.norm(b), rtol=1e-12
        )

    def test_matches_gram_eigen_oracle(self):
        rng = np.random.default_rng(1)
        X = rng.standard_normal((8, 6))
        f = truncated_svd(X, 6)
        U, d, Zt = gram_eigen_svd(X, 6)
        np.testing.assert_allclose(f.d, d, rtol=1e-8)
        recon = f.U @ np.diag(f.d) @ f.Z
        recon_oracle = U @ np.diag(d) @ Zt
        np.testing.assert_allclose(recon, recon_oracle, atol=1e-8)
        np.testing.assert_allclose(recon, X, atol=1e-8)

    def test_orthonormality_invariants(self):
        rng = np.random.default_rng(2)
        X = rng.standard_normal((20, 12))
        f = truncated_svd(X, 5)
        assert np.linalg.norm(f.U.T @ f.U - np.eye(5)) <= 1e-8
        assert np.linalg.norm(f.Z @ f.Z.T - np.eye(5)) <= 1e-8
        assert np.all(np.diff(f.d) <= 0) and np.all(f.d > 0)

    def test_rank_deficient_reports_achieved_rank(self):
        rng = np.random.default_rng(3)
        X = rng.standard_normal((10, 3)) @ rng.standard_normal((3, 8))
        f = truncated_svd(X, 6)
        assert f.rank == 3

    def test_eckart_young_up_to_10x10(self):
        rng = np.random.default_rng(4)
        for _ in range(20):
            n, p = rng.integers(2, 11, size=2)
            k = int(rng.integers(1, min(n, p) + 1))
            X = rng.standard_normal((n, p))
            f = truncated_svd(X, k)
            err = np.linalg.norm(X - f.U @ np.diag(f.d) @ f.Z)
            _, d_full, _ = gram_eigen_svd(X, min(n, p))
            tail = np.sqrt(np.sum(d_full[f.rank:] ** 2))
            np.testing.assert_allclose(err, tail, atol=1e-8)

    def test_deterministic(self):
        rng = np.random.default_rng(7)
        X = rng.standard_normal((9, 9))
        f1 = truncated_svd(X, 4)
        f2 = truncated_svd(X.copy(), 4)
        assert np.array_equal(f1.U, f2.U)
        assert np.array_equal(f1.d, f2.d)
        assert np.array_equal(f1.Z, f2.Z)

    def test_zero_matrix_rejected(self):
        with pytest.raises(ValueError, match="zero"):
            truncated_svd(np.zeros((4, 4)), 2)

    def test_bad_component_count(self):
        with pytest.raises(ValueError):
            truncated_svd(np.eye(3), 0)
        with pytest.raises(ValueError):
            truncated_svd(np.eye(3), 4)


class TestPinv:
    def test_identity(self):
        np.testing.assert_allclose(pinv(np.eye(4)), np.eye(4), atol=1e-12)

    def test_singular_diagonal(self):
        np.testing.assert_allclose(
            pinv(np.diag([2.0, 0.0])), np.diag([0.5, 0.0]), atol=1e-12
        )

    def test_well_conditioned_matches_inverse(self):
        rng = np.random.default_rng(8)
        M = rng.standard_normal((4, 4)) + 4 * np.eye(4)
        np.testing.assert_allclose(pinv(M), np.linalg.inv(M), atol=1e-8)

    def test_moore_penrose_conditions(self):
        rng = np.random.default_rng(9)
        M = rng.standard_normal((5, 5))
        M[:, 2] = M[:, 1]  # rank deficient
        P = pinv(M)
        assert np.linalg.norm(M @ P @ M - M) <= 1e-8
        assert np.linalg.norm(P @ M @ P - P) <= 1e-8
        assert np.linalg.norm((M @ P).T - M @ P) <= 1e-8
        assert np.linalg.norm((P @ M).T - P @ M) <= 1e-8


class TestSerialization:
    def test_csv_round_trip(self, tmp_path):
        rng = np.random.default_rng(10)
        M = rng.standard_normal((5, 7)) * 1e3
        path = tmp_path / "m.csv"
        save_matrix_csv(path, M)
        np.testing.assert_array_equal(load_matrix_csv(path), M)

    def test_csv_has_no_header_and_dot_decimal(self, tmp_path):
        path = tmp_path / "m.csv"
        save_matrix_csv(path, np.array([[1.5, -2.0]]))
        text = path.read_text()
        assert text.splitlines()[0] == "1.5,-2"

    def test_binary_round_trip(self, tmp_path):
        rng = np.random.default_rng(11)
        M = rng.standard_normal((6, 4))
        path = tmp_path / "m.bin"
        save_matrix_bin(path, M)
        np.testing.assert_array_equal(load_matrix_bin(path), M)

    def test_binary_header_layout(self, tmp_path):
        path = tmp_path / "m.bin"
        save_matrix_bin(path, np.arange(6.0).reshape(2, 3))
        raw = path.read_bytes()
        assert raw[:8] == (2).to_bytes(4, "little") + (3).to_bytes(4, "little")
        assert len(raw) == 8 + 6 * 8

    def test_truncated_binary_rejected(self, tmp_path):
        path = tmp_path / "m.bin"
        save_matrix_bin(path, np.ones((3, 3)))
        path.write_bytes(path.read_bytes()[:-8])
        with pytest.raises(ValueError):
            load_matrix_bin(path)


def test_as_matrix_rejects_1d():
    with pytest.raises(ValueError, match="2-D"):
        as_matrix(np.arange(3.0))
