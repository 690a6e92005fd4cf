import itertools
from dataclasses import replace

import numpy as np
import pytest

from dpca.solvers import DPCA2
from dpca.synth import (
    Blob,
    SynthConfig,
    dct_time_course,
    fscore_maps,
    generate_scene,
    match_sources,
    moderate_overlap_config,
    render_blob,
    scene_for_trial,
    significant_overlap_config,
    export_scene,
)


def small_config(**overrides):
    blobs = (Blob(8.0, 8.0, 0.3, 0.8, 3.0), Blob(8.0, 24.0, 1.0, 0.7, 2.5),
             Blob(24.0, 8.0, 2.0, 0.9, 2.8), Blob(24.0, 24.0, 0.5, 0.6, 3.2))
    base = dict(n_sources=4, n_time=80, grid=32, dct_bases=(3, 7, 11, 15),
                spread=4.0, eta_t=0.3, eta_s=0.003, seed=0, blobs=blobs)
    base.update(overrides)
    return SynthConfig(**base)


class TestGenerateScene:
    def test_noiseless_single_source_is_rank_one(self):
        cfg = SynthConfig(n_sources=1, n_time=50, grid=16, dct_bases=(3,),
                          spread=4.0, eta_t=0.0, eta_s=0.0, seed=1,
                          blobs=(Blob(8.0, 8.0),))
        scene = generate_scene(cfg)
        np.testing.assert_allclose(
            scene.X, np.outer(scene.PC[:, 0], scene.LV[0]), atol=1e-12
        )
        assert np.linalg.matrix_rank(scene.X) == 1

    def test_default_dimensions(self):
        scene = generate_scene(moderate_overlap_config())
        assert scene.X.shape == (240, 4900)
        assert scene.PC.shape == (240, 8)
        assert scene.LV.shape == (8, 4900)
        assert scene.masks.shape == (8, 4900)

    def test_pc_standardization(self):
        scene = generate_scene(small_config())
        np.testing.assert_array_less(np.abs(scene.PC.mean(axis=0)), 1e-10)
        np.testing.assert_allclose(scene.PC.var(axis=0), 1.0, atol=1e-8)

    def test_mixture_model_construction(self):
        cfg = small_config()
        scene = generate_scene(cfg)
        rng = np.random.default_rng(cfg.seed)
        omega = rng.normal(0.0, np.sqrt(cfg.eta_t), size=scene.PC.shape)
        gamma = rng.normal(0.0, np.sqrt(cfg.eta_s), size=scene.LV.shape)
        expected = sum(
            np.outer(scene.PC[:, i] + omega[:, i], scene.LV[i] + gamma[i])
            for i in range(cfg.n_sources)
        )
        np.testing.assert_allclose(scene.X, expected, atol=1e-10)

    def test_seed_changes_noise_only(self):
        a = generate_scene(small_config(seed=1))
        b = generate_scene(small_config(seed=2))
        np.testing.assert_array_equal(a.PC, b.PC)
        np.testing.assert_array_equal(a.LV, b.LV)
        assert not np.array_equal(a.X, b.X)

    def test_deterministic_under_seed(self):
        a = generate_scene(small_config(seed=3))
        b = generate_scene(small_config(seed=3))
        np.testing.assert_array_equal(a.X, b.X)

    def test_scene_for_trial(self):
        cfg = small_config(seed=0)
        a = scene_for_trial(cfg, 9)
        b = generate_scene(replace(cfg, seed=9))
        np.testing.assert_array_equal(a.X, b.X)

    def test_masks_cover_blob_cores(self):
        scene = generate_scene(small_config())
        for i, blob in enumerate(scene.config.blobs):
            grid = scene.config.grid
            center = int(round(blob.row)) * grid + int(round(blob.col))
            assert scene.masks[i, center]
        # cutoff keeps roughly the 2-sigma ellipse, far less than the grid
        assert scene.masks.mean() < 0.5

    def test_config_validation(self):
        with pytest.raises(ValueError):
            small_config(dct_bases=(3, 7))
        with pytest.raises(ValueError):
            small_config(eta_t=-0.1)
        with pytest.raises(ValueError):
            small_config(blobs=(Blob(1, 1),))

    def test_presets(self):
        assert moderate_overlap_config().spread == 6.0
        assert significant_overlap_config().spread == 12.0


class TestDctTimeCourse:
    def test_orthogonality_of_distinct_bases(self):
        v3 = dct_time_course(3, 240)
        v11 = dct_time_course(11, 240)
        assert abs(v3 @ v11) / 240 < 1e-12

    def test_standardized(self):
        v = dct_time_course(7, 100)
        assert abs(v.mean()) < 1e-12
        np.testing.assert_allclose(v.var(), 1.0, rtol=1e-12)


class TestRenderBlob:
    def test_peak_at_center(self):
        img = render_blob(Blob(10.0, 20.0, amplitude=2.5), 4.0, 32).reshape(32, 32)
        assert img[10, 20] == img.max()
        np.testing.assert_allclose(img[10, 20], 2.5, rtol=1e-12)

    def test_anisotropy_follows_angle(self):
        img = render_blob(Blob(16.0, 16.0, angle=0.0, ratio=0.5), 6.0, 32)
        img = img.reshape(32, 32)
        # angle 0: major axis along rows, so decay along columns is faster
        assert img[24, 16] > img[16, 24]


class TestMatchSources:
    def test_recovers_permutation_and_signs(self):
        rng = np.random.default_rng(0)
        truth = rng.standard_normal((5, 40))
        perm = np.array([3, 0, 4, 1, 2])
        signs = np.array([1.0, -1.0, 1.0, -1.0, 1.0])
        recovered = signs[:, None] * truth[perm]
        m = match_sources(recovered, truth)
        np.testing.assert_allclose(m.correlations, 1.0, atol=1e-12)
        for j in range(5):
            assert perm[m.recovered_for_truth[j]] == j
        assert m.mean_correlation == pytest.approx(1.0)

    def test_matches_brute_force_for_small_k(self):
        rng = np.random.default_rng(1)
        truth = rng.standard_normal((4, 60))
        recovered = truth[[1, 0, 3, 2]] + 0.3 * rng.standard_normal((4, 60))
        m = match_sources(recovered, truth)

        def corr(a, b):
            a = a - a.mean()
            b = b - b.mean()
            return abs(a @ b) / (np.linalg.norm(a) * np.linalg.norm(b))

        best = max(
            sum(corr(recovered[p[j]], truth[j]) for j in range(4))
            for p in itertools.permutations(range(4))
        )
        np.testing.assert_allclose(m.correlations.sum(), best, rtol=1e-12)

    def test_noise_rows_score_near_zero(self):
        rng = np.random.default_rng(2)
        truth = generate_scene(moderate_overlap_config(seed=0)).LV
        recovered = rng.standard_normal(truth.shape)
        m = match_sources(recovered, truth)
        assert m.mean_correlation < 0.2

    def test_zero_variance_row_scores_zero(self):
        rng = np.random.default_rng(3)
        truth = rng.standard_normal((3, 30))
        recovered = truth.copy()
        recovered[1] = 5.0  # constant row: zero variance
        m = match_sources(recovered, truth)
        assert m.correlations.min() == 0.0

    def test_permutation_invariance(self):
        rng = np.random.default_rng(4)
        truth = rng.standard_normal((5, 50))
        recovered = truth + 0.5 * rng.standard_normal((5, 50))
        m1 = match_sources(recovered, truth)
        m2 = match_sources(recovered[[4, 3, 2, 1, 0]], truth)
        np.testing.assert_allclose(
            np.sort(m1.correlations), np.sort(m2.correlations), atol=1e-12
        )

    def test_sign_invariance(self):
        rng = np.random.default_rng(5)
        truth = rng.standard_normal((4, 50))
        recovered = truth + 0.5 * rng.standard_normal((4, 50))
        m1 = match_sources(recovered, truth)
        flipped = recovered.copy()
        flipped[2] *= -1.0
        m2 = match_sources(flipped, truth)
        np.testing.assert_allclose(m1.correlations, m2.correlations, atol=1e-12)

    def test_row_count_mismatch_rejected(self):
        with pytest.raises(ValueError):
            match_sources(np.ones((2, 10)), np.ones((3, 10)))


class TestFscoreMaps:
    def test_exact_match(self):
        truth = np.array([True, True, False, False])
        row = np.array([1.0, 0.9, 0.0, 0.0])
        assert fscore_maps(row, truth) == (1.0, 1.0, 1.0)

    def test_all_pixels_recovered(self):
        truth = np.zeros(10, dtype=bool)
        truth[:3] = True
        row = np.ones(10)
        p, r, f = fscore_maps(row, truth, binarize_rule=lambda v: v > 0.0)
        assert p == pytest.approx(0.3)
        assert r == 1.0

    def test_half_overlap(self):
        truth = np.zeros(8, dtype=bool)
        truth[:4] = True
        rec = np.zeros(8)
        rec[2:6] = 1.0  # two true positives, two false positives
        p, r, f = fscore_maps(rec, truth, binarize_rule=lambda v: v > 0.5)
        assert (p, r) == (0.5, 0.5)
        assert f == pytest.approx(0.5)

    def test_empty_recovery_scores_zero(self):
        truth = np.array([True, False])
        assert fscore_maps(np.zeros(2), truth) == (0.0, 0.0, 0.0)

    def test_empty_truth_rejected(self):
        with pytest.raises(ValueError):
            fscore_maps(np.ones(4), np.zeros(4, dtype=bool))

    def test_fractional_rule(self):
        row = np.array([10.0, 6.0, 4.0, 0.0])
        truth = np.array([True, True, False, False])
        p, r, f = fscore_maps(row, truth, binarize_rule=0.5)
        assert (p, r, f) == (1.0, 1.0, 1.0)


class TestNoiselessIdentifiability:
    def test_disjoint_blobs_recovered_nearly_exactly(self):
        # non-overlapping supports, no noise: small-penalty recovery is
        # essentially perfect
        blobs = (Blob(6.0, 6.0, 0.0, 1.0, 3.0), Blob(6.0, 26.0, 0.0, 1.0, 2.4),
                 Blob(26.0, 6.0, 0.0, 1.0, 2.8), Blob(26.0, 26.0, 0.0, 1.0, 2.1))
        cfg = SynthConfig(n_sources=4, n_time=80, grid=32,
                          dct_bases=(3, 7, 11, 15), spread=2.0,
                          spread_jitter_var=0.0, eta_t=0.0, eta_s=0.0,
                          seed=0, blobs=blobs)
        scene = generate_scene(cfg)
        est = DPCA2(4, lam=0.05, scale_lambda=True, rho1=1e-4, rho2=1e-3,
                    max_outer=30).fit(scene.X)
        m = match_sources(est.Z_, scene.LV)
        assert m.correlations.min() >= 0.99


class TestRecoveryOrdering:
    def test_dpca1a_beats_plain_pca_on_one_trial(self):
        from dpca.solvers import DPCA1a, PlainPCA

        scene = generate_scene(moderate_overlap_config(seed=0))
        sparse = DPCA1a(8, lam=0.67, scale_lambda=True, max_outer=30).fit(scene.X)
        plain = PlainPCA(8).fit(scene.X)
        c_sparse = match_sources(sparse.Z_, scene.LV).mean_correlation
        c_plain = match_sources(plain.Z_, scene.LV).mean_correlation
        assert c_sparse >= c_plain

    @pytest.mark.slow
    def test_mean_correlation_bands_over_15_trials(self):
        # reference bands for the firm-threshold solvers on the shipped
        # preset: 0.942 +/- 0.05 and 0.939 +/- 0.05
        from dpca.solvers import DPCA1b

        kw = dict(lam=0.67, scale_lambda=True, rho1=0.12, rho2=0.24,
                  max_outer=30)
        corrs_b, corrs_2 = [], []
        for seed in range(15):
            scene = generate_scene(moderate_overlap_config(seed=seed))
            corrs_b.append(match_sources(
                DPCA1b(8, **kw).fit(scene.X).Z_, scene.LV).mean_correlation)
            corrs_2.append(match_sources(
                DPCA2(8, **kw).fit(scene.X).Z_, scene.LV).mean_correlation)
        assert 0.942 - 0.05 <= np.mean(corrs_b) <= 0.942 + 0.05
        assert 0.939 - 0.05 <= np.mean(corrs_2) <= 0.939 + 0.05


class TestSceneExport:
    def test_export_files(self, tmp_path):
        scene = generate_scene(small_config())
        export_scene(tmp_path / "scene", scene)
        base = tmp_path / "scene"
        for name in ("X.csv", "PC.csv", "LV.csv", "manifest"):
            assert (base / name).exists()
        for i in range(4):
            assert (base / f"lv_{i}.pgm").exists()
        manifest = (base / "manifest").read_text()
        assert "n_sources=4" in manifest
        assert "dct_bases=3,7,11,15" in manifest

    def test_export_round_trips_matrix(self, tmp_path):
        from dpca.linalg import load_matrix_csv

        scene = generate_scene(small_config())
        export_scene(tmp_path / "s", scene)
        np.testing.assert_array_equal(load_matrix_csv(tmp_path / "s" / "X.csv"), scene.X)
