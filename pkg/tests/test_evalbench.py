import numpy as np
import pytest
import scipy.linalg
from hypothesis import given, settings
from hypothesis import strategies as st

from vidadapt.errors import DimensionError, UsageError
from vidadapt.evalbench import (ClipFeatureExtractor, FeatureSet, FrameFeatureExtractor, bench_attention,
                                frame_consistency, frechet_distance, make_report)
from vidadapt.lsa import attention_cost
from vidadapt.toyworld import SceneSpec, synth_video


def scipy_frechet(a, b):
    covmean = scipy.linalg.sqrtm(a.sigma @ b.sigma).real
    d = a.mu - b.mu
    return float(d @ d + np.trace(a.sigma + b.sigma - 2 * covmean))


def _fs(mu, sigma, n=10):
    return FeatureSet(np.asarray(mu, float), np.asarray(sigma, float), n)


class TestFrechet:
    def test_identical_is_zero(self):
        feats = np.random.default_rng(0).standard_normal((50, 6))
        a = FeatureSet.from_features(feats)
        assert frechet_distance(a, a) == pytest.approx(0, abs=1e-6)

    def test_mean_shift(self):
        feats = np.random.default_rng(1).standard_normal((40, 5))
        delta = np.array([0.3, -1.0, 2.0, 0.0, 0.5])
        d = frechet_distance(FeatureSet.from_features(feats), FeatureSet.from_features(feats + delta))
        assert d == pytest.approx(delta @ delta, abs=1e-6)

    def test_diagonal_closed_form(self):
        a, b = _fs([0, 0], np.diag([1.0, 4.0])), _fs([0, 0], np.diag([9.0, 1.0]))
        # sum (sqrt(a_i) - sqrt(b_i))^2
        assert frechet_distance(a, b) == pytest.approx((1 - 3) ** 2 + (2 - 1) ** 2, abs=1e-9)

    @settings(max_examples=30, deadline=None)
    @given(st.integers(0, 10_000), st.integers(2, 6))
    def test_matches_scipy(self, seed, dim):
        rng = np.random.default_rng(seed)
        a = FeatureSet.from_features(rng.standard_normal((3 * dim, dim)))
        b = FeatureSet.from_features(rng.standard_normal((3 * dim, dim)) * 2 + 1)
        assert frechet_distance(a, b) == pytest.approx(scipy_frechet(a, b), rel=1e-6, abs=1e-8)
        assert frechet_distance(a, b) == pytest.approx(frechet_distance(b, a), rel=1e-6, abs=1e-8)

    def test_covariance_unbiased(self):
        feats = np.random.default_rng(2).standard_normal((7, 3))
        np.testing.assert_allclose(FeatureSet.from_features(feats).sigma, np.cov(feats.T, ddof=1))

    def test_errors(self):
        with pytest.raises(UsageError):
            FeatureSet.from_features(np.zeros((1, 3)))
        with pytest.raises(DimensionError):
            frechet_distance(_fs([0], [[1]]), _fs([0, 0], np.eye(2)))


class TestFeatures:
    def test_clip_features_shape(self):
        v = synth_video(SceneSpec(), seed=0).pixels
        assert ClipFeatureExtractor()(v).shape == (4, 64)

    def test_distance_separates_backgrounds(self):
        ext = ClipFeatureExtractor()
        make = lambda bg, s: synth_video(SceneSpec("square", "red", "right", background=bg), seed=s).pixels
        black = ext.feature_set([make("black", s) for s in range(6)])
        black2 = ext.feature_set([make("black", s) for s in range(6, 12)])
        white = ext.feature_set([make("white", s) for s in range(6)])
        assert frechet_distance(black, black2) < frechet_distance(black, white)


class TestConsistency:
    def test_identical_frames(self):
        frame = np.random.default_rng(0).random((3, 32, 32))
        assert frame_consistency(np.repeat(frame[None], 8, 0)) == pytest.approx(1.0, abs=1e-6)

    def test_static_beats_scrambled(self):
        rng = np.random.default_rng(3)
        for seed in range(5):
            clip = synth_video(SceneSpec("circle", "yellow", "static", background="noise"), seed=seed).pixels
            scrambled = clip.copy()
            for i in range(len(clip)):
                perm = rng.permutation(32 * 32)
                scrambled[i] = clip[i].reshape(3, -1)[:, perm].reshape(3, 32, 32)
            assert frame_consistency(clip) > frame_consistency(scrambled)

    def test_needs_two_frames(self):
        with pytest.raises(UsageError):
            frame_consistency(np.zeros((1, 3, 8, 8)))

    def test_extractor_deterministic(self):
        v = np.random.default_rng(4).random((3, 3, 16, 16))
        np.testing.assert_array_equal(FrameFeatureExtractor()(v), FrameFeatureExtractor()(v))


def test_bench_table():
    table = bench_attention([2, 4], N=8, d=4, repeats=1)
    for variant in ("global_st", "lsa"):
        assert [r["L"] for r in table[variant]] == [2, 4]
        for r in table[variant]:
            assert r["macs"] == attention_cost(r["L"], 8, 4, variant) and r["wallclock_ms"] > 0


def test_report_fields():
    rep = make_report("m", 1.5, {"k": 1}, 7)
    assert set(rep) == {"metric", "value", "config", "commit", "seed"}
