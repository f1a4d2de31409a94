import math

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st
from hypothesis.extra.numpy import arrays

from onebitcs.errors import InvalidArgumentError
from onebitcs.measure import (
    MeasurementEnsemble,
    NoiseSpec,
    gaussian_matrix,
    geodesic_dist,
    geodesic_dist_rows,
    hamming_dist,
    load_matrix,
    load_matrix_text,
    noisy_sign_measure,
    save_matrix,
    sign,
    sign_measure,
)

finite = st.floats(-1e3, 1e3, allow_nan=False, allow_infinity=False)


def unit(v):
    v = np.asarray(v, dtype=float)
    return v / np.linalg.norm(v)


class TestGaussianMatrix:
    def test_same_seed_same_matrix(self):
        a, b = gaussian_matrix(3, 2, 7), gaussian_matrix(3, 2, 7)
        assert np.array_equal(a.entries, b.entries)
        assert a.seed == 7 and a.shape == (3, 2)

    def test_different_seed_differs(self):
        assert not np.array_equal(gaussian_matrix(3, 2, 7).entries, gaussian_matrix(3, 2, 8).entries)

    def test_norm_preserved_for_fixed_unit_vector(self):
        x = unit(np.arange(1, 51))
        A = gaussian_matrix(1000, 50, 1).entries
        assert 0.7 <= np.sum((A @ x) ** 2) / 1000 <= 1.3

    def test_sample_mean_near_zero(self):
        assert abs(gaussian_matrix(10_000, 1, 3).entries.mean()) <= 0.05

    def test_entry_variance_near_one(self):
        assert abs(gaussian_matrix(500, 200, 4).entries.var() - 1.0) < 0.02

    @pytest.mark.parametrize("m,n", [(0, 3), (3, 0), (-1, 2)])
    def test_zero_dimension_rejected(self, m, n):
        with pytest.raises(InvalidArgumentError):
            gaussian_matrix(m, n, 0)

    def test_entries_are_read_only(self):
        A = gaussian_matrix(2, 2, 0)
        with pytest.raises(ValueError):
            A.entries[0, 0] = 1.0


class TestSign:
    def test_hand_evaluation(self):
        assert sign_measure(np.array([[1.0, 0.0], [0.0, -1.0]]), [1.0, 1.0]).tolist() == [1, -1]

    def test_zero_maps_to_plus_one(self):
        assert sign_measure(np.array([[0.0, 0.0]]), [1.0, 1.0]).tolist() == [1]
        assert sign(np.array([0.0, -0.0])).tolist() == [1, 1]

    def test_dimension_mismatch(self):
        with pytest.raises(InvalidArgumentError):
            sign_measure(np.eye(3), [1.0, 2.0])

    def test_batched(self):
        A = gaussian_matrix(5, 3, 1)
        X = np.random.default_rng(0).standard_normal((4, 3))
        assert np.array_equal(sign_measure(A, X), np.stack([sign_measure(A, x) for x in X]))

    @given(arrays(np.float64, 6, elements=finite), st.floats(1e-3, 1e3))
    def test_positive_scale_invariance(self, x, c):
        A = gaussian_matrix(20, 6, 11)
        assert np.array_equal(sign_measure(A, c * x), sign_measure(A, x))

    @given(arrays(np.float64, 6, elements=st.floats(-10, 10).filter(lambda v: abs(v) > 1e-3)))
    def test_negation_equivariance(self, x):
        A = gaussian_matrix(20, 6, 12)
        assert np.all(A.entries @ x != 0)
        assert np.array_equal(sign_measure(A, -x), -sign_measure(A, x))

    @given(arrays(np.float64, 6, elements=finite))
    def test_only_plus_minus_one(self, x):
        b = sign_measure(gaussian_matrix(15, 6, 13), x)
        assert b.dtype == np.int8 and set(np.unique(b)) <= {-1, 1}


class TestNoise:
    def test_zero_sigma_matches_clean(self):
        A, x = gaussian_matrix(50, 4, 2), unit([1, 2, 3, 4])
        assert np.array_equal(noisy_sign_measure(A, x, NoiseSpec.gaussian(0.0, seed=3)), sign_measure(A, x))

    def test_kind_none(self):
        A, x = gaussian_matrix(50, 4, 2), unit([1, 2, 3, 4])
        assert np.array_equal(noisy_sign_measure(A, x, NoiseSpec.none()), sign_measure(A, x))

    def test_certain_flip_negates(self):
        A, x = gaussian_matrix(50, 4, 2), unit([1, -2, 3, 4])
        assert np.array_equal(noisy_sign_measure(A, x, NoiseSpec.sign_flip(1.0, seed=5)), -sign_measure(A, x))

    def test_gaussian_flip_rate_within_bound(self):
        A, x = gaussian_matrix(10_000, 5, 4), unit([1, 1, 0, -1, 2])
        d = hamming_dist(noisy_sign_measure(A, x, NoiseSpec.gaussian(0.2, seed=9)), sign_measure(A, x))
        assert d <= 0.2 / 2 + 0.05
        # with unit x each row flips with probability arctan(sigma) / pi
        assert abs(d - math.atan(0.2) / math.pi) < 4 * math.sqrt(0.07 / 10_000)

    def test_flip_rate_matches_p(self):
        A, x = gaussian_matrix(20_000, 3, 4), unit([1, 2, 3])
        d = hamming_dist(noisy_sign_measure(A, x, NoiseSpec.sign_flip(0.1, seed=1)), sign_measure(A, x))
        assert abs(d - 0.1) < 4 * math.sqrt(0.09 / 20_000)

    def test_seeded(self):
        A, x = gaussian_matrix(100, 3, 4), unit([1, 2, 3])
        noise = NoiseSpec.sign_flip(0.3, seed=8)
        assert np.array_equal(noisy_sign_measure(A, x, noise), noisy_sign_measure(A, x, noise))

    @pytest.mark.parametrize("kw", [{"kind": "laplace"}, {"kind": "gaussian", "sigma": -1.0}, {"kind": "sign_flip", "p": 1.5}])
    def test_invalid_specs(self, kw):
        with pytest.raises(InvalidArgumentError):
            NoiseSpec(**kw)


class TestHamming:
    def test_examples(self):
        b = np.array([1, 1, -1, 1])
        assert hamming_dist(b, b) == 0.0
        assert hamming_dist(b, -b) == 1.0
        assert hamming_dist(b, np.array([1, -1, -1, -1])) == 0.5

    def test_length_mismatch(self):
        with pytest.raises(InvalidArgumentError):
            hamming_dist(np.ones(3), np.ones(4))

    def test_rowwise(self):
        B1 = np.array([[1, 1], [1, -1]])
        B2 = np.array([[1, -1], [-1, 1]])
        assert hamming_dist(B1, B2).tolist() == [0.5, 1.0]


class TestGeodesic:
    def test_examples(self):
        x, s = np.array([1.0, 0.0]), np.array([0.0, 1.0])
        assert geodesic_dist(x, x) == 0.0
        assert geodesic_dist(x, s) == pytest.approx(0.5, abs=1e-15)
        assert geodesic_dist(x, -x) == 1.0

    def test_nearly_identical_vectors(self):
        x = unit([1.0, 1e-9, 0.0])
        assert geodesic_dist(x, x) == pytest.approx(0.0, abs=1e-7)

    def test_non_unit_rejected(self):
        with pytest.raises(InvalidArgumentError):
            geodesic_dist(np.array([1.0 + 1e-6, 0.0]), np.array([1.0, 0.0]))

    def test_tolerance_accepts_tiny_drift(self):
        assert geodesic_dist(np.array([1.0 + 5e-10, 0.0]), np.array([0.0, 1.0])) == pytest.approx(0.5)

    @settings(max_examples=200)
    @given(arrays(np.float64, 5, elements=st.floats(-1, 1)), arrays(np.float64, 5, elements=st.floats(-1, 1)))
    def test_sandwich(self, x, s):
        if np.linalg.norm(x) < 1e-3 or np.linalg.norm(s) < 1e-3:
            return
        x, s = unit(x), unit(s)
        d = geodesic_dist(x, s)
        l2 = np.linalg.norm(x - s)
        assert 0.0 <= d <= 1.0
        assert l2 / np.pi <= d + 1e-12 and d <= l2 / 2 + 1e-12

    def test_rows_match_scalar(self):
        rng = np.random.default_rng(0)
        X = rng.standard_normal((10, 4))
        S = rng.standard_normal((10, 4))
        X /= np.linalg.norm(X, axis=1, keepdims=True)
        S /= np.linalg.norm(S, axis=1, keepdims=True)
        assert np.allclose(geodesic_dist_rows(X, S), [geodesic_dist(x, s) for x, s in zip(X, S)], atol=1e-15, rtol=0)

    def test_matches_arccos_away_from_endpoints(self):
        rng = np.random.default_rng(1)
        for _ in range(200):
            x, s = unit(rng.standard_normal(6)), unit(rng.standard_normal(6))
            assert geodesic_dist(x, s) == pytest.approx(math.acos(float(x @ s)) / math.pi, abs=1e-12)

    def test_identical_and_antipodal_exact(self):
        x = unit(np.ones(5))
        assert geodesic_dist(x, x) == 0.0
        assert geodesic_dist(x, -x) == 1.0


def test_hamming_is_binomial_mean_of_geodesic():
    # for fixed x, s the Hamming distance over m rows has mean d_S; 95% of
    # seeds must fall within 4 binomial standard errors
    rng = np.random.default_rng(5)
    x, s = unit(rng.standard_normal(8)), unit(rng.standard_normal(8))
    d, m = geodesic_dist(x, s), 2000
    se = math.sqrt(d * (1 - d) / m)
    hits = sum(abs(hamming_dist(sign_measure(A, x), sign_measure(A, s)) - d) <= 4 * se for A in (gaussian_matrix(m, 8, seed) for seed in range(100)))
    assert hits >= 95


class TestMatrixFiles:
    def test_binary_round_trip(self, tmp_path):
        A = gaussian_matrix(4, 3, 12345)
        save_matrix(A, tmp_path / "a.bin")
        B = load_matrix(tmp_path / "a.bin")
        assert np.array_equal(A.entries, B.entries) and B.seed == 12345

    def test_layout(self, tmp_path):
        save_matrix(np.array([[1.0, 2.0]]), tmp_path / "a.bin")
        raw = (tmp_path / "a.bin").read_bytes()
        assert raw[:8] == b"OBCSMAT1"
        assert int.from_bytes(raw[8:16], "little") == 1 and int.from_bytes(raw[16:24], "little") == 2
        assert raw[24:32] == b"\xff" * 8
        assert np.frombuffer(raw[32:], "<f8").tolist() == [1.0, 2.0]
        assert load_matrix(tmp_path / "a.bin").seed is None

    def test_bad_magic(self, tmp_path):
        (tmp_path / "x.bin").write_bytes(b"NOTAMAT!" + bytes(24))
        with pytest.raises(InvalidArgumentError):
            load_matrix(tmp_path / "x.bin")

    def test_truncated(self, tmp_path):
        save_matrix(gaussian_matrix(3, 3, 0), tmp_path / "a.bin")
        raw = (tmp_path / "a.bin").read_bytes()
        (tmp_path / "a.bin").write_bytes(raw[:-8])
        with pytest.raises(InvalidArgumentError):
            load_matrix(tmp_path / "a.bin")

    def test_text_loader(self, tmp_path):
        (tmp_path / "a.txt").write_text("# two rows\n1 2 3\n4 5 6\n")
        A = load_matrix_text(tmp_path / "a.txt")
        assert isinstance(A, MeasurementEnsemble) and A.entries.tolist() == [[1, 2, 3], [4, 5, 6]]
