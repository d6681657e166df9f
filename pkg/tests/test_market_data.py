import numpy as np
import pytest

from errors import ContractViolation, ReturnsParseError
from market_data import (
    CovarianceEstimate,
    ReturnsMatrix,
    demean,
    generate_synthetic_returns,
    load_returns,
    load_returns_file,
    mean_returns,
    random_factor_model,
    read_matrix_csv,
    sample_covariance,
    save_returns,
    write_matrix_csv,
)


class TestLoadReturns:
    """CSV parsing: header of tickers, one time sample per row"""

    def test_two_by_two(self):
        X = load_returns(b"A,B\n1,2\n3,4\n")
        assert X.tickers == ["A", "B"]
        assert X.demeaned is False
        np.testing.assert_array_equal(X.values, [[1.0, 3.0], [2.0, 4.0]])

    def test_crlf_and_bom_accepted(self):
        X = load_returns(b"\xef\xbb\xbfA,B\r\n0.5,-1\r\n")
        assert X.tickers == ["A", "B"]
        np.testing.assert_array_equal(X.values, [[0.5], [-1.0]])

    def test_short_row_names_location(self):
        with pytest.raises(ReturnsParseError) as info:
            load_returns(b"A,B\n1,2\n3\n")
        assert info.value.row == 3
        assert info.value.column == 2
        assert info.value.exit_code == 2

    def test_long_row_is_ragged(self):
        with pytest.raises(ReturnsParseError, match="ragged"):
            load_returns(b"A,B\n1,2,3\n")

    def test_non_numeric_field(self):
        with pytest.raises(ReturnsParseError, match="non-numeric") as info:
            load_returns(b"A,B\n1,2\n3,abc\n")
        assert (info.value.row, info.value.column) == (3, 2)

    def test_non_finite_field(self):
        with pytest.raises(ReturnsParseError, match="non-finite"):
            load_returns(b"A,B\n1,inf\n")

    def test_header_only_has_no_samples(self):
        with pytest.raises(ReturnsParseError, match="no samples"):
            load_returns(b"A,B\n")

    def test_empty_file(self):
        with pytest.raises(ReturnsParseError, match="empty file"):
            load_returns(b"")

    def test_blank_line_is_rejected_at_its_row(self):
        with pytest.raises(ReturnsParseError, match="blank line") as info:
            load_returns(b"A,B\n1,2\n\n3,abc\n")
        assert info.value.row == 3

    def test_trailing_blank_lines_accepted(self):
        X = load_returns(b"A,B\n1,2\n3,4\n\n\n")
        assert X.N == 2

    def test_missing_file_is_a_parse_error(self, tmp_path):
        with pytest.raises(ReturnsParseError, match="cannot read") as info:
            load_returns_file(str(tmp_path / "absent.csv"))
        assert info.value.exit_code == 2

    def test_round_trip_is_bit_identical(self, tmp_path, rng):
        X = ReturnsMatrix(values=rng.standard_normal((100, 50)) * 1e-3,
                          tickers=[f"T{i}" for i in range(100)])
        path = tmp_path / "returns.csv"
        save_returns(X, str(path))
        back = load_returns_file(str(path))
        assert back.tickers == X.tickers
        np.testing.assert_array_equal(back.values, X.values)


class TestMatrixCsv:
    def test_header_round_trip(self, tmp_path, rng):
        M = rng.standard_normal((3, 3))
        path = tmp_path / "m.csv"
        write_matrix_csv(M, str(path), header=["a", "b", "c"])
        back, names = read_matrix_csv(str(path), header=True)
        assert names == ["a", "b", "c"]
        np.testing.assert_array_equal(back, M)

    def test_headerless(self, tmp_path):
        path = tmp_path / "m.csv"
        write_matrix_csv(np.array([[1.0, 2.0]]), str(path))
        assert path.read_text() == "1,2\n"
        back, names = read_matrix_csv(str(path))
        assert names is None
        np.testing.assert_array_equal(back, [[1.0, 2.0]])

    def test_missing_file_is_a_parse_error(self, tmp_path):
        with pytest.raises(ReturnsParseError, match="cannot read"):
            read_matrix_csv(str(tmp_path / "absent.csv"), header=True)


class TestEstimators:
    def test_demean_zeroes_row_sums(self, rng):
        X = demean(ReturnsMatrix(values=rng.normal(0.3, 1.0, size=(5, 40))))
        assert X.demeaned
        np.testing.assert_allclose(X.values.sum(axis=1), 0.0, atol=1e-9 * X.N)

    def test_demeaned_identity_covariance(self):
        # zero-mean per convention, demeaning skipped
        X = ReturnsMatrix(values=np.eye(2), demeaned=True)
        S = sample_covariance(X)
        assert S.provenance == "sample"
        np.testing.assert_array_equal(S.matrix, 0.5 * np.eye(2))

    def test_raw_identity_is_demeaned_first(self):
        S = sample_covariance(demean(ReturnsMatrix(values=np.eye(2))))
        np.testing.assert_allclose(S.matrix, [[0.25, -0.25], [-0.25, 0.25]])

    def test_covariance_needs_demeaned_input(self):
        with pytest.raises(ContractViolation, match="demean"):
            sample_covariance(ReturnsMatrix(values=np.eye(2)))

    def test_mean_rejects_demeaned_input(self):
        with pytest.raises(ContractViolation):
            mean_returns(ReturnsMatrix(values=np.eye(2), demeaned=True))

    def test_mean_returns(self):
        mu = mean_returns(ReturnsMatrix(values=[[1.0, 3.0], [0.0, -2.0]]))
        np.testing.assert_array_equal(mu.mu, [2.0, -1.0])

    def test_covariance_is_symmetric_psd(self, rng):
        S = sample_covariance(demean(ReturnsMatrix(values=rng.standard_normal((30, 10)))))
        np.testing.assert_array_equal(S.matrix, S.matrix.T)
        assert np.linalg.eigvalsh(S.matrix)[0] >= -1e-8 * np.linalg.eigvalsh(S.matrix)[-1]

    def test_demean_is_idempotent(self, rng):
        once = demean(ReturnsMatrix(values=rng.normal(0.3, 1.0, size=(5, 40))))
        twice = demean(once)
        np.testing.assert_allclose(twice.values, once.values, atol=1e-12)

    def test_covariance_ignores_sample_order(self, rng):
        X = demean(ReturnsMatrix(values=rng.standard_normal((6, 25))))
        shuffled = ReturnsMatrix(values=X.values[:, rng.permutation(X.N)], demeaned=True)
        np.testing.assert_allclose(sample_covariance(shuffled).matrix, sample_covariance(X).matrix,
                                   rtol=1e-12, atol=1e-14)


class TestCovarianceEstimate:
    def test_rejects_asymmetric(self):
        with pytest.raises(ContractViolation, match="symmetric"):
            CovarianceEstimate(matrix=np.array([[1.0, 0.1], [0.0, 1.0]]))

    def test_rejects_indefinite(self):
        with pytest.raises(ContractViolation, match="PSD"):
            CovarianceEstimate(matrix=np.array([[1.0, 2.0], [2.0, 1.0]]))

    def test_rejects_unknown_provenance(self):
        with pytest.raises(ContractViolation, match="provenance"):
            CovarianceEstimate(matrix=np.eye(2), provenance="guess")


class TestSyntheticReturns:
    def test_seed_is_deterministic(self):
        A, P, noise = random_factor_model(8, 2, seed=3)
        X1 = generate_synthetic_returns(A, P, noise, N=20, seed=11)
        X2 = generate_synthetic_returns(A, P, noise, N=20, seed=11)
        X3 = generate_synthetic_returns(A, P, noise, N=20, seed=12)
        np.testing.assert_array_equal(X1.values, X2.values)
        assert not np.array_equal(X1.values, X3.values)

    def test_zero_latents_leave_only_noise(self):
        A = np.ones((3, 1))
        X = generate_synthetic_returns(A, np.eye(1), np.zeros(3), N=4, seed=0,
                                       latent_override=np.zeros((1, 4)))
        np.testing.assert_array_equal(X.values, np.zeros((3, 4)))

    def test_sample_covariance_converges(self):
        A, P, noise = random_factor_model(20, 3, seed=5)
        X = generate_synthetic_returns(A, P, noise, N=10000, seed=6)
        S = sample_covariance(demean(X)).matrix
        truth = A @ P @ A.T + np.diag(noise ** 2)
        assert np.linalg.norm(S - truth) / np.linalg.norm(truth) <= 0.05

    def test_shape_checks(self):
        A = np.ones((3, 2))
        with pytest.raises(ContractViolation):
            generate_synthetic_returns(A, np.eye(3), np.zeros(3), N=5, seed=0)
        with pytest.raises(ContractViolation):
            generate_synthetic_returns(A, np.eye(2), np.zeros(2), N=5, seed=0)
        with pytest.raises(ContractViolation):
            generate_synthetic_returns(A, -np.eye(2), np.zeros(3), N=5, seed=0)

    def test_random_factor_model_spectrum(self):
        A, P, noise = random_factor_model(12, 4, seed=2, noise_std=0.2)
        assert A.shape == (12, 4)
        np.testing.assert_allclose(np.linalg.eigvalsh(P), [0.5, 1.0, 1.5, 2.0], atol=1e-12)
        np.testing.assert_array_equal(noise, np.full(12, 0.2))
