#!/usr/bin/env python3
"""
Market Data Module
==================

Loads, validates, demeans and synthesizes asset-return samples, and computes
the sample covariance and expected-return estimates used by the rest of the
pipeline.

Features:
- CSV returns format (header of tickers, one time sample per row)
- Explicit demeaning tracked by a flag
- Sample covariance with divisor N
- Seeded synthetic factor-model returns x = A s + e
- Matrix CSV files written with 17 significant digits

Author: Analog Portfolio Team
License: MIT
"""

import io
import re
from dataclasses import dataclass, field
from typing import BinaryIO, List, Optional, Tuple, Union

import numpy as np
import pandas as pd

from errors import ContractViolation, ReturnsParseError

FLOAT_FORMAT = "%.17g"
PROVENANCES = ("sample", "lowrank-svd", "lowrank-ep", "lowrank-bp", "external")
SYMMETRY_TOL = 1e-12
PSD_REL_TOL = 1e-8


def min_eigenvalue_ok(matrix: np.ndarray, rel_tol: float = PSD_REL_TOL) -> Tuple[bool, float, float]:
    """PSD check within tolerance; returns (ok, min eigenvalue, max eigenvalue)"""
    eigenvalues = np.linalg.eigvalsh(matrix)
    lo, hi = float(eigenvalues[0]), float(eigenvalues[-1])
    return lo >= -rel_tol * max(hi, 0.0), lo, hi


@dataclass
class ReturnsMatrix:
    """n x N asset returns: rows = assets, columns = time samples"""
    values: np.ndarray
    tickers: List[str] = field(default_factory=list)
    demeaned: bool = False

    def __post_init__(self):
        self.values = np.asarray(self.values, dtype=np.float64)
        if self.values.ndim != 2 or self.values.shape[0] < 1 or self.values.shape[1] < 1:
            raise ContractViolation(f"returns must be a non-empty n x N matrix, got shape {self.values.shape}")
        if not np.all(np.isfinite(self.values)):
            raise ContractViolation("returns contain non-finite entries")
        if not self.tickers:
            self.tickers = [f"asset_{i + 1}" for i in range(self.values.shape[0])]
        if len(self.tickers) != self.values.shape[0]:
            raise ContractViolation(f"{len(self.tickers)} tickers for {self.values.shape[0]} assets")

    @property
    def n(self) -> int:
        return self.values.shape[0]

    @property
    def N(self) -> int:
        return self.values.shape[1]


@dataclass
class ExpectedReturns:
    """Per-period expected return of every asset"""
    mu: np.ndarray

    def __post_init__(self):
        self.mu = np.asarray(self.mu, dtype=np.float64).reshape(-1)
        if self.mu.size < 1 or not np.all(np.isfinite(self.mu)):
            raise ContractViolation("expected returns must be a non-empty finite vector")


@dataclass
class CovarianceEstimate:
    """Symmetric PSD covariance matrix with its provenance"""
    matrix: np.ndarray
    provenance: str = "sample"

    def __post_init__(self):
        self.matrix = np.asarray(self.matrix, dtype=np.float64)
        if self.matrix.ndim != 2 or self.matrix.shape[0] != self.matrix.shape[1]:
            raise ContractViolation(f"covariance must be square, got shape {self.matrix.shape}")
        if self.provenance not in PROVENANCES:
            raise ContractViolation(f"unknown provenance '{self.provenance}'")
        if not np.all(np.isfinite(self.matrix)):
            raise ContractViolation("covariance contains non-finite entries")
        asymmetry = float(np.max(np.abs(self.matrix - self.matrix.T)))
        if asymmetry > SYMMETRY_TOL:
            raise ContractViolation(f"covariance is not symmetric (max asymmetry {asymmetry:.3e})")
        ok, lo, hi = min_eigenvalue_ok(self.matrix)
        if not ok:
            raise ContractViolation(f"covariance is not PSD (min eigenvalue {lo:.3e}, max {hi:.3e})")

    @property
    def n(self) -> int:
        return self.matrix.shape[0]


def symmetrize(matrix: np.ndarray) -> np.ndarray:
    return 0.5 * (matrix + matrix.T)


def as_matrix(Sigma: Union[CovarianceEstimate, np.ndarray]) -> np.ndarray:
    if isinstance(Sigma, CovarianceEstimate):
        return Sigma.matrix
    return np.atleast_2d(np.asarray(Sigma, dtype=np.float64))


def as_vector(mu: Union[ExpectedReturns, np.ndarray]) -> np.ndarray:
    if isinstance(mu, ExpectedReturns):
        return mu.mu
    return np.asarray(mu, dtype=np.float64).reshape(-1)


# ---------------------------------------------------------------------------
# CSV input / output
# ---------------------------------------------------------------------------

def _read_cells(source: Union[bytes, BinaryIO]) -> pd.DataFrame:
    """Read raw CSV text into a frame of strings, mapping parser failures"""
    raw = source if isinstance(source, (bytes, bytearray)) else source.read()
    if not raw or not raw.strip():
        raise ReturnsParseError("empty file", row=1)
    try:
        text = raw.decode("utf-8-sig")
    except UnicodeDecodeError as e:
        raise ReturnsParseError(f"file is not UTF-8: {e}") from e

    if not text.strip():
        raise ReturnsParseError("empty file", row=1)
    # reported rows are file lines; trailing blank lines are the only ones allowed
    text = text.rstrip() + "\n"
    lines = text.splitlines()
    for line_no, line in enumerate(lines, start=1):
        if not line.strip():
            raise ReturnsParseError("blank line", row=line_no)

    try:
        return pd.read_csv(io.StringIO(text), header=None, dtype=str,
                           keep_default_na=False, skip_blank_lines=True)
    except pd.errors.EmptyDataError as e:
        raise ReturnsParseError("empty file", row=1) from e
    except pd.errors.ParserError as e:
        match = re.search(r"Expected (\d+) fields in line (\d+), saw (\d+)", str(e))
        if match:
            expected, line, saw = (int(g) for g in match.groups())
            raise ReturnsParseError(f"ragged row: expected {expected} fields, saw {saw}",
                                    row=line, column=expected + 1) from e
        raise ReturnsParseError(f"malformed CSV: {e}") from e


def _cells_to_floats(cells: pd.DataFrame, first_line: int) -> np.ndarray:
    """Convert string cells to floats; names the first bad cell on failure"""
    missing = cells.isna().to_numpy()
    if missing.any():
        r, c = np.argwhere(missing)[0]
        raise ReturnsParseError(f"ragged row: expected {cells.shape[1]} fields, saw {c}",
                                row=first_line + int(r), column=int(c) + 1)
    try:
        values = cells.astype(np.float64).to_numpy()
    except ValueError:
        for r in range(cells.shape[0]):
            for c in range(cells.shape[1]):
                cell = cells.iat[r, c]
                try:
                    float(cell)
                except ValueError as e:
                    raise ReturnsParseError(f"non-numeric field '{cell}'",
                                            row=first_line + r, column=c + 1) from e
        raise
    bad = ~np.isfinite(values)
    if bad.any():
        r, c = np.argwhere(bad)[0]
        raise ReturnsParseError(f"non-finite field '{cells.iat[r, c]}'",
                                row=first_line + int(r), column=int(c) + 1)
    return values


def load_returns(source: Union[bytes, BinaryIO]) -> ReturnsMatrix:
    """
    Parse CSV returns: a header row of tickers, then one time sample per row

    Args:
        source: raw CSV bytes or a binary stream

    Returns:
        ReturnsMatrix: n x N matrix (one column per data row), demeaned = False
    """
    cells = _read_cells(source)
    tickers = [str(t).strip() for t in cells.iloc[0].tolist()]
    for c, ticker in enumerate(tickers):
        if not ticker or ticker == "nan":
            raise ReturnsParseError("empty ticker in header", row=1, column=c + 1)

    body = cells.iloc[1:]
    if body.shape[0] == 0:
        raise ReturnsParseError("no samples", row=2)

    values = _cells_to_floats(body, first_line=2)
    return ReturnsMatrix(values=values.T, tickers=tickers, demeaned=False)


def _read_bytes(path: str) -> bytes:
    try:
        with open(path, "rb") as f:
            return f.read()
    except OSError as e:
        raise ReturnsParseError(f"cannot read {path}: {e.strerror or e}") from e


def load_returns_file(path: str) -> ReturnsMatrix:
    return load_returns(_read_bytes(path))


def save_returns(X: ReturnsMatrix, path: str):
    """Write returns in the CSV format read by load_returns"""
    frame = pd.DataFrame(X.values.T, columns=X.tickers)
    frame.to_csv(path, index=False, float_format=FLOAT_FORMAT, lineterminator="\n")


def write_matrix_csv(matrix: np.ndarray, path: str, header: Optional[List[str]] = None):
    """Write a matrix with 17 significant digits, optionally with a header row"""
    matrix = np.atleast_2d(np.asarray(matrix, dtype=np.float64))
    frame = pd.DataFrame(matrix, columns=header)
    frame.to_csv(path, index=False, header=header is not None,
                 float_format=FLOAT_FORMAT, lineterminator="\n")


def read_matrix_csv(path: str, header: bool = False) -> Tuple[np.ndarray, Optional[List[str]]]:
    """Read a numeric matrix CSV (inverse of write_matrix_csv)"""
    cells = _read_cells(_read_bytes(path))
    names = None
    first_line = 1
    if header:
        names = [str(t).strip() for t in cells.iloc[0].tolist()]
        cells = cells.iloc[1:]
        first_line = 2
        if cells.shape[0] == 0:
            raise ReturnsParseError("no rows", row=2)
    return _cells_to_floats(cells, first_line=first_line), names


# ---------------------------------------------------------------------------
# Estimators
# ---------------------------------------------------------------------------

def demean(X: ReturnsMatrix) -> ReturnsMatrix:
    """Subtract each asset's sample mean"""
    centered = X.values - X.values.mean(axis=1, keepdims=True)
    return ReturnsMatrix(values=centered, tickers=list(X.tickers), demeaned=True)


def sample_covariance(X: ReturnsMatrix) -> CovarianceEstimate:
    """S = (1/N) X X^T on demeaned returns"""
    if not X.demeaned:
        raise ContractViolation("sample_covariance requires demeaned returns; call demean() first")
    S = symmetrize(X.values @ X.values.T / X.N)
    return CovarianceEstimate(matrix=S, provenance="sample")


def mean_returns(X: ReturnsMatrix) -> ExpectedReturns:
    """Row means of raw (not demeaned) returns"""
    if X.demeaned:
        raise ContractViolation("mean_returns needs raw returns; demeaned data carries no mean signal")
    return ExpectedReturns(mu=X.values.mean(axis=1))


# ---------------------------------------------------------------------------
# Synthetic data
# ---------------------------------------------------------------------------

def generate_synthetic_returns(A: np.ndarray, latent_cov: np.ndarray, noise_std: np.ndarray,
                               N: int, seed: int, latent_override: Optional[np.ndarray] = None,
                               tickers: Optional[List[str]] = None) -> ReturnsMatrix:
    """
    Draw N samples of x = A s + e

    s ~ N(0, latent_cov), e_i ~ N(0, noise_std_i^2) independently. A fixed
    seed gives identical output. latent_override (r x N) replaces the drawn
    latents.
    """
    A = np.atleast_2d(np.asarray(A, dtype=np.float64))
    latent_cov = np.atleast_2d(np.asarray(latent_cov, dtype=np.float64))
    noise_std = np.asarray(noise_std, dtype=np.float64).reshape(-1)
    n, r = A.shape

    if latent_cov.shape != (r, r):
        raise ContractViolation(f"latent_cov must be {r}x{r}, got {latent_cov.shape}")
    if noise_std.shape != (n,):
        raise ContractViolation(f"noise_std must have length {n}, got {noise_std.shape[0]}")
    if np.any(noise_std < 0):
        raise ContractViolation("noise_std must be nonnegative")
    if N < 1:
        raise ContractViolation("N must be at least 1")
    if np.max(np.abs(latent_cov - latent_cov.T)) > SYMMETRY_TOL:
        raise ContractViolation("latent_cov must be symmetric")
    ok, lo, _ = min_eigenvalue_ok(latent_cov, rel_tol=1e-10)
    if not ok:
        raise ContractViolation(f"latent_cov is not PSD (min eigenvalue {lo:.3e})")

    rng = np.random.default_rng(seed)
    if latent_override is not None:
        s = np.asarray(latent_override, dtype=np.float64)
        if s.shape != (r, N):
            raise ContractViolation(f"latent_override must be {r}x{N}, got {s.shape}")
    else:
        s = rng.multivariate_normal(np.zeros(r), latent_cov, size=N, method="eigh").T
    e = rng.standard_normal((n, N)) * noise_std[:, None]
    return ReturnsMatrix(values=A @ s + e, tickers=tickers or [], demeaned=False)


def random_factor_model(n: int, r: int, seed: int,
                        noise_std: float = 0.1) -> Tuple[np.ndarray, np.ndarray, np.ndarray]:
    """
    Random ground-truth factor model with unit-scale returns

    Loadings are N(0, 1/r); the latent covariance has eigenvalues spread
    linearly over [0.5, 2] in a random orthonormal basis.

    Returns:
        (A, P, noise_std vector)
    """
    rng = np.random.default_rng(seed)
    A = rng.standard_normal((n, r)) / np.sqrt(r)
    Q, _ = np.linalg.qr(rng.standard_normal((r, r)))
    spectrum = np.linspace(2.0, 0.5, r)
    P = symmetrize(Q @ np.diag(spectrum) @ Q.T)
    return A, P, np.full(n, float(noise_std))


def gaussian_qp_instance(n: int, N: int, seed: int) -> Tuple[CovarianceEstimate, ExpectedReturns]:
    """Returns drawn IID from N(1, 1): mu from raw means, Sigma from demeaned samples"""
    rng = np.random.default_rng(seed)
    X = ReturnsMatrix(values=rng.normal(1.0, 1.0, size=(n, N)))
    return sample_covariance(demean(X)), mean_returns(X)
