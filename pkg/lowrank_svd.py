#!/usr/bin/env python3
"""
Low-Rank Factor Analysis (SVD Reference)
========================================

Classical low-rank covariance estimation:

1. Eigendecompose the sample covariance S = U Lambda U^T
2. Keep the r largest eigenvalues (Lambda_r)
3. Output M = U Lambda_r U^T as the rank-r approximation

The idiosyncratic noise is then read off the diagonal, Psi = max(0, diag(S - M)),
and the covariance estimate is Sigma = M + diag(Psi).

Author: Analog Portfolio Team
License: MIT
"""

import json
from dataclasses import dataclass
from typing import Any, Dict, Optional, Tuple

import numpy as np
from scipy import linalg

from errors import ContractViolation, NumericError
from market_data import (PSD_REL_TOL, CovarianceEstimate, as_matrix, min_eigenvalue_ok,
                         symmetrize)

RANK_REL_TOL = 1e-8


def numerical_rank(matrix: np.ndarray, rel_tol: float = RANK_REL_TOL) -> int:
    """Count singular values above rel_tol * sigma_max"""
    singular = linalg.svdvals(matrix)
    if singular.size == 0 or singular[0] == 0.0:
        return 0
    return int(np.sum(singular > rel_tol * singular[0]))


@dataclass
class FactorModel:
    """
    Sigma = A P A^T + diag(Psi)

    A is n x r loadings, P the r x r latent covariance, Psi the nonnegative
    idiosyncratic variances. B (r x n) is kept when the model came from a
    trained encoder.
    """
    A: np.ndarray
    P: np.ndarray
    Psi: np.ndarray
    r: int
    B: Optional[np.ndarray] = None

    def __post_init__(self):
        self.A = np.atleast_2d(np.asarray(self.A, dtype=np.float64))
        self.P = np.atleast_2d(np.asarray(self.P, dtype=np.float64))
        self.Psi = np.asarray(self.Psi, dtype=np.float64).reshape(-1)
        n, k = self.A.shape
        if self.r < 1:
            raise ContractViolation("factor model rank must be at least 1")
        if self.P.shape != (k, k):
            raise ContractViolation(f"P must be {k}x{k} for {n}x{k} loadings, got {self.P.shape}")
        if self.Psi.shape != (n,):
            raise ContractViolation(f"Psi must have length {n}, got {self.Psi.shape[0]}")
        if np.any(self.Psi < 0):
            raise ContractViolation("Psi must be nonnegative")
        if self.B is not None:
            self.B = np.atleast_2d(np.asarray(self.B, dtype=np.float64))
            if self.B.shape != (k, n):
                raise ContractViolation(f"B must be {k}x{n}, got {self.B.shape}")

    @property
    def n(self) -> int:
        return self.A.shape[0]

    def lowrank(self) -> np.ndarray:
        """M = A P A^T"""
        return symmetrize(self.A @ self.P @ self.A.T)

    def covariance(self) -> CovarianceEstimate:
        return assemble_covariance(self.lowrank(), self.Psi)

    def check_invariants(self):
        """Raise ContractViolation if the rank bound or PSD property fails"""
        M = self.lowrank()
        rank = numerical_rank(M)
        if rank > self.r:
            raise ContractViolation(f"A P A^T has numerical rank {rank} > r = {self.r}")
        ok, lo, _ = min_eigenvalue_ok(M + np.diag(self.Psi))
        if not ok:
            raise ContractViolation(f"M + diag(Psi) is not PSD (min eigenvalue {lo:.3e})")


def _sorted_eigenpairs(S: np.ndarray) -> Tuple[np.ndarray, np.ndarray]:
    try:
        eigenvalues, eigenvectors = linalg.eigh(S)
    except (linalg.LinAlgError, ValueError) as e:
        raise NumericError(f"eigendecomposition failed: {e}") from e
    # descending; equal eigenvalues keep the solver's index order
    order = np.argsort(-eigenvalues, kind="stable")
    return eigenvalues[order], eigenvectors[:, order]


def svd_lowrank(S, r: int) -> Tuple[np.ndarray, Tuple[np.ndarray, np.ndarray]]:
    """
    Rank-r approximation M = U_r Lambda_r U_r^T of a symmetric matrix

    Negative eigenvalues among the top r are zeroed so M stays PSD.

    Returns:
        (M, (eigenvalues descending, eigenvectors as columns))
    """
    S = as_matrix(S)
    n = S.shape[0]
    if S.shape != (n, n):
        raise ContractViolation(f"S must be square, got {S.shape}")
    if np.max(np.abs(S - S.T)) > 1e-12 * max(1.0, float(np.max(np.abs(S)))):
        raise ContractViolation("S must be symmetric")
    if not 1 <= r <= n:
        raise ContractViolation(f"rank r must be in [1, {n}], got {r}")

    eigenvalues, eigenvectors = _sorted_eigenpairs(S)
    kept = np.clip(eigenvalues[:r], 0.0, None)
    U_r = eigenvectors[:, :r]
    M = symmetrize((U_r * kept) @ U_r.T)
    return M, (eigenvalues, eigenvectors)


def estimate_psi(S, M: np.ndarray) -> np.ndarray:
    """Psi_i = max(0, S_ii - M_ii)"""
    S = as_matrix(S)
    M = np.asarray(M, dtype=np.float64)
    if S.shape != M.shape:
        raise ContractViolation(f"S is {S.shape} but M is {M.shape}")
    return np.maximum(np.diag(S) - np.diag(M), 0.0)


def assemble_covariance(M: np.ndarray, Psi: np.ndarray,
                        provenance: str = "lowrank-svd") -> CovarianceEstimate:
    """Sigma = M + diag(Psi)"""
    M = np.atleast_2d(np.asarray(M, dtype=np.float64))
    Psi = np.asarray(Psi, dtype=np.float64).reshape(-1)
    if M.shape != (Psi.size, Psi.size):
        raise ContractViolation(f"M is {M.shape} but Psi has length {Psi.size}")
    if np.any(Psi < 0):
        raise ContractViolation("Psi must be nonnegative")
    ok, lo, _ = min_eigenvalue_ok(symmetrize(M), rel_tol=PSD_REL_TOL)
    if not ok:
        raise ContractViolation(f"low-rank part M is not PSD (min eigenvalue {lo:.3e})")
    return CovarianceEstimate(matrix=symmetrize(M) + np.diag(Psi), provenance=provenance)


def frobenius_gap(S, M: np.ndarray, Psi: np.ndarray) -> float:
    """||S - M - diag(Psi)||_F^2"""
    S = as_matrix(S)
    residual = S - np.asarray(M, dtype=np.float64) - np.diag(np.asarray(Psi, dtype=np.float64))
    return float(np.sum(residual * residual))


def residual_map(S, M: np.ndarray, Psi: np.ndarray) -> np.ndarray:
    """Elementwise |S - M - diag(Psi)|"""
    return np.abs(as_matrix(S) - np.asarray(M, dtype=np.float64) - np.diag(np.asarray(Psi, dtype=np.float64)))


def dropped_eigen_energy(S, r: int) -> float:
    """Sum of squared eigenvalues outside the top r: the best achievable ||S - M||_F^2"""
    eigenvalues, _ = _sorted_eigenpairs(as_matrix(S))
    top = eigenvalues[:r]
    # zeroed negative top-r eigenvalues count as dropped
    return float(np.sum(eigenvalues[r:] ** 2) + np.sum(np.minimum(top, 0.0) ** 2))


def factor_model_from_svd(S, r: int) -> FactorModel:
    """A = U_r Lambda_r^(1/2), P = I_r, Psi from the diagonal residual"""
    M, (eigenvalues, eigenvectors) = svd_lowrank(S, r)
    A = eigenvectors[:, :r] * np.sqrt(np.clip(eigenvalues[:r], 0.0, None))
    return FactorModel(A=A, P=np.eye(r), Psi=estimate_psi(S, M), r=r)


def factor_model_to_dict(model: FactorModel) -> Dict[str, Any]:
    record = {
        "r": int(model.r),
        "A": model.A.tolist(),
        "P": model.P.tolist(),
        "Psi": model.Psi.tolist(),
    }
    if model.B is not None:
        record["B"] = model.B.tolist()
    return record


def save_factor_model(model: FactorModel, path: str):
    """JSON with r, A (row-major), P, Psi and optional B"""
    with open(path, "w", encoding="utf-8") as f:
        json.dump(factor_model_to_dict(model), f, indent=2)


def load_factor_model(path: str) -> FactorModel:
    try:
        with open(path, "r", encoding="utf-8") as f:
            record = json.load(f)
        return FactorModel(A=np.array(record["A"], dtype=np.float64),
                           P=np.array(record["P"], dtype=np.float64),
                           Psi=np.array(record["Psi"], dtype=np.float64),
                           r=int(record["r"]),
                           B=np.array(record["B"], dtype=np.float64) if "B" in record else None)
    except OSError as e:
        raise ContractViolation(f"cannot read factor model file {path}: {e.strerror or e}") from e
    except (KeyError, TypeError, json.JSONDecodeError) as e:
        raise ContractViolation(f"invalid factor model file {path}: {e}") from e
