#!/usr/bin/env python3
"""
Efficient Frontier Module
=========================

Sweeps target returns through the Hopfield portfolio solver to trace the
efficient frontier, scores each portfolio by its Sharpe ratio and picks the
minimum-variance and maximum-Sharpe points.

Features:
- Sharpe ratio S_r = mu^T w / sqrt(w^T Sigma w)
- Closed-form two-asset frontier (reference oracle)
- Sequential warm-started sweep or concurrent cold-started sweep
- Per-point failures recorded in-row; the sweep carries on
- CSV / JSON frontier export and a summary of the extremal points

Author: Analog Portfolio Team
License: MIT
"""

import dataclasses
import json
from concurrent.futures import ThreadPoolExecutor, as_completed
from dataclasses import dataclass, field
from typing import Any, Dict, List, Optional

import numpy as np
import pandas as pd

from errors import ContractViolation, PipelineError
from hopfield_qp import SolverOptions, solve_portfolio
from market_data import FLOAT_FORMAT, as_matrix, as_vector
from run_monitor import status

WARM_START_CLIP = 10.0


@dataclass
class Portfolio:
    """Long-only weights with their return, risk and constraint residuals"""
    w: np.ndarray
    achieved_return: float
    variance: float
    return_residual: float
    budget_residual: float
    target_return: float = float("nan")
    converged: bool = False
    final_x: Optional[np.ndarray] = field(default=None, repr=False)

    @classmethod
    def from_weights(cls, w, Sigma, mu, R: float, converged: bool = False,
                     final_x: Optional[np.ndarray] = None) -> "Portfolio":
        w = np.asarray(w, dtype=np.float64)
        S = as_matrix(Sigma)
        mu = as_vector(mu)
        achieved = float(mu @ w)
        # roundoff can push w^T S w a hair below zero for PSD S
        variance = max(float(w @ S @ w), 0.0)
        return cls(w=w, achieved_return=achieved, variance=variance,
                   return_residual=abs(achieved - R), budget_residual=abs(float(w.sum()) - 1.0),
                   target_return=float(R), converged=converged, final_x=final_x)


@dataclass
class FrontierPoint:
    R: float
    portfolio: Optional[Portfolio]
    sharpe: float
    error: Optional[str] = None

    @property
    def ok(self) -> bool:
        return self.error is None and self.portfolio is not None


@dataclass
class FrontierCurve:
    points: List[FrontierPoint] = field(default_factory=list)

    def __post_init__(self):
        Rs = [p.R for p in self.points]
        if any(b <= a for a, b in zip(Rs, Rs[1:])):
            raise ContractViolation("frontier points must have strictly increasing R")

    @property
    def solved(self) -> List[FrontierPoint]:
        return [p for p in self.points if p.ok]


def sharpe_ratio(w, mu, Sigma) -> float:
    """S_r = mu^T w / sqrt(w^T Sigma w)"""
    w = np.asarray(w, dtype=np.float64)
    variance = float(w @ as_matrix(Sigma) @ w)
    if variance <= 0.0:
        raise ContractViolation("Sharpe ratio undefined for zero variance")
    return float(as_vector(mu) @ w) / np.sqrt(variance)


def _point(R: float, portfolio: Portfolio) -> FrontierPoint:
    sharpe = (portfolio.achieved_return / np.sqrt(portfolio.variance)
              if portfolio.variance > 0 else float("nan"))
    return FrontierPoint(R=float(R), portfolio=portfolio, sharpe=float(sharpe))


def attainable_return_range(mu) -> tuple:
    mu = as_vector(mu)
    return float(mu.min()), float(mu.max())


def two_asset_analytic(mu, Sigma, R: float) -> Portfolio:
    """
    Both constraints binding: w_B = (R - mu_A)/(mu_B - mu_A), w_A = 1 - w_B

    Raises ContractViolation when R is outside [min mu, max mu] (no shorting).
    """
    mu = as_vector(mu)
    S = as_matrix(Sigma)
    if mu.shape != (2,) or S.shape != (2, 2):
        raise ContractViolation("two_asset_analytic needs exactly two assets")
    if mu[0] == mu[1]:
        raise ContractViolation("two_asset_analytic needs distinct expected returns")
    lo, hi = attainable_return_range(mu)
    if not lo <= R <= hi:
        raise ContractViolation(f"target return {R} infeasible without shorting (range [{lo}, {hi}])")

    w_b = (R - mu[0]) / (mu[1] - mu[0])
    return Portfolio.from_weights(np.array([1.0 - w_b, w_b]), S, mu, R, converged=True)


def two_asset_min_variance(mu, Sigma) -> Portfolio:
    """Closed-form minimum-variance split between two assets (clipped to [0, 1])"""
    mu = as_vector(mu)
    S = as_matrix(Sigma)
    denom = S[0, 0] + S[1, 1] - 2.0 * S[0, 1]
    if denom <= 0:
        raise ContractViolation("assets are perfectly correlated; minimum variance not unique")
    w_a = float(np.clip((S[1, 1] - S[0, 1]) / denom, 0.0, 1.0))
    w = np.array([w_a, 1.0 - w_a])
    return Portfolio.from_weights(w, S, mu, float(mu @ w), converged=True)


def two_asset_curve(mu, Sigma, R_values) -> FrontierCurve:
    return FrontierCurve(points=[_point(R, two_asset_analytic(mu, Sigma, R)) for R in R_values])


def _solve_point(Sigma, mu, R, lambda1, lambda2, opts) -> FrontierPoint:
    try:
        return _point(R, solve_portfolio(Sigma, mu, R, lambda1, lambda2, opts))
    except PipelineError as e:
        return FrontierPoint(R=float(R), portfolio=None, sharpe=float("nan"), error=str(e))


def sweep_frontier(Sigma, mu, R_min: float, R_max: float, steps: int,
                   solver_opts: Optional[SolverOptions] = None, lambda1: float = 1.0,
                   lambda2: float = 1.0, warm_start: bool = True,
                   max_workers: int = 1) -> FrontierCurve:
    """
    Solve one Hopfield QP per equally spaced target return

    With warm_start each point starts from the previous final potentials
    (sequential). Without it, points are independent and solved on
    max_workers threads; results are ordered by R either way.
    """
    if steps < 2:
        raise ContractViolation("a frontier sweep needs steps >= 2")
    if not R_min < R_max:
        raise ContractViolation("R_min must be smaller than R_max")

    opts = solver_opts or SolverOptions()
    R_values = np.linspace(R_min, R_max, steps)
    points: Dict[int, FrontierPoint] = {}

    # each solved point seeds the next one
    if warm_start:
        current = opts
        for k, R in enumerate(R_values):
            point = _solve_point(Sigma, mu, R, lambda1, lambda2, current)
            points[k] = point
            if point.ok and point.portfolio.final_x is not None:
                x0 = np.clip(point.portfolio.final_x, -WARM_START_CLIP, WARM_START_CLIP)
                current = dataclasses.replace(opts, x0=x0)
    elif max_workers <= 1:
        for k, R in enumerate(R_values):
            points[k] = _solve_point(Sigma, mu, R, lambda1, lambda2, opts)
    else:
        with ThreadPoolExecutor(max_workers=max_workers) as executor:
            future_to_index = {executor.submit(_solve_point, Sigma, mu, R, lambda1, lambda2, opts): k
                               for k, R in enumerate(R_values)}
            for future in as_completed(future_to_index):
                points[future_to_index[future]] = future.result()

    curve = FrontierCurve(points=[points[k] for k in range(steps)])
    failed = steps - len(curve.solved)
    status(f"📊 Frontier sweep: {len(curve.solved)}/{steps} points solved over R in [{R_min:g}, {R_max:g}]")
    if failed:
        status(f"⚠️ {failed} frontier point(s) failed; see the error column")
    return curve


def min_variance_point(curve: FrontierCurve) -> FrontierPoint:
    """Least variance; ties go to the smaller R"""
    candidates = curve.solved
    if not candidates:
        raise ContractViolation("empty frontier curve")
    return min(candidates, key=lambda p: (p.portfolio.variance, p.R))


def max_sharpe_point(curve: FrontierCurve) -> FrontierPoint:
    """Largest Sharpe ratio; ties go to the smaller R"""
    candidates = [p for p in curve.solved if np.isfinite(p.sharpe)]
    if not candidates:
        raise ContractViolation("empty frontier curve")
    return min(candidates, key=lambda p: (-p.sharpe, p.R))


def _point_record(point: FrontierPoint) -> Dict[str, Any]:
    if point.ok:
        pf = point.portfolio
        return {"R": point.R, "variance": pf.variance, "achieved_return": pf.achieved_return,
                "sharpe": point.sharpe if np.isfinite(point.sharpe) else None,
                "return_residual": pf.return_residual, "budget_residual": pf.budget_residual,
                "w": [float(x) for x in pf.w], "error": None}
    # failed point: only R and the error survive
    return {"R": point.R, "variance": None, "achieved_return": None, "sharpe": None,
            "return_residual": None, "budget_residual": None, "w": None, "error": point.error}


def frontier_frame(curve: FrontierCurve, n_assets: int) -> pd.DataFrame:
    rows = []
    for point in curve.points:
        record = _point_record(point)
        # failed rows still get one NaN column per asset
        weights = record.pop("w") or [float("nan")] * n_assets
        error = record.pop("error")
        row = {k: (float("nan") if v is None else v) for k, v in record.items()}
        for i, wi in enumerate(weights):
            row[f"w_{i + 1}"] = wi
        row["error"] = error or ""
        rows.append(row)
    return pd.DataFrame(rows)


def write_frontier_csv(curve: FrontierCurve, n_assets: int, path: str):
    frontier_frame(curve, n_assets).to_csv(path, index=False, float_format=FLOAT_FORMAT,
                                           lineterminator="\n")


def write_frontier_json(curve: FrontierCurve, path: str):
    with open(path, "w", encoding="utf-8") as f:
        json.dump({"points": [_point_record(p) for p in curve.points]}, f, indent=2)


def frontier_summary(curve: FrontierCurve) -> Dict[str, Any]:
    """Min-variance and max-Sharpe portfolios plus solve counts"""
    summary: Dict[str, Any] = {"points": len(curve.points), "solved": len(curve.solved)}
    if curve.solved:
        summary["min_variance"] = _point_record(min_variance_point(curve))
        summary["max_sharpe"] = _point_record(max_sharpe_point(curve))
    return summary
