#!/usr/bin/env python3
"""
Hopfield QP Solver
==================

Encodes the penalized mean-variance problem into the couplings of a
continuous Hopfield network and integrates the annealed network dynamics

    dx_i/dt = -p(t) x_i + sum_j J_ij v_j + m_i,    v_i = g(x_i)

to a steady state. The logistic activation keeps every weight inside [0, 1],
so no-shorting is built in.

Features:
- Penalty encoding J = -2 Sigma - 2 l1 mu mu^T - 2 l2 1 1^T, m = 2 R l1 mu + 2 l2 1
- Lyapunov energy with the closed-form logistic entropy term
- Linear (or constant) annealing schedule
- Explicit fixed-step Euler integration with a strided trace
- Projected-gradient reference solver for the same penalized objective

Author: Analog Portfolio Team
License: MIT
"""

import math
from dataclasses import dataclass, field
from typing import List, Optional, Tuple

import numpy as np
import pandas as pd
from scipy.special import expit

import numeric_kernels as nk
from errors import ContractViolation, IntegrationError
from market_data import FLOAT_FORMAT, as_matrix, as_vector

SCHEDULE_SHAPES = {"linear": nk.SCHEDULE_LINEAR, "constant": nk.SCHEDULE_CONSTANT}


def logistic(x):
    """Standard logistic 1/(1 + exp(-x)); stable for large |x|"""
    return expit(x)


@dataclass
class QpEncoding:
    """Hopfield couplings and biases for the penalized portfolio problem"""
    J: np.ndarray
    m: np.ndarray
    lambda1: float
    lambda2: float
    R: float

    def __post_init__(self):
        if np.max(np.abs(self.J - self.J.T)) > 1e-12:
            raise ContractViolation("coupling matrix J must be symmetric")

    @property
    def n(self) -> int:
        return self.m.shape[0]

    def matches(self, Sigma, mu, atol: float = 1e-12) -> bool:
        """Check that J, m were built from this Sigma, mu"""
        rebuilt = encode_qp(Sigma, mu, self.R, self.lambda1, self.lambda2)
        return (np.allclose(rebuilt.J, self.J, rtol=0.0, atol=atol)
                and np.allclose(rebuilt.m, self.m, rtol=0.0, atol=atol))


@dataclass
class HopfieldState:
    """Internal potentials x, activations v = g(x), time t and annealing value p"""
    x: np.ndarray
    v: np.ndarray
    t: float = 0.0
    p: float = 0.0

    @classmethod
    def from_x(cls, x: np.ndarray, t: float = 0.0, p: float = 0.0) -> "HopfieldState":
        x = np.array(x, dtype=np.float64)
        return cls(x=x, v=logistic(x), t=t, p=p)


@dataclass
class AnnealSchedule:
    """p(t) = p0 (1 - t/T), clamped at 0 past T; 'constant' holds p0"""
    p0: float = 0.01
    T: float = 100.0
    shape: str = "linear"

    def __post_init__(self):
        if self.p0 < 0:
            raise ContractViolation("annealing p0 must be nonnegative")
        if self.T <= 0:
            raise ContractViolation("annealing period T must be positive")
        if self.shape not in SCHEDULE_SHAPES:
            raise ContractViolation(f"unknown schedule shape '{self.shape}'")

    def value(self, t: float) -> float:
        return nk.anneal_value(float(t), self.p0, self.T, SCHEDULE_SHAPES[self.shape])


@dataclass
class SolverOptions:
    """Integration settings; total_time defaults to the annealing period"""
    dt: float = 1e-2
    total_time: Optional[float] = None
    schedule: AnnealSchedule = field(default_factory=AnnealSchedule)
    init: str = "uniform"
    init_scale: float = 0.1
    seed: int = 0
    stride: int = 100
    stop_tol: float = 1e-8
    x0: Optional[np.ndarray] = None

    def __post_init__(self):
        if self.total_time is None:
            self.total_time = self.schedule.T
        if self.dt <= 0:
            raise ContractViolation("dt must be positive")
        if self.total_time < self.schedule.T:
            raise ContractViolation(f"total_time {self.total_time} is shorter than the annealing period {self.schedule.T}")
        if self.stride < 1:
            raise ContractViolation("stride must be at least 1")
        if self.init not in ("uniform", "zeros"):
            raise ContractViolation(f"unknown init policy '{self.init}'")

    def initial_x(self, n: int) -> np.ndarray:
        if self.x0 is not None:
            x0 = np.array(self.x0, dtype=np.float64).reshape(-1)
            if x0.shape != (n,):
                raise ContractViolation(f"x0 must have length {n}")
            return x0
        if self.init == "zeros":
            return np.zeros(n)
        rng = np.random.default_rng(self.seed)
        return rng.uniform(-self.init_scale, self.init_scale, size=n)


@dataclass
class HopfieldTrace:
    """Strided record of (t, x, v, E) along a trajectory"""
    t: List[float] = field(default_factory=list)
    x: List[np.ndarray] = field(default_factory=list)
    v: List[np.ndarray] = field(default_factory=list)
    E: List[float] = field(default_factory=list)
    steps: int = 0
    converged: bool = False

    def record(self, state: HopfieldState, energy: float):
        self.t.append(state.t)
        self.x.append(state.x.copy())
        self.v.append(state.v.copy())
        self.E.append(energy)

    def to_frame(self) -> pd.DataFrame:
        v = np.array(self.v)
        frame = pd.DataFrame({"t": self.t, "E": self.E})
        for i in range(v.shape[1]):
            frame[f"v_{i + 1}"] = v[:, i]
        return frame


def encode_qp(Sigma, mu, R: float, lambda1: float = 1.0, lambda2: float = 1.0) -> QpEncoding:
    """
    Penalty encoding of min w^T Sigma w + l1 (mu^T w - R)^2 + l2 (1^T w - 1)^2

    After discarding constants this is H = -1/2 w^T J w - m^T w.
    """
    S = as_matrix(Sigma)
    mu = as_vector(mu)
    if S.shape != (mu.size, mu.size):
        raise ContractViolation(f"Sigma is {S.shape} but mu has length {mu.size}")
    if lambda1 < 0 or lambda2 < 0:
        raise ContractViolation("penalty weights must be nonnegative")

    # the quadratic penalties expand into rank-one coupling terms
    ones = np.ones(mu.size)
    J = -2.0 * S - 2.0 * lambda1 * np.outer(mu, mu) - 2.0 * lambda2 * np.outer(ones, ones)
    m = 2.0 * R * lambda1 * mu + 2.0 * lambda2 * ones
    return QpEncoding(J=J, m=m, lambda1=float(lambda1), lambda2=float(lambda2), R=float(R))


def hopfield_energy(state: HopfieldState, enc: QpEncoding, p: float) -> float:
    """
    Lyapunov energy E = p sum[v ln v + (1-v) ln(1-v)] - 1/2 v^T J v - m^T v

    The logarithms are taken from x so saturated units stay finite
    (0 ln 0 = 0).
    """
    v = state.v
    energy = -0.5 * float(v @ enc.J @ v) - float(enc.m @ v)
    # entropy vanishes at p = 0 (pure quadratic energy)
    if p != 0.0:
        log_v = -np.logaddexp(0.0, -state.x)
        log_1mv = -np.logaddexp(0.0, state.x)
        entropy = v * log_v + logistic(-state.x) * log_1mv
        energy += p * float(np.sum(entropy))
    return energy


def integrate(enc: QpEncoding, opts: SolverOptions) -> Tuple[HopfieldState, HopfieldTrace]:
    """
    Explicit Euler integration of the annealed Hopfield dynamics

    Records (t, x, v, E) every opts.stride steps plus the final state. Past the
    annealing period the run stops once max|dx/dt| < opts.stop_tol.
    """
    n = enc.n
    shape = SCHEDULE_SHAPES[opts.schedule.shape]
    total_steps = int(math.ceil(opts.total_time / opts.dt - 1e-9))
    J = np.ascontiguousarray(enc.J)
    m = np.ascontiguousarray(enc.m)
    x = opts.initial_x(n)

    # initial point is always recorded
    trace = HopfieldTrace()
    state = HopfieldState.from_x(x, t=0.0, p=opts.schedule.value(0.0))
    trace.record(state, hopfield_energy(state, enc, state.p))

    done = 0
    while done < total_steps:
        # one compiled chunk per trace row
        chunk = min(opts.stride, total_steps - done)
        taken, status = nk.hopfield_euler(x, J, m, done * opts.dt, opts.dt, chunk,
                                          opts.schedule.p0, opts.schedule.T, shape, opts.stop_tol)
        done += taken
        if status == nk.STATUS_NONFINITE:
            raise IntegrationError("non-finite Hopfield state", step=done)

        t = done * opts.dt
        state = HopfieldState.from_x(x, t=t, p=opts.schedule.value(t))
        trace.record(state, hopfield_energy(state, enc, state.p))
        if status == nk.STATUS_CONVERGED:
            trace.converged = True
            break

    trace.steps = done
    return state, trace


def penalized_objective(w: np.ndarray, enc: QpEncoding) -> float:
    """H = -1/2 w^T J w - m^T w (constants discarded)"""
    w = np.asarray(w, dtype=np.float64)
    return -0.5 * float(w @ enc.J @ w) - float(enc.m @ w)


def full_penalized_objective(w, Sigma, mu, R: float, lambda1: float, lambda2: float) -> float:
    """w^T Sigma w + l1 (mu^T w - R)^2 + l2 (1^T w - 1)^2"""
    w = np.asarray(w, dtype=np.float64)
    S = as_matrix(Sigma)
    mu = as_vector(mu)
    return float(w @ S @ w + lambda1 * (mu @ w - R) ** 2 + lambda2 * (w.sum() - 1.0) ** 2)


def projected_gradient_qp(Q: np.ndarray, c: np.ndarray, x0: Optional[np.ndarray] = None,
                          tol: float = 1e-10, max_iter: int = 500000) -> Tuple[np.ndarray, int]:
    """
    Minimize 1/2 w^T Q w + c^T w over the box [0, 1]^n

    Projected gradient with step 1/||Q||_2, run until the projected step is
    below tol in max norm.

    Returns:
        (w, iterations)
    """
    Q = np.asarray(Q, dtype=np.float64)
    c = np.asarray(c, dtype=np.float64)
    lipschitz = float(np.linalg.eigvalsh(Q)[-1])
    if lipschitz <= 0:
        raise ContractViolation("projected_gradient_qp needs a nonzero PSD Q")
    step = 1.0 / lipschitz

    # start from the box centre unless warm-started
    w = np.full(c.size, 0.5) if x0 is None else np.clip(np.asarray(x0, dtype=np.float64), 0.0, 1.0)
    for iteration in range(1, max_iter + 1):
        w_next = np.clip(w - step * (Q @ w + c), 0.0, 1.0)
        if np.max(np.abs(w_next - w)) < tol:
            return w_next, iteration
        w = w_next
    return w, max_iter


def penalized_qp_oracle(enc: QpEncoding, tol: float = 1e-10) -> np.ndarray:
    """Reference minimizer of the encoded objective over [0, 1]^n"""
    w, _ = projected_gradient_qp(-enc.J, -enc.m, tol=tol)
    return w


def solve_portfolio(Sigma, mu, R: float, lambda1: float = 1.0, lambda2: float = 1.0,
                    opts: Optional[SolverOptions] = None):
    """
    Encode, integrate and read out the portfolio w = v(final)

    Returns:
        Portfolio: weights with achieved return, variance and constraint residuals
    """
    from frontier import Portfolio
    # local import: frontier imports this module

    opts = opts or SolverOptions()
    enc = encode_qp(Sigma, mu, R, lambda1, lambda2)
    state, trace = integrate(enc, opts)
    return Portfolio.from_weights(state.v, as_matrix(Sigma), as_vector(mu), R,
                                  converged=trace.converged, final_x=state.x)


def export_trace_csv(trace: HopfieldTrace, path: str):
    """Write the trajectory as columns t, E, v_1..v_n"""
    trace.to_frame().to_csv(path, index=False, float_format=FLOAT_FORMAT, lineterminator="\n")
