#!/usr/bin/env python3
"""
Numba kernels for the annealed logistic network and the clipped-linear relaxation.
Plain sequential loops; results are bitwise reproducible for fixed inputs.
"""

import math

import numba
import numpy as np

STATUS_OK = 0
STATUS_CONVERGED = 1
STATUS_NONFINITE = 2
STATUS_DIVERGED = 3

SCHEDULE_LINEAR = 0
SCHEDULE_CONSTANT = 1


@numba.njit(cache=True)
def logistic_scalar(x):
    # exp of a non-positive argument only
    if x >= 0.0:
        return 1.0 / (1.0 + math.exp(-x))
    z = math.exp(x)
    return z / (1.0 + z)


@numba.njit(cache=True)
def anneal_value(t, p0, period, shape):
    if shape == SCHEDULE_CONSTANT:
        return p0
    if t >= period:
        return 0.0
    return p0 * (1.0 - t / period)


@numba.njit(cache=True, nogil=True)
def hopfield_euler(x, J, m, t0, dt, n_steps, p0, period, shape, stop_tol):
    """
    Advance dx/dt = -p(t) x + J g(x) + m by explicit Euler, in place

    Returns (steps taken, status). Stops early once t >= period and
    max|dx/dt| < stop_tol, or when the state stops being finite.
    """
    n = x.shape[0]
    v = np.empty(n)
    for step in range(n_steps):
        t = t0 + step * dt
        p = anneal_value(t, p0, period, shape)
        for i in range(n):
            v[i] = logistic_scalar(x[i])
        # v is frozen for the whole step
        max_rate = 0.0
        for i in range(n):
            acc = m[i] - p * x[i]
            for j in range(n):
                acc += J[i, j] * v[j]
            rate = abs(acc)
            if rate > max_rate:
                max_rate = rate
            x[i] += dt * acc
        for i in range(n):
            if not math.isfinite(x[i]):
                return step + 1, STATUS_NONFINITE
        if shape == SCHEDULE_LINEAR and t >= period and max_rate < stop_tol:
            return step + 1, STATUS_CONVERGED
    return n_steps, STATUS_OK


@numba.njit(cache=True)
def clipped_scalar(x, c):
    if x > c:
        return c
    if x < -c:
        return -c
    return x


@numba.njit(cache=True, nogil=True)
def clipped_relax(x, J, free, target, beta, force, dt, max_steps, tol, c):
    """
    Relax dx_i/dt = -x_i + sum_j J_ij g(x_j) + beta (y_i - x_i) + f_i on free units

    target/beta apply where target is finite (the nudged output set); force is
    a constant external drive. Clamped units never move. Returns
    (steps taken, status); divergence means max|x| > 10 c for 100 straight steps.
    """
    n = x.shape[0]
    v = np.empty(n)
    delta = np.empty(n)
    runaway = 0
    for step in range(max_steps):
        for i in range(n):
            v[i] = clipped_scalar(x[i], c)
        max_delta = 0.0
        for i in range(n):
            if not free[i]:
                delta[i] = 0.0
                continue
            acc = -x[i] + force[i]
            for j in range(n):
                acc += J[i, j] * v[j]
            if math.isfinite(target[i]):
                acc += beta * (target[i] - x[i])
            delta[i] = dt * acc
            if abs(delta[i]) > max_delta:
                max_delta = abs(delta[i])
        max_abs = 0.0
        for i in range(n):
            x[i] += delta[i]
            if not math.isfinite(x[i]):
                return step + 1, STATUS_NONFINITE
            if abs(x[i]) > max_abs:
                max_abs = abs(x[i])
        # runaway counter resets on any bounded step
        if max_abs > 10.0 * c:
            runaway += 1
            if runaway >= 100:
                return step + 1, STATUS_DIVERGED
        else:
            runaway = 0
        if max_delta < tol:
            return step + 1, STATUS_CONVERGED
    return max_steps, STATUS_OK
