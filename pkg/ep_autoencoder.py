#!/usr/bin/env python3
"""
Equilibrium-Propagation Autoencoder
===================================

Trains a pair of continuous Hopfield networks (encoder and decoder) as a
linear autoencoder with equilibrium propagation, then reads the factor
loading matrix A and latent covariance P off the trained couplings.

Each network is bipartite: clamped input units plus one bias unit pinned
to 1, coupled symmetrically to a layer of free output units. Units follow

    dx_i/dt = -x_i + sum_j J_ij g(x_j) + beta (y_i - x_i)    (outputs only)

with the clipped-linear activation g. A training step per sample is

    encoder free phase -> latents s
    decoder free phase (s clamped) -> reconstruction
    decoder +/-beta phases -> decoder update and dC/ds estimate
    encoder +/-beta phases driven by dC/ds -> encoder update

Features:
- Fixed-step relaxation in compiled kernels
- Two-sided EP coupling update restricted to existing edges
- Closed-form steady-state map for extracting A
- Full-batch backpropagation reference trainer
- JSON checkpoints with RNG state and a loss-trace CSV

Author: Analog Portfolio Team
License: MIT
"""

import json
import warnings
from dataclasses import asdict, dataclass, field
from typing import Any, Dict, List, Optional, Tuple

import numpy as np
import pandas as pd
from scipy import linalg

import numeric_kernels as nk
from errors import ContractViolation, InstabilityError, NumericError, SpectralWarning, StepSizeError
from lowrank_svd import numerical_rank
from market_data import FLOAT_FORMAT, ReturnsMatrix, min_eigenvalue_ok, symmetrize
from run_monitor import status

SHUFFLE_STREAM = 1
MAP_TOL = 1e-9
NETWORKS = ("encoder", "decoder")


@dataclass
class EpConfig:
    """Equilibrium-propagation hyperparameters"""
    beta: float = 1e-3
    eta: float = 0.01
    eta_decay: float = 0.0
    c: float = 10.0
    relax_dt: float = 0.05
    relax_steps: int = 2000
    relax_tol: float = 1e-10
    epochs: int = 100
    seed: int = 0

    def __post_init__(self):
        if self.beta <= 0:
            raise ContractViolation("beta must be positive")
        if self.c <= 0:
            raise ContractViolation("clip bound c must be positive")
        if self.eta < 0 or self.eta_decay < 0:
            raise ContractViolation("eta and eta_decay must be nonnegative")
        if not 0 < self.relax_dt < 1:
            raise ContractViolation("relax_dt must lie in (0, 1)")
        if self.relax_steps < 1 or self.epochs < 0:
            raise ContractViolation("relax_steps must be positive and epochs nonnegative")

    def eta_at(self, epoch: int) -> float:
        """eta / (1 + eta_decay * epoch)"""
        return self.eta / (1.0 + self.eta_decay * epoch)


@dataclass(frozen=True)
class Layout:
    """Unit indices of one bipartite network: inputs, bias, outputs"""
    n_in: int
    n_out: int

    @property
    def size(self) -> int:
        return self.n_in + 1 + self.n_out

    @property
    def inputs(self) -> slice:
        return slice(0, self.n_in)

    @property
    def bias(self) -> int:
        return self.n_in

    @property
    def outputs(self) -> slice:
        return slice(self.n_in + 1, self.size)

    @property
    def clamped(self) -> np.ndarray:
        mask = np.zeros(self.size, dtype=bool)
        mask[:self.n_in + 1] = True
        return mask

    @property
    def edges(self) -> np.ndarray:
        mask = np.zeros((self.size, self.size), dtype=bool)
        mask[self.outputs, :self.n_in + 1] = True
        mask[:self.n_in + 1, self.outputs] = True
        return mask


def _check_couplings(J: np.ndarray, layout: Layout, which: str):
    if J.shape != (layout.size, layout.size):
        raise ContractViolation(f"{which} couplings must be {layout.size}x{layout.size}, got {J.shape}")
    if np.max(np.abs(J - J.T)) > 1e-12:
        raise ContractViolation(f"{which} couplings must be symmetric")
    if np.any(np.diag(J) != 0.0):
        raise ContractViolation(f"{which} couplings must have a zero diagonal")
    if np.any(J[~layout.edges] != 0.0):
        raise ContractViolation(f"{which} couplings must only join inputs to outputs")


@dataclass
class EpNetwork:
    """Encoder (n+1+r units) and decoder (r+1+n units) coupling matrices"""
    enc_J: np.ndarray
    dec_J: np.ndarray
    n: int
    r: int

    def __post_init__(self):
        self.enc_J = np.ascontiguousarray(self.enc_J, dtype=np.float64)
        self.dec_J = np.ascontiguousarray(self.dec_J, dtype=np.float64)
        if self.n < 1 or self.r < 1:
            raise ContractViolation("network needs n >= 1 and r >= 1")
        _check_couplings(self.enc_J, self.layout("encoder"), "encoder")
        _check_couplings(self.dec_J, self.layout("decoder"), "decoder")

    def layout(self, which: str) -> Layout:
        if which == "encoder":
            return Layout(n_in=self.n, n_out=self.r)
        if which == "decoder":
            return Layout(n_in=self.r, n_out=self.n)
        raise ContractViolation(f"unknown network '{which}'")

    def couplings(self, which: str) -> np.ndarray:
        return self.enc_J if which == "encoder" else self.dec_J

    def weights(self, which: str) -> np.ndarray:
        """Output-by-(inputs + bias) block; the last column is the bias"""
        lay = self.layout(which)
        return self.couplings(which)[lay.outputs, :lay.n_in + 1]

    @property
    def A(self) -> np.ndarray:
        return self.weights("decoder")[:, :self.r].copy()

    @property
    def B(self) -> np.ndarray:
        return self.weights("encoder")[:, :self.n].copy()

    @classmethod
    def from_weights(cls, A: np.ndarray, B: np.ndarray, dec_bias: Optional[np.ndarray] = None,
                     enc_bias: Optional[np.ndarray] = None) -> "EpNetwork":
        A = np.atleast_2d(np.asarray(A, dtype=np.float64))
        B = np.atleast_2d(np.asarray(B, dtype=np.float64))
        n, r = A.shape
        if B.shape != (r, n):
            raise ContractViolation(f"B must be {r}x{n}, got {B.shape}")
        enc_W = np.column_stack([B, np.zeros(r) if enc_bias is None else enc_bias])
        dec_W = np.column_stack([A, np.zeros(n) if dec_bias is None else dec_bias])
        return cls(enc_J=_bipartite(enc_W, Layout(n, r)), dec_J=_bipartite(dec_W, Layout(r, n)), n=n, r=r)

    def updated(self, enc_dJ: np.ndarray, dec_dJ: np.ndarray) -> "EpNetwork":
        return EpNetwork(enc_J=self.enc_J + enc_dJ, dec_J=self.dec_J + dec_dJ, n=self.n, r=self.r)


def _bipartite(W: np.ndarray, layout: Layout) -> np.ndarray:
    J = np.zeros((layout.size, layout.size))
    J[layout.outputs, :layout.n_in + 1] = W
    J[:layout.n_in + 1, layout.outputs] = W.T
    return J


@dataclass
class TrainTrace:
    """Per-epoch reconstruction loss and mean update norm"""
    epochs: List[int] = field(default_factory=list)
    loss: List[float] = field(default_factory=list)
    update_norm: List[float] = field(default_factory=list)
    method: str = "ep"

    def append(self, epoch: int, loss: float, update_norm: float):
        if not (np.isfinite(loss) and np.isfinite(update_norm)):
            raise NumericError(f"non-finite {self.method} training record at epoch {epoch}")
        self.epochs.append(int(epoch))
        self.loss.append(float(loss))
        self.update_norm.append(float(update_norm))

    def to_frame(self) -> pd.DataFrame:
        return pd.DataFrame({"epoch": self.epochs, f"loss_{self.method}": self.loss,
                             "update_norm": self.update_norm})


def _data_matrix(X) -> np.ndarray:
    values = X.values if isinstance(X, ReturnsMatrix) else np.atleast_2d(np.asarray(X, dtype=np.float64))
    if values.shape[1] < 1:
        raise ContractViolation("training data needs at least one sample")
    return values


def clipped_linear(x, c: float):
    """g(x) = x for |x| <= c, c sgn(x) otherwise"""
    if c <= 0:
        raise ContractViolation("clip bound c must be positive")
    return np.clip(x, -c, c)


def init_network(n: int, r: int, seed: int) -> EpNetwork:
    """Symmetric couplings drawn uniform in [-1/sqrt(n+r), 1/sqrt(n+r)]"""
    rng = np.random.default_rng(seed)
    bound = 1.0 / np.sqrt(n + r)
    enc_W = rng.uniform(-bound, bound, size=(r, n + 1))
    dec_W = rng.uniform(-bound, bound, size=(n, r + 1))
    return EpNetwork(enc_J=_bipartite(enc_W, Layout(n, r)), dec_J=_bipartite(dec_W, Layout(r, n)), n=n, r=r)


# ---------------------------------------------------------------------------
# Relaxation phases
# ---------------------------------------------------------------------------

def relax(J: np.ndarray, x_init: np.ndarray, clamped: np.ndarray, cfg: EpConfig,
          target: Optional[np.ndarray] = None, beta: float = 0.0,
          force: Optional[np.ndarray] = None, phase: str = "free") -> np.ndarray:
    """
    Fixed-step relaxation of a clipped-linear Hopfield network

    Units where target is finite feel beta (y_i - x_i); force is a constant
    drive. Runs until max|dx| < cfg.relax_tol or cfg.relax_steps.

    Raises:
        InstabilityError: state ran away (|x| > 10 c for 100 steps) or went non-finite
    """
    x = np.array(x_init, dtype=np.float64)
    size = x.size
    target = np.full(size, np.nan) if target is None else np.ascontiguousarray(target, dtype=np.float64)
    force = np.zeros(size) if force is None else np.ascontiguousarray(force, dtype=np.float64)
    free = np.ascontiguousarray(~np.asarray(clamped, dtype=bool))

    _, code = nk.clipped_relax(x, np.ascontiguousarray(J, dtype=np.float64), free, target, float(beta),
                               force, cfg.relax_dt, cfg.relax_steps, cfg.relax_tol, cfg.c)
    if code == nk.STATUS_DIVERGED:
        raise InstabilityError(f"relaxation diverged (|x| > {10 * cfg.c:g} for 100 steps)", phase=phase)
    if code == nk.STATUS_NONFINITE:
        raise InstabilityError("relaxation produced a non-finite state", phase=phase)
    return x


def _initial_state(layout: Layout, inputs: np.ndarray) -> np.ndarray:
    inputs = np.asarray(inputs, dtype=np.float64).reshape(-1)
    if inputs.size != layout.n_in:
        raise ContractViolation(f"expected {layout.n_in} clamped inputs, got {inputs.size}")
    x = np.zeros(layout.size)
    x[layout.inputs] = inputs
    x[layout.bias] = 1.0
    return x


def free_phase(net: EpNetwork, which: str, inputs: np.ndarray, cfg: EpConfig,
               x_init: Optional[np.ndarray] = None) -> np.ndarray:
    """Relax with only the inputs (and bias) clamped; returns the full state"""
    lay = net.layout(which)
    x = _initial_state(lay, inputs)
    if x_init is not None:
        x[lay.outputs] = np.asarray(x_init, dtype=np.float64).reshape(-1)
    return relax(net.couplings(which), x, lay.clamped, cfg, phase=f"{which} free")


def clamped_phase(net: EpNetwork, which: str, inputs: np.ndarray, target: Optional[np.ndarray],
                  beta_signed: float, cfg: EpConfig, output_gradient: Optional[np.ndarray] = None,
                  x_start: Optional[np.ndarray] = None) -> np.ndarray:
    """
    Weakly clamped phase starting from the free-phase fixed point

    The outputs are nudged by beta_signed (y - x) toward target, or, for the
    encoder, pushed by the constant force -beta_signed * output_gradient.
    """
    if abs(beta_signed) not in (0.0, cfg.beta):
        raise ContractViolation(f"|beta_signed| must equal cfg.beta = {cfg.beta}")
    lay = net.layout(which)
    if x_start is None:
        x_start = free_phase(net, which, inputs, cfg)

    size = lay.size
    tgt = np.full(size, np.nan)
    force = np.zeros(size)
    if target is not None:
        target = np.asarray(target, dtype=np.float64).reshape(-1)
        if target.size != lay.n_out:
            raise ContractViolation(f"target must have length {lay.n_out}, got {target.size}")
        tgt[lay.outputs] = target
    if output_gradient is not None:
        force[lay.outputs] = -beta_signed * np.asarray(output_gradient, dtype=np.float64).reshape(-1)

    sign = "+" if beta_signed >= 0 else "-"
    return relax(net.couplings(which), x_start, lay.clamped, cfg, target=tgt, beta=beta_signed,
                 force=force, phase=f"{which} clamped ({sign}beta)")


def ep_weight_update(x_plus: np.ndarray, x_minus: np.ndarray, cfg: EpConfig,
                     edges: Optional[np.ndarray] = None, eta: Optional[float] = None) -> np.ndarray:
    """dJ = eta/(2 beta) (v+ v+^T - v- v-^T), zero diagonal, existing edges only"""
    eta = cfg.eta if eta is None else eta
    v_plus = clipped_linear(x_plus, cfg.c)
    v_minus = clipped_linear(x_minus, cfg.c)
    dJ = (eta / (2.0 * cfg.beta)) * (np.outer(v_plus, v_plus) - np.outer(v_minus, v_minus))
    if edges is not None:
        dJ = np.where(edges, dJ, 0.0)
    np.fill_diagonal(dJ, 0.0)
    return dJ


def _state_gradient(J: np.ndarray, x: np.ndarray, c: float) -> np.ndarray:
    """dF/dx_i = x_i - g'(x_i) sum_j J_ij g(x_j)"""
    slope = (np.abs(x) <= c).astype(np.float64)
    return x - slope * (J @ clipped_linear(x, c))


def encoder_output_gradient(net: EpNetwork, dec_plus: np.ndarray, dec_minus: np.ndarray,
                            cfg: EpConfig) -> np.ndarray:
    """
    Estimate dC/ds on the decoder's clamped latent units

    (1/2 beta) (dF/dx |+beta - dF/dx |-beta), read on the latent inputs. This is
    the force that drives the encoder's output units in its clamped phases.
    """
    J = net.dec_J
    lay = net.layout("decoder")
    diff = _state_gradient(J, dec_plus, cfg.c) - _state_gradient(J, dec_minus, cfg.c)
    return diff[lay.inputs] / (2.0 * cfg.beta)


# ---------------------------------------------------------------------------
# Closed-form readouts
# ---------------------------------------------------------------------------

def steady_outputs(net: EpNetwork, which: str, V_in: np.ndarray, c: float) -> np.ndarray:
    """Free-phase output fixed points for every column of V_in (no lateral edges, so exact)"""
    V_in = np.atleast_2d(np.asarray(V_in, dtype=np.float64))
    augmented = np.vstack([V_in, np.ones((1, V_in.shape[1]))])
    return net.weights(which) @ clipped_linear(augmented, c)


def reconstruction_loss(net: EpNetwork, X, c: float = 10.0) -> float:
    """||X - X_hat||_F^2 through the encoder and decoder fixed points"""
    values = _data_matrix(X)
    latents = steady_outputs(net, "encoder", values, c)
    residual = values - steady_outputs(net, "decoder", latents, c)
    return float(np.sum(residual * residual))


def encode(net: EpNetwork, X, cfg: EpConfig) -> np.ndarray:
    """Latents (r x N) from one encoder free phase per sample"""
    values = _data_matrix(X)
    lay = net.layout("encoder")
    return np.column_stack([free_phase(net, "encoder", values[:, k], cfg)[lay.outputs]
                            for k in range(values.shape[1])])


def reconstruct(net: EpNetwork, X, cfg: EpConfig, latents: Optional[np.ndarray] = None) -> np.ndarray:
    """Reconstructions (n x N): encoder then decoder free phases (pass latents to skip the encoder)"""
    if latents is None:
        latents = encode(net, X, cfg)
    lay = net.layout("decoder")
    return np.column_stack([free_phase(net, "decoder", latents[:, k], cfg)[lay.outputs]
                            for k in range(latents.shape[1])])


# ---------------------------------------------------------------------------
# Training
# ---------------------------------------------------------------------------

def train_epoch(net: EpNetwork, X, cfg: EpConfig, epoch: int = 0,
                rng: Optional[np.random.Generator] = None) -> Tuple[EpNetwork, Dict[str, float]]:
    """
    One pass of per-sample EP updates in a seeded shuffled order

    Returns:
        (updated network, {"epoch", "loss", "update_norm"}) with the loss
        measured after the epoch
    """
    values = _data_matrix(X)
    if values.shape[0] != net.n:
        raise ContractViolation(f"data has {values.shape[0]} rows but the network has n = {net.n}")
    rng = rng if rng is not None else np.random.default_rng([cfg.seed, SHUFFLE_STREAM])
    eta = cfg.eta_at(epoch)
    enc_lay, dec_lay = net.layout("encoder"), net.layout("decoder")
    enc_edges, dec_edges = enc_lay.edges, dec_lay.edges

    norms = []
    for k in rng.permutation(values.shape[1]):
        x = values[:, k]
        enc_free = free_phase(net, "encoder", x, cfg)
        s = enc_free[enc_lay.outputs]

        dec_free = free_phase(net, "decoder", s, cfg)
        dec_plus = clamped_phase(net, "decoder", s, x, cfg.beta, cfg, x_start=dec_free)
        dec_minus = clamped_phase(net, "decoder", s, x, -cfg.beta, cfg, x_start=dec_free)
        dec_dJ = ep_weight_update(dec_plus, dec_minus, cfg, edges=dec_edges, eta=eta)

        grad = encoder_output_gradient(net, dec_plus, dec_minus, cfg)
        enc_plus = clamped_phase(net, "encoder", x, None, cfg.beta, cfg, output_gradient=grad, x_start=enc_free)
        enc_minus = clamped_phase(net, "encoder", x, None, -cfg.beta, cfg, output_gradient=grad, x_start=enc_free)
        enc_dJ = ep_weight_update(enc_plus, enc_minus, cfg, edges=enc_edges, eta=eta)

        net = net.updated(enc_dJ, dec_dJ)
        norms.append(float(np.sqrt(np.sum(enc_dJ ** 2) + np.sum(dec_dJ ** 2))))

    loss = reconstruction_loss(net, values, cfg.c)
    return net, {"epoch": epoch + 1, "loss": loss, "update_norm": float(np.mean(norms))}


def train(net: EpNetwork, X, cfg: EpConfig, epochs: Optional[int] = None,
          rng: Optional[np.random.Generator] = None, start_epoch: int = 0,
          log_every: int = 10) -> Tuple[EpNetwork, TrainTrace]:
    """Run train_epoch repeatedly; rng carries the shuffle state across epochs"""
    values = _data_matrix(X)
    epochs = cfg.epochs if epochs is None else epochs
    rng = rng if rng is not None else np.random.default_rng([cfg.seed, SHUFFLE_STREAM])
    trace = TrainTrace(method="ep")

    status(f"🔧 EP training: {net.n}->{net.r}->{net.n}, {values.shape[1]} samples, "
           f"{epochs} epochs, beta={cfg.beta:g}, eta={cfg.eta:g}")
    for epoch in range(start_epoch, start_epoch + epochs):
        net, row = train_epoch(net, values, cfg, epoch=epoch, rng=rng)
        trace.append(row["epoch"], row["loss"], row["update_norm"])
        if log_every and (row["epoch"] % log_every == 0 or epoch == start_epoch + epochs - 1):
            status(f"📊 Epoch {row['epoch']}: loss={row['loss']:.6g}, update={row['update_norm']:.3e}")
    return net, trace


def write_loss_trace_csv(trace: TrainTrace, path: str):
    """Columns epoch, loss_<method>, update_norm"""
    trace.to_frame().to_csv(path, index=False, float_format=FLOAT_FORMAT, lineterminator="\n")


# ---------------------------------------------------------------------------
# Extraction
# ---------------------------------------------------------------------------

def steady_state_map(J: np.ndarray, t0: float = 1.0, clamped: Optional[np.ndarray] = None,
                     max_horizon: float = 200.0, tol: float = MAP_TOL) -> Tuple[np.ndarray, float]:
    """
    lim_t exp{(J - I) t} with clamped units held fixed

    Steps t -> t + 1 from t0 until successive maps differ by less than tol in
    max norm. Warns with SpectralWarning (listing the eigenvalues with
    nonnegative real part) if the horizon runs out first.

    Returns:
        (map, t at which it settled)
    """
    J = np.atleast_2d(np.asarray(J, dtype=np.float64))
    size = J.shape[0]
    generator = J - np.eye(size)
    free = np.ones(size, dtype=bool)
    if clamped is not None:
        free = ~np.asarray(clamped, dtype=bool)
        generator[~free, :] = 0.0

    unit_step = linalg.expm(generator)
    current = linalg.expm(generator * t0)
    t = t0
    while t < max_horizon:
        following = current @ unit_step
        t += 1.0
        if np.max(np.abs(following - current)) < tol:
            return following, t
        current = following

    eigenvalues = linalg.eigvals(generator[np.ix_(free, free)])
    offending = sorted(eigenvalues[eigenvalues.real >= 0], key=lambda z: -z.real)
    warnings.warn(f"steady-state map did not settle by t = {max_horizon:g}; eigenvalues of J - I "
                  f"with nonnegative real part: {[complex(z) for z in offending]}", SpectralWarning)
    return current, t


def decoder_matrix(net: EpNetwork, t_eff: float = 1.0, max_horizon: float = 200.0,
                   c: float = 10.0) -> Tuple[np.ndarray, np.ndarray]:
    """
    Probe the trained decoder with unit latent inputs

    Returns:
        (full (r+1+n)-square steady-state map, n x r loading block A)
    """
    lay = net.layout("decoder")
    mapping, _ = steady_state_map(net.dec_J, t0=t_eff, clamped=lay.clamped, max_horizon=max_horizon)
    A = mapping[lay.outputs, lay.inputs].copy()
    if np.max(np.abs(A)) > c:
        raise ContractViolation(f"decoder leaves the linear regime on unit probes (max |A| > c = {c:g})")
    return mapping, A


def pseudo_inverse_encoder(A: np.ndarray) -> np.ndarray:
    """B = (A^T A)^-1 A^T for full-column-rank A"""
    A = np.atleast_2d(np.asarray(A, dtype=np.float64))
    r = A.shape[1]
    if numerical_rank(A, rel_tol=1e-12) < r:
        raise NumericError(f"A is rank-deficient (rank < {r}); no pseudo-inverse encoder")
    try:
        return linalg.solve(A.T @ A, A.T, assume_a="pos")
    except linalg.LinAlgError as e:
        raise NumericError(f"A^T A is singular: {e}") from e


def latent_covariance(latents: np.ndarray) -> np.ndarray:
    """P = (1/N) S S^T"""
    latents = np.atleast_2d(np.asarray(latents, dtype=np.float64))
    if latents.shape[1] < 1:
        raise ContractViolation("latent covariance needs at least one sample")
    return symmetrize(latents @ latents.T / latents.shape[1])


def lowrank_from_autoencoder(A: np.ndarray, P: np.ndarray) -> np.ndarray:
    """M = A P A^T"""
    A = np.atleast_2d(np.asarray(A, dtype=np.float64))
    P = np.atleast_2d(np.asarray(P, dtype=np.float64))
    if P.shape != (A.shape[1], A.shape[1]):
        raise ContractViolation(f"P must be {A.shape[1]}x{A.shape[1]}, got {P.shape}")
    ok, lo, _ = min_eigenvalue_ok(symmetrize(P))
    if not ok:
        raise ContractViolation(f"latent covariance P is not PSD (min eigenvalue {lo:.3e})")
    return symmetrize(A @ P @ A.T)


def projection_spectrum_report(A: np.ndarray, horizon: float = 40.0) -> Dict[str, Any]:
    """
    Projection checks for J = A (A^T A)^-1 A^T

    Reports the idempotence error ||J^2 - J||_F, the eigenvalues of J - I,
    their worst distance from {-1, 0}, the unit-eigenvalue count of J and
    max|exp{(J - I) horizon} - J|.
    """
    A = np.atleast_2d(np.asarray(A, dtype=np.float64))
    J = A @ pseudo_inverse_encoder(A)
    eigenvalues = linalg.eigvalsh(symmetrize(J))
    shifted = eigenvalues - 1.0
    deviation = np.minimum(np.abs(shifted), np.abs(shifted + 1.0))
    flow = linalg.expm((J - np.eye(J.shape[0])) * horizon)
    return {
        "idempotence_error": float(np.linalg.norm(J @ J - J, "fro")),
        "shifted_eigenvalues": shifted,
        "max_eigen_deviation": float(np.max(deviation)),
        "unit_eigenvalue_count": int(np.sum(np.abs(eigenvalues - 1.0) < 1e-6)),
        "steady_state_error": float(np.max(np.abs(flow - J))),
    }


def clip_audit(net: EpNetwork, X, c: float = 10.0) -> List[Dict[str, Any]]:
    """List every unit whose fixed-point potential exceeds the clip bound"""
    values = _data_matrix(X)
    latents = steady_outputs(net, "encoder", values, c)
    outputs = steady_outputs(net, "decoder", latents, c)

    findings = []
    for network, label, block in (("encoder", "input", values), ("encoder", "output", latents),
                                  ("decoder", "output", outputs)):
        for unit, sample in np.argwhere(np.abs(block) > c):
            findings.append({"network": network, "layer": label, "unit": int(unit),
                             "sample": int(sample), "value": float(block[unit, sample])})
    if findings:
        status(f"⚠️ Clip audit: {len(findings)} unit value(s) beyond c = {c:g}")
    return findings


def pca_floor(X, r: int) -> float:
    """Best rank-r reconstruction loss: sum of the dropped eigenvalues of X X^T"""
    singular = linalg.svdvals(_data_matrix(X))
    return float(np.sum(singular[r:] ** 2))


# ---------------------------------------------------------------------------
# Backpropagation reference
# ---------------------------------------------------------------------------

def bp_loss(A: np.ndarray, B: np.ndarray, X: np.ndarray) -> float:
    residual = X - A @ (B @ X)
    return float(np.sum(residual * residual))


def bp_gradients(A: np.ndarray, B: np.ndarray, X: np.ndarray) -> Tuple[np.ndarray, np.ndarray]:
    """Analytic gradients of ||X - A B X||_F^2 with respect to A and B"""
    BX = B @ X
    residual = X - A @ BX
    return -2.0 * residual @ BX.T, -2.0 * A.T @ residual @ X.T


def bp_default_eta(X) -> float:
    """0.2 / lambda_max(X X^T)"""
    top = float(linalg.svdvals(_data_matrix(X))[0]) ** 2
    return 0.2 / top if top > 0 else 0.0


def backprop_reference_train(X, r: int, epochs: int, eta: Optional[float], seed: int,
                             log_every: int = 100) -> Tuple[np.ndarray, np.ndarray, TrainTrace]:
    """
    Full-batch gradient descent on ||X - A B X||_F^2

    Initialization matches init_network's bound. eta=None picks
    bp_default_eta(X).

    Raises:
        StepSizeError: the loss grew past 10x its initial value
    """
    values = _data_matrix(X)
    n = values.shape[0]
    eta = bp_default_eta(values) if eta is None else eta
    rng = np.random.default_rng(seed)
    bound = 1.0 / np.sqrt(n + r)
    A = rng.uniform(-bound, bound, size=(n, r))
    B = rng.uniform(-bound, bound, size=(r, n))

    initial = bp_loss(A, B, values)
    trace = TrainTrace(method="bp")
    status(f"🔧 BP training: {n}->{r}->{n}, {values.shape[1]} samples, {epochs} epochs, eta={eta:g}")
    for epoch in range(epochs):
        grad_A, grad_B = bp_gradients(A, B, values)
        step_A, step_B = eta * grad_A, eta * grad_B
        A, B = A - step_A, B - step_B
        loss = bp_loss(A, B, values)
        if not np.isfinite(loss) or loss > 10.0 * initial:
            raise StepSizeError(f"backprop diverged at epoch {epoch + 1} (loss {loss:.3e} vs initial "
                                f"{initial:.3e}); lower eta")
        trace.append(epoch + 1, loss, float(np.sqrt(np.sum(step_A ** 2) + np.sum(step_B ** 2))))
        if log_every and ((epoch + 1) % log_every == 0 or epoch == epochs - 1):
            status(f"📊 BP epoch {epoch + 1}: loss={loss:.6g}")
    return A, B, trace


# ---------------------------------------------------------------------------
# Checkpoints
# ---------------------------------------------------------------------------

def save_checkpoint(path: str, net: EpNetwork, cfg: EpConfig, epoch: int,
                    rng: Optional[np.random.Generator] = None):
    """JSON with both coupling matrices, config, epoch index and RNG state"""
    record = {
        "n": net.n,
        "r": net.r,
        "encoder": net.enc_J.tolist(),
        "decoder": net.dec_J.tolist(),
        "config": asdict(cfg),
        "epoch": int(epoch),
        "rng_state": rng.bit_generator.state if rng is not None else None,
    }
    with open(path, "w", encoding="utf-8") as f:
        json.dump(record, f, indent=2)


def load_checkpoint(path: str) -> Tuple[EpNetwork, EpConfig, int, Optional[np.random.Generator]]:
    try:
        with open(path, "r", encoding="utf-8") as f:
            record = json.load(f)
        net = EpNetwork(enc_J=np.array(record["encoder"]), dec_J=np.array(record["decoder"]),
                        n=int(record["n"]), r=int(record["r"]))
        cfg = EpConfig(**record["config"])
    except (KeyError, TypeError, json.JSONDecodeError) as e:
        raise ContractViolation(f"invalid checkpoint {path}: {e}") from e

    rng = None
    if record.get("rng_state") is not None:
        rng = np.random.default_rng()
        rng.bit_generator.state = record["rng_state"]
    return net, cfg, int(record["epoch"]), rng
