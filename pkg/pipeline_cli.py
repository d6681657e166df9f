#!/usr/bin/env python3
"""
Portfolio Pipeline Command Line
===============================

Wires data ingestion, factor training, covariance assembly, portfolio
solving and frontier sweeps into five subcommands:

    synth       draw synthetic factor-model returns
    covariance  sample covariance of a returns CSV
    factor      low-rank factor model (svd, ep or bp)
    solve       one Hopfield portfolio solve at a target return
    frontier    efficient-frontier sweep with extremal points

Exit codes: 0 success, 1 numeric failure, 2 usage or parse problem.
Every command writes a manifest.json with file digests into its output
directory, which it holds exclusively while running.

Usage:
    python pipeline_cli.py synth --output-dir data
    python pipeline_cli.py factor --input data/returns.csv --method ep --rank 10 --output-dir fit
    python pipeline_cli.py frontier --covariance fit/lowrank_cov.csv --input data/returns.csv

Author: Analog Portfolio Team
License: MIT
"""

import argparse
import json
import os
import sys
from typing import Any, Callable, Dict, List, Optional, Tuple

import numpy as np

import ep_autoencoder as epa
import frontier as fr
import lowrank_svd as lr
from errors import PipelineError, UsageError
from hopfield_qp import encode_qp, export_trace_csv, full_penalized_objective, integrate
from market_data import (CovarianceEstimate, ExpectedReturns, ReturnsMatrix, demean,
                         generate_synthetic_returns, load_returns_file, mean_returns,
                         random_factor_model, read_matrix_csv, sample_covariance, save_returns,
                         write_matrix_csv)
from pipeline_config import PipelineConfig, load_pipeline_config, save_config
from run_monitor import RunManifest, RunMonitor, output_dir_lock, set_verbose, status

MIN_SOLVED_FRACTION = 0.9

CommandResult = Tuple[List[str], int]


def _write_json(record: Dict[str, Any], path: str) -> str:
    with open(path, "w", encoding="utf-8") as f:
        json.dump(record, f, indent=2, sort_keys=True)
    return path


def _out(cfg: PipelineConfig, name: str) -> str:
    return os.path.join(cfg.output_dir, name)


def _require_input(cfg: PipelineConfig) -> str:
    if not cfg.input:
        raise UsageError("this command needs --input (a returns CSV)")
    return cfg.input


def _eigen_range(matrix: np.ndarray) -> Dict[str, float]:
    eigenvalues = np.linalg.eigvalsh(matrix)
    return {"min_eigenvalue": float(eigenvalues[0]), "max_eigenvalue": float(eigenvalues[-1])}


def _load_problem(args: argparse.Namespace, cfg: PipelineConfig,
                  monitor: RunMonitor) -> Tuple[CovarianceEstimate, ExpectedReturns, List[str]]:
    """Sigma from --covariance or the input sample; mu from --mu or the input means"""
    with monitor.stage("load"):
        returns = load_returns_file(cfg.input) if cfg.input else None

        # Sigma
        if args.covariance:
            matrix, tickers = read_matrix_csv(args.covariance, header=True)
            Sigma = CovarianceEstimate(matrix=matrix, provenance="external")
        elif returns is not None:
            Sigma, tickers = sample_covariance(demean(returns)), list(returns.tickers)
        else:
            raise UsageError("need --covariance or --input to build the covariance")

        # mu
        if args.mu:
            mu_file = load_returns_file(args.mu)
            mu, mu_tickers = ExpectedReturns(mu=mu_file.values[:, 0]), list(mu_file.tickers)
        elif returns is not None:
            mu, mu_tickers = mean_returns(returns), list(returns.tickers)
        else:
            raise UsageError("need --mu or --input to estimate expected returns")

        # both sides must describe the same assets in the same order
        if mu.mu.size != Sigma.n:
            raise UsageError(f"covariance is {Sigma.n}x{Sigma.n} but there are {mu.mu.size} expected returns")
        if mu_tickers != tickers:
            detail = "ticker order differs" if sorted(mu_tickers) == sorted(tickers) else "tickers differ"
            raise UsageError(f"covariance and expected returns disagree: {detail} "
                             f"({','.join(tickers)} vs {','.join(mu_tickers)})")
    return Sigma, mu, tickers


# ---------------------------------------------------------------------------
# Commands
# ---------------------------------------------------------------------------

def cmd_synth(args: argparse.Namespace, cfg: PipelineConfig, monitor: RunMonitor) -> CommandResult:
    """returns.csv, true_factor_model.json and true_lowrank_cov.csv from x = A s + e"""
    n, N, r = int(cfg.synth["n"]), int(cfg.synth["N"]), int(cfg.synth["r"])
    with monitor.stage("synth"):
        A, P, noise_std = random_factor_model(n, r, cfg.seed, noise_std=float(cfg.synth["noise_std"]))
        X = generate_synthetic_returns(A, P, noise_std, N, seed=cfg.seed)
        truth = lr.FactorModel(A=A, P=P, Psi=noise_std ** 2, r=r)

        paths = [_out(cfg, "returns.csv"), _out(cfg, "true_factor_model.json"),
                 _out(cfg, "true_lowrank_cov.csv")]
        save_returns(X, paths[0])
        lr.save_factor_model(truth, paths[1])
        write_matrix_csv(truth.lowrank(), paths[2], header=list(X.tickers))
    status(f"📊 Synthetic returns: n={n}, N={N}, r={r}, noise_std={cfg.synth['noise_std']:g}")
    return paths, 0


def cmd_covariance(args: argparse.Namespace, cfg: PipelineConfig, monitor: RunMonitor) -> CommandResult:
    """sample_cov.csv plus covariance_summary.json"""
    with monitor.stage("load"):
        X = load_returns_file(_require_input(cfg))
    with monitor.stage("covariance"):
        S = sample_covariance(demean(X))
        paths = [_out(cfg, "sample_cov.csv"), _out(cfg, "covariance_summary.json")]
        write_matrix_csv(S.matrix, paths[0], header=list(X.tickers))
        summary = {"n": X.n, "N": X.N, **_eigen_range(S.matrix)}
        _write_json(summary, paths[1])
    status(f"📊 Sample covariance: n={X.n}, N={X.N}, eigenvalues in "
           f"[{summary['min_eigenvalue']:.4g}, {summary['max_eigenvalue']:.4g}]")
    return paths, 0


def _fit_factor_model(cfg: PipelineConfig, X: ReturnsMatrix, S: CovarianceEstimate,
                      monitor: RunMonitor) -> Tuple[lr.FactorModel, Optional[epa.TrainTrace], Dict[str, Any]]:
    r = cfg.rank
    if r > X.n:
        raise UsageError(f"rank {r} exceeds the number of assets {X.n}")
    extra: Dict[str, Any] = {}

    if cfg.method == "svd":
        with monitor.stage("factor"):
            return lr.factor_model_from_svd(S, r), None, extra

    if cfg.method == "ep":
        with monitor.stage("factor"):
            net = epa.init_network(X.n, r, cfg.seed)
            net, trace = epa.train(net, X, cfg.ep)
            extra["clipped_units"] = len(epa.clip_audit(net, X, cfg.ep.c))
        with monitor.stage("extract"):
            _, A = epa.decoder_matrix(net, c=cfg.ep.c)
            latents = epa.encode(net, X, cfg.ep)
            B = net.B
            residual = X.values - epa.reconstruct(net, X, cfg.ep, latents=latents)
            extra["relaxed_loss"] = float(np.sum(residual * residual))
    else:
        with monitor.stage("factor"):
            A, B, trace = epa.backprop_reference_train(X, r, int(cfg.bp["epochs"]), cfg.bp["eta"], cfg.seed)
        with monitor.stage("extract"):
            latents = B @ X.values

    P = epa.latent_covariance(latents)
    M = epa.lowrank_from_autoencoder(A, P)
    extra["final_loss"] = trace.loss[-1]
    extra["pca_floor"] = epa.pca_floor(X, r)
    return lr.FactorModel(A=A, P=P, Psi=lr.estimate_psi(S, M), r=r, B=B), trace, extra


def cmd_factor(args: argparse.Namespace, cfg: PipelineConfig, monitor: RunMonitor) -> CommandResult:
    """factor_model.json, lowrank_cov.csv, residual.csv, factor_summary.json and loss_trace.csv"""
    with monitor.stage("load"):
        X = demean(load_returns_file(_require_input(cfg)))
        S = sample_covariance(X)

    model, trace, extra = _fit_factor_model(cfg, X, S, monitor)

    with monitor.stage("assemble"):
        M = model.lowrank()
        Sigma = lr.assemble_covariance(M, model.Psi, provenance=f"lowrank-{cfg.method}")
        gap = lr.frobenius_gap(S, M, model.Psi)
        summary = {
            "method": cfg.method,
            "rank": cfg.rank,
            "frobenius_gap": gap,
            "svd_oracle_gap": lr.frobenius_gap(S, *_svd_parts(S, cfg.rank)),
            "dropped_eigen_energy": lr.dropped_eigen_energy(S, cfg.rank),
            **_eigen_range(Sigma.matrix),
            **extra,
        }
        if args.true_model:
            truth = lr.load_factor_model(args.true_model).lowrank()
            if truth.shape != M.shape:
                raise UsageError(f"true model is {truth.shape[0]}-dimensional, data has {M.shape[0]} assets")
            summary["recovery_error"] = float(np.linalg.norm(M - truth) / np.linalg.norm(truth))

        tickers = list(X.tickers)
        paths = [_out(cfg, "factor_model.json"), _out(cfg, "lowrank_cov.csv"),
                 _out(cfg, "residual.csv"), _out(cfg, "factor_summary.json")]
        lr.save_factor_model(model, paths[0])
        write_matrix_csv(Sigma.matrix, paths[1], header=tickers)
        write_matrix_csv(lr.residual_map(S, M, model.Psi), paths[2], header=tickers)
        _write_json(summary, paths[3])
        # svd has no training trace
        if trace is not None:
            paths.append(_out(cfg, "loss_trace.csv"))
            epa.write_loss_trace_csv(trace, paths[-1])

    status(f"📊 Factor model ({cfg.method}, r={cfg.rank}): ||S - M - Psi||_F^2 = {gap:.6g}")
    if "recovery_error" in summary:
        status(f"📊 Relative error against the true A P A^T: {summary['recovery_error']:.4f}")
    return paths, 0


def _svd_parts(S: CovarianceEstimate, r: int):
    M, _ = lr.svd_lowrank(S, r)
    return M, lr.estimate_psi(S, M)


def cmd_solve(args: argparse.Namespace, cfg: PipelineConfig, monitor: RunMonitor) -> CommandResult:
    """portfolio.json (and hopfield_trace.csv with --trace) for one target return"""
    if args.target_return is None:
        raise UsageError("solve needs --target-return")
    Sigma, mu, tickers = _load_problem(args, cfg, monitor)
    R = float(args.target_return)
    lambda1, lambda2 = float(cfg.solver["lambda1"]), float(cfg.solver["lambda2"])
    opts = cfg.solver_options()

    paths = [_out(cfg, "portfolio.json")]
    with monitor.stage("solve"):
        state, trace = integrate(encode_qp(Sigma, mu, R, lambda1, lambda2), opts)
        portfolio = fr.Portfolio.from_weights(state.v, Sigma, mu, R, converged=trace.converged,
                                              final_x=state.x)
        if args.trace:
            paths.append(_out(cfg, "hopfield_trace.csv"))
            export_trace_csv(trace, paths[-1])
        record = {
            "target_return": R,
            "tickers": tickers,
            "w": [float(x) for x in portfolio.w],
            "achieved_return": portfolio.achieved_return,
            "variance": portfolio.variance,
            "sharpe": (portfolio.achieved_return / np.sqrt(portfolio.variance)
                       if portfolio.variance > 0 else None),
            "return_residual": portfolio.return_residual,
            "budget_residual": portfolio.budget_residual,
            "converged": portfolio.converged,
            "penalized_objective": full_penalized_objective(portfolio.w, Sigma, mu, R, lambda1, lambda2),
        }
        _write_json(record, paths[0])
    status(f"📊 Portfolio at R={R:g}: return={portfolio.achieved_return:.6g}, "
           f"variance={portfolio.variance:.6g}, budget residual={portfolio.budget_residual:.2e}")
    return paths, 0


def cmd_frontier(args: argparse.Namespace, cfg: PipelineConfig, monitor: RunMonitor) -> CommandResult:
    """frontier.csv, frontier.json and summary.json; exit 1 below 90% solved points"""
    Sigma, mu, _ = _load_problem(args, cfg, monitor)
    sweep = cfg.sweep
    with monitor.stage("frontier"):
        curve = fr.sweep_frontier(Sigma, mu, float(sweep["r_min"]), float(sweep["r_max"]), int(sweep["steps"]),
                                  solver_opts=cfg.solver_options(), lambda1=float(cfg.solver["lambda1"]),
                                  lambda2=float(cfg.solver["lambda2"]), warm_start=bool(sweep["warm_start"]),
                                  max_workers=int(sweep["max_workers"]))
        paths = [_out(cfg, "frontier.csv"), _out(cfg, "frontier.json"), _out(cfg, "summary.json")]
        fr.write_frontier_csv(curve, Sigma.n, paths[0])
        fr.write_frontier_json(curve, paths[1])
        _write_json(fr.frontier_summary(curve), paths[2])

    # the outputs above are kept even for a mostly failed sweep
    solved_fraction = len(curve.solved) / len(curve.points)
    if solved_fraction < MIN_SOLVED_FRACTION:
        status(f"❌ Only {solved_fraction:.0%} of frontier points solved (need {MIN_SOLVED_FRACTION:.0%})")
        return paths, 1
    return paths, 0


COMMANDS: Dict[str, Callable[[argparse.Namespace, PipelineConfig, RunMonitor], CommandResult]] = {
    "synth": cmd_synth,
    "covariance": cmd_covariance,
    "factor": cmd_factor,
    "solve": cmd_solve,
    "frontier": cmd_frontier,
}


# ---------------------------------------------------------------------------
# Argument parsing
# ---------------------------------------------------------------------------

def build_parser() -> argparse.ArgumentParser:
    common = argparse.ArgumentParser(add_help=False)
    common.add_argument("--input", help="returns CSV (header of tickers, one sample per row)")
    common.add_argument("--output-dir", help="directory for all outputs (default: results)")
    common.add_argument("--seed", type=int, help="seed for every random draw")
    common.add_argument("--config", help="JSON config file")
    common.add_argument("--save-config", help="also write the merged config to this JSON file")
    common.add_argument("--quiet", action="store_true", help="suppress status lines")

    problem = argparse.ArgumentParser(add_help=False)
    problem.add_argument("--covariance", help="covariance CSV with a ticker header")
    problem.add_argument("--mu", help="expected returns CSV (ticker header, one row)")
    problem.add_argument("--lambda1", type=float, help="return-constraint penalty weight")
    problem.add_argument("--lambda2", type=float, help="budget-constraint penalty weight")

    parser = argparse.ArgumentParser(description="Analog portfolio optimization pipeline (digital simulation)")
    sub = parser.add_subparsers(dest="command", required=True)

    synth = sub.add_parser("synth", parents=[common], help="synthetic factor-model returns")
    synth.add_argument("--n", type=int, help="number of assets")
    synth.add_argument("--samples", type=int, help="number of time samples N")
    synth.add_argument("--rank", type=int, help="true number of latent factors")
    synth.add_argument("--noise-std", type=float, help="idiosyncratic noise standard deviation")

    sub.add_parser("covariance", parents=[common], help="sample covariance")

    factor = sub.add_parser("factor", parents=[common], help="low-rank factor model")
    factor.add_argument("--method", choices=("ep", "bp", "svd"))
    factor.add_argument("--rank", type=int)
    factor.add_argument("--epochs", type=int, help="training epochs for ep or bp")
    factor.add_argument("--true-model", help="true_factor_model.json for a recovery error")

    solve = sub.add_parser("solve", parents=[common, problem], help="single Hopfield portfolio solve")
    solve.add_argument("--target-return", type=float)
    solve.add_argument("--trace", action="store_true", help="also write hopfield_trace.csv")

    sweep = sub.add_parser("frontier", parents=[common, problem], help="efficient-frontier sweep")
    sweep.add_argument("--r-min", type=float)
    sweep.add_argument("--r-max", type=float)
    sweep.add_argument("--steps", type=int)
    sweep.add_argument("--workers", type=int, help="threads for cold-started sweeps")
    sweep.add_argument("--no-warm-start", action="store_true")

    return parser


def overrides_from_args(args: argparse.Namespace) -> Dict[str, Any]:
    """Dotted config keys set by flags (unset flags stay None and are ignored)"""
    def flag(name):
        return getattr(args, name, None)

    epochs = flag("epochs")
    method = flag("method")
    return {
        "seed": flag("seed"),
        "data.input": flag("input"),
        "output.dir": flag("output_dir"),
        "synth.n": flag("n"),
        "synth.N": flag("samples"),
        "synth.r": flag("rank") if args.command == "synth" else None,
        "synth.noise_std": flag("noise_std"),
        "factor.method": method,
        "factor.rank": flag("rank") if args.command == "factor" else None,
        "ep.epochs": epochs if method in (None, "ep") else None,
        "bp.epochs": epochs if method in (None, "bp") else None,
        "solver.lambda1": flag("lambda1"),
        "solver.lambda2": flag("lambda2"),
        "sweep.r_min": flag("r_min"),
        "sweep.r_max": flag("r_max"),
        "sweep.steps": flag("steps"),
        "sweep.max_workers": flag("workers"),
        "sweep.warm_start": False if flag("no_warm_start") else None,
    }


def run(args: argparse.Namespace) -> int:
    cfg = load_pipeline_config(args.config, overrides_from_args(args))
    if args.save_config:
        save_config(cfg.echo(), args.save_config)
        status(f"💾 Merged config saved to {args.save_config}")
    with output_dir_lock(cfg.output_dir):
        monitor = RunMonitor()
        manifest = RunManifest(command=args.command, config=cfg.echo(), seeds={"seed": cfg.seed})
        paths, exit_code = COMMANDS[args.command](args, cfg, monitor)
        # digests only cover files the command reported
        for path in paths:
            manifest.add_output(path)
        manifest.stage_seconds = monitor.stage_seconds
        manifest.write(cfg.output_dir)
        monitor.print_live_stats()
    return exit_code


def main(argv: Optional[List[str]] = None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    if args.quiet:
        set_verbose(False)

    try:
        return run(args)
    except PipelineError as e:
        print(f"❌ [{e.stage or args.command}] {e}", file=sys.stderr)
        return e.exit_code


if __name__ == "__main__":
    sys.exit(main())
