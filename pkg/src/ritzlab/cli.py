"""Experiment runner.

``ritzlab run <cfg>`` parses a flat key=value config, builds the problem
and method, trains, and writes CSV artifacts plus a printed summary.
``ritzlab list`` prints the catalogs, ``ritzlab report <dir>`` prints
the relative-error row at the 4/20/40/60/100% training checkpoints.

Exit codes: 0 success, 1 configuration error, 2 runtime divergence.
"""

from __future__ import annotations

import argparse
import concurrent.futures
import os
import sys
import time
from dataclasses import dataclass, fields as dataclass_fields

import numpy as np

from . import deepfem as DF
from . import methods as M
from .memory import CoefficientSchedule
from .network import NetEval
from .problems import catalog, catalog_ids

__all__ = ["ExperimentConfig", "run", "report", "list_catalog", "main"]

_FLOAT_FMT = "%.17g"


class ConfigError(ValueError):
    pass


@dataclass
class ExperimentConfig:
    """Flat, typed key=value experiment description; seed is mandatory."""

    method: str = "gdrm"
    problem: str = "poisson-weak-quadratic"
    seed: int | None = None
    out: str = "run-output"
    # mesh-free method knobs
    iterations: int = 200
    inner_per_outer: int = 4
    inner_warmup: int = 0
    batch: int = 200
    quadrature: str = "rip-uniform"
    trial_net: str = "ch4-default"
    test_net: str = "ch4-default"
    optimizer: str = "adam"
    lr: float = 1e-2
    inner_optimizer: str = "adam"
    inner_lr: float = 1e-2
    log_every: int = 25
    # deepfem knobs
    initial_elements: int = 1
    refinements: int = 3
    block_width: int = 1
    block_depth: int = 1
    regime: str = "end-to-end"
    preconditioner: str = "inverse"
    norm: str = "P"
    n_samples: int = 1
    adam_iters: int = 2000
    adalr_iters: int = 4000
    # memory-demo knobs
    theta0: float = 1.0
    memory_rate: float = 1e-3
    memory_offset: float = 1e-3

    @classmethod
    def parse(cls, path: str) -> "ExperimentConfig":
        kinds = {f.name: f.type for f in dataclass_fields(cls)}
        values = {}
        try:
            with open(path) as fh:
                for lineno, raw in enumerate(fh, 1):
                    line = raw.split("#", 1)[0].strip()
                    if not line:
                        continue
                    if "=" not in line:
                        raise ConfigError(f"{path}:{lineno}: expected key = value")
                    key, _, val = line.partition("=")
                    key, val = key.strip().replace("-", "_"), val.strip()
                    if key not in kinds:
                        raise ConfigError(f"{path}:{lineno}: unknown key {key!r}")
                    values[key] = val
        except OSError as exc:
            raise ConfigError(f"cannot read config: {exc}") from exc
        cfg = cls()
        for key, val in values.items():
            current = getattr(cfg, key)
            try:
                if key == "seed":
                    setattr(cfg, key, int(val))
                elif isinstance(current, bool):
                    setattr(cfg, key, val.lower() in ("1", "true", "yes"))
                elif isinstance(current, int):
                    setattr(cfg, key, int(val))
                elif isinstance(current, float):
                    setattr(cfg, key, float(val))
                else:
                    setattr(cfg, key, val)
            except ValueError:
                raise ConfigError(f"bad value for {key}: {val!r}") from None
        if cfg.seed is None:
            raise ConfigError("seed is mandatory")
        if cfg.method not in M.METHOD_TAGS:
            raise ConfigError(f"unknown method {cfg.method!r}")
        return cfg


def _write_csv(path, columns, rows) -> None:
    rows = np.atleast_2d(np.asarray(rows, dtype=float))
    with open(path, "w") as fh:
        fh.write(",".join(columns) + "\n")
        for row in rows:
            fh.write(",".join(_FLOAT_FMT % v for v in row) + "\n")


def _write_trace(out: str, trace: M.TrainingTrace) -> None:
    _write_csv(os.path.join(out, "loss_history.csv"), trace.loss_columns,
               trace.losses or [[0] * len(trace.loss_columns)])
    if trace.errors:
        _write_csv(os.path.join(out, "error_history.csv"),
                   trace.error_columns, trace.errors)


def _prediction_grid(dim: int):
    if dim == 1:
        return np.linspace(0.0, 1.0, 401)[:, None]
    g = np.linspace(0.0, 1.0, 41)
    X, Y = np.meshgrid(g, g, indexing="ij")
    return np.column_stack([X.ravel(), Y.ravel()])


def _write_prediction(out, name, problem, grid, values, exact) -> None:
    cols = (["x", "y"] if problem.dim == 2 else ["x"]) + ["u_net", "u_exact"]
    data = np.column_stack([grid, values, exact])
    _write_csv(os.path.join(out, name), cols, data)


def _method_config(cfg: ExperimentConfig) -> M.MethodConfig:
    return M.MethodConfig(
        problem=cfg.problem, method=cfg.method, iterations=cfg.iterations,
        inner_per_outer=cfg.inner_per_outer, inner_warmup=cfg.inner_warmup,
        batch=cfg.batch, quadrature=cfg.quadrature, trial_net=cfg.trial_net,
        test_net=cfg.test_net, optimizer=cfg.optimizer, lr=cfg.lr,
        inner_optimizer=cfg.inner_optimizer, inner_lr=cfg.inner_lr,
        seed=cfg.seed, log_every=cfg.log_every,
    )


def run(config_path: str, out_dir: str | None = None, seed: int | None = None) -> int:
    """Execute one experiment config; returns the process exit code."""
    cfg = ExperimentConfig.parse(config_path)
    if out_dir is not None:
        cfg.out = out_dir
    if seed is not None:
        cfg.seed = seed
    os.makedirs(cfg.out, exist_ok=True)
    t0 = time.perf_counter()
    summary = {}

    if cfg.method == "deepfem":
        if cfg.problem not in DF.PROBLEM_PRESETS:
            raise ConfigError(f"unknown deepfem problem {cfg.problem!r}")
        dcfg = DF.DeepFemConfig(
            problem=cfg.problem, initial_elements=cfg.initial_elements,
            refinements=cfg.refinements, block_width=cfg.block_width,
            block_depth=cfg.block_depth, regime=cfg.regime,
            preconditioner=cfg.preconditioner, norm=cfg.norm,
            n_samples=cfg.n_samples, adam_iters=cfg.adam_iters,
            adalr_iters=cfg.adalr_iters, seed=cfg.seed, log_every=cfg.log_every,
        )
        model, trace = DF.train_dynamic(dcfg)
        _write_csv(os.path.join(cfg.out, "loss_history.csv"),
                   ("iteration", "loss", "norm_is_P"),
                   [(i, v, 1.0 if tag == "P" else 0.0) for i, v, tag in trace.losses])
        if trace.errors:
            _write_csv(os.path.join(cfg.out, "error_history.csv"),
                       ("iteration", "energy_error"), trace.errors)
        _write_deepfem_predictions(cfg.out, model)
        summary["final_loss"] = trace.losses[-1][1]
        diverged = False
    elif cfg.method == "memory-demo":
        schedule = CoefficientSchedule("exponential-decay", rate=cfg.memory_rate,
                                       offset=cfg.memory_offset)
        theta, trace = M.train_memory_dirac(
            iterations=cfg.iterations, batch=cfg.batch, lr=cfg.lr,
            theta0=cfg.theta0, seed=cfg.seed, schedule=schedule)
        _write_trace(cfg.out, trace)
        summary["final_theta"] = theta
        summary["final_loss"] = trace.losses[-1][1]
        diverged = False
    else:
        mcfg = _method_config(cfg)
        problem = mcfg.resolve_problem()
        grid = _prediction_grid(problem.dim)
        pts = grid if problem.dim == 2 else grid[:, 0]
        if cfg.method == "gdrm":
            theta, net, trace = M.train_gdrm(mcfg)
            values = NetEval(net, theta, grid).u
            summary["rel_error_pct"] = M.relative_error(problem, net, theta)
        elif cfg.method == "d2rm":
            theta_u, theta_tau, (u_net, tau_net), trace = M.train_d2rm(mcfg)
            values = NetEval(u_net, theta_u, grid).u
            summary["rel_error_pct"] = M.relative_error(problem, u_net, theta_u)
            if problem.t_exact is not None:
                tv = M.composed_test_values(problem, u_net, theta_u,
                                            tau_net, theta_tau, grid)
                _write_prediction(cfg.out, "test_prediction.csv", problem,
                                  grid, tv, problem.t_exact(pts))
                summary["rel_error_test_pct"] = M.test_relative_error(
                    problem, u_net, theta_u, tau_net, theta_tau)
        elif cfg.method == "wans":
            theta_u, theta_v, (u_net, v_net), trace = M.train_wans(mcfg)
            values = NetEval(u_net, theta_u, grid).u
            summary["rel_error_pct"] = M.relative_error(problem, u_net, theta_u)
            if problem.t_exact is not None:
                _write_prediction(cfg.out, "test_prediction.csv", problem, grid,
                                  NetEval(v_net, theta_v, grid).u,
                                  problem.t_exact(pts))
        elif cfg.method == "adjoint-drm":
            theta_v, v_net, trace = M.train_adjoint_drm(mcfg)
            values = M.adjoint_field(problem, v_net, theta_v, grid)
            summary["rel_error_pct"] = M.adjoint_relative_error(problem, v_net, theta_v)
            _write_prediction(cfg.out, "test_prediction.csv", problem, grid,
                              NetEval(v_net, theta_v, grid).u, problem.t_exact(pts))
        else:  # pragma: no cover
            raise ConfigError(f"unhandled method {cfg.method!r}")
        if problem.exact is not None:
            _write_prediction(cfg.out, "prediction.csv", problem, grid,
                              values, problem.exact(pts))
        _write_trace(cfg.out, trace)
        summary["final_loss"] = trace.losses[-1][1]
        diverged = trace.diverged

    runtime = time.perf_counter() - t0
    print(f"run: {config_path} -> {cfg.out}")
    for key, value in summary.items():
        print(f"  {key}: {value:.6g}")
    print(f"  runtime_s: {runtime:.2f}")
    if diverged:
        print("  status: DIVERGED")
        return 2
    return 0


def _write_deepfem_predictions(out: str, model: DF.DynamicModel) -> None:
    problem = model.problem
    test_alphas = problem.test_alphas or (problem.alpha_fixed,)
    test = np.array([[problem.sigma, a] for a in test_alphas])
    partial = DF.DynamicModel(problem=problem, samples=model.samples)
    for step, block in zip(model.steps, model.blocks):
        partial.steps.append(step)
        partial.blocks.append(block)
        u_pred = DF.predict(partial, test)
        fems = []
        for sig, alp in test:
            A = sig * step.K + alp * step.M
            fems.append(np.linalg.solve(A, step.f))
        fems = np.array(fems)
        nodes = step.mesh.nodes
        full_pred = np.zeros((test.shape[0], nodes.size))
        full_fem = np.zeros_like(full_pred)
        full_pred[:, step.free] = u_pred
        full_fem[:, step.free] = fems
        cols = ["x"] + [f"u_pred{i}" for i in range(test.shape[0])]
        _write_csv(os.path.join(out, f"test_prediction_{nodes.size}nodes.csv"),
                   cols, np.column_stack([nodes, full_pred.T]))
        cols = ["x"] + [f"u_FEM{i}" for i in range(test.shape[0])]
        _write_csv(os.path.join(out, f"test_FEM_{nodes.size}nodes.csv"),
                   cols, np.column_stack([nodes, full_fem.T]))


def list_catalog(kind: str) -> str:
    if kind == "problems":
        lines = ["mesh-free problems:"]
        lines += [f"  {pid}" for pid in catalog_ids()]
        lines += ["deepfem problems:"]
        lines += [f"  {pid}" for pid in DF.PROBLEM_PRESETS]
        return "\n".join(lines)
    if kind == "methods":
        descr = {
            "gdrm": "single-loop generalized deep Ritz minimization",
            "d2rm": "nested double Ritz with a learned trial-to-test map",
            "wans": "weak adversarial networks (min-max residual pairing)",
            "adjoint-drm": "adjoint Ritz minimization with post-processing",
            "deepfem": "dynamic FEM-mimicking coefficient networks",
            "memory-demo": "memory-based Monte Carlo monitoring run",
        }
        return "\n".join(f"  {k}: {v}" for k, v in descr.items())
    if kind == "optimizers":
        descr = {
            "sgd": "plain stochastic gradient descent",
            "sgdm": "SGD with momentum",
            "memory-sgd": "SGD on memory-accumulated gradients",
            "adam": "Adam with bias correction",
            "adalr": "loss-adaptive descent with step rejection (deepfem phases)",
        }
        return "\n".join(f"  {k}: {v}" for k, v in descr.items())
    raise ConfigError(f"unknown catalog {kind!r} (problems|methods|optimizers)")


_CHECKPOINTS = (4, 20, 40, 60, 100)


def report(run_dir: str) -> str:
    """Relative-error row at fixed percentages of the training budget."""
    loss_path = os.path.join(run_dir, "loss_history.csv")
    err_path = os.path.join(run_dir, "error_history.csv")
    if not os.path.exists(loss_path):
        raise ConfigError(f"{run_dir} does not contain loss_history.csv")
    with open(loss_path) as fh:
        next(fh)
        last_iter = 0
        for line in fh:
            last_iter = int(float(line.split(",", 1)[0]))
    budget = last_iter + 1
    header = " | ".join(f"{p:>8d}%" for p in _CHECKPOINTS)
    if not os.path.exists(err_path):
        row = " | ".join(f"{'n/a':>9s}" for _ in _CHECKPOINTS)
        return f"training progress: {header}\nrel error:         {row}"
    data = np.loadtxt(err_path, delimiter=",", skiprows=1, ndmin=2)
    iters, errs = data[:, 0], data[:, 1]
    cells = []
    for p in _CHECKPOINTS:
        target = p / 100.0 * (budget - 1)
        k = int(np.argmin(np.abs(iters - target)))
        cells.append(f"{errs[k]:8.2f}%")
    return ("training progress: " + header + "\n"
            + "rel error:         " + " | ".join(cells))


def main(argv=None) -> int:
    parser = argparse.ArgumentParser(prog="ritzlab",
                                     description="variational PDE training lab")
    sub = parser.add_subparsers(dest="command", required=True)
    p_run = sub.add_parser("run", help="execute experiment configs")
    p_run.add_argument("configs", nargs="+")
    p_run.add_argument("--out", default=None)
    p_run.add_argument("--seed", type=int, default=None)
    p_run.add_argument("--jobs", type=int, default=1)
    p_list = sub.add_parser("list", help="print a catalog")
    p_list.add_argument("kind", nargs="?", default="")
    p_rep = sub.add_parser("report", help="summarize a run directory")
    p_rep.add_argument("run_dir")
    args = parser.parse_args(argv)

    try:
        if args.command == "list":
            if not args.kind:
                print("usage: ritzlab list <problems|methods|optimizers>")
                return 0
            print(list_catalog(args.kind))
            return 0
        if args.command == "report":
            print(report(args.run_dir))
            return 0
        if args.jobs > 1 and len(args.configs) > 1:
            codes = []
            with concurrent.futures.ProcessPoolExecutor(max_workers=args.jobs) as ex:
                futs = []
                for i, c in enumerate(args.configs):
                    out = args.out and os.path.join(args.out, f"run{i}")
                    futs.append(ex.submit(run, c, out, args.seed))
                codes = [f.result() for f in futs]
            return max(codes)
        code = 0
        for i, c in enumerate(args.configs):
            out = args.out
            if out is not None and len(args.configs) > 1:
                out = os.path.join(args.out, f"run{i}")
            code = max(code, run(c, out, args.seed))
        return code
    except (ConfigError, KeyError, OSError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 1


if __name__ == "__main__":  # pragma: no cover
    sys.exit(main())
