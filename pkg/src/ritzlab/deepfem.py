"""Dynamic FEM-mimicking architecture.

Trainable blocks map PDE coefficients ``(sigma, alpha)`` to nodal
coefficient vectors on a hierarchy of uniformly refined meshes.  Each
refinement extends the previous prediction with the sparse
interpolation operator and adds a residual block initialized to output
zero, so the prediction is unchanged at the moment a step is appended.
Training minimizes the mean preconditioned-residual norm of the
per-sample FEM systems, with an Adam phase followed by the
loss-adaptive rejection optimizer.
"""

from __future__ import annotations

import time
from dataclasses import dataclass, field

import numpy as np
import scipy.sparse as sp
import scipy.sparse.linalg as spla

from . import fem1d
from .network import FeedForwardNet
from .optimizers import AdamState, adam_step, adalr_run
from .seeding import rng_stream

__all__ = [
    "TrainableBlock",
    "DeepFemProblem",
    "DeepFemConfig",
    "DynamicModel",
    "predict",
    "loss_deepfem",
    "loss_interchange",
    "train_dynamic",
    "PROBLEM_PRESETS",
]


# ---------------------------------------------------------------------------
# vector-output blocks (no spatial input, so a dedicated tiny engine)
# ---------------------------------------------------------------------------

@dataclass
class TrainableBlock:
    """Fully-connected map from the coefficient pair to nodal values."""

    net: FeedForwardNet
    theta: np.ndarray

    @classmethod
    def create(cls, out_dim: int, width: int, depth: int, rng,
               samples=None) -> "TrainableBlock":
        """Glorot hidden weights, zero biases, zero output weights.

        Zeroing the output layer makes every appended block start at
        exactly zero (the extension-step identity) and lets the first
        update always move the output weights in the loss-decreasing
        direction, which matters for narrow ReLU blocks: a unit whose
        pre-activation goes negative on every (fixed, finite) coefficient
        sample would otherwise die with zero gradient.  First-layer rows
        are also redrawn until each unit is active on some sample.
        """
        widths = (2,) + (width,) * depth + (out_dim,)
        net = FeedForwardNet(widths, activation="relu")
        layers = []
        for j in range(1, len(widths) - 1):
            rows, cols = widths[j], widths[j - 1]
            r = np.sqrt(6.0 / (rows + cols))
            W = rng.uniform(-r, r, size=(rows, cols))
            if j == 1 and samples is not None:
                for i in range(rows):
                    for _ in range(100):
                        if np.any(samples @ W[i] > 0.0):
                            break
                        W[i] = rng.uniform(-r, r, size=cols)
            layers.append((W, np.zeros(rows)))
        W_out = np.zeros((widths[-1], widths[-2]))
        return cls(net, net.flatten(layers, W_out))

    def forward(self, samples: np.ndarray):
        """Returns (outputs (N, out_dim), workspace for backward)."""
        layers, W_out = self.net.unflatten(self.theta)
        acts = [samples]
        d1s = []
        a = samples
        for W, b in layers:
            z = a @ W.T + b
            if self.net.activation == "relu":
                a = np.maximum(z, 0.0)
                d1s.append((z > 0.0).astype(float))
            else:
                a = np.tanh(z)
                d1s.append(1.0 - a * a)
            acts.append(a)
        out = a @ W_out.T
        return out, (layers, W_out, acts, d1s)

    def backward(self, work, cot_out: np.ndarray) -> np.ndarray:
        """Flat parameter gradient of sum(cot_out * outputs)."""
        layers, W_out, acts, d1s = work
        g_wout = cot_out.T @ acts[-1]
        a_bar = cot_out @ W_out
        gW, gb = [], []
        for j in range(len(layers) - 1, -1, -1):
            W, _ = layers[j]
            z_bar = a_bar * d1s[j]
            gW.append(z_bar.T @ acts[j])
            gb.append(z_bar.sum(axis=0))
            a_bar = z_bar @ W
        gW.reverse()
        gb.reverse()
        return self.net.flatten(list(zip(gW, gb)), g_wout)


# ---------------------------------------------------------------------------
# problem presets and configuration
# ---------------------------------------------------------------------------

@dataclass(frozen=True)
class DeepFemProblem:
    """Boundary value problem family, sampling law, and test coefficients."""

    name: str
    source: object = None              # f(x) callable or None
    neumann_flux: float = 0.0
    dirichlet: tuple = (0,)
    sigma: float = 1.0
    alpha_law: str = "fixed"           # fixed | log-uniform | uniform
    alpha_fixed: float = 0.0
    alpha_range: tuple = (0.0, 0.0)
    test_alphas: tuple = ()
    exact: object = None

    def sample_alphas(self, n: int, rng) -> np.ndarray:
        if self.alpha_law == "fixed":
            return np.full(n, self.alpha_fixed)
        lo, hi = self.alpha_range
        if self.alpha_law == "log-uniform":
            return np.exp(rng.uniform(np.log(lo), np.log(hi), size=n))
        if self.alpha_law == "uniform":
            return rng.uniform(lo, hi, size=n)
        raise ValueError(self.alpha_law)


PROBLEM_PRESETS = {
    # -u'' = -20 x^3, u(0)=0, u'(1)=5; exact x^5
    "ch3-x5": DeepFemProblem(
        name="ch3-x5",
        source=lambda x: -20.0 * x ** 3,
        neumann_flux=5.0,
        exact=lambda x: x ** 5,
    ),
    # -u'' = 100 pi^2 sin(10 pi x), u(0)=0, u'(1)=10 pi; exact sin(10 pi x)
    "ch3-sine-poisson": DeepFemProblem(
        name="ch3-sine-poisson",
        source=lambda x: 100.0 * np.pi ** 2 * np.sin(10.0 * np.pi * x),
        neumann_flux=10.0 * np.pi,
        exact=lambda x: np.sin(10.0 * np.pi * x),
    ),
    # -u'' - 100 pi^2 u = 0, u(0)=0, u'(1)=10 pi (indefinite)
    "ch3-sine-helmholtz": DeepFemProblem(
        name="ch3-sine-helmholtz",
        neumann_flux=10.0 * np.pi,
        alpha_fixed=-100.0 * np.pi ** 2,
    ),
    # -u'' + alpha u = 0, u(0)=0, u'(1)=2 pi, 0 < alpha < 200
    "ch3-reaction-param": DeepFemProblem(
        name="ch3-reaction-param",
        neumann_flux=2.0 * np.pi,
        alpha_law="log-uniform",
        alpha_range=(1e-3, 200.0),
        test_alphas=(0.0, 3.0, 15.0, 50.0, 200.0),
    ),
    # -u'' + alpha u = 0, -50 < alpha < -30 (indefinite)
    "ch3-helmholtz-param": DeepFemProblem(
        name="ch3-helmholtz-param",
        neumann_flux=2.0 * np.pi,
        alpha_law="uniform",
        alpha_range=(-50.0, -30.0),
        test_alphas=(-50.0, -45.0, -40.0, -35.0, -30.0),
    ),
}


@dataclass
class DeepFemConfig:
    problem: str = "ch3-x5"
    initial_elements: int = 1
    refinements: int = 3
    block_width: int = 1
    block_depth: int = 1
    regime: str = "end-to-end"          # or "layer-by-layer"
    preconditioner: str = "inverse"     # "inverse" | "identity" | "jacobi:8,8,16,32"
    norm: str = "P"                     # "P" | "PB-h1" | "interchange"
    n_samples: int = 1
    adam_iters: int = 2000
    adalr_iters: int = 4000
    loss_tol: float = 1e-12
    stagnation_window: int = 200
    stagnation_rel: float = 1e-5
    seed: int = 0
    log_every: int = 10

    def resolve_problem(self) -> DeepFemProblem:
        return PROBLEM_PRESETS[self.problem]


# ---------------------------------------------------------------------------
# model and losses
# ---------------------------------------------------------------------------

@dataclass
class StepState:
    mesh: fem1d.Mesh1D
    K: np.ndarray                       # unweighted stiffness, free dofs
    M: np.ndarray
    f: np.ndarray
    free: np.ndarray
    preconds: list                      # per-sample dense P
    extension: np.ndarray | None        # free-dof extension from previous step
    fem_solutions: np.ndarray           # per-sample reference solves (free dofs)


@dataclass
class DynamicModel:
    problem: DeepFemProblem
    samples: np.ndarray                 # (N, 2) columns sigma, alpha
    steps: list = field(default_factory=list)
    blocks: list = field(default_factory=list)

    @property
    def n_nodes(self) -> int:
        return self.steps[-1].mesh.n_nodes


def _assemble_step(problem: DeepFemProblem, mesh: fem1d.Mesh1D, samples,
                   precond_spec: str, step_index: int) -> StepState:
    base = fem1d.assemble(mesh, 1.0, 1.0, source=problem.source,
                          point_loads=(), neumann_flux=problem.neumann_flux,
                          dirichlet=problem.dirichlet)
    K = base.K.toarray()
    M = base.M.toarray()
    f = base.f
    preconds = []
    fems = []
    for sig, alp in samples:
        A = sp.csc_matrix(sig * K + alp * M)
        if precond_spec == "identity":
            P = np.eye(A.shape[0])
        elif precond_spec == "inverse":
            P = fem1d.exact_inverse(A).dense()
        elif precond_spec.startswith("jacobi:"):
            sizes = [int(s) for s in precond_spec.split(":", 1)[1].split(",")]
            size = sizes[min(step_index, len(sizes) - 1)]
            P = fem1d.block_jacobi(A, size).dense()
        else:
            raise ValueError(f"unknown preconditioner spec {precond_spec!r}")
        preconds.append(P)
        fems.append(spla.spsolve(A, f))
    return StepState(mesh=mesh, K=K, M=M, f=f, free=base.free,
                     preconds=preconds, extension=None,
                     fem_solutions=np.array(fems))


def predict(model: DynamicModel, samples=None, workspaces=None):
    """Forward pass through blocks and extensions: (N, n_free) nodal values."""
    samples = model.samples if samples is None else np.atleast_2d(samples)
    u = None
    works = []
    for step, block in zip(model.steps, model.blocks):
        r, work = block.forward(samples)
        works.append(work)
        u = r if u is None else u @ step.extension.T + r
    if workspaces is not None:
        workspaces.extend(works)
    return u


def _residuals(model: DynamicModel, u: np.ndarray):
    step = model.steps[-1]
    sig = model.samples[:, 0][:, None]
    alp = model.samples[:, 1][:, None]
    return sig * (u @ step.K.T) + alp * (u @ step.M.T) - step.f


def _residual_cotangent(model: DynamicModel, cot_r: np.ndarray):
    step = model.steps[-1]
    sig = model.samples[:, 0][:, None]
    alp = model.samples[:, 1][:, None]
    return sig * (cot_r @ step.K) + alp * (cot_r @ step.M)


def loss_deepfem(model: DynamicModel, u: np.ndarray | None = None,
                 norm: str = "P", with_cot: bool = False):
    """Mean residual norm over the sample database.

    norms: ``"P"`` for ``||r||_P``; ``"PB-h1"`` for ``||P r||_{K+M}``;
    ``"PB-l2"`` for ``||P r||_M`` (the preconditioned residual measured
    in the discrete H1 or L2 norm for indefinite problems).
    """
    if norm not in ("P", "PB-h1", "PB-l2"):
        raise ValueError(f"unknown norm {norm!r}")
    if u is None:
        u = predict(model)
    step = model.steps[-1]
    r = _residuals(model, u)
    n = r.shape[0]
    total = 0.0
    cot_r = np.zeros_like(r) if with_cot else None
    for i in range(n):
        P = step.preconds[i]
        pr = P @ r[i]
        if norm == "P":
            q = float(r[i] @ pr)
            back = pr
        else:
            B = step.K + step.M if norm == "PB-h1" else step.M
            bpr = B @ pr
            q = float(pr @ bpr)
            back = P.T @ bpr
        value_i = np.sqrt(max(q, 0.0))
        total += value_i
        if with_cot and value_i > 0.0:
            cot_r[i] = back / (n * value_i)
    value = total / n
    if with_cot:
        return value, cot_r
    return value


def loss_interchange(model: DynamicModel, c_e: float, c_l2: float,
                     u: np.ndarray | None = None) -> float:
    """Norm-interchange loss C_E ||r||_P + C_L2 ||P r||_M, one coefficient active."""
    if (float(c_e), float(c_l2)) not in ((1.0, 0.0), (0.0, 1.0)):
        raise ValueError("coefficients must be (1, 0) or (0, 1)")
    return loss_deepfem(model, u=u, norm="P" if c_e else "PB-l2")


def _loss_and_grad(model: DynamicModel, active: list, norm: str):
    """Closure over the flattened parameters of the active blocks."""
    sizes = [model.blocks[i].theta.size for i in active]
    offsets = np.cumsum([0] + sizes)

    def unpack(flat):
        for k, i in enumerate(active):
            model.blocks[i].theta = flat[offsets[k]:offsets[k + 1]]

    def f(flat):
        unpack(flat)
        works = []
        u = predict(model, workspaces=works)
        value, cot_r = loss_deepfem(model, u=u, norm=norm, with_cot=True)
        cot_u = _residual_cotangent(model, cot_r)
        grads = {}
        for idx in range(len(model.blocks) - 1, -1, -1):
            if idx in active:
                grads[idx] = model.blocks[idx].backward(works[idx], cot_u)
            if idx > 0:
                cot_u = cot_u @ model.steps[idx].extension
        return value, np.concatenate([grads[i] for i in active])

    def pack():
        return np.concatenate([model.blocks[i].theta for i in active])

    return f, pack, unpack


@dataclass
class DeepFemTrace:
    losses: list = field(default_factory=list)       # (iteration, loss, norm_tag)
    errors: list = field(default_factory=list)       # (iteration, energy_error)
    step_marks: list = field(default_factory=list)   # iteration where a step began
    adalr_best: list = field(default_factory=list)   # best-loss sequences per phase
    extension_residuals: list = field(default_factory=list)
    wall_clock: float = 0.0


def _mean_energy_error(model: DynamicModel, u: np.ndarray) -> float:
    step = model.steps[-1]
    diff = u - step.fem_solutions
    sig = model.samples[:, 0]
    alp = model.samples[:, 1]
    total = 0.0
    for i in range(diff.shape[0]):
        A = sig[i] * step.K + alp[i] * step.M
        q = float(diff[i] @ (A @ diff[i]))
        total += np.sqrt(max(q, 0.0))
    return total / diff.shape[0]


def train_dynamic(config: DeepFemConfig):
    """Step loop: refine, extend, append a zero block, retrain (Adam + Adalr)."""
    problem = config.resolve_problem()
    rng_data = rng_stream(config.seed, "data")
    rng_init = rng_stream(config.seed, "init")
    alphas = problem.sample_alphas(config.n_samples, rng_data)
    samples = np.column_stack([np.full(config.n_samples, problem.sigma), alphas])
    model = DynamicModel(problem=problem, samples=samples)
    trace = DeepFemTrace()
    t0 = time.perf_counter()
    iteration = 0

    mesh = fem1d.Mesh1D.uniform(config.initial_elements)
    for s in range(config.refinements + 1):
        step = _assemble_step(problem, mesh, samples, config.preconditioner, s)
        prev_prediction = predict(model) if s > 0 else None
        if s > 0:
            E = fem1d.extension_matrix(model.steps[-1].mesh, mesh).toarray()
            step.extension = E[np.ix_(step.free, model.steps[-1].free)]
        model.steps.append(step)
        model.blocks.append(TrainableBlock.create(
            step.free.size, config.block_width, config.block_depth,
            rng_init, samples=samples))
        trace.step_marks.append(iteration)
        if prev_prediction is not None:
            gap = predict(model) - prev_prediction @ step.extension.T
            trace.extension_residuals.append(float(np.max(np.abs(gap))))

        active = (list(range(len(model.blocks))) if config.regime == "end-to-end"
                  else [len(model.blocks) - 1])
        if config.norm == "interchange":
            # hold the preconditioned norm through Adam, then swap the
            # residual norm for the middle two thirds of the Adalr budget
            phases = [("P", config.adam_iters, "adam"),
                      ("P", config.adalr_iters // 6, "adalr"),
                      ("PB-l2", 2 * config.adalr_iters // 3, "adalr"),
                      ("P", config.adalr_iters // 6, "adalr")]
        else:
            phases = [(config.norm, config.adam_iters, "adam"),
                      (config.norm, config.adalr_iters, "adalr")]

        theta = None
        for norm, budget, kind in phases:
            f, pack, unpack = _loss_and_grad(model, active, norm)
            if theta is None:
                theta = pack()
            tag = norm

            def log_iteration(value):
                nonlocal iteration
                trace.losses.append((iteration, value, tag))
                if config.log_every and iteration % config.log_every == 0:
                    u = predict(model)
                    trace.errors.append((iteration, _mean_energy_error(model, u)))
                iteration += 1

            if kind == "adam":
                first_loss, _ = f(theta)
                adam = AdamState(max(first_loss, 1e-30) * 1e-3)
                best_theta, best_loss = theta.copy(), first_loss
                stag = 0
                for _ in range(budget):
                    value, g = f(theta)
                    log_iteration(value)
                    if best_loss - value > config.stagnation_rel * max(best_loss, 1e-300):
                        stag = 0
                    else:
                        stag += 1
                    if value < best_loss:
                        best_loss, best_theta = value, theta.copy()
                    if best_loss <= config.loss_tol or stag >= config.stagnation_window:
                        break
                    theta = adam_step(adam, theta, g)
                theta = best_theta
                unpack(theta)
            else:
                phase_first, _ = f(theta)
                best_seq = []

                def adalr_cb(t, value, state, _seq=best_seq):
                    _seq.append(state.loss_best)
                    log_iteration(value)

                theta, _best, _ = adalr_run(
                    f, theta, max(phase_first, 1e-30) * 1e-2,
                    max_iter=budget, loss_tol=config.loss_tol,
                    stall_window=config.stagnation_window,
                    stall_rel=config.stagnation_rel,
                    callback=adalr_cb)
                unpack(theta)
                trace.adalr_best.append(best_seq)

        if s < config.refinements:
            mesh = mesh.refine()

    trace.wall_clock = time.perf_counter() - t0
    return model, trace
