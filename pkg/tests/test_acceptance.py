"""Acceptance criteria, one test per criterion, one PASS/FAIL line each.

Stochastic training criteria allow three seeded retries; every tolerance
is pinned here.  The two large runs (the adjoint convection training and
the 2D double Ritz run) dominate the wall-clock time of this module.
"""

import functools
import math
import time

import numpy as np
import pytest

from ritzlab import autodiff as ad
from ritzlab import deepfem as DF
from ritzlab import fem1d
from ritzlab import methods as M
from ritzlab import oracles as orc
from ritzlab.memory import CoefficientSchedule, MemoryAccumulator, accumulate_scalar, expanded_weights
from ritzlab.network import FeedForwardNet, init_params
from ritzlab.optimizers import MemorySgdState, SgdmState, memory_sgd_step, momentum_reparameterization, sgdm_step
from ritzlab.problems import catalog
from ritzlab.quadrature import mc_uniform, midpoint_rule


def criterion(cid, description):
    def deco(fn):
        @functools.wraps(fn)
        def wrapper(*args, **kwargs):
            try:
                fn(*args, **kwargs)
            except BaseException:
                print(f"\n[ACCEPTANCE] {cid} FAIL  {description}", flush=True)
                raise
            print(f"\n[ACCEPTANCE] {cid} PASS  {description}", flush=True)
        return wrapper
    return deco


def run_seeded(attempt, seeds=(0, 1, 2)):
    """Run a seeded attempt until one passes; raise the last failure."""
    last = None
    for seed in seeds:
        try:
            return attempt(seed)
        except AssertionError as exc:
            last = exc
    raise last


@criterion("A1", "autodiff gradients match finite differences on 50 random nets")
def test_a1_autodiff_oracle():
    rng = np.random.default_rng(0)
    t0 = time.perf_counter()
    h = 1e-6
    for _ in range(50):
        depth = int(rng.integers(1, 4))
        widths = (1,) + tuple(int(rng.integers(1, 11)) for _ in range(depth)) + (1,)
        net = FeedForwardNet(widths)
        theta = init_params(net, int(rng.integers(1 << 30))).values
        tape = ad.ExpressionTape()
        xv = [tape.input()]
        tv = [tape.input() for _ in range(theta.size)]
        tape.mark_output(net.build_graph(tape, xv, tv))
        x0 = float(rng.uniform(-1, 1))
        tape.forward([x0] + list(theta))
        grad = tape.backward()[1:]
        # all central-difference evaluations in one batched forward pass:
        # slot i carries theta_i +/- h at columns 2i / 2i+1
        n = theta.size
        perturbed = np.tile(theta[:, None], (1, 2 * n))
        cols = np.arange(n)
        perturbed[cols, 2 * cols] += h
        perturbed[cols, 2 * cols + 1] -= h
        out = tape.forward([x0] + [perturbed[i] for i in range(n)])
        fd = (out[0::2] - out[1::2]) / (2 * h)
        small = np.abs(grad) < 1e-6
        assert np.all(np.abs(grad - fd)[small] <= 1e-8 + 1e-5 * np.abs(fd)[small])
        big = ~small
        scale = np.maximum(np.abs(fd), np.abs(grad))[big]
        assert np.all(np.abs(grad - fd)[big] <= 1e-5 * scale)
    assert time.perf_counter() - t0 < 10.0


@criterion("A2", "sign-fit identities: limits, MC agreement, AD vs closed form")
def test_a2_case_study_identities():
    for c in (-2.5, 0.3, 4.0):
        assert orc.sgn_tanh_objective(0.0, c) == pytest.approx(2.0, abs=1e-12)
        da, dc = orc.sgn_tanh_partials(0.0, c)
        # the nonzero limit component of the gradient at (0, c) is -2c
        # (it sits in the slope partial; the scale partial vanishes there)
        assert da == pytest.approx(-2.0 * c, abs=1e-12)
        assert dc == pytest.approx(0.0, abs=1e-12)
    batch = mc_uniform(2.0, 100_000, seed=21, lo=-1.0, hi=1.0)
    loss = orc.sgn_tanh_discrete_loss(2.0, 1.0, batch)
    target = orc.sgn_tanh_objective(2.0, 1.0)
    samples = (np.tanh(2.0 * batch.x) - np.sign(batch.x)) ** 2
    stderr = 2.0 * samples.std() / math.sqrt(batch.n)
    assert abs(loss - target) < 3.0 * stderr
    # reverse-mode gradient of the discrete loss vs the analytic partials
    tape = ad.ExpressionTape()
    a = tape.input()
    c = tape.input()
    x = tape.constant(batch.x)
    sgn = tape.constant(np.sign(batch.x))
    r = c * ad.tanh(a * x) - sgn
    tape.mark_output(tape.weighted_sum(r * r, batch.weights))
    rng = np.random.default_rng(5)
    for _ in range(10):
        av, cv = rng.uniform(-3, 3, size=2)
        tape.forward([av, cv])
        grad = tape.backward()
        da, dc = orc.sgn_tanh_discrete_partials(av, cv, batch)
        assert abs(grad[0] - da) <= 1e-10 * max(1.0, abs(da))
        assert abs(grad[1] - dc) <= 1e-10 * max(1.0, abs(dc))


@criterion("A3", "memory accumulator: weights, no-memory identity, noise ratio")
def test_a3_memory_accumulator():
    rng = np.random.default_rng(3)
    for _ in range(20):
        length = int(rng.integers(1, 60))
        table = (1.0, *rng.uniform(0.01, 1.0, size=length))
        sched = CoefficientSchedule("table", table=table)
        assert abs(expanded_weights(sched, length).sum() - 1.0) < 1e-12
    acc = MemoryAccumulator(CoefficientSchedule("constant", constant=1.0))
    stream = rng.normal(size=100)
    for value in stream:
        assert accumulate_scalar(acc, value) == value
    alpha = 0.01
    predicted = math.sqrt(alpha / (2.0 - alpha))
    raw = np.random.default_rng(0).normal(size=2000)
    acc = MemoryAccumulator(CoefficientSchedule("constant", constant=alpha))
    series = np.array([accumulate_scalar(acc, v) for v in raw])
    ratio = series[500:].std() / raw.std()
    assert predicted * 0.7 < ratio < predicted * 1.3


@criterion("A4", "memory-SGD equals reparameterized momentum to 1e-10 over 1000 steps")
def test_a4_momentum_equivalence():
    steps = 1000
    gamma = np.clip(np.exp(-1e-3 * np.arange(steps)) + 1e-3, 0.0, 1.0)
    gamma[0] = 1.0
    sched = CoefficientSchedule("table", table=tuple(gamma))
    rng = np.random.default_rng(42)
    noise = rng.normal(scale=0.5, size=(steps, 5))
    H = np.diag([2.0, 1.0, 0.5, 3.0, 1.5])

    def grad(theta, t):
        return H @ theta - 1.0 + noise[t]

    lr = 0.02
    theta_mem = np.full(5, 2.0)
    mem_state = MemorySgdState(lr=lr, schedule=sched)
    lrs, betas = momentum_reparameterization(gamma, lr, steps)
    theta_sgdm = np.full(5, 2.0)
    sgdm_state = SgdmState(lr=lr, beta=0.0)
    for t in range(steps):
        theta_mem = memory_sgd_step(mem_state, theta_mem, grad(theta_mem, t))
        theta_sgdm = sgdm_step(sgdm_state, theta_sgdm, grad(theta_sgdm, t),
                               lr=lrs[t], beta=betas[t])
    scale = max(np.max(np.abs(theta_sgdm)), 1.0)
    assert np.max(np.abs(theta_mem - theta_sgdm)) <= 1e-10 * scale


@criterion("A5", "FEM nodal exactness: point load exact, quintic under 1e-4")
def test_a5_fem_nodal_exactness():
    mesh = fem1d.Mesh1D.uniform(8)
    sys_ = fem1d.assemble(mesh, point_loads=((4.0, 0.5),), dirichlet=(0, 8))
    u = fem1d.solve_reference(sys_)
    exact = np.where(mesh.nodes < 0.5, 2 * mesh.nodes, 2 * (1 - mesh.nodes))
    assert np.max(np.abs(u - exact)) < 1e-12
    mesh = fem1d.Mesh1D.uniform(1024)
    sys_ = fem1d.assemble(mesh, source=lambda x: -20.0 * x ** 3,
                          neumann_flux=5.0, dirichlet=(0,))
    u = fem1d.solve_reference(sys_)
    assert np.max(np.abs(u - mesh.nodes ** 5)) < 1e-4


@criterion("A6", "energy norm of the error equals inverse-norm of the residual")
def test_a6_norm_identity():
    rng = np.random.default_rng(6)
    sys_ = fem1d.assemble(fem1d.Mesh1D.uniform(64),
                          source=lambda x: np.cos(2.0 * x),
                          neumann_flux=1.0, dirichlet=(0,))
    u_fem = sys_.restrict(fem1d.solve_reference(sys_))
    inv = fem1d.exact_inverse(sys_.A)
    for _ in range(100):
        w = rng.normal(size=sys_.n_free)
        lhs = fem1d.discrete_norm(w - u_fem, "energy", system=sys_)
        rhs = math.sqrt(inv.quadratic(sys_.A @ w - sys_.f))
        assert abs(lhs - rhs) <= 1e-10 * max(lhs, 1e-30)


@criterion("A7", "Ritz/residual relation at zero candidate; maximizer antisymmetry")
def test_a7_ritz_residual_relation():
    problem = catalog("poisson-weak-quadratic")
    # left side: F_T(0) - F_T(u*) with F_T(0) evaluated through the loss
    net = FeedForwardNet((1, 5, 1), cutoff=problem.trial_cutoff)
    zero = np.zeros(net.param_count())
    fine = midpoint_rule(10_000)
    f_zero = M.loss_ritz(problem, net, zero, fine, with_grad=False)
    lhs = f_zero - (-1.0 / 6.0)
    assert f_zero == 0.0
    # right side: half the squared discrete dual norm of the residual at 0
    oracle = fem1d.DualNormOracle(problem, 1024)
    rhs = 0.5 * oracle.dual_norm(u_nodal=np.zeros(oracle.mesh.n_nodes)) ** 2
    assert lhs == pytest.approx(1.0 / 6.0, abs=1e-3)
    assert rhs == pytest.approx(1.0 / 6.0, abs=1e-3)
    assert abs(lhs - rhs) < 1e-3
    # antisymmetry of the normalized maximizer about the discrete solution
    rng = np.random.default_rng(7)
    od = fem1d.DualNormOracle(catalog("poisson-weak-dirac"), 256)
    u_star = np.where(od.mesh.nodes < 0.5, 2 * od.mesh.nodes,
                      2 * (1 - od.mesh.nodes))
    w = np.zeros(od.mesh.n_nodes)
    w[od.free] = rng.normal(size=od.free.size)
    v1 = od.test_maximizer(u_nodal=u_star + w)
    v2 = od.test_maximizer(u_nodal=u_star - w)
    assert od.v_norm(v1 - v2) == pytest.approx(2.0, abs=1e-10)


@criterion("A8", "deep Ritz on x(x-1): error <= 5%, loss within 2e-2 of -1/6, < 1 min")
def test_a8_drm_quadratic():
    problem = catalog("poisson-weak-quadratic")
    fine = midpoint_rule(10_000)

    def attempt(seed):
        t0 = time.perf_counter()
        cfg = M.MethodConfig(problem="poisson-weak-quadratic", method="gdrm",
                             iterations=200, batch=200, lr=1e-2, seed=seed,
                             log_every=0)
        theta, net, trace = M.train_gdrm(cfg)
        err = M.relative_error(problem, net, theta)
        loss = M.loss_ritz(problem, net, theta, fine, with_grad=False)
        elapsed = time.perf_counter() - t0
        assert err <= 5.0, f"relative error {err:.2f}%"
        assert abs(loss - (-1.0 / 6.0)) <= 2e-2
        assert elapsed < 60.0
        return err

    run_seeded(attempt)


@criterion("A9", "double Ritz on x(x-1): error <= 5% at 200x4 iterations")
def test_a9_d2rm_quadratic():
    problem = catalog("poisson-weak-quadratic")

    def attempt(seed):
        cfg = M.MethodConfig(problem="poisson-weak-quadratic", method="d2rm",
                             iterations=200, inner_per_outer=4, batch=200,
                             lr=3e-2, inner_lr=1e-2, seed=seed, log_every=0)
        theta_u, theta_tau, (u_net, tau_net), trace = M.train_d2rm(cfg)
        err = M.relative_error(problem, u_net, theta_u)
        assert err <= 5.0, f"relative error {err:.2f}%"
        return err

    run_seeded(attempt)


@criterion("A10", "adversarial instability: WANs >= 30% while DRM <= 10% on x^10(x-1)")
def test_a10_wans_instability_witness():
    problem = catalog("poisson-weak-xalpha:10")
    votes = []
    for seed in (0, 1, 2):
        cfg_drm = M.MethodConfig(problem="poisson-weak-xalpha:10", method="gdrm",
                                 iterations=5000, batch=200, lr=1e-2,
                                 seed=seed, log_every=0)
        theta, net, _ = M.train_gdrm(cfg_drm)
        drm_err = M.relative_error(problem, net, theta)
        cfg_wans = M.MethodConfig(problem="poisson-weak-xalpha:10", method="wans",
                                  iterations=5000, inner_per_outer=4, batch=200,
                                  lr=1e-3, inner_lr=3e-3, seed=seed, log_every=0)
        theta_u, theta_v, (u_net, v_net), trace = M.train_wans(cfg_wans)
        wans_err = M.relative_error(problem, u_net, theta_u)
        votes.append(wans_err >= 30.0 and drm_err <= 10.0)
        print(f"  seed {seed}: DRM {drm_err:.2f}%  WANs {wans_err:.2f}%", flush=True)
    assert sum(votes) >= 2, f"majority failed: {votes}"


@criterion("A11", "DeepFEM quintic: loss <= 1e-6, exact extension steps, monotone Adalr")
def test_a11_deepfem_quintic():
    cfg = DF.DeepFemConfig(problem="ch3-x5", initial_elements=1, refinements=3,
                           preconditioner="inverse", norm="P",
                           adam_iters=2000, adalr_iters=4000, seed=0,
                           log_every=0)
    model, trace = DF.train_dynamic(cfg)
    assert trace.losses[-1][1] <= 1e-6
    assert len(trace.extension_residuals) == 3
    assert all(r == 0.0 for r in trace.extension_residuals)
    for seq in trace.adalr_best:
        assert np.all(np.diff(np.array(seq)) <= 0.0)


@criterion("A12", "ultraweak convection: exact optimal test values; adjoint <= 15%")
def test_a12_convection_ultraweak():
    problem = catalog("convection-ultraweak")
    x = np.linspace(0.0005, 0.9995, 1000)
    reference = np.where(x < 0.5, 0.5, 1.0 - x)
    assert np.max(np.abs(problem.t_exact(x) - reference)) < 1e-12

    def attempt(seed):
        cfg = M.MethodConfig(problem="convection-ultraweak", method="adjoint-drm",
                             iterations=25_000, batch=200, lr=3e-3,
                             seed=seed, log_every=5000)
        theta_v, v_net, trace = M.train_adjoint_drm(cfg)
        err = M.adjoint_relative_error(problem, v_net, theta_v)
        assert err <= 15.0, f"relative error {err:.2f}%"
        return err

    run_seeded(attempt)


@criterion("A13", "2D convection: exact residual check; desk-scale D2RM <= 15%")
def test_a13_convection_2d():
    problem = catalog("convection-2d:1.5")
    rng = np.random.default_rng(13)
    pts = rng.uniform(0, 1, size=(100, 2))
    grad = problem.exact_grad(pts)
    residual = grad[:, 0] + grad[:, 1] - problem.load_terms[0][1](pts)
    assert np.max(np.abs(residual)) < 1e-10

    cfg = M.MethodConfig(problem="convection-2d:1.5", method="d2rm",
                         iterations=20_000, inner_per_outer=9,
                         inner_warmup=2000, quadrature="grid2d:25",
                         trial_net="ch4-2d", test_net="custom:1:3:50",
                         lr=1e-3, inner_lr=3e-3, seed=0, log_every=2000)
    theta_u, theta_tau, (u_net, tau_net), trace = M.train_d2rm(cfg)
    err = M.relative_error(problem, u_net, theta_u)
    print(f"  2D relative error after 20k outer iterations: {err:.2f}%", flush=True)
    assert err <= 15.0
