import numpy as np
import pytest

from ritzlab import fem1d
from ritzlab import methods as M
from ritzlab.network import CUTOFFS, FeedForwardNet, NetEval, init_params
from ritzlab.problems import catalog
from ritzlab.quadrature import midpoint_rule, rip_rule, tensor_grid_2d

from conftest import fd_grad, tape_loss_ritz


@pytest.mark.parametrize("pid", [
    "poisson-weak-quadratic",
    "poisson-weak-xalpha:0.7",
    "poisson-weak-dirac",
    "poisson-strong",
])
def test_loss_ritz_matches_tape_route(pid, rng):
    """Dual route: vectorized loss/grad against the expression tape."""
    problem = catalog(pid)
    net = FeedForwardNet((1, 6, 5, 1), cutoff=problem.trial_cutoff)
    theta = init_params(net, 11).values
    batch = rip_rule(rng.uniform(size=17))
    v_fast, g_fast = M.loss_ritz(problem, net, theta, batch)
    v_ref, g_ref = tape_loss_ritz(problem, net, theta, batch)
    assert v_fast == pytest.approx(v_ref, rel=1e-12, abs=1e-13)
    assert np.max(np.abs(g_fast - g_ref)) <= 1e-10 * max(np.max(np.abs(g_ref)), 1e-12)


def test_loss_ritz_zero_net_zero_loss(rng):
    problem = catalog("poisson-weak-quadratic")
    net = FeedForwardNet((1, 5, 1), cutoff=problem.trial_cutoff)
    theta = np.zeros(net.param_count())
    batch = rip_rule(rng.uniform(size=64))
    assert M.loss_ritz(problem, net, theta, batch, with_grad=False) == 0.0


def test_loss_ritz_rejects_implicit_operator(rng):
    problem = catalog("poisson-ultraweak")
    net = FeedForwardNet((1, 5, 1))
    with pytest.raises(ValueError):
        M.loss_ritz(problem, net, np.zeros(net.param_count()),
                    rip_rule(rng.uniform(size=8)))


def test_ritz_residual_identity_with_dual_norm_oracle(rng):
    """L_T(u) - L_T(u*) vs half the squared dual norm, independent routes."""
    problem = catalog("poisson-weak-quadratic")
    oracle = fem1d.DualNormOracle(problem, 1024)
    fine = midpoint_rule(10_000)
    net = FeedForwardNet((1, 8, 6, 1), cutoff=problem.trial_cutoff)
    for k in range(10):
        theta = init_params(net, k).values
        lhs = M.loss_ritz(problem, net, theta, fine, with_grad=False) - (-1.0 / 6.0)
        ev = NetEval(net, theta, fine.points, order=1)

        def du(x, _ev=ev, _net=net, _theta=theta):
            return NetEval(_net, _theta, np.atleast_1d(x)[:, None], order=1).du[0]

        rhs = 0.5 * oracle.dual_norm(du=du) ** 2
        assert abs(lhs - rhs) <= 1e-2 * max(abs(rhs), 1e-6)


@pytest.mark.parametrize("pid", [
    "poisson-weak-quadratic",
    "poisson-weak-dirac",
    "convection-ultraweak",
    "poisson-strong",
    "convection-2d:1.5",
])
def test_d2rm_loss_gradients(pid, rng):
    problem = catalog(pid)
    u_net = FeedForwardNet((problem.dim, 5, 4, 1), cutoff=problem.trial_cutoff)
    tau_cut, _ = M._composition_layout(problem)
    tau_net = FeedForwardNet((1, 4, 1), cutoff=tau_cut)
    th_u = init_params(u_net, 1).values
    th_tau = init_params(tau_net, 2).values
    batch = (tensor_grid_2d(5, seed=3) if problem.dim == 2
             else rip_rule(rng.uniform(size=13)))

    def outer(t):
        return M._d2rm_loss(problem, u_net, t, tau_net, th_tau, batch, "outer")

    def inner(t):
        return M._d2rm_loss(problem, u_net, th_u, tau_net, t, batch, "inner")

    for f, th in ((outer, th_u), (inner, th_tau)):
        _, g = f(th)
        gfd = fd_grad(lambda t: f(t)[0], th)
        assert np.max(np.abs(g - gfd)) <= 1e-6 * max(np.max(np.abs(gfd)), 1e-10)


def test_d2rm_identity_tau_recovers_gdrm_loss(rng):
    """Replacing tau by the identity map turns the outer loss into the
    generalized Ritz loss exactly."""
    problem = catalog("poisson-weak-quadratic")
    u_net = FeedForwardNet((1, 6, 5, 1), cutoff=problem.trial_cutoff)
    th_u = init_params(u_net, 7).values
    tau_net = FeedForwardNet((1, 1, 1), cutoff=CUTOFFS["x"])
    th_tau = np.array([0.0, np.arctanh(0.5), 2.0])  # raw net identically one
    batch = rip_rule(rng.uniform(size=41))
    outer, _ = M._d2rm_loss(problem, u_net, th_u, tau_net, th_tau, batch, "outer")
    assert outer == M.loss_ritz(problem, u_net, th_u, batch, with_grad=False)


def test_wans_loss_gradients(rng):
    problem = catalog("poisson-weak-dirac")
    u_net = FeedForwardNet((1, 5, 4, 1), cutoff=problem.trial_cutoff)
    v_net = FeedForwardNet((1, 4, 1), cutoff=problem.test_cutoff)
    th_u = init_params(u_net, 4).values
    th_v = init_params(v_net, 5).values
    batch = rip_rule(rng.uniform(size=13))

    def on_u(t):
        out = M._wans_loss(problem, u_net, t, v_net, th_v, batch)
        return out[0], out[1]

    def on_v(t):
        out = M._wans_loss(problem, u_net, th_u, v_net, t, batch)
        return out[0], out[2]

    for f, th in ((on_u, th_u), (on_v, th_v)):
        _, g = f(th)
        gfd = fd_grad(lambda t: f(t)[0], th)
        assert np.max(np.abs(g - gfd)) <= 1e-6 * max(np.max(np.abs(gfd)), 1e-10)


def test_adjoint_loss_gradient(rng):
    problem = catalog("convection-ultraweak")
    v_net = FeedForwardNet((1, 5, 4, 1), cutoff=problem.test_cutoff)
    th_v = init_params(v_net, 6).values
    batch = rip_rule(rng.uniform(size=13))
    _, g = M._adjoint_loss(problem, v_net, th_v, batch)
    gfd = fd_grad(lambda t: M._adjoint_loss(problem, v_net, t, batch)[0], th_v)
    assert np.max(np.abs(g - gfd)) <= 1e-6 * np.max(np.abs(gfd))


def test_adjoint_requires_adjoint_operator(rng):
    problem = catalog("poisson-weak-quadratic")
    v_net = FeedForwardNet((1, 4, 1))
    with pytest.raises(ValueError):
        M._adjoint_loss(problem, v_net, np.zeros(v_net.param_count()),
                        rip_rule(rng.uniform(size=8)))


def test_train_gdrm_zero_iterations_returns_init():
    cfg = M.MethodConfig(problem="poisson-weak-quadratic", iterations=0,
                         batch=16, seed=3, log_every=0)
    theta, net, trace = M.train_gdrm(cfg)
    assert np.array_equal(theta, init_params(net, M._spawn(3, "init")).values)
    assert trace.losses == []


def test_train_gdrm_deterministic():
    cfg = M.MethodConfig(problem="poisson-weak-quadratic", iterations=20,
                         batch=32, seed=5, log_every=0)
    run1 = M.train_gdrm(cfg)
    run2 = M.train_gdrm(cfg)
    assert np.array_equal(run1[0], run2[0])
    assert run1[2].losses == run2[2].losses


def test_train_d2rm_deterministic_and_logged():
    cfg = M.MethodConfig(problem="poisson-weak-quadratic", method="d2rm",
                         iterations=10, inner_per_outer=2, batch=32,
                         seed=5, log_every=5)
    a = M.train_d2rm(cfg)
    b = M.train_d2rm(cfg)
    assert np.array_equal(a[0], b[0])
    assert np.array_equal(a[1], b[1])
    assert len(a[3].losses) == 10
    assert a[3].error_columns == ("iteration", "rel_error_pct", "rel_error_test_pct")


def test_train_d2rm_requires_inner_iterations():
    cfg = M.MethodConfig(method="d2rm", inner_per_outer=0)
    with pytest.raises(ValueError):
        M.train_d2rm(cfg)


def test_divergence_guard_aborts():
    cfg = M.MethodConfig(problem="poisson-weak-quadratic", iterations=50,
                         batch=16, lr=1e9, seed=0, log_every=0,
                         divergence_threshold=1e3)
    theta, net, trace = M.train_gdrm(cfg)
    assert trace.diverged
    assert len(trace.losses) < 50


def test_wans_maximizer_sensitivity_witness(rng):
    """The normalized maximizer moves infinitely faster than the trial
    function near the solution: the ratio grows monotonically as the
    candidates close in along a fixed direction."""
    problem = catalog("poisson-weak-dirac")
    oracle = fem1d.DualNormOracle(problem, 256)
    u_star = np.where(oracle.mesh.nodes < 0.5, 2 * oracle.mesh.nodes,
                      2 * (1 - oracle.mesh.nodes))
    w = np.zeros(oracle.mesh.n_nodes)
    w[oracle.free] = rng.normal(size=oracle.free.size)
    K = oracle._K_full
    ratios = []
    for k in range(5):
        s = 0.5 ** k
        u1 = u_star + s * w
        u2 = u_star - s * w
        v_gap = oracle.v_norm(oracle.test_maximizer(u_nodal=u1)
                              - oracle.test_maximizer(u_nodal=u2))
        u_gap = np.sqrt((u1 - u2) @ (K @ (u1 - u2)))
        ratios.append(v_gap / u_gap)
    assert all(b > a for a, b in zip(ratios, ratios[1:]))
    assert ratios[-1] > 10 * ratios[0]


def test_memory_demo_columns_and_anchor():
    from ritzlab.oracles import dirac_singleparam_value

    theta, trace = M.train_memory_dirac(iterations=200, batch=16, lr=0.25,
                                        seed=0)
    assert trace.loss_columns[:4] == ("iteration", "loss", "loss_memory",
                                      "loss_analytic")
    assert len(trace.losses) == 200
    # analytic column tracks the objective of the current parameter
    assert trace.losses[0][3] == pytest.approx(dirac_singleparam_value(1.0))


def test_relative_error_zero_candidate_is_hundred_percent():
    problem = catalog("poisson-weak-quadratic")
    net = FeedForwardNet((1, 5, 1), cutoff=problem.trial_cutoff)
    theta = np.zeros(net.param_count())
    assert M.relative_error(problem, net, theta) == pytest.approx(100.0, rel=1e-6)


def test_error_norm_homogeneity(rng):
    # scaling the deviation field by s scales the percentage by |s|
    problem = catalog("poisson-weak-quadratic")
    batch = midpoint_rule(1000)
    fields = {(1,): rng.normal(size=batch.n)}
    base = M._norm_of_fields(fields, problem.trial_norm, batch.weights)
    doubled = M._norm_of_fields({(1,): 2.0 * fields[(1,)]},
                                problem.trial_norm, batch.weights)
    assert doubled == pytest.approx(2.0 * base, rel=1e-12)


def test_sample_batch_specs(rng):
    cfg = M.MethodConfig(batch=20, quadrature="mixed:1,1;10,10")
    b = M._sample_batch(cfg, 1, rng)
    assert b.n == 20
    cfg = M.MethodConfig(batch=0, quadrature="grid2d:5")
    b = M._sample_batch(cfg, 2, rng)
    assert b.n == 25
    with pytest.raises(ValueError):
        M._sample_batch(M.MethodConfig(quadrature="sobol"), 1, rng)


def test_d2rm_both_loss_curves_reach_optimum():
    cfg = M.MethodConfig(problem="poisson-weak-quadratic", method="d2rm",
                         iterations=200, inner_per_outer=4, batch=200,
                         lr=3e-2, inner_lr=1e-2, seed=0, log_every=0)
    _, _, _, trace = M.train_d2rm(cfg)
    tail = np.array(trace.losses[-20:])
    assert abs(tail[:, 1].mean() + 1.0 / 6.0) < 2e-2   # outer Ritz curve
    assert abs(tail[:, 2].mean() + 1.0 / 6.0) < 2e-2   # inner optimal-test curve


def test_adjoint_zero_iterations_post_processes_init():
    cfg = M.MethodConfig(problem="convection-ultraweak", method="adjoint-drm",
                         iterations=0, batch=16, seed=2, log_every=0)
    theta_v, v_net, trace = M.train_adjoint_drm(cfg)
    err = M.adjoint_relative_error(cfg.resolve_problem(), v_net, theta_v)
    assert np.isfinite(err)


def test_wans_degenerate_test_norm_returns_none(rng):
    problem = catalog("poisson-weak-quadratic")
    u_net = FeedForwardNet((1, 4, 1), cutoff=problem.trial_cutoff)
    v_net = FeedForwardNet((1, 4, 1), cutoff=problem.test_cutoff)
    th_u = init_params(u_net, 0).values
    th_v = np.zeros(v_net.param_count())  # identically zero test function
    batch = rip_rule(rng.uniform(size=16))
    assert M._wans_loss(problem, u_net, th_u, v_net, th_v, batch) is None
