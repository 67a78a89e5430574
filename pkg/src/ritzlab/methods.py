"""Mesh-free variational training methods.

Implements the single-loop generalized deep Ritz method (for problems
whose trial-to-test operator is computable), the nested double Ritz
method with a learned trial-to-test composition, weak adversarial
networks (min-max on the normalized residual pairing), and the adjoint
Ritz method for ultraweak convection.

All losses are quadrature sums assembled from the problem's derivative
term descriptors.  Parameter gradients come from the vectorized network
engine; the test suite pins them against the expression-tape reference.
"""

from __future__ import annotations

import time
from dataclasses import dataclass, field

import numpy as np

from . import quadrature as quad
from .memory import CoefficientSchedule, MemoryAccumulator, accumulate_scalar, accumulate_gradient
from .network import CUTOFFS, FeedForwardNet, NetEval, configure_experiment_net, init_params
from .optimizers import make_optimizer
from .problems import VariationalProblem, catalog
from .seeding import rng_stream
from . import oracles

__all__ = [
    "MethodConfig",
    "TrainingTrace",
    "loss_ritz",
    "train_gdrm",
    "train_d2rm",
    "train_wans",
    "train_adjoint_drm",
    "train_memory_dirac",
    "relative_error",
    "test_relative_error",
    "adjoint_field",
    "METHOD_TAGS",
]

METHOD_TAGS = ("gdrm", "d2rm", "wans", "adjoint-drm", "deepfem", "memory-demo")


@dataclass
class MethodConfig:
    problem: str | VariationalProblem = "poisson-weak-quadratic"
    method: str = "gdrm"
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
    seed: int = 0
    log_every: int = 25
    divergence_threshold: float = 1e6
    memory_rate: float = 1e-3
    memory_offset: float = 1e-3

    def resolve_problem(self) -> VariationalProblem:
        if isinstance(self.problem, VariationalProblem):
            return self.problem
        return catalog(self.problem)


@dataclass
class TrainingTrace:
    loss_columns: tuple
    losses: list = field(default_factory=list)
    error_columns: tuple = ("iteration", "rel_error_pct")
    errors: list = field(default_factory=list)
    events: list = field(default_factory=list)
    diverged: bool = False
    wall_clock: float = 0.0

    def log_loss(self, *row):
        self.losses.append(tuple(float(r) for r in row))

    def log_error(self, *row):
        self.errors.append(tuple(float(r) for r in row))


# ---------------------------------------------------------------------------
# field bundles with cotangent accumulation
# ---------------------------------------------------------------------------

def _deriv_key(d):
    """Map a multi-index to (channel, axis): 0 -> value, 1/2 -> du/d2u."""
    nz = [(axis, order) for axis, order in enumerate(d) if order]
    if not nz:
        return (0, 0)
    if len(nz) > 1:
        raise ValueError(f"mixed derivative {d} is not supported")
    axis, order = nz[0]
    if order > 2:
        raise ValueError("third and higher derivatives are not supported")
    return (order, axis)


class DirectField:
    """Fields of one network evaluation plus cotangent accumulators."""

    def __init__(self, ev: NetEval, key: str):
        self.ev = ev
        self.key = key
        n = ev.X.shape[0]
        nd = len(ev.dirs)
        self._cu = np.zeros(n)
        self._cdu = [np.zeros(n) for _ in range(nd)]
        self._cd2u = [np.zeros(n) for _ in range(nd)]

    def field(self, d):
        order, axis = _deriv_key(d)
        if order == 0:
            return self.ev.u
        if order == 1:
            return self.ev.du[axis]
        return self.ev.d2u[axis]

    def add(self, d, contrib):
        order, axis = _deriv_key(d)
        if order == 0:
            self._cu += contrib
        elif order == 1:
            self._cdu[axis] += contrib
        else:
            self._cd2u[axis] += contrib

    def grads(self) -> dict:
        g = self.ev.grad(self._cu, self._cdu or None,
                         self._cd2u if self.ev.order == 2 else None)
        return {self.key: g}


class ComposedField:
    """Fields of the learned test function with cotangent pullbacks.

    The trial-to-test net consumes the scalar trial-side factor of the
    duality pairing: the trial value itself when the operator kind is
    the identity or an integral map, and the PDE-operator image ``Au``
    for strong formulations (``input_terms`` lists its derivative
    terms).  The test function is ``v = xi(x) * tau(s(x))``; value and
    first-derivative fields of v are supported for the plain trial
    input, value fields only for operator input.
    """

    def __init__(self, tau_net: FeedForwardNet, theta_tau, u_ev: NetEval,
                 xi_cutoff, need_order: int, input_terms=None):
        if need_order > 1:
            raise ValueError("composed test functions support first derivatives only")
        if tau_net.in_dim != 1:
            raise ValueError("trial-to-test net must take a scalar input")
        if input_terms is not None and need_order != 0:
            raise ValueError("operator-input composition supports value fields only")
        self.u_ev = u_ev
        self.input_terms = input_terms
        X = u_ev.X
        n, dim = X.shape
        if input_terms is None:
            s = u_ev.u
        else:
            src = DirectField(u_ev, "u")
            s = sum(c * src.field(d) for d, c in input_terms)
        tau_order = 2 if need_order >= 1 else 1
        self.tau_ev = NetEval(tau_net, theta_tau, s[:, None], order=tau_order,
                              dirs=[np.ones((n, 1))])
        t0 = self.tau_ev.u
        t1 = self.tau_ev.du[0]
        self._t2 = self.tau_ev.d2u[0] if tau_order == 2 else None

        if xi_cutoff is None:
            xi = np.ones(n)
            xid = [np.zeros(n)] * dim
        else:
            xi = xi_cutoff.value(X)
            g = xi_cutoff.grad(X)
            xid = [g[:, a] for a in range(dim)]
        self._xi, self._xid = xi, xid
        self._t0, self._t1 = t0, t1

        self.v = xi * t0
        if need_order >= 1:
            self.dv = [xid[a] * t0 + xi * t1 * u_ev.du[a] for a in range(dim)]
        else:
            self.dv = []

        self._cv = np.zeros(n)
        self._cdv = [np.zeros(n) for _ in range(len(self.dv))]

    def field(self, d):
        order, axis = _deriv_key(d)
        if order == 0:
            return self.v
        if order == 1:
            return self.dv[axis]
        raise ValueError("second derivatives of composed tests are unsupported")

    def add(self, d, contrib):
        order, axis = _deriv_key(d)
        if order == 0:
            self._cv += contrib
        elif order == 1:
            self._cdv[axis] += contrib
        else:
            raise ValueError("second derivatives of composed tests are unsupported")

    def grads(self, sides=("tau", "u")) -> dict:
        xi, xid = self._xi, self._xid
        t1, t2 = self._t1, self._t2
        tbar0 = self._cv * xi
        tbar1 = np.zeros_like(tbar0)
        for a, cdv in enumerate(self._cdv):
            tbar0 += cdv * xid[a]
            tbar1 += cdv * xi * self.u_ev.du[a]
        out = {}
        if "tau" in sides:
            out["tau"] = self.tau_ev.grad(tbar0, [tbar1])
        if "u" in sides:
            sbar = tbar0 * t1
            if t2 is not None:
                sbar = sbar + tbar1 * t2
            if self.input_terms is None:
                sbar_d = [cdv * xi * t1 for cdv in self._cdv]
                out["u"] = self.u_ev.grad(sbar, sbar_d or None)
            else:
                cot = DirectField(self.u_ev, "u")
                for d, c in self.input_terms:
                    cot.add(d, c * sbar)
                out["u"] = cot.grads()["u"]
        return out


class OperatorField:
    """Fields of Tu = sum coeff * D^d u for a computable PDE operator."""

    def __init__(self, u_field: DirectField, op_terms):
        self.u_field = u_field
        self.op_terms = op_terms
        self.v = sum(c * u_field.field(d) for d, c in op_terms)

    def field(self, d):
        if any(d):
            raise ValueError("derivatives of operator images are unsupported")
        return self.v

    def add(self, d, contrib):
        if any(d):
            raise ValueError("derivatives of operator images are unsupported")
        for dd, c in self.op_terms:
            self.u_field.add(dd, c * contrib)

    def grads(self) -> dict:
        return self.u_field.grads()


# ---------------------------------------------------------------------------
# loss pieces
# ---------------------------------------------------------------------------

def _norm_sq(f, norm_terms, w, scale=1.0) -> float:
    """Accumulate scale * sum_forms weight * int (sum c D^d f)^2 and cotangents."""
    total = 0.0
    for combination, weight in norm_terms:
        q = sum(c * f.field(d) for d, c in combination)
        total += weight * float(np.dot(w, q * q))
        for d, c in combination:
            f.add(d, 2.0 * scale * weight * w * q * c)
    return scale * total


def _load_value(f, load_terms, points, w, cot_scale=1.0) -> float:
    """Raw l(f) from the volume terms; cotangents scaled by d(loss)/d(l)."""
    total = 0.0
    for dv, density in load_terms:
        fx = np.asarray(density(points if points.shape[1] > 1 else points[:, 0]),
                        dtype=float)
        total += float(np.dot(w, fx * f.field(dv)))
        f.add(dv, cot_scale * w * fx)
    return total


def _bilinear(u_field, v_field, b_terms, w, scale_u=1.0, scale_v=1.0) -> float:
    """b(u, v) with cotangents scaled per side (freeze a side with scale 0)."""
    total = 0.0
    for du, dv, c in b_terms:
        fu = u_field.field(du)
        fv = v_field.field(dv)
        total += c * float(np.dot(w, fu * fv))
        if scale_u:
            u_field.add(du, scale_u * c * w * fv)
        if scale_v:
            v_field.add(dv, scale_v * c * w * fu)
    return total


def _merge(*grad_dicts) -> dict:
    out = {}
    for g in grad_dicts:
        for k, v in g.items():
            out[k] = out.get(k, 0.0) + v
    return out


def _trial_field(problem, net, theta, X, order=None) -> DirectField:
    order = order if order is not None else _trial_order(problem)
    return DirectField(NetEval(net, theta, X, order=order), "u")


def _trial_order(problem) -> int:
    order = max(max(du) for du, _, _ in problem.b_terms)
    if problem.t_kind == "identity":
        order = max(order, _norm_order(problem.test_norm))
    return order


def _norm_order(norm_terms) -> int:
    return max(max(max(d) for d, _ in comb) for comb, _ in norm_terms)


def _point_batch(problem):
    pts = np.array([p for _, p in problem.point_loads], dtype=float)
    coeffs = np.array([c for c, _ in problem.point_loads], dtype=float)
    return pts, coeffs


def loss_ritz(problem: VariationalProblem, net: FeedForwardNet, theta, batch,
              with_grad: bool = True):
    """Generalized Ritz objective: half the squared test norm of Tu minus l(Tu).

    Computable only when the trial-to-test operator is the identity or
    the PDE operator.  Returns the value, or (value, grad) when
    ``with_grad``.
    """
    if problem.t_kind not in ("identity", "pde-operator"):
        raise ValueError(
            f"trial-to-test operator of {problem.name} is not computable; "
            "use the double Ritz method"
        )
    w = batch.weights
    X = batch.points
    u = _trial_field(problem, net, theta, X)
    tu = u if problem.t_kind == "identity" else OperatorField(u, problem.pde_operator_terms())
    value = _norm_sq(tu, problem.test_norm, w, scale=0.5)
    value -= _load_value(tu, problem.load_terms, X, w, cot_scale=-1.0)

    grads = [u]
    if problem.point_loads:
        pts, coeffs = _point_batch(problem)
        up = _trial_field(problem, net, theta, pts)
        tup = up if problem.t_kind == "identity" else OperatorField(up, problem.pde_operator_terms())
        value -= float(np.dot(coeffs, tup.field((0,) * problem.dim)))
        tup.add((0,) * problem.dim, -coeffs)
        grads.append(up)
    if not with_grad:
        return value
    g = _merge(*(f.grads() for f in grads))
    return value, g["u"]


def _sample_batch(config: MethodConfig, dim: int, rng) -> quad.QuadratureBatch:
    spec = config.quadrature
    n = config.batch
    if spec == "rip-uniform":
        if dim == 1:
            return quad.rip_rule(rng.uniform(size=n))
        raise ValueError("rip-uniform is one-dimensional; use grid2d")
    if spec == "mc":
        pts = rng.uniform(size=(n, dim))
        return quad.QuadratureBatch(pts, np.full(n, 1.0 / n), "mc")
    if spec.startswith("mixed:"):
        parts = []
        for chunk in spec.split(":", 1)[1].split(";"):
            vals = chunk.split(",")
            a, b = float(vals[0]), float(vals[1])
            mirror = len(vals) > 2 and vals[2] in ("1", "true", "mirror")
            parts.append((a, b, mirror))
        return quad.mixed_batch(n, parts, rng=rng)
    if spec.startswith("grid2d:"):
        nodes = int(spec.split(":", 1)[1])
        return quad.tensor_grid_2d(nodes, rng=rng)
    raise ValueError(f"unknown quadrature spec {spec!r}")


def _net_for_trial(config: MethodConfig, problem) -> FeedForwardNet:
    net = configure_experiment_net(config.trial_net, cutoff=problem.trial_cutoff)
    if net.in_dim != problem.dim:
        raise ValueError("trial net input width does not match the problem dimension")
    return net


def _composition_layout(problem):
    """(tau-net input cutoff, spatial test cutoff) for the composed test.

    When the trial-to-test operator is the identity, the trial function
    already vanishes on the (shared) Dirichlet set, so multiplying the
    tau net by its own scalar input pins the test condition and makes
    tau = identity reproduce the trial exactly.  Otherwise the test
    condition cannot ride on the trial and the spatial cutoff applies.
    """
    if problem.t_kind == "identity":
        return CUTOFFS["x"], None
    return None, problem.test_cutoff


def _net_for_test(config: MethodConfig, problem, composed: bool) -> FeedForwardNet:
    if composed:
        # consumes the scalar trial-side pairing factor
        tau_cut, _ = _composition_layout(problem)
        net = configure_experiment_net(config.test_net, cutoff=tau_cut)
        if net.in_dim != 1:
            raise ValueError("trial-to-test net must take a scalar input")
        return net
    net = configure_experiment_net(config.test_net, cutoff=problem.test_cutoff)
    if net.in_dim != problem.dim:
        raise ValueError("test net input width does not match the problem dimension")
    return net


def _guard(value, config, trace):
    if not np.isfinite(value) or abs(value) > config.divergence_threshold:
        trace.diverged = True
        trace.events.append(f"divergence: loss={value!r}")
        return True
    return False


# ---------------------------------------------------------------------------
# training loops
# ---------------------------------------------------------------------------

def train_gdrm(config: MethodConfig):
    """Single-loop minimization of the generalized Ritz loss."""
    problem = config.resolve_problem()
    net = _net_for_trial(config, problem)
    theta = init_params(net, _spawn(config.seed, "init")).values
    rng = rng_stream(config.seed, "quadrature-outer")
    step = make_optimizer(config.optimizer, config.lr)
    trace = TrainingTrace(loss_columns=("iteration", "loss"))
    t0 = time.perf_counter()
    for it in range(config.iterations):
        batch = _sample_batch(config, problem.dim, rng)
        value, g = loss_ritz(problem, net, theta, batch)
        trace.log_loss(it, value)
        if _guard(value, config, trace):
            break
        theta = step(theta, g)
        _maybe_log_error(trace, problem, net, theta, it, config)
    trace.wall_clock = time.perf_counter() - t0
    _final_error(trace, problem, net, theta, config)
    return theta, net, trace


def _d2rm_loss(problem, u_net, theta_u, tau_net, theta_tau, batch, which: str):
    """One branch of the double Ritz objective with its gradient.

    ``which="outer"``: 1/2 ||v||_V^2 - l(v) with the gradient taken in
    the trial parameters (the test cutoff and tau weights ride along);
    ``which="inner"``: 1/2 ||v||_V^2 - b(u, v) in the tau parameters
    with the trial side frozen.
    """
    w = batch.weights
    X = batch.points
    need = _norm_order(problem.test_norm)
    u_order = max(need, max(max(du) for du, _, _ in problem.b_terms), 1)
    input_terms = (problem.pde_operator_terms()
                   if problem.t_kind == "pde-operator" else None)
    _, xi_spatial = _composition_layout(problem)
    u_ev = NetEval(u_net, theta_u, X, order=u_order)
    u_f = DirectField(u_ev, "u")
    v_f = ComposedField(tau_net, theta_tau, u_ev, xi_spatial, need,
                        input_terms=input_terms)

    value = _norm_sq(v_f, problem.test_norm, w, scale=0.5)
    extra_fields = []
    if which == "outer":
        value -= _load_value(v_f, problem.load_terms, X, w, cot_scale=-1.0)
        if problem.point_loads:
            pts, coeffs = _point_batch(problem)
            u_ev_p = NetEval(u_net, theta_u, pts, order=max(u_order, 1))
            vp = ComposedField(tau_net, theta_tau, u_ev_p, xi_spatial, 0,
                               input_terms=input_terms)
            value -= float(np.dot(coeffs, vp.v))
            vp.add((0,) * problem.dim, -coeffs)
            extra_fields.append(vp)
        key = "u"
    else:
        value -= _bilinear(u_f, v_f, problem.b_terms, w, scale_u=0.0, scale_v=-1.0)
        key = "tau"
    g = _merge(v_f.grads(sides=(key,)), *(p.grads(sides=(key,)) for p in extra_fields))
    return value, g[key]


def train_d2rm(config: MethodConfig):
    """Nested double Ritz: outer step on the trial net, inner steps on tau."""
    problem = config.resolve_problem()
    if config.inner_per_outer < 1:
        raise ValueError("nested methods need at least one inner iteration")
    u_net = _net_for_trial(config, problem)
    tau_net = _net_for_test(config, problem, composed=True)
    theta_u = init_params(u_net, _spawn(config.seed, "init")).values
    theta_tau = init_params(tau_net, _spawn(config.seed, "init-test")).values
    rng_out = rng_stream(config.seed, "quadrature-outer")
    rng_in = rng_stream(config.seed, "quadrature-inner")
    step_u = make_optimizer(config.optimizer, config.lr)
    step_tau = make_optimizer(config.inner_optimizer, config.inner_lr)
    trace = TrainingTrace(loss_columns=("iteration", "loss_u", "loss_T"))
    if problem.t_exact is not None:
        trace.error_columns = ("iteration", "rel_error_pct", "rel_error_test_pct")
    t0 = time.perf_counter()

    def inner_step():
        nonlocal theta_tau
        batch = _sample_batch(config, problem.dim, rng_in)
        inner, g_tau = _d2rm_loss(problem, u_net, theta_u, tau_net, theta_tau,
                                  batch, "inner")
        theta_tau = step_tau(theta_tau, g_tau)
        return inner

    inner = np.nan
    for _ in range(config.inner_warmup):
        inner = inner_step()
        if not np.isfinite(inner):
            trace.diverged = True
            trace.events.append("divergence during inner warm-up")
            break

    it = 0
    while it < config.iterations and not trace.diverged:
        batch = _sample_batch(config, problem.dim, rng_out)
        outer, g_u = _d2rm_loss(problem, u_net, theta_u, tau_net, theta_tau,
                                batch, "outer")
        if _guard(outer, config, trace):
            trace.log_loss(it, outer, inner)
            break
        theta_u = step_u(theta_u, g_u)
        for _ in range(config.inner_per_outer):
            inner = inner_step()
        trace.log_loss(it, outer, inner)
        _maybe_log_error(trace, problem, u_net, theta_u, it, config,
                         tau_net=tau_net, theta_tau=theta_tau)
        it += 1
    trace.wall_clock = time.perf_counter() - t0
    _final_error(trace, problem, u_net, theta_u, config,
                 tau_net=tau_net, theta_tau=theta_tau)
    return theta_u, theta_tau, (u_net, tau_net), trace


def _wans_loss(problem, u_net, theta_u, v_net, theta_v, batch):
    """Residual pairing against the normalized test net; both gradients."""
    w = batch.weights
    X = batch.points
    order_v = max(_norm_order(problem.test_norm),
                  max(max(dv) for _, dv, _ in problem.b_terms))
    order_u = max(max(du) for du, _, _ in problem.b_terms)

    u_f = DirectField(NetEval(u_net, theta_u, X, order=order_u), "u")
    v_f = DirectField(NetEval(v_net, theta_v, X, order=order_v), "v")
    # Q = ||v||^2 with its own cotangent bundle
    v_for_q = DirectField(v_f.ev, "v")
    Q = _norm_sq(v_for_q, problem.test_norm, w, scale=1.0)
    if Q <= 0.0:
        return None  # degenerate test function

    R = _bilinear(u_f, v_f, problem.b_terms, w, scale_u=1.0, scale_v=1.0)
    R -= _load_value(v_f, problem.load_terms, X, w, cot_scale=-1.0)
    pt_grads = []
    if problem.point_loads:
        pts, coeffs = _point_batch(problem)
        vp = DirectField(NetEval(v_net, theta_v, pts, order=0), "v")
        R -= float(np.dot(coeffs, vp.field((0,) * problem.dim)))
        vp.add((0,) * problem.dim, -coeffs / np.sqrt(Q))
        pt_grads.append(vp.grads())

    s = float(np.sqrt(Q))
    value = R / s
    g_u = u_f.grads()["u"] / s
    # d(R/s) = dR/s - R/(2 Q s) dQ
    g_v = v_f.grads()["v"] / s - (R / (2.0 * Q * s)) * v_for_q.grads()["v"]
    for g in pt_grads:
        g_v = g_v + g["v"]
    return value, g_u, g_v, s


def train_wans(config: MethodConfig):
    """Weak adversarial networks: descent on the trial, ascent on the test."""
    problem = config.resolve_problem()
    u_net = _net_for_trial(config, problem)
    v_net = _net_for_test(config, problem, composed=False)
    theta_u = init_params(u_net, _spawn(config.seed, "init")).values
    theta_v = init_params(v_net, _spawn(config.seed, "init-test")).values
    rng_out = rng_stream(config.seed, "quadrature-outer")
    rng_in = rng_stream(config.seed, "quadrature-inner")
    rng_reinit = rng_stream(config.seed, "reinit")
    step_u = make_optimizer(config.optimizer, config.lr)
    step_v = make_optimizer(config.inner_optimizer, config.inner_lr)
    trace = TrainingTrace(loss_columns=("iteration", "loss"))
    t0 = time.perf_counter()
    norm_floor = 1e-8

    def handle_degenerate():
        nonlocal theta_v
        theta_v = init_params(v_net, int(rng_reinit.integers(2 ** 31))).values
        trace.events.append("reinitialized test net (vanishing norm)")

    for it in range(config.iterations):
        batch = _sample_batch(config, problem.dim, rng_out)
        out = _wans_loss(problem, u_net, theta_u, v_net, theta_v, batch)
        if out is None or out[3] < norm_floor:
            handle_degenerate()
            out = _wans_loss(problem, u_net, theta_u, v_net, theta_v, batch)
        value, g_u, _, _ = out
        trace.log_loss(it, value)
        if _guard(value, config, trace):
            break
        theta_u = step_u(theta_u, g_u)
        for _ in range(config.inner_per_outer):
            batch = _sample_batch(config, problem.dim, rng_in)
            out = _wans_loss(problem, u_net, theta_u, v_net, theta_v, batch)
            if out is None or out[3] < norm_floor:
                handle_degenerate()
                continue
            _, _, g_v, _ = out
            theta_v = step_v(theta_v, -g_v)  # ascent
        _maybe_log_error(trace, problem, u_net, theta_u, it, config)
    trace.wall_clock = time.perf_counter() - t0
    _final_error(trace, problem, u_net, theta_u, config)
    return theta_u, theta_v, (u_net, v_net), trace


def _adjoint_loss(problem, v_net, theta_v, batch):
    """F'(v) = 1/2 ||A'v||_L2^2 - l(v)."""
    if problem.adjoint is None:
        raise ValueError(f"{problem.name} does not expose an adjoint operator")
    w = batch.weights
    X = batch.points
    order = max(max(max(d) for d, _ in problem.adjoint), 1)
    v_f = DirectField(NetEval(v_net, theta_v, X, order=order), "v")
    av = sum(c * v_f.field(d) for d, c in problem.adjoint)
    value = 0.5 * float(np.dot(w, av * av))
    for d, c in problem.adjoint:
        v_f.add(d, w * av * c)
    value -= _load_value(v_f, problem.load_terms, X, w, cot_scale=-1.0)
    grads = [v_f]
    if problem.point_loads:
        pts, coeffs = _point_batch(problem)
        vp = DirectField(NetEval(v_net, theta_v, pts, order=0), "v")
        value -= float(np.dot(coeffs, vp.field((0,) * problem.dim)))
        vp.add((0,) * problem.dim, -coeffs)
        grads.append(vp)
    g = _merge(*(f.grads() for f in grads))
    return value, g["v"]


def train_adjoint_drm(config: MethodConfig):
    """Minimize the adjoint Ritz functional over the test net; u = A'v."""
    problem = config.resolve_problem()
    v_net = _net_for_test(config, problem, composed=False)
    theta_v = init_params(v_net, _spawn(config.seed, "init-test")).values
    rng = rng_stream(config.seed, "quadrature-outer")
    step = make_optimizer(config.optimizer, config.lr)
    trace = TrainingTrace(loss_columns=("iteration", "loss"),
                          error_columns=("iteration", "rel_error_pct",
                                         "rel_error_test_pct"))
    t0 = time.perf_counter()
    for it in range(config.iterations):
        batch = _sample_batch(config, problem.dim, rng)
        value, g = _adjoint_loss(problem, v_net, theta_v, batch)
        trace.log_loss(it, value)
        if _guard(value, config, trace):
            break
        theta_v = step(theta_v, g)
        if config.log_every and (it + 1) % config.log_every == 0:
            eu = adjoint_relative_error(problem, v_net, theta_v)
            ev = test_net_relative_error(problem, v_net, theta_v)
            trace.log_error(it, eu, ev)
    trace.wall_clock = time.perf_counter() - t0
    eu = adjoint_relative_error(problem, v_net, theta_v)
    ev = test_net_relative_error(problem, v_net, theta_v)
    trace.log_error(config.iterations - 1, eu, ev)
    return theta_v, v_net, trace


def adjoint_field(problem, v_net, theta_v, X):
    """Post-processed trial candidate u = A'v evaluated at points."""
    order = max(max(d) for d, _ in problem.adjoint)
    ev = NetEval(v_net, theta_v, X, order=order)
    f = DirectField(ev, "v")
    return sum(c * f.field(d) for d, c in problem.adjoint)


def composed_test_values(problem, u_net, theta_u, tau_net, theta_tau, X) -> np.ndarray:
    """Learned test function tau applied to the trial net, on given points."""
    input_terms = (problem.pde_operator_terms()
                   if problem.t_kind == "pde-operator" else None)
    _, xi_spatial = _composition_layout(problem)
    u_ev = NetEval(u_net, theta_u, X, order=1)
    return ComposedField(tau_net, theta_tau, u_ev, xi_spatial, 0,
                         input_terms=input_terms).v


# ---------------------------------------------------------------------------
# memory-based single-parameter run
# ---------------------------------------------------------------------------

def train_memory_dirac(iterations: int = 10000, batch: int = 32, lr: float = 0.5,
                       theta0: float = 1.0, seed: int = 0,
                       schedule: CoefficientSchedule | None = None):
    """SGD on the single-parameter point-load architecture with monitoring.

    Logs per iteration: the raw Monte Carlo loss, its memory-accumulated
    counterpart, the analytic objective, and the same triple for the
    gradient.  The optimization itself uses the raw gradient.
    """
    schedule = schedule or CoefficientSchedule()
    acc_loss = MemoryAccumulator(schedule)
    acc_grad = MemoryAccumulator(schedule)
    rng = rng_stream(seed, "quadrature-outer")
    theta = float(theta0)
    trace = TrainingTrace(
        loss_columns=("iteration", "loss", "loss_memory", "loss_analytic",
                      "grad", "grad_memory", "grad_analytic"),
    )
    t0 = time.perf_counter()
    for it in range(iterations):
        x = rng.uniform(size=batch)
        up = oracles.u_theta_prime(theta, x)
        loss_mc = 0.5 * float(np.mean(up * up)) - 4.0 * float(oracles.u_theta(theta, 0.5))
        dup = oracles.u_theta_dtheta_prime(theta, x)
        grad_mc = float(np.mean(up * dup)) - 4.0 * float(oracles.u_theta_dtheta(theta, 0.5))
        loss_mem = accumulate_scalar(acc_loss, loss_mc)
        grad_mem = float(accumulate_gradient(acc_grad, np.array([grad_mc]))[0])
        trace.log_loss(it, loss_mc, loss_mem,
                       oracles.dirac_singleparam_value(theta),
                       grad_mc, grad_mem,
                       oracles.dirac_singleparam_partial(theta))
        theta -= lr * grad_mc
    trace.wall_clock = time.perf_counter() - t0
    return theta, trace


# ---------------------------------------------------------------------------
# relative errors (deterministic fine rule)
# ---------------------------------------------------------------------------

_ERROR_NODES_1D = 10_000
_ERROR_NODES_2D = 100  # per axis -> 10^4 points


def _error_batch(dim: int) -> quad.QuadratureBatch:
    return quad.midpoint_rule(_ERROR_NODES_1D if dim == 1 else _ERROR_NODES_2D, dim)


def _norm_of_fields(fields: dict, norm_terms, w) -> float:
    total = 0.0
    for combination, weight in norm_terms:
        q = sum(c * fields[d] for d, c in combination)
        total += weight * float(np.dot(w, q * q))
    return float(np.sqrt(total))


def _exact_fields(problem, X, norm_terms) -> dict:
    out = {}
    for combination, _ in norm_terms:
        for d, _c in combination:
            if d in out:
                continue
            order, axis = _deriv_key(d)
            pts = X if problem.dim > 1 else X[:, 0]
            if order == 0:
                out[d] = np.asarray(problem.exact(pts), dtype=float)
            elif order == 1 and problem.dim == 1:
                out[d] = np.asarray(problem.exact_grad(pts), dtype=float)
            elif order == 1:
                out[d] = np.asarray(problem.exact_grad(pts), dtype=float)[:, axis]
            else:
                raise ValueError("exact fields beyond first derivatives unavailable")
    return out


def _net_fields(net, theta, X, norm_terms) -> dict:
    order = _norm_order(norm_terms)
    f = DirectField(NetEval(net, theta, X, order=order), "w")
    return {d: f.field(d) for combination, _ in norm_terms for d, _c in combination}


def relative_error(problem, net, theta, norm_terms=None) -> float:
    """100 * ||u_net - u*|| / ||u*|| in the problem's trial norm.

    The numerator uses a deterministic composite intermediate-point rule
    with 1e4 nodes; the denominator uses the analytic norm when the
    catalog provides one.
    """
    if problem.exact is None:
        raise ValueError(f"{problem.name} has no exact solution")
    norm_terms = norm_terms or problem.trial_norm
    batch = _error_batch(problem.dim)
    X, w = batch.points, batch.weights
    nf = _net_fields(net, theta, X, norm_terms)
    ef = _exact_fields(problem, X, norm_terms)
    diff = {d: nf[d] - ef[d] for d in nf}
    num = _norm_of_fields(diff, norm_terms, w)
    den = problem.exact_trial_norm
    if den is None or norm_terms is not problem.trial_norm:
        den = _norm_of_fields(ef, norm_terms, w)
    return 100.0 * num / den


def _test_norm_error(problem, value_err, deriv_err, t_ex, t_ex_grad, w) -> float:
    """100 * ||e||_V / ||Tu*||_V, dropping derivative forms when the
    optimal test function's derivative is unavailable."""
    have_grad = deriv_err is not None and t_ex_grad is not None
    num_sq = den_sq = 0.0
    for combination, weight in problem.test_norm:
        order = max(max(d) for d, _ in combination)
        if order == 0:
            num_sq += weight * float(np.dot(w, value_err ** 2))
            den_sq += weight * float(np.dot(w, t_ex ** 2))
        elif order == 1 and have_grad:
            num_sq += weight * float(np.dot(w, deriv_err ** 2))
            den_sq += weight * float(np.dot(w, t_ex_grad ** 2))
    if den_sq == 0.0:  # no value form and no usable derivative form
        num_sq = float(np.dot(w, value_err ** 2))
        den_sq = float(np.dot(w, t_ex ** 2))
    return 100.0 * float(np.sqrt(num_sq / den_sq))


def test_relative_error(problem, u_net, theta_u, tau_net, theta_tau) -> float:
    """Error of the composed test function against Tu* in the test norm."""
    if problem.t_exact is None:
        raise ValueError(f"{problem.name} has no exact optimal test function")
    batch = _error_batch(problem.dim)
    X, w = batch.points, batch.weights
    need = _norm_order(problem.test_norm)
    input_terms = (problem.pde_operator_terms()
                   if problem.t_kind == "pde-operator" else None)
    _, xi_spatial = _composition_layout(problem)
    u_ev = NetEval(u_net, theta_u, X, order=max(need, 1))
    v = ComposedField(tau_net, theta_tau, u_ev, xi_spatial,
                      0 if input_terms is not None else need,
                      input_terms=input_terms)
    pts = X if problem.dim > 1 else X[:, 0]
    t_ex = np.asarray(problem.t_exact(pts), dtype=float)
    t_ex_grad = (np.asarray(problem.t_exact_grad(pts), dtype=float)
                 if problem.t_exact_grad is not None else None)
    deriv_err = (v.dv[0] - t_ex_grad) if (v.dv and t_ex_grad is not None) else None
    return _test_norm_error(problem, v.v - t_ex, deriv_err, t_ex, t_ex_grad, w)


def test_net_relative_error(problem, v_net, theta_v) -> float:
    """Error of a standalone test net against Tu* in the test norm."""
    batch = _error_batch(problem.dim)
    X, w = batch.points, batch.weights
    order = min(_norm_order(problem.test_norm), 1)
    ev = NetEval(v_net, theta_v, X, order=order)
    pts = X if problem.dim > 1 else X[:, 0]
    t_ex = np.asarray(problem.t_exact(pts), dtype=float)
    t_ex_grad = (np.asarray(problem.t_exact_grad(pts), dtype=float)
                 if problem.t_exact_grad is not None else None)
    deriv_err = (ev.du[0] - t_ex_grad) if (order and t_ex_grad is not None) else None
    return _test_norm_error(problem, ev.u - t_ex, deriv_err, t_ex, t_ex_grad, w)


def adjoint_relative_error(problem, v_net, theta_v) -> float:
    """Error of the post-processed u = A'v in the trial (L2) norm."""
    batch = _error_batch(problem.dim)
    X, w = batch.points, batch.weights
    u = adjoint_field(problem, v_net, theta_v, X)
    pts = X if problem.dim > 1 else X[:, 0]
    ex = np.asarray(problem.exact(pts), dtype=float)
    num = float(np.sqrt(np.dot(w, (u - ex) ** 2)))
    den = problem.exact_trial_norm or float(np.sqrt(np.dot(w, ex ** 2)))
    return 100.0 * num / den


def _maybe_log_error(trace, problem, net, theta, it, config, tau_net=None, theta_tau=None):
    if not config.log_every or (it + 1) % config.log_every:
        return
    if problem.exact is None:
        return
    row = [it, relative_error(problem, net, theta)]
    if tau_net is not None and problem.t_exact is not None:
        row.append(test_relative_error(problem, net, theta, tau_net, theta_tau))
    trace.log_error(*row)


def _final_error(trace, problem, net, theta, config, tau_net=None, theta_tau=None):
    if problem.exact is None:
        return
    row = [config.iterations - 1, relative_error(problem, net, theta)]
    if tau_net is not None and problem.t_exact is not None:
        row.append(test_relative_error(problem, net, theta, tau_net, theta_tau))
    trace.log_error(*row)


def _spawn(seed: int, name: str) -> int:
    """Deterministic child seed for parameter initialization streams."""
    return int(rng_stream(seed, name).integers(2 ** 31))
