import numpy as np
import pytest

from ritzlab import autodiff as ad


def fd_grad(f, x, h=1e-6):
    """Central finite-difference gradient (independent oracle)."""
    x = np.asarray(x, dtype=float)
    g = np.empty_like(x)
    for i in range(x.size):
        hi = x.copy()
        lo = x.copy()
        hi[i] += h
        lo[i] -= h
        g[i] = (f(hi) - f(lo)) / (2.0 * h)
    return g


def tape_net_fields(tape, net, n_x, n_theta, max_order):
    """Network plus spatial-derivative nodes on an expression tape."""
    xv = [tape.input() for _ in range(n_x)]
    tv = [tape.input() for _ in range(n_theta)]
    u = net.build_graph(tape, xv, tv)
    dus = [ad.derive(u, x) for x in xv] if max_order >= 1 else []
    d2us = [ad.derive(d, x) for d, x in zip(dus, xv)] if max_order >= 2 else []
    return xv, tv, u, dus, d2us


def tape_field(d, u, dus, d2us):
    order = max(d)
    if order == 0:
        return u
    axis = list(d).index(order)
    return dus[axis] if order == 1 else d2us[axis]


def tape_loss_ritz(problem, net, theta, batch):
    """Reference route for the generalized Ritz loss: expression tape."""
    tape = ad.ExpressionTape()
    max_o = max(max(du) for du, _, _ in problem.b_terms)
    if problem.t_kind == "identity":
        max_o = max(max_o, max(max(max(d) for d, _ in comb)
                               for comb, _ in problem.test_norm))
    xv, tv, u, dus, d2us = tape_net_fields(tape, net, problem.dim,
                                           len(theta), max_o)
    tu = None
    if problem.t_kind == "pde-operator":
        for dd, c in problem.pde_operator_terms():
            t = tape_field(dd, u, dus, d2us) * c
            tu = t if tu is None else tu + t
    integrand = None
    for comb, wt in problem.test_norm:
        q = None
        for dd, c in comb:
            t = tu if tu is not None else tape_field(dd, u, dus, d2us)
            t = t * c
            q = t if q is None else q + t
        term = q * q * (0.5 * wt)
        integrand = term if integrand is None else integrand + term
    for dv, density in problem.load_terms:
        arrc = tape.constant(np.asarray(density(batch.x)))
        t = tu if tu is not None else tape_field(dv, u, dus, d2us)
        integrand = integrand - arrc * t
    loss_var = tape.weighted_sum(integrand, batch.weights)
    ins = [batch.points[:, d] for d in range(problem.dim)] + list(theta)
    val = tape.forward(ins, output=loss_var)
    grad = tape.backward(output=loss_var)[problem.dim:]
    for coeff, pt in problem.point_loads:
        t2 = ad.ExpressionTape()
        xv2 = [t2.input() for _ in range(problem.dim)]
        tv2 = [t2.input() for _ in range(len(theta))]
        u2 = t2.constant(-float(coeff)) * net.build_graph(t2, xv2, tv2)
        val += t2.forward(list(pt) + list(theta), output=u2)
        grad += t2.backward(output=u2)[problem.dim:]
    return val, grad


@pytest.fixture
def rng():
    return np.random.default_rng(1234)
