import math

import numpy as np
import pytest

from ritzlab import autodiff as ad
from ritzlab.network import FeedForwardNet, init_params

from conftest import fd_grad


def test_forward_square():
    t = ad.ExpressionTape()
    x = t.input()
    t.mark_output(x * x)
    assert ad.forward_eval(t, [3.0]) == 9.0


def test_forward_tanh_odd():
    t = ad.ExpressionTape()
    x = t.input()
    t.mark_output(ad.tanh(x))
    assert ad.forward_eval(t, [0.0]) == 0.0


def test_forward_scaled_tanh():
    t = ad.ExpressionTape()
    a, c, x = t.input(), t.input(), t.input()
    t.mark_output(c * ad.tanh(a * x))
    assert ad.forward_eval(t, [2.0, 1.0, 0.5]) == pytest.approx(math.tanh(1.0), abs=1e-15)


def test_backward_square():
    t = ad.ExpressionTape()
    x = t.input()
    t.mark_output(x * x)
    ad.forward_eval(t, [3.0])
    assert ad.backward_grad(t)[0] == pytest.approx(6.0, abs=1e-14)


def test_backward_tanh_at_zero():
    t = ad.ExpressionTape()
    x = t.input()
    t.mark_output(ad.tanh(x))
    ad.forward_eval(t, [0.0])
    assert ad.backward_grad(t)[0] == 1.0


def test_backward_scaled_tanh_wrt_slope():
    # d/da [c tanh(a x)] at a=0 is c*x
    t = ad.ExpressionTape()
    a, c, x = t.input(), t.input(), t.input()
    t.mark_output(c * ad.tanh(a * x))
    ad.forward_eval(t, [0.0, 2.5, 0.7])
    g = ad.backward_grad(t)
    assert g[0] == pytest.approx(2.5 * 0.7, abs=1e-14)


def test_backward_requires_forward():
    t = ad.ExpressionTape()
    x = t.input()
    t.mark_output(ad.exp(x))
    with pytest.raises(RuntimeError):
        ad.backward_grad(t)


def test_dimension_mismatch():
    t = ad.ExpressionTape()
    t.input()
    t.input()
    with pytest.raises(ValueError):
        ad.forward_eval(t, [1.0])


def test_nonfinite_raises():
    t = ad.ExpressionTape()
    x = t.input()
    t.mark_output(ad.cosh(x))
    with pytest.raises(ad.NonFiniteError):
        ad.forward_eval(t, [1e4])


def test_full_vocabulary_vs_finite_differences(rng):
    t = ad.ExpressionTape()
    x, y = t.input(), t.input()
    expr = (ad.tanh(x * y) + ad.log(ad.cosh(x)) / (y + 2.0)
            + abs(x) ** 1.5 + ad.sin(x) * ad.cos(y)
            + ad.exp(-(x * x)) - x / (1.0 + y * y))
    t.mark_output(expr)
    for _ in range(20):
        p = rng.uniform(0.2, 1.5, size=2)
        t.forward(p)
        g = t.backward()
        gf = fd_grad(lambda q: t.forward(q), p)
        assert np.allclose(g, gf, rtol=1e-6, atol=1e-9)


def test_gradient_linearity(rng):
    # grad(alpha f + beta g) = alpha grad(f) + beta grad(g) to rounding
    t = ad.ExpressionTape()
    x, y = t.input(), t.input()
    f = ad.sin(x) * y
    g = ad.exp(x * y)
    alpha, beta = 0.625, -2.25  # exactly representable
    combined = alpha * f + beta * g
    p = [0.3, 0.8]
    t.forward(p, output=combined)
    gc = t.backward(output=combined)
    t.forward(p, output=f)
    gf = t.backward(output=f)
    t.forward(p, output=g)
    gg = t.backward(output=g)
    assert np.allclose(gc, alpha * gf + beta * gg, rtol=1e-14, atol=1e-16)


def test_repeat_passes_bit_identical(rng):
    net = FeedForwardNet((1, 6, 4, 1))
    theta = init_params(net, 0)
    t = ad.ExpressionTape()
    xv = [t.input()]
    tv = [t.input() for _ in range(len(theta))]
    u = net.build_graph(t, xv, tv)
    t.mark_output(u)
    ins = [0.37] + list(theta.values)
    v1 = t.forward(ins)
    g1 = t.backward()
    v2 = t.forward(ins)
    g2 = t.backward()
    assert v1 == v2
    assert np.array_equal(g1, g2)


@pytest.mark.parametrize("widths", [(1, 3, 1), (1, 10, 5, 1), (2, 4, 4, 1)])
def test_random_net_gradients_match_fd(widths, rng):
    net = FeedForwardNet(widths)
    theta = init_params(net, 7)
    tape = ad.ExpressionTape()
    xv = [tape.input() for _ in range(net.in_dim)]
    tv = [tape.input() for _ in range(len(theta))]
    tape.mark_output(net.build_graph(tape, xv, tv))
    x0 = rng.uniform(0.1, 0.9, size=net.in_dim)

    def f(th):
        return tape.forward(list(x0) + list(th))

    tape.forward(list(x0) + list(theta.values))
    g = tape.backward()[net.in_dim:]
    gf = fd_grad(f, theta.values)
    scale = np.maximum(np.abs(gf), 1e-6)
    assert np.max(np.abs(g - gf) / scale) < 1e-5


def test_derive_matches_backward(rng):
    t = ad.ExpressionTape()
    a, b = t.input(), t.input()
    expr = ad.tanh(a * b) * a + ad.cos(b) ** 2.0
    da = ad.derive(expr, a)
    p = [0.3, 1.2]
    val = t.forward(p, output=da)
    t.forward(p, output=expr)
    assert val == pytest.approx(t.backward(output=expr)[0], abs=1e-14)


def test_second_derivative_tanh():
    t = ad.ExpressionTape()
    z = t.input()
    e = ad.tanh(z)
    dzz = ad.derive(ad.derive(e, z), z)
    v = t.forward([0.5], output=dzz)
    y = math.tanh(0.5)
    assert v == pytest.approx(-2 * y * (1 - y * y), abs=1e-14)


def test_spatial_derivative_constant_net():
    net = FeedForwardNet((1, 4, 1))
    theta = np.zeros(FeedForwardNet((1, 4, 1)).param_count())
    assert ad.spatial_derivative(net, theta, [0.3], order=1)[0] == 0.0


def test_spatial_derivative_toy_net():
    # u(x) = c tanh(a x): u'(0) = c a
    net = FeedForwardNet((1, 1, 1))
    theta = np.array([1.0, 0.0, 1.0])  # a=1, b=0, c=1
    assert ad.spatial_derivative(net, theta, [0.0], order=1)[0] == pytest.approx(1.0)


def test_spatial_derivative_matches_fd(rng):
    net = FeedForwardNet((1, 6, 5, 1))
    theta = init_params(net, 3)
    x0 = 0.417
    d1 = ad.spatial_derivative(net, theta, [x0], order=1)[0]
    d2 = ad.spatial_derivative(net, theta, [x0], order=2)[0]
    tape = ad.ExpressionTape()
    xv = [tape.input()]
    tv = [tape.input() for _ in range(len(theta))]
    tape.mark_output(net.build_graph(tape, xv, tv))

    def f(x):
        return tape.forward([x[0]] + list(theta.values))

    step = 1e-5
    fd1 = (f([x0 + step]) - f([x0 - step])) / (2 * step)
    fd2 = (f([x0 + step]) - 2 * f([x0]) + f([x0 - step])) / step ** 2
    assert abs(d1 - fd1) / max(abs(fd1), 1e-8) < 1e-5
    assert abs(d2 - fd2) / max(abs(fd2), 1e-4) < 1e-4


def test_spatial_derivative_order_limit():
    net = FeedForwardNet((1, 3, 1))
    theta = init_params(net, 0)
    with pytest.raises(ValueError):
        ad.spatial_derivative(net, theta, [0.5], order=3)
