"""Fully-connected feed-forward architectures with optional boundary cutoff.

A network is ``u(x) = W phi(... phi(W_1 x + b_1) ...)`` with a linear,
bias-free output layer.  Trainable scalars live in a flat
:class:`ParameterSet` with a fixed layout: layer by layer, weights in
row-major order followed by the bias, and the output weights last.

Two evaluation routes are provided and cross-checked in the tests:

* ``build_graph`` emits the network onto an autodiff expression tape
  (exact reverse-mode reference, spatial derivatives by nesting);
* ``NetEval`` is a vectorized numpy forward pass with optional first and
  second input tangents and a hand-derived reverse pass, used by the
  training loops where per-node tape sweeps would dominate the runtime.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from . import autodiff as ad

__all__ = [
    "FeedForwardNet",
    "ParameterSet",
    "Cutoff",
    "CUTOFFS",
    "init_params",
    "evaluate",
    "configure_experiment_net",
    "NetEval",
]


# ---------------------------------------------------------------------------
# cutoff factors for strong Dirichlet imposition
# ---------------------------------------------------------------------------

@dataclass(frozen=True)
class Cutoff:
    """Smooth non-trainable factor vanishing exactly on a Dirichlet set."""

    name: str
    dim: int

    def value(self, X):
        X = np.asarray(X, dtype=float)
        if self.name == "x(1-x)":
            return X[..., 0] * (1.0 - X[..., 0])
        if self.name == "x":
            return X[..., 0].copy()
        if self.name == "1-x":
            return 1.0 - X[..., 0]
        if self.name == "xy":
            return X[..., 0] * X[..., 1]
        raise ValueError(self.name)

    def grad(self, X):
        """Partial derivatives, shape (..., dim)."""
        X = np.asarray(X, dtype=float)
        g = np.empty_like(X)
        if self.name == "x(1-x)":
            g[..., 0] = 1.0 - 2.0 * X[..., 0]
        elif self.name == "x":
            g[..., 0] = 1.0
        elif self.name == "1-x":
            g[..., 0] = -1.0
        elif self.name == "xy":
            g[..., 0] = X[..., 1]
            g[..., 1] = X[..., 0]
        else:
            raise ValueError(self.name)
        return g

    def second(self, X):
        """Pure second derivatives along each axis, shape (..., dim)."""
        X = np.asarray(X, dtype=float)
        s = np.zeros_like(X)
        if self.name == "x(1-x)":
            s[..., 0] = -2.0
        return s

    def dirichlet_points(self, n: int, rng=None) -> np.ndarray:
        """Sample points of the zero set (for tests)."""
        rng = rng or np.random.default_rng(0)
        if self.name == "x(1-x)":
            return np.array([[0.0], [1.0]] * (n // 2 + 1))[:n]
        if self.name == "x":
            return np.zeros((n, 1))
        if self.name == "1-x":
            return np.ones((n, 1))
        if self.name == "xy":
            pts = np.zeros((n, 2))
            t = rng.uniform(size=n)
            half = n // 2
            pts[:half, 0] = t[:half]      # y = 0 edge
            pts[half:, 1] = t[half:]      # x = 0 edge
            return pts
        raise ValueError(self.name)

    def build_graph(self, tape, x_vars):
        if self.name == "x(1-x)":
            return x_vars[0] * (1.0 - x_vars[0])
        if self.name == "x":
            return x_vars[0] * 1.0
        if self.name == "1-x":
            return 1.0 - x_vars[0]
        if self.name == "xy":
            return x_vars[0] * x_vars[1]
        raise ValueError(self.name)


CUTOFFS = {
    "x(1-x)": Cutoff("x(1-x)", 1),
    "x": Cutoff("x", 1),
    "1-x": Cutoff("1-x", 1),
    "xy": Cutoff("xy", 2),
}


# ---------------------------------------------------------------------------
# architecture and parameters
# ---------------------------------------------------------------------------

@dataclass(frozen=True)
class FeedForwardNet:
    """Layer widths ``(n_0, ..., n_{K+1})`` with a linear bias-free output."""

    widths: tuple
    activation: str = "tanh"
    cutoff: Cutoff | None = None

    def __post_init__(self):
        if len(self.widths) < 2 or any(w < 1 for w in self.widths):
            raise ValueError("need input and output widths, all >= 1")
        if self.activation not in ("tanh", "relu"):
            raise ValueError(f"unsupported activation {self.activation!r}")
        if self.cutoff is not None and self.cutoff.dim != self.widths[0]:
            raise ValueError("cutoff dimension does not match input width")

    @property
    def depth(self) -> int:
        return len(self.widths) - 2

    @property
    def in_dim(self) -> int:
        return self.widths[0]

    @property
    def out_dim(self) -> int:
        return self.widths[-1]

    def param_count(self) -> int:
        n = 0
        for j in range(1, len(self.widths) - 1):
            n += self.widths[j] * self.widths[j - 1] + self.widths[j]
        return n + self.widths[-1] * self.widths[-2]

    def unflatten(self, theta):
        """Split a flat vector into ((W_1, b_1), ..., (W_K, b_K)), W_out."""
        v = np.asarray(getattr(theta, "values", theta), dtype=float)
        if v.size != self.param_count():
            raise ValueError(
                f"parameter vector of length {v.size}, expected {self.param_count()}"
            )
        layers, pos = [], 0
        for j in range(1, len(self.widths) - 1):
            rows, cols = self.widths[j], self.widths[j - 1]
            W = v[pos:pos + rows * cols].reshape(rows, cols)
            pos += rows * cols
            b = v[pos:pos + rows]
            pos += rows
            layers.append((W, b))
        rows, cols = self.widths[-1], self.widths[-2]
        W_out = v[pos:pos + rows * cols].reshape(rows, cols)
        return layers, W_out

    def flatten(self, layers, W_out) -> np.ndarray:
        parts = []
        for W, b in layers:
            parts.append(W.ravel())
            parts.append(b.ravel())
        parts.append(np.asarray(W_out).ravel())
        return np.concatenate(parts)

    # -- expression-tape route ------------------------------------------

    def build_graph(self, tape, x_vars, theta_vars):
        """Emit the scalar network onto an expression tape; returns the output Var."""
        if self.out_dim != 1:
            raise ValueError("graph construction supports scalar outputs")
        if self.activation != "tanh":
            raise ValueError("graph construction requires a smooth activation")
        if len(x_vars) != self.in_dim:
            raise ValueError("x_vars length does not match input width")
        pos = 0
        y = list(x_vars)
        for j in range(1, len(self.widths) - 1):
            rows, cols = self.widths[j], self.widths[j - 1]
            new = []
            for r in range(rows):
                s = theta_vars[pos + r * cols] * y[0]
                for c in range(1, cols):
                    s = s + theta_vars[pos + r * cols + c] * y[c]
                s = s + theta_vars[pos + rows * cols + r]  # bias
                new.append(ad.tanh(s))
            pos += rows * cols + rows
            y = new
        out = theta_vars[pos] * y[0]
        for c in range(1, self.widths[-2]):
            out = out + theta_vars[pos + c] * y[c]
        if self.cutoff is not None:
            out = self.cutoff.build_graph(tape, x_vars) * out
        return out


@dataclass
class ParameterSet:
    """Flat, ordered trainable scalars (layer-major, weights then bias)."""

    values: np.ndarray

    def __post_init__(self):
        self.values = np.asarray(self.values, dtype=float).ravel()

    def __len__(self):
        return self.values.size

    def copy(self) -> "ParameterSet":
        return ParameterSet(self.values.copy())

    def to_csv(self, path) -> None:
        np.savetxt(path, self.values)

    @classmethod
    def from_csv(cls, path) -> "ParameterSet":
        return cls(np.loadtxt(path))


def init_params(net: FeedForwardNet, seed: int) -> ParameterSet:
    """Glorot-uniform weights, zero biases; deterministic per seed."""
    rng = np.random.default_rng(seed)
    layers = []
    for j in range(1, len(net.widths) - 1):
        rows, cols = net.widths[j], net.widths[j - 1]
        r = np.sqrt(6.0 / (rows + cols))
        layers.append((rng.uniform(-r, r, size=(rows, cols)), np.zeros(rows)))
    rows, cols = net.widths[-1], net.widths[-2]
    r = np.sqrt(6.0 / (rows + cols))
    W_out = rng.uniform(-r, r, size=(rows, cols))
    return ParameterSet(net.flatten(layers, W_out))


def configure_experiment_net(spec: str, cutoff: Cutoff | None = None) -> FeedForwardNet:
    """Catalog of architectures used across the experiments.

    ``"ch4-default"``: two hidden layers of 20 tanh neurons (1D input).
    ``"ch4-2d"``: three hidden layers of 50 tanh neurons (2D input).
    ``"custom:<in>:<depth>:<width>"``: explicit shape.
    """
    if spec == "ch4-default":
        widths = (1, 20, 20, 1)
    elif spec == "ch4-2d":
        widths = (2, 50, 50, 50, 1)
    elif spec.startswith("custom:"):
        try:
            d_in, depth, width = (int(t) for t in spec.split(":")[1:])
        except ValueError:
            raise ValueError(f"malformed custom net spec {spec!r}") from None
        widths = (d_in,) + (width,) * depth + (1,)
    else:
        raise ValueError(f"unknown net spec {spec!r}")
    return FeedForwardNet(widths, activation="tanh", cutoff=cutoff)


def evaluate(net: FeedForwardNet, theta, x) -> float:
    """Scalar network value at one point (cutoff applied when present)."""
    X = np.atleast_2d(np.asarray(x, dtype=float))
    return float(NetEval(net, theta, X).u[0])


# ---------------------------------------------------------------------------
# vectorized forward/backward engine
# ---------------------------------------------------------------------------

def _act(name, z):
    if name == "tanh":
        y = np.tanh(z)
        d1 = 1.0 - y * y
        return y, d1, -2.0 * y * d1, -2.0 * d1 * d1 + 4.0 * (y * y) * d1
    # relu
    y = np.maximum(z, 0.0)
    d1 = (z > 0.0).astype(float)
    zero = np.zeros_like(z)
    return y, d1, zero, zero


class NetEval:
    """One vectorized evaluation of a scalar net over a batch of points.

    Stores intermediate activations plus first/second tangents along the
    requested directions so that :meth:`grad` can run the reverse pass
    for arbitrary cotangents of (u, du, d2u).

    Parameters
    ----------
    dirs : sequence of direction vectors, each of shape (in_dim,) or
        (N, in_dim).  Defaults to the coordinate axes when ``order >= 1``.
    order : 0 evaluates values only, 1 adds first tangents, 2 adds pure
        second tangents along each direction.
    """

    def __init__(self, net: FeedForwardNet, theta, X, order: int = 0,
                 dirs=None, apply_cutoff: bool = True):
        if order not in (0, 1, 2):
            raise ValueError("order must be 0, 1, or 2")
        X = np.asarray(X, dtype=float)
        if X.ndim == 1:
            X = X[:, None]
        if X.shape[1] != net.in_dim:
            raise ValueError("point dimension does not match input width")
        if net.out_dim != 1:
            raise ValueError("NetEval supports scalar outputs")
        self.net = net
        self.X = X
        self.order = order
        n = X.shape[0]
        if order >= 1:
            if dirs is None:
                dirs = [np.eye(net.in_dim)[d] for d in range(net.in_dim)]
            dirs = [np.asarray(d, dtype=float) for d in dirs]
        else:
            dirs = []
        self.dirs = dirs

        layers, W_out = net.unflatten(theta)
        self._layers, self._W_out = layers, W_out
        w_out = W_out[0]

        acts = [X]
        d1s, d2s, d3s = [], [], []
        zcur = X
        a = X
        for W, b in layers:
            z = a @ W.T + b
            y, d1, d2, d3 = _act(net.activation, z)
            acts.append(y)
            d1s.append(d1)
            d2s.append(d2)
            d3s.append(d3)
            a = y
        u_raw = a @ w_out
        self._acts, self._d1, self._d2, self._d3 = acts, d1s, d2s, d3s

        self._p = []    # per dir: list over layers of tangent activations
        self._pi = []   # per dir: pre-activation tangents
        self._q = []
        self._ka = []
        du_raw = []
        d2u_raw = []
        for t in dirs:
            p = np.broadcast_to(t, X.shape).astype(float)
            ps, pis = [p], []
            for (W, b), d1, d2 in zip(layers, d1s, d2s):
                pi = ps[-1] @ W.T
                pis.append(pi)
                ps.append(pi * d1)
            self._p.append(ps)
            self._pi.append(pis)
            du_raw.append(ps[-1] @ w_out)
            if order == 2:
                q = np.zeros_like(X)
                qs, kas = [q], []
                for (W, b), d1, d2, pi in zip(layers, d1s, d2s, pis):
                    ka = qs[-1] @ W.T
                    kas.append(ka)
                    qs.append(ka * d1 + pi * pi * d2)
                self._q.append(qs)
                self._ka.append(kas)
                d2u_raw.append(qs[-1] @ w_out)

        self.u_raw = u_raw
        self.du_raw = du_raw
        self.d2u_raw = d2u_raw

        self._cut = net.cutoff if (apply_cutoff and net.cutoff is not None) else None
        if self._cut is None:
            self.u = u_raw
            self.du = list(du_raw)
            self.d2u = list(d2u_raw)
        else:
            xi = self._cut.value(X)
            gxi = self._cut.grad(X)
            sxi = self._cut.second(X)
            # cutoff directional derivatives along each requested direction
            self._xi, self._xid, self._xidd = xi, [], []
            for t in dirs:
                tb = np.broadcast_to(t, X.shape)
                self._xid.append(np.sum(gxi * tb, axis=1))
                self._xidd.append(np.sum(sxi * tb * tb, axis=1))
            self.u = xi * u_raw
            self.du = [self._xid[k] * u_raw + xi * du_raw[k]
                       for k in range(len(dirs))]
            self.d2u = [self._xidd[k] * u_raw + 2.0 * self._xid[k] * du_raw[k]
                        + xi * d2u_raw[k]
                        for k in range(len(dirs))] if order == 2 else []

    # -- reverse pass ---------------------------------------------------

    def grad(self, cu=None, cdu=None, cd2u=None) -> np.ndarray:
        """Parameter gradient of ``sum(cu*u + sum_k cdu[k]*du[k] + ...)``.

        Cotangents refer to the fields exposed as ``u``/``du``/``d2u``
        (cutoff included when active).  Returns a flat vector in
        ParameterSet layout.
        """
        n = self.X.shape[0]
        ndir = len(self.dirs)
        cu = np.zeros(n) if cu is None else np.asarray(cu, dtype=float)
        cdu = [None] * ndir if cdu is None else list(cdu)
        cd2u = [None] * ndir if cd2u is None else list(cd2u)
        cdu = [np.zeros(n) if c is None else np.asarray(c, dtype=float) for c in cdu]
        cd2u = [np.zeros(n) if c is None else np.asarray(c, dtype=float) for c in cd2u]

        if self._cut is not None:
            xi = self._xi
            cu_r = cu * xi
            cdu_r, cd2u_r = [], []
            for k in range(ndir):
                cu_r = cu_r + cdu[k] * self._xid[k]
                if self.order == 2:
                    cu_r = cu_r + cd2u[k] * self._xidd[k]
                    cdu_r.append(cdu[k] * xi + 2.0 * cd2u[k] * self._xid[k])
                    cd2u_r.append(cd2u[k] * xi)
                else:
                    cdu_r.append(cdu[k] * xi)
                    cd2u_r.append(cd2u[k])
            cu, cdu, cd2u = cu_r, cdu_r, cd2u_r

        layers, w_out = self._layers, self._W_out[0]
        acts, d1s, d2s, d3s = self._acts, self._d1, self._d2, self._d3
        K = len(layers)

        gW = [np.zeros_like(W) for W, _ in layers]
        gb = [np.zeros_like(b) for _, b in layers]

        a_bar = cu[:, None] * w_out
        g_wout = acts[-1].T @ cu
        p_bar = []
        q_bar = []
        for k in range(ndir):
            p_bar.append(cdu[k][:, None] * w_out)
            g_wout = g_wout + self._p[k][-1].T @ cdu[k]
            if self.order == 2:
                q_bar.append(cd2u[k][:, None] * w_out)
                g_wout = g_wout + self._q[k][-1].T @ cd2u[k]

        for j in range(K - 1, -1, -1):
            W, _ = layers[j]
            d1, d2, d3 = d1s[j], d2s[j], d3s[j]
            z_bar = a_bar * d1
            pi_bars = []
            ka_bars = []
            for k in range(ndir):
                pi = self._pi[k][j]
                pb = p_bar[k]
                pi_bar = pb * d1
                z_bar = z_bar + pb * pi * d2
                if self.order == 2:
                    qb = q_bar[k]
                    ka = self._ka[k][j]
                    ka_bar = qb * d1
                    z_bar = z_bar + qb * (ka * d2 + pi * pi * d3)
                    pi_bar = pi_bar + qb * 2.0 * pi * d2
                    ka_bars.append(ka_bar)
                pi_bars.append(pi_bar)

            gW[j] += z_bar.T @ acts[j]
            gb[j] += z_bar.sum(axis=0)
            a_bar = z_bar @ W
            for k in range(ndir):
                gW[j] += pi_bars[k].T @ self._p[k][j]
                p_bar[k] = pi_bars[k] @ W
                if self.order == 2:
                    gW[j] += ka_bars[k].T @ self._q[k][j]
                    q_bar[k] = ka_bars[k] @ W

        return self.net.flatten(list(zip(gW, gb)), g_wout[None, :])
