"""Reverse-mode automatic differentiation over scalar expression tapes.

An :class:`ExpressionTape` records a scalar formula as a topologically
ordered list of primitive operations.  Values may be floats or numpy
arrays of identical shape (the same graph evaluated over a batch of
points); the graph itself always describes a scalar expression.

Supported primitives: add, sub, mul, div, neg, tanh, log, cosh, exp,
sin, cos, pow (constant exponent), abs, plus a weighted-sum reduction
used to collapse a batch axis into a quadrature sum.
"""

from __future__ import annotations

import math

import numpy as np

__all__ = [
    "ExpressionTape",
    "Var",
    "NonFiniteError",
    "forward_eval",
    "backward_grad",
    "derive",
    "spatial_derivative",
]


class NonFiniteError(ArithmeticError):
    """An intermediate value overflowed or produced NaN during a forward pass."""


# operation codes
_INPUT, _CONST, _ADD, _SUB, _MUL, _DIV, _NEG = 0, 1, 2, 3, 4, 5, 6
_TANH, _LOG, _COSH, _EXP, _SIN, _COS, _POW, _ABS, _SGN, _WSUM = (
    7, 8, 9, 10, 11, 12, 13, 14, 15, 16,
)

_NAMES = {
    _INPUT: "input", _CONST: "const", _ADD: "add", _SUB: "sub",
    _MUL: "mul", _DIV: "div", _NEG: "neg", _TANH: "tanh", _LOG: "log",
    _COSH: "cosh", _EXP: "exp", _SIN: "sin", _COS: "cos", _POW: "pow",
    _ABS: "abs", _SGN: "sgn", _WSUM: "wsum",
}


class Var:
    """Handle to a node of an :class:`ExpressionTape`."""

    __slots__ = ("tape", "index")

    def __init__(self, tape: "ExpressionTape", index: int):
        self.tape = tape
        self.index = index

    def _coerce(self, other) -> "Var":
        if isinstance(other, Var):
            if other.tape is not self.tape:
                raise ValueError("cannot mix variables from different tapes")
            return other
        return self.tape.constant(float(other))

    def __add__(self, other):
        return self.tape._emit(_ADD, self.index, self._coerce(other).index)

    __radd__ = __add__

    def __sub__(self, other):
        return self.tape._emit(_SUB, self.index, self._coerce(other).index)

    def __rsub__(self, other):
        return self.tape._emit(_SUB, self._coerce(other).index, self.index)

    def __mul__(self, other):
        return self.tape._emit(_MUL, self.index, self._coerce(other).index)

    __rmul__ = __mul__

    def __truediv__(self, other):
        return self.tape._emit(_DIV, self.index, self._coerce(other).index)

    def __rtruediv__(self, other):
        return self.tape._emit(_DIV, self._coerce(other).index, self.index)

    def __neg__(self):
        return self.tape._emit(_NEG, self.index)

    def __pow__(self, exponent):
        if not isinstance(exponent, (int, float)):
            raise TypeError("only constant exponents are supported")
        return self.tape._emit(_POW, self.index, aux=float(exponent))

    def __abs__(self):
        return self.tape._emit(_ABS, self.index)

    def __repr__(self):  # pragma: no cover - debugging aid
        return f"Var({_NAMES[self.tape._ops[self.index]]}@{self.index})"


def _unary(op):
    def f(v: Var) -> Var:
        return v.tape._emit(op, v.index)
    return f


tanh = _unary(_TANH)
log = _unary(_LOG)
cosh = _unary(_COSH)
exp = _unary(_EXP)
sin = _unary(_SIN)
cos = _unary(_COS)


class ExpressionTape:
    """Topologically ordered scalar expression graph with cached values.

    Nodes are appended in construction order, so every operand precedes
    its consumers.  ``forward`` caches one value per node; ``backward``
    accumulates adjoints against those cached values.
    """

    def __init__(self):
        self._ops: list[int] = []
        self._a: list[int] = []
        self._b: list[int] = []
        self._aux: list = []
        self._roots: list[int] = []
        self._values: list | None = None
        self._output: int | None = None
        self._tangent_cache: dict[int, dict[int, int]] = {}

    # -- construction -------------------------------------------------

    def _emit(self, op: int, a: int = -1, b: int = -1, aux=None) -> Var:
        self._ops.append(op)
        self._a.append(a)
        self._b.append(b)
        self._aux.append(aux)
        self._values = None
        return Var(self, len(self._ops) - 1)

    def input(self) -> Var:
        """Create a new root slot (ordered: inputs are bound positionally)."""
        v = self._emit(_INPUT)
        self._roots.append(v.index)
        return v

    def constant(self, value) -> Var:
        return self._emit(_CONST, aux=value)

    def weighted_sum(self, v: Var, weights) -> Var:
        """Quadrature reduction: sum(weights * value) over the batch axis."""
        return self._emit(_WSUM, v.index, aux=np.asarray(weights, dtype=float))

    def mark_output(self, v: Var) -> None:
        self._output = v.index

    @property
    def num_roots(self) -> int:
        return len(self._roots)

    def __len__(self) -> int:
        return len(self._ops)

    # -- evaluation ---------------------------------------------------

    def forward(self, inputs, output: Var | None = None):
        if len(inputs) != len(self._roots):
            raise ValueError(
                f"expected {len(self._roots)} inputs, got {len(inputs)}"
            )
        out = self._out_index(output)
        ops, ia, ib, aux = self._ops, self._a, self._b, self._aux
        self._values = None  # a failed pass must not leave stale caches
        vals = [None] * len(ops)
        for slot, value in zip(self._roots, inputs):
            vals[slot] = value if np.ndim(value) else float(value)
        with np.errstate(over="ignore", invalid="ignore", divide="ignore"):
            return self._sweep(out, ops, ia, ib, aux, vals)

    def _sweep(self, out, ops, ia, ib, aux, vals):
        for i in range(len(ops)):
            op = ops[i]
            if op == _INPUT:
                if vals[i] is None:
                    raise ValueError("unbound input slot")
                v = vals[i]
            elif op == _CONST:
                v = aux[i]
            elif op == _ADD:
                v = vals[ia[i]] + vals[ib[i]]
            elif op == _SUB:
                v = vals[ia[i]] - vals[ib[i]]
            elif op == _MUL:
                v = vals[ia[i]] * vals[ib[i]]
            elif op == _DIV:
                v = vals[ia[i]] / vals[ib[i]]
            elif op == _NEG:
                v = -vals[ia[i]]
            elif op == _TANH:
                v = np.tanh(vals[ia[i]])
            elif op == _LOG:
                v = np.log(vals[ia[i]])
            elif op == _COSH:
                v = np.cosh(vals[ia[i]])
            elif op == _EXP:
                v = np.exp(vals[ia[i]])
            elif op == _SIN:
                v = np.sin(vals[ia[i]])
            elif op == _COS:
                v = np.cos(vals[ia[i]])
            elif op == _POW:
                v = vals[ia[i]] ** aux[i]
            elif op == _ABS:
                v = np.abs(vals[ia[i]])
            elif op == _SGN:
                v = np.sign(vals[ia[i]])
            elif op == _WSUM:
                v = float(np.sum(aux[i] * vals[ia[i]]))
            else:  # pragma: no cover
                raise AssertionError(f"unknown op {op}")
            if not np.all(np.isfinite(v)):
                raise NonFiniteError(
                    f"non-finite value in node {i} ({_NAMES[op]})"
                )
            vals[i] = v
        self._values = vals
        return vals[out]

    def backward(self, seed=1.0, output: Var | None = None) -> np.ndarray:
        if self._values is None:
            raise RuntimeError("backward requires a completed forward pass")
        out = self._out_index(output)
        ops, ia, ib, aux, vals = self._ops, self._a, self._b, self._aux, self._values
        adj: list = [None] * len(ops)
        adj[out] = seed

        def acc(i: int, contrib):
            # reduce a batched contribution onto a scalar-valued node
            if np.ndim(contrib) and not np.ndim(vals[i]):
                contrib = float(np.sum(contrib))
            adj[i] = contrib if adj[i] is None else adj[i] + contrib

        for i in range(out, -1, -1):
            s = adj[i]
            if s is None:
                continue
            op = ops[i]
            if op in (_INPUT, _CONST):
                continue
            a = ia[i]
            if op == _ADD:
                acc(a, s)
                acc(ib[i], s)
            elif op == _SUB:
                acc(a, s)
                acc(ib[i], -s)
            elif op == _MUL:
                acc(a, s * vals[ib[i]])
                acc(ib[i], s * vals[a])
            elif op == _DIV:
                acc(a, s / vals[ib[i]])
                acc(ib[i], -s * vals[i] / vals[ib[i]])
            elif op == _NEG:
                acc(a, -s)
            elif op == _TANH:
                acc(a, s * (1.0 - vals[i] * vals[i]))
            elif op == _LOG:
                acc(a, s / vals[a])
            elif op == _COSH:
                acc(a, s * np.sinh(vals[a]))
            elif op == _EXP:
                acc(a, s * vals[i])
            elif op == _SIN:
                acc(a, s * np.cos(vals[a]))
            elif op == _COS:
                acc(a, -s * np.sin(vals[a]))
            elif op == _POW:
                p = aux[i]
                acc(a, s * p * vals[a] ** (p - 1.0))
            elif op == _ABS:
                acc(a, s * np.sign(vals[a]))
            elif op == _SGN:
                pass  # derivative zero almost everywhere
            elif op == _WSUM:
                acc(a, s * aux[i])
        grads = np.zeros(len(self._roots))
        for k, slot in enumerate(self._roots):
            g = adj[slot]
            if g is not None:
                grads[k] = float(np.sum(g)) if np.ndim(g) else g
        return grads

    def _out_index(self, output: Var | None) -> int:
        if output is not None:
            return output.index
        if self._output is not None:
            return self._output
        if not self._ops:
            raise ValueError("empty tape")
        return len(self._ops) - 1


def forward_eval(tape: ExpressionTape, inputs, output: Var | None = None):
    """Evaluate the tape on ``inputs`` (one value per root slot)."""
    return tape.forward(inputs, output=output)


def backward_grad(tape: ExpressionTape, seed: float = 1.0,
                  output: Var | None = None) -> np.ndarray:
    """Reverse-mode partials of the output with respect to every root slot."""
    return tape.backward(seed=seed, output=output)


def derive(var: Var, wrt: Var) -> Var:
    """Append the tangent graph d(var)/d(wrt) to the tape and return it.

    Forward-mode differentiation expressed as a graph transformation:
    the result is an ordinary node, so it can enter further expressions
    (losses on u') and be differentiated again (u'').
    """
    tape = var.tape
    if wrt.tape is not tape:
        raise ValueError("wrt belongs to a different tape")
    cache = tape._tangent_cache.setdefault(wrt.index, {})
    ops, ia, ib, aux = tape._ops, tape._a, tape._b, tape._aux
    limit = var.index

    # nodes independent of wrt all share a single zero tangent
    depends = [False] * (limit + 1)
    if wrt.index <= limit:
        depends[wrt.index] = True
    for i in range(limit + 1):
        if ops[i] in (_INPUT, _CONST):
            continue
        a, b = ia[i], ib[i]
        if (a >= 0 and depends[a]) or (b >= 0 and depends[b]):
            depends[i] = True

    zero = tape.constant(0.0)
    one = tape.constant(1.0)

    def tangent(i: int) -> int:
        if i in cache:
            return cache[i]
        op = ops[i]
        if not depends[i]:
            t = zero
        elif op == _INPUT:
            t = one if i == wrt.index else zero
        elif op == _CONST:
            t = zero
        else:
            a, b = ia[i], ib[i]
            dep_a = depends[a] if a >= 0 else False
            dep_b = depends[b] if b >= 0 else False
            da = Var(tape, tangent(a)) if a >= 0 else zero
            if op == _ADD:
                if not dep_b:
                    t = da
                elif not dep_a:
                    t = Var(tape, tangent(b))
                else:
                    t = da + Var(tape, tangent(b))
            elif op == _SUB:
                if not dep_b:
                    t = da
                elif not dep_a:
                    t = -Var(tape, tangent(b))
                else:
                    t = da - Var(tape, tangent(b))
            elif op == _MUL:
                if not dep_b:
                    t = da * Var(tape, b)
                elif not dep_a:
                    t = Var(tape, a) * Var(tape, tangent(b))
                else:
                    t = da * Var(tape, b) + Var(tape, a) * Var(tape, tangent(b))
            elif op == _DIV:
                if not dep_b:
                    t = da / Var(tape, b)
                else:
                    db = Var(tape, tangent(b))
                    num = da - Var(tape, i) * db if dep_a else -(Var(tape, i) * db)
                    t = num / Var(tape, b)
            elif op == _NEG:
                t = -da
            elif op == _TANH:
                y = Var(tape, i)
                t = da * (1.0 - y * y)
            elif op == _LOG:
                t = da / Var(tape, a)
            elif op == _COSH:
                t = da * Var(tape, i) * tanh(Var(tape, a))
            elif op == _EXP:
                t = da * Var(tape, i)
            elif op == _SIN:
                t = da * cos(Var(tape, a))
            elif op == _COS:
                t = -(da * sin(Var(tape, a)))
            elif op == _POW:
                p = aux[i]
                t = da * (Var(tape, a) ** (p - 1.0)) * p
            elif op == _ABS:
                t = da * tape._emit(_SGN, a)
            elif op == _SGN:
                t = zero
            elif op == _WSUM:
                t = tape.weighted_sum(da, aux[i])
            else:  # pragma: no cover
                raise AssertionError(f"unknown op {op}")
        cache[i] = t.index if isinstance(t, Var) else t
        return cache[i]

    for i in range(limit + 1):
        # tangent() recurses, but filling in order keeps node order sane
        tangent(i)
    return Var(tape, cache[limit])


def spatial_derivative(net, theta, x, order: int = 1) -> np.ndarray:
    """Derivatives of a network output with respect to its spatial inputs.

    Returns a vector of length ``dim(x)``: ``du/dx_i`` for order 1 or
    ``d2u/dx_i2`` for order 2, obtained by nested differentiation of the
    network's expression graph.
    """
    if order not in (1, 2):
        raise ValueError("order must be 1 or 2")
    x = np.atleast_1d(np.asarray(x, dtype=float))
    tape = ExpressionTape()
    x_vars = [tape.input() for _ in range(x.size)]
    theta_vals = np.asarray(getattr(theta, "values", theta), dtype=float)
    theta_vars = [tape.input() for _ in range(theta_vals.size)]
    u = net.build_graph(tape, x_vars, theta_vars)
    outs = []
    for xv in x_vars:
        d = derive(u, xv)
        if order == 2:
            d = derive(d, xv)
        outs.append(d)
    inputs = list(x) + list(theta_vals)
    result = np.empty(len(outs))
    for k, node in enumerate(outs):
        result[k] = tape.forward(inputs, output=node)
    return result


def finite_difference(f, x: np.ndarray, step: float = 1e-6) -> np.ndarray:
    """Central finite-difference gradient of a scalar callable (test oracle)."""
    x = np.asarray(x, dtype=float)
    g = np.empty_like(x)
    for i in range(x.size):
        hi = x.copy()
        lo = x.copy()
        hi[i] += step
        lo[i] -= step
        g[i] = (f(hi) - f(lo)) / (2.0 * step)
    return g
