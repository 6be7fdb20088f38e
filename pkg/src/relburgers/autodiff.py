"""Minimal automatic differentiation for the solver suite.

Reverse-mode accumulation over a flat parameter vector, with a
forward-mode tangent channel nested inside it: the tangent arithmetic
(directional derivative along the time coordinate) is itself recorded on
the tape, so parameter gradients of quantities built from d/dt outputs
come out exact (reverse-over-forward).

Node values may be scalars or numpy arrays; an array node evaluates the
same scalar expression elementwise over a batch of independent points,
which is what makes whole collocation sets differentiable in a handful
of numpy calls.  Tapes are single-use: build the graph, call
``Tape.backward`` once, read gradients, discard.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np


class AutodiffError(Exception):
    pass


class NumericError(AutodiffError):
    """A NaN or infinity appeared; the message names the offending op."""


def _unbroadcast(g, shape):
    """Sum ``g`` down to ``shape`` (undo numpy broadcasting)."""
    if np.shape(g) == tuple(shape):
        return g
    while np.ndim(g) > len(shape):
        g = np.sum(g, axis=0)
    for ax, n in enumerate(shape):
        if n == 1 and np.shape(g)[ax] != 1:
            g = np.sum(g, axis=ax, keepdims=True)
    return g


class Tape:
    """Ordered record of primitive operations.

    Creation order is a topological order, so the reverse sweep visits
    every node after all of its consumers.
    """

    def __init__(self):
        self.nodes: list[Var] = []

    def node(self, value, vjp=None, op: str = "") -> "Var":
        v = Var(self, value, vjp, op)
        self.nodes.append(v)
        return v

    def leaf(self, value, op: str = "leaf") -> "Var":
        return self.node(np.asarray(value, dtype=float), None, op)

    def backward(self, out: "Var") -> None:
        """Reverse sweep seeding d(out)/d(out) = 1; fills ``.grad``."""
        if np.ndim(out.value) != 0:
            raise AutodiffError("backward() expects a scalar output node")
        out.grad = 1.0
        for node in reversed(self.nodes):
            if node.grad is not None and node._vjp is not None:
                node._vjp(node.grad)

    def first_nonfinite(self):
        """(index, op) of the earliest non-finite node, else None."""
        for i, node in enumerate(self.nodes):
            if not np.all(np.isfinite(node.value)):
                return i, node.op
        return None


class Var:
    """One tape node: a value plus the closure that scatters its adjoint
    back to its parents.  Supports arithmetic with floats and ndarrays
    (treated as constants, which create no node)."""

    __slots__ = ("tape", "value", "grad", "_vjp", "op")

    # keep numpy from absorbing us in mixed expressions; reflected
    # operators take over instead
    __array_ufunc__ = None

    def __init__(self, tape, value, vjp, op):
        self.tape = tape
        self.value = value
        self.grad = None
        self._vjp = vjp
        self.op = op

    def _accum(self, g):
        g = _unbroadcast(g, np.shape(self.value))
        self.grad = g if self.grad is None else self.grad + g

    # -- arithmetic ----------------------------------------------------

    def __add__(self, other):
        if isinstance(other, Var):
            def vjp(g, a=self, b=other):
                a._accum(g)
                b._accum(g)
            return self.tape.node(self.value + other.value, vjp, "add")
        def vjp(g, a=self):
            a._accum(g)
        return self.tape.node(self.value + other, vjp, "add")

    __radd__ = __add__

    def __neg__(self):
        def vjp(g, a=self):
            a._accum(-g)
        return self.tape.node(-self.value, vjp, "neg")

    def __sub__(self, other):
        if isinstance(other, Var):
            def vjp(g, a=self, b=other):
                a._accum(g)
                b._accum(-g)
            return self.tape.node(self.value - other.value, vjp, "sub")
        def vjp(g, a=self):
            a._accum(g)
        return self.tape.node(self.value - other, vjp, "sub")

    def __rsub__(self, other):
        def vjp(g, a=self):
            a._accum(-g)
        return self.tape.node(other - self.value, vjp, "rsub")

    def __mul__(self, other):
        if isinstance(other, Var):
            def vjp(g, a=self, b=other):
                a._accum(g * b.value)
                b._accum(g * a.value)
            return self.tape.node(self.value * other.value, vjp, "mul")
        def vjp(g, a=self, c=other):
            a._accum(g * c)
        return self.tape.node(self.value * other, vjp, "mul")

    __rmul__ = __mul__

    def __truediv__(self, other):
        if isinstance(other, Var):
            inv = 1.0 / other.value
            out_val = self.value * inv
            def vjp(g, a=self, b=other, inv=inv, q=out_val):
                a._accum(g * inv)
                b._accum(-g * q * inv)
            return self.tape.node(out_val, vjp, "div")
        return self * (1.0 / other)

    def __rtruediv__(self, other):
        inv = 1.0 / self.value
        out_val = other * inv
        def vjp(g, a=self, inv=inv, q=out_val):
            a._accum(-g * q * inv)
        return self.tape.node(out_val, vjp, "rdiv")

    def __pow__(self, k):
        if k == 2:
            def vjp(g, a=self):
                a._accum(2.0 * g * a.value)
            return self.tape.node(self.value * self.value, vjp, "square")
        def vjp(g, a=self, k=k):
            a._accum(g * k * a.value ** (k - 1))
        return self.tape.node(self.value ** k, vjp, "pow")

    def __repr__(self):
        return f"Var(op={self.op!r}, shape={np.shape(self.value)})"


def value_of(x):
    """Plain numeric value of a Var, Dual, float or ndarray."""
    if isinstance(x, Dual):
        x = x.val
    return x.value if isinstance(x, Var) else x


# -- stable elementwise kernels (shared by Var ops and plain numpy) -----

def _sigmoid_np(x):
    x = np.asarray(x, dtype=float)
    out = np.empty_like(x)
    pos = x >= 0
    out[pos] = 1.0 / (1.0 + np.exp(-x[pos]))
    ex = np.exp(x[~pos])
    out[~pos] = ex / (1.0 + ex)
    return out if out.ndim else float(out)


def _softplus_np(x):
    x = np.asarray(x, dtype=float)
    out = np.maximum(x, 0.0) + np.log1p(np.exp(-np.abs(x)))
    return out if out.ndim else float(out)


# -- unary primitives ----------------------------------------------------

def tanh(x):
    if isinstance(x, Dual):
        y = tanh(x.val)
        tan = None if x.tan is None else (1.0 - y * y) * x.tan
        return Dual(y, tan)
    if isinstance(x, Var):
        y = np.tanh(x.value)
        def vjp(g, a=x, y=y):
            a._accum(g * (1.0 - y * y))
        return x.tape.node(y, vjp, "tanh")
    return np.tanh(x)


def sigmoid(x):
    if isinstance(x, Dual):
        y = sigmoid(x.val)
        tan = None if x.tan is None else y * (1.0 - y) * x.tan
        return Dual(y, tan)
    if isinstance(x, Var):
        y = _sigmoid_np(x.value)
        def vjp(g, a=x, y=y):
            a._accum(g * y * (1.0 - y))
        return x.tape.node(y, vjp, "sigmoid")
    return _sigmoid_np(x)


def exp(x):
    if isinstance(x, Dual):
        y = exp(x.val)
        tan = None if x.tan is None else y * x.tan
        return Dual(y, tan)
    if isinstance(x, Var):
        y = np.exp(x.value)
        def vjp(g, a=x, y=y):
            a._accum(g * y)
        return x.tape.node(y, vjp, "exp")
    return np.exp(x)


def sqrt(x):
    if isinstance(x, Dual):
        y = sqrt(x.val)
        tan = None if x.tan is None else x.tan / (2.0 * y)
        return Dual(y, tan)
    if isinstance(x, Var):
        y = np.sqrt(x.value)
        def vjp(g, a=x, y=y):
            a._accum(g * 0.5 / y)
        return x.tape.node(y, vjp, "sqrt")
    return np.sqrt(x)


def softplus(x):
    if isinstance(x, Dual):
        y = softplus(x.val)
        tan = None if x.tan is None else sigmoid(x.val) * x.tan
        return Dual(y, tan)
    if isinstance(x, Var):
        y = _softplus_np(x.value)
        def vjp(g, a=x):
            a._accum(g * _sigmoid_np(a.value))
        return x.tape.node(y, vjp, "softplus")
    return _softplus_np(x)


# -- binary selection primitives (subgradient convention: the left
#    argument receives the partial on exact ties) ------------------------

def _select(a, b, mask, op):
    mask = np.asarray(mask)
    av, bv = value_of(a), value_of(b)
    tape = a.tape if isinstance(a, Var) else b.tape
    def vjp(g, a=a, b=b, mask=mask):
        if isinstance(a, Var):
            a._accum(g * mask)
        if isinstance(b, Var):
            b._accum(g * ~mask)
    return tape.node(np.where(mask, av, bv), vjp, op)


def maximum(a, b):
    if isinstance(a, Var) or isinstance(b, Var):
        return _select(a, b, value_of(a) >= value_of(b), "maximum")
    return np.maximum(a, b)


def minimum(a, b):
    if isinstance(a, Var) or isinstance(b, Var):
        return _select(a, b, value_of(a) <= value_of(b), "minimum")
    return np.minimum(a, b)


def where(cond, a, b):
    """Branch select with a non-differentiated boolean condition."""
    if isinstance(a, Var) or isinstance(b, Var):
        return _select(a, b, cond, "where")
    return np.where(cond, a, b)


# -- structural primitives -----------------------------------------------

def segment(flat: Var, start: int, stop: int, shape) -> Var:
    """View rows [start, stop) of a flat vector node as ``shape``."""
    val = flat.value[start:stop].reshape(shape)
    def vjp(g, flat=flat, start=start, stop=stop):
        z = np.zeros_like(flat.value)
        z[start:stop] = np.ravel(g)
        flat._accum(z)
    return flat.tape.node(val, vjp, "segment")


def reshape(x: Var, shape) -> Var:
    old = np.shape(x.value)
    def vjp(g, a=x, old=old):
        a._accum(np.reshape(g, old))
    return x.tape.node(np.reshape(x.value, shape), vjp, "reshape")


def stack_rows(rows) -> Var:
    """Stack 1-D rows (Var or ndarray) into a (k, N) node."""
    tape = next(r.tape for r in rows if isinstance(r, Var))
    vals = [value_of(r) for r in rows]
    n = max(np.size(v) for v in vals)
    vals = [np.broadcast_to(np.asarray(v, dtype=float), (n,)) for v in vals]
    def vjp(g, rows=rows):
        for i, r in enumerate(rows):
            if isinstance(r, Var):
                r._accum(_unbroadcast(g[i], np.shape(r.value)))
    return tape.node(np.stack(vals), vjp, "stack")


def affine(W: Var, b, x):
    """W @ x + b with W: (m, n), x: (n, N), b: (m,) or None.

    Equivalent to the usual multiply/add composition, fused into one
    node so a dense layer costs a few BLAS calls instead of thousands
    of scalar nodes.  ``x`` may be a Dual (weight tangents are zero, so
    the tangent channel is just W @ x.tan) or a plain constant array.
    """
    if isinstance(x, Dual):
        tan = None if x.tan is None else affine(W, None, x.tan)
        return Dual(affine(W, b, x.val), tan)
    xv = value_of(x)
    val = W.value @ xv
    if b is not None:
        val = val + b.value[:, None]
    def vjp(g, W=W, b=b, x=x, xv=xv):
        W._accum(g @ xv.T)
        if isinstance(x, Var):
            x._accum(W.value.T @ g)
        if b is not None:
            b._accum(g.sum(axis=1))
    return W.tape.node(val, vjp, "affine")


def vsum(x: Var) -> Var:
    shape = np.shape(x.value)
    def vjp(g, a=x, shape=shape):
        a._accum(np.full(shape, g))
    return x.tape.node(float(np.sum(x.value)), vjp, "sum")


def mean(x: Var) -> Var:
    return vsum(x) * (1.0 / np.size(x.value))


# -- forward tangent channel ---------------------------------------------

class Dual:
    """Value/tangent pair of tape nodes.

    ``tan is None`` means an identically-zero tangent, which lets
    evaluations that never touch the time coordinate skip tangent
    arithmetic entirely.  Because the tangent side is built from
    ordinary tape ops, the reverse sweep differentiates through it.
    """

    __slots__ = ("val", "tan")

    __array_ufunc__ = None

    def __init__(self, val, tan=None):
        self.val = val
        self.tan = tan

    @property
    def value(self):
        return value_of(self.val)

    @property
    def tangent(self):
        if self.tan is None:
            return np.zeros(np.shape(value_of(self.val))) if np.ndim(value_of(self.val)) else 0.0
        return value_of(self.tan)

    @staticmethod
    def lift(x) -> "Dual":
        return x if isinstance(x, Dual) else Dual(x, None)

    def __add__(self, other):
        other = Dual.lift(other)
        if other.tan is None:
            tan = self.tan
        elif self.tan is None:
            tan = other.tan
        else:
            tan = self.tan + other.tan
        return Dual(self.val + other.val, tan)

    __radd__ = __add__

    def __neg__(self):
        return Dual(-self.val, None if self.tan is None else -self.tan)

    def __sub__(self, other):
        return self + (-Dual.lift(other))

    def __rsub__(self, other):
        return (-self) + other

    def __mul__(self, other):
        other = Dual.lift(other)
        parts = []
        if self.tan is not None:
            parts.append(self.tan * other.val)
        if other.tan is not None:
            parts.append(other.tan * self.val)
        tan = None
        if parts:
            tan = parts[0] if len(parts) == 1 else parts[0] + parts[1]
        return Dual(self.val * other.val, tan)

    __rmul__ = __mul__

    def __truediv__(self, other):
        other = Dual.lift(other)
        q = self.val / other.val
        if self.tan is None and other.tan is None:
            return Dual(q, None)
        num = self.tan if self.tan is not None else None
        if other.tan is not None:
            corr = q * other.tan
            num = -corr if num is None else num - corr
        return Dual(q, num / other.val)

    def __repr__(self):
        return f"Dual(val={self.val!r}, tan={self.tan!r})"


# -- public entry points ---------------------------------------------------

@dataclass
class GradResult:
    """Loss value and its gradient with respect to the flat parameters."""

    value: float
    grad: np.ndarray


def _check_finite(tape: Tape, value, context: str):
    if np.all(np.isfinite(value)):
        return
    hit = tape.first_nonfinite()
    at = f" (first non-finite node: #{hit[0]} op={hit[1]!r})" if hit else ""
    raise NumericError(f"non-finite value in {context}{at}")


def gradient(loss, params) -> GradResult:
    """Value and full gradient of ``loss`` at ``params``.

    ``loss`` is called with a single 1-D tape variable standing in for
    the flat parameter vector and must return a scalar node (or a Dual,
    whose value channel is used).
    """
    tape = Tape()
    theta = tape.leaf(np.asarray(params, dtype=float).copy(), op="params")
    out = loss(theta)
    if isinstance(out, Dual):
        out = out.val
    val = float(out.value)
    if not np.isfinite(val):
        _check_finite(tape, val, "loss evaluation")
    tape.backward(out)
    g = theta.grad
    if g is None:
        g = np.zeros_like(theta.value)
    g = np.asarray(g, dtype=float)
    if not np.all(np.isfinite(g)):
        _check_finite(tape, g, "gradient accumulation")
    return GradResult(value=val, grad=g)


def eval_with_time_tangent(fn, params, t, r) -> Dual:
    """Evaluate ``fn(params, t, r)`` with the exact d/dt alongside.

    ``fn`` receives the parameters as a 1-D tape variable, ``t`` as a
    Dual seeded with unit tangent, and ``r`` unchanged.  ``t`` and ``r``
    may be scalars or equal-length arrays.
    """
    tape = Tape()
    theta = tape.leaf(np.asarray(params, dtype=float), op="params")
    t_arr = np.asarray(t, dtype=float)
    td = Dual(tape.leaf(t_arr, op="t"),
              tape.leaf(np.ones_like(t_arr), op="dt_seed"))
    out = fn(theta, td, r)
    out = Dual.lift(out)
    _check_finite(tape, out.value, "time-tangent evaluation")
    _check_finite(tape, out.tangent, "time-tangent evaluation")
    return out
