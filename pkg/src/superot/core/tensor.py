"""Dense float64 tensors with reverse-mode autodiff.

Every operation records its inputs and a vector-Jacobian product (VJP) on the
output node, so the graph reachable from a result is the tape. VJPs are
themselves written with :class:`Tensor` operations, which means the backward
pass can be recorded too (``create_graph=True``) and differentiated again.
That double-backprop path is what the discriminator gradient penalty needs.

A VJP is called as ``vjp(g, needs)`` where ``needs[i]`` says whether the
gradient for parent ``i`` is wanted; it returns one entry per parent
(``None`` where not needed).

Finiteness is enforced on every recorded node and on every gradient handed
back by :func:`grad`; NaN/Inf raises :class:`NonFiniteError`.
"""

from __future__ import annotations

import contextlib
import math
import threading

import numpy as np

from ..errors import ContractError, DomainError, NonFiniteError, ShapeError

_state = threading.local()


def is_grad_enabled() -> bool:
    return getattr(_state, "enabled", True)


@contextlib.contextmanager
def set_grad_enabled(mode: bool):
    prev = is_grad_enabled()
    _state.enabled = bool(mode)
    try:
        yield
    finally:
        _state.enabled = prev


def no_grad():
    return set_grad_enabled(False)


class Tensor:
    """A node on the tape.

    Leaves are created by the user; interior nodes by operations. ``grad``
    is only populated on leaves by :meth:`backward`.
    """

    __slots__ = ("data", "requires_grad", "grad", "op", "_parents", "_vjp")
    __array_priority__ = 1000

    def __init__(self, data, requires_grad: bool = False):
        arr = np.array(data, dtype=np.float64)
        if not np.isfinite(arr).all():
            raise NonFiniteError("tensor created with non-finite entries")
        self.data = arr
        self.requires_grad = bool(requires_grad)
        self.grad = None
        self.op = "leaf"
        self._parents = ()
        self._vjp = None

    @property
    def shape(self):
        return self.data.shape

    @property
    def ndim(self):
        return self.data.ndim

    @property
    def size(self):
        return self.data.size

    @property
    def is_leaf(self) -> bool:
        return self._vjp is None

    def numpy(self) -> np.ndarray:
        return self.data

    def item(self) -> float:
        return float(self.data)

    def detach(self) -> "Tensor":
        return _const(self.data)

    def __repr__(self):
        flag = ", requires_grad=True" if self.requires_grad else ""
        return f"Tensor({self.data!r}{flag})"

    def __len__(self):
        return len(self.data)

    def __add__(self, other):
        return add(self, other)

    __radd__ = __add__

    def __sub__(self, other):
        return sub(self, other)

    def __rsub__(self, other):
        return sub(other, self)

    def __mul__(self, other):
        return mul(self, other)

    __rmul__ = __mul__

    def __truediv__(self, other):
        return div(self, other)

    def __rtruediv__(self, other):
        return div(other, self)

    def __neg__(self):
        return neg(self)

    def __pow__(self, exponent):
        return power(self, exponent)

    def __matmul__(self, other):
        return matmul(self, other)

    def __rmatmul__(self, other):
        return matmul(other, self)

    @property
    def T(self):
        return transpose(self)

    def sum(self, axis=None, keepdims=False):
        return tsum(self, axis=axis, keepdims=keepdims)

    def mean(self, axis=None, keepdims=False):
        return mean(self, axis=axis, keepdims=keepdims)

    def reshape(self, *shape):
        if len(shape) == 1 and isinstance(shape[0], (tuple, list)):
            shape = tuple(shape[0])
        return reshape(self, shape)

    def backward(self, grad_output=None, create_graph: bool = False):
        """Accumulate d(self)/d(leaf) into ``leaf.grad`` for every leaf on the tape."""
        leaves = [n for n in _topo_order(self) if n.is_leaf and n.requires_grad]
        grads = grad(self, leaves, grad_output=grad_output, create_graph=create_graph)
        for leaf, g in zip(leaves, grads):
            if create_graph:
                leaf.grad = g if leaf.grad is None else leaf.grad + g
            else:
                leaf.grad = g.data if leaf.grad is None else leaf.grad + g.data


def _const(arr) -> Tensor:
    out = Tensor.__new__(Tensor)
    out.data = arr
    out.requires_grad = False
    out.grad = None
    out.op = "leaf"
    out._parents = ()
    out._vjp = None
    return out


def as_tensor(x) -> Tensor:
    if isinstance(x, Tensor):
        return x
    if isinstance(x, (int, float)):
        if not math.isfinite(x):
            raise NonFiniteError("non-finite scalar constant")
        return _const(np.array(float(x)))
    return Tensor(x)


def _node(data, parents, vjp, op) -> Tensor:
    out = Tensor.__new__(Tensor)
    out.data = data
    out.grad = None
    out.op = op
    if is_grad_enabled() and (parents[0].requires_grad or
                              (len(parents) > 1 and any(p.requires_grad for p in parents[1:]))):
        if not np.isfinite(data).all():
            raise NonFiniteError(f"non-finite values produced by {op}")
        out.requires_grad = True
        out._parents = parents
        out._vjp = vjp
    else:
        out.requires_grad = False
        out._parents = ()
        out._vjp = None
    return out


# -- shape plumbing ------------------------------------------------------

def _reduce_axes(src_shape, dst_shape):
    lead = len(src_shape) - len(dst_shape)
    axes = list(range(lead))
    for i, d in enumerate(dst_shape):
        if d == 1 and src_shape[lead + i] != 1:
            axes.append(lead + i)
    return tuple(axes), lead


def sum_to(x: Tensor, shape) -> Tensor:
    """Sum ``x`` down to a broadcast-compatible ``shape`` (adjoint of broadcast_to)."""
    shape = tuple(shape)
    if x.shape == shape:
        return x
    axes, lead = _reduce_axes(x.shape, shape)
    data = x.data.sum(axis=axes, keepdims=True)
    if lead:
        data = data.reshape(data.shape[lead:])
    src = x.shape
    return _node(data, (x,), lambda g, needs: (broadcast_to(g, src),), "sum_to")


def broadcast_to(x: Tensor, shape) -> Tensor:
    shape = tuple(shape)
    if x.shape == shape:
        return x
    src = x.shape
    data = np.broadcast_to(x.data, shape).copy()
    return _node(data, (x,), lambda g, needs: (sum_to(g, src),), "broadcast_to")


def _check_broadcast(a, b, op):
    if a.shape != b.shape:
        try:
            np.broadcast_shapes(a.shape, b.shape)
        except ValueError:
            raise ShapeError(f"{op}: incompatible shapes {a.shape} and {b.shape}") from None


# -- arithmetic ----------------------------------------------------------

def add(a, b) -> Tensor:
    a, b = as_tensor(a), as_tensor(b)
    _check_broadcast(a, b, "add")
    sa, sb = a.shape, b.shape

    def vjp(g, needs):
        return (sum_to(g, sa) if needs[0] else None,
                sum_to(g, sb) if needs[1] else None)

    return _node(a.data + b.data, (a, b), vjp, "add")


def sub(a, b) -> Tensor:
    a, b = as_tensor(a), as_tensor(b)
    _check_broadcast(a, b, "sub")
    sa, sb = a.shape, b.shape

    def vjp(g, needs):
        return (sum_to(g, sa) if needs[0] else None,
                sum_to(neg(g), sb) if needs[1] else None)

    return _node(a.data - b.data, (a, b), vjp, "sub")


def neg(a) -> Tensor:
    a = as_tensor(a)
    return _node(-a.data, (a,), lambda g, needs: (neg(g),), "neg")


def mul(a, b) -> Tensor:
    a, b = as_tensor(a), as_tensor(b)
    _check_broadcast(a, b, "mul")
    sa, sb = a.shape, b.shape

    def vjp(g, needs):
        return (sum_to(mul(g, b), sa) if needs[0] else None,
                sum_to(mul(g, a), sb) if needs[1] else None)

    return _node(a.data * b.data, (a, b), vjp, "mul")


def div(a, b) -> Tensor:
    a, b = as_tensor(a), as_tensor(b)
    _check_broadcast(a, b, "div")
    if np.any(b.data == 0):
        raise DomainError("division by zero")
    sa, sb = a.shape, b.shape

    def vjp(g, needs):
        return (sum_to(div(g, b), sa) if needs[0] else None,
                sum_to(neg(div(mul(g, a), mul(b, b))), sb) if needs[1] else None)

    return _node(a.data / b.data, (a, b), vjp, "div")


def square(a) -> Tensor:
    a = as_tensor(a)
    return _node(a.data * a.data, (a,), lambda g, needs: (mul(g, mul(a, 2.0)),), "square")


def power(a, exponent: float) -> Tensor:
    a = as_tensor(a)
    p = float(exponent)
    if p == 2.0:
        return square(a)
    if p != int(p) and np.any(a.data < 0):
        raise DomainError("fractional power of a negative value")
    if p < 0 and np.any(a.data == 0):
        raise DomainError("negative power of zero")

    def vjp(g, needs):
        return (mul(g, mul(power(a, p - 1.0), p)),)

    return _node(np.power(a.data, p), (a,), vjp, f"pow{p:g}")


def matmul(a, b, trans_a: bool = False, trans_b: bool = False) -> Tensor:
    """``op(a) @ op(b)`` where ``op`` optionally transposes (no copy is made)."""
    a, b = as_tensor(a), as_tensor(b)
    if a.ndim != 2 or b.ndim != 2:
        raise ShapeError(f"matmul needs 2-D operands, got {a.shape} and {b.shape}")
    A = a.data.T if trans_a else a.data
    B = b.data.T if trans_b else b.data
    if A.shape[1] != B.shape[0]:
        raise ShapeError(f"matmul: cannot multiply {A.shape} by {B.shape}")

    def vjp(g, needs):
        ga = gb = None
        if not trans_a and not trans_b:
            if needs[0]:
                ga = matmul(g, b, False, True)
            if needs[1]:
                gb = matmul(a, g, True, False)
        elif not trans_a and trans_b:
            if needs[0]:
                ga = matmul(g, b)
            if needs[1]:
                gb = matmul(g, a, True, False)
        elif trans_a and not trans_b:
            if needs[0]:
                ga = matmul(b, g, False, True)
            if needs[1]:
                gb = matmul(a, g)
        else:
            if needs[0]:
                ga = matmul(b, g, True, True)
            if needs[1]:
                gb = matmul(g, a, True, True)
        return ga, gb

    return _node(A @ B, (a, b), vjp, "matmul")


def affine(x, w, b) -> Tensor:
    """``x @ w + b`` with ``b`` broadcast over rows, as a single tape node."""
    x, w, b = as_tensor(x), as_tensor(w), as_tensor(b)
    if x.ndim != 2 or w.ndim != 2 or x.shape[1] != w.shape[0] or b.shape != (w.shape[1],):
        raise ShapeError(f"affine: incompatible shapes {x.shape}, {w.shape}, {b.shape}")

    def vjp(g, needs):
        return (matmul(g, w, False, True) if needs[0] else None,
                matmul(x, g, True, False) if needs[1] else None,
                tsum(g, axis=0) if needs[2] else None)

    return _node(x.data @ w.data + b.data, (x, w, b), vjp, "affine")


def transpose(a) -> Tensor:
    a = as_tensor(a)
    return _node(a.data.T.copy(), (a,), lambda g, needs: (transpose(g),), "transpose")


def reshape(a, shape) -> Tensor:
    a = as_tensor(a)
    src = a.shape
    return _node(a.data.reshape(shape), (a,), lambda g, needs: (reshape(g, src),), "reshape")


# -- elementwise nonlinearities --------------------------------------------

def relu(a) -> Tensor:
    a = as_tensor(a)
    mask = a.data > 0
    fmask = _const(mask.astype(np.float64))
    return _node(np.where(mask, a.data, 0.0), (a,), lambda g, needs: (mul(g, fmask),), "relu")


def sigmoid(a) -> Tensor:
    a = as_tensor(a)
    x = a.data
    # exp of a nonpositive argument on both branches
    e = np.exp(-np.abs(x))
    out_data = np.where(x >= 0, 1.0 / (1.0 + e), e / (1.0 + e))

    def vjp(g, needs):
        return (mul(g, mul(out, sub(1.0, out))),)

    out = _node(out_data, (a,), vjp, "sigmoid")
    return out


def log(a) -> Tensor:
    a = as_tensor(a)
    if np.any(a.data <= 0):
        raise DomainError("log of a non-positive value; clamp probabilities first")
    return _node(np.log(a.data), (a,), lambda g, needs: (div(g, a),), "log")


def exp(a) -> Tensor:
    a = as_tensor(a)

    def vjp(g, needs):
        return (mul(g, out),)

    out = _node(np.exp(a.data), (a,), vjp, "exp")
    return out


def sqrt(a) -> Tensor:
    a = as_tensor(a)
    if np.any(a.data <= 0):
        raise DomainError("sqrt is only differentiable on positive values")

    def vjp(g, needs):
        return (div(g, mul(out, 2.0)),)

    out = _node(np.sqrt(a.data), (a,), vjp, "sqrt")
    return out


def clamp(a, lo: float, hi: float) -> Tensor:
    """Clip into [lo, hi]; gradient passes only where the input was inside."""
    a = as_tensor(a)
    mask = _const(((a.data >= lo) & (a.data <= hi)).astype(np.float64))
    return _node(np.clip(a.data, lo, hi), (a,), lambda g, needs: (mul(g, mask),), "clamp")


def maximum(a, floor: float) -> Tensor:
    """Elementwise max with a constant floor."""
    a = as_tensor(a)
    mask = _const((a.data > floor).astype(np.float64))
    return _node(np.maximum(a.data, floor), (a,), lambda g, needs: (mul(g, mask),), "maximum")


def elementwise(op_kind: str, *args) -> Tensor:
    """Dispatch by name: relu, sigmoid, log, exp, add, sub, mul, div, square."""
    table = {
        "relu": relu, "sigmoid": sigmoid, "log": log, "exp": exp,
        "add": add, "sub": sub, "mul": mul, "div": div, "square": square,
    }
    try:
        fn = table[op_kind]
    except KeyError:
        raise ContractError(f"unknown elementwise op {op_kind!r}") from None
    return fn(*args)


# -- reductions --------------------------------------------------------------

def tsum(a, axis=None, keepdims=False) -> Tensor:
    a = as_tensor(a)
    src = a.shape
    data = a.data.sum(axis=axis, keepdims=keepdims)
    if axis is None:
        kept = (1,) * len(src)
    else:
        axes = (axis,) if np.isscalar(axis) else tuple(axis)
        axes = tuple(ax % len(src) for ax in axes)
        kept = tuple(1 if i in axes else d for i, d in enumerate(src))

    def vjp(g, needs):
        return (broadcast_to(reshape(g, kept), src),)

    return _node(np.asarray(data, dtype=np.float64), (a,), vjp, "sum")


def mean(a, axis=None, keepdims=False) -> Tensor:
    a = as_tensor(a)
    if axis is None:
        n = a.size
    else:
        axes = (axis,) if np.isscalar(axis) else tuple(axis)
        n = int(np.prod([a.shape[ax] for ax in axes]))
    return mul(tsum(a, axis=axis, keepdims=keepdims), 1.0 / n)


def row_norm(a) -> Tensor:
    """Euclidean norm of each row of a 2-D tensor.

    The subgradient at a zero row is taken to be zero, so ``||x - x||``
    stays differentiable and evaluates to exactly 0.
    """
    a = as_tensor(a)
    if a.ndim != 2:
        raise ShapeError("row_norm expects a 2-D tensor")
    norms = np.sqrt((a.data * a.data).sum(axis=1))
    safe = _const((norms == 0).astype(np.float64))

    def vjp(g, needs):
        return (mul(reshape(div(g, add(out, safe)), (-1, 1)), a),)

    out = _node(norms, (a,), vjp, "row_norm")
    return out


def batchnorm_train(x, gamma, beta, eps: float):
    """Training-mode batch normalisation as one tape node.

    Returns ``(out, batch_mean, batch_var)`` with the (biased) batch
    statistics as arrays. Without graph recording the VJP is plain numpy;
    when a graph is being recorded (double backprop) the normalisation is
    rebuilt from primitives so the VJP stays differentiable in ``x`` and
    ``gamma``.
    """
    x, gamma, beta = as_tensor(x), as_tensor(gamma), as_tensor(beta)
    mu = x.data.mean(axis=0)
    xc = x.data - mu
    var = (xc * xc).mean(axis=0)
    live = var > eps
    istd = 1.0 / np.sqrt(np.maximum(var, eps))
    xhat = xc * istd
    live_c = _const(live.astype(np.float64))

    def vjp(g, needs):
        if is_grad_enabled():
            mu_t = mean(x, axis=0, keepdims=True)
            xc_t = sub(x, mu_t)
            var_t = mean(mul(xc_t, xc_t), axis=0, keepdims=True)
            istd_t = power(maximum(var_t, eps), -0.5)
            xhat_t = mul(xc_t, istd_t)
            gx = ggamma = gbeta = None
            if needs[0]:
                gm = mean(g, axis=0, keepdims=True)
                gxm = mul(mean(mul(g, xhat_t), axis=0, keepdims=True), live_c)
                gx = mul(mul(gamma, istd_t), sub(sub(g, gm), mul(xhat_t, gxm)))
            if needs[1]:
                ggamma = tsum(mul(g, xhat_t), axis=0)
            if needs[2]:
                gbeta = tsum(g, axis=0)
            return gx, ggamma, gbeta
        gd = g.data
        gx = ggamma = gbeta = None
        if needs[0]:
            proj = (gd * xhat).mean(axis=0) * live
            gx = _const(gamma.data * istd * (gd - gd.mean(axis=0) - xhat * proj))
        if needs[1]:
            ggamma = _const((gd * xhat).sum(axis=0))
        if needs[2]:
            gbeta = _const(gd.sum(axis=0))
        return gx, ggamma, gbeta

    out = _node(xhat * gamma.data + beta.data, (x, gamma, beta), vjp, "batchnorm")
    return out, mu, var


# -- backward pass -----------------------------------------------------------

def _topo_order(root: Tensor):
    order, seen = [], set()
    stack = [(root, False)]
    while stack:
        node, expanded = stack.pop()
        if expanded:
            order.append(node)
            continue
        if id(node) in seen:
            continue
        seen.add(id(node))
        stack.append((node, True))
        for p in node._parents:
            if p.requires_grad and id(p) not in seen:
                stack.append((p, False))
    return order


def grad(output: Tensor, inputs, grad_output=None, create_graph: bool = False):
    """Gradients of ``output`` with respect to each tensor in ``inputs``.

    ``output`` must be a scalar unless ``grad_output`` is given. Inputs the
    output does not depend on get a zero gradient. Only paths that reach an
    input are traversed. With ``create_graph`` the returned gradients are
    themselves on the tape.
    """
    if grad_output is None:
        if output.size != 1:
            raise ContractError(f"backward needs a scalar loss, got shape {output.shape}")
        grad_output = _const(np.ones_like(output.data))
    else:
        grad_output = as_tensor(grad_output)
    single = isinstance(inputs, Tensor)
    if single:
        inputs = [inputs]
    grads = {id(output): grad_output}
    if output.requires_grad:
        order = _topo_order(output)
        needed = {id(x) for x in inputs}
        for node in order:
            if id(node) not in needed and any(id(p) in needed for p in node._parents):
                needed.add(id(node))
        with set_grad_enabled(create_graph):
            for node in reversed(order):
                if node._vjp is None or id(node) not in needed:
                    continue
                g = grads.get(id(node))
                if g is None:
                    continue
                needs = tuple(id(p) in needed for p in node._parents)
                for parent, pg, want in zip(node._parents, node._vjp(g, needs), needs):
                    if not want or pg is None:
                        continue
                    prev = grads.get(id(parent))
                    grads[id(parent)] = pg if prev is None else add(prev, pg)
    out = []
    for x in inputs:
        g = grads.get(id(x))
        if g is None:
            g = _const(np.zeros_like(x.data))
        elif not np.isfinite(g.data).all():
            raise NonFiniteError("non-finite gradient")
        out.append(g)
    return out[0] if single else out
