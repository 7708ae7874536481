"""Reverse-mode automatic differentiation over a flat operation tape.

The tape is a Wengert list: each node stores an opcode, the indices of
its parent nodes, the forward value, and any auxiliary data the reverse
pass needs (argmax indices, constant factors).  Node indices are already
a topological order, so the backward pass is a single reversed sweep.

The op set is deliberately small: it is exactly what the embedding model
needs (dense mat-vec products, vector arithmetic, concatenation, tanh,
plain and time-scaled softplus, softmax, an elementwise max pool with
argmax routing, and a guarded log).  Values are float64 scalars (python
floats) or 1-D/2-D float64 arrays.
"""
from __future__ import annotations

import math

import numpy as np

from .numerics import scaled_softplus, scaled_softplus_grads, sigmoid, softmax

_CONST = 0
_LEAF = 1
_ROW = 2
_ADD = 3
_NEG = 4
_SCALE = 5
_SMUL = 6
_MATVEC = 7
_DOT = 8
_CONCAT = 9
_TANH = 10
_SOFTPLUS = 11
_SOFTPLUS_PSI = 12
_LOG_GUARDED = 13
_SOFTMAX = 14
_MAXPOOL = 15

_OP_NAMES = {
    _CONST: "const",
    _LEAF: "leaf",
    _ROW: "row",
    _ADD: "add",
    _NEG: "neg",
    _SCALE: "scale",
    _SMUL: "smul",
    _MATVEC: "matvec",
    _DOT: "dot",
    _CONCAT: "concat",
    _TANH: "tanh",
    _SOFTPLUS: "softplus",
    _SOFTPLUS_PSI: "softplus_psi",
    _LOG_GUARDED: "log_guarded",
    _SOFTMAX: "softmax",
    _MAXPOOL: "maxpool",
}


class AutodiffError(RuntimeError):
    """Raised for structural problems (non-scalar loss, NaN adjoints)."""


class Tape:
    """Append-only record of a forward computation.

    Methods build one node each, evaluate it eagerly, and return the new
    node's integer id.  ``value(i)`` reads a forward result back.
    """

    __slots__ = ("_ops", "_args", "_vals", "_aux")

    def __init__(self):
        self._ops: list[int] = []
        self._args: list[tuple] = []
        self._vals: list = []
        self._aux: list = []

    def __len__(self) -> int:
        return len(self._ops)

    def value(self, node: int):
        return self._vals[node]

    def op_name(self, node: int) -> str:
        return _OP_NAMES[self._ops[node]]

    def _push(self, op: int, args: tuple, val, aux=None) -> int:
        self._ops.append(op)
        self._args.append(args)
        self._vals.append(val)
        self._aux.append(aux)
        return len(self._ops) - 1

    # ---- inputs ----------------------------------------------------

    def const(self, value) -> int:
        """A value gradients do not flow into."""
        return self._push(_CONST, (), value)

    def leaf(self, value) -> int:
        """A differentiation target; read its gradient after backward()."""
        return self._push(_LEAF, (), value)

    def row(self, mat: int, i: int) -> int:
        """Row i of a 2-D node; the gradient scatters back to that row."""
        return self._push(_ROW, (mat,), self._vals[mat][i], i)

    # ---- arithmetic ------------------------------------------------

    def add(self, *nodes: int) -> int:
        """n-ary elementwise sum; left-associated accumulation."""
        acc = self._vals[nodes[0]]
        for n in nodes[1:]:
            acc = acc + self._vals[n]
        return self._push(_ADD, nodes, acc)

    def neg(self, node: int) -> int:
        return self._push(_NEG, (node,), -self._vals[node])

    def scale(self, node: int, c: float) -> int:
        """Multiply by a plain (non-differentiated) scalar constant."""
        return self._push(_SCALE, (node,), c * self._vals[node], c)

    def smul(self, scalar: int, vec: int) -> int:
        """Tape-scalar times tape-vector."""
        return self._push(_SMUL, (scalar, vec), self._vals[scalar] * self._vals[vec])

    def matvec(self, w: int, x: int) -> int:
        return self._push(_MATVEC, (w, x), self._vals[w] @ self._vals[x])

    def dot(self, a: int, b: int) -> int:
        return self._push(_DOT, (a, b), float(np.dot(self._vals[a], self._vals[b])))

    def concat(self, a: int, b: int) -> int:
        val = np.concatenate((self._vals[a], self._vals[b]))
        return self._push(_CONCAT, (a, b), val, len(self._vals[a]))

    # ---- nonlinearities --------------------------------------------

    def tanh(self, node: int) -> int:
        return self._push(_TANH, (node,), np.tanh(self._vals[node]))

    def softplus(self, node: int) -> int:
        """Scalar log(1 + exp(x)); used for positivity reparameterizations."""
        return self._push(_SOFTPLUS, (node,), float(np.logaddexp(0.0, self._vals[node])))

    def softplus_psi(self, x: int, psi: int) -> int:
        """Time-scaled softplus psi*log(1+exp(x/psi)); both inputs scalar."""
        val = float(scaled_softplus(self._vals[x], self._vals[psi]))
        return self._push(_SOFTPLUS_PSI, (x, psi), val)

    def log_guarded(self, node: int, eps: float = 1e-30) -> int:
        """log(x + eps); the guard keeps underflowed rates finite."""
        return self._push(_LOG_GUARDED, (node,), math.log(self._vals[node] + eps), eps)

    def softmax(self, node: int) -> int:
        return self._push(_SOFTMAX, (node,), softmax(self._vals[node]))

    def maxpool(self, nodes: list[int]) -> int:
        """Elementwise max over same-length vectors.

        The argmax per coordinate is recorded so the reverse pass routes
        the gradient to exactly one contributor; ties go to the earliest
        node in ``nodes`` (callers pass neighbors in ascending id order).
        """
        stacked = np.stack([self._vals[n] for n in nodes])
        am = np.argmax(stacked, axis=0)
        val = stacked[am, np.arange(stacked.shape[1])]
        return self._push(_MAXPOOL, tuple(nodes), val, am)


def _is_nan(g) -> bool:
    if isinstance(g, float):
        return g != g
    return bool(np.isnan(g).any())


def backward(tape: Tape, loss: int, nan_check: bool = False) -> list:
    """Reverse sweep from a scalar loss node.

    Returns a list of adjoints aligned with tape nodes (None where no
    gradient reached).  With ``nan_check`` every propagated adjoint is
    inspected and the first NaN is reported with its originating node.
    """
    lval = tape._vals[loss]
    if not isinstance(lval, float) and np.ndim(lval) != 0:
        raise AutodiffError("loss must be a scalar node")
    ops, args, vals, aux = tape._ops, tape._args, tape._vals, tape._aux
    grads: list = [None] * len(ops)
    grads[loss] = 1.0

    def acc(j, val):
        if grads[j] is None:
            grads[j] = val
        else:
            grads[j] = grads[j] + val

    for i in range(loss, -1, -1):
        g = grads[i]
        if g is None:
            continue
        op = ops[i]
        if nan_check and _is_nan(g):
            raise AutodiffError(f"NaN adjoint at node {i} ({_OP_NAMES[op]})")
        if op in (_CONST, _LEAF):
            continue
        a = args[i]
        if op == _ADD:
            for j in a:
                acc(j, g)
        elif op == _ROW:
            mat = a[0]
            if grads[mat] is None:
                grads[mat] = np.zeros_like(vals[mat])
            grads[mat][aux[i]] += g
        elif op == _NEG:
            acc(a[0], -g)
        elif op == _SCALE:
            acc(a[0], aux[i] * g)
        elif op == _SMUL:
            s, v = a
            acc(s, float(np.dot(g, vals[v])))
            acc(v, vals[s] * g)
        elif op == _MATVEC:
            w, x = a
            acc(w, np.outer(g, vals[x]))
            acc(x, g @ vals[w])
        elif op == _DOT:
            x, y = a
            acc(x, g * vals[y])
            acc(y, g * vals[x])
        elif op == _CONCAT:
            x, y = a
            split = aux[i]
            acc(x, g[:split])
            acc(y, g[split:])
        elif op == _TANH:
            y = vals[i]
            acc(a[0], g * (1.0 - y * y))
        elif op == _SOFTPLUS:
            acc(a[0], g * sigmoid(vals[a[0]]))
        elif op == _SOFTPLUS_PSI:
            x, psi = a
            dx, dpsi = scaled_softplus_grads(vals[x], vals[psi])
            acc(x, g * dx)
            acc(psi, g * dpsi)
        elif op == _LOG_GUARDED:
            acc(a[0], g / (vals[a[0]] + aux[i]))
        elif op == _SOFTMAX:
            y = vals[i]
            acc(a[0], y * (g - float(np.dot(g, y))))
        elif op == _MAXPOOL:
            am = aux[i]
            for j, node in enumerate(a):
                acc(node, g * (am == j))
        else:  # pragma: no cover
            raise AutodiffError(f"unknown op {op}")
    return grads


def gradients(tape: Tape, loss: int, leaves: dict[str, int]) -> dict[str, np.ndarray | float]:
    """Backward pass returning gradients for named leaves.

    Leaves that the loss never touched get zero gradients of the right
    shape.  If any gradient comes back non-finite the pass is re-run
    with per-node NaN checking so the failure names the culprit node.
    """
    grads = backward(tape, loss)
    out = {}
    bad = False
    for name, node in leaves.items():
        g = grads[node]
        if g is None:
            v = tape.value(node)
            g = 0.0 if isinstance(v, float) else np.zeros_like(v)
        out[name] = g
        if isinstance(g, float):
            bad = bad or not math.isfinite(g)
        else:
            bad = bad or not np.isfinite(g).all()
    if bad:
        backward(tape, loss, nan_check=True)
        raise AutodiffError("non-finite gradient (no NaN adjoint located; overflow?)")
    return out
