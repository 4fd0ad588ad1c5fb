"""Reverse-mode differentiation on an explicit tape.

A ``Tape`` is a Wengert list: every primitive appends one ``Node`` in
execution order, so the list itself is a topological order and the
backward sweep is a single reversed pass that visits each node once.
Values are plain numpy float64 arrays; batched quantities are
(rows, features), losses are 0-d scalars.

Trainable leaves are registered with ``Tape.param(name, value)``.
Registering the same name twice on one tape returns the original node,
so a model used in several places of one graph (cycle compositions)
accumulates a single summed gradient per parameter.
"""

from dataclasses import dataclass

import numpy as np

from . import kernels as K

L2 = "l2"
L1 = "l1"
SMOOTH_L1 = "smooth_l1"
LOSS_KINDS = (L2, L1, SMOOTH_L1)
SMOOTH_L1_BETA = 1.0

_PENALTY_CODE = {L2: K.PENALTY_L2, L1: K.PENALTY_L1, SMOOTH_L1: K.PENALTY_SMOOTH_L1}

PRIMITIVES = (
    "matmul", "add", "subtract", "add_bias", "scale",
    "relu", "tanh", "dropout", "reduce_mean", "penalty", "batchnorm",
)


@dataclass
class BatchNormState:
    """Running statistics for one normalization layer."""

    mean: np.ndarray
    var: np.ndarray
    momentum: float = 0.1
    eps: float = 1e-5

    def copy(self):
        return BatchNormState(self.mean.copy(), self.var.copy(), self.momentum, self.eps)


class Node:
    __slots__ = ("op", "inputs", "value", "ctx", "param", "needs_grad")

    def __init__(self, op, inputs, value, ctx, param, needs_grad):
        self.op = op
        self.inputs = inputs
        self.value = value
        self.ctx = ctx
        self.param = param
        self.needs_grad = needs_grad


def _as_matrix(value, what):
    a = np.ascontiguousarray(value, dtype=np.float64)
    if a.ndim != 2:
        raise ValueError(f"{what} must be 2-d (rows, features), got shape {a.shape}")
    return a


class Tape:
    def __init__(self):
        self.nodes = []
        self._param_ids = {}

    def __len__(self):
        return len(self.nodes)

    def value(self, i):
        return self.nodes[i].value

    def _push(self, op, inputs, value, ctx=None, param=None, needs_grad=None):
        if needs_grad is None:
            needs_grad = any(self.nodes[i].needs_grad for i in inputs)
        self.nodes.append(Node(op, inputs, value, ctx, param, needs_grad))
        return len(self.nodes) - 1

    # -- leaves ---------------------------------------------------------

    def constant(self, value):
        return self._push("constant", (), np.asarray(value, dtype=np.float64),
                          needs_grad=False)

    def param(self, name, value):
        if name in self._param_ids:
            i = self._param_ids[name]
            if self.nodes[i].value is not value:
                raise ValueError(f"parameter {name!r} re-registered with a different array")
            return i
        i = self._push("param", (), np.asarray(value, dtype=np.float64),
                       param=name, needs_grad=True)
        self._param_ids[name] = i
        return i

    # -- primitives -----------------------------------------------------

    def matmul(self, a, b):
        va, vb = self.nodes[a].value, self.nodes[b].value
        if va.ndim != 2 or vb.ndim != 2 or va.shape[1] != vb.shape[0]:
            raise ValueError(f"matmul shapes do not chain: {va.shape} @ {vb.shape}")
        return self._push("matmul", (a, b), va @ vb)

    def add(self, a, b):
        va, vb = self.nodes[a].value, self.nodes[b].value
        if va.shape != vb.shape:
            raise ValueError(f"add shapes differ: {va.shape} vs {vb.shape}")
        return self._push("add", (a, b), va + vb)

    def subtract(self, a, b):
        va, vb = self.nodes[a].value, self.nodes[b].value
        if va.shape != vb.shape:
            raise ValueError(f"subtract shapes differ: {va.shape} vs {vb.shape}")
        return self._push("subtract", (a, b), va - vb)

    def add_bias(self, x, b):
        vx, vb = self.nodes[x].value, self.nodes[b].value
        if vb.ndim != 1 or vx.ndim != 2 or vx.shape[1] != vb.shape[0]:
            raise ValueError(f"add_bias shapes do not match: {vx.shape} + {vb.shape}")
        return self._push("add_bias", (x, b), vx + vb)

    def scale(self, x, c):
        c = float(c)
        return self._push("scale", (x,), c * self.nodes[x].value, ctx=c)

    def relu(self, x):
        return self._push("relu", (x,), K.relu_fwd(self.nodes[x].value))

    def tanh(self, x):
        return self._push("tanh", (x,), K.tanh_fwd(self.nodes[x].value))

    def dropout(self, x, mask):
        # mask is precomputed (already scaled by 1/keep) so the forward
        # stays a deterministic function of the tape inputs
        vx = self.nodes[x].value
        if mask.shape != vx.shape:
            raise ValueError(f"dropout mask shape {mask.shape} != input {vx.shape}")
        return self._push("dropout", (x,), vx * mask, ctx=mask)

    def reduce_mean(self, x):
        vx = self.nodes[x].value
        if vx.size == 0:
            raise ValueError("reduce_mean over an empty tensor")
        return self._push("reduce_mean", (x,), np.asarray(vx.mean()))

    def penalty(self, x, kind, beta=SMOOTH_L1_BETA):
        if kind not in LOSS_KINDS:
            raise ValueError(f"unknown penalty kind {kind!r}, expected one of {LOSS_KINDS}")
        vx = self.nodes[x].value
        code = _PENALTY_CODE[kind]
        return self._push("penalty", (x,), K.penalty_fwd(vx, code, beta),
                          ctx=(code, beta))

    def batchnorm(self, x, gamma, beta, state, training):
        vx = self.nodes[x].value
        vg, vb = self.nodes[gamma].value, self.nodes[beta].value
        if vx.ndim != 2 or vg.shape != (vx.shape[1],) or vb.shape != (vx.shape[1],):
            raise ValueError(
                f"batchnorm shapes do not match: x {vx.shape}, gamma {vg.shape}, beta {vb.shape}")
        if training:
            y, xhat, mean, var = K.bn_fwd_train(vx, vg, vb, state.eps)
            m = state.momentum
            state.mean = (1.0 - m) * state.mean + m * mean
            state.var = (1.0 - m) * state.var + m * var
            ctx = ("train", xhat, var, state.eps)
        else:
            y, xhat = K.bn_fwd_infer(vx, vg, vb, state.mean, state.var, state.eps)
            ctx = ("infer", xhat, state.var.copy(), state.eps)
        return self._push("batchnorm", (x, gamma, beta), y, ctx=ctx)


def forward_primitive(tape, kind, inputs, **attrs):
    """Generic dispatcher; `inputs` is a sequence of node ids."""
    if kind not in PRIMITIVES:
        raise ValueError(f"unknown primitive {kind!r}, expected one of {PRIMITIVES}")
    return getattr(tape, kind)(*inputs, **attrs)


def loss_eval(tape, kind, prediction, target):
    """Mean penalty of the residual (target - prediction). Scalar node."""
    if tape.nodes[prediction].value.size == 0 or tape.nodes[target].value.size == 0:
        raise ValueError("loss_eval on empty tensors")
    r = tape.subtract(target, prediction)
    return tape.reduce_mean(tape.penalty(r, kind))


def backward(tape, loss):
    """Gradients of a scalar node with respect to every registered
    parameter. Unreachable parameters get zero tensors."""
    root = tape.nodes[loss]
    if root.value.shape != ():
        raise ValueError(f"backward root must be scalar, got shape {root.value.shape}")

    adj = [None] * (loss + 1)
    adj[loss] = np.ones(())
    for i in range(loss, -1, -1):
        g = adj[i]
        if g is None:
            continue
        node = tape.nodes[i]
        op = node.op
        if op in ("constant", "param"):
            continue
        ia = node.inputs
        if op == "matmul":
            grads = (g @ tape.nodes[ia[1]].value.T, tape.nodes[ia[0]].value.T @ g)
        elif op == "add":
            grads = (g, g)
        elif op == "subtract":
            grads = (g, -g)
        elif op == "add_bias":
            grads = (g, g.sum(axis=0))
        elif op == "scale":
            grads = (node.ctx * g,)
        elif op == "relu":
            grads = (K.relu_bwd(g, tape.nodes[ia[0]].value),)
        elif op == "tanh":
            grads = (K.tanh_bwd(g, node.value),)
        elif op == "dropout":
            grads = (g * node.ctx,)
        elif op == "reduce_mean":
            src = tape.nodes[ia[0]].value
            grads = (np.full(src.shape, float(g) / src.size),)
        elif op == "penalty":
            code, beta = node.ctx
            grads = (K.penalty_bwd(tape.nodes[ia[0]].value, code, beta) * g,)
        elif op == "batchnorm":
            mode, xhat, var, eps = node.ctx
            gamma = tape.nodes[ia[1]].value
            if mode == "train":
                grads = K.bn_bwd(g, xhat, var, gamma, eps)
            else:
                inv = 1.0 / np.sqrt(var + eps)
                grads = (g * (gamma * inv), (g * xhat).sum(axis=0), g.sum(axis=0))
        else:
            raise AssertionError(f"no backward rule for {op!r}")
        for j, gj in zip(ia, grads):
            if not tape.nodes[j].needs_grad:
                continue
            adj[j] = gj if adj[j] is None else adj[j] + gj

    out = {}
    for name, i in tape._param_ids.items():
        g = adj[i] if i <= loss else None
        out[name] = np.zeros_like(tape.nodes[i].value) if g is None else g
    return out


def finite_diff_gradient(f, x, step=1e-5):
    """Central-difference gradient of a scalar function of one array."""
    x = np.asarray(x, dtype=np.float64)
    out = np.zeros_like(x)
    for idx in np.ndindex(*x.shape):
        xp = x.copy()
        xm = x.copy()
        xp[idx] += step
        xm[idx] -= step
        out[idx] = (f(xp) - f(xm)) / (2.0 * step)
    return out
