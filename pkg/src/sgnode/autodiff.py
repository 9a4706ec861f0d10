"""Tape-based reverse-mode differentiation over a small set of numpy primitives.

A loss is built by composing ``Var`` handles that live on a ``Tape``.  The op
set is intentionally closed: exactly what MLP evaluation, the model
right-hand sides, and mean-squared losses unrolled through explicit
Runge-Kutta steps need (matmul, broadcast add/mul, relu, abs, max, square,
roll, slice/concat, repeat, reshape, full sum).  ``backward`` walks the tape
once in reverse and returns the gradient of the recorded scalar with respect
to every registered parameter array.

The same model code runs untaped: every dispatch helper below falls through
to plain numpy when its arguments are ndarrays, so prediction and training
share one implementation of each right-hand side.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

__all__ = [
    "Tape",
    "Var",
    "Gradient",
    "TapeError",
    "record",
    "backward",
    "grad_check",
    "relu",
    "absolute",
    "maximum",
    "square",
    "sum_all",
    "roll",
    "reshape",
    "transpose",
    "concatenate",
    "narrow",
    "repeat_elems",
]


class TapeError(TypeError):
    """A loss builder used an operation the tape cannot record."""


def _unbroadcast(g, shape):
    """Sum gradient g down to `shape`, undoing numpy broadcasting."""
    if g.shape == shape:
        return g
    while g.ndim > len(shape):
        g = g.sum(axis=0)
    for ax, s in enumerate(shape):
        if s == 1 and g.shape[ax] != 1:
            g = g.sum(axis=ax, keepdims=True)
    return g


# Forward rules: fn(aux, *input_values) -> value.
_FWD = {
    "add": lambda aux, a, b: a + b,
    "sub": lambda aux, a, b: a - b,
    "mul": lambda aux, a, b: a * b,
    "neg": lambda aux, a: -a,
    "smul": lambda aux, a: a * aux,
    "sadd": lambda aux, a: a + aux,
    "matmul": lambda aux, a, b: a @ b,
    "relu": lambda aux, a: np.maximum(a, 0.0),
    "abs": lambda aux, a: np.abs(a),
    "max2": lambda aux, a, b: np.maximum(a, b),
    "square": lambda aux, a: a * a,
    "sumall": lambda aux, a: np.sum(a),
    "reshape": lambda aux, a: np.reshape(a, aux),
    "transpose": lambda aux, a: a.T,
    "roll": lambda aux, a: np.roll(a, aux[0], axis=aux[1]),
    "narrow": lambda aux, a: _narrow_fwd(aux, a),
    "concat": lambda aux, *xs: np.concatenate(xs, axis=aux),
    "repeat": lambda aux, a: np.repeat(a, aux[0], axis=aux[1]),
}


def _narrow_fwd(aux, a):
    axis, start, length = aux
    idx = [slice(None)] * a.ndim
    idx[axis] = slice(start, start + length)
    return a[tuple(idx)]


def _vjp_add(aux, g, out, a, b):
    return _unbroadcast(g, a.shape), _unbroadcast(g, b.shape)


def _vjp_sub(aux, g, out, a, b):
    return _unbroadcast(g, a.shape), _unbroadcast(-g, b.shape)


def _vjp_mul(aux, g, out, a, b):
    return _unbroadcast(g * b, a.shape), _unbroadcast(g * a, b.shape)


def _vjp_matmul(aux, g, out, a, b):
    ga = g @ np.swapaxes(b, -1, -2)
    gb = np.swapaxes(a, -1, -2) @ g
    return _unbroadcast(ga, a.shape), _unbroadcast(gb, b.shape)


def _vjp_max2(aux, g, out, a, b):
    mask = a >= b  # ties send the gradient to the first argument
    return _unbroadcast(g * mask, a.shape), _unbroadcast(g * ~mask, b.shape)


def _vjp_narrow(aux, g, out, a):
    axis, start, length = aux
    ga = np.zeros_like(a)
    idx = [slice(None)] * a.ndim
    idx[axis] = slice(start, start + length)
    ga[tuple(idx)] = g
    return (ga,)


def _vjp_concat(aux, g, out, *xs):
    sizes = [x.shape[aux] for x in xs]
    return tuple(np.split(g, np.cumsum(sizes)[:-1], axis=aux))


def _vjp_repeat(aux, g, out, a):
    reps, axis = aux
    shape = a.shape[:axis] + (a.shape[axis], reps) + a.shape[axis + 1:]
    return (g.reshape(shape).sum(axis=axis + 1),)


# VJP rules: fn(aux, g, out_value, *input_values) -> per-input gradients.
_VJP = {
    "add": _vjp_add,
    "sub": _vjp_sub,
    "mul": _vjp_mul,
    "neg": lambda aux, g, out, a: (-g,),
    "smul": lambda aux, g, out, a: (g * aux,),
    "sadd": lambda aux, g, out, a: (g,),
    "matmul": _vjp_matmul,
    "relu": lambda aux, g, out, a: (g * (a > 0),),
    "abs": lambda aux, g, out, a: (g * np.sign(a),),
    "max2": _vjp_max2,
    "square": lambda aux, g, out, a: (2.0 * a * g,),
    "sumall": lambda aux, g, out, a: (g * np.ones_like(a),),
    "reshape": lambda aux, g, out, a: (np.reshape(g, a.shape),),
    "transpose": lambda aux, g, out, a: (g.T,),
    "roll": lambda aux, g, out, a: (np.roll(g, -aux[0], axis=aux[1]),),
    "narrow": _vjp_narrow,
    "concat": _vjp_concat,
    "repeat": _vjp_repeat,
}


class Tape:
    """Append-only record of a forward computation.

    Nodes are stored in topological order by construction; leaves hold
    parameter or constant arrays, interior nodes hold (op, input ids, aux).
    """

    def __init__(self):
        self.ops = []        # (name, arg ids, aux); leaves use name "leaf"
        self.vals = []       # forward values, index-aligned with ops
        self.param_ids = []  # leaf ids registered as trainable parameters
        self.out = None      # id of the recorded scalar loss

    def __len__(self):
        return len(self.ops)

    def _leaf(self, x):
        x = np.asarray(x, dtype=np.float64)
        self.ops.append(("leaf", (), None))
        self.vals.append(x)
        return Var(self, len(self.vals) - 1)

    def const(self, x):
        """Register a non-trainable input array."""
        return self._leaf(x)

    def param(self, x):
        """Register a trainable parameter array; gradients flow to it."""
        v = self._leaf(x)
        self.param_ids.append(v.i)
        return v

    def _push(self, name, args, aux):
        if name not in _FWD:
            raise TapeError(f"unsupported primitive: {name}")
        val = _FWD[name](aux, *(self.vals[i] for i in args))
        self.ops.append((name, args, aux))
        self.vals.append(val)
        return Var(self, len(self.vals) - 1)

    def replay(self, overrides=None):
        """Recompute the recorded scalar from (optionally perturbed) leaves.

        `overrides` maps leaf id -> replacement array.  Data-dependent ops
        (relu, max) are re-evaluated, so this is a true re-execution of the
        recorded function.
        """
        overrides = overrides or {}
        vals = [None] * len(self.vals)
        for i, (name, args, aux) in enumerate(self.ops):
            if name == "leaf":
                vals[i] = overrides.get(i, self.vals[i])
            else:
                vals[i] = _FWD[name](aux, *(vals[j] for j in args))
        return float(vals[self.out])


class Var:
    """Handle to one tape node; supports the arithmetic the models need."""

    __slots__ = ("tape", "i")
    __array_ufunc__ = None  # make ndarray <op> Var defer to our reflected ops

    def __init__(self, tape, i):
        self.tape = tape
        self.i = i

    @property
    def value(self):
        return self.tape.vals[self.i]

    @property
    def shape(self):
        return np.shape(self.value)

    @property
    def ndim(self):
        return np.ndim(self.value)

    def _lift(self, other):
        if isinstance(other, Var):
            if other.tape is not self.tape:
                raise TapeError("cannot mix Vars from different tapes")
            return other
        return self.tape.const(other)

    def __add__(self, other):
        if isinstance(other, (int, float)):
            return self.tape._push("sadd", (self.i,), float(other))
        return self.tape._push("add", (self.i, self._lift(other).i), None)

    __radd__ = __add__

    def __sub__(self, other):
        if isinstance(other, (int, float)):
            return self.tape._push("sadd", (self.i,), -float(other))
        return self.tape._push("sub", (self.i, self._lift(other).i), None)

    def __rsub__(self, other):
        return self.tape._push("sub", (self._lift(other).i, self.i), None)

    def __mul__(self, other):
        if isinstance(other, (int, float)):
            return self.tape._push("smul", (self.i,), float(other))
        return self.tape._push("mul", (self.i, self._lift(other).i), None)

    __rmul__ = __mul__

    def __truediv__(self, other):
        if not isinstance(other, (int, float)):
            raise TapeError("Var division is supported by scalars only")
        return self.tape._push("smul", (self.i,), 1.0 / float(other))

    def __neg__(self):
        return self.tape._push("neg", (self.i,), None)

    def __matmul__(self, other):
        return self.tape._push("matmul", (self.i, self._lift(other).i), None)

    def __rmatmul__(self, other):
        return self.tape._push("matmul", (self._lift(other).i, self.i), None)


@dataclass
class Gradient:
    """d(loss)/d(param) arrays, aligned with the tape's registration order."""

    grads: list
    loss: float


def record(build, params):
    """Run `build(tape, param_vars)` and capture it on a fresh tape.

    `params` is a sequence of numpy arrays; `build` must return a scalar Var.
    Returns (loss value, tape).
    """
    tape = Tape()
    pvars = [tape.param(p) for p in params]
    out = build(tape, pvars)
    if not isinstance(out, Var):
        raise TapeError("loss builder must return a tape Var")
    if np.size(out.value) != 1:
        raise TapeError(f"loss must be scalar, got shape {out.shape}")
    tape.out = out.i
    return float(out.value), tape


def backward(tape):
    """Reverse sweep: gradient of the recorded scalar w.r.t. every parameter."""
    if tape.out is None:
        raise TapeError("tape has no recorded output; use record()")
    adj = [None] * len(tape.vals)
    adj[tape.out] = np.ones_like(tape.vals[tape.out])
    for i in range(len(tape.ops) - 1, -1, -1):
        g = adj[i]
        if g is None:
            continue
        name, args, aux = tape.ops[i]
        if name == "leaf":
            continue
        invals = tuple(tape.vals[j] for j in args)
        for j, gj in zip(args, _VJP[name](aux, g, tape.vals[i], *invals)):
            if adj[j] is None:
                adj[j] = gj.copy() if isinstance(gj, np.ndarray) else np.asarray(gj)
            else:
                adj[j] = adj[j] + gj
        adj[i] = None  # free as we go
    grads = []
    for pid in tape.param_ids:
        g = adj[pid]
        grads.append(np.zeros_like(tape.vals[pid]) if g is None else g)
    return Gradient(grads=grads, loss=float(tape.vals[tape.out]))


def grad_check(build, params, h=1e-6, sample=None, seed=0, atol=0.0):
    """Max relative disagreement between tape gradients and central differences.

    The finite differences re-run the recorded computation via tape replay
    with one parameter entry perturbed by +/-h.  `sample` limits the check to
    that many entries per parameter tensor (always including the entry with
    the largest tape gradient); None checks every entry.  Returns
    max over checked entries of |g_ad - g_fd| / max(1e-12, atol, |g_ad| + |g_fd|).

    With atol=0 this is a pure relative comparison.  Central differences
    cannot resolve differences below ~ulp(loss)/h, so callers checking
    losses whose gradient entries span many orders of magnitude should pass
    atol at that resolution; discrepancies inside the floor are then ignored
    (|g_ad - g_fd| is reduced by atol before normalizing).
    """
    if h <= 0:
        raise ValueError("h must be positive")
    loss, tape = record(build, params)
    grads = backward(tape).grads
    rng = np.random.default_rng(seed)
    max_rel = 0.0
    for pid, g in zip(tape.param_ids, grads):
        base = tape.vals[pid]
        n = base.size
        if n == 0:
            continue
        if sample is None or sample >= n:
            idxs = np.arange(n)
        else:
            idxs = rng.choice(n, size=sample, replace=False)
            top = int(np.argmax(np.abs(g)))
            if top not in idxs:
                idxs = np.append(idxs, top)
        for flat in idxs:
            pert = base.copy()
            pert.flat[flat] += h
            fp = tape.replay({pid: pert})
            pert.flat[flat] -= 2 * h
            fm = tape.replay({pid: pert})
            fd = (fp - fm) / (2 * h)
            ad = g.flat[flat]
            rel = max(0.0, abs(ad - fd) - atol) / max(1e-12, abs(ad) + abs(fd))
            max_rel = max(max_rel, rel)
    return max_rel


def _dispatch(x):
    return isinstance(x, Var)


def relu(x):
    if _dispatch(x):
        return x.tape._push("relu", (x.i,), None)
    return np.maximum(x, 0.0)


def absolute(x):
    if _dispatch(x):
        return x.tape._push("abs", (x.i,), None)
    return np.abs(x)


def maximum(a, b):
    if _dispatch(a) or _dispatch(b):
        v = a if _dispatch(a) else b
        a = v._lift(a)
        b = v._lift(b)
        return v.tape._push("max2", (a.i, b.i), None)
    return np.maximum(a, b)


def square(x):
    if _dispatch(x):
        return x.tape._push("square", (x.i,), None)
    return x * x


def sum_all(x):
    """Sum every entry down to a scalar."""
    if _dispatch(x):
        return x.tape._push("sumall", (x.i,), None)
    return np.sum(x)


def roll(x, shift, axis=-1):
    if _dispatch(x):
        axis = axis % x.ndim
        return x.tape._push("roll", (x.i,), (int(shift), axis))
    return np.roll(x, shift, axis=axis)


def reshape(x, shape):
    if _dispatch(x):
        return x.tape._push("reshape", (x.i,), tuple(shape))
    return np.reshape(x, shape)


def transpose(x):
    """2-D transpose."""
    if _dispatch(x):
        if x.ndim != 2:
            raise TapeError("transpose is defined for 2-D values only")
        return x.tape._push("transpose", (x.i,), None)
    return x.T


def concatenate(xs, axis=-1):
    vs = [x for x in xs if _dispatch(x)]
    if vs:
        tape = vs[0].tape
        ids = tuple(vs[0]._lift(x).i for x in xs)
        axis = axis % tape.vals[ids[0]].ndim
        return tape._push("concat", ids, axis)
    return np.concatenate(xs, axis=axis)


def narrow(x, axis, start, length):
    """Contiguous slice of `length` entries starting at `start` along `axis`."""
    if _dispatch(x):
        axis = axis % x.ndim
        return x.tape._push("narrow", (x.i,), (axis, int(start), int(length)))
    idx = [slice(None)] * x.ndim
    idx[axis % x.ndim] = slice(start, start + length)
    return x[tuple(idx)]


def repeat_elems(x, reps, axis=-1):
    """Repeat each entry `reps` times consecutively along `axis`."""
    if _dispatch(x):
        axis = axis % x.ndim
        return x.tape._push("repeat", (x.i,), (int(reps), axis))
    return np.repeat(x, reps, axis=axis)
