"""Reverse-mode differentiation on numpy arrays and a dense tanh-headed MLP.

Values are float64 arrays. Every operation applied to a :class:`Var` while a
:class:`Tape` is active is appended to that tape together with the
vector-Jacobian products of its inputs; :meth:`Tape.backward` replays the
tape in reverse creation order, which is a valid reverse topological order.

The math helpers (:func:`sin`, :func:`tanh`, :func:`relu`, ...) accept plain
floats and arrays too, so model code written against them runs unchanged on
either path: fast numpy evaluation or recorded evaluation for gradients.
"""

from __future__ import annotations

import contextlib
import json
import math
import threading
from dataclasses import dataclass, field

import numpy as np

from .exceptions import InvalidArgument, NumericFailure

__all__ = [
    "Var",
    "Tape",
    "MLPParams",
    "GradCheckResult",
    "mlp_init",
    "mlp_param_count",
    "mlp_forward",
    "gradient",
    "value_and_gradient",
    "gradient_check",
    "check_gradients",
    "perturbed_derivative",
    "sin",
    "cos",
    "tanh",
    "relu",
    "square",
    "sign",
    "affine",
    "stack",
    "column",
    "total",
    "mean",
]

_local = threading.local()
# op name -> multiplier applied to its derivatives; used only to validate gradient checks
_corrupted: dict[str, float] = {}


def _tape_stack():
    stack = getattr(_local, "stack", None)
    if stack is None:
        stack = _local.stack = []
    return stack


class Tape:
    """Records operations on :class:`Var` objects for one backward pass.

    One tape belongs to one thread; tapes nest, and operations are recorded on
    the innermost active one.
    """

    def __init__(self):
        self.nodes: list[Var] = []

    def __enter__(self):
        _tape_stack().append(self)
        return self

    def __exit__(self, *exc):
        _tape_stack().pop()
        return False

    def backward(self, output: "Var"):
        """Accumulate d(output)/d(node) into ``.grad`` of every reachable node."""
        if not isinstance(output, Var):
            raise InvalidArgument("backward needs a Var output")
        if output.value.size != 1:
            raise InvalidArgument("backward needs a scalar output")
        output.grad = np.ones_like(output.value)
        for node in reversed(self.nodes):
            g = node.grad
            if g is None:
                continue
            for parent, vjp in node.parents:
                contrib = vjp(g)
                if parent.grad is None:
                    parent.grad = contrib
                else:
                    parent.grad = parent.grad + contrib


def _active_tape():
    stack = getattr(_local, "stack", None)
    return stack[-1] if stack else None


def _unbroadcast(g, shape):
    if g.shape == shape:
        return g
    while g.ndim > len(shape):
        g = g.sum(axis=0)
    for axis, n in enumerate(shape):
        if n == 1 and g.shape[axis] != 1:
            g = g.sum(axis=axis, keepdims=True)
    return g


def _make(value, op, parents):
    value = np.asarray(value, dtype=np.float64)
    if not np.all(np.isfinite(value)):
        raise NumericFailure(f"non-finite value produced by '{op}'", where=op)
    out = Var(value)
    out.op = op
    tape = _active_tape()
    if tape is not None:
        if _corrupted and op in _corrupted:
            k = _corrupted[op]
            parents = [(p, (lambda f: lambda g: k * f(g))(f)) for p, f in parents]
        out.parents = parents
        tape.nodes.append(out)
    return out


def _val(a):
    return a.value if isinstance(a, Var) else a


class Var:
    """A float64 array that participates in gradient recording."""

    __slots__ = ("value", "parents", "op", "grad")
    __array_priority__ = 100.0

    def __init__(self, value):
        self.value = np.asarray(value, dtype=np.float64)
        self.parents = ()
        self.op = "leaf"
        self.grad = None

    @property
    def shape(self):
        return self.value.shape

    def __repr__(self):
        return f"Var({self.value!r}, op={self.op!r})"

    def __float__(self):
        return float(self.value)

    def __add__(self, other):
        a, b = self.value, _val(other)
        parents = [(self, lambda g: _unbroadcast(g, a.shape))]
        if isinstance(other, Var):
            parents.append((other, lambda g: _unbroadcast(g, np.shape(b))))
        return _make(a + b, "add", parents)

    __radd__ = __add__

    def __sub__(self, other):
        a, b = self.value, _val(other)
        parents = [(self, lambda g: _unbroadcast(g, a.shape))]
        if isinstance(other, Var):
            parents.append((other, lambda g: _unbroadcast(-g, np.shape(b))))
        return _make(a - b, "sub", parents)

    def __rsub__(self, other):
        a = self.value
        return _make(other - a, "sub", [(self, lambda g: _unbroadcast(-g, a.shape))])

    def __neg__(self):
        return _make(-self.value, "neg", [(self, lambda g: -g)])

    def __mul__(self, other):
        a, b = self.value, _val(other)
        parents = [(self, lambda g: _unbroadcast(g * b, a.shape))]
        if isinstance(other, Var):
            parents.append((other, lambda g: _unbroadcast(g * a, np.shape(b))))
        return _make(a * b, "mul", parents)

    __rmul__ = __mul__

    def __truediv__(self, other):
        a, b = self.value, _val(other)
        with np.errstate(divide="ignore", invalid="ignore"):
            q = a / b
        parents = [(self, lambda g: _unbroadcast(g / b, a.shape))]
        if isinstance(other, Var):
            parents.append((other, lambda g: _unbroadcast(-g * q / b, np.shape(b))))
        return _make(q, "div", parents)

    def __rtruediv__(self, other):
        b = self.value
        with np.errstate(divide="ignore", invalid="ignore"):
            q = other / b
        return _make(q, "div", [(self, lambda g: _unbroadcast(-g * q / b, b.shape))])

    def __getitem__(self, idx):
        a = self.value

        def vjp(g):
            out = np.zeros_like(a)
            np.add.at(out, idx, g)
            return out

        return _make(a[idx], "index", [(self, vjp)])


def sin(x):
    if isinstance(x, float):
        return math.sin(x)
    if not isinstance(x, Var):
        return np.sin(x)
    return _make(np.sin(x.value), "sin", [(x, lambda g, c=np.cos(x.value): g * c)])


def cos(x):
    if isinstance(x, float):
        return math.cos(x)
    if not isinstance(x, Var):
        return np.cos(x)
    return _make(np.cos(x.value), "cos", [(x, lambda g, s=np.sin(x.value): -g * s)])


def tanh(x):
    if isinstance(x, float):
        return math.tanh(x)
    if not isinstance(x, Var):
        return np.tanh(x)
    y = np.tanh(x.value)
    return _make(y, "tanh", [(x, lambda g: g * (1.0 - y * y))])


def relu(x):
    """max(x, 0); the derivative at exactly zero is taken as zero."""
    if not isinstance(x, Var):
        return np.maximum(x, 0.0)
    mask = x.value > 0.0
    return _make(np.where(mask, x.value, 0.0), "relu", [(x, lambda g: g * mask)])


def square(x):
    if isinstance(x, float):
        return x * x
    if not isinstance(x, Var):
        return np.square(x)
    a = x.value
    return _make(a * a, "square", [(x, lambda g: 2.0 * a * g)])


def sign(x):
    """Sign with sign(0) = 0. Piecewise constant, so never recorded."""
    if isinstance(x, float):
        return float(x > 0.0) - float(x < 0.0)
    return np.sign(_val(x))


def affine(x, w, b):
    """``x @ w.T + b`` for a vector ``x`` of shape (n,) or a batch (B, n).

    Unrecorded weights may carry a leading axis of P parameter sets, giving a
    result of shape (P, B, m).
    """
    xv, wv, bv = _val(x), _val(w), _val(b)
    if wv.ndim == 3:
        if any(isinstance(a, Var) for a in (x, w, b)):
            raise InvalidArgument("stacked parameter sets cannot be recorded")
        y = np.matmul(xv, np.swapaxes(wv, -1, -2))
        return y + (bv[:, None, :] if y.ndim == 3 else bv)
    y = xv @ wv.T + bv
    if not any(isinstance(a, Var) for a in (x, w, b)):
        return y
    parents = []
    if isinstance(x, Var):
        parents.append((x, lambda g: g @ wv))
    if isinstance(w, Var):
        if xv.ndim == 1:
            parents.append((w, lambda g: np.outer(g, xv)))
        else:
            parents.append((w, lambda g: g.T @ xv))
    if isinstance(b, Var):
        parents.append((b, lambda g: _unbroadcast(g, bv.shape)))
    return _make(y, "affine", parents)


def stack(cols):
    """Stack equal-shape arrays along a new last axis."""
    shape = np.broadcast_shapes(*(np.shape(_val(c)) for c in cols))
    vals = [np.broadcast_to(_val(c), shape) for c in cols]
    y = np.stack(vals, axis=-1)
    if not any(isinstance(c, Var) for c in cols):
        return y
    parents = [
        (c, (lambda j, shape: lambda g: _unbroadcast(g[..., j], shape))(j, c.value.shape))
        for j, c in enumerate(cols)
        if isinstance(c, Var)
    ]
    return _make(y, "stack", parents)


def column(x, j):
    """Last-axis component ``j`` of ``x``."""
    if not isinstance(x, Var):
        return np.asarray(x)[..., j]
    a = x.value

    def vjp(g):
        out = np.zeros_like(a)
        out[..., j] = g
        return out

    return _make(a[..., j], "column", [(x, vjp)])


def total(x):
    if not isinstance(x, Var):
        return np.sum(x)
    a = x.value
    return _make(a.sum(), "sum", [(x, lambda g: np.broadcast_to(g, a.shape).copy())])


def mean(x):
    """Mean over the last axis (over everything for a vector)."""
    if not isinstance(x, Var):
        return np.mean(x, axis=-1) if np.ndim(x) else x
    a = x.value
    if a.ndim == 0:
        return x
    n = a.shape[-1]
    return _make(a.mean(axis=-1), "mean", [(x, lambda g: np.broadcast_to(np.expand_dims(g, -1) / n, a.shape).copy())])


@contextlib.contextmanager
def perturbed_derivative(op, factor=1.01):
    """Scale the recorded derivative of ``op`` by ``factor`` inside the block.

    Exists so gradient checks can be shown to fail on a wrong derivative.
    """
    _corrupted[op] = factor
    try:
        yield
    finally:
        _corrupted.pop(op, None)


# ---------------------------------------------------------------------------
# MLP


def _check_sizes(layer_sizes):
    sizes = list(layer_sizes)
    if len(sizes) < 2:
        raise InvalidArgument("layer_sizes needs at least an input and an output width")
    for n in sizes:
        if isinstance(n, bool) or int(n) != n or n < 1:
            raise InvalidArgument(f"layer widths must be positive integers, got {n!r}")
    return [int(n) for n in sizes]


def mlp_param_count(layer_sizes):
    sizes = _check_sizes(layer_sizes)
    return sum(n_out * (n_in + 1) for n_in, n_out in zip(sizes[:-1], sizes[1:]))


@dataclass(eq=False)
class MLPParams:
    """Weights and biases of a relu MLP with a scaled tanh output layer.

    ``weights[i]`` has shape (layer_sizes[i+1], layer_sizes[i]). Entries may be
    :class:`Var` objects while a gradient is being recorded.
    """

    layer_sizes: list
    weights: list
    biases: list
    output_scale: float = 10.0
    meta: dict = field(default_factory=dict, compare=False)

    def __post_init__(self):
        self.layer_sizes = _check_sizes(self.layer_sizes)
        if not self.output_scale > 0:
            raise InvalidArgument("output_scale must be positive")
        n = len(self.layer_sizes) - 1
        if len(self.weights) != n or len(self.biases) != n:
            raise InvalidArgument(f"expected {n} weight matrices and bias vectors")
        for i, (w, b) in enumerate(zip(self.weights, self.biases)):
            shape = (self.layer_sizes[i + 1], self.layer_sizes[i])
            lead = np.shape(_val(w))[:-2]  # parameter-set axis, if stacked
            if np.shape(_val(w)) != lead + shape or np.shape(_val(b)) != lead + shape[:1]:
                raise InvalidArgument(
                    f"layer {i}: expected weight {shape} and bias ({shape[0]},), "
                    f"got {np.shape(_val(w))} and {np.shape(_val(b))}"
                )

    def __eq__(self, other):
        if not isinstance(other, MLPParams):
            return NotImplemented
        return (
            self.layer_sizes == other.layer_sizes
            and self.output_scale == other.output_scale
            and all(np.array_equal(_val(a), _val(b)) for a, b in zip(self.arrays(), other.arrays()))
        )

    @property
    def n_params(self):
        return sum(np.size(_val(w)) + np.size(_val(b)) for w, b in zip(self.weights, self.biases))

    def arrays(self):
        """All parameter arrays in storage order: w0, b0, w1, b1, ..."""
        out = []
        for w, b in zip(self.weights, self.biases):
            out.extend((w, b))
        return out

    def with_arrays(self, arrays):
        arrays = list(arrays)
        return MLPParams(
            self.layer_sizes, arrays[0::2], arrays[1::2], self.output_scale, dict(self.meta)
        )

    def to_vector(self):
        return np.concatenate([np.ravel(_val(a)) for a in self.arrays()])

    def from_vector(self, vec):
        vec = np.asarray(vec, dtype=np.float64)
        if vec.shape != (self.n_params,):
            raise InvalidArgument(f"expected a vector of {self.n_params} values, got {vec.shape}")
        out, pos = [], 0
        for a in self.arrays():
            shape = np.shape(_val(a))
            size = int(np.prod(shape))
            out.append(vec[pos : pos + size].reshape(shape).copy())
            pos += size
        return self.with_arrays(out)

    def from_vectors(self, mat):
        """Stack of P parameter sets from a (P, n_params) matrix, for batched evaluation."""
        mat = np.asarray(mat, dtype=np.float64)
        if mat.ndim != 2 or mat.shape[1] != self.n_params:
            raise InvalidArgument(f"expected a (P, {self.n_params}) matrix, got {mat.shape}")
        out, pos = [], 0
        for a in self.arrays():
            shape = np.shape(_val(a))
            size = int(np.prod(shape))
            out.append(mat[:, pos : pos + size].reshape((mat.shape[0],) + shape))
            pos += size
        return self.with_arrays(out)

    def copy(self):
        return self.with_arrays([np.array(_val(a), dtype=np.float64) for a in self.arrays()])

    def to_dict(self):
        d = {
            "layer_sizes": list(self.layer_sizes),
            "output_scale": float(self.output_scale),
            "layers": [
                {"w": np.asarray(_val(w)).tolist(), "b": np.asarray(_val(b)).tolist()}
                for w, b in zip(self.weights, self.biases)
            ],
        }
        if self.meta:
            d["meta"] = self.meta
        return d

    @classmethod
    def from_dict(cls, d):
        try:
            sizes = d["layer_sizes"]
            layers = d["layers"]
            scale = float(d.get("output_scale", 10.0))
            weights = [np.asarray(layer["w"], dtype=np.float64) for layer in layers]
            biases = [np.asarray(layer["b"], dtype=np.float64) for layer in layers]
        except (KeyError, TypeError, ValueError) as e:
            raise InvalidArgument(f"malformed model document: {e}") from None
        return cls(sizes, weights, biases, scale, dict(d.get("meta", {})))

    def save(self, path):
        # repr-based float output is the shortest string that round-trips exactly
        with open(path, "w") as f:
            json.dump(self.to_dict(), f)

    @classmethod
    def load(cls, path):
        with open(path) as f:
            return cls.from_dict(json.load(f))


def mlp_init(layer_sizes, output_scale=10.0, seed=0):
    """Uniform(+-1/sqrt(fan_in)) weights, zero biases, reproducible per seed."""
    sizes = _check_sizes(layer_sizes)
    rng = np.random.default_rng(seed)
    weights, biases = [], []
    for n_in, n_out in zip(sizes[:-1], sizes[1:]):
        bound = 1.0 / np.sqrt(n_in)
        weights.append(rng.uniform(-bound, bound, size=(n_out, n_in)))
        biases.append(np.zeros(n_out))
    return MLPParams(sizes, weights, biases, output_scale)


def mlp_forward(params, x):
    """``output_scale * tanh(last(relu(...relu(first(x)))))``.

    ``x`` is one input vector or a batch with inputs along the last axis.
    """
    width = np.shape(_val(x))[-1] if np.ndim(_val(x)) else None
    max_ndim = 3 if np.ndim(_val(params.weights[0])) == 3 else 2
    if width != params.layer_sizes[0] or np.ndim(_val(x)) > max_ndim:
        raise InvalidArgument(
            f"input width {width} does not match network input {params.layer_sizes[0]}"
        )
    h = x
    last = len(params.weights) - 1
    for i, (w, b) in enumerate(zip(params.weights, params.biases)):
        h = affine(h, w, b)
        h = relu(h) if i < last else tanh(h)
    return h * params.output_scale


# ---------------------------------------------------------------------------
# gradients


def value_and_gradient(scalar_fn, params):
    """Evaluate ``scalar_fn(params)`` and its gradient w.r.t. every array in params."""
    with Tape() as tape:
        leaves = [Var(_val(a)) for a in params.arrays()]
        out = scalar_fn(params.with_arrays(leaves))
        if not isinstance(out, Var):
            # output does not depend on the parameters
            return float(out), params.with_arrays([np.zeros_like(_val(a)) for a in params.arrays()])
        tape.backward(out)
    grads = [np.zeros_like(v.value) if v.grad is None else np.asarray(v.grad) for v in leaves]
    return float(out.value), params.with_arrays(grads)


def gradient(scalar_fn, params):
    return value_and_gradient(scalar_fn, params)[1]


@dataclass
class GradCheckResult:
    max_relative_error: float
    worst_index: int
    analytic: float
    numeric: float
    n_params: int

    @property
    def passed(self):
        return self.max_relative_error < 1e-5


def _numeric_gradient_stacked(scalar_fn, params, base, epsilon, chunk):
    numeric = np.empty_like(base)
    for lo in range(0, base.size, chunk):
        idx = np.arange(lo, min(lo + chunk, base.size))
        probes = np.repeat(base[None, :], 2 * idx.size, axis=0)
        probes[np.arange(idx.size), idx] += epsilon
        probes[np.arange(idx.size, 2 * idx.size), idx] -= epsilon
        vals = np.asarray(_val(scalar_fn(params.from_vectors(probes))), dtype=np.float64)
        if vals.shape != (2 * idx.size,):
            raise InvalidArgument(
                f"vectorized check needs one value per parameter set, got shape {vals.shape}"
            )
        if not np.isfinite(vals).all():
            bad = int(idx[np.argmax(~np.isfinite(vals.reshape(2, -1)).any(axis=0))])
            raise NumericFailure(f"non-finite function value while probing parameter {bad}", where=bad)
        numeric[idx] = (vals[: idx.size] - vals[idx.size :]) / (2.0 * epsilon)
    return numeric


def check_gradients(scalar_fn, params, epsilon=1e-6, vectorized=False, chunk=128):
    """Compare reverse-mode derivatives with central differences for every scalar.

    With ``vectorized=True`` the probes are evaluated ``chunk`` parameters at
    a time on stacked parameter sets; ``scalar_fn`` must then return one
    value per set, which holds for functions built from this module's ops
    that reduce with :func:`mean` over the sample axis.
    """
    if not 0.0 < epsilon <= 1e-3:
        raise InvalidArgument(f"epsilon must lie in (0, 1e-3], got {epsilon}")
    params = params.copy()
    _, grads = value_and_gradient(scalar_fn, params)
    analytic = grads.to_vector()
    base = params.to_vector()
    if vectorized:
        numeric = _numeric_gradient_stacked(scalar_fn, params, base, epsilon, chunk)
    else:
        numeric = _numeric_gradient_loop(scalar_fn, params, base, epsilon)
    rel = np.abs(analytic - numeric) / np.maximum(1.0, np.maximum(np.abs(analytic), np.abs(numeric)))
    worst = int(np.argmax(rel))
    return GradCheckResult(float(rel[worst]), worst, float(analytic[worst]), float(numeric[worst]), base.size)


def _numeric_gradient_loop(scalar_fn, params, base, epsilon):
    numeric = np.empty_like(base)
    for i in range(base.size):
        vals = []
        for step in (epsilon, -epsilon):
            probe = base.copy()
            probe[i] += step
            v = float(_val(scalar_fn(params.from_vector(probe))))
            if not np.isfinite(v):
                raise NumericFailure(f"non-finite function value while probing parameter {i}", where=i)
            vals.append(v)
        numeric[i] = (vals[0] - vals[1]) / (2.0 * epsilon)
    return numeric


def gradient_check(scalar_fn, params, epsilon=1e-6, vectorized=False):
    return check_gradients(scalar_fn, params, epsilon, vectorized).max_relative_error
