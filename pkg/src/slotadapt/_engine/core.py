# coding=utf-8
#
# SPDX-FileCopyrightText: 2023 His Majesty in Right of Canada
#
# SPDX-License-Identifier: LicenseRef-MIT-DND
#
# This file is part of the SLOTADAPT package.

"""SLOTADAPT: dense numerical substrate

All elements of this module are implementation details that may change in
non-backward-compatible ways between minor or micro version releases.

Values are numpy arrays of float64 wrapped in Tensor objects. While a GradGraph
is active (with statement), every operation whose inputs belong to the graph is
appended to its tape, in execution order. The backward function walks the tape
in reverse to accumulate gradients of a scalar output with respect to the
leaves of the graph. Outside of a graph, operations only compute values.

Classes:
    Tensor -- immutable array value, optionally recorded on a tape
    GradGraph -- tape of recorded operations and its leaves
    Rng -- counter-based seeded random generator

Named tuples:
    Assignment -- result of hungarian_assign

Functions (differentiable):
    add, sub, mul, div, neg, power, matmul, exp, log, tanh, sigmoid, sqrt,
    absolute, maximum, minimum, total, mean, reshape, swapaxes, concat,
    take, broadcast_to, softmax, log_softmax, cosine_similarity, gru_cell,
    detach

Functions (other):
    tensor -- wrap value as constant tensor
    hungarian_assign -- optimal one-to-one assignment
    backward -- gradients of scalar output with respect to graph leaves
    finite_diff_grad -- central finite-difference gradient
    sgd_update -- plain gradient-descent update of named parameters
"""

__all__ = ['Tensor', 'GradGraph', 'Rng', 'Assignment', 'tensor', 'add',
           'sub', 'mul', 'div', 'neg', 'power', 'matmul', 'exp', 'log',
           'tanh', 'sigmoid', 'sqrt', 'absolute', 'maximum', 'minimum',
           'total', 'mean', 'reshape', 'swapaxes', 'concat', 'take',
           'broadcast_to', 'softmax', 'log_softmax', 'cosine_similarity',
           'gru_cell', 'detach', 'hungarian_assign', 'backward',
           'finite_diff_grad', 'sgd_update']

import collections
import logging
import math

import numpy as np
import scipy.optimize
import scipy.special

from slotadapt._engine.base import (ShapeError, NonFiniteError,
                                    EmptyAxisError, ZeroNormError,
                                    NotScalarError, AssignmentError)

# Logging (internal)
_misc_logger = logging.getLogger('slotadapt.log')

Assignment = collections.namedtuple('Assignment', ['pairs', 'total'])
Assignment.__doc__ = """Result of hungarian_assign.

Fields:
    pairs -- tuple of (row, column) pairs sorted by row
    total -- sum of selected score entries
"""


class GradGraph:
    """Tape of recorded operations.

    Graphs are activated with a with statement. Nested graphs are allowed, in
    which case operations are recorded on the innermost one only.

    Class attribute:
        active -- stack of graphs currently recording

    Attributes:
        nodes -- recorded operations in execution order (topological order)
        leaves -- leaf tensors created with the leaf method

    Methods:
        __enter__ -- start recording
        __exit__ -- stop recording
        leaf -- create leaf tensor
        leaves_by_name -- dictionary of leaves keyed by name
        current -- innermost active graph (class method)
    """

    active = []

    def __init__(self):
        """Initialize empty graph."""
        self.nodes = []
        self.leaves = []

    def __enter__(self):
        """Start recording."""
        GradGraph.active.append(self)
        return self

    def __exit__(self, exception_type, exception_value, traceback):
        """Stop recording."""
        GradGraph.active.remove(self)

    def leaf(self, value, name=None):
        """Create leaf tensor with respect to which gradients are computed.

        Arguments:
            value -- array-like value
            name -- name used as key by backward (default: leafN)

        Returns:
            Tensor
        """
        if name is None:
            name = 'leaf%i' % len(self.leaves)
        leaf = Tensor(value, name=name)
        leaf._graph = self
        self.leaves.append(leaf)
        return leaf

    def leaves_by_name(self, values):
        """Create one leaf per entry of a dictionary of arrays.

        Arguments:
            values -- dictionary of arrays keyed by name

        Returns:
            dictionary of leaf tensors with the same keys
        """
        return {name: self.leaf(value, name)
                for name, value in values.items()}

    @classmethod
    def current(cls):
        """Return innermost active graph or None."""
        return cls.active[-1] if cls.active else None


class Tensor:
    """Immutable array value, optionally recorded on a tape.

    Arithmetic operators (+, -, *, /, @, unary -, **) and indexing map to the
    differentiable functions of this module.

    Properties (read-only):
        shape, ndim, size -- as for numpy arrays
        T -- swap last two axes

    Attributes:
        value -- numpy array (float64); must not be modified in place
        name -- name of leaf (None for other tensors)
        _graph -- graph on which tensor is recorded (None for constants)
        _inputs -- input tensors of recorded operation
        _vjp -- function mapping output gradient to input gradients
    """

    __slots__ = ('value', 'name', '_graph', '_inputs', '_vjp')
    __array_ufunc__ = None

    def __init__(self, value, name=None):
        """Initialize constant tensor.

        Arguments:
            value -- array-like value; must be finite
            name -- optional name
        """
        value = np.asarray(value, dtype=float)
        if not np.all(np.isfinite(value)):
            raise NonFiniteError('tensor %s' % (name or 'value'))
        self.value = value
        self.name = name
        self._graph = None
        self._inputs = ()
        self._vjp = None

    def __repr__(self):
        """Return official string representation."""
        return 'Tensor(%s)' % np.array2string(self.value, precision=6)

    @property
    def shape(self):
        """Shape of value."""
        return self.value.shape

    @property
    def ndim(self):
        """Number of dimensions of value."""
        return self.value.ndim

    @property
    def size(self):
        """Number of entries of value."""
        return self.value.size

    @property
    def T(self):
        """Swap last two axes."""
        return swapaxes(self, -1, -2)

    def item(self):
        """Return value of single-entry tensor as float."""
        if self.size != 1:
            raise NotScalarError(self.shape)
        return float(self.value.reshape(-1)[0])

    def __add__(self, other):
        return add(self, other)

    def __radd__(self, other):
        return add(other, self)

    def __sub__(self, other):
        return sub(self, other)

    def __rsub__(self, other):
        return sub(other, self)

    def __mul__(self, other):
        return mul(self, other)

    def __rmul__(self, other):
        return mul(other, self)

    def __truediv__(self, other):
        return div(self, other)

    def __rtruediv__(self, other):
        return div(other, self)

    def __matmul__(self, other):
        return matmul(self, other)

    def __rmatmul__(self, other):
        return matmul(other, self)

    def __neg__(self):
        return neg(self)

    def __pow__(self, exponent):
        return power(self, exponent)

    def __getitem__(self, index):
        return take(self, index)


def tensor(value):
    """Wrap value as constant tensor (tensors are returned unchanged)."""
    return value if isinstance(value, Tensor) else Tensor(value)


def _record(value, inputs, vjp):
    """Create result tensor and record operation on active graph if needed.

    Arguments:
        value -- numpy array computed by operation
        inputs -- input tensors
        vjp -- function mapping output gradient to tuple of input gradients
            (None entries for inputs that do not need one)

    Returns:
        Tensor
    """
    result = Tensor(value)
    graph = GradGraph.current()
    if graph is not None and any(x._graph is graph for x in inputs):
        result._graph = graph
        result._inputs = inputs
        result._vjp = vjp
        graph.nodes.append(result)
    return result


def _unbroadcast(grad, shape):
    """Sum gradient over axes introduced or stretched by broadcasting."""
    while grad.ndim > len(shape):
        grad = grad.sum(axis=0)
    for axis, size in enumerate(shape):
        if size == 1 and grad.shape[axis] != 1:
            grad = grad.sum(axis=axis, keepdims=True)
    return grad


def _broadcast_shape(operation, a, b):
    try:
        return np.broadcast_shapes(a.shape, b.shape)
    except ValueError:
        raise ShapeError(operation, a.shape, b.shape) from None


# Elementwise operations

def add(a, b):
    """Elementwise sum with broadcasting."""
    a, b = tensor(a), tensor(b)
    _broadcast_shape('add', a, b)
    return _record(a.value + b.value, (a, b), lambda g: (g, g))


def sub(a, b):
    """Elementwise difference with broadcasting."""
    a, b = tensor(a), tensor(b)
    _broadcast_shape('sub', a, b)
    return _record(a.value - b.value, (a, b), lambda g: (g, -g))


def mul(a, b):
    """Elementwise product with broadcasting."""
    a, b = tensor(a), tensor(b)
    _broadcast_shape('mul', a, b)
    return _record(a.value * b.value, (a, b),
                   lambda g: (g * b.value, g * a.value))


def div(a, b):
    """Elementwise quotient with broadcasting."""
    a, b = tensor(a), tensor(b)
    _broadcast_shape('div', a, b)
    with np.errstate(divide='ignore', invalid='ignore'):
        value = a.value / b.value
    return _record(value, (a, b),
                   lambda g: (g / b.value, -g * a.value / b.value ** 2))


def neg(a):
    """Elementwise negation."""
    a = tensor(a)
    return _record(-a.value, (a,), lambda g: (-g,))


def power(a, exponent):
    """Elementwise power with constant real exponent."""
    a = tensor(a)
    exponent = float(exponent)
    return _record(a.value ** exponent, (a,),
                   lambda g: (g * exponent * a.value ** (exponent - 1),))


def exp(a):
    """Elementwise exponential."""
    a = tensor(a)
    value = np.exp(a.value)
    return _record(value, (a,), lambda g: (g * value,))


def log(a):
    """Elementwise natural logarithm."""
    a = tensor(a)
    with np.errstate(divide='ignore', invalid='ignore'):
        value = np.log(a.value)
    return _record(value, (a,), lambda g: (g / a.value,))


def tanh(a):
    """Elementwise hyperbolic tangent."""
    a = tensor(a)
    value = np.tanh(a.value)
    return _record(value, (a,), lambda g: (g * (1 - value ** 2),))


def sigmoid(a):
    """Elementwise logistic function."""
    a = tensor(a)
    value = scipy.special.expit(a.value)
    return _record(value, (a,), lambda g: (g * value * (1 - value),))


def sqrt(a):
    """Elementwise square root."""
    a = tensor(a)
    value = np.sqrt(a.value)
    return _record(value, (a,), lambda g: (0.5 * g / value,))


def absolute(a):
    """Elementwise absolute value (subgradient 0 at 0)."""
    a = tensor(a)
    return _record(np.abs(a.value), (a,), lambda g: (g * np.sign(a.value),))


def maximum(a, b):
    """Elementwise maximum; ties send the gradient to the first operand."""
    a, b = tensor(a), tensor(b)
    _broadcast_shape('maximum', a, b)
    first = a.value >= b.value
    return _record(np.maximum(a.value, b.value), (a, b),
                   lambda g: (g * first, g * ~first))


def minimum(a, b):
    """Elementwise minimum; ties send the gradient to the first operand."""
    a, b = tensor(a), tensor(b)
    _broadcast_shape('minimum', a, b)
    first = a.value <= b.value
    return _record(np.minimum(a.value, b.value), (a, b),
                   lambda g: (g * first, g * ~first))


# Linear algebra, reductions and shape manipulation

def matmul(a, b):
    """Matrix product over the last two axes, broadcasting leading axes.

    Both operands must have at least two dimensions.
    """
    a, b = tensor(a), tensor(b)
    if a.ndim < 2 or b.ndim < 2 or a.shape[-1] != b.shape[-2]:
        raise ShapeError('matmul', a.shape, b.shape)
    return _record(np.matmul(a.value, b.value), (a, b),
                   lambda g: (np.matmul(g, np.swapaxes(b.value, -1, -2)),
                              np.matmul(np.swapaxes(a.value, -1, -2), g)))


def total(a, axis=None, keepdims=False):
    """Sum over axis (all entries if axis is None)."""
    a = tensor(a)
    value = np.sum(a.value, axis=axis, keepdims=keepdims)

    def vjp(g):
        if axis is not None and not keepdims:
            g = np.expand_dims(g, axis)
        return (np.broadcast_to(g, a.shape),)
    return _record(value, (a,), vjp)


def mean(a, axis=None, keepdims=False):
    """Mean over axis (all entries if axis is None)."""
    a = tensor(a)
    count = a.size if axis is None else np.prod(
        [a.shape[ax] for ax in np.atleast_1d(axis)])
    if count == 0:
        raise EmptyAxisError('mean', axis)
    return div(total(a, axis, keepdims), float(count))


def reshape(a, shape):
    """Reshape (row-major)."""
    a = tensor(a)
    try:
        value = a.value.reshape(shape)
    except ValueError:
        raise ShapeError('reshape', a.shape, shape) from None
    return _record(value, (a,), lambda g: (g.reshape(a.shape),))


def swapaxes(a, axis1, axis2):
    """Swap two axes."""
    a = tensor(a)
    return _record(np.swapaxes(a.value, axis1, axis2), (a,),
                   lambda g: (np.swapaxes(g, axis1, axis2),))


def concat(tensors, axis=0):
    """Concatenate tensors along axis."""
    tensors = tuple(tensor(t) for t in tensors)
    try:
        value = np.concatenate([t.value for t in tensors], axis=axis)
    except ValueError:
        raise ShapeError('concat', *(t.shape for t in tensors)) from None
    bounds = np.cumsum([t.shape[axis] for t in tensors])[:-1]
    return _record(value, tensors,
                   lambda g: tuple(np.split(g, bounds, axis=axis)))


def take(a, index):
    """Index tensor with numpy basic or advanced indexing."""
    a = tensor(a)
    parts = index if isinstance(index, tuple) else (index,)
    basic = all(part is None or part is Ellipsis
                or isinstance(part, (int, slice, np.integer))
                for part in parts)

    def vjp(g):
        grad = np.zeros(a.shape)
        if basic:
            grad[index] += g
        else:
            # Repeated advanced indices must accumulate.
            np.add.at(grad, index, g)
        return (grad,)
    return _record(a.value[index], (a,), vjp)


def broadcast_to(a, shape):
    """Broadcast tensor to shape."""
    a = tensor(a)
    try:
        value = np.broadcast_to(a.value, shape)
    except ValueError:
        raise ShapeError('broadcast_to', a.shape, shape) from None
    return _record(value, (a,), lambda g: (g,))


def detach(a):
    """Return constant copy of tensor (no gradient flows through it)."""
    return Tensor(tensor(a).value)


# Normalizers

def softmax(v, axis=-1):
    """Softmax along axis, stabilized by max-subtraction.

    Arguments:
        v -- tensor or array-like
        axis -- axis along which to normalize

    Returns:
        Tensor of nonnegative values summing to one along axis

    Exceptions:
        EmptyAxisError -- axis of length zero
    """
    v = tensor(v)
    if v.ndim == 0 or v.shape[axis] == 0:
        raise EmptyAxisError('softmax', axis)
    shifted = v.value - np.max(v.value, axis=axis, keepdims=True)
    e = np.exp(shifted)
    value = e / np.sum(e, axis=axis, keepdims=True)

    def vjp(g):
        return (value * (g - np.sum(g * value, axis=axis, keepdims=True)),)
    return _record(value, (v,), vjp)


def log_softmax(v, axis=-1):
    """Logarithm of softmax along axis (stable)."""
    v = tensor(v)
    if v.ndim == 0 or v.shape[axis] == 0:
        raise EmptyAxisError('log_softmax', axis)
    value = v.value - scipy.special.logsumexp(v.value, axis=axis,
                                              keepdims=True)
    probabilities = np.exp(value)

    def vjp(g):
        return (g - probabilities * np.sum(g, axis=axis, keepdims=True),)
    return _record(value, (v,), vjp)


def cosine_similarity(a, b, axis=-1):
    """Cosine similarity along axis, broadcasting other axes.

    Arguments:
        a, b -- tensors or array-likes with the same length along axis

    Returns:
        Tensor with values in [-1, 1]

    Exceptions:
        ShapeError -- lengths differ along axis
        ZeroNormError -- one of the vectors has zero norm (caller decides
            fallback)
    """
    a, b = tensor(a), tensor(b)
    if a.ndim == 0 or b.ndim == 0 or a.shape[axis] != b.shape[axis]:
        raise ShapeError('cosine_similarity', a.shape, b.shape)
    norm_a = sqrt(total(a * a, axis=axis))
    norm_b = sqrt(total(b * b, axis=axis))
    if np.any(norm_a.value == 0) or np.any(norm_b.value == 0):
        raise ZeroNormError('cosine_similarity')
    value = total(a * b, axis=axis) / (norm_a * norm_b)
    # Roundoff may push |value| slightly above one.
    return minimum(maximum(value, -1.0), 1.0)


def gru_cell(x, hidden, params):
    """Gated recurrent update of hidden state given input.

    The update gate z, reset gate r and candidate n are
        z = sigmoid(x W_z + h U_z + b_z)
        r = sigmoid(x W_r + h U_r + b_r)
        n = tanh(x W_h + (r * h) U_h + b_h)
    and the new state is (1 - z) * n + z * h.

    Arguments:
        x -- input tensor (..., d)
        hidden -- hidden state tensor (..., d)
        params -- dictionary with W_z, U_z, W_r, U_r, W_h, U_h (d x d) and
            b_z, b_r, b_h (d)

    Returns:
        Tensor (..., d)

    Exceptions:
        ShapeError -- input, hidden and parameter dimensions disagree
    """
    x, hidden = tensor(x), tensor(hidden)
    dim = hidden.shape[-1]
    for name in ('W_z', 'U_z', 'W_r', 'U_r', 'W_h', 'U_h'):
        if tuple(params[name].shape) != (dim, dim):
            raise ShapeError('gru_cell', hidden.shape, params[name].shape)
    if x.shape[-1] != dim:
        raise ShapeError('gru_cell', x.shape, hidden.shape)
    x2 = reshape(x, (-1, dim)) if x.ndim == 1 else x
    h2 = reshape(hidden, (-1, dim)) if hidden.ndim == 1 else hidden
    update = sigmoid(x2 @ params['W_z'] + h2 @ params['U_z'] + params['b_z'])
    reset = sigmoid(x2 @ params['W_r'] + h2 @ params['U_r'] + params['b_r'])
    candidate = tanh(x2 @ params['W_h'] + (reset * h2) @ params['U_h']
                     + params['b_h'])
    result = (1 - update) * candidate + update * h2
    return reshape(result, hidden.shape) if hidden.ndim == 1 else result


# Assignment

def hungarian_assign(score, maximize=True):
    """Optimal one-to-one assignment of rows to columns.

    The augmenting-path solver of scipy minimizes cost; maximization is
    handled by negating the scores. A rectangular K x M problem (K < M) is
    padded to a square one with rows whose score is strictly below the minimum
    entry, so the padding never changes which columns the real rows receive.

    Arguments:
        score -- K x M array-like of finite values, K <= M
        maximize -- whether to maximize (True) or minimize the total score

    Returns:
        Assignment

    Exceptions:
        AssignmentError -- K > M
        NonFiniteError -- score contains NaN or infinite values
    """
    score = np.asarray(score, dtype=float)
    if score.ndim != 2:
        raise ShapeError('hungarian_assign', score.shape)
    rows, columns = score.shape
    if rows > columns:
        raise AssignmentError(rows, columns)
    if not np.all(np.isfinite(score)):
        raise NonFiniteError('assignment scores')
    if rows == 0:
        _misc_logger.debug('Empty assignment problem (%i columns).', columns)
        return Assignment((), 0.0)
    padded = score
    if rows < columns:
        floor = score.min() - 1.0 if maximize else score.max() + 1.0
        padding = np.full((columns - rows, columns), floor)
        padded = np.vstack([score, padding])
    cost = -padded if maximize else padded
    row_index, column_index = scipy.optimize.linear_sum_assignment(cost)
    pairs = tuple((int(r), int(c)) for r, c in zip(row_index, column_index)
                  if r < rows)
    total_score = float(sum(score[r, c] for r, c in pairs))
    return Assignment(pairs, total_score)


# Gradients

def backward(graph, output):
    """Gradients of scalar output with respect to every leaf of the graph.

    The tape is walked in reverse execution order, so each recorded node is
    visited once, after all of its consumers.

    Arguments:
        graph -- GradGraph on which output was computed
        output -- single-entry tensor

    Returns:
        dictionary mapping leaf name to gradient array (zeros for leaves on
        which output does not depend)

    Exceptions:
        NotScalarError -- output has more than one entry
    """
    output = tensor(output)
    if output.size != 1:
        raise NotScalarError(output.shape)
    grads = {}
    if output._graph is graph:
        grads[id(output)] = np.ones(output.shape)
    for node in reversed(graph.nodes):
        grad = grads.pop(id(node), None)
        if grad is None:
            continue
        for source, source_grad in zip(node._inputs, node._vjp(grad)):
            if source._graph is not graph or source_grad is None:
                continue
            source_grad = _unbroadcast(np.asarray(source_grad, dtype=float),
                                       source.shape)
            key = id(source)
            if key in grads:
                grads[key] = grads[key] + source_grad
            else:
                grads[key] = source_grad
    return {leaf.name: grads.get(id(leaf), np.zeros(leaf.shape))
            for leaf in graph.leaves}


def finite_diff_grad(f, x, step=1e-5):
    """Central finite-difference gradient of scalar function.

    Arguments:
        f -- function of an array returning a real
        x -- evaluation point (array-like of any shape)
        step -- half-width of difference (> 0)

    Returns:
        numpy array of the same shape as x

    Exceptions:
        NonFiniteError -- f returns a non-finite value
    """
    if step <= 0:
        raise ValueError('Finite-difference step must be positive.')
    x = np.array(x, dtype=float)
    grad = np.zeros_like(x)
    flat = x.reshape(-1)
    flat_grad = grad.reshape(-1)
    for i in range(flat.size):
        original = flat[i]
        flat[i] = original + step
        upper = float(f(x))
        flat[i] = original - step
        lower = float(f(x))
        flat[i] = original
        if not (math.isfinite(upper) and math.isfinite(lower)):
            raise NonFiniteError('finite-difference evaluation')
        flat_grad[i] = (upper - lower) / (2 * step)
    return grad


def sgd_update(params, grads, lr, rates=None):
    """Plain gradient-descent update p <- p - lr * g.

    Arguments:
        params -- dictionary of arrays keyed by name
        grads -- dictionary of gradient arrays; parameters without gradient
            are left unchanged
        lr -- learning rate (> 0)
        rates -- dictionary mapping name prefixes to learning rates that
            replace lr for the parameters they start (default: none)

    Returns:
        new dictionary of arrays

    Exceptions:
        ShapeError -- gradient shape differs from parameter shape
    """
    rates = dict(rates or {})
    if lr <= 0 or any(rate <= 0 for rate in rates.values()):
        raise ValueError('Learning rate must be positive.')
    updated = {}
    for name, value in params.items():
        value = np.asarray(value, dtype=float)
        grad = grads.get(name)
        if grad is None:
            updated[name] = value.copy()
            continue
        grad = np.asarray(grad, dtype=float)
        if grad.shape != value.shape:
            raise ShapeError('sgd_update', value.shape, grad.shape)
        rate = next((rates[prefix] for prefix in sorted(rates)
                     if name.startswith(prefix)), lr)
        updated[name] = value - rate * grad
    return updated


class Rng:
    """Counter-based seeded random generator.

    The stream is produced by the Philox counter-based bit generator of numpy,
    keyed by the seed and a stream number. Normal deviates are drawn with the
    Box-Muller transform so that the stream can be reproduced from uniform
    deviates alone.

    Methods:
        __init__ -- initializer
        fork -- independent generator for a sub-stream
        uniform -- uniform deviates in [0, 1)
        normal -- standard normal deviates
        integers -- uniform integers in [low, high)
        permutation -- random permutation of range(n)

    Properties:
        state -- JSON-compatible state, settable to resume a stream

    Attributes:
        seed, stream -- key of the generator
        _generator -- numpy Generator
    """

    def __init__(self, seed, stream=0):
        """Initialize generator.

        Arguments:
            seed -- nonnegative integer below 2**64
            stream -- nonnegative integer below 2**64 selecting a sub-stream
        """
        self.seed = int(seed)
        self.stream = int(stream)
        if not (0 <= self.seed < 2 ** 64 and 0 <= self.stream < 2 ** 64):
            raise ValueError('Seed and stream must lie in [0, 2**64).')
        key = self.seed + (self.stream << 64)
        self._generator = np.random.Generator(np.random.Philox(key=key))

    def fork(self, stream):
        """Return independent generator keyed by the same seed.

        Arguments:
            stream -- sub-stream number
        """
        return Rng(self.seed, stream)

    def uniform(self, shape=()):
        """Uniform deviates in [0, 1)."""
        return self._generator.random(shape)

    def normal(self, shape=()):
        """Standard normal deviates (Box-Muller on consecutive uniforms).

        The first half of the uniforms drawn feed the radius, the second half
        the angle.
        """
        count = int(np.prod(shape, dtype=int))
        radius = np.sqrt(-2.0 * np.log(1.0 - self._generator.random(count)))
        angle = 2.0 * np.pi * self._generator.random(count)
        return (radius * np.cos(angle)).reshape(shape)

    def integers(self, low, high):
        """Uniform integer in [low, high)."""
        return int(self._generator.integers(low, high))

    def permutation(self, n):
        """Random permutation of range(n)."""
        return self._generator.permutation(n)

    @property
    def state(self):
        """State of the bit generator as nested lists and integers."""
        raw = self._generator.bit_generator.state
        return {'seed': self.seed, 'stream': self.stream,
                'counter': [int(v) for v in raw['state']['counter']],
                'key': [int(v) for v in raw['state']['key']],
                'buffer': [int(v) for v in raw['buffer']],
                'buffer_pos': int(raw['buffer_pos']),
                'has_uint32': int(raw['has_uint32']),
                'uinteger': int(raw['uinteger'])}

    @state.setter
    def state(self, value):
        self.seed = int(value['seed'])
        self.stream = int(value['stream'])
        bit_generator = self._generator.bit_generator
        bit_generator.state = {
            'bit_generator': 'Philox',
            'state': {'counter': np.array(value['counter'], dtype=np.uint64),
                      'key': np.array(value['key'], dtype=np.uint64)},
            'buffer': np.array(value['buffer'], dtype=np.uint64),
            'buffer_pos': int(value['buffer_pos']),
            'has_uint32': int(value['has_uint32']),
            'uinteger': int(value['uinteger'])}

    @classmethod
    def from_state(cls, value):
        """Create generator from a state produced by the state property."""
        rng = cls(value['seed'], value['stream'])
        rng.state = value
        return rng
