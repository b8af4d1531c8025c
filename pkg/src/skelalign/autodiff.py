"""Reverse-mode automatic differentiation over dense float64 numpy arrays.

Every operation returns a new :class:`Tensor` that remembers its inputs and
how to push a gradient back through itself.  Calling ``backward()`` on a
scalar tensor walks the graph in reverse topological order and populates
``grad`` on every tensor with ``requires_grad`` set.  Repeated ``backward()``
calls accumulate into ``grad``; call :func:`zero_grad` (or an optimizer step)
to reset between steps.

All arithmetic is double precision so that the finite-difference gradient
checker in :func:`grad_check` is meaningful at a 1e-4 relative tolerance.
"""

from __future__ import annotations

import math
from dataclasses import dataclass
from typing import Callable, Iterable, Optional, Sequence

import numpy as np

LOG_FLOOR = 1e-12


class ShapeError(ValueError):
    """Operands do not have compatible shapes for the requested operation."""


class GraphError(RuntimeError):
    """The differentiation graph was used in an unsupported way."""


class GradientError(RuntimeError):
    """A gradient is missing or not finite where one is required."""


class Tensor:
    """A dense array node in the differentiation graph.

    ``data`` is always a float64 ndarray.  ``grad`` is ``None`` until a
    backward pass reaches this tensor, after which it has the same shape as
    ``data``.  Backward passes accumulate: running two passes without
    clearing doubles the stored gradient.
    """

    __slots__ = ("data", "grad", "requires_grad", "_parents", "_vjp")

    def __init__(self, data, requires_grad: bool = False):
        self.data = np.asarray(data, dtype=np.float64)
        self.grad: Optional[np.ndarray] = None
        self.requires_grad = bool(requires_grad)
        self._parents: tuple = ()
        self._vjp: Optional[Callable] = None

    @property
    def shape(self) -> tuple:
        return self.data.shape

    @property
    def ndim(self) -> int:
        return self.data.ndim

    @property
    def size(self) -> int:
        return self.data.size

    def item(self) -> float:
        return float(self.data)

    def detach(self) -> "Tensor":
        """A view of the same values cut loose from the graph."""
        return Tensor(self.data)

    def backward(self) -> None:
        """Propagate d(self)/d(node) to every reachable ``requires_grad`` tensor.

        Only defined for scalar (0-d) tensors.  Gradients accumulate into
        ``grad`` so separate losses can be backpropagated one at a time.
        """
        if self.shape != ():
            raise GraphError(
                f"backward() requires a scalar tensor, got shape {self.shape}"
            )
        if not self.requires_grad:
            return

        topo: list[Tensor] = []
        visited: set[int] = set()
        stack: list[tuple[Tensor, bool]] = [(self, False)]
        while stack:
            node, expanded = stack.pop()
            if expanded:
                topo.append(node)
                continue
            if id(node) in visited:
                continue
            visited.add(id(node))
            stack.append((node, True))
            for parent in node._parents:
                if parent.requires_grad and id(parent) not in visited:
                    stack.append((parent, False))

        adjoint: dict[int, np.ndarray] = {id(self): np.ones((), dtype=np.float64)}
        for node in reversed(topo):
            g = adjoint.pop(id(node), None)
            if g is None:
                continue
            node.grad = g if node.grad is None else node.grad + g
            if node._vjp is None:
                continue
            parent_grads = node._vjp(g)
            for parent, pg in zip(node._parents, parent_grads):
                if pg is None or not parent.requires_grad:
                    continue
                key = id(parent)
                if key in adjoint:
                    adjoint[key] = adjoint[key] + pg
                else:
                    adjoint[key] = pg

    # -- operator sugar -------------------------------------------------

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

    def __neg__(self):
        return mul(self, -1.0)

    def __matmul__(self, other):
        return matmul(self, other)

    def __getitem__(self, key):
        return take(self, key)

    def sum(self, axis=None, keepdims: bool = False):
        return tensor_sum(self, axis=axis, keepdims=keepdims)

    def mean(self, axis=None, keepdims: bool = False):
        return tensor_mean(self, axis=axis, keepdims=keepdims)

    def reshape(self, shape):
        return reshape(self, shape)

    def __repr__(self):
        return f"Tensor(shape={self.shape}, requires_grad={self.requires_grad})"


def _lift(x) -> Tensor:
    return x if isinstance(x, Tensor) else Tensor(x)


def _node(data: np.ndarray, parents: Sequence[Tensor], vjp: Callable) -> Tensor:
    out = Tensor(data)
    if any(p.requires_grad for p in parents):
        out.requires_grad = True
        out._parents = tuple(parents)
        out._vjp = vjp
    return out


def _unbroadcast(g: np.ndarray, shape: tuple) -> np.ndarray:
    """Sum ``g`` down to ``shape`` to undo numpy broadcasting."""
    if g.shape == shape:
        return g
    extra = g.ndim - len(shape)
    if extra > 0:
        g = g.sum(axis=tuple(range(extra)))
    axes = tuple(i for i, n in enumerate(shape) if n == 1 and g.shape[i] != 1)
    if axes:
        g = g.sum(axis=axes, keepdims=True)
    return g.reshape(shape)


# -- elementwise ---------------------------------------------------------


def add(a, b) -> Tensor:
    a, b = _lift(a), _lift(b)
    return _node(
        a.data + b.data,
        (a, b),
        lambda g: (_unbroadcast(g, a.shape), _unbroadcast(g, b.shape)),
    )


def sub(a, b) -> Tensor:
    a, b = _lift(a), _lift(b)
    return _node(
        a.data - b.data,
        (a, b),
        lambda g: (_unbroadcast(g, a.shape), _unbroadcast(-g, b.shape)),
    )


def mul(a, b) -> Tensor:
    a, b = _lift(a), _lift(b)
    return _node(
        a.data * b.data,
        (a, b),
        lambda g: (
            _unbroadcast(g * b.data, a.shape),
            _unbroadcast(g * a.data, b.shape),
        ),
    )


def div(a, b) -> Tensor:
    a, b = _lift(a), _lift(b)
    return _node(
        a.data / b.data,
        (a, b),
        lambda g: (
            _unbroadcast(g / b.data, a.shape),
            _unbroadcast(-g * a.data / (b.data * b.data), b.shape),
        ),
    )


def relu(t: Tensor) -> Tensor:
    """Elementwise max(0, x); the subgradient at exactly 0 is taken as 0."""
    t = _lift(t)
    mask = t.data > 0
    return _node(np.where(mask, t.data, 0.0), (t,), lambda g: (g * mask,))


def log_clamped(t: Tensor, floor: float = LOG_FLOOR) -> Tensor:
    """log(max(x, floor)); below the floor the function is constant, so the
    gradient there is 0."""
    t = _lift(t)
    above = t.data > floor
    return _node(
        np.log(np.maximum(t.data, floor)),
        (t,),
        lambda g: (np.where(above, g / t.data, 0.0),),
    )


# -- structure -----------------------------------------------------------


def reshape(t: Tensor, shape) -> Tensor:
    t = _lift(t)
    shape = tuple(shape)
    return _node(t.data.reshape(shape), (t,), lambda g: (g.reshape(t.shape),))


def take(t: Tensor, key) -> Tensor:
    """Numpy-style indexing as a graph op; the gradient scatters back."""
    t = _lift(t)
    out = np.array(t.data[key], dtype=np.float64)

    def vjp(g):
        buf = np.zeros_like(t.data)
        np.add.at(buf, key, g)
        return (buf,)

    return _node(out, (t,), vjp)


def tensor_sum(t: Tensor, axis=None, keepdims: bool = False) -> Tensor:
    t = _lift(t)
    data = t.data.sum(axis=axis, keepdims=keepdims)

    def vjp(g):
        if axis is None:
            return (np.broadcast_to(g, t.shape).copy(),)
        axes = axis if isinstance(axis, tuple) else (axis,)
        if not keepdims:
            g = np.expand_dims(g, axes)
        return (np.broadcast_to(g, t.shape).copy(),)

    return _node(data, (t,), vjp)


def tensor_mean(t: Tensor, axis=None, keepdims: bool = False) -> Tensor:
    t = _lift(t)
    if axis is None:
        count = t.size
    else:
        axes = axis if isinstance(axis, tuple) else (axis,)
        count = int(np.prod([t.shape[a] for a in axes]))
    return mul(tensor_sum(t, axis=axis, keepdims=keepdims), 1.0 / count)


# -- linear algebra -------------------------------------------------------


def matmul(a, b) -> Tensor:
    a, b = _lift(a), _lift(b)
    if a.ndim != 2 or b.ndim != 2:
        raise ShapeError(f"matmul expects 2-d operands, got {a.shape} @ {b.shape}")
    if a.shape[1] != b.shape[0]:
        raise ShapeError(f"matmul inner dimensions disagree: {a.shape} @ {b.shape}")
    return _node(
        a.data @ b.data,
        (a, b),
        lambda g: (g @ b.data.T, a.data.T @ g),
    )


def dense(x: Tensor, weights: Tensor, bias: Tensor) -> Tensor:
    """Affine map ``x @ weights + bias`` for a batch of row vectors."""
    x, weights, bias = _lift(x), _lift(weights), _lift(bias)
    if x.ndim != 2 or weights.ndim != 2 or bias.ndim != 1:
        raise ShapeError(
            "dense expects x[N,D], weights[D,M], bias[M]; got "
            f"{x.shape}, {weights.shape}, {bias.shape}"
        )
    if x.shape[1] != weights.shape[0]:
        raise ShapeError(
            f"dense input dim {x.shape[1]} does not match weights dim {weights.shape[0]}"
        )
    if bias.shape[0] != weights.shape[1]:
        raise ShapeError(
            f"dense bias dim {bias.shape[0]} does not match weights dim {weights.shape[1]}"
        )
    return _node(
        x.data @ weights.data + bias.data,
        (x, weights, bias),
        lambda g: (g @ weights.data.T, x.data.T @ g, g.sum(axis=0)),
    )


def softmax(t: Tensor) -> Tensor:
    """Row-wise softmax of a [N, M] tensor, stabilised by max subtraction.

    Outputs are clamped to stay strictly positive even when an exponent
    underflows.
    """
    t = _lift(t)
    if t.ndim != 2:
        raise ShapeError(f"softmax expects a 2-d tensor, got shape {t.shape}")
    z = t.data - t.data.max(axis=1, keepdims=True)
    e = np.exp(z)
    p = e / e.sum(axis=1, keepdims=True)
    p = np.maximum(p, 1e-300)

    def vjp(g):
        return (p * (g - (g * p).sum(axis=1, keepdims=True)),)

    return _node(p, (t,), vjp)


# -- convolution stack -----------------------------------------------------


def conv2d(x: Tensor, kernel: Tensor, bias: Tensor, stride: int = 1, pad: int = 0) -> Tensor:
    """2-d cross-correlation with zero padding.

    ``x`` may be a single image [C,H,W] or a batch [N,C,H,W]; the kernel is
    [C_out,C_in,kh,kw] and the bias has one entry per output channel.
    """
    x, kernel, bias = _lift(x), _lift(kernel), _lift(bias)
    if x.ndim == 3:
        out = conv2d(reshape(x, (1,) + x.shape), kernel, bias, stride, pad)
        return reshape(out, out.shape[1:])
    if x.ndim != 4 or kernel.ndim != 4 or bias.ndim != 1:
        raise ShapeError(
            "conv2d expects x[N,C,H,W], kernel[Co,Ci,kh,kw], bias[Co]; got "
            f"{x.shape}, {kernel.shape}, {bias.shape}"
        )
    if stride < 1 or pad < 0:
        raise ShapeError(f"conv2d needs stride >= 1 and pad >= 0, got {stride}, {pad}")
    n, c_in, h, w = x.shape
    c_out, kc_in, kh, kw = kernel.shape
    if kc_in != c_in:
        raise ShapeError(
            f"kernel expects {kc_in} input channels but input has {c_in}"
        )
    if bias.shape[0] != c_out:
        raise ShapeError(f"bias has {bias.shape[0]} entries for {c_out} channels")
    if h + 2 * pad < kh or w + 2 * pad < kw:
        raise ShapeError(
            f"padded input {h + 2 * pad}x{w + 2 * pad} smaller than kernel {kh}x{kw}"
        )

    xp = np.pad(x.data, ((0, 0), (0, 0), (pad, pad), (pad, pad))) if pad else x.data
    h_out = (h + 2 * pad - kh) // stride + 1
    w_out = (w + 2 * pad - kw) // stride + 1
    windows = np.lib.stride_tricks.sliding_window_view(xp, (kh, kw), axis=(2, 3))
    windows = windows[:, :, ::stride, ::stride, :, :]
    # im2col: one big matmul keeps the forward pass on BLAS
    cols = np.ascontiguousarray(windows.transpose(0, 2, 3, 1, 4, 5)).reshape(
        n * h_out * w_out, c_in * kh * kw
    )
    kmat = kernel.data.reshape(c_out, -1)
    out = (cols @ kmat.T + bias.data).reshape(n, h_out, w_out, c_out)
    out = np.ascontiguousarray(out.transpose(0, 3, 1, 2))

    def vjp(g):
        gmat = np.ascontiguousarray(g.transpose(0, 2, 3, 1)).reshape(
            n * h_out * w_out, c_out
        )
        dbias = g.sum(axis=(0, 2, 3))
        dkernel = (gmat.T @ cols).reshape(kernel.shape)
        dcols = (gmat @ kmat).reshape(n, h_out, w_out, c_in, kh, kw)
        dcols = dcols.transpose(0, 3, 1, 2, 4, 5)
        dxp = np.zeros_like(xp)
        for i in range(kh):
            for j in range(kw):
                dxp[
                    :, :, i : i + stride * h_out : stride, j : j + stride * w_out : stride
                ] += dcols[:, :, :, :, i, j]
        dx = dxp[:, :, pad : pad + h, pad : pad + w] if pad else dxp
        return (dx, dkernel, dbias)

    return _node(out, (x, kernel, bias), vjp)


def maxpool2(x: Tensor) -> Tensor:
    """2x2 non-overlapping max pooling over [C,H,W] or [N,C,H,W].

    The gradient routes to the first maximal element of each window in
    row-major order, which makes ties deterministic.
    """
    x = _lift(x)
    if x.ndim == 3:
        out = maxpool2(reshape(x, (1,) + x.shape))
        return reshape(out, out.shape[1:])
    if x.ndim != 4:
        raise ShapeError(f"maxpool2 expects [C,H,W] or [N,C,H,W], got {x.shape}")
    n, c, h, w = x.shape
    if h % 2 or w % 2:
        raise ShapeError(f"maxpool2 needs even spatial extents, got {h}x{w}")
    h2, w2 = h // 2, w // 2
    tiles = x.data.reshape(n, c, h2, 2, w2, 2).transpose(0, 1, 2, 4, 3, 5)
    flat = tiles.reshape(n, c, h2, w2, 4)
    idx = flat.argmax(axis=-1)  # argmax takes the first max: row-major tie rule
    out = np.take_along_axis(flat, idx[..., None], axis=-1)[..., 0]

    def vjp(g):
        buf = np.zeros_like(flat)
        np.put_along_axis(buf, idx[..., None], g[..., None], axis=-1)
        dx = buf.reshape(n, c, h2, w2, 2, 2).transpose(0, 1, 2, 4, 3, 5)
        return (dx.reshape(n, c, h, w),)

    return _node(out, (x,), vjp)


# -- optimisation ----------------------------------------------------------


@dataclass
class SgdConfig:
    """Plain SGD with a progress-annealed learning rate.

    The effective rate at normalized progress p in [0,1] is
    ``base_lr / (1 + anneal_a * p) ** anneal_b``, which stays strictly
    positive and strictly decreases whenever both anneal constants are
    positive.
    """

    base_lr: float = 0.01
    anneal_a: float = 10.0
    anneal_b: float = 0.75
    momentum: float = 0.0

    def __post_init__(self):
        if self.base_lr <= 0:
            raise ValueError(f"base_lr must be positive, got {self.base_lr}")
        if self.anneal_a < 0 or self.anneal_b < 0:
            raise ValueError("anneal constants must be nonnegative")
        if not 0 <= self.momentum < 1:
            raise ValueError(f"momentum must be in [0,1), got {self.momentum}")

    def learning_rate(self, progress: float) -> float:
        if not 0.0 <= progress <= 1.0:
            raise ValueError(f"progress must lie in [0,1], got {progress}")
        return self.base_lr / (1.0 + self.anneal_a * progress) ** self.anneal_b


class SgdOptimizer:
    """Updates a fixed set of parameters in place and clears their grads."""

    def __init__(self, params: Iterable[Tensor], config: SgdConfig):
        self.params = list(params)
        self.config = config
        self._velocity: dict[int, np.ndarray] = {}

    def step(self, progress: float) -> None:
        lr = self.config.learning_rate(progress)
        for p in self.params:
            if p.grad is None:
                raise GradientError("sgd step with no gradient; run backward() first")
            update = p.grad
            if self.config.momentum > 0.0:
                v = self._velocity.get(id(p))
                v = update if v is None else self.config.momentum * v + update
                self._velocity[id(p)] = v
                update = v
            p.data = p.data - lr * update
            p.grad = None


def zero_grad(params: Iterable[Tensor]) -> None:
    for p in params:
        p.grad = None


# -- verification -----------------------------------------------------------


def grad_check(node_builder: Callable[..., Tensor], inputs: Sequence[Tensor],
               eps: float = 1e-5) -> float:
    """Compare analytic gradients against central finite differences.

    ``node_builder`` must build a fresh scalar loss from the current values
    of ``inputs`` each time it is called.  Returns the maximum over all input
    elements of ``|analytic - numeric| / max(1e-8, |analytic| + |numeric|)``.
    """
    if eps <= 0:
        raise ValueError(f"eps must be positive, got {eps}")
    inputs = list(inputs)
    for t in inputs:
        if not np.all(np.isfinite(t.data)):
            raise GradientError("grad_check inputs must be finite")
        t.grad = None

    loss = node_builder(*inputs)
    if not np.isfinite(loss.data):
        raise GradientError(f"loss is not finite: {loss.data}")
    loss.backward()
    analytic = [
        t.grad.copy() if t.grad is not None else np.zeros_like(t.data) for t in inputs
    ]

    worst = 0.0
    for t, a in zip(inputs, analytic):
        flat = t.data.reshape(-1)
        aflat = a.reshape(-1)
        for i in range(flat.size):
            orig = flat[i]
            flat[i] = orig + eps
            f_plus = node_builder(*inputs).item()
            flat[i] = orig - eps
            f_minus = node_builder(*inputs).item()
            flat[i] = orig
            if not (math.isfinite(f_plus) and math.isfinite(f_minus)):
                raise GradientError("loss became non-finite during perturbation")
            numeric = (f_plus - f_minus) / (2.0 * eps)
            err = abs(aflat[i] - numeric) / max(1e-8, abs(aflat[i]) + abs(numeric))
            worst = max(worst, err)
    return worst
