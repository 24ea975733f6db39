"""Dense float64 tensors with reverse-mode autodiff.

Small scalar-graph engine in the micrograd style, except every node holds a
numpy array. Each op records a closure that scatters the upstream gradient
back to its inputs; ``Tensor.backward()`` walks the graph once in reverse
topological order. Everything is float64 and single-threaded per graph.
"""

from __future__ import annotations

import struct
from typing import Callable, Iterable, Sequence

import numpy as np


class ShapeMismatch(ValueError):
    """Operand shapes do not conform for the requested op."""


def _check_shapes(op: str, a_shape, b_shape, ok: bool) -> None:
    if not ok:
        raise ShapeMismatch(f"{op}: operand shapes {tuple(a_shape)} and {tuple(b_shape)} do not conform")


def _unbroadcast(grad: np.ndarray, shape: tuple[int, ...]) -> np.ndarray:
    """Reduce a broadcast gradient back to the original operand shape."""
    while grad.ndim > len(shape):
        grad = grad.sum(axis=0)
    for ax, n in enumerate(shape):
        if n == 1 and grad.shape[ax] != 1:
            grad = grad.sum(axis=ax, keepdims=True)
    return grad


class Tensor:
    """An n-d float64 array participating in the compute graph."""

    __slots__ = ("data", "grad", "requires_grad", "_backward", "_prev")

    def __init__(self, data, requires_grad: bool = False):
        self.data = np.asarray(data, dtype=np.float64)
        self.grad: np.ndarray | None = None
        self.requires_grad = requires_grad
        self._backward: Callable[[], None] | None = None
        self._prev: tuple[Tensor, ...] = ()

    @property
    def shape(self) -> tuple[int, ...]:
        return self.data.shape

    def __repr__(self) -> str:
        return f"Tensor(shape={self.data.shape}, requires_grad={self.requires_grad})"

    # -- graph plumbing ----------------------------------------------------

    def _accumulate(self, g: np.ndarray) -> None:
        if self.grad is None:
            self.grad = np.zeros_like(self.data)
        self.grad += g

    @staticmethod
    def _node(data: np.ndarray, parents: tuple["Tensor", ...], backward: Callable[[], None]) -> "Tensor":
        out = Tensor(data)
        if any(p.requires_grad for p in parents):
            out.requires_grad = True
            out._prev = parents
            out._backward = backward
        return out

    def detach(self) -> "Tensor":
        """A view of the same data cut out of the graph."""
        return Tensor(self.data)

    def backward(self) -> None:
        """Populate grads of every reachable requires_grad tensor.

        Repeated calls accumulate; the optimizer zeroes grads after a step.
        """
        if self.data.size != 1:
            raise ValueError(f"backward requires a scalar, got shape {self.data.shape}")
        topo: list[Tensor] = []
        seen: set[int] = set()
        stack: list[tuple[Tensor, bool]] = [(self, False)]
        while stack:
            node, expanded = stack.pop()
            if expanded:
                topo.append(node)
                continue
            if id(node) in seen:
                continue
            seen.add(id(node))
            stack.append((node, True))
            for p in node._prev:
                if id(p) not in seen:
                    stack.append((p, False))
        self._accumulate(np.ones_like(self.data))
        for node in reversed(topo):
            if node._backward is not None:
                node._backward()

    # -- arithmetic --------------------------------------------------------

    @staticmethod
    def _lift(x) -> "Tensor":
        return x if isinstance(x, Tensor) else Tensor(x)

    def __add__(self, other) -> "Tensor":
        other = Tensor._lift(other)
        try:
            data = self.data + other.data
        except ValueError:
            _check_shapes("add", self.shape, other.shape, False)

        def backward():
            g = out.grad
            if self.requires_grad:
                self._accumulate(_unbroadcast(g, self.shape))
            if other.requires_grad:
                other._accumulate(_unbroadcast(g, other.shape))

        out = Tensor._node(data, (self, other), backward)
        return out

    def __mul__(self, other) -> "Tensor":
        other = Tensor._lift(other)
        try:
            data = self.data * other.data
        except ValueError:
            _check_shapes("mul", self.shape, other.shape, False)

        def backward():
            g = out.grad
            if self.requires_grad:
                self._accumulate(_unbroadcast(g * other.data, self.shape))
            if other.requires_grad:
                other._accumulate(_unbroadcast(g * self.data, other.shape))

        out = Tensor._node(data, (self, other), backward)
        return out

    def __neg__(self) -> "Tensor":
        def backward():
            if self.requires_grad:
                self._accumulate(-out.grad)

        out = Tensor._node(-self.data, (self,), backward)
        return out

    def __sub__(self, other) -> "Tensor":
        return self + (-Tensor._lift(other))

    def __rsub__(self, other) -> "Tensor":
        return Tensor._lift(other) + (-self)

    __radd__ = __add__
    __rmul__ = __mul__

    def __truediv__(self, c) -> "Tensor":
        if isinstance(c, Tensor):
            raise TypeError("tensor/tensor division is not part of the op set")
        return self * (1.0 / c)

    def __matmul__(self, other) -> "Tensor":
        other = Tensor._lift(other)
        _check_shapes(
            "matmul",
            self.shape,
            other.shape,
            self.data.ndim == 2 and other.data.ndim == 2 and self.shape[1] == other.shape[0],
        )
        data = self.data @ other.data

        def backward():
            g = out.grad
            if self.requires_grad:
                self._accumulate(g @ other.data.T)
            if other.requires_grad:
                other._accumulate(self.data.T @ g)

        out = Tensor._node(data, (self, other), backward)
        return out

    def __getitem__(self, idx) -> "Tensor":
        data = self.data[idx]

        def backward():
            if self.requires_grad:
                g = np.zeros_like(self.data)
                g[idx] = out.grad
                self._accumulate(g)

        out = Tensor._node(np.array(data, copy=True), (self,), backward)
        return out

    # -- elementwise functions ----------------------------------------------

    def relu(self) -> "Tensor":
        mask = self.data > 0  # subgradient at 0 is 0

        def backward():
            if self.requires_grad:
                self._accumulate(out.grad * mask)

        out = Tensor._node(np.where(mask, self.data, 0.0), (self,), backward)
        return out

    def sigmoid(self) -> "Tensor":
        s = 1.0 / (1.0 + np.exp(-self.data))

        def backward():
            if self.requires_grad:
                self._accumulate(out.grad * s * (1.0 - s))

        out = Tensor._node(s, (self,), backward)
        return out

    def exp(self) -> "Tensor":
        e = np.exp(self.data)

        def backward():
            if self.requires_grad:
                self._accumulate(out.grad * e)

        out = Tensor._node(e, (self,), backward)
        return out

    def log(self) -> "Tensor":
        def backward():
            if self.requires_grad:
                self._accumulate(out.grad / self.data)

        out = Tensor._node(np.log(self.data), (self,), backward)
        return out

    def square(self) -> "Tensor":
        def backward():
            if self.requires_grad:
                self._accumulate(out.grad * 2.0 * self.data)

        out = Tensor._node(self.data * self.data, (self,), backward)
        return out

    def clip_min(self, floor: float) -> "Tensor":
        """Elementwise max(x, floor); gradient passes only where x > floor."""
        mask = self.data > floor

        def backward():
            if self.requires_grad:
                self._accumulate(out.grad * mask)

        out = Tensor._node(np.where(mask, self.data, floor), (self,), backward)
        return out

    # -- reductions ----------------------------------------------------------

    def sum(self, axis: int | None = None, keepdims: bool = False) -> "Tensor":
        data = self.data.sum(axis=axis, keepdims=keepdims)

        def backward():
            if self.requires_grad:
                g = out.grad
                if axis is not None and not keepdims:
                    g = np.expand_dims(g, axis)
                self._accumulate(np.broadcast_to(g, self.data.shape).copy())

        out = Tensor._node(data, (self,), backward)
        return out

    def mean(self, axis: int | None = None) -> "Tensor":
        n = self.data.size if axis is None else self.data.shape[axis]
        return self.sum(axis=axis) / n

    def _extremum(self, axis: int | None, argfn, redfn) -> "Tensor":
        # Gradient routes to the first extremal index along the axis.
        if axis is None:
            flat_idx = argfn(self.data)
            data = self.data.reshape(-1)[flat_idx]

            def backward():
                if self.requires_grad:
                    g = np.zeros_like(self.data)
                    g.reshape(-1)[flat_idx] = out.grad
                    self._accumulate(g)

        else:
            idx = argfn(self.data, axis=axis)
            data = redfn(self.data, axis=axis)

            def backward():
                if self.requires_grad:
                    g = np.zeros_like(self.data)
                    np.put_along_axis(
                        g, np.expand_dims(idx, axis), np.expand_dims(out.grad, axis), axis
                    )
                    self._accumulate(g)

        out = Tensor._node(np.array(data, copy=True), (self,), backward)
        return out

    def min(self, axis: int | None = None) -> "Tensor":
        return self._extremum(axis, np.argmin, np.min)

    def max(self, axis: int | None = None) -> "Tensor":
        return self._extremum(axis, np.argmax, np.max)

    def norm(self) -> "Tensor":
        """Euclidean norm of the flattened tensor (zero-safe gradient)."""
        val = float(np.sqrt(np.sum(self.data * self.data)))

        def backward():
            if self.requires_grad and val > 0.0:
                self._accumulate(out.grad * self.data / val)

        out = Tensor._node(np.float64(val), (self,), backward)
        return out

    def softmax(self, axis: int = -1) -> "Tensor":
        shifted = self.data - self.data.max(axis=axis, keepdims=True)
        e = np.exp(shifted)
        s = e / e.sum(axis=axis, keepdims=True)

        def backward():
            if self.requires_grad:
                g = out.grad
                dot = np.sum(g * s, axis=axis, keepdims=True)
                self._accumulate((g - dot) * s)

        out = Tensor._node(s, (self,), backward)
        return out

    def reshape_scalar(self) -> "Tensor":
        """View a scalar tensor as a length-1 vector."""

        def backward():
            if self.requires_grad:
                self._accumulate(out.grad.reshape(self.data.shape))

        out = Tensor._node(self.data.reshape(1), (self,), backward)
        return out


def concat(tensors: Sequence[Tensor], axis: int = 0) -> Tensor:
    """Concatenate along an axis; gradient slices back to each input."""
    tensors = [Tensor._lift(t) for t in tensors]
    data = np.concatenate([t.data for t in tensors], axis=axis)
    sizes = [t.data.shape[axis] for t in tensors]
    offsets = np.cumsum([0] + sizes)

    def backward():
        g = out.grad
        for t, lo, hi in zip(tensors, offsets[:-1], offsets[1:]):
            if t.requires_grad:
                sl = [slice(None)] * g.ndim
                sl[axis] = slice(lo, hi)
                t._accumulate(g[tuple(sl)])

    out = Tensor._node(data, tuple(tensors), backward)
    return out


def stack_scalars(scalars: Sequence[Tensor]) -> Tensor:
    """Stack scalar tensors into a 1-d vector (used for max/mean over charts)."""
    return concat([s.reshape_scalar() for s in scalars], axis=0)


# -- spectral norm -----------------------------------------------------------


class PowerIterState:
    """Persistent left singular vector, warm-started across regularizer calls."""

    __slots__ = ("u",)

    def __init__(self):
        self.u: np.ndarray | None = None


def spectral_norm(w: Tensor, iters: int = 5, state: PowerIterState | None = None) -> Tensor:
    """Largest singular value of a matrix by power iteration.

    The returned scalar participates in the graph with gradient u v^T, the
    converged singular vectors held constant (envelope theorem). A zero
    matrix yields 0 with zero gradient.
    """
    if w.data.ndim != 2:
        raise ShapeMismatch(f"spectral_norm: expected a matrix, got shape {w.shape}")
    if iters < 1:
        raise ValueError("spectral_norm: iters must be >= 1")
    a = w.data
    rows = a.shape[0]
    if state is not None and state.u is not None and state.u.shape == (rows,):
        u = state.u
    else:
        u = np.full(rows, 1.0 / np.sqrt(rows))
    sigma = 0.0
    v = np.zeros(a.shape[1])
    for _ in range(iters):
        v = a.T @ u
        nv = np.linalg.norm(v)
        if nv == 0.0:
            out = Tensor._node(np.float64(0.0), (w,), lambda: None)
            return out
        v = v / nv
        u = a @ v
        nu = np.linalg.norm(u)
        if nu == 0.0:
            out = Tensor._node(np.float64(0.0), (w,), lambda: None)
            return out
        u = u / nu
    sigma = float(u @ a @ v)
    if state is not None:
        state.u = u
    uvT = np.outer(u, v)

    def backward():
        if w.requires_grad:
            w._accumulate(out.grad * uvT)

    out = Tensor._node(np.float64(sigma), (w,), backward)
    return out


# -- optimizer ---------------------------------------------------------------


class Adam:
    """Standard Adam with bias correction; zeroes grads after each step.

    Moment buffers are keyed by tensor identity so the parameter list can be
    rebuilt (e.g. after chart pruning) without losing state for survivors.
    """

    def __init__(self, params: Iterable[Tensor], lr: float = 3e-4,
                 beta1: float = 0.9, beta2: float = 0.999, eps: float = 1e-8):
        self.params = list(params)
        self.lr = lr
        self.beta1 = beta1
        self.beta2 = beta2
        self.eps = eps
        self.step_count = 0
        self._m: dict[int, np.ndarray] = {}
        self._v: dict[int, np.ndarray] = {}

    def set_params(self, params: Iterable[Tensor]) -> None:
        """Replace the parameter list, keeping moments of surviving tensors."""
        self.params = list(params)
        live = {id(p) for p in self.params}
        self._m = {k: v for k, v in self._m.items() if k in live}
        self._v = {k: v for k, v in self._v.items() if k in live}

    def zero_grad(self) -> None:
        for p in self.params:
            p.grad = None

    def step(self) -> None:
        self.step_count += 1
        t = self.step_count
        bc1 = 1.0 - self.beta1 ** t
        bc2 = 1.0 - self.beta2 ** t
        for p in self.params:
            if p.grad is None:
                raise ValueError("adam step: registered parameter has no gradient")
            g = p.grad
            key = id(p)
            m = self._m.get(key)
            if m is None:
                m = np.zeros_like(p.data)
                self._m[key] = m
                self._v[key] = np.zeros_like(p.data)
            v = self._v[key]
            m *= self.beta1
            m += (1.0 - self.beta1) * g
            v *= self.beta2
            v += (1.0 - self.beta2) * (g * g)
            p.data -= self.lr * (m / bc1) / (np.sqrt(v / bc2) + self.eps)
            p.grad = None


# -- checkpoint container ------------------------------------------------------

_MAGIC = b"CAE1"
_VERSION = 1


class CheckpointError(ValueError):
    """Malformed, truncated, or unsupported checkpoint file."""


def save_tensors(path, tensors: dict[str, np.ndarray]) -> None:
    """Write named arrays to the flat binary container.

    Layout: magic "CAE1", u32 version, then per-tensor records of
    (u32 name length, UTF-8 name, u32 rank, u64 dims, little-endian f64 data).
    """
    with open(path, "wb") as fh:
        fh.write(_MAGIC)
        fh.write(struct.pack("<I", _VERSION))
        for name, arr in tensors.items():
            arr = np.asarray(arr, dtype=np.float64)
            encoded = name.encode("utf-8")
            fh.write(struct.pack("<I", len(encoded)))
            fh.write(encoded)
            fh.write(struct.pack("<I", arr.ndim))
            for dim in arr.shape:
                fh.write(struct.pack("<Q", dim))
            fh.write(arr.astype("<f8").tobytes())


def load_tensors(path) -> dict[str, np.ndarray]:
    """Read back a container written by :func:`save_tensors`."""
    with open(path, "rb") as fh:
        blob = fh.read()
    if len(blob) < 8 or blob[:4] != _MAGIC:
        raise CheckpointError(f"{path}: bad magic, not a checkpoint container")
    (version,) = struct.unpack_from("<I", blob, 4)
    if version != _VERSION:
        raise CheckpointError(f"{path}: unsupported container version {version}")
    out: dict[str, np.ndarray] = {}
    pos = 8
    total = len(blob)

    def need(nbytes: int):
        if pos + nbytes > total:
            raise CheckpointError(f"{path}: truncated container")

    while pos < total:
        need(4)
        (name_len,) = struct.unpack_from("<I", blob, pos)
        pos += 4
        need(name_len)
        name = blob[pos:pos + name_len].decode("utf-8")
        pos += name_len
        need(4)
        (rank,) = struct.unpack_from("<I", blob, pos)
        pos += 4
        need(8 * rank)
        dims = struct.unpack_from(f"<{rank}Q", blob, pos) if rank else ()
        pos += 8 * rank
        count = int(np.prod(dims)) if rank else 1
        need(8 * count)
        data = np.frombuffer(blob, dtype="<f8", count=count, offset=pos).reshape(dims)
        pos += 8 * count
        out[name] = np.array(data, dtype=np.float64)
    return out
