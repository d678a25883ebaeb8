"""Minimal dense-tensor engine with reverse-mode automatic differentiation.

Covers exactly the operations the spherical interpolation model needs: float64
numpy arrays forward, exact vector-Jacobian products backward over an implicit
tape (parent references plus topological traversal). Complex quantities are
represented as doubled real channels by callers, so every rule here is real.

Broadcasting is deliberately restricted: elementwise ops require equal shapes
(or a 0-d operand); any other expansion goes through the explicit
`broadcast_lead` / `tile` ops so each gradient path is individually testable.

Checkpoint archives are little-endian: u32 tensor count, then per tensor a
u32 name length, UTF-8 name, u32 rank, u32 dims and f32 payload.
"""

from __future__ import annotations

import struct
from contextlib import contextmanager
from pathlib import Path

import numpy as np

from .errors import ShapeError

_grad_enabled = True


@contextmanager
def no_grad():
    """Disable tape recording; forward values are unchanged by this."""
    global _grad_enabled
    previous = _grad_enabled
    _grad_enabled = False
    try:
        yield
    finally:
        _grad_enabled = previous


class Tensor:
    """A dense float64 array plus an optional gradient buffer."""

    __slots__ = ("data", "grad", "requires_grad", "name", "_parents", "_vjp")

    def __init__(self, data, requires_grad=False, name=None):
        self.data = np.asarray(data, dtype=float)
        self.requires_grad = bool(requires_grad) and _grad_enabled
        self.grad = None
        self.name = name
        self._parents = ()
        self._vjp = None

    @property
    def shape(self):
        return self.data.shape

    def zero_grad(self):
        self.grad = None

    def detach(self) -> "Tensor":
        return Tensor(self.data)

    def item(self) -> float:
        return float(self.data)

    def __repr__(self):
        tag = f" name={self.name}" if self.name else ""
        return f"Tensor(shape={self.shape}, grad={self.requires_grad}{tag})"

    # operator sugar used pervasively by the model code
    def __add__(self, other):
        return add(self, other)

    def __sub__(self, other):
        return sub(self, other)

    def __mul__(self, other):
        return mul(self, other)

    def __truediv__(self, other):
        return div(self, other)

    def __neg__(self):
        return neg(self)

    def __matmul__(self, other):
        return matmul(self, other)


def as_tensor(value) -> Tensor:
    return value if isinstance(value, Tensor) else Tensor(value)


def _make(data, parents, vjp) -> Tensor:
    out = Tensor(data)
    if _grad_enabled and any(p.requires_grad for p in parents):
        out.requires_grad = True
        out._parents = tuple(parents)
        out._vjp = vjp
    return out


def _require_same_shape(a: Tensor, b: Tensor, op: str) -> None:
    if a.shape != b.shape and a.shape != () and b.shape != ():
        raise ShapeError(f"{op}: shapes {a.shape} and {b.shape} differ")


def _unscale(adjoint: np.ndarray, operand: Tensor) -> np.ndarray:
    """Reduce an adjoint onto a 0-d operand."""
    return adjoint.sum() if operand.shape == () else adjoint


# ---------------------------------------------------------------------------
# arithmetic


def add(a, b) -> Tensor:
    a, b = as_tensor(a), as_tensor(b)
    _require_same_shape(a, b, "add")
    return _make(
        a.data + b.data, (a, b), lambda g: (_unscale(g, a), _unscale(g, b))
    )


def neg(a) -> Tensor:
    a = as_tensor(a)
    return _make(-a.data, (a,), lambda g: (-g,))


def sub(a, b) -> Tensor:
    return add(a, neg(b))


def mul(a, b) -> Tensor:
    a, b = as_tensor(a), as_tensor(b)
    _require_same_shape(a, b, "mul")
    return _make(
        a.data * b.data,
        (a, b),
        lambda g: (_unscale(g * b.data, a), _unscale(g * a.data, b)),
    )


def div(a, b) -> Tensor:
    a, b = as_tensor(a), as_tensor(b)
    _require_same_shape(a, b, "div")
    return _make(
        a.data / b.data,
        (a, b),
        lambda g: (
            _unscale(g / b.data, a),
            _unscale(-g * a.data / (b.data * b.data), b),
        ),
    )


def exp(a) -> Tensor:
    a = as_tensor(a)
    out = np.exp(a.data)
    return _make(out, (a,), lambda g: (g * out,))


def log(a) -> Tensor:
    a = as_tensor(a)
    return _make(np.log(a.data), (a,), lambda g: (g / a.data,))


def relu(a) -> Tensor:
    a = as_tensor(a)
    mask = a.data > 0
    return _make(np.where(mask, a.data, 0.0), (a,), lambda g: (g * mask,))


def softplus(a) -> Tensor:
    a = as_tensor(a)
    out = np.logaddexp(0.0, a.data)
    sig = 0.5 * (1.0 + np.tanh(0.5 * a.data))
    return _make(out, (a,), lambda g: (g * sig,))


# ---------------------------------------------------------------------------
# shape ops


def reshape(a, shape) -> Tensor:
    a = as_tensor(a)
    shape = tuple(shape)
    return _make(a.data.reshape(shape), (a,), lambda g: (g.reshape(a.shape),))


def broadcast_lead(a, leading) -> Tensor:
    """Expand by prepending `leading` axes (the only implicit-style expansion)."""
    a = as_tensor(a)
    leading = tuple(leading)
    target = leading + a.shape
    axes = tuple(range(len(leading)))
    return _make(
        np.broadcast_to(a.data, target).copy(),
        (a,),
        lambda g: (g.sum(axis=axes) if axes else g,),
    )


def tile(a, reps) -> Tensor:
    """np.tile semantics; the gradient sums over every repetition."""
    a = as_tensor(a)
    reps = tuple(int(r) for r in reps)
    if len(reps) < a.data.ndim:
        reps = (1,) * (a.data.ndim - len(reps)) + reps
    base = (1,) * (len(reps) - a.data.ndim) + a.shape

    def vjp(g):
        inter = []
        for r, s in zip(reps, base):
            inter.extend((r, s))
        folded = g.reshape(inter).sum(axis=tuple(range(0, 2 * len(reps), 2)))
        return (folded.reshape(a.shape),)

    return _make(np.tile(a.data, reps), (a,), vjp)


def transpose(a, axes) -> Tensor:
    """Permute axes; gradient applies the inverse permutation."""
    a = as_tensor(a)
    axes = tuple(axes)
    inverse = tuple(int(i) for i in np.argsort(axes))
    return _make(
        np.ascontiguousarray(a.data.transpose(axes)),
        (a,),
        lambda g: (g.transpose(inverse),),
    )


def concat(tensors, axis=0) -> Tensor:
    tensors = [as_tensor(t) for t in tensors]
    sizes = [t.shape[axis] for t in tensors]
    splits = np.cumsum(sizes)[:-1]

    def vjp(g):
        return tuple(np.split(g, splits, axis=axis))

    return _make(np.concatenate([t.data for t in tensors], axis=axis), tensors, vjp)


def narrow(a, axis, start, length) -> Tensor:
    """Contiguous slice [start, start+length) along one axis."""
    a = as_tensor(a)
    if not 0 <= start <= start + length <= a.shape[axis]:
        raise ShapeError(
            f"narrow: [{start}, {start + length}) outside axis of size {a.shape[axis]}"
        )
    index = [slice(None)] * a.data.ndim
    index[axis] = slice(start, start + length)
    index = tuple(index)

    def vjp(g):
        full = np.zeros(a.shape)
        full[index] = g
        return (full,)

    return _make(a.data[index].copy(), (a,), vjp)


def tsum(a, axis=None, keepdims=False) -> Tensor:
    a = as_tensor(a)

    def vjp(g):
        if axis is None:
            return (np.broadcast_to(g, a.shape).copy(),)
        g_exp = g if keepdims else np.expand_dims(g, axis)
        return (np.broadcast_to(g_exp, a.shape).copy(),)

    return _make(a.data.sum(axis=axis, keepdims=keepdims), (a,), vjp)


def tmean(a, axis=None, keepdims=False) -> Tensor:
    a = as_tensor(a)
    count = a.data.size if axis is None else a.shape[axis]

    def vjp(g):
        if axis is None:
            return (np.broadcast_to(g / count, a.shape).copy(),)
        g_exp = g if keepdims else np.expand_dims(g, axis)
        return (np.broadcast_to(g_exp / count, a.shape).copy(),)

    return _make(a.data.mean(axis=axis, keepdims=keepdims), (a,), vjp)


# ---------------------------------------------------------------------------
# linear algebra


def matmul(a, b) -> Tensor:
    """Matrix product; either both 2-D or stacked with identical batch dims
    (one operand may be plain 2-D, applied across the other's batch)."""
    a, b = as_tensor(a), as_tensor(b)
    if a.data.ndim < 2 or b.data.ndim < 2:
        raise ShapeError(f"matmul: operands must be >= 2-D, got {a.shape}, {b.shape}")
    if (
        a.data.ndim > 2
        and b.data.ndim > 2
        and a.shape[:-2] != b.shape[:-2]
    ):
        raise ShapeError(f"matmul: batch dims {a.shape} vs {b.shape} differ")
    out = a.data @ b.data

    def vjp(g):
        ga = g @ np.swapaxes(b.data, -1, -2)
        gb = np.swapaxes(a.data, -1, -2) @ g
        if ga.ndim > a.data.ndim:  # a was 2-D under a batched b
            ga = ga.reshape((-1,) + ga.shape[-2:]).sum(axis=0)
        if gb.ndim > b.data.ndim:
            gb = gb.reshape((-1,) + gb.shape[-2:]).sum(axis=0)
        return (ga, gb)

    return _make(out, (a, b), vjp)


def linmap(matrix: np.ndarray, x) -> Tensor:
    """Apply a constant matrix to the last axis: out[..., p] = M[p, q] x[..., q].

    Used for the precomputed spherical-harmonic analysis/synthesis maps; the
    matrix itself is not differentiated.
    """
    x = as_tensor(x)
    matrix = np.asarray(matrix, dtype=float)
    if matrix.ndim != 2 or x.shape[-1] != matrix.shape[1]:
        raise ShapeError(f"linmap: matrix {matrix.shape} vs input {x.shape}")
    return _make(x.data @ matrix.T, (x,), lambda g: (g @ matrix,))


def conv1d(x, w) -> Tensor:
    """1-D convolution along the last axis with zero 'same' padding.

    x: (..., c_in, length), w: (c_out, c_in, k) with odd k.
    """
    x, w = as_tensor(x), as_tensor(w)
    c_out, c_in, k = w.shape
    if k % 2 != 1:
        raise ShapeError("conv1d kernel length must be odd")
    if x.data.ndim < 2 or x.shape[-2] != c_in:
        raise ShapeError(f"conv1d: input {x.shape} incompatible with kernel {w.shape}")
    half = k // 2
    length = x.shape[-1]
    pad_spec = [(0, 0)] * (x.data.ndim - 1) + [(half, half)]
    xp = np.pad(x.data, pad_spec)
    out = np.zeros(x.shape[:-2] + (c_out, length))
    for offset in range(k):
        window = xp[..., offset : offset + length]  # (..., c_in, length)
        out += np.einsum("oi,...il->...ol", w.data[:, :, offset], window)

    def vjp(g):
        gx = np.zeros_like(xp)
        gw = np.zeros_like(w.data)
        g_flat = g.reshape(-1, c_out, length)
        for offset in range(k):
            window = xp[..., offset : offset + length]
            gw[:, :, offset] = np.einsum(
                "bol,bil->oi", g_flat, window.reshape(-1, c_in, length)
            )
            gx[..., offset : offset + length] += np.einsum(
                "oi,...ol->...il", w.data[:, :, offset], g
            )
        gx = gx[..., half : half + length] if half else gx
        return (gx, gw)

    return _make(out, (x, w), vjp)


# ---------------------------------------------------------------------------
# backward


def _topological_order(root: Tensor) -> list[Tensor]:
    order: list[Tensor] = []
    seen: set[int] = set()
    stack: list[tuple[Tensor, bool]] = [(root, False)]
    while stack:
        node, expanded = stack.pop()
        if expanded:
            order.append(node)
            continue
        if id(node) in seen:
            continue
        seen.add(id(node))
        stack.append((node, True))
        for parent in node._parents:
            if parent.requires_grad:
                stack.append((parent, False))
    return order


def backward(loss: Tensor) -> None:
    """Accumulate d(loss)/d(tensor) into .grad for every reachable tensor that
    requires gradients. Repeated calls accumulate."""
    if loss.shape != ():
        raise ValueError(f"loss must be a scalar, got shape {loss.shape}")
    if not loss.requires_grad:
        return
    order = _topological_order(loss)
    adjoints: dict[int, np.ndarray] = {id(loss): np.ones(())}
    for node in reversed(order):
        adj = adjoints.get(id(node))
        if adj is None or node._vjp is None:
            continue
        for parent, parent_adj in zip(node._parents, node._vjp(adj)):
            if parent_adj is None or not parent.requires_grad:
                continue
            parent_adj = np.asarray(parent_adj)
            if id(parent) in adjoints:
                adjoints[id(parent)] = adjoints[id(parent)] + parent_adj
            else:
                adjoints[id(parent)] = parent_adj
    for node in order:
        adj = adjoints.get(id(node))
        if adj is None or not node.requires_grad:
            continue
        node.grad = adj.copy() if node.grad is None else node.grad + adj


# ---------------------------------------------------------------------------
# named-tensor archives (checkpoints)


def save_tensors(path: str | Path, tensors: dict[str, np.ndarray]) -> None:
    parts = [struct.pack("<I", len(tensors))]
    for name, array in tensors.items():
        encoded = name.encode("utf-8")
        array = np.asarray(array)
        parts.append(struct.pack("<I", len(encoded)))
        parts.append(encoded)
        parts.append(struct.pack("<I", array.ndim))
        parts.append(struct.pack(f"<{array.ndim}I", *array.shape))
        parts.append(np.ascontiguousarray(array, dtype="<f4").tobytes())
    Path(path).write_bytes(b"".join(parts))


def load_tensors(path: str | Path) -> dict[str, np.ndarray]:
    data = Path(path).read_bytes()
    pos = 0

    def take(fmt):
        nonlocal pos
        size = struct.calcsize(fmt)
        if pos + size > len(data):
            raise ValueError(f"{path}: truncated tensor archive at byte {pos}")
        out = struct.unpack_from("<" + fmt, data, pos)
        pos += size
        return out

    (count,) = take("I")
    out: dict[str, np.ndarray] = {}
    for _ in range(count):
        (name_len,) = take("I")
        name = data[pos : pos + name_len].decode("utf-8")
        pos += name_len
        (rank,) = take("I")
        dims = take(f"{rank}I")
        n_values = int(np.prod(dims)) if rank else 1
        raw = np.frombuffer(data, dtype="<f4", count=n_values, offset=pos)
        pos += 4 * n_values
        out[name] = raw.reshape(dims).astype(float)
    return out
