"""Dense tensors with reverse-mode gradients, Adam, and a finite-difference checker.

Every differentiable quantity in the package is a :class:`Tensor`.  Operations
are plain functions; while a :class:`Graph` is active (``with Graph() as g``)
each operation whose inputs require gradients appends one node to the graph,
and :func:`backward` replays those nodes in reverse.  Outside a graph nothing
is recorded, which is what inference uses.
"""

from __future__ import annotations

import math
import weakref
from dataclasses import dataclass, field
from typing import Callable, Sequence

import numpy as np

DEFAULT_DTYPE = np.float32

# Row block used by ``linear``. Every product is evaluated on zero-padded blocks
# of exactly this many rows so that a row's result does not depend on how many
# other rows share the call (BLAS picks different kernels for ragged edges).
MATMUL_BLOCK = 512


class NumericError(FloatingPointError):
    """A tensor picked up NaN or Inf."""


class GraphError(RuntimeError):
    """backward() was asked about a value the graph did not produce."""


_ACTIVE: list["Graph"] = []


class Tensor:
    __slots__ = ("data", "requires_grad", "grad", "_node", "__weakref__")

    def __init__(self, data, requires_grad: bool = False, dtype=None):
        arr = np.asarray(data, dtype=dtype) if dtype is not None else np.asarray(data)
        if arr.dtype.kind != "f":
            arr = arr.astype(DEFAULT_DTYPE)
        self.data = arr
        self.requires_grad = requires_grad
        self.grad: np.ndarray | None = None
        self._node: _Node | None = None

    @property
    def shape(self) -> tuple[int, ...]:
        return self.data.shape

    @property
    def dtype(self):
        return self.data.dtype

    def numpy(self) -> np.ndarray:
        return self.data

    def item(self) -> float:
        return float(self.data)

    def __add__(self, other: "Tensor") -> "Tensor":
        return add(self, other)

    def __repr__(self) -> str:
        return f"Tensor(shape={self.shape}, dtype={self.dtype}, requires_grad={self.requires_grad})"


@dataclass(eq=False)
class _Node:
    # The output is held weakly so that tensor <-> node is not a reference
    # cycle; otherwise every step's activations wait for the cyclic GC.
    # An output that is gone had no consumers and receives no gradient.
    out_ref: weakref.ref
    parents: tuple[Tensor, ...]
    backward: Callable[[np.ndarray], Sequence[np.ndarray | None]]
    op: str

    @property
    def out(self) -> Tensor | None:
        return self.out_ref()


class Graph:
    """Execution-order record of the operations run while it is active."""

    def __init__(self):
        self.nodes: list[_Node] = []

    def __enter__(self) -> "Graph":
        _ACTIVE.append(self)
        return self

    def __exit__(self, *exc) -> None:
        _ACTIVE.remove(self)

    def __len__(self) -> int:
        return len(self.nodes)


def as_tensor(x, dtype=None) -> Tensor:
    if isinstance(x, Tensor):
        return x
    return Tensor(x, dtype=dtype)


def _check_finite(arr: np.ndarray, op: str) -> None:
    if not np.isfinite(arr).all():
        raise NumericError(f"non-finite value produced by {op}")


def _make(out: np.ndarray, parents: Sequence[Tensor], backward_fn, op: str) -> Tensor:
    _check_finite(out, op)
    t = Tensor(out)
    if _ACTIVE and any(p.requires_grad for p in parents):
        t.requires_grad = True
        node = _Node(weakref.ref(t), tuple(parents), backward_fn, op)
        t._node = node
        _ACTIVE[-1].nodes.append(node)
    return t


# ---------------------------------------------------------------------------
# operations


def conv2d(x: Tensor, weight: Tensor, bias: Tensor, padding: int) -> Tensor:
    """Same-size, stride-1 cross-correlation with zero padding.

    ``x`` is C_in x H x W or N x C_in x H x W; the weight is C_out x C_in x k x k.
    """
    x, weight, bias = as_tensor(x), as_tensor(weight), as_tensor(bias)
    unbatched = x.data.ndim == 3
    xd = x.data[None] if unbatched else x.data
    if xd.ndim != 4:
        raise ValueError(f"conv2d expects a 3-D or 4-D input, got shape {x.shape}")
    c_out, c_in, kh, kw = weight.shape
    if kh != kw or kh % 2 == 0:
        raise ValueError(f"conv2d needs an odd square kernel, got {kh}x{kw}")
    if padding != (kh - 1) // 2:
        raise ValueError(f"padding must be {(kh - 1) // 2} for a {kh}x{kh} kernel")
    if xd.shape[1] != c_in:
        raise ValueError(f"conv2d channel mismatch: input has {xd.shape[1]}, weight expects {c_in}")
    if bias.shape != (c_out,):
        raise ValueError(f"conv2d bias must have shape ({c_out},), got {bias.shape}")
    n, _, h, w = xd.shape
    k = kh
    p = padding
    xp = np.pad(xd, ((0, 0), (0, 0), (p, p), (p, p)))
    # columns ordered (c_in, ky, kx) to match weight.reshape(c_out, -1)
    win = np.lib.stride_tricks.sliding_window_view(xp, (k, k), axis=(2, 3))  # n,c,h,w,k,k
    cols = np.ascontiguousarray(win.transpose(0, 2, 3, 1, 4, 5)).reshape(n * h * w, c_in * k * k)
    wmat = weight.data.reshape(c_out, -1)
    out = cols @ wmat.T + bias.data
    out = out.reshape(n, h, w, c_out).transpose(0, 3, 1, 2)
    out = np.ascontiguousarray(out[0] if unbatched else out)

    def backward(g):
        g4 = g[None] if unbatched else g
        gm = g4.transpose(0, 2, 3, 1).reshape(n * h * w, c_out)
        gw = (gm.T @ cols).reshape(weight.shape)
        gb = gm.sum(axis=0)
        gx = None
        if x.requires_grad:
            gcols = (gm @ wmat).reshape(n, h, w, c_in, k, k)
            gxp = np.zeros_like(xp)
            for ky in range(k):
                for kx in range(k):
                    gxp[:, :, ky:ky + h, kx:kx + w] += gcols[:, :, :, :, ky, kx].transpose(0, 3, 1, 2)
            gx = gxp[:, :, p:p + h, p:p + w]
            if unbatched:
                gx = gx[0]
        return gx, gw, gb

    return _make(out, (x, weight, bias), backward, "conv2d")


def _blocked_matmul(a: np.ndarray, bt: np.ndarray) -> np.ndarray:
    rows = a.shape[0]
    out = np.empty((rows, bt.shape[1]), dtype=np.result_type(a, bt))
    buf = None
    for s in range(0, rows, MATMUL_BLOCK):
        e = min(s + MATMUL_BLOCK, rows)
        if e - s == MATMUL_BLOCK:
            out[s:e] = a[s:e] @ bt
        else:
            if buf is None:
                buf = np.zeros((MATMUL_BLOCK, a.shape[1]), dtype=a.dtype)
            buf[: e - s] = a[s:e]
            out[s:e] = (buf @ bt)[: e - s]
    return out


def linear(x: Tensor, weight: Tensor, bias: Tensor) -> Tensor:
    """Row-wise affine map ``x @ weight.T + bias`` for x of shape B x D_in."""
    x, weight, bias = as_tensor(x), as_tensor(weight), as_tensor(bias)
    if x.data.ndim != 2 or weight.data.ndim != 2:
        raise ValueError("linear expects a 2-D input and a 2-D weight")
    if x.shape[1] != weight.shape[1]:
        raise ValueError(f"linear dimension mismatch: input width {x.shape[1]}, weight expects {weight.shape[1]}")
    if bias.shape != (weight.shape[0],):
        raise ValueError(f"linear bias must have shape ({weight.shape[0]},), got {bias.shape}")
    out = _blocked_matmul(x.data, weight.data.T) + bias.data

    def backward(g):
        gx = g @ weight.data if x.requires_grad else None
        return gx, g.T @ x.data, g.sum(axis=0)

    return _make(out, (x, weight, bias), backward, "linear")


def relu(x: Tensor) -> Tensor:
    x = as_tensor(x)
    mask = x.data > 0
    out = x.data * mask

    def backward(g):
        return (g * mask,)

    return _make(out, (x,), backward, "relu")


def add(a: Tensor, b: Tensor) -> Tensor:
    a, b = as_tensor(a), as_tensor(b)
    if a.shape != b.shape:
        raise ValueError(f"add needs equal shapes, got {a.shape} and {b.shape}")
    out = a.data + b.data
    return _make(out, (a, b), lambda g: (g, g), "add")


def concat(tensors: Sequence[Tensor], axis: int) -> Tensor:
    ts = [as_tensor(t) for t in tensors]
    ref = ts[0].data
    ax = axis % ref.ndim
    for t in ts[1:]:
        if t.data.ndim != ref.ndim or any(
            t.shape[d] != ref.shape[d] for d in range(ref.ndim) if d != ax
        ):
            raise ValueError(f"concat shape mismatch off axis {axis}: {ref.shape} vs {t.shape}")
    out = np.concatenate([t.data for t in ts], axis=ax)
    bounds = np.cumsum([0] + [t.shape[ax] for t in ts])

    def backward(g):
        idx = [slice(None)] * g.ndim
        grads = []
        for lo, hi in zip(bounds[:-1], bounds[1:]):
            idx[ax] = slice(lo, hi)
            grads.append(g[tuple(idx)])
        return grads

    return _make(out, ts, backward, "concat")


def concat_channels(a: Tensor, b: Tensor) -> Tensor:
    """Stack channels of ``a`` then ``b``.

    The channel axis is the last one for feature rows (Q x D) and vectors, and
    axis -3 for maps (C x H x W or N x C x H x W).
    """
    a = as_tensor(a)
    axis = -3 if a.data.ndim >= 3 else -1
    return concat([a, b], axis=axis)


def global_average_pool(x: Tensor) -> Tensor:
    """Per-channel mean over the two trailing spatial axes."""
    x = as_tensor(x)
    if x.data.ndim not in (3, 4):
        raise ValueError(f"global_average_pool expects C x H x W or N x C x H x W, got {x.shape}")
    h, w = x.shape[-2:]
    out = x.data.sum(axis=(-2, -1)) / (h * w)

    def backward(g):
        return (np.broadcast_to(g[..., None, None] / (h * w), x.shape).astype(x.dtype),)

    return _make(out, (x,), backward, "global_average_pool")


def l1_loss(pred: Tensor, target) -> Tensor:
    """Mean absolute difference; the target is treated as a constant."""
    pred = as_tensor(pred)
    tgt = target.data if isinstance(target, Tensor) else np.asarray(target, dtype=pred.dtype)
    if pred.shape != tgt.shape:
        raise ValueError(f"l1_loss shape mismatch: {pred.shape} vs {tgt.shape}")
    diff = pred.data - tgt
    n = diff.size
    out = np.asarray(np.abs(diff).sum() / n, dtype=pred.dtype)

    def backward(g):
        return (np.sign(diff).astype(pred.dtype) * (g / n),)

    return _make(out, (pred,), backward, "l1_loss")


def take_rows(x: Tensor, index: np.ndarray) -> Tensor:
    """Gather rows ``x[index]`` of a 2-D tensor."""
    x = as_tensor(x)
    index = np.asarray(index, dtype=np.intp)
    out = x.data[index]

    def backward(g):
        return (_scatter_rows(g, index, x.shape[0]),)

    return _make(out, (x,), backward, "take_rows")


def _scatter_rows(g: np.ndarray, index: np.ndarray, rows: int) -> np.ndarray:
    """Sum rows of ``g`` into ``rows`` buckets given by ``index`` (stable order)."""
    out = np.zeros((rows,) + g.shape[1:], dtype=g.dtype)
    if index.size == 0:
        return out
    order = np.argsort(index, kind="stable")
    sidx = index[order]
    starts = np.flatnonzero(np.r_[True, sidx[1:] != sidx[:-1]])
    out[sidx[starts]] = np.add.reduceat(g[order], starts, axis=0)
    return out


def map_to_rows(x: Tensor) -> Tensor:
    """Reshape an N x C x H x W map into (N*H*W) x C feature rows."""
    x = as_tensor(x)
    n, c, h, w = x.shape
    out = np.ascontiguousarray(x.data.transpose(0, 2, 3, 1)).reshape(n * h * w, c)

    def backward(g):
        return (np.ascontiguousarray(g.reshape(n, h, w, c).transpose(0, 3, 1, 2)),)

    return _make(out, (x,), backward, "map_to_rows")


def unfold3x3(x: Tensor) -> Tensor:
    """Replace each code by its edge-replicated 3x3 neighbourhood.

    Output channel ``c*9 + k`` holds channel ``c`` at neighbour ``k``, with the
    neighbours enumerated row-major from the top-left.
    """
    x = as_tensor(x)
    unbatched = x.data.ndim == 3
    xd = x.data[None] if unbatched else x.data
    n, c, h, w = xd.shape
    xp = np.pad(xd, ((0, 0), (0, 0), (1, 1), (1, 1)), mode="edge")
    out = np.empty((n, c, 9, h, w), dtype=xd.dtype)
    for k in range(9):
        dy, dx = divmod(k, 3)
        out[:, :, k] = xp[:, :, dy:dy + h, dx:dx + w]
    out = out.reshape(n, c * 9, h, w)
    if unbatched:
        out = out[0]

    def backward(g):
        g5 = (g[None] if unbatched else g).reshape(n, c, 9, h, w)
        gp = np.zeros_like(xp)
        for k in range(9):
            dy, dx = divmod(k, 3)
            gp[:, :, dy:dy + h, dx:dx + w] += g5[:, :, k]
        # fold the replicated border back onto the edge pixels
        gp[:, :, 1, :] += gp[:, :, 0, :]
        gp[:, :, h, :] += gp[:, :, h + 1, :]
        gp[:, :, :, 1] += gp[:, :, :, 0]
        gp[:, :, :, w] += gp[:, :, :, w + 1]
        gx = gp[:, :, 1:h + 1, 1:w + 1]
        return (gx[0] if unbatched else gx,)

    return _make(out, (x,), backward, "unfold3x3")


def blend(x: Tensor, weights: np.ndarray) -> Tensor:
    """Weighted sum over K stacked groups of rows.

    ``x`` holds K*Q rows (group-major); ``weights`` is K x Q.  Row q of the
    result is ``sum_k weights[k, q] * x[k*Q + q]``, accumulated in k order.
    """
    x = as_tensor(x)
    weights = np.asarray(weights, dtype=x.dtype)
    k, q = weights.shape
    if x.shape[0] != k * q:
        raise ValueError(f"blend expects {k * q} rows, got {x.shape[0]}")
    xs = x.data.reshape(k, q, -1)
    out = weights[0][:, None] * xs[0]
    for i in range(1, k):
        out = out + weights[i][:, None] * xs[i]

    def backward(g):
        return ((weights[:, :, None] * g[None]).reshape(x.shape),)

    return _make(out, (x,), backward, "blend")


def stop_gradient(x: Tensor) -> Tensor:
    return Tensor(as_tensor(x).data)


# ---------------------------------------------------------------------------
# parameters, gradients and optimisation


@dataclass
class ParamStore:
    """Named parameters plus their gradients and Adam moments."""

    params: dict[str, Tensor] = field(default_factory=dict)
    grads: dict[str, np.ndarray] = field(default_factory=dict)
    m: dict[str, np.ndarray] = field(default_factory=dict)
    v: dict[str, np.ndarray] = field(default_factory=dict)
    t: int = 0

    def add(self, name: str, value: np.ndarray) -> Tensor:
        if name in self.params:
            raise KeyError(f"parameter {name!r} already exists")
        p = Tensor(np.array(value), requires_grad=True)
        self.params[name] = p
        return p

    def __getitem__(self, name: str) -> Tensor:
        return self.params[name]

    def __contains__(self, name: str) -> bool:
        return name in self.params

    def names(self, prefix: str = "") -> list[str]:
        return [n for n in self.params if n.startswith(prefix)]

    def zero_grad(self) -> None:
        self.grads.clear()
        for p in self.params.values():
            p.grad = None

    def astype(self, dtype) -> "ParamStore":
        out = ParamStore()
        for name, p in self.params.items():
            out.add(name, p.data.astype(dtype))
        return out

    def state(self) -> dict[str, np.ndarray]:
        return {name: p.data for name, p in self.params.items()}

    def num_params(self) -> int:
        return sum(p.data.size for p in self.params.values())


def backward(graph: Graph, loss: Tensor, store: ParamStore | None = None, accumulate: bool = False) -> None:
    """Fill ``store.grads`` with d(loss)/d(parameter) for every parameter.

    Gradients of intermediate values are released as soon as they have been
    propagated.  With ``accumulate`` the new gradients are added to those
    already in the store instead of replacing them.
    """
    if loss.data.size != 1:
        raise GraphError(f"loss must be a scalar, got shape {loss.shape}")
    if loss._node is None or loss._node not in graph.nodes:
        raise GraphError("loss was not produced by this graph")
    params = list(store.params.values()) if store is not None else []
    for p in params:
        p.grad = None
    loss.grad = np.ones_like(loss.data)
    for node in reversed(graph.nodes):
        out = node.out
        if out is None or out.grad is None:
            continue
        g = out.grad
        for parent, pg in zip(node.parents, node.backward(g)):
            if pg is None or not parent.requires_grad:
                continue
            if parent.grad is None:
                parent.grad = np.asarray(pg, dtype=parent.dtype)
            else:
                parent.grad = parent.grad + pg
        if out._node is not None:
            out.grad = None
    if store is None:
        return
    for name, p in store.params.items():
        g = p.grad if p.grad is not None else np.zeros_like(p.data)
        p.grad = None
        if accumulate and name in store.grads:
            store.grads[name] = store.grads[name] + g
        else:
            store.grads[name] = g


def adam_step(
    store: ParamStore,
    lr: float,
    beta1: float = 0.9,
    beta2: float = 0.999,
    eps: float = 1e-8,
    names: Sequence[str] | None = None,
) -> None:
    """One bias-corrected Adam update of the parameters in ``store``."""
    names = list(store.params) if names is None else list(names)
    missing = [n for n in names if n not in store.grads]
    if missing:
        raise KeyError(f"no gradient for parameter(s): {', '.join(missing)}")
    store.t += 1
    t = store.t
    c1 = 1.0 - beta1 ** t
    c2 = 1.0 - beta2 ** t
    for name in names:
        p = store.params[name]
        g = store.grads[name]
        m = store.m.get(name)
        v = store.v.get(name)
        if m is None:
            m = np.zeros_like(p.data)
            v = np.zeros_like(p.data)
        m = beta1 * m + (1.0 - beta1) * g
        v = beta2 * v + (1.0 - beta2) * g * g
        store.m[name] = m.astype(p.dtype)
        store.v[name] = v.astype(p.dtype)
        update = lr * (m / c1) / (np.sqrt(v / c2) + eps)
        p.data = (p.data - update).astype(p.dtype)
        _check_finite(p.data, f"adam_step({name})")


def finite_diff_check(fn: Callable[[ParamStore], Tensor], params: ParamStore, h: float = 1e-4) -> float:
    """Worst relative error between backward() and central differences.

    ``fn`` builds a scalar loss from the parameters in ``params``; it must be
    deterministic.  Parameters should be 64-bit.  The denominator of each
    relative error is ``max(|analytic|, |numeric|, 1e-8)``.
    """
    with Graph() as g:
        loss = fn(params)
    if not math.isfinite(loss.item()):
        raise NumericError("loss is not finite")
    backward(g, loss, params)
    worst = 0.0
    for name, p in params.params.items():
        analytic = params.grads[name]
        flat = p.data.reshape(-1)
        for i in range(flat.size):
            orig = flat[i]
            flat[i] = orig + h
            fp = fn(params).item()
            flat[i] = orig - h
            fm = fn(params).item()
            flat[i] = orig
            if not (math.isfinite(fp) and math.isfinite(fm)):
                raise NumericError(f"loss not finite while perturbing {name}[{i}]")
            numeric = (fp - fm) / (2.0 * h)
            a = float(analytic.reshape(-1)[i])
            err = abs(a - numeric) / max(abs(a), abs(numeric), 1e-8)
            worst = max(worst, err)
    return worst
