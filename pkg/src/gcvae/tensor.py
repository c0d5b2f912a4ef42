"""Dense float64 tensors with tape-based reverse-mode automatic differentiation.

The primitive set is deliberately small: exactly the operations the
encoder/decoder models and the loss terms need. Every primitive runs through
``forward_primitive``; when an active :class:`Tape` is tracking at least one
input, a node is appended and ``backward`` later walks the tape in strictly
decreasing creation order, accumulating vector-Jacobian products.

Buffers are contiguous row-major float64 numpy arrays. There is no
broadcasting beyond scalar*tensor (``scalar_mul``) and bias addition over the
channel axis (``add`` with a rank-1 second operand).
"""

import struct
import weakref

import numpy as np

from .errors import ContractError, DomainError, FormatError, ShapeError

Array = np.ndarray

OP_KINDS = (
    "matmul",
    "conv2d",
    "conv_transpose2d",
    "maxpool2d",
    "upsample2x",
    "batchnorm2d",
    "relu",
    "sigmoid",
    "exp",
    "log",
    "add",
    "sub",
    "mul",
    "scalar_mul",
    "square",
    "reduce_sum",
    "reduce_mean",
    "reshape",
)


def _contig(arr: Array) -> Array:
    # np.ascontiguousarray would promote 0-d arrays to shape (1,); scalars
    # must stay 0-d (losses are shape-() tensors).
    if arr.flags["C_CONTIGUOUS"]:
        return arr
    return np.ascontiguousarray(arr)


def _as_f64(data) -> Array:
    return _contig(np.asarray(data, dtype=np.float64))


class Tensor:
    """A shape + contiguous float64 buffer, optionally tied to a tape node."""

    __slots__ = ("data", "grad", "node_id", "_tape")

    def __init__(self, data, node_id=None):
        self.data = _as_f64(data)
        self.grad = None
        self.node_id = node_id
        self._tape = None

    @property
    def shape(self):
        return tuple(self.data.shape)

    def item(self) -> float:
        if self.data.size != 1:
            raise ContractError(f"item() needs a one-element tensor, got shape {self.shape}")
        return float(self.data.reshape(()))

    def __repr__(self):
        return f"Tensor(shape={self.shape}, node_id={self.node_id})"


def _owned_by(t: Tensor, tape) -> bool:
    return t.node_id is not None and t._tape is not None and t._tape() is tape


class Node:
    __slots__ = ("kind", "input_ids", "inputs", "attrs", "saved", "out_id", "out_data")

    def __init__(self, kind, input_ids, inputs, attrs, saved, out_id, out_data):
        self.kind = kind
        self.input_ids = input_ids
        self.inputs = inputs      # forward input buffers (references, not copies)
        self.attrs = attrs
        self.saved = saved        # context captured by the forward pass
        self.out_id = out_id
        self.out_data = out_data


_TAPE_STACK = []


def active_tape():
    return _TAPE_STACK[-1] if _TAPE_STACK else None


class Tape:
    """Linear record of primitive applications, in creation order.

    Use as a context manager; ``watch`` registers leaf tensors (parameters)
    whose gradients ``backward`` should report.
    """

    def __init__(self):
        self.nodes = []
        self._watched = {}  # node_id -> Tensor

    def __enter__(self):
        _TAPE_STACK.append(self)
        return self

    def __exit__(self, exc_type, exc, tb):
        popped = _TAPE_STACK.pop()
        assert popped is self
        return False

    def watch(self, t: Tensor) -> Tensor:
        if _owned_by(t, self):
            return t
        nid = len(self.nodes)
        self.nodes.append(Node("leaf", (), (), {}, {}, nid, t.data))
        t.node_id = nid
        t._tape = weakref.ref(self)
        self._watched[nid] = t
        return t

    def _record(self, kind, input_ids, inputs, attrs, saved, out: Tensor):
        nid = len(self.nodes)
        self.nodes.append(Node(kind, input_ids, inputs, attrs, saved, nid, out.data))
        out.node_id = nid
        out._tape = weakref.ref(self)

    def replay(self):
        """Recompute every node from recorded inputs; returns output buffers.

        Recorded running-statistics state is left untouched, so replaying is
        side-effect free. Outputs are bit-identical to the original forward
        pass for deterministic primitives (all of them are).
        """
        values = {}
        outputs = []
        for node in self.nodes:
            if node.kind == "leaf":
                values[node.out_id] = node.out_data
                outputs.append(node.out_data)
                continue
            ins = [
                values[iid] if iid is not None else arr
                for iid, arr in zip(node.input_ids, node.inputs)
            ]
            attrs = node.attrs
            if node.kind == "batchnorm2d":
                attrs = dict(attrs)
                attrs["_replay_stats"] = node.saved["stats"]
                attrs["state"] = None
            out, _ = _FORWARD[node.kind](ins, attrs)
            values[node.out_id] = out
            outputs.append(out)
        return outputs


def forward_primitive(kind, inputs, attrs=None) -> Tensor:
    """Apply one primitive; record it on the active tape if any input is tracked."""
    if kind not in _FORWARD:
        raise ContractError(f"unknown primitive kind {kind!r}")
    attrs = dict(attrs) if attrs else {}
    datas = [t.data for t in inputs]
    out_data, saved = _FORWARD[kind](datas, attrs)
    out = Tensor(out_data)
    tape = active_tape()
    if tape is not None:
        input_ids = tuple(t.node_id if _owned_by(t, tape) else None for t in inputs)
        if any(iid is not None for iid in input_ids):
            tape._record(kind, input_ids, tuple(datas), attrs, saved, out)
    return out


def backward(tape: Tape, loss: Tensor):
    """Reverse pass from a scalar loss; returns {leaf node_id -> grad Tensor}.

    Also stores each watched leaf's gradient buffer on ``tensor.grad``.
    Watched leaves that do not reach the loss get zero gradients.
    """
    if loss.data.shape != ():
        raise ContractError(f"loss must be a scalar (shape ()), got shape {loss.shape}")
    if not _owned_by(loss, tape):
        raise ContractError("loss tensor is not recorded on this tape")
    grads = {loss.node_id: np.ones((), dtype=np.float64)}
    for node in reversed(tape.nodes[: loss.node_id + 1]):
        if node.kind == "leaf":
            continue
        g = grads.pop(node.out_id, None)
        if g is None:
            continue
        input_grads = _BACKWARD[node.kind](g, node.inputs, node.attrs, node.saved)
        for iid, gi in zip(node.input_ids, input_grads):
            if iid is None or gi is None:
                continue
            if iid in grads:
                grads[iid] = grads[iid] + gi
            else:
                grads[iid] = gi
    result = {}
    for nid, leaf in tape._watched.items():
        arr = grads.get(nid)
        if arr is None:
            arr = np.zeros_like(leaf.data)
        else:
            arr = _contig(np.asarray(arr, dtype=np.float64))
        leaf.grad = arr
        result[nid] = Tensor(arr)
    return result


def finite_diff_gradient(f, x: Tensor, h: float = 1e-5) -> Tensor:
    """Central-difference gradient of a scalar function, one coordinate at a time.

    ``f`` maps a Tensor to a float (or one-element Tensor). Used as the
    reference oracle for gradient checks; O(2 * x.size) forward evaluations.
    """
    if h <= 0:
        raise ContractError("finite_diff_gradient needs h > 0")

    def evaluate(arr):
        out = f(Tensor(arr))
        return out.item() if isinstance(out, Tensor) else float(out)

    base = x.data
    grad = np.zeros_like(base)
    flat = grad.reshape(-1)
    for i in range(base.size):
        plus = base.copy()
        plus.reshape(-1)[i] += h
        minus = base.copy()
        minus.reshape(-1)[i] -= h
        flat[i] = (evaluate(plus) - evaluate(minus)) / (2.0 * h)
    return Tensor(grad)


# ---------------------------------------------------------------------------
# forward / backward rules
# ---------------------------------------------------------------------------


def _mm_forward(ds, attrs):
    a, b = ds
    if a.ndim != 2 or b.ndim != 2:
        raise ShapeError(f"matmul needs rank-2 operands, got {a.shape} and {b.shape}")
    ta = bool(attrs.get("transpose_a", False))
    tb = bool(attrs.get("transpose_b", False))
    left = a.T if ta else a
    right = b.T if tb else b
    if left.shape[1] != right.shape[0]:
        raise ShapeError(
            f"matmul inner dimensions differ: {a.shape}{'^T' if ta else ''} @ "
            f"{b.shape}{'^T' if tb else ''}"
        )
    return _contig(left @ right), {}


def _mm_backward(g, ds, attrs, saved):
    a, b = ds
    ta = bool(attrs.get("transpose_a", False))
    tb = bool(attrs.get("transpose_b", False))
    ga = g @ (b if tb else b.T)
    if ta:
        ga = ga.T
    gb = (a if ta else a.T) @ g
    if tb:
        gb = gb.T
    return [ga, gb]


def _conv_geometry(H, W, kh, kw, stride, pad):
    ho_num = H + 2 * pad - kh
    wo_num = W + 2 * pad - kw
    if ho_num < 0 or wo_num < 0:
        raise ShapeError(f"kernel {kh}x{kw} larger than padded input {H + 2 * pad}x{W + 2 * pad}")
    return ho_num // stride + 1, wo_num // stride + 1


def _im2col(xp, kh, kw, stride, Ho, Wo):
    # xp: (N, C, Hp, Wp) padded input -> (N*Ho*Wo, C*kh*kw)
    N, C = xp.shape[:2]
    cols = np.empty((N, C, kh, kw, Ho, Wo), dtype=np.float64)
    for i in range(kh):
        for j in range(kw):
            cols[:, :, i, j] = xp[:, :, i : i + stride * (Ho - 1) + 1 : stride,
                                  j : j + stride * (Wo - 1) + 1 : stride]
    return cols.transpose(0, 4, 5, 1, 2, 3).reshape(N * Ho * Wo, C * kh * kw)


def _col2im(colm, out_shape, kh, kw, stride, pad, Ho, Wo):
    # Adjoint of _im2col: scatter-add columns back into an (N, C, H, W) buffer.
    N, C, H, W = out_shape
    cols = colm.reshape(N, Ho, Wo, C, kh, kw).transpose(0, 3, 4, 5, 1, 2)
    buf = np.zeros((N, C, H + 2 * pad, W + 2 * pad), dtype=np.float64)
    for i in range(kh):
        for j in range(kw):
            buf[:, :, i : i + stride * (Ho - 1) + 1 : stride,
                j : j + stride * (Wo - 1) + 1 : stride] += cols[:, :, i, j]
    if pad:
        buf = buf[:, :, pad : pad + H, pad : pad + W]
    return _contig(buf)


def _conv2d_forward(ds, attrs):
    x, w = ds
    if x.ndim != 4 or w.ndim != 4:
        raise ShapeError(f"conv2d needs rank-4 operands, got {x.shape} and {w.shape}")
    stride = int(attrs["stride"])
    pad = int(attrs["pad"])
    if stride < 1 or pad < 0:
        raise ContractError(f"conv2d needs stride >= 1 and pad >= 0, got {stride}, {pad}")
    N, Cin, H, W = x.shape
    Cout, Cin_w, kh, kw = w.shape
    if Cin_w != Cin:
        raise ShapeError(f"conv2d channel mismatch: input has {Cin}, kernel expects {Cin_w}")
    Ho, Wo = _conv_geometry(H, W, kh, kw, stride, pad)
    xp = np.pad(x, ((0, 0), (0, 0), (pad, pad), (pad, pad))) if pad else x
    colm = _im2col(xp, kh, kw, stride, Ho, Wo)
    y = colm @ w.reshape(Cout, -1).T
    out = _contig(y.reshape(N, Ho, Wo, Cout).transpose(0, 3, 1, 2))
    return out, {"colm": colm, "geom": (Ho, Wo)}


def _conv2d_backward(g, ds, attrs, saved):
    x, w = ds
    stride = int(attrs["stride"])
    pad = int(attrs["pad"])
    Cout = w.shape[0]
    Ho, Wo = saved["geom"]
    N = x.shape[0]
    g2 = g.transpose(0, 2, 3, 1).reshape(N * Ho * Wo, Cout)
    dw = (g2.T @ saved["colm"]).reshape(w.shape)
    dcol = g2 @ w.reshape(Cout, -1)
    dx = _col2im(dcol, x.shape, w.shape[2], w.shape[3], stride, pad, Ho, Wo)
    return [dx, dw]


def _conv_transpose2d_forward(ds, attrs):
    # Exact adjoint of conv2d with the same stride/pad. Weight layout is
    # (C_in_of_x, C_out, kh, kw): sharing a buffer with a conv2d kernel of
    # layout (Cout, Cin, kh, kw) makes <conv2d(x,w), y> == <x, conv_transpose2d(y,w)>.
    x, w = ds
    if x.ndim != 4 or w.ndim != 4:
        raise ShapeError(f"conv_transpose2d needs rank-4 operands, got {x.shape} and {w.shape}")
    stride = int(attrs["stride"])
    pad = int(attrs["pad"])
    if stride < 1 or pad < 0:
        raise ContractError(f"conv_transpose2d needs stride >= 1 and pad >= 0")
    N, Cin, H, W = x.shape
    Cin_w, Cout, kh, kw = w.shape
    if Cin_w != Cin:
        raise ShapeError(f"conv_transpose2d channel mismatch: input has {Cin}, kernel expects {Cin_w}")
    Hout = (H - 1) * stride - 2 * pad + kh
    Wout = (W - 1) * stride - 2 * pad + kw
    if Hout < 1 or Wout < 1:
        raise ShapeError(f"conv_transpose2d output would be empty: {Hout}x{Wout}")
    x2 = x.transpose(0, 2, 3, 1).reshape(N * H * W, Cin)
    colm = x2 @ w.reshape(Cin, Cout * kh * kw)
    out = _col2im(colm, (N, Cout, Hout, Wout), kh, kw, stride, pad, H, W)
    return out, {"x2": x2}


def _conv_transpose2d_backward(g, ds, attrs, saved):
    x, w = ds
    stride = int(attrs["stride"])
    pad = int(attrs["pad"])
    N, Cin, H, W = x.shape
    _, Cout, kh, kw = w.shape
    # dL/dx is a plain convolution of g with the same kernel buffer.
    dx, conv_saved = _conv2d_forward([g, w], {"stride": stride, "pad": pad})
    # dL/dw: out = col2im(x2 @ w2), and col2im/im2col are adjoint.
    g_colm = conv_saved["colm"]  # im2col of g with identical geometry
    dw = (saved["x2"].T @ g_colm).reshape(w.shape)
    return [dx, dw]


def _maxpool2d_forward(ds, attrs):
    (x,) = ds
    if x.ndim != 4:
        raise ShapeError(f"maxpool2d needs a rank-4 input, got {x.shape}")
    k = int(attrs.get("kernel", 2))
    N, C, H, W = x.shape
    if k < 1 or H % k or W % k:
        raise ShapeError(f"maxpool2d kernel {k} must divide spatial dims {H}x{W}")
    Ho, Wo = H // k, W // k
    windows = x.reshape(N, C, Ho, k, Wo, k).transpose(0, 1, 2, 4, 3, 5).reshape(N, C, Ho, Wo, k * k)
    # argmax returns the first maximum: ties go to the lowest flat index.
    idx = np.argmax(windows, axis=-1)
    out = np.take_along_axis(windows, idx[..., None], axis=-1)[..., 0]
    return _contig(out), {"idx": idx, "k": k}


def _maxpool2d_backward(g, ds, attrs, saved):
    (x,) = ds
    k = saved["k"]
    idx = saved["idx"]
    N, C, H, W = x.shape
    Ho, Wo = H // k, W // k
    dwin = np.zeros((N, C, Ho, Wo, k * k), dtype=np.float64)
    np.put_along_axis(dwin, idx[..., None], g[..., None], axis=-1)
    dx = dwin.reshape(N, C, Ho, Wo, k, k).transpose(0, 1, 2, 4, 3, 5).reshape(N, C, H, W)
    return [_contig(dx)]


def _upsample2x_forward(ds, attrs):
    (x,) = ds
    if x.ndim != 4:
        raise ShapeError(f"upsample2x needs a rank-4 input, got {x.shape}")
    out = np.repeat(np.repeat(x, 2, axis=2), 2, axis=3)
    return _contig(out), {}


def _upsample2x_backward(g, ds, attrs, saved):
    (x,) = ds
    N, C, H, W = x.shape
    dx = g.reshape(N, C, H, 2, W, 2).sum(axis=(3, 5))
    return [_contig(dx)]


class BatchNorm2dState:
    """Holds running mean/var tensors; buffers are rebound on every update."""

    __slots__ = ("mean", "var")

    def __init__(self, mean: Tensor, var: Tensor):
        self.mean = mean
        self.var = var


def _batchnorm2d_forward(ds, attrs):
    x, gamma, beta = ds
    if x.ndim != 4:
        raise ShapeError(f"batchnorm2d needs a rank-4 input, got {x.shape}")
    C = x.shape[1]
    if gamma.shape != (C,) or beta.shape != (C,):
        raise ShapeError(f"batchnorm2d scale/shift must have shape ({C},)")
    eps = float(attrs.get("eps", 1e-5))
    momentum = float(attrs.get("momentum", 0.9))
    training = bool(attrs.get("training", True))
    state = attrs.get("state")
    replay_stats = attrs.get("_replay_stats")
    if training:
        if replay_stats is not None:
            mean, var = replay_stats
        else:
            mean = x.mean(axis=(0, 2, 3))
            var = x.var(axis=(0, 2, 3))
        if state is not None and replay_stats is None:
            state.mean.data = momentum * state.mean.data + (1.0 - momentum) * mean
            state.var.data = momentum * state.var.data + (1.0 - momentum) * var
    else:
        if replay_stats is not None:
            mean, var = replay_stats
        elif state is not None:
            mean = state.mean.data.copy()
            var = state.var.data.copy()
        else:
            raise ContractError("batchnorm2d in eval mode needs running statistics")
    inv = 1.0 / np.sqrt(var + eps)
    xhat = (x - mean[None, :, None, None]) * inv[None, :, None, None]
    out = gamma[None, :, None, None] * xhat + beta[None, :, None, None]
    saved = {"xhat": xhat, "inv": inv, "training": training, "stats": (mean, var)}
    return _contig(out), saved


def _batchnorm2d_backward(g, ds, attrs, saved):
    x, gamma, beta = ds
    xhat = saved["xhat"]
    inv = saved["inv"]
    dgamma = (g * xhat).sum(axis=(0, 2, 3))
    dbeta = g.sum(axis=(0, 2, 3))
    dxhat = g * gamma[None, :, None, None]
    if saved["training"]:
        mean_d = dxhat.mean(axis=(0, 2, 3), keepdims=True)
        mean_dx = (dxhat * xhat).mean(axis=(0, 2, 3), keepdims=True)
        dx = inv[None, :, None, None] * (dxhat - mean_d - xhat * mean_dx)
    else:
        dx = dxhat * inv[None, :, None, None]
    return [_contig(dx), dgamma, dbeta]


def _relu_forward(ds, attrs):
    (x,) = ds
    return np.maximum(x, 0.0), {}


def _relu_backward(g, ds, attrs, saved):
    (x,) = ds
    return [g * (x > 0.0)]


def _sigmoid_forward(ds, attrs):
    (x,) = ds
    out = np.empty_like(x)
    pos = x >= 0
    with np.errstate(over="ignore"):
        out[pos] = 1.0 / (1.0 + np.exp(-x[pos]))
        ex = np.exp(x[~pos])
    out[~pos] = ex / (1.0 + ex)
    return out, {"out": out}


def _sigmoid_backward(g, ds, attrs, saved):
    s = saved["out"]
    return [g * s * (1.0 - s)]


def _exp_forward(ds, attrs):
    (x,) = ds
    with np.errstate(over="ignore"):
        out = np.exp(x)
    return out, {"out": out}


def _exp_backward(g, ds, attrs, saved):
    return [g * saved["out"]]


def _log_forward(ds, attrs):
    (x,) = ds
    if np.any(x <= 0.0):
        raise DomainError("log of a non-positive value")
    return np.log(x), {}


def _log_backward(g, ds, attrs, saved):
    (x,) = ds
    return [g / x]


def _bias_axis(a: Array, b: Array):
    # Channel-axis bias add: rank-1 b against axis 1 of a rank-2/4 a.
    if b.ndim == 1 and a.ndim in (2, 4) and a.shape[1] == b.shape[0]:
        return 1
    return None


def _add_forward(ds, attrs):
    a, b = ds
    if a.shape == b.shape:
        return a + b, {}
    axis = _bias_axis(a, b)
    if axis is None:
        raise ShapeError(f"add needs equal shapes or a channel bias, got {a.shape} + {b.shape}")
    shape = [1] * a.ndim
    shape[axis] = b.shape[0]
    return a + b.reshape(shape), {}


def _add_backward(g, ds, attrs, saved):
    a, b = ds
    if a.shape == b.shape:
        return [g, g]
    axes = tuple(i for i in range(a.ndim) if i != 1)
    return [g, g.sum(axis=axes)]


def _sub_forward(ds, attrs):
    a, b = ds
    if a.shape != b.shape:
        raise ShapeError(f"sub needs equal shapes, got {a.shape} - {b.shape}")
    return a - b, {}


def _sub_backward(g, ds, attrs, saved):
    return [g, -g]


def _mul_forward(ds, attrs):
    a, b = ds
    if a.shape != b.shape:
        raise ShapeError(f"mul needs equal shapes, got {a.shape} * {b.shape}")
    return a * b, {}


def _mul_backward(g, ds, attrs, saved):
    a, b = ds
    return [g * b, g * a]


def _scalar_mul_forward(ds, attrs):
    (x,) = ds
    c = float(attrs["value"])
    return c * x, {}


def _scalar_mul_backward(g, ds, attrs, saved):
    return [float(attrs["value"]) * g]


def _square_forward(ds, attrs):
    (x,) = ds
    return x * x, {}


def _square_backward(g, ds, attrs, saved):
    (x,) = ds
    return [2.0 * x * g]


def _check_axis(x: Array, axis):
    if axis is None:
        return None
    axis = int(axis)
    if not -x.ndim <= axis < x.ndim:
        raise ShapeError(f"reduction axis {axis} out of range for shape {x.shape}")
    return axis % x.ndim


def _expand_reduced(g, x_shape, axis):
    if axis is None:
        return np.broadcast_to(g, x_shape)
    return np.broadcast_to(np.expand_dims(g, axis), x_shape)


def _reduce_sum_forward(ds, attrs):
    (x,) = ds
    axis = _check_axis(x, attrs.get("axis"))
    attrs["axis"] = axis
    return _contig(x.sum(axis=axis)), {}


def _reduce_sum_backward(g, ds, attrs, saved):
    (x,) = ds
    return [_contig(_expand_reduced(g, x.shape, attrs.get("axis")))]


def _reduce_mean_forward(ds, attrs):
    (x,) = ds
    axis = _check_axis(x, attrs.get("axis"))
    attrs["axis"] = axis
    return _contig(x.mean(axis=axis)), {}


def _reduce_mean_backward(g, ds, attrs, saved):
    (x,) = ds
    axis = attrs.get("axis")
    count = x.size if axis is None else x.shape[axis]
    return [_contig(_expand_reduced(g, x.shape, axis) / count)]


def _reshape_forward(ds, attrs):
    (x,) = ds
    shape = tuple(int(s) for s in attrs["shape"])
    if int(np.prod(shape, dtype=np.int64)) != x.size:
        raise ShapeError(f"cannot reshape {x.shape} ({x.size} elements) to {shape}")
    return _contig(x.reshape(shape)), {}


def _reshape_backward(g, ds, attrs, saved):
    (x,) = ds
    return [_contig(g.reshape(x.shape))]


_FORWARD = {
    "matmul": _mm_forward,
    "conv2d": _conv2d_forward,
    "conv_transpose2d": _conv_transpose2d_forward,
    "maxpool2d": _maxpool2d_forward,
    "upsample2x": _upsample2x_forward,
    "batchnorm2d": _batchnorm2d_forward,
    "relu": _relu_forward,
    "sigmoid": _sigmoid_forward,
    "exp": _exp_forward,
    "log": _log_forward,
    "add": _add_forward,
    "sub": _sub_forward,
    "mul": _mul_forward,
    "scalar_mul": _scalar_mul_forward,
    "square": _square_forward,
    "reduce_sum": _reduce_sum_forward,
    "reduce_mean": _reduce_mean_forward,
    "reshape": _reshape_forward,
}

_BACKWARD = {
    "matmul": _mm_backward,
    "conv2d": _conv2d_backward,
    "conv_transpose2d": _conv_transpose2d_backward,
    "maxpool2d": _maxpool2d_backward,
    "upsample2x": _upsample2x_backward,
    "batchnorm2d": _batchnorm2d_backward,
    "relu": _relu_backward,
    "sigmoid": _sigmoid_backward,
    "exp": _exp_backward,
    "log": _log_backward,
    "add": _add_backward,
    "sub": _sub_backward,
    "mul": _mul_backward,
    "scalar_mul": _scalar_mul_backward,
    "square": _square_backward,
    "reduce_sum": _reduce_sum_backward,
    "reduce_mean": _reduce_mean_backward,
    "reshape": _reshape_backward,
}


# ---------------------------------------------------------------------------
# thin call wrappers
# ---------------------------------------------------------------------------


def matmul(a, b, transpose_a=False, transpose_b=False):
    return forward_primitive("matmul", (a, b),
                             {"transpose_a": transpose_a, "transpose_b": transpose_b})


def conv2d(x, w, stride=1, pad=0):
    return forward_primitive("conv2d", (x, w), {"stride": stride, "pad": pad})


def conv_transpose2d(x, w, stride=1, pad=0):
    return forward_primitive("conv_transpose2d", (x, w), {"stride": stride, "pad": pad})


def maxpool2d(x, kernel=2):
    return forward_primitive("maxpool2d", (x,), {"kernel": kernel})


def upsample2x(x):
    return forward_primitive("upsample2x", (x,))


def batchnorm2d(x, gamma, beta, state=None, training=True, eps=1e-5, momentum=0.9):
    return forward_primitive(
        "batchnorm2d", (x, gamma, beta),
        {"state": state, "training": training, "eps": eps, "momentum": momentum})


def relu(x):
    return forward_primitive("relu", (x,))


def sigmoid(x):
    return forward_primitive("sigmoid", (x,))


def exp(x):
    return forward_primitive("exp", (x,))


def log(x):
    return forward_primitive("log", (x,))


def add(a, b):
    return forward_primitive("add", (a, b))


def sub(a, b):
    return forward_primitive("sub", (a, b))


def mul(a, b):
    return forward_primitive("mul", (a, b))


def scalar_mul(x, value):
    return forward_primitive("scalar_mul", (x,), {"value": value})


def square(x):
    return forward_primitive("square", (x,))


def reduce_sum(x, axis=None):
    return forward_primitive("reduce_sum", (x,), {"axis": axis})


def reduce_mean(x, axis=None):
    return forward_primitive("reduce_mean", (x,), {"axis": axis})


def reshape(x, shape):
    return forward_primitive("reshape", (x,), {"shape": tuple(shape)})


# ---------------------------------------------------------------------------
# checkpoint serialisation
# ---------------------------------------------------------------------------

CHECKPOINT_MAGIC = b"GCVT"
CHECKPOINT_VERSION = 1


def save_checkpoint(path, named_tensors):
    """Write named float64 buffers to ``path``.

    Layout: magic ``GCVT``, u32 version, then one record per entry:
    u32 name length + UTF-8 name, u64 rank, u64 extents, raw little-endian
    float64 payload. Round-trips bit-exactly.
    """
    with open(path, "wb") as fh:
        fh.write(CHECKPOINT_MAGIC)
        fh.write(struct.pack("<I", CHECKPOINT_VERSION))
        for name, value in named_tensors.items():
            arr = value.data if isinstance(value, Tensor) else np.asarray(value, dtype=np.float64)
            encoded = name.encode("utf-8")
            fh.write(struct.pack("<I", len(encoded)))
            fh.write(encoded)
            fh.write(struct.pack("<Q", arr.ndim))
            fh.write(struct.pack(f"<{arr.ndim}Q", *arr.shape) if arr.ndim else b"")
            fh.write(np.ascontiguousarray(arr, dtype="<f8").tobytes())


def load_checkpoint(path):
    """Read a checkpoint written by :func:`save_checkpoint`; returns name -> array."""
    with open(path, "rb") as fh:
        blob = fh.read()
    if blob[:4] != CHECKPOINT_MAGIC:
        raise FormatError(f"bad checkpoint magic {blob[:4]!r}, expected {CHECKPOINT_MAGIC!r}")
    if len(blob) < 8:
        raise FormatError("checkpoint truncated before version field")
    (version,) = struct.unpack_from("<I", blob, 4)
    if version != CHECKPOINT_VERSION:
        raise FormatError(f"unsupported checkpoint version {version}")
    out = {}
    offset = 8
    while offset < len(blob):
        if offset + 4 > len(blob):
            raise FormatError("checkpoint truncated inside a record header")
        (name_len,) = struct.unpack_from("<I", blob, offset)
        offset += 4
        if offset + name_len + 8 > len(blob):
            raise FormatError("checkpoint truncated inside a record name")
        name = blob[offset : offset + name_len].decode("utf-8")
        offset += name_len
        (rank,) = struct.unpack_from("<Q", blob, offset)
        offset += 8
        if offset + 8 * rank > len(blob):
            raise FormatError(f"checkpoint truncated inside the shape of {name!r}")
        shape = struct.unpack_from(f"<{rank}Q", blob, offset) if rank else ()
        offset += 8 * rank
        count = int(np.prod(shape, dtype=np.int64)) if rank else 1
        nbytes = 8 * count
        if offset + nbytes > len(blob):
            raise FormatError(f"checkpoint truncated inside the payload of {name!r}")
        arr = np.frombuffer(blob, dtype="<f8", count=count, offset=offset).reshape(shape)
        out[name] = arr.astype(np.float64).copy()
        offset += nbytes
    return out
