"""Dense-tensor reverse-mode autodiff.

Deliberately small: row-major numpy storage, an explicit tape, and exactly
the primitives the encoder needs (grouped same-padding convolution, batch
norm, layer norm, linear, swish/gelu, transpose, BCE-with-logits). No
broadcasting beyond bias addition. Forward runs in whatever float dtype the
inputs carry; gradient checking is done in float64.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np
from scipy.special import expit

_TAPES: list["Tape"] = []


class Tensor:
    """Contiguous real-valued array plus an optional gradient buffer."""

    __slots__ = ("data", "requires_grad", "grad", "_in_graph")

    def __init__(self, data, requires_grad: bool = False):
        arr = np.asarray(data)
        if arr.dtype not in (np.float32, np.float64):
            arr = arr.astype(np.float32)
        self.data = np.ascontiguousarray(arr)
        self.requires_grad = bool(requires_grad)
        self.grad: np.ndarray | None = None
        self._in_graph = False

    @property
    def shape(self):
        return self.data.shape

    @property
    def ndim(self):
        return self.data.ndim

    @property
    def dtype(self):
        return self.data.dtype

    def zero_grad(self):
        self.grad = None

    def _accumulate(self, g: np.ndarray):
        if self.grad is None:
            self.grad = np.zeros_like(self.data)
        self.grad += g

    def __repr__(self):
        return f"Tensor(shape={self.data.shape}, requires_grad={self.requires_grad})"


class Parameter(Tensor):
    """Named trainable tensor. Names must be unique within a model."""

    __slots__ = ("name",)

    def __init__(self, name: str, data):
        super().__init__(data, requires_grad=True)
        self.name = name

    def __repr__(self):
        return f"Parameter({self.name!r}, shape={self.data.shape})"


class Tape:
    """Ordered record of primitive applications; backward replays it reversed.

    Use as a context manager around the forward pass. Ops executed while no
    tape is active run forward-only (the evaluation fast path).
    """

    def __init__(self):
        self._records: list[tuple[Tensor, tuple[Tensor, ...], object]] = []

    def __enter__(self):
        _TAPES.append(self)
        return self

    def __exit__(self, *exc):
        _TAPES.pop()
        return False

    def __len__(self):
        return len(self._records)

    def backward(self, loss: Tensor):
        """Accumulate reverse-mode gradients of a scalar loss into .grad buffers."""
        if loss.data.size != 1:
            raise ValueError(f"backward expects a scalar loss, got shape {loss.data.shape}")
        loss.grad = np.ones_like(loss.data)
        for out, inputs, fn in reversed(self._records):
            if out.grad is None:
                continue  # not reachable from the loss
            fn(out.grad)


def backward(loss: Tensor, tape: Tape):
    tape.backward(loss)


def _record(out: Tensor, inputs: tuple[Tensor, ...], fn) -> Tensor:
    if _TAPES and any(t.requires_grad or t._in_graph for t in inputs):
        out._in_graph = True
        _TAPES[-1]._records.append((out, inputs, fn))
    return out


def _needs(t: Tensor) -> bool:
    return t.requires_grad or t._in_graph


# ---------------------------------------------------------------------------
# elementwise and shape ops


def add(a: Tensor, b: Tensor) -> Tensor:
    if a.data.shape != b.data.shape:
        raise ValueError(f"add: shape mismatch {a.data.shape} vs {b.data.shape}")
    out = Tensor(a.data + b.data)

    def fn(go):
        if _needs(a):
            a._accumulate(go)
        if _needs(b):
            b._accumulate(go)

    return _record(out, (a, b), fn)


def mul(a: Tensor, b: Tensor) -> Tensor:
    if a.data.shape != b.data.shape:
        raise ValueError(f"mul: shape mismatch {a.data.shape} vs {b.data.shape}")
    out = Tensor(a.data * b.data)

    def fn(go):
        if _needs(a):
            a._accumulate(go * b.data)
        if _needs(b):
            b._accumulate(go * a.data)

    return _record(out, (a, b), fn)


def reshape(x: Tensor, shape) -> Tensor:
    shape = tuple(shape)
    out = Tensor(x.data.reshape(shape))

    def fn(go):
        if _needs(x):
            x._accumulate(go.reshape(x.data.shape))

    return _record(out, (x,), fn)


def transpose_ft(x: Tensor) -> Tensor:
    """Swap the last two axes."""
    if x.data.ndim < 2:
        raise ValueError("transpose_ft needs rank >= 2")
    out = Tensor(np.ascontiguousarray(x.data.swapaxes(-1, -2)))

    def fn(go):
        if _needs(x):
            x._accumulate(go.swapaxes(-1, -2))

    return _record(out, (x,), fn)


def tensor_sum(x: Tensor) -> Tensor:
    out = Tensor(np.asarray(x.data.sum(), dtype=x.data.dtype))

    def fn(go):
        if _needs(x):
            x._accumulate(np.full_like(x.data, float(go)))

    return _record(out, (x,), fn)


def mean(x: Tensor, axis: int | None = None) -> Tensor:
    if axis is None:
        n = x.data.size
        out = Tensor(np.asarray(x.data.mean(), dtype=x.data.dtype))

        def fn(go):
            if _needs(x):
                x._accumulate(np.full_like(x.data, float(go) / n))

    else:
        n = x.data.shape[axis]
        out = Tensor(x.data.mean(axis=axis))

        def fn(go):
            if _needs(x):
                x._accumulate(np.expand_dims(go, axis) / n * np.ones_like(x.data))

    return _record(out, (x,), fn)


def swish(x: Tensor) -> Tensor:
    s = expit(x.data)
    out = Tensor(x.data * s)
    del s  # recomputed in backward; keeping it would double activation memory

    def fn(go):
        if _needs(x):
            s = expit(x.data)
            x._accumulate(go * (s * (1.0 + x.data * (1.0 - s))))

    return _record(out, (x,), fn)


_GELU_C = np.sqrt(2.0 / np.pi)


def gelu(x: Tensor) -> Tensor:
    """tanh-approximation gelu: 0.5*x*(1 + tanh(sqrt(2/pi)*(x + 0.044715*x^3)))."""
    xd = x.data
    out = Tensor(0.5 * xd * (1.0 + np.tanh(_GELU_C * (xd + 0.044715 * xd**3))))

    def fn(go):
        if _needs(x):
            t = np.tanh(_GELU_C * (xd + 0.044715 * xd**3))
            dinner = _GELU_C * (1.0 + 3 * 0.044715 * xd**2)
            d = 0.5 * (1.0 + t) + 0.5 * xd * (1.0 - t**2) * dinner
            x._accumulate(go * d)

    return _record(out, (x,), fn)


# ---------------------------------------------------------------------------
# linear


def linear(x: Tensor, w: Tensor, b: Tensor | None = None) -> Tensor:
    """Affine map over the last axis: y = x @ w.T + b, with w shaped (out, in)."""
    if x.data.shape[-1] != w.data.shape[1]:
        raise ValueError(f"linear: inner extents differ, x {x.data.shape} vs w {w.data.shape}")
    y = x.data @ w.data.T
    if b is not None:
        y = y + b.data
    out = Tensor(y)
    inputs = (x, w) if b is None else (x, w, b)

    def fn(go):
        go2 = go.reshape(-1, w.data.shape[0])
        if _needs(x):
            x._accumulate(go @ w.data)
        if _needs(w):
            x2 = x.data.reshape(-1, w.data.shape[1])
            w._accumulate(go2.T @ x2)
        if b is not None and _needs(b):
            b._accumulate(go2.sum(axis=0))

    return _record(out, inputs, fn)


# ---------------------------------------------------------------------------
# convolution (stride 1, `same` padding, grouped; 1D and 2D)


def _same_pads(k: int) -> tuple[int, int]:
    left = (k - 1) // 2
    return left, k - 1 - left


def _conv_raw(x: np.ndarray, w: np.ndarray, groups: int, pads) -> np.ndarray:
    """Grouped cross-correlation of pre-padding `pads` at stride 1.

    Implemented as a short loop over kernel offsets; each offset is one
    batched channel contraction over a shifted view, which keeps memory flat
    (no im2col buffer) and lets BLAS do the work.
    """
    g = groups
    if x.ndim == 3:
        B, Cin, L = x.shape
        Cout, cg, K = w.shape
        og = Cout // g
        xp = np.pad(x, ((0, 0), (0, 0), pads[0]))
        Lout = xp.shape[-1] - K + 1
        xg = xp.reshape(B, g, cg, xp.shape[-1])
        wg = w.reshape(g, og, cg, K)
        out = np.zeros((B, g, og, Lout), dtype=x.dtype)
        for k in range(K):
            xs = xg[..., k : k + Lout]
            if cg == 1 and og == 1:
                out += xs * wg[..., k]
            else:
                out += np.matmul(wg[..., k], xs)
        return out.reshape(B, Cout, Lout)

    B, Cin, H, W = x.shape
    Cout, cg, KH, KW = w.shape
    og = Cout // g
    xp = np.pad(x, ((0, 0), (0, 0), pads[0], pads[1]))
    Hout = xp.shape[2] - KH + 1
    Wout = xp.shape[3] - KW + 1
    xg = xp.reshape(B, g, cg, xp.shape[2], xp.shape[3])
    wg = w.reshape(g, og, cg, KH, KW)
    out = np.zeros((B, g, og, Hout, Wout), dtype=x.dtype)
    for kh in range(KH):
        for kw in range(KW):
            xs = xg[..., kh : kh + Hout, kw : kw + Wout]
            if cg == 1 and og == 1:
                out += xs * wg[..., kh, kw][..., None]
            else:
                out += np.einsum("goc,bgchw->bgohw", wg[..., kh, kw], xs, optimize=True)
    return out.reshape(B, Cout, Hout, Wout)


def _conv_backward_kernel(w: np.ndarray, groups: int) -> np.ndarray:
    """Spatially flipped, channel-transposed kernel mapping dout back to dx."""
    g = groups
    if w.ndim == 3:
        Cout, cg, K = w.shape
        og = Cout // g
        wb = w.reshape(g, og, cg, K).transpose(0, 2, 1, 3)[..., ::-1]
        return np.ascontiguousarray(wb.reshape(g * cg, og, K))
    Cout, cg, KH, KW = w.shape
    og = Cout // g
    wb = w.reshape(g, og, cg, KH, KW).transpose(0, 2, 1, 3, 4)[..., ::-1, ::-1]
    return np.ascontiguousarray(wb.reshape(g * cg, og, KH, KW))


def conv(x: Tensor, w: Tensor, b: Tensor | None = None, *, groups: int = 1) -> Tensor:
    """Grouped convolution (cross-correlation), stride 1, `same` padding.

    1D when w has rank 3 (out, in/groups, k); 2D when rank 4. Spatial extents
    are preserved. Bias is per output channel.
    """
    dims = w.data.ndim - 2
    if dims not in (1, 2):
        raise ValueError(f"conv: kernel rank must be 3 or 4, got {w.data.ndim}")
    if x.data.ndim != dims + 2:
        raise ValueError(f"conv: input rank {x.data.ndim} does not match {dims}d kernel")
    Cin = x.data.shape[1]
    Cout, cg = w.data.shape[0], w.data.shape[1]
    if Cin % groups or Cout % groups:
        raise ValueError(f"conv: channels ({Cin}->{Cout}) not divisible by groups={groups}")
    if cg != Cin // groups:
        raise ValueError(f"conv: kernel expects {cg} channels/group, input has {Cin // groups}")
    kernel = w.data.shape[2:]
    pads = tuple(_same_pads(k) for k in kernel)

    y = _conv_raw(x.data, w.data, groups, pads)
    if b is not None:
        if b.data.shape != (Cout,):
            raise ValueError(f"conv: bias shape {b.data.shape} != ({Cout},)")
        y += b.data.reshape((1, Cout) + (1,) * dims)
    out = Tensor(y)
    inputs = (x, w) if b is None else (x, w, b)

    def fn(go):
        g = groups
        og = Cout // g
        if b is not None and _needs(b):
            b._accumulate(go.sum(axis=(0,) + tuple(range(2, go.ndim))))
        if _needs(w):
            dw = np.zeros_like(w.data)
            if dims == 1:
                (pl, pr) = pads[0]
                xp = np.pad(x.data, ((0, 0), (0, 0), (pl, pr)))
                B = x.data.shape[0]
                L = go.shape[-1]
                xg = xp.reshape(B, g, cg, xp.shape[-1])
                gg = go.reshape(B, g, og, L)
                dwg = dw.reshape(g, og, cg, kernel[0])
                for k in range(kernel[0]):
                    xs = xg[..., k : k + L]
                    dwg[..., k] = np.einsum("bgol,bgcl->goc", gg, xs, optimize=True)
            else:
                xp = np.pad(x.data, ((0, 0), (0, 0), pads[0], pads[1]))
                B = x.data.shape[0]
                H, W = go.shape[-2:]
                xg = xp.reshape(B, g, cg, xp.shape[-2], xp.shape[-1])
                gg = go.reshape(B, g, og, H, W)
                dwg = dw.reshape(g, og, cg, kernel[0], kernel[1])
                for kh in range(kernel[0]):
                    for kw in range(kernel[1]):
                        xs = xg[..., kh : kh + H, kw : kw + W]
                        dwg[..., kh, kw] = np.einsum("bgohw,bgchw->goc", gg, xs, optimize=True)
            w._accumulate(dw)
        if _needs(x):
            wb = _conv_backward_kernel(w.data, g)
            back_pads = tuple((pr, pl) for (pl, pr) in pads)
            x._accumulate(_conv_raw(go, wb, g, back_pads))

    return _record(out, inputs, fn)


# ---------------------------------------------------------------------------
# normalization


def batch_norm(
    x: Tensor,
    gamma: Tensor,
    beta: Tensor,
    running_mean: np.ndarray,
    running_var: np.ndarray,
    *,
    training: bool,
    momentum: float = 0.1,
    eps: float = 1e-5,
) -> Tensor:
    """Per-channel (axis 1) batch normalization.

    Train mode normalizes by biased batch statistics and folds them into the
    running buffers with the given momentum; eval mode normalizes by the
    running buffers. Running buffers are plain arrays mutated in place.
    """
    C = x.data.shape[1]
    if gamma.data.shape != (C,) or beta.data.shape != (C,):
        raise ValueError("batch_norm: affine parameter length must match channel extent")
    axes = (0,) + tuple(range(2, x.data.ndim))
    m = int(np.prod([x.data.shape[a] for a in axes]))
    if m == 0:
        raise ValueError("batch_norm: zero batch size")
    cshape = (1, C) + (1,) * (x.data.ndim - 2)

    if training:
        mu = x.data.mean(axis=axes)
        var = x.data.var(axis=axes)
        running_mean *= 1.0 - momentum
        running_mean += momentum * mu
        running_var *= 1.0 - momentum
        running_var += momentum * var
    else:
        mu = running_mean.astype(x.data.dtype)
        var = running_var.astype(x.data.dtype)

    ivstd = 1.0 / np.sqrt(var + eps)
    xh = (x.data - mu.reshape(cshape)) * ivstd.reshape(cshape)
    out = Tensor(gamma.data.reshape(cshape) * xh + beta.data.reshape(cshape))

    def fn(go):
        if _needs(gamma):
            gamma._accumulate((go * xh).sum(axis=axes))
        if _needs(beta):
            beta._accumulate(go.sum(axis=axes))
        if _needs(x):
            dxh = go * gamma.data.reshape(cshape)
            if training:
                dx = ivstd.reshape(cshape) * (
                    dxh
                    - dxh.mean(axis=axes, keepdims=True)
                    - xh * (dxh * xh).mean(axis=axes, keepdims=True)
                )
            else:
                dx = dxh * ivstd.reshape(cshape)
            x._accumulate(dx)

    return _record(out, (x, gamma, beta), fn)


def layer_norm(x: Tensor, gamma: Tensor, beta: Tensor, *, eps: float = 1e-5) -> Tensor:
    """Normalize over the last axis (population variance), then affine."""
    n = x.data.shape[-1]
    if n < 1:
        raise ValueError("layer_norm: axis extent < 1")
    if gamma.data.shape != (n,) or beta.data.shape != (n,):
        raise ValueError("layer_norm: affine parameter length must match last extent")
    mu = x.data.mean(axis=-1, keepdims=True)
    var = x.data.var(axis=-1, keepdims=True)
    ivstd = 1.0 / np.sqrt(var + eps)
    xh = (x.data - mu) * ivstd
    out = Tensor(gamma.data * xh + beta.data)
    red = tuple(range(x.data.ndim - 1))

    def fn(go):
        if _needs(gamma):
            gamma._accumulate((go * xh).sum(axis=red))
        if _needs(beta):
            beta._accumulate(go.sum(axis=red))
        if _needs(x):
            dxh = go * gamma.data
            dx = ivstd * (
                dxh
                - dxh.mean(axis=-1, keepdims=True)
                - xh * (dxh * xh).mean(axis=-1, keepdims=True)
            )
            x._accumulate(dx)

    return _record(out, (x, gamma, beta), fn)


# ---------------------------------------------------------------------------
# loss


def bce_with_logits(logits: Tensor, targets) -> Tensor:
    """Mean element-wise binary cross-entropy on logits, in the stable form."""
    t = targets.data if isinstance(targets, Tensor) else np.asarray(targets)
    if t.shape != logits.data.shape:
        raise ValueError(f"bce: target shape {t.shape} != logits shape {logits.data.shape}")
    if np.any(t < 0.0) or np.any(t > 1.0):
        raise ValueError("bce: targets must lie in [0, 1]")
    z = logits.data
    elems = np.maximum(z, 0.0) - z * t + np.log1p(np.exp(-np.abs(z)))
    n = z.size
    out = Tensor(np.asarray(elems.mean(), dtype=z.dtype))

    def fn(go):
        if _needs(logits):
            logits._accumulate((expit(z) - t) * (float(go) / n))

    return _record(out, (logits,), fn)


# ---------------------------------------------------------------------------
# gradient checking


@dataclass
class GradCheckReport:
    max_rel_error: float
    n_checked: int

    def __str__(self):
        return f"max relative error {self.max_rel_error:.3e} over {self.n_checked} elements"


def grad_check(f, inputs: list[Tensor], step: float = 1e-4) -> GradCheckReport:
    """Compare analytic gradients of a scalar-valued f against central differences.

    Inputs should be float64 tensors with requires_grad set; relative error is
    |a - n| / max(|a|, |n|, 1e-8). Extra forward evaluations run off-tape.
    """
    for t in inputs:
        t.zero_grad()
    with Tape() as tape:
        out = f(*inputs)
    tape.backward(out)
    analytic = [np.zeros_like(t.data) if t.grad is None else t.grad.copy() for t in inputs]

    max_rel = 0.0
    n_checked = 0
    for t, a in zip(inputs, analytic):
        flat = t.data.reshape(-1)
        aflat = a.reshape(-1)
        for i in range(flat.size):
            orig = flat[i]
            flat[i] = orig + step
            fp = float(f(*inputs).data)
            flat[i] = orig - step
            fm = float(f(*inputs).data)
            flat[i] = orig
            num = (fp - fm) / (2.0 * step)
            rel = abs(aflat[i] - num) / max(abs(aflat[i]), abs(num), 1e-8)
            max_rel = max(max_rel, rel)
            n_checked += 1
    return GradCheckReport(max_rel_error=max_rel, n_checked=n_checked)
