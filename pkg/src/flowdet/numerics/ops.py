"""The fixed differentiable op set: elementwise math, 2D convolution,
bilinear sampling, resampling, channel plumbing, and a convolutional GRU.

Feature maps are rank-3 ``(H, W, C)`` arrays. Each op's backward is derived
by hand and registered through :func:`flowdet.numerics.tensor.record`.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np
from numpy.lib.stride_tricks import sliding_window_view

from .tensor import ShapeError, Tensor, as_tensor, record


def _unbroadcast(grad: np.ndarray, shape) -> np.ndarray:
    """Sum a broadcast gradient back down to ``shape``."""
    extra = grad.ndim - len(shape)
    if extra:
        grad = grad.sum(axis=tuple(range(extra)))
    axes = tuple(i for i, (g, s) in enumerate(zip(grad.shape, shape)) if s == 1 and g != 1)
    if axes:
        grad = grad.sum(axis=axes, keepdims=True)
    return grad


# ---------------------------------------------------------------------------
# elementwise arithmetic (numpy broadcasting semantics)

def add(a: Tensor, b) -> Tensor:
    b = as_tensor(b, like=a)
    out = a.data + b.data
    return record(out, (a, b), lambda g: (_unbroadcast(g, a.shape), _unbroadcast(g, b.shape)))


def sub(a: Tensor, b) -> Tensor:
    b = as_tensor(b, like=a)
    out = a.data - b.data
    return record(out, (a, b), lambda g: (_unbroadcast(g, a.shape), _unbroadcast(-g, b.shape)))


def mul(a: Tensor, b) -> Tensor:
    b = as_tensor(b, like=a)
    out = a.data * b.data
    return record(out, (a, b), lambda g: (
        _unbroadcast(g * b.data, a.shape),
        _unbroadcast(g * a.data, b.shape),
    ))


def div(a: Tensor, b) -> Tensor:
    b = as_tensor(b, like=a)
    out = a.data / b.data
    return record(out, (a, b), lambda g: (
        _unbroadcast(g / b.data, a.shape),
        _unbroadcast(-g * a.data / (b.data * b.data), b.shape),
    ))


def neg(a: Tensor) -> Tensor:
    return record(-a.data, (a,), lambda g: (-g,))


def maximum(a: Tensor, b) -> Tensor:
    b = as_tensor(b, like=a)
    mask = a.data >= b.data  # ties route gradient to the first operand
    out = np.where(mask, a.data, b.data)
    return record(out, (a, b), lambda g: (
        _unbroadcast(g * mask, a.shape),
        _unbroadcast(g * ~mask, b.shape),
    ))


def minimum(a: Tensor, b) -> Tensor:
    b = as_tensor(b, like=a)
    mask = a.data <= b.data
    out = np.where(mask, a.data, b.data)
    return record(out, (a, b), lambda g: (
        _unbroadcast(g * mask, a.shape),
        _unbroadcast(g * ~mask, b.shape),
    ))


def sigmoid(a: Tensor) -> Tensor:
    y = _sigmoid(a.data)
    return record(y, (a,), lambda g: (g * y * (1.0 - y),))


def _sigmoid(x: np.ndarray) -> np.ndarray:
    out = np.empty_like(x)
    pos = x >= 0
    out[pos] = 1.0 / (1.0 + np.exp(-x[pos]))
    ex = np.exp(x[~pos])
    out[~pos] = ex / (1.0 + ex)
    return out


def tanh(a: Tensor) -> Tensor:
    y = np.tanh(a.data)
    return record(y, (a,), lambda g: (g * (1.0 - y * y),))


def softplus(a: Tensor) -> Tensor:
    x = a.data
    y = np.maximum(x, 0.0) + np.log1p(np.exp(-np.abs(x)))
    return record(y, (a,), lambda g: (g * _sigmoid(x),))


def leaky_relu(a: Tensor, slope: float = 0.1) -> Tensor:
    scale = np.where(a.data > 0, 1.0, slope).astype(a.data.dtype)
    return record(a.data * scale, (a,), lambda g: (g * scale,))


def bce_with_logits(logits: Tensor, targets) -> Tensor:
    """Elementwise binary cross-entropy on raw logits (stable form)."""
    targets = as_tensor(targets, like=logits)
    x, t = logits.data, targets.data
    loss = np.maximum(x, 0.0) - x * t + np.log1p(np.exp(-np.abs(x)))
    return record(loss, (logits, targets), lambda g: (
        g * (_sigmoid(x) - t),
        g * (-x),
    ))


def tsum(a: Tensor) -> Tensor:
    out = np.asarray(a.data.sum(), dtype=a.data.dtype)
    return record(out, (a,), lambda g: (np.broadcast_to(g, a.shape).astype(a.data.dtype, copy=True),))


def tmean(a: Tensor) -> Tensor:
    n = a.data.size
    out = np.asarray(a.data.mean(), dtype=a.data.dtype)
    return record(out, (a,), lambda g: ((np.broadcast_to(g, a.shape) / n).astype(a.data.dtype),))


def reshape(a: Tensor, shape) -> Tensor:
    shape = tuple(shape)
    return record(a.data.reshape(shape), (a,), lambda g: (g.reshape(a.shape),))


# ---------------------------------------------------------------------------
# channel plumbing

def concat(tensors, axis: int = -1) -> Tensor:
    tensors = list(tensors)
    out = np.concatenate([t.data for t in tensors], axis=axis)
    sizes = [t.data.shape[axis] for t in tensors]
    splits = np.cumsum(sizes)[:-1]

    def backward(g):
        return tuple(np.ascontiguousarray(p) for p in np.split(g, splits, axis=axis))

    return record(out, tuple(tensors), backward)


def split(a: Tensor, sizes, axis: int = -1):
    """Split along ``axis`` into chunks of the given sizes."""
    if sum(sizes) != a.data.shape[axis]:
        raise ShapeError(f"split sizes {tuple(sizes)} do not cover axis extent {a.data.shape[axis]}")
    outs = []
    start = 0
    for size in sizes:
        index = [slice(None)] * a.data.ndim
        index[axis] = slice(start, start + size)
        index = tuple(index)

        def backward(g, index=index):
            full = np.zeros(a.shape, dtype=a.data.dtype)
            full[index] = g
            return (full,)

        outs.append(record(np.ascontiguousarray(a.data[index]), (a,), backward))
        start += size
    return outs


def gather_pixels(a: Tensor, rows: np.ndarray, cols: np.ndarray) -> Tensor:
    """Select pixel vectors from an (H, W, C) map; returns (N, C)."""
    rows = np.asarray(rows, dtype=np.intp)
    cols = np.asarray(cols, dtype=np.intp)
    out = a.data[rows, cols]

    def backward(g):
        full = np.zeros(a.shape, dtype=a.data.dtype)
        np.add.at(full, (rows, cols), g)
        return (full,)

    return record(out, (a,), backward)


# ---------------------------------------------------------------------------
# 2D convolution

def conv2d(x: Tensor, w: Tensor, b: Tensor | None = None, stride: int = 1, padding: int = 0) -> Tensor:
    """Cross-correlation of an (H, W, Cin) map with (kh, kw, Cin, Cout) weights."""
    if x.data.ndim != 3 or w.data.ndim != 4:
        raise ShapeError(f"conv2d expects (H,W,C) input and (kh,kw,Cin,Cout) weights, got {x.shape} and {w.shape}")
    height, width, cin = x.shape
    kh, kw, wcin, cout = w.shape
    if kh % 2 == 0 or kw % 2 == 0:
        raise ShapeError(f"kernel spatial extent must be odd, got {kh}x{kw}")
    if wcin != cin:
        raise ShapeError(f"channel mismatch: input {x.shape} vs weights {w.shape}")
    if stride < 1 or padding < 0:
        raise ShapeError(f"invalid stride/padding ({stride}, {padding})")
    out_h = (height + 2 * padding - kh) // stride + 1
    out_w = (width + 2 * padding - kw) // stride + 1
    if out_h < 1 or out_w < 1:
        raise ShapeError(f"kernel {kh}x{kw} does not fit input {x.shape} with padding {padding}")

    xp = np.pad(x.data, ((padding, padding), (padding, padding), (0, 0))) if padding else x.data
    view = sliding_window_view(xp, (kh, kw), axis=(0, 1))[::stride, ::stride]
    patches = np.ascontiguousarray(view.transpose(0, 1, 3, 4, 2))  # (oh, ow, kh, kw, cin)
    pmat = patches.reshape(out_h * out_w, kh * kw * cin)
    wmat = w.data.reshape(kh * kw * cin, cout)
    out = (pmat @ wmat).reshape(out_h, out_w, cout)
    if b is not None:
        if b.shape != (cout,):
            raise ShapeError(f"bias shape {b.shape} != ({cout},)")
        out = out + b.data

    parents = (x, w) if b is None else (x, w, b)

    def backward(g):
        gmat = g.reshape(out_h * out_w, cout)
        dw = (pmat.T @ gmat).reshape(w.shape)
        dpat = (gmat @ wmat.T).reshape(out_h, out_w, kh, kw, cin)
        dxp = np.zeros((height + 2 * padding, width + 2 * padding, cin), dtype=x.data.dtype)
        for ki in range(kh):
            for kj in range(kw):
                dxp[ki:ki + stride * out_h:stride, kj:kj + stride * out_w:stride] += dpat[:, :, ki, kj]
        dx = dxp[padding:padding + height, padding:padding + width] if padding else dxp
        if b is None:
            return dx, dw
        return dx, dw, g.sum(axis=(0, 1))

    return record(out, parents, backward)


# ---------------------------------------------------------------------------
# bilinear sampling (zero contribution outside [0, W-1] x [0, H-1])

def _corner_terms(x, y, height, width):
    x0 = np.floor(x)
    y0 = np.floor(y)
    fx = x - x0
    fy = y - y0
    x0 = x0.astype(np.intp)
    y0 = y0.astype(np.intp)
    corners = []
    for dy, dx, wgt, dwx, dwy in (
        (0, 0, (1 - fx) * (1 - fy), -(1 - fy), -(1 - fx)),
        (0, 1, fx * (1 - fy), (1 - fy), -fx),
        (1, 0, (1 - fx) * fy, -fy, (1 - fx)),
        (1, 1, fx * fy, fy, fx),
    ):
        yi = y0 + dy
        xi = x0 + dx
        valid = (xi >= 0) & (xi < width) & (yi >= 0) & (yi < height)
        corners.append((yi, xi, valid, wgt, dwx, dwy))
    return corners


def bilinear_sample(src: Tensor, coords: Tensor) -> Tensor:
    """Sample an (H, W, C) map at fractional (x, y) targets of shape (..., 2)."""
    if src.data.ndim != 3:
        raise ShapeError(f"bilinear_sample expects an (H,W,C) source, got {src.shape}")
    if coords.shape[-1] != 2:
        raise ShapeError(f"coords last axis must be 2, got {coords.shape}")
    cd = coords.data
    if not np.isfinite(cd).all():
        raise ValueError("bilinear_sample: non-finite sample coordinates")
    height, width, channels = src.shape
    x = cd[..., 0]
    y = cd[..., 1]
    corners = _corner_terms(x, y, height, width)

    values = []
    out = np.zeros(x.shape + (channels,), dtype=src.data.dtype)
    for yi, xi, valid, wgt, _, _ in corners:
        v = src.data[yi.clip(0, height - 1), xi.clip(0, width - 1)]
        v = v * valid[..., None]
        values.append(v)
        out += wgt[..., None] * v

    def backward(g):
        dsrc = None
        dcoords = None
        if src.requires_grad:
            dsrc = np.zeros(src.shape, dtype=src.data.dtype)
            for (yi, xi, valid, wgt, _, _) in corners:
                contrib = g * wgt[..., None]
                np.add.at(dsrc, (yi[valid], xi[valid]), contrib[valid])
        if coords.requires_grad:
            dx = np.zeros_like(x)
            dy = np.zeros_like(y)
            for (yi, xi, valid, wgt, dwx, dwy), v in zip(corners, values):
                gv = (g * v).sum(axis=-1)
                dx += dwx * gv
                dy += dwy * gv
            dcoords = np.stack([dx, dy], axis=-1)
        return dsrc, dcoords

    return record(out, (src, coords), backward)


def lookup_volume(vol: Tensor, coords: Tensor) -> Tensor:
    """Sample per-pixel slices of a rank-4 similarity volume.

    ``vol`` has shape (H0, W0, H1, W1); ``coords`` has shape (H0, W0, S, 2)
    holding (x, y) targets into each pixel's (H1, W1) slice. Returns
    (H0, W0, S). Out-of-range taps contribute zero.
    """
    if vol.data.ndim != 4:
        raise ShapeError(f"lookup_volume expects a rank-4 volume, got {vol.shape}")
    h0, w0, h1, w1 = vol.shape
    if coords.shape[:2] != (h0, w0) or coords.shape[-1] != 2:
        raise ShapeError(f"coords shape {coords.shape} incompatible with volume {vol.shape}")
    cd = coords.data
    if not np.isfinite(cd).all():
        raise ValueError("lookup_volume: non-finite sample coordinates")
    x = cd[..., 0]
    y = cd[..., 1]
    samples = x.shape[2]
    rows = np.broadcast_to(np.arange(h0, dtype=np.intp)[:, None, None], x.shape)
    cols = np.broadcast_to(np.arange(w0, dtype=np.intp)[None, :, None], x.shape)
    corners = _corner_terms(x, y, h1, w1)

    values = []
    out = np.zeros((h0, w0, samples), dtype=vol.data.dtype)
    for yi, xi, valid, wgt, _, _ in corners:
        v = vol.data[rows, cols, yi.clip(0, h1 - 1), xi.clip(0, w1 - 1)]
        v = v * valid
        values.append(v)
        out += wgt * v

    def backward(g):
        dvol = None
        dcoords = None
        if vol.requires_grad:
            dvol = np.zeros(vol.shape, dtype=vol.data.dtype)
            for (yi, xi, valid, wgt, _, _) in corners:
                contrib = g * wgt
                np.add.at(dvol, (rows[valid], cols[valid], yi[valid], xi[valid]), contrib[valid])
        if coords.requires_grad:
            dx = np.zeros_like(x)
            dy = np.zeros_like(y)
            for (yi, xi, valid, wgt, dwx, dwy), v in zip(corners, values):
                gv = g * v
                dx += dwx * gv
                dy += dwy * gv
            dcoords = np.stack([dx, dy], axis=-1)
        return dvol, dcoords

    return record(out, (vol, coords), backward)


# ---------------------------------------------------------------------------
# resampling

def upsample2x(x: Tensor, mode: str = "nearest") -> Tensor:
    """Double both spatial extents; nearest replication or corner-aligned bilinear."""
    if x.data.ndim != 3:
        raise ShapeError(f"upsample2x expects (H,W,C), got {x.shape}")
    if mode == "nearest":
        height, width, channels = x.shape
        out = np.repeat(np.repeat(x.data, 2, axis=0), 2, axis=1)

        def backward(g):
            return (g.reshape(height, 2, width, 2, channels).sum(axis=(1, 3)),)

        return record(out, (x,), backward)
    if mode == "bilinear":
        height, width, _ = x.shape
        ys = np.arange(2 * height) * ((height - 1) / max(2 * height - 1, 1))
        xs = np.arange(2 * width) * ((width - 1) / max(2 * width - 1, 1))
        grid = np.stack(np.meshgrid(xs, ys), axis=-1).astype(x.data.dtype)
        return bilinear_sample(x, Tensor(grid))
    raise ValueError(f"unknown upsample mode {mode!r}")


def avgpool2x(x: Tensor) -> Tensor:
    """2x2 mean pooling with stride 2; spatial extents must be even."""
    height, width, channels = x.shape
    if height % 2 or width % 2:
        raise ShapeError(f"avgpool2x needs even spatial extents, got {x.shape}")
    out = x.data.reshape(height // 2, 2, width // 2, 2, channels).mean(axis=(1, 3))

    def backward(g):
        return (np.repeat(np.repeat(g, 2, axis=0), 2, axis=1) * 0.25,)

    return record(out, (x,), backward)


# ---------------------------------------------------------------------------
# convolutional GRU

@dataclass
class GruParams:
    """Gate kernels of a convolutional GRU; all convs preserve spatial size."""

    wz: Tensor
    bz: Tensor
    wr: Tensor
    br: Tensor
    wh: Tensor
    bh: Tensor

    def tensors(self):
        return {"wz": self.wz, "bz": self.bz, "wr": self.wr, "br": self.br, "wh": self.wh, "bh": self.bh}


def gru_cell(hidden: Tensor, inp: Tensor, params: GruParams) -> Tensor:
    """One convolutional GRU update: h' = (1-z)*h + z*tanh(Wh.[r*h, x])."""
    if hidden.shape[:2] != inp.shape[:2]:
        raise ShapeError(f"hidden {hidden.shape} and input {inp.shape} are not spatially aligned")
    pad = params.wz.shape[0] // 2
    hx = concat([hidden, inp])
    z = sigmoid(conv2d(hx, params.wz, params.bz, stride=1, padding=pad))
    r = sigmoid(conv2d(hx, params.wr, params.br, stride=1, padding=pad))
    cand = tanh(conv2d(concat([mul(r, hidden), inp]), params.wh, params.bh, stride=1, padding=pad))
    return add(mul(sub(as_tensor(1.0, like=z), z), hidden), mul(z, cand))
