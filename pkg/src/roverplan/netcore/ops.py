"""Differentiable operations on Tensors.

Layout convention is NCHW. Convolution is cross-correlation lowered to a
single matrix product per layer (im2col over a strided window view); the
input gradient is reassembled by a small scatter loop over kernel offsets,
which profiles faster here than a second im2col of the transposed kernel.
"""

from __future__ import annotations

import numpy as np
from numpy.lib.stride_tricks import sliding_window_view

from .tensor import Tensor, make_result


class ShapeError(ValueError):
    pass


def _pair(v) -> tuple[int, int]:
    if isinstance(v, (int, np.integer)):
        return int(v), int(v)
    a, b = v
    return int(a), int(b)


def _axis_geometry(size: int, k: int, s: int, padding: str, name: str):
    """Output length and (before, after) padding for one spatial axis."""
    if padding == "same":
        out = -(-size // s)
        total = max((out - 1) * s + k - size, 0)
        return out, total // 2, total - total // 2
    if padding == "valid":
        if size < k:
            raise ShapeError(f"{name}: window {k} exceeds input extent {size}")
        return (size - k) // s + 1, 0, 0
    raise ShapeError(f"{name}: padding must be 'same' or 'valid', got {padding!r}")


def add(a: Tensor, b: Tensor) -> Tensor:
    out = a.data + b.data

    def bwd(g):
        a.accumulate(_unbroadcast(g, a.data.shape))
        b.accumulate(_unbroadcast(g, b.data.shape))

    return make_result(out, (a, b), bwd)


def _unbroadcast(g: np.ndarray, shape: tuple) -> np.ndarray:
    while g.ndim > len(shape):
        g = g.sum(axis=0)
    for ax, n in enumerate(shape):
        if n == 1 and g.shape[ax] != 1:
            g = g.sum(axis=ax, keepdims=True)
    return g


def scale(x: Tensor, c: float) -> Tensor:
    c = float(c)

    def bwd(g):
        x.accumulate(g * c)

    return make_result(x.data * c, (x,), bwd)


def matmul(a: Tensor, b: Tensor) -> Tensor:
    if a.data.ndim != 2 or b.data.ndim != 2:
        raise ShapeError(f"matmul wants 2-D operands, got {a.shape} @ {b.shape}")
    if a.data.shape[1] != b.data.shape[0]:
        raise ShapeError(f"matmul inner dims differ: {a.shape} @ {b.shape}")
    out = a.data @ b.data

    def bwd(g):
        if a.requires_grad:
            a.accumulate(g @ b.data.T)
        if b.requires_grad:
            b.accumulate(a.data.T @ g)

    return make_result(out, (a, b), bwd)


def linear(x: Tensor, w: Tensor, b: Tensor) -> Tensor:
    """x [N, F_in] times w [F_in, F_out] plus bias [F_out]."""
    return add(matmul(x, w), b)


def relu(x: Tensor) -> Tensor:
    out = np.maximum(x.data, 0)

    def bwd(g):
        x.accumulate(g * (x.data > 0))

    return make_result(out, (x,), bwd)


def reshape(x: Tensor, shape) -> Tensor:
    orig = x.data.shape
    out = x.data.reshape(shape)

    def bwd(g):
        x.accumulate(g.reshape(orig))

    return make_result(out, (x,), bwd)


def flatten(x: Tensor) -> Tensor:
    """Collapse everything but the leading batch axis."""
    return reshape(x, (x.data.shape[0], -1))


def concat(parts: list[Tensor], axis: int) -> Tensor:
    out = np.concatenate([p.data for p in parts], axis=axis)
    sizes = [p.data.shape[axis] for p in parts]
    bounds = np.cumsum(sizes)[:-1]

    def bwd(g):
        for p, piece in zip(parts, np.split(g, bounds, axis=axis)):
            p.accumulate(piece)

    return make_result(out, tuple(parts), bwd)


def softmax(x: Tensor, axis: int = -1) -> Tensor:
    shifted = x.data - x.data.max(axis=axis, keepdims=True)
    e = np.exp(shifted)
    y = e / e.sum(axis=axis, keepdims=True)

    def bwd(g):
        dot = (g * y).sum(axis=axis, keepdims=True)
        x.accumulate(y * (g - dot))

    return make_result(y, (x,), bwd)


def conv2d(x: Tensor, w: Tensor, b: Tensor, stride=1, padding: str = "same",
           name: str = "conv") -> Tensor:
    """Cross-correlation with per-output-channel bias.

    x: [B, C, H, W]; w: [O, C, kh, kw]; b: [O].
    """
    if x.data.ndim != 4 or w.data.ndim != 4:
        raise ShapeError(f"{name}: conv wants 4-D input/weights, got "
                         f"{x.shape} and {w.shape}")
    bsz, c_in, h, wd = x.data.shape
    o, c_w, kh, kw = w.data.shape
    if c_in != c_w:
        raise ShapeError(f"{name}: input has {c_in} channels, kernel expects {c_w}")
    sh, sw = _pair(stride)
    oh, pt, pb = _axis_geometry(h, kh, sh, padding, name)
    ow, pl, pr = _axis_geometry(wd, kw, sw, padding, name)
    xp = np.pad(x.data, ((0, 0), (0, 0), (pt, pb), (pl, pr)))
    win = sliding_window_view(xp, (kh, kw), axis=(2, 3))[:, :, ::sh, ::sw]
    cols = win.transpose(0, 2, 3, 1, 4, 5).reshape(bsz * oh * ow, c_in * kh * kw)
    flat = cols @ w.data.reshape(o, -1).T + b.data
    out = flat.reshape(bsz, oh, ow, o).transpose(0, 3, 1, 2)

    def bwd(g):
        gr = np.ascontiguousarray(g)
        if w.requires_grad or b.requires_grad:
            dmat = gr.transpose(0, 2, 3, 1).reshape(bsz * oh * ow, o)
            if w.requires_grad:
                # cols stays alive in this closure: rebuilding it per step
                # costs more time than the buffer is worth
                w.accumulate((dmat.T @ cols).reshape(w.data.shape))
            if b.requires_grad:
                b.accumulate(dmat.sum(axis=0))
        if x.requires_grad:
            # dx is itself a correlation: dilate g by the stride, pad to
            # the full extent, and run the flipped kernel over it with the
            # same im2col machinery as the forward pass
            if sh > 1 or sw > 1:
                gd = np.zeros(
                    (bsz, o, (oh - 1) * sh + 1, (ow - 1) * sw + 1),
                    dtype=gr.dtype,
                )
                gd[:, :, ::sh, ::sw] = gr
            else:
                gd = gr
            gp = np.pad(gd, ((0, 0), (0, 0), (kh - 1, kh - 1), (kw - 1, kw - 1)))
            wing = sliding_window_view(gp, (kh, kw), axis=(2, 3))
            hf, wf = wing.shape[2], wing.shape[3]
            colsg = wing.transpose(0, 2, 3, 1, 4, 5).reshape(
                bsz * hf * wf, o * kh * kw)
            flipped = w.data[:, :, ::-1, ::-1].transpose(1, 0, 2, 3)
            dfull = (colsg @ flipped.reshape(c_in, -1).T).reshape(
                bsz, hf, wf, c_in).transpose(0, 3, 1, 2)
            # with non-exact VALID strides the trailing rows of xp never
            # entered a window, so dfull may be smaller than xp
            if (hf, wf) == xp.shape[2:]:
                dxp = dfull
            else:
                dxp = np.zeros_like(xp)
                dxp[:, :, :hf, :wf] = dfull
            x.accumulate(dxp[:, :, pt : pt + h, pl : pl + wd])

    return make_result(out, (x, w, b), bwd)


def maxpool2d(x: Tensor, kernel, stride=None, padding: str = "valid",
              name: str = "pool") -> Tensor:
    """Windowed maximum; gradient routes to the first maximum in each
    window's row-major scan."""
    if x.data.ndim != 4:
        raise ShapeError(f"{name}: pool wants 4-D input, got {x.shape}")
    kh, kw = _pair(kernel)
    sh, sw = _pair(stride if stride is not None else kernel)
    bsz, c, h, w = x.data.shape
    oh, pt, pb = _axis_geometry(h, kh, sh, padding, name)
    ow, pl, pr = _axis_geometry(w, kw, sw, padding, name)
    if pt or pb or pl or pr:
        xp = np.pad(x.data, ((0, 0), (0, 0), (pt, pb), (pl, pr)),
                    constant_values=-np.inf)
    else:
        xp = x.data
    win = sliding_window_view(xp, (kh, kw), axis=(2, 3))[:, :, ::sh, ::sw]
    flat = win.reshape(bsz, c, oh, ow, kh * kw)
    arg = flat.argmax(axis=-1)
    out = np.take_along_axis(flat, arg[..., None], axis=-1)[..., 0]

    def bwd(g):
        roff, coff = np.divmod(arg, kw)
        rows = roff + (sh * np.arange(oh))[None, None, :, None]
        cols = coff + (sw * np.arange(ow))[None, None, None, :]
        dxp = np.zeros((bsz, c, h + pt + pb, w + pl + pr), dtype=g.dtype)
        bi = np.arange(bsz)[:, None, None, None]
        ci = np.arange(c)[None, :, None, None]
        np.add.at(dxp, (bi, ci, rows, cols), g)
        x.accumulate(dxp[:, :, pt : pt + h, pl : pl + w])

    return make_result(np.ascontiguousarray(out), (x,), bwd)


def channel_max(x: Tensor) -> Tensor:
    """Maximum over the channel axis, keepdims; ties take the first channel."""
    arg = x.data.argmax(axis=1)
    out = np.take_along_axis(x.data, arg[:, None], axis=1)

    def bwd(g):
        dx = np.zeros_like(x.data)
        np.put_along_axis(dx, arg[:, None], g, axis=1)
        x.accumulate(dx)

    return make_result(out, (x,), bwd)


def gather_cells(x: Tensor, map_idx, rows, cols) -> Tensor:
    """Pick per-position channel vectors from a feature map.

    x: [B, C, H, W]; index arrays of length P select (map, row, col);
    returns [P, C]. Duplicate positions are fine, gradients accumulate.
    """
    mi = np.asarray(map_idx, dtype=np.int64)
    r = np.asarray(rows, dtype=np.int64)
    c = np.asarray(cols, dtype=np.int64)
    bsz, ch, h, w = x.data.shape
    out = x.data[mi, :, r, c]

    def bwd(g):
        dxt = np.zeros((bsz, h, w, ch), dtype=g.dtype)
        lin = (mi * h + r) * w + c
        np.add.at(dxt.reshape(bsz * h * w, ch), lin, g)
        x.accumulate(dxt.transpose(0, 3, 1, 2))

    return make_result(out, (x,), bwd)


def take_rows(x: Tensor, idx) -> Tensor:
    """Row gather: x [B, F] indexed by idx (length P) -> [P, F]."""
    ii = np.asarray(idx, dtype=np.int64)
    out = x.data[ii]

    def bwd(g):
        dx = np.zeros_like(x.data)
        np.add.at(dx, ii, g)
        x.accumulate(dx)

    return make_result(out, (x,), bwd)
