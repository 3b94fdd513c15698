"""Reverse-mode differentiation over numpy arrays.

This is not a general autodiff engine: it provides exactly the primitives
the restoration network needs (NCHW feature maps, 2-D convolution and its
transpose, modulated deformable sampling, pointwise nonlinearities,
pooling, bilinear 2x upsampling and scalar reductions), each with a
hand-written vector-Jacobian product. Convolutions lower to im2col matrix
multiplies so the heavy lifting stays in BLAS.

Gradient contract: forward passes are deterministic, and every input and
parameter gradient agrees with central finite differences to relative
1e-3 at double precision (verified by the test suite).
"""

from __future__ import annotations

import contextlib

import numpy as np

_GRAD_ENABLED = [True]


@contextlib.contextmanager
def no_grad():
    """Disable graph construction (inference mode)."""
    _GRAD_ENABLED.append(False)
    try:
        yield
    finally:
        _GRAD_ENABLED.pop()


def grad_enabled() -> bool:
    return _GRAD_ENABLED[-1]


class Tensor:
    """A numpy array plus optional backward plumbing."""

    __slots__ = ("data", "grad", "requires_grad", "_parents", "_vjp")

    def __init__(self, data, requires_grad: bool = False, parents=(), vjp=None):
        self.data = np.asarray(data)
        self.grad = None
        self.requires_grad = requires_grad
        self._parents = parents
        self._vjp = vjp

    @property
    def shape(self):
        return self.data.shape

    @property
    def dtype(self):
        return self.data.dtype

    @property
    def ndim(self):
        return self.data.ndim

    def detach(self) -> "Tensor":
        return Tensor(self.data)

    def zero_grad(self) -> None:
        self.grad = None

    def backward(self, grad=None) -> None:
        """Accumulate gradients into every reachable requires_grad tensor."""
        if grad is None:
            if self.data.size != 1:
                raise ValueError("backward() without a gradient needs a scalar")
            grad = np.ones_like(self.data)
        # Iterative post-order topological sort; graphs get deep (LSTM scans).
        order: list[Tensor] = []
        seen: set[int] = set()
        stack: list[tuple[Tensor, bool]] = [(self, False)]
        while stack:
            node, expanded = stack.pop()
            if expanded:
                order.append(node)
                continue
            if id(node) in seen:
                continue
            seen.add(id(node))
            stack.append((node, True))
            for p in node._parents:
                if p.requires_grad and id(p) not in seen:
                    stack.append((p, False))
        grads: dict[int, np.ndarray] = {id(self): np.asarray(grad, dtype=self.dtype)}
        for node in reversed(order):
            g = grads.pop(id(node), None)
            if g is None:
                continue
            if node._vjp is not None:
                parent_grads = node._vjp(g)
                for p, pg in zip(node._parents, parent_grads):
                    if pg is None or not p.requires_grad:
                        continue
                    # No in-place accumulation: vjp outputs may alias or be views.
                    if id(p) in grads:
                        grads[id(p)] = grads[id(p)] + pg
                    else:
                        grads[id(p)] = pg
            else:
                if node.grad is None:
                    node.grad = g.copy()
                else:
                    node.grad += g

    def __repr__(self):
        return f"Tensor(shape={self.data.shape}, requires_grad={self.requires_grad})"


class Parameter(Tensor):
    """A leaf tensor updated by the optimizer.

    ``fan_in`` records the effective fan-in for variance-scaling init;
    ``zero_init`` marks parameters that initialization must leave at zero
    (offset-predicting heads).
    """

    __slots__ = ("fan_in", "zero_init")

    def __init__(self, data, fan_in: int | None = None, zero_init: bool = False):
        super().__init__(np.asarray(data), requires_grad=True)
        self.fan_in = fan_in
        self.zero_init = zero_init


def as_tensor(x) -> Tensor:
    return x if isinstance(x, Tensor) else Tensor(np.asarray(x))


def _track(*parents: Tensor) -> bool:
    return grad_enabled() and any(p.requires_grad for p in parents)


def _result(data, parents, vjp_builder) -> Tensor:
    """Build a graph node, or a detached tensor when tracking is off."""
    if _track(*parents):
        return Tensor(data, requires_grad=True, parents=parents, vjp=vjp_builder())
    return Tensor(data)


def _unbroadcast(g: np.ndarray, shape) -> np.ndarray:
    if g.shape == tuple(shape):
        return g
    extra = g.ndim - len(shape)
    if extra:
        g = g.sum(axis=tuple(range(extra)))
    axes = tuple(i for i, (gs, s) in enumerate(zip(g.shape, shape)) if s == 1 and gs != 1)
    if axes:
        g = g.sum(axis=axes, keepdims=True)
    return g.reshape(shape)


# ---------------------------------------------------------------------------
# Pointwise and structural ops
# ---------------------------------------------------------------------------

def add(a: Tensor, b: Tensor) -> Tensor:
    a, b = as_tensor(a), as_tensor(b)
    out = a.data + b.data

    def vjp():
        def run(g):
            return _unbroadcast(g, a.shape), _unbroadcast(g, b.shape)
        return run

    return _result(out, (a, b), vjp)


def sub(a: Tensor, b: Tensor) -> Tensor:
    a, b = as_tensor(a), as_tensor(b)
    out = a.data - b.data

    def vjp():
        def run(g):
            return _unbroadcast(g, a.shape), _unbroadcast(-g, b.shape)
        return run

    return _result(out, (a, b), vjp)


def mul(a: Tensor, b: Tensor) -> Tensor:
    a, b = as_tensor(a), as_tensor(b)
    out = a.data * b.data

    def vjp():
        ad, bd = a.data, b.data

        def run(g):
            return _unbroadcast(g * bd, a.shape), _unbroadcast(g * ad, b.shape)
        return run

    return _result(out, (a, b), vjp)


def scale(a: Tensor, s: float) -> Tensor:
    a = as_tensor(a)

    def vjp():
        def run(g):
            return (g * s,)
        return run

    return _result(a.data * s, (a,), vjp)


def add_const(a: Tensor, c: float) -> Tensor:
    a = as_tensor(a)

    def vjp():
        def run(g):
            return (g,)
        return run

    return _result(a.data + c, (a,), vjp)


def leaky_relu(a: Tensor, slope: float = 0.1) -> Tensor:
    a = as_tensor(a)
    mask = a.data > 0
    out = np.where(mask, a.data, slope * a.data)

    def vjp():
        def run(g):
            return (np.where(mask, g, slope * g),)
        return run

    return _result(out, (a,), vjp)


def clamp_min0(a: Tensor) -> Tensor:
    """max(x, 0) with subgradient 0 on the clamped side."""
    a = as_tensor(a)
    mask = a.data > 0
    out = np.where(mask, a.data, 0.0)

    def vjp():
        def run(g):
            return (np.where(mask, g, 0.0),)
        return run

    return _result(out, (a,), vjp)


def sigmoid(a: Tensor) -> Tensor:
    a = as_tensor(a)
    # Numerically stable in both tails.
    d = a.data
    out = np.where(d >= 0, 1.0 / (1.0 + np.exp(-np.maximum(d, 0))),
                   np.exp(np.minimum(d, 0)) / (1.0 + np.exp(np.minimum(d, 0))))

    def vjp():
        o = out

        def run(g):
            return (g * o * (1.0 - o),)
        return run

    return _result(out, (a,), vjp)


def tanh(a: Tensor) -> Tensor:
    a = as_tensor(a)
    out = np.tanh(a.data)

    def vjp():
        o = out

        def run(g):
            return (g * (1.0 - o * o),)
        return run

    return _result(out, (a,), vjp)


def sqrt(a: Tensor) -> Tensor:
    a = as_tensor(a)
    out = np.sqrt(a.data)

    def vjp():
        o = out

        def run(g):
            return (g * 0.5 / o,)
        return run

    return _result(out, (a,), vjp)


def square(a: Tensor) -> Tensor:
    return mul(a, a)


def sum_all(a: Tensor) -> Tensor:
    a = as_tensor(a)
    out = np.asarray(a.data.sum())

    def vjp():
        def run(g):
            return (np.broadcast_to(g, a.shape),)
        return run

    return _result(out, (a,), vjp)


def mean_all(a: Tensor) -> Tensor:
    a = as_tensor(a)
    n = a.data.size
    out = np.asarray(a.data.mean())

    def vjp():
        def run(g):
            return (np.broadcast_to(g / n, a.shape),)
        return run

    return _result(out, (a,), vjp)


def concat(tensors, axis: int = 1) -> Tensor:
    ts = [as_tensor(t) for t in tensors]
    out = np.concatenate([t.data for t in ts], axis=axis)

    def vjp():
        sizes = [t.shape[axis] for t in ts]
        splits = np.cumsum(sizes)[:-1]

        def run(g):
            return tuple(np.split(g, splits, axis=axis))
        return run

    return _result(out, tuple(ts), vjp)


def narrow(a: Tensor, axis: int, start: int, length: int) -> Tensor:
    a = as_tensor(a)
    idx = [slice(None)] * a.ndim
    idx[axis] = slice(start, start + length)
    idx = tuple(idx)
    out = a.data[idx]

    def vjp():
        def run(g):
            full = np.zeros(a.shape, dtype=g.dtype)
            full[idx] = g
            return (full,)
        return run

    return _result(out, (a,), vjp)


def reshape(a: Tensor, shape) -> Tensor:
    a = as_tensor(a)
    out = a.data.reshape(shape)

    def vjp():
        def run(g):
            return (g.reshape(a.shape),)
        return run

    return _result(out, (a,), vjp)


def repeat_batch(a: Tensor, n: int) -> Tensor:
    """(B, ...) -> (B*n, ...) repeating each batch row n times (row-major)."""
    a = as_tensor(a)
    out = np.repeat(a.data, n, axis=0)

    def vjp():
        def run(g):
            return (g.reshape((a.shape[0], n) + a.shape[1:]).sum(axis=1),)
        return run

    return _result(out, (a,), vjp)


def global_avg_pool(a: Tensor) -> Tensor:
    """(B, C, H, W) -> (B, C, 1, 1) mean over the spatial axes."""
    a = as_tensor(a)
    out = a.data.mean(axis=(2, 3), keepdims=True)

    def vjp():
        _, _, h, w = a.shape

        def run(g):
            return (np.broadcast_to(g / (h * w), a.shape).copy(),)
        return run

    return _result(out, (a,), vjp)


# ---------------------------------------------------------------------------
# Convolutions
# ---------------------------------------------------------------------------

def _pad_hw(x: np.ndarray, pad: int) -> np.ndarray:
    if pad == 0:
        return x
    b, c, h, w = x.shape
    out = np.zeros((b, c, h + 2 * pad, w + 2 * pad), dtype=x.dtype)
    out[:, :, pad:pad + h, pad:pad + w] = x
    return out


def _im2col(xp: np.ndarray, kh: int, kw: int, stride: int, ho: int,
            wo: int) -> np.ndarray:
    """(B, C, Hp, Wp) -> (B, C*kh*kw, Ho*Wo) via kh*kw strided slice copies."""
    b, c = xp.shape[:2]
    col = np.empty((b, c, kh * kw, ho * wo), dtype=xp.dtype)
    for i in range(kh):
        for j in range(kw):
            col[:, :, i * kw + j, :] = \
                xp[:, :, i:i + stride * ho:stride, j:j + stride * wo:stride] \
                .reshape(b, c, ho * wo)
    return col.reshape(b, c * kh * kw, ho * wo)


def _col2im(dcol: np.ndarray, xshape, kh: int, kw: int, stride: int, pad: int,
            ho: int, wo: int) -> np.ndarray:
    b, c, h, w = xshape
    dxp = np.zeros((b, c, h + 2 * pad, w + 2 * pad), dtype=dcol.dtype)
    dc = dcol.reshape(b, c, kh * kw, ho, wo)
    for i in range(kh):
        for j in range(kw):
            dxp[:, :, i:i + stride * ho:stride, j:j + stride * wo:stride] += \
                dc[:, :, i * kw + j]
    if pad:
        return dxp[:, :, pad:-pad, pad:-pad]
    return dxp


def conv2d(x: Tensor, w: Tensor, b: Tensor | None = None, stride: int = 1,
           pad: int = 1) -> Tensor:
    """2-D convolution (cross-correlation), NCHW, weight (Cout, Cin, kh, kw)."""
    x, w = as_tensor(x), as_tensor(w)
    bt = as_tensor(b) if b is not None else None
    bsz, cin, h, wdt = x.shape
    cout, cin_w, kh, kw = w.shape
    if cin != cin_w:
        raise ValueError(f"conv2d channel mismatch: input {cin}, weight {cin_w}")
    ho = (h + 2 * pad - kh) // stride + 1
    wo = (wdt + 2 * pad - kw) // stride + 1
    col = _im2col(_pad_hw(x.data, pad), kh, kw, stride, ho, wo)
    w2 = w.data.reshape(cout, cin * kh * kw)
    out = np.matmul(w2[None], col)
    if bt is not None:
        out += bt.data[None, :, None]
    out = out.reshape(bsz, cout, ho, wo)

    parents = (x, w) if bt is None else (x, w, bt)

    def vjp():
        def run(g):
            gf = g.reshape(bsz, cout, ho * wo)
            dx = dw = db = None
            if w.requires_grad:
                col_b = _im2col(_pad_hw(x.data, pad), kh, kw, stride, ho, wo)
                dw = np.matmul(gf, col_b.transpose(0, 2, 1)).sum(axis=0) \
                    .reshape(w.shape)
            if x.requires_grad:
                dcol = np.matmul(w2.T[None], gf)
                dx = _col2im(dcol, x.shape, kh, kw, stride, pad, ho, wo)
            if bt is not None and bt.requires_grad:
                db = g.sum(axis=(0, 2, 3))
            return (dx, dw) if bt is None else (dx, dw, db)
        return run

    return _result(out, parents, vjp)


def conv_transpose2d(x: Tensor, w: Tensor, b: Tensor | None = None,
                     stride: int = 2, pad: int = 1, out_pad: int = 1) -> Tensor:
    """Transposed convolution, weight (Cin, Cout, kh, kw); exact adjoint of conv2d."""
    x, w = as_tensor(x), as_tensor(w)
    bt = as_tensor(b) if b is not None else None
    bsz, cin, h, wdt = x.shape
    cin_w, cout, kh, kw = w.shape
    if cin != cin_w:
        raise ValueError(f"conv_transpose2d channel mismatch: {cin} vs {cin_w}")
    if out_pad >= stride:
        raise ValueError("output padding must be smaller than stride")
    hout = (h - 1) * stride - 2 * pad + kh + out_pad
    wout = (wdt - 1) * stride - 2 * pad + kw + out_pad
    w2 = w.data.reshape(cin, cout * kh * kw)

    xf = x.data.reshape(bsz, cin, h * wdt)
    scat = np.matmul(w2.T[None], xf).reshape(bsz, cout, kh * kw, h, wdt)
    buf = np.zeros((bsz, cout, (h - 1) * stride + kh,
                    (wdt - 1) * stride + kw), dtype=x.dtype)
    for i in range(kh):
        for j in range(kw):
            buf[:, :, i:i + stride * (h - 1) + 1:stride,
                j:j + stride * (wdt - 1) + 1:stride] += scat[:, :, i * kw + j]
    out = buf[:, :, pad:pad + hout, pad:pad + wout]
    if bt is not None:
        out = out + bt.data[None, :, None, None]

    parents = (x, w) if bt is None else (x, w, bt)

    def vjp():
        def run(g):
            dx = dw = db = None
            col = None
            if x.requires_grad or w.requires_grad:
                # Re-pad the gradient to the pre-crop buffer coordinates,
                # then read it back through the scatter pattern.
                gp = np.zeros((bsz, cout, (h - 1) * stride + kh,
                               (wdt - 1) * stride + kw), dtype=g.dtype)
                gp[:, :, pad:pad + hout, pad:pad + wout] = g
                col = _im2col(gp, kh, kw, stride, h, wdt)
            if x.requires_grad:
                dx = np.matmul(w2[None], col).reshape(x.shape)
            if w.requires_grad:
                dw = np.matmul(xf, col.transpose(0, 2, 1)).sum(axis=0) \
                    .reshape(w.shape)
            if bt is not None and bt.requires_grad:
                db = g.sum(axis=(0, 2, 3))
            return (dx, dw) if bt is None else (dx, dw, db)
        return run

    return _result(out, parents, vjp)


# ---------------------------------------------------------------------------
# Bilinear 2x upsampling (half-pixel convention, clamped edges)
# ---------------------------------------------------------------------------

def _up2_axis(x: np.ndarray, axis: int) -> np.ndarray:
    xm = np.moveaxis(x, axis, -1)
    n = xm.shape[-1]
    left = xm[..., np.maximum(np.arange(n) - 1, 0)]
    right = xm[..., np.minimum(np.arange(n) + 1, n - 1)]
    out = np.empty(xm.shape[:-1] + (2 * n,), dtype=x.dtype)
    out[..., 0::2] = 0.75 * xm + 0.25 * left
    out[..., 1::2] = 0.75 * xm + 0.25 * right
    return np.moveaxis(out, -1, axis)


def _up2_axis_adj(g: np.ndarray, axis: int) -> np.ndarray:
    gm = np.moveaxis(g, axis, -1)
    n = gm.shape[-1] // 2
    even, odd = gm[..., 0::2], gm[..., 1::2]
    out = 0.75 * (even + odd)
    out[..., :-1] += 0.25 * even[..., 1:]   # out[2(i+1)] drew on in[i]
    out[..., 0] += 0.25 * even[..., 0]      # clamped left edge
    out[..., 1:] += 0.25 * odd[..., :-1]    # out[2(i-1)+1] drew on in[i]
    out[..., -1] += 0.25 * odd[..., -1]     # clamped right edge
    return np.moveaxis(out, -1, axis)


def upsample_bilinear2x(a: Tensor) -> Tensor:
    """(B, C, H, W) -> (B, C, 2H, 2W), separable half-pixel bilinear."""
    a = as_tensor(a)
    out = _up2_axis(_up2_axis(a.data, 2), 3)

    def vjp():
        def run(g):
            return (_up2_axis_adj(_up2_axis_adj(g, 3), 2),)
        return run

    return _result(out, (a,), vjp)


# ---------------------------------------------------------------------------
# Modulated deformable convolution
# ---------------------------------------------------------------------------

def _bilinear_corners(ys, xs, h, w):
    """Corner flat indices, interpolation weights and validity per sample.

    Weights already carry the validity factor, so clipped out-of-bounds
    indices contribute exactly zero (zero-padding semantics).
    """
    y0 = np.floor(ys)
    x0 = np.floor(xs)
    ty = (ys - y0).astype(ys.dtype)
    tx = (xs - x0).astype(xs.dtype)
    y0 = y0.astype(np.int64)
    x0 = x0.astype(np.int64)
    corners = []
    for dy, dx, wgt in ((0, 0, (1 - ty) * (1 - tx)), (0, 1, (1 - ty) * tx),
                        (1, 0, ty * (1 - tx)), (1, 1, ty * tx)):
        yy = y0 + dy
        xx = x0 + dx
        valid = (yy >= 0) & (yy < h) & (xx >= 0) & (xx < w)
        flat = np.clip(yy, 0, h - 1) * w + np.clip(xx, 0, w - 1)
        corners.append((flat, (wgt * valid).astype(ys.dtype), valid))
    return corners, ty, tx


def deform_conv2d(x: Tensor, offsets: Tensor, masks: Tensor, w: Tensor,
                  b: Tensor | None = None, groups: int = 1) -> Tensor:
    """Modulated deformable convolution with bilinear sampling.

    x: (B, C, H, W); offsets: (B, G, K, 2, H, W) as (dy, dx) per kernel tap;
    masks: (B, G, K, H, W) in [0, 1]; w: (Cout, C, kh, kw) with kh*kw == K.
    Out-of-bounds samples contribute zero (zero padding). Differentiable in
    x, offsets, masks, w and b. Output resolution equals the input.
    """
    x, offsets, masks = as_tensor(x), as_tensor(offsets), as_tensor(masks)
    w = as_tensor(w)
    bt = as_tensor(b) if b is not None else None
    bsz, c, h, wdt = x.shape
    cout, cin_w, kh, kw = w.shape
    k = kh * kw
    g_ = groups
    if c != cin_w:
        raise ValueError("deform_conv2d channel mismatch")
    if c % g_:
        raise ValueError("channels must divide into offset groups")
    if offsets.shape != (bsz, g_, k, 2, h, wdt):
        raise ValueError(f"offsets shape {offsets.shape} does not match "
                         f"kernel K={k}, groups={g_}")
    if masks.shape != (bsz, g_, k, h, wdt):
        raise ValueError(f"masks shape {masks.shape} does not match K={k}")
    cg = c // g_
    pad = (kh - 1) // 2

    cells = h * wdt
    grid_y = np.arange(h, dtype=x.dtype)[:, None]
    grid_x = np.arange(wdt, dtype=x.dtype)[None, :]
    pk_y = (np.arange(k) // kw - pad).astype(x.dtype)[:, None, None]
    pk_x = (np.arange(k) % kw - pad).astype(x.dtype)[:, None, None]
    # Sample positions for every tap at once: (B, G, K, H, W).
    ys = grid_y + pk_y + offsets.data[:, :, :, 0]
    xs = grid_x + pk_x + offsets.data[:, :, :, 1]

    xg = x.data.reshape(bsz, g_, cg, cells)

    def gather(flat):
        # flat: (B, G, K, H, W) spatial indices -> values (B, G, Cg, K*cells).
        idx = flat.reshape(bsz, g_, 1, k * cells)
        return np.take_along_axis(xg, idx, axis=3)

    corners, ty, tx = _bilinear_corners(ys, xs, h, wdt)

    def sample_corners():
        vals = []
        for flat, wgt, _valid in corners:
            vals.append(gather(flat).reshape(bsz, g_, cg, k, cells))
        return vals

    vals4 = sample_corners()
    wgts = [wgt.reshape(bsz, g_, 1, k, cells) for _flat, wgt, _valid in corners]
    sampled = (vals4[0] * wgts[0] + vals4[1] * wgts[1]
               + vals4[2] * wgts[2] + vals4[3] * wgts[3])
    col = sampled * masks.data.reshape(bsz, g_, 1, k, cells)

    col_flat = col.reshape(bsz, c * k, cells)
    w2 = w.data.reshape(cout, c * k)
    out = np.matmul(w2[None], col_flat).reshape(bsz, cout, h, wdt)
    if bt is not None:
        out = out + bt.data[None, :, None, None]

    parents = [x, offsets, masks, w] + ([bt] if bt is not None else [])

    def vjp():
        def run(g):
            gf = g.reshape(bsz, cout, cells)
            dw = np.matmul(gf, col_flat.transpose(0, 2, 1)).sum(axis=0) \
                .reshape(w.shape)
            dcol = np.matmul(w2.T[None], gf).reshape(bsz, g_, cg, k, cells)
            # Zero-extended corner values: the position gradient sees 0
            # outside the image, not the clipped edge sample.
            v4 = [v * valid.reshape(bsz, g_, 1, k, cells)
                  for v, (_f, _w, valid) in zip(sample_corners(), corners)]
            sampled_b = (v4[0] * wgts[0] + v4[1] * wgts[1]
                         + v4[2] * wgts[2] + v4[3] * wgts[3])
            dmask = (dcol * sampled_b).sum(axis=2).reshape(masks.shape)
            dval = dcol * masks.data.reshape(bsz, g_, 1, k, cells)
            # Scatter-add the four corner contributions back to the input.
            bgc = (np.arange(bsz * g_ * cg, dtype=np.int64) * cells) \
                .reshape(bsz, g_, cg, 1, 1)
            dx_flat = np.zeros(bsz * c * cells, dtype=np.float64)
            for (flat, wgt, _valid) in corners:
                contrib = dval * wgt.reshape(bsz, g_, 1, k, cells)
                idx = bgc + flat.reshape(bsz, g_, 1, k, cells)
                idx = np.broadcast_to(idx, contrib.shape)
                dx_flat += np.bincount(idx.ravel(), weights=contrib.ravel(),
                                       minlength=dx_flat.size)
            v00, v01, v10, v11 = v4
            tyv = ty.reshape(bsz, g_, 1, k, cells)
            txv = tx.reshape(bsz, g_, 1, k, cells)
            d_dy = (v10 - v00) * (1 - txv) + (v11 - v01) * txv
            d_dx = (v01 - v00) * (1 - tyv) + (v11 - v10) * tyv
            doff = np.empty_like(offsets.data)
            doff[:, :, :, 0] = (dval * d_dy).sum(axis=2).reshape(
                bsz, g_, k, h, wdt)
            doff[:, :, :, 1] = (dval * d_dx).sum(axis=2).reshape(
                bsz, g_, k, h, wdt)
            dx = dx_flat.reshape(x.shape).astype(x.dtype, copy=False)
            db = g.sum(axis=(0, 2, 3)) if bt is not None else None
            outs = [dx, doff, dmask, dw]
            if bt is not None:
                outs.append(db)
            return tuple(outs)
        return run

    return _result(out, tuple(parents), vjp)


# ---------------------------------------------------------------------------
# Color transform (the loss-side gamma pipeline)
# ---------------------------------------------------------------------------

def isp_process(x: Tensor, isp) -> Tensor:
    """Differentiable linear-RGB -> sRGB transform on (B, 3, H, W) tensors.

    Forward and VJP both delegate to :mod:`gcpnet.rawproc`, so the loss-side
    gamma pipeline and the data-side one are the same code.
    """
    from .. import rawproc as _rp

    x = as_tensor(x)
    if x.ndim != 4 or x.shape[1] != 3:
        raise ValueError(f"expected (B, 3, H, W), got {x.shape}")
    hwc = np.moveaxis(x.data, 1, -1)
    out = np.stack([_rp.process(hwc[i], isp) for i in range(hwc.shape[0])])
    out = np.moveaxis(out, -1, 1)

    def vjp():
        def run(g):
            ghwc = np.moveaxis(g, 1, -1)
            dx = np.stack([_rp.process_vjp(hwc[i], isp, ghwc[i])
                           for i in range(hwc.shape[0])])
            return (np.moveaxis(dx, -1, 1),)
        return run

    return _result(out, (x,), vjp)
