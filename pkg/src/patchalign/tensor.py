"""Dense tensors with reverse-mode automatic differentiation.

Tensors wrap a numpy array (float32 for training, float64 for verification)
and record the operations applied to them so `backward()` on a scalar loss
can fill in `.grad` for every tensor that requires gradients. There is no
broadcasting beyond the bias-add built into conv2d / linear_per_location;
any other shape mismatch raises ValueError.

Numerical conventions:
  * `log` clamps its argument to >= 1e-12 (probabilities underflow at 32-bit);
    its derivative is 0 inside the clamped region.
  * relu / leaky_relu use the negative-side slope as derivative at exactly 0.
"""

import numpy as np

LOG_EPS = 1e-12

_grad_enabled = True


class no_grad:
    """Context manager that disables graph recording (inference mode)."""

    def __enter__(self):
        global _grad_enabled
        self._prev = _grad_enabled
        _grad_enabled = False

    def __exit__(self, *exc):
        global _grad_enabled
        _grad_enabled = self._prev


def _as_array(data, dtype):
    arr = np.asarray(data, dtype=dtype)
    if arr.dtype not in (np.float32, np.float64):
        arr = arr.astype(np.float32)
    return arr


class Tensor:
    """A dense real array with optional gradient tracking."""

    __slots__ = ("data", "grad", "requires_grad", "_backward", "_prev")

    def __init__(self, data, requires_grad=False, dtype=None):
        self.data = _as_array(data, dtype)
        if not np.all(np.isfinite(self.data)):
            raise ValueError("tensor values must be finite")
        self.grad = None
        self.requires_grad = bool(requires_grad)
        self._backward = None
        self._prev = ()

    @classmethod
    def _from_data(cls, data, prev, backward):
        out = cls.__new__(cls)
        out.data = data
        out.grad = None
        out._prev = ()
        out._backward = None
        out.requires_grad = False
        if _grad_enabled and any(p.requires_grad for p in prev):
            out.requires_grad = True
            out._prev = tuple(prev)
            out._backward = backward
        return out

    @property
    def shape(self):
        return self.data.shape

    @property
    def dtype(self):
        return self.data.dtype

    @property
    def ndim(self):
        return self.data.ndim

    def __repr__(self):
        return f"Tensor(shape={self.data.shape}, dtype={self.data.dtype}, requires_grad={self.requires_grad})"

    def item(self):
        return float(self.data.reshape(-1)[0]) if self.data.size == 1 else self._size_error()

    def _size_error(self):
        raise ValueError(f"item() needs a single-element tensor, got shape {self.data.shape}")

    def detach(self):
        """Same values, cut off from the graph."""
        out = Tensor.__new__(Tensor)
        out.data = self.data
        out.grad = None
        out.requires_grad = False
        out._backward = None
        out._prev = ()
        return out

    def zero_grad(self):
        self.grad = None

    def _accum(self, g):
        if self.grad is None:
            self.grad = np.zeros_like(self.data)
        self.grad += g

    def backward(self):
        """Reverse-mode pass from a scalar; grads accumulate by addition."""
        if self.data.size != 1:
            raise ValueError(f"backward() requires a scalar tensor, got shape {self.data.shape}")
        if not self.requires_grad:
            return
        topo, visited = [], set()
        stack = [(self, False)]
        while stack:
            node, processed = stack.pop()
            if processed:
                topo.append(node)
                continue
            if id(node) in visited:
                continue
            visited.add(id(node))
            stack.append((node, True))
            for p in node._prev:
                if p.requires_grad and id(p) not in visited:
                    stack.append((p, False))
        self._accum(np.ones_like(self.data))
        for node in reversed(topo):
            if node._backward is not None:
                node._backward(node.grad)

    # -- elementwise arithmetic (same-shape tensors or python scalars) --

    def _coerce(self, other, opname):
        if isinstance(other, Tensor):
            if other.data.shape != self.data.shape:
                raise ValueError(
                    f"{opname}: shape mismatch {self.data.shape} vs {other.data.shape}"
                )
            return other
        if np.isscalar(other):
            return None
        raise TypeError(f"{opname}: unsupported operand {type(other).__name__}")

    def __add__(self, other):
        t = self._coerce(other, "add")
        if t is None:
            data = self.data + self.data.dtype.type(other)

            def bwd(g, a=self):
                a._accum(g)

            return Tensor._from_data(data, (self,), bwd)
        data = self.data + t.data

        def bwd(g, a=self, b=t):
            if a.requires_grad:
                a._accum(g)
            if b.requires_grad:
                b._accum(g)

        return Tensor._from_data(data, (self, t), bwd)

    __radd__ = __add__

    def __mul__(self, other):
        t = self._coerce(other, "mul")
        if t is None:
            c = self.data.dtype.type(other)
            data = self.data * c

            def bwd(g, a=self, c=c):
                a._accum(g * c)

            return Tensor._from_data(data, (self,), bwd)
        data = self.data * t.data

        def bwd(g, a=self, b=t):
            if a.requires_grad:
                a._accum(g * b.data)
            if b.requires_grad:
                b._accum(g * a.data)

        return Tensor._from_data(data, (self, t), bwd)

    __rmul__ = __mul__

    def __neg__(self):
        return self * -1.0

    def __sub__(self, other):
        if isinstance(other, Tensor):
            return self + (-other)
        return self + (-other)

    def __rsub__(self, other):
        return (-self) + other

    def sum(self):
        """Full reduction to a scalar tensor."""
        data = np.asarray(self.data.sum(dtype=self.data.dtype))

        def bwd(g, a=self):
            a._accum(np.broadcast_to(g, a.data.shape).astype(a.data.dtype, copy=False))

        return Tensor._from_data(data, (self,), bwd)

    def log(self):
        """Natural log with the argument clamped to >= LOG_EPS."""
        clamped = np.maximum(self.data, LOG_EPS)
        data = np.log(clamped)

        def bwd(g, a=self, clamped=clamped):
            a._accum(np.where(a.data > LOG_EPS, g / clamped, 0.0).astype(a.data.dtype, copy=False))

        return Tensor._from_data(data, (self,), bwd)


def _check_tensor(x, name):
    if not isinstance(x, Tensor):
        raise TypeError(f"{name} must be a Tensor, got {type(x).__name__}")
    return x


# -- convolution ------------------------------------------------------------

_col_index_cache = {}


def _col_indices(c_in, h, w, kh, kw, stride, padding):
    """Flat gather indices mapping a padded image to its im2col matrix."""
    key = (c_in, h, w, kh, kw, stride, padding)
    cached = _col_index_cache.get(key)
    if cached is not None:
        return cached
    hp, wp = h + 2 * padding, w + 2 * padding
    out_h = (hp - kh) // stride + 1
    out_w = (wp - kw) // stride + 1
    oi = np.arange(out_h) * stride
    oj = np.arange(out_w) * stride
    rows = oi[:, None] + np.arange(kh)[None, :]          # out_h x kh
    cols = oj[:, None] + np.arange(kw)[None, :]          # out_w x kw
    # layout: (c, ki, kj) x (i, j)
    spatial = rows[:, None, :, None] * wp + cols[None, :, None, :]  # out_h,out_w,kh,kw
    spatial = spatial.transpose(2, 3, 0, 1).reshape(kh * kw, out_h * out_w)
    chan = (np.arange(c_in) * (hp * wp))[:, None, None]
    idx = (chan + spatial[None]).reshape(c_in * kh * kw, out_h * out_w)
    _col_index_cache[key] = (idx, out_h, out_w, hp, wp)
    return _col_index_cache[key]


def conv2d(x, kernels, bias, stride=1, padding=0):
    """2-D cross-correlation: x (C_in,H,W) * kernels (C_out,C_in,kh,kw) + bias."""
    _check_tensor(x, "input")
    _check_tensor(kernels, "kernels")
    _check_tensor(bias, "bias")
    if x.ndim != 3 or kernels.ndim != 4:
        raise ValueError(f"conv2d expects (C,H,W) input and (O,C,kh,kw) kernels, got {x.shape} and {kernels.shape}")
    c_in, h, w = x.shape
    c_out, kc, kh, kw = kernels.shape
    if kc != c_in:
        raise ValueError(f"conv2d: kernel C_in {kc} does not match input channels {c_in}")
    if bias.shape != (c_out,):
        raise ValueError(f"conv2d: bias shape {bias.shape} does not match C_out {c_out}")
    if stride < 1:
        raise ValueError(f"conv2d: stride must be >= 1, got {stride}")
    if padding < 0:
        raise ValueError(f"conv2d: padding must be >= 0, got {padding}")
    if kh > h + 2 * padding or kw > w + 2 * padding:
        raise ValueError(f"conv2d: kernel {kh}x{kw} exceeds padded input {h + 2 * padding}x{w + 2 * padding}")

    idx, out_h, out_w, hp, wp = _col_indices(c_in, h, w, kh, kw, stride, padding)
    if padding:
        xpad = np.zeros((c_in, hp, wp), dtype=x.data.dtype)
        xpad[:, padding:padding + h, padding:padding + w] = x.data
    else:
        xpad = x.data
    x_col = xpad.reshape(-1)[idx]                       # (C_in*kh*kw, out_h*out_w)
    w_mat = kernels.data.reshape(c_out, -1)
    out = (w_mat @ x_col + bias.data[:, None]).reshape(c_out, out_h, out_w)

    def bwd(g, x=x, kernels=kernels, bias=bias, x_col=x_col, w_mat=w_mat, idx=idx):
        g_mat = g.reshape(c_out, -1)
        if bias.requires_grad:
            bias._accum(g_mat.sum(axis=1))
        if kernels.requires_grad:
            kernels._accum((g_mat @ x_col.T).reshape(kernels.data.shape))
        if x.requires_grad:
            d_col = w_mat.T @ g_mat
            flat = np.bincount(idx.reshape(-1), weights=d_col.reshape(-1).astype(np.float64),
                               minlength=c_in * hp * wp)
            dpad = flat.reshape(c_in, hp, wp).astype(x.data.dtype)
            if padding:
                dpad = dpad[:, padding:padding + h, padding:padding + w]
            x._accum(dpad)

    return Tensor._from_data(out, (x, kernels, bias), bwd)


# -- pooling ----------------------------------------------------------------

def _pool_bins(n, out_n):
    starts = (np.arange(out_n) * n) // out_n
    ends = (np.arange(1, out_n + 1) * n) // out_n
    return starts, (ends - starts)


def adaptive_avg_pool2d(x, out_h, out_w):
    """Mean-pool (C,H,W) to (C,out_h,out_w) with floor bin boundaries."""
    _check_tensor(x, "input")
    if x.ndim != 3:
        raise ValueError(f"adaptive_avg_pool2d expects (C,H,W), got {x.shape}")
    c, h, w = x.shape
    if out_h < 1 or out_w < 1:
        raise ValueError(f"adaptive_avg_pool2d: output dims must be positive, got {out_h}x{out_w}")
    if out_h > h or out_w > w:
        raise ValueError(f"adaptive_avg_pool2d: output {out_h}x{out_w} exceeds input {h}x{w}")
    rs, rcount = _pool_bins(h, out_h)
    cs, ccount = _pool_bins(w, out_w)
    sums = np.add.reduceat(np.add.reduceat(x.data, rs, axis=1), cs, axis=2)
    area = (rcount[:, None] * ccount[None, :]).astype(x.data.dtype)
    out = sums / area

    def bwd(g, x=x, rcount=rcount, ccount=ccount, area=area):
        gnorm = (g / area).astype(x.data.dtype, copy=False)
        x._accum(np.repeat(np.repeat(gnorm, rcount, axis=1), ccount, axis=2))

    return Tensor._from_data(out, (x,), bwd)


def quadrant_pool(x, patch_h, patch_w):
    """Average (C,H,W) over the 2x2 quadrants of each patch-grid cell.

    Output is (4C, U, V) with quadrant blocks ordered top-left, top-right,
    bottom-left, bottom-right; channel q*C + c holds quadrant q of channel c.
    Residual border pixels beyond U*patch_h / V*patch_w are ignored.
    """
    _check_tensor(x, "input")
    if x.ndim != 3:
        raise ValueError(f"quadrant_pool expects (C,H,W), got {x.shape}")
    if patch_h < 2 or patch_w < 2:
        raise ValueError(f"quadrant_pool: patch must be at least 2x2, got {patch_h}x{patch_w}")
    c, h, w = x.shape
    u, v = h // patch_h, w // patch_w
    if u < 1 or v < 1:
        raise ValueError(f"quadrant_pool: patch {patch_h}x{patch_w} exceeds input {h}x{w}")
    hh, wh = patch_h // 2, patch_w // 2
    crop = x.data[:, :u * patch_h, :v * patch_w].reshape(c, u, patch_h, v, patch_w)
    row_cuts = ((0, hh), (hh, patch_h))
    col_cuts = ((0, wh), (wh, patch_w))
    blocks = []
    for r0, r1 in row_cuts:
        for c0, c1 in col_cuts:
            blocks.append(crop[:, :, r0:r1, :, c0:c1].mean(axis=(2, 4)))
    out = np.concatenate(blocks, axis=0)  # (4C, U, V), quadrant-major

    def bwd(g, x=x):
        dcrop = np.zeros((c, u, patch_h, v, patch_w), dtype=x.data.dtype)
        q = 0
        for r0, r1 in row_cuts:
            for c0, c1 in col_cuts:
                area = (r1 - r0) * (c1 - c0)
                gq = g[q * c:(q + 1) * c] / area
                dcrop[:, :, r0:r1, :, c0:c1] += gq[:, :, None, :, None]
                q += 1
        dx = np.zeros_like(x.data)
        dx[:, :u * patch_h, :v * patch_w] = dcrop.reshape(c, u * patch_h, v * patch_w)
        x._accum(dx)

    return Tensor._from_data(out, (x,), bwd)


# -- nonlinearities ----------------------------------------------------------

def softmax_channel(x):
    """Channel softmax per spatial site of a (C,H,W) tensor (max-subtracted)."""
    _check_tensor(x, "input")
    if x.ndim != 3:
        raise ValueError(f"softmax_channel expects (C,H,W), got {x.shape}")
    shifted = x.data - x.data.max(axis=0, keepdims=True)
    e = np.exp(shifted)
    y = e / e.sum(axis=0, keepdims=True)

    def bwd(g, x=x, y=y):
        dot = (y * g).sum(axis=0, keepdims=True)
        x._accum(y * (g - dot))

    return Tensor._from_data(y, (x,), bwd)


def relu(x):
    _check_tensor(x, "input")
    data = np.maximum(x.data, 0)

    def bwd(g, x=x):
        x._accum(np.where(x.data > 0, g, 0).astype(x.data.dtype, copy=False))

    return Tensor._from_data(data, (x,), bwd)


def leaky_relu(x, slope=0.2):
    _check_tensor(x, "input")
    if not 0.0 < slope < 1.0:
        raise ValueError(f"leaky_relu slope must lie in (0,1), got {slope}")
    data = np.where(x.data > 0, x.data, x.data * x.data.dtype.type(slope))

    def bwd(g, x=x, slope=slope):
        x._accum(np.where(x.data > 0, g, g * x.data.dtype.type(slope)))

    return Tensor._from_data(data, (x,), bwd)


def sigmoid(x):
    _check_tensor(x, "input")
    d = x.data
    y = np.empty_like(d)
    pos = d >= 0
    y[pos] = 1.0 / (1.0 + np.exp(-d[pos]))
    ex = np.exp(d[~pos])
    y[~pos] = ex / (1.0 + ex)

    def bwd(g, x=x, y=y):
        x._accum(g * y * (1.0 - y))

    return Tensor._from_data(y, (x,), bwd)


# -- per-location linear maps -------------------------------------------------

def linear_per_location(x, weight, bias):
    """Apply out = weight @ x[:,u,v] + bias at every spatial site.

    x: (C_in,U,V), weight: (C_out,C_in), bias: (C_out,). Equivalent to a
    1x1 convolution.
    """
    _check_tensor(x, "input")
    _check_tensor(weight, "weight")
    _check_tensor(bias, "bias")
    if x.ndim != 3 or weight.ndim != 2:
        raise ValueError(f"linear_per_location expects (C,U,V) input and (O,C) weight, got {x.shape} and {weight.shape}")
    c_in, u, v = x.shape
    c_out, wc = weight.shape
    if wc != c_in:
        raise ValueError(f"linear_per_location: weight columns {wc} do not match input channels {c_in}")
    if bias.shape != (c_out,):
        raise ValueError(f"linear_per_location: bias shape {bias.shape} does not match C_out {c_out}")
    x_mat = x.data.reshape(c_in, u * v)
    out = (weight.data @ x_mat + bias.data[:, None]).reshape(c_out, u, v)

    def bwd(g, x=x, weight=weight, bias=bias, x_mat=x_mat):
        g_mat = g.reshape(c_out, -1)
        if bias.requires_grad:
            bias._accum(g_mat.sum(axis=1))
        if weight.requires_grad:
            weight._accum(g_mat @ x_mat.T)
        if x.requires_grad:
            x._accum((weight.data.T @ g_mat).reshape(x.data.shape))

    return Tensor._from_data(out, (x, weight, bias), bwd)


def gather_sites(x, index, valid=None):
    """Pick x[index[h,w], h, w] at every valid site, row-major, as a vector.

    x: (C,H,W); index: integer (H,W) map with values in [0,C); valid: optional
    boolean (H,W) mask selecting the scored sites.
    """
    _check_tensor(x, "input")
    index = np.asarray(index)
    c, h, w = x.shape
    if index.shape != (h, w):
        raise ValueError(f"gather_sites: index shape {index.shape} does not match spatial dims {(h, w)}")
    if valid is None:
        valid = np.ones((h, w), dtype=bool)
    else:
        valid = np.asarray(valid, dtype=bool)
        if valid.shape != (h, w):
            raise ValueError(f"gather_sites: mask shape {valid.shape} does not match spatial dims {(h, w)}")
    sel = index[valid]
    if sel.size and (sel.min() < 0 or sel.max() >= c):
        raise ValueError(f"gather_sites: index values must lie in [0,{c}), got range [{sel.min()},{sel.max()}]")
    hh, ww = np.nonzero(valid)
    out = x.data[sel, hh, ww]

    def bwd(g, x=x, sel=sel, hh=hh, ww=ww):
        dx = np.zeros_like(x.data)
        np.add.at(dx, (sel, hh, ww), g)
        x._accum(dx)

    return Tensor._from_data(out, (x,), bwd)
