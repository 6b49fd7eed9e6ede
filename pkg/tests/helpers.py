"""Shared test oracles: finite differences and naive reference implementations."""

import numpy as np

from patchalign.tensor import Tensor


def finite_diff(f, arrays, h=1e-4):
    """Central-difference gradients of scalar f w.r.t. each float64 array."""
    grads = []
    for a in arrays:
        g = np.zeros_like(a)
        flat = a.reshape(-1)
        gflat = g.reshape(-1)
        for i in range(flat.size):
            keep = flat[i]
            flat[i] = keep + h
            up = f(arrays)
            flat[i] = keep - h
            down = f(arrays)
            flat[i] = keep
            gflat[i] = (up - down) / (2.0 * h)
        grads.append(g)
    return grads


def rel_err(a, b):
    denom = max(np.abs(a).max(initial=0.0), np.abs(b).max(initial=0.0), 1e-3)
    return float(np.abs(a - b).max(initial=0.0) / denom)


def check_grads(build, arrays, tol=1e-5, h=1e-4):
    """Compare backward() grads against central differences at 64-bit.

    build(tensors) must return a scalar Tensor; arrays are float64 numpy
    inputs, one Tensor (requires_grad) is made per array. Returns the worst
    relative error seen.
    """
    tensors = [Tensor(a.astype(np.float64), requires_grad=True, dtype=np.float64)
               for a in arrays]
    loss = build(tensors)
    loss.backward()
    analytic = [np.zeros_like(a) if t.grad is None else t.grad
                for a, t in zip(arrays, tensors)]

    def f(arrs):
        ts = [Tensor(a, dtype=np.float64) for a in arrs]
        return build(ts).item()

    numeric = finite_diff(f, [a.copy() for a in arrays], h=h)
    worst = 0.0
    for g_a, g_n in zip(analytic, numeric):
        worst = max(worst, rel_err(g_a, g_n))
    assert worst < tol, f"gradient mismatch: rel err {worst:.3g} >= {tol}"
    return worst


def ref_conv2d(x, k, b, stride=1, padding=0):
    """Naive direct cross-correlation."""
    c_in, h, w = x.shape
    c_out, _, kh, kw = k.shape
    if padding:
        xp = np.zeros((c_in, h + 2 * padding, w + 2 * padding), dtype=x.dtype)
        xp[:, padding:padding + h, padding:padding + w] = x
    else:
        xp = x
    out_h = (xp.shape[1] - kh) // stride + 1
    out_w = (xp.shape[2] - kw) // stride + 1
    out = np.zeros((c_out, out_h, out_w), dtype=np.float64)
    for o in range(c_out):
        for i in range(out_h):
            for j in range(out_w):
                patch = xp[:, i * stride:i * stride + kh, j * stride:j * stride + kw]
                out[o, i, j] = (patch * k[o]).sum() + b[o]
    return out


def ref_adaptive_pool(x, out_h, out_w):
    c, h, w = x.shape
    out = np.zeros((c, out_h, out_w), dtype=np.float64)
    for i in range(out_h):
        r0, r1 = (i * h) // out_h, ((i + 1) * h) // out_h
        for j in range(out_w):
            c0, c1 = (j * w) // out_w, ((j + 1) * w) // out_w
            out[:, i, j] = x[:, r0:r1, c0:c1].mean(axis=(1, 2))
    return out


def ref_patch_histogram(patch, num_classes, ignore=255):
    """Loop-based 2x2 quadrant class histogram."""
    ph, pw = patch.shape
    hh, wh = ph // 2, pw // 2
    blocks = []
    for rows, cols in (((0, hh), (0, wh)), ((0, hh), (wh, pw)),
                       ((hh, ph), (0, wh)), ((hh, ph), (wh, pw))):
        counts = np.zeros(num_classes)
        total = 0
        for r in range(*rows):
            for c in range(*cols):
                v = patch[r, c]
                if v == ignore:
                    continue
                counts[v] += 1
                total += 1
        blocks.append(counts / total if total else counts)
    return np.concatenate(blocks)


def exhaustive_two_means(points):
    """Global optimum inertia over every 2-partition (both parts non-empty)."""
    n = points.shape[0]
    best = np.inf
    for mask_bits in range(1, 2 ** n - 1):
        mask = np.array([(mask_bits >> i) & 1 for i in range(n)], dtype=bool)
        inertia = 0.0
        for part in (points[mask], points[~mask]):
            mu = part.mean(axis=0)
            inertia += ((part - mu) ** 2).sum()
        best = min(best, inertia)
    return best


def sgd_reference(p, v, g, lr, mu, wd):
    v2 = mu * v + g + wd * p
    return p - lr * v2, v2


def adam_reference(p, m, v, g, lr, b1, b2, eps, t):
    m2 = b1 * m + (1 - b1) * g
    v2 = b2 * v + (1 - b2) * g * g
    mhat = m2 / (1 - b1 ** t)
    vhat = v2 / (1 - b2 ** t)
    return p - lr * mhat / (np.sqrt(vhat) + eps), m2, v2
