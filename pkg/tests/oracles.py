"""Independent reference implementations used by the tests.

These are written with explicit loops and share no code with the package,
so agreement between the two is meaningful.
"""

import math

import numpy as np


def conv2d_loop(x, weight, bias):
    """Zero-padded same-size cross-correlation of a C x H x W input."""
    c_in, h, w = x.shape
    c_out, _, k, _ = weight.shape
    p = k // 2
    out = np.zeros((c_out, h, w))
    for o in range(c_out):
        for i in range(h):
            for j in range(w):
                acc = bias[o]
                for c in range(c_in):
                    for ky in range(k):
                        for kx in range(k):
                            y, xx = i + ky - p, j + kx - p
                            if 0 <= y < h and 0 <= xx < w:
                                acc += weight[o, c, ky, kx] * x[c, y, xx]
                out[o, i, j] = acc
    return out


def linear_loop(x, weight, bias):
    out = np.zeros((x.shape[0], weight.shape[0]))
    for b in range(x.shape[0]):
        for o in range(weight.shape[0]):
            out[b, o] = bias[o] + sum(x[b, i] * weight[o, i] for i in range(x.shape[1]))
    return out


def keys(t, a=-0.5):
    t = abs(t)
    if t <= 1:
        return (a + 2) * t ** 3 - (a + 3) * t ** 2 + 1
    if t < 2:
        return a * t ** 3 - 5 * a * t ** 2 + 8 * a * t - 4 * a
    return 0.0


def _taps(i, n_src, n_dst):
    src = (i + 0.5) * n_src / n_dst - 0.5
    base = math.floor(src)
    return [(min(max(k, 0), n_src - 1), keys(src - k)) for k in range(base - 1, base + 3)]


def bicubic_direct(img, out_h, out_w):
    """Direct 2-D summation of the 16 clamped taps around every output pixel."""
    h, w, ch = img.shape
    out = np.zeros((out_h, out_w, ch))
    for i in range(out_h):
        ty = _taps(i, h, out_h)
        for j in range(out_w):
            tx = _taps(j, w, out_w)
            for c in range(ch):
                acc = 0.0
                for yi, wy in ty:
                    for xi, wx in tx:
                        acc += wy * wx * img[yi, xi, c]
                out[i, j, c] = min(max(acc, 0.0), 1.0)
    return out


def luma(r, g, b):
    return (16.0 + 65.481 * r + 128.553 * g + 24.966 * b) / 255.0


def psnr_direct(a, b, shave=0):
    h, w, _ = a.shape
    total, count = 0.0, 0
    for i in range(shave, h - shave):
        for j in range(shave, w - shave):
            d = luma(*a[i, j]) - luma(*b[i, j])
            total += d * d
            count += 1
    mse = total / count
    return math.inf if mse == 0 else 10.0 * math.log10(1.0 / mse)


def unfold_loop(fm):
    """Gather the edge-replicated 3x3 neighbourhood of every position."""
    c, h, w = fm.shape
    out = np.zeros((c * 9, h, w))
    for ch in range(c):
        for i in range(h):
            for j in range(w):
                for k in range(9):
                    dy, dx = k // 3 - 1, k % 3 - 1
                    y = min(max(i + dy, 0), h - 1)
                    x = min(max(j + dx, 0), w - 1)
                    out[ch * 9 + k, i, j] = fm[ch, y, x]
    return out


def mlp_loop(v, layers):
    """Plain-python MLP with ReLU between layers; ``layers`` is [(W, b), ...]."""
    for n, (wgt, b) in enumerate(layers):
        v = [b[o] + sum(wgt[o, i] * v[i] for i in range(len(v))) for o in range(len(b))]
        if n < len(layers) - 1:
            v = [max(0.0, t) for t in v]
    return v


def ensemble_scalar(fm, coord, cell, layers):
    """Decode one query from a C x h x w code grid, one corner at a time.

    The blend weight of a corner is the area of the rectangle between the query
    and the opposite corner, normalised over the four corners.
    """
    c, h, w = fm.shape

    def axis(v, n):
        u = (v + 1.0) * n / 2.0 - 0.5
        if abs(u - round(u)) < 1e-9:
            u = float(round(u))
        uc = min(max(u, 0.0), n - 1.0)
        lo = min(max(int(math.floor(uc)), 0), n - 2)
        return u, lo, uc - lo

    uy, y0, ty = axis(coord[0], h)
    ux, x0, tx = axis(coord[1], w)
    corners = [(y0, x0), (y0, x0 + 1), (y0 + 1, x0), (y0 + 1, x0 + 1)]
    preds, areas = [], []
    for yi, xi in corners:
        # opposite corner's rectangle
        ay = (1 - ty) if yi == y0 else ty
        ax = (1 - tx) if xi == x0 else tx
        areas.append(ay * ax)
        code = [fm[ch, yi, xi] for ch in range(c)]
        feat = code + [uy - yi, ux - xi, cell[0] * h / 2.0, cell[1] * w / 2.0]
        preds.append(mlp_loop(feat, layers))
    total = sum(areas)
    return [sum(areas[k] / total * preds[k][o] for k in range(4)) for o in range(len(preds[0]))]
