"""Hot numeric kernels with twin implementations.

Each public function dispatches to a numba ``@njit`` loop kernel or a
vectorized numpy fallback depending on :mod:`pushlab.backend`. The numpy
variants are kept arithmetically equivalent (same per-element formulas,
integer-exact SAD costs) so both paths can be cross-checked and benchmarked
against each other.

Conventions: image tensors are float64; conv activations are NCHW; SAD block
matching works on integer-valued float64 grayscale (sum of RGB channels) so
costs are exact and tie-breaking is reproducible.
"""

import numpy as np

from .backend import USE_NUMBA, njit

# ---------------------------------------------------------------------------
# conv2d
# ---------------------------------------------------------------------------


def _conv2d_fwd_loops(x, w, b, stride, pad):
    B, Cin, H, W = x.shape
    Cout, _, kh, kw = w.shape
    Ho = (H + 2 * pad - kh) // stride + 1
    Wo = (W + 2 * pad - kw) // stride + 1
    out = np.empty((B, Cout, Ho, Wo), dtype=np.float64)
    for n in range(B):
        for co in range(Cout):
            for ho in range(Ho):
                for wo in range(Wo):
                    acc = b[co]
                    hi0 = ho * stride - pad
                    wi0 = wo * stride - pad
                    for ci in range(Cin):
                        for i in range(kh):
                            hi = hi0 + i
                            if hi < 0 or hi >= H:
                                continue
                            for j in range(kw):
                                wi = wi0 + j
                                if wi < 0 or wi >= W:
                                    continue
                                acc += x[n, ci, hi, wi] * w[co, ci, i, j]
                    out[n, co, ho, wo] = acc
    return out


def _conv2d_bwd_loops(x, w, gout, stride, pad):
    B, Cin, H, W = x.shape
    Cout, _, kh, kw = w.shape
    _, _, Ho, Wo = gout.shape
    Hp, Wp = H + 2 * pad, W + 2 * pad
    xp = np.zeros((B, Cin, Hp, Wp), dtype=np.float64)
    xp[:, :, pad : pad + H, pad : pad + W] = x
    gxp = np.zeros((B, Cin, Hp, Wp), dtype=np.float64)
    gw = np.zeros((Cout, Cin, kh, kw), dtype=np.float64)
    gb = np.zeros(Cout, dtype=np.float64)
    for n in range(B):
        for co in range(Cout):
            for ho in range(Ho):
                for wo in range(Wo):
                    gb[co] += gout[n, co, ho, wo]
            for ci in range(Cin):
                for i in range(kh):
                    for j in range(kw):
                        wv = w[co, ci, i, j]
                        acc = 0.0
                        for ho in range(Ho):
                            hi = ho * stride + i
                            xrow = xp[n, ci, hi]
                            grow = gxp[n, ci, hi]
                            gorow = gout[n, co, ho]
                            for wo in range(Wo):
                                g = gorow[wo]
                                wi = wo * stride + j
                                acc += g * xrow[wi]
                                grow[wi] += g * wv
                        gw[co, ci, i, j] += acc
    gx = gxp[:, :, pad : pad + H, pad : pad + W]
    return np.ascontiguousarray(gx), gw, gb


_conv2d_fwd_nb = njit(_conv2d_fwd_loops)
_conv2d_bwd_nb = njit(_conv2d_bwd_loops)


def _conv_windows(x, kh, kw, stride, pad):
    xp = np.pad(x, ((0, 0), (0, 0), (pad, pad), (pad, pad))) if pad else x
    win = np.lib.stride_tricks.sliding_window_view(xp, (kh, kw), axis=(2, 3))
    return win[:, :, ::stride, ::stride]


def _conv2d_fwd_np(x, w, b, stride, pad):
    kh, kw = w.shape[2], w.shape[3]
    win = _conv_windows(x, kh, kw, stride, pad)
    out = np.tensordot(win, w, axes=([1, 4, 5], [1, 2, 3]))  # B,Ho,Wo,Cout
    return np.ascontiguousarray(out.transpose(0, 3, 1, 2)) + b[None, :, None, None]


def _conv2d_bwd_np(x, w, gout, stride, pad):
    B, Cin, H, W = x.shape
    Cout, _, kh, kw = w.shape
    Ho, Wo = gout.shape[2], gout.shape[3]
    win = _conv_windows(x, kh, kw, stride, pad)
    gw = np.tensordot(gout, win, axes=([0, 2, 3], [0, 2, 3]))
    gb = gout.sum(axis=(0, 2, 3))
    gxp = np.zeros((B, Cin, H + 2 * pad, W + 2 * pad), dtype=np.float64)
    for i in range(kh):
        for j in range(kw):
            contrib = np.tensordot(gout, w[:, :, i, j], axes=([1], [0]))  # B,Ho,Wo,Cin
            gxp[:, :, i : i + stride * Ho : stride, j : j + stride * Wo : stride] += (
                contrib.transpose(0, 3, 1, 2)
            )
    gx = gxp[:, :, pad : pad + H, pad : pad + W] if pad else gxp
    return np.ascontiguousarray(gx), gw, gb


def conv2d_fwd(x, w, b, stride=1, pad=1):
    """2D cross-correlation, NCHW float64, zero padding."""
    if USE_NUMBA:
        return _conv2d_fwd_nb(x, w, b, stride, pad)
    return _conv2d_fwd_np(x, w, b, stride, pad)


def conv2d_bwd(x, w, gout, stride=1, pad=1):
    """Gradients (gx, gw, gb) of conv2d_fwd for upstream gradient gout."""
    if USE_NUMBA:
        return _conv2d_bwd_nb(x, w, gout, stride, pad)
    return _conv2d_bwd_np(x, w, gout, stride, pad)


# ---------------------------------------------------------------------------
# 2x2 max pooling, stride 2 (dims must be even)
# ---------------------------------------------------------------------------


def _maxpool2_fwd_loops(x):
    B, C, H, W = x.shape
    Ho, Wo = H // 2, W // 2
    out = np.empty((B, C, Ho, Wo), dtype=np.float64)
    arg = np.empty((B, C, Ho, Wo), dtype=np.int8)
    for n in range(B):
        for c in range(C):
            for ho in range(Ho):
                for wo in range(Wo):
                    best = x[n, c, 2 * ho, 2 * wo]
                    k = 0
                    for idx in range(1, 4):
                        v = x[n, c, 2 * ho + idx // 2, 2 * wo + idx % 2]
                        if v > best:
                            best = v
                            k = idx
                    out[n, c, ho, wo] = best
                    arg[n, c, ho, wo] = k
    return out, arg


def _maxpool2_bwd_loops(gout, arg):
    B, C, Ho, Wo = gout.shape
    gx = np.zeros((B, C, 2 * Ho, 2 * Wo), dtype=np.float64)
    for n in range(B):
        for c in range(C):
            for ho in range(Ho):
                for wo in range(Wo):
                    k = arg[n, c, ho, wo]
                    gx[n, c, 2 * ho + k // 2, 2 * wo + k % 2] = gout[n, c, ho, wo]
    return gx


_maxpool2_fwd_nb = njit(_maxpool2_fwd_loops)
_maxpool2_bwd_nb = njit(_maxpool2_bwd_loops)


def _maxpool2_fwd_np(x):
    stack = np.stack(
        [x[:, :, 0::2, 0::2], x[:, :, 0::2, 1::2], x[:, :, 1::2, 0::2], x[:, :, 1::2, 1::2]]
    )
    arg = stack.argmax(axis=0).astype(np.int8)
    out = np.max(stack, axis=0)
    return out, arg


def _maxpool2_bwd_np(gout, arg):
    B, C, Ho, Wo = gout.shape
    gx = np.zeros((B, C, 2 * Ho, 2 * Wo), dtype=np.float64)
    for k in range(4):
        sel = (arg == k) * gout
        gx[:, :, k // 2 :: 2, k % 2 :: 2] = sel
    return gx


def maxpool2_fwd(x):
    if USE_NUMBA:
        return _maxpool2_fwd_nb(x)
    return _maxpool2_fwd_np(x)


def maxpool2_bwd(gout, arg):
    if USE_NUMBA:
        return _maxpool2_bwd_nb(gout, arg)
    return _maxpool2_bwd_np(gout, arg)


# ---------------------------------------------------------------------------
# bilinear resize / crop / rotate
# ---------------------------------------------------------------------------


def _resize_coords(n_src, n_dst):
    pos = (np.arange(n_dst, dtype=np.float64) + 0.5) * (n_src / n_dst) - 0.5
    pos = np.clip(pos, 0.0, n_src - 1.0)
    i0 = np.floor(pos).astype(np.int64)
    frac = pos - i0
    i1 = np.minimum(i0 + 1, n_src - 1)
    return i0, i1, frac


def _resize_bilinear_loops(img, oh, ow):
    H, W, C = img.shape
    out = np.empty((oh, ow, C), dtype=np.float64)
    for y in range(oh):
        sy = (y + 0.5) * (H / oh) - 0.5
        if sy < 0.0:
            sy = 0.0
        if sy > H - 1.0:
            sy = H - 1.0
        y0 = int(np.floor(sy))
        fy = sy - y0
        y1 = y0 + 1 if y0 + 1 < H else H - 1
        for x in range(ow):
            sx = (x + 0.5) * (W / ow) - 0.5
            if sx < 0.0:
                sx = 0.0
            if sx > W - 1.0:
                sx = W - 1.0
            x0 = int(np.floor(sx))
            fx = sx - x0
            x1 = x0 + 1 if x0 + 1 < W else W - 1
            for c in range(C):
                top = img[y0, x0, c] * (1.0 - fx) + img[y0, x1, c] * fx
                bot = img[y1, x0, c] * (1.0 - fx) + img[y1, x1, c] * fx
                out[y, x, c] = top * (1.0 - fy) + bot * fy
    return out


_resize_bilinear_nb = njit(_resize_bilinear_loops)


def _resize_bilinear_np(img, oh, ow):
    H, W, _ = img.shape
    y0, y1, fy = _resize_coords(H, oh)
    x0, x1, fx = _resize_coords(W, ow)
    fy = fy[:, None, None]
    fx = fx[None, :, None]
    top = img[y0][:, x0] * (1.0 - fx) + img[y0][:, x1] * fx
    bot = img[y1][:, x0] * (1.0 - fx) + img[y1][:, x1] * fx
    return top * (1.0 - fy) + bot * fy


def resize_bilinear(img, oh, ow):
    """Resize float64 image (H,W) or (H,W,C) to (oh,ow). Identity is exact."""
    squeeze = img.ndim == 2
    src = img[:, :, None] if squeeze else img
    if src.shape[0] == oh and src.shape[1] == ow:
        out = src.copy()
    elif USE_NUMBA:
        out = _resize_bilinear_nb(np.ascontiguousarray(src, dtype=np.float64), oh, ow)
    else:
        out = _resize_bilinear_np(np.ascontiguousarray(src, dtype=np.float64), oh, ow)
    return out[:, :, 0] if squeeze else out


def _crop_bilinear_loops(img, cy, cx, side, out_size):
    H, W, C = img.shape
    out = np.empty((out_size, out_size, C), dtype=np.float64)
    step = side / out_size
    for y in range(out_size):
        sy = cy + ((y + 0.5) * step) - side / 2.0
        if sy < 0.0:
            sy = 0.0
        if sy > H - 1.0:
            sy = H - 1.0
        y0 = int(np.floor(sy))
        fy = sy - y0
        y1 = y0 + 1 if y0 + 1 < H else H - 1
        for x in range(out_size):
            sx = cx + ((x + 0.5) * step) - side / 2.0
            if sx < 0.0:
                sx = 0.0
            if sx > W - 1.0:
                sx = W - 1.0
            x0 = int(np.floor(sx))
            fx = sx - x0
            x1 = x0 + 1 if x0 + 1 < W else W - 1
            for c in range(C):
                top = img[y0, x0, c] * (1.0 - fx) + img[y0, x1, c] * fx
                bot = img[y1, x0, c] * (1.0 - fx) + img[y1, x1, c] * fx
                out[y, x, c] = top * (1.0 - fy) + bot * fy
    return out


_crop_bilinear_nb = njit(_crop_bilinear_loops)


def _crop_bilinear_np(img, cy, cx, side, out_size):
    H, W, _ = img.shape
    step = side / out_size
    sy = np.clip(cy + (np.arange(out_size) + 0.5) * step - side / 2.0, 0.0, H - 1.0)
    sx = np.clip(cx + (np.arange(out_size) + 0.5) * step - side / 2.0, 0.0, W - 1.0)
    y0 = np.floor(sy).astype(np.int64)
    x0 = np.floor(sx).astype(np.int64)
    fy = (sy - y0)[:, None, None]
    fx = (sx - x0)[None, :, None]
    y1 = np.minimum(y0 + 1, H - 1)
    x1 = np.minimum(x0 + 1, W - 1)
    top = img[y0][:, x0] * (1.0 - fx) + img[y0][:, x1] * fx
    bot = img[y1][:, x0] * (1.0 - fx) + img[y1][:, x1] * fx
    return top * (1.0 - fy) + bot * fy


def crop_bilinear(img, cy, cx, side, out_size):
    """Square crop centered at (cy, cx) with side `side`, resampled to out_size.

    Samples clamp at image borders, so crops may extend past the frame.
    """
    squeeze = img.ndim == 2
    src = img[:, :, None] if squeeze else img
    src = np.ascontiguousarray(src, dtype=np.float64)
    if USE_NUMBA:
        out = _crop_bilinear_nb(src, float(cy), float(cx), float(side), int(out_size))
    else:
        out = _crop_bilinear_np(src, float(cy), float(cx), float(side), int(out_size))
    return out[:, :, 0] if squeeze else out


def _rotate_bilinear_loops(img, cos_t, sin_t, fill):
    H, W, C = img.shape
    out = np.empty((H, W, C), dtype=np.float64)
    cy = (H - 1) / 2.0
    cx = (W - 1) / 2.0
    for y in range(H):
        for x in range(W):
            dy = y - cy
            dx = x - cx
            sy = cy + cos_t * dy + sin_t * dx
            sx = cx - sin_t * dy + cos_t * dx
            if sy < 0.0 or sy > H - 1.0 or sx < 0.0 or sx > W - 1.0:
                for c in range(C):
                    out[y, x, c] = fill[c]
                continue
            y0 = int(np.floor(sy))
            fy = sy - y0
            y1 = y0 + 1 if y0 + 1 < H else H - 1
            x0 = int(np.floor(sx))
            fx = sx - x0
            x1 = x0 + 1 if x0 + 1 < W else W - 1
            for c in range(C):
                top = img[y0, x0, c] * (1.0 - fx) + img[y0, x1, c] * fx
                bot = img[y1, x0, c] * (1.0 - fx) + img[y1, x1, c] * fx
                out[y, x, c] = top * (1.0 - fy) + bot * fy
    return out


_rotate_bilinear_nb = njit(_rotate_bilinear_loops)


def _rotate_bilinear_np(img, cos_t, sin_t, fill):
    H, W, C = img.shape
    cy = (H - 1) / 2.0
    cx = (W - 1) / 2.0
    yy, xx = np.meshgrid(np.arange(H, dtype=np.float64), np.arange(W, dtype=np.float64), indexing="ij")
    dy = yy - cy
    dx = xx - cx
    sy = cy + cos_t * dy + sin_t * dx
    sx = cx - sin_t * dy + cos_t * dx
    oob = (sy < 0.0) | (sy > H - 1.0) | (sx < 0.0) | (sx > W - 1.0)
    syc = np.clip(sy, 0.0, H - 1.0)
    sxc = np.clip(sx, 0.0, W - 1.0)
    y0 = np.floor(syc).astype(np.int64)
    x0 = np.floor(sxc).astype(np.int64)
    fy = (syc - y0)[:, :, None]
    fx = (sxc - x0)[:, :, None]
    y1 = np.minimum(y0 + 1, H - 1)
    x1 = np.minimum(x0 + 1, W - 1)
    top = img[y0, x0] * (1.0 - fx) + img[y0, x1] * fx
    bot = img[y1, x0] * (1.0 - fx) + img[y1, x1] * fx
    out = top * (1.0 - fy) + bot * fy
    out[oob] = fill
    return out


def rotate_bilinear(img, angle, fill):
    """Rotate (H,W[,C]) float64 image by `angle` rad about the raster center.

    Out-of-support samples take the fill color. A 180-degree rotation is an
    exact pixel permutation.
    """
    squeeze = img.ndim == 2
    src = img[:, :, None] if squeeze else img
    src = np.ascontiguousarray(src, dtype=np.float64)
    fill_arr = np.asarray(fill, dtype=np.float64).reshape(-1)
    if fill_arr.size == 1 and src.shape[2] > 1:
        fill_arr = np.full(src.shape[2], fill_arr[0])
    cos_t = float(np.cos(angle))
    sin_t = float(np.sin(angle))
    if USE_NUMBA:
        out = _rotate_bilinear_nb(src, cos_t, sin_t, fill_arr)
    else:
        out = _rotate_bilinear_np(src, cos_t, sin_t, fill_arr)
    return out[:, :, 0] if squeeze else out


def rotate_nearest(img, angle, fill):
    """Nearest-neighbor rotation matching rotate_bilinear's geometry."""
    squeeze = img.ndim == 2
    src = img[:, :, None] if squeeze else img
    H, W, C = src.shape
    cy = (H - 1) / 2.0
    cx = (W - 1) / 2.0
    cos_t = float(np.cos(angle))
    sin_t = float(np.sin(angle))
    yy, xx = np.meshgrid(np.arange(H, dtype=np.float64), np.arange(W, dtype=np.float64), indexing="ij")
    dy = yy - cy
    dx = xx - cx
    sy = cy + cos_t * dy + sin_t * dx
    sx = cx - sin_t * dy + cos_t * dx
    yi = np.rint(sy).astype(np.int64)
    xi = np.rint(sx).astype(np.int64)
    oob = (yi < 0) | (yi >= H) | (xi < 0) | (xi >= W)
    yi = np.clip(yi, 0, H - 1)
    xi = np.clip(xi, 0, W - 1)
    out = src[yi, xi].astype(src.dtype, copy=True)
    out[oob] = fill
    return out[:, :, 0] if squeeze else out


# ---------------------------------------------------------------------------
# SAD block matching (one pyramid level)
# ---------------------------------------------------------------------------


def _select_and_refine(costs, iu, iv, radius):
    """Pick min-cost displacement (ties: smallest norm, then lex (u, v)) and
    refine each axis with a parabolic fit when the neighbors exist."""
    n = 2 * radius + 1
    best_cost = np.inf
    bu = 0
    bv = 0
    found = False
    for dv in range(-radius, radius + 1):
        for du in range(-radius, radius + 1):
            c = costs[dv + radius, du + radius]
            if not np.isfinite(c):
                continue
            u = iu + du
            v = iv + dv
            if not found or c < best_cost:
                best_cost = c
                bu = u
                bv = v
                found = True
            elif c == best_cost:
                if (u * u + v * v, u, v) < (bu * bu + bv * bv, bu, bv):
                    bu = u
                    bv = v
    if not found:
        return 0.0, 0.0, np.inf, False
    du = bu - iu + radius
    dv = bv - iv + radius
    su = 0.0
    if 0 < du < n - 1:
        cm = costs[dv, du - 1]
        cp = costs[dv, du + 1]
        if np.isfinite(cm) and np.isfinite(cp):
            denom = cm - 2.0 * best_cost + cp
            if denom > 0.0:
                su = 0.5 * (cm - cp) / denom
                su = min(0.5, max(-0.5, su))
    sv = 0.0
    if 0 < dv < n - 1:
        cm = costs[dv - 1, du]
        cp = costs[dv + 1, du]
        if np.isfinite(cm) and np.isfinite(cp):
            denom = cm - 2.0 * best_cost + cp
            if denom > 0.0:
                sv = 0.5 * (cm - cp) / denom
                sv = min(0.5, max(-0.5, sv))
    return bu + su, bv + sv, best_cost, True


def _sad_level_loops(prev, nxt, bs, radius, init_u, init_v):
    H, W = prev.shape
    nby, nbx = init_u.shape
    u = np.zeros((nby, nbx), dtype=np.float64)
    v = np.zeros((nby, nbx), dtype=np.float64)
    cost = np.full((nby, nbx), np.inf)
    valid = np.zeros((nby, nbx), dtype=np.bool_)
    n = 2 * radius + 1
    for by in range(nby):
        for bx in range(nbx):
            y0 = by * bs
            x0 = bx * bs
            if y0 + bs > H or x0 + bs > W:
                continue
            iu = int(init_u[by, bx])
            iv = int(init_v[by, bx])
            costs = np.full((n, n), np.inf)
            for dv in range(-radius, radius + 1):
                for du in range(-radius, radius + 1):
                    ty = y0 + iv + dv
                    tx = x0 + iu + du
                    if ty < 0 or tx < 0 or ty + bs > H or tx + bs > W:
                        continue
                    acc = 0.0
                    for i in range(bs):
                        for j in range(bs):
                            d = prev[y0 + i, x0 + j] - nxt[ty + i, tx + j]
                            acc += d if d >= 0.0 else -d
                    costs[dv + radius, du + radius] = acc
            best_cost = np.inf
            bu = 0
            bv = 0
            found = False
            for dv in range(-radius, radius + 1):
                for du in range(-radius, radius + 1):
                    c = costs[dv + radius, du + radius]
                    if not np.isfinite(c):
                        continue
                    uu = iu + du
                    vv = iv + dv
                    if not found or c < best_cost:
                        best_cost = c
                        bu = uu
                        bv = vv
                        found = True
                    elif c == best_cost:
                        n_new = uu * uu + vv * vv
                        n_old = bu * bu + bv * bv
                        if n_new < n_old or (
                            n_new == n_old and (uu < bu or (uu == bu and vv < bv))
                        ):
                            bu = uu
                            bv = vv
            if not found:
                continue
            cu = bu - iu + radius
            cv = bv - iv + radius
            su = 0.0
            if 0 < cu < n - 1:
                cm = costs[cv, cu - 1]
                cp = costs[cv, cu + 1]
                if np.isfinite(cm) and np.isfinite(cp):
                    denom = cm - 2.0 * best_cost + cp
                    if denom > 0.0:
                        su = 0.5 * (cm - cp) / denom
                        if su > 0.5:
                            su = 0.5
                        if su < -0.5:
                            su = -0.5
            sv = 0.0
            if 0 < cv < n - 1:
                cm = costs[cv - 1, cu]
                cp = costs[cv + 1, cu]
                if np.isfinite(cm) and np.isfinite(cp):
                    denom = cm - 2.0 * best_cost + cp
                    if denom > 0.0:
                        sv = 0.5 * (cm - cp) / denom
                        if sv > 0.5:
                            sv = 0.5
                        if sv < -0.5:
                            sv = -0.5
            u[by, bx] = bu + su
            v[by, bx] = bv + sv
            cost[by, bx] = best_cost
            valid[by, bx] = True
    return u, v, cost, valid


_sad_level_nb = njit(_sad_level_loops)


def _sad_level_np(prev, nxt, bs, radius, init_u, init_v):
    H, W = prev.shape
    nby, nbx = init_u.shape
    u = np.zeros((nby, nbx), dtype=np.float64)
    v = np.zeros((nby, nbx), dtype=np.float64)
    best = np.full((nby, nbx), np.inf)
    valid = np.zeros((nby, nbx), dtype=bool)
    win = np.lib.stride_tricks.sliding_window_view(nxt, (bs, bs))
    for by in range(nby):
        for bx in range(nbx):
            y0 = by * bs
            x0 = bx * bs
            if y0 + bs > H or x0 + bs > W:
                continue
            iu = int(init_u[by, bx])
            iv = int(init_v[by, bx])
            block = prev[y0 : y0 + bs, x0 : x0 + bs]
            n = 2 * radius + 1
            costs = np.full((n, n), np.inf)
            ylo = y0 + iv - radius
            xlo = x0 + iu - radius
            for dv in range(n):
                ty = ylo + dv
                if ty < 0 or ty + bs > H:
                    continue
                for du in range(n):
                    tx = xlo + du
                    if tx < 0 or tx + bs > W:
                        continue
                    costs[dv, du] = np.abs(block - win[ty, tx]).sum()
            uu, vv, bc, ok = _select_and_refine(costs, iu, iv, radius)
            u[by, bx] = uu
            v[by, bx] = vv
            best[by, bx] = bc
            valid[by, bx] = ok
    return u, v, best, valid


def sad_level(prev, nxt, block_size, radius, init_u, init_v):
    """Block-match one pyramid level around per-block integer initial guesses.

    Returns per-block (u, v, best_sad, valid): sub-pixel refined vectors, the
    winning integer SAD cost, and False where no candidate window fit inside
    the frame.
    """
    prev = np.ascontiguousarray(prev, dtype=np.float64)
    nxt = np.ascontiguousarray(nxt, dtype=np.float64)
    init_u = np.ascontiguousarray(init_u, dtype=np.int64)
    init_v = np.ascontiguousarray(init_v, dtype=np.int64)
    if USE_NUMBA:
        return _sad_level_nb(prev, nxt, block_size, radius, init_u, init_v)
    return _sad_level_np(prev, nxt, block_size, radius, init_u, init_v)
