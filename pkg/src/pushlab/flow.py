"""Dense motion estimation between two frames.

The estimator is coarse-to-fine SAD block matching over a 3-level image
pyramid with parabolic sub-pixel refinement. Grayscale is the *sum* of the
RGB channels, so SAD costs are exact dyadic rationals and tie-breaking is
bit-reproducible on both kernel backends.
"""

from dataclasses import dataclass

import numpy as np

from . import kernels
from .netpbm import write_p5


class DimensionError(ValueError):
    pass


class EmptyRegionError(ValueError):
    pass


@dataclass(eq=False)
class FlowField:
    u: np.ndarray  # horizontal displacement, px
    v: np.ndarray  # vertical displacement, px

    def magnitude(self):
        return np.hypot(self.u, self.v)

    @property
    def shape(self):
        return self.u.shape


@dataclass
class FlowStats:
    mean_mag: float
    std_mag: float
    n_pixels: int


@dataclass
class FlowParams:
    levels: int = 3
    block: int = 8
    radius: int = 6
    prop_sweeps: int = 2   # neighbor-propagation passes per level
    prop_radius: int = 2   # local re-search radius around propagated vectors


def _gray(img):
    arr = img.rgb if hasattr(img, "rgb") else img
    arr = np.asarray(arr)
    if arr.ndim == 3:
        return arr[:, :, 0].astype(np.float64) + arr[:, :, 1] + arr[:, :, 2]
    return arr.astype(np.float64)


def _smooth121(img):
    """Separable [1,2,1]/4 blur with edge replication; exact on dyadic input."""
    p = np.pad(img, 1, mode="edge")
    horiz = (p[1:-1, :-2] + 2.0 * p[1:-1, 1:-1] + p[1:-1, 2:]) * 0.25
    q = np.pad(horiz, ((1, 1), (0, 0)), mode="edge")
    return (q[:-2] + 2.0 * q[1:-1] + q[2:]) * 0.25


def _down2(img):
    """Anti-aliased 2x decimation: [1,2,1] blur then 2x2 mean."""
    img = _smooth121(img)
    h2, w2 = img.shape[0] // 2, img.shape[1] // 2
    return img[: 2 * h2, : 2 * w2].reshape(h2, 2, w2, 2).mean(axis=(1, 3))


def _fill_invalid(u, v, valid):
    """Give blocks without a valid match the nearest valid block's vector."""
    if valid.all():
        return u, v
    if not valid.any():
        return np.zeros_like(u), np.zeros_like(v)
    vy, vx = np.nonzero(valid)
    iy, ix = np.nonzero(~valid)
    d2 = (iy[:, None] - vy[None, :]) ** 2 + (ix[:, None] - vx[None, :]) ** 2
    nearest = np.argmin(d2, axis=1)  # first minimum = lowest (y,x) donor
    u = u.copy()
    v = v.copy()
    u[iy, ix] = u[vy[nearest], vx[nearest]]
    v[iy, ix] = v[vy[nearest], vx[nearest]]
    return u, v


def _merge(state, candidate):
    """Keep the lower-cost match per block; cost ties prefer the smaller
    displacement, then lexicographic (u, v). Costs are exact sums, so the
    outcome is identical on both kernel backends."""
    bu, bv, cost, valid = state
    cu, cv, ccost, cvalid = candidate
    better = cvalid & (
        ~valid
        | (ccost < cost)
        | (
            (ccost == cost)
            & (
                (cu**2 + cv**2 < bu**2 + bv**2)
                | (
                    (cu**2 + cv**2 == bu**2 + bv**2)
                    & ((cu < bu) | ((cu == bu) & (cv < bv)))
                )
            )
        )
    )
    return (
        np.where(better, cu, bu),
        np.where(better, cv, bv),
        np.where(better, ccost, cost),
        valid | cvalid,
    )


def _shift_grid(arr, dy, dx):
    """Shift a block grid with edge replication (edge blocks see themselves)."""
    ys = np.clip(np.arange(arr.shape[0]) - dy, 0, arr.shape[0] - 1)
    xs = np.clip(np.arange(arr.shape[1]) - dx, 0, arr.shape[1] - 1)
    return arr[ys[:, None], xs[None, :]]


def estimate_flow(before, after, params=None):
    """Dense flow from `before` to `after` via pyramidal block matching.

    Each level searches around two seeds per block (zero and the upsampled
    coarser field) and then runs neighbor-propagation sweeps so blocks only
    partially covered by a mover inherit their neighbors' vectors.
    """
    params = params or FlowParams()
    g0 = _gray(before)
    g1 = _gray(after)
    if g0.shape != g1.shape:
        raise DimensionError(f"frame dims differ: {g0.shape} vs {g1.shape}")
    bs = params.block
    pyr0 = [g0]
    pyr1 = [g1]
    for _ in range(params.levels - 1):
        if min(pyr0[-1].shape) // 2 < bs:
            break
        pyr0.append(_down2(pyr0[-1]))
        pyr1.append(_down2(pyr1[-1]))

    prev_u = prev_v = None
    blocks_u = blocks_v = None
    for level in range(len(pyr0) - 1, -1, -1):
        a, b = pyr0[level], pyr1[level]
        nby = max(1, a.shape[0] // bs)
        nbx = max(1, a.shape[1] // bs)
        zeros = np.zeros((nby, nbx), dtype=np.int64)
        state = kernels.sad_level(a, b, bs, params.radius, zeros, zeros)
        if prev_u is not None:
            iu = np.rint(kernels.resize_bilinear(prev_u, nby, nbx) * 2.0).astype(np.int64)
            iv = np.rint(kernels.resize_bilinear(prev_v, nby, nbx) * 2.0).astype(np.int64)
            state = _merge(state, kernels.sad_level(a, b, bs, params.radius, iu, iv))
        for _ in range(params.prop_sweeps):
            for dy, dx in ((0, 1), (0, -1), (1, 0), (-1, 0)):
                iu = np.rint(_shift_grid(state[0], dy, dx)).astype(np.int64)
                iv = np.rint(_shift_grid(state[1], dy, dx)).astype(np.int64)
                state = _merge(
                    state, kernels.sad_level(a, b, bs, params.prop_radius, iu, iv)
                )
        blocks_u, blocks_v = _fill_invalid(state[0], state[1], state[3])
        prev_u, prev_v = blocks_u, blocks_v

    H, W = g0.shape
    by = np.minimum(np.arange(H) // bs, blocks_u.shape[0] - 1)
    bx = np.minimum(np.arange(W) // bs, blocks_u.shape[1] - 1)
    u = blocks_u[by[:, None], bx[None, :]]
    v = blocks_v[by[:, None], bx[None, :]]
    return FlowField(u=u, v=v)


def flow_stats(flow, region=None):
    """Mean and population std of flow magnitudes over a region (or all)."""
    mag = flow.magnitude()
    if region is not None:
        region = np.asarray(region, dtype=bool)
        if region.shape != mag.shape:
            raise DimensionError("region dims differ from flow dims")
        if not region.any():
            raise EmptyRegionError("empty region")
        vals = mag[region]
    else:
        vals = mag.reshape(-1)
        if vals.size == 0:
            raise EmptyRegionError("empty flow field")
    return FlowStats(
        mean_mag=float(vals.mean()),
        std_mag=float(vals.std()),
        n_pixels=int(vals.size),
    )


def dump_flow_debug(flow, path_u, path_v, scale=4.0):
    """Write offset-encoded u/v rasters for visual inspection."""
    enc_u = np.clip(np.rint(flow.u * scale) + 128, 0, 255).astype(np.uint8)
    enc_v = np.clip(np.rint(flow.v * scale) + 128, 0, 255).astype(np.uint8)
    write_p5(path_u, enc_u)
    write_p5(path_v, enc_v)
