"""Full-image instance segmentation from the patch net: multi-scale sliding
windows score every location; windows above the floor trigger the mask head;
large-mask filtering and mask-level NMS clean up the proposal set."""

import json
from dataclasses import dataclass

import numpy as np

from . import net
from .dataset import DEFAULT_SCALE_EXPONENTS, pyramid_pairs
from .kernels import resize_bilinear
from .rle import decode_mask, encode_mask


class NoWindowError(RuntimeError):
    pass


@dataclass(eq=False)
class Proposal:
    mask: np.ndarray          # bool, full image resolution
    score: float
    source: tuple             # (scale exponent, (y0, x0) window origin at that scale)

    @property
    def area(self):
        return int(self.mask.sum())


@dataclass
class NMSConfig:
    iou_threshold: float = 0.5
    score_floor: float = 0.3
    top_k: int = 50
    max_area_frac: float = 0.30

    def __post_init__(self):
        if not (0.0 < self.iou_threshold <= 1.0):
            raise ValueError("iou_threshold must lie in (0, 1]")
        if not (0.0 < self.max_area_frac <= 1.0):
            raise ValueError("max_area_frac must lie in (0, 1]")


def propose(params, image, scales=DEFAULT_SCALE_EXPONENTS, stride=None, score_floor=0.3):
    """Score all windows over the scale pyramid; emit a mask proposal for
    every window whose object probability clears the floor."""
    arch = params.arch
    p = arch.patch
    stride = stride or p // 4
    img = np.asarray(image, dtype=np.float64)
    if img.max() > 1.5:
        img = img / 255.0
    H, W = img.shape[:2]
    pairs = pyramid_pairs(img, scales, p)
    if not pairs:
        raise NoWindowError("image smaller than the patch at every scale")
    exps = [k for k in scales if min(int(round(H * 2.0**k)), int(round(W * 2.0**k))) >= p]
    proposals = []
    for k, (f, scaled) in zip(exps, pairs):
        Hs, Ws = scaled.shape[:2]
        origins = [
            (y0, x0)
            for y0 in range(0, Hs - p + 1, stride)
            for x0 in range(0, Ws - p + 1, stride)
        ]
        if not origins:
            continue
        windows = np.stack(
            [scaled[y0 : y0 + p, x0 : x0 + p].transpose(2, 0, 1) for y0, x0 in origins]
        )
        logits, _, _ = net.forward_batch(params, windows, need_mask=False)
        probs = 1.0 / (1.0 + np.exp(-logits))
        chosen = np.nonzero(probs > score_floor)[0]
        if len(chosen) == 0:
            continue
        _, mask_logits, _ = net.forward_batch(params, windows[chosen], need_mask=True)
        for mi, wi in enumerate(chosen):
            y0, x0 = origins[wi]
            up = resize_bilinear(mask_logits[mi], p, p) > 0.0
            full = _window_mask_to_image(up, y0, x0, f, H, W)
            if not full.any():
                continue
            proposals.append(
                Proposal(mask=full, score=float(probs[wi]), source=(k, (y0, x0)))
            )
    return proposals


def _window_mask_to_image(win_mask, y0, x0, f, H, W):
    """Paint a patch-resolution binary mask into full image resolution."""
    p = win_mask.shape[0]
    ry0 = max(0, int(np.floor(y0 / f)))
    ry1 = min(H, int(np.ceil((y0 + p) / f)))
    rx0 = max(0, int(np.floor(x0 / f)))
    rx1 = min(W, int(np.ceil((x0 + p) / f)))
    out = np.zeros((H, W), dtype=bool)
    if ry1 <= ry0 or rx1 <= rx0:
        return out
    ys = np.arange(ry0, ry1)
    xs = np.arange(rx0, rx1)
    wy = np.clip(((ys + 0.5) * f - y0 - 0.5).round().astype(np.int64), 0, p - 1)
    wx = np.clip(((xs + 0.5) * f - x0 - 0.5).round().astype(np.int64), 0, p - 1)
    out[ry0:ry1, rx0:rx1] = win_mask[wy[:, None], wx[None, :]]
    return out


def mask_iou(a, b):
    """Intersection over union of two binary masks (0 when both empty)."""
    a = np.asarray(a, dtype=bool)
    b = np.asarray(b, dtype=bool)
    if a.shape != b.shape:
        raise ValueError(f"mask dims differ: {a.shape} vs {b.shape}")
    union = np.count_nonzero(a | b)
    if union == 0:
        return 0.0
    return np.count_nonzero(a & b) / union


class PackedMasks:
    """Bit-packed masks for fast pairwise IoU."""

    def __init__(self, masks):
        self.n = len(masks)
        if self.n:
            flat = np.stack([np.asarray(m, dtype=bool).reshape(-1) for m in masks])
            self.packed = np.packbits(flat, axis=1)
            self.areas = flat.sum(axis=1)
        else:
            self.packed = np.zeros((0, 0), dtype=np.uint8)
            self.areas = np.zeros(0, dtype=np.int64)

    def iou_row(self, i, js):
        js = np.asarray(js, dtype=np.int64)
        inter = np.bitwise_count(self.packed[js] & self.packed[i][None, :]).sum(axis=1)
        union = self.areas[js] + self.areas[i] - inter
        out = np.zeros(len(js))
        nz = union > 0
        out[nz] = inter[nz] / union[nz]
        return out


def nms(proposals, config=None):
    """Greedy non-maximum suppression over masks.

    Order: score desc, then larger mask, then input order. A proposal
    survives iff its IoU with every kept one stays at or below the
    threshold; the survivor list truncates to top_k.
    """
    config = config or NMSConfig()
    if not proposals:
        return []
    order = sorted(
        range(len(proposals)),
        key=lambda i: (-proposals[i].score, -proposals[i].area, i),
    )
    packed = PackedMasks([p.mask for p in proposals])
    kept = []
    for i in order:
        if len(kept) >= config.top_k:
            break
        if kept:
            ious = packed.iou_row(i, kept)
            if (ious > config.iou_threshold).any():
                continue
        kept.append(i)
    return [proposals[i] for i in kept]


def filter_large(proposals, config, workspace_area):
    """Drop masks too large to be objects (area strictly above the cap)."""
    cap = config.max_area_frac * workspace_area
    return [p for p in proposals if p.area <= cap]


def top_k_by_score(proposals, k):
    order = sorted(range(len(proposals)), key=lambda i: (-proposals[i].score, -proposals[i].area, i))
    return [proposals[i] for i in order[:k]]


def write_predictions(path, per_image):
    """JSON-lines export: one record per proposal with an RLE mask.

    per_image: iterable of (image_id, proposals).
    """
    with open(path, "w") as f:
        for image_id, props in per_image:
            for p in props:
                rec = {
                    "image_id": image_id,
                    "score": float(p.score),
                    "rle": encode_mask(p.mask),
                }
                f.write(json.dumps(rec, sort_keys=True) + "\n")


def read_predictions(path):
    """Inverse of write_predictions: {image_id: [(score, mask), ...]}."""
    out = {}
    with open(path) as f:
        for line in f:
            if not line.strip():
                continue
            rec = json.loads(line)
            out.setdefault(rec["image_id"], []).append(
                (rec["score"], decode_mask(rec["rle"]))
            )
    return out
