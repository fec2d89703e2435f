"""Self-labeled dataset persistence, patch sampling, and augmentation.

Layout on disk:
    root/manifest.json
    root/images/NNNNNN.ppm   (binary P6)
    root/masks/NNNNNN.pgm    (binary P5, {0, 255})
    root/audit.jsonl         (written by the collection loop)

Patch geometry follows the canonical-pose convention: a positive patch
centers the labeled mask and scales it so its longest side spans
`canonical_fill` of the patch. Jitter offsets are measured in patch pixels
at the canonical scale; the translation budget rescales linearly from a
224-px reference patch.
"""

import json
import os
from dataclasses import dataclass, field

import numpy as np

from . import netpbm
from .kernels import crop_bilinear, resize_bilinear, rotate_bilinear, rotate_nearest

FORMAT_VERSION = 1

REFERENCE_PATCH = 224
REFERENCE_JITTER = 16.0


class IdCollisionError(ValueError):
    pass


@dataclass
class DatasetManifest:
    root: str
    split: str = "train"
    records: list = field(default_factory=list)
    format_version: int = FORMAT_VERSION

    @property
    def counts(self):
        return {"records": len(self.records)}

    def ids(self):
        return {r["id"] for r in self.records}


def create_store(root, split="train"):
    os.makedirs(os.path.join(root, "images"), exist_ok=True)
    os.makedirs(os.path.join(root, "masks"), exist_ok=True)
    return DatasetManifest(root=root, split=split)


def append_sample(manifest, sample, sample_id=None):
    """Write one (image, mask) pair and register it. Ids must be unique."""
    if sample_id is None:
        sample_id = sample.provenance.get("interaction", len(manifest.records))
    sample_id = int(sample_id)
    if sample_id in manifest.ids():
        raise IdCollisionError(f"sample id {sample_id} already present")
    if not sample.mask.any():
        raise ValueError("empty mask")
    if sample.mask.shape != sample.image.shape[:2]:
        raise ValueError("mask dims differ from image dims")
    image_rel = f"images/{sample_id:06d}.ppm"
    mask_rel = f"masks/{sample_id:06d}.pgm"
    netpbm.write_p6(os.path.join(manifest.root, image_rel), sample.image)
    netpbm.write_p5(
        os.path.join(manifest.root, mask_rel),
        np.where(sample.mask, 255, 0).astype(np.uint8),
    )
    manifest.records.append(
        {
            "id": sample_id,
            "image": image_rel,
            "mask": mask_rel,
            "provenance": sample.provenance,
        }
    )
    return manifest


def save_manifest(manifest, name="manifest.json"):
    payload = {
        "format_version": manifest.format_version,
        "split": manifest.split,
        "counts": manifest.counts,
        "records": manifest.records,
    }
    path = os.path.join(manifest.root, name)
    with open(path, "w") as f:
        json.dump(payload, f, indent=1, sort_keys=True)
    return path


def load_manifest(root, name="manifest.json"):
    with open(os.path.join(root, name)) as f:
        payload = json.load(f)
    if payload["format_version"] != FORMAT_VERSION:
        raise ValueError(f"unsupported dataset format {payload['format_version']}")
    m = DatasetManifest(root=root, split=payload["split"], records=payload["records"])
    if payload["counts"]["records"] != len(m.records):
        raise ValueError("manifest counts disagree with records")
    return m


def load_record(manifest, record):
    image = netpbm.read_p6(os.path.join(manifest.root, record["image"]))
    mask = netpbm.read_p5(os.path.join(manifest.root, record["mask"])) > 127
    return image, mask


def split_dataset(manifest, ratios, rng_seed):
    """Deterministic shuffled split into train/val/test manifests."""
    if abs(sum(ratios) - 1.0) > 1e-9:
        raise ValueError("ratios must sum to 1")
    rng = np.random.default_rng(rng_seed)
    order = rng.permutation(len(manifest.records))
    n = len(order)
    n1 = int(np.floor(ratios[0] * n))
    n2 = int(np.floor(ratios[1] * n))
    parts = [order[:n1], order[n1 : n1 + n2], order[n1 + n2 :]]
    names = ["train", "val", "test"]
    return tuple(
        DatasetManifest(
            root=manifest.root,
            split=name,
            records=[manifest.records[i] for i in sorted(part)],
        )
        for name, part in zip(names, parts)
    )


# ---------------------------------------------------------------------------
# scale pyramid
# ---------------------------------------------------------------------------

DEFAULT_SCALE_EXPONENTS = (-2.0, -1.5, -1.0, -0.5, 0.0, 0.5, 1.0)


def pyramid_pairs(image, exponents=DEFAULT_SCALE_EXPONENTS, patch_size=64):
    """(factor, resized image) pairs; scales whose shorter side falls below
    the patch are skipped."""
    image = np.asarray(image, dtype=np.float64)
    out = []
    h, w = image.shape[:2]
    for k in exponents:
        f = 2.0**k
        oh, ow = int(round(h * f)), int(round(w * f))
        if min(oh, ow) < patch_size:
            continue
        out.append((f, resize_bilinear(image, oh, ow)))
    return out


def scale_pyramid(image, exponents=DEFAULT_SCALE_EXPONENTS, patch_size=64):
    """Resampled copies of the image at 2**k for each configured exponent."""
    return [img for _, img in pyramid_pairs(image, exponents, patch_size)]


# ---------------------------------------------------------------------------
# patch sampling
# ---------------------------------------------------------------------------


@dataclass(eq=False)
class PatchSample:
    patch: np.ndarray              # (p, p, 3) float64 in [0, 1]
    label: int                     # 1 positive, 0 negative
    source_id: int
    jitter: tuple                  # (dx, dy, log2_scale) in canonical patch units
    canonical: tuple               # (cy, cx, side) of the canonical pose
    mask_patch: np.ndarray = None  # (p, p) float64 in {0, 1}, positives only
    pretrained_prob: float = np.nan


def jitter_budget(patch_size):
    """Translation jitter limit in patch pixels, rescaled from the 224 ref."""
    return REFERENCE_JITTER * patch_size / REFERENCE_PATCH


def canonical_pose(mask, patch_size=64, canonical_fill=0.6, border_skip_frac=0.25):
    """(cy, cx, side) of the canonical crop, or None when the mask sits so
    close to the border that the crop would hang out by more than the
    allowed fraction of its side."""
    ys, xs = np.nonzero(mask)
    if len(ys) == 0:
        return None
    cy = float(ys.mean())
    cx = float(xs.mean())
    longest = max(ys.max() - ys.min() + 1, xs.max() - xs.min() + 1)
    side = longest / canonical_fill
    H, W = mask.shape
    overhang = max(
        0.0 - (cy - side / 2),
        0.0 - (cx - side / 2),
        (cy + side / 2) - H,
        (cx + side / 2) - W,
        0.0,
    )
    if overhang > border_skip_frac * side:
        return None
    return cy, cx, side


def crop_jittered(image, canonical, jitter, patch_size):
    """Crop described by a canonical pose plus (dx, dy, log2_scale) jitter.

    Offsets are patch pixels at the canonical scale; the crop side scales by
    2**log2_scale. Pure function of its arguments (recrop reproducibility).
    """
    cy, cx, side = canonical
    dx, dy, log2s = jitter
    unit = side / patch_size
    center_y = cy + dy * unit
    center_x = cx + dx * unit
    return crop_bilinear(image, center_y, center_x, side * 2.0**log2s, patch_size)


def _violates_negative_rule(center, side, refs, patch_size, jt):
    """A negative must sit far from every canonical pose: translation at
    least 2*jt patch px away, or at least a factor 2 away in scale."""
    for (rcy, rcx, rside) in refs:
        unit = rside / patch_size
        dx = (center[1] - rcx) / unit
        dy = (center[0] - rcy) / unit
        log2s = np.log2(side / rside)
        if max(abs(dx), abs(dy)) < 2.0 * jt and abs(log2s) < 1.0:
            return True
    return False


def sample_patches(
    image,
    mask,
    source_id,
    n_pos,
    n_neg,
    rng,
    patch_size=64,
    canonical_fill=0.6,
    extra_canonicals=(),
    max_neg_tries=200,
):
    """Positive and negative patches for one labeled sample.

    Returns a list of PatchSample (may be empty when the mask is too close
    to the border for a canonical crop). `extra_canonicals` lists canonical
    poses of other labeled objects to keep negatives away from (used by the
    fully-labeled pretraining corpus).
    """
    img = np.asarray(image, dtype=np.float64) / 255.0
    canon = canonical_pose(mask, patch_size, canonical_fill)
    if canon is None:
        return []
    refs = [canon] + list(extra_canonicals)
    jt = jitter_budget(patch_size)
    maskf = mask.astype(np.float64)
    out = []
    for _ in range(n_pos):
        jitter = (
            float(rng.uniform(-jt, jt)),
            float(rng.uniform(-jt, jt)),
            float(rng.uniform(-0.25, 0.25)),
        )
        patch = crop_jittered(img, canon, jitter, patch_size)
        mpatch = crop_jittered(maskf, canon, jitter, patch_size)
        out.append(
            PatchSample(
                patch=patch,
                label=1,
                source_id=source_id,
                jitter=jitter,
                canonical=canon,
                mask_patch=(mpatch >= 0.5).astype(np.float64),
            )
        )
    H, W = mask.shape
    cy, cx, side = canon
    made = 0
    for _ in range(max_neg_tries):
        if made >= n_neg:
            break
        ncy = float(rng.uniform(0, H))
        ncx = float(rng.uniform(0, W))
        nlog2s = float(rng.uniform(-1.25, 1.25))
        nside = side * 2.0**nlog2s
        if _violates_negative_rule((ncy, ncx), nside, refs, patch_size, jt):
            continue
        unit = side / patch_size
        jitter = ((ncx - cx) / unit, (ncy - cy) / unit, nlog2s)
        patch = crop_jittered(img, canon, jitter, patch_size)
        out.append(
            PatchSample(
                patch=patch,
                label=0,
                source_id=source_id,
                jitter=jitter,
                canonical=canon,
            )
        )
        made += 1
    return out


@dataclass
class AugmentConfig:
    p_flip: float = 0.25
    p_rotate: float = 0.25
    flip_axis: str = "horizontal"   # mirror about the horizontal centerline
    fill: tuple = (121 / 255.0, 110 / 255.0, 98 / 255.0)

    def __post_init__(self):
        if not (0 <= self.p_flip <= 1 and 0 <= self.p_rotate <= 1):
            raise ValueError("probabilities must lie in [0, 1]")


def augment(patch, paired_mask, rng, cfg=None):
    """Stochastic flip/rotate of a patch (and its mask, identically).

    The flip mirrors about the horizontal centerline by default
    (cfg.flip_axis="vertical" mirrors left-right instead); rotation is
    bilinear for the image, nearest for the mask, fill = table color.
    """
    cfg = cfg or AugmentConfig()
    img = patch
    mask = paired_mask
    if rng.random() < cfg.p_flip:
        if cfg.flip_axis == "horizontal":
            img = img[::-1].copy()
            mask = None if mask is None else mask[::-1].copy()
        else:
            img = img[:, ::-1].copy()
            mask = None if mask is None else mask[:, ::-1].copy()
    if rng.random() < cfg.p_rotate:
        angle = rng.uniform(0.0, 2.0 * np.pi)
        img = rotate_bilinear(img, angle, cfg.fill)
        if mask is not None:
            mask = rotate_nearest(mask, angle, 0.0)
    return img, mask
