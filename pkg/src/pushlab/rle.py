"""Row-major run-length encoding of binary masks.

The encoding lists run lengths of alternating values starting with the
number of leading zeros, so a mask beginning with ones starts with a 0
count. Dimensions travel with the counts.
"""

import numpy as np


def encode_mask(mask):
    """Encode a 2D boolean mask as {'dims': [h, w], 'counts': [...]}."""
    mask = np.asarray(mask).astype(bool)
    if mask.ndim != 2:
        raise ValueError("mask must be 2D")
    flat = mask.reshape(-1)
    if flat.size == 0:
        return {"dims": [0, 0], "counts": []}
    change = np.flatnonzero(np.diff(flat)) + 1
    bounds = np.concatenate(([0], change, [flat.size]))
    counts = np.diff(bounds).tolist()
    if flat[0]:
        counts.insert(0, 0)
    return {"dims": [int(mask.shape[0]), int(mask.shape[1])], "counts": counts}


def decode_mask(rle):
    """Invert encode_mask."""
    h, w = rle["dims"]
    counts = rle["counts"]
    total = sum(counts)
    if total != h * w:
        raise ValueError(f"RLE counts sum to {total}, expected {h * w}")
    flat = np.zeros(h * w, dtype=bool)
    pos = 0
    val = False
    for run in counts:
        if val:
            flat[pos : pos + run] = True
        pos += run
        val = not val
    return flat.reshape(h, w)
