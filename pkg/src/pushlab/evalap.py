"""Category-agnostic average precision over instance masks, COCO protocol:
greedy score-ordered matching per image, a global PR curve, and 101-point
interpolated AP at IoU thresholds 0.5, 0.75, and the 0.50:0.95 sweep."""

from dataclasses import dataclass, field

import numpy as np

from .inference import PackedMasks

IOU_SWEEP = tuple(np.round(np.arange(0.50, 0.96, 0.05), 2))
RECALL_POINTS = np.linspace(0.0, 1.0, 101)


@dataclass
class APReport:
    ap50: float
    ap75: float
    ap5095: float
    per_image: list = field(default_factory=list)  # diagnostics at IoU 0.5


def match_predictions(preds, gts, iou_t, ious=None):
    """Greedy matching of score-sorted predictions to ground-truth masks.

    preds: list of (score, mask) sorted by score descending (ties allowed);
    returns (assignment, tp_flags) where assignment[i] is the matched gt
    index or -1. Each gt matches at most once; a prediction takes the
    unmatched gt of highest IoU >= iou_t (ties: lower gt index).
    """
    scores = [s for s, _ in preds]
    if any(scores[i] < scores[i + 1] for i in range(len(scores) - 1)):
        raise ValueError("predictions must be sorted by score descending")
    if ious is None:
        ious = _iou_matrix([m for _, m in preds], gts)
    taken = np.zeros(len(gts), dtype=bool)
    assignment = np.full(len(preds), -1, dtype=np.int64)
    for i in range(len(preds)):
        best_j = -1
        best_iou = -1.0
        for j in range(len(gts)):
            if taken[j]:
                continue
            iou = ious[i, j]
            if iou >= iou_t and iou > best_iou:  # ties keep the lower gt index
                best_iou = iou
                best_j = j
        if best_j >= 0:
            taken[best_j] = True
            assignment[i] = best_j
    return assignment, assignment >= 0


def _iou_matrix(pred_masks, gt_masks):
    out = np.zeros((len(pred_masks), len(gt_masks)))
    if not pred_masks or not gt_masks:
        return out
    packed = PackedMasks(list(pred_masks) + list(gt_masks))
    idx_gt = np.arange(len(pred_masks), packed.n)
    for i in range(len(pred_masks)):
        out[i] = packed.iou_row(i, idx_gt)
    return out


def _flatten(preds_by_image, gts_by_image):
    """Global score ordering (stable: ties keep per-image input order)."""
    rows = []
    for image_id in preds_by_image:
        for order_idx, (score, mask) in enumerate(preds_by_image[image_id]):
            rows.append((image_id, order_idx, float(score)))
    rows.sort(key=lambda r: -r[2])
    n_gt = sum(len(v) for v in gts_by_image.values())
    return rows, n_gt


def average_precision(preds_by_image, gts_by_image, iou_t, _cache=None):
    """101-point interpolated AP (percent) at one IoU threshold.

    preds_by_image: {image_id: [(score, mask), ...]} in any per-image order;
    gts_by_image: {image_id: [mask, ...]}. With no ground truth anywhere,
    an empty prediction set scores 100, any prediction scores 0.
    """
    rows, n_gt = _flatten(preds_by_image, gts_by_image)
    if n_gt == 0:
        return 100.0 if not rows else 0.0
    tp_flags = _tp_flags(preds_by_image, gts_by_image, iou_t, rows, _cache)
    return _ap_from_flags(tp_flags, n_gt)


def _tp_flags(preds_by_image, gts_by_image, iou_t, rows, cache=None):
    per_image_sorted = {}
    for image_id, preds in preds_by_image.items():
        order = sorted(range(len(preds)), key=lambda i: (-preds[i][0], i))
        ious = cache.get(image_id) if cache is not None else None
        if ious is not None:
            ious = ious[order]
        assignment, tps = match_predictions(
            [preds[i] for i in order],
            gts_by_image.get(image_id, []),
            iou_t,
            ious=ious,
        )
        per_image_sorted[image_id] = (order, tps, assignment)
    flags = []
    seen = {k: 0 for k in preds_by_image}
    # rows are globally score-sorted; per image the k-th visit corresponds to
    # the k-th locally-sorted prediction (both orders are score-descending,
    # stable in input order)
    for image_id, _, _ in rows:
        k = seen[image_id]
        seen[image_id] += 1
        flags.append(per_image_sorted[image_id][1][k])
    return np.asarray(flags, dtype=bool)


def _ap_from_flags(tp_flags, n_gt):
    if len(tp_flags) == 0:
        return 0.0
    tp = np.cumsum(tp_flags)
    ranks = np.arange(1, len(tp_flags) + 1)
    precision = tp / ranks
    recall = tp / n_gt
    # precision envelope: best precision at recall >= r
    env = np.maximum.accumulate(precision[::-1])[::-1]
    ap = 0.0
    for r in RECALL_POINTS:
        idx = np.searchsorted(recall, r, side="left")
        ap += env[idx] if idx < len(env) else 0.0
    return 100.0 * ap / len(RECALL_POINTS)


def coco_ap(preds_by_image, gts_by_image):
    """APReport over the threshold sweep, plus per-image TP/FP/FN at 0.5.

    IoUs are computed once per image and shared across thresholds.
    """
    cache = {}
    for image_id, preds in preds_by_image.items():
        order = sorted(range(len(preds)), key=lambda i: (-preds[i][0], i))
        masks = [preds[i][1] for i in order]
        ious = _iou_matrix(masks, gts_by_image.get(image_id, []))
        inv = np.argsort(order)
        cache[image_id] = ious[inv]
    values = {
        t: average_precision(preds_by_image, gts_by_image, t, _cache=cache)
        for t in IOU_SWEEP
    }
    per_image = []
    for image_id, preds in preds_by_image.items():
        order = sorted(range(len(preds)), key=lambda i: (-preds[i][0], i))
        gts = gts_by_image.get(image_id, [])
        _, tps = match_predictions(
            [preds[i] for i in order], gts, 0.5, ious=cache[image_id][order]
        )
        tp = int(tps.sum())
        per_image.append(
            {"image_id": image_id, "tp": tp, "fp": len(preds) - tp, "fn": len(gts) - tp}
        )
    return APReport(
        ap50=values[0.5],
        ap75=values[0.75],
        ap5095=float(np.mean([values[t] for t in IOU_SWEEP])),
        per_image=per_image,
    )
