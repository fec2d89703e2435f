"""Turning one push interaction into at most one self-labeled training mask.

Pipeline: flow -> whole-image motion gate -> table-flow zeroing -> recursive
normalized-cut clustering -> rotating-segment rejection -> segment selection
at the push pixel. Every rejection is recorded, never raised.

A frame-differencing labeler is included as the weaker baseline.
"""

from dataclasses import dataclass, field

import numpy as np
from scipy import ndimage

from .flow import FlowField, FlowParams, estimate_flow, flow_stats
from .ncut import EmptyGraphError, NcutParams, build_affinity, connected_components, ncut_bipartition


@dataclass
class MaskGenConfig:
    rot_std_threshold: float = 15.0
    mean_mag_threshold: float = 7.0
    table_flow_zeroing: bool = True
    ncut: NcutParams = field(default_factory=NcutParams)
    min_segment_area: int = 60
    capture_radius: float = 6.0
    selection: str = "action"  # "action" | "largest" (ablation)

    def __post_init__(self):
        if self.rot_std_threshold <= 0 or self.mean_mag_threshold <= 0:
            raise ValueError("thresholds must be positive")


@dataclass(eq=False)
class Segment:
    mask: np.ndarray          # bool raster
    stats: object             # FlowStats over the mask

    @property
    def area(self):
        return int(self.mask.sum())


@dataclass(eq=False)
class SegmentSet:
    segments: list

    def __len__(self):
        return len(self.segments)

    def __iter__(self):
        return iter(self.segments)


@dataclass(eq=False)
class Sample:
    image: np.ndarray         # (H,W,3) uint8
    mask: np.ndarray          # bool raster
    provenance: dict


@dataclass(eq=False)
class LabelResult:
    sample: object            # Sample | None
    reason: str               # "accepted" or the rejecting gate
    stats: dict


def filter_table_flow(flow, table_mask):
    """Zero flow vectors that start on the table and land back on it.

    The landing point is the source pixel displaced by its own flow vector,
    rounded to the nearest pixel (ties to even); vectors leaving the frame
    are left untouched.
    """
    table_mask = np.asarray(table_mask, dtype=bool)
    if table_mask.shape != flow.shape:
        raise ValueError("table mask dims differ from flow dims")
    H, W = flow.shape
    ys, xs = np.mgrid[0:H, 0:W]
    tx = np.rint(xs + flow.u).astype(np.int64)
    ty = np.rint(ys + flow.v).astype(np.int64)
    inb = (tx >= 0) & (tx < W) & (ty >= 0) & (ty < H)
    lands_on_table = np.zeros((H, W), dtype=bool)
    lands_on_table[inb] = table_mask[ty[inb], tx[inb]]
    zero = table_mask & lands_on_table
    u = flow.u.copy()
    v = flow.v.copy()
    u[zero] = 0.0
    v[zero] = 0.0
    return FlowField(u=u, v=v)


def cluster_flow(flow, params, min_segment_area=60, moving_thresh=0.5):
    """Recursive two-way normalized cuts over the moving pixels.

    Components always separate (their cut costs nothing); an ncut split is
    taken while its value stays under stop_ncut, both sides are big enough,
    and the segment budget is not exhausted. Node sets are dilated back to
    full resolution by assigning every moving pixel to its nearest node.
    """
    try:
        graph = build_affinity(flow, params, moving_thresh)
    except EmptyGraphError:
        return SegmentSet(segments=[])
    min_nodes = max(2, int(np.ceil(min_segment_area / params.downsample**2)))
    pending = list(connected_components(graph))
    final = []
    while pending:
        comp = pending.pop(0)
        budget_left = params.max_segments - (len(final) + len(pending) + 1)
        if len(comp) < 2 * min_nodes or budget_left < 1:
            final.append(comp)
            continue
        a, b, value = ncut_bipartition(graph, comp, dense_max=params.dense_eigh_max)
        if value <= params.stop_ncut and len(a) >= min_nodes and len(b) >= min_nodes:
            pending.extend(connected_components(graph, a))
            pending.extend(connected_components(graph, b))
        else:
            final.append(comp)

    mag = flow.magnitude()
    mys, mxs = np.nonzero(mag > moving_thresh)
    if len(mys) == 0:
        return SegmentSet(segments=[])
    owner_of_node = np.empty(graph.n, dtype=np.int64)
    for si, comp in enumerate(final):
        owner_of_node[comp] = si
    # nearest sampled node for every moving pixel, chunked to bound memory
    pix = np.stack([mys, mxs], axis=1).astype(np.float64)
    nodes = graph.coords.astype(np.float64)
    owners = np.empty(len(pix), dtype=np.int64)
    chunk = max(1, int(4e6 // max(graph.n, 1)))
    for start in range(0, len(pix), chunk):
        stop = min(len(pix), start + chunk)
        d2 = ((pix[start:stop, None, :] - nodes[None, :, :]) ** 2).sum(-1)
        owners[start:stop] = owner_of_node[np.argmin(d2, axis=1)]
    H, W = flow.shape
    segments = []
    for si in range(len(final)):
        sel = owners == si
        if not sel.any():
            continue
        mask = np.zeros((H, W), dtype=bool)
        mask[mys[sel], mxs[sel]] = True
        if mask.sum() < min_segment_area:
            continue
        segments.append(Segment(mask=mask, stats=flow_stats(flow, mask)))
    return SegmentSet(segments=segments)


def reject_rotation(segments, flow, config):
    """Drop segments whose flow-magnitude population std exceeds the gate."""
    kept = []
    for seg in segments:
        stats = flow_stats(flow, seg.mask)
        if stats.std_mag > config.rot_std_threshold:
            continue
        kept.append(Segment(mask=seg.mask, stats=stats))
    return SegmentSet(segments=kept)


def select_by_action(segments, action, capture_radius=6.0):
    """Segment containing the push pixel, else the nearest one within reach."""
    segs = list(segments)
    if not segs:
        return None
    ax, ay = int(action.x), int(action.y)
    for seg in segs:
        if (
            0 <= ay < seg.mask.shape[0]
            and 0 <= ax < seg.mask.shape[1]
            and seg.mask[ay, ax]
        ):
            return seg
    best = None
    best_d = np.inf
    for seg in segs:
        ys, xs = np.nonzero(seg.mask)
        d = np.sqrt(((ys - ay) ** 2 + (xs - ax) ** 2).min())
        if d < best_d:
            best_d = d
            best = seg
    if best_d <= capture_radius:
        return best
    return None


def select_largest(segments):
    segs = list(segments)
    if not segs:
        return None
    return max(segs, key=lambda s: s.area)  # ties: first (lowest index)


def accept_interaction(flow, config):
    """Gate out whole-scene motion: reject when the full-image mean
    magnitude exceeds the threshold."""
    stats = flow_stats(flow)
    return not (stats.mean_mag > config.mean_mag_threshold)


def label_interaction(
    before,
    after,
    action,
    config,
    flow_source="estimated",
    oracle=None,
    flow_params=None,
):
    """Run the full labeling pipeline on one interaction.

    `before`/`after` are rendered frames; the table mask comes from the
    before frame's instance raster. With flow_source="oracle" the exact
    field must be supplied.
    """
    if flow_source == "oracle":
        if oracle is None:
            raise ValueError("oracle flow source requires the oracle field")
        flow = oracle
    elif flow_source == "estimated":
        flow = estimate_flow(before, after, flow_params or FlowParams())
    else:
        raise ValueError(f"unknown flow source {flow_source!r}")

    stats = flow_stats(flow)
    info = {
        "flow_mean": stats.mean_mag,
        "flow_std": stats.std_mag,
        "flow_source": flow_source,
    }
    if not accept_interaction(flow, config):
        return LabelResult(None, "mean_magnitude", info)
    if config.table_flow_zeroing:
        flow = filter_table_flow(flow, before.gt_instances == 0)
    segset = cluster_flow(flow, config.ncut, config.min_segment_area)
    info["n_segments"] = len(segset)
    if len(segset) == 0:
        return LabelResult(None, "no_segments", info)
    segset = reject_rotation(segset, flow, config)
    info["n_segments_after_rotation"] = len(segset)
    if len(segset) == 0:
        return LabelResult(None, "rotation_reject", info)
    if config.selection == "largest":
        seg = select_largest(segset)
    else:
        seg = select_by_action(segset, action, config.capture_radius)
    if seg is None:
        return LabelResult(None, "no_segment_at_action", info)
    sample = Sample(
        image=before.rgb,
        mask=seg.mask.copy(),
        provenance={
            "action": (action.x, action.y),
            "direction": tuple(float(c) for c in action.direction),
            "distance": float(action.distance),
            "flow_source": flow_source,
            "segment_area": seg.area,
        },
    )
    return LabelResult(sample, "accepted", info)


@dataclass
class FrameDiffConfig:
    threshold: int = 25
    capture_radius: float = 6.0


def frame_diff_mask(before, after, action, config=None):
    """Baseline labeler: thresholded max-channel difference, 3x3 open/close,
    then the connected component at (or nearest to) the push pixel."""
    config = config or FrameDiffConfig()
    a = before.rgb if hasattr(before, "rgb") else before
    b = after.rgb if hasattr(after, "rgb") else after
    if a.shape != b.shape:
        raise ValueError("frame dims differ")
    diff = np.abs(a.astype(np.int16) - b.astype(np.int16)).max(axis=2)
    binary = diff > config.threshold
    structure = np.ones((3, 3), dtype=bool)
    binary = ndimage.binary_opening(binary, structure=structure)
    binary = ndimage.binary_closing(binary, structure=structure)
    labels, n = ndimage.label(binary, structure=structure)
    if n == 0:
        return None
    ax, ay = int(action.x), int(action.y)
    comp_id = labels[ay, ax]
    if comp_id == 0:
        ys, xs = np.nonzero(binary)
        d = np.sqrt((ys - ay) ** 2 + (xs - ax) ** 2)
        k = int(np.argmin(d))
        if d[k] > config.capture_radius:
            return None
        comp_id = labels[ys[k], xs[k]]
    mask = labels == comp_id
    return Sample(
        image=a,
        mask=mask,
        provenance={"action": (ax, ay), "method": "frame_diff"},
    )
