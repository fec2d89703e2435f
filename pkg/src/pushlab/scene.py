"""2D tabletop world: rigid textured objects, pushes, rendering, exact motion.

Quasi-static dynamics only: a push translates one object (optionally rotates
it, optionally disturbs a bystander), clamped to the workspace rectangle.
Rendering is procedural and fully deterministic; textures are anchored to
object-local coordinates so they travel rigidly with the object, which gives
the block-matching flow estimator something to lock onto.
"""

from dataclasses import dataclass, field, replace

import numpy as np

from .flow import FlowField

PALETTES = {
    # warm/primary set used for data-collection scenes
    "train": [
        (202, 62, 52),
        (232, 140, 42),
        (222, 198, 64),
        (54, 92, 198),
        (64, 168, 84),
        (58, 182, 160),
        (188, 64, 168),
        (240, 92, 110),
    ],
    # held-out appearance for test scenes
    "novel": [
        (126, 74, 200),
        (150, 158, 44),
        (230, 132, 162),
        (142, 92, 54),
        (46, 56, 128),
        (152, 218, 92),
        (88, 88, 92),
        (36, 150, 196),
    ],
    # pastel set for the synthetic pretraining corpus (source domain)
    "source": [
        (176, 178, 226),
        (224, 176, 176),
        (176, 222, 178),
        (206, 206, 150),
        (152, 206, 206),
        (204, 152, 204),
        (228, 204, 170),
        (170, 170, 170),
    ],
}

TABLE_STYLES = {
    "target": {"color": (121, 110, 98), "amp": 13.0, "scale": 4.0},
    "source": {"color": (176, 182, 190), "amp": 8.0, "scale": 7.0},
}

BORDER_COLOR = (28, 28, 33)


class SpawnError(RuntimeError):
    """Workspace could not host the requested objects."""


class NoActionError(RuntimeError):
    """No valid push exists for the scene."""


@dataclass
class WorkspaceConfig:
    image_w: int = 160
    image_h: int = 120
    border: int = 6            # dark frame around the table, px
    push_margin: int = 8       # pushes may not start this close to the table edge
    obj_r_min: float = 11.0
    obj_r_max: float = 19.0
    min_object_area: float = 120.0
    overlap_tol: float = 0.0   # px^2 of allowed pairwise overlap at spawn
    max_attempts: int = 120    # placement retries per object
    push_min: float = 10.0
    push_max: float = 60.0
    palette: str = "train"
    table_style: str = "target"
    texture_amp: float = 56.0
    texture_scale: float = 4.0
    sensor_noise: float = 1.2  # capture-time gaussian noise, gray levels

    @property
    def workspace(self):
        return (
            self.border,
            self.border,
            self.image_w - self.border,
            self.image_h - self.border,
        )


@dataclass(eq=False)
class RigidObject2D:
    id: int
    kind: str                      # "polygon" | "ellipse"
    verts: np.ndarray | None       # (n,2) local CCW coords, centroid at origin
    semi_axes: tuple | None        # (a, b) px
    x: float = 0.0
    y: float = 0.0
    theta: float = 0.0
    color: tuple = (128, 128, 128)
    texture_seed: int = 0
    texture_amp: float = 42.0
    texture_scale: float = 4.0

    def area(self):
        if self.kind == "ellipse":
            a, b = self.semi_axes
            return np.pi * a * b
        v = self.verts
        x, y = v[:, 0], v[:, 1]
        return 0.5 * abs(np.dot(x, np.roll(y, -1)) - np.dot(y, np.roll(x, -1)))

    def local_extents(self):
        """Axis-aligned half extents of the shape at the current rotation."""
        if self.kind == "ellipse":
            a, b = self.semi_axes
            c, s = np.cos(self.theta), np.sin(self.theta)
            ex = np.sqrt((a * c) ** 2 + (b * s) ** 2)
            ey = np.sqrt((a * s) ** 2 + (b * c) ** 2)
            return -ex, ex, -ey, ey
        w = _rot(self.verts, self.theta)
        return w[:, 0].min(), w[:, 0].max(), w[:, 1].min(), w[:, 1].max()


@dataclass(eq=False)
class SceneState:
    objects: list
    workspace: tuple               # (x0, y0, x1, y1), half-open
    image_dims: tuple              # (W, H)
    table_color: tuple = (121, 110, 98)
    table_amp: float = 20.0
    table_scale: float = 3.0
    table_seed: int = 17

    def object_by_id(self, oid):
        for obj in self.objects:
            if obj.id == oid:
                return obj
        raise KeyError(oid)


@dataclass
class PushAction:
    x: int
    y: int
    direction: tuple               # unit (dx, dy)
    distance: float


@dataclass
class MotionRecord:
    # id -> (dx, dy, dtheta); rotation is about the object's pre-push centroid
    moves: dict = field(default_factory=dict)

    def delta(self, oid):
        return self.moves.get(oid, (0.0, 0.0, 0.0))


@dataclass(eq=False)
class Frame:
    rgb: np.ndarray                # (H,W,3) uint8
    gt_instances: np.ndarray       # (H,W) int32, 0 = table/background


@dataclass
class DisturbanceConfig:
    p_second_object_moves: float = 0.15
    p_rotation: float = 0.2
    rotation_range: float = 0.6    # radians, symmetric
    p_partial_slip: float = 0.1

    @classmethod
    def none(cls):
        return cls(0.0, 0.0, 0.0, 0.0)


def _rot(pts, theta):
    c, s = np.cos(theta), np.sin(theta)
    return pts @ np.array([[c, -s], [s, c]]).T


def _hash01(seed, ix, iy):
    """Deterministic lattice hash -> [0,1) floats (vectorized, uint64 mixing)."""
    z = (
        np.uint64(seed & 0xFFFFFFFFFFFFFFFF)
        ^ (ix.astype(np.uint64) * np.uint64(0x9E3779B97F4A7C15))
        ^ (iy.astype(np.uint64) * np.uint64(0xC2B2AE3D27D4EB4F))
    )
    z = (z ^ (z >> np.uint64(30))) * np.uint64(0xBF58476D1CE4E5B9)
    z = (z ^ (z >> np.uint64(27))) * np.uint64(0x94D049BB133111EB)
    z = z ^ (z >> np.uint64(31))
    return (z >> np.uint64(11)).astype(np.float64) / float(1 << 53)


def _value_noise(seed, xs, ys, scale):
    """Bilinear value noise over a seeded integer lattice, in [0,1)."""
    gx = xs / scale
    gy = ys / scale
    x0 = np.floor(gx).astype(np.int64)
    y0 = np.floor(gy).astype(np.int64)
    fx = gx - x0
    fy = gy - y0
    n00 = _hash01(seed, x0, y0)
    n10 = _hash01(seed, x0 + 1, y0)
    n01 = _hash01(seed, x0, y0 + 1)
    n11 = _hash01(seed, x0 + 1, y0 + 1)
    top = n00 * (1 - fx) + n10 * fx
    bot = n01 * (1 - fx) + n11 * fx
    return top * (1 - fy) + bot * fy


def object_mask(obj, image_dims):
    """Boolean raster of the object footprint at pixel centers."""
    W, H = image_dims
    xmin, xmax, ymin, ymax = obj.local_extents()
    c0 = max(0, int(np.floor(obj.x + xmin)))
    c1 = min(W - 1, int(np.ceil(obj.x + xmax)))
    r0 = max(0, int(np.floor(obj.y + ymin)))
    r1 = min(H - 1, int(np.ceil(obj.y + ymax)))
    mask = np.zeros((H, W), dtype=bool)
    if c1 < c0 or r1 < r0:
        return mask
    ys, xs = np.mgrid[r0 : r1 + 1, c0 : c1 + 1]
    dx = xs - obj.x
    dy = ys - obj.y
    ct, st = np.cos(obj.theta), np.sin(obj.theta)
    lx = ct * dx + st * dy
    ly = -st * dx + ct * dy
    if obj.kind == "ellipse":
        a, b = obj.semi_axes
        inside = (lx / a) ** 2 + (ly / b) ** 2 <= 1.0
    else:
        v = obj.verts
        inside = np.ones_like(lx, dtype=bool)
        n = len(v)
        for i in range(n):
            ax, ay = v[i]
            bx, by = v[(i + 1) % n]
            cross = (bx - ax) * (ly - ay) - (by - ay) * (lx - ax)
            inside &= cross >= 0.0
    mask[r0 : r1 + 1, c0 : c1 + 1] = inside
    return mask


def _convex_hull(points):
    """Andrew monotone chain; returns CCW hull vertices."""
    pts = sorted(map(tuple, points))
    if len(pts) < 3:
        return np.array(pts)

    def cross(o, a, b):
        return (a[0] - o[0]) * (b[1] - o[1]) - (a[1] - o[1]) * (b[0] - o[0])

    lower = []
    for p in pts:
        while len(lower) >= 2 and cross(lower[-2], lower[-1], p) <= 0:
            lower.pop()
        lower.append(p)
    upper = []
    for p in reversed(pts):
        while len(upper) >= 2 and cross(upper[-2], upper[-1], p) <= 0:
            upper.pop()
        upper.append(p)
    return np.array(lower[:-1] + upper[:-1], dtype=np.float64)


def _polygon_centroid(v):
    x, y = v[:, 0], v[:, 1]
    xn, yn = np.roll(x, -1), np.roll(y, -1)
    cr = x * yn - xn * y
    a = cr.sum() / 2.0
    cx = ((x + xn) * cr).sum() / (6.0 * a)
    cy = ((y + yn) * cr).sum() / (6.0 * a)
    return cx, cy


def _random_shape(cfg, rng):
    if rng.random() < 0.5:
        a = rng.uniform(cfg.obj_r_min, cfg.obj_r_max)
        b = rng.uniform(0.65 * a, 0.95 * a)
        return "ellipse", None, (a, b)
    r = rng.uniform(cfg.obj_r_min, cfg.obj_r_max)
    pts = []
    while len(pts) < 8:
        p = rng.uniform(-r, r, size=2)
        if p @ p <= r * r:
            pts.append(p)
    hull = _convex_hull(np.array(pts))
    if len(hull) < 3:
        return _random_shape(cfg, rng)
    cx, cy = _polygon_centroid(hull)
    hull = hull - (cx, cy)
    # random-point hulls shrink; rescale to a target area so polygons and
    # ellipses occupy comparable footprints
    x, y = hull[:, 0], hull[:, 1]
    area = 0.5 * abs(np.dot(x, np.roll(y, -1)) - np.dot(y, np.roll(x, -1)))
    target = rng.uniform(0.62, 0.85) * np.pi * r * r
    return "polygon", hull * np.sqrt(target / area), None


def spawn_scene(cfg, n_objects, rng_seed, cluster=False):
    """Place n_objects non-overlapping textured objects on the table.

    cluster=True packs objects tightly around a random focus point (and
    permits cfg.overlap_tol of pairwise overlap), used for the interactive
    separation scenes.
    """
    if n_objects < 1:
        raise ValueError("n_objects must be >= 1")
    rng = np.random.default_rng(rng_seed) if isinstance(rng_seed, (int, np.integer)) else rng_seed
    x0, y0, x1, y1 = cfg.workspace
    if x1 - x0 < 4 or y1 - y0 < 4:
        raise SpawnError("workspace does not fit in image")
    palette = PALETTES[cfg.palette]
    style = TABLE_STYLES[cfg.table_style]
    objects = []
    rasters = []
    focus = None
    if cluster:
        fx = rng.uniform(x0 + 0.35 * (x1 - x0), x1 - 0.35 * (x1 - x0))
        fy = rng.uniform(y0 + 0.35 * (y1 - y0), y1 - 0.35 * (y1 - y0))
        focus = (fx, fy)
    for oid in range(1, n_objects + 1):
        color = palette[(oid - 1) % len(palette)]
        placed = False
        for _ in range(cfg.max_attempts):
            kind, verts, axes = _random_shape(cfg, rng)
            obj = RigidObject2D(
                id=oid,
                kind=kind,
                verts=verts,
                semi_axes=axes,
                theta=rng.uniform(0.0, 2 * np.pi),
                color=color,
                texture_seed=int(rng.integers(0, 2**62)),
                texture_amp=cfg.texture_amp,
                texture_scale=cfg.texture_scale,
            )
            if obj.area() < cfg.min_object_area:
                continue
            xmin, xmax, ymin, ymax = obj.local_extents()
            if cluster and objects:
                ref = objects[int(rng.integers(0, len(objects)))]
                ang = rng.uniform(0, 2 * np.pi)
                rad = rng.uniform(0.7, 1.15) * (cfg.obj_r_max + cfg.obj_r_min)
                px = ref.x + rad * np.cos(ang)
                py = ref.y + rad * np.sin(ang)
            elif cluster:
                px, py = focus
            else:
                px = rng.uniform(x0 - xmin, x1 - 1 - xmax)
                py = rng.uniform(y0 - ymin, y1 - 1 - ymax)
            px = min(max(px, x0 - xmin), x1 - 1 - xmax)
            py = min(max(py, y0 - ymin), y1 - 1 - ymax)
            obj.x, obj.y = px, py
            raster = object_mask(obj, (cfg.image_w, cfg.image_h))
            ok = True
            for other in rasters:
                if np.count_nonzero(raster & other) > cfg.overlap_tol:
                    ok = False
                    break
            if not ok:
                continue
            objects.append(obj)
            rasters.append(raster)
            placed = True
            break
        if not placed:
            raise SpawnError(
                f"could not place object {oid}/{n_objects} after {cfg.max_attempts} attempts"
            )
    return SceneState(
        objects=objects,
        workspace=cfg.workspace,
        image_dims=(cfg.image_w, cfg.image_h),
        table_color=style["color"],
        table_amp=style["amp"],
        table_scale=style["scale"],
    )


def render(scene):
    """Rasterize the scene: textured table, objects painted in id order."""
    W, H = scene.image_dims
    x0, y0, x1, y1 = scene.workspace
    rgb = np.empty((H, W, 3), dtype=np.float64)
    rgb[:, :] = BORDER_COLOR
    ys, xs = np.mgrid[0:H, 0:W].astype(np.float64)
    table = _value_noise(scene.table_seed, xs, ys, scene.table_scale)
    offset = (table * 2.0 - 1.0) * scene.table_amp
    in_table = np.zeros((H, W), dtype=bool)
    in_table[y0:y1, x0:x1] = True
    for c in range(3):
        chan = rgb[:, :, c]
        chan[in_table] = scene.table_color[c] + offset[in_table]
    gt = np.zeros((H, W), dtype=np.int32)
    for obj in sorted(scene.objects, key=lambda o: o.id):
        mask = object_mask(obj, scene.image_dims)
        if not mask.any():
            continue
        my, mx = np.nonzero(mask)
        dx = mx - obj.x
        dy = my - obj.y
        ct, st = np.cos(obj.theta), np.sin(obj.theta)
        lx = ct * dx + st * dy
        ly = -st * dx + ct * dy
        noise = _value_noise(obj.texture_seed, lx, ly, obj.texture_scale)
        off = (noise * 2.0 - 1.0) * obj.texture_amp
        for c in range(3):
            rgb[my, mx, c] = obj.color[c] + off
        gt[mask] = obj.id
    return Frame(rgb=np.clip(rgb, 0, 255).astype(np.uint8), gt_instances=gt)


def capture(scene, rng=None, noise_std=0.0):
    """Render plus optional sensor noise on the RGB channels."""
    frame = render(scene)
    if rng is not None and noise_std > 0.0:
        noisy = frame.rgb.astype(np.float64) + rng.normal(0.0, noise_std, frame.rgb.shape)
        frame = Frame(rgb=np.clip(np.rint(noisy), 0, 255).astype(np.uint8), gt_instances=frame.gt_instances)
    return frame


PUSH_DIRECTIONS = [
    (np.cos(k * np.pi / 8.0), np.sin(k * np.pi / 8.0)) for k in range(16)
]


def _boundary_pixels(raster):
    interior = (
        np.roll(raster, 1, 0) & np.roll(raster, -1, 0) & np.roll(raster, 1, 1) & np.roll(raster, -1, 1)
    )
    edge = raster & ~interior
    ys, xs = np.nonzero(edge)
    return ys, xs


def _ray_clearance(scene, obj, direction, others_raster):
    """Free travel distance for obj along direction before it meets another
    object or the workspace edge."""
    x0, y0, x1, y1 = scene.workspace
    dx, dy = direction
    xmin, xmax, ymin, ymax = obj.local_extents()
    # travel until the bounding extent hits the workspace wall
    tx = np.inf
    if dx > 1e-9:
        tx = (x1 - 1 - xmax - obj.x) / dx
    elif dx < -1e-9:
        tx = (x0 - xmin - obj.x) / dx
    ty = np.inf
    if dy > 1e-9:
        ty = (y1 - 1 - ymax - obj.y) / dy
    elif dy < -1e-9:
        ty = (y0 - ymin - obj.y) / dy
    t_wall = max(0.0, min(tx, ty))
    # march the leading point until it enters another object
    if obj.kind == "ellipse":
        lead = max(obj.semi_axes)
    else:
        w = _rot(obj.verts, obj.theta)
        lead = (w @ np.array(direction)).max()
    t_obj = t_wall
    W, H = scene.image_dims
    for t in range(1, int(t_wall) + 1):
        px = int(round(obj.x + (lead + t) * dx))
        py = int(round(obj.y + (lead + t) * dy))
        if 0 <= px < W and 0 <= py < H and others_raster[py, px]:
            t_obj = float(t - 1)
            break
    return min(t_wall, t_obj)


def direction_clearances(scene, obj_id):
    """Clearance along each of the 16 push directions for one object."""
    obj = scene.object_by_id(obj_id)
    others = np.zeros((scene.image_dims[1], scene.image_dims[0]), dtype=bool)
    for other in scene.objects:
        if other.id != obj_id:
            others |= object_mask(other, scene.image_dims)
    return [_ray_clearance(scene, obj, d, others) for d in PUSH_DIRECTIONS]


def _start_pixel(scene, obj, direction, margin):
    """Rear boundary pixel of obj w.r.t. the push direction, or None if it
    falls inside the no-start margin."""
    raster = object_mask(obj, scene.image_dims)
    ys, xs = _boundary_pixels(raster)
    if len(ys) == 0:
        return None
    proj = (xs - obj.x) * direction[0] + (ys - obj.y) * direction[1]
    order = np.lexsort((xs, ys, proj))
    x0, y0, x1, y1 = scene.workspace
    for idx in order[: max(8, len(order) // 4)]:
        px, py = int(xs[idx]), int(ys[idx])
        if x0 + margin <= px < x1 - margin and y0 + margin <= py < y1 - margin:
            return px, py
    return None


def sample_push(scene, policy, rng, push_min=10.0, push_max=60.0, margin=8, object_id=None):
    """Choose a push.

    random: uniform over (object, direction) pairs that admit a valid start.
    free-space: direction with maximal clearance; distance scaled to it.
    """
    if not scene.objects:
        raise NoActionError("empty scene")
    if object_id is None:
        candidates = [o.id for o in scene.objects]
    else:
        candidates = [object_id]
    order = list(rng.permutation(len(candidates)))
    for ci in order:
        oid = candidates[ci]
        obj = scene.object_by_id(oid)
        if policy == "free-space":
            clear = direction_clearances(scene, oid)
            ranked = sorted(range(16), key=lambda k: (-clear[k], k))
        elif policy == "random":
            ranked = list(rng.permutation(16))
            clear = None
        else:
            raise ValueError(f"unknown push policy {policy!r}")
        for k in ranked:
            direction = PUSH_DIRECTIONS[k]
            start = _start_pixel(scene, obj, direction, margin)
            if start is None:
                continue
            if policy == "free-space":
                travel = clear[k]
                if travel < 1.0:
                    continue
                distance = min(push_max, max(push_min, 0.7 * travel))
            else:
                distance = rng.uniform(push_min, push_max)
            return PushAction(x=start[0], y=start[1], direction=direction, distance=float(distance))
    raise NoActionError("no valid push found")


def _clamp_translation(scene, obj, tx, ty):
    x0, y0, x1, y1 = scene.workspace
    xmin, xmax, ymin, ymax = obj.local_extents()
    nx = min(max(obj.x + tx, x0 - xmin), x1 - 1 - xmax)
    ny = min(max(obj.y + ty, y0 - ymin), y1 - 1 - ymax)
    return nx, ny


def pushed_object_id(scene, action):
    """Topmost object whose footprint contains the push start pixel."""
    for obj in sorted(scene.objects, key=lambda o: -o.id):
        if object_mask(obj, scene.image_dims)[action.y, action.x]:
            return obj.id
    raise NoActionError("push start does not touch any object")


def apply_push(scene, action, disturbance, rng):
    """Execute a push; returns the new scene and exact per-object pose deltas."""
    oid = pushed_object_id(scene, action)
    obj = scene.object_by_id(oid)
    distance = action.distance
    if disturbance.p_partial_slip > 0 and rng.random() < disturbance.p_partial_slip:
        distance *= rng.uniform(0.3, 0.7)
    dtheta = 0.0
    if disturbance.p_rotation > 0 and rng.random() < disturbance.p_rotation:
        dtheta = rng.uniform(-disturbance.rotation_range, disturbance.rotation_range)
    new_obj = replace(obj, theta=(obj.theta + dtheta) % (2 * np.pi))
    nx, ny = _clamp_translation(
        scene, new_obj, action.direction[0] * distance, action.direction[1] * distance
    )
    new_obj.x, new_obj.y = nx, ny
    moves = {oid: (nx - obj.x, ny - obj.y, dtheta)}
    new_objects = [new_obj if o.id == oid else o for o in scene.objects]

    if (
        disturbance.p_second_object_moves > 0
        and len(scene.objects) >= 2
        and rng.random() < disturbance.p_second_object_moves
    ):
        others = [o for o in scene.objects if o.id != oid]
        second = others[int(rng.integers(0, len(others)))]
        ang = rng.uniform(0, 2 * np.pi)
        amount = rng.uniform(0.15, 0.45) * distance
        sx, sy = _clamp_translation(
            scene, second, amount * np.cos(ang), amount * np.sin(ang)
        )
        moved_second = replace(second, x=sx, y=sy)
        moves[second.id] = (sx - second.x, sy - second.y, 0.0)
        new_objects = [moved_second if o.id == second.id else o for o in new_objects]

    new_scene = replace(scene, objects=new_objects)
    return new_scene, MotionRecord(moves=moves)


def oracle_flow(scene_before, scene_after, motion):
    """Exact per-pixel displacement field from the recorded pose deltas.

    Flow is reported on the before-frame footprint of each moved object
    (painter's order decides ownership of shared pixels); background is zero.
    """
    ids_before = {o.id for o in scene_before.objects}
    ids_after = {o.id for o in scene_after.objects}
    if ids_before != ids_after:
        raise ValueError("scenes do not share object ids")
    W, H = scene_before.image_dims
    u = np.zeros((H, W), dtype=np.float64)
    v = np.zeros((H, W), dtype=np.float64)
    for obj in sorted(scene_before.objects, key=lambda o: o.id):
        dx, dy, dtheta = motion.delta(obj.id)
        mask = object_mask(obj, scene_before.image_dims)
        if not mask.any():
            continue
        if dx == 0.0 and dy == 0.0 and dtheta == 0.0:
            u[mask] = 0.0
            v[mask] = 0.0
            continue
        ys, xs = np.nonzero(mask)
        px = xs - obj.x
        py = ys - obj.y
        c, s = np.cos(dtheta), np.sin(dtheta)
        nx = c * px - s * py + obj.x + dx
        ny = s * px + c * py + obj.y + dy
        u[ys, xs] = nx - xs
        v[ys, xs] = ny - ys
    return FlowField(u=u, v=v)
