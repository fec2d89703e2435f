"""Patch-scoring network: small conv trunk with a score head (is the patch
centered on an object?) and a mask head (m x m foreground logits).

Everything is float64 numpy with hand-written backprop through the kernel
layer ops, so gradients can be checked against central finite differences to
tight tolerances.
"""

import json
import struct
from dataclasses import dataclass, asdict

import numpy as np

from . import kernels


class NumericalError(RuntimeError):
    def __init__(self, layer):
        super().__init__(f"non-finite values in layer {layer!r}")
        self.layer = layer


@dataclass(frozen=True)
class Arch:
    patch: int = 64
    in_ch: int = 3
    conv_channels: tuple = (4, 8, 16)
    fc_dim: int = 48
    mask_dim: int = 16

    def __post_init__(self):
        if len(self.conv_channels) == 0:
            raise ValueError("architecture needs at least one conv block")
        # conv0 runs at stride 2 and each block ends in a 2x2 pool
        if self.patch % (2 ** (len(self.conv_channels) + 1)) != 0:
            raise ValueError("patch size incompatible with conv/pool pyramid")

    @property
    def feat_side(self):
        return self.patch // (2 ** (len(self.conv_channels) + 1))

    @property
    def flat_dim(self):
        return self.feat_side**2 * self.conv_channels[-1]

    @property
    def mask_grid_block(self):
        """Trunk block whose spatial grid matches the mask grid; its cells
        get a shared local readout (a 1x1 conv), so shape generalizes
        instead of being memorized."""
        for i in range(len(self.conv_channels)):
            if self.patch // (2 ** (i + 2)) == self.mask_dim:
                return i
        raise ValueError("mask_dim must equal the side of some trunk feature map")

    def block_flat_dim(self, i):
        side = self.patch // (2 ** (i + 2))
        return side**2 * self.conv_channels[i]

    @property
    def mask_ctx_block(self):
        """Context features for the mask head come from below the top trunk
        block, so fine-tuning the top block leaves masks untouched."""
        return max(0, len(self.conv_channels) - 2)

    @property
    def mask_ctx_dim(self):
        return self.block_flat_dim(self.mask_ctx_block)


@dataclass(eq=False)
class NetParams:
    arch: Arch
    tensors: dict

    def copy(self):
        return NetParams(self.arch, {k: v.copy() for k, v in self.tensors.items()})


# weight-decay applies to weight matrices only, never biases
def decayed(name):
    return name.endswith("_w")


def tensor_names(arch):
    names = []
    for i in range(len(arch.conv_channels)):
        names += [f"conv{i}_w", f"conv{i}_b"]
    names += ["fc_w", "fc_b", "score_w", "score_b", "mask_loc_w", "mask_ctx_w", "mask_ctx_b"]
    return names


def init_params(arch, rng_seed):
    """Fan-in scaled uniform weights, zero biases, reproducible per seed."""
    rng = np.random.default_rng(rng_seed)
    t = {}
    cin = arch.in_ch
    for i, cout in enumerate(arch.conv_channels):
        limit = np.sqrt(3.0 / (cin * 9))
        t[f"conv{i}_w"] = rng.uniform(-limit, limit, (cout, cin, 3, 3))
        t[f"conv{i}_b"] = np.zeros(cout)
        cin = cout
    flat = arch.flat_dim
    limit = np.sqrt(3.0 / flat)
    t["fc_w"] = rng.uniform(-limit, limit, (flat, arch.fc_dim))
    t["fc_b"] = np.zeros(arch.fc_dim)
    limit = np.sqrt(3.0 / arch.fc_dim)
    t["score_w"] = rng.uniform(-limit, limit, (arch.fc_dim, 1))
    t["score_b"] = np.zeros(1)
    c_loc = arch.conv_channels[arch.mask_grid_block]
    limit = np.sqrt(3.0 / c_loc)
    t["mask_loc_w"] = rng.uniform(-limit, limit, (c_loc,))
    limit = np.sqrt(3.0 / arch.mask_ctx_dim)
    t["mask_ctx_w"] = rng.uniform(-limit, limit, (arch.mask_ctx_dim, arch.mask_dim**2))
    t["mask_ctx_b"] = np.zeros(arch.mask_dim**2)
    return NetParams(arch=arch, tensors=t)


def _check_finite(name, arr):
    if not np.all(np.isfinite(arr)):
        raise NumericalError(name)


def forward_batch(params, x, need_mask=True, check=False):
    """Forward pass for a (B, C, patch, patch) batch.

    Returns (score_logits (B,), mask_logits (B, m, m) or None, cache).
    """
    arch = params.arch
    t = params.tensors
    if x.ndim != 4 or x.shape[2] != arch.patch or x.shape[3] != arch.patch:
        raise ValueError(f"expected (B,{arch.in_ch},{arch.patch},{arch.patch}) input")
    cache = {"x": x, "conv": [], "pool": [], "h": []}
    h = x
    for i in range(len(arch.conv_channels)):
        stride = 2 if i == 0 else 1
        z = kernels.conv2d_fwd(h, t[f"conv{i}_w"], t[f"conv{i}_b"], stride=stride, pad=1)
        if check:
            _check_finite(f"conv{i}", z)
        a = np.maximum(z, 0.0)
        p, argm = kernels.maxpool2_fwd(a)
        cache["conv"].append((h, z))
        cache["pool"].append(argm)
        cache["h"].append(p)
        h = p
    B = x.shape[0]
    flat = h.reshape(B, -1)
    cache["feat"] = h
    cache["flat"] = flat
    cache["mask_grid"] = cache["h"][arch.mask_grid_block]
    cache["mask_ctx"] = cache["h"][arch.mask_ctx_block].reshape(B, -1)
    fc_z = flat @ t["fc_w"] + t["fc_b"]
    if check:
        _check_finite("fc", fc_z)
    fc_a = np.maximum(fc_z, 0.0)
    cache["fc_z"] = fc_z
    cache["fc_a"] = fc_a
    score = (fc_a @ t["score_w"] + t["score_b"])[:, 0]
    if check:
        _check_finite("score", score)
    mask = None
    if need_mask:
        local = np.einsum("bchw,c->bhw", cache["mask_grid"], t["mask_loc_w"])
        ctx = (cache["mask_ctx"] @ t["mask_ctx_w"] + t["mask_ctx_b"]).reshape(
            B, arch.mask_dim, arch.mask_dim
        )
        mask = local + ctx
        if check:
            _check_finite("mask", mask)
    return score, mask, cache


def forward_score(params, patch):
    """Score logit for a single (C, patch, patch) or (patch, patch, C) patch."""
    x = _as_nchw(params.arch, patch)
    logits, _, cache = forward_batch(params, x, need_mask=False)
    return float(logits[0]), cache


def forward_mask(params, patch):
    """Mask logits (m, m) for a single patch."""
    x = _as_nchw(params.arch, patch)
    _, mask, cache = forward_batch(params, x, need_mask=True)
    return mask[0], cache


def _as_nchw(arch, patch):
    patch = np.asarray(patch, dtype=np.float64)
    if patch.ndim == 3 and patch.shape[2] == arch.in_ch:
        patch = patch.transpose(2, 0, 1)
    if patch.shape != (arch.in_ch, arch.patch, arch.patch):
        raise ValueError(f"bad patch dims {patch.shape}")
    return patch[None]


def bce_with_logits(z, t):
    """Numerically stable binary cross-entropy against (possibly soft) targets."""
    return np.maximum(z, 0.0) - z * t + np.log1p(np.exp(-np.abs(z)))


def _backward(params, cache, g_score, g_mask):
    """Backprop score-logit and mask-logit gradients to every tensor."""
    arch = params.arch
    t = params.tensors
    grads = {}
    fc_a = cache["fc_a"]
    flat = cache["flat"]
    B = flat.shape[0]

    grads["score_w"] = fc_a.T @ g_score[:, None]
    grads["score_b"] = np.array([g_score.sum()])
    g_fc_a = g_score[:, None] @ t["score_w"].T
    g_fc_z = g_fc_a * (cache["fc_z"] > 0.0)
    grads["fc_w"] = flat.T @ g_fc_z
    grads["fc_b"] = g_fc_z.sum(axis=0)
    g_flat = g_fc_z @ t["fc_w"].T

    g_mask_grid = None
    g_mask_ctx = None
    if g_mask is not None:
        gm = g_mask.reshape(B, -1)
        grads["mask_loc_w"] = np.einsum("bhw,bchw->c", g_mask, cache["mask_grid"])
        grads["mask_ctx_w"] = cache["mask_ctx"].T @ gm
        grads["mask_ctx_b"] = gm.sum(axis=0)
        g_mask_ctx = gm @ t["mask_ctx_w"].T
        g_mask_grid = g_mask[:, None, :, :] * t["mask_loc_w"][None, :, None, None]
    else:
        for name in ("mask_loc_w", "mask_ctx_w", "mask_ctx_b"):
            grads[name] = np.zeros_like(t[name])

    g_h = g_flat.reshape(cache["feat"].shape)
    for i in range(len(arch.conv_channels) - 1, -1, -1):
        if g_mask_ctx is not None and i == arch.mask_ctx_block:
            g_h = g_h + g_mask_ctx.reshape(cache["h"][i].shape)
        if g_mask_grid is not None and i == arch.mask_grid_block:
            g_h = g_h + g_mask_grid
        stride = 2 if i == 0 else 1
        h_in, z = cache["conv"][i]
        g_a = kernels.maxpool2_bwd(g_h, cache["pool"][i])
        g_z = g_a * (z > 0.0)
        g_h, gw, gb = kernels.conv2d_bwd(h_in, t[f"conv{i}_w"], g_z, stride=stride, pad=1)
        grads[f"conv{i}_w"] = gw
        grads[f"conv{i}_b"] = gb
    return grads


def loss_and_grad(
    params,
    x,
    labels,
    mask_targets=None,
    has_mask=None,
    hooks=None,
    train_mask_head=False,
    weight_decay=0.0,
    mask_loss_weight=1.0,
):
    """Loss and exact gradients for one batch.

    x: (B, C, p, p) float64; labels: (B,) in {0, 1}.
    mask_targets: (B, m, m) float64, rows valid where has_mask is True.
    hooks: optional noise-strategy hooks (see pushlab.noise.ScoreHooks);
        they may drop examples or soften targets for the *realized* loss.
    Returns (loss, grads, per_example_losses). The reported loss excludes the
    weight-decay term; gradients include it (on weight matrices only).
    """
    if x.shape[0] == 0:
        raise ValueError("empty batch")
    labels = np.asarray(labels, dtype=np.float64)
    score_logits, mask_logits, cache = forward_batch(
        params, x, need_mask=train_mask_head, check=True
    )
    per_example = bce_with_logits(score_logits, labels)

    targets = labels
    retain = np.ones(len(labels), dtype=bool)
    if hooks is not None:
        targets = hooks.effective_targets(score_logits, labels)
        retain = hooks.retain_mask(per_example, labels)
    n_kept = int(retain.sum())

    loss = 0.0
    g_score = np.zeros_like(score_logits)
    if n_kept > 0:
        realized = bce_with_logits(score_logits[retain], targets[retain])
        loss += float(realized.mean())
        probs = 1.0 / (1.0 + np.exp(-score_logits))
        g = (probs - targets) / n_kept
        g[~retain] = 0.0
        g_score = g

    g_mask = None
    if train_mask_head and mask_targets is not None:
        if has_mask is None:
            has_mask = np.ones(len(labels), dtype=bool)
        pos = np.asarray(has_mask, dtype=bool) & retain
        if pos.any():
            m = mask_targets
            ml = mask_logits
            pix_losses = bce_with_logits(ml[pos], m[pos])
            loss += mask_loss_weight * float(pix_losses.mean())
            probs_m = 1.0 / (1.0 + np.exp(-ml))
            g_mask = np.zeros_like(ml)
            g_mask[pos] = mask_loss_weight * (probs_m[pos] - m[pos]) / pix_losses.size

    grads = _backward(params, cache, g_score, g_mask)
    if weight_decay > 0.0:
        for name, w in params.tensors.items():
            if decayed(name):
                grads[name] = grads[name] + weight_decay * w
    return loss, grads, per_example


@dataclass
class TrainConfig:
    lr: float = 0.001
    momentum: float = 0.9
    weight_decay: float = 0.0005
    epochs: int = 10
    batch_size: int = 32
    seeds: int = 5
    train_mask_head: bool = False
    snapshot_policy: str = "last"  # last | best-val | max-of-both
    mask_loss_weight: float = 48.0  # rebalances the per-pixel mask BCE against the score loss

    def __post_init__(self):
        if self.lr <= 0:
            raise ValueError("lr must be positive")
        if self.epochs < 0:
            raise ValueError("epochs must be >= 0")


def sgd_step(params, grads, velocity, config, trainable=None):
    """Classical momentum: v' = mu v + g; w' = w - lr v'."""
    names = tensor_names(params.arch) if trainable is None else trainable
    new_t = dict(params.tensors)
    new_v = dict(velocity)
    for name in names:
        g = grads[name]
        v = velocity.get(name)
        v = g.copy() if v is None else config.momentum * v + g
        new_v[name] = v
        new_t[name] = params.tensors[name] - config.lr * v
    return NetParams(params.arch, new_t), new_v


MAGIC = b"PLNET\x00"
FORMAT_VERSION = 1


def save_params(params, path):
    """Binary layout: magic, version, arch JSON, then f64 LE tensors in
    declaration order with explicit shapes."""
    names = tensor_names(params.arch)
    with open(path, "wb") as f:
        f.write(MAGIC)
        f.write(struct.pack("<I", FORMAT_VERSION))
        arch_json = json.dumps(asdict(params.arch)).encode("utf-8")
        f.write(struct.pack("<I", len(arch_json)))
        f.write(arch_json)
        f.write(struct.pack("<I", len(names)))
        for name in names:
            arr = np.ascontiguousarray(params.tensors[name], dtype="<f8")
            nb = name.encode("utf-8")
            f.write(struct.pack("<H", len(nb)))
            f.write(nb)
            f.write(struct.pack("<B", arr.ndim))
            f.write(struct.pack(f"<{arr.ndim}I", *arr.shape))
            f.write(arr.tobytes())


def load_params(path):
    with open(path, "rb") as f:
        if f.read(len(MAGIC)) != MAGIC:
            raise ValueError("not a pushlab params file")
        (version,) = struct.unpack("<I", f.read(4))
        if version != FORMAT_VERSION:
            raise ValueError(f"unsupported format version {version}")
        (alen,) = struct.unpack("<I", f.read(4))
        arch_dict = json.loads(f.read(alen).decode("utf-8"))
        arch_dict["conv_channels"] = tuple(arch_dict["conv_channels"])
        arch = Arch(**arch_dict)
        (n,) = struct.unpack("<I", f.read(4))
        tensors = {}
        for _ in range(n):
            (nlen,) = struct.unpack("<H", f.read(2))
            name = f.read(nlen).decode("utf-8")
            (ndim,) = struct.unpack("<B", f.read(1))
            shape = struct.unpack(f"<{ndim}I", f.read(4 * ndim))
            count = int(np.prod(shape))
            tensors[name] = np.frombuffer(f.read(8 * count), dtype="<f8").reshape(shape).copy()
    return NetParams(arch=arch, tensors=tensors)
