"""Training loops over patch datasets: source-domain pretraining, fine-tuning
on self-labeled data with a noise strategy, and the two-network co-teaching
variant."""

from dataclasses import dataclass

import numpy as np

from . import dataset as ds
from . import net
from .kernels import resize_bilinear
from .noise import NoiseStrategy, ScoreHooks, hooks_for, small_loss_select, snapshot_select
from .seeds import rng_for


class PretrainQualityError(RuntimeError):
    pass


def _mask_target(mask_patch, m):
    return (resize_bilinear(mask_patch, m, m) >= 0.5).astype(np.float64)


def build_patchset(manifest, rng, n_pos=4, n_neg=4, patch_size=64, grouped=False):
    """Sample the patch training set for a dataset manifest.

    grouped=True treats records sharing provenance['scene'] as one fully
    labeled scene: negatives then keep their distance from every object in
    it (the pretraining corpus); otherwise each record stands alone.
    """
    patches = []
    canon_by_scene = {}
    loaded = []
    for rec in manifest.records:
        image, mask = ds.load_record(manifest, rec)
        loaded.append((rec, image, mask))
        if grouped:
            scene = rec["provenance"].get("scene")
            pose = ds.canonical_pose(mask, patch_size)
            if pose is not None:
                canon_by_scene.setdefault(scene, []).append((rec["id"], pose))
    for rec, image, mask in loaded:
        extras = ()
        if grouped:
            scene = rec["provenance"].get("scene")
            extras = tuple(
                pose for rid, pose in canon_by_scene.get(scene, []) if rid != rec["id"]
            )
        patches.extend(
            ds.sample_patches(
                image,
                mask,
                rec["id"],
                n_pos,
                n_neg,
                rng,
                patch_size=patch_size,
                extra_canonicals=extras,
            )
        )
    return patches


def _batch_arrays(patches, arch, aug_rng=None, aug_cfg=None):
    """Assemble NCHW inputs, labels and mask targets for a list of patches."""
    xs, labels, targets, valid = [], [], [], []
    m = arch.mask_dim
    for p in patches:
        img, msk = p.patch, p.mask_patch
        if aug_rng is not None:
            img, msk = ds.augment(img, msk, aug_rng, aug_cfg)
        xs.append(img.transpose(2, 0, 1))
        labels.append(p.label)
        if msk is not None:
            targets.append(_mask_target(msk, m))
            valid.append(True)
        else:
            targets.append(np.zeros((m, m)))
            valid.append(False)
    return (
        np.ascontiguousarray(np.stack(xs)),
        np.asarray(labels, dtype=np.float64),
        np.stack(targets),
        np.asarray(valid, dtype=bool),
    )


def score_probs(params, patches, batch_size=64):
    """Sigmoid score of every patch under frozen params."""
    out = np.empty(len(patches))
    for start in range(0, len(patches), batch_size):
        chunk = patches[start : start + batch_size]
        x, _, _, _ = _batch_arrays(chunk, params.arch)
        logits, _, _ = net.forward_batch(params, x, need_mask=False)
        out[start : start + len(chunk)] = 1.0 / (1.0 + np.exp(-logits))
    return out


def score_accuracy(params, patches):
    probs = score_probs(params, patches)
    labels = np.array([p.label for p in patches])
    return float(((probs > 0.5).astype(int) == labels).mean())


def pretrain(
    corpus_manifest,
    config,
    seed=0,
    arch=None,
    n_pos=4,
    n_neg=4,
    val_frac=0.15,
    target_acc=0.9,
    max_epochs=30,
    min_epochs=18,
    min_acc=0.7,
):
    """Train trunk and both heads on a fully labeled synthetic corpus.

    Stops once held-out score accuracy reaches target_acc (the mask head
    needs min_epochs regardless; it converges slower than the score head),
    capped at max_epochs; raises PretrainQualityError below min_acc.
    """
    for rec in corpus_manifest.records:
        if not rec.get("mask"):
            raise ValueError("pretraining corpus record lacks a mask")
    arch = arch or net.Arch()
    patches = build_patchset(
        corpus_manifest, rng_for(seed, "pretrain-patches"), n_pos, n_neg, arch.patch, grouped=True
    )
    if not patches:
        raise ValueError("empty pretraining corpus")
    order = rng_for(seed, "pretrain-split").permutation(len(patches))
    n_val = max(1, int(val_frac * len(patches)))
    val_patches = [patches[i] for i in order[:n_val]]
    train_patches = [patches[i] for i in order[n_val:]]

    params = net.init_params(arch, seed)
    velocity = {}
    cfg = dataclass_replace(config, train_mask_head=True)
    acc = 0.0
    for epoch in range(1, max_epochs + 1):
        params, velocity, _, _ = _run_epoch(
            params, velocity, train_patches, cfg, None, epoch,
            rng_for(seed, "pretrain-epoch", epoch), trainable=None,
        )
        acc = score_accuracy(params, val_patches)
        if epoch >= min_epochs and acc >= target_acc:
            break
    if acc < min_acc:
        raise PretrainQualityError(f"pretraining stalled at accuracy {acc:.3f}")
    return params


def dataclass_replace(cfg, **kw):
    from dataclasses import replace

    return replace(cfg, **kw)


def trainable_names(arch, train_mask_head=False):
    """Fine-tuning unfreezes the score branch plus the top trunk block."""
    last = len(arch.conv_channels) - 1
    names = [f"conv{last}_w", f"conv{last}_b", "fc_w", "fc_b", "score_w", "score_b"]
    if train_mask_head:
        names += ["mask_loc_w", "mask_ctx_w", "mask_ctx_b"]
    return names


def _run_epoch(params, velocity, patches, config, strategy, epoch, rng, trainable,
               pretrained_probs=None):
    """One pass over the patch set; returns updated state plus epoch stats."""
    order = rng.permutation(len(patches))
    aug_cfg = ds.AugmentConfig()
    losses = []
    kept = 0
    total = 0
    for start in range(0, len(order), config.batch_size):
        idx = order[start : start + config.batch_size]
        chunk = [patches[i] for i in idx]
        x, labels, targets, valid = _batch_arrays(chunk, params.arch, rng, aug_cfg)
        probs = None
        if pretrained_probs is not None:
            probs = pretrained_probs[idx]
        hooks = hooks_for(strategy, epoch=epoch, pretrained_probs=probs)
        loss, grads, per_example = net.loss_and_grad(
            params,
            x,
            labels,
            mask_targets=targets,
            has_mask=valid,
            hooks=hooks,
            train_mask_head=config.train_mask_head,
            weight_decay=config.weight_decay,
            mask_loss_weight=getattr(config, "mask_loss_weight", 1.0),
        )
        total += len(chunk)
        retained = hooks.retain_mask(per_example, labels)
        if not retained.any():
            continue  # batch skipped entirely (visible in retained fraction)
        kept += int(retained.sum())
        params, velocity = net.sgd_step(params, grads, velocity, config, trainable)
        losses.append(loss)
    mean_loss = float(np.mean(losses)) if losses else float("nan")
    retained_frac = kept / total if total else 0.0
    return params, velocity, mean_loss, retained_frac


def _perturb(params, trainable, rng, sigma=0.01):
    out = params.copy()
    for name in trainable:
        w = out.tensors[name]
        scale = np.std(w)
        if scale > 0:
            out.tensors[name] = w + rng.normal(0.0, sigma * scale, w.shape)
    return out


def co_teaching_step(state_a, state_b, x, labels, drop_frac, config, trainable):
    """One synchronized co-teaching step.

    Each net ranks the batch by its own per-example loss; the peer trains on
    that retained subset. Both updates use pre-step parameters.
    """
    (params_a, vel_a), (params_b, vel_b) = state_a, state_b
    logits_a, _, _ = net.forward_batch(params_a, x, need_mask=False)
    logits_b, _, _ = net.forward_batch(params_b, x, need_mask=False)
    losses_a = net.bce_with_logits(logits_a, labels)
    losses_b = net.bce_with_logits(logits_b, labels)
    keep_a = small_loss_select(losses_a, drop_frac)
    keep_b = small_loss_select(losses_b, drop_frac)
    new_a = new_b = None
    if keep_b.any():
        _, grads_a, _ = net.loss_and_grad(
            params_a, x, labels,
            hooks=ScoreHooks(retain_fn=lambda l, y: keep_b),
            weight_decay=config.weight_decay,
        )
        new_a = net.sgd_step(params_a, grads_a, vel_a, config, trainable)
    if keep_a.any():
        _, grads_b, _ = net.loss_and_grad(
            params_b, x, labels,
            hooks=ScoreHooks(retain_fn=lambda l, y: keep_a),
            weight_decay=config.weight_decay,
        )
        new_b = net.sgd_step(params_b, grads_b, vel_b, config, trainable)
    return (new_a or (params_a, vel_a)), (new_b or (params_b, vel_b)), (keep_a, keep_b)


@dataclass
class TrainLogEntry:
    epoch: int
    train_loss: float
    val_ap50: float
    retained_fraction: float


def finetune(
    params,
    manifest,
    config,
    strategy=None,
    seed=0,
    n_pos=4,
    n_neg=4,
    val_fn=None,
    report_net="A",
    grouped=False,
):
    """Fine-tune pretrained params on a labeled dataset.

    Only the score branch and top trunk block update (plus the mask head if
    configured). Returns (params per snapshot policy, training log). val_fn,
    when given, maps params -> validation AP50 once per epoch. grouped=True
    treats records sharing a scene as jointly labeled (negatives avoid all
    of them), the right semantics for fully annotated data.
    """
    if len(manifest.records) == 0:
        raise ValueError("empty dataset")
    strategy = strategy or NoiseStrategy()
    arch = params.arch
    patches = build_patchset(
        manifest, rng_for(seed, "ft-patches"), n_pos, n_neg, arch.patch, grouped=grouped
    )
    if not patches:
        raise ValueError("no usable patches in dataset")
    trainable = trainable_names(arch, config.train_mask_head)

    pretrained_probs = None
    if strategy.kind == "bootstrap_heuristic":
        pretrained_probs = score_probs(params, patches)

    log = []
    if config.epochs == 0:
        return params.copy(), log

    if strategy.kind == "co_teaching":
        return _finetune_co_teaching(
            params, patches, config, strategy, seed, val_fn, trainable, report_net
        )

    cur = params.copy()
    velocity = {}
    best_val = -np.inf
    best_params = cur
    for epoch in range(1, config.epochs + 1):
        cur, velocity, mean_loss, retained = _run_epoch(
            cur, velocity, patches, config, strategy, epoch,
            rng_for(seed, "ft-epoch", epoch), trainable, pretrained_probs,
        )
        val_ap = float(val_fn(cur)) if val_fn is not None else float("nan")
        log.append(TrainLogEntry(epoch, mean_loss, val_ap, retained))
        if val_fn is not None and val_ap > best_val:
            best_val = val_ap
            best_params = cur
    chosen = _pick_snapshot(cur, best_params, log, config.snapshot_policy, val_fn)
    return chosen, log


def _finetune_co_teaching(params, patches, config, strategy, seed, val_fn, trainable, report_net):
    state_a = (params.copy(), {})
    state_b = (
        _perturb(params, trainable, rng_for(seed, "ct-perturb")),
        {},
    )
    log = []
    best_val = -np.inf
    best_params = state_a[0]
    for epoch in range(1, config.epochs + 1):
        rng = rng_for(seed, "ft-epoch", epoch)
        order = rng.permutation(len(patches))
        aug_cfg = ds.AugmentConfig()
        losses = []
        kept = 0
        total = 0
        for start in range(0, len(order), config.batch_size):
            idx = order[start : start + config.batch_size]
            chunk = [patches[i] for i in idx]
            x, labels, _, _ = _batch_arrays(chunk, params.arch, rng, aug_cfg)
            state_a, state_b, (keep_a, keep_b) = co_teaching_step(
                state_a, state_b, x, labels, strategy.drop_frac, config, trainable
            )
            kept += int(keep_b.sum())
            total += len(chunk)
            logits, _, _ = net.forward_batch(state_a[0], x, need_mask=False)
            losses.append(float(net.bce_with_logits(logits, labels).mean()))
        report = state_a[0] if report_net == "A" else state_b[0]
        val_ap = float(val_fn(report)) if val_fn is not None else float("nan")
        log.append(TrainLogEntry(epoch, float(np.mean(losses)), val_ap, kept / max(total, 1)))
        if val_fn is not None and val_ap > best_val:
            best_val = val_ap
            best_params = report
    final = state_a[0] if report_net == "A" else state_b[0]
    chosen = _pick_snapshot(final, best_params, log, config.snapshot_policy, val_fn)
    return chosen, log


def _pick_snapshot(last_params, best_params, log, policy, val_fn):
    if policy == "last" or val_fn is None or not log:
        return last_params
    epoch = snapshot_select([e.val_ap50 for e in log], policy)
    return last_params if epoch == len(log) else best_params
