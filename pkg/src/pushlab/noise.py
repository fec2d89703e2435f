"""Label-noise handling strategies, expressed as hooks over per-example
score losses.

Five strategies plus a passthrough:
  none                 plain training
  bootstrap_heuristic  drop background-labeled patches the frozen pretrained
                       model confidently calls object
  reed_hard            convex blend of the given label and the model's own
                       hard prediction as the training target
  self_paced           keep only examples whose loss is under an
                       epoch-growing threshold
  small_loss           drop the highest-loss fraction of each batch
  co_teaching          two networks, each trained on its peer's small-loss
                       selection (loop lives in pushlab.train)

Every strategy reduces bit-exactly to plain training at its neutral
parameter (beta=1, drop_frac=0, lambda0=inf).
"""

import math
from dataclasses import dataclass

import numpy as np


@dataclass
class NoiseStrategy:
    kind: str = "none"
    beta: float = 0.7            # reed_hard
    lambda0: float = 0.002       # self_paced
    growth: float = 1.2          # self_paced
    drop_frac: float = 0.10      # small_loss, co_teaching

    def __post_init__(self):
        kinds = {"none", "bootstrap_heuristic", "reed_hard", "self_paced", "small_loss", "co_teaching"}
        if self.kind not in kinds:
            raise ValueError(f"unknown noise strategy {self.kind!r}")
        if not (0.0 <= self.beta <= 1.0):
            raise ValueError("beta must lie in [0, 1]")
        if not (0.0 <= self.drop_frac < 1.0):
            raise ValueError("drop_frac must lie in [0, 1)")
        if self.lambda0 <= 0:
            raise ValueError("lambda0 must be positive")
        if self.growth < 1.0:
            raise ValueError("growth must be >= 1")


def bootstrap_heuristic_mask(labels, pretrained_probs):
    """Retain everything except background-labeled examples the pretrained
    model scores above 0.5 for 'object'."""
    labels = np.asarray(labels)
    probs = np.asarray(pretrained_probs, dtype=np.float64)
    return ~((labels == 0) & (probs > 0.5))


def reed_hard_target(logits, labels, beta=0.7):
    """Effective target beta*label + (1-beta)*hard_prediction."""
    z = (1.0 / (1.0 + np.exp(-np.asarray(logits, dtype=np.float64))) > 0.5).astype(np.float64)
    return beta * np.asarray(labels, dtype=np.float64) + (1.0 - beta) * z


def reed_hard_loss(logit, label, beta=0.7):
    """Per-example BCE against the reed-hard effective target."""
    from .net import bce_with_logits

    target = reed_hard_target(np.atleast_1d(logit), np.atleast_1d(label), beta)
    out = bce_with_logits(np.atleast_1d(np.asarray(logit, dtype=np.float64)), target)
    return out if np.ndim(logit) else float(out[0])


def self_paced_threshold(epoch, lambda0=0.002, growth=1.2):
    if epoch < 1:
        raise ValueError("epochs are 1-based")
    return lambda0 * growth ** (epoch - 1)


def self_paced_filter(per_example_losses, epoch, lambda0=0.002, growth=1.2):
    """Keep currently-easy examples: loss <= lambda0 * growth**(epoch-1)."""
    lam = self_paced_threshold(epoch, lambda0, growth)
    return np.asarray(per_example_losses) <= lam


def small_loss_select(per_example_losses, drop_frac=0.10):
    """Drop the ceil(drop_frac * n) largest losses; ties keep lower indices."""
    losses = np.asarray(per_example_losses, dtype=np.float64)
    n = len(losses)
    if n == 0:
        raise ValueError("empty batch")
    k = int(math.ceil(drop_frac * n))
    retain = np.ones(n, dtype=bool)
    if k <= 0:
        return retain
    # order by loss desc, then index desc, so equal losses at the boundary
    # drop the higher index first
    order = np.lexsort((-np.arange(n), -losses))
    retain[order[:k]] = False
    return retain


def snapshot_select(val_log, policy="max-of-both"):
    """Pick the snapshot epoch from a per-epoch validation log (1-based).

    last: final epoch. best-val: argmax (earliest wins ties). max-of-both:
    the better of those two, ties going to the last epoch.
    """
    if len(val_log) == 0:
        raise ValueError("empty validation log")
    vals = np.asarray(val_log, dtype=np.float64)
    last = len(vals)
    best = int(np.argmax(vals)) + 1
    if policy == "last":
        return last
    if policy == "best-val":
        return best
    if policy == "max-of-both":
        return last if vals[last - 1] >= vals[best - 1] else best
    raise ValueError(f"unknown snapshot policy {policy!r}")


@dataclass
class ScoreHooks:
    """Per-batch hooks consumed by loss_and_grad.

    retain_fn(plain_losses, labels) -> bool mask
    target_fn(logits, labels) -> float targets
    """

    retain_fn: object = None
    target_fn: object = None

    def retain_mask(self, per_losses, labels):
        if self.retain_fn is None:
            return np.ones(len(labels), dtype=bool)
        return np.asarray(self.retain_fn(per_losses, labels), dtype=bool)

    def effective_targets(self, logits, labels):
        if self.target_fn is None:
            return np.asarray(labels, dtype=np.float64)
        return np.asarray(self.target_fn(logits, labels), dtype=np.float64)


def hooks_for(strategy, epoch=1, pretrained_probs=None):
    """Build the ScoreHooks realizing a strategy for one batch.

    `pretrained_probs` aligns with the batch and is required for the
    bootstrap heuristic; co_teaching selection happens in the training loop
    (each net trains on its peer's small-loss mask), so its per-net hooks
    are plain.
    """
    if strategy is None or strategy.kind in ("none", "co_teaching"):
        return ScoreHooks()
    if strategy.kind == "bootstrap_heuristic":
        if pretrained_probs is None:
            raise ValueError("bootstrap heuristic requires pretrained probabilities")
        probs = np.asarray(pretrained_probs, dtype=np.float64)
        return ScoreHooks(retain_fn=lambda losses, labels: bootstrap_heuristic_mask(labels, probs))
    if strategy.kind == "reed_hard":
        beta = strategy.beta
        return ScoreHooks(target_fn=lambda logits, labels: reed_hard_target(logits, labels, beta))
    if strategy.kind == "self_paced":
        lam0, growth = strategy.lambda0, strategy.growth
        return ScoreHooks(
            retain_fn=lambda losses, labels: self_paced_filter(losses, epoch, lam0, growth)
        )
    if strategy.kind == "small_loss":
        frac = strategy.drop_frac
        return ScoreHooks(retain_fn=lambda losses, labels: small_loss_select(losses, frac))
    raise AssertionError(strategy.kind)
