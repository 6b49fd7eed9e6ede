"""Training objectives.

Every loss sums over spatial sites rather than averaging: the loss weights
are calibrated against summed reductions, so a silent mean would rescale
them. All losses are plain graph compositions of tensor primitives, which
keeps each one differentiable end to end and finite-difference checkable.
"""

from dataclasses import dataclass

import numpy as np

from .synthdata import IGNORE_LABEL
from .tensor import Tensor, gather_sites, quadrant_pool, softmax_channel


@dataclass
class LossWeights:
    lambda_d: float = 0.01
    lambda_adv: float = 0.0005

    def validate(self):
        if self.lambda_d < 0:
            raise ValueError(f"lambda_d must be non-negative, got {self.lambda_d}")
        if self.lambda_adv < 0:
            raise ValueError(f"lambda_adv must be non-negative, got {self.lambda_adv}")
        return self


@dataclass
class EntropyConfig:
    tau: float = 1.0

    def validate(self):
        if self.tau <= 0:
            raise ValueError(f"entropy temperature must be positive, got {self.tau}")
        return self


def seg_loss(out_probs, labels):
    """Summed pixelwise cross-entropy -sum log O[y,h,w] over non-ignore pixels."""
    labels = np.asarray(labels)
    if out_probs.ndim != 3 or labels.shape != out_probs.shape[1:]:
        raise ValueError(
            f"seg_loss: probs {out_probs.shape} incompatible with labels {labels.shape}")
    valid = labels != IGNORE_LABEL
    if not valid.any():
        raise ValueError("seg_loss: label map is entirely ignore-labeled")
    index = np.where(valid, labels, 0).astype(np.int64)
    picked = gather_sites(out_probs, index, valid)
    return -(picked.log().sum())


def disc_cluster_loss(feats, gamma, valid=None):
    """-sum over valid sites of log F[gamma(u,v), u, v]."""
    picked = gather_sites(feats, np.asarray(gamma, dtype=np.int64), valid)
    return -(picked.log().sum())


def _check_probs(x, name):
    if not isinstance(x, Tensor):
        raise TypeError(f"{name} must be a Tensor")
    if x.ndim != 3 or x.shape[0] != 1:
        raise ValueError(f"{name} must be (1,U,V), got {x.shape}")
    lo, hi = float(x.data.min()), float(x.data.max())
    if lo < 0.0 or hi > 1.0:
        raise ValueError(f"{name} values must lie in [0,1], got range [{lo},{hi}]")


def discriminator_loss(d_source, d_target):
    """-sum [log D(F_s) + log(1 - D(F_t))]; source labeled 1, target 0.

    The caller is responsible for detaching F_s / F_t so this objective
    reaches only discriminator parameters.
    """
    _check_probs(d_source, "d_source")
    _check_probs(d_target, "d_target")
    if d_source.shape != d_target.shape:
        raise ValueError(
            f"discriminator_loss: grids differ, {d_source.shape} vs {d_target.shape}")
    return -(d_source.log().sum() + (1.0 - d_target).log().sum())


def generator_adv_loss(d_target):
    """-sum log D(F_t): pushes target features toward the source label."""
    _check_probs(d_target, "d_target")
    return -(d_target.log().sum())


def total_generator_loss(l_s, l_d, gen_adv, weights):
    """L_s + lambda_d * L_d + lambda_adv * adv, the generator-side objective."""
    weights.validate()
    return l_s + weights.lambda_d * l_d + weights.lambda_adv * gen_adv


def entropy_loss(logits, cfg):
    """Summed per-site Shannon entropy of softmax(logits / tau)."""
    cfg.validate()
    if logits.ndim != 3:
        raise ValueError(f"entropy_loss expects (K,U,V) logits, got {logits.shape}")
    p = softmax_channel(logits * (1.0 / cfg.tau))
    return -((p * p.log()).sum())


def soft_histogram(out_probs, grid):
    """Differentiable per-cell quadrant means of O, (4C,U,V).

    On a one-hot O this equals the hard 2x2 label histogram of the argmax
    map, which is what lets it stand in for H in the direct-alignment
    ablation.
    """
    out = quadrant_pool(out_probs, grid.patch_h, grid.patch_w)
    if out.shape[1:] != (grid.U, grid.V):
        raise ValueError(
            f"soft_histogram: grid {grid.U}x{grid.V} does not match pooled {out.shape[1:]}")
    return out
