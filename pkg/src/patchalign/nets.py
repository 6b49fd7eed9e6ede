"""The three networks: segmenter G, patch categorizer H, discriminator D.

All parameters are named float32 tensors in flat dicts ("g.conv0.w", ...)
so optimizers and checkpoints can address them uniformly. G is a small
stride-1 conv stack ending in a per-pixel class softmax. H pools G's output
to the patch grid and projects each site to K mode logits. D is a
per-location MLP scoring each site as source (1) or target (0).
"""

import os
from dataclasses import dataclass

import numpy as np

from .pten import read_pten, write_pten
from .rng import CounterRng
from . import tensor as T


@dataclass
class GConfig:
    in_channels: int = 1
    num_classes: int = 4
    hidden_stack: tuple = ((16, 3, 1), (32, 3, 1))  # (out_channels, kernel, padding)

    def layers(self):
        """Hidden convs plus the final 1x1 class projection."""
        self.validate()
        return tuple(self.hidden_stack) + ((self.num_classes, 1, 0),)

    def validate(self):
        if self.in_channels < 1 or self.num_classes < 2:
            raise ValueError(
                f"need in_channels >= 1 and num_classes >= 2, got {self.in_channels}, {self.num_classes}")
        for out_c, k, pad in self.hidden_stack:
            if out_c < 1:
                raise ValueError(f"conv width must be >= 1, got {out_c}")
            if k % 2 == 0 or pad != k // 2:
                raise ValueError(
                    f"conv ({out_c},{k},{pad}) is not shape-preserving; need odd kernel with padding k//2")
        return self


@dataclass
class HConfig:
    in_channels: int = 4    # C, the class count of G's output
    hidden: int = 64
    num_modes: int = 50     # K

    def validate(self):
        if min(self.in_channels, self.hidden, self.num_modes) < 1:
            raise ValueError(f"H dims must be positive, got {self}")
        return self


@dataclass
class DConfig:
    in_dim: int = 50           # K, or 4C in the direct-histogram ablation
    widths: tuple = (64, 128, 1)
    leaky_slope: float = 0.2

    def validate(self):
        if self.in_dim < 1:
            raise ValueError(f"D input width must be positive, got {self.in_dim}")
        if len(self.widths) < 1 or self.widths[-1] != 1:
            raise ValueError(f"D widths must end in 1, got {self.widths}")
        if any(w < 1 for w in self.widths):
            raise ValueError(f"D widths must be positive, got {self.widths}")
        return self


def g_param_shapes(cfg):
    shapes = {}
    c_in = cfg.in_channels
    for i, (out_c, k, _) in enumerate(cfg.layers()):
        shapes[f"g.conv{i}.w"] = (out_c, c_in, k, k)
        shapes[f"g.conv{i}.b"] = (out_c,)
        c_in = out_c
    return shapes


def h_param_shapes(cfg):
    cfg.validate()
    return {
        "h.fc0.w": (cfg.hidden, cfg.in_channels),
        "h.fc0.b": (cfg.hidden,),
        "h.fc1.w": (cfg.num_modes, cfg.hidden),
        "h.fc1.b": (cfg.num_modes,),
    }


def d_param_shapes(cfg):
    cfg.validate()
    shapes = {}
    c_in = cfg.in_dim
    for i, w in enumerate(cfg.widths):
        shapes[f"d.fc{i}.w"] = (w, c_in)
        shapes[f"d.fc{i}.b"] = (w,)
        c_in = w
    return shapes


def _fan_in(shape):
    return int(np.prod(shape[1:]))


def init_params(cfg, seed):
    """Fan-in scaled uniform weights, zero biases, deterministic per seed."""
    if isinstance(cfg, GConfig):
        shapes = g_param_shapes(cfg)
    elif isinstance(cfg, HConfig):
        shapes = h_param_shapes(cfg)
    elif isinstance(cfg, DConfig):
        shapes = d_param_shapes(cfg)
    else:
        raise TypeError(f"unknown config type {type(cfg).__name__}")
    params = {}
    for name, shape in shapes.items():
        if name.endswith(".b"):
            data = np.zeros(shape, dtype=np.float32)
        else:
            bound = np.sqrt(6.0 / _fan_in(shape))
            u = CounterRng(seed, "init", name).uniform(int(np.prod(shape)))
            data = ((2.0 * u - 1.0) * bound).reshape(shape).astype(np.float32)
        params[name] = T.Tensor(data, requires_grad=True)
    return params


def g_forward(image, params, cfg):
    """Per-pixel class distribution O = softmax(convs(image)), (C,H,W)."""
    if image.ndim != 3 or image.shape[0] != cfg.in_channels:
        raise ValueError(
            f"g_forward expects ({cfg.in_channels},H,W) input, got {image.shape}")
    x = image
    layers = cfg.layers()
    for i, (_, _, pad) in enumerate(layers):
        x = T.conv2d(x, params[f"g.conv{i}.w"], params[f"g.conv{i}.b"], padding=pad)
        if i < len(layers) - 1:
            x = T.relu(x)
    return T.softmax_channel(x)


def h_logits(out_probs, params, cfg, grid):
    """Pre-softmax K-channel map over the patch grid, (K,U,V)."""
    if out_probs.shape[0] != cfg.in_channels:
        raise ValueError(
            f"h expects {cfg.in_channels} input channels, got {out_probs.shape[0]}")
    pooled = T.adaptive_avg_pool2d(out_probs, grid.U, grid.V)
    hid = T.leaky_relu(
        T.linear_per_location(pooled, params["h.fc0.w"], params["h.fc0.b"]), 0.2)
    return T.linear_per_location(hid, params["h.fc1.w"], params["h.fc1.b"])


def h_forward(out_probs, params, cfg, grid):
    """Patch-mode distribution F = softmax(H(O)), (K,U,V), sites sum to 1."""
    return T.softmax_channel(h_logits(out_probs, params, cfg, grid))


def d_forward(feats, params, cfg):
    """Per-site source probability, (1,U,V), values in (0,1)."""
    if feats.ndim != 3 or feats.shape[0] != cfg.in_dim:
        raise ValueError(
            f"d_forward expects ({cfg.in_dim},U,V) input, got {feats.shape}")
    x = feats
    n = len(cfg.widths)
    for i in range(n):
        x = T.linear_per_location(x, params[f"d.fc{i}.w"], params[f"d.fc{i}.b"])
        if i < n - 1:
            x = T.leaky_relu(x, cfg.leaky_slope)
    return T.sigmoid(x)


# -- checkpoint I/O -----------------------------------------------------------

def save_array_dict(out_dir, arrays):
    """Write each named array as <name>.pten; returns name -> filename."""
    os.makedirs(out_dir, exist_ok=True)
    files = {}
    for name, arr in arrays.items():
        fname = f"{name}.pten"
        write_pten(os.path.join(out_dir, fname), np.asarray(arr, dtype=np.float32))
        files[name] = fname
    return files


def load_array_dict(in_dir, files):
    return {name: read_pten(os.path.join(in_dir, fname))
            for name, fname in files.items()}
