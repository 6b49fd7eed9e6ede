"""Procedural two-domain segmentation benchmark.

Scenes are horizontal class bands with rectangles of a designated object
class stamped on top. Class k renders at intensity (k + 0.5) / C in a
single grayscale channel, plus seeded Gaussian noise. The target domain
re-renders the same procedure under its own seed and then applies a
controllable shift: a vertical layout offset (labels and image translated
identically) and an appearance transform (gain / bias / extra noise on the
image only).

All randomness comes from counter streams keyed by (domain seed, scene
index), so scene i is bit-identical no matter how many scenes are generated
or in which order.
"""

import json
import os
from dataclasses import dataclass, field, asdict

import numpy as np

from .pten import PtenError, read_pten, write_pten
from .rng import CounterRng

IGNORE_LABEL = 255
MAX_SCENES = 100_000


@dataclass
class Shift:
    """Target-domain perturbation; identity by default."""
    vertical_offset_px: int = 0
    intensity_gain: float = 1.0
    intensity_bias: float = 0.0
    noise_sigma: float = 0.0


@dataclass
class SceneConfig:
    height: int = 64
    width: int = 64
    num_classes: int = 4
    band_fractions: tuple = (0.25, 0.25, 0.25, 0.25)
    object_count_range: tuple = (1, 4)
    object_size_range: tuple = (4, 12)
    object_class: int = 3
    base_noise_sigma: float = 0.02
    source_seed: int = 1
    target_seed: int = 2
    shift: Shift = field(default_factory=Shift)

    def validate(self):
        if self.height < 2 or self.width < 2:
            raise ValueError(f"scene dims must be >= 2, got {self.height}x{self.width}")
        if not 2 <= self.num_classes <= 255:
            raise ValueError(f"num_classes must lie in [2, 255], got {self.num_classes}")
        if len(self.band_fractions) != self.num_classes:
            raise ValueError(
                f"band_fractions needs {self.num_classes} entries, got {len(self.band_fractions)}")
        if any(f < 0 for f in self.band_fractions):
            raise ValueError("band_fractions must be non-negative")
        if abs(sum(self.band_fractions) - 1.0) > 1e-9:
            raise ValueError(f"band_fractions must sum to 1, got {sum(self.band_fractions)}")
        if not 0 <= self.object_class < self.num_classes:
            raise ValueError(f"object_class {self.object_class} outside [0, {self.num_classes})")
        lo, hi = self.object_count_range
        if lo < 0 or hi < lo:
            raise ValueError(f"object_count_range must satisfy 0 <= min <= max, got {self.object_count_range}")
        slo, shi = self.object_size_range
        if slo < 1 or shi < slo:
            raise ValueError(f"object_size_range must satisfy 1 <= min <= max, got {self.object_size_range}")
        if self.base_noise_sigma < 0 or self.shift.noise_sigma < 0:
            raise ValueError("noise sigmas must be non-negative")
        return self


@dataclass
class DomainDataset:
    """Images (1xHxW float32) with optional per-pixel labels (HxW uint8)."""
    images: list
    labels: list | None
    split: str
    num_classes: int
    meta: dict = field(default_factory=dict)

    def __len__(self):
        return len(self.images)


def band_label_map(cfg):
    """Horizontal band layout: row r gets class k of its cumulative band."""
    bounds = np.floor(np.cumsum(cfg.band_fractions) * cfg.height).astype(np.int64)
    bounds[-1] = cfg.height
    labels = np.empty((cfg.height, cfg.width), dtype=np.uint8)
    start = 0
    for k, end in enumerate(bounds):
        labels[start:end, :] = k
        start = max(start, end)
    return labels


def _render_scene(cfg, seed, index):
    """Labels plus the noisy grayscale render of scene `index`."""
    labels = band_label_map(cfg)
    rng_obj = CounterRng(seed, "scene", index, "objects")
    lo, hi = cfg.object_count_range
    count = lo if lo == hi else rng_obj.randint(lo, hi + 1)
    slo, shi = cfg.object_size_range
    for _ in range(count):
        oh = rng_obj.randint(slo, shi + 1)
        ow = rng_obj.randint(slo, shi + 1)
        oh, ow = min(oh, cfg.height), min(ow, cfg.width)
        top = rng_obj.randint(0, cfg.height - oh + 1)
        left = rng_obj.randint(0, cfg.width - ow + 1)
        labels[top:top + oh, left:left + ow] = cfg.object_class
    image = (labels.astype(np.float64) + 0.5) / cfg.num_classes
    if cfg.base_noise_sigma > 0:
        noise = CounterRng(seed, "scene", index, "basenoise").normal(labels.size)
        image = image + cfg.base_noise_sigma * noise.reshape(labels.shape)
    return image, labels


def _top_band_class(cfg):
    for k, f in enumerate(cfg.band_fractions):
        if f > 0:
            return k
    return 0


def _bottom_band_class(cfg):
    for k in range(cfg.num_classes - 1, -1, -1):
        if cfg.band_fractions[k] > 0:
            return k
    return cfg.num_classes - 1


def _translate(arr, offset, fill):
    """Shift rows down by `offset` (up when negative), filling entered rows."""
    if offset == 0:
        return arr.copy()
    out = np.full_like(arr, fill)
    if abs(offset) >= arr.shape[0]:
        return out
    if offset > 0:
        out[offset:] = arr[:-offset]
    else:
        out[:offset] = arr[-offset:]
    return out


def _render_target_scene(cfg, index):
    """Render under the target seed, then apply layout + appearance shift."""
    image, labels = _render_scene(cfg, cfg.target_seed, index)
    s = cfg.shift
    o = s.vertical_offset_px
    if o:
        fill_class = _top_band_class(cfg) if o > 0 else _bottom_band_class(cfg)
        labels = _translate(labels, o, fill_class)
        image = _translate(image, o, (fill_class + 0.5) / cfg.num_classes)
    image = s.intensity_gain * image + s.intensity_bias
    if s.noise_sigma > 0:
        noise = CounterRng(cfg.target_seed, "scene", index, "shiftnoise").normal(labels.size)
        image = image + s.noise_sigma * noise.reshape(labels.shape)
    return image, labels


def render_scene(cfg, domain, index):
    """Public single-scene entry point; domain is 'source' or 'target'."""
    cfg.validate()
    if domain == "source":
        image, labels = _render_scene(cfg, cfg.source_seed, index)
    elif domain == "target":
        image, labels = _render_target_scene(cfg, index)
    else:
        raise ValueError(f"domain must be 'source' or 'target', got {domain!r}")
    return image.astype(np.float32)[None, :, :], labels


def generate_domain_pair(cfg, n_source, n_target, n_target_test):
    """Build (source train, target train, target test) datasets.

    Target-train labels are withheld (None); target-test scenes use indices
    disjoint from target-train so the splits never overlap.
    """
    cfg.validate()
    for name, n in (("n_source", n_source), ("n_target", n_target), ("n_target_test", n_target_test)):
        if n < 1:
            raise ValueError(f"{name} must be >= 1, got {n}")
        if n > MAX_SCENES:
            raise ValueError(f"{name} = {n} exceeds the desk-scale limit of {MAX_SCENES}")

    def build(domain, start, count, with_labels, split):
        images, labels = [], []
        for i in range(start, start + count):
            img, lbl = render_scene(cfg, domain, i)
            images.append(img)
            labels.append(lbl)
        meta = {"shift": asdict(cfg.shift) if domain == "target" else asdict(Shift())}
        return DomainDataset(images, labels if with_labels else None,
                             split, cfg.num_classes, meta)

    source = build("source", 0, n_source, True, "source_train")
    target_train = build("target", 0, n_target, False, "target_train")
    target_test = build("target", n_target, n_target_test, True, "target_test")
    return source, target_train, target_test


# -- dataset directory I/O ----------------------------------------------------

MANIFEST_NAME = "manifest.json"


def write_dataset(ds, out_dir):
    """One PTEN file per image/label plus manifest.json."""
    os.makedirs(out_dir, exist_ok=True)
    files = []
    for i, img in enumerate(ds.images):
        name = f"img_{i:05d}.pten"
        write_pten(os.path.join(out_dir, name), img.astype(np.float32))
        entry = {"image": name}
        if ds.labels is not None:
            lname = f"lbl_{i:05d}.pten"
            write_pten(os.path.join(out_dir, lname), ds.labels[i].astype(np.uint8))
            entry["label"] = lname
        files.append(entry)
    manifest = {
        "version": 1,
        "num_classes": ds.num_classes,
        "count": len(ds.images),
        "split": ds.split,
        "shift": ds.meta.get("shift", asdict(Shift())),
        "files": files,
    }
    with open(os.path.join(out_dir, MANIFEST_NAME), "w", encoding="utf-8") as f:
        json.dump(manifest, f, indent=2)


def read_dataset(in_dir):
    """Inverse of write_dataset; round-trips bit-exactly."""
    mpath = os.path.join(in_dir, MANIFEST_NAME)
    try:
        with open(mpath, encoding="utf-8") as f:
            manifest = json.load(f)
    except FileNotFoundError:
        raise PtenError(f"{mpath}: dataset manifest not found")
    except json.JSONDecodeError as e:
        raise PtenError(f"{mpath}: malformed manifest JSON ({e})")
    images, labels = [], []
    has_labels = manifest["files"] and "label" in manifest["files"][0]
    for entry in manifest["files"]:
        images.append(read_pten(os.path.join(in_dir, entry["image"])))
        if has_labels:
            labels.append(read_pten(os.path.join(in_dir, entry["label"])))
    return DomainDataset(
        images,
        labels if has_labels else None,
        manifest.get("split", "unknown"),
        manifest["num_classes"],
        {"shift": manifest.get("shift", asdict(Shift()))},
    )
