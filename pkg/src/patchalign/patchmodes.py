"""Patch mode discovery.

Label maps are tiled into a non-overlapping grid of patches. Each patch is
described by a 2x2 spatial label histogram: split the patch into four
quadrants, count class frequencies per quadrant over non-ignore pixels,
normalize each quadrant block to sum 1, and concatenate in quadrant order
(top-left, top-right, bottom-left, bottom-right) giving a 4C vector. K-means
over such vectors sampled from source label maps yields the patch modes;
cluster_map() then labels every grid cell of a map with its mode id.
"""

import json
import os
from dataclasses import dataclass, field

import numpy as np

from .pten import read_pten, write_pten
from .rng import CounterRng
from .synthdata import IGNORE_LABEL


@dataclass
class PatchGrid:
    patch_h: int
    patch_w: int
    U: int
    V: int

    @classmethod
    def for_image(cls, height, width, patch_h, patch_w):
        if patch_h < 2 or patch_w < 2:
            raise ValueError(f"patch dims must be >= 2x2, got {patch_h}x{patch_w}")
        if patch_h > height or patch_w > width:
            raise ValueError(
                f"patch {patch_h}x{patch_w} exceeds image {height}x{width}")
        return cls(patch_h, patch_w, height // patch_h, width // patch_w)


@dataclass
class ClusterModel:
    K: int
    centroids: np.ndarray  # K x 4C, float64
    inertia: float
    # inertia after every assignment step, for convergence diagnostics
    history: list = field(default_factory=list)


def extract_patch_histogram(patch, num_classes):
    """Concatenated per-quadrant class frequencies of one label patch."""
    patch = np.asarray(patch)
    ph, pw = patch.shape
    if ph < 2 or pw < 2:
        raise ValueError(f"patch must be at least 2x2, got {ph}x{pw}")
    live = patch[patch != IGNORE_LABEL]
    if live.size and int(live.max()) >= num_classes:
        raise ValueError(
            f"label {int(live.max())} out of range for {num_classes} classes")
    hh, wh = ph // 2, pw // 2
    quads = (patch[:hh, :wh], patch[:hh, wh:], patch[hh:, :wh], patch[hh:, wh:])
    blocks = []
    for q in quads:
        vals = q[q != IGNORE_LABEL]
        if vals.size == 0:
            blocks.append(np.zeros(num_classes))
            continue
        counts = np.bincount(vals.astype(np.int64), minlength=num_classes)
        blocks.append(counts / vals.size)
    return np.concatenate(blocks)


def sample_patches(label_maps, grid, n, seed):
    """n histograms from uniform (image, grid cell) draws with replacement."""
    if not label_maps:
        raise ValueError("label_maps is empty")
    if n < 1:
        raise ValueError(f"n must be >= 1, got {n}")
    num_classes = _infer_classes(label_maps)
    rng = CounterRng(seed, "patchsample")
    out = []
    for _ in range(n):
        m = label_maps[rng.randint(0, len(label_maps))]
        cell = rng.randint(0, grid.U * grid.V)
        u, v = divmod(cell, grid.V)
        r, c = u * grid.patch_h, v * grid.patch_w
        out.append(extract_patch_histogram(
            m[r:r + grid.patch_h, c:c + grid.patch_w], num_classes))
    return out


def _infer_classes(label_maps):
    top = 0
    for m in label_maps:
        live = m[m != IGNORE_LABEL]
        if live.size:
            top = max(top, int(live.max()))
    return top + 1


def _nearest(points, centroids):
    d2 = ((points[:, None, :] - centroids[None, :, :]) ** 2).sum(axis=2)
    return d2.argmin(axis=1), d2.min(axis=1)


def _plusplus_init(points, k, rng):
    n = points.shape[0]
    centroids = np.empty((k, points.shape[1]))
    centroids[0] = points[rng.randint(0, n)]
    d2 = ((points - centroids[0]) ** 2).sum(axis=1)
    for j in range(1, k):
        total = d2.sum()
        if total <= 0.0:
            idx = rng.randint(0, n)
        else:
            u = rng.uniform(1)[0] * total
            idx = min(int(np.searchsorted(np.cumsum(d2), u, side="right")), n - 1)
        centroids[j] = points[idx]
        d2 = np.minimum(d2, ((points - centroids[j]) ** 2).sum(axis=1))
    return centroids


def kmeans_fit(vectors, k, seed, max_iter=300, tol=1e-6, init_centroids=None):
    """Lloyd's algorithm from a seeded k-means++ start.

    Stops when the assignment reaches a fixed point, when the largest
    centroid movement drops below tol, or after max_iter rounds. Empty
    clusters are re-seeded to the point farthest from its current centroid.
    init_centroids overrides the k-means++ start (for controlled restarts).
    """
    points = np.asarray(vectors, dtype=np.float64)
    if points.ndim != 2:
        raise ValueError(f"expected a 2-D point array, got shape {points.shape}")
    if not np.all(np.isfinite(points)):
        raise ValueError("input vectors must be finite")
    n = points.shape[0]
    if k <= 0:
        raise ValueError(f"K must be positive, got {k}")
    if n < k:
        raise ValueError(f"need at least K={k} points, got {n}")
    if max_iter < 1:
        raise ValueError(f"max_iter must be >= 1, got {max_iter}")

    if init_centroids is not None:
        centroids = np.array(init_centroids, dtype=np.float64)
        if centroids.shape != (k, points.shape[1]):
            raise ValueError(
                f"init_centroids shape {centroids.shape} != ({k}, {points.shape[1]})")
    else:
        centroids = _plusplus_init(points, k, CounterRng(seed, "kmeanspp"))

    assign, d2 = _nearest(points, centroids)
    history = [float(d2.sum())]
    for _ in range(max_iter):
        sums = np.zeros_like(centroids)
        np.add.at(sums, assign, points)
        counts = np.bincount(assign, minlength=k)
        empty = np.flatnonzero(counts == 0)
        if empty.size:
            d2 = d2.copy()
            for cid in empty:
                far = int(d2.argmax())
                sums[cid] = points[far]
                counts[cid] = 1
                d2[far] = -1.0
        new_centroids = sums / counts[:, None]
        move = float(np.sqrt(((new_centroids - centroids) ** 2).sum(axis=1)).max())
        centroids = new_centroids
        new_assign, d2 = _nearest(points, centroids)
        history.append(float(d2.sum()))
        stable = bool(np.array_equal(new_assign, assign))
        assign = new_assign
        if stable or move < tol:
            break

    if not np.all(np.isfinite(centroids)):
        raise ValueError("K-means produced a non-finite centroid")
    if k > 1:
        flat = centroids.view([("", centroids.dtype)] * centroids.shape[1]).ravel()
        if np.unique(flat).size < k:
            raise ValueError(
                "K-means collapsed to duplicate centroids; the data has fewer "
                f"than K={k} distinct patch modes")
    return ClusterModel(k, centroids, float(d2.sum()), history)


def assign_cluster(histogram, model):
    """Nearest centroid by squared distance; ties go to the lowest id."""
    h = np.asarray(histogram, dtype=np.float64)
    if h.shape != (model.centroids.shape[1],):
        raise ValueError(
            f"histogram dim {h.shape} incompatible with centroids {model.centroids.shape}")
    return int(((model.centroids - h) ** 2).sum(axis=1).argmin())


def cluster_map(label_map, grid, model, num_classes):
    """U x V grid of mode ids for one label map."""
    out = np.empty((grid.U, grid.V), dtype=np.int64)
    for u in range(grid.U):
        for v in range(grid.V):
            r, c = u * grid.patch_h, v * grid.patch_w
            h = extract_patch_histogram(
                label_map[r:r + grid.patch_h, c:c + grid.patch_w], num_classes)
            out[u, v] = assign_cluster(h, model)
    return out


def patch_validity(label_map, grid):
    """U x V bool mask, False where a grid cell is entirely ignore-labeled."""
    out = np.empty((grid.U, grid.V), dtype=bool)
    for u in range(grid.U):
        for v in range(grid.V):
            r, c = u * grid.patch_h, v * grid.patch_w
            cell = label_map[r:r + grid.patch_h, c:c + grid.patch_w]
            out[u, v] = bool((cell != IGNORE_LABEL).any())
    return out


# -- model persistence ---------------------------------------------------------

def save_cluster_model(model, pten_path, num_classes, patch_h, patch_w, seed):
    """Centroid matrix as PTEN (float32) plus a JSON sidecar."""
    write_pten(pten_path, model.centroids.astype(np.float32))
    sidecar = {
        "K": model.K,
        "num_classes": num_classes,
        "patch_h": patch_h,
        "patch_w": patch_w,
        "seed": seed,
        "inertia": model.inertia,
    }
    with open(_sidecar_path(pten_path), "w", encoding="utf-8") as f:
        json.dump(sidecar, f, indent=2)


def load_cluster_model(pten_path):
    centroids = read_pten(pten_path).astype(np.float64)
    with open(_sidecar_path(pten_path), encoding="utf-8") as f:
        sidecar = json.load(f)
    if centroids.ndim != 2 or centroids.shape[0] != sidecar["K"]:
        raise ValueError(
            f"{pten_path}: centroid shape {centroids.shape} disagrees with sidecar K={sidecar['K']}")
    if centroids.shape[1] != 4 * sidecar["num_classes"]:
        raise ValueError(
            f"{pten_path}: centroid dim {centroids.shape[1]} != 4*C for C={sidecar['num_classes']}")
    model = ClusterModel(sidecar["K"], centroids, float(sidecar["inertia"]))
    return model, sidecar


def _sidecar_path(pten_path):
    root, _ = os.path.splitext(pten_path)
    return root + ".json"
