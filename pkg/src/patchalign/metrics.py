"""Segmentation metrics and patch-feature export.

IoU is computed from a C x C confusion matrix (rows ground truth, columns
prediction, ignore pixels excluded). Classes absent from both ground truth
and prediction have an undefined 0/0 IoU; they are reported as NaN and
excluded from the mean.
"""

import numpy as np

from .nets import g_forward
from .synthdata import IGNORE_LABEL
from .tensor import Tensor, no_grad


def confusion_matrix(gt, pred, num_classes):
    gt = np.asarray(gt)
    pred = np.asarray(pred)
    if gt.shape != pred.shape:
        raise ValueError(f"confusion_matrix: shapes differ, {gt.shape} vs {pred.shape}")
    valid = gt != IGNORE_LABEL
    g = gt[valid].astype(np.int64)
    p = pred[valid].astype(np.int64)
    if g.size and (g.max() >= num_classes or g.min() < 0):
        raise ValueError(f"ground-truth label outside [0,{num_classes})")
    if p.size and (p.max() >= num_classes or p.min() < 0):
        raise ValueError(f"prediction outside [0,{num_classes})")
    return np.bincount(g * num_classes + p,
                       minlength=num_classes * num_classes).reshape(num_classes, num_classes)


def iou_from_confusion(cm):
    """Per-class IoU (NaN where the class never occurs) and their mean."""
    cm = np.asarray(cm, dtype=np.int64)
    diag = np.diag(cm).astype(np.float64)
    denom = cm.sum(axis=1) + cm.sum(axis=0) - np.diag(cm)
    present = denom > 0
    iou = np.full(cm.shape[0], np.nan)
    iou[present] = diag[present] / denom[present]
    if not present.any():
        return iou, float("nan")
    return iou, float(iou[present].mean())


def pixel_accuracy(cm):
    total = cm.sum()
    if total == 0:
        return float("nan")
    return float(np.diag(cm).sum() / total)


def predict(image, g_params, g_cfg):
    """Argmax class map for one image; ties go to the lowest class id."""
    with no_grad():
        probs = g_forward(Tensor(image), g_params, g_cfg)
    return probs.data.argmax(axis=0)


def evaluate_dataset(dataset, g_params, g_cfg):
    """Summed confusion matrix over a labeled dataset and derived metrics."""
    if dataset.labels is None:
        raise ValueError(f"split {dataset.split!r} has no labels to evaluate against")
    cm = np.zeros((dataset.num_classes, dataset.num_classes), dtype=np.int64)
    for img, lbl in zip(dataset.images, dataset.labels):
        cm += confusion_matrix(lbl, predict(img, g_params, g_cfg), dataset.num_classes)
    iou, miou = iou_from_confusion(cm)
    return cm, iou, miou, pixel_accuracy(cm)


def export_features(feature_maps, path):
    """Write per-site feature rows: id,domain,u,v,f0..f{K-1}.

    feature_maps: iterable of (array K x U x V, domain tag, image id).
    Rows are ordered lexicographically by (id, u, v); floats carry 9
    significant digits so 32-bit values survive a round-trip.
    """
    entries = []
    k = None
    for fmap, domain, image_id in feature_maps:
        fmap = np.asarray(fmap)
        if fmap.ndim != 3:
            raise ValueError(f"feature map for id {image_id} must be (K,U,V), got {fmap.shape}")
        if k is None:
            k = fmap.shape[0]
        elif fmap.shape[0] != k:
            raise ValueError(
                f"feature map for id {image_id} has K={fmap.shape[0]}, expected {k}")
        entries.append((image_id, domain, fmap))
    if k is None:
        raise ValueError("no feature maps to export")
    entries.sort(key=lambda e: e[0])
    with open(path, "w", encoding="utf-8", newline="") as f:
        f.write("id,domain,u,v," + ",".join(f"f{i}" for i in range(k)) + "\n")
        for image_id, domain, fmap in entries:
            for u in range(fmap.shape[1]):
                for v in range(fmap.shape[2]):
                    vals = ",".join(f"{x:.9g}" for x in fmap[:, u, v])
                    f.write(f"{image_id},{domain},{u},{v},{vals}\n")
