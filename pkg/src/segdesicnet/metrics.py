"""Confusion-matrix segmentation metrics."""

from __future__ import annotations

import numpy as np

from .errors import LabelError, ShapeError, UndefinedMetricError

IGNORE_VALUE = 255


class ConfusionMatrix:
    """K x K integer counts, rows = ground truth, columns = prediction."""

    def __init__(self, num_classes: int, counts: np.ndarray | None = None):
        self.num_classes = int(num_classes)
        if counts is None:
            counts = np.zeros((num_classes, num_classes), dtype=np.int64)
        self.counts = np.asarray(counts, dtype=np.int64)
        if self.counts.shape != (num_classes, num_classes) or np.any(self.counts < 0):
            raise ValueError("confusion matrix must be K x K with non-negative counts")

    @property
    def total(self) -> int:
        return int(self.counts.sum())

    def __add__(self, other: "ConfusionMatrix") -> "ConfusionMatrix":
        return ConfusionMatrix(self.num_classes, self.counts + other.counts)

    def copy(self) -> "ConfusionMatrix":
        return ConfusionMatrix(self.num_classes, self.counts.copy())


def accumulate(cm: ConfusionMatrix, pred, gt, ignore_value: int = IGNORE_VALUE) -> ConfusionMatrix:
    pred = np.asarray(pred)
    gt = np.asarray(gt)
    if pred.shape != gt.shape:
        raise ShapeError(f"prediction {pred.shape} vs ground truth {gt.shape}")
    keep = gt != ignore_value
    p = pred[keep].astype(np.int64)
    g = gt[keep].astype(np.int64)
    k = cm.num_classes
    if np.any((p < 0) | (p >= k)) or np.any((g < 0) | (g >= k)):
        raise LabelError(f"class id outside [0, {k - 1}]")
    cm.counts += np.bincount(g * k + p, minlength=k * k).reshape(k, k)
    return cm


def _tp_fp_fn(cm: ConfusionMatrix):
    tp = np.diag(cm.counts)
    fp = cm.counts.sum(axis=0) - tp
    fn = cm.counts.sum(axis=1) - tp
    return tp, fp, fn


def class_iou(cm: ConfusionMatrix, k: int) -> float:
    """IoU of class ``k``; NaN when the class is absent from both truth and prediction."""
    tp, fp, fn = _tp_fp_fn(cm)
    union = tp[k] + fp[k] + fn[k]
    return float("nan") if union == 0 else float(tp[k]) / float(union)


def per_class_iou(cm: ConfusionMatrix) -> np.ndarray:
    return np.array([class_iou(cm, k) for k in range(cm.num_classes)])


def miou(cm: ConfusionMatrix) -> float:
    ious = per_class_iou(cm)
    present = ~np.isnan(ious)
    if not present.any():
        raise UndefinedMetricError("no class appears in ground truth or prediction")
    return float(ious[present].mean())


def evaluate_model(store, samples, tile_size: int, class_names: list[str] | None = None) -> dict:
    """Tile each labelled patch, predict tiles in eval mode, merge and score.

    Returns ``{"per_class_iou": {name: iou}, "miou": float, "num_pixels": int}``
    with fractions in [0, 1]; classes absent from truth and prediction map to NaN.
    """
    from .autodiff.tensor import Tensor, no_grad
    from .model import predict
    from .synthetic import merge, tile
    from .training import images_to_input

    k = store["seg_head.bias"].shape[0]
    names = class_names or [f"class_{i}" for i in range(k)]
    cm = ConfusionMatrix(k)
    with no_grad():
        for smp in samples:
            if smp.labels is None:
                raise LabelError(f"{smp.patch_id} has no labels to evaluate against")
            h, w = smp.image.shape[:2]
            probs = predict(store, Tensor(images_to_input(tile(smp.image, tile_size))))
            pred = merge(probs.argmax(axis=1).astype(np.uint8), h, w)
            accumulate(cm, pred, smp.labels)
    ious = per_class_iou(cm)
    return {
        "per_class_iou": {n: float(v) for n, v in zip(names, ious)},
        "miou": miou(cm),
        "num_pixels": cm.total,
        "confusion": cm,
    }
