"""Confusion-matrix accounting: weighted and unweighted average recall."""

from __future__ import annotations

import numpy as np


def confusion_matrix(truths, predictions, num_classes: int) -> np.ndarray:
    """Integer matrix with rows indexed by true class, columns by prediction."""
    if len(truths) != len(predictions):
        raise ValueError(f"{len(truths)} truths vs {len(predictions)} predictions")
    conf = np.zeros((num_classes, num_classes), dtype=np.int64)
    for t, p in zip(truths, predictions):
        if not (0 <= t < num_classes and 0 <= p < num_classes):
            raise ValueError(f"label pair ({t}, {p}) out of range for {num_classes} classes")
        conf[t, p] += 1
    return conf


def uar_war(conf: np.ndarray):
    """(war, uar, per_class_recall) from a confusion matrix.

    WAR is overall accuracy (trace over total). UAR averages per-class recall
    over the classes that actually appear; absent classes get recall None and
    do not dilute the mean.
    """
    conf = np.asarray(conf)
    total = int(conf.sum())
    if total == 0:
        raise ValueError("empty confusion matrix")
    war = float(np.trace(conf)) / total
    recalls = []
    present = []
    for k in range(conf.shape[0]):
        row_total = int(conf[k].sum())
        if row_total == 0:
            recalls.append(None)
        else:
            r = float(conf[k, k]) / row_total
            recalls.append(r)
            present.append(r)
    uar = float(sum(present) / len(present))
    return war, uar, recalls
