"""Training-free measures of how useful an augmentation is.

Kernel target alignment compares the averaged-feature kernel with the label
kernel ``1{y = y'}``; a transformation that raises it over the unaugmented
baseline is a candidate worth training with. Feature invariance measures how
far a transformation moves inputs in feature space.
"""

from __future__ import annotations

import csv
import math
from dataclasses import dataclass

import numpy as np
import scipy.linalg

from augkern.errors import ValidationError
from augkern.kernel import KernelMatrix
from augkern.objectives.core import Dataset, averaged_features, transformed_inputs
from augkern.transforms import IdentitySampler

DEFAULT_SUBSAMPLE_FRACTION = 0.25


def _as_array(K):
    return np.asarray(K.matrix if isinstance(K, KernelMatrix) else K, dtype=float)


def kernel_target_alignment(K_feat, labels) -> float:
    """``<K, K_Y> / sqrt(<K, K> <K_Y, K_Y>)`` with entrywise inner products."""
    K = _as_array(K_feat)
    y = np.asarray(labels)
    if K.ndim != 2 or K.shape != (len(y), len(y)):
        raise ValidationError(f"kernel of shape {K.shape} does not match {len(y)} labels")
    KY = (y[:, None] == y[None, :]).astype(float)
    kk = float((K * K).sum())
    if kk == 0.0:
        raise ValidationError("feature kernel has zero Frobenius norm")
    return float((K * KY).sum() / math.sqrt(kk * (KY * KY).sum()))


def _alignment(dataset, sampler, feature_map, expectation="exact"):
    psi = averaged_features(sampler, feature_map, dataset.inputs, expectation)
    return kernel_target_alignment(psi @ psi.T, dataset.labels)


def default_subsample(n: int) -> int:
    return max(2, int(math.ceil(DEFAULT_SUBSAMPLE_FRACTION * n)))


def alignment_estimate(dataset: Dataset, sampler, feature_map, subsample=None, repeats=10,
                       seed=0, expectation="exact"):
    """Mean and standard error of the alignment over random subsets.

    Each repeat ``r`` draws ``subsample`` points without replacement using
    ``SeedSequence([seed, r])``. The default subsample is 25% of the data.
    """
    n = len(dataset)
    subsample = default_subsample(n) if subsample is None else int(subsample)
    if subsample < 2:
        raise ValidationError("subsample must be >= 2")
    if subsample > n:
        raise ValidationError(f"subsample {subsample} exceeds dataset size {n}")
    if repeats < 1:
        raise ValidationError("repeats must be >= 1")
    vals = []
    for r in range(int(repeats)):
        rng = np.random.default_rng(np.random.SeedSequence([int(seed), r]))
        idx = np.sort(rng.choice(n, size=subsample, replace=False))
        vals.append(_alignment(dataset.subset(idx), sampler, feature_map, expectation))
    vals = np.array(vals)
    se = float(vals.std(ddof=1) / math.sqrt(len(vals))) if len(vals) > 1 else 0.0
    return float(vals.mean()), se


@dataclass(frozen=True)
class RankingRow:
    candidate: str
    alignment: float
    baseline_alignment: float
    delta: float
    recommended: bool


def rank_transformations(dataset: Dataset, feature_map, candidates, expectation="exact"):
    """Alignment of every candidate against the identity baseline.

    ``candidates`` maps names to samplers (a dict or ``(name, sampler)``
    pairs). Rows come sorted by alignment, highest first, ties by name; a
    candidate is recommended when it beats the baseline strictly.
    """
    items = list(candidates.items()) if isinstance(candidates, dict) else list(candidates)
    if not items:
        raise ValidationError("need at least one candidate")
    base = _alignment(dataset, IdentitySampler(), feature_map)
    rows = []
    for name, sampler in items:
        al = _alignment(dataset, sampler, feature_map, expectation)
        rows.append(RankingRow(str(name), al, base, al - base, al > base))
    rows.sort(key=lambda r: (-r.alignment, r.candidate))
    return rows


def write_ranking_csv(path, rows, trailer=None):
    with open(path, "w", newline="", encoding="utf-8") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(["candidate", "alignment", "baseline_alignment", "delta", "recommended"])
        for r in rows:
            w.writerow([r.candidate, repr(r.alignment), repr(r.baseline_alignment),
                        repr(r.delta), int(r.recommended)])
        if trailer:
            fh.write(f"# {trailer}\n")


def feature_invariance(feature_map, sampler, dataset, mode="exact") -> float:
    """``sum_i E_{z~T(x_i)} |phi(x_i) - phi(z)|^2 / m`` with ``m`` the feature dimension."""
    X = dataset.inputs if isinstance(dataset, Dataset) else np.atleast_2d(dataset)
    Z, p = transformed_inputs(sampler, X, mode)
    phi = feature_map(X)
    if phi.shape[-1] == 0:
        raise ValidationError("feature dimension must be > 0")
    sq = ((feature_map(Z) - phi[None]) ** 2).sum(axis=-1)
    return float((p @ sq).sum() / phi.shape[-1])


def invariance_ratio(map_a, map_b, sampler, dataset, mode="exact") -> float:
    """``feature_invariance(map_a) / feature_invariance(map_b)``; nan when undefined."""
    den = feature_invariance(map_b, sampler, dataset, mode)
    if den == 0.0:
        return float("nan")
    return feature_invariance(map_a, sampler, dataset, mode) / den


def kernel_ridge_accuracy(train: Dataset, test: Dataset, sampler, feature_map, ridge=1e-3,
                          expectation="exact") -> float:
    """Held-out accuracy of kernel ridge classification with the averaged kernel.

    Fits ``(K + ridge N I) alpha = y`` on the training set and predicts the
    sign (or, for more classes, the arg-max over one-vs-rest targets) of the
    averaged-kernel scores of the test points.
    """
    Ptr = averaged_features(sampler, feature_map, train.inputs, expectation)
    Pte = averaged_features(sampler, feature_map, test.inputs, expectation)
    classes = np.unique(train.labels)
    Y = (train.labels[:, None] == classes[None, :]).astype(float) * 2 - 1
    K = Ptr @ Ptr.T
    alpha = scipy.linalg.solve(K + ridge * len(train) * np.eye(len(train)), Y, assume_a="pos")
    scores = (Pte @ Ptr.T) @ alpha
    pred = classes[np.argmax(scores, axis=1)]
    return float(np.mean(pred == test.labels))
