"""Seeded synthetic classification tasks."""

from __future__ import annotations

import numpy as np

from augkern.errors import ValidationError
from augkern.objectives.core import Dataset


def gaussian_mixture(n_points, dim=2, num_classes=2, separation=2.0, spread=1.0, seed=0):
    """Balanced isotropic Gaussian clusters.

    Class means sit on a circle of radius ``separation / 2`` in the first two
    coordinates (for two classes: ``+-separation/2`` on the first axis), and
    every point adds ``N(0, spread^2 I)`` noise. Binary tasks use labels
    ``{-1, +1}``, larger ones ``0..num_classes-1``. Classes are assigned
    round-robin and then shuffled, so counts differ by at most one.
    """
    if n_points < num_classes or num_classes < 2:
        raise ValidationError("need num_classes >= 2 and at least one point per class")
    if dim < 1 or (num_classes > 2 and dim < 2):
        raise ValidationError("dim too small for the requested classes")
    rng = np.random.default_rng(seed)
    cls = rng.permutation(np.arange(n_points) % num_classes)
    angles = 2 * np.pi * np.arange(num_classes) / num_classes
    means = np.zeros((num_classes, dim))
    means[:, 0] = np.cos(angles) * separation / 2
    if dim > 1:
        means[:, 1] = np.sin(angles) * separation / 2
    X = means[cls] + spread * rng.standard_normal((n_points, dim))
    labels = np.where(cls == 0, 1, -1) if num_classes == 2 else cls
    return Dataset(X, labels)
