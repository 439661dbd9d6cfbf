"""Losses with analytic derivatives in the score.

Scalar losses (``logistic``, ``squared``) act elementwise on score arrays and
expose the first three derivatives; the third is only needed for gradients of
the second-order objective. ``multinomial`` works on score vectors in the
last axis and exposes the gradient and Hessian.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np
from scipy.special import log_softmax, softmax

from augkern.errors import ValidationError

LOSS_KINDS = ("logistic", "squared", "multinomial")


def _label_index(y, shape):
    # labels broadcast against the leading axes of a score array
    return np.broadcast_to(np.asarray(y)[..., None], shape[:-1] + (1,))


def _sech2(x):
    return 1.0 / np.cosh(x) ** 2


@dataclass(frozen=True)
class LossModel:
    kind: str
    num_classes: int | None = None

    def __post_init__(self):
        if self.kind not in LOSS_KINDS:
            raise ValidationError(f"unknown loss {self.kind!r}; choose from {LOSS_KINDS}")
        if self.kind == "multinomial":
            if self.num_classes is None or int(self.num_classes) < 2:
                raise ValidationError("multinomial loss needs num_classes >= 2")
            object.__setattr__(self, "num_classes", int(self.num_classes))

    @property
    def scalar(self) -> bool:
        return self.kind != "multinomial"

    def check_labels(self, y) -> np.ndarray:
        y = np.asarray(y)
        if self.kind == "logistic":
            if not np.isin(y, (-1, 1)).all():
                raise ValidationError("logistic loss needs labels in {-1, 1}")
            return y.astype(float)
        if self.kind == "squared":
            y = y.astype(float)
            if not np.isfinite(y).all():
                raise ValidationError("squared loss needs finite labels")
            return y
        yi = y.astype(int)
        if (yi != y).any() or yi.min() < 0 or yi.max() >= self.num_classes:
            raise ValidationError(f"multinomial labels must be integers in [0, {self.num_classes})")
        return yi

    # scalar kinds ---------------------------------------------------------

    def value(self, x, y):
        if self.kind == "logistic":
            return np.logaddexp(0.0, -y * x)
        if self.kind == "squared":
            return (x - y) ** 2
        return self._mn_value(x, y)

    def d1(self, x, y):
        if self.kind == "logistic":
            return -y / 2 + (y / 2) * np.tanh(y * x / 2)
        return 2.0 * (x - y)

    def d2(self, x, y):
        if self.kind == "logistic":
            return 0.25 * _sech2(np.asarray(x) / 2)
        return np.full(np.broadcast(x, y).shape, 2.0)

    def d3(self, x, y):
        if self.kind == "logistic":
            h = np.asarray(x) / 2
            return -0.25 * _sech2(h) * np.tanh(h)
        return np.zeros(np.broadcast(x, y).shape)

    @property
    def smoothness(self) -> float:
        """Global upper bound on the second derivative."""
        return 0.25 if self.kind == "logistic" else 2.0

    # multinomial ------------------------------------------------------------

    def _mn_value(self, u, y):
        lp = log_softmax(u, axis=-1)
        return -np.take_along_axis(lp, _label_index(y, lp.shape), axis=-1)[..., 0]

    def mn_grad(self, u, y):
        p = softmax(u, axis=-1)
        onehot = np.zeros_like(p)
        np.put_along_axis(onehot, _label_index(y, p.shape), 1.0, axis=-1)
        return p - onehot

    def mn_hess(self, u):
        p = softmax(u, axis=-1)
        return p[..., :, None] * np.eye(p.shape[-1]) - p[..., :, None] * p[..., None, :]


def loss_eval(loss: LossModel, x, y):
    """``(value, first, second)`` at score ``x`` with label ``y``.

    For the multinomial loss ``x`` is a score vector and the derivatives are
    the gradient vector and Hessian matrix.
    """
    if not isinstance(loss, LossModel):
        loss = LossModel(loss)
    y = loss.check_labels(y)
    if loss.scalar:
        x = np.asarray(x, dtype=float)
        v, d1, d2 = loss.value(x, y), loss.d1(x, y), loss.d2(x, y)
        if v.ndim == 0:
            return float(v), float(d1), float(d2)
        return v, d1, d2
    u = np.asarray(x, dtype=float)
    if u.shape[-1] != loss.num_classes:
        raise ValidationError(f"expected {loss.num_classes} scores, got {u.shape[-1]}")
    v = loss.value(u, y)
    return (float(v) if np.ndim(v) == 0 else v), loss.mn_grad(u, y), loss.mn_hess(u)
