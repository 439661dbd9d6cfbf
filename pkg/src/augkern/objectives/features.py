"""Fixed feature maps ``phi: R^d -> R^m``."""

from __future__ import annotations

import numpy as np

from augkern.errors import ValidationError


class FeatureMap:
    """Identity map or random Fourier features.

    Random Fourier features are ``sqrt(2/m) cos(W x + b)`` with rows of ``W``
    drawn from ``N(0, bandwidth^-2 I)`` and ``b`` uniform on ``[0, 2 pi)``;
    they approximate the Gaussian kernel of that bandwidth. Both draws come
    from ``seed`` alone.
    """

    def __init__(self, kind="identity", input_dim=None, m=None, bandwidth=1.0, seed=0):
        if kind not in ("identity", "random-fourier"):
            raise ValidationError(f"unknown feature map {kind!r}")
        self.kind = kind
        self.input_dim = None if input_dim is None else int(input_dim)
        self.W = self.b = None
        if kind == "random-fourier":
            if self.input_dim is None or m is None:
                raise ValidationError("random-fourier needs input_dim and m")
            if not bandwidth > 0:
                raise ValidationError("bandwidth must be > 0")
            self.m, self.bandwidth, self.seed = int(m), float(bandwidth), int(seed)
            rng = np.random.default_rng(self.seed)
            self.W = rng.normal(0.0, 1.0 / self.bandwidth, size=(self.m, self.input_dim))
            self.b = rng.uniform(0.0, 2 * np.pi, size=self.m)
        else:
            self.m = self.input_dim

    @classmethod
    def random_fourier(cls, input_dim, m, bandwidth=1.0, seed=0):
        return cls("random-fourier", input_dim, m, bandwidth, seed)

    @classmethod
    def identity(cls, input_dim=None):
        return cls("identity", input_dim)

    def output_dim(self, d=None) -> int:
        if self.m is not None:
            return self.m
        if d is None:
            raise ValidationError("identity map needs the input dimension")
        return int(d)

    def __call__(self, X) -> np.ndarray:
        X = np.asarray(X, dtype=float)
        if self.input_dim is not None and X.shape[-1] != self.input_dim:
            raise ValidationError(f"feature map expects d={self.input_dim}, got {X.shape[-1]}")
        if self.kind == "identity":
            return X.copy()
        return np.sqrt(2.0 / self.m) * np.cos(X @ self.W.T + self.b)

    def to_json(self) -> dict:
        if self.kind == "identity":
            return {"kind": "identity"}
        return {"kind": self.kind, "input_dim": self.input_dim, "m": self.m,
                "bandwidth": self.bandwidth, "seed": self.seed}

    @classmethod
    def from_json(cls, obj, input_dim=None):
        obj = dict(obj)
        kind = obj.pop("kind", "identity")
        if kind == "identity":
            return cls.identity(obj.get("input_dim", input_dim))
        obj.setdefault("input_dim", input_dim)
        try:
            return cls(kind, **obj)
        except TypeError as exc:
            raise ValidationError(f"bad feature map parameters: {exc}") from None
