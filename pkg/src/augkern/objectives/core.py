"""Augmented training objectives and their approximations.

For a linear model ``w`` on features ``phi`` with augmentation ``T``:

* ``none``: ``f(w) = 1/N sum_i l(w.phi(x_i); y_i)``
* ``true``: ``g(w) = 1/N sum_i E_{z~T(x_i)} l(w.phi(z); y_i)``
* ``first_order``: ``g_hat(w) = 1/N sum_i l(w.psi(x_i); y_i)`` with the
  averaged feature ``psi(x) = E_{z~T(x)} phi(z)``
* ``second_order``: ``g_tilde = g_hat + 1/(2N) sum_i E[(w.Delta)^2] l''(w.psi(x_i))``
  with ``Delta = phi(z) - psi(x_i)``
* ``second_order_only``: ``f + (g_tilde - g_hat)``

For the multinomial loss ``w`` has shape ``(m, C)`` and the penalty is
``1/(2N) sum_i E[(W^T Delta)^T H_i (W^T Delta)]`` with ``H_i`` the loss
Hessian at ``W^T psi(x_i)``.
"""

from __future__ import annotations

import csv
import math
from dataclasses import dataclass, field
from functools import cached_property

import numpy as np
from scipy.special import rel_entr, softmax

from augkern.errors import DivergenceError, ValidationError
from augkern.kernel import KernelMatrix
from augkern.objectives.features import FeatureMap
from augkern.objectives.losses import LossModel
from augkern.transforms import IdentitySampler, TransformSampler

MODES = ("none", "true", "first_order", "second_order", "second_order_only")
DIVERGENCE_FACTOR = 1e6
KL_FLOOR = 1e-12


class Dataset:
    """Real input vectors with integer (or, for squared loss, real) labels."""

    def __init__(self, inputs, labels):
        X = np.atleast_2d(np.asarray(inputs, dtype=float))
        y = np.asarray(labels)
        if X.size == 0 or len(X) == 0:
            raise ValidationError("dataset must be non-empty")
        if y.shape != (len(X),):
            raise ValidationError(f"{len(X)} inputs but labels have shape {y.shape}")
        self.inputs = X
        self.labels = y
        self.inputs.setflags(write=False)
        self.labels.setflags(write=False)

    def __len__(self):
        return len(self.inputs)

    @property
    def dim(self) -> int:
        return self.inputs.shape[1]

    def subset(self, idx) -> "Dataset":
        idx = np.asarray(idx)
        return Dataset(self.inputs[idx], self.labels[idx])


def parse_expectation(expectation):
    """Normalize to ``("exact",)`` or ``("mc", n, seed)``."""
    if expectation is None or expectation == "exact" or expectation == ("exact",):
        return ("exact",)
    if isinstance(expectation, dict):
        kind = expectation.get("kind", "mc")
        if kind == "exact":
            return ("exact",)
        expectation = (kind, expectation.get("n"), expectation.get("seed"))
    if isinstance(expectation, (tuple, list)) and len(expectation) == 3 and expectation[0] == "mc":
        _, n, seed = expectation
        if n is None or int(n) < 1 or seed is None:
            raise ValidationError("Monte Carlo expectation needs n >= 1 and a seed")
        return ("mc", int(n), int(seed))
    raise ValidationError(f"expectation must be 'exact' or ('mc', n, seed), got {expectation!r}")


def transformed_inputs(sampler: TransformSampler, X, expectation="exact"):
    """``(Z, p)``: transformed copies ``Z`` of shape ``(S, N, d)`` and weights ``p``.

    Exact mode enumerates the support. Monte Carlo mode draws ``n``
    independent copies of every row from one generator seeded by ``seed``.
    """
    X = np.atleast_2d(np.asarray(X, dtype=float))
    exp = parse_expectation(expectation)
    if exp[0] == "exact":
        return sampler.support_batch(X)
    _, n, seed = exp
    rng = np.random.default_rng(seed)
    Z = sampler.draw(np.tile(X, (n, 1)), rng).reshape(n, *X.shape)
    return Z, np.full(n, 1.0 / n)


def averaged_features(sampler, feature_map, x, expectation="exact"):
    """``psi(x) = E_{z~T(x)} phi(z)``; a vector for one input, rows for a batch."""
    x = np.asarray(x, dtype=float)
    Z, p = transformed_inputs(sampler, x, expectation)
    psi = np.tensordot(p, feature_map(Z), axes=1)
    return psi[0] if x.ndim == 1 else psi


def averaged_kernel(dataset, sampler, feature_map, expectation="exact") -> KernelMatrix:
    """Gram matrix of averaged features, ``<psi(x_i), psi(x_j)>``."""
    X = dataset.inputs if isinstance(dataset, Dataset) else np.atleast_2d(dataset)
    psi = averaged_features(sampler, feature_map, X, expectation)
    K = psi @ psi.T
    return KernelMatrix((K + K.T) / 2)


@dataclass(frozen=True, eq=False)
class ObjectiveSpec:
    dataset: Dataset
    sampler: TransformSampler = field(default_factory=IdentitySampler)
    feature_map: FeatureMap = field(default_factory=FeatureMap)
    loss: LossModel = field(default_factory=lambda: LossModel("logistic"))
    mode: str = "true"
    expectation: object = "exact"

    def __post_init__(self):
        if self.mode not in MODES:
            raise ValidationError(f"unknown mode {self.mode!r}; choose from {MODES}")
        if isinstance(self.loss, str):
            object.__setattr__(self, "loss", LossModel(self.loss))
        object.__setattr__(self, "expectation", parse_expectation(self.expectation))
        if self.expectation[0] == "exact" and not self.sampler.enumerable:
            raise ValidationError(
                f"{self.sampler.kind} sampler has no finite support; use Monte Carlo"
            )
        self.loss.check_labels(self.dataset.labels)

    def with_mode(self, mode) -> "ObjectiveSpec":
        # shares the cached features
        new = ObjectiveSpec(self.dataset, self.sampler, self.feature_map, self.loss,
                            mode, self.expectation)
        if "_cache" in self.__dict__:
            new.__dict__["_cache"] = self._cache
        return new

    @property
    def dim(self) -> int:
        return self._cache["Phi"].shape[1]

    @property
    def weight_shape(self) -> tuple:
        if self.loss.scalar:
            return (self.dim,)
        return (self.dim, self.loss.num_classes)

    @cached_property
    def _cache(self):
        X = self.dataset.inputs
        Z, p = transformed_inputs(self.sampler, X, self.expectation)
        Fz = self.feature_map(Z)
        Psi = np.tensordot(p, Fz, axes=1)
        return {
            "y": self.loss.check_labels(self.dataset.labels),
            "Phi": self.feature_map(X),
            "Fz": Fz,
            "p": p,
            "Psi": Psi,
            "D": Fz - Psi[None],
        }


def _check_w(spec, w):
    w = np.asarray(w, dtype=float)
    if w.shape != spec.weight_shape:
        raise ValidationError(f"w has shape {w.shape}, expected {spec.weight_shape}")
    return w


def _scalar_terms(spec, w, part):
    c, L = spec._cache, spec.loss
    y, n = c["y"], len(c["y"])
    if part == "none":
        s = c["Phi"] @ w
        return L.value(s, y).mean(), c["Phi"].T @ L.d1(s, y) / n
    if part == "true":
        s = c["Fz"] @ w
        val = c["p"] @ L.value(s, y).mean(axis=1)
        grad = np.einsum("s,sn,snm->m", c["p"], L.d1(s, y), c["Fz"]) / n
        return val, grad
    if part == "first_order":
        u = c["Psi"] @ w
        return L.value(u, y).mean(), c["Psi"].T @ L.d1(u, y) / n
    # variance penalty
    u = c["Psi"] @ w
    e = c["D"] @ w
    v = c["p"] @ e**2
    l2 = L.d2(u, y)
    val = (l2 * v).sum() / (2 * n)
    grad = c["Psi"].T @ (L.d3(u, y) * v) + 2 * np.einsum("s,sn,snm->m", c["p"], e * l2, c["D"])
    return val, grad / (2 * n)


def _multinomial_terms(spec, W, part):
    c, L = spec._cache, spec.loss
    y, n = c["y"], len(c["y"])
    if part in ("none", "first_order"):
        F = c["Phi"] if part == "none" else c["Psi"]
        U = F @ W
        return L.value(U, y).mean(), F.T @ L.mn_grad(U, y) / n
    if part == "true":
        U = c["Fz"] @ W
        val = c["p"] @ L.value(U, y).mean(axis=1)
        grad = np.einsum("s,snm,snc->mc", c["p"], c["Fz"], L.mn_grad(U, y)) / n
        return val, grad
    # e^T H e with H = diag(P) - P P^T, written through the centred e
    P = softmax(c["Psi"] @ W, axis=-1)
    E = c["D"] @ W
    centred = E - (P * E).sum(axis=-1, keepdims=True)
    q = (P * centred**2).sum(axis=-1)
    val = (c["p"] @ q).sum() / (2 * n)
    # derivative of q in the scores: P_k ((e_k - ebar)^2 - q)
    dq = np.tensordot(c["p"], P * (centred**2 - q[..., None]), axes=1)
    grad = np.einsum("s,snm,snc->mc", c["p"], c["D"], 2 * P * centred) + c["Psi"].T @ dq
    return val, grad / (2 * n)


def _evaluate(spec: ObjectiveSpec, w):
    w = _check_w(spec, w)
    terms = _scalar_terms if spec.loss.scalar else _multinomial_terms
    if spec.mode in ("none", "true", "first_order"):
        return terms(spec, w, spec.mode)
    base = terms(spec, w, "first_order" if spec.mode == "second_order" else "none")
    pen = terms(spec, w, "penalty")
    return base[0] + pen[0], base[1] + pen[1]


def objective_value(spec: ObjectiveSpec, w) -> float:
    return float(_evaluate(spec, w)[0])


def objective_gradient(spec: ObjectiveSpec, w) -> np.ndarray:
    return _evaluate(spec, w)[1]


def objective_values(spec: ObjectiveSpec, w) -> dict:
    """All five modes at ``w``, sharing one feature precomputation."""
    return {m: objective_value(spec.with_mode(m), w) for m in MODES}


@dataclass
class TrainResult:
    w: np.ndarray
    trace: list

    def to_csv(self, path, trailer=None):
        with open(path, "w", newline="", encoding="utf-8") as fh:
            wr = csv.writer(fh, lineterminator="\n")
            wr.writerow(["iteration", "mode", "objective", "grad_norm"])
            for row in self.trace:
                wr.writerow([row["iteration"], row["mode"], repr(row["objective"]),
                             repr(row["grad_norm"])])
            if trailer:
                fh.write(f"# {trailer}\n")


def train(spec: ObjectiveSpec, init_w, step_size, iterations, l2=0.0) -> TrainResult:
    """Full-batch gradient descent on the objective of ``spec`` plus ``l2/2 |w|^2``.

    The trace holds the objective and gradient norm before the first step and
    after every step. Raises :class:`DivergenceError` when the objective is
    non-finite or exceeds ``1e6`` times its initial value.
    """
    if not step_size > 0:
        raise ValidationError("step_size must be > 0")
    if l2 < 0:
        raise ValidationError("l2 must be >= 0")
    w = _check_w(spec, init_w).copy()

    def full(w):
        val, grad = _evaluate(spec, w)
        return val + 0.5 * l2 * float((w * w).sum()), grad + l2 * w

    val, grad = full(w)
    start = val
    trace = [{"iteration": 0, "mode": spec.mode, "objective": float(val),
              "grad_norm": float(np.linalg.norm(grad))}]
    for it in range(1, int(iterations) + 1):
        w = w - step_size * grad
        val, grad = full(w)
        trace.append({"iteration": it, "mode": spec.mode, "objective": float(val),
                      "grad_norm": float(np.linalg.norm(grad))})
        if not math.isfinite(val) or (start > 0 and val > DIVERGENCE_FACTOR * start):
            raise DivergenceError(
                f"objective {val!r} at iteration {it} (initial {start!r}); "
                f"reduce step_size (currently {step_size})"
            )
    return TrainResult(w, trace)


def prediction_kl(p, q) -> float:
    """``KL(p || q)`` with ``q`` floored at ``1e-12`` before the log."""
    p = np.asarray(p, dtype=float)
    q = np.asarray(q, dtype=float)
    for name, d in (("p", p), ("q", q)):
        if d.ndim != 1 or d.min() < 0 or abs(d.sum() - 1.0) > 1e-9:
            raise ValidationError(f"{name} is not a probability distribution")
    if p.shape != q.shape:
        raise ValidationError("p and q must have the same length")
    return float(rel_entr(p, np.maximum(q, KL_FLOOR)).sum())
