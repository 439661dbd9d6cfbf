"""Numerical check of the first-order approximation bounds.

With ``alpha <= l'' <= beta`` on the relevant scores,
``aI <= 1/N sum_i Cov[phi(z_i)] <= bI`` and ``1/N sum_i psi psi^T >= cI``:

* ``(alpha a / 2)|w|^2 <= g(w) - g_hat(w) <= (beta b / 2)|w|^2``
* ``|w* - w_hat|^2 <= beta b / (alpha c) |w_hat|^2``

where ``w*`` minimizes ``g`` and ``w_hat`` minimizes ``g_hat``.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from augkern.errors import ValidationError
from augkern.objectives.core import ObjectiveSpec, objective_value

REL_TOL = 1e-10


@dataclass
class Prop1Report:
    a: float
    b: float
    c: float
    alpha: float
    beta_smooth: float
    sandwich_ok: bool
    distance_ok: bool
    assumption_ok: bool
    gaps: list = field(default_factory=list)
    distance: float = float("nan")
    distance_bound: float = float("nan")

    def as_dict(self) -> dict:
        return {k: getattr(self, k) for k in (
            "a", "b", "c", "alpha", "beta_smooth", "sandwich_ok", "distance_ok",
            "assumption_ok", "distance", "distance_bound")}


def proposition1_check(dataset, sampler, feature_map, loss, w_hat, w_star,
                       probes=None, num_probes=20, seed=0) -> Prop1Report:
    """Evaluate both bounds; ``w_hat``/``w_star`` are the trained minimizers.

    The sandwich is checked at every probe plus ``w_hat`` and ``w_star``.
    Without explicit ``probes``, ``num_probes`` Gaussian directions scaled to
    ``|w_hat|`` are drawn from ``seed``. For the logistic loss ``alpha`` is
    the smallest ``l''`` over every score the checks touch; since ``l''`` is
    unimodal, the endpoints of each Taylor interval suffice. ``c <= 0`` is
    reported through ``assumption_ok`` and makes ``distance_ok`` false.
    """
    spec = ObjectiveSpec(dataset, sampler, feature_map, loss, mode="true", expectation="exact")
    if not spec.loss.scalar:
        raise ValidationError("proposition check supports scalar losses only")
    cache = spec._cache
    n = len(dataset)
    w_hat = np.asarray(w_hat, dtype=float)
    w_star = np.asarray(w_star, dtype=float)
    if probes is None:
        rng = np.random.default_rng(seed)
        scale = max(np.linalg.norm(w_hat), 1.0) / np.sqrt(spec.dim)
        probes = rng.standard_normal((num_probes, spec.dim)) * scale
    points = np.vstack([np.atleast_2d(probes), w_hat, w_star])

    D, p, Psi = cache["D"], cache["p"], cache["Psi"]
    cov = np.einsum("s,snj,snk->jk", p, D, D) / n
    ev = np.linalg.eigvalsh((cov + cov.T) / 2)
    a, b = float(ev[0]), float(ev[-1])
    gram = Psi.T @ Psi / n
    c = float(np.linalg.eigvalsh((gram + gram.T) / 2)[0])

    if spec.loss.kind == "squared":
        alpha = 2.0
    else:
        scores = np.concatenate([(cache["Fz"] @ points.T).ravel(), (Psi @ points.T).ravel()])
        alpha = float(spec.loss.d2(scores, 1.0).min())
    beta_s = spec.loss.smoothness

    g_hat_spec = spec.with_mode("first_order")
    sandwich_ok = True
    gaps = []
    for w in points:
        gv = objective_value(spec, w)
        gap = gv - objective_value(g_hat_spec, w)
        nw = float(w @ w)
        lo, hi = alpha * a / 2 * nw, beta_s * b / 2 * nw
        tol = REL_TOL * max(1.0, abs(gv))
        ok = lo <= gap + tol and gap <= hi + tol
        sandwich_ok &= ok
        gaps.append({"gap": gap, "lower": lo, "upper": hi, "ok": ok})

    assumption_ok = c > 0
    dist = float(((w_star - w_hat) ** 2).sum())
    if assumption_ok:
        bound = beta_s * b / (alpha * c) * float(w_hat @ w_hat)
        distance_ok = dist <= bound + REL_TOL * max(1.0, bound)
    else:
        bound, distance_ok = float("nan"), False
    return Prop1Report(a, b, c, alpha, beta_s, bool(sandwich_ok), bool(distance_ok),
                       bool(assumption_ok), gaps, dist, bound)
