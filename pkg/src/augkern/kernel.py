"""Kernel induced by the augmentation chain, and classifiers built on it.

When every base augmentation is reversible with respect to one positive
distribution ``pi0``, the stationary distribution factorizes as
``pi = psi^T K`` with ``psi`` supported on the training set and ``K``
symmetric, positive definite and entrywise nonnegative. Writing
``M = (beta + 1) I - A`` and ``P = diag(pi0)`` over ``n`` states,

    ``K = n^2 P M^{-1}``  and  ``psi = P^{-1} rho / n^2``.

``P M^{-1}`` is symmetric because ``P M`` is (detailed balance). For uniform
``pi0`` this is ``K = (P M)^{-1}`` and ``psi = P rho``; the weighting
``psi = P rho`` does not reconstruct ``pi`` once ``pi0`` is non-uniform.
"""

from __future__ import annotations

import csv
import heapq
from dataclasses import dataclass

import numpy as np
import scipy.linalg
from scipy.optimize import curve_fit

from augkern.chain import ChainSpec, check_surjectivity
from augkern.errors import (
    AugkernError,
    DetailedBalanceError,
    SeriesDivergenceError,
    SurjectivityError,
    ValidationError,
)
from augkern.transforms import AugmentationMatrix, StateSpace, build_finite_augmentation

BALANCE_TOL = 1e-10
PD_TOL = -1e-10
BLOCK_TOL = 1e-9
TIE_TOL = 1e-12


@dataclass(frozen=True, eq=False)
class KernelMatrix:
    """Symmetric kernel over the states of ``space`` (or over raw inputs)."""

    matrix: np.ndarray
    space: StateSpace | None = None

    def __post_init__(self):
        m = np.array(self.matrix, dtype=float)
        if m.ndim != 2 or m.shape[0] != m.shape[1]:
            raise ValidationError("kernel matrix must be square")
        m.setflags(write=False)
        object.__setattr__(self, "matrix", m)

    def __len__(self):
        return self.matrix.shape[0]

    def to_csv(self, path, ids=None):
        if ids is None:
            ids = self.space.ids if self.space is not None else range(len(self))
        with open(path, "w", newline="", encoding="utf-8") as fh:
            w = csv.writer(fh, lineterminator="\n")
            w.writerow([str(i) for i in ids])
            for row in self.matrix:
                w.writerow([repr(float(v)) for v in row])


@dataclass(frozen=True)
class KernelReport:
    symmetric: bool
    positive_definite: bool
    nonnegative: bool
    min_eigenvalue: float
    min_entry: float

    @property
    def ok(self) -> bool:
        return self.symmetric and self.positive_definite and self.nonnegative


def reversing_measure(spec: ChainSpec) -> np.ndarray:
    """Positive distribution that every augmentation is reversible for.

    Grows a maximum spanning tree over each connected component of the
    augmentation graph and fixes ``pi0(v) / pi0(u) = A(u, v) / A(v, u)``
    along its edges. The result is only
    meaningful when detailed balance actually holds, which
    :func:`induced_kernel` checks. For symmetric augmentations this is the
    uniform distribution.
    """
    mats = [a.matrix for a, _ in spec.augmentations]
    n = len(spec.space)
    # weakest direction of each edge; ratios along strong edges are exact,
    # so grow a maximum spanning tree instead of taking any path
    strength = np.zeros((n, n))
    ratio = np.zeros((n, n))
    for m in mats:
        s = np.minimum(m, m.T)
        better = s > strength
        strength[better] = s[better]
        with np.errstate(divide="ignore", invalid="ignore"):
            r = np.log(m) - np.log(m.T)
        ratio[better] = r[better]
    log_w = np.full(n, np.nan)
    for root in range(n):
        if not np.isnan(log_w[root]):
            continue
        log_w[root] = 0.0
        heap = [(-strength[root, v], root, int(v)) for v in np.flatnonzero(strength[root] > 0)]
        heapq.heapify(heap)
        while heap:
            _, u, v = heapq.heappop(heap)
            if not np.isnan(log_w[v]):
                continue
            log_w[v] = log_w[u] + ratio[u, v]
            for t in np.flatnonzero((strength[v] > 0) & np.isnan(log_w)):
                heapq.heappush(heap, (-strength[v, t], v, int(t)))
    w = np.exp(log_w - log_w.max())
    return w / w.sum()


def _resolve_pi0(spec, pi0):
    n = len(spec.space)
    if isinstance(pi0, str):
        if pi0 == "uniform":
            return np.full(n, 1.0 / n)
        if pi0 == "reversible":
            return reversing_measure(spec)
        raise ValidationError(f"unknown pi0 option {pi0!r}")
    p = np.asarray(pi0, dtype=float)
    if p.shape != (n,):
        raise ValidationError("pi0 must have one entry per state")
    if not np.all(p > 0):
        raise ValidationError(f"pi0 must be strictly positive (min {p.min():.3g})")
    return p / p.sum()


def check_detailed_balance(spec: ChainSpec, pi0):
    """Raise :class:`DetailedBalanceError` if some ``A_i`` is not reversible."""
    worst = (None, None, None, 0.0)
    for i, (a, _) in enumerate(spec.augmentations):
        flow = pi0[:, None] * a.matrix
        gap = np.abs(flow - flow.T)
        u, v = np.unravel_index(np.argmax(gap), gap.shape)
        if gap[u, v] > worst[3]:
            worst = (i, int(u), int(v), float(gap[u, v]))
    if worst[3] > BALANCE_TOL:
        i, u, v, g = worst
        ids = spec.space.ids
        raise DetailedBalanceError(
            f"augmentation {i} violates detailed balance at ({ids[u]}, {ids[v]}): "
            f"|pi0(u)A(u,v) - pi0(v)A(v,u)| = {g:.3g}",
            worst,
        )


def induced_kernel(spec: ChainSpec, pi0="uniform"):
    """Kernel weights and kernel matrix of the augmentation chain.

    Parameters
    ----------
    spec : ChainSpec
    pi0 : array_like or {"uniform", "reversible"}
        Common reversible distribution of the augmentations. ``"uniform"``
        suits symmetric augmentations; ``"reversible"`` derives it from the
        matrices (e.g. for renormalized jitter).

    Returns
    -------
    psi : (n,) ndarray
        Kernel weights, nonzero only on training states.
    K : KernelMatrix
    """
    ok, missing = check_surjectivity(spec)
    if not ok:
        raise SurjectivityError(f"{len(missing)} state(s) unreachable from the dataset", missing)
    p0 = _resolve_pi0(spec, pi0)
    check_detailed_balance(spec, p0)
    n = len(spec.space)
    # K^{-1} = M P^{-1} / n^2, symmetric positive definite under detailed balance
    S = (np.eye(n) * (spec.beta + 1.0) - spec.A) / p0[None, :] / n**2
    S = (S + S.T) / 2.0
    K = scipy.linalg.solve(S, np.eye(n), assume_a="pos")
    K = (K + K.T) / 2.0
    psi = spec.rho / p0 / n**2
    psi.setflags(write=False)
    return psi, KernelMatrix(K, spec.space)


def verify_kernel_properties(K) -> KernelReport:
    """Check symmetry, positive definiteness and nonnegativity of ``K``."""
    m = K.matrix if isinstance(K, KernelMatrix) else np.asarray(K, dtype=float)
    scale = max(1.0, float(np.abs(m).max()))
    symmetric = bool(np.abs(m - m.T).max() <= 1e-10 * scale)
    eig = float(np.linalg.eigvalsh((m + m.T) / 2.0).min())
    min_entry = float(m.min())
    return KernelReport(
        symmetric=symmetric,
        positive_definite=eig > 0,
        nonnegative=min_entry >= PD_TOL,
        min_eigenvalue=eig,
        min_entry=min_entry,
    )


def input_kernel(K: KernelMatrix, space: StateSpace | None = None):
    """Collapse a label-preserving state kernel onto inputs.

    Returns ``(K_x, position)`` where ``K_x`` is the block of the smallest
    label and ``position[s]`` is the input index of state ``s``. Raises if
    label blocks disagree beyond tolerance or if a label does not cover every
    input.
    """
    space = space or K.space
    inputs, position = space.input_index()
    n_in = len(inputs)
    m = K.matrix
    scale = max(1.0, float(np.abs(m).max()))
    blocks = []
    for y in space.label_set:
        blk = space.block(y)
        if len(blk) != n_in or set(position[blk]) != set(range(n_in)):
            raise ValidationError(f"label {y} does not cover every input")
        order = blk[np.argsort(position[blk])]
        blocks.append(m[np.ix_(order, order)])
    for y, b in zip(space.label_set[1:], blocks[1:]):
        gap = np.abs(b - blocks[0]).max()
        if gap > BLOCK_TOL * scale:
            raise ValidationError(f"kernel block of label {y} differs by {gap:.3g}")
    return blocks[0], position


def kernel_classify(psi, K: KernelMatrix, labels, x: int, dataset=None):
    """Kernel classifier prediction at state ``x``.

    Scores every label ``y`` by ``sum_{i: y_i = y} psi(z_i) K(x_i, x)`` on
    the input-level kernel; for labels in ``{-1, 1}`` this is
    ``sign(sum_i y_i psi(z_i) K(x_i, x))``. A tie (top scores within
    ``1e-12`` of each other) goes to the label of the nearest training state.

    Parameters
    ----------
    psi : (n,) array
        Kernel weights from :func:`induced_kernel`.
    K : KernelMatrix
    labels : mapping or sequence
        Label of each training state; a dict ``{state: label}`` or a
        sequence aligned with ``dataset``. ``None`` uses the state labels.
    x : int
        Query state index.
    dataset : sequence of int, optional
        Training state indices; defaults to the support of ``psi``.
    """
    space = K.space
    if not 0 <= int(x) < len(space):
        raise ValidationError(f"state index {x} out of range for {len(space)} states")
    Kx, position = input_kernel(K, space)
    if dataset is None:
        dataset = np.flatnonzero(np.asarray(psi) > 0)
    dataset = [int(s) for s in dataset]
    if labels is None:
        lab = {s: int(space.labels[s]) for s in dataset}
    elif isinstance(labels, dict):
        lab = {int(k): int(v) for k, v in labels.items()}
    else:
        lab = dict(zip(dataset, (int(v) for v in labels)))
    scores = {}
    for s in dataset:
        scores[lab[s]] = scores.get(lab[s], 0.0) + psi[s] * Kx[position[s], position[x]]
    ranked = sorted(scores.items(), key=lambda kv: (-kv[1], kv[0]))
    if len(ranked) == 1:
        return ranked[0][0] if ranked[0][1] > TIE_TOL else _nearest_label(space, dataset, lab, x)
    top, second = ranked[0][1], ranked[1][1]
    if top - second <= TIE_TOL * max(1.0, abs(top)):
        return _nearest_label(space, dataset, lab, x)
    return ranked[0][0]


def _nearest_label(space, dataset, lab, x):
    d = np.linalg.norm(space.embeddings[dataset] - space.embeddings[x], axis=1)
    return lab[dataset[int(np.argmin(d))]]


def bayes_classify(pi, space: StateSpace, x) -> int:
    """Label ``y`` maximizing ``pi((x, y))``; ties go to the smaller label."""
    best, best_p = None, -np.inf
    for y in space.label_set:
        s = space.find(x, y)
        if s is None:
            raise ValidationError(f"input {np.atleast_1d(x).tolist()} has no state with label {y}")
        if pi[s] > best_p:
            best, best_p = y, pi[s]
    return best


def update_kernel_add(K, A_hat, beta_hat: float, truncation=None, tol=1e-10):
    """Kernel after adding augmentation ``A_hat`` at rate ``beta_hat``.

    ``K`` must be the unweighted kernel ``(I (beta + 1) - A)^{-1}``. The new
    kernel ``(I (beta_hat + beta + 1) - A - beta_hat A_hat)^{-1}`` is
    expanded as ``K sum_n beta_hat^n ((A_hat - I) K)^n`` and summed until a
    term's max-norm drops below ``tol`` or ``truncation`` terms are used.

    Raises :class:`SeriesDivergenceError` when the spectral radius of
    ``beta_hat (A_hat - I) K`` is not below 1.
    """
    return update_kernel_add_info(K, A_hat, beta_hat, truncation, tol)[0]


def update_kernel_add_info(K, A_hat, beta_hat, truncation=None, tol=1e-10):
    """Like :func:`update_kernel_add`; returns ``(kernel, n_terms, radius)``."""
    km = K.matrix if isinstance(K, KernelMatrix) else np.asarray(K, dtype=float)
    ah = A_hat.matrix if isinstance(A_hat, AugmentationMatrix) else np.asarray(A_hat, dtype=float)
    if beta_hat < 0:
        raise ValidationError("beta_hat must be >= 0")
    if truncation is not None and truncation < 1:
        raise ValidationError("truncation must be >= 1")
    n = km.shape[0]
    step = beta_hat * (ah - np.eye(n)) @ km
    radius = float(np.abs(np.linalg.eigvals(step)).max()) if beta_hat > 0 else 0.0
    if radius >= 1.0:
        raise SeriesDivergenceError(
            f"spectral radius {radius:.4f} >= 1; recompute the kernel directly"
        )
    limit = truncation if truncation is not None else 100_000
    total = np.eye(n)
    term = np.eye(n)
    used = 1
    while used < limit:
        term = term @ step
        total += term
        used += 1
        if np.abs(term).max() < tol:
            break
    space = K.space if isinstance(K, KernelMatrix) else None
    return KernelMatrix(km @ total, space), used, radius


@dataclass(frozen=True)
class JitterKernelReport:
    fitted_bandwidth: float
    amplitude: float
    max_relative_deviation: float
    grid_size: int
    sigma: float
    beta: float
    row: tuple


def jitter_kernel_check(grid_size: int, sigma: float, beta: float) -> JitterKernelReport:
    """Compare the induced kernel of discretized jitter with a Gaussian.

    Builds a single-label 1-D grid with unit spacing, one jitter augmentation
    of scale ``sigma`` at rate ``beta`` and a training state at the centre,
    then fits ``a exp(-t^2 / (2 s^2))`` by least squares to the kernel row
    through the centre over the central half of the grid. The centre entry
    itself is left out: it carries the identity (point-mass) term of the
    kernel's power series. The deviation is reported relative to the peak of
    the fitted region.
    """
    if grid_size < 5:
        raise ValidationError("grid_size must be >= 5")
    if not (sigma > 0 and beta > 0):
        raise ValidationError("sigma and beta must be > 0")
    space = StateSpace.grid(grid_size)
    jitter = build_finite_augmentation(space, "discretized-jitter", sigma=sigma)
    centre = grid_size // 2
    spec = ChainSpec(space, [(jitter, beta)], [(centre, 1.0)])
    _, K = induced_kernel(spec, pi0="reversible")
    row = K.matrix[centre]
    t = np.arange(grid_size) - centre
    half = grid_size // 4
    mask = (np.abs(t) <= half) & (t != 0)
    ts, ys = t[mask].astype(float), row[mask]
    if np.ptp(ys) <= 1e-15 * max(1.0, np.abs(ys).max()):
        raise AugkernError("kernel row is flat over the fit window; no bandwidth to fit")
    y0 = ys.max()

    def gauss(tt, amp, s):
        return amp * np.exp(-(tt**2) / (2.0 * s**2))

    (amp, s), _ = curve_fit(gauss, ts, ys / y0, p0=(1.0, sigma), maxfev=20_000)
    dev = np.abs(ys / y0 - gauss(ts, amp, s)).max()
    return JitterKernelReport(
        fitted_bandwidth=float(abs(s)),
        amplitude=float(amp * y0),
        max_relative_deviation=float(dev),
        grid_size=grid_size,
        sigma=float(sigma),
        beta=float(beta),
        row=tuple(float(v) for v in row),
    )


def reconstruct_stationary(psi, K: KernelMatrix) -> np.ndarray:
    """``psi^T K``; equals the stationary distribution for a valid spec."""
    return np.asarray(psi) @ K.matrix
