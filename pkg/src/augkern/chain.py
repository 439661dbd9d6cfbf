"""Markov chain model of composed augmentations.

At every step the chain either applies augmentation ``A_i`` (with probability
proportional to its rate ``beta_i``) or retracts to training example ``z_j``
(with probability proportional to ``gamma_j``, where the ``gamma`` sum to 1).
With ``A = sum_i beta_i A_i``, ``beta = sum_i beta_i`` and
``rho = sum_j gamma_j e_{z_j}``, the combined transition matrix is
``R = (A + 1 rho^T) / (beta + 1)`` and the stationary distribution is
``pi = rho^T (I (beta + 1) - A)^{-1}``.
"""

from __future__ import annotations

import csv
import json
import math
from collections import deque
from dataclasses import dataclass
from pathlib import Path

import numpy as np
import scipy.linalg

from augkern.errors import AugkernError, ValidationError
from augkern.transforms import AugmentationMatrix, StateSpace, build_finite_augmentation

MAX_STATES = 5000
GAMMA_TOL = 1e-12
CLAMP_TOL = 1e-12


@dataclass(frozen=True, eq=False)
class ChainSpec:
    """Augmentations with rates plus a weighted training set.

    Parameters
    ----------
    space : StateSpace
    augmentations : sequence of (AugmentationMatrix, float)
        Base augmentations and their rates; every rate must be > 0.
    dataset : sequence of (int, float)
        Training state indices and retraction weights summing to 1.
    """

    space: StateSpace
    augmentations: tuple
    dataset: tuple

    def __post_init__(self):
        n = len(self.space)
        if n > MAX_STATES:
            raise ValidationError(f"|space| = {n} exceeds the dense limit of {MAX_STATES}")
        augs = tuple((a, float(b)) for a, b in self.augmentations)
        data = tuple((int(s), float(g)) for s, g in self.dataset)
        if not augs:
            raise ValidationError("need at least one augmentation")
        for k, (a, b) in enumerate(augs):
            if not isinstance(a, AugmentationMatrix):
                raise ValidationError(f"augmentation {k} is not an AugmentationMatrix")
            if a.space is not self.space and a.space.ids != self.space.ids:
                raise ValidationError(f"augmentation {k} lives on a different state space")
            if not (b > 0 and math.isfinite(b)):
                raise ValidationError(f"augmentation {k}: rate must be > 0 (got {b})")
        if not data:
            raise ValidationError("dataset must be non-empty")
        for s, g in data:
            if not 0 <= s < n:
                raise ValidationError(f"dataset state {s} out of range")
            if g < 0:
                raise ValidationError("retraction weights must be >= 0")
        total = sum(g for _, g in data)
        if abs(total - 1.0) > GAMMA_TOL:
            raise ValidationError(f"retraction weights must sum to 1 (got {total!r})")
        object.__setattr__(self, "augmentations", augs)
        object.__setattr__(self, "dataset", data)

    @property
    def beta(self) -> float:
        return float(sum(b for _, b in self.augmentations))

    @property
    def rates(self) -> np.ndarray:
        return np.array([b for _, b in self.augmentations])

    @property
    def A(self) -> np.ndarray:
        """Rate-weighted augmentation sum ``sum_i beta_i A_i``."""
        out = np.zeros((len(self.space),) * 2)
        for a, b in self.augmentations:
            out += b * a.matrix
        return out

    @property
    def rho(self) -> np.ndarray:
        r = np.zeros(len(self.space))
        for s, g in self.dataset:
            r[s] += g
        return r

    @property
    def dataset_states(self) -> np.ndarray:
        return np.array(sorted({s for s, _ in self.dataset}), dtype=int)

    @property
    def label_preserving(self) -> bool:
        return all(a.label_preserving for a, _ in self.augmentations)

    def with_rates(self, rates) -> "ChainSpec":
        augs = [(a, r) for (a, _), r in zip(self.augmentations, rates)]
        return ChainSpec(self.space, augs, self.dataset)

    # -- serialization ---------------------------------------------------

    @classmethod
    def from_json(cls, obj, base_dir=".") -> "ChainSpec":
        """Load from the JSON layout used by the CLI.

        ``{"space": {...}, "augmentations": [{"matrix_csv": path, "beta": r}
        | {"matrix": rows, "beta": r} | {"kind": k, "params": {...}, "beta": r}],
        "dataset": [{"state": id, "gamma": r}]}``. Relative CSV paths resolve
        against ``base_dir``.
        """
        if isinstance(obj, (str, Path)):
            path = Path(obj)
            with open(path, encoding="utf-8") as fh:
                return cls.from_json(json.load(fh), base_dir=path.parent)
        base_dir = Path(base_dir)
        space = StateSpace.from_dict(obj["space"])
        augs = []
        for entry in obj["augmentations"]:
            if "matrix_csv" in entry:
                mat = AugmentationMatrix.from_csv(base_dir / entry["matrix_csv"], space)
            elif "matrix" in entry:
                mat = AugmentationMatrix(entry["matrix"], space)
            else:
                mat = build_finite_augmentation(space, entry["kind"], **entry.get("params", {}))
            augs.append((mat, entry["beta"]))
        data = []
        for entry in obj["dataset"]:
            sid = str(entry["state"])
            if sid not in space.index:
                raise ValidationError(f"dataset state {sid!r} is not in the space")
            data.append((space.index[sid], entry.get("gamma", 1.0 / len(obj["dataset"]))))
        return cls(space, augs, data)


def transition_matrix(spec: ChainSpec) -> np.ndarray:
    """Combined transition matrix ``R = (A + 1 rho^T) / (beta + 1)``."""
    return (spec.A + spec.rho[None, :]) / (spec.beta + 1.0)


def resolvent(spec: ChainSpec) -> np.ndarray:
    """``(I (beta + 1) - A)^{-1}``; each row sums to 1."""
    n = len(spec.space)
    return scipy.linalg.solve(np.eye(n) * (spec.beta + 1.0) - spec.A, np.eye(n))


def _clean_distribution(p, what):
    if p.min() < -CLAMP_TOL:
        raise AugkernError(f"{what}: negative probability {p.min():.3g}")
    p = np.where(p < 0, 0.0, p)
    p = p / p.sum()
    p.setflags(write=False)
    return p


def stationary_distribution(spec: ChainSpec) -> np.ndarray:
    """Stationary distribution of the combined chain.

    Solves ``(I (beta + 1) - A)^T pi = rho`` with a dense LU factorization.
    Entries in ``[-1e-12, 0)`` are clamped to zero; anything more negative
    raises.
    """
    n = len(spec.space)
    M = np.eye(n) * (spec.beta + 1.0) - spec.A
    try:
        pi = scipy.linalg.solve(M.T, spec.rho)
    except (np.linalg.LinAlgError, scipy.linalg.LinAlgError) as exc:
        raise AugkernError(f"stationary solve failed; malformed spec? ({exc})") from exc
    return _clean_distribution(pi, "stationary distribution")


def finite_time_distribution(spec: ChainSpec, n: int) -> np.ndarray:
    """Distribution of the chain after ``n`` steps, started from ``rho``.

    Uses the closed form
    ``pi_n = rho^T/(beta+1) (A^n/(beta+1)^(n-1) + sum_{i<n} (A/(beta+1))^i)``.
    """
    if n < 0:
        raise ValidationError("n must be >= 0")
    scale = spec.beta + 1.0
    step = spec.A / scale
    v = spec.rho.copy()
    acc = np.zeros_like(v)
    for _ in range(int(n)):
        acc += v
        v = v @ step
    return _clean_distribution(acc / scale + v, "finite-time distribution")


def mixing_bound(beta: float, n: int) -> float:
    """Upper bound ``(beta/(beta+1))^n (1 + 1/(beta+1)^2)`` on ``|pi_n - pi|_2``."""
    if not beta > 0:
        raise ValidationError("beta must be > 0")
    if n < 0:
        raise ValidationError("n must be >= 0")
    return (beta / (beta + 1.0)) ** n * (1.0 + 1.0 / (beta + 1.0) ** 2)


RETRACTION = -1


def sample_trajectory(spec: ChainSpec, seed, steps: int, return_moves=False):
    """Simulate ``steps`` consecutive states of the augmentation process.

    The first state is drawn from ``rho``. Each later state comes from a
    retraction (probability ``1/(beta+1)``) or from augmentation ``i``
    (probability ``beta_i/(beta+1)``). With ``return_moves`` the move taken
    into each state ``1..steps-1`` is also returned, ``-1`` for a retraction.

    Randomness is drawn up front in a fixed order, so the result depends only
    on ``seed``. Segments between retractions are independent and are
    advanced together, one position at a time.
    """
    steps = int(steps)
    if steps < 1:
        raise ValidationError("steps must be >= 1")
    rng = np.random.default_rng(seed)
    rates = spec.rates
    move_p = np.append(rates, 1.0) / (spec.beta + 1.0)
    moves = rng.choice(len(move_p), size=steps - 1, p=move_p)
    moves[moves == len(rates)] = RETRACTION
    uniforms = rng.random(steps)

    n_states = len(spec.space)
    rho_cdf = _row_cdf(spec.rho[None, :])[0]
    flat_cdfs = [
        (_row_cdf(a.matrix) + np.arange(n_states)[:, None]).ravel()
        for a, _ in spec.augmentations
    ]

    kind = np.empty(steps, dtype=np.int64)
    kind[0] = RETRACTION
    kind[1:] = moves
    is_start = kind == RETRACTION
    states = np.empty(steps, dtype=np.int64)
    states[is_start] = np.searchsorted(rho_cdf, uniforms[is_start], side="right")
    start_pos = np.maximum.accumulate(np.where(is_start, np.arange(steps), 0))
    depth = np.arange(steps) - start_pos
    order = np.argsort(depth, kind="stable")
    bounds = np.searchsorted(depth[order], np.arange(1, depth.max() + 2))
    for d in range(1, depth.max() + 1):
        idx = order[bounds[d - 1] : bounds[d]]
        prev = states[idx - 1]
        for i, flat in enumerate(flat_cdfs):
            sel = kind[idx] == i
            if sel.any():
                # row r of the flattened CDF spans [r, r + 1]
                q = prev[sel] + uniforms[idx[sel]]
                states[idx[sel]] = np.searchsorted(flat, q, side="right") - prev[sel] * n_states
    if return_moves:
        return states, moves
    return states


def _row_cdf(p):
    # normalized so the last positive entry of every row is exactly 1.0
    c = np.cumsum(p, axis=1)
    return c / c[:, -1:]


def trajectory_seed(master_seed, index) -> np.random.SeedSequence:
    """Seed for trajectory ``index`` derived only from ``(master_seed, index)``."""
    return np.random.SeedSequence([int(master_seed), int(index)])


def check_surjectivity(spec: ChainSpec):
    """Breadth-first reachability from the dataset along augmentation edges.

    Returns ``(ok, unreachable_ids)``.
    """
    adj = spec.A > 0
    seen = np.zeros(len(spec.space), dtype=bool)
    queue = deque(int(s) for s in spec.dataset_states)
    seen[list(queue)] = True
    while queue:
        u = queue.popleft()
        for v in np.flatnonzero(adj[u] & ~seen):
            seen[v] = True
            queue.append(int(v))
    missing = [spec.space.ids[k] for k in np.flatnonzero(~seen)]
    return not missing, missing


def write_distribution_csv(path, space: StateSpace, probs):
    with open(path, "w", newline="", encoding="utf-8") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(["state_id", "probability"])
        for sid, p in zip(space.ids, probs):
            w.writerow([sid, repr(float(p))])
