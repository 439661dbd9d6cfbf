"""k-nearest-neighbour classification on samples from the augmentation chain.

As the number of chain samples grows, k-NN over them approaches the Bayes
rule of the stationary distribution, which coincides with the kernel
classifier of :mod:`augkern.kernel`. :func:`equivalence_experiment` measures
how quickly that happens.
"""

from __future__ import annotations

import csv
import math
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass, field

import numpy as np

from augkern.chain import ChainSpec, check_surjectivity, sample_trajectory
from augkern.errors import SurjectivityError, ValidationError
from augkern.kernel import induced_kernel, kernel_classify

BURN_IN_EPS = 1e-6


def knn_predict(X, y, k: int, queries) -> np.ndarray:
    """Majority label among the ``k`` nearest rows of ``X`` for each query.

    Euclidean distance. Distance ties are broken by sample order (earlier
    samples win); vote ties go to the smallest label.
    """
    X = np.asarray(X, dtype=float)
    if X.ndim == 1:
        X = X[:, None]
    y = np.asarray(y)
    n = len(X)
    if n == 0:
        raise ValidationError("need at least one sample")
    if not 1 <= k <= n:
        raise ValidationError(f"k must be in [1, {n}] (got {k})")
    Q = np.asarray(queries, dtype=float).reshape(-1, X.shape[1])
    out = np.empty(len(Q), dtype=y.dtype)
    for qi, q in enumerate(Q):
        d = ((X - q) ** 2).sum(axis=1)
        kth = np.partition(d, k - 1)[k - 1]
        inside = np.flatnonzero(d < kth)
        on_edge = np.flatnonzero(d == kth)[: k - inside.size]
        labels, counts = np.unique(y[np.concatenate([inside, on_edge])], return_counts=True)
        out[qi] = labels[np.argmax(counts)]
    return out


def knn_classify(samples, k: int, x):
    """k-NN label of ``x`` from a list of ``(embedding, label)`` pairs."""
    if len(samples) == 0:
        raise ValidationError("need at least one sample")
    X = np.array([np.atleast_1d(np.asarray(e, dtype=float)) for e, _ in samples])
    y = np.array([lab for _, lab in samples])
    return knn_predict(X, y, k, np.atleast_1d(np.asarray(x, dtype=float))[None, :])[0].item()


def sqrt_rule(n: int) -> int:
    """Default ``k(n) = ceil(sqrt(n))``: ``k -> inf`` while ``k/n -> 0``."""
    return int(math.ceil(math.sqrt(n)))


def burn_in_steps(beta: float, eps: float = BURN_IN_EPS) -> int:
    """``ceil(10 (beta + 1) ln(1/eps))`` steps, after the chain's mixing rate."""
    return int(math.ceil(10.0 * (beta + 1.0) * math.log(1.0 / eps)))


def cell_seed(master_seed, n, replicate) -> np.random.SeedSequence:
    return np.random.SeedSequence([int(master_seed), int(n), int(replicate)])


def chain_samples(spec: ChainSpec, n: int, seed):
    """``n`` post-burn-in chain states, with multiplicity."""
    burn = burn_in_steps(spec.beta)
    traj = sample_trajectory(spec, seed, burn + n)
    return traj[burn:]


@dataclass
class AgreementTable:
    """Rows of ``(n, k, seed, test_state_id, knn_label, kernel_label, agree)``."""

    rows: list = field(default_factory=list)

    COLUMNS = ("n", "k", "seed", "test_state_id", "knn_label", "kernel_label", "agree")

    def agreement(self, n=None, seed=None) -> float:
        sel = [
            r for r in self.rows
            if (n is None or r["n"] == n) and (seed is None or r["seed"] == seed)
        ]
        return float(np.mean([r["agree"] for r in sel]))

    def summary(self):
        """Per-``n`` mean agreement and its standard error over replicates."""
        out = []
        for n in sorted({r["n"] for r in self.rows}):
            per_seed = [
                self.agreement(n, s) for s in sorted({r["seed"] for r in self.rows if r["n"] == n})
            ]
            se = float(np.std(per_seed, ddof=1) / np.sqrt(len(per_seed))) if len(per_seed) > 1 else 0.0
            out.append({"n": n, "agreement": float(np.mean(per_seed)), "stderr": se,
                        "replicates": len(per_seed)})
        return out

    def to_csv(self, path, trailer=None):
        with open(path, "w", newline="", encoding="utf-8") as fh:
            w = csv.writer(fh, lineterminator="\n")
            w.writerow(self.COLUMNS)
            for r in self.rows:
                w.writerow([r[c] if c != "agree" else int(r[c]) for c in self.COLUMNS])
            if trailer:
                fh.write(f"# {trailer}\n")


def _run_cell(args):
    spec, n, replicate, master_seed, k, test_states = args
    states = chain_samples(spec, n, cell_seed(master_seed, n, replicate))
    emb = spec.space.embeddings
    return knn_predict(emb[states], spec.space.labels[states], k, emb[test_states])


def equivalence_experiment(
    spec: ChainSpec,
    test_states,
    sample_counts,
    k_rule=sqrt_rule,
    master_seed=0,
    replicates=1,
    pi0="reversible",
    workers=1,
) -> AgreementTable:
    """Agreement between k-NN on chain samples and the kernel classifier.

    For every sample count ``n`` and replicate, runs the chain for a burn-in
    of ``ceil(10 (beta+1) ln 1e6)`` steps, keeps the next ``n`` states, and
    labels each test state by k-NN with ``k = k_rule(n)``. Each
    ``(n, replicate)`` cell draws from its own seed derived from
    ``master_seed``, so the table does not depend on ``workers``.
    """
    ok, missing = check_surjectivity(spec)
    if not ok:
        raise SurjectivityError("chain is not surjective", missing)
    if not spec.label_preserving:
        raise ValidationError("k-NN equivalence needs label-preserving augmentations")
    test_states = [int(s) for s in test_states]
    psi, K = induced_kernel(spec, pi0=pi0)
    kernel_labels = [kernel_classify(psi, K, None, x) for x in test_states]

    cells = []
    for n in sample_counts:
        k = int(k_rule(int(n)))
        for r in range(int(replicates)):
            cells.append((spec, int(n), r, master_seed, k, test_states))
    if workers > 1 and len(cells) > 1:
        with ProcessPoolExecutor(max_workers=workers) as pool:
            results = list(pool.map(_run_cell, cells))
    else:
        results = [_run_cell(c) for c in cells]

    table = AgreementTable()
    for (_, n, r, _, k, _), preds in zip(cells, results):
        for x, kl, pl in zip(test_states, kernel_labels, preds):
            table.rows.append({
                "n": n, "k": k, "seed": r,
                "test_state_id": spec.space.ids[x],
                "knn_label": int(pl), "kernel_label": int(kl),
                "agree": bool(int(pl) == int(kl)),
            })
    return table


def fit_power_law(ns, values):
    """Least-squares fit of ``log v = log c + e log n``; returns ``(e, c)``.

    Non-positive values are dropped.
    """
    ns = np.asarray(ns, dtype=float)
    values = np.asarray(values, dtype=float)
    keep = values > 0
    if keep.sum() < 2:
        raise ValidationError("need at least two positive values to fit a power law")
    e, logc = np.polyfit(np.log(ns[keep]), np.log(values[keep]), 1)
    return float(e), float(np.exp(logc))
