"""Augmentations on finite labeled state spaces and on real vectors.

Two representations live here side by side:

* :class:`StateSpace` / :class:`AugmentationMatrix` describe a finite set of
  labeled examples and a row-stochastic transition matrix over it. These feed
  the Markov chain model in :mod:`augkern.chain`.
* :class:`TransformSampler` and its subclasses describe a distribution
  ``T(x)`` over transformed copies of a real vector ``x``. These feed the
  objective approximations in :mod:`augkern.objectives`.
"""

from __future__ import annotations

import csv
import itertools
import math
from pathlib import Path

import numpy as np
from scipy.ndimage import uniform_filter1d

from augkern.errors import ValidationError

ROW_SUM_TOL = 1e-12
MAX_SUPPORT_ATOMS = 100_000


def _frozen(a, dtype=float):
    a = np.array(a, dtype=dtype)
    a.setflags(write=False)
    return a


class StateSpace:
    """Ordered, finite set of labeled states with vector embeddings.

    Parameters
    ----------
    ids : sequence of str
        Unique state identifiers.
    embeddings : (n, d) array_like
        Embedding of each state; used for grid detection and nearest-neighbour
        queries.
    labels : (n,) array_like of int
        Class label of each state.
    """

    def __init__(self, ids, embeddings, labels):
        ids = tuple(str(i) for i in ids)
        emb = np.asarray(embeddings, dtype=float)
        if emb.ndim == 1:
            emb = emb[:, None]
        lab = np.asarray(labels)
        if len(ids) == 0:
            raise ValidationError("state space must be non-empty")
        if emb.ndim != 2 or emb.shape[0] != len(ids):
            raise ValidationError("embeddings must be an (n, d) array matching ids")
        if lab.shape != (len(ids),):
            raise ValidationError("labels must have one entry per state")
        if not np.all(np.isfinite(emb)):
            raise ValidationError("embeddings must be finite")
        if not np.array_equal(lab, lab.astype(int)):
            raise ValidationError("labels must be integers")
        index = {sid: k for k, sid in enumerate(ids)}
        if len(index) != len(ids):
            raise ValidationError("state ids must be unique")
        self.ids = ids
        self.embeddings = _frozen(emb)
        self.labels = _frozen(lab, dtype=int)
        self.index = index

    def __len__(self):
        return len(self.ids)

    def __repr__(self):
        return f"StateSpace(n={len(self)}, dim={self.dim}, labels={self.label_set})"

    @property
    def dim(self) -> int:
        return self.embeddings.shape[1]

    @property
    def label_set(self) -> tuple:
        return tuple(int(v) for v in np.unique(self.labels))

    def block(self, label) -> np.ndarray:
        """Indices of the states carrying ``label``, in state order."""
        return np.flatnonzero(self.labels == label)

    def find(self, embedding, label, atol=1e-12):
        """Index of the state with this embedding and label, or ``None``."""
        e = np.atleast_1d(np.asarray(embedding, dtype=float))
        blk = self.block(label)
        hit = np.all(np.abs(self.embeddings[blk] - e) <= atol, axis=1)
        hits = blk[hit]
        return int(hits[0]) if hits.size else None

    def input_index(self):
        """Map each state to the index of its embedding in the input set.

        Returns ``(inputs, position)`` where ``inputs`` holds the distinct
        embeddings in order of first appearance and ``position[s]`` is the
        row of ``inputs`` that state ``s`` sits on.
        """
        inputs, first, position = np.unique(
            self.embeddings, axis=0, return_index=True, return_inverse=True
        )
        order = np.argsort(first, kind="stable")
        rank = np.empty_like(order)
        rank[order] = np.arange(order.size)
        return inputs[order], rank[np.ravel(position)]

    @classmethod
    def grid(cls, shape, labels=(1,), spacing=1.0, origin=0.0):
        """Regular 1-D or 2-D grid replicated once per label.

        States are ordered label-major, then row-major over grid points, so
        every label block has the same internal ordering.
        """
        shape = tuple(int(s) for s in np.atleast_1d(shape))
        if len(shape) not in (1, 2) or min(shape) < 1:
            raise ValidationError("grid shape must be 1-D or 2-D with positive sizes")
        coords = np.array(list(itertools.product(*[range(s) for s in shape])), dtype=float)
        emb = origin + spacing * coords
        ids, embs, labs = [], [], []
        for y in labels:
            for c, e in zip(coords.astype(int), emb):
                ids.append(",".join(str(v) for v in c) + f":{int(y):+d}")
                embs.append(e)
                labs.append(int(y))
        return cls(ids, np.array(embs), labs)

    def to_dict(self) -> dict:
        return {
            "states": [
                {"id": sid, "embedding": [float(v) for v in e], "label": int(y)}
                for sid, e, y in zip(self.ids, self.embeddings, self.labels)
            ]
        }

    @classmethod
    def from_dict(cls, obj) -> "StateSpace":
        if "grid" in obj:
            g = obj["grid"]
            return cls.grid(
                g["shape"],
                labels=g.get("labels", [1]),
                spacing=g.get("spacing", 1.0),
                origin=g.get("origin", 0.0),
            )
        states = obj["states"]
        return cls(
            [s["id"] for s in states],
            [s["embedding"] for s in states],
            [s["label"] for s in states],
        )


def _grid_coords(points, rtol=1e-9):
    """Integer grid coordinates for points on a full regular 1-D/2-D grid."""
    d = points.shape[1]
    if d not in (1, 2):
        raise ValidationError(f"grid kinds need 1-D or 2-D embeddings, got d={d}")
    coords = np.empty(points.shape, dtype=int)
    shape = []
    for axis in range(d):
        vals = np.unique(points[:, axis])
        if vals.size > 1:
            steps = np.diff(vals)
            if not np.allclose(steps, steps[0], rtol=rtol, atol=0.0):
                raise ValidationError("embeddings are not on a regular grid")
            coords[:, axis] = np.rint((points[:, axis] - vals[0]) / steps[0]).astype(int)
        else:
            coords[:, axis] = 0
        shape.append(vals.size)
    if len({tuple(c) for c in coords}) != len(coords) or len(coords) != math.prod(shape):
        raise ValidationError("embeddings do not fill a regular grid exactly once")
    return coords, tuple(shape)


class AugmentationMatrix:
    """Row-stochastic transition matrix over a :class:`StateSpace`."""

    def __init__(self, matrix, space: StateSpace):
        m = np.array(matrix, dtype=float)
        n = len(space)
        if m.shape != (n, n):
            raise ValidationError(f"matrix shape {m.shape} does not match |space|={n}")
        if not np.all(np.isfinite(m)) or m.min() < 0:
            raise ValidationError("augmentation matrix entries must be finite and >= 0")
        dev = np.abs(m.sum(axis=1) - 1.0).max()
        if dev > ROW_SUM_TOL:
            raise ValidationError(f"rows must sum to 1 (max deviation {dev:.3g})")
        m.setflags(write=False)
        self.matrix = m
        self.space = space

    def __repr__(self):
        return f"AugmentationMatrix(n={len(self.space)}, symmetric={self.is_symmetric})"

    @property
    def label_preserving(self) -> bool:
        lab = self.space.labels
        cross = lab[:, None] != lab[None, :]
        return not np.any(self.matrix[cross] != 0.0)

    @property
    def is_symmetric(self) -> bool:
        return bool(np.array_equal(self.matrix, self.matrix.T))

    def to_csv(self, path):
        with open(path, "w", newline="", encoding="utf-8") as fh:
            w = csv.writer(fh, lineterminator="\n")
            w.writerow(self.space.ids)
            for row in self.matrix:
                w.writerow([repr(float(v)) for v in row])

    @classmethod
    def from_csv(cls, path, space: StateSpace) -> "AugmentationMatrix":
        with open(path, newline="", encoding="utf-8") as fh:
            rows = [r for r in csv.reader(fh) if r and not r[0].startswith("#")]
        header, body = rows[0], rows[1:]
        if sorted(header) != sorted(space.ids):
            raise ValidationError(f"{path}: header ids do not match the state space")
        perm = [space.index[h] for h in header]
        raw = np.array([[float(v) for v in r] for r in body])
        m = np.empty_like(raw)
        m[np.ix_(perm, perm)] = raw
        return cls(m, space)


def build_finite_augmentation(space: StateSpace, kind: str, **params) -> AugmentationMatrix:
    """Build a label-preserving augmentation matrix of a standard kind.

    Every kind acts independently inside each label block.

    ``cyclic-shift``
        ``offset`` (int, or pair for 2-D grids): deterministic cyclic
        translation of grid coordinates.
    ``discretized-jitter``
        ``sigma`` > 0: row ``i`` is the Gaussian density
        ``exp(-|e_i - e_j|^2 / (2 sigma^2))`` over the block, renormalized.
    ``dropout-to-neighbor``
        ``p`` in (0, 1] and optional ``radius``: move to a state within
        ``radius`` (default: the smallest spacing in the block), each with
        probability ``p / max_degree``, otherwise stay. Symmetric.
    """
    n = len(space)
    m = np.zeros((n, n))
    if kind == "cyclic-shift":
        offset = np.atleast_1d(np.asarray(params.get("offset", 1), dtype=int))
        for y in space.label_set:
            blk = space.block(y)
            coords, shape = _grid_coords(space.embeddings[blk])
            if offset.size != len(shape):
                raise ValidationError(f"offset needs {len(shape)} component(s)")
            where = {tuple(c): k for k, c in enumerate(coords)}
            for k, c in enumerate(coords):
                target = tuple((c + offset) % np.array(shape))
                m[blk[k], blk[where[target]]] = 1.0
    elif kind == "discretized-jitter":
        sigma = float(params.get("sigma", 0.0))
        if not sigma > 0:
            raise ValidationError("discretized-jitter needs sigma > 0")
        for y in space.label_set:
            blk = space.block(y)
            pts = space.embeddings[blk]
            _grid_coords(pts)
            sq = ((pts[:, None, :] - pts[None, :, :]) ** 2).sum(axis=-1)
            dens = np.exp(-sq / (2.0 * sigma**2))
            m[np.ix_(blk, blk)] = dens / dens.sum(axis=1, keepdims=True)
    elif kind == "dropout-to-neighbor":
        p = float(params.get("p", 1.0))
        if not 0 < p <= 1:
            raise ValidationError("dropout-to-neighbor needs 0 < p <= 1")
        radius = params.get("radius")
        adj_blocks = []
        for y in space.label_set:
            blk = space.block(y)
            pts = space.embeddings[blk]
            dist = np.sqrt(((pts[:, None, :] - pts[None, :, :]) ** 2).sum(axis=-1))
            r = radius
            if r is None:
                pos = dist[dist > 0]
                r = pos.min() * (1 + 1e-9) if pos.size else 0.0
            adj = (dist > 0) & (dist <= r)
            adj_blocks.append((blk, adj))
        max_deg = max(int(a.sum(axis=1).max()) for _, a in adj_blocks)
        for blk, adj in adj_blocks:
            sub = adj * (p / max_deg) if max_deg else np.zeros(adj.shape)
            sub[np.diag_indices_from(sub)] = 1.0 - sub.sum(axis=1)
            m[np.ix_(blk, blk)] = sub
    else:
        raise ValidationError(f"unknown augmentation kind {kind!r}")
    return AugmentationMatrix(m, space)


def symmetrize(aug: AugmentationMatrix) -> AugmentationMatrix:
    """Symmetric, row-stochastic version of an augmentation.

    Symmetric inputs come back unchanged. Otherwise every directed edge is
    paired with its reverse: off-diagonal weights are ``(A + A^T) / k`` with
    ``k = 1 + max_i sum_{j != i} (A + A^T)_{ij}``, and the leftover mass of
    each row becomes a probability of staying put. Self-loops of ``A`` only
    ever contribute to that holding probability.

    >>> import numpy as np
    >>> sp = StateSpace.grid(3)
    >>> a = AugmentationMatrix([[0, 0, 1], [0, 0, 1], [0, 0, 1]], sp)
    >>> symmetrize(a).matrix * 3
    array([[2., 0., 1.],
           [0., 2., 1.],
           [1., 1., 1.]])
    """
    a = aug.matrix
    if aug.is_symmetric:
        return aug
    if np.abs(a - a.T).max() <= ROW_SUM_TOL:
        return AugmentationMatrix((a + a.T) / 2.0, aug.space)
    w = a + a.T
    np.fill_diagonal(w, 0.0)
    deg = w.sum(axis=1)
    k = 1.0 + deg.max()
    s = w / k
    s[np.diag_indices_from(s)] = (k - deg) / k
    return AugmentationMatrix(s, aug.space)


# ---------------------------------------------------------------------------
# Vector-space transformation samplers
# ---------------------------------------------------------------------------


class TransformSampler:
    """Distribution ``T(x)`` over transformed copies of a vector.

    Subclasses with a finite support implement :meth:`weights` and
    :meth:`apply_atom`; continuous ones override :meth:`draw`. All methods
    act on batches ``X`` of shape ``(N, d)`` row by row.
    """

    kind = "base"

    @property
    def enumerable(self) -> bool:
        return self.n_atoms is not None

    @property
    def n_atoms(self):
        return len(self.weights()) if self._finite else None

    _finite = True

    def weights(self) -> np.ndarray:
        raise NotImplementedError

    def apply_atom(self, X, atom: int) -> np.ndarray:
        raise NotImplementedError

    def draw(self, X, rng) -> np.ndarray:
        """Independently transform every row of ``X``."""
        X = np.asarray(X, dtype=float)
        idx = rng.choice(self.n_atoms, size=len(X), p=self.weights())
        out = np.empty_like(X)
        for a in np.unique(idx):
            rows = idx == a
            out[rows] = self.apply_atom(X[rows], int(a))
        return out

    def draw_atoms(self, size, rng) -> np.ndarray:
        """Flat atom indices drawn from the support weights."""
        if not self.enumerable:
            raise ValidationError(f"{self.kind} sampler has no finite support")
        return rng.choice(self.n_atoms, size=size, p=self.weights())

    def support_batch(self, X):
        """All atoms for a batch: ``(Z, p)`` with ``Z`` of shape ``(S, N, d)``."""
        if not self.enumerable:
            raise ValidationError(
                f"{self.kind} sampler has no finite support; declare a "
                "discretization or use Monte Carlo"
            )
        if self.n_atoms > MAX_SUPPORT_ATOMS:
            raise ValidationError(
                f"support has {self.n_atoms} atoms (cap {MAX_SUPPORT_ATOMS}); use Monte Carlo"
            )
        X = np.atleast_2d(np.asarray(X, dtype=float))
        Z = np.stack([self.apply_atom(X, a) for a in range(self.n_atoms)])
        return Z, self.weights()

    def support(self, x):
        """Explicit weighted list ``[(z, p), ...]`` for a single vector."""
        Z, p = self.support_batch(np.asarray(x, dtype=float)[None, :])
        return [(Z[a, 0], float(p[a])) for a in range(len(p))]

    def sample(self, x, seed) -> np.ndarray:
        rng = np.random.default_rng(seed)
        return self.draw(np.asarray(x, dtype=float)[None, :], rng)[0]

    def to_json(self) -> dict:
        return {"kind": self.kind, "params": self._params()}

    def _params(self) -> dict:
        return {}


class IdentitySampler(TransformSampler):
    kind = "identity"

    def weights(self):
        return np.ones(1)

    def apply_atom(self, X, atom):
        return np.array(X, dtype=float)


class AdditiveNoiseSampler(TransformSampler):
    """Additive noise of scale ``sigma``.

    ``discretization`` selects the distribution:

    * ``"gaussian"`` -- ``N(0, sigma^2 I)``; sampling only.
    * ``"two-point"`` -- ``x + sigma * u`` or ``x - sigma * u`` with
      probability 1/2 each, ``u`` the ``direction`` (default all ones).
    * ``"rademacher"`` -- independent ``+-sigma`` on every coordinate;
      ``2^d`` atoms, covariance ``sigma^2 I``.
    """

    kind = "additive-noise"

    def __init__(self, sigma, discretization="gaussian", direction=None, dim=None):
        if not sigma > 0:
            raise ValidationError("additive-noise needs sigma > 0")
        if discretization not in ("gaussian", "two-point", "rademacher"):
            raise ValidationError(f"unknown noise discretization {discretization!r}")
        if discretization == "rademacher" and dim is None:
            raise ValidationError("rademacher noise needs the input dimension 'dim'")
        self.sigma = float(sigma)
        self.discretization = discretization
        self.direction = None if direction is None else np.asarray(direction, dtype=float)
        self.dim = None if dim is None else int(dim)
        self._finite = discretization != "gaussian"
        if discretization == "rademacher":
            self._signs = np.array(list(itertools.product((1.0, -1.0), repeat=self.dim)))

    def weights(self):
        if self.discretization == "two-point":
            return np.full(2, 0.5)
        return np.full(2**self.dim, 0.5**self.dim)

    def apply_atom(self, X, atom):
        X = np.asarray(X, dtype=float)
        if self.discretization == "two-point":
            u = np.ones(X.shape[1]) if self.direction is None else self.direction
            return X + (1.0 if atom == 0 else -1.0) * self.sigma * u
        if X.shape[1] != self.dim:
            raise ValidationError(f"rademacher noise built for d={self.dim}, got {X.shape[1]}")
        return X + self.sigma * self._signs[atom]

    def draw(self, X, rng):
        if self.discretization == "gaussian":
            X = np.asarray(X, dtype=float)
            return X + self.sigma * rng.standard_normal(X.shape)
        return super().draw(X, rng)

    def _params(self):
        out = {"sigma": self.sigma, "discretization": self.discretization}
        if self.direction is not None:
            out["direction"] = self.direction.tolist()
        if self.dim is not None:
            out["dim"] = self.dim
        return out


class CyclicShiftSampler(TransformSampler):
    """``np.roll(x, offset)`` with ``offset`` drawn from ``offsets``."""

    kind = "cyclic-shift"

    def __init__(self, offsets, weights=None):
        self.offsets = [int(o) for o in offsets]
        self._w = _check_weights(weights, len(self.offsets))

    def weights(self):
        return self._w

    def apply_atom(self, X, atom):
        return np.roll(np.asarray(X, dtype=float), self.offsets[atom], axis=-1)

    def _params(self):
        return {"offsets": self.offsets, "weights": self._w.tolist()}


class ScaleSampler(TransformSampler):
    """Multiply by a factor from ``[low, high]``.

    With ``num`` set, the factor takes ``num`` equally spaced values with
    equal weight; explicit ``factors``/``weights`` are also accepted.
    Without either the factor is uniform on the interval (sampling only).
    """

    kind = "scale"

    def __init__(self, low=None, high=None, num=None, factors=None, weights=None):
        if factors is not None:
            self.factors = np.asarray(factors, dtype=float)
        elif num is not None:
            if low is None or high is None or int(num) < 1:
                raise ValidationError("scale needs low, high and num >= 1")
            self.factors = np.linspace(low, high, int(num))
        else:
            self.factors = None
        if self.factors is None:
            if low is None or high is None or high < low:
                raise ValidationError("scale needs a valid factor range")
            self._finite = False
            self._w = None
        else:
            self._w = _check_weights(weights, len(self.factors))
        self.low, self.high = low, high

    def weights(self):
        return self._w

    def apply_atom(self, X, atom):
        return self.factors[atom] * np.asarray(X, dtype=float)

    def draw(self, X, rng):
        if self.factors is None:
            X = np.asarray(X, dtype=float)
            return rng.uniform(self.low, self.high, size=(len(X), 1)) * X
        return super().draw(X, rng)

    def _params(self):
        if self.factors is None:
            return {"low": self.low, "high": self.high}
        return {"factors": self.factors.tolist(), "weights": self._w.tolist()}


class BlurSampler(TransformSampler):
    """Cyclic moving average with a window drawn from ``windows``."""

    kind = "moving-average-blur"

    def __init__(self, windows, weights=None):
        windows = [int(w) for w in np.atleast_1d(windows)]
        if min(windows) < 1:
            raise ValidationError("blur window must be >= 1")
        self.windows = windows
        self._w = _check_weights(weights, len(windows))

    def weights(self):
        return self._w

    def apply_atom(self, X, atom):
        X = np.asarray(X, dtype=float)
        w = self.windows[atom]
        if w == 1:
            return X.copy()
        return uniform_filter1d(X, size=w, axis=-1, mode="wrap")

    def _params(self):
        return {"windows": self.windows, "weights": self._w.tolist()}


class CompositeSampler(TransformSampler):
    """Apply ``samplers`` one after another (first one innermost).

    Atoms are enumerated lexicographically with the first sampler's index
    varying slowest.
    """

    kind = "composite"

    def __init__(self, samplers):
        if not samplers:
            raise ValidationError("composite needs at least one sampler")
        self.samplers = list(samplers)
        self._finite = all(s.enumerable for s in self.samplers)
        if self._finite:
            self._sizes = tuple(s.n_atoms for s in self.samplers)

    @property
    def n_atoms(self):
        return math.prod(self._sizes) if self._finite else None

    def weights(self):
        w = np.ones(1)
        for s in self.samplers:
            w = np.outer(w, s.weights()).ravel()
        return w

    def apply_atom(self, X, atom):
        parts = np.unravel_index(atom, self._sizes)
        for s, a in zip(self.samplers, parts):
            X = s.apply_atom(X, int(a))
        return X

    def draw(self, X, rng):
        for s in self.samplers:
            X = s.draw(X, rng)
        return X

    def draw_atoms(self, size, rng):
        if not self._finite:
            raise ValidationError("composite contains a continuous sampler")
        parts = [s.draw_atoms(size, rng) for s in self.samplers]
        return np.ravel_multi_index(parts, self._sizes)

    def _params(self):
        return {"samplers": [s.to_json() for s in self.samplers]}


def _check_weights(weights, n):
    if n < 1:
        raise ValidationError("need at least one atom")
    w = np.full(n, 1.0 / n) if weights is None else np.asarray(weights, dtype=float)
    if w.shape != (n,) or w.min() < 0 or abs(w.sum() - 1.0) > ROW_SUM_TOL:
        raise ValidationError("weights must be nonnegative, one per atom, summing to 1")
    return w


_SAMPLERS = {
    cls.kind: cls
    for cls in (
        IdentitySampler,
        AdditiveNoiseSampler,
        CyclicShiftSampler,
        ScaleSampler,
        BlurSampler,
        CompositeSampler,
    )
}


def make_sampler(kind: str, **params) -> TransformSampler:
    """Construct a sampler from its kind name and parameters.

    Composite samplers take ``samplers``: a list of sampler objects or of
    ``{"kind": ..., "params": {...}}`` dictionaries.
    """
    if kind not in _SAMPLERS:
        raise ValidationError(f"unknown sampler kind {kind!r}; choose from {sorted(_SAMPLERS)}")
    if kind == "composite":
        subs = [
            s if isinstance(s, TransformSampler) else sampler_from_json(s)
            for s in params.get("samplers", [])
        ]
        return CompositeSampler(subs)
    try:
        return _SAMPLERS[kind](**params)
    except TypeError as exc:
        raise ValidationError(f"bad parameters for {kind}: {exc}") from None


def sampler_from_json(obj) -> TransformSampler:
    if not isinstance(obj, dict) or "kind" not in obj:
        raise ValidationError("sampler must be an object with a 'kind' field")
    return make_sampler(obj["kind"], **obj.get("params", {}))


def enumerate_support(sampler: TransformSampler, x):
    """Weighted atoms ``[(z, p), ...]`` of ``T(x)`` in lexicographic order."""
    return sampler.support(x)


def load_matrix_csv(path, space):
    return AugmentationMatrix.from_csv(Path(path), space)
