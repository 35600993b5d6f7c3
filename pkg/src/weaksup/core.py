"""Core data model for rule-based weak supervision.

Conventions used everywhere in the package:

* classes are the 1-based integers ``1..k``; the integer 0 (:data:`ABSTAIN`)
  marks a rule that declines to vote on a point,
* a soft labeling is an ``(n, k)`` float array whose rows are probability
  vectors,
* the constraint system turns votes into moment constraints on the unknown
  labeling: one row per covered rule (its expected accuracy) followed by one
  row per class (its expected frequency).
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np
from scipy import sparse

ABSTAIN = 0


def _frozen(arr: np.ndarray) -> np.ndarray:
    out = np.ascontiguousarray(arr)
    out.setflags(write=False)
    return out


class VoteMatrix:
    """Hard votes of ``p`` rules on ``n`` points.

    Entries are 1-based class indices; ``ABSTAIN`` (0) marks a withheld vote.
    Instances are immutable: the underlying array is write-protected.

    Parameters
    ----------
    votes : array-like of int, shape (n, p)
    k : int, optional
        Number of classes.  Inferred as the maximum observed value when
        omitted; must be at least 2 either way.
    """

    def __init__(self, votes, k: int | None = None):
        arr = np.array(votes, dtype=np.int64)
        if arr.ndim != 2:
            raise ValueError("votes must be a 2-D array of shape (n, p)")
        n, p = arr.shape
        if n < 1 or p < 1:
            raise ValueError("need at least one point and one rule")
        lo = int(arr.min())
        hi = int(arr.max())
        if lo < 0:
            raise ValueError("votes must be 0 (abstain) or 1..k")
        if k is None:
            if hi < 2:
                raise ValueError(
                    "cannot infer the class count from votes alone; pass k >= 2"
                )
            k = hi
        k = int(k)
        if k < 2:
            raise ValueError("k must be at least 2")
        if hi > k:
            raise ValueError(f"vote value {hi} exceeds class count k={k}")
        self.votes = _frozen(arr)
        self.n = n
        self.p = p
        self.k = k
        # per-rule count of non-abstain votes
        self.coverage = _frozen((arr != ABSTAIN).sum(axis=0))

    def __eq__(self, other) -> bool:
        return (
            isinstance(other, VoteMatrix)
            and self.k == other.k
            and np.array_equal(self.votes, other.votes)
        )

    def __repr__(self) -> str:
        return f"VoteMatrix(n={self.n}, p={self.p}, k={self.k})"


@dataclass(frozen=True)
class ConstraintSystem:
    """Sparse moment-constraint matrix over flattened soft labelings.

    ``matrix`` has shape ``(m, n*k)`` with the labeling flattened row-major.
    For systems built from votes, the first ``p`` rows are rule-accuracy
    constraints (value ``1/n_j`` at the voted class of each covered point)
    and the last ``k`` rows are class-frequency constraints (value ``1/n``).
    Rules that abstain everywhere are dropped; ``kept_rules`` records the
    original index of each accuracy row.  Generalized systems built from
    arbitrary matrices carry no rule bookkeeping (``kept_rules is None``).
    """

    matrix: sparse.csr_matrix
    n: int
    k: int
    kept_rules: np.ndarray | None
    coverage: np.ndarray | None
    total_rules: int | None

    @property
    def m(self) -> int:
        return self.matrix.shape[0]

    @property
    def p(self) -> int:
        """Number of rule-accuracy rows (0 for generalized systems)."""
        return 0 if self.kept_rules is None else len(self.kept_rules)

    @classmethod
    def from_matrix(cls, matrix, n: int, k: int) -> "ConstraintSystem":
        """Wrap an arbitrary constraint matrix with no rule bookkeeping."""
        mat = sparse.csr_matrix(matrix)
        if mat.shape[1] != n * k:
            raise ValueError("matrix must have n*k columns")
        return cls(mat, int(n), int(k), None, None, None)


@dataclass(frozen=True)
class Bounds:
    """Interval constraints: centers ``b`` and half-widths ``eps``.

    Entries follow the constraint-row order of the system they pair with.
    Centers may lie outside [0, 1] for generalized systems.
    """

    b: np.ndarray
    eps: np.ndarray

    def __post_init__(self):
        b = _frozen(np.asarray(self.b, dtype=float))
        eps = _frozen(np.asarray(self.eps, dtype=float))
        if b.ndim != 1 or eps.shape != b.shape:
            raise ValueError("b and eps must be 1-D vectors of equal length")
        if not (np.all(np.isfinite(b)) and np.all(np.isfinite(eps))):
            raise ValueError("bounds must be finite")
        if np.any(eps < 0):
            raise ValueError("eps must be nonnegative")
        object.__setattr__(self, "b", b)
        object.__setattr__(self, "eps", eps)

    @classmethod
    def exact(cls, b) -> "Bounds":
        """Zero-width bounds pinning the constraints to ``b`` exactly."""
        b = np.asarray(b, dtype=float)
        return cls(b, np.zeros_like(b))

    @property
    def m(self) -> int:
        return self.b.shape[0]


def check_labeling(g, n: int | None = None, k: int | None = None) -> np.ndarray:
    """Validate a soft labeling and return it as a float array.

    Rows must sum to 1 within 1e-12 with entries in [0, 1].
    """
    arr = np.asarray(g, dtype=float)
    if arr.ndim != 2:
        raise ValueError("a soft labeling must be a 2-D (n, k) array")
    if n is not None and arr.shape[0] != n:
        raise ValueError(f"expected {n} rows, got {arr.shape[0]}")
    if k is not None and arr.shape[1] != k:
        raise ValueError(f"expected {k} columns, got {arr.shape[1]}")
    if not np.all(np.isfinite(arr)):
        raise ValueError("labeling entries must be finite")
    if arr.min() < 0.0 or arr.max() > 1.0 + 1e-12:
        raise ValueError("labeling entries must lie in [0, 1]")
    if np.max(np.abs(arr.sum(axis=1) - 1.0)) > 1e-12:
        raise ValueError("labeling rows must sum to 1")
    return arr


def one_hot_labels(labels, k: int) -> np.ndarray:
    """Turn hard 1-based labels into a one-hot soft labeling."""
    y = np.asarray(labels, dtype=np.int64)
    if y.ndim != 1:
        raise ValueError("labels must be a 1-D vector")
    if y.min() < 1 or y.max() > k:
        raise ValueError("labels must lie in 1..k")
    out = np.zeros((y.shape[0], k))
    out[np.arange(y.shape[0]), y - 1] = 1.0
    return out


def encode_one_hot(votes: VoteMatrix, rule: int, point: int) -> np.ndarray:
    """One-hot encoding of one vote; the zero vector for an abstention.

    Indices are 0-based.
    """
    if not (0 <= rule < votes.p and 0 <= point < votes.n):
        raise IndexError("rule or point index out of range")
    out = np.zeros(votes.k)
    v = votes.votes[point, rule]
    if v != ABSTAIN:
        out[v - 1] = 1.0
    return out


def build_constraint_system(votes: VoteMatrix) -> ConstraintSystem:
    """Assemble the sparse accuracy/frequency constraint matrix.

    Rules that abstain on every point are dropped (their accuracy row would
    divide by zero); the surviving original indices land in ``kept_rules``.
    """
    kept = np.flatnonzero(votes.coverage > 0)
    if kept.size == 0:
        raise ValueError("every rule abstains everywhere; no constraints to build")
    n, k = votes.n, votes.k
    rows, cols, vals = [], [], []
    for r, j in enumerate(kept):
        pts = np.flatnonzero(votes.votes[:, j] != ABSTAIN)
        rows.append(np.full(pts.size, r))
        cols.append(pts * k + (votes.votes[pts, j] - 1))
        vals.append(np.full(pts.size, 1.0 / votes.coverage[j]))
    all_pts = np.arange(n)
    for ell in range(k):
        rows.append(np.full(n, kept.size + ell))
        cols.append(all_pts * k + ell)
        vals.append(np.full(n, 1.0 / n))
    mat = sparse.csr_matrix(
        (np.concatenate(vals), (np.concatenate(rows), np.concatenate(cols))),
        shape=(kept.size + k, n * k),
    )
    return ConstraintSystem(
        mat, n, k, _frozen(kept), _frozen(votes.coverage[kept]), votes.p
    )


def constraint_image(sys: ConstraintSystem, g) -> np.ndarray:
    """Apply the constraint matrix: rule accuracies and class frequencies of ``g``."""
    arr = np.asarray(g, dtype=float)
    if arr.shape != (sys.n, sys.k):
        raise ValueError(f"labeling must have shape ({sys.n}, {sys.k})")
    return sys.matrix @ arr.ravel()


def weight_scores(sys: ConstraintSystem, theta) -> np.ndarray:
    """Per-point, per-class scores ``A_i^T theta`` of a weight vector."""
    th = np.asarray(theta, dtype=float)
    if th.shape != (sys.m,):
        raise ValueError(f"weights must be a vector of length {sys.m}")
    return (sys.matrix.T @ th).reshape(sys.n, sys.k)


def exp_family_predict(sys: ConstraintSystem, theta) -> np.ndarray:
    """Softmax prediction of a weight vector, max-subtracted for overflow safety."""
    th = np.asarray(theta, dtype=float)
    if not np.all(np.isfinite(th)):
        raise ValueError("weights must be finite")
    s = weight_scores(sys, th)
    s -= s.max(axis=1, keepdims=True)
    g = np.exp(s)
    g /= g.sum(axis=1, keepdims=True)
    return g


def majority_vote(votes: VoteMatrix) -> np.ndarray:
    """Soft majority vote: per-point vote shares, uniform where all abstain."""
    counts = np.zeros((votes.n, votes.k))
    for ell in range(votes.k):
        counts[:, ell] = (votes.votes == ell + 1).sum(axis=1)
    total = counts.sum(axis=1, keepdims=True)
    uniform = np.full(votes.k, 1.0 / votes.k)
    with np.errstate(invalid="ignore", divide="ignore"):
        g = np.where(total > 0, counts / total, uniform)
    return g
