"""Interval bounds on rule accuracies and class frequencies from a labeled sample.

Each constraint row gets its own Wilson score interval at the requested
confidence (per-constraint, not simultaneous).  The labeled sample may come
from a different pool than the points being labeled, so the resulting box
can miss the deployment-time moments; the solver's divergence guard covers
that case.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np
from scipy.special import ndtri

from .core import ABSTAIN, Bounds, VoteMatrix


@dataclass(frozen=True)
class LabeledSample:
    """Point indices (0-based) paired with their true classes (1-based)."""

    indices: np.ndarray
    labels: np.ndarray

    def __post_init__(self):
        idx = np.asarray(self.indices, dtype=np.int64)
        lab = np.asarray(self.labels, dtype=np.int64)
        if idx.ndim != 1 or lab.shape != idx.shape:
            raise ValueError("indices and labels must be 1-D vectors of equal length")
        for name, arr in (("indices", idx), ("labels", lab)):
            arr = np.ascontiguousarray(arr)
            arr.setflags(write=False)
            object.__setattr__(self, name, arr)

    @property
    def v(self) -> int:
        return self.indices.shape[0]


def wilson(successes: int, trials: int, confidence: float = 0.95) -> tuple[float, float]:
    """Wilson score interval as a (center, half_width) pair, clipped to [0, 1].

    Callers with zero trials must widen to the vacuous interval themselves.
    """
    if trials < 1:
        raise ValueError("wilson needs at least one trial")
    if not (0 <= successes <= trials):
        raise ValueError("successes must lie in 0..trials")
    if not (0.0 < confidence < 1.0):
        raise ValueError("confidence must lie strictly between 0 and 1")
    z = float(ndtri((1.0 + confidence) / 2.0))
    p_hat = successes / trials
    denom = 1.0 + z * z / trials
    center = (p_hat + z * z / (2.0 * trials)) / denom
    half = (z / denom) * np.sqrt(p_hat * (1.0 - p_hat) / trials + z * z / (4.0 * trials * trials))
    lo = max(0.0, center - half)
    hi = min(1.0, center + half)
    return (lo + hi) / 2.0, (hi - lo) / 2.0


def estimate_bounds(
    votes: VoteMatrix, sample: LabeledSample, confidence: float = 0.95
) -> Bounds:
    """Estimate the constraint box from a labeled sample.

    Rows follow the constraint system built from ``votes``: one Wilson
    interval per covered rule on its accuracy over the sampled points where
    it votes, then one per class on the class frequency over the whole
    sample.  A covered rule that abstains on every sampled point gets the
    vacuous interval (0.5, 0.5) so row counts stay aligned.
    """
    if sample.v == 0:
        raise ValueError("cannot estimate bounds from an empty sample")
    if sample.indices.min() < 0 or sample.indices.max() >= votes.n:
        raise ValueError("sample indices out of range")
    if sample.labels.min() < 1 or sample.labels.max() > votes.k:
        raise ValueError("sample labels must lie in 1..k")
    kept = np.flatnonzero(votes.coverage > 0)
    if kept.size == 0:
        raise ValueError("every rule abstains everywhere; no constraints to bound")
    sub = votes.votes[sample.indices]
    b = np.empty(kept.size + votes.k)
    eps = np.empty_like(b)
    for r, j in enumerate(kept):
        voted = sub[:, j] != ABSTAIN
        trials = int(voted.sum())
        if trials == 0:
            b[r], eps[r] = 0.5, 0.5
            continue
        hits = int((sub[voted, j] == sample.labels[voted]).sum())
        b[r], eps[r] = wilson(hits, trials, confidence)
    for ell in range(votes.k):
        hits = int((sample.labels == ell + 1).sum())
        b[kept.size + ell], eps[kept.size + ell] = wilson(hits, sample.v, confidence)
    return Bounds(b, eps)
