"""One-coin Dawid-Skene model: EM and the weight-space equivalence maps.

Each rule is a biased coin: conditioned on the true label it votes correctly
with its own probability ``b_j`` and otherwise picks uniformly among the
other ``k - 1`` classes; abstentions carry no information.  The E step is
the label posterior under these assumptions, the M step re-estimates the
coin biases and the class prior, and the EM loop alternates the two from a
majority-vote start.

The model's one-E-step predictions all live inside the exponential family
used by the game solver; ``weights_from_params`` and ``params_from_weights``
translate between coin parameters and family weights.
"""

from __future__ import annotations

import warnings
from dataclasses import dataclass

import numpy as np

from .core import ABSTAIN, ConstraintSystem, VoteMatrix, check_labeling, majority_vote


@dataclass(frozen=True)
class CoinParams:
    """Per-rule correctness probabilities and the class prior.

    ``accuracy[j]`` is NaN for a rule that never votes (its accuracy is
    unidentifiable); ``class_freq`` is a probability vector over classes.
    """

    accuracy: np.ndarray
    class_freq: np.ndarray

    def __post_init__(self):
        acc = np.asarray(self.accuracy, dtype=float)
        freq = np.asarray(self.class_freq, dtype=float)
        if acc.ndim != 1 or freq.ndim != 1:
            raise ValueError("accuracy and class_freq must be 1-D vectors")
        defined = acc[~np.isnan(acc)]
        if defined.size and (defined.min() < 0 or defined.max() > 1):
            raise ValueError("accuracies must lie in [0, 1]")
        if freq.min() < 0 or freq.max() > 1 or abs(freq.sum() - 1.0) > 1e-9:
            raise ValueError("class_freq must be a probability vector")
        for name, arr in (("accuracy", acc), ("class_freq", freq)):
            arr = np.ascontiguousarray(arr)
            arr.setflags(write=False)
            object.__setattr__(self, name, arr)

    @property
    def p(self) -> int:
        return self.accuracy.shape[0]

    @property
    def k(self) -> int:
        return self.class_freq.shape[0]


@dataclass(frozen=True)
class EmResult:
    """Final EM state plus the per-iteration observed-data log-likelihoods."""

    prediction: np.ndarray
    params: CoinParams
    log_likelihood: tuple[float, ...]
    iterations: int
    converged: bool


def _check_pair(votes: VoteMatrix, params: CoinParams) -> None:
    if params.p != votes.p:
        raise ValueError(f"params carry {params.p} rules, votes carry {votes.p}")
    if params.k != votes.k:
        raise ValueError(f"params carry {params.k} classes, votes carry {votes.k}")
    bad = np.isnan(params.accuracy) & (votes.coverage > 0)
    if np.any(bad):
        raise ValueError("NaN accuracy for a rule that votes")


def _log_scores(votes: VoteMatrix, params: CoinParams) -> np.ndarray:
    """Unnormalized per-class log posterior; abstentions contribute nothing."""
    n, k = votes.n, votes.k
    acc = params.accuracy
    with np.errstate(divide="ignore"):
        log_hit = np.log(acc)
        log_miss = np.log((1.0 - acc) / (k - 1))
        log_w = np.log(params.class_freq)
    voted = votes.votes != ABSTAIN
    scores = np.empty((n, k))
    for ell in range(k):
        hit = votes.votes == ell + 1
        miss = voted & ~hit
        terms = np.where(hit, log_hit, 0.0) + np.where(miss, log_miss, 0.0)
        scores[:, ell] = log_w[ell] + terms.sum(axis=1)
    return scores


def e_step(votes: VoteMatrix, params: CoinParams) -> np.ndarray:
    """Label posterior at fixed parameters, computed in log space.

    A point whose votes are jointly impossible under boundary parameters
    (zero mass on every class) falls back to a uniform row with a warning.
    """
    _check_pair(votes, params)
    scores = _log_scores(votes, params)
    mx = scores.max(axis=1)
    dead = ~np.isfinite(mx)
    if np.any(dead):
        warnings.warn(
            f"{int(dead.sum())} point(s) have zero posterior mass under these "
            "parameters; falling back to uniform rows",
            stacklevel=2,
        )
        scores[dead] = 0.0
        mx = np.where(dead, 0.0, mx)
    g = np.exp(scores - mx[:, None])
    g /= g.sum(axis=1, keepdims=True)
    return g


def m_step(votes: VoteMatrix, g) -> CoinParams:
    """Maximum-likelihood parameters at a fixed posterior.

    Accuracy of rule j is the posterior mass it places on its own votes,
    averaged over the points it covers (NaN when it covers none); the class
    prior is the mean posterior row.  These are the matching coordinates of
    the constraint image of ``g``.
    """
    arr = check_labeling(g, votes.n, votes.k)
    voted = votes.votes != ABSTAIN
    idx = np.clip(votes.votes - 1, 0, votes.k - 1)
    agree = np.where(voted, arr[np.arange(votes.n)[:, None], idx], 0.0)
    with np.errstate(invalid="ignore"):
        accuracy = agree.sum(axis=0) / votes.coverage
    return CoinParams(accuracy, arr.mean(axis=0))


def log_likelihood(votes: VoteMatrix, params: CoinParams) -> float:
    """Observed-data log-likelihood of the votes at the given parameters."""
    _check_pair(votes, params)
    scores = _log_scores(votes, params)
    mx = scores.max(axis=1)
    safe = np.isfinite(mx)
    out = np.full(votes.n, -np.inf)
    out[safe] = mx[safe] + np.log(np.exp(scores[safe] - mx[safe, None]).sum(axis=1))
    return float(out.sum())


def run_em(
    votes: VoteMatrix,
    init=None,
    tol: float = 1e-8,
    max_iter: int = 1000,
) -> EmResult:
    """Alternate M and E steps from a majority-vote start.

    Convergence is measured on the posterior itself: the loop stops once the
    max-abs change of ``g`` drops to ``tol``.  The recorded log-likelihood
    sequence is non-decreasing up to float rounding.
    """
    if tol < 0 or max_iter < 1:
        raise ValueError("tol must be >= 0 and max_iter >= 1")
    g = majority_vote(votes) if init is None else check_labeling(init, votes.n, votes.k)
    lls: list[float] = []
    converged = False
    iterations = 0
    params = None
    for iterations in range(1, max_iter + 1):
        params = m_step(votes, g)
        g_new = e_step(votes, params)
        lls.append(log_likelihood(votes, params))
        delta = float(np.max(np.abs(g_new - g)))
        g = g_new
        if delta <= tol:
            converged = True
            break
    return EmResult(g, params, tuple(lls), iterations, converged)


def weights_from_params(params: CoinParams, sys: ConstraintSystem) -> np.ndarray:
    """Family weights whose softmax prediction equals the E step.

    Rule j maps to its coverage times the log odds of a correct vote against
    any single wrong class, ``n_j log(b_j (k-1) / (1 - b_j))``; class ``l``
    maps to ``n log(w_l)``.  Strictly interior parameters only: a boundary
    accuracy or frequency has no finite weight.
    """
    if sys.kept_rules is None:
        raise ValueError("weight maps need a system built from votes")
    if params.p != sys.total_rules or params.k != sys.k:
        raise ValueError("params do not match the constraint system")
    acc = params.accuracy[sys.kept_rules]
    freq = params.class_freq
    if np.any(~(acc > 0) | ~(acc < 1)) or np.any(~(freq > 0) | ~(freq < 1)):
        raise ValueError("boundary parameters have no finite weight representation")
    theta = np.empty(sys.m)
    theta[: sys.p] = sys.coverage * np.log(acc * (sys.k - 1) / (1.0 - acc))
    theta[sys.p :] = sys.n * np.log(freq)
    return theta


def params_from_weights(theta, sys: ConstraintSystem) -> CoinParams:
    """Inverse of :func:`weights_from_params` under the same scaling.

    Rules dropped from the system keep a NaN accuracy.  The class block of
    ``theta`` is only determined up to a common shift, so the prior comes
    back through a softmax.
    """
    if sys.kept_rules is None:
        raise ValueError("weight maps need a system built from votes")
    th = np.asarray(theta, dtype=float)
    if th.shape != (sys.m,):
        raise ValueError(f"weights must be a vector of length {sys.m}")
    if not np.all(np.isfinite(th)):
        raise ValueError("weights must be finite")
    acc = 1.0 / (1.0 + (sys.k - 1) * np.exp(-th[: sys.p] / sys.coverage))
    accuracy = np.full(sys.total_rules, np.nan)
    accuracy[sys.kept_rules] = acc
    scaled = th[sys.p :] / sys.n
    scaled = scaled - scaled.max()
    freq = np.exp(scaled)
    freq /= freq.sum()
    return CoinParams(accuracy, freq)
