"""Losses, KL machinery, and loss decompositions.

Every prediction's total KL loss against the target labeling splits into a
model part (the family's best approximator falls short of the target) and
approximation parts (the actual prediction falls short of the best
approximator).  For the one-coin EM prediction the approximation part splits
again: a plug-in gap that survives even at the empirical parameters, plus a
parameter-estimation gap with a closed form over vote-pattern distributions.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from . import ocds
from .core import VoteMatrix, check_labeling


def kl_sum(mu, nu) -> float:
    """Sum over points of row-wise KL(mu_i, nu_i).

    Conventions: 0 log 0 = 0; positive mass against a zero yields +inf
    (returned, never raised).
    """
    a = np.asarray(mu, dtype=float)
    b = np.asarray(nu, dtype=float)
    if a.shape != b.shape:
        raise ValueError("shapes disagree")
    with np.errstate(divide="ignore", invalid="ignore"):
        terms = np.where(a > 0, a * np.log(a / b), 0.0)
    return float(terms.sum())


@dataclass(frozen=True)
class LossReport:
    """Average log, 0-1, and Brier losses over n points."""

    log_loss: float
    zero_one: float
    brier: float
    n: int


def evaluate(g, eta) -> LossReport:
    """Score a prediction against a (possibly soft) target labeling.

    The 0-1 loss hardens both sides by argmax, ties to the lowest class
    index, and counts mismatches.  A zero predicted probability under target
    mass sends the log loss to +inf rather than raising.
    """
    pred = check_labeling(g)
    target = check_labeling(eta, pred.shape[0], pred.shape[1])
    n = pred.shape[0]
    with np.errstate(divide="ignore", invalid="ignore"):
        ll = -float(np.where(target > 0, target * np.log(pred), 0.0).sum()) / n
    zero_one = float(np.mean(pred.argmax(axis=1) != target.argmax(axis=1)))
    brier = float(((pred - target) ** 2).sum()) / n
    return LossReport(ll, zero_one, brier, n)


@dataclass(frozen=True)
class LossSplit:
    """total = model + approx split of one prediction's KL loss."""

    total: float
    model: float
    approx: float


@dataclass(frozen=True)
class EmLossSplit:
    """KL loss split of a one-coin prediction.

    ``approx_plugin`` is what the one-E-step construction loses at the
    empirical parameters themselves; ``approx_est`` is the further movement
    from using other (EM-fitted or supplied) parameters, and may be
    negative.  total = model + approx_plugin + approx_est exactly.
    """

    total: float
    model: float
    approx_plugin: float
    approx_est: float


def loss_decomposition(eta, g, g_star) -> LossSplit:
    """Split d(eta, g) into model and approximation parts.

    Valid when ``g_star`` is the best approximator of ``eta`` and ``g`` lies
    in the same family; the parts must then telescope, and a violation
    beyond 1e-6 raises because it signals a bad ``g_star``.
    """
    total = kl_sum(eta, g)
    model = kl_sum(eta, g_star)
    approx = kl_sum(g_star, g)
    if np.isfinite(total) and np.isfinite(model) and np.isfinite(approx):
        if abs(total - (model + approx)) > 1e-6:
            raise ValueError(
                "loss split identity failed; g_star is not the best "
                "approximator of eta (or g left the family)"
            )
    return LossSplit(total, model, approx)


def em_loss_decomposition(eta, g_em, g_em_plugin, g_star) -> EmLossSplit:
    """Split d(eta, g_em) for a one-coin prediction.

    ``g_em_plugin`` must be the one-coin E step at the empirical parameters
    of ``eta``; ``g_star`` the best approximator.
    """
    total = kl_sum(eta, g_em)
    model = kl_sum(eta, g_star)
    at_plugin = kl_sum(eta, g_em_plugin)
    return EmLossSplit(total, model, at_plugin - model, total - at_plugin)


@dataclass(frozen=True)
class PatternTable:
    """Mass per distinct ensemble vote pattern, in lexicographic order.

    ``mass`` is the empirical frequency (sums to 1) or the model's
    per-pattern normalizer, depending on how the table was built; ``counts``
    always holds the empirical pattern counts.
    """

    patterns: tuple[tuple[int, ...], ...]
    mass: np.ndarray
    counts: np.ndarray

    def __post_init__(self):
        for name in ("mass", "counts"):
            arr = np.ascontiguousarray(getattr(self, name))
            arr.setflags(write=False)
            object.__setattr__(self, name, arr)


def _patterns(votes: VoteMatrix):
    return np.unique(votes.votes, axis=0, return_index=True, return_counts=True)


def pattern_distribution(votes: VoteMatrix, params: ocds.CoinParams | None = None) -> PatternTable:
    """Empirical pattern frequencies, or the model's pattern normalizers.

    With ``params`` the mass of a pattern is the one-coin normalizer (total
    unnormalized posterior mass) at one representative point showing it;
    without, it is the pattern's frequency among the n points.
    """
    pats, first, counts = _patterns(votes)
    if params is None:
        mass = counts / votes.n
    else:
        scores = ocds._log_scores(votes, params)
        mass = np.exp(scores[first]).sum(axis=1)
    return PatternTable(tuple(map(tuple, pats)), mass, counts)


def _kl_vec(p, q) -> float:
    with np.errstate(divide="ignore", invalid="ignore"):
        terms = np.where(p > 0, p * np.log(p / q), 0.0)
    return float(terms.sum())


def em_estimation_gap(votes: VoteMatrix, eta, params: ocds.CoinParams) -> float:
    """Closed form of the parameter-estimation gap of a one-coin prediction.

    Equals d(eta, e_step(params)) - d(eta, e_step(empirical params)) without
    forming either prediction: n times the prior KL plus coverage-weighted
    per-rule binary KLs plus the difference of pattern-distribution KLs.
    Parameters must be strictly interior.
    """
    target = check_labeling(eta, votes.n, votes.k)
    acc = params.accuracy[votes.coverage > 0]
    freq = params.class_freq
    if np.any(~(acc > 0) | ~(acc < 1)) or np.any(~(freq > 0) | ~(freq < 1)):
        raise ValueError("estimation gap needs strictly interior parameters")
    emp = ocds.m_step(votes, target)

    prior_kl = _kl_vec(emp.class_freq, params.class_freq)

    covered = np.flatnonzero(votes.coverage > 0)
    rule_kl = 0.0
    for j in covered:
        b_emp = emp.accuracy[j]
        b_par = params.accuracy[j]
        pair_emp = np.array([b_emp, 1.0 - b_emp])
        pair_par = np.array([b_par, 1.0 - b_par])
        rule_kl += (votes.coverage[j] / votes.n) * _kl_vec(pair_emp, pair_par)

    empirical = pattern_distribution(votes)
    z_emp = pattern_distribution(votes, emp).mass
    z_par = pattern_distribution(votes, params).mass
    z_star = empirical.mass
    pattern_kl = _kl_vec(z_star, z_emp) - _kl_vec(z_star, z_par)

    return votes.n * (prior_kl + rule_kl + pattern_kl)
