"""Synthetic vote generation and the built-in EM-inconsistency instance.

The generator draws data from the one-coin model itself: a class prior from
a Dirichlet, per-rule accuracies from a Beta, then labels and votes.  The
posterior of the generating model is stored alongside the votes so
experiments can measure divergence from the true conditional distribution.

The counterexample instance is a fixed 22-point, 2-rule binary dataset on
which the game's best approximator of the true labels is provably not a
fixed point of one-coin EM; ``inconsistency_demo`` walks that argument
numerically.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from . import metrics, ocds
from .core import (
    VoteMatrix,
    build_constraint_system,
    one_hot_labels,
)
from .solver import DualSolution, SolverError, SolverOptions, best_approximator


def _frozen(arr: np.ndarray) -> np.ndarray:
    out = np.ascontiguousarray(arr)
    out.setflags(write=False)
    return out


@dataclass(frozen=True)
class SynthData:
    """One generated dataset plus everything needed to reproduce and score it.

    ``eta`` is the exact label posterior under ``params``, the generating
    parameters; ``labels`` are the true classes actually drawn.
    """

    votes: VoteMatrix
    labels: np.ndarray
    eta: np.ndarray
    params: ocds.CoinParams
    seed: int

    def __post_init__(self):
        object.__setattr__(self, "labels", _frozen(self.labels))
        object.__setattr__(self, "eta", _frozen(self.eta))

    @property
    def n(self) -> int:
        return self.votes.n


def generate(
    n: int,
    p: int = 3,
    k: int = 2,
    seed: int = 0,
    alpha=None,
    beta: tuple[float, float] = (2.0, 4.0 / 3.0),
    force_accuracy: float | None = None,
) -> SynthData:
    """Draw a dataset from the one-coin model.

    Draw order (one generator, seeded): class prior ~ Dirichlet(alpha),
    rule accuracies ~ Beta(*beta), labels, per-vote correctness uniforms
    (row-major), wrong-class offsets (row-major).  ``force_accuracy``
    replaces the drawn accuracies after the draw, so the label and vote
    streams are unchanged.  ``alpha`` may be a scalar or a length-k vector;
    default all-ones.
    """
    if n < 1 or p < 1 or k < 2:
        raise ValueError("need n >= 1, p >= 1, k >= 2")
    if alpha is None:
        alpha = np.ones(k)
    else:
        alpha = np.broadcast_to(np.asarray(alpha, dtype=float), (k,)).copy()
        if np.any(alpha <= 0):
            raise ValueError("Dirichlet concentration must be positive")
    a, bshape = float(beta[0]), float(beta[1])
    if a <= 0 or bshape <= 0:
        raise ValueError("Beta shape parameters must be positive")
    rng = np.random.default_rng(seed)
    w = rng.dirichlet(alpha)
    acc = rng.beta(a, bshape, size=p)
    if force_accuracy is not None:
        if not (0.0 <= force_accuracy <= 1.0):
            raise ValueError("force_accuracy must lie in [0, 1]")
        acc = np.full(p, float(force_accuracy))
    y = rng.choice(k, size=n, p=w) + 1
    correct = rng.random((n, p)) < acc
    offset = rng.integers(0, k - 1, size=(n, p))
    wrong = (y[:, None] + offset) % k + 1
    votes = VoteMatrix(np.where(correct, y[:, None], wrong), k)
    params = ocds.CoinParams(acc, w)
    eta = ocds.e_step(votes, params)
    return SynthData(votes, y, eta, params, seed)


def consistency_run(
    data: SynthData,
    prefixes=(100, 1000, 10000),
    opts: SolverOptions | None = None,
) -> list[tuple[int, float]]:
    """Average divergence of the best approximator on growing prefixes.

    For each prefix length, measures the rules' empirical accuracies and the
    class frequencies against the true labels, finds the family member
    matching those moments exactly, and reports its KL divergence from the
    generating posterior averaged over the prefix.  A solve that fails to
    converge raises :class:`SolverError`.
    """
    sizes = [int(s) for s in prefixes]
    if any(s < 1 or s > data.n for s in sizes):
        raise ValueError("prefix sizes must lie in 1..n")
    out = []
    for size in sizes:
        sub = VoteMatrix(data.votes.votes[:size], data.votes.k)
        sys = build_constraint_system(sub)
        target = one_hot_labels(data.labels[:size], sub.k)
        sol = best_approximator(sys, target, opts)
        if not sol.converged:
            raise SolverError(
                f"best approximator did not converge on prefix {size}"
                + (" (weights capped; constraints likely infeasible)" if sol.capped else "")
            )
        out.append((size, metrics.kl_sum(data.eta[:size], sol.prediction) / size))
    return out


_PATTERNS = ((1, 1), (1, 2), (2, 1), (2, 2))
_PATTERN_COUNTS = (7, 4, 4, 7)
_LABEL1_COUNTS = (5, 3, 1, 2)


@dataclass(frozen=True)
class Counterexample:
    """The fixed 22-point instance and its analytically known solution.

    Points are grouped by vote pattern in lexicographic order, class-1
    points first within each group.  ``label_counts[l-1][t]`` is the number
    of class-l points showing pattern ``patterns[t]``.
    """

    votes: VoteMatrix
    labels: np.ndarray
    patterns: tuple[tuple[int, int], ...]
    pattern_counts: tuple[int, ...]
    label_counts: tuple[tuple[int, ...], ...]

    def __post_init__(self):
        object.__setattr__(self, "labels", _frozen(self.labels))

    def exact_weights(self) -> np.ndarray:
        """Stationary dual weights of the best approximator of the labels.

        Derived by solving the per-pattern stationarity equations in closed
        form; the class block uses the canonical prior scaling, though any
        common shift of it leaves the prediction unchanged.
        """
        n = self.votes.n
        return np.array(
            [
                (n / 2.0) * np.log(15.0 / 2.0),
                (n / 2.0) * np.log(5.0 / 6.0),
                n * np.log(0.5),
                n * np.log(0.5),
            ]
        )

    def exact_prediction(self) -> np.ndarray:
        """Best approximator of the labels, one row per point."""
        class1 = dict(zip(self.patterns, (5 / 7, 3 / 4, 1 / 4, 2 / 7)))
        col = np.array([class1[tuple(row)] for row in self.votes.votes])
        return np.column_stack([col, 1.0 - col])


def counterexample_instance() -> Counterexample:
    """Materialize the fixed inconsistency instance."""
    rows = []
    labels = []
    for pattern, count, ones in zip(_PATTERNS, _PATTERN_COUNTS, _LABEL1_COUNTS):
        rows.extend([pattern] * count)
        labels.extend([1] * ones + [2] * (count - ones))
    label_counts = (
        tuple(_LABEL1_COUNTS),
        tuple(c - o for c, o in zip(_PATTERN_COUNTS, _LABEL1_COUNTS)),
    )
    return Counterexample(
        VoteMatrix(np.array(rows), 2),
        np.array(labels),
        _PATTERNS,
        _PATTERN_COUNTS,
        label_counts,
    )


@dataclass(frozen=True)
class InconsistencyReport:
    """One EM round applied to the game's best approximator.

    ``best_table`` and ``em_table`` hold per-pattern class probabilities
    (patterns in lexicographic order); ``expected_counts`` scales the EM
    table by the pattern counts.  ``moved`` flags displacement above 1e-3,
    the numeric witness that the best approximator is not an EM fixed
    point.
    """

    patterns: tuple[tuple[int, int], ...]
    pattern_counts: tuple[int, ...]
    best_table: np.ndarray
    em_table: np.ndarray
    expected_counts: np.ndarray
    displacement: float
    moved: bool
    solution: DualSolution


def inconsistency_demo(opts: SolverOptions | None = None) -> InconsistencyReport:
    """Show that one M+E round moves the best approximator.

    Solves for the best approximator of the true labels, re-estimates
    one-coin parameters from it, applies one E step, and tabulates both
    labelings per vote pattern.
    """
    inst = counterexample_instance()
    sys = build_constraint_system(inst.votes)
    opts = opts or SolverOptions(tol=1e-11)
    sol = best_approximator(sys, one_hot_labels(inst.labels, 2), opts)
    if not sol.converged:
        raise SolverError("best approximator did not converge on the built-in instance")
    g_star = sol.prediction
    params = ocds.m_step(inst.votes, g_star)
    g_em = ocds.e_step(inst.votes, params)

    pats, reps = np.unique(inst.votes.votes, axis=0, return_index=True)
    assert tuple(map(tuple, pats)) == inst.patterns
    best_table = g_star[reps]
    em_table = g_em[reps]
    expected = em_table * np.asarray(inst.pattern_counts)[:, None]
    displacement = float(np.max(np.abs(g_em - g_star)))
    return InconsistencyReport(
        inst.patterns,
        inst.pattern_counts,
        best_table,
        em_table,
        expected,
        displacement,
        displacement > 1e-3,
        sol,
    )
