"""Dual solver for the adversarial labeling game.

The game pits a prediction ``g`` against an adversary choosing any labeling
``z`` whose rule accuracies and class frequencies stay inside interval
bounds; the value being maximized is the worst-case log likelihood
``min_z z . log g``.  Its concave dual is

    (lower - upper) . b - (lower + upper) . eps - sum_i logsumexp(A_i^T theta)

over nonnegative multipliers, with ``theta = lower - upper`` and the primal
prediction recovered as the softmax of the weighted scores.  ``lower``
multiplies the lower interval constraints ``A z >= b - eps`` and ``upper``
the upper ones ``A z <= b + eps``.

The maximizer is projected gradient ascent with an Armijo backtracking line
search.  Float64 objective differences underflow once the gradient is near
1e-8, well before the tolerances the downstream identities need, so a stalled
line search hands off to a polish phase: damped Newton on ``theta`` for
zero-width bounds, box-constrained L-BFGS-B otherwise.
"""

from __future__ import annotations

import math
from dataclasses import dataclass
from typing import NamedTuple

import numpy as np
from scipy import optimize, sparse

from . import metrics
from .core import Bounds, ConstraintSystem, check_labeling, constraint_image, exp_family_predict, weight_scores


class SolverError(RuntimeError):
    """Raised by callers that cannot proceed past a non-converged solve."""


class Multipliers(NamedTuple):
    """Nonnegative dual multipliers for the lower and upper interval bounds."""

    lower: np.ndarray
    upper: np.ndarray


@dataclass(frozen=True)
class SolverOptions:
    """Tuning knobs for :func:`solve`.

    ``tol`` bounds the projected-gradient infinity norm at convergence.
    ``weight_cap`` guards against an unbounded dual (empty constraint
    polytope); ``None`` means ``50 * n``.  All choices are deterministic.
    """

    tol: float = 1e-8
    max_iter: int = 50_000
    weight_cap: float | None = None

    def __post_init__(self):
        if not (self.tol > 0):
            raise ValueError("tol must be positive")
        if self.max_iter < 1:
            raise ValueError("max_iter must be at least 1")


@dataclass(frozen=True)
class DualSolution:
    """Converged (or diagnosed) state of one dual maximization."""

    multipliers: Multipliers
    weights: np.ndarray
    prediction: np.ndarray
    value: float
    iterations: int
    converged: bool
    grad_norm: float
    capped: bool = False


_ARMIJO_SLOPE = 1e-4
_STEP_SHRINK = 0.5
_STEP_GROW = 2.0
_PLATEAU_SPAN = 10


def _logsumexp_rows(scores: np.ndarray) -> np.ndarray:
    mx = scores.max(axis=1)
    return mx + np.log(np.exp(scores - mx[:, None]).sum(axis=1))


def _check_mult(bounds: Bounds, mult: Multipliers) -> tuple[np.ndarray, np.ndarray]:
    lower = np.asarray(mult.lower, dtype=float)
    upper = np.asarray(mult.upper, dtype=float)
    if lower.shape != (bounds.m,) or upper.shape != (bounds.m,):
        raise ValueError(f"multipliers must be vectors of length {bounds.m}")
    if np.any(lower < 0) or np.any(upper < 0):
        raise ValueError("multipliers must be nonnegative")
    return lower, upper


def dual_objective(sys: ConstraintSystem, bounds: Bounds, mult: Multipliers) -> float:
    """Concave dual value at the given multipliers."""
    if bounds.m != sys.m:
        raise ValueError("bounds length does not match the constraint system")
    lower, upper = _check_mult(bounds, mult)
    theta = lower - upper
    lse = _logsumexp_rows(weight_scores(sys, theta))
    return float(theta @ bounds.b - (lower + upper) @ bounds.eps - lse.sum())


def dual_gradient(sys: ConstraintSystem, bounds: Bounds, mult: Multipliers) -> Multipliers:
    """Analytic gradient of :func:`dual_objective` in (lower, upper)."""
    if bounds.m != sys.m:
        raise ValueError("bounds length does not match the constraint system")
    lower, upper = _check_mult(bounds, mult)
    g = exp_family_predict(sys, lower - upper)
    image = sys.matrix @ g.ravel()
    return Multipliers(bounds.b - bounds.eps - image, image - bounds.b - bounds.eps)


def _plateaued(history: list[float], tol: float) -> bool:
    ref = history[max(0, len(history) - 1 - _PLATEAU_SPAN)]
    cur = history[-1]
    return abs(cur - ref) <= tol * max(1.0, abs(cur))


def _ascend(x0, value_grad, project, theta_inf, cap, opts):
    """Projected gradient ascent with Armijo backtracking.

    ``value_grad`` returns (objective, gradient); ``project`` clips a
    candidate back to the feasible set (identity when unconstrained);
    ``theta_inf`` maps an iterate to its weight infinity-norm for the
    divergence guard.  Returns (x, iterations, converged, capped, stalled).
    """
    x = x0
    f, grad = value_grad(x)
    history = [f]
    step = 1.0
    it = 0
    converged = capped = stalled = False
    while it < opts.max_iter:
        it += 1
        if theta_inf(x) > cap:
            capped = True
            break
        pg = np.where((x > 0) | (grad > 0), grad, 0.0)
        plateaued = _plateaued(history, opts.tol)
        if np.max(np.abs(pg), initial=0.0) <= opts.tol and plateaued:
            converged = True
            break
        if plateaued and len(history) > _PLATEAU_SPAN:
            # float64 objective differences underflow before tight gradient
            # tolerances are reachable by first-order steps; hand off
            stalled = True
            break
        t = step
        accepted = False
        for _ in range(80):
            xn = project(x + t * grad)
            d = xn - x
            fn, gn = value_grad(xn)
            if fn >= f + _ARMIJO_SLOPE * (grad @ d) and np.any(d):
                accepted = True
                break
            t *= _STEP_SHRINK
            if t < 1e-18:
                break
        if not accepted:
            stalled = True
            break
        x, f, grad = xn, fn, gn
        step = t * _STEP_GROW
        history.append(f)
        if len(history) > _PLATEAU_SPAN + 1:
            del history[0]
    return x, it, converged, capped, stalled


def _curvature(sys: ConstraintSystem, g: np.ndarray) -> np.ndarray:
    """Hessian of the log-partition term: A C A^T with per-point softmax covariances."""
    scaled = sys.matrix.multiply(g.ravel()).tocsr()
    second = (scaled @ sys.matrix.T).toarray()
    # sum the scaled columns within each point's class block
    block = sparse.kron(sparse.eye(sys.n, format="csr"), np.ones((sys.k, 1)))
    w = np.asarray((scaled @ block).todense())
    return second - w @ w.T


def _polish_exact(sys, b, theta, cap, opts):
    """Damped Newton on theta for zero-width bounds, accepting on gradient decrease."""
    g = exp_family_predict(sys, theta)
    grad = b - sys.matrix @ g.ravel()
    gn = np.max(np.abs(grad), initial=0.0)
    for _ in range(100):
        if gn <= opts.tol * 1e-3 or np.max(np.abs(theta), initial=0.0) > cap:
            break
        if sys.n * sys.m > 50_000_000:
            break
        step = np.linalg.lstsq(_curvature(sys, g), grad, rcond=None)[0]
        improved = False
        for _ in range(40):
            cand = theta + step
            g_c = exp_family_predict(sys, cand)
            grad_c = b - sys.matrix @ g_c.ravel()
            gn_c = np.max(np.abs(grad_c), initial=0.0)
            if gn_c < gn:
                theta, g, grad, gn = cand, g_c, grad_c, gn_c
                improved = True
                break
            step *= 0.5
        if not improved:
            break
    return theta


def _polish_box(sys, bounds, x0, opts, budget):
    """High-precision finish on the box: L-BFGS-B on the negated dual."""
    m = sys.m

    def neg(x):
        mult = Multipliers(x[:m], x[m:])
        f = dual_objective(sys, bounds, mult)
        g = dual_gradient(sys, bounds, mult)
        return -f, -np.concatenate([g.lower, g.upper])

    res = optimize.minimize(
        neg,
        x0,
        jac=True,
        method="L-BFGS-B",
        bounds=[(0.0, None)] * (2 * m),
        options={"maxiter": budget, "ftol": 1e-18, "gtol": opts.tol * 1e-2, "maxcor": 30},
    )
    return np.maximum(res.x, 0.0)


def _box_residuals(sys, bounds, theta):
    """Per-coordinate KKT residual of the signed representation, plus gradients."""
    g = exp_family_predict(sys, theta)
    image = sys.matrix @ g.ravel()
    lo = bounds.b - bounds.eps - image
    hi = image - bounds.b - bounds.eps
    res = np.where(
        theta > 0,
        np.abs(lo),
        np.where(theta < 0, np.abs(hi), np.maximum(np.maximum(lo, hi), 0.0)),
    )
    return res, lo, hi, g


def _polish_signed(sys, bounds, theta, opts):
    """Newton on the free coordinates of theta, signs frozen per iteration.

    The line search accepts on a drop of the max KKT residual, which stays
    computable at full precision where objective differences underflow.
    """
    res, lo, hi, g = _box_residuals(sys, bounds, theta)
    worst = res.max(initial=0.0)
    for _ in range(100):
        if worst <= opts.tol * 1e-2 or sys.n * sys.m > 50_000_000:
            break
        free = (theta != 0) | (lo > 0) | (hi > 0)
        if not np.any(free):
            break
        sign = np.where(theta != 0, np.sign(theta), np.where(lo > 0, 1.0, -1.0))
        grad = np.where(sign > 0, lo, -hi)
        idx = np.flatnonzero(free)
        curv = _curvature(sys, g)[np.ix_(idx, idx)]
        step = np.zeros(sys.m)
        step[idx] = np.linalg.lstsq(curv, grad[idx], rcond=None)[0]
        improved = False
        for _ in range(40):
            cand = theta + step
            res_c, lo_c, hi_c, g_c = _box_residuals(sys, bounds, cand)
            worst_c = res_c.max(initial=0.0)
            if worst_c < worst:
                theta, res, lo, hi, g, worst = cand, res_c, lo_c, hi_c, g_c, worst_c
                improved = True
                break
            step *= 0.5
        if not improved:
            break
    return theta


def _projected_grad_norm(x, grad):
    pg = np.where((x > 0) | (grad > 0), grad, 0.0)
    return float(np.max(np.abs(pg), initial=0.0))


def solve(sys: ConstraintSystem, bounds: Bounds, opts: SolverOptions | None = None) -> DualSolution:
    """Maximize the dual from zero multipliers and recover the prediction.

    Zero-width bounds collapse the box to a single free weight per row, so
    that case runs unconstrained in ``theta``.  A weight blowing past
    ``weight_cap`` is reported as ``converged=False, capped=True`` and is the
    signature of an empty constraint polytope.
    """
    opts = opts or SolverOptions()
    if bounds.m != sys.m:
        raise ValueError("bounds length does not match the constraint system")
    cap = opts.weight_cap if opts.weight_cap is not None else 50.0 * sys.n
    exact = not np.any(bounds.eps > 0)
    m = sys.m

    if exact:
        def value_grad(theta):
            scores = weight_scores(sys, theta)
            lse = _logsumexp_rows(scores)
            f = float(theta @ bounds.b - lse.sum())
            g = np.exp(scores - lse[:, None])
            return f, bounds.b - sys.matrix @ g.ravel()

        theta, it, converged, capped, _ = _ascend(
            np.zeros(m), value_grad, lambda v: v, lambda v: np.max(np.abs(v), initial=0.0), cap, opts
        )
        if not converged and not capped:
            theta = _polish_exact(sys, bounds.b, theta, cap, opts)
        capped = bool(np.max(np.abs(theta), initial=0.0) > cap)
        lower = np.maximum(theta, 0.0)
        upper = np.maximum(-theta, 0.0)
    else:
        def value_grad(x):
            mult = Multipliers(x[:m], x[m:])
            f = dual_objective(sys, bounds, mult)
            g = dual_gradient(sys, bounds, mult)
            return f, np.concatenate([g.lower, g.upper])

        def project(x):
            return np.maximum(x, 0.0)

        def theta_inf(x):
            return np.max(np.abs(x[:m] - x[m:]), initial=0.0)

        x, it, converged, capped, _ = _ascend(
            np.zeros(2 * m), value_grad, project, theta_inf, cap, opts
        )
        if not converged and not capped:
            x = _polish_box(sys, bounds, x, opts, max(1000, opts.max_iter - it))
            th = x[:m] - x[m:]
            if np.max(np.abs(th), initial=0.0) <= cap:
                th = _polish_signed(sys, bounds, th, opts)
            lower = np.maximum(th, 0.0)
            upper = np.maximum(-th, 0.0)
            capped = bool(np.max(np.abs(th), initial=0.0) > cap)
        else:
            # complementary representation: only theta matters once the
            # shared mass min(lower, upper) is removed, and removing it
            # never lowers the objective
            shift = np.minimum(x[:m], x[m:])
            lower = x[:m] - shift
            upper = x[m:] - shift

    mult = Multipliers(lower, upper)
    theta = lower - upper
    grad = dual_gradient(sys, bounds, mult)
    grad_norm = max(
        _projected_grad_norm(lower, grad.lower),
        _projected_grad_norm(upper, grad.upper),
    )
    converged = bool(grad_norm <= opts.tol) and not capped
    return DualSolution(
        multipliers=mult,
        weights=theta,
        prediction=exp_family_predict(sys, theta),
        value=dual_objective(sys, bounds, mult),
        iterations=it,
        converged=converged,
        grad_norm=grad_norm,
        capped=capped,
    )


def best_approximator(sys: ConstraintSystem, target, opts: SolverOptions | None = None) -> DualSolution:
    """KL-closest family member to ``target``: solve with ``b = A target``, zero widths.

    The result is unique and matches the target's constraint image.
    """
    arr = check_labeling(target, sys.n, sys.k)
    return solve(sys, Bounds.exact(constraint_image(sys, arr)), opts)


def approx_error_bound(bounds: Bounds, theta_star) -> tuple[float, float]:
    """Certified KL gap between exact-bound and interval-bound solutions.

    Returns ``(2 eps . |theta*|, 2 max(eps) ||theta*||_1)``; the first never
    exceeds the second.
    """
    th = np.abs(np.asarray(theta_star, dtype=float))
    if th.shape != (bounds.m,):
        raise ValueError("theta length does not match the bounds")
    tight = 2.0 * float(bounds.eps @ th)
    loose = 2.0 * float(bounds.eps.max(initial=0.0)) * float(th.sum())
    return tight, loose


def ds_advantage_threshold(eta, g_em, g_em_plugin, g_star, theta_star) -> float:
    """Largest bound half-width at which the game prediction is certified
    to lose no more than the one-coin EM prediction.

    The numerator stacks the EM prediction's two approximation gaps (plug-in
    at empirical parameters, then parameter estimation); the denominator is
    twice the L1 norm of the best approximator's weights.  Zero weights give
    an infinite threshold.
    """
    num = (
        metrics.kl_sum(eta, g_em_plugin)
        - metrics.kl_sum(eta, g_star)
        + metrics.kl_sum(eta, g_em)
        - metrics.kl_sum(eta, g_em_plugin)
    )
    den = 2.0 * float(np.abs(np.asarray(theta_star, dtype=float)).sum())
    if den == 0.0:
        return math.inf
    return max(num, 0.0) / den


def lr_form(sys: ConstraintSystem, theta, point: int) -> tuple[np.ndarray, np.ndarray, np.ndarray]:
    """Logistic-regression view of one point's scores.

    Returns the flattened per-point constraint block as a feature vector,
    the block-diagonal weight grid ``(theta_1 I_k, ..., theta_m I_k)``, and
    their product, which equals ``A_point^T theta``.
    """
    if not (0 <= point < sys.n):
        raise IndexError("point index out of range")
    th = np.asarray(theta, dtype=float)
    if th.shape != (sys.m,):
        raise ValueError(f"weights must be a vector of length {sys.m}")
    k = sys.k
    block = sys.matrix[:, point * k : (point + 1) * k].toarray()
    x_hat = block.ravel()
    grid = np.hstack([th[c] * np.eye(k) for c in range(sys.m)])
    return x_hat, grid, grid @ x_hat


def lr_objective(sys: ConstraintSystem, eta, bounds: Bounds, theta) -> float:
    """Regularized cross-entropy whose minimizer is the dual maximizer.

    Splits ``theta`` into its positive and negative parts and charges each
    the slack of the interval bound it leans on; equals the negated
    :func:`dual_objective` at those multipliers.
    """
    arr = check_labeling(eta, sys.n, sys.k)
    th = np.asarray(theta, dtype=float)
    lower = np.maximum(th, 0.0)
    upper = np.maximum(-th, 0.0)
    g = exp_family_predict(sys, th)
    with np.errstate(divide="ignore"):
        logg = np.log(g)
    ce = -float(np.where(arr > 0, arr * logg, 0.0).sum())
    b_star = constraint_image(sys, arr)
    return (
        ce
        + float(lower @ (b_star - (bounds.b - bounds.eps)))
        + float(upper @ (bounds.b + bounds.eps - b_star))
    )


def lr_to_constraints(features, eta, c: float) -> tuple[ConstraintSystem, Bounds]:
    """Recast L1-regularized multiclass logistic regression as a labeling game.

    Feature column ``c`` of ``X`` spawns ``k`` constraint rows whose block
    for point ``i`` is ``X[i, c] I_k``; the centers are the feature-weighted
    class masses of ``eta`` and every half-width equals the regularization
    strength.  Centers may lie outside [0, 1]: these are generalized
    constraints, not probabilities.
    """
    x = np.asarray(features, dtype=float)
    if x.ndim != 2:
        raise ValueError("features must be a 2-D (n, d) array")
    if c < 0:
        raise ValueError("regularization must be nonnegative")
    n, d = x.shape
    arr = check_labeling(eta)
    if arr.shape[0] != n:
        raise ValueError("features and eta disagree on n")
    k = arr.shape[1]
    rows, cols, vals = [], [], []
    pts = np.arange(n)
    for feat in range(d):
        for ell in range(k):
            rows.append(np.full(n, feat * k + ell))
            cols.append(pts * k + ell)
            vals.append(x[:, feat])
    mat = sparse.csr_matrix(
        (np.concatenate(vals), (np.concatenate(rows), np.concatenate(cols))),
        shape=(d * k, n * k),
    )
    gsys = ConstraintSystem.from_matrix(mat, n, k)
    b = mat @ arr.ravel()
    return gsys, Bounds(b, np.full(d * k, float(c)))
