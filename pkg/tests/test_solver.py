"""Dual maximization, its certificates, and the logistic-regression bridge."""

import numpy as np
import pytest
from scipy import optimize

import oracles
from weaksup import (
    Bounds,
    Multipliers,
    SolverOptions,
    VoteMatrix,
    approx_error_bound,
    best_approximator,
    build_constraint_system,
    constraint_image,
    ds_advantage_threshold,
    dual_gradient,
    dual_objective,
    exp_family_predict,
    lr_form,
    lr_objective,
    lr_to_constraints,
    solve,
)
from weaksup.core import ConstraintSystem
from weaksup.metrics import kl_sum
from weaksup.synth import counterexample_instance

TIGHT = SolverOptions(tol=1e-10)


def random_instance(rng, n, p, k, eps_scale=0.05):
    """System plus feasible bounds centered on a random labeling's image."""
    vm = oracles.random_votes(rng, n, p, k)
    sys_ = build_constraint_system(vm)
    z = oracles.random_labeling(rng, n, k)
    b = constraint_image(sys_, z)
    eps = np.full(sys_.m, eps_scale)
    return sys_, Bounds(b, eps), z


class TestDualObjective:
    def test_zero_multipliers_give_max_entropy_value(self):
        inst = counterexample_instance()
        sys_ = build_constraint_system(inst.votes)
        bd = Bounds(np.array([16 / 22, 12 / 22, 0.5, 0.5]), np.zeros(4))
        mult = Multipliers(np.zeros(4), np.zeros(4))
        np.testing.assert_allclose(
            dual_objective(sys_, bd, mult), -22 * np.log(2), rtol=1e-13
        )

    def test_matches_dense_oracle(self):
        rng = np.random.default_rng(20)
        vm = oracles.random_votes(rng, 3, 2, 2)
        sys_ = build_constraint_system(vm)
        z = oracles.random_labeling(rng, 3, 2)
        bd = Bounds(constraint_image(sys_, z), np.full(sys_.m, 0.1))
        dense = oracles.dense_constraint_matrix(vm)
        for _ in range(20):
            lo = rng.random(sys_.m)
            up = rng.random(sys_.m)
            want = oracles.dual_value_dense(dense, 3, 2, bd.b, bd.eps, lo, up)
            got = dual_objective(sys_, bd, Multipliers(lo, up))
            np.testing.assert_allclose(got, want, rtol=1e-12)

    def test_negative_multiplier_rejected(self):
        rng = np.random.default_rng(21)
        sys_, bd, _ = random_instance(rng, 3, 2, 2)
        with pytest.raises(ValueError):
            dual_objective(sys_, bd, Multipliers(np.full(sys_.m, -0.1), np.zeros(sys_.m)))

    def test_concave_along_segments(self):
        rng = np.random.default_rng(22)
        sys_, bd, _ = random_instance(rng, 5, 3, 3)
        for _ in range(20):
            m1 = Multipliers(rng.random(sys_.m), rng.random(sys_.m))
            m2 = Multipliers(rng.random(sys_.m), rng.random(sys_.m))
            mid = Multipliers((m1.lower + m2.lower) / 2, (m1.upper + m2.upper) / 2)
            f_mid = dual_objective(sys_, bd, mid)
            f_avg = (dual_objective(sys_, bd, m1) + dual_objective(sys_, bd, m2)) / 2
            assert f_mid >= f_avg - 1e-10


class TestDualGradient:
    def test_zero_point_formula(self):
        rng = np.random.default_rng(23)
        sys_, bd, _ = random_instance(rng, 4, 2, 3)
        g = dual_gradient(sys_, bd, Multipliers(np.zeros(sys_.m), np.zeros(sys_.m)))
        image = constraint_image(sys_, np.full((4, 3), 1 / 3))
        np.testing.assert_allclose(g.lower, bd.b - bd.eps - image, atol=1e-14)
        np.testing.assert_allclose(g.upper, image - bd.b - bd.eps, atol=1e-14)

    def test_matches_central_differences(self):
        rng = np.random.default_rng(24)
        for trial in range(5):
            sys_, bd, _ = random_instance(rng, 4, 2, 2)
            m = sys_.m
            x0 = rng.random(2 * m) * 0.5

            def f(x):
                return dual_objective(sys_, bd, Multipliers(x[:m], x[m:]))

            g = dual_gradient(sys_, bd, Multipliers(x0[:m], x0[m:]))
            analytic = np.concatenate([g.lower, g.upper])
            numeric = oracles.central_diff(f, x0, 1e-6)
            scale = np.maximum(np.abs(analytic), 1.0)
            np.testing.assert_allclose(
                analytic / scale, numeric / scale, atol=1e-5,
                err_msg=f"trial {trial}",
            )

    def test_closed_form_weights_are_stationary(self):
        # the hand-derived optimum: all four partial derivatives vanish
        inst = counterexample_instance()
        sys_ = build_constraint_system(inst.votes)
        theta = inst.exact_weights()
        g = exp_family_predict(sys_, theta)
        resid = np.array([16 / 22, 12 / 22, 0.5, 0.5]) - constraint_image(sys_, g)
        assert np.max(np.abs(resid)) <= 1e-12


class TestSolve:
    def test_vacuous_bounds_max_entropy(self):
        rng = np.random.default_rng(25)
        vm = oracles.random_votes(rng, 5, 3, 3)
        sys_ = build_constraint_system(vm)
        bd = Bounds(np.full(sys_.m, 0.5), np.ones(sys_.m))
        sol = solve(sys_, bd)
        assert sol.converged
        np.testing.assert_allclose(sol.weights, 0.0, atol=1e-9)
        np.testing.assert_allclose(sol.prediction, 1 / 3, atol=1e-9)
        np.testing.assert_allclose(sol.value, -5 * np.log(3), rtol=1e-9)

    def test_counterexample_exact_bounds(self):
        inst = counterexample_instance()
        sys_ = build_constraint_system(inst.votes)
        bd = Bounds(np.array([16 / 22, 12 / 22, 0.5, 0.5]), np.zeros(4))
        sol = solve(sys_, bd, TIGHT)
        assert sol.converged
        np.testing.assert_allclose(
            sol.prediction, inst.exact_prediction(), atol=1e-6
        )

    def test_value_matches_grid_oracle(self):
        rng = np.random.default_rng(26)
        for trial in range(3):
            vm = oracles.random_votes(rng, 2, 2, 2, abstain_prob=0.2)
            sys_ = build_constraint_system(vm)
            z = oracles.random_labeling(rng, 2, 2)
            b = constraint_image(sys_, z)
            bd = Bounds(b, np.full(sys_.m, 0.15))
            sol = solve(sys_, bd)
            assert sol.converged
            dense = oracles.dense_constraint_matrix(vm)
            want = oracles.entropy_game_grid(dense, b, bd.eps, step=1e-3)
            np.testing.assert_allclose(sol.value, want, atol=1e-3,
                                       err_msg=f"trial {trial}")

    def test_solution_certificates(self):
        # prediction in P, value equals own entropy, weak duality vs samples
        rng = np.random.default_rng(27)
        for trial in range(5):
            n, p, k = 5, 3, 2
            sys_, bd, z = random_instance(rng, n, p, k, eps_scale=0.08)
            sol = solve(sys_, bd)
            assert sol.converged, f"trial {trial}"
            img = constraint_image(sys_, sol.prediction)
            assert np.all(img >= bd.b - bd.eps - 1e-6)
            assert np.all(img <= bd.b + bd.eps + 1e-6)
            ent = float(np.sum(sol.prediction * np.log(sol.prediction)))
            np.testing.assert_allclose(sol.value, ent, atol=1e-8)
            dense = oracles.dense_constraint_matrix(_votes_back(sys_))
            for zs in oracles.sample_polytope(rng, dense, bd.b, bd.eps, z, 30):
                assert np.sum(zs * np.log(np.maximum(zs, 1e-300))) >= sol.value - 1e-9

    def test_prediction_weights_value_coherence(self):
        rng = np.random.default_rng(28)
        sys_, bd, _ = random_instance(rng, 6, 3, 3)
        sol = solve(sys_, bd)
        np.testing.assert_allclose(
            sol.prediction, exp_family_predict(sys_, sol.weights), atol=1e-12
        )
        np.testing.assert_allclose(
            sol.value, dual_objective(sys_, bd, sol.multipliers), atol=1e-10
        )

    def test_deterministic(self):
        rng = np.random.default_rng(29)
        sys_, bd, _ = random_instance(rng, 6, 3, 2)
        a = solve(sys_, bd)
        b = solve(sys_, bd)
        assert np.array_equal(a.weights, b.weights)
        assert np.array_equal(a.prediction, b.prediction)
        assert a.value == b.value and a.iterations == b.iterations

    def test_infeasible_bounds_reported_by_cap(self):
        # class frequencies forced to sum past 1: empty polytope
        vm = VoteMatrix([[1], [2], [1], [2]], k=2)
        sys_ = build_constraint_system(vm)
        bd = Bounds(np.array([0.5, 0.9, 0.9]), np.zeros(3))
        sol = solve(sys_, bd, SolverOptions(weight_cap=100.0))
        assert not sol.converged
        assert sol.capped

    def test_mismatched_bounds_length(self):
        vm = VoteMatrix([[1], [2]], k=2)
        sys_ = build_constraint_system(vm)
        with pytest.raises(ValueError):
            solve(sys_, Bounds(np.array([0.5]), np.array([0.0])))


class TestBestApproximator:
    def test_family_member_recovered(self):
        rng = np.random.default_rng(30)
        vm = oracles.random_votes(rng, 6, 3, 2)
        sys_ = build_constraint_system(vm)
        eta = exp_family_predict(sys_, rng.normal(size=sys_.m))
        sol = best_approximator(sys_, eta, TIGHT)
        assert sol.converged
        assert kl_sum(eta, sol.prediction) < 1e-8

    def test_image_matching(self):
        rng = np.random.default_rng(31)
        vm = oracles.random_votes(rng, 7, 3, 3)
        sys_ = build_constraint_system(vm)
        eta = oracles.random_labeling(rng, 7, 3)
        sol = best_approximator(sys_, eta, TIGHT)
        assert sol.converged
        np.testing.assert_allclose(
            constraint_image(sys_, sol.prediction),
            constraint_image(sys_, eta),
            atol=1e-6,
        )

    def test_beats_random_probes(self):
        rng = np.random.default_rng(32)
        vm = oracles.random_votes(rng, 5, 2, 2)
        sys_ = build_constraint_system(vm)
        eta = oracles.random_labeling(rng, 5, 2)
        sol = best_approximator(sys_, eta, TIGHT)
        d_star = kl_sum(eta, sol.prediction)
        for _ in range(100):
            probe = exp_family_predict(sys_, rng.normal(size=sys_.m) * 3)
            assert d_star <= kl_sum(eta, probe) + 1e-10

    def test_counterexample_ground_truth(self):
        from weaksup import one_hot_labels

        inst = counterexample_instance()
        sys_ = build_constraint_system(inst.votes)
        eta = one_hot_labels(inst.labels, 2)
        sol = best_approximator(sys_, eta, TIGHT)
        np.testing.assert_allclose(sol.prediction, inst.exact_prediction(), atol=1e-6)

    def test_pythagorean_identity(self):
        # d(eta, g_theta) = d(eta, g*) + d(g*, g_theta) when A g* = A eta
        rng = np.random.default_rng(33)
        vm = oracles.random_votes(rng, 6, 3, 2)
        sys_ = build_constraint_system(vm)
        eta = oracles.random_labeling(rng, 6, 2)
        sol = best_approximator(sys_, eta, TIGHT)
        assert sol.converged
        g_star = sol.prediction
        base = kl_sum(eta, g_star)
        for _ in range(50):
            theta = rng.normal(size=sys_.m) * 2
            g_t = exp_family_predict(sys_, theta)
            lhs = kl_sum(eta, g_t)
            rhs = base + kl_sum(g_star, g_t)
            np.testing.assert_allclose(lhs, rhs, atol=1e-8)


class TestApproxErrorBound:
    def test_zero_widths(self):
        bd = Bounds(np.array([0.5, 0.5]), np.zeros(2))
        assert approx_error_bound(bd, np.array([3.0, -4.0])) == (0.0, 0.0)

    def test_uniform_eps_formula(self):
        bd = Bounds(np.array([0.5, 0.5, 0.5]), np.full(3, 0.1))
        elementwise, uniform = approx_error_bound(bd, np.array([1.0, -2.0, 0.0]))
        np.testing.assert_allclose(elementwise, 2 * 0.1 * 3)
        np.testing.assert_allclose(uniform, 2 * 0.1 * 3)
        assert elementwise <= uniform + 1e-15

    def test_bound_dominates_measured_gap(self):
        # widen the box around A eta and watch the best approximator drift
        rng = np.random.default_rng(34)
        vm = oracles.random_votes(rng, 8, 3, 2)
        sys_ = build_constraint_system(vm)
        eta = oracles.random_labeling(rng, 8, 2)
        star = best_approximator(sys_, eta, TIGHT)
        assert star.converged
        b = constraint_image(sys_, eta)
        for eps in (0.0, 1e-3, 1e-2, 1e-1):
            bd = Bounds(b, np.full(sys_.m, eps))
            sol = solve(sys_, bd, TIGHT)
            assert sol.converged
            gap = kl_sum(star.prediction, sol.prediction)
            elementwise, uniform = approx_error_bound(bd, star.weights)
            assert gap <= elementwise + 1e-8
            assert gap <= uniform + 1e-8

    def test_reference_weight_bound(self):
        # any family member certifies a bound on the solved prediction's loss
        rng = np.random.default_rng(35)
        vm = oracles.random_votes(rng, 6, 3, 2)
        sys_ = build_constraint_system(vm)
        eta = oracles.random_labeling(rng, 6, 2)
        b = constraint_image(sys_, eta)
        for eps in (1e-3, 1e-2):
            bd = Bounds(b, np.full(sys_.m, eps))
            sol = solve(sys_, bd, TIGHT)
            assert sol.converged
            lhs = kl_sum(eta, sol.prediction)
            for _ in range(20):
                ref = rng.normal(size=sys_.m) * 2
                g_ref = exp_family_predict(sys_, ref)
                rhs = kl_sum(eta, g_ref) + 2 * float(bd.eps @ np.abs(ref))
                assert lhs <= rhs + 1e-8


class TestDsAdvantageThreshold:
    def test_zero_when_plugin_equals_star(self):
        rng = np.random.default_rng(36)
        eta = oracles.random_labeling(rng, 5, 2)
        g_star = oracles.random_labeling(rng, 5, 2)
        theta = np.array([1.0, -2.0, 0.5])
        assert ds_advantage_threshold(eta, g_star, g_star, g_star, theta) == 0.0

    def test_counterexample_value(self):
        from weaksup import one_hot_labels

        inst = counterexample_instance()
        sys_ = build_constraint_system(inst.votes)
        eta = one_hot_labels(inst.labels, 2)
        sol = best_approximator(sys_, eta, TIGHT)
        g_star = sol.prediction
        g_ds_star = np.where(
            (inst.votes.votes == 1).all(axis=1)[:, None]
            | (inst.votes.votes == 2).all(axis=1)[:, None],
            0.0,
            0.0,
        )
        # plug-in prediction built by one EM sweep from the ground truth
        from weaksup.ocds import e_step, m_step

        params = m_step(inst.votes, eta)
        g_ds_star = e_step(inst.votes, params)
        got = ds_advantage_threshold(eta, g_ds_star, g_ds_star, g_star, sol.weights)
        want = (kl_sum(eta, g_ds_star) - kl_sum(eta, g_star)) / (
            2 * np.abs(sol.weights).sum()
        )
        np.testing.assert_allclose(got, want, rtol=1e-10)
        assert got > 0

    def test_sub_threshold_eps_preserves_advantage(self):
        # below the threshold the solved prediction stays closer than the
        # one-coin one
        from weaksup import one_hot_labels
        from weaksup.ocds import e_step, m_step

        inst = counterexample_instance()
        sys_ = build_constraint_system(inst.votes)
        eta = one_hot_labels(inst.labels, 2)
        sol = best_approximator(sys_, eta, TIGHT)
        params = m_step(inst.votes, eta)
        g_ds = e_step(inst.votes, params)
        thr = ds_advantage_threshold(eta, g_ds, g_ds, sol.prediction, sol.weights)
        eps = 0.5 * thr
        bd = Bounds(constraint_image(sys_, eta), np.full(sys_.m, eps))
        bf = solve(sys_, bd, TIGHT)
        assert bf.converged
        assert kl_sum(eta, bf.prediction) <= kl_sum(eta, g_ds) + 1e-10

    def test_zero_weights_infinite(self):
        rng = np.random.default_rng(37)
        eta = oracles.random_labeling(rng, 4, 2)
        g = oracles.random_labeling(rng, 4, 2)
        out = ds_advantage_threshold(eta, g, g, eta, np.zeros(3))
        assert np.isinf(out)


class TestLrForm:
    def test_zero_weights_zero_scores(self):
        rng = np.random.default_rng(38)
        vm = oracles.random_votes(rng, 4, 2, 3)
        sys_ = build_constraint_system(vm)
        _, _, scores = lr_form(sys_, np.zeros(sys_.m), 2)
        np.testing.assert_array_equal(scores, np.zeros(3))

    def test_grid_times_features_equals_block_transpose(self):
        rng = np.random.default_rng(39)
        vm = oracles.random_votes(rng, 5, 3, 3)
        sys_ = build_constraint_system(vm)
        dense = oracles.dense_constraint_matrix(vm)
        for _ in range(20):
            theta = rng.normal(size=sys_.m) * 3
            i = int(rng.integers(5))
            x_hat, grid, scores = lr_form(sys_, theta, i)
            assert x_hat.shape == (sys_.m * 3,)
            assert grid.shape == (3, sys_.m * 3)
            block = dense[:, i * 3 : (i + 1) * 3]
            np.testing.assert_allclose(grid @ x_hat, block.T @ theta, atol=1e-12)
            np.testing.assert_allclose(scores, block.T @ theta, atol=1e-12)

    def test_softmax_of_scores_is_prediction_row(self):
        rng = np.random.default_rng(40)
        vm = oracles.random_votes(rng, 5, 2, 2)
        sys_ = build_constraint_system(vm)
        theta = rng.normal(size=sys_.m)
        g = exp_family_predict(sys_, theta)
        for i in range(5):
            _, _, scores = lr_form(sys_, theta, i)
            soft = np.exp(scores - scores.max())
            soft /= soft.sum()
            np.testing.assert_allclose(soft, g[i], atol=1e-12)


class TestLrObjective:
    def test_vacuous_zero_weights(self):
        rng = np.random.default_rng(41)
        vm = oracles.random_votes(rng, 5, 2, 2)
        sys_ = build_constraint_system(vm)
        eta = oracles.random_labeling(rng, 5, 2)
        bd = Bounds(constraint_image(sys_, eta), np.ones(sys_.m))
        got = lr_objective(sys_, eta, bd, np.zeros(sys_.m))
        np.testing.assert_allclose(got, 5 * np.log(2), rtol=1e-12)

    def test_negates_dual(self):
        rng = np.random.default_rng(42)
        vm = oracles.random_votes(rng, 6, 3, 3)
        sys_ = build_constraint_system(vm)
        eta = oracles.random_labeling(rng, 6, 3)
        bd = Bounds(constraint_image(sys_, eta), np.full(sys_.m, 0.05))
        for _ in range(50):
            theta = rng.normal(size=sys_.m) * 2
            mult = Multipliers(np.maximum(theta, 0), np.maximum(-theta, 0))
            np.testing.assert_allclose(
                lr_objective(sys_, eta, bd, theta),
                -dual_objective(sys_, bd, mult),
                atol=1e-10,
            )

    def test_solver_weights_minimize(self):
        rng = np.random.default_rng(43)
        vm = oracles.random_votes(rng, 5, 2, 2)
        sys_ = build_constraint_system(vm)
        eta = oracles.random_labeling(rng, 5, 2)
        bd = Bounds(constraint_image(sys_, eta), np.full(sys_.m, 0.02))
        sol = solve(sys_, bd, TIGHT)
        assert sol.converged
        best = lr_objective(sys_, eta, bd, sol.weights)
        for _ in range(100):
            probe = sol.weights + rng.normal(size=sys_.m)
            assert best <= lr_objective(sys_, eta, bd, probe) + 1e-9


class TestLrToConstraints:
    def test_constant_feature_reduces_to_class_matching(self):
        rng = np.random.default_rng(44)
        eta = oracles.random_labeling(rng, 4, 2)
        sys_, bd = lr_to_constraints(np.ones((4, 1)), eta, 0.0)
        assert sys_.m == 2
        np.testing.assert_allclose(bd.b, eta.sum(axis=0))
        np.testing.assert_array_equal(bd.eps, [0.0, 0.0])
        # each row is a repeated basis vector
        dense = sys_.matrix.toarray()
        np.testing.assert_allclose(dense[0], np.tile([1.0, 0.0], 4))
        np.testing.assert_allclose(dense[1], np.tile([0.0, 1.0], 4))

    def test_cross_solve_matches_direct_minimization(self):
        # generic dual solve vs scipy on the split-variable lasso objective
        rng = np.random.default_rng(45)
        n, d, k = 6, 2, 2
        features = rng.normal(size=(n, d))
        eta = oracles.random_labeling(rng, n, k)
        c = 0.05
        sys_, bd = lr_to_constraints(features, eta, c)
        sol = solve(sys_, bd, SolverOptions(tol=1e-9, weight_cap=1e6))
        assert sol.converged

        dk = d * k

        def objective(uv):
            w = (uv[:dk] - uv[dk:]).reshape(d, k)
            scores = features @ w
            shifted = scores - scores.max(axis=1, keepdims=True)
            logz = np.log(np.exp(shifted).sum(axis=1)) + scores.max(axis=1)
            ce = float(logz.sum() - (eta * scores).sum())
            return ce + c * float(uv.sum())

        res = optimize.minimize(
            objective,
            np.zeros(2 * dk),
            method="L-BFGS-B",
            bounds=[(0.0, None)] * (2 * dk),
            options={"ftol": 1e-15, "gtol": 1e-12, "maxiter": 20000},
        )
        np.testing.assert_allclose(-sol.value, res.fun, atol=1e-6)

    def test_large_regularization_flattens(self):
        rng = np.random.default_rng(46)
        features = rng.normal(size=(5, 2))
        eta = oracles.random_labeling(rng, 5, 2)
        sys_, bd = lr_to_constraints(features, eta, 1000.0)
        sol = solve(sys_, bd)
        assert sol.converged
        np.testing.assert_allclose(sol.weights, 0.0, atol=1e-8)
        np.testing.assert_allclose(sol.prediction, 0.5, atol=1e-8)


def _votes_back(sys_: ConstraintSystem) -> VoteMatrix:
    """Reconstruct the vote matrix from accuracy rows (tests only)."""
    n, k = sys_.n, sys_.k
    votes = np.zeros((n, sys_.total_rules), dtype=int)
    dense = sys_.matrix.toarray()
    for row, j in enumerate(sys_.kept_rules):
        block = dense[row].reshape(n, k)
        pts, classes = np.nonzero(block)
        votes[pts, j] = classes + 1
    return VoteMatrix(votes, k)
