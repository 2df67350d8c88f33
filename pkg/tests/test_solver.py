import numpy as np
import pytest
from scipy.optimize import minimize
from scipy.special import expit

import Services.solver as solver
from schemas import FairnessConstraintSpec, Metric, ModelKind, Scope, SolverConfig
from Services.errors import DataError, InfeasibleConstraintError, SingularSystemError, SolverConvergenceError
from Services.fairness import ScopeBlock, ScopeRows, block_value, linear_constraint_vector, resolve_scope
from Services.graph import build_laplacian
from Services.losses import add_intercept, classifier_loss, lr_loss_grad
from Services.synthetic import make_symmetric_groups


def newton_fit(X, y, iters=50):
    """Unconstrained logistic regression oracle."""
    w = np.zeros(X.shape[1])
    for _ in range(iters):
        p = expit(X @ w)
        hessian = X.T @ (X * (p * (1 - p))[:, None])
        w = w - np.linalg.solve(hessian, X.T @ (p - y))
    return w


def labeled_block(X, z, y, c):
    return [ScopeBlock(ScopeRows(X, z, y), c, "labeled")]


@pytest.fixture
def logistic_data(rng):
    X = add_intercept(rng.normal(size=(50, 2)))
    y = (rng.random(50) < expit(X @ np.array([0.5, -0.5, 0.2]))).astype(int)
    z = (X[:, 0] + rng.normal(scale=0.5, size=50) > 0).astype(int)
    return X, y, z


def _graph(labeled, unlabeled, sigma=1.0):
    return build_laplacian(np.vstack([labeled.features, unlabeled.features]), labeled.n_rows, sigma)


class TestThresholdLabels:
    def test_boundary_maps_to_one(self):
        np.testing.assert_array_equal(solver.threshold_labels(np.array([0.5]), 0.5), [1])

    def test_out_of_range_values(self):
        np.testing.assert_array_equal(solver.threshold_labels(np.array([1.3, -0.2]), 0.5), [1, 0])

    def test_just_below_threshold(self):
        np.testing.assert_array_equal(solver.threshold_labels(np.full(3, 0.5 - 1e-9), 0.5), [0, 0, 0])

    def test_threshold_range(self):
        with pytest.raises(ValueError):
            solver.threshold_labels(np.array([0.2]), 1.0)


class TestSolveWConvex:
    def test_unconstrained_matches_newton_fit(self, logistic_data):
        X, y, z = logistic_data
        params = solver.solve_w_convex(X, y, labeled_block(X, z, y, float("inf")), ModelKind.LR, SolverConfig())
        np.testing.assert_allclose(params.w, newton_fit(X, y), atol=1e-4)

    def test_fit_unconstrained(self, logistic_data):
        X, y, _ = logistic_data
        params = solver.fit_unconstrained(X, y, ModelKind.LR, SolverConfig())
        np.testing.assert_allclose(params.w, newton_fit(X, y), atol=1e-4)

    def test_constant_sensitive_attribute_is_unconstrained(self, logistic_data):
        X, y, _ = logistic_data
        z = np.ones(50, dtype=int)
        constrained = solver.solve_w_convex(X, y, labeled_block(X, z, y, 0.0), ModelKind.LR, SolverConfig())
        np.testing.assert_allclose(constrained.w, newton_fit(X, y), atol=1e-4)

    def test_zero_threshold_is_feasible(self, logistic_data):
        X, y, z = logistic_data
        blocks = labeled_block(X, z, y, 0.0)
        params = solver.solve_w_convex(X, y, blocks, ModelKind.LR, SolverConfig())
        assert abs(linear_constraint_vector(blocks[0].rows) @ params.w) <= 1e-6

    def test_kkt_stationarity(self, logistic_data):
        X, y, z = logistic_data
        blocks = labeled_block(X, z, y, 0.01)
        params = solver.solve_w_convex(X, y, blocks, ModelKind.LR, SolverConfig())
        a = linear_constraint_vector(blocks[0].rows)
        _, grad = lr_loss_grad(params.w, X, y)
        # the gradient must be parallel to the active constraint normal
        multiplier = -(grad @ a) / (a @ a)
        assert np.max(np.abs(grad + multiplier * a)) / 50 <= 1e-5

    def test_active_constraint_costs_loss(self, logistic_data):
        X, y, z = logistic_data
        cfg = SolverConfig()
        free = solver.fit_unconstrained(X, y, ModelKind.LR, cfg)
        tight = solver.solve_w_convex(X, y, labeled_block(X, z, y, 0.0), ModelKind.LR, cfg)
        assert lr_loss_grad(tight.w, X, y)[0] >= lr_loss_grad(free.w, X, y)[0]

    def test_hinge_loss_zero_threshold(self, logistic_data):
        X, y, z = logistic_data
        blocks = labeled_block(X, z, y, 0.0)
        params = solver.solve_w_convex(X, y, blocks, ModelKind.SVM, SolverConfig())
        assert abs(linear_constraint_vector(blocks[0].rows) @ params.w) <= 1e-6

    def test_round_budget_exhausted(self, logistic_data):
        X, y, z = logistic_data
        cfg = SolverConfig(al_max_rounds=1)
        with pytest.raises(SolverConvergenceError) as excinfo:
            solver.solve_w_convex(X, y, labeled_block(X, z, y, 0.0), ModelKind.LR, cfg)
        assert excinfo.value.residual is not None


class TestConvexConcave:
    def test_inactive_constraint_matches_unconstrained_loss(self, logistic_data):
        X, y, z = logistic_data
        cfg = SolverConfig()
        params = solver.solve_w_ccp(X, y, labeled_block(X, z, y, 1e6), Metric.OMR, ModelKind.LR, cfg)
        unconstrained = newton_fit(X, y)
        assert lr_loss_grad(params.w, X, y)[0] == pytest.approx(lr_loss_grad(unconstrained, X, y)[0], abs=1e-3)

    def test_separable_symmetric_data_stops_after_one_iteration(self):
        data, _ = make_symmetric_groups(60, 2, seed=0, separable=True)
        X = add_intercept(data.features)
        rule = np.ones(2) / np.sqrt(2)
        # margins are at least 1 on the shifted data
        w_init = np.append(2 * rule, 0.0)
        blocks = labeled_block(X, data.sensitive, data.labels, 0.0)
        assert block_value(Metric.OMR, w_init, blocks[0]) == 0.0

        result = solver.run_ccp(X, data.labels, blocks, Metric.OMR, ModelKind.SVM, SolverConfig(), w_init=w_init)
        assert result.iterations == 1
        assert block_value(Metric.OMR, result.params.w, blocks[0]) == pytest.approx(0.0, abs=1e-8)

    @pytest.mark.parametrize("metric", [Metric.OMR, Metric.FPR, Metric.FNR])
    def test_tight_threshold_is_met(self, small_split, metric):
        labeled = small_split.labeled
        X = add_intercept(labeled.features)
        blocks = labeled_block(X, labeled.sensitive, labeled.labels, 0.002)
        result = solver.run_ccp(X, labeled.labels, blocks, metric, ModelKind.LR, SolverConfig())
        assert abs(block_value(metric, result.params.w, blocks[0])) <= 0.002 + 1e-4
        assert result.slack_trace[-1] <= 1e-4

    def test_slack_and_penalty_schedules(self, small_split):
        labeled = small_split.labeled
        X = add_intercept(labeled.features)
        cfg = SolverConfig(ccp_tau=0.05, ccp_mu=1.2)
        blocks = labeled_block(X, labeled.sensitive, labeled.labels, 0.0)
        result = solver.run_ccp(X, labeled.labels, blocks, Metric.OMR, ModelKind.LR, cfg)
        assert result.tau_trace[0] == 0.05
        for before, after in zip(result.tau_trace, result.tau_trace[1:]):
            assert after == pytest.approx(1.2 * before)
        for before, after in zip(result.slack_trace[1:], result.slack_trace[2:]):
            assert after <= before + 1e-6

    def test_slack_left_after_iteration_cap(self, small_split):
        labeled = small_split.labeled
        X = add_intercept(labeled.features)
        cfg = SolverConfig(ccp_tau=1e-6, ccp_max_iters=1)
        blocks = labeled_block(X, labeled.sensitive, labeled.labels, 0.0)
        with pytest.raises(InfeasibleConstraintError) as excinfo:
            solver.run_ccp(X, labeled.labels, blocks, Metric.OMR, ModelKind.LR, cfg)
        assert excinfo.value.threshold == 0.0


class TestSolveYu:
    def test_midpoint_between_opposite_labels(self):
        features = np.array([[-1.0], [1.0], [0.0]])
        lap = build_laplacian(features, n_labeled=2, sigma=1.0)
        X_u = add_intercept(features[2:])
        y_u = solver.solve_yu_closed_form(np.array([0.3, 0.1]), X_u, np.array([0, 1]), lap, alpha=1e6)
        assert y_u[0] == pytest.approx(0.5, abs=1e-6)

    def test_uninformative_classifier_gives_harmonic_solution(self, rng):
        features = rng.normal(size=(9, 2))
        lap = build_laplacian(features, n_labeled=5, sigma=1.0)
        y_l = np.array([0, 1, 1, 0, 1])
        y_u = solver.solve_yu_closed_form(np.zeros(3), add_intercept(features[5:]), y_l, lap, alpha=1.0)
        harmonic = -np.linalg.solve(lap.uu, lap.ul @ y_l)
        np.testing.assert_allclose(y_u, harmonic, atol=1e-6)

    @pytest.mark.parametrize("seed", range(5))
    def test_matches_numerical_minimizer(self, seed):
        rng = np.random.default_rng(seed)
        features = rng.normal(size=(13, 2))
        lap = build_laplacian(features, n_labeled=8, sigma=1.0)
        X = add_intercept(features)
        y_l = rng.integers(0, 2, size=8)
        w = rng.normal(size=3)
        alpha = 1.0

        def subproblem(y_u):
            y = np.concatenate([y_l, y_u])
            return solver.objective(w, X, y, lap, alpha)

        def gradient(y_u):
            y = np.concatenate([y_l, y_u])
            p = np.clip(expit(X[8:] @ w), 1e-12, 1 - 1e-12)
            return np.log1p(-p) - np.log(p) + 2 * alpha * (lap.laplacian @ y)[8:]

        oracle = minimize(subproblem, np.full(5, 0.5), jac=gradient, method="BFGS", options={"gtol": 1e-11})
        closed = solver.solve_yu_closed_form(w, X[8:], y_l, lap, alpha)
        np.testing.assert_allclose(closed, oracle.x, atol=1e-6)

    def test_stationarity_by_finite_differences(self, rng):
        features = rng.normal(size=(12, 3))
        lap = build_laplacian(features, n_labeled=7, sigma=1.5)
        X = add_intercept(features)
        y_l = rng.integers(0, 2, size=7)
        w = rng.normal(size=4)
        y_u = solver.solve_yu_closed_form(w, X[7:], y_l, lap, alpha=2.0)
        h = 1e-5
        for i in range(5):
            step = np.zeros(5)
            step[i] = h
            plus = solver.objective(w, X, np.concatenate([y_l, y_u + step]), lap, 2.0)
            minus = solver.objective(w, X, np.concatenate([y_l, y_u - step]), lap, 2.0)
            assert (plus - minus) / (2 * h) == pytest.approx(0.0, abs=1e-5)

    def test_hinge_loss_gradient_term(self, rng):
        features = rng.normal(size=(6, 2))
        lap = build_laplacian(features, n_labeled=3, sigma=1.0)
        X_u = add_intercept(features[3:])
        w = rng.normal(size=3)
        y_l = np.array([1, 0, 1])
        y_u = solver.solve_yu_closed_form(w, X_u, y_l, lap, 1.0, model=ModelKind.SVM, n_train=6)
        system = 2 * (lap.uu + 1e-8 * np.eye(3))
        rhs = -2 * lap.ul @ y_l + 2 * (X_u @ w) / 6
        np.testing.assert_allclose(y_u, np.linalg.solve(system, rhs), atol=1e-10)

    def test_block_mismatch(self, rng):
        lap = build_laplacian(rng.normal(size=(6, 2)), n_labeled=3, sigma=1.0)
        with pytest.raises(DataError):
            solver.solve_yu_closed_form(np.zeros(3), np.ones((2, 3)), np.array([0, 1, 1]), lap, 1.0)


class TestTrain:
    def _spec(self, metric=Metric.DISPARATE_IMPACT, scope=Scope.MIXED, c=0.05):
        c2 = c if scope is Scope.COMBINED else None
        return FairnessConstraintSpec(metric=metric, scope=scope, c=c, c2=c2)

    def test_constraint_holds_every_iteration(self, small_split, fast_solver):
        labeled, unlabeled = small_split.labeled, small_split.unlabeled
        report = solver.train(labeled, unlabeled, _graph(labeled, unlabeled), ModelKind.LR, self._spec(), fast_solver)
        assert report.iters == len(report.objective_trace) == len(report.constraint_trace)
        for values in report.constraint_trace:
            assert all(value.satisfied(1e-4) for value in values)
        assert report.y_u.shape == (unlabeled.n_rows,)
        assert set(np.unique(report.y_u)) <= {0, 1}

    def test_continuous_steps_do_not_increase_objective(self, small_split, fast_solver):
        labeled, unlabeled = small_split.labeled, small_split.unlabeled
        report = solver.train(labeled, unlabeled, _graph(labeled, unlabeled), ModelKind.LR, self._spec(), fast_solver)
        for step in report.steps:
            assert step.after_propagation <= step.after_w + 1e-6 * max(1.0, abs(step.after_w))
        for previous, current in zip(report.steps, report.steps[1:]):
            assert current.after_w <= previous.after_threshold + 1e-6 * max(1.0, abs(previous.after_threshold))

    def test_deterministic(self, small_split, fast_solver):
        labeled, unlabeled = small_split.labeled, small_split.unlabeled
        lap = _graph(labeled, unlabeled)
        first = solver.train(labeled, unlabeled, lap, ModelKind.LR, self._spec(), fast_solver)
        second = solver.train(labeled, unlabeled, lap, ModelKind.LR, self._spec(), fast_solver)
        np.testing.assert_array_equal(first.w.w, second.w.w)
        np.testing.assert_array_equal(first.y_u, second.y_u)
        assert first.objective_trace == second.objective_trace

    def test_unlabeled_labels_are_never_read(self, small_split, fast_solver):
        labeled, unlabeled = small_split.labeled, small_split.unlabeled
        lap = _graph(labeled, unlabeled)
        flipped = unlabeled.model_copy(update={"labels": 1 - unlabeled.labels})
        first = solver.train(labeled, unlabeled, lap, ModelKind.LR, self._spec(), fast_solver)
        second = solver.train(labeled, flipped, lap, ModelKind.LR, self._spec(), fast_solver)
        np.testing.assert_array_equal(first.w.w, second.w.w)

    def test_zero_unlabeled_rows_is_the_supervised_fit(self, small_split, fast_solver):
        labeled = small_split.labeled
        empty = small_split.unlabeled.subset([])
        report = solver.train(labeled, empty, None, ModelKind.LR, self._spec(), fast_solver)
        assert report.scope is Scope.LABELED
        assert report.iters == 1
        assert report.y_u.size == 0

        X = add_intercept(labeled.features)
        blocks = resolve_scope(self._spec().supervised(), ScopeRows(X, labeled.sensitive, labeled.labels), None)
        expected = solver.solve_w_convex(X, labeled.labels, blocks, ModelKind.LR, fast_solver)
        np.testing.assert_allclose(report.w.w, expected.w)

    @pytest.mark.parametrize("scope", [Scope.LABELED, Scope.UNLABELED, Scope.COMBINED])
    def test_mistreatment_scopes(self, small_split, scope):
        labeled, unlabeled = small_split.labeled, small_split.unlabeled
        cfg = SolverConfig(max_outer_iters=3, ccp_max_iters=60)
        report = solver.train(labeled, unlabeled, _graph(labeled, unlabeled), ModelKind.LR,
                              self._spec(Metric.FPR, scope, c=0.01), cfg)
        assert report.slack_trace
        for values in report.constraint_trace:
            assert all(value.satisfied(1e-4) for value in values)

    @pytest.mark.parametrize("model", [ModelKind.LR, ModelKind.SVM])
    @pytest.mark.parametrize("metric", [Metric.OMR, Metric.FNR])
    def test_mistreatment_on_mixed_scope(self, small_split, metric, model):
        labeled, unlabeled = small_split.labeled, small_split.unlabeled
        cfg = SolverConfig(max_outer_iters=3, ccp_max_iters=60)
        report = solver.train(labeled, unlabeled, _graph(labeled, unlabeled), model,
                              self._spec(metric, Scope.MIXED, c=0.005), cfg)
        assert report.scope is Scope.MIXED
        assert report.slack_trace
        for values in report.constraint_trace:
            assert len(values) == 1
            assert all(value.satisfied(1e-4) for value in values)

    def test_hinge_loss_model(self, small_split, fast_solver):
        labeled, unlabeled = small_split.labeled, small_split.unlabeled
        report = solver.train(labeled, unlabeled, _graph(labeled, unlabeled), ModelKind.SVM, self._spec(), fast_solver)
        assert np.isfinite(report.w.w).all()
        for values in report.constraint_trace:
            assert all(value.satisfied(1e-4) for value in values)

    def test_step_errors_carry_the_iteration(self, small_split, fast_solver, monkeypatch):
        labeled, unlabeled = small_split.labeled, small_split.unlabeled

        def singular(*args, **kwargs):
            raise SingularSystemError("propagation system is singular")

        monkeypatch.setattr(solver, "solve_yu_closed_form", singular)
        with pytest.raises(SingularSystemError) as excinfo:
            solver.train(labeled, unlabeled, _graph(labeled, unlabeled), ModelKind.LR, self._spec(), fast_solver)
        assert excinfo.value.iteration == 1
        assert str(excinfo.value).startswith("outer iteration 1:")

    def test_graph_must_match_parts(self, small_split, fast_solver):
        labeled, unlabeled = small_split.labeled, small_split.unlabeled
        lap = _graph(labeled, unlabeled.subset(np.arange(10)))
        with pytest.raises(DataError):
            solver.train(labeled, unlabeled, lap, ModelKind.LR, self._spec(), fast_solver)

    def test_objective_without_graph_is_the_loss(self, logistic_data):
        X, y, _ = logistic_data
        w = np.array([0.1, -0.2, 0.3])
        assert solver.objective(w, X, y, None, 1.0) == pytest.approx(classifier_loss(ModelKind.LR, w, X, y))
