import logging
from typing import List, NamedTuple, Optional

import cvxpy as cp
import numpy as np
from scipy.linalg import LinAlgError, cho_factor, cho_solve
from scipy.optimize import minimize

from schemas import (
    ConstraintValue,
    Dataset,
    FairnessConstraintSpec,
    GraphLaplacian,
    Metric,
    ModelKind,
    ModelParams,
    ObjectiveStep,
    Scope,
    SolverConfig,
    TrainReport,
)
from Services.errors import DataError, FairSSLError, InfeasibleConstraintError, SingularSystemError, SolverConvergenceError
from Services.fairness import (
    ScopeBlock,
    ScopeRows,
    block_value,
    centered_weights,
    linear_constraint_vector,
    mistreatment_rows,
    resolve_scope,
)
from Services.losses import add_intercept, classifier_loss, lr_loss_grad, probabilities, to_signed

logger = logging.getLogger(__name__)

_SOLVED = (cp.OPTIMAL, cp.OPTIMAL_INACCURATE)


class CCPResult(NamedTuple):
    params: ModelParams
    slack_trace: List[float]
    tau_trace: List[float]
    iterations: int


# --------------------- shared helpers ---------------------
def _active_blocks(blocks):
    return [block for block in blocks if np.isfinite(block.threshold)]


def _linear_constraints(blocks):
    """Stacks |a^T w| <= c for every block as G w <= h."""
    rows, bounds = [], []
    for block in _active_blocks(blocks):
        a = linear_constraint_vector(block.rows)
        rows.extend([a, -a])
        bounds.extend([block.threshold, block.threshold])
    if not rows:
        return None, None
    return np.vstack(rows), np.asarray(bounds, dtype=float)


def _cvx_loss(model, X, y, w, ridge):
    scores = X @ w
    if model is ModelKind.LR:
        loss = cp.sum(cp.logistic(scores)) - np.asarray(y, dtype=float) @ scores
    else:
        loss = cp.sum(cp.pos(1 - cp.multiply(to_signed(y).astype(float), scores))) / X.shape[0]
    if ridge:
        loss = loss + 0.5 * ridge * cp.sum_squares(w[:-1])
    return loss


def _solve(problem, what):
    try:
        problem.solve()
    except cp.error.SolverError as e:
        raise SolverConvergenceError(f"{what}: {e}")
    if problem.status not in _SOLVED:
        raise SolverConvergenceError(f"{what}: solver status {problem.status}")


def _lbfgs(fun, w0, gtol):
    result = minimize(
        fun,
        w0,
        jac=True,
        method="L-BFGS-B",
        options={"maxiter": 20000, "maxcor": 20, "gtol": gtol, "ftol": 1e-15},
    )
    return result.x


def _stationarity(grad, n_rows):
    # per-row scale so the tolerance does not depend on the training-set size
    return float(np.max(np.abs(grad))) / max(1, n_rows)


# --------------------- w-step: convex (disparate impact) ---------------------
def solve_w_convex(X_train, y_train, blocks, model, cfg: SolverConfig, w_init=None):
    """
    Minimizes the classifier loss subject to |a^T w| <= c for every block, with
    a = (1/K) X^T (z - z_bar) over the block rows.

    LR runs an augmented-Lagrangian loop (L-BFGS-B inner solves) and checks the KKT
    residual on exit; the hinge loss is a linear program and goes to cvxpy.
    """
    X_train = np.asarray(X_train, dtype=float)
    y_train = np.asarray(y_train, dtype=float)
    n_rows, n_weights = X_train.shape
    G, h = _linear_constraints(blocks)

    if model is ModelKind.SVM:
        w = cp.Variable(n_weights)
        constraints = [] if G is None else [G @ w <= h]
        problem = cp.Problem(cp.Minimize(_cvx_loss(model, X_train, y_train, w, cfg.ridge)), constraints)
        _solve(problem, "hinge-loss w-step")
        return ModelParams(w=w.value)

    w = np.zeros(n_weights) if w_init is None else np.array(w_init, dtype=float)
    gtol = 0.5 * cfg.wstep_tol * max(1, n_rows)

    def loss(weights):
        return lr_loss_grad(weights, X_train, y_train, cfg.ridge)

    if G is None:
        w = _lbfgs(loss, w, gtol)
        residual = _stationarity(loss(w)[1], n_rows)
        if residual > cfg.wstep_tol:
            raise SolverConvergenceError("unconstrained w-step did not reach stationarity", residual)
        return ModelParams(w=w)

    multipliers = np.zeros(G.shape[0])
    rho = 10.0 * max(1, n_rows)
    previous_infeasibility = np.inf
    stationarity = infeasibility = np.inf
    for round_ in range(1, cfg.al_max_rounds + 1):
        def augmented(weights, lam=multipliers, rho=rho):
            value, grad = loss(weights)
            shifted = np.maximum(0.0, lam + rho * (G @ weights - h))
            value += (shifted @ shifted - lam @ lam) / (2 * rho)
            return value, grad + G.T @ shifted

        w = _lbfgs(augmented, w, gtol)
        violation = G @ w - h
        multipliers = np.maximum(0.0, multipliers + rho * violation)
        infeasibility = max(0.0, float(violation.max()))
        stationarity = _stationarity(loss(w)[1] + G.T @ multipliers, n_rows)
        logger.debug(
            "AL round %d: rho=%.3g infeasibility=%.3e stationarity=%.3e",
            round_, rho, infeasibility, stationarity,
        )
        if infeasibility <= cfg.feasibility_tol and stationarity <= cfg.wstep_tol:
            return ModelParams(w=w)
        if infeasibility > 0.25 * previous_infeasibility:
            rho *= 10.0
        previous_infeasibility = infeasibility

    raise SolverConvergenceError(
        f"augmented Lagrangian did not converge in {cfg.al_max_rounds} rounds",
        residual=max(stationarity, infeasibility),
    )


def fit_unconstrained(X, y, model, cfg: SolverConfig, w_init=None):
    """Plain LR/SVM fit (no fairness constraint)."""
    return solve_w_convex(X, y, [], model, cfg, w_init=w_init)


# --------------------- w-step: convex-concave (mistreatment) ---------------------
def _ccp_branches(metric, block: ScopeBlock, w, w_k):
    """
    Convex restrictions of +value(w) <= c and -value(w) <= c at the iterate w_k.

    With g_i = min(0, h_i(w)) = h_i(w) - max(0, h_i(w)) and weights c_i = (z_i - z_bar)/K,
    each branch is sum(c_i h_i) - sum(c_i max(0, h_i)) times +-1. Terms whose max(0, h_i)
    enters with a negative sign are concave and get linearized at w_k.
    """
    y_signed = to_signed(block.rows.y)
    H = mistreatment_rows(metric, block.rows.X, y_signed)
    weights = centered_weights(block.rows.z)
    active = (H @ w_k > 0).astype(float)
    hw = H @ w
    branches = []
    for sign in (1.0, -1.0):
        coef = sign * weights
        convex_part = cp.sum(cp.multiply(np.maximum(-coef, 0.0), cp.pos(hw)))
        linearized_part = -(np.maximum(coef, 0.0) * active) @ hw
        branches.append(coef @ hw + convex_part + linearized_part)
    return branches, H


def _activation_pattern(H_list, w):
    return [tuple(H @ w > 0) for H in H_list]


def run_ccp(X_train, y_train, blocks, metric, model, cfg: SolverConfig, w_init=None):
    """
    Convex-concave procedure for the mistreatment constraints.

    Every iteration solves loss + tau * sum(s) subject to the linearized branches
    <= c + s, s >= 0, then grows tau by mu. Stops once the slack is below
    `ccp_slack_tol` and either the iterate stopped moving or the linearization
    pattern repeats (the next subproblem would be the same).
    """
    X_train = np.asarray(X_train, dtype=float)
    n_weights = X_train.shape[1]
    blocks = _active_blocks(blocks)
    if not blocks:
        params = fit_unconstrained(X_train, y_train, model, cfg, w_init)
        return CCPResult(params, [0.0], [cfg.ccp_tau], 1)

    w_k = np.zeros(n_weights) if w_init is None else np.array(w_init, dtype=float)
    tau = cfg.ccp_tau
    slack_trace, tau_trace = [], []
    total_slack = np.inf
    for iteration in range(1, cfg.ccp_max_iters + 1):
        w = cp.Variable(n_weights)
        constraints, slacks, H_list = [], [], []
        for block in blocks:
            branches, H = _ccp_branches(metric, block, w, w_k)
            H_list.append(H)
            for branch in branches:
                slack = cp.Variable(nonneg=True)
                constraints.append(branch <= block.threshold + slack)
                slacks.append(slack)
        objective = _cvx_loss(model, X_train, y_train, w, cfg.ridge) + tau * cp.sum(cp.hstack(slacks))
        _solve(cp.Problem(cp.Minimize(objective), constraints), f"CCP iteration {iteration}")

        w_next = np.asarray(w.value, dtype=float)
        total_slack = float(sum(max(0.0, s.value) for s in slacks))
        movement = float(np.max(np.abs(w_next - w_k)))
        same_pattern = _activation_pattern(H_list, w_next) == _activation_pattern(H_list, w_k)
        slack_trace.append(total_slack)
        tau_trace.append(tau)
        logger.debug(
            "CCP iteration %d: tau=%.3g slack=%.3e movement=%.3e", iteration, tau, total_slack, movement
        )
        w_k = w_next
        if total_slack <= cfg.ccp_slack_tol and (movement <= cfg.wstep_tol or same_pattern):
            return CCPResult(ModelParams(w=w_k), slack_trace, tau_trace, iteration)
        tau = min(cfg.ccp_mu * tau, cfg.ccp_tau_max)

    if total_slack > cfg.ccp_slack_tol:
        raise InfeasibleConstraintError(min(block.threshold for block in blocks), total_slack)
    logger.warning("CCP stopped at the iteration cap with feasible slack but a moving iterate")
    return CCPResult(ModelParams(w=w_k), slack_trace, tau_trace, cfg.ccp_max_iters)


def solve_w_ccp(X_train, y_train, blocks, metric, model, cfg: SolverConfig, w_init=None):
    return run_ccp(X_train, y_train, blocks, metric, model, cfg, w_init).params


# --------------------- y_u-step ---------------------
def propagation_loss_gradient(model, w, X_unlabeled, n_train):
    """
    Derivative of the classifier loss with respect to continuous unlabeled labels.
    LR: ln((1 - p) / p). SVM: the linear loss (1/K)(1 - (2y - 1) w^T x) gives -2 w^T x / K.
    """
    w = np.asarray(w, dtype=float)
    if model is ModelKind.LR:
        p = probabilities(w, X_unlabeled)
        return np.log1p(-p) - np.log(p)
    return -2.0 * (X_unlabeled @ w) / n_train


def solve_yu_closed_form(w, X_unlabeled, y_labeled, lap: GraphLaplacian, alpha, model=ModelKind.LR,
                         ridge_eps=1e-8, n_train=None):
    """
    Stationary point of loss + alpha * y^T U y in y_u:
    2 alpha (U_uu + eps I) y_u = -2 alpha U_ul y_l - dL/dy_u, solved by Cholesky.
    """
    w = w.w if isinstance(w, ModelParams) else np.asarray(w, dtype=float)
    X_unlabeled = np.asarray(X_unlabeled, dtype=float)
    y_labeled = np.asarray(y_labeled, dtype=float)
    n_unlabeled = X_unlabeled.shape[0]
    if lap.uu.shape[0] != n_unlabeled or lap.ul.shape[1] != y_labeled.shape[0]:
        raise DataError("graph blocks do not match the labeled/unlabeled row counts")
    if n_train is None:
        n_train = n_unlabeled + y_labeled.shape[0]

    system = 2 * alpha * (lap.uu + ridge_eps * np.eye(n_unlabeled))
    rhs = -2 * alpha * (lap.ul @ y_labeled) - propagation_loss_gradient(model, w, X_unlabeled, n_train)
    try:
        y_u = cho_solve(cho_factor(system), rhs)
    except LinAlgError as e:
        raise SingularSystemError(f"propagation system is singular: {e}")
    if not np.isfinite(y_u).all():
        raise SingularSystemError("propagation system produced non-finite labels")
    return y_u


def threshold_labels(y_u, T):
    """1 where y_u >= T, else 0."""
    if not 0 < T < 1:
        raise ValueError(f"threshold T must be in (0, 1), got {T}")
    return (np.asarray(y_u) >= T).astype(int)


def objective(w, X, y, lap: Optional[GraphLaplacian], alpha, model=ModelKind.LR, ridge=0.0):
    """Classifier loss plus alpha * y^T U y over labeled-first rows."""
    w = w.w if isinstance(w, ModelParams) else w
    value = classifier_loss(model, w, X, y, ridge)
    if lap is not None:
        y = np.asarray(y, dtype=float)
        value += alpha * float(y @ lap.laplacian @ y)
    return float(value)


# --------------------- alternating optimization ---------------------
def _w_step(X, y, blocks, metric, model, cfg, w_init):
    if metric is Metric.DISPARATE_IMPACT:
        return solve_w_convex(X, y, blocks, model, cfg, w_init=w_init), []
    result = run_ccp(X, y, blocks, metric, model, cfg, w_init=w_init)
    return result.params, result.slack_trace


def train(labeled: Dataset, unlabeled: Optional[Dataset], lap: Optional[GraphLaplacian], model: ModelKind,
          spec: FairnessConstraintSpec, cfg: SolverConfig) -> TrainReport:
    """
    Alternates the fairness-constrained w-step with label propagation for the
    unlabeled rows until the objective settles or the labels repeat.
    Unlabeled labels are never read; y_u starts uniform in {0, 1} under `cfg.seed`.
    """
    if labeled.labels is None:
        raise DataError("labeled part has no labels")
    X_l = add_intercept(labeled.features)
    y_l = np.asarray(labeled.labels)
    labeled_rows = ScopeRows(X_l, labeled.sensitive, y_l)
    n_unlabeled = 0 if unlabeled is None else unlabeled.n_rows

    if n_unlabeled == 0:
        if spec.scope is not Scope.LABELED:
            logger.warning("no unlabeled rows: %s scope reduced to labeled", spec.scope.value)
            spec = spec.supervised()
        blocks = resolve_scope(spec, labeled_rows, None)
        w, slacks = _w_step(X_l, y_l, blocks, spec.metric, model, cfg, None)
        value = objective(w, X_l, y_l, None, cfg.alpha, model, cfg.ridge)
        return TrainReport(
            w=w,
            y_u=np.zeros(0, dtype=int),
            objective_trace=[value],
            steps=[ObjectiveStep(after_w=value)],
            constraint_trace=[[ConstraintValue(value=block_value(spec.metric, w.w, b), threshold=b.threshold)
                               for b in blocks]],
            slack_trace=[slacks] if slacks else [],
            converged=True,
            iters=1,
            scope=spec.scope,
        )

    if lap is None or lap.n_labeled != labeled.n_rows or lap.laplacian.shape[0] != labeled.n_rows + n_unlabeled:
        raise DataError("graph does not match the labeled/unlabeled parts")

    X_u = add_intercept(unlabeled.features)
    X = np.vstack([X_l, X_u])
    y_u = np.random.default_rng(cfg.seed).integers(0, 2, n_unlabeled)

    w = None
    objective_trace, steps, constraint_trace, slack_trace = [], [], [], []
    converged = False
    iteration = 0
    for iteration in range(1, cfg.max_outer_iters + 1):
        try:
            blocks = resolve_scope(spec, labeled_rows, ScopeRows(X_u, unlabeled.sensitive, y_u))
            y = np.concatenate([y_l, y_u])
            w, slacks = _w_step(X, y, blocks, spec.metric, model, cfg, None if w is None else w.w)
            values = [ConstraintValue(value=block_value(spec.metric, w.w, b), threshold=b.threshold)
                      for b in blocks]
            after_w = objective(w, X, y, lap, cfg.alpha, model, cfg.ridge)

            y_continuous = solve_yu_closed_form(w, X_u, y_l, lap, cfg.alpha, model, cfg.ridge_eps, X.shape[0])
            after_propagation = objective(w, X, np.concatenate([y_l, y_continuous]), lap, cfg.alpha, model, cfg.ridge)
            y_next = threshold_labels(y_continuous, cfg.T)
            after_threshold = objective(w, X, np.concatenate([y_l, y_next]), lap, cfg.alpha, model, cfg.ridge)
        except FairSSLError as err:
            err.iteration = iteration
            raise

        constraint_trace.append(values)
        if slacks:
            slack_trace.append(slacks)
        steps.append(ObjectiveStep(after_w=after_w, after_propagation=after_propagation,
                                   after_threshold=after_threshold))
        previous = objective_trace[-1] if objective_trace else None
        objective_trace.append(after_threshold)
        repeated = np.array_equal(y_next, y_u)
        y_u = y_next
        logger.info(
            "outer iteration %d: objective=%.6g positives=%d/%d", iteration, after_threshold, y_u.sum(), n_unlabeled
        )
        if repeated or (previous is not None
                        and abs(after_threshold - previous) / max(1.0, abs(previous)) < cfg.outer_tol):
            converged = True
            break

    return TrainReport(
        w=w,
        y_u=y_u,
        objective_trace=objective_trace,
        steps=steps,
        constraint_trace=constraint_trace,
        slack_trace=slack_trace,
        converged=converged,
        iters=iteration,
        scope=spec.scope,
    )
