import logging
from typing import NamedTuple, Optional

import numpy as np

from schemas import ConstraintValue, DiscriminationReport, FairnessConstraintSpec, Metric, Scope
from Services.errors import DataError, EmptyConditioningError

logger = logging.getLogger(__name__)


class ScopeRows(NamedTuple):
    """Rows of one training part: features with intercept, sensitive values, {0,1} labels."""
    X: np.ndarray
    z: np.ndarray
    y: Optional[np.ndarray] = None

    @property
    def n_rows(self):
        return self.X.shape[0]


class ScopeBlock(NamedTuple):
    rows: ScopeRows
    threshold: float
    name: str


def _signed_labels(y):
    if y is None:
        raise DataError("mistreatment metrics need labels")
    y = np.asarray(y)
    if not np.isin(y, (-1, 1)).all():
        raise DataError("signed labels must be -1 or +1")
    return y


def mistreatment_rows(metric, X, y_signed):
    """
    Rows r_i with g_w = min(0, r_i^T w): r_i = m_i * y_i * x_i, where the mask m_i is
    1 for OMR, (1 - y)/2 for FPR and (1 + y)/2 for FNR.
    """
    y_signed = _signed_labels(y_signed)
    if metric is Metric.OMR:
        mask = np.ones_like(y_signed, dtype=float)
    elif metric is Metric.FPR:
        mask = (1 - y_signed) / 2
    elif metric is Metric.FNR:
        mask = (1 + y_signed) / 2
    else:
        raise ValueError(f"{metric.value} is not a mistreatment metric")
    return (mask * y_signed)[:, None] * np.asarray(X, dtype=float)


def signed_distance(metric, w, X, y_signed=None):
    """Per-row signed distance g_w to the decision boundary for the given metric."""
    w = np.asarray(w, dtype=float)
    X = np.asarray(X, dtype=float)
    if X.shape[1] != w.shape[0]:
        raise ValueError(f"weight length {w.shape[0]} does not match feature matrix {X.shape}")
    if metric is Metric.DISPARATE_IMPACT:
        return X @ w
    return np.minimum(0.0, mistreatment_rows(metric, X, y_signed) @ w)


def centered_weights(z):
    """(z_i - z_bar) / K, the per-row weights of the covariance constraint."""
    z = np.asarray(z, dtype=float)
    if z.size == 0:
        raise DataError("constraint needs at least one row")
    return (z - z.mean()) / z.size


def constraint_value(g, z):
    """
    (1/K) * [sum over z=0 of (0 - z_bar) g + sum over z=1 of (1 - z_bar) g],
    i.e. the covariance between z and g; satisfied when |value| <= c.
    """
    g = np.asarray(g, dtype=float)
    z = np.asarray(z)
    if g.size == 0:
        raise DataError("constraint needs at least one row")
    if g.shape != z.shape:
        raise ValueError(f"g has {g.shape[0]} entries for {z.shape[0]} sensitive values")
    z_bar = z.mean()
    group0 = np.sum(g[z == 0]) * (0 - z_bar)
    group1 = np.sum(g[z == 1]) * (1 - z_bar)
    return float((group0 + group1) / g.size)


def linear_constraint_vector(rows: ScopeRows):
    """a = (1/K) X^T (z - z_bar), so the disparate impact constraint reads |a^T w| <= c."""
    return rows.X.T @ centered_weights(rows.z)


def _concat(first: ScopeRows, second: ScopeRows):
    y = None
    if first.y is not None and second.y is not None:
        y = np.concatenate([first.y, second.y])
    return ScopeRows(np.vstack([first.X, second.X]), np.concatenate([first.z, second.z]), y)


def resolve_scope(spec: FairnessConstraintSpec, labeled: ScopeRows, unlabeled: Optional[ScopeRows]):
    """Turns a constraint spec into the row blocks it is evaluated over."""
    if spec.scope is Scope.LABELED:
        return [ScopeBlock(labeled, spec.c, "labeled")]
    if unlabeled is None or unlabeled.n_rows == 0:
        raise DataError(f"{spec.scope.value} scope needs unlabeled rows")
    if spec.scope is Scope.UNLABELED:
        return [ScopeBlock(unlabeled, spec.c, "unlabeled")]
    if spec.scope is Scope.COMBINED:
        return [ScopeBlock(labeled, spec.c, "labeled"), ScopeBlock(unlabeled, spec.c2, "unlabeled")]
    return [ScopeBlock(_concat(labeled, unlabeled), spec.c, "mixed")]


def block_value(metric, w, block: ScopeBlock):
    y_signed = None if block.rows.y is None else 2 * np.asarray(block.rows.y) - 1
    g = signed_distance(metric, w, block.rows.X, y_signed)
    return constraint_value(g, block.rows.z)


def constraint_values_for_scope(spec, w, labeled: ScopeRows, unlabeled: Optional[ScopeRows]):
    """
    One (value, threshold) pair per block: one for Labeled, Unlabeled and Mixed scope,
    two for Combined. Unlabeled rows carry the current propagated labels as y.
    """
    return [
        ConstraintValue(value=block_value(spec.metric, w, block), threshold=block.threshold)
        for block in resolve_scope(spec, labeled, unlabeled)
    ]


_CONDITIONS = {
    Metric.FPR: (0, "y_true=0"),
    Metric.FNR: (1, "y_true=1"),
}


def discrimination_level(metric, y_hat, y_true, z):
    """Per-group rate gamma_z for the metric and the gap |gamma_0 - gamma_1|."""
    y_hat = np.asarray(y_hat)
    z = np.asarray(z)
    if y_hat.shape != z.shape:
        raise ValueError(f"{y_hat.shape[0]} predictions for {z.shape[0]} sensitive values")
    if metric is not Metric.DISPARATE_IMPACT:
        if y_true is None:
            raise DataError(f"{metric.value} needs ground-truth labels")
        y_true = np.asarray(y_true)
        if y_true.shape != z.shape:
            raise ValueError(f"{y_true.shape[0]} labels for {z.shape[0]} sensitive values")

    rates = []
    for group in (0, 1):
        in_group = z == group
        if not in_group.any():
            raise EmptyConditioningError(group, f"z={group}")
        if metric is Metric.DISPARATE_IMPACT:
            rates.append(float(np.mean(y_hat[in_group] == 1)))
            continue
        cell = in_group
        if metric in _CONDITIONS:
            label, condition = _CONDITIONS[metric]
            cell = in_group & (y_true == label)
            if not cell.any():
                raise EmptyConditioningError(group, condition)
        rates.append(float(np.mean(y_hat[cell] != y_true[cell])))
    return DiscriminationReport.from_rates(metric, rates[0], rates[1])


def discrimination_summary(y_hat, y_true, z):
    """Level for every metric; NaN where a conditioning cell is empty."""
    summary = {}
    for metric in Metric:
        try:
            summary[metric] = discrimination_level(metric, y_hat, y_true, z).level
        except EmptyConditioningError as e:
            logger.warning("%s level unavailable: %s", metric.value, e)
            summary[metric] = float("nan")
    return summary


def accuracy(y_hat, y_true):
    y_hat = np.asarray(y_hat)
    y_true = np.asarray(y_true)
    if y_hat.size == 0:
        raise DataError("accuracy of an empty prediction set")
    return float(np.mean(y_hat == y_true))
