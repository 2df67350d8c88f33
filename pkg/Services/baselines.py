import logging

import numpy as np

from schemas import Dataset, ModelKind, SolverConfig
from Services.errors import DataError, EmptyConditioningError
from Services.losses import add_intercept, predict
from Services.solver import fit_unconstrained

logger = logging.getLogger(__name__)

# (group, class) cells in the order they are filled
CELLS = ((0, 0), (0, 1), (1, 0), (1, 1))


def cell_target(n_rows):
    """round(K/4) with halves rounded up."""
    return int(np.floor(n_rows / 4 + 0.5))


def _cell_rows(labeled: Dataset):
    if labeled.labels is None:
        raise DataError("resampling needs labels")
    cells = []
    for group, label in CELLS:
        rows = np.flatnonzero((labeled.sensitive == group) & (labeled.labels == label))
        if rows.size == 0:
            raise EmptyConditioningError(group, f"y={label}")
        cells.append(rows)
    return cells


def uniform_sampling(labeled: Dataset, seed) -> Dataset:
    """
    Every (group, class) cell resampled to round(K/4) rows: larger cells are undersampled
    without replacement, smaller ones keep all rows plus draws with replacement.
    """
    rng = np.random.default_rng(seed)
    target = cell_target(labeled.n_rows)
    cells = _cell_rows(labeled)
    logger.debug("uniform sampling: cell sizes %s -> %d each", [rows.size for rows in cells], target)
    chosen = []
    for rows in cells:
        if rows.size > target:
            rows = rng.choice(rows, size=target, replace=False)
        elif rows.size < target:
            rows = np.concatenate([rows, rng.choice(rows, size=target - rows.size, replace=True)])
        chosen.append(rows)
    return labeled.subset(rng.permutation(np.concatenate(chosen)))


def preferential_sampling(labeled: Dataset, scores, seed, boundary=0.5) -> Dataset:
    """
    Same cell targets as uniform sampling, but rows closest to the decision boundary are
    duplicated first (short cells) or removed first (long cells). Equal distances keep
    the original row order.
    """
    scores = np.asarray(scores, dtype=float)
    if scores.shape != (labeled.n_rows,):
        raise ValueError(f"{scores.shape[0]} scores for {labeled.n_rows} rows")
    distance = np.abs(scores - boundary)
    target = cell_target(labeled.n_rows)
    chosen = []
    for rows in _cell_rows(labeled):
        closest_first = rows[np.argsort(distance[rows], kind="stable")]
        if rows.size > target:
            rows = closest_first[rows.size - target:]
        elif rows.size < target:
            extra = closest_first[np.arange(target - rows.size) % rows.size]
            rows = np.concatenate([rows, extra])
        chosen.append(rows)
    return labeled.subset(np.random.default_rng(seed).permutation(np.concatenate(chosen)))


def ranking_scores(labeled: Dataset, cfg: SolverConfig = None):
    """Probabilities of an unconstrained LR fitted on the labeled rows, used to rank for PS."""
    X = add_intercept(labeled.features)
    params = fit_unconstrained(X, labeled.labels, ModelKind.LR, cfg or SolverConfig())
    return predict(params.w, X, model=ModelKind.LR)[0]
