import logging
from typing import Callable, Dict, Optional

import numpy as np
from joblib import Parallel, delayed

from schemas import (
    DecompositionReport,
    Dataset,
    FairnessConstraintSpec,
    GroupDecomposition,
    ModelKind,
    SolverConfig,
    UnlabeledNoiseReport,
)
from Services.errors import DataError, EmptyConditioningError
from Services.graph import build_laplacian
from Services.losses import add_intercept, predict
from Services.solver import train

logger = logging.getLogger(__name__)

# trainer(train_set, eval_set, seed) -> binary predictions on eval_set
Trainer = Callable[[Dataset, Dataset, int], np.ndarray]


def _resample_predictions(trainer: Trainer, pool: Dataset, eval_set: Dataset, seed, draw):
    rng = np.random.default_rng([seed, draw])
    rows = rng.integers(0, pool.n_rows, size=pool.n_rows)
    predictions = np.asarray(trainer(pool.subset(rows), eval_set, int(rng.integers(2**31 - 1))))
    if predictions.shape != (eval_set.n_rows,):
        raise DataError(f"trainer returned {predictions.shape} predictions for {eval_set.n_rows} eval rows")
    return predictions.astype(int)


def main_prediction(predictions):
    """Modal label per eval point across resamples; ties go to label 1."""
    return (np.mean(predictions, axis=0) >= 0.5).astype(int)


def estimate_decomposition(trainer: Trainer, pool: Dataset, eval_set: Dataset, n_bootstrap, seed,
                           clean_labels: Optional[np.ndarray] = None, n_jobs=1) -> DecompositionReport:
    """
    Bootstrap bias/variance/noise decomposition of per-group zero-one loss.

    The trainer is fitted on `n_bootstrap` resamples (with replacement, pool size) and
    predicts on `eval_set`. y* is the recorded label, or `clean_labels` when the data are
    synthetic with a known flip process; noise is then the observed flip rate per group,
    and 0 otherwise.

    Variance uses c_v = +1 where the main prediction is right and -1 where it is wrong, so
    per group  error_rate = bias + variance  holds exactly against y*.
    """
    if n_bootstrap < 2:
        raise ValueError(f"n_bootstrap must be at least 2, got {n_bootstrap}")
    if eval_set.labels is None:
        raise DataError("decomposition needs labels on the eval set")
    observed = np.asarray(eval_set.labels)
    target = observed if clean_labels is None else np.asarray(clean_labels, dtype=int)
    if target.shape != observed.shape:
        raise DataError(f"{target.shape[0]} clean labels for {observed.shape[0]} eval rows")
    for group in (0, 1):
        if not np.any(eval_set.sensitive == group):
            raise EmptyConditioningError(group, f"z={group} in eval set")

    predictions = np.vstack(
        Parallel(n_jobs=n_jobs, prefer="threads")(
            delayed(_resample_predictions)(trainer, pool, eval_set, seed, draw) for draw in range(n_bootstrap)
        )
    )
    y_main = main_prediction(predictions)
    disagreement = np.mean(predictions != y_main, axis=0)
    sign = np.where(y_main == target, 1.0, -1.0)
    wrong_main = (y_main != target).astype(float)
    errors = np.mean(predictions != target, axis=0)
    flipped = (observed != target).astype(float)

    groups = {}
    for group in (0, 1):
        rows = eval_set.sensitive == group
        groups[group] = GroupDecomposition(
            bias=float(np.mean(wrong_main[rows])),
            variance=float(np.mean(sign[rows] * disagreement[rows])),
            unsigned_variance=float(np.mean(disagreement[rows])),
            noise=float(np.mean(flipped[rows])) if clean_labels is not None else 0.0,
            error_rate=float(np.mean(errors[rows])),
        )

    g0, g1 = groups[0], groups[1]
    level = abs((g0.bias - g1.bias) + (g0.variance - g1.variance) + (g0.noise - g1.noise))
    logger.info(
        "decomposition over %d resamples: bias %.4f/%.4f variance %.4f/%.4f level %.4f",
        n_bootstrap, g0.bias, g1.bias, g0.variance, g1.variance, level,
    )
    return DecompositionReport(
        groups=groups,
        level_decomposed=level,
        n_bootstrap=n_bootstrap,
        main_predictions=y_main.tolist(),
    )


def noise_terms_unlabeled(y_u_final, ground_truth, z) -> UnlabeledNoiseReport:
    """
    Mislabel rate of propagated labels in each (true label, group) cell. A group's noise is
    the sum of its two cell rates; the gap is |group1 - group0|. Empty cells are reported
    as None and left out of the sums.
    """
    y_u_final = np.asarray(y_u_final)
    ground_truth = np.asarray(ground_truth)
    z = np.asarray(z)
    if not (y_u_final.shape == ground_truth.shape == z.shape):
        raise ValueError("propagated labels, ground truth and sensitive values must have the same length")

    rates, incomplete = {}, False
    totals = {0: 0.0, 1: 0.0}
    for label in (0, 1):
        for group in (0, 1):
            cell = (ground_truth == label) & (z == group)
            key = f"y{label}_z{group}"
            if not cell.any():
                logger.warning("no unlabeled rows with y=%d, z=%d; rate left out", label, group)
                rates[key] = None
                incomplete = True
                continue
            rates[key] = float(np.mean(y_u_final[cell] != label))
            totals[group] += rates[key]

    return UnlabeledNoiseReport(
        rates=rates,
        group0=totals[0],
        group1=totals[1],
        gap=abs(totals[1] - totals[0]),
        incomplete=incomplete,
    )


# --------------------- trainers ---------------------
def supervised_trainer(spec: FairnessConstraintSpec, model: ModelKind, cfg: SolverConfig) -> Trainer:
    """Constrained fit on the (resampled) labeled rows only."""
    def trainer(train_set, eval_set, seed):
        report = train(train_set, None, None, model, spec.supervised(), cfg.model_copy(update={"seed": seed}))
        return predict(report.w.w, add_intercept(eval_set.features), cfg.T, model)[1]
    return trainer


def semi_supervised_trainer(unlabeled: Dataset, spec: FairnessConstraintSpec, model: ModelKind,
                            cfg: SolverConfig, sigma) -> Trainer:
    """Alternating fit on the (resampled) labeled rows plus a fixed unlabeled part."""
    def trainer(train_set, eval_set, seed):
        lap = build_laplacian(np.vstack([train_set.features, unlabeled.features]), train_set.n_rows, sigma)
        report = train(train_set, unlabeled, lap, model, spec, cfg.model_copy(update={"seed": seed}))
        return predict(report.w.w, add_intercept(eval_set.features), cfg.T, model)[1]
    return trainer


def compare_variance_gap(labeled: Dataset, unlabeled: Dataset, eval_set: Dataset, spec: FairnessConstraintSpec,
                         model: ModelKind, cfg: SolverConfig, sigma, n_bootstrap, seed,
                         clean_labels=None, n_jobs=1) -> Dict[str, DecompositionReport]:
    """
    Decomposes the same eval set twice: labeled-only training and labeled+unlabeled
    training. Both use the same resample seeds, so only the unlabeled rows differ.
    """
    reports = {}
    for setting, trainer in (
        ("labeled", supervised_trainer(spec, model, cfg)),
        ("semi", semi_supervised_trainer(unlabeled, spec, model, cfg, sigma)),
    ):
        reports[setting] = estimate_decomposition(
            trainer, labeled, eval_set, n_bootstrap, seed, clean_labels=clean_labels, n_jobs=n_jobs
        )
    logger.info(
        "variance gap: labeled-only %.4f, with unlabeled %.4f",
        reports["labeled"].variance_gap, reports["semi"].variance_gap,
    )
    return reports


def propagation_noise(labeled: Dataset, unlabeled: Dataset, spec: FairnessConstraintSpec, model: ModelKind,
                      cfg: SolverConfig, sigma, seed, ground_truth=None) -> UnlabeledNoiseReport:
    """
    One full semi-supervised fit on the labeled and unlabeled parts, then the mislabel
    rates of its final propagated labels. `ground_truth` defaults to the unlabeled part's
    held-back labels.
    """
    if unlabeled.n_rows == 0:
        raise DataError("propagation noise needs unlabeled rows")
    truth = unlabeled.labels if ground_truth is None else np.asarray(ground_truth, dtype=int)
    if truth is None:
        raise DataError("propagation noise needs ground-truth labels for the unlabeled part")
    lap = build_laplacian(np.vstack([labeled.features, unlabeled.features]), labeled.n_rows, sigma)
    report = train(labeled, unlabeled, lap, model, spec, cfg.model_copy(update={"seed": seed}))
    noise = noise_terms_unlabeled(report.y_u, truth, unlabeled.sensitive)
    logger.info("propagated-label noise: group0 %.4f group1 %.4f gap %.4f", noise.group0, noise.group1, noise.gap)
    return noise
