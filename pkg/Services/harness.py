import json
import logging
from pathlib import Path
from typing import List, Optional, Sequence

import numpy as np
import pandas as pd
from dotenv import dotenv_values
from joblib import Parallel, delayed
from pydantic import BaseModel, ValidationError

from schemas import (
    BaselineRow,
    Dataset,
    DecompositionRow,
    ExperimentConfig,
    Metric,
    OutputFormat,
    ResultRow,
    SplitSpec,
    UnlabeledNoiseReport,
)
from Services.baselines import preferential_sampling, ranking_scores, uniform_sampling
from Services.config import thread_cap
from Services.dataset import load_csv, split, subsample
from Services.decomposition import compare_variance_gap, propagation_noise
from Services.errors import ConfigError, FairSSLError, InfeasibleConstraintError, ReportWriteError
from Services.fairness import accuracy, discrimination_summary
from Services.graph import build_laplacian
from Services.losses import add_intercept, predict
from Services.solver import fit_unconstrained, train
from Services.synthetic import make_biased_groups, make_symmetric_groups

logger = logging.getLogger(__name__)

METRIC_COLUMNS = ["acc", "dis_di", "dis_omr", "dis_fpr", "dis_fnr"]
SYNTHETIC_FEATURES = 5


# --------------------- configuration & data ---------------------
def load_experiment_config(path) -> ExperimentConfig:
    """Reads a flat `key = value` file (comma-separated lists) into an ExperimentConfig."""
    path = Path(path)
    if not path.is_file():
        raise ConfigError(f"config file not found: {path}")
    values = dotenv_values(path)
    empty = [key for key, value in values.items() if value is None]
    if empty:
        raise ConfigError(f"config keys without a value: {', '.join(empty)}")
    try:
        return ExperimentConfig.from_flat(values)
    except ValidationError as e:
        raise ConfigError(f"invalid config {path}:\n{e}")


def load_dataset(cfg: ExperimentConfig) -> Dataset:
    if cfg.synthetic:
        return make_biased_groups(cfg.synthetic_rows, SYNTHETIC_FEATURES, cfg.base_seed)
    data = load_csv(cfg.data_path, cfg.sensitive_column, cfg.label_column, cfg.drop_columns)
    return subsample(data, cfg.max_rows, cfg.base_seed)


def _seeds(cfg: ExperimentConfig):
    return [cfg.base_seed + i for i in range(cfg.n_seeds)]


def _unlabeled_pool(cfg: ExperimentConfig, data: Dataset):
    available = data.n_rows - cfg.n_labeled - cfg.n_test
    if available <= 0:
        raise ConfigError(
            f"n_labeled + n_test = {cfg.n_labeled + cfg.n_test} leaves no unlabeled rows out of {data.n_rows}"
        )
    return available


def _evaluate(w, test: Dataset, cfg: ExperimentConfig):
    y_hat = predict(w, add_intercept(test.features), cfg.solver.T, cfg.model)[1]
    levels = discrimination_summary(y_hat, test.labels, test.sensitive)
    return {
        "acc": accuracy(y_hat, test.labels),
        "dis_di": levels[Metric.DISPARATE_IMPACT],
        "dis_omr": levels[Metric.OMR],
        "dis_fpr": levels[Metric.FPR],
        "dis_fnr": levels[Metric.FNR],
    }


def _failed(status):
    return dict({column: float("nan") for column in METRIC_COLUMNS}, status=status)


# --------------------- sweep ---------------------
def run_cell(cfg: ExperimentConfig, data: Dataset, c, size, seed) -> ResultRow:
    """One (c, unlabeled size, seed) run; failures become a row status instead of an exception."""
    try:
        parts = split(data, SplitSpec(n_labeled=cfg.n_labeled, n_test=cfg.n_test, n_unlabeled=size, seed=seed))
        unlabeled = parts.unlabeled
        lap = None
        if size:
            lap = build_laplacian(
                np.vstack([parts.labeled.features, unlabeled.features]), parts.labeled.n_rows, cfg.sigma
            )
        solver_cfg = cfg.solver.model_copy(update={"seed": seed})
        report = train(parts.labeled, unlabeled, lap, cfg.model, cfg.constraint(c), solver_cfg)
        values = dict(_evaluate(report.w.w, parts.test, cfg), status="ok")
    except InfeasibleConstraintError as e:
        logger.warning("c=%g size=%d seed=%d infeasible: %s", c, size, seed, e)
        values = _failed("infeasible")
    except FairSSLError as e:
        logger.warning("c=%g size=%d seed=%d failed: %s", c, size, seed, e)
        values = _failed("error")
    else:
        logger.info("c=%g size=%d seed=%d acc=%.4f dis_di=%.4f", c, size, seed, values["acc"], values["dis_di"])
    return ResultRow(c=c, size=size, seed=seed, **values)


def _native(value):
    return value.item() if isinstance(value, np.generic) else value


def _aggregate(frame: pd.DataFrame, keys: dict, row_type, emit_std):
    ok = frame[frame["status"] == "ok"]
    if len(ok) == len(frame):
        status = "ok"
    elif len(ok):
        status = "partial"
    else:
        status = "infeasible"
    means = {column: float(value) for column, value in ok[METRIC_COLUMNS].mean().items()}
    rows = [row_type(**keys, seed="mean", status=status, **means)]
    if emit_std:
        stds = {column: float(value) for column, value in ok[METRIC_COLUMNS].std(ddof=1).items()}
        rows.append(row_type(**keys, seed="std", status=status, **stds))
    return rows


def aggregate_rows(rows: Sequence[BaseModel], keys: List[str], emit_std=True):
    """
    Per-seed rows grouped by `keys`, each group followed by its mean row (seed="mean") and,
    with `emit_std`, the sample standard deviation (seed="std"). Means skip failed seeds.
    """
    frame = pd.DataFrame([row.model_dump() for row in rows])
    row_type = type(rows[0])
    ordered = []
    for group_keys, group in frame.groupby(keys, sort=True):
        group_keys = group_keys if isinstance(group_keys, tuple) else (group_keys,)
        group_keys = {key: _native(value) for key, value in zip(keys, group_keys)}
        group = group.sort_values("seed", kind="stable")
        ordered.extend(
            row_type(**{key: _native(value) for key, value in record.items()})
            for record in group.to_dict("records")
        )
        ordered.extend(_aggregate(group, group_keys, row_type, emit_std))
    return ordered


def run_sweep(cfg: ExperimentConfig, data: Optional[Dataset] = None) -> List[ResultRow]:
    """
    Every (c, unlabeled size, seed) cell of the grid, in parallel up to FAIRSSL_THREADS,
    then one aggregate row per (c, size). Output order depends only on the keys.
    """
    data = load_dataset(cfg) if data is None else data
    available = _unlabeled_pool(cfg, data)
    sizes = cfg.unlabeled_sizes if cfg.unlabeled_sizes is not None else [available]
    too_large = [size for size in sizes if size > available]
    if too_large:
        raise ConfigError(f"unlabeled sizes {too_large} exceed the {available} rows left after splitting")

    cells = [(c, size, seed) for c in cfg.c_grid for size in sizes for seed in _seeds(cfg)]
    logger.info("sweep: %d cells on %d rows (model=%s metric=%s scope=%s)",
                len(cells), data.n_rows, cfg.model.value, cfg.metric.value, cfg.scope.value)
    rows = Parallel(n_jobs=thread_cap(), prefer="threads")(delayed(run_cell)(cfg, data, *cell) for cell in cells)
    return aggregate_rows(rows, ["c", "size"], cfg.emit_std)


# --------------------- baselines ---------------------
def _baseline_row(method, seed, train_set: Dataset, test: Dataset, cfg: ExperimentConfig):
    try:
        params = fit_unconstrained(add_intercept(train_set.features), train_set.labels, cfg.model, cfg.solver)
        values = dict(_evaluate(params.w, test, cfg), status="ok")
    except FairSSLError as e:
        logger.warning("%s seed=%d failed: %s", method, seed, e)
        values = _failed("error")
    return BaselineRow(method=method, seed=seed, **values)


def run_baselines(cfg: ExperimentConfig, data: Optional[Dataset] = None) -> List[BaselineRow]:
    """Unconstrained fit on the labeled part as-is, after uniform sampling and after preferential sampling."""
    data = load_dataset(cfg) if data is None else data
    _unlabeled_pool(cfg, data)
    rows = []
    for seed in _seeds(cfg):
        parts = split(data, SplitSpec(n_labeled=cfg.n_labeled, n_test=cfg.n_test, seed=seed))
        labeled = parts.labeled
        rows.append(_baseline_row("unconstrained", seed, labeled, parts.test, cfg))
        rows.append(_baseline_row("US", seed, uniform_sampling(labeled, seed), parts.test, cfg))
        scores = ranking_scores(labeled, cfg.solver)
        rows.append(_baseline_row("PS", seed, preferential_sampling(labeled, scores, seed), parts.test, cfg))
    return aggregate_rows(rows, ["method"], cfg.emit_std)


# --------------------- decomposition ---------------------
def _noise_columns(noise: UnlabeledNoiseReport):
    columns = {f"noise_u_{key}": float("nan") if rate is None else rate for key, rate in noise.rates.items()}
    columns["noise_u_gap"] = noise.gap
    return columns


def run_decomposition(cfg: ExperimentConfig, data: Optional[Dataset] = None) -> List[DecompositionRow]:
    """
    Labeled-only vs labeled+unlabeled decomposition per seed at the first c of the grid.
    Synthetic configs draw symmetric groups per seed and decompose against the clean labels.
    Rows of the semi-supervised setting also carry the propagated-label noise of one full
    fit on the labeled and unlabeled parts.
    """
    spec = cfg.constraint(cfg.c_grid[0])
    rows = []
    for seed in _seeds(cfg):
        clean = None
        if data is not None:
            seed_data = data
        elif cfg.synthetic:
            seed_data, clean = make_symmetric_groups(cfg.synthetic_rows, SYNTHETIC_FEATURES, seed)
        else:
            seed_data = load_dataset(cfg)
        _unlabeled_pool(cfg, seed_data)
        parts = split(seed_data, SplitSpec(n_labeled=cfg.n_labeled, n_test=cfg.n_test, seed=seed))
        test_clean = None if clean is None else clean[parts.test.row_ids]
        reports = compare_variance_gap(
            parts.labeled, parts.unlabeled, parts.test, spec, cfg.model, cfg.solver,
            cfg.sigma, cfg.n_bootstrap, seed, clean_labels=test_clean, n_jobs=thread_cap(),
        )
        unlabeled_truth = None if clean is None else clean[parts.unlabeled.row_ids]
        noise = propagation_noise(parts.labeled, parts.unlabeled, spec, cfg.model, cfg.solver, cfg.sigma, seed,
                                  ground_truth=unlabeled_truth)
        for setting, report in reports.items():
            extra = _noise_columns(noise) if setting == "semi" else {}
            for group, components in report.groups.items():
                rows.append(DecompositionRow(
                    setting=setting,
                    seed=seed,
                    group=group,
                    bias=components.bias,
                    variance=components.variance,
                    noise=components.noise,
                    error_rate=components.error_rate,
                    variance_gap=report.variance_gap,
                    level=report.level_decomposed,
                    **extra,
                ))
    return rows


# --------------------- output ---------------------
def _six_significant(value):
    if isinstance(value, float) and np.isfinite(value):
        return float(f"{value:.6g}")
    return value


def emit_report(rows: Sequence[BaseModel], fmt, path):
    """
    Writes rows as CSV (header + one line per row) or JSON lines with the same keys.
    Floats carry 6 significant digits; NaN is written as `nan` (CSV) or null (JSONL).
    """
    if not rows:
        raise ValueError("no rows to emit")
    fmt = OutputFormat(fmt)
    path = Path(path)
    records = [row.model_dump() for row in rows]
    try:
        if fmt is OutputFormat.CSV:
            pd.DataFrame(records).to_csv(path, index=False, float_format="%.6g", na_rep="nan", lineterminator="\n")
        else:
            with path.open("w", encoding="utf-8", newline="\n") as handle:
                for record in records:
                    record = {key: _six_significant(value) for key, value in record.items()}
                    record = {key: None if isinstance(value, float) and np.isnan(value) else value
                              for key, value in record.items()}
                    handle.write(json.dumps(record) + "\n")
    except OSError as e:
        raise ReportWriteError(f"cannot write report to {path}: {e}")
    logger.info("wrote %d rows to %s", len(rows), path)
    return path
