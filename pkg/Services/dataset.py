import logging
from pathlib import Path
from typing import NamedTuple

import numpy as np
import pandas as pd
from sklearn.impute import SimpleImputer
from sklearn.preprocessing import StandardScaler

from schemas import Dataset, SplitSpec
from Services.errors import DataError

logger = logging.getLogger(__name__)


class DataSplit(NamedTuple):
    labeled: Dataset
    unlabeled: Dataset
    test: Dataset


# frames keep the read_csv index, so index + 1 is the data row in the file
def _binary_column(frame, column):
    parsed = pd.to_numeric(frame[column], errors="coerce")
    for index, raw, value in zip(frame.index, frame[column], parsed):
        if pd.isna(value):
            raise DataError(f"unparseable cell '{raw}'", row=index + 1, column=column)
        if value not in (0, 1):
            raise DataError(f"non-binary value '{raw}'", row=index + 1, column=column)
    return parsed.astype(int).to_numpy()


def _is_numeric(frame, column):
    values = frame[column].dropna()
    if values.empty:
        return True
    parsed = pd.to_numeric(values, errors="coerce")
    if parsed.notna().all():
        return True
    # mostly numeric columns with a few bad cells are data errors, not categories
    if parsed.notna().mean() > 0.5:
        bad = parsed.index[parsed.isna()][0]
        raise DataError(f"unparseable cell '{values[bad]}'", row=bad + 1, column=column)
    return False


def load_csv(path, sensitive_column, label_column, drop_columns=()):
    """
    Reads a UTF-8 CSV with a header row into a Dataset.

    - rows with a missing label or sensitive value are dropped
    - the sensitive and label columns must already be coded 0/1
    - categorical columns are one-hot encoded (a missing category is its own level)
    - numeric columns are standardized; missing numeric cells stay NaN until `split`
      imputes them with the training-pool mean
    """
    path = Path(path)
    if not path.exists():
        raise DataError(f"file not found: {path}")
    try:
        frame = pd.read_csv(path, dtype=str, encoding="utf-8", skipinitialspace=True)
    except pd.errors.EmptyDataError:
        raise DataError(f"empty file: {path}")
    except pd.errors.ParserError as e:
        raise DataError(f"malformed CSV {path}: {e}")
    except UnicodeDecodeError as e:
        raise DataError(f"{path} is not valid UTF-8: {e}")

    for column in [sensitive_column, label_column, *drop_columns]:
        if column not in frame.columns:
            raise DataError("missing column", column=column)

    frame = frame.dropna(subset=[sensitive_column, label_column])
    if frame.empty:
        raise DataError(f"no usable rows in {path}")

    sensitive = _binary_column(frame, sensitive_column)
    if np.unique(sensitive).size < 2:
        raise DataError("sensitive column has one value", column=sensitive_column)
    labels = _binary_column(frame, label_column)

    blocks, numeric_flags = [], []
    for column in frame.columns:
        if column in (sensitive_column, label_column) or column in drop_columns:
            continue
        if _is_numeric(frame, column):
            blocks.append(pd.to_numeric(frame[column]).astype(float).to_frame(column))
            numeric_flags.append(True)
        else:
            dummies = pd.get_dummies(frame[column].fillna("missing"), prefix=column, dtype=float)
            blocks.append(dummies)
            numeric_flags.extend([False] * dummies.shape[1])

    if not blocks:
        raise DataError("no feature columns left after removing sensitive and label columns")
    features = pd.concat(blocks, axis=1)
    numeric_mask = np.array(numeric_flags, dtype=bool)

    matrix = features.to_numpy(dtype=float)
    if numeric_mask.any():
        # StandardScaler ignores NaN when fitting and keeps it when transforming
        matrix[:, numeric_mask] = StandardScaler().fit_transform(matrix[:, numeric_mask])

    logger.info("loaded %s: %d rows, %d features", path.name, matrix.shape[0], matrix.shape[1])
    return Dataset(
        features=matrix,
        sensitive=sensitive,
        labels=labels,
        feature_names=list(features.columns),
        numeric_mask=numeric_mask,
        row_ids=np.arange(matrix.shape[0]),
    )


def _standardize_on_pool(parts, pool_rows, numeric_mask):
    columns = np.ones(parts[0].n_features, dtype=bool) if numeric_mask is None else np.asarray(numeric_mask)
    if not columns.any():
        return parts
    imputer = SimpleImputer(strategy="mean", keep_empty_features=True)
    scaler = StandardScaler()
    scaler.fit(imputer.fit_transform(pool_rows[:, columns]))
    standardized = []
    for part in parts:
        if part.n_rows == 0:
            # sklearn rejects zero-sample inputs
            standardized.append(part)
            continue
        matrix = np.array(part.features, dtype=float)
        matrix[:, columns] = scaler.transform(imputer.transform(matrix[:, columns]))
        standardized.append(part.with_features(matrix))
    return standardized


def split(d: Dataset, spec: SplitSpec) -> DataSplit:
    """
    Random disjoint labeled/unlabeled/test partition.
    Numeric columns are re-standardized with statistics of the labeled+unlabeled pool.
    Unlabeled rows keep their labels for evaluation only; training never reads them.

    With `spec.n_unlabeled` set, only the first that many rows of the shuffled remainder
    become the unlabeled part (0 is allowed), and only they enter the pool. Labeled and
    test rows do not depend on it.
    """
    total = d.n_rows
    if spec.n_labeled + spec.n_test > total:
        raise DataError(f"split sizes {spec.n_labeled}+{spec.n_test} exceed {total} rows")
    remainder = total - spec.n_labeled - spec.n_test
    if min(spec.n_labeled, spec.n_test) == 0 or (spec.n_unlabeled is None and remainder == 0):
        raise DataError(
            f"empty split part (labeled={spec.n_labeled}, unlabeled={remainder}, test={spec.n_test})"
        )
    n_unlabeled = remainder if spec.n_unlabeled is None else spec.n_unlabeled
    if n_unlabeled > remainder:
        raise DataError(f"{n_unlabeled} unlabeled rows requested, {remainder} left after labeled and test")

    order = np.random.default_rng(spec.seed).permutation(total)
    labeled_idx = order[: spec.n_labeled]
    test_idx = order[spec.n_labeled: spec.n_labeled + spec.n_test]
    unlabeled_idx = order[spec.n_labeled + spec.n_test: spec.n_labeled + spec.n_test + n_unlabeled]

    parts = [d.subset(labeled_idx), d.subset(unlabeled_idx), d.subset(test_idx)]
    pool = d.features[np.concatenate([labeled_idx, unlabeled_idx])]
    return DataSplit(*_standardize_on_pool(parts, pool, d.numeric_mask))


def subsample(d: Dataset, max_rows, seed):
    """Seeded row subsample, used to keep the dense graph tractable on large files."""
    if max_rows is None or d.n_rows <= max_rows:
        return d
    rows = np.sort(np.random.default_rng(seed).choice(d.n_rows, size=max_rows, replace=False))
    return d.subset(rows)
