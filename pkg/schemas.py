import math
from enum import Enum
from typing import Dict, List, Optional, Union

import numpy as np
from pydantic import BaseModel, ConfigDict, Field, field_validator, model_validator


def _frozen_array(value, dtype=float):
    array = np.array(value, dtype=dtype, copy=True)
    array.setflags(write=False)
    return array


def _split_list(value):
    if isinstance(value, str):
        return [item.strip() for item in value.split(",") if item.strip()]
    return value


# -------- Enumerations --------
class _LowercaseEnum(str, Enum):
    @classmethod
    def _missing_(cls, value):
        if isinstance(value, str):
            lowered = value.strip().lower().replace("-", "_")
            for member in cls:
                if member.value.replace("_", "") == lowered.replace("_", ""):
                    return member
        return None


class Metric(_LowercaseEnum):
    DISPARATE_IMPACT = "disparate_impact"
    OMR = "omr"
    FPR = "fpr"
    FNR = "fnr"

    @property
    def is_mistreatment(self):
        return self is not Metric.DISPARATE_IMPACT


class Scope(_LowercaseEnum):
    LABELED = "labeled"
    UNLABELED = "unlabeled"
    COMBINED = "combined"
    MIXED = "mixed"


class ModelKind(_LowercaseEnum):
    LR = "lr"
    SVM = "svm"


class OutputFormat(_LowercaseEnum):
    CSV = "csv"
    JSONL = "jsonl"


# -------- Numeric value types --------
class Dataset(BaseModel):
    """
    Feature matrix with a binary sensitive vector and optional binary labels.
    The sensitive attribute is never one of the feature columns.
    `numeric_mask` marks standardized numeric columns (one-hot columns are False);
    `row_ids` are the row positions in the loaded dataset.
    """
    model_config = ConfigDict(arbitrary_types_allowed=True, frozen=True)

    features: np.ndarray
    sensitive: np.ndarray
    labels: Optional[np.ndarray] = None
    feature_names: List[str]
    numeric_mask: Optional[np.ndarray] = None
    row_ids: Optional[np.ndarray] = None

    @field_validator("features", mode="before")
    @classmethod
    def _features_matrix(cls, value):
        array = np.array(value, dtype=float, copy=True)
        if array.ndim != 2:
            raise ValueError("features must be a 2-D matrix")
        array.setflags(write=False)
        return array

    @field_validator("sensitive", "labels", "row_ids", mode="before")
    @classmethod
    def _int_vector(cls, value):
        if value is None:
            return None
        array = np.asarray(value)
        if array.ndim != 1:
            raise ValueError("expected a 1-D vector")
        return _frozen_array(array, dtype=int)

    @field_validator("numeric_mask", mode="before")
    @classmethod
    def _bool_vector(cls, value):
        if value is None:
            return None
        return _frozen_array(value, dtype=bool)

    @model_validator(mode="after")
    def _check_shapes(self):
        n_rows, n_cols = self.features.shape
        if self.sensitive.shape[0] != n_rows:
            raise ValueError(f"sensitive has {self.sensitive.shape[0]} entries for {n_rows} rows")
        if not np.isin(self.sensitive, (0, 1)).all():
            raise ValueError("sensitive values must be 0 or 1")
        if self.labels is not None:
            if self.labels.shape[0] != n_rows:
                raise ValueError(f"labels have {self.labels.shape[0]} entries for {n_rows} rows")
            if not np.isin(self.labels, (0, 1)).all():
                raise ValueError("labels must be 0 or 1")
        if len(self.feature_names) != n_cols:
            raise ValueError(f"{len(self.feature_names)} feature names for {n_cols} columns")
        if self.numeric_mask is not None and self.numeric_mask.shape[0] != n_cols:
            raise ValueError("numeric_mask length must equal the number of features")
        if self.row_ids is not None and self.row_ids.shape[0] != n_rows:
            raise ValueError("row_ids length must equal the number of rows")
        return self

    @property
    def n_rows(self):
        return self.features.shape[0]

    @property
    def n_features(self):
        return self.features.shape[1]

    def subset(self, indices):
        indices = np.asarray(indices, dtype=int)
        return Dataset(
            features=self.features[indices],
            sensitive=self.sensitive[indices],
            labels=None if self.labels is None else self.labels[indices],
            feature_names=list(self.feature_names),
            numeric_mask=self.numeric_mask,
            row_ids=None if self.row_ids is None else self.row_ids[indices],
        )

    def with_features(self, features):
        return self.model_copy(update={"features": _frozen_array(features)})


class GraphLaplacian(BaseModel):
    """
    Dense Gaussian-similarity graph over labeled-first rows.
    Blocks are split after the first `n_labeled` rows and columns.
    """
    model_config = ConfigDict(arbitrary_types_allowed=True, frozen=True)

    adjacency: np.ndarray
    degree: np.ndarray
    laplacian: np.ndarray
    n_labeled: int = Field(ge=1)
    sigma: float = Field(gt=0)

    @property
    def ll(self):
        return self.laplacian[: self.n_labeled, : self.n_labeled]

    @property
    def lu(self):
        return self.laplacian[: self.n_labeled, self.n_labeled:]

    @property
    def ul(self):
        return self.laplacian[self.n_labeled:, : self.n_labeled]

    @property
    def uu(self):
        return self.laplacian[self.n_labeled:, self.n_labeled:]


class ModelParams(BaseModel):
    """Classifier weights; the last entry is the intercept."""
    model_config = ConfigDict(arbitrary_types_allowed=True, frozen=True)

    w: np.ndarray

    @field_validator("w", mode="before")
    @classmethod
    def _finite_vector(cls, value):
        array = np.array(value, dtype=float, copy=True).ravel()
        if not np.isfinite(array).all():
            raise ValueError("model weights must be finite")
        array.setflags(write=False)
        return array


# -------- Configuration Schemas --------
class SplitSpec(BaseModel):
    n_labeled: int = Field(ge=0)
    n_test: int = Field(ge=0)
    # unlabeled rows kept from the remainder; None keeps all of them
    n_unlabeled: Optional[int] = Field(default=None, ge=0)
    seed: int = 0


class FairnessConstraintSpec(BaseModel):
    model_config = ConfigDict(frozen=True)

    metric: Metric
    scope: Scope
    c: float = Field(ge=0)
    c2: Optional[float] = Field(default=None, ge=0)

    @model_validator(mode="after")
    def _second_threshold(self):
        if self.scope is Scope.COMBINED and self.c2 is None:
            raise ValueError("combined scope needs a second threshold c2")
        if self.scope is not Scope.COMBINED and self.c2 is not None:
            raise ValueError("c2 is only valid with combined scope")
        return self

    def supervised(self):
        """Same constraint restricted to labeled rows (the FS baseline)."""
        return FairnessConstraintSpec(metric=self.metric, scope=Scope.LABELED, c=self.c)


class SolverConfig(BaseModel):
    alpha: float = Field(default=1.0, gt=0)
    T: float = Field(default=0.5, gt=0, lt=1)
    max_outer_iters: int = Field(default=50, ge=1)
    outer_tol: float = Field(default=1e-5, gt=0)
    ccp_tau: float = Field(default=1.0, gt=0)
    ccp_mu: float = Field(default=1.2, gt=1)
    ccp_tau_max: float = Field(default=1e8, gt=0)
    ccp_max_iters: int = Field(default=100, ge=1)
    ccp_slack_tol: float = Field(default=1e-4, gt=0)
    wstep_tol: float = Field(default=1e-6, gt=0)
    feasibility_tol: float = Field(default=1e-6, gt=0)
    al_max_rounds: int = Field(default=60, ge=1)
    ridge_eps: float = Field(default=1e-8, gt=0)
    ridge: float = Field(default=0.0, ge=0)
    seed: int = 0


class ExperimentConfig(BaseModel):
    model_config = ConfigDict(extra="forbid")

    data_path: Optional[str] = None
    sensitive_column: Optional[str] = None
    label_column: Optional[str] = None
    drop_columns: List[str] = Field(default_factory=list)
    synthetic: bool = False
    synthetic_rows: int = Field(default=600, ge=20)
    model: ModelKind = ModelKind.LR
    metric: Metric = Metric.DISPARATE_IMPACT
    scope: Scope = Scope.MIXED
    c_grid: List[float]
    c2: Optional[float] = Field(default=None, ge=0)
    unlabeled_sizes: Optional[List[int]] = None
    n_seeds: int = Field(default=10, ge=1)
    base_seed: int = 0
    n_labeled: int = Field(default=200, ge=1)
    n_test: int = Field(default=200, ge=1)
    max_rows: Optional[int] = Field(default=None, ge=3)
    sigma: float = Field(default=0.5, gt=0)
    n_bootstrap: int = Field(default=50, ge=2)
    solver: SolverConfig = Field(default_factory=SolverConfig)
    output_path: Optional[str] = None
    output_format: OutputFormat = OutputFormat.CSV
    emit_std: bool = True

    @field_validator("drop_columns", "c_grid", "unlabeled_sizes", mode="before")
    @classmethod
    def _comma_lists(cls, value):
        return _split_list(value)

    @field_validator("c_grid")
    @classmethod
    def _non_negative_grid(cls, value):
        if not value:
            raise ValueError("c_grid must not be empty")
        if any(c < 0 for c in value):
            raise ValueError("c_grid values must be non-negative")
        return value

    @field_validator("unlabeled_sizes")
    @classmethod
    def _non_negative_sizes(cls, value):
        if value is not None and any(size < 0 for size in value):
            raise ValueError("unlabeled_sizes must be non-negative")
        return value

    @model_validator(mode="after")
    def _data_source(self):
        if not self.synthetic:
            missing = [name for name in ("data_path", "sensitive_column", "label_column")
                       if getattr(self, name) is None]
            if missing:
                raise ValueError(f"missing {', '.join(missing)} (or set synthetic = true)")
        return self

    @classmethod
    def from_flat(cls, values: Dict[str, str]):
        """Builds a config from flat key/value pairs; solver keys are routed to `solver`."""
        solver_keys = set(SolverConfig.model_fields)
        top, solver = {}, {}
        for key, value in values.items():
            if key in solver_keys:
                solver[key] = value
            else:
                top[key] = value
        return cls(**top, solver=SolverConfig(**solver))

    def constraint(self, c):
        # combined scope without an explicit c2 sweeps both thresholds together
        c2 = None
        if self.scope is Scope.COMBINED:
            c2 = c if self.c2 is None else self.c2
        return FairnessConstraintSpec(metric=self.metric, scope=self.scope, c=c, c2=c2)


# -------- Report Schemas --------
class ConstraintValue(BaseModel):
    value: float
    threshold: float

    def satisfied(self, tol=0.0):
        return abs(self.value) <= self.threshold + tol


class DiscriminationReport(BaseModel):
    metric: Metric
    gamma0: float = Field(ge=0, le=1)
    gamma1: float = Field(ge=0, le=1)
    level: float

    @model_validator(mode="after")
    def _level_is_gap(self):
        if self.level != abs(self.gamma0 - self.gamma1):
            raise ValueError("level must equal |gamma0 - gamma1|")
        return self

    @classmethod
    def from_rates(cls, metric, gamma0, gamma1):
        return cls(metric=metric, gamma0=gamma0, gamma1=gamma1, level=abs(gamma0 - gamma1))


class ObjectiveStep(BaseModel):
    after_w: float
    after_propagation: Optional[float] = None
    after_threshold: Optional[float] = None


class TrainReport(BaseModel):
    model_config = ConfigDict(arbitrary_types_allowed=True)

    w: ModelParams
    y_u: np.ndarray
    objective_trace: List[float]
    steps: List[ObjectiveStep]
    constraint_trace: List[List[ConstraintValue]]
    slack_trace: List[List[float]] = Field(default_factory=list)
    converged: bool
    iters: int
    scope: Scope


class GroupDecomposition(BaseModel):
    bias: float = Field(ge=0, le=1)
    variance: float
    unsigned_variance: float = Field(ge=0, le=1)
    noise: float = Field(ge=0, le=1)
    error_rate: float = Field(ge=0, le=1)


class DecompositionReport(BaseModel):
    groups: Dict[int, GroupDecomposition]
    level_decomposed: float
    n_bootstrap: int
    main_predictions: List[int]

    @model_validator(mode="after")
    def _recomposes(self):
        g0, g1 = self.groups[0], self.groups[1]
        expected = abs((g0.bias - g1.bias) + (g0.variance - g1.variance) + (g0.noise - g1.noise))
        if not math.isclose(self.level_decomposed, expected, rel_tol=0, abs_tol=1e-12):
            raise ValueError("level_decomposed does not recompose from the group components")
        return self

    @property
    def variance_gap(self):
        return abs(self.groups[0].variance - self.groups[1].variance)


class UnlabeledNoiseReport(BaseModel):
    """Mislabel rates of propagated labels, keyed 'y{label}_z{group}'; None marks an empty cell."""
    rates: Dict[str, Optional[float]]
    group0: float
    group1: float
    gap: float
    incomplete: bool = False


# -------- Result Rows --------
class ResultRow(BaseModel):
    c: float
    size: int
    seed: Union[int, str]
    acc: float
    dis_di: float
    dis_omr: float
    dis_fpr: float
    dis_fnr: float
    status: str


class BaselineRow(BaseModel):
    method: str
    seed: Union[int, str]
    acc: float
    dis_di: float
    dis_omr: float
    dis_fpr: float
    dis_fnr: float
    status: str


class DecompositionRow(BaseModel):
    setting: str
    seed: int
    group: int
    bias: float
    variance: float
    noise: float
    error_rate: float
    variance_gap: float
    level: float
    # propagated-label noise on the unlabeled part; NaN for the labeled-only setting
    noise_u_y0_z0: float = float("nan")
    noise_u_y0_z1: float = float("nan")
    noise_u_y1_z0: float = float("nan")
    noise_u_y1_z1: float = float("nan")
    noise_u_gap: float = float("nan")


# -------- Service Schemas --------
class RunOut(BaseModel):
    run_id: int
    kind: str
    status: str
    rows: List[dict] = Field(default_factory=list)


class RunSummary(BaseModel):
    model_config = ConfigDict(from_attributes=True)

    id: int
    kind: str
    status: str
