"""Request and response bodies for the HTTP service.

The fit payload mirrors the versioned JSON written to disk, so a stored
fit.json can be posted back verbatim to the prediction and
goodness-of-fit endpoints.
"""

from __future__ import annotations

from pydantic import BaseModel, Field


class BaselineModel(BaseModel):
    family: str
    n_interior_knots: int = 0
    interior_knots: list[float] | None = None
    boundary: tuple[float, float] | None = None


class SpecModel(BaseModel):
    """Mirror of the model block accepted in run configurations."""

    fixed_marker_covariates: list[str] = ["intercept", "time"]
    random_marker_terms: list[str] = ["intercept"]
    fixed_variance_covariates: list[str] = ["intercept"]
    random_variance_terms: list[str] = []
    survival_covariates: list[list[str]] | None = None
    associations: list[list[str]] | None = None
    baselines: list[BaselineModel | str] | None = None
    n_events: int = 2
    delayed_entry: bool = False
    independent_variance_effects: bool = False

    def as_config_dict(self) -> dict:
        d = self.model_dump()
        # omitted blocks fall back to the config-layer defaults
        return {k: v for k, v in d.items() if v is not None}


class LongRowModel(BaseModel):
    id: str
    time: float
    value: float
    covariates: dict[str, float] = Field(default_factory=dict)


class SurvRowModel(BaseModel):
    id: str
    entry_time: float = 0.0
    event_time: float
    status: int
    covariates: dict[str, float] = Field(default_factory=dict)


class DataModel(BaseModel):
    longitudinal: list[LongRowModel] = Field(default_factory=list)
    survival: list[SurvRowModel]


class CriteriaModel(BaseModel):
    eps_param: float = 1e-4
    eps_fn: float = 1e-4
    eps_rdm: float = 1e-3
    max_iter: int = 100


# -- fit ---------------------------------------------------------------------

class ParameterEstimate(BaseModel):
    name: str
    estimate: float
    se: float | None


class ReCovarianceModel(BaseModel):
    labels: list[str]
    estimates: list[float]
    ses: list[float] | None
    vcov: list[list[float]] | None


class ConvergedModel(BaseModel):
    param: bool
    fn: bool
    rdm: bool
    rdm_value: float | None
    converged: bool


class FitPayload(BaseModel):
    """The stable on-disk fit format, as a body."""

    format: str
    format_version: int
    spec: dict
    parameters: list[ParameterEstimate]
    vcov: list[list[float]] | None
    random_effects_covariance: ReCovarianceModel | None
    loglik: float
    loglik_step1: float
    aic: float
    iterations: int
    steps: tuple[int, int]
    converged: ConvergedModel
    messages: list[str] = Field(default_factory=list)


class IterationRecord(BaseModel):
    step: int
    iteration: int
    loglik: float
    damping: float
    rdm: float | None


class FitRequest(BaseModel):
    model: SpecModel
    data: DataModel
    s1: int = 500
    s2: int = 5000
    criteria: CriteriaModel | None = None
    init: list[float] | None = None
    trace: bool = False


class FitResponse(BaseModel):
    result: FitPayload
    table: str
    trace: list[IterationRecord] = Field(default_factory=list)


# -- simulate ----------------------------------------------------------------

class SimulateRequest(BaseModel):
    scenario: str
    n_subjects: int = 500
    seed: int | None = None
    quadratic_coefficient: float = 0.5


class SimulateResponse(BaseModel):
    scenario: str
    n_events: int
    longitudinal: list[LongRowModel]
    survival: list[SurvRowModel]


# -- predict -----------------------------------------------------------------

class PredictRequest(BaseModel):
    fit: FitPayload
    data: DataModel
    subject: str
    s: float
    horizons: list[float]
    k: int = 0
    L: int = 0          # 0 skips the parameter-uncertainty interval
    S: int = 500
    seed: int | None = None
    band_times: list[float] = Field(default_factory=list)


class CurveRow(BaseModel):
    time: float
    mean: float
    lower: float
    upper: float


class PredictResponse(BaseModel):
    subject: str
    s: float
    k: int
    rows: list[CurveRow]
    band: list[CurveRow] = Field(default_factory=list)
    repaired: bool = False
    n_rejected: int = 0


# -- goodness of fit ---------------------------------------------------------

class GofRequest(BaseModel):
    fit: FitPayload
    data: DataModel
    k: int = 0
    stratify_by: str | None = None
    levels: list[float] | None = None


class GofCurve(BaseModel):
    level: float | None
    times: list[float]
    na: list[float]
    predicted: list[float]


class GofResponse(BaseModel):
    k: int
    strata: list[GofCurve]


# -- replicate ---------------------------------------------------------------

class ReplicateRequest(BaseModel):
    scenario: str
    n_subjects: int = 500
    r: int = 30
    s1: int = 500
    s2: int = 5000
    seed: int | None = None
    init: str = "default"  # "default" or "truth"
    quadratic_coefficient: float = 0.5
    criteria: CriteriaModel | None = None


class ReplicateRowModel(BaseModel):
    parameter: str
    true: float
    mean: float
    empirical_se: float
    mean_asymptotic_se: float
    coverage: float


class ReplicateResponse(BaseModel):
    scenario: str
    n_requested: int
    n_converged: int
    failures: list[str]
    rows: list[ReplicateRowModel]


class HealthResponse(BaseModel):
    status: str
    name: str
    version: str


class ErrorBody(BaseModel):
    error: str
    message: str
