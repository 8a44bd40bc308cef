"""Synthetic data generation and replicate-study summaries.

Generates datasets from the joint location-scale model itself: random
effects from N(0, Sigma), markers from the heteroscedastic Gaussian
model, and event times by inverting each cause-specific cumulative
hazard at an exponential draw with Brent's method.  Administrative
censoring happens at the last scheduled visit and marker measurements
after the observed event time are removed, so a generated dataset looks
exactly like a study that followed subjects until event or end of
schedule.

Five stock designs are provided (:func:`scenario_a` .. :func:`scenario_e`).
A, C use seven visits over five years; B, D, E use thirteen.  C and D
let the location and scale effects correlate; E generates a quadratic
trajectory but pairs it with a linear analysis model, one event only.

:func:`replicate_study` repeats generate-then-fit R times and reports,
per parameter, the mean estimate, the empirical SD across replicates,
the mean asymptotic SE, and the coverage of the 95% Wald interval.
"""

from __future__ import annotations

import dataclasses
from dataclasses import dataclass

import numpy as np
from scipy.optimize import brentq

from .errors import InputError, InternalError, JointvarError, OptimizerFailure
from .estimation import ConvergenceCriteria, default_init, delta_method_cov, fit
from .hazard import cumulative_hazard
from .model import (
    _TIME_TERMS,
    AssociationFlags,
    BaselineFamily,
    BaselineSpec,
    Dataset,
    ModelSpec,
    ParameterVector,
    SubjectData,
    covariance_from_cholesky,
    design_matrix,
    get_layout,
)

# Covariate-free stand-in subject: generation evaluates designs at given
# times only, never at stored measurements, so one shared instance works.
_PROBE = SubjectData(
    id="generator",
    times=np.empty(0),
    values=np.empty(0),
    event_time=np.inf,
    event_indicator=0,
)


@dataclass(frozen=True)
class ScenarioConfig:
    """Complete recipe for one synthetic dataset.

    ``truth`` is expressed for ``spec``, the model later used for
    estimation.  A ``quadratic`` trajectory adds a curvature term with
    coefficient ``quadratic_coefficient`` to the generated mean only,
    which is how the misspecified design (fit linear, generate
    quadratic) is expressed.

    ``jitter`` is the half-width of the uniform perturbation around
    each nominal visit time; it must stay below half the smallest gap
    so visits cannot swap order.
    """

    scenario: str
    n_subjects: int
    nominal_times: tuple[float, ...]
    jitter: float
    spec: ModelSpec
    truth: ParameterVector
    trajectory: str = "linear"
    quadratic_coefficient: float = 0.0
    seed: int | np.random.SeedSequence | None = None

    def __post_init__(self):
        object.__setattr__(
            self, "nominal_times",
            tuple(float(t) for t in self.nominal_times),
        )
        if self.n_subjects < 1:
            raise InputError("n_subjects must be at least 1")
        t = np.asarray(self.nominal_times)
        if t.size == 0:
            raise InputError("at least one nominal visit time is required")
        if t[0] < 0.0:
            raise InputError("nominal visit times must be nonnegative")
        if t.size > 1 and np.any(np.diff(t) <= 0):
            raise InputError("nominal visit times must be strictly increasing")
        if self.jitter < 0.0:
            raise InputError("visit jitter must be nonnegative")
        if t.size > 1 and self.jitter >= np.min(np.diff(t)) / 2.0:
            raise InputError(
                "visit jitter must be below half the smallest visit gap"
            )
        if self.trajectory not in ("linear", "quadratic"):
            raise InputError(
                f"trajectory must be 'linear' or 'quadratic',"
                f" got {self.trajectory!r}"
            )
        for name in (self.spec.fixed_marker_covariates
                     + self.spec.fixed_variance_covariates):
            if name not in _TIME_TERMS:
                raise InputError(
                    f"generation only supports time-based designs,"
                    f" cannot generate covariate {name!r}"
                )
        if any(self.spec.survival_covariates_per_event):
            raise InputError(
                "generation does not support survival covariates"
            )
        if (self.trajectory == "quadratic"
                and "time2" in self.spec.fixed_marker_covariates):
            raise InputError(
                "quadratic trajectories add their own curvature term;"
                " drop 'time2' from the analysis model"
            )
        try:
            get_layout(self.spec).flatten(self.truth)
        except InternalError as exc:
            raise InputError(
                f"truth does not match the model spec: {exc}"
            ) from None

    @property
    def n_events(self) -> int:
        return self.spec.n_events

    @property
    def correlated_effects(self) -> bool:
        return not self.spec.independent_variance_effects


@dataclass(frozen=True)
class _GenModel:
    """Generation-side spec and parameters, plus Brent bracketing."""

    spec: ModelSpec
    params: ParameterVector
    bracket0: float
    cap: float


def _gen_model(config: ScenarioConfig) -> _GenModel:
    spec, truth = config.spec, config.truth
    if config.trajectory == "quadratic":
        spec = ModelSpec(
            fixed_marker_covariates=spec.fixed_marker_covariates + ("time2",),
            random_marker_terms=spec.random_marker_terms,
            fixed_variance_covariates=spec.fixed_variance_covariates,
            random_variance_terms=spec.random_variance_terms,
            survival_covariates_per_event=spec.survival_covariates_per_event,
            association_flags_per_event=spec.association_flags_per_event,
            baseline_family_per_event=spec.baseline_family_per_event,
            n_events=spec.n_events,
            delayed_entry=spec.delayed_entry,
            independent_variance_effects=spec.independent_variance_effects,
        )
        truth = ParameterVector(
            beta=np.append(truth.beta, config.quadratic_coefficient),
            mu=truth.mu,
            chol_lower=truth.chol_lower,
            gamma=truth.gamma,
            alpha=truth.alpha,
            baseline=truth.baseline,
        )
    horizon = config.nominal_times[-1]
    bracket0 = horizon if horizon > 0.0 else 1.0
    return _GenModel(spec=spec, params=truth,
                     bracket0=bracket0, cap=100.0 * bracket0)


# --------------------------------------------------------------------------
# Elementary generators
# --------------------------------------------------------------------------

def gen_visit_times(config: ScenarioConfig,
                    rng: np.random.Generator) -> np.ndarray:
    """Nominal visit times, each perturbed by Uniform(-w, w).

    The first time is clamped at zero; with the jitter below half the
    smallest gap the result is always strictly increasing.  A zero
    jitter returns the nominal schedule without consuming draws.
    """
    t = np.asarray(config.nominal_times, dtype=float)
    if config.jitter > 0.0:
        t = t + rng.uniform(-config.jitter, config.jitter, size=t.size)
        t[0] = max(t[0], 0.0)
    return t


def gen_effects(config: ScenarioConfig, rng: np.random.Generator,
                n: int | None = None) -> np.ndarray:
    """Joint random effects (b, tau) from N(0, Sigma).

    Returns one flat vector by default, or an (n, dim) matrix.  Uses
    the truth's Cholesky factor directly, so masked cross blocks stay
    exactly independent.
    """
    size = (1 if n is None else n, config.spec.dim_effects)
    out = rng.standard_normal(size) @ config.truth.chol_lower.T
    return out[0] if n is None else out


def gen_marker(config: ScenarioConfig, b, tau, times,
               rng: np.random.Generator) -> np.ndarray:
    """Marker values at the given times for realized effects (b, tau).

    Mean follows the generation trajectory (linear, or with the extra
    curvature term); noise is Gaussian with subject- and time-specific
    SD exp(O'mu + M'tau).
    """
    gm = _gen_model(config)
    t = np.asarray(times, dtype=float)
    b = np.asarray(b, dtype=float)
    tau = np.asarray(tau, dtype=float)
    mean = (design_matrix(gm.spec, _PROBE, t, "X") @ gm.params.beta
            + design_matrix(gm.spec, _PROBE, t, "Z") @ b)
    lsd = (design_matrix(gm.spec, _PROBE, t, "O") @ gm.params.mu
           + design_matrix(gm.spec, _PROBE, t, "M") @ tau)
    return mean + np.exp(lsd) * rng.standard_normal(t.size)


def _event_time(gm: _GenModel, b, tau, k: int, u: float) -> float:
    target = -np.log(u)
    if target == 0.0:
        return 0.0

    def shifted(t: float) -> float:
        return cumulative_hazard(
            gm.spec, gm.params, _PROBE, b, tau, 0.0, t, k
        ) - target

    hi = gm.bracket0
    val = shifted(hi)
    while val < 0.0 and hi < gm.cap:
        hi = min(2.0 * hi, gm.cap)
        val = shifted(hi)
    if val < 0.0:
        return np.inf
    return float(brentq(shifted, 0.0, hi, xtol=1e-10))


def gen_event_time(config: ScenarioConfig, b, tau, k: int, u: float) -> float:
    """Latent time for event k by inverting its cumulative hazard.

    Solves Lambda_k(T) = -log(u) for a uniform draw u with Brent's
    method, doubling the bracket from the last scheduled visit up to a
    cap of 100x that visit.  Beyond the cap the subject is effectively
    event-free and +inf is returned (administrative censoring handles
    it downstream).
    """
    if not 0.0 < u <= 1.0:
        raise InputError("u must be a uniform draw in (0, 1]")
    if not 0 <= k < config.n_events:
        raise InputError(f"event index {k} out of range")
    return _event_time(_gen_model(config), np.asarray(b, dtype=float),
                       np.asarray(tau, dtype=float), k, u)


def gen_dataset(config: ScenarioConfig) -> Dataset:
    """One full synthetic dataset under the configured truth.

    Per subject, in fixed draw order (effects, visit jitter, marker
    noise, then one uniform per event): draw (b, tau) ~ N(0, Sigma),
    visits, markers, and latent event times; censor at the last visit;
    keep the earliest time, with censoring winning ties; drop
    measurements after the observed time.  Same seed, same dataset.
    """
    gm = _gen_model(config)
    rng = np.random.default_rng(config.seed)
    d_b = config.spec.dim_b
    subjects = []
    for i in range(config.n_subjects):
        eff = gen_effects(config, rng)
        b, tau = eff[:d_b], eff[d_b:]
        times = gen_visit_times(config, rng)
        values = gen_marker(config, b, tau, times, rng)
        observed = float(times[-1])
        indicator = 0
        for k in range(config.n_events):
            u = 1.0 - rng.random()  # in (0, 1]
            latent = _event_time(gm, b, tau, k, u)
            if latent < observed:
                observed = latent
                indicator = k + 1
        keep = times <= observed
        subjects.append(SubjectData(
            id=f"s{i + 1:05d}",
            times=times[keep],
            values=values[keep],
            event_time=observed,
            event_indicator=indicator,
        ))
    return Dataset(subjects=tuple(subjects))


# --------------------------------------------------------------------------
# Replicate studies
# --------------------------------------------------------------------------

@dataclass(frozen=True)
class ReplicateRow:
    """Summary line for one reported parameter."""

    parameter: str
    true: float
    mean: float
    empirical_se: float
    mean_asymptotic_se: float
    coverage: float


@dataclass(frozen=True)
class ReplicateSummary:
    """Replicate-study outcome: per-parameter rows plus bookkeeping.

    ``estimates`` and ``ses`` hold the per-replicate reporting-scale
    values (converged replicates only, one row each) for downstream
    inspection; ``failures`` records why excluded replicates failed.
    """

    scenario: str
    rows: tuple[ReplicateRow, ...]
    n_requested: int
    n_converged: int
    failures: tuple[str, ...]
    estimates: np.ndarray
    ses: np.ndarray

    def __post_init__(self):
        for name in ("estimates", "ses"):
            a = np.asarray(getattr(self, name), dtype=float)
            a.setflags(write=False)
            object.__setattr__(self, name, a)


def _sigma_report_pairs(spec: ModelSpec) -> list[tuple[int, int]]:
    d = spec.dim_effects
    pairs = [(a, c) for a in range(d) for c in range(a + 1)]
    if spec.independent_variance_effects:
        pairs = [(a, c) for a, c in pairs
                 if not (a >= spec.dim_b and c < spec.dim_b)]
    return pairs


def _report_labels(spec: ModelSpec) -> list[str]:
    lay = get_layout(spec)
    labels = list(lay.names[lay.beta_slice]) + list(lay.names[lay.mu_slice])
    labels += [f"sigma[{a},{c}]" for a, c in _sigma_report_pairs(spec)]
    for k in range(spec.n_events):
        labels += lay.names[lay.gamma_slices[k]]
        labels += lay.names[lay.alpha_slices[k]]
        labels += lay.names[lay.baseline_slices[k]]
    return labels


def _report_values(spec: ModelSpec, flat: np.ndarray) -> np.ndarray:
    """Flat estimates mapped to the reporting scale.

    Cholesky entries become covariance entries, and the Weibull shape
    root is folded to its absolute value (the likelihood only sees its
    square, so the sign is arbitrary).
    """
    lay = get_layout(spec)
    params = lay.unflatten(flat)
    sigma = covariance_from_cholesky(params.chol_lower)
    parts = [flat[lay.beta_slice], flat[lay.mu_slice],
             np.array([sigma[a, c] for a, c in _sigma_report_pairs(spec)])]
    for k in range(spec.n_events):
        parts.append(flat[lay.gamma_slices[k]])
        parts.append(flat[lay.alpha_slices[k]])
        btail = flat[lay.baseline_slices[k]].copy()
        if spec.baseline_family_per_event[k].family is BaselineFamily.WEIBULL:
            btail[0] = abs(btail[0])
        parts.append(btail)
    return np.concatenate(parts)


def _report_ses(spec: ModelSpec, se_flat: np.ndarray,
                sigma_vcov: np.ndarray) -> np.ndarray:
    """Asymptotic SEs on the reporting scale.

    ``sigma_vcov`` covers the full half-vectorized covariance matrix
    (delta method); folding the Weibull root leaves its SE unchanged.
    """
    lay = get_layout(spec)
    var = np.maximum(np.diag(sigma_vcov), 0.0)
    idx = [a * (a + 1) // 2 + c for a, c in _sigma_report_pairs(spec)]
    parts = [se_flat[lay.beta_slice], se_flat[lay.mu_slice],
             np.sqrt(var[idx])]
    for k in range(spec.n_events):
        parts.append(se_flat[lay.gamma_slices[k]])
        parts.append(se_flat[lay.alpha_slices[k]])
        parts.append(se_flat[lay.baseline_slices[k]])
    return np.concatenate(parts)


def replicate_study(config: ScenarioConfig, R: int, *,
                    S1: int = 500, S2: int = 5000,
                    criteria: ConvergenceCriteria | None = None,
                    init: ParameterVector | np.ndarray | None = None,
                    seed=None, estimator=None,
                    progress=None) -> ReplicateSummary:
    """Generate-and-fit R times; summarize bias, spread, and coverage.

    Each replicate gets an independent child seed (data and estimator
    streams split again below that), so results are reproducible and
    order-independent.  Replicates that raise, stall, or end without an
    invertible Hessian are excluded from the summary and counted in
    ``failures``.

    ``init`` seeds every fit (default: moment-based starting values per
    replicate).  ``estimator`` replaces the built-in fit: it is called
    as ``estimator(dataset, rng)`` and must return flat estimates and
    flat SEs; covariance-entry SEs are then derived treating the
    Cholesky errors as independent.  ``progress(r, R, ok)`` is invoked
    after each replicate.
    """
    if R < 2:
        raise InputError("replicate studies need at least 2 replicates")
    spec = config.spec
    lay = get_layout(spec)
    labels = _report_labels(spec)
    truth_flat = lay.flatten(config.truth)
    truth_rep = _report_values(spec, truth_flat)

    root = np.random.SeedSequence(config.seed if seed is None else seed)
    estimates, ses, failures = [], [], []
    for r, child in enumerate(root.spawn(R)):
        data_seed, est_seed = child.spawn(2)
        ds = gen_dataset(dataclasses.replace(config, seed=data_seed))
        try:
            if estimator is None:
                x0 = default_init(spec, ds) if init is None else init
                res = fit(spec, ds, x0, criteria=criteria, S1=S1, S2=S2)
                if not res.ok:
                    reasons = res.messages or ("did not converge",)
                    raise OptimizerFailure("; ".join(reasons))
                est_flat, se_flat = res.theta_flat, res.se
                sigma_vcov = res.re_cov_vcov
            else:
                est_flat, se_flat = estimator(
                    ds, np.random.default_rng(est_seed)
                )
                if se_flat is None:
                    raise OptimizerFailure("estimator returned no SEs")
                est_flat = np.asarray(est_flat, dtype=float)
                se_flat = np.asarray(se_flat, dtype=float)
                chol = lay.unflatten(est_flat).chol_lower
                vcov_L = np.diag(se_flat[lay.chol_slice] ** 2)
                sigma_vcov = delta_method_cov(chol, vcov_L,
                                              pairs=lay.chol_pairs)
        except JointvarError as exc:
            failures.append(f"replicate {r + 1}: {exc}")
            if progress is not None:
                progress(r + 1, R, False)
            continue
        estimates.append(_report_values(spec, est_flat))
        ses.append(_report_ses(spec, se_flat, sigma_vcov))
        if progress is not None:
            progress(r + 1, R, True)

    if not estimates:
        raise OptimizerFailure(
            f"all {R} replicates failed; first failure: {failures[0]}"
        )
    E = np.asarray(estimates)
    S = np.asarray(ses)
    covered = np.abs(E - truth_rep) <= 1.96 * S
    rows = tuple(
        ReplicateRow(
            parameter=labels[j],
            true=float(truth_rep[j]),
            mean=float(E[:, j].mean()),
            empirical_se=float(E[:, j].std(ddof=1)),
            mean_asymptotic_se=float(S[:, j].mean()),
            coverage=float(100.0 * covered[:, j].mean()),
        )
        for j in range(len(labels))
    )
    return ReplicateSummary(
        scenario=config.scenario,
        rows=rows,
        n_requested=R,
        n_converged=len(estimates),
        failures=tuple(failures),
        estimates=E,
        ses=S,
    )


# --------------------------------------------------------------------------
# Stock designs
# --------------------------------------------------------------------------

_TIMES_SPARSE = (0.0, 0.5, 1.0, 2.0, 3.0, 4.0, 5.0)
_TIMES_DENSE = (0.0, 0.25, 0.5, 0.75, 1.0, 1.5, 2.0,
                2.5, 3.0, 3.5, 4.0, 4.5, 5.0)
_MONTH = 1.0 / 12.0

_SIGMA_B = np.array([[207.36, -17.28], [-17.28, 9.224]])
_SIGMA_TAU = np.array([[0.0001, -0.0006], [-0.0006, 0.0157]])
# correlated variant: one joint 4x4 covariance across (b0, b1, tau0, tau1)
_SIGMA_FULL = np.array([
    [210.25, -15.95, 2.9, -0.145],
    [-15.95, 9.05, -0.304, 0.067],
    [2.9, -0.304, 0.1309, -0.0206],
    [-0.145, 0.067, -0.0206, 0.0141],
])


def _two_event_spec(independent: bool) -> ModelSpec:
    flags = AssociationFlags(use_current_value=True,
                             use_current_slope=True,
                             use_current_sd=True)
    return ModelSpec(
        fixed_marker_covariates=("intercept", "time"),
        random_marker_terms=("intercept", "time"),
        fixed_variance_covariates=("intercept", "time"),
        random_variance_terms=("intercept", "time"),
        survival_covariates_per_event=((), ()),
        association_flags_per_event=(flags, flags),
        baseline_family_per_event=(
            BaselineSpec(BaselineFamily.WEIBULL),
            BaselineSpec(BaselineFamily.WEIBULL),
        ),
        n_events=2,
        independent_variance_effects=independent,
    )


def _block_chol(sigma_b: np.ndarray, sigma_tau: np.ndarray) -> np.ndarray:
    d_b, d_t = sigma_b.shape[0], sigma_tau.shape[0]
    out = np.zeros((d_b + d_t, d_b + d_t))
    out[:d_b, :d_b] = np.linalg.cholesky(sigma_b)
    out[d_b:, d_b:] = np.linalg.cholesky(sigma_tau)
    return out


def _two_event_truth(chol: np.ndarray) -> ParameterVector:
    return ParameterVector(
        beta=np.array([142.0, 3.0]),
        mu=np.array([2.4, 0.05]),
        chol_lower=chol,
        gamma=(np.empty(0), np.empty(0)),
        alpha=(np.array([0.02, 0.01, 0.07]),    # value, slope, sd
               np.array([-0.01, -0.14, 0.15])),
        baseline=(np.array([1.1, -7.0]),        # sqrt shape, log rate
                  np.array([1.3, -4.0])),
    )


def _two_event_config(scenario: str, times, independent: bool,
                      n_subjects: int, seed) -> ScenarioConfig:
    if independent:
        chol = _block_chol(_SIGMA_B, _SIGMA_TAU)
    else:
        chol = np.linalg.cholesky(_SIGMA_FULL)
    return ScenarioConfig(
        scenario=scenario,
        n_subjects=n_subjects,
        nominal_times=times,
        jitter=_MONTH,
        spec=_two_event_spec(independent),
        truth=_two_event_truth(chol),
        seed=seed,
    )


def scenario_a(n_subjects: int = 500, seed=None) -> ScenarioConfig:
    """Two events, 7 visits over 5 years, independent effect blocks."""
    return _two_event_config("A", _TIMES_SPARSE, True, n_subjects, seed)


def scenario_b(n_subjects: int = 500, seed=None) -> ScenarioConfig:
    """Two events, 13 visits over 5 years, independent effect blocks."""
    return _two_event_config("B", _TIMES_DENSE, True, n_subjects, seed)


def scenario_c(n_subjects: int = 500, seed=None) -> ScenarioConfig:
    """Two events, 7 visits, location and scale effects correlated."""
    return _two_event_config("C", _TIMES_SPARSE, False, n_subjects, seed)


def scenario_d(n_subjects: int = 500, seed=None) -> ScenarioConfig:
    """Two events, 13 visits, location and scale effects correlated."""
    return _two_event_config("D", _TIMES_DENSE, False, n_subjects, seed)


def scenario_e(n_subjects: int = 500, seed=None,
               quadratic_coefficient: float = 0.5) -> ScenarioConfig:
    """Misspecified-trend design: generate quadratic, analyze linear.

    One event whose hazard depends on the current (quadratic) marker
    value and current SD; the analysis model is the linear-trend,
    value-plus-SD spec, so the fitted slope absorbs the curvature.
    """
    flags = AssociationFlags(use_current_value=True,
                             use_current_slope=False,
                             use_current_sd=True)
    spec = ModelSpec(
        fixed_marker_covariates=("intercept", "time"),
        random_marker_terms=("intercept", "time"),
        fixed_variance_covariates=("intercept", "time"),
        random_variance_terms=("intercept", "time"),
        survival_covariates_per_event=((),),
        association_flags_per_event=(flags,),
        baseline_family_per_event=(BaselineSpec(BaselineFamily.WEIBULL),),
        n_events=1,
        independent_variance_effects=True,
    )
    sigma_b = np.array([[210.25, -17.4], [-17.4, 9.28]])
    sigma_tau = np.array([[0.09, -0.018], [-0.018, 0.0136]])
    truth = ParameterVector(
        beta=np.array([142.0, 0.7]),
        mu=np.array([2.4, 0.05]),
        chol_lower=_block_chol(sigma_b, sigma_tau),
        gamma=(np.empty(0),),
        alpha=(np.array([0.03, 0.0]),),         # value, sd
        baseline=(np.array([1.1, -7.0]),),
    )
    return ScenarioConfig(
        scenario="E",
        n_subjects=n_subjects,
        nominal_times=_TIMES_DENSE,
        jitter=_MONTH,
        spec=spec,
        truth=truth,
        trajectory="quadratic",
        quadratic_coefficient=quadratic_coefficient,
        seed=seed,
    )


def scenario(name: str, n_subjects: int = 500, seed=None) -> ScenarioConfig:
    """Stock design by letter (A through E, case-insensitive)."""
    factory = {
        "A": scenario_a, "B": scenario_b, "C": scenario_c,
        "D": scenario_d, "E": scenario_e,
    }.get(name.upper())
    if factory is None:
        raise InputError(f"unknown scenario {name!r}, expected A through E")
    return factory(n_subjects=n_subjects, seed=seed)
