"""Subject-level prediction and goodness of fit.

Given fitted parameters, this module locates each subject's most likely
random effects (posterior modes), draws marker prediction bands around
the resulting trajectory, computes dynamic probabilities of each
competing event over a horizon, wraps those probabilities in Monte
Carlo confidence intervals, and compares model-implied cumulative
hazards against the Nelson-Aalen estimator.

Effect integrals reuse the likelihood module's draw machinery (same
Sobol sequence, same Gauss-Kronrod cumulative hazards), so predictions
are numerically consistent with the fit that produced the parameters.
"""

from __future__ import annotations

import warnings
from dataclasses import dataclass

import numpy as np
from scipy.linalg import solve_triangular

from .errors import DomainError, InputError, JointvarError, NoPosteriorMass
from .estimation import ConvergenceCriteria, FitResult, fd_gradient, maximize
from .hazard import baseline_log_at_nodes, cumulative_hazard, quad_scheme
from .likelihood import (
    _association_draws,
    _effects_from_draws,
    _marker_terms_draws,
    sobol_normal,
    subject_conditional_density,
)
from .model import (
    Dataset,
    ModelSpec,
    ParameterVector,
    SubjectData,
    design_matrix,
    get_layout,
)

_LOG_2PI = float(np.log(2.0 * np.pi))


# --------------------------------------------------------------------------
# Empirical-Bayes effect modes
# --------------------------------------------------------------------------

@dataclass(frozen=True)
class EBModes:
    """Posterior modes of one subject's random effects."""

    b: np.ndarray
    tau: np.ndarray
    converged: bool


def _log_prior_fn(chol_lower: np.ndarray):
    """log N(e; 0, L L') as a function of e, via triangular solves."""
    L = np.asarray(chol_lower, dtype=float)
    d = L.shape[0]
    diag = np.abs(np.diag(L))
    if np.any(diag == 0.0):
        raise DomainError(
            "effects covariance is singular; posterior modes are undefined"
        )
    const = -0.5 * d * _LOG_2PI - float(np.sum(np.log(diag)))

    def log_prior(e: np.ndarray) -> float:
        y = solve_triangular(L, e, lower=True)
        return const - 0.5 * float(y @ y)

    return log_prior


def eb_modes(spec: ModelSpec, params: ParameterVector, subject: SubjectData,
             criteria: ConvergenceCriteria | None = None) -> EBModes:
    """Mode of the conditional posterior of (b, tau) given one subject.

    Maximizes log f(Y, T, delta | e) + log N(e; 0, Sigma) with the same
    damped-Newton ascent used for estimation, started at the prior
    mean.  If the start is already stationary (no data, or nothing in
    the data depends on the effects) it is returned as converged; if
    the ascent fails to converge, the prior mean is returned flagged.
    """
    d = spec.dim_effects
    if d == 0:
        return EBModes(b=np.empty(0), tau=np.empty(0), converged=True)
    log_prior = _log_prior_fn(params.chol_lower)
    d_b = spec.dim_b

    def objective(e: np.ndarray) -> float:
        return subject_conditional_density(
            spec, params, subject, e[:d_b], e[d_b:]
        ) + log_prior(e)

    start = np.zeros(d)
    if np.max(np.abs(fd_gradient(objective, start))) < 1e-9:
        return EBModes(b=start[:d_b], tau=start[d_b:], converged=True)
    try:
        outcome = maximize(objective, start, criteria=criteria)
    except JointvarError:
        return EBModes(b=start[:d_b], tau=start[d_b:], converged=False)
    if outcome.stalled or not outcome.status.converged:
        return EBModes(b=start[:d_b], tau=start[d_b:], converged=False)
    mode = outcome.theta
    return EBModes(b=mode[:d_b], tau=mode[d_b:], converged=True)


# --------------------------------------------------------------------------
# Marker prediction band
# --------------------------------------------------------------------------

def marker_prediction_band(spec: ModelSpec, params: ParameterVector,
                           subject: SubjectData, b, tau, times):
    """Predicted trajectory with a 95% measurement band.

    Returns (mean, lower, upper) at the given times: the conditional
    mean X'beta + Z'b and that mean +/- 1.96 times the conditional
    SD exp(O'mu + M'tau).
    """
    t = np.atleast_1d(np.asarray(times, dtype=float))
    b = np.asarray(b, dtype=float)
    tau = np.asarray(tau, dtype=float)
    mean = (design_matrix(spec, subject, t, "X") @ params.beta
            + design_matrix(spec, subject, t, "Z") @ b)
    sd = np.exp(design_matrix(spec, subject, t, "O") @ params.mu
                + design_matrix(spec, subject, t, "M") @ tau)
    return mean, mean - 1.96 * sd, mean + 1.96 * sd


# --------------------------------------------------------------------------
# Dynamic event probabilities
# --------------------------------------------------------------------------

def _history(subject: SubjectData, s: float) -> SubjectData:
    """The subject as known at time s: measurements at t <= s only."""
    keep = subject.times <= s
    if keep.all():
        return subject
    return SubjectData(
        id=subject.id,
        times=subject.times[keep],
        values=subject.values[keep],
        event_time=subject.event_time,
        event_indicator=subject.event_indicator,
        covariates=subject.covariates,
        entry_time=subject.entry_time,
    )


def _marker_logdens(spec, params, subject, b, tau) -> np.ndarray:
    """Per-draw log f(Y history | b, tau); zeros when no measurements."""
    if not subject.n_obs:
        return np.zeros(b.shape[0])
    value, _, logsd = _marker_terms_draws(
        spec, params, subject, subject.times, b, tau
    )
    r = subject.values[:, None] - value
    with np.errstate(over="ignore"):
        out = np.sum(
            -logsd - 0.5 * _LOG_2PI - 0.5 * r * r * np.exp(-2.0 * logsd),
            axis=0,
        )
    return np.where(np.isfinite(out), out, -np.inf)


def _cumhaz_draws(spec, params, subject, b, tau, times, k) -> np.ndarray:
    """Lambda_k(0, t) for each time and draw; (len(times), S)."""
    t_to = np.asarray(times, dtype=float)
    bspec = spec.baseline_family_per_event[k]
    scheme = quad_scheme(bspec, params.baseline[k],
                         np.zeros_like(t_to), t_to)
    logbase = baseline_log_at_nodes(bspec, params.baseline[k], scheme)
    flat = scheme.nodes.reshape(-1)
    A = _association_draws(spec, params, subject, flat, b, tau, k)
    A = A.reshape(scheme.nodes.shape + (b.shape[0],))
    with np.errstate(over="ignore"):
        return np.exp(
            scheme.log_jac_weight[..., None] + logbase[..., None] + A
        ).sum(axis=1)


def dynamic_event_probability(spec: ModelSpec, params: ParameterVector,
                              subject: SubjectData, s: float, t: float,
                              k: int, S: int = 500, skip: int = 1) -> float:
    """P(event k within (s, s+t] | event-free at s, marker history).

    Ratio of two draw averages over the effects, both weighted by the
    marker density of the history: the numerator integrates the cause-k
    hazard times overall survival over (s, s+t] with the 15-point
    Kronrod rule, the denominator is survival to s.  Measurements after
    s are ignored by construction.
    """
    if s < 0.0 or t < 0.0:
        raise InputError("prediction needs s >= 0 and horizon t >= 0")
    if not 0 <= k < spec.n_events:
        raise InputError(f"event index {k} out of range")
    if subject.event_indicator != 0 and subject.event_time <= s:
        raise InputError(
            f"subject {subject.id} is not event-free at {s}"
        )
    hist = _history(subject, s)
    if t == 0.0:
        return 0.0

    draws = sobol_normal(S, spec.dim_effects, skip)
    b, tau = _effects_from_draws(params, spec, draws.z)
    logw = _marker_logdens(spec, params, hist, b, tau)
    m = float(np.max(logw))
    if not np.isfinite(m):
        raise NoPosteriorMass(
            f"subject {subject.id}: no posterior mass at any of the "
            f"{S} draws; try more draws"
        )
    w = np.exp(logw - m)

    surv_s = np.zeros(b.shape[0])
    for l in range(spec.n_events):
        surv_s += _cumhaz_draws(spec, params, hist, b, tau, [s], l)[0]
    den = float(np.mean(w * np.exp(-surv_s)))
    if not np.isfinite(den) or den <= 0.0:
        raise NoPosteriorMass(
            f"subject {subject.id}: no posterior mass survives to {s}; "
            f"try more draws"
        )

    bspec = spec.baseline_family_per_event[k]
    scheme = quad_scheme(bspec, params.baseline[k],
                         np.array([s]), np.array([s + t]))
    nodes = scheme.nodes[0]
    logbase = baseline_log_at_nodes(bspec, params.baseline[k], scheme)[0]
    A_k = _association_draws(spec, params, hist, nodes, b, tau, k)
    total = np.zeros((nodes.size, b.shape[0]))
    for l in range(spec.n_events):
        total += _cumhaz_draws(spec, params, hist, b, tau, nodes, l)
    with np.errstate(over="ignore"):
        integral = np.exp(
            scheme.log_jac_weight[0][:, None] + logbase[:, None]
            + A_k - total
        ).sum(axis=0)
    num = float(np.mean(w * integral))
    return float(np.clip(num / den, 0.0, 1.0))


# --------------------------------------------------------------------------
# Monte Carlo confidence interval for the dynamic probability
# --------------------------------------------------------------------------

@dataclass(frozen=True)
class PredictionInterval:
    """Dynamic probability with its Monte Carlo percentile interval."""

    point: float
    lower: float
    upper: float
    repaired: bool
    n_rejected: int


def _parameter_factor(vcov: np.ndarray) -> tuple[np.ndarray, bool]:
    """Square root of vcov for sampling; eigenvalue-clipped when needed."""
    vcov = np.asarray(vcov, dtype=float)
    vals, vecs = np.linalg.eigh(0.5 * (vcov + vcov.T))
    scale = max(float(vals.max(initial=0.0)), 1.0)
    repaired = bool(vals.min(initial=0.0) < -1e-12 * scale)
    return vecs * np.sqrt(np.clip(vals, 0.0, None)), repaired


def prediction_ci(spec: ModelSpec, fit: FitResult, subject: SubjectData,
                  s: float, t: float, k: int, L: int = 500,
                  S: int = 500, skip: int = 1,
                  seed=None) -> PredictionInterval:
    """Percentile interval for the dynamic probability at (s, t).

    Draws L parameter vectors from N(theta_hat, vcov), re-evaluates the
    probability under each, and reports the 2.5th and 97.5th
    percentiles.  A vcov that is not positive semidefinite is projected
    to the nearest PSD matrix and flagged.  Draws under which the
    probability cannot be evaluated are rejected and redrawn, up to 10L
    attempts in total.
    """
    if fit.vcov is None:
        raise InputError(
            "fit has no parameter covariance; cannot draw parameters"
        )
    if L < 100:
        raise InputError("at least 100 parameter draws are required")
    layout = get_layout(spec)
    point = dynamic_event_probability(
        spec, fit.theta_hat, subject, s, t, k, S=S, skip=skip
    )
    factor, repaired = _parameter_factor(fit.vcov)
    rng = np.random.default_rng(seed)
    pis = np.empty(L)
    got = 0
    rejected = 0
    attempts = 0
    while got < L:
        if attempts >= 10 * L:
            raise NoPosteriorMass(
                f"could not evaluate {L} parameter draws within "
                f"{10 * L} attempts ({rejected} rejected)"
            )
        attempts += 1
        theta = fit.theta_flat + factor @ rng.standard_normal(layout.size)
        try:
            pi = dynamic_event_probability(
                spec, layout.unflatten(theta), subject, s, t, k,
                S=S, skip=skip,
            )
        except JointvarError:
            rejected += 1
            continue
        if not np.isfinite(pi):
            rejected += 1
            continue
        pis[got] = pi
        got += 1
    lower, upper = np.percentile(pis, [2.5, 97.5])
    return PredictionInterval(point=point, lower=float(lower),
                              upper=float(upper), repaired=repaired,
                              n_rejected=rejected)


# --------------------------------------------------------------------------
# Goodness of fit: Nelson-Aalen vs model-implied cumulative hazard
# --------------------------------------------------------------------------

@dataclass(frozen=True)
class Curve:
    """Values along a time grid."""

    times: np.ndarray
    values: np.ndarray

    def __post_init__(self):
        for name in ("times", "values"):
            a = np.asarray(getattr(self, name), dtype=float)
            a.setflags(write=False)
            object.__setattr__(self, name, a)
        if self.times.shape != self.values.shape:
            raise InputError("curve times and values must match in length")


@dataclass(frozen=True)
class StepCurve(Curve):
    """Right-continuous step function, zero before the first time."""

    def evaluate(self, t):
        t = np.asarray(t, dtype=float)
        idx = np.searchsorted(self.times, t, side="right")
        padded = np.concatenate([[0.0], self.values])
        out = padded[idx]
        return float(out) if out.ndim == 0 else out


def _check_event_index(k: int) -> None:
    if k not in (0, 1):
        raise InputError(f"event index {k} out of range, expected 0 or 1")


def _na_one(subjects, k: int) -> StepCurve:
    event_times = sorted({s.event_time for s in subjects
                          if s.event_indicator == k + 1})
    times = np.asarray(event_times)
    increments = np.empty(times.size)
    for j, tj in enumerate(times):
        d = sum(1 for s in subjects
                if s.event_time == tj and s.event_indicator == k + 1)
        n = sum(1 for s in subjects
                if s.entry_time < tj <= s.event_time)
        increments[j] = d / n
    return StepCurve(times=times, values=np.cumsum(increments))


def _strata(subjects, stratify_by: str, levels):
    for s in subjects:
        if stratify_by not in s.covariates:
            raise InputError(
                f"subject {s.id} lacks covariate {stratify_by!r}"
            )
    if levels is None:
        levels = sorted({s.covariates[stratify_by] for s in subjects})
    out = []
    for v in levels:
        members = [s for s in subjects if s.covariates[stratify_by] == v]
        if not members:
            warnings.warn(
                f"stratum {stratify_by}={v!r} has no subjects; skipped",
                stacklevel=3,
            )
            continue
        out.append((v, members))
    return out


def nelson_aalen(dataset: Dataset, k: int, stratify_by: str | None = None,
                 levels=None):
    """Nelson-Aalen cumulative hazard for cause k (0-based).

    Events of other causes count as censored.  Returns a step curve,
    or a dict of them keyed by stratum value when ``stratify_by``
    names a covariate.
    """
    _check_event_index(k)
    if stratify_by is None:
        return _na_one(list(dataset), k)
    return {v: _na_one(members, k)
            for v, members in _strata(list(dataset), stratify_by, levels)}


def predicted_cumhaz_curve(spec: ModelSpec, params: ParameterVector,
                           dataset: Dataset, k: int, eval_times=None,
                           criteria: ConvergenceCriteria | None = None,
                           stratify_by: str | None = None, levels=None):
    """Mean model-implied cumulative hazard for cause k across subjects.

    Each subject contributes Lambda_k evaluated at their posterior-mode
    effects; the curve is the average over subjects at each time.  The
    default grid is the observed cause-k event times (matching the
    Nelson-Aalen jumps), per stratum when stratified.
    """
    _check_event_index(k)
    if k >= spec.n_events:
        raise InputError(f"event index {k} out of range for this model")

    def one(subjects) -> Curve:
        if eval_times is None:
            grid = np.asarray(sorted({s.event_time for s in subjects
                                      if s.event_indicator == k + 1}))
        else:
            grid = np.atleast_1d(np.asarray(eval_times, dtype=float))
        total = np.zeros(grid.size)
        for s in subjects:
            modes = eb_modes(spec, params, s, criteria=criteria)
            for j, tj in enumerate(grid):
                total[j] += cumulative_hazard(
                    spec, params, s, modes.b, modes.tau, 0.0, float(tj), k
                )
        return Curve(times=grid, values=total / max(len(subjects), 1))

    if stratify_by is None:
        return one(list(dataset))
    return {v: one(members)
            for v, members in _strata(list(dataset), stratify_by, levels)}
