"""Shared builders for the test suite.

Only construction helpers live here.  Every oracle (the independent
reference computation a test checks against) stays in the test module
that uses it, so each file can be read on its own.
"""

import numpy as np

from jointvar.model import (
    AssociationFlags,
    BaselineFamily,
    BaselineSpec,
    Dataset,
    ModelSpec,
    ParameterVector,
    SubjectData,
)

# Reporting-scale truth for the two-event reference setup: marker mean
# 142 + 3t, residual log-SD 2.4 + 0.05t, and the random-effect
# covariance blocks below.
SIGMA_B = np.array([[207.36, -17.28], [-17.28, 9.224]])
SIGMA_TAU = np.array([[0.0001, -0.0006], [-0.0006, 0.0157]])
BETA = np.array([142.0, 3.0])
MU = np.array([2.4, 0.05])
ALPHA_1 = np.array([0.02, 0.01, 0.07])
ALPHA_2 = np.array([-0.01, -0.14, 0.15])
WEIBULL_1 = np.array([1.1, -7.0])
WEIBULL_2 = np.array([1.3, -4.0])


def two_event_spec(masked=False, baseline=None, delayed_entry=False):
    """Intercept+time in every design block, no survival covariates."""
    if baseline is None:
        baseline = (
            BaselineSpec(BaselineFamily.WEIBULL),
            BaselineSpec(BaselineFamily.WEIBULL),
        )
    return ModelSpec(
        fixed_marker_covariates=("intercept", "time"),
        random_marker_terms=("intercept", "time"),
        fixed_variance_covariates=("intercept", "time"),
        random_variance_terms=("intercept", "time"),
        survival_covariates_per_event=((), ()),
        association_flags_per_event=(
            AssociationFlags(True, True, True),
            AssociationFlags(True, True, True),
        ),
        baseline_family_per_event=baseline,
        n_events=2,
        delayed_entry=delayed_entry,
        independent_variance_effects=masked,
    )


def two_event_params(spec):
    """Truth-valued parameters for :func:`two_event_spec`."""
    L = np.zeros((4, 4))
    L[:2, :2] = np.linalg.cholesky(SIGMA_B)
    L[2:, 2:] = np.linalg.cholesky(SIGMA_TAU)
    return ParameterVector(
        beta=BETA,
        mu=MU,
        chol_lower=L,
        gamma=(np.zeros(0), np.zeros(0)),
        alpha=(ALPHA_1, ALPHA_2),
        baseline=(
            _baseline_params(spec.baseline_family_per_event[0], WEIBULL_1),
            _baseline_params(spec.baseline_family_per_event[1], WEIBULL_2),
        ),
    )


def _baseline_params(bspec, weibull_values):
    if bspec.family is BaselineFamily.WEIBULL:
        return weibull_values
    if bspec.family is BaselineFamily.EXPONENTIAL:
        return np.array([weibull_values[1]])
    # flat log-hazard at the Weibull log-rate
    return np.full(bspec.n_params, weibull_values[1])


def subject(id="s0", times=(0.0, 0.5, 1.0), values=None, event_time=2.0,
            event_indicator=0, covariates=None, entry_time=0.0):
    times = np.asarray(times, dtype=float)
    if values is None:
        values = 142.0 + 3.0 * times
    return SubjectData(
        id=id,
        times=times,
        values=np.asarray(values, dtype=float),
        event_time=event_time,
        event_indicator=event_indicator,
        covariates=covariates or {},
        entry_time=entry_time,
    )


def random_dataset(n, seed, spec=None, max_visits=7):
    """Small synthetic dataset drawn from the reference setup.

    Not a faithful joint-model simulation (event times are ad hoc);
    good enough to exercise likelihood code paths.
    """
    rng = np.random.default_rng(seed)
    nominal = np.array([0.0, 0.5, 1.0, 2.0, 3.0, 4.0, 5.0])[:max_visits]
    subjects = []
    for i in range(n):
        b = rng.multivariate_normal(np.zeros(2), SIGMA_B)
        tau = rng.multivariate_normal(np.zeros(2), SIGMA_TAU)
        times = np.sort(np.clip(nominal + rng.uniform(-1 / 12, 1 / 12,
                                                      nominal.size), 0.0, None))
        T = float(min(rng.exponential(4.0) + 0.3, times[-1]))
        delta = int(rng.integers(0, 3)) if T < times[-1] else 0
        times = times[times <= T]
        sd = np.exp(MU[0] + tau[0] + (MU[1] + tau[1]) * times)
        y = BETA[0] + b[0] + (BETA[1] + b[1]) * times + rng.normal(0.0, sd)
        subjects.append(SubjectData(
            id=f"s{i}", times=times, values=y,
            event_time=T, event_indicator=delta,
        ))
    return Dataset(tuple(subjects))
