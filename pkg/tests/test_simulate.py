"""Data generation and replicate-study tests.

The heavyweight oracle here is an independent Monte Carlo pipeline:
trapezoid cumulative hazards on a dense per-subject grid, inverted by
linear interpolation, with effects drawn through numpy's own
multivariate normal.  It shares no code with the library's generator,
so agreement on event proportions checks the whole chain (effects,
trajectories, hazards, censoring) at once.
"""

import dataclasses

import numpy as np
import pytest
from scipy.stats import kstest

from jointvar.errors import InputError, OptimizerFailure
from jointvar.model import (
    AssociationFlags,
    BaselineFamily,
    BaselineSpec,
    ModelSpec,
    ParameterVector,
    covariance_from_cholesky,
    flatten,
    get_layout,
)
from jointvar.simulate import (
    ReplicateSummary,
    ScenarioConfig,
    gen_dataset,
    gen_effects,
    gen_event_time,
    gen_marker,
    gen_visit_times,
    replicate_study,
    scenario,
    scenario_a,
    scenario_b,
    scenario_c,
    scenario_d,
    scenario_e,
)

from support import ALPHA_1, ALPHA_2, BETA, MU, SIGMA_B, SIGMA_TAU


# --------------------------------------------------------------------------
# Oracles
# --------------------------------------------------------------------------

def closed_form_weibull_time(u, sqrt_kappa, zeta):
    """Inverse of Lambda(t) = t^kappa exp(zeta) at -log(u), no covariates."""
    kappa = sqrt_kappa**2
    return (-np.log(u) * np.exp(-zeta)) ** (1.0 / kappa)


def mc_event_proportions(n, seed, grid_points=2000):
    """Scenario-A event proportions by an independent simulation.

    Hazards are evaluated from the printed formula on a per-subject
    grid, integrated with the trapezoid rule, and inverted by linear
    interpolation.  Returns (censored, event 1, event 2) fractions.
    """
    rng = np.random.default_rng(seed)
    b = rng.multivariate_normal(np.zeros(2), SIGMA_B, size=n)
    tau = rng.multivariate_normal(np.zeros(2), SIGMA_TAU, size=n)
    C = 5.0 + rng.uniform(-1.0 / 12.0, 1.0 / 12.0, size=n)

    frac = np.linspace(0.0, 1.0, grid_points + 1)
    t = C[:, None] * frac[None, :]          # (n, G+1) per-subject grids
    value = BETA[0] + b[:, :1] + (BETA[1] + b[:, 1:]) * t
    slope = np.broadcast_to(BETA[1] + b[:, 1:], t.shape)
    sd = np.exp(MU[0] + tau[:, :1] + (MU[1] + tau[:, 1:]) * t)

    T = C.copy()
    delta = np.zeros(n, dtype=int)
    for k, (alpha, (sq_kap, zeta)) in enumerate(
        [(ALPHA_1, (1.1, -7.0)), (ALPHA_2, (1.3, -4.0))]
    ):
        kap = sq_kap**2
        lam = kap * t ** (kap - 1.0) * np.exp(
            zeta + alpha[0] * value + alpha[1] * slope + alpha[2] * sd
        )
        lam[:, 0] = 0.0  # t^(kappa-1) at 0 for kappa > 1
        dx = (C / grid_points)[:, None]
        cum = np.concatenate(
            [np.zeros((n, 1)),
             np.cumsum(0.5 * (lam[:, 1:] + lam[:, :-1]) * dx, axis=1)],
            axis=1,
        )
        target = -np.log(1.0 - rng.random(n))
        beyond = cum[:, -1] < target
        idx = np.argmax(cum >= target[:, None], axis=1)
        idx = np.maximum(idx, 1)
        lo, hi = cum[np.arange(n), idx - 1], cum[np.arange(n), idx]
        w = np.where(hi > lo, (target - lo) / np.where(hi > lo, hi - lo, 1.0),
                     0.0)
        t_k = np.where(
            beyond, np.inf,
            t[np.arange(n), idx - 1] * (1.0 - w) + t[np.arange(n), idx] * w,
        )
        hit = t_k < T
        T[hit] = t_k[hit]
        delta[hit] = k + 1
    return np.array([(delta == d).mean() for d in (0, 1, 2)])


# --------------------------------------------------------------------------
# Config construction and validation
# --------------------------------------------------------------------------

def _plain_spec(n_events=1, flags=None, sqrt_shape=True):
    if flags is None:
        flags = AssociationFlags()
    fam = BaselineFamily.WEIBULL if sqrt_shape else BaselineFamily.EXPONENTIAL
    return ModelSpec(
        fixed_marker_covariates=("intercept", "time"),
        random_marker_terms=("intercept",),
        fixed_variance_covariates=("intercept",),
        random_variance_terms=(),
        survival_covariates_per_event=((),) * n_events,
        association_flags_per_event=(flags,) * n_events,
        baseline_family_per_event=(BaselineSpec(fam),) * n_events,
        n_events=n_events,
        independent_variance_effects=False,
    )


def _plain_truth(spec, zeta=-2.0, chol00=2.0):
    nb = spec.baseline_family_per_event[0].n_params
    base = np.array([1.1, zeta]) if nb == 2 else np.array([zeta])
    return ParameterVector(
        beta=np.array([10.0, 1.0]),
        mu=np.array([0.5]),
        chol_lower=np.array([[chol00]]),
        gamma=(np.empty(0),) * spec.n_events,
        alpha=(np.empty(0),) * spec.n_events,
        baseline=(base,) * spec.n_events,
    )


def _plain_config(n=20, seed=0, zeta=-2.0, jitter=0.0,
                  times=(0.0, 1.0, 2.0, 3.0), **kw):
    spec = _plain_spec()
    return ScenarioConfig(
        scenario="custom", n_subjects=n,
        nominal_times=times, jitter=jitter,
        spec=spec, truth=_plain_truth(spec, zeta=zeta), seed=seed, **kw,
    )


@pytest.mark.parametrize("field,value", [
    ("n_subjects", 0),
    ("nominal_times", ()),
    ("nominal_times", (-1.0, 2.0)),
    ("nominal_times", (1.0, 0.5)),
    ("nominal_times", (0.0, 1.0, 1.0)),
    ("jitter", -0.1),
    ("jitter", 0.5),        # half the smallest gap, not allowed
    ("trajectory", "cubic"),
])
def test_config_field_validation(field, value):
    good = _plain_config()
    with pytest.raises(InputError):
        dataclasses.replace(good, **{field: value})


def test_config_rejects_nontime_covariates():
    spec = ModelSpec(
        fixed_marker_covariates=("intercept", "dose"),
        random_marker_terms=("intercept",),
        fixed_variance_covariates=("intercept",),
        random_variance_terms=(),
        survival_covariates_per_event=((),),
        association_flags_per_event=(AssociationFlags(),),
        baseline_family_per_event=(BaselineSpec(BaselineFamily.EXPONENTIAL),),
        n_events=1,
    )
    truth = ParameterVector(
        beta=np.zeros(2), mu=np.zeros(1), chol_lower=np.eye(1),
        gamma=(np.empty(0),), alpha=(np.empty(0),),
        baseline=(np.zeros(1),),
    )
    with pytest.raises(InputError, match="dose"):
        ScenarioConfig(scenario="x", n_subjects=5, nominal_times=(0.0, 1.0),
                       jitter=0.0, spec=spec, truth=truth)


def test_config_rejects_survival_covariates():
    spec = dataclasses.replace(
        _plain_spec(), survival_covariates_per_event=(("treat",),)
    )
    truth = ParameterVector(
        beta=np.zeros(2), mu=np.zeros(1), chol_lower=np.eye(1),
        gamma=(np.zeros(1),), alpha=(np.empty(0),),
        baseline=(np.zeros(2),),
    )
    with pytest.raises(InputError, match="survival covariates"):
        ScenarioConfig(scenario="x", n_subjects=5, nominal_times=(0.0, 1.0),
                       jitter=0.0, spec=spec, truth=truth)


def test_config_rejects_quadratic_with_time2_already_present():
    cfg = scenario_e(n_subjects=5)
    spec = dataclasses.replace(
        cfg.spec,
        fixed_marker_covariates=("intercept", "time", "time2"),
    )
    truth = ParameterVector(
        beta=np.append(cfg.truth.beta, 0.5), mu=cfg.truth.mu,
        chol_lower=cfg.truth.chol_lower, gamma=cfg.truth.gamma,
        alpha=cfg.truth.alpha, baseline=cfg.truth.baseline,
    )
    with pytest.raises(InputError, match="time2"):
        dataclasses.replace(cfg, spec=spec, truth=truth)


def test_config_rejects_mismatched_truth():
    good = _plain_config()
    bad = ParameterVector(
        beta=np.zeros(3), mu=np.zeros(1), chol_lower=np.eye(1),
        gamma=(np.empty(0),), alpha=(np.empty(0),),
        baseline=(np.zeros(2),),
    )
    with pytest.raises(InputError, match="truth"):
        dataclasses.replace(good, truth=bad)


# --------------------------------------------------------------------------
# Visit times
# --------------------------------------------------------------------------

def test_zero_jitter_returns_nominal_times():
    cfg = _plain_config(jitter=0.0)
    rng = np.random.default_rng(0)
    np.testing.assert_array_equal(gen_visit_times(cfg, rng),
                                  np.array([0.0, 1.0, 2.0, 3.0]))


def test_visit_times_stay_ordered_and_near_nominal():
    cfg = scenario_a(n_subjects=1, seed=0)
    nominal = np.asarray(cfg.nominal_times)
    rng = np.random.default_rng(42)
    for _ in range(300):
        t = gen_visit_times(cfg, rng)
        assert t.shape == (7,)
        assert t[0] >= 0.0
        assert np.all(np.diff(t) > 0)
        assert np.all(np.abs(t - nominal) <= cfg.jitter + 1e-12)


def test_visit_time_mean_matches_nominal():
    # law of large numbers on the fourth visit of the sparse schedule
    cfg = scenario_a(n_subjects=1, seed=0)
    rng = np.random.default_rng(7)
    draws = np.array([gen_visit_times(cfg, rng)[3] for _ in range(10_000)])
    assert abs(draws.mean() - 2.0) < 0.01


# --------------------------------------------------------------------------
# Marker generation
# --------------------------------------------------------------------------

def test_degenerate_marker_is_the_fixed_trajectory():
    spec = _plain_spec()
    truth = ParameterVector(
        beta=np.array([10.0, 1.0]), mu=np.array([-40.0]),  # SD ~ 4e-18
        chol_lower=np.zeros((1, 1)),
        gamma=(np.empty(0),), alpha=(np.empty(0),),
        baseline=(np.array([1.1, -2.0]),),
    )
    cfg = ScenarioConfig(scenario="x", n_subjects=1,
                         nominal_times=(0.0, 1.0, 2.0), jitter=0.0,
                         spec=spec, truth=truth)
    t = np.array([0.0, 0.5, 2.0])
    y = gen_marker(cfg, np.zeros(1), np.zeros(0), t, np.random.default_rng(3))
    np.testing.assert_allclose(y, 10.0 + t, atol=1e-12)


def test_quadratic_flag_adds_curvature():
    spec = _plain_spec()
    truth = ParameterVector(
        beta=np.array([10.0, 1.0]), mu=np.array([-40.0]),
        chol_lower=np.zeros((1, 1)),
        gamma=(np.empty(0),), alpha=(np.empty(0),),
        baseline=(np.array([1.1, -2.0]),),
    )
    cfg = ScenarioConfig(scenario="x", n_subjects=1,
                         nominal_times=(0.0, 1.0, 2.0), jitter=0.0,
                         spec=spec, truth=truth,
                         trajectory="quadratic", quadratic_coefficient=0.25)
    t = np.array([0.0, 1.0, 2.0, 4.0])
    y = gen_marker(cfg, np.zeros(1), np.zeros(0), t, np.random.default_rng(3))
    np.testing.assert_allclose(y, 10.0 + t + 0.25 * t * t, atol=1e-12)


def test_marker_variance_decomposition_at_baseline():
    # Var Y(0) = sigma_b0^2 + E exp(2(mu_0 + tau_0))
    cfg = scenario_a(n_subjects=1, seed=0)
    rng = np.random.default_rng(12)
    eff = gen_effects(cfg, rng, 20_000)
    t = np.zeros(1)
    draws = np.empty(eff.shape[0])
    for i in range(eff.shape[0]):
        draws[i] = gen_marker(cfg, eff[i, :2], eff[i, 2:], t, rng)[0]
    want = np.sqrt(SIGMA_B[0][0] + np.exp(2 * MU[0] + 2 * SIGMA_TAU[0][0]))
    assert abs(draws.std() - want) / want < 0.02


def test_effects_sample_covariance_matches_truth():
    cfg = scenario_c(n_subjects=1, seed=0)
    eff = gen_effects(cfg, np.random.default_rng(5), 100_000)
    sample = np.cov(eff.T)
    target = covariance_from_cholesky(cfg.truth.chol_lower)
    n = eff.shape[0]
    for a in range(4):
        for c in range(4):
            se = np.sqrt((target[a, a] * target[c, c] + target[a, c] ** 2) / n)
            assert abs(sample[a, c] - target[a, c]) <= 3.0 * se, (a, c)


# --------------------------------------------------------------------------
# Event times
# --------------------------------------------------------------------------

def test_event_time_closed_form_weibull():
    # horizon 5 puts the Brent cap at 500, past the root near 325
    cfg = _plain_config(zeta=-7.0, times=(0.0, 1.0, 2.0, 5.0))
    u = np.exp(-1.0)
    got = gen_event_time(cfg, np.zeros(1), np.zeros(0), 0, u)
    want = closed_form_weibull_time(u, 1.1, -7.0)
    assert want > 5.0  # beyond the visit horizon, later censored
    np.testing.assert_allclose(got, want, rtol=1e-8)


def test_event_time_approaches_zero_as_u_tends_to_one():
    cfg = _plain_config(zeta=-2.0)
    t = gen_event_time(cfg, np.zeros(1), np.zeros(0), 0, 1.0 - 1e-12)
    assert 0.0 < t < 1e-6


def test_event_time_beyond_cap_is_infinite():
    # Lambda(300) = 300^1.21 e^-9 ~ 0.12; u = .01 needs 4.6
    cfg = _plain_config(zeta=-9.0)
    assert gen_event_time(cfg, np.zeros(1), np.zeros(0), 0, 0.01) == np.inf


def test_event_time_validates_inputs():
    cfg = _plain_config()
    with pytest.raises(InputError):
        gen_event_time(cfg, np.zeros(1), np.zeros(0), 0, 0.0)
    with pytest.raises(InputError):
        gen_event_time(cfg, np.zeros(1), np.zeros(0), 0, 1.5)
    with pytest.raises(InputError):
        gen_event_time(cfg, np.zeros(1), np.zeros(0), 3, 0.5)


def test_event_time_distribution_matches_analytic_weibull():
    cfg = _plain_config(zeta=-2.0)
    rng = np.random.default_rng(314)
    draws = np.array([
        gen_event_time(cfg, np.zeros(1), np.zeros(0), 0, 1.0 - rng.random())
        for _ in range(10_000)
    ])
    assert np.all(np.isfinite(draws))

    def cdf(t):
        return 1.0 - np.exp(-np.power(t, 1.21) * np.exp(-2.0))

    stat = kstest(draws, cdf).statistic
    assert stat < 0.02


# --------------------------------------------------------------------------
# Whole datasets
# --------------------------------------------------------------------------

def test_no_hazard_means_all_censored_at_last_visit():
    cfg = _plain_config(n=25, zeta=-60.0, jitter=0.1)
    ds = gen_dataset(cfg)
    assert len(ds) == 25
    for s in ds:
        assert s.event_indicator == 0
        assert s.event_time == s.times[-1]
        assert s.n_obs == 4


def test_measurements_never_outlast_the_event():
    ds = gen_dataset(scenario_a(n_subjects=150, seed=21))
    assert any(s.event_indicator in (1, 2) for s in ds)
    for s in ds:
        if s.n_obs:
            assert s.times[-1] <= s.event_time


def test_seeded_generation_is_deterministic():
    a = gen_dataset(scenario_b(n_subjects=40, seed=123))
    b = gen_dataset(scenario_b(n_subjects=40, seed=123))
    c = gen_dataset(scenario_b(n_subjects=40, seed=124))
    for s, t in zip(a, b):
        np.testing.assert_array_equal(s.times, t.times)
        np.testing.assert_array_equal(s.values, t.values)
        assert s.event_time == t.event_time
        assert s.event_indicator == t.event_indicator
    assert any(s.event_time != t.event_time for s, t in zip(a, c))


def test_event_proportions_match_independent_simulation():
    ds = gen_dataset(scenario_a(n_subjects=2000, seed=77))
    ind = np.array([s.event_indicator for s in ds])
    mine = np.array([(ind == d).mean() for d in (0, 1, 2)])
    oracle = mc_event_proportions(2500, seed=501, grid_points=1200)
    np.testing.assert_allclose(mine, oracle, atol=0.05)


# --------------------------------------------------------------------------
# Replicate studies
# --------------------------------------------------------------------------

def _norandom_spec():
    return ModelSpec(
        fixed_marker_covariates=("intercept", "time"),
        random_marker_terms=(),
        fixed_variance_covariates=("intercept",),
        random_variance_terms=(),
        survival_covariates_per_event=((),),
        association_flags_per_event=(AssociationFlags(),),
        baseline_family_per_event=(BaselineSpec(BaselineFamily.EXPONENTIAL),),
        n_events=1,
    )


def _norandom_config(n=8, seed=0):
    spec = _norandom_spec()
    truth = ParameterVector(
        beta=np.array([5.0, -0.5]), mu=np.array([0.2]),
        chol_lower=np.zeros((0, 0)),
        gamma=(np.empty(0),), alpha=(np.empty(0),),
        baseline=(np.array([-60.0]),),
    )
    return ScenarioConfig(scenario="toy", n_subjects=n,
                          nominal_times=(0.0, 1.0, 2.0), jitter=0.0,
                          spec=spec, truth=truth, seed=seed)


def test_replicate_study_requires_two_replicates():
    with pytest.raises(InputError):
        replicate_study(_norandom_config(), 1)


def test_truth_estimator_gives_zero_bias_full_coverage():
    cfg = _norandom_config()
    truth_flat = flatten(cfg.truth, cfg.spec)
    ses = np.full(truth_flat.size, 0.3)

    summary = replicate_study(
        cfg, 12, estimator=lambda ds, rng: (truth_flat.copy(), ses)
    )
    assert isinstance(summary, ReplicateSummary)
    assert summary.n_converged == 12
    assert summary.failures == ()
    for row in summary.rows:
        assert row.mean == pytest.approx(row.true, abs=1e-12)
        assert row.empirical_se == pytest.approx(0.0, abs=1e-12)
        assert row.mean_asymptotic_se == pytest.approx(0.3)
        assert row.coverage == 100.0


def test_wald_coverage_approaches_nominal():
    cfg = _norandom_config(n=4)
    truth_flat = flatten(cfg.truth, cfg.spec)
    s = 0.7

    def estimator(ds, rng):
        est = truth_flat + rng.normal(0.0, s, size=truth_flat.size)
        return est, np.full(truth_flat.size, s)

    summary = replicate_study(cfg, 400, estimator=estimator)
    assert summary.n_converged == 400
    for row in summary.rows:
        assert 91.0 <= row.coverage <= 98.5
        assert row.mean_asymptotic_se == pytest.approx(s)
        assert abs(row.empirical_se - s) / s < 0.15
        assert abs(row.mean - row.true) < 4.0 * s / np.sqrt(400)


def test_failed_replicates_are_excluded_and_counted():
    cfg = _norandom_config()
    truth_flat = flatten(cfg.truth, cfg.spec)

    calls = []

    def estimator(ds, rng):
        calls.append(len(calls))
        if len(calls) % 3 == 0:
            raise OptimizerFailure("synthetic failure")
        return truth_flat.copy(), np.ones(truth_flat.size)

    summary = replicate_study(cfg, 9, estimator=estimator)
    assert summary.n_requested == 9
    assert summary.n_converged == 6
    assert len(summary.failures) == 3
    assert all("synthetic failure" in msg for msg in summary.failures)
    assert summary.estimates.shape == (6, len(summary.rows))


def test_all_replicates_failing_raises():
    cfg = _norandom_config()

    def estimator(ds, rng):
        raise OptimizerFailure("nope")

    with pytest.raises(OptimizerFailure, match="all 3 replicates"):
        replicate_study(cfg, 3, estimator=estimator)


def test_reporting_maps_cholesky_to_covariance_and_folds_shape():
    cfg = _plain_config(n=6, zeta=-60.0)
    lay = get_layout(cfg.spec)
    est = flatten(cfg.truth, cfg.spec).copy()
    est[lay.chol_slice] = -3.0          # sign of L is arbitrary
    est[lay.baseline_slices[0].start] = -1.1  # so is the shape root's

    summary = replicate_study(
        cfg, 2, estimator=lambda ds, rng: (est.copy(),
                                           np.ones(est.size) * 0.1)
    )
    by_name = {r.parameter: r for r in summary.rows}
    assert by_name["sigma[0,0]"].mean == pytest.approx(9.0)
    assert by_name["baseline1[sqrt_kappa]"].mean == pytest.approx(1.1)
    # delta method for sigma = L^2: se = 2 |L| se_L
    assert by_name["sigma[0,0]"].mean_asymptotic_se == pytest.approx(0.6)


def test_replicate_study_runs_the_real_fit_path():
    # tiny homoscedastic one-event design, real estimation end to end
    spec = ModelSpec(
        fixed_marker_covariates=("intercept", "time"),
        random_marker_terms=("intercept",),
        fixed_variance_covariates=("intercept",),
        random_variance_terms=(),
        survival_covariates_per_event=((),),
        association_flags_per_event=(AssociationFlags(),),
        baseline_family_per_event=(BaselineSpec(BaselineFamily.EXPONENTIAL),),
        n_events=1,
    )
    truth = ParameterVector(
        beta=np.array([8.0, 1.0]), mu=np.array([0.0]),
        chol_lower=np.array([[2.0]]),
        gamma=(np.empty(0),), alpha=(np.empty(0),),
        baseline=(np.array([-1.5]),),
    )
    cfg = ScenarioConfig(scenario="toy", n_subjects=40,
                         nominal_times=(0.0, 0.5, 1.0, 1.5, 2.0), jitter=0.0,
                         spec=spec, truth=truth, seed=99)
    summary = replicate_study(cfg, 2, S1=256, S2=512, init=truth)
    assert summary.n_converged == 2
    by_name = {r.parameter: r for r in summary.rows}
    # crude sanity: estimates land in the right neighborhood of truth
    assert abs(by_name["beta[intercept]"].mean - 8.0) < 1.5
    assert abs(by_name["beta[time]"].mean - 1.0) < 1.0
    assert abs(by_name["baseline1[zeta]"].mean + 1.5) < 1.0
    assert by_name["sigma[0,0]"].mean_asymptotic_se > 0.0


# --------------------------------------------------------------------------
# Stock designs
# --------------------------------------------------------------------------

def test_stock_designs_have_the_documented_shapes():
    a, b = scenario_a(), scenario_b()
    c, d, e = scenario_c(), scenario_d(), scenario_e()
    assert a.nominal_times == (0.0, 0.5, 1.0, 2.0, 3.0, 4.0, 5.0)
    assert len(b.nominal_times) == 13
    assert c.nominal_times == a.nominal_times
    assert d.nominal_times == b.nominal_times
    assert e.nominal_times == b.nominal_times
    for cfg in (a, b, e):
        assert not cfg.correlated_effects
    for cfg in (c, d):
        assert cfg.correlated_effects
    for cfg in (a, b, c, d):
        assert cfg.n_events == 2
        assert cfg.trajectory == "linear"
    assert e.n_events == 1
    assert e.trajectory == "quadratic"
    assert e.quadratic_coefficient == 0.5
    assert e.truth.beta[1] == 0.7


def test_stock_truth_reproduces_covariance_blocks():
    a = scenario_a()
    sigma = covariance_from_cholesky(a.truth.chol_lower)
    np.testing.assert_allclose(sigma[:2, :2], SIGMA_B, rtol=1e-12)
    np.testing.assert_allclose(sigma[2:, 2:], SIGMA_TAU, rtol=1e-12)
    np.testing.assert_allclose(sigma[2:, :2], 0.0, atol=0.0)
    np.testing.assert_array_equal(a.truth.beta, BETA)
    np.testing.assert_array_equal(a.truth.mu, MU)
    np.testing.assert_array_equal(a.truth.alpha[0], ALPHA_1)
    np.testing.assert_array_equal(a.truth.alpha[1], ALPHA_2)


def test_scenario_lookup_by_letter():
    cfg = scenario("b", n_subjects=33, seed=5)
    assert cfg.scenario == "B"
    assert cfg.n_subjects == 33
    with pytest.raises(InputError, match="unknown scenario"):
        scenario("Z")
