"""Maximum-likelihood estimation of the joint location-scale model.

The workhorse is a damped Newton ascent (Marquardt-Levenberg): the
Hessian of -loglik gets its diagonal inflated until a step increases the
log-likelihood.  Derivatives are finite differences on a shared stencil,
2 m^2 + 1 evaluations per iteration, so the expensive part is plain
likelihood evaluations and all of them run through the caching context.

Fitting is a two-step procedure: converge with a small number of
integration draws, then switch to a large draw count, take whatever few
extra iterations are needed for an invertible Hessian, and read the
variance matrix off its inverse.
"""

from __future__ import annotations

import warnings
from dataclasses import dataclass
from typing import Callable, Sequence

import numpy as np
from scipy.linalg import cho_factor, cho_solve, LinAlgError

from .errors import InputError, OptimizerFailure
from .hazard import place_knots
from .likelihood import LikelihoodContext
from .model import (
    BaselineFamily,
    Dataset,
    ModelSpec,
    ParameterVector,
    design_matrix,
    get_layout,
)

_FD_STEP = 1e-4
_PHI_START = 1e-2
_PHI_MAX = 1e10
_PSI_MIN = 2.0 ** -30
_RHO = 0.5
_EPS_RATE = 1e-8


@dataclass(frozen=True)
class ConvergenceCriteria:
    """Thresholds of the three-part stopping test."""

    eps_param: float = 1e-4
    eps_fn: float = 1e-4
    eps_rdm: float = 1e-3
    max_iter: int = 100

    def __post_init__(self):
        if min(self.eps_param, self.eps_fn, self.eps_rdm) <= 0:
            raise InputError("convergence thresholds must be strictly positive")
        if self.max_iter < 1:
            raise InputError("max_iter must be at least 1")


@dataclass(frozen=True)
class ConvergenceStatus:
    """Outcome of the three stopping tests at the last iteration.

    ``rdm_value`` is grad' H^-1 grad / m with H the Hessian of -loglik;
    it is None when that Hessian could not be inverted.
    """

    param: bool
    fn: bool
    rdm: bool
    rdm_value: float | None = None

    @property
    def converged(self) -> bool:
        return self.param and self.fn and self.rdm


# --------------------------------------------------------------------------
# Finite differences
# --------------------------------------------------------------------------

def _fd_steps(theta: np.ndarray) -> np.ndarray:
    return np.maximum(_FD_STEP, _FD_STEP * np.abs(theta))


def _probe(f: Callable, theta: np.ndarray, label: str) -> float:
    val = float(f(theta))
    if not np.isfinite(val):
        raise OptimizerFailure(
            f"non-finite objective at finite-difference probe {label}",
            diagnostics={"probe": label, "value": val},
        )
    return val


def fd_gradient(f: Callable, theta: np.ndarray,
                h: np.ndarray | None = None) -> np.ndarray:
    """Central-difference gradient, O(h^2)."""
    theta = np.asarray(theta, dtype=float)
    h = _fd_steps(theta) if h is None else np.asarray(h, dtype=float)
    grad = np.empty(theta.size)
    for j in range(theta.size):
        e = np.zeros(theta.size)
        e[j] = h[j]
        grad[j] = (_probe(f, theta + e, f"+e{j}")
                   - _probe(f, theta - e, f"-e{j}")) / (2.0 * h[j])
    return grad


def fd_hessian(f: Callable, theta: np.ndarray,
               h: np.ndarray | None = None) -> np.ndarray:
    return fd_grad_hess(f, theta, h=h)[2]


def fd_grad_hess(f: Callable, theta: np.ndarray,
                 h: np.ndarray | None = None,
                 f0: float | None = None):
    """Gradient and Hessian from one shared central stencil.

    Returns (f0, grad, hess); hess is symmetrized.  The caller may pass
    a precomputed f0 to save one evaluation.
    """
    theta = np.asarray(theta, dtype=float)
    m = theta.size
    h = _fd_steps(theta) if h is None else np.asarray(h, dtype=float)
    if f0 is None:
        f0 = _probe(f, theta, "center")
    fp = np.empty(m)
    fm = np.empty(m)
    for j in range(m):
        e = np.zeros(m)
        e[j] = h[j]
        fp[j] = _probe(f, theta + e, f"+e{j}")
        fm[j] = _probe(f, theta - e, f"-e{j}")
    grad = (fp - fm) / (2.0 * h)
    hess = np.zeros((m, m))
    hess[np.diag_indices(m)] = (fp - 2.0 * f0 + fm) / h ** 2
    for i in range(m):
        for j in range(i + 1, m):
            ei = np.zeros(m)
            ej = np.zeros(m)
            ei[i] = h[i]
            ej[j] = h[j]
            val = (_probe(f, theta + ei + ej, f"+e{i}+e{j}")
                   - _probe(f, theta + ei - ej, f"+e{i}-e{j}")
                   - _probe(f, theta - ei + ej, f"-e{i}+e{j}")
                   + _probe(f, theta - ei - ej, f"-e{i}-e{j}")) \
                / (4.0 * h[i] * h[j])
            hess[i, j] = val
            hess[j, i] = val
    return f0, grad, 0.5 * (hess + hess.T)


# --------------------------------------------------------------------------
# Damped ascent
# --------------------------------------------------------------------------

def marquardt_step(theta: np.ndarray, grad: np.ndarray, hess_neg: np.ndarray,
                   phi: float, rho: float = _RHO,
                   psi: float = 1.0) -> np.ndarray:
    """One proposed update theta + psi * Htilde^-1 grad.

    ``hess_neg`` is the Hessian of -loglik; its diagonal is inflated as
    H_ii + phi * ((1 - rho) |H_ii| + rho tr(H)) before solving.
    """
    theta = np.asarray(theta, dtype=float)
    grad = np.asarray(grad, dtype=float)
    if not np.all(np.isfinite(grad)):
        raise OptimizerFailure("non-finite gradient", diagnostics={})
    inflated = np.array(hess_neg, dtype=float)
    diag = np.diag(inflated).copy()
    trace = float(diag.sum())
    inflated[np.diag_indices_from(inflated)] = (
        diag + phi * ((1.0 - rho) * np.abs(diag) + rho * trace)
    )
    try:
        step = np.linalg.solve(inflated, grad)
    except np.linalg.LinAlgError:
        raise OptimizerFailure(
            "inflated Hessian is singular",
            diagnostics={"phi": phi, "psi": psi},
        ) from None
    return theta + psi * step


def check_convergence(theta_old, theta_new, ll_old, ll_new, grad, hess_neg,
                      criteria: ConvergenceCriteria) -> ConvergenceStatus:
    """Three-part test: parameter stability, function stability, and the
    relative distance to the maximum grad' H^-1 grad / m."""
    d_param = float(np.max((np.asarray(theta_new) - np.asarray(theta_old)) ** 2))
    d_fn = abs(ll_new - ll_old)
    rdm_value = None
    rdm_ok = False
    try:
        x = np.linalg.solve(hess_neg, grad)
        rdm_value = float(grad @ x) / grad.size
        # a negative value means the curvature is wrong-signed, which is
        # not a maximum no matter how small the gradient
        rdm_ok = 0.0 <= rdm_value < criteria.eps_rdm
        if not np.isfinite(rdm_value):
            rdm_value, rdm_ok = None, False
    except np.linalg.LinAlgError:
        pass
    return ConvergenceStatus(
        param=d_param < criteria.eps_param,
        fn=d_fn < criteria.eps_fn,
        rdm=rdm_ok,
        rdm_value=rdm_value,
    )


class _CallableObjective:
    """Adapter giving a plain function the caching-context interface."""

    def __init__(self, f):
        self._f = f

    def set_base(self, theta):
        return float(self._f(theta))

    def loglik_from_base(self, theta):
        return float(self._f(theta))

    def loglik(self, theta):
        return float(self._f(theta))


@dataclass
class _StepOutcome:
    theta: np.ndarray
    loglik: float
    iterations: int
    status: ConvergenceStatus
    grad: np.ndarray | None
    hess_neg: np.ndarray | None
    stalled: bool


def _maximize(obj, theta0: np.ndarray, criteria: ConvergenceCriteria,
              progress: Callable[[dict], None] | None = None,
              step_label: int = 1,
              max_iter: int | None = None,
              stop_when: Callable[[np.ndarray], bool] | None = None) -> _StepOutcome:
    """Marquardt-Levenberg ascent until the three-part test passes.

    ``stop_when`` lets the second estimation step bail out as soon as
    its invertibility condition holds at the current iterate.
    """
    theta = np.asarray(theta0, dtype=float).copy()
    ll = obj.set_base(theta)
    if not np.isfinite(ll):
        raise OptimizerFailure(
            "log-likelihood is not finite at the starting values",
            diagnostics={"loglik": ll},
        )
    phi = _PHI_START
    status = ConvergenceStatus(False, False, False)
    grad = None
    hess_neg = None
    stalled = False
    iterations = 0
    limit = criteria.max_iter if max_iter is None else max_iter
    for iterations in range(1, limit + 1):
        f0, grad, hess = fd_grad_hess(obj.loglik_from_base, theta, f0=ll)
        hess_neg = -hess
        if stop_when is not None and stop_when(hess_neg):
            iterations -= 1
            break
        psi = 1.0
        accepted = False
        while not accepted:
            try:
                cand = marquardt_step(theta, grad, hess_neg, phi, _RHO, psi)
                ll_cand = obj.set_base(cand)
            except OptimizerFailure:
                ll_cand = -np.inf
            if np.isfinite(ll_cand) and ll_cand > ll:
                accepted = True
                break
            if phi < _PHI_MAX:
                phi *= 10.0
            else:
                psi *= 0.5
            if psi < _PSI_MIN:
                stalled = True
                break
        if stalled:
            # cannot ascend from here; leave base at theta for callers
            obj.set_base(theta)
            break
        status = check_convergence(theta, cand, ll, ll_cand, grad, hess_neg,
                                   criteria)
        theta, ll = cand, ll_cand
        phi = max(phi / 10.0, 1e-14)
        if progress is not None:
            progress({
                "step": step_label,
                "iteration": iterations,
                "loglik": ll,
                "damping": phi,
                "rdm": status.rdm_value,
            })
        if status.converged:
            break
    return _StepOutcome(theta, ll, iterations, status, grad, hess_neg, stalled)


def maximize(f: Callable[[np.ndarray], float], theta0,
             criteria: ConvergenceCriteria | None = None,
             progress: Callable[[dict], None] | None = None) -> _StepOutcome:
    """Maximize a plain callable; used for small side problems and tests."""
    return _maximize(_CallableObjective(f), np.asarray(theta0, dtype=float),
                     criteria or ConvergenceCriteria(), progress)


# --------------------------------------------------------------------------
# Variance of the random-effect covariance entries
# --------------------------------------------------------------------------

def delta_method_cov(chol_lower: np.ndarray, vcov_L: np.ndarray,
                     pairs: Sequence[tuple[int, int]] | None = None) -> np.ndarray:
    """Covariance of vech(L L') from the covariance of the L entries.

    ``pairs`` lists the (row, col) of each estimated L entry in vcov_L
    order; the default is every lower-triangular position row-major.
    The Jacobian is analytic: d Sigma_ab / d L_cd = 1{a=c} L_bd
    + 1{b=c} L_ad.
    """
    L = np.asarray(chol_lower, dtype=float)
    d = L.shape[0]
    if pairs is None:
        pairs = [(i, j) for i in range(d) for j in range(i + 1)]
    pairs = list(pairs)
    vcov_L = np.asarray(vcov_L, dtype=float)
    if vcov_L.shape != (len(pairs), len(pairs)):
        raise InputError("vcov_L shape does not match the number of L entries")
    sigma_pairs = [(a, b) for a in range(d) for b in range(a + 1)]
    J = np.zeros((len(sigma_pairs), len(pairs)))
    for col, (c, e) in enumerate(pairs):
        for row, (a, b) in enumerate(sigma_pairs):
            val = 0.0
            if a == c:
                val += L[b, e]
            if b == c:
                val += L[a, e]
            J[row, col] = val
    return J @ vcov_L @ J.T


# --------------------------------------------------------------------------
# Starting values
# --------------------------------------------------------------------------

def default_init(spec: ModelSpec, dataset: Dataset) -> ParameterVector:
    """Cheap moment-based starting values.

    Least squares for the mean, the pooled residual log-SD for the
    variance intercept, a 0.1 I Cholesky factor, zero association, and
    event-rate baselines.
    """
    if len(dataset) == 0:
        raise InputError("cannot build starting values from an empty dataset")
    rows = []
    ys = []
    for sub in dataset:
        if sub.n_obs:
            rows.append(design_matrix(spec, sub, sub.times, which="X"))
            ys.append(sub.values)
    if not rows:
        raise InputError("no longitudinal measurements in the dataset")
    X = np.vstack(rows)
    y = np.concatenate(ys)
    beta, *_ = np.linalg.lstsq(X, y, rcond=None)
    if not np.all(np.isfinite(beta)):
        beta = np.zeros(X.shape[1])
        beta[0] = float(np.mean(y))
    resid_sd = float(np.std(y - X @ beta))
    mu = np.zeros(len(spec.fixed_variance_covariates))
    mu[0] = np.log(max(resid_sd, 1e-8))
    L = 0.1 * np.eye(spec.dim_effects)

    followup = sum(s.event_time - s.entry_time for s in dataset)
    gamma = []
    alpha = []
    baseline = []
    for k in range(spec.n_events):
        gamma.append(np.zeros(len(spec.survival_covariates_per_event[k])))
        alpha.append(np.zeros(spec.association_flags_per_event[k].count))
        n_events = sum(1 for s in dataset if s.event_indicator == k + 1)
        if n_events == 0:
            warnings.warn(
                f"no events of type {k + 1}; starting its baseline at the "
                "floor rate",
                stacklevel=2,
            )
        rate = n_events / followup if followup > 0 else 0.0
        log_rate = float(np.log(max(rate, _EPS_RATE)))
        bspec = spec.baseline_family_per_event[k]
        if bspec.family is BaselineFamily.EXPONENTIAL:
            baseline.append(np.array([log_rate]))
        elif bspec.family is BaselineFamily.WEIBULL:
            baseline.append(np.array([1.0, log_rate]))
        else:
            baseline.append(np.full(bspec.n_params, log_rate))
    return ParameterVector(
        beta=beta,
        mu=mu,
        chol_lower=L,
        gamma=tuple(gamma),
        alpha=tuple(alpha),
        baseline=tuple(baseline),
    )


# --------------------------------------------------------------------------
# The two-step fit
# --------------------------------------------------------------------------

@dataclass(frozen=True)
class FitResult:
    """Everything downstream consumers need from one model fit.

    ``spec`` is the resolved specification (spline knots pinned down),
    ``aic`` uses the step-1 log-likelihood by convention, ``loglik`` is
    the final value under the step-2 draw count.
    """

    spec: ModelSpec
    theta_hat: ParameterVector
    theta_flat: np.ndarray
    vcov: np.ndarray | None
    se: np.ndarray | None
    re_cov_vcov: np.ndarray | None
    loglik: float
    loglik_step1: float
    aic: float
    iterations: int
    converged: ConvergenceStatus
    steps: tuple[int, int]
    messages: tuple[str, ...] = ()

    @property
    def ok(self) -> bool:
        return self.converged.converged and self.se is not None


def _resolve_knots(spec: ModelSpec, dataset: Dataset) -> ModelSpec:
    """Pin down spline knots from observed event times where needed."""
    horizon = max(s.event_time for s in dataset)
    for k in range(spec.n_events):
        bspec = spec.baseline_family_per_event[k]
        if bspec.family is not BaselineFamily.BSPLINE:
            continue
        if bspec.interior_knots is not None and bspec.boundary is not None:
            continue
        events = [s.event_time for s in dataset if s.event_indicator == k + 1]
        knots = place_knots(events, bspec.n_interior_knots, t_max=horizon)
        spec = spec.with_knots(k, knots.interior_knots, knots.boundary_knots)
    return spec


def _spd_inverse(hess_neg: np.ndarray) -> np.ndarray | None:
    try:
        factor = cho_factor(hess_neg)
    except (LinAlgError, ValueError):
        return None
    inv = cho_solve(factor, np.eye(hess_neg.shape[0]))
    return 0.5 * (inv + inv.T)


def fit(spec: ModelSpec, dataset: Dataset, init: ParameterVector | np.ndarray,
        criteria: ConvergenceCriteria | None = None,
        S1: int = 500, S2: int = 5000, skip: int = 1,
        max_extra_iter: int = 10,
        progress: Callable[[dict], None] | None = None) -> FitResult:
    """Two-step maximum likelihood.

    Step 1 runs the damped ascent to convergence with S1 integration
    draws.  Step 2 re-evaluates with S2 draws and iterates only until
    the Hessian of -loglik admits a Cholesky factorization (usually
    immediately), then inverts it for standard errors.
    """
    if len(dataset) == 0:
        raise InputError("cannot fit an empty dataset")
    if not 1 <= S1 <= S2:
        raise InputError("draw counts must satisfy 1 <= S1 <= S2")
    criteria = criteria or ConvergenceCriteria()
    spec = _resolve_knots(spec, dataset)
    layout = get_layout(spec)
    if isinstance(init, ParameterVector):
        theta0 = layout.flatten(init)
    else:
        theta0 = np.asarray(init, dtype=float)
        if theta0.shape != (layout.size,):
            raise InputError(
                f"init has {theta0.size} entries, layout needs {layout.size}"
            )
    messages = []

    ctx1 = LikelihoodContext(spec, dataset, S1, skip=skip)
    step1 = _maximize(ctx1, theta0, criteria, progress, step_label=1)
    if step1.stalled:
        messages.append("step 1 stalled: no ascent direction after maximum damping")
    elif not step1.status.converged:
        messages.append(f"step 1 hit the iteration cap ({criteria.max_iter})")
    aic = -2.0 * step1.loglik + 2.0 * layout.size

    ctx2 = LikelihoodContext(spec, dataset, S2, skip=skip)

    def invertible(hess_neg):
        return _spd_inverse(hess_neg) is not None

    step2 = _maximize(ctx2, step1.theta, criteria, progress, step_label=2,
                      max_iter=max_extra_iter, stop_when=invertible)
    theta = step2.theta
    if step2.stalled:
        messages.append("step 2 stalled while seeking an invertible Hessian")
    hess_neg = step2.hess_neg
    vcov = None if hess_neg is None else _spd_inverse(hess_neg)
    if vcov is None and not step2.stalled and (hess_neg is None
                                               or step2.iterations):
        # the last stencil predates the final accepted step; measure the
        # curvature at the returned iterate itself before giving up
        _, _, hess = fd_grad_hess(ctx2.loglik_from_base, theta,
                                  f0=step2.loglik)
        hess_neg = -hess
        vcov = _spd_inverse(hess_neg)
    se = None
    re_cov_vcov = None
    if vcov is None:
        messages.append(
            "Hessian not invertible at the optimum; standard errors unavailable"
        )
    else:
        se = np.sqrt(np.maximum(np.diag(vcov), 0.0))
        chol_block = layout.chol_slice
        params_hat = layout.unflatten(theta)
        re_cov_vcov = delta_method_cov(
            params_hat.chol_lower,
            vcov[chol_block, chol_block],
            pairs=layout.chol_pairs,
        )

    status = step2.status if step2.iterations else step1.status
    return FitResult(
        spec=spec,
        theta_hat=layout.unflatten(theta),
        theta_flat=theta,
        vcov=vcov,
        se=se,
        re_cov_vcov=re_cov_vcov,
        loglik=step2.loglik,
        loglik_step1=step1.loglik,
        aic=aic,
        iterations=step1.iterations + step2.iterations,
        converged=status,
        steps=(S1, S2),
        messages=tuple(messages),
    )
