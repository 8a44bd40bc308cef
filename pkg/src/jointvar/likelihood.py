"""Marginal log-likelihood by quasi-Monte Carlo integration.

The subject-level integral over the random effects (b_i, tau_i) is
approximated by an average over Sobol points mapped through the inverse
normal CDF.  One draw matrix is generated per evaluation pass and shared
by all subjects (common random numbers), which makes the log-likelihood
a smooth deterministic function of the parameters; finite-difference
derivatives rely on that.

Two implementations coexist on purpose: readable per-subject functions
(:func:`subject_conditional_density`, :func:`subject_marginal_loglik`,
:func:`total_loglik`) and :class:`LikelihoodContext`, a vectorized
evaluator used by the optimizer that additionally reuses unchanged
blocks between finite-difference probes.  Tests pin the two to each
other.
"""

from __future__ import annotations

import warnings
from dataclasses import dataclass

import numpy as np
from scipy.special import ndtri
from scipy.stats import qmc

from .errors import ConfigurationError, InputError
from .hazard import (
    _basis_matrix,
    baseline_log_at_nodes,
    knots_from_baseline,
    quad_scheme,
)
from .model import (
    BaselineFamily,
    Dataset,
    ModelSpec,
    ParameterVector,
    SubjectData,
    design_matrix,
    design_slope_matrix,
    get_layout,
    survival_design,
    unflatten,
)

_LOG_2PI = float(np.log(2.0 * np.pi))
_MAX_SOBOL_DIM = 21201  # generator limit for direction numbers
_SD_MEMO_CAP = 512 * 2**20  # byte budget for memoized node SD cells


@dataclass(frozen=True)
class SobolDraws:
    """S x d standard-normal quasi-random deviates plus generator metadata."""

    z: np.ndarray
    S: int
    d: int
    skip: int

    def __post_init__(self):
        z = np.asarray(self.z, dtype=float)
        z.setflags(write=False)
        object.__setattr__(self, "z", z)


def sobol_normal(S: int, d: int, skip: int = 1) -> SobolDraws:
    """Sobol points in (0,1)^d mapped through the inverse normal CDF.

    The sequence is unscrambled and deterministic given (S, d, skip);
    the default skip of 1 drops the origin point.
    """
    if S < 1 or d < 1:
        raise InputError("sobol_normal needs S >= 1 and d >= 1")
    if d > _MAX_SOBOL_DIM:
        raise ConfigurationError(
            f"Sobol generator supports at most {_MAX_SOBOL_DIM} dimensions"
        )
    with warnings.catch_warnings():
        warnings.simplefilter("ignore")  # non-power-of-two draw counts are fine here
        gen = qmc.Sobol(d, scramble=False)
        if skip:
            gen.fast_forward(skip)
        u = gen.random(S)
    return SobolDraws(z=ndtri(u), S=S, d=d, skip=skip)


def logmeanexp(a: np.ndarray, axis: int = -1) -> np.ndarray:
    """log of the mean of exp(a), stable, with all -inf rows mapped to -inf."""
    a = np.asarray(a, dtype=float)
    m = np.max(a, axis=axis, keepdims=True)
    safe = np.where(np.isfinite(m), m, 0.0)
    with np.errstate(divide="ignore"):
        out = (np.log(np.mean(np.exp(a - safe), axis=axis))
               + np.squeeze(safe, axis=axis))
    return np.where(np.isfinite(np.squeeze(m, axis=axis)), out, -np.inf)


def _effects_from_draws(params: ParameterVector, spec: ModelSpec,
                        z: np.ndarray) -> tuple[np.ndarray, np.ndarray]:
    """Realize (b, tau) = L z for each draw; returns (S, dim_b), (S, dim_tau)."""
    eff = z @ params.chol_lower.T
    return eff[:, : spec.dim_b], eff[:, spec.dim_b:]


def _marker_terms_draws(spec: ModelSpec, params: ParameterVector,
                        subject: SubjectData, t: np.ndarray,
                        b: np.ndarray, tau: np.ndarray):
    """Value, slope and log-SD of the marker at times t for each draw.

    Returns three (len(t), S) arrays (slope omitted when never needed is
    still cheap, so it is always produced).
    """
    X = design_matrix(spec, subject, t, "X")
    Z = design_matrix(spec, subject, t, "Z")
    O = design_matrix(spec, subject, t, "O")
    M = design_matrix(spec, subject, t, "M")
    dX = design_slope_matrix(spec, subject, t, "X")
    dZ = design_slope_matrix(spec, subject, t, "Z")
    value = (X @ params.beta)[:, None] + Z @ b.T
    slope = (dX @ params.beta)[:, None] + dZ @ b.T
    logsd = (O @ params.mu)[:, None] + M @ tau.T
    return value, slope, logsd


def _survival_logdens_draws(spec: ModelSpec, params: ParameterVector,
                            subject: SubjectData, upto: float,
                            b: np.ndarray, tau: np.ndarray,
                            with_event_term: bool) -> np.ndarray:
    """Per-draw log survival density piece: -sum_k Lambda_k(0, upto)
    plus, when requested and delta = k, log lambda_k(upto)."""
    S = b.shape[0]
    out = np.zeros(S)
    for k in range(spec.n_events):
        bspec = spec.baseline_family_per_event[k]
        bparams = params.baseline[k]
        scheme = quad_scheme(bspec, bparams, np.array([0.0]), np.array([upto]))
        logbase = baseline_log_at_nodes(bspec, bparams, scheme)[0]
        nodes = scheme.nodes[0]
        A = _association_draws(spec, params, subject, nodes, b, tau, k)
        with np.errstate(over="ignore"):
            lam = np.exp(
                scheme.log_jac_weight[0][:, None] + logbase[:, None] + A
            ).sum(axis=0)
        out -= lam
        if with_event_term and subject.event_indicator == k + 1:
            t_ev = np.array([upto])
            A_T = _association_draws(spec, params, subject, t_ev, b, tau, k)[0]
            out += _log_baseline_at(bspec, bparams, upto) + A_T
    return out


def _association_draws(spec: ModelSpec, params: ParameterVector,
                       subject: SubjectData, t: np.ndarray,
                       b: np.ndarray, tau: np.ndarray, k: int) -> np.ndarray:
    """(len(t), S) log relative risk at times t for each draw."""
    flags = spec.association_flags_per_event[k]
    W = survival_design(spec, subject, k)
    gamma_term = float(W @ params.gamma[k]) if W.size else 0.0
    value, slope, logsd = _marker_terms_draws(spec, params, subject, t, b, tau)
    out = np.full((t.size, b.shape[0]), gamma_term)
    a = iter(params.alpha[k])
    if flags.use_current_value:
        out += next(a) * value
    if flags.use_current_slope:
        out += next(a) * slope
    if flags.use_current_sd:
        with np.errstate(over="ignore"):
            out += next(a) * np.exp(logsd)
    return out


def _log_baseline_at(bspec, bparams, t: float) -> float:
    if bspec.family is BaselineFamily.EXPONENTIAL:
        return float(bparams[0])
    if bspec.family is BaselineFamily.WEIBULL:
        kappa = float(bparams[0]) ** 2
        return float(np.log(kappa) + (kappa - 1.0) * np.log(t) + bparams[1])
    knots = knots_from_baseline(bspec)
    return float(_basis_matrix(np.array([t]), knots)[0] @ np.asarray(bparams))


def conditional_logdens_draws(spec: ModelSpec, params: ParameterVector,
                              subject: SubjectData,
                              b: np.ndarray, tau: np.ndarray) -> np.ndarray:
    """Per-draw log density of (Y_i, T_i, delta_i) given effects.

    b is (S, dim_b) and tau is (S, dim_tau); returns (S,).  Non-finite
    draws are mapped to -inf so the caller can treat them as rejections.
    """
    b = np.atleast_2d(np.asarray(b, dtype=float))
    tau = np.atleast_2d(np.asarray(tau, dtype=float))
    S = b.shape[0]
    out = np.zeros(S)
    if subject.n_obs:
        value, _, logsd = _marker_terms_draws(
            spec, params, subject, subject.times, b, tau
        )
        r = subject.values[:, None] - value
        with np.errstate(over="ignore"):
            out += np.sum(
                -logsd - 0.5 * _LOG_2PI - 0.5 * r * r * np.exp(-2.0 * logsd),
                axis=0,
            )
    out += _survival_logdens_draws(
        spec, params, subject, subject.event_time, b, tau, with_event_term=True
    )
    return np.where(np.isfinite(out), out, -np.inf)


def subject_conditional_density(spec: ModelSpec, params: ParameterVector,
                                subject: SubjectData, b, tau) -> float:
    """log f(Y_i, T_i, delta_i | b, tau) for a single effect vector."""
    b = np.asarray(b, dtype=float).reshape(1, -1)
    tau = np.asarray(tau, dtype=float).reshape(1, -1)
    return float(conditional_logdens_draws(spec, params, subject, b, tau)[0])


def subject_marginal_loglik(spec: ModelSpec, params: ParameterVector,
                            subject: SubjectData, draws: SobolDraws) -> float:
    """log L_i: log of the draw-average of the conditional density.

    Under delayed entry the average of exp(-sum_k Lambda_k(T_0i)) over
    the same draws is subtracted on the log scale (probability of being
    event-free at entry).
    """
    if draws.d != spec.dim_effects:
        raise InputError(
            f"draws have dimension {draws.d}, spec needs {spec.dim_effects}"
        )
    b, tau = _effects_from_draws(params, spec, draws.z)
    cond = conditional_logdens_draws(spec, params, subject, b, tau)
    out = float(logmeanexp(cond))
    if not np.isfinite(out):
        warnings.warn(
            f"subject {subject.id}: all integration draws underflowed",
            stacklevel=2,
        )
        return -np.inf
    if spec.delayed_entry and subject.entry_time > 0.0:
        at_entry = _survival_logdens_draws(
            spec, params, subject, subject.entry_time, b, tau,
            with_event_term=False,
        )
        out -= float(logmeanexp(at_entry))
    return out


def total_loglik(spec: ModelSpec, params: ParameterVector,
                 dataset: Dataset, draws: SobolDraws) -> float:
    """Sum of subject marginal log-likelihoods in dataset order."""
    total = 0.0
    for subject in dataset:
        li = subject_marginal_loglik(spec, params, subject, draws)
        if not np.isfinite(li):
            warnings.warn(
                f"subject {subject.id}: non-finite likelihood contribution",
                stacklevel=2,
            )
            return -np.inf
        total += li
    return total


# --------------------------------------------------------------------------
# Vectorized evaluator
# --------------------------------------------------------------------------

def _term_descriptors(names, subjects):
    """Compile design column names into node-evaluation descriptors."""
    desc = []
    for name in names:
        if name == "intercept":
            desc.append(("one", None))
        elif name == "time":
            desc.append(("t", None))
        elif name == "time2":
            desc.append(("t2", None))
        else:
            vals = np.empty(len(subjects))
            for i, s in enumerate(subjects):
                try:
                    vals[i] = float(s.covariates[name])
                except KeyError:
                    raise InputError(
                        f"subject {s.id}: covariate '{name}' missing"
                    ) from None
            desc.append(("cov", vals))
    return desc


def _terms_at(desc, tn: np.ndarray) -> np.ndarray:
    """(N, J, m) design values at node times tn (N, J)."""
    cols = []
    for kind, vals in desc:
        if kind == "one":
            cols.append(np.ones_like(tn))
        elif kind == "t":
            cols.append(tn)
        elif kind == "t2":
            cols.append(tn * tn)
        else:
            cols.append(np.broadcast_to(vals[:, None], tn.shape))
    if not cols:
        return np.zeros(tn.shape + (0,))
    return np.stack(cols, axis=-1)


def _slopes_at(desc, tn: np.ndarray) -> np.ndarray:
    cols = []
    for kind, _ in desc:
        if kind == "t":
            cols.append(np.ones_like(tn))
        elif kind == "t2":
            cols.append(2.0 * tn)
        else:
            cols.append(np.zeros_like(tn))
    if not cols:
        return np.zeros(tn.shape + (0,))
    return np.stack(cols, axis=-1)


class LikelihoodContext:
    """Vectorized total log-likelihood over a fixed dataset and draw set.

    ``loglik`` evaluates from scratch.  ``set_base`` additionally caches
    per-block intermediates so that ``loglik_from_base``, called with a
    vector differing in few coordinates (a finite-difference probe), can
    reuse every block the changed coordinates cannot touch.  Both paths
    compute the same formula; they differ only in evaluation order.
    """

    def __init__(self, spec: ModelSpec, dataset: Dataset, S: int,
                 skip: int = 1, chunk: int = 64):
        self.spec = spec
        self.layout = get_layout(spec)
        self.chunk = int(chunk)
        subjects = list(dataset)
        self.n_subjects = len(subjects)
        d = spec.dim_effects
        if d > 0:
            self.z = sobol_normal(S, d, skip).z
            self.S = S
        else:
            self.z = np.zeros((1, 0))
            self.S = 1

        # Longitudinal stacks (rows grouped by subject, dataset order).
        Xs, Zs, Os, Ms, ys = [], [], [], [], []
        counts = np.zeros(self.n_subjects, dtype=int)
        for i, s in enumerate(subjects):
            counts[i] = s.n_obs
            if s.n_obs:
                Xs.append(design_matrix(spec, s, s.times, "X"))
                Zs.append(design_matrix(spec, s, s.times, "Z"))
                Os.append(design_matrix(spec, s, s.times, "O"))
                Ms.append(design_matrix(spec, s, s.times, "M"))
                ys.append(s.values)
        def join(parts, width):
            return np.vstack(parts) if parts else np.zeros((0, width))

        self.Xl = join(Xs, len(spec.fixed_marker_covariates))
        self.Zl = join(Zs, spec.dim_b)
        self.Ol = join(Os, len(spec.fixed_variance_covariates))
        self.Ml = join(Ms, spec.dim_tau)
        self.yl = np.concatenate(ys) if ys else np.zeros(0)
        bounds = np.zeros(self.n_subjects + 1, dtype=int)
        np.cumsum(counts, out=bounds[1:])
        self.row_bounds = bounds
        # reduceat needs strictly increasing offsets: subjects without
        # measurements are dropped here and left at zero in _long_cond
        self._seg_mask = counts > 0
        self._seg_starts = bounds[:-1][self._seg_mask]
        self.ids = [s.id for s in subjects]

        # Survival statics.
        self.T = np.array([s.event_time for s in subjects])
        self.T0 = np.array([s.entry_time for s in subjects])
        self.delta = np.array([s.event_indicator for s in subjects])
        self.use_entry = bool(spec.delayed_entry and np.any(self.T0 > 0.0))
        self.desc_X = _term_descriptors(spec.fixed_marker_covariates, subjects)
        self.desc_Z = _term_descriptors(spec.random_marker_terms, subjects)
        self.desc_O = _term_descriptors(spec.fixed_variance_covariates, subjects)
        self.desc_M = _term_descriptors(spec.random_variance_terms, subjects)
        self.W = []
        self.event_rows = []
        self.static_T = []
        for k in range(spec.n_events):
            self.W.append(
                np.vstack([survival_design(spec, s, k) for s in subjects])
                if spec.survival_covariates_per_event[k]
                else np.zeros((self.n_subjects, 0))
            )
            rows = np.flatnonzero(self.delta == k + 1)
            self.event_rows.append(rows)
            tT = self.T[rows][:, None]  # (n_k, 1)

            def sub(desc):
                return [(kd, v[rows] if v is not None else None) for kd, v in desc]

            self.static_T.append({
                "X": _terms_at(sub(self.desc_X), tT)[:, 0, :],
                "Z": _terms_at(sub(self.desc_Z), tT)[:, 0, :],
                "dX": _slopes_at(sub(self.desc_X), tT)[:, 0, :],
                "dZ": _slopes_at(sub(self.desc_Z), tT)[:, 0, :],
                "O": _terms_at(sub(self.desc_O), tT)[:, 0, :],
                "M": _terms_at(sub(self.desc_M), tT)[:, 0, :],
                "logT": np.log(np.maximum(self.T[rows], np.finfo(float).tiny)),
            })

        # Node bundles that do not depend on parameters (Exponential and
        # B-spline baselines; Weibull bundles are keyed by shape).
        self._static_bundle = {}
        for k in range(spec.n_events):
            fam = spec.baseline_family_per_event[k].family
            if fam is not BaselineFamily.WEIBULL:
                self._static_bundle[("event", k)] = self._build_bundle(
                    k, None, self.T0 * 0.0, self.T
                )
                if self.use_entry:
                    self._static_bundle[("entry", k)] = self._build_bundle(
                        k, None, self.T0 * 0.0, self.T0
                    )
        self._kappa_cache: dict = {}
        self._base = None
        self._memo_long: dict = {}
        self._memo_ev: list[dict] = [dict() for _ in range(spec.n_events)]
        # Coordinates the node SD cells of each event read: mu, the tau
        # rows of the Cholesky factor, and the Weibull shape (it moves the
        # quadrature nodes).  None when the event has no draw-level SD.
        self._sd_idx: list = []
        self._sd_idx_set: list = []
        lay = self.layout
        for k in range(spec.n_events):
            flags = spec.association_flags_per_event[k]
            if flags.use_current_sd and spec.dim_tau > 0:
                idx = list(range(lay.mu_slice.start, lay.mu_slice.stop))
                idx += [
                    lay.chol_slice.start + j
                    for j, (i, _) in enumerate(lay.chol_pairs)
                    if i >= spec.dim_b
                ]
                if (
                    spec.baseline_family_per_event[k].family
                    is BaselineFamily.WEIBULL
                ):
                    idx.append(lay.baseline_slices[k].start)
                self._sd_idx.append(np.array(idx, dtype=int))
                self._sd_idx_set.append(set(idx))
            else:
                self._sd_idx.append(None)
                self._sd_idx_set.append(set())
        self._memo_sd: list[dict] = [dict() for _ in range(spec.n_events)]
        self._memo_sd_bytes = 0

    # -- bundles ----------------------------------------------------------

    def _build_bundle(self, k: int, bparams, t_from, t_to):
        """Nodes, log jacobian-weights and node designs for one event."""
        spec = self.spec
        bspec = spec.baseline_family_per_event[k]
        scheme = quad_scheme(bspec, bparams, t_from, t_to)
        tn = scheme.nodes
        flags = spec.association_flags_per_event[k]
        bundle = {
            "ljw": scheme.log_jac_weight,
            "basis": scheme.basis,
            "shape": tn.shape,
        }
        if flags.use_current_value:
            bundle["Xn"] = _terms_at(self.desc_X, tn)
            bundle["Zn"] = _terms_at(self.desc_Z, tn)
        if flags.use_current_slope:
            bundle["dXn"] = _slopes_at(self.desc_X, tn)
            dZn = _slopes_at(self.desc_Z, tn)
            # A slope design constant in subject and node (e.g. intercept
            # plus time) collapses to one row: its draw effect is a scalar.
            if dZn.size and np.all(dZn == dZn[0, 0]):
                bundle["dZrow"] = dZn[0, 0].copy()
            else:
                bundle["dZn"] = dZn
        if flags.use_current_sd:
            bundle["On"] = _terms_at(self.desc_O, tn)
            bundle["Mn"] = _terms_at(self.desc_M, tn)
        return bundle

    def _bundle_for(self, which: str, k: int, bparams) -> dict:
        fam = self.spec.baseline_family_per_event[k].family
        if fam is not BaselineFamily.WEIBULL:
            return self._static_bundle[(which, k)]
        kappa = float(bparams[0]) ** 2
        key = (which, k, kappa)
        if key not in self._kappa_cache:
            t_to = self.T if which == "event" else self.T0
            self._kappa_cache[key] = self._build_bundle(
                k, bparams, self.T0 * 0.0, t_to
            )
        return self._kappa_cache[key]

    # -- parameter unpacking ----------------------------------------------

    def _unpack(self, theta: np.ndarray):
        lay = self.layout
        theta = np.asarray(theta, dtype=float)
        d = self.spec.dim_effects
        L = np.zeros((d, d))
        for val, (i, j) in zip(theta[lay.chol_slice], lay.chol_pairs):
            L[i, j] = val
        per_event = []
        for k in range(self.spec.n_events):
            flags = self.spec.association_flags_per_event[k]
            a = theta[lay.alpha_slices[k]]
            ai = iter(a)
            per_event.append({
                "gamma": theta[lay.gamma_slices[k]],
                "a_value": next(ai) if flags.use_current_value else None,
                "a_slope": next(ai) if flags.use_current_slope else None,
                "a_sd": next(ai) if flags.use_current_sd else None,
                "baseline": theta[lay.baseline_slices[k]],
            })
        return theta[lay.beta_slice], theta[lay.mu_slice], L, per_event

    # -- evaluation pieces --------------------------------------------------

    def _long_cond(self, beta, mu, b, tau):
        """(N, S) longitudinal log density summed within subject."""
        n = self.yl.size
        S = self.S
        out = np.zeros((self.n_subjects, S))
        if n == 0:
            return out
        resid_fix = self.Xl @ beta - self.yl
        lsd_fix = self.Ol @ mu
        cells = np.empty((n, S))
        for c0 in range(0, S, self.chunk):
            c1 = min(c0 + self.chunk, S)
            if self.spec.dim_b:
                R = self.Zl @ b[:, c0:c1]
                R += resid_fix[:, None]
            else:
                R = resid_fix[:, None]
            LSD = lsd_fix[:, None] + (
                self.Ml @ tau[:, c0:c1] if self.spec.dim_tau else 0.0
            )
            # write through a full-width slice so draw-free R or LSD (shape
            # (n, 1)) broadcast correctly against the draw-dependent factor
            sl = cells[:, c0:c1]
            sl[:] = -2.0 * LSD
            with np.errstate(over="ignore"):
                np.exp(sl, out=sl)
            sl *= R
            sl *= R
            sl *= 0.5
            sl += LSD
            sl += 0.5 * _LOG_2PI
        out[self._seg_mask] -= np.add.reduceat(cells, self._seg_starts, axis=0)
        return out

    def _event_parts(self, which: str, k: int, beta, mu, ev,
                     b, tau, cached_sd=None, want_sd=True):
        """Cumulative hazard (N, S) or (N,) for event k, plus node SD cache.

        For ``which == "event"`` also returns the log-hazard at T for the
        subjects who had event k.  ``want_sd=False`` skips materializing
        the node SD cache (probe evaluations discard it) which allows the
        association scale to be folded into the exponent.
        """
        spec = self.spec
        bspec = spec.baseline_family_per_event[k]
        bundle = self._bundle_for(which, k, ev["baseline"])
        N, J = bundle["shape"]
        flags = spec.association_flags_per_event[k]

        # Draw-free additive piece at the nodes.
        base = bundle["ljw"].copy()
        if bspec.family is BaselineFamily.BSPLINE:
            base += bundle["basis"] @ ev["baseline"]
        else:
            base += float(ev["baseline"][-1])  # zeta
        if ev["gamma"].size:
            base += (self.W[k] @ ev["gamma"])[:, None]
        if flags.use_current_value:
            base += ev["a_value"] * (bundle["Xn"] @ beta)
        if flags.use_current_slope:
            base += ev["a_slope"] * (bundle["dXn"] @ beta)
        lsd_fix = bundle["On"] @ mu if flags.use_current_sd else None

        need_sd_cells = flags.use_current_sd and spec.dim_tau > 0
        need_val_cells = flags.use_current_value and spec.dim_b > 0
        need_slope_cells = flags.use_current_slope and spec.dim_b > 0
        if flags.use_current_sd and not need_sd_cells:
            with np.errstate(over="ignore"):
                base += ev["a_sd"] * np.exp(lsd_fix)

        if not (need_sd_cells or need_val_cells or need_slope_cells):
            with np.errstate(over="ignore"):
                lam = np.exp(base).sum(axis=1)
            return lam, None  # (N,) draw-free

        S = self.S
        lam = np.empty((N, S))
        fresh_sd = need_sd_cells and cached_sd is None
        sd_out = np.empty((N, J, S)) if (fresh_sd and want_sd) else None
        a_sd = float(ev["a_sd"]) if need_sd_cells else 0.0
        # When the cache is discarded the scale folds into the exponent
        # (sign applied on the accumulation), saving two array passes.
        fold_sd = fresh_sd and not want_sd and a_sd != 0.0
        lsd_node = lsd_fix
        if fold_sd:
            lsd_node = lsd_fix + np.log(abs(a_sd))
        slope_row = bundle.get("dZrow") if need_slope_cells else None
        Zn2 = bundle["Zn"].reshape(N * J, -1) if need_val_cells else None
        dZn2 = (
            bundle["dZn"].reshape(N * J, -1)
            if need_slope_cells and slope_row is None
            else None
        )
        Mn2 = bundle["Mn"].reshape(N * J, -1) if need_sd_cells else None
        # Scale the draw vectors once so the per-chunk products come out
        # pre-multiplied; a node-constant slope row adds a draw-level
        # scalar, carried as an extra all-ones design column.
        if need_val_cells:
            vrows = [ev["a_value"] * b]
            design = Zn2
            if slope_row is not None:
                vrows.append((ev["a_slope"] * (slope_row @ b))[None, :])
                design = bundle.get("Zn_aug")
                if design is None:
                    design = np.hstack([Zn2, np.ones((N * J, 1))])
                    bundle["Zn_aug"] = design
            vmat = np.vstack(vrows)
        b_slope = ev["a_slope"] * b if (dZn2 is not None) else None
        for c0 in range(0, S, self.chunk):
            c1 = min(c0 + self.chunk, S)
            C = c1 - c0
            if need_val_cells:
                G = (design @ vmat[:, c0:c1]).reshape(N, J, C)
                G += base[:, :, None]
            else:
                G = np.broadcast_to(base[:, :, None], (N, J, C)).copy()
                if slope_row is not None:
                    G += (ev["a_slope"] * (slope_row @ b[:, c0:c1]))[None, None, :]
            if dZn2 is not None:
                G += (dZn2 @ b_slope[:, c0:c1]).reshape(N, J, C)
            if need_sd_cells:
                if fresh_sd:
                    SD = (Mn2 @ tau[:, c0:c1]).reshape(N, J, C)
                    SD += lsd_node[:, :, None]
                    with np.errstate(over="ignore"):
                        np.exp(SD, out=SD)
                    if fold_sd:
                        if a_sd > 0.0:
                            G += SD
                        else:
                            G -= SD
                    else:
                        if sd_out is not None:
                            sd_out[:, :, c0:c1] = SD
                        G += a_sd * SD
                elif a_sd != 0.0:
                    G += a_sd * cached_sd[:, :, c0:c1]
            with np.errstate(over="ignore"):
                np.exp(G, out=G)
            lam[:, c0:c1] = G.sum(axis=1)
        return lam, (sd_out if sd_out is not None else cached_sd)

    def _event_loghaz_at_T(self, k, beta, mu, ev, b, tau):
        """(n_k, S) or (n_k,) log hazard at the event time for delta = k."""
        spec = self.spec
        rows = self.event_rows[k]
        st = self.static_T[k]
        flags = spec.association_flags_per_event[k]
        bspec = spec.baseline_family_per_event[k]
        bp = ev["baseline"]
        if bspec.family is BaselineFamily.EXPONENTIAL:
            lh0 = np.full(rows.size, float(bp[0]))
        elif bspec.family is BaselineFamily.WEIBULL:
            kappa = float(bp[0]) ** 2
            lh0 = np.log(kappa) + (kappa - 1.0) * st["logT"] + float(bp[1])
        else:
            knots = knots_from_baseline(bspec)
            lh0 = _basis_matrix(self.T[rows], knots) @ bp
        out = lh0.astype(float)
        if ev["gamma"].size:
            out = out + self.W[k][rows] @ ev["gamma"]
        draw_dep = (
            (flags.use_current_value and spec.dim_b > 0)
            or (flags.use_current_slope and spec.dim_b > 0)
            or (flags.use_current_sd and spec.dim_tau > 0)
        )
        if flags.use_current_value:
            out = out + ev["a_value"] * (st["X"] @ beta)
        if flags.use_current_slope:
            out = out + ev["a_slope"] * (st["dX"] @ beta)
        if not draw_dep:
            if flags.use_current_sd:
                with np.errstate(over="ignore"):
                    out = out + ev["a_sd"] * np.exp(st["O"] @ mu)
            return out
        out2 = np.repeat(out[:, None], self.S, axis=1)
        if flags.use_current_value and spec.dim_b > 0:
            out2 += ev["a_value"] * (st["Z"] @ b)
        if flags.use_current_slope and spec.dim_b > 0:
            out2 += ev["a_slope"] * (st["dZ"] @ b)
        if flags.use_current_sd:
            lsd = (st["O"] @ mu)[:, None]
            if spec.dim_tau > 0:
                lsd = lsd + st["M"] @ tau
            with np.errstate(over="ignore"):
                out2 += ev["a_sd"] * np.exp(lsd)
        return out2

    def _combine(self, long_cond, lams, lhTs, entry_lams):
        """Assemble conditional log densities, then log-mean-exp per subject."""
        cond = long_cond.copy()
        for k in range(self.spec.n_events):
            lam = lams[k]
            cond -= lam[:, None] if lam.ndim == 1 else lam
            rows = self.event_rows[k]
            if rows.size:
                lhT = lhTs[k]
                cond[rows] += lhT[:, None] if lhT.ndim == 1 else lhT
        li = logmeanexp(cond, axis=1)
        if self.use_entry:
            at_entry = np.zeros_like(long_cond)
            for k in range(self.spec.n_events):
                lam0 = entry_lams[k]
                at_entry -= lam0[:, None] if lam0.ndim == 1 else lam0
            li = li - logmeanexp(at_entry, axis=1)
        if not np.all(np.isfinite(li)):
            bad = int(np.argmax(~np.isfinite(li)))
            warnings.warn(
                f"subject {self.ids[bad]}: non-finite likelihood contribution",
                stacklevel=3,
            )
            return -np.inf, li
        return float(np.sum(li)), li

    # -- public API ---------------------------------------------------------

    def _evaluate(self, theta, base=None):
        """Shared implementation for full and probe evaluations."""
        spec = self.spec
        beta, mu, L, per_event = self._unpack(theta)
        eff = L @ self.z.T
        b, tau = eff[: spec.dim_b], eff[spec.dim_b:]
        lay = self.layout

        if base is not None:
            changed = np.flatnonzero(theta != base["theta"])
            chg = set()
            for idx in changed:
                if idx < lay.beta_slice.stop:
                    chg.add("beta")
                elif idx < lay.mu_slice.stop:
                    chg.add("mu")
                elif idx < lay.chol_slice.stop:
                    i, _ = lay.chol_pairs[idx - lay.chol_slice.start]
                    chg.add("chol_tau" if i >= spec.dim_b else "chol_b")
                else:
                    for k in range(spec.n_events):
                        if lay.gamma_slices[k].start <= idx < lay.gamma_slices[k].stop:
                            chg.add(f"gamma{k}")
                        elif lay.alpha_slices[k].start <= idx < lay.alpha_slices[k].stop:
                            chg.add(f"alpha{k}")
                        elif (
                            lay.baseline_slices[k].start
                            <= idx
                            < lay.baseline_slices[k].stop
                        ):
                            fam = spec.baseline_family_per_event[k].family
                            if fam is BaselineFamily.WEIBULL:
                                off = idx - lay.baseline_slices[k].start
                                chg.add(f"kappa{k}" if off == 0 else f"zeta{k}")
                            elif fam is BaselineFamily.EXPONENTIAL:
                                chg.add(f"zeta{k}")
                            else:
                                chg.add(f"eta{k}")
        else:
            chg = None

        # A probe differing from the base in a single coordinate is a
        # finite-difference axis point; its block values recur in every
        # cross probe along the same axis, so they are memoized per block
        # (keyed by the exact bytes of the parameters the block reads).
        prefix_stop = lay.chol_slice.stop
        key_long = theta[:prefix_stop].tobytes() if base is not None else None

        marker_changed = base is None or bool(
            chg & {"beta", "mu", "chol_b", "chol_tau"}
        )
        if marker_changed:
            long_cond = self._memo_long.get(key_long) if base is not None else None
            if long_cond is None:
                long_cond = self._long_cond(beta, mu, b, tau)
                if base is not None and np.searchsorted(changed, prefix_stop) == 1:
                    self._memo_long[key_long] = long_cond
        else:
            long_cond = base["long_cond"]

        lams, lhTs, entry_lams, sds = [], [], [], []
        for k in range(spec.n_events):
            ev = per_event[k]
            if base is not None:
                ev_chg = chg & {
                    "beta", "mu", "chol_b", "chol_tau",
                    f"gamma{k}", f"alpha{k}", f"kappa{k}", f"zeta{k}", f"eta{k}",
                }
                if not ev_chg:
                    lams.append(base["lams"][k])
                    lhTs.append(base["lhTs"][k])
                    entry_lams.append(
                        base["entry_lams"][k] if self.use_entry else None
                    )
                    sds.append(base["sds"][k])
                    continue
                gs = lay.gamma_slices[k].start
                bs = lay.baseline_slices[k].stop
                key_ev = key_long + theta[gs:bs].tobytes()
                hit = self._memo_ev[k].get(key_ev)
                if hit is not None:
                    lam, lhT, e_lam = hit
                    lams.append(lam)
                    lhTs.append(lhT)
                    entry_lams.append(e_lam)
                    sds.append(base["sds"][k])
                    continue
                store = 1 == (
                    np.searchsorted(changed, prefix_stop)
                    + np.searchsorted(changed, bs)
                    - np.searchsorted(changed, gs)
                )
            else:
                ev_chg = None
                key_ev = None
                store = False

            if base is not None and ev_chg <= {f"gamma{k}", f"zeta{k}"}:
                # Pure log-scale shift of the hazard: Lambda rescales and
                # the log hazard at T shifts, per subject.
                shift = np.zeros(self.n_subjects)
                ev0 = base["per_event"][k]
                dz = float(ev["baseline"][-1] - ev0["baseline"][-1])
                shift += dz
                if ev["gamma"].size:
                    shift += self.W[k] @ (ev["gamma"] - ev0["gamma"])
                scale = np.exp(shift)
                lam0 = base["lams"][k]
                lam = lam0 * (scale[:, None] if lam0.ndim == 2 else scale)
                rows = self.event_rows[k]
                lhT0 = base["lhTs"][k]
                lhT = lhT0 + (
                    shift[rows][:, None] if lhT0.ndim == 2 else shift[rows]
                )
                if self.use_entry:
                    lam00 = base["entry_lams"][k]
                    e_lam = lam00 * (scale[:, None] if lam00.ndim == 2 else scale)
                else:
                    e_lam = None
                sd = base["sds"][k]
            else:
                # Recompute the event; reuse the node SD cells when nothing
                # they depend on (mu, tau rows of L, the Weibull shape) moved,
                # else look them up by the bytes of those coordinates.
                cached_sd = None
                want_sd = base is None
                store_sd_key = None
                if base is not None and self._sd_idx[k] is not None:
                    if not (ev_chg & {"mu", "chol_tau", f"kappa{k}"}):
                        cached_sd = base["sds"][k]
                    else:
                        sd_key = theta[self._sd_idx[k]].tobytes()
                        cached_sd = self._memo_sd[k].get(sd_key)
                        if cached_sd is None:
                            n_sd = sum(
                                1 for i in changed if i in self._sd_idx_set[k]
                            )
                            if n_sd == 1 and self._memo_sd_bytes < _SD_MEMO_CAP:
                                want_sd = True
                                store_sd_key = sd_key
                lam, sd = self._event_parts(
                    "event", k, beta, mu, ev, b, tau, cached_sd=cached_sd,
                    want_sd=want_sd,
                )
                if store_sd_key is not None and sd is not None:
                    self._memo_sd[k][store_sd_key] = sd
                    self._memo_sd_bytes += sd.nbytes
                lhT = self._event_loghaz_at_T(k, beta, mu, ev, b, tau)
                if self.use_entry:
                    e_lam, _ = self._event_parts(
                        "entry", k, beta, mu, ev, b, tau, want_sd=False
                    )
                else:
                    e_lam = None

            lams.append(lam)
            lhTs.append(lhT)
            entry_lams.append(e_lam)
            sds.append(sd)
            if store:
                self._memo_ev[k][key_ev] = (lam, lhT, e_lam)

        value, li = self._combine(long_cond, lams, lhTs, entry_lams)
        parts = {
            "theta": np.array(theta, dtype=float),
            "long_cond": long_cond,
            "lams": lams,
            "lhTs": lhTs,
            "entry_lams": entry_lams,
            "sds": sds,
            "per_event": per_event,
            "li": li,
        }
        return value, parts

    def loglik(self, theta) -> float:
        """Total log-likelihood, evaluated from scratch."""
        value, _ = self._evaluate(np.asarray(theta, dtype=float))
        return value

    def set_base(self, theta) -> float:
        """Evaluate and cache block intermediates for probe evaluations."""
        self._kappa_cache.clear()
        self._memo_long.clear()
        for m in self._memo_ev:
            m.clear()
        for m in self._memo_sd:
            m.clear()
        self._memo_sd_bytes = 0
        value, parts = self._evaluate(np.asarray(theta, dtype=float))
        self._base = parts
        return value

    def loglik_from_base(self, theta) -> float:
        """Evaluate a probe near the cached base, reusing unchanged blocks."""
        if self._base is None:
            return self.loglik(theta)
        value, _ = self._evaluate(np.asarray(theta, dtype=float), base=self._base)
        return value

    def per_subject(self, theta) -> np.ndarray:
        """Subject-level marginal log-likelihood contributions."""
        _, parts = self._evaluate(np.asarray(theta, dtype=float))
        return parts["li"]
