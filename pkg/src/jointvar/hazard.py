"""Baseline hazards, cause-specific hazards, and cumulative hazards.

Cumulative hazards use a fixed 15-point Gauss-Kronrod rule.  For the
Exponential and Weibull families the integral is taken after the change
of variable v = t^kappa, in which the baseline contribution is constant;
one 15-point panel then integrates the baseline part exactly for any
shape, and the association factor is evaluated at the mapped nodes.  A
B-spline log-baseline is piecewise cubic, so the rule is applied per
knot span; both choices keep a single shared code path for estimation,
simulation, and prediction.
"""

from __future__ import annotations

import warnings
from dataclasses import dataclass

import numpy as np
from scipy.interpolate import BSpline

from .errors import DomainError, InputError
from .model import (
    BaselineFamily,
    BaselineSpec,
    ModelSpec,
    ParameterVector,
    SubjectData,
    design_matrix,
    design_slope_matrix,
    survival_design,
)


class ExtrapolationWarning(UserWarning):
    """A spline baseline was evaluated beyond its boundary knots."""


# 15-point Kronrod nodes and weights on [-1, 1] (QUADPACK constants).
_P = np.array([
    0.991455371120813, 0.949107912342759, 0.864864423359769,
    0.741531185599394, 0.586087235467691, 0.405845151377397,
    0.207784955007898,
])
_W = np.array([
    0.022935322010529, 0.063092092629979, 0.104790010322250,
    0.140653259715525, 0.169004726639267, 0.190350578064785,
    0.204432940075298,
])
_GK_NODES = np.concatenate([-_P, [0.0], _P[::-1]])
_GK_WEIGHTS = np.concatenate([_W, [0.209482141084728], _W[::-1]])


@dataclass(frozen=True)
class GK15Rule:
    nodes: np.ndarray
    weights: np.ndarray

    def __post_init__(self):
        n = np.asarray(self.nodes, dtype=float)
        w = np.asarray(self.weights, dtype=float)
        n.setflags(write=False)
        w.setflags(write=False)
        object.__setattr__(self, "nodes", n)
        object.__setattr__(self, "weights", w)


GK15 = GK15Rule(_GK_NODES, _GK_WEIGHTS)


@dataclass(frozen=True)
class KnotVector:
    """Interior knots plus boundary pair for a clamped cubic basis."""

    interior_knots: tuple[float, ...]
    boundary_knots: tuple[float, float]

    def __post_init__(self):
        interior = tuple(float(v) for v in self.interior_knots)
        lo, hi = (float(self.boundary_knots[0]), float(self.boundary_knots[1]))
        object.__setattr__(self, "interior_knots", interior)
        object.__setattr__(self, "boundary_knots", (lo, hi))
        if lo >= hi:
            raise InputError("boundary knots must satisfy t_min < t_max")
        seq = (lo,) + interior + (hi,)
        if any(a >= b for a, b in zip(seq, seq[1:])):
            raise InputError("knots must be strictly increasing inside the boundary")

    @property
    def full(self) -> np.ndarray:
        lo, hi = self.boundary_knots
        return np.concatenate([[lo] * 4, self.interior_knots, [hi] * 4])

    @property
    def n_basis(self) -> int:
        return len(self.interior_knots) + 4


def knots_from_baseline(bspec: BaselineSpec) -> KnotVector:
    if bspec.interior_knots is None or bspec.boundary is None:
        raise InputError("spline knots have not been placed for this baseline")
    return KnotVector(bspec.interior_knots, bspec.boundary)


def _basis_matrix(t: np.ndarray, knots: KnotVector) -> np.ndarray:
    lo, hi = knots.boundary_knots
    t = np.asarray(t, dtype=float)
    if np.any(t < lo) or np.any(t > hi):
        warnings.warn(
            "time outside the spline boundary knots; clamping to the boundary",
            ExtrapolationWarning,
            stacklevel=3,
        )
        t = np.clip(t, lo, hi)
    return BSpline.design_matrix(t.ravel(), knots.full, 3).toarray().reshape(
        t.shape + (knots.n_basis,)
    )


def bspline_basis(t: float, knots: KnotVector) -> np.ndarray:
    """Clamped cubic basis values at t; nonnegative and summing to 1."""
    return _basis_matrix(np.array([float(t)]), knots)[0]


def place_knots(event_times, Q: int, t_max: float | None = None) -> KnotVector:
    """Interior knots at the j/(Q+1) empirical quantiles of the event times.

    Boundary is (0, t_max); when t_max is not given, the largest event
    time is used.  Requires at least Q+2 distinct event times.
    """
    ev = np.sort(np.asarray(event_times, dtype=float))
    if np.unique(ev).size < Q + 2:
        raise InputError(
            f"need at least {Q + 2} distinct event times to place {Q} knots"
        )
    hi = float(ev[-1]) if t_max is None else float(t_max)
    if Q == 0:
        return KnotVector((), (0.0, hi))
    probs = np.arange(1, Q + 1) / (Q + 1)
    interior = np.quantile(ev, probs)  # linear-interpolation quantile
    if np.unique(interior).size < Q or interior[0] <= 0 or interior[-1] >= hi:
        raise InputError("event times too concentrated to place distinct knots")
    return KnotVector(tuple(interior), (0.0, hi))


# --------------------------------------------------------------------------
# Baseline and full hazards
# --------------------------------------------------------------------------

def _weibull_shape(bparams: np.ndarray) -> float:
    kappa = float(bparams[0]) ** 2
    if kappa <= 0.0:
        raise DomainError("Weibull shape is zero; sqrt-shape parameter must be nonzero")
    return kappa


def baseline_hazard(bspec: BaselineSpec, bparams: np.ndarray, t):
    """lambda_0(t) for one event; strictly positive on its domain."""
    t_arr = np.asarray(t, dtype=float)
    scalar = t_arr.ndim == 0
    t_arr = np.atleast_1d(t_arr)
    if bspec.family is BaselineFamily.EXPONENTIAL:
        out = np.full_like(t_arr, np.exp(float(bparams[0])))
    elif bspec.family is BaselineFamily.WEIBULL:
        kappa = _weibull_shape(bparams)
        if kappa < 1.0 and np.any(t_arr <= 0.0):
            raise DomainError("Weibull hazard diverges at t=0 for shape < 1")
        if np.any(t_arr < 0.0):
            raise DomainError("hazard requested at negative time")
        out = kappa * t_arr ** (kappa - 1.0) * np.exp(float(bparams[1]))
    else:
        knots = knots_from_baseline(bspec)
        out = np.exp(_basis_matrix(t_arr, knots) @ np.asarray(bparams, dtype=float))
    return float(out[0]) if scalar else out


def association_exponent(spec: ModelSpec, params: ParameterVector,
                         subject: SubjectData, b: np.ndarray, tau: np.ndarray,
                         t, k: int) -> np.ndarray:
    """Log relative risk at times t: W'gamma plus the flagged marker terms."""
    t = np.atleast_1d(np.asarray(t, dtype=float))
    flags = spec.association_flags_per_event[k]
    W = survival_design(spec, subject, k)
    out = np.full(t.shape, float(W @ params.gamma[k]) if W.size else 0.0)
    a = iter(params.alpha[k])
    if flags.use_current_value:
        X = design_matrix(spec, subject, t, "X")
        Z = design_matrix(spec, subject, t, "Z")
        out += next(a) * (X @ params.beta + Z @ np.asarray(b, dtype=float))
    if flags.use_current_slope:
        dX = design_slope_matrix(spec, subject, t, "X")
        dZ = design_slope_matrix(spec, subject, t, "Z")
        out += next(a) * (dX @ params.beta + dZ @ np.asarray(b, dtype=float))
    if flags.use_current_sd:
        O = design_matrix(spec, subject, t, "O")
        M = design_matrix(spec, subject, t, "M")
        out += next(a) * np.exp(O @ params.mu + M @ np.asarray(tau, dtype=float))
    return out


def hazard(spec: ModelSpec, params: ParameterVector, subject: SubjectData,
           b: np.ndarray, tau: np.ndarray, t, k: int):
    """Cause-specific hazard lambda_ik(t) for realized effects (b, tau)."""
    t_arr = np.asarray(t, dtype=float)
    scalar = t_arr.ndim == 0
    base = baseline_hazard(
        spec.baseline_family_per_event[k], params.baseline[k], np.atleast_1d(t_arr)
    )
    out = base * np.exp(
        association_exponent(spec, params, subject, b, tau, t_arr, k)
    )
    return float(out[0]) if scalar else out


# --------------------------------------------------------------------------
# Quadrature schemes for cumulative hazards
# --------------------------------------------------------------------------

@dataclass(frozen=True)
class QuadScheme:
    """Nodes and log-weights such that for one subject

        Lambda = sum_j exp(log_jac_weight_j + log_baseline_j + A(node_j))

    where A is the association exponent.  Padded entries carry a
    log-weight of -inf and contribute nothing.
    """

    nodes: np.ndarray          # (N, J) node times
    log_jac_weight: np.ndarray  # (N, J) log of quadrature weight x jacobian
    basis: np.ndarray | None    # (N, J, n_basis) spline basis, else None


def quad_scheme(bspec: BaselineSpec, bparams: np.ndarray,
                t_from: np.ndarray, t_to: np.ndarray) -> QuadScheme:
    """Build the node/weight scheme for integrating hazards on [from, to]."""
    t_from = np.atleast_1d(np.asarray(t_from, dtype=float))
    t_to = np.atleast_1d(np.asarray(t_to, dtype=float))
    if np.any(t_from < 0.0) or np.any(t_to < t_from):
        raise InputError("cumulative hazard needs 0 <= from <= to")

    y = GK15.nodes
    w = GK15.weights
    if bspec.family is BaselineFamily.BSPLINE:
        knots = knots_from_baseline(bspec)
        cuts = np.asarray(knots.interior_knots, dtype=float)
        panels = []
        for lo, hi in zip(t_from, t_to):
            edges = [lo] + [c for c in cuts if lo < c < hi] + [hi]
            panels.append(edges)
        max_p = max(len(e) - 1 for e in panels)
        n = t_from.size
        nodes = np.tile(t_to[:, None], (1, 15 * max_p))
        ljw = np.full((n, 15 * max_p), -np.inf)
        for i, edges in enumerate(panels):
            for p in range(len(edges) - 1):
                half = (edges[p + 1] - edges[p]) / 2.0
                mid = (edges[p + 1] + edges[p]) / 2.0
                sl = slice(15 * p, 15 * (p + 1))
                nodes[i, sl] = mid + half * y
                with np.errstate(divide="ignore"):
                    ljw[i, sl] = np.log(w) + np.log(half)
        basis = _basis_matrix(nodes, knots)
        return QuadScheme(nodes=nodes, log_jac_weight=ljw, basis=basis)

    if bspec.family is BaselineFamily.WEIBULL:
        kappa = _weibull_shape(bparams)
        v_lo = t_from ** kappa
        v_hi = t_to ** kappa
    else:
        v_lo, v_hi = t_from, t_to
        kappa = 1.0
    half = (v_hi - v_lo) / 2.0   # (N,)
    mid = (v_hi + v_lo) / 2.0
    v = mid[:, None] + half[:, None] * y[None, :]
    nodes = v ** (1.0 / kappa) if kappa != 1.0 else v
    with np.errstate(divide="ignore"):
        ljw = np.log(w)[None, :] + np.log(half)[:, None]
    return QuadScheme(nodes=nodes, log_jac_weight=ljw, basis=None)


def baseline_log_at_nodes(bspec: BaselineSpec, bparams: np.ndarray,
                          scheme: QuadScheme) -> np.ndarray:
    """log lambda_0 contribution at the scheme nodes, in the scheme's scale.

    For Exponential/Weibull the integration variable already absorbs the
    time-power factor, so the contribution is the constant zeta.
    """
    if bspec.family is BaselineFamily.BSPLINE:
        return scheme.basis @ np.asarray(bparams, dtype=float)
    zeta = float(bparams[-1])
    return np.full(scheme.nodes.shape, zeta)


def cumulative_hazard(spec: ModelSpec, params: ParameterVector,
                      subject: SubjectData, b: np.ndarray, tau: np.ndarray,
                      t_from: float, t_to: float, k: int) -> float:
    """Lambda_ik over [t_from, t_to] by the 15-point Kronrod scheme."""
    if t_from == t_to:
        return 0.0
    bspec = spec.baseline_family_per_event[k]
    scheme = quad_scheme(
        bspec, params.baseline[k], np.array([t_from]), np.array([t_to])
    )
    logbase = baseline_log_at_nodes(bspec, params.baseline[k], scheme)
    A = association_exponent(spec, params, subject, b, tau, scheme.nodes[0], k)
    with np.errstate(over="ignore"):
        return float(np.sum(np.exp(scheme.log_jac_weight[0] + logbase[0] + A)))
