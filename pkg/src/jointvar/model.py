"""Model specification, data containers, and the flat parameter layout.

The model couples a longitudinal marker with subject-specific residual
variability to cause-specific hazards of up to two competing events:

* marker mean:      E[Y_ij | b_i] = X_ij' beta + Z_ij' b_i
* residual scale:   log sd(eps_ij) = O_ij' mu + M_ij' tau_i
* hazards:          lambda_ik(t) = lambda_0k(t) exp(W_i' gamma_k
                        + alpha_1k * value + alpha_2k * slope
                        + alpha_sk * sd)

The joint random effects (b_i, tau_i) are Gaussian with covariance
Sigma = L L' where L is an unconstrained lower-triangular factor.  All
estimation happens on a flat parameter vector whose layout is defined
here; every other module goes through :func:`flatten` / :func:`unflatten`.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from enum import Enum
from functools import lru_cache
from typing import Mapping, Sequence

import numpy as np

from .errors import InputError, InternalError

# Names with built-in time semantics inside design rows.  Anything else
# is looked up in the subject's covariate map (time-fixed by contract).
_TIME_TERMS = {"intercept", "time", "time2"}


class BaselineFamily(Enum):
    EXPONENTIAL = "exponential"
    WEIBULL = "weibull"
    BSPLINE = "bspline"


@dataclass(frozen=True)
class BaselineSpec:
    """Baseline hazard family for one event, plus spline bookkeeping.

    For ``BSPLINE`` the knot locations may be fixed up front or left
    ``None`` to be placed from the observed event times at fit time.
    ``interior_knots`` and ``boundary`` travel with fitted results so a
    stored model can be re-evaluated without the training data.
    """

    family: BaselineFamily
    n_interior_knots: int = 0
    interior_knots: tuple[float, ...] | None = None
    boundary: tuple[float, float] | None = None

    def __post_init__(self):
        if self.family is BaselineFamily.BSPLINE:
            if self.n_interior_knots < 0:
                raise InputError("number of interior knots must be >= 0")
            if self.interior_knots is not None:
                if len(self.interior_knots) != self.n_interior_knots:
                    raise InputError(
                        "interior_knots length does not match n_interior_knots"
                    )
        elif self.n_interior_knots:
            raise InputError("interior knots only apply to B-spline baselines")

    @property
    def n_params(self) -> int:
        if self.family is BaselineFamily.EXPONENTIAL:
            return 1
        if self.family is BaselineFamily.WEIBULL:
            return 2
        return self.n_interior_knots + 4

    def param_names(self) -> list[str]:
        if self.family is BaselineFamily.EXPONENTIAL:
            return ["zeta"]
        if self.family is BaselineFamily.WEIBULL:
            return ["sqrt_kappa", "zeta"]
        return [f"eta{q}" for q in range(self.n_params)]


@dataclass(frozen=True)
class AssociationFlags:
    """Which marker summaries enter one event's hazard."""

    use_current_value: bool = False
    use_current_slope: bool = False
    use_current_sd: bool = False

    def labels(self) -> list[str]:
        out = []
        if self.use_current_value:
            out.append("value")
        if self.use_current_slope:
            out.append("slope")
        if self.use_current_sd:
            out.append("sd")
        return out

    @property
    def count(self) -> int:
        return len(self.labels())


@dataclass(frozen=True)
class ModelSpec:
    """Declarative description of designs, baselines, and associations.

    Covariate lists hold column names in design order.  ``intercept``,
    ``time`` and ``time2`` are evaluated from the measurement time; all
    other names are read from the subject covariate map.  Random terms
    must be subsets of the corresponding fixed lists (hierarchy).

    ``independent_variance_effects`` imposes a structural zero block on
    the Cholesky factor so that the location effects b_i and the scale
    effects tau_i are independent; the masked entries are excluded from
    the flat parameter vector.
    """

    fixed_marker_covariates: tuple[str, ...]
    random_marker_terms: tuple[str, ...]
    fixed_variance_covariates: tuple[str, ...]
    random_variance_terms: tuple[str, ...]
    survival_covariates_per_event: tuple[tuple[str, ...], ...]
    association_flags_per_event: tuple[AssociationFlags, ...]
    baseline_family_per_event: tuple[BaselineSpec, ...]
    n_events: int = 2
    delayed_entry: bool = False
    independent_variance_effects: bool = False

    def __post_init__(self):
        # Normalize any lists the caller passed in.
        for name in (
            "fixed_marker_covariates",
            "random_marker_terms",
            "fixed_variance_covariates",
            "random_variance_terms",
        ):
            object.__setattr__(self, name, tuple(getattr(self, name)))
        object.__setattr__(
            self,
            "survival_covariates_per_event",
            tuple(tuple(w) for w in self.survival_covariates_per_event),
        )
        object.__setattr__(
            self,
            "association_flags_per_event",
            tuple(self.association_flags_per_event),
        )
        object.__setattr__(
            self, "baseline_family_per_event", tuple(self.baseline_family_per_event)
        )
        if self.n_events not in (1, 2):
            raise InputError(f"n_events must be 1 or 2, got {self.n_events}")
        if not set(self.random_marker_terms) <= set(self.fixed_marker_covariates):
            raise InputError("random marker terms must be a subset of the fixed ones")
        if not set(self.random_variance_terms) <= set(self.fixed_variance_covariates):
            raise InputError(
                "random variance terms must be a subset of the fixed ones"
            )
        for tpl, label in (
            (self.survival_covariates_per_event, "survival covariates"),
            (self.association_flags_per_event, "association flags"),
            (self.baseline_family_per_event, "baseline families"),
        ):
            if len(tpl) != self.n_events:
                raise InputError(f"{label} must list one entry per event")
        if "intercept" not in self.fixed_marker_covariates:
            raise InputError("marker mean design must include an intercept")

    @property
    def dim_b(self) -> int:
        return len(self.random_marker_terms)

    @property
    def dim_tau(self) -> int:
        return len(self.random_variance_terms)

    @property
    def dim_effects(self) -> int:
        return self.dim_b + self.dim_tau

    def with_knots(self, k: int, interior: Sequence[float],
                   boundary: tuple[float, float]) -> "ModelSpec":
        """Return a copy with event k's spline knots pinned down."""
        base = self.baseline_family_per_event[k]
        new = BaselineSpec(
            family=base.family,
            n_interior_knots=len(tuple(interior)),
            interior_knots=tuple(float(v) for v in interior),
            boundary=(float(boundary[0]), float(boundary[1])),
        )
        fams = list(self.baseline_family_per_event)
        fams[k] = new
        return ModelSpec(
            fixed_marker_covariates=self.fixed_marker_covariates,
            random_marker_terms=self.random_marker_terms,
            fixed_variance_covariates=self.fixed_variance_covariates,
            random_variance_terms=self.random_variance_terms,
            survival_covariates_per_event=self.survival_covariates_per_event,
            association_flags_per_event=self.association_flags_per_event,
            baseline_family_per_event=tuple(fams),
            n_events=self.n_events,
            delayed_entry=self.delayed_entry,
            independent_variance_effects=self.independent_variance_effects,
        )


@dataclass(frozen=True)
class SubjectData:
    """One subject: marker measurements plus one survival record.

    Invariants checked on construction: strictly increasing measurement
    times, no measurement after the event time, entry before event, and
    an event indicator in {0, 1, 2}.
    """

    id: str
    times: np.ndarray
    values: np.ndarray
    event_time: float
    event_indicator: int
    covariates: Mapping[str, float] = field(default_factory=dict)
    entry_time: float = 0.0

    def __post_init__(self):
        times = np.asarray(self.times, dtype=float)
        values = np.asarray(self.values, dtype=float)
        times.setflags(write=False)
        values.setflags(write=False)
        object.__setattr__(self, "times", times)
        object.__setattr__(self, "values", values)
        object.__setattr__(self, "covariates", dict(self.covariates))
        object.__setattr__(self, "event_time", float(self.event_time))
        object.__setattr__(self, "entry_time", float(self.entry_time))
        if times.ndim != 1 or times.shape != values.shape:
            raise InputError(
                f"subject {self.id}: times and values must be equal-length vectors"
            )
        if times.size and np.any(np.diff(times) <= 0):
            raise InputError(f"subject {self.id}: times must be strictly increasing")
        if times.size and times[-1] > self.event_time:
            raise InputError(
                f"subject {self.id}: measurement after the event time"
            )
        if self.entry_time > self.event_time:
            raise InputError(f"subject {self.id}: entry time after event time")
        if self.entry_time < 0:
            raise InputError(f"subject {self.id}: negative entry time")
        if self.event_indicator not in (0, 1, 2):
            raise InputError(
                f"subject {self.id}: event indicator must be 0, 1 or 2"
            )

    @property
    def n_obs(self) -> int:
        return int(self.times.size)


@dataclass(frozen=True)
class Dataset:
    """Immutable collection of subjects with unique ids."""

    subjects: tuple[SubjectData, ...]

    def __post_init__(self):
        object.__setattr__(self, "subjects", tuple(self.subjects))
        ids = [s.id for s in self.subjects]
        if len(set(ids)) != len(ids):
            dup = sorted({i for i in ids if ids.count(i) > 1})
            raise InputError(f"duplicate subject ids: {dup[:5]}")

    def __iter__(self):
        return iter(self.subjects)

    def __len__(self):
        return len(self.subjects)

    def __getitem__(self, i):
        return self.subjects[i]


@dataclass(frozen=True)
class ParameterVector:
    """Structured view of the full parameter set.

    ``chol_lower`` is the complete d x d lower-triangular factor,
    including any structurally masked zeros.  ``alpha`` holds only the
    coefficients whose association flags are set, in (value, slope, sd)
    order.
    """

    beta: np.ndarray
    mu: np.ndarray
    chol_lower: np.ndarray
    gamma: tuple[np.ndarray, ...]
    alpha: tuple[np.ndarray, ...]
    baseline: tuple[np.ndarray, ...]

    def __post_init__(self):
        def lock(a):
            a = np.asarray(a, dtype=float)
            a.setflags(write=False)
            return a

        object.__setattr__(self, "beta", lock(self.beta))
        object.__setattr__(self, "mu", lock(self.mu))
        object.__setattr__(self, "chol_lower", lock(self.chol_lower))
        object.__setattr__(self, "gamma", tuple(lock(g) for g in self.gamma))
        object.__setattr__(self, "alpha", tuple(lock(a) for a in self.alpha))
        object.__setattr__(self, "baseline", tuple(lock(b) for b in self.baseline))

    def __eq__(self, other):
        if not isinstance(other, ParameterVector):
            return NotImplemented
        return (
            np.array_equal(self.beta, other.beta)
            and np.array_equal(self.mu, other.mu)
            and np.array_equal(self.chol_lower, other.chol_lower)
            and len(self.gamma) == len(other.gamma)
            and all(np.array_equal(a, b) for a, b in zip(self.gamma, other.gamma))
            and len(self.alpha) == len(other.alpha)
            and all(np.array_equal(a, b) for a, b in zip(self.alpha, other.alpha))
            and len(self.baseline) == len(other.baseline)
            and all(
                np.array_equal(a, b) for a, b in zip(self.baseline, other.baseline)
            )
        )

    __hash__ = None


# --------------------------------------------------------------------------
# Design row evaluation
# --------------------------------------------------------------------------

def _term_values(name: str, subject: SubjectData, t: np.ndarray) -> np.ndarray:
    if name == "intercept":
        return np.ones_like(t)
    if name == "time":
        return np.asarray(t, dtype=float)
    if name == "time2":
        return np.asarray(t, dtype=float) ** 2
    try:
        return np.full_like(t, float(subject.covariates[name]))
    except KeyError:
        raise InputError(
            f"subject {subject.id}: covariate '{name}' missing"
        ) from None


def _term_slopes(name: str, subject: SubjectData, t: np.ndarray) -> np.ndarray:
    # Time derivative of each design term; static covariates have slope 0.
    if name == "time":
        return np.ones_like(t)
    if name == "time2":
        return 2.0 * np.asarray(t, dtype=float)
    return np.zeros_like(t)


def design_matrix(spec: ModelSpec, subject: SubjectData, times,
                  which: str) -> np.ndarray:
    """Stack design rows for `times`; `which` in {X, Z, O, M}."""
    blocks = {
        "X": spec.fixed_marker_covariates,
        "Z": spec.random_marker_terms,
        "O": spec.fixed_variance_covariates,
        "M": spec.random_variance_terms,
    }
    if which not in blocks:
        raise InputError(f"unknown design block {which!r}, expected X/Z/O/M")
    names = blocks[which]
    t = np.atleast_1d(np.asarray(times, dtype=float))
    if not names:
        return np.zeros((t.size, 0))
    return np.column_stack([_term_values(n, subject, t) for n in names])


def design_slope_matrix(spec: ModelSpec, subject: SubjectData, times,
                        which: str) -> np.ndarray:
    """Time derivative of :func:`design_matrix` (X or Z only)."""
    blocks = {
        "X": spec.fixed_marker_covariates,
        "Z": spec.random_marker_terms,
    }
    if which not in blocks:
        raise InputError(f"unknown design block {which!r}, expected X or Z")
    names = blocks[which]
    t = np.atleast_1d(np.asarray(times, dtype=float))
    if not names:
        return np.zeros((t.size, 0))
    return np.column_stack([_term_slopes(n, subject, t) for n in names])


def survival_design(spec: ModelSpec, subject: SubjectData, k: int) -> np.ndarray:
    """W row for event k (time-fixed covariates only)."""
    names = spec.survival_covariates_per_event[k]
    out = np.empty(len(names))
    for i, n in enumerate(names):
        if n == "intercept":
            out[i] = 1.0
        else:
            try:
                out[i] = float(subject.covariates[n])
            except KeyError:
                raise InputError(
                    f"subject {subject.id}: covariate '{n}' missing"
                ) from None
    return out


def build_design(spec: ModelSpec, subject: SubjectData, t: float):
    """Assemble the (X, Z, O, M, W) rows at a single time t.

    W is a tuple with one row per event.  Rows follow the column order
    declared in the spec; time-dependent entries are evaluated at t.
    """
    tt = np.array([float(t)])
    X = design_matrix(spec, subject, tt, "X")[0]
    Z = design_matrix(spec, subject, tt, "Z")[0]
    O = design_matrix(spec, subject, tt, "O")[0]
    M = design_matrix(spec, subject, tt, "M")[0]
    W = tuple(survival_design(spec, subject, k) for k in range(spec.n_events))
    return X, Z, O, M, W


# --------------------------------------------------------------------------
# Flat parameter layout
# --------------------------------------------------------------------------

class ParameterLayout:
    """Fixed ordering of the flat vector:

    beta, mu, lower-triangular Cholesky entries (row-major, masked
    entries excluded), then per event {gamma, alpha, baseline}.
    """

    def __init__(self, spec: ModelSpec):
        self.spec = spec
        d = spec.dim_effects
        self.chol_pairs: list[tuple[int, int]] = []
        for i in range(d):
            for j in range(i + 1):
                if (
                    spec.independent_variance_effects
                    and i >= spec.dim_b
                    and j < spec.dim_b
                ):
                    continue  # structural zero: tau block independent of b block
                self.chol_pairs.append((i, j))

        names: list[str] = []
        names += [f"beta[{c}]" for c in spec.fixed_marker_covariates]
        names += [f"mu[{c}]" for c in spec.fixed_variance_covariates]
        names += [f"chol[{i},{j}]" for i, j in self.chol_pairs]
        self.beta_slice = slice(0, len(spec.fixed_marker_covariates))
        self.mu_slice = slice(
            self.beta_slice.stop,
            self.beta_slice.stop + len(spec.fixed_variance_covariates),
        )
        self.chol_slice = slice(
            self.mu_slice.stop, self.mu_slice.stop + len(self.chol_pairs)
        )
        pos = self.chol_slice.stop
        self.gamma_slices: list[slice] = []
        self.alpha_slices: list[slice] = []
        self.baseline_slices: list[slice] = []
        for k in range(spec.n_events):
            ng = len(spec.survival_covariates_per_event[k])
            self.gamma_slices.append(slice(pos, pos + ng))
            names += [
                f"gamma{k + 1}[{c}]" for c in spec.survival_covariates_per_event[k]
            ]
            pos += ng
            labels = spec.association_flags_per_event[k].labels()
            self.alpha_slices.append(slice(pos, pos + len(labels)))
            names += [f"alpha{k + 1}[{lab}]" for lab in labels]
            pos += len(labels)
            nb = spec.baseline_family_per_event[k].n_params
            self.baseline_slices.append(slice(pos, pos + nb))
            names += [
                f"baseline{k + 1}[{nm}]"
                for nm in spec.baseline_family_per_event[k].param_names()
            ]
            pos += nb
        self.size = pos
        self.names = names

    def flatten(self, params: ParameterVector) -> np.ndarray:
        spec = self.spec
        out = np.empty(self.size)
        if params.beta.shape != (len(spec.fixed_marker_covariates),):
            raise InternalError("beta length does not match the spec")
        if params.mu.shape != (len(spec.fixed_variance_covariates),):
            raise InternalError("mu length does not match the spec")
        d = spec.dim_effects
        if params.chol_lower.shape != (d, d):
            raise InternalError("chol_lower shape does not match the spec")
        out[self.beta_slice] = params.beta
        out[self.mu_slice] = params.mu
        out[self.chol_slice] = [params.chol_lower[i, j] for i, j in self.chol_pairs]
        for k in range(spec.n_events):
            g = np.asarray(params.gamma[k], dtype=float)
            a = np.asarray(params.alpha[k], dtype=float)
            b = np.asarray(params.baseline[k], dtype=float)
            for seg, sl, label in (
                (g, self.gamma_slices[k], "gamma"),
                (a, self.alpha_slices[k], "alpha"),
                (b, self.baseline_slices[k], "baseline"),
            ):
                if seg.shape != (sl.stop - sl.start,):
                    raise InternalError(
                        f"{label} length for event {k + 1} does not match the spec"
                    )
                out[sl] = seg
        return out

    def unflatten(self, vec: np.ndarray) -> ParameterVector:
        vec = np.asarray(vec, dtype=float)
        if vec.shape != (self.size,):
            raise InternalError(
                f"flat vector has length {vec.shape}, expected {self.size}"
            )
        spec = self.spec
        d = spec.dim_effects
        chol = np.zeros((d, d))
        for val, (i, j) in zip(vec[self.chol_slice], self.chol_pairs):
            chol[i, j] = val
        return ParameterVector(
            beta=vec[self.beta_slice].copy(),
            mu=vec[self.mu_slice].copy(),
            chol_lower=chol,
            gamma=tuple(
                vec[self.gamma_slices[k]].copy() for k in range(spec.n_events)
            ),
            alpha=tuple(
                vec[self.alpha_slices[k]].copy() for k in range(spec.n_events)
            ),
            baseline=tuple(
                vec[self.baseline_slices[k]].copy() for k in range(spec.n_events)
            ),
        )


@lru_cache(maxsize=64)
def get_layout(spec: ModelSpec) -> ParameterLayout:
    return ParameterLayout(spec)


def flatten(params: ParameterVector, spec: ModelSpec) -> np.ndarray:
    return get_layout(spec).flatten(params)


def unflatten(vec: np.ndarray, spec: ModelSpec) -> ParameterVector:
    return get_layout(spec).unflatten(vec)


def covariance_from_cholesky(chol_lower: np.ndarray) -> np.ndarray:
    """Sigma = L L', returned exactly symmetric."""
    L = np.asarray(chol_lower, dtype=float)
    S = L @ L.T
    return (S + S.T) / 2.0
