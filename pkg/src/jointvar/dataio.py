"""File formats and run configuration.

Data travel as two UTF-8 CSV files sharing a subject id column: a
longitudinal file (id, time, value) and a survival file (id, optional
entry_time, event_time, status, covariates).  Fit results are stored as
versioned JSON; curves and replicate summaries as small CSVs.  A run
configuration file (JSON, or YAML by extension) collects the model
specification, estimation settings, and per-command blocks.
"""

from __future__ import annotations

import csv
import dataclasses
import json
from dataclasses import dataclass, field

import numpy as np
import yaml

from .errors import InputError
from .estimation import ConvergenceCriteria, ConvergenceStatus, FitResult
from .model import (
    AssociationFlags,
    BaselineFamily,
    BaselineSpec,
    Dataset,
    ModelSpec,
    SubjectData,
    covariance_from_cholesky,
    get_layout,
)

FIT_FORMAT = "jointvar-fit"
FIT_FORMAT_VERSION = 1

REPLICATE_COLUMNS = ("parameter", "true", "mean", "empirical_se",
                     "mean_asymptotic_se", "coverage")


# --------------------------------------------------------------------------
# CSV data files
# --------------------------------------------------------------------------

@dataclass(frozen=True)
class LongRecord:
    """One marker measurement row."""

    id: str
    time: float
    value: float
    covariates: dict[str, float] = field(default_factory=dict)


@dataclass(frozen=True)
class SurvRecord:
    """One subject's survival row."""

    id: str
    entry_time: float
    event_time: float
    status: int
    covariates: dict[str, float] = field(default_factory=dict)


def _float_field(raw, column, path, line):
    try:
        return float(raw)
    except (TypeError, ValueError):
        raise InputError(
            f"{path}, line {line}: column {column!r} has non-numeric "
            f"value {raw!r}"
        ) from None


def _open_reader(path, required):
    handle = open(path, encoding="utf-8", newline="")
    reader = csv.DictReader(handle)
    names = reader.fieldnames
    if names is None:
        handle.close()
        raise InputError(f"{path}: empty file, expected a CSV header")
    missing = [c for c in required if c not in names]
    if missing:
        handle.close()
        raise InputError(f"{path}: missing required columns {missing}")
    return handle, reader


def read_longitudinal(path) -> list[LongRecord]:
    """Parse marker measurements; extra columns become covariates."""
    path = str(path)
    handle, reader = _open_reader(path, ("id", "time", "value"))
    extra = [c for c in reader.fieldnames if c not in ("id", "time", "value")]
    out = []
    with handle:
        for row in reader:
            line = reader.line_num
            out.append(LongRecord(
                id=str(row["id"]),
                time=_float_field(row["time"], "time", path, line),
                value=_float_field(row["value"], "value", path, line),
                covariates={c: _float_field(row[c], c, path, line)
                            for c in extra},
            ))
    return out


def read_survival(path) -> list[SurvRecord]:
    """Parse survival rows; status must be 0 (censored), 1, or 2."""
    path = str(path)
    handle, reader = _open_reader(path, ("id", "event_time", "status"))
    known = ("id", "entry_time", "event_time", "status")
    extra = [c for c in reader.fieldnames if c not in known]
    has_entry = "entry_time" in reader.fieldnames
    out = []
    with handle:
        for row in reader:
            line = reader.line_num
            status_raw = _float_field(row["status"], "status", path, line)
            status = int(status_raw)
            if status != status_raw or status not in (0, 1, 2):
                raise InputError(
                    f"{path}, line {line}: status must be 0, 1, or 2, "
                    f"got {row['status']!r}"
                )
            entry = (_float_field(row["entry_time"], "entry_time", path, line)
                     if has_entry else 0.0)
            out.append(SurvRecord(
                id=str(row["id"]),
                entry_time=entry,
                event_time=_float_field(row["event_time"], "event_time",
                                        path, line),
                status=status,
                covariates={c: _float_field(row[c], c, path, line)
                            for c in extra},
            ))
    return out


def build_dataset(long_records, surv_records) -> Dataset:
    """Join measurement and survival records into subjects.

    Survival-file order is preserved.  Covariates appearing in both
    files must agree; longitudinal covariates must be constant within a
    subject.
    """
    by_id: dict[str, SurvRecord] = {}
    for rec in surv_records:
        if rec.id in by_id:
            raise InputError(f"duplicate survival row for subject {rec.id}")
        by_id[rec.id] = rec

    rows: dict[str, list[LongRecord]] = {sid: [] for sid in by_id}
    for rec in long_records:
        if rec.id not in by_id:
            raise InputError(
                f"longitudinal rows for unknown subject {rec.id}; every id "
                f"needs a survival row"
            )
        rows[rec.id].append(rec)

    subjects = []
    for sid, surv in by_id.items():
        covariates = dict(surv.covariates)
        for rec in rows[sid]:
            for name, value in rec.covariates.items():
                if name in covariates and covariates[name] != value:
                    raise InputError(
                        f"covariate {name!r} is inconsistent for subject {sid}"
                    )
                covariates[name] = value
        ordered = sorted(rows[sid], key=lambda r: r.time)
        subjects.append(SubjectData(
            id=sid,
            times=np.array([r.time for r in ordered], dtype=float),
            values=np.array([r.value for r in ordered], dtype=float),
            event_time=surv.event_time,
            event_indicator=surv.status,
            covariates=covariates,
            entry_time=surv.entry_time,
        ))
    return Dataset(subjects=tuple(subjects))


def load_dataset(longitudinal_path, survival_path) -> Dataset:
    return build_dataset(read_longitudinal(longitudinal_path),
                         read_survival(survival_path))


def _write_rows(path, header, rows):
    with open(path, "w", encoding="utf-8", newline="") as handle:
        writer = csv.writer(handle)
        writer.writerow(header)
        writer.writerows(rows)


def _fmt(x):
    # repr round-trips floats exactly and keeps output bytes deterministic
    return repr(float(x))


def write_longitudinal(path, dataset: Dataset) -> None:
    rows = [(s.id, _fmt(t), _fmt(v))
            for s in dataset for t, v in zip(s.times, s.values)]
    _write_rows(path, ("id", "time", "value"), rows)


def write_survival(path, dataset: Dataset) -> None:
    names = sorted({n for s in dataset for n in s.covariates})
    for s in dataset:
        lacking = [n for n in names if n not in s.covariates]
        if lacking:
            raise InputError(
                f"subject {s.id} lacks covariates {lacking}; cannot write a "
                f"rectangular file"
            )
    header = ("id", "entry_time", "event_time", "status", *names)
    rows = [(s.id, _fmt(s.entry_time), _fmt(s.event_time),
             str(s.event_indicator), *(_fmt(s.covariates[n]) for n in names))
            for s in dataset]
    _write_rows(path, header, rows)


# --------------------------------------------------------------------------
# Model specification as plain dictionaries
# --------------------------------------------------------------------------

_ASSOC_LABELS = ("value", "slope", "sd")


def _flags_from_labels(labels):
    unknown = [x for x in labels if x not in _ASSOC_LABELS]
    if unknown:
        raise InputError(
            f"unknown association labels {unknown}; valid: {_ASSOC_LABELS}"
        )
    return AssociationFlags(
        use_current_value="value" in labels,
        use_current_slope="slope" in labels,
        use_current_sd="sd" in labels,
    )


def _baseline_from_dict(d):
    if isinstance(d, str):
        d = {"family": d}
    try:
        family = BaselineFamily(d["family"])
    except (KeyError, ValueError):
        valid = [f.value for f in BaselineFamily]
        raise InputError(
            f"baseline family must be one of {valid}, got {d!r}"
        ) from None
    knots = d.get("interior_knots")
    return BaselineSpec(
        family=family,
        n_interior_knots=int(d.get(
            "n_interior_knots", len(knots) if knots is not None else 0)),
        interior_knots=tuple(knots) if knots is not None else None,
        boundary=tuple(d["boundary"]) if d.get("boundary") else None,
    )


def _baseline_to_dict(b: BaselineSpec):
    out = {"family": b.family.value}
    if b.family is BaselineFamily.BSPLINE:
        out["n_interior_knots"] = b.n_interior_knots
        if b.interior_knots is not None:
            out["interior_knots"] = list(b.interior_knots)
        if b.boundary is not None:
            out["boundary"] = list(b.boundary)
    return out


def spec_from_dict(d) -> ModelSpec:
    """Build a specification from a configuration mapping."""
    if not isinstance(d, dict):
        raise InputError("model block must be a mapping")
    known = {
        "fixed_marker_covariates", "random_marker_terms",
        "fixed_variance_covariates", "random_variance_terms",
        "survival_covariates", "associations", "baselines", "n_events",
        "delayed_entry", "independent_variance_effects",
    }
    unknown = sorted(set(d) - known)
    if unknown:
        raise InputError(f"unknown model keys {unknown}")
    n_events = int(d.get("n_events", len(d.get("baselines", (1, 1)))))
    baselines = d.get("baselines", ["weibull"] * n_events)
    assoc = d.get("associations", [[]] * n_events)
    surv = d.get("survival_covariates", [[]] * n_events)
    return ModelSpec(
        fixed_marker_covariates=tuple(d.get("fixed_marker_covariates",
                                            ("intercept", "time"))),
        random_marker_terms=tuple(d.get("random_marker_terms",
                                        ("intercept",))),
        fixed_variance_covariates=tuple(d.get("fixed_variance_covariates",
                                              ("intercept",))),
        random_variance_terms=tuple(d.get("random_variance_terms", ())),
        survival_covariates_per_event=tuple(tuple(w) for w in surv),
        association_flags_per_event=tuple(_flags_from_labels(a)
                                          for a in assoc),
        baseline_family_per_event=tuple(_baseline_from_dict(b)
                                        for b in baselines),
        n_events=n_events,
        delayed_entry=bool(d.get("delayed_entry", False)),
        independent_variance_effects=bool(
            d.get("independent_variance_effects", False)),
    )


def spec_to_dict(spec: ModelSpec) -> dict:
    return {
        "fixed_marker_covariates": list(spec.fixed_marker_covariates),
        "random_marker_terms": list(spec.random_marker_terms),
        "fixed_variance_covariates": list(spec.fixed_variance_covariates),
        "random_variance_terms": list(spec.random_variance_terms),
        "survival_covariates": [list(w)
                                for w in spec.survival_covariates_per_event],
        "associations": [f.labels()
                         for f in spec.association_flags_per_event],
        "baselines": [_baseline_to_dict(b)
                      for b in spec.baseline_family_per_event],
        "n_events": spec.n_events,
        "delayed_entry": spec.delayed_entry,
        "independent_variance_effects": spec.independent_variance_effects,
    }


# --------------------------------------------------------------------------
# Run configuration
# --------------------------------------------------------------------------

@dataclass(frozen=True)
class ScenarioBlock:
    name: str
    n_subjects: int = 500
    quadratic_coefficient: float = 0.5


@dataclass(frozen=True)
class PredictionBlock:
    subject: str
    s: float
    horizons: tuple[float, ...]
    k: int = 0
    L: int = 0          # 0 disables the parameter-uncertainty interval
    S: int = 500
    band_times: tuple[float, ...] = ()


@dataclass(frozen=True)
class GofBlock:
    k: int = 0
    stratify_by: str | None = None
    levels: tuple[float, ...] | None = None


@dataclass(frozen=True)
class ReplicateBlock:
    r: int = 30
    init: str = "default"  # "default" or "truth"


@dataclass(frozen=True)
class RunConfig:
    """Everything a command needs beyond its own flags.

    ``s1``/``s2`` are the integration draw counts of the two estimation
    steps; ``fit_json`` points commands that consume a fitted model at
    its stored result.
    """

    model: ModelSpec | None = None
    s1: int = 500
    s2: int = 5000
    criteria: ConvergenceCriteria | None = None
    seed: int | None = None
    threads: int | None = None
    longitudinal: str | None = None
    survival: str | None = None
    out: str = "."
    fit_json: str | None = None
    scenario: ScenarioBlock | None = None
    prediction: PredictionBlock | None = None
    gof: GofBlock | None = None
    replicate: ReplicateBlock | None = None

    def __post_init__(self):
        if not 1 <= self.s1 <= self.s2:
            raise InputError(
                f"draw counts need s2 >= s1 >= 1, got s1={self.s1} "
                f"s2={self.s2}"
            )


def _block(d, cls, name):
    if d is None:
        return None
    if not isinstance(d, dict):
        raise InputError(f"{name} block must be a mapping")
    fields = {f.name for f in dataclasses.fields(cls)}
    unknown = sorted(set(d) - fields)
    if unknown:
        raise InputError(f"unknown {name} keys {unknown}")
    kw = dict(d)
    for key in ("horizons", "band_times", "levels"):
        if kw.get(key) is not None and key in fields:
            kw[key] = tuple(kw[key])
    try:
        return cls(**kw)
    except TypeError as exc:
        raise InputError(f"bad {name} block: {exc}") from None


def config_from_dict(d) -> RunConfig:
    if not isinstance(d, dict):
        raise InputError("configuration must be a mapping")
    known = {
        "model", "s1", "s2", "criteria", "seed", "threads", "longitudinal",
        "survival", "out", "fit_json", "scenario", "prediction", "gof",
        "replicate",
    }
    unknown = sorted(set(d) - known)
    if unknown:
        raise InputError(f"unknown configuration keys {unknown}")
    criteria = None
    if d.get("criteria") is not None:
        cd = d["criteria"]
        allowed = {f.name for f in dataclasses.fields(ConvergenceCriteria)}
        bad = sorted(set(cd) - allowed)
        if bad:
            raise InputError(f"unknown criteria keys {bad}")
        criteria = ConvergenceCriteria(**cd)
    return RunConfig(
        model=spec_from_dict(d["model"]) if d.get("model") else None,
        s1=int(d.get("s1", 500)),
        s2=int(d.get("s2", 5000)),
        criteria=criteria,
        seed=d.get("seed"),
        threads=d.get("threads"),
        longitudinal=d.get("longitudinal"),
        survival=d.get("survival"),
        out=d.get("out", "."),
        fit_json=d.get("fit_json"),
        scenario=_block(d.get("scenario"), ScenarioBlock, "scenario"),
        prediction=_block(d.get("prediction"), PredictionBlock, "prediction"),
        gof=_block(d.get("gof"), GofBlock, "gof"),
        replicate=_block(d.get("replicate"), ReplicateBlock, "replicate"),
    )


def load_config(path) -> RunConfig:
    """Read a configuration file; YAML by extension, JSON otherwise."""
    path = str(path)
    with open(path, encoding="utf-8") as handle:
        text = handle.read()
    try:
        if path.endswith((".yaml", ".yml")):
            raw = yaml.safe_load(text)
        else:
            raw = json.loads(text)
    except (yaml.YAMLError, json.JSONDecodeError) as exc:
        raise InputError(f"{path}: cannot parse configuration: {exc}") from None
    return config_from_dict(raw)


# --------------------------------------------------------------------------
# Fit results
# --------------------------------------------------------------------------

def _sigma_labels(dim):
    return [f"sigma[{a},{b}]" for a in range(dim) for b in range(a + 1)]


def fit_to_dict(fit: FitResult) -> dict:
    """Stable JSON form of a fitted model."""
    layout = get_layout(fit.spec)
    se = fit.se if fit.se is not None else [None] * layout.size
    params = [
        {"name": name, "estimate": float(est),
         "se": None if s is None else float(s)}
        for name, est, s in zip(layout.names, fit.theta_flat, se)
    ]
    dim = fit.spec.dim_effects
    re_block = None
    if dim:
        sigma = covariance_from_cholesky(fit.theta_hat.chol_lower)
        values = [float(sigma[a, b])
                  for a in range(dim) for b in range(a + 1)]
        ses = None
        if fit.re_cov_vcov is not None:
            ses = [float(x)
                   for x in np.sqrt(np.clip(np.diag(fit.re_cov_vcov), 0, None))]
        re_block = {"labels": _sigma_labels(dim), "estimates": values,
                    "ses": ses,
                    "vcov": (None if fit.re_cov_vcov is None
                             else fit.re_cov_vcov.tolist())}
    return {
        "format": FIT_FORMAT,
        "format_version": FIT_FORMAT_VERSION,
        "spec": spec_to_dict(fit.spec),
        "parameters": params,
        "vcov": None if fit.vcov is None else fit.vcov.tolist(),
        "random_effects_covariance": re_block,
        "loglik": float(fit.loglik),
        "loglik_step1": float(fit.loglik_step1),
        "aic": float(fit.aic),
        "iterations": int(fit.iterations),
        "steps": list(fit.steps),
        "converged": {
            "param": fit.converged.param,
            "fn": fit.converged.fn,
            "rdm": fit.converged.rdm,
            "rdm_value": fit.converged.rdm_value,
            "converged": fit.converged.converged,
        },
        "messages": list(fit.messages),
    }


def write_fit_json(path, fit: FitResult) -> None:
    with open(path, "w", encoding="utf-8") as handle:
        json.dump(fit_to_dict(fit), handle, indent=2)
        handle.write("\n")


def fit_from_dict(d) -> FitResult:
    """Rebuild a result from its JSON form (inverse of fit_to_dict)."""
    if d.get("format") != FIT_FORMAT:
        raise InputError("not a fit result file")
    if d.get("format_version") != FIT_FORMAT_VERSION:
        raise InputError(
            f"unsupported fit format version {d.get('format_version')!r}"
        )
    spec = spec_from_dict(d["spec"])
    layout = get_layout(spec)
    names = [p["name"] for p in d["parameters"]]
    if names != layout.names:
        raise InputError("fit file parameters do not match its model block")
    theta = np.array([p["estimate"] for p in d["parameters"]], dtype=float)
    se_raw = [p["se"] for p in d["parameters"]]
    se = (None if any(s is None for s in se_raw)
          else np.asarray(se_raw, dtype=float))
    vcov = None if d["vcov"] is None else np.asarray(d["vcov"], dtype=float)
    if vcov is not None and vcov.shape != (layout.size, layout.size):
        raise InputError("fit file vcov has the wrong shape")
    conv = d["converged"]
    status = ConvergenceStatus(param=conv["param"], fn=conv["fn"],
                               rdm=conv["rdm"], rdm_value=conv["rdm_value"])
    re_block = d.get("random_effects_covariance")
    re_cov_vcov = None
    if re_block is not None and re_block.get("vcov") is not None:
        re_cov_vcov = np.asarray(re_block["vcov"], dtype=float)
    return FitResult(
        spec=spec, theta_hat=layout.unflatten(theta), theta_flat=theta,
        vcov=vcov, se=se,
        re_cov_vcov=re_cov_vcov, loglik=d["loglik"],
        loglik_step1=d["loglik_step1"], aic=d["aic"],
        iterations=d["iterations"], converged=status,
        steps=tuple(d["steps"]), messages=tuple(d.get("messages", ())),
    )


def read_fit_json(path) -> FitResult:
    with open(path, encoding="utf-8") as handle:
        try:
            d = json.load(handle)
        except json.JSONDecodeError as exc:
            raise InputError(f"{path}: not valid JSON: {exc}") from None
    return fit_from_dict(d)


# --------------------------------------------------------------------------
# Human-readable estimates table
# --------------------------------------------------------------------------

def _table_sections(fit: FitResult):
    layout = get_layout(fit.spec)
    sections = [
        ("Marker mean", layout.beta_slice),
        ("Residual scale (log SD)", layout.mu_slice),
    ]
    for k in range(fit.spec.n_events):
        lo = layout.gamma_slices[k].start
        hi = layout.baseline_slices[k].stop
        sections.append((f"Event {k + 1}", slice(lo, hi)))
    return layout, sections


def fit_table(fit: FitResult) -> str:
    """Fixed-width summary of estimates, SEs, and 95% intervals."""
    layout, sections = _table_sections(fit)
    se = fit.se
    lines = [f"{'Parameter':<24}{'Estimate':>12}{'SE':>10}"
             f"{'95% CI':>24}"]
    lines.append("-" * len(lines[0]))

    def add_row(name, est, s):
        if s is None or not np.isfinite(s):
            lines.append(f"  {name:<22}{est:>12.4f}{'--':>10}{'--':>24}")
        else:
            ci = f"[{est - 1.96 * s:.4f}, {est + 1.96 * s:.4f}]"
            lines.append(f"  {name:<22}{est:>12.4f}{s:>10.4f}{ci:>24}")

    for title, sl in sections:
        lines.append(title)
        for i in range(sl.start, sl.stop):
            add_row(layout.names[i], fit.theta_flat[i],
                    None if se is None else se[i])

    dim = fit.spec.dim_effects
    if dim:
        lines.append("Random-effects covariance")
        sigma = covariance_from_cholesky(fit.theta_hat.chol_lower)
        ses = (np.sqrt(np.clip(np.diag(fit.re_cov_vcov), 0, None))
               if fit.re_cov_vcov is not None else None)
        idx = 0
        for a in range(dim):
            for b in range(a + 1):
                add_row(f"sigma[{a},{b}]", sigma[a, b],
                        None if ses is None else ses[idx])
                idx += 1

    lines.append("-" * len(lines[0]))
    lines.append(f"log-likelihood {fit.loglik:.4f}   AIC {fit.aic:.4f}   "
                 f"iterations {fit.iterations}")
    status = "yes" if fit.converged.converged else "NO"
    rdm = (f"{fit.converged.rdm_value:.2e}"
           if fit.converged.rdm_value is not None else "--")
    lines.append(f"converged {status}   rdm {rdm}   "
                 f"draws {fit.steps[0]}/{fit.steps[1]}")
    return "\n".join(lines) + "\n"


# --------------------------------------------------------------------------
# Curve and summary CSVs
# --------------------------------------------------------------------------

def write_band_csv(path, times, mean, lower, upper) -> None:
    rows = [(_fmt(t), _fmt(m), _fmt(lo), _fmt(hi))
            for t, m, lo, hi in zip(times, mean, lower, upper)]
    _write_rows(path, ("time", "mean", "lower", "upper"), rows)


write_prediction_csv = write_band_csv


def write_gof_csv(path, times, na, predicted) -> None:
    rows = [(_fmt(t), _fmt(a), _fmt(p))
            for t, a, p in zip(times, na, predicted)]
    _write_rows(path, ("time", "na", "predicted"), rows)


def write_replicate_csv(path, summary) -> None:
    rows = [(r.parameter, _fmt(r.true), _fmt(r.mean), _fmt(r.empirical_se),
             _fmt(r.mean_asymptotic_se), _fmt(r.coverage))
            for r in summary.rows]
    _write_rows(path, REPLICATE_COLUMNS, rows)
