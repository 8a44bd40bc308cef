"""FastAPI application wiring the estimation library to HTTP endpoints.

All endpoints are synchronous compute calls: the request carries the
data and settings, the response carries the complete result.  File
handling stays with the caller (the command-line client reads and
writes CSV/JSON locally and posts the contents here).
"""

from __future__ import annotations

import numpy as np
from fastapi import FastAPI
from fastapi.responses import JSONResponse

from .. import __version__
from ..dataio import (
    LongRecord,
    SurvRecord,
    build_dataset,
    fit_from_dict,
    fit_table,
    fit_to_dict,
    spec_from_dict,
)
from ..errors import (
    DomainError,
    InputError,
    InternalError,
    JointvarError,
    NoPosteriorMass,
    OptimizerFailure,
)
from ..estimation import ConvergenceCriteria, default_init
from ..estimation import fit as fit_model
from ..model import Dataset
from ..predict import (
    dynamic_event_probability,
    eb_modes,
    marker_prediction_band,
    nelson_aalen,
    prediction_ci,
    predicted_cumhaz_curve,
)
from ..simulate import gen_dataset, replicate_study, scenario, scenario_e
from . import schemas as sc


def _dataset_from_body(data: sc.DataModel) -> Dataset:
    longs = [LongRecord(r.id, r.time, r.value, dict(r.covariates))
             for r in data.longitudinal]
    survs = [SurvRecord(r.id, r.entry_time, r.event_time, r.status,
                        dict(r.covariates))
             for r in data.survival]
    return build_dataset(longs, survs)


def _body_from_dataset(ds: Dataset):
    longs = [sc.LongRowModel(id=s.id, time=float(t), value=float(v))
             for s in ds for t, v in zip(s.times, s.values)]
    survs = [sc.SurvRowModel(id=s.id, entry_time=float(s.entry_time),
                             event_time=float(s.event_time),
                             status=s.event_indicator,
                             covariates=dict(s.covariates))
             for s in ds]
    return longs, survs


def _scenario_config(name, n_subjects, seed, quadratic_coefficient):
    if name.upper() == "E":
        return scenario_e(n_subjects=n_subjects, seed=seed,
                          quadratic_coefficient=quadratic_coefficient)
    return scenario(name, n_subjects=n_subjects, seed=seed)


def _find_subject(dataset: Dataset, sid: str):
    for s in dataset:
        if s.id == sid:
            return s
    raise InputError(f"subject {sid!r} not found in the posted data")


_STATUS = (
    (InternalError, 500),
    (NoPosteriorMass, 409),
    (OptimizerFailure, 409),
    (DomainError, 400),
)


def create_app() -> FastAPI:
    app = FastAPI(title="jointvar", version=__version__)

    @app.exception_handler(JointvarError)
    def _domain_error(request, exc):
        code = next((c for cls, c in _STATUS if isinstance(exc, cls)), 400)
        return JSONResponse(
            status_code=code,
            content=sc.ErrorBody(error=type(exc).__name__,
                                 message=str(exc)).model_dump(),
        )

    @app.get("/health", response_model=sc.HealthResponse)
    def health():
        return sc.HealthResponse(status="ok", name="jointvar",
                                 version=__version__)

    @app.post("/simulate", response_model=sc.SimulateResponse)
    def simulate(req: sc.SimulateRequest):
        cfg = _scenario_config(req.scenario, req.n_subjects, req.seed,
                               req.quadratic_coefficient)
        longs, survs = _body_from_dataset(gen_dataset(cfg))
        return sc.SimulateResponse(scenario=cfg.scenario,
                                   n_events=cfg.spec.n_events,
                                   longitudinal=longs, survival=survs)

    @app.post("/fit", response_model=sc.FitResponse)
    def run_fit(req: sc.FitRequest):
        spec = spec_from_dict(req.model.as_config_dict())
        dataset = _dataset_from_body(req.data)
        criteria = (ConvergenceCriteria(**req.criteria.model_dump())
                    if req.criteria else None)
        init = (np.asarray(req.init, dtype=float)
                if req.init is not None else default_init(spec, dataset))
        trace: list[sc.IterationRecord] = []
        hook = trace.append if req.trace else None
        cb = (lambda rec: hook(sc.IterationRecord(**rec))) if hook else None
        result = fit_model(spec, dataset, init, criteria=criteria,
                           S1=req.s1, S2=req.s2, progress=cb)
        return sc.FitResponse(result=sc.FitPayload(**fit_to_dict(result)),
                              table=fit_table(result), trace=trace)

    @app.post("/predict", response_model=sc.PredictResponse)
    def predict(req: sc.PredictRequest):
        stored = fit_from_dict(req.fit.model_dump())
        dataset = _dataset_from_body(req.data)
        subj = _find_subject(dataset, req.subject)
        rows = []
        repaired = False
        rejected = 0
        for t in req.horizons:
            if req.L:
                ci = prediction_ci(stored.spec, stored, subj, req.s, t,
                                   req.k, L=req.L, S=req.S, seed=req.seed)
                point, lo, hi = ci.point, ci.lower, ci.upper
                repaired = repaired or ci.repaired
                rejected += ci.n_rejected
            else:
                point = dynamic_event_probability(
                    stored.spec, stored.theta_hat, subj, req.s, t, req.k,
                    S=req.S)
                lo = hi = point
            rows.append(sc.CurveRow(time=req.s + t, mean=point,
                                    lower=lo, upper=hi))
        band = []
        if req.band_times:
            modes = eb_modes(stored.spec, stored.theta_hat, subj)
            grid = np.asarray(req.band_times, dtype=float)
            mean, lo, hi = marker_prediction_band(
                stored.spec, stored.theta_hat, subj, modes.b, modes.tau, grid)
            band = [sc.CurveRow(time=float(t), mean=float(m),
                                lower=float(a), upper=float(b))
                    for t, m, a, b in zip(grid, mean, lo, hi)]
        return sc.PredictResponse(subject=req.subject, s=req.s, k=req.k,
                                  rows=rows, band=band, repaired=repaired,
                                  n_rejected=rejected)

    @app.post("/gof", response_model=sc.GofResponse)
    def gof(req: sc.GofRequest):
        stored = fit_from_dict(req.fit.model_dump())
        dataset = _dataset_from_body(req.data)
        na = nelson_aalen(dataset, req.k, stratify_by=req.stratify_by,
                          levels=req.levels)
        pred = predicted_cumhaz_curve(stored.spec, stored.theta_hat,
                                      dataset, req.k,
                                      stratify_by=req.stratify_by,
                                      levels=req.levels)
        if req.stratify_by is None:
            na, pred = {None: na}, {None: pred}
        strata = [
            sc.GofCurve(level=level, times=na[level].times.tolist(),
                        na=na[level].values.tolist(),
                        predicted=pred[level].values.tolist())
            for level in sorted(na, key=lambda x: (x is not None, x))
        ]
        return sc.GofResponse(k=req.k, strata=strata)

    @app.post("/replicate", response_model=sc.ReplicateResponse)
    def replicate(req: sc.ReplicateRequest):
        cfg = _scenario_config(req.scenario, req.n_subjects, req.seed,
                               req.quadratic_coefficient)
        if req.init not in ("default", "truth"):
            raise InputError(
                f"init must be 'default' or 'truth', got {req.init!r}")
        init = cfg.truth if req.init == "truth" else None
        criteria = (ConvergenceCriteria(**req.criteria.model_dump())
                    if req.criteria else None)
        summary = replicate_study(cfg, req.r, S1=req.s1, S2=req.s2,
                                  criteria=criteria, init=init)
        rows = [sc.ReplicateRowModel(parameter=r.parameter, true=r.true,
                                     mean=r.mean,
                                     empirical_se=r.empirical_se,
                                     mean_asymptotic_se=r.mean_asymptotic_se,
                                     coverage=r.coverage)
                for r in summary.rows]
        return sc.ReplicateResponse(scenario=summary.scenario,
                                    n_requested=summary.n_requested,
                                    n_converged=summary.n_converged,
                                    failures=list(summary.failures),
                                    rows=rows)

    return app
