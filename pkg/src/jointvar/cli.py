"""Command-line client for the HTTP service.

Every command is a thin client: files are read and written locally,
computation happens behind the service API.  By default the service
runs in-process; ``--server`` points at a remote instance instead.

Exit codes: 0 on success, 2 when a fit did not converge (or every
replicate failed), 1 on input errors.  Diagnostics go to standard
error as ``key=value`` lines; ``--quiet`` silences everything except
errors.
"""

from __future__ import annotations

import dataclasses
import json
import os
import sys
from pathlib import Path

import click
import yaml

from .errors import InputError, JointvarError, OptimizerFailure

_THREAD_VARS = ("OMP_NUM_THREADS", "OPENBLAS_NUM_THREADS",
                "MKL_NUM_THREADS", "NUMEXPR_NUM_THREADS")


def _diag(event, **fields):
    parts = [f"event={event}"]
    for key, value in fields.items():
        text = str(value)
        if any(ch.isspace() for ch in text):
            text = json.dumps(text)
        parts.append(f"{key}={text}")
    print(" ".join(parts), file=sys.stderr)


def _read_raw_config(path):
    # parsed here, before the numeric stack loads, so a `threads`
    # setting can still cap the BLAS pools
    with open(path, encoding="utf-8") as handle:
        text = handle.read()
    try:
        if str(path).endswith((".yaml", ".yml")):
            raw = yaml.safe_load(text)
        else:
            raw = json.loads(text)
    except (yaml.YAMLError, json.JSONDecodeError) as exc:
        raise InputError(f"{path}: cannot parse configuration: {exc}") from None
    if raw is None:
        raw = {}
    if not isinstance(raw, dict):
        raise InputError(f"{path}: configuration must be a mapping")
    return raw


def _apply_threads(flag_value, raw_config):
    n = flag_value
    if n is None and raw_config is not None:
        n = raw_config.get("threads")
    if n is None:
        env = os.environ.get("JOINTVAR_THREADS")
        n = int(env) if env else None
    if n is not None:
        if int(n) < 1:
            raise InputError("threads must be a positive integer")
        for var in _THREAD_VARS:
            os.environ[var] = str(int(n))


class Client:
    """Minimal HTTP wrapper translating service errors to exit codes."""

    def __init__(self, server=None):
        import httpx

        if server:
            self._http = httpx.Client(base_url=server, timeout=None)
        else:
            # synchronous in-process bridge to the ASGI app
            import warnings

            with warnings.catch_warnings():
                warnings.simplefilter("ignore")
                from starlette.testclient import TestClient

            from .service import create_app

            self._http = TestClient(create_app())

    def post(self, path, payload):
        return self._check(self._http.post(path, json=payload))

    def get(self, path):
        return self._check(self._http.get(path))

    @staticmethod
    def _check(response):
        if response.status_code == 200:
            return response.json()
        try:
            body = response.json()
        except ValueError:
            body = {"error": "HTTPError",
                    "message": response.text[:500]}
        kind = body.get("error", "HTTPError")
        message = body.get("message", str(body.get("detail", body)))
        if kind == "OptimizerFailure":
            raise OptimizerFailure(message)
        raise InputError(f"{kind}: {message}")


def _client(ctx):
    return Client(server=ctx.obj.get("server"))


def _quiet(ctx):
    return ctx.obj.get("quiet", False)


def _outdir(path):
    out = Path(path)
    out.mkdir(parents=True, exist_ok=True)
    return out


def _load_run_config(ctx, config_path, threads_flag):
    """Parse the config file (if any) and start the numeric stack."""
    raw = _read_raw_config(config_path) if config_path else {}
    _apply_threads(threads_flag if threads_flag else ctx.obj.get("threads"),
                   raw)
    from .dataio import config_from_dict

    return config_from_dict(raw)


def _data_payload(cfg):
    from .dataio import read_longitudinal, read_survival

    if not cfg.longitudinal or not cfg.survival:
        raise InputError(
            "the configuration must set 'longitudinal' and 'survival' "
            "data paths"
        )
    longs = read_longitudinal(cfg.longitudinal)
    survs = read_survival(cfg.survival)
    return {
        "longitudinal": [
            {"id": r.id, "time": r.time, "value": r.value,
             "covariates": r.covariates} for r in longs
        ],
        "survival": [
            {"id": r.id, "entry_time": r.entry_time,
             "event_time": r.event_time, "status": r.status,
             "covariates": r.covariates} for r in survs
        ],
    }


def _stored_fit(cfg):
    if not cfg.fit_json:
        raise InputError("the configuration must set 'fit_json' to a "
                         "stored fit result")
    with open(cfg.fit_json, encoding="utf-8") as handle:
        try:
            return json.load(handle)
        except json.JSONDecodeError as exc:
            raise InputError(f"{cfg.fit_json}: not valid JSON: {exc}") from None


def _dataset_from_response(body):
    from .dataio import LongRecord, SurvRecord, build_dataset

    longs = [LongRecord(r["id"], r["time"], r["value"],
                        r.get("covariates") or {})
             for r in body["longitudinal"]]
    survs = [SurvRecord(r["id"], r.get("entry_time", 0.0), r["event_time"],
                        r["status"], r.get("covariates") or {})
             for r in body["survival"]]
    return build_dataset(longs, survs)


@click.group()
@click.option("--server", envvar="JOINTVAR_SERVER", default=None,
              help="Base URL of a running service; default runs in-process.")
@click.option("--threads", type=int, default=None,
              help="Cap for numeric thread pools (or JOINTVAR_THREADS).")
@click.option("--quiet", is_flag=True, help="Suppress progress output.")
@click.pass_context
def cli(ctx, server, threads, quiet):
    """Joint location-scale marker and competing-risks modeling."""
    ctx.obj = {"server": server, "threads": threads, "quiet": quiet}


@cli.command()
@click.option("--config", "config_path", required=True,
              type=click.Path(exists=True, dir_okay=False),
              help="Run configuration with model block and data paths.")
@click.option("--s1", type=int, default=None,
              help="Integration draws for step 1.")
@click.option("--s2", type=int, default=None,
              help="Integration draws for step 2.")
@click.option("--seed", type=int, default=None)
@click.option("--threads", type=int, default=None)
@click.option("--out", type=click.Path(file_okay=False), default=None)
@click.pass_context
def fit(ctx, config_path, s1, s2, seed, threads, out):
    """Estimate the model and write fit.json plus an estimates table."""
    cfg = _load_run_config(ctx, config_path, threads)
    if cfg.model is None:
        raise InputError("the configuration must contain a 'model' block")
    updates = {}
    if s1 is not None:
        updates["s1"] = s1
    if s2 is not None:
        updates["s2"] = s2
    if seed is not None:
        updates["seed"] = seed
    if out is not None:
        updates["out"] = out
    if updates:
        cfg = dataclasses.replace(cfg, **updates)

    from .dataio import spec_to_dict

    request = {
        "model": spec_to_dict(cfg.model),
        "data": _data_payload(cfg),
        "s1": cfg.s1,
        "s2": cfg.s2,
        "trace": not _quiet(ctx),
    }
    if cfg.criteria is not None:
        request["criteria"] = dataclasses.asdict(cfg.criteria)
    body = _client(ctx).post("/fit", request)

    for rec in body.get("trace", ()):
        _diag("progress", step=rec["step"], iteration=rec["iteration"],
              loglik=rec["loglik"], damping=rec["damping"],
              rdm="--" if rec["rdm"] is None else rec["rdm"])
    outdir = _outdir(cfg.out)
    fit_path = outdir / "fit.json"
    with open(fit_path, "w", encoding="utf-8") as handle:
        json.dump(body["result"], handle, indent=2)
        handle.write("\n")
    table_path = outdir / "estimates.txt"
    table_path.write_text(body["table"], encoding="utf-8")
    if not _quiet(ctx):
        click.echo(body["table"], nl=False)
    converged = body["result"]["converged"]["converged"]
    _diag("done", command="fit", out=str(fit_path), converged=converged)
    if not converged:
        _diag("error", kind="NonConvergence",
              message="fit did not meet the convergence criteria")
        sys.exit(2)


@cli.command()
@click.option("--scenario", required=True,
              help="Stock design letter, A through E.")
@click.option("--n", "n_subjects", type=int, default=500)
@click.option("--seed", type=int, default=None)
@click.option("--quadratic-coefficient", type=float, default=0.5,
              help="Curvature of the generating trend (scenario E only).")
@click.option("--out", type=click.Path(file_okay=False), default=".")
@click.pass_context
def simulate(ctx, scenario, n_subjects, seed, quadratic_coefficient, out):
    """Generate a dataset and write longitudinal.csv and survival.csv."""
    _apply_threads(ctx.obj.get("threads"), None)
    body = _client(ctx).post("/simulate", {
        "scenario": scenario,
        "n_subjects": n_subjects,
        "seed": seed,
        "quadratic_coefficient": quadratic_coefficient,
    })
    from .dataio import write_longitudinal, write_survival

    ds = _dataset_from_response(body)
    outdir = _outdir(out)
    write_longitudinal(outdir / "longitudinal.csv", ds)
    write_survival(outdir / "survival.csv", ds)
    if not _quiet(ctx):
        _diag("done", command="simulate", scenario=body["scenario"],
              subjects=len(ds), out=str(outdir))


@cli.command()
@click.option("--config", "config_path", required=True,
              type=click.Path(exists=True, dir_okay=False))
@click.option("--subject", default=None, help="Subject id to predict for.")
@click.option("--s", "s_time", type=float, default=None,
              help="Landmark time; history after it is ignored.")
@click.option("--t", "horizons", type=float, multiple=True,
              help="Horizon(s) past the landmark; repeatable.")
@click.option("--k", type=int, default=None, help="Event index (0-based).")
@click.option("--ci-draws", type=int, default=None,
              help="Parameter draws for the interval; 0 for point only.")
@click.option("--seed", type=int, default=None)
@click.option("--threads", type=int, default=None)
@click.option("--out", type=click.Path(file_okay=False), default=None)
@click.pass_context
def predict(ctx, config_path, subject, s_time, horizons, k, ci_draws, seed,
            threads, out):
    """Dynamic event probabilities (and optional marker band) as CSV."""
    cfg = _load_run_config(ctx, config_path, threads)
    from .dataio import PredictionBlock

    block = cfg.prediction
    if block is None:
        if subject is None or s_time is None or not horizons:
            raise InputError(
                "give a 'prediction' block in the configuration or the "
                "--subject, --s, and --t flags"
            )
        block = PredictionBlock(subject=subject, s=s_time,
                                horizons=tuple(horizons))
    updates = {}
    if subject is not None:
        updates["subject"] = subject
    if s_time is not None:
        updates["s"] = s_time
    if horizons:
        updates["horizons"] = tuple(horizons)
    if k is not None:
        updates["k"] = k
    if ci_draws is not None:
        updates["L"] = ci_draws
    if updates:
        block = dataclasses.replace(block, **updates)

    body = _client(ctx).post("/predict", {
        "fit": _stored_fit(cfg),
        "data": _data_payload(cfg),
        "subject": block.subject,
        "s": block.s,
        "horizons": list(block.horizons),
        "k": block.k,
        "L": block.L,
        "S": block.S,
        "seed": seed if seed is not None else cfg.seed,
        "band_times": list(block.band_times),
    })
    from .dataio import write_band_csv, write_prediction_csv

    outdir = _outdir(out if out is not None else cfg.out)
    rows = body["rows"]
    pred_path = outdir / "prediction.csv"
    write_prediction_csv(pred_path,
                         [r["time"] for r in rows],
                         [r["mean"] for r in rows],
                         [r["lower"] for r in rows],
                         [r["upper"] for r in rows])
    if body["band"]:
        band = body["band"]
        write_band_csv(outdir / "band.csv",
                       [r["time"] for r in band],
                       [r["mean"] for r in band],
                       [r["lower"] for r in band],
                       [r["upper"] for r in band])
    if body["repaired"]:
        _diag("warning", kind="CovarianceRepaired",
              message="parameter covariance was projected to the nearest "
                      "PSD matrix")
    if not _quiet(ctx):
        _diag("done", command="predict", subject=block.subject,
              out=str(pred_path), rejected=body["n_rejected"])


@cli.command()
@click.option("--config", "config_path", required=True,
              type=click.Path(exists=True, dir_okay=False))
@click.option("--k", type=int, default=None, help="Event index (0-based).")
@click.option("--stratify-by", default=None,
              help="Categorical covariate for stratified curves.")
@click.option("--level", "levels", type=float, multiple=True,
              help="Explicit stratum levels; repeatable.")
@click.option("--threads", type=int, default=None)
@click.option("--out", type=click.Path(file_okay=False), default=None)
@click.pass_context
def gof(ctx, config_path, k, stratify_by, levels, threads, out):
    """Observed vs model-based cumulative hazard curves as CSV."""
    cfg = _load_run_config(ctx, config_path, threads)
    from .dataio import GofBlock

    block = cfg.gof or GofBlock()
    updates = {}
    if k is not None:
        updates["k"] = k
    if stratify_by is not None:
        updates["stratify_by"] = stratify_by
    if levels:
        updates["levels"] = tuple(levels)
    if updates:
        block = dataclasses.replace(block, **updates)

    body = _client(ctx).post("/gof", {
        "fit": _stored_fit(cfg),
        "data": _data_payload(cfg),
        "k": block.k,
        "stratify_by": block.stratify_by,
        "levels": None if block.levels is None else list(block.levels),
    })
    from .dataio import write_gof_csv

    outdir = _outdir(out if out is not None else cfg.out)
    written = []
    for stratum in body["strata"]:
        if stratum["level"] is None:
            path = outdir / "gof.csv"
        else:
            path = outdir / f"gof_{stratum['level']:g}.csv"
        write_gof_csv(path, stratum["times"], stratum["na"],
                      stratum["predicted"])
        written.append(str(path))
    if not _quiet(ctx):
        _diag("done", command="gof", k=block.k, out=",".join(written))


@cli.command()
@click.option("--scenario", required=True,
              help="Stock design letter, A through E.")
@click.option("--r", "n_replicates", type=int, default=30)
@click.option("--n", "n_subjects", type=int, default=500)
@click.option("--s1", type=int, default=None)
@click.option("--s2", type=int, default=None)
@click.option("--seed", type=int, default=None)
@click.option("--init", type=click.Choice(["default", "truth"]),
              default="default",
              help="Start each fit from moment-based values or the truth.")
@click.option("--config", "config_path", default=None,
              type=click.Path(exists=True, dir_okay=False))
@click.option("--threads", type=int, default=None)
@click.option("--out", type=click.Path(file_okay=False), default=None)
@click.pass_context
def replicate(ctx, scenario, n_replicates, n_subjects, s1, s2, seed, init,
              config_path, threads, out):
    """Repeated simulate-and-fit study; writes a summary CSV."""
    cfg = _load_run_config(ctx, config_path, threads)
    request = {
        "scenario": scenario,
        "n_subjects": n_subjects,
        "r": n_replicates,
        "s1": s1 if s1 is not None else cfg.s1,
        "s2": s2 if s2 is not None else cfg.s2,
        "seed": seed if seed is not None else cfg.seed,
        "init": init,
    }
    if cfg.criteria is not None:
        request["criteria"] = dataclasses.asdict(cfg.criteria)
    body = _client(ctx).post("/replicate", request)
    from .dataio import write_replicate_csv
    from .simulate import ReplicateRow, ReplicateSummary

    summary = ReplicateSummary(
        scenario=body["scenario"],
        rows=tuple(ReplicateRow(**r) for r in body["rows"]),
        n_requested=body["n_requested"],
        n_converged=body["n_converged"],
        failures=tuple(body["failures"]),
        estimates=None, ses=None,
    )
    outdir = _outdir(out if out is not None else cfg.out)
    path = outdir / "replicate.csv"
    write_replicate_csv(path, summary)
    for message in summary.failures:
        _diag("warning", kind="ReplicateFailed", message=message)
    if not _quiet(ctx):
        _diag("done", command="replicate", scenario=summary.scenario,
              converged=f"{summary.n_converged}/{summary.n_requested}",
              out=str(path))


def main(argv=None):
    try:
        cli.main(args=argv, standalone_mode=False, prog_name="jointvar")
    except click.exceptions.Exit as exc:
        sys.exit(exc.exit_code)
    except click.exceptions.Abort:
        _diag("error", kind="Aborted", message="interrupted")
        sys.exit(1)
    except click.ClickException as exc:
        _diag("error", kind="UsageError", message=exc.format_message())
        sys.exit(1)
    except OptimizerFailure as exc:
        _diag("error", kind="OptimizerFailure", message=str(exc))
        sys.exit(2)
    except JointvarError as exc:
        _diag("error", kind=type(exc).__name__, message=str(exc))
        sys.exit(1)
    except OSError as exc:
        _diag("error", kind="OSError", message=str(exc))
        sys.exit(1)
    return 0


if __name__ == "__main__":
    sys.exit(main())
