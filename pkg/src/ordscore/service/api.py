"""FastAPI wrapper around :mod:`ordscore.runner`.

Each pipeline verb runs the stages up to its own; completed stages in the output
directory are reused.  Library errors map onto HTTP statuses and keep the CLI
exit code in the body so the thin client can reproduce it.
"""
from __future__ import annotations

import json
import logging
from pathlib import Path

import numpy as np
from fastapi import FastAPI, Request
from fastapi.responses import JSONResponse

from .. import __version__, heads, mcinfer, runner
from ..errors import ConfigError, InputError, NumericError, OrdscoreError, ResumeConflict, StageError
from .schemas import (
    CompareRequest,
    CompareResponse,
    ErrorBody,
    JobRequest,
    JobResponse,
    MetricReport,
    ScoreRequest,
    ScoreResponse,
)

log = logging.getLogger(__name__)

VERB_STAGE = {"generate": "generate", "train": "train", "predict": "predict", "evaluate": "evaluate", "run": "report"}
_STATUS = {2: 422, 3: 500, 4: 409}


def _root_cause(exc):
    return exc.cause if isinstance(exc, StageError) else exc


def error_body(exc):
    cause = _root_cause(exc)
    return ErrorBody(
        kind=type(cause).__name__,
        message=str(exc),
        exit_code=getattr(exc, "exit_code", 1),
        stage=getattr(exc, "stage", None),
    )


def load_config(req):
    if req.config is not None:
        cfg = runner.ExperimentConfig.from_dict(req.config)
    else:
        cfg = runner.ExperimentConfig.load(req.config_path)
    if req.seed is not None:
        cfg.master_seed = int(req.seed)
    return cfg


def run_verb(verb, req):
    cfg = load_config(req)
    until = VERB_STAGE[verb]
    root = runner.run(cfg, req.out, until=until)
    stages = list(runner.STAGES[: runner.STAGES.index(until) + 1])
    files = sorted(
        str(p.relative_to(root))
        for stage in stages
        for p in (root / runner.STAGE_DIRS[stage]).rglob("*")
        if p.is_file()
    )
    return JobResponse(
        verb=verb, out=str(root), config_hash=cfg.config_hash(), master_seed=cfg.master_seed, stages=stages, files=files
    )


def run_compare(req):
    grids = runner.compare(req.reports)
    if req.out:
        runner.write_grids(grids, req.out)
    return CompareResponse(grids={m: g.to_dict() for m, g in grids.items()}, out=req.out)


def score_checkpoint(req):
    path = Path(req.checkpoint)
    try:
        model = heads.TrainedModel.from_json(path.read_text())
    except OSError as exc:
        raise InputError(f"cannot read checkpoint {path}: {exc}") from exc
    X = np.asarray(req.features, dtype=float)
    std = None
    if req.mc_passes:
        pred = mcinfer.mc_predict(model, X, mcinfer.McConfig(req.mc_passes, req.seed))
        std = pred.per_pass_scores.std(axis=0).tolist()
    else:
        pred = heads.predict(model, X)
    return ScoreResponse(
        model=model.name,
        head=model.head.kind,
        score=np.asarray(pred.score, dtype=float).tolist(),
        derived_class=np.asarray(pred.derived_class, dtype=int).tolist(),
        score_std=std,
    )


def read_metrics(out, model):
    data = runner.load_metrics(Path(out), model)
    return MetricReport(model=model, metrics=data["metrics"])


def create_app():
    app = FastAPI(title="ordscore", version=__version__)

    @app.exception_handler(OrdscoreError)
    async def _ordscore_error(request: Request, exc: OrdscoreError):
        body = error_body(exc)
        return JSONResponse(status_code=_STATUS.get(body.exit_code, 500), content={"detail": body.model_dump()})

    @app.get("/health")
    def health():
        return {"status": "ok", "version": __version__}

    def _verb_route(verb):
        def handler(req: JobRequest) -> JobResponse:
            return run_verb(verb, req)

        handler.__name__ = f"{verb}_verb"
        app.post(f"/{verb}", response_model=JobResponse)(handler)

    for verb in VERB_STAGE:
        _verb_route(verb)

    @app.post("/compare", response_model=CompareResponse)
    def compare(req: CompareRequest):
        return run_compare(req)

    @app.post("/score", response_model=ScoreResponse)
    def score(req: ScoreRequest):
        return score_checkpoint(req)

    @app.get("/metrics", response_model=MetricReport)
    def metrics(out: str, model: str):
        path = Path(out) / runner.STAGE_DIRS["evaluate"] / f"{model}.json"
        if not path.exists():
            raise ConfigError(f"no metrics for {model!r} under {out}")
        return read_metrics(out, model)

    return app


app = create_app()
