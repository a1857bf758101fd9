"""HTTP service wrapping the experiment runners.

One endpoint per command; each accepts an ExperimentConfig body, runs it
synchronously, and returns the RunRecord plus base64-encoded artifact
files.  The service is stateless: models travel inline as checkpoint_b64,
so any client (including the bundled CLI over an in-process transport)
gets byte-identical results for identical requests.
"""

from __future__ import annotations

import base64

from fastapi import FastAPI, HTTPException

from . import __version__
from .experiments import execute
from .schemas import CommandName, ExperimentConfig, RunResponse

app = FastAPI(title="blflab", version=__version__)


@app.get("/healthz")
def healthz():
    return {"status": "ok", "version": __version__}


def _run(config: ExperimentConfig, command: CommandName) -> RunResponse:
    config = config.model_copy(update={"command": command})
    try:
        result = execute(config)
    except (ValueError, FileNotFoundError) as exc:
        raise HTTPException(status_code=400, detail=str(exc)) from exc
    return RunResponse(
        ok=result.record.passed and not result.record.aborted,
        record=result.record,
        artifacts={name: base64.b64encode(blob).decode() for name, blob in result.artifacts.items()},
    )


@app.post("/v1/theorems", response_model=RunResponse)
def theorems(config: ExperimentConfig) -> RunResponse:
    return _run(config, "theorems")


@app.post("/v1/train", response_model=RunResponse)
def train(config: ExperimentConfig) -> RunResponse:
    return _run(config, "train")


@app.post("/v1/evaluate", response_model=RunResponse)
def evaluate(config: ExperimentConfig) -> RunResponse:
    return _run(config, "evaluate")


@app.post("/v1/sweep", response_model=RunResponse)
def sweep(config: ExperimentConfig) -> RunResponse:
    return _run(config, "sweep")


@app.post("/v1/surface", response_model=RunResponse)
def surface(config: ExperimentConfig) -> RunResponse:
    return _run(config, "surface")


@app.post("/v1/opnorms", response_model=RunResponse)
def opnorms(config: ExperimentConfig) -> RunResponse:
    return _run(config, "opnorms")
