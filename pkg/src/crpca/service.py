"""HTTP front end: POST an experiment config, get the written files and a summary back."""
from __future__ import annotations

from fastapi import FastAPI, HTTPException

from . import experiments
from .errors import ConfigError, NumericalError
from .schemas import KINDS, ExperimentConfig, ExperimentResult

app = FastAPI(title="crpca")


@app.get("/health")
def health() -> dict:
    return {"status": "ok", "experiments": list(KINDS)}


@app.post("/experiments/{kind}", response_model=ExperimentResult)
def run(kind: str, config: ExperimentConfig) -> ExperimentResult:
    if kind not in KINDS:
        raise HTTPException(status_code=404, detail=f"unknown experiment {kind!r}")
    if config.kind is not None and config.kind != kind:
        raise HTTPException(status_code=422, detail=f"config kind {config.kind!r} != {kind!r}")
    config = config.model_copy(update={"kind": kind})
    try:
        return experiments.run_experiment(config)
    except ConfigError as exc:
        raise HTTPException(status_code=422, detail={"error": str(exc), "kind": "config"})
    except NumericalError as exc:
        raise HTTPException(status_code=500, detail={"error": str(exc), "kind": "numerical"})
