"""HTTP service exposing the solver pipelines.

The offline/online split of the multiscale solver suits a persistent
service: basis artifacts built once (POST /basis) can be reused by any number
of reaction configurations via the ``artifact`` config key. All request and
response bodies are the pydantic models from :mod:`rdms.schemas`.
"""

from __future__ import annotations

from fastapi import FastAPI, HTTPException

from . import __version__, bench
from .schemas import (
    BasisReport,
    BasisRequest,
    CompareReport,
    CompareRequest,
    ExperimentReport,
    HealthResponse,
    PresetInfo,
    RunRequest,
    SweepReport,
    SweepRequest,
)

app = FastAPI(
    title="rdms",
    version=__version__,
    description=(
        "Fine-grid and multiscale solvers for multi-species reaction-diffusion "
        "systems in heterogeneous 2-D media"
    ),
)


def _bad_request(exc: Exception) -> HTTPException:
    return HTTPException(status_code=400, detail=str(exc))


@app.get("/health", response_model=HealthResponse)
def health() -> HealthResponse:
    return HealthResponse(status="ok", version=__version__)


@app.get("/presets", response_model=list[PresetInfo])
def presets() -> list[PresetInfo]:
    return bench.preset_catalog()


@app.post("/run", response_model=ExperimentReport)
def run(request: RunRequest) -> ExperimentReport:
    try:
        return bench.run_experiment(request.config)
    except (bench.ExperimentError, ValueError) as exc:
        raise _bad_request(exc) from exc


@app.post("/sweep", response_model=SweepReport)
def sweep(request: SweepRequest) -> SweepReport:
    try:
        return bench.run_sweep(request.config, request.basis_counts)
    except (bench.ExperimentError, ValueError) as exc:
        raise _bad_request(exc) from exc


@app.post("/basis", response_model=BasisReport)
def basis(request: BasisRequest) -> BasisReport:
    try:
        return bench.build_basis(request.config, request.path)
    except (bench.ExperimentError, ValueError) as exc:
        raise _bad_request(exc) from exc


@app.post("/compare", response_model=CompareReport)
def compare(request: CompareRequest) -> CompareReport:
    try:
        return bench.compare_runs(request.run_a, request.run_b)
    except (ValueError, FileNotFoundError) as exc:
        raise _bad_request(exc) from exc
