"""Pydantic models: experiment configuration, reports, and API payloads.

These are the single validation layer for config files, CLI input, and the
HTTP service. NaN-prone values (averages over an empty subdomain) are
converted to None before they reach a model so reports serialize to strict
JSON.
"""

from __future__ import annotations

from typing import Literal

from pydantic import BaseModel, Field, model_validator

Scheme = Literal["fi", "si", "ms"]
PresetName = Literal["1a", "1b", "2a", "2b"]


class GeometryConfig(BaseModel):
    """Domain, grid resolutions, and inclusion layout.

    When ``circles`` is omitted, a reproducible layout is generated from
    ``seed`` with ``n_circles`` non-overlapping circles.
    """

    domain: tuple[float, float] = (1.0, 1.0)
    fine: tuple[int, int] = (160, 160)
    coarse: tuple[int, int] = (10, 10)
    circles: list[tuple[float, float, float]] | None = None
    seed: int = 7
    n_circles: int = 24


class SolverConfig(BaseModel):
    method: Literal["iterative", "direct"] = "direct"
    preconditioner: Literal["none", "jacobi", "ilu"] = "ilu"
    rel_tol: float = Field(default=1e-10, gt=0, lt=1)
    max_iters: int = Field(default=2000, ge=1)


class CoefficientConfig(BaseModel):
    """Explicit coefficient tables: per species [background, inclusion]."""

    diffusivity: list[tuple[float, float]]
    growth: list[tuple[float, float]]
    competition: list[list[tuple[float, float]]]


class ExperimentConfig(BaseModel):
    geometry: GeometryConfig = Field(default_factory=GeometryConfig)
    scheme: Scheme = "si"
    basis_count: int = Field(default=6, ge=1)
    preset: PresetName | None = "1b"
    coefficients: CoefficientConfig | None = None
    t_max: float | None = Field(default=None, gt=0)
    n_steps: int = Field(default=100, ge=0)
    step_multiplier: int = Field(default=1, ge=1)
    initial_value: float | list[float] = 0.5
    newton_tol: float = Field(default=1e-8, gt=0)
    newton_max_iters: int = Field(default=20, ge=1)
    solver: SolverConfig = Field(default_factory=SolverConfig)
    output_dir: str | None = None
    reference: str | None = None
    snapshot_steps: list[int] = Field(default_factory=list)
    artifact: str | None = None

    @model_validator(mode="after")
    def _check_source_of_coefficients(self):
        if self.preset is None and self.coefficients is None:
            raise ValueError("either a preset or explicit coefficients are required")
        if self.preset is None and self.t_max is None:
            raise ValueError("t_max is required when no preset is used")
        if self.n_steps % self.step_multiplier:
            raise ValueError("step_multiplier must divide n_steps")
        return self


class ExperimentReport(BaseModel):
    scheme: Scheme
    preset: PresetName | None
    n_species: int
    n_cells: int
    dof_fine: int
    dof_coarse: int | None = None
    basis_count: int | None = None  # multiscale runs only
    n_steps: int
    dt: float
    times: list[float]
    background_averages: list[list[float | None]]  # (n_steps+1) rows, L columns
    inclusion_averages: list[list[float | None]]
    errors: list[float] | None = None
    newton_iterations_total: int = 0
    linear_iterations_total: int = 0
    offline_seconds: float = 0.0
    online_seconds: float = 0.0
    outputs: list[str] = Field(default_factory=list)


class SweepRow(BaseModel):
    basis_count: int
    dof_coarse: int
    errors: list[float]
    offline_seconds: float
    online_seconds: float


class SweepReport(BaseModel):
    preset: PresetName | None
    basis_counts: list[int]
    rows: list[SweepRow]
    reference_dof: int
    reference_seconds: float
    fingerprint: str
    outputs: list[str] = Field(default_factory=list)


class BasisReport(BaseModel):
    path: str
    fingerprint: str
    basis_count: int
    dof_coarse: list[int]  # per species
    offline_seconds: float


class CompareReport(BaseModel):
    errors: list[float]
    n_cells: int


class PresetInfo(BaseModel):
    name: PresetName
    t_max: float
    diffusivity: list[tuple[float, float]]
    growth: list[tuple[float, float]]
    competition: list[list[tuple[float, float]]]


class RunRequest(BaseModel):
    config: ExperimentConfig


class SweepRequest(BaseModel):
    config: ExperimentConfig
    basis_counts: list[int] = Field(default_factory=lambda: [1, 2, 4, 6, 8])


class BasisRequest(BaseModel):
    config: ExperimentConfig
    path: str


class CompareRequest(BaseModel):
    run_a: str
    run_b: str


class HealthResponse(BaseModel):
    status: str
    version: str
