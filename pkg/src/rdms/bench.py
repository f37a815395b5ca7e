"""Experiment runner: test presets, full solver pipelines, reports, and files.

The four shipped presets pair two reaction configurations with small and
regular diffusion contrasts on a heterogeneous unit square. A run produces
per-step subdomain averages, optional relative-L2 errors against a reference
run, CSV/VTK/JSON outputs, and a serialized final state that later runs can
use as their reference. The sweep builds one offline basis at the largest
requested count and reuses its leading rows for the smaller counts.
"""

from __future__ import annotations

import csv
import logging
import os
import time
from dataclasses import dataclass

import numpy as np

from . import multiscale
from .fvm import CellCoefficients, CoefficientField
from .grid import (
    CoarseGrid,
    FineGrid,
    PartitionOfUnity,
    SubdomainMap,
    build_coarse_grid,
    build_partition_of_unity,
    build_structured_grid,
    generate_inclusions,
    geometry_fingerprint,
    mark_inclusions,
)
from .linalg import LinearSolveSpec
from .metrics import compute_averages, compute_relative_l2  # noqa: F401  (re-exported API)
from .schemas import (
    BasisReport,
    CompareReport,
    ExperimentConfig,
    ExperimentReport,
    PresetInfo,
    SweepReport,
    SweepRow,
)
from .timestepping import TimeSteppingConfig, solve_transient
from .vtkio import write_vtk_cell_fields

logger = logging.getLogger(__name__)

SMALL_DIFFUSIVITY = [(1e-4, 1e-2), (1e-2, 1e-4)]
REGULAR_DIFFUSIVITY = [(1e-3, 1e-1), (1e-1, 1e-3)]
GROWTH = [(0.15, 0.1), (0.1, 0.15)]
COMPETITION_TEST1 = [
    [(0.0, 0.0), (0.055, 0.05)],
    [(0.05, 0.055), (0.0, 0.0)],
]
COMPETITION_TEST2 = [
    [(0.0, 0.0), (0.15, 0.01)],
    [(0.01, 0.075), (0.0, 0.0)],
]

PRESETS: dict[str, PresetInfo] = {
    name: PresetInfo(
        name=name,
        t_max=50.0 if name.startswith("1") else 150.0,
        diffusivity=SMALL_DIFFUSIVITY if name.endswith("a") else REGULAR_DIFFUSIVITY,
        growth=GROWTH,
        competition=COMPETITION_TEST1 if name.startswith("1") else COMPETITION_TEST2,
    )
    for name in ("1a", "1b", "2a", "2b")
}


class ExperimentError(RuntimeError):
    """A pipeline stage failed; carries the stage name."""

    def __init__(self, stage: str, message: str):
        super().__init__(f"stage {stage!r}: {message}")
        self.stage = stage


@dataclass
class ExperimentSetup:
    """Assembled geometry and coefficients shared by the solver pipelines."""

    config: ExperimentConfig
    grid: FineGrid
    subdomains: SubdomainMap
    coarse: CoarseGrid | None
    pou: PartitionOfUnity | None
    field: CoefficientField
    coeff: CellCoefficients
    t_max: float
    dt: float
    n_steps: int

    @property
    def fingerprint(self) -> str:
        return geometry_fingerprint(self.grid, self.subdomains)


def resolve_coefficients(config: ExperimentConfig) -> tuple[CoefficientField, float]:
    """Expand the preset (or explicit tables) into a coefficient field."""
    if config.coefficients is not None:
        tables = config.coefficients
        t_max = config.t_max
        if t_max is None and config.preset is not None:
            t_max = PRESETS[config.preset].t_max
    else:
        preset = PRESETS[config.preset]
        tables = preset
        t_max = config.t_max if config.t_max is not None else preset.t_max
    field = CoefficientField(
        diffusivity=np.asarray(tables.diffusivity, dtype=float),
        growth=np.asarray(tables.growth, dtype=float),
        competition=np.asarray(tables.competition, dtype=float),
    )
    return field, float(t_max)


def build_setup(config: ExperimentConfig, need_coarse: bool | None = None) -> ExperimentSetup:
    """Construct grid, labels, coarse overlay, and coefficients for a config."""
    geo = config.geometry
    grid = build_structured_grid(geo.fine[0], geo.fine[1], geo.domain[0], geo.domain[1])
    circles = geo.circles
    if circles is None:
        circles = generate_inclusions(geo.seed, count=geo.n_circles, extent=geo.domain)
    subdomains = mark_inclusions(grid, circles)

    coarse = pou = None
    if need_coarse or (need_coarse is None and config.scheme == "ms"):
        coarse = build_coarse_grid(grid, geo.coarse[0], geo.coarse[1])
        pou = build_partition_of_unity(coarse, grid)

    field, t_max = resolve_coefficients(config)
    coeff = CellCoefficients.from_field(field, subdomains.labels)

    n_eff = config.n_steps // config.step_multiplier
    dt = t_max / n_eff if n_eff else t_max
    return ExperimentSetup(
        config=config,
        grid=grid,
        subdomains=subdomains,
        coarse=coarse,
        pou=pou,
        field=field,
        coeff=coeff,
        t_max=t_max,
        dt=dt,
        n_steps=n_eff,
    )


def _timestepping_config(setup: ExperimentSetup) -> TimeSteppingConfig:
    cfg = setup.config
    return TimeSteppingConfig(
        dt=setup.dt,
        n_steps=setup.n_steps,
        newton_tol=cfg.newton_tol,
        newton_max_iters=cfg.newton_max_iters,
        linear=LinearSolveSpec(
            method=cfg.solver.method,
            preconditioner=cfg.solver.preconditioner,
            rel_tol=cfg.solver.rel_tol,
            max_iters=cfg.solver.max_iters,
        ),
    )


def _initial_values(config: ExperimentConfig, n_species: int) -> np.ndarray:
    vals = np.atleast_1d(np.asarray(config.initial_value, dtype=float))
    if vals.size == 1:
        vals = np.full(n_species, vals[0])
    if vals.size != n_species:
        raise ValueError(
            f"initial_value has {vals.size} entries for {n_species} species"
        )
    return vals


def _obtain_offline(setup: ExperimentSetup, basis_count: int) -> tuple[multiscale.OfflineBasis, float]:
    """Load the offline basis from the configured artifact, or build it.

    A freshly built basis is saved to the artifact path when one is given.
    Loaded artifacts must match the geometry/diffusivity fingerprint and
    provide at least ``basis_count`` functions per node.
    """
    cfg = setup.config
    expected = multiscale.offline_fingerprint(
        setup.grid, setup.subdomains, setup.coarse, setup.field.diffusivity
    )
    t0 = time.perf_counter()
    if cfg.artifact and os.path.exists(cfg.artifact):
        basis = multiscale.load_offline(cfg.artifact, expected_fingerprint=expected)
        if basis.basis_count < basis_count:
            raise ValueError(
                f"artifact provides {basis.basis_count} basis functions, "
                f"{basis_count} requested"
            )
        logger.info("reusing offline basis from %s", cfg.artifact)
        basis = multiscale.truncate_offline(basis, basis_count)
    else:
        basis = multiscale.build_offline(
            setup.grid, setup.coarse, setup.pou, setup.field, setup.subdomains, basis_count
        )
        if cfg.artifact:
            multiscale.save_offline(cfg.artifact, basis)
            logger.info("saved offline basis to %s", cfg.artifact)
    return basis, time.perf_counter() - t0


class _OutputTracker:
    """Records written files so a failed run can remove partial outputs."""

    def __init__(self, out_dir: str | None):
        self.out_dir = out_dir
        self.created_dir = False
        self.written: list[str] = []
        if out_dir and not os.path.isdir(out_dir):
            os.makedirs(out_dir, exist_ok=True)
            self.created_dir = True

    def path(self, name: str) -> str:
        full = os.path.join(self.out_dir, name)
        self.written.append(full)
        return full

    def cleanup(self) -> None:
        for p in self.written:
            try:
                os.unlink(p)
            except OSError:
                pass
        if self.created_dir:
            try:
                os.rmdir(self.out_dir)
            except OSError:
                pass


def _fmt(x) -> str:
    return f"{float(x):.17g}"


def _averages_to_lists(averages: np.ndarray, column: int) -> list[list[float | None]]:
    out = []
    for row in averages[:, :, column]:
        out.append([None if not np.isfinite(v) else float(v) for v in row])
    return out


def _write_averages_csv(path, averages: np.ndarray, dt: float) -> None:
    n_species = averages.shape[1]
    with open(path, "w", newline="") as fp:
        writer = csv.writer(fp)
        header = ["step", "time"]
        for k in range(n_species):
            header += [f"u{k + 1}_background", f"u{k + 1}_inclusion"]
        writer.writerow(header)
        for step in range(averages.shape[0]):
            row = [step, _fmt(step * dt)]
            for k in range(n_species):
                row += [_fmt(averages[step, k, 0]), _fmt(averages[step, k, 1])]
            writer.writerow(row)


def _write_errors_csv(path, rows: list[dict], n_species: int) -> None:
    with open(path, "w", newline="") as fp:
        writer = csv.writer(fp)
        header = ["scheme", "basis_count"]
        header += [f"e{k + 1}" for k in range(n_species)]
        header += ["dof", "offline_seconds", "online_seconds"]
        writer.writerow(header)
        for row in rows:
            errors = row.get("errors")
            writer.writerow(
                [
                    row["scheme"],
                    row.get("basis_count", ""),
                    *(
                        [_fmt(e) for e in errors]
                        if errors is not None
                        else [""] * n_species
                    ),
                    row["dof"],
                    _fmt(row.get("offline_seconds", 0.0)),
                    _fmt(row["online_seconds"]),
                ]
            )


def write_outputs(
    report: ExperimentReport,
    snapshots: dict[int, np.ndarray],
    grid: FineGrid,
    out_dir: str,
    tracker: _OutputTracker | None = None,
) -> list[str]:
    """Write a run's tables and snapshot files; returns the written paths.

    Produces averages.csv (one row per time level), a one-row errors.csv,
    and one legacy VTK file per requested snapshot step. Whether error
    columns are filled depends on the report having a reference comparison.
    """
    tracker = tracker or _OutputTracker(out_dir)
    averages = np.stack(
        [
            np.asarray(
                [[np.nan if v is None else v for v in row] for row in report.background_averages]
            ),
            np.asarray(
                [[np.nan if v is None else v for v in row] for row in report.inclusion_averages]
            ),
        ],
        axis=2,
    )
    _write_averages_csv(tracker.path("averages.csv"), averages, report.dt)
    _write_errors_csv(
        tracker.path("errors.csv"),
        [
            {
                "scheme": report.scheme,
                "basis_count": report.basis_count if report.basis_count is not None else "",
                "errors": report.errors,
                "dof": report.dof_coarse if report.dof_coarse is not None else report.dof_fine,
                "offline_seconds": report.offline_seconds,
                "online_seconds": report.online_seconds,
            }
        ],
        report.n_species,
    )
    for step, u in sorted(snapshots.items()):
        fields = {f"u{k + 1}": u[k] for k in range(u.shape[0])}
        write_vtk_cell_fields(tracker.path(f"state_{step:04d}.vtk"), grid, fields)
    return list(tracker.written)


def _save_final_state(path, setup: ExperimentSetup, u: np.ndarray, scheme: str) -> None:
    np.savez(
        path,
        u=u,
        t_final=setup.t_max,
        nx=setup.grid.nx,
        ny=setup.grid.ny,
        extent=np.asarray(setup.grid.domain_extent),
        fingerprint=setup.fingerprint,
        scheme=scheme,
    )


def load_final_state(path) -> dict:
    """Load a run's serialized final state (a run directory or .npz path)."""
    if os.path.isdir(path):
        path = os.path.join(path, "final_state.npz")
    with np.load(path, allow_pickle=False) as data:
        return {
            "u": data["u"],
            "t_final": float(data["t_final"]),
            "nx": int(data["nx"]),
            "ny": int(data["ny"]),
            "extent": tuple(data["extent"]),
            "fingerprint": str(data["fingerprint"]),
            "scheme": str(data["scheme"]),
        }


def _reference_errors(setup: ExperimentSetup, u: np.ndarray, reference: str) -> list[float]:
    ref = load_final_state(reference)
    if ref["u"].shape != u.shape:
        raise ValueError(
            f"reference field shape {ref['u'].shape} does not match run {u.shape}"
        )
    if ref["fingerprint"] != setup.fingerprint:
        raise ValueError("reference run used a different geometry")
    return [
        compute_relative_l2(u[k], ref["u"][k], setup.grid) for k in range(u.shape[0])
    ]


def run_experiment(config: ExperimentConfig) -> ExperimentReport:
    """Full pipeline: setup, solve, averages, errors, and output files."""
    stage = "setup"
    tracker = None
    try:
        setup = build_setup(config)
        ts_cfg = _timestepping_config(setup)
        u0 = _initial_values(config, setup.field.n_species)

        snapshots: dict[int, np.ndarray] = {}
        wanted = set(config.snapshot_steps)

        def hook(step: int, u: np.ndarray) -> None:
            if step in wanted:
                snapshots[step] = u.copy()

        offline_seconds = 0.0
        dof_coarse = None
        newton_total = linear_total = 0
        stage = "solve"
        if config.scheme in ("fi", "si"):
            result = solve_transient(
                config.scheme,
                setup.grid,
                setup.subdomains,
                setup.coeff,
                ts_cfg,
                u0,
                snapshot_hook=hook if wanted else None,
            )
            u_final = result.state.u
            reports = result.reports
            averages = result.averages
            online_seconds = result.wall_time
            dof_fine = setup.grid.n_cells
        else:
            stage = "offline"
            basis, offline_seconds = _obtain_offline(setup, config.basis_count)
            dof_coarse = max(sb.projection.dof for sb in basis.species)
            stage = "solve"
            result = multiscale.solve_transient_ms(
                setup.grid,
                setup.subdomains,
                setup.coeff,
                basis,
                ts_cfg,
                u0,
                snapshot_hook=hook if wanted else None,
            )
            u_final = result.u_fine
            reports = result.reports
            averages = result.averages
            online_seconds = result.wall_time
            dof_fine = setup.grid.n_cells
        newton_total = sum(r.newton_iterations for r in reports)
        linear_total = sum(r.linear_iterations for r in reports)

        stage = "errors"
        errors = None
        if config.reference:
            errors = _reference_errors(setup, u_final, config.reference)

        report = ExperimentReport(
            scheme=config.scheme,
            preset=config.preset,
            n_species=setup.field.n_species,
            n_cells=setup.grid.n_cells,
            dof_fine=dof_fine,
            dof_coarse=dof_coarse,
            basis_count=config.basis_count if config.scheme == "ms" else None,
            n_steps=setup.n_steps,
            dt=setup.dt,
            times=[float(s * setup.dt) for s in range(setup.n_steps + 1)],
            background_averages=_averages_to_lists(averages, 0),
            inclusion_averages=_averages_to_lists(averages, 1),
            errors=errors,
            newton_iterations_total=newton_total,
            linear_iterations_total=linear_total,
            offline_seconds=offline_seconds,
            online_seconds=online_seconds,
        )

        stage = "outputs"
        if config.output_dir:
            tracker = _OutputTracker(config.output_dir)
            write_outputs(report, snapshots, setup.grid, config.output_dir, tracker)
            _save_final_state(tracker.path("final_state.npz"), setup, u_final, config.scheme)
            report.outputs = list(tracker.written)
            with open(os.path.join(config.output_dir, "report.json"), "w") as fp:
                fp.write(report.model_dump_json(indent=2))
            report.outputs.append(os.path.join(config.output_dir, "report.json"))
        return report
    except ExperimentError:
        raise
    except Exception as exc:
        if tracker is not None:
            tracker.cleanup()
        raise ExperimentError(stage, str(exc)) from exc


def run_sweep(config: ExperimentConfig, basis_counts: list[int]) -> SweepReport:
    """Basis-count sweep against a fine semi-implicit reference.

    The offline stage is built once at the largest requested count; smaller
    counts reuse its leading rows, so the sweep's coarse spaces are nested.
    """
    if not basis_counts:
        raise ExperimentError("setup", "basis_counts must be non-empty")
    basis_counts = sorted(set(int(m) for m in basis_counts))
    stage = "setup"
    tracker = None
    try:
        setup = build_setup(config, need_coarse=True)
        ts_cfg = _timestepping_config(setup)
        u0 = _initial_values(config, setup.field.n_species)

        stage = "reference"
        reference = solve_transient(
            "si", setup.grid, setup.subdomains, setup.coeff, ts_cfg, u0
        )
        u_ref = reference.state.u

        stage = "offline"
        basis_full, offline_seconds = _obtain_offline(setup, max(basis_counts))

        stage = "online"
        rows: list[SweepRow] = []
        for m in basis_counts:
            t0 = time.perf_counter()
            basis = multiscale.truncate_offline(basis_full, m)
            truncate_seconds = time.perf_counter() - t0
            result = multiscale.solve_transient_ms(
                setup.grid, setup.subdomains, setup.coeff, basis, ts_cfg, u0
            )
            errors = [
                compute_relative_l2(result.u_fine[k], u_ref[k], setup.grid)
                for k in range(u_ref.shape[0])
            ]
            rows.append(
                SweepRow(
                    basis_count=m,
                    dof_coarse=max(sb.projection.dof for sb in basis.species),
                    errors=errors,
                    offline_seconds=truncate_seconds,
                    online_seconds=result.wall_time,
                )
            )

        stage = "outputs"
        outputs: list[str] = []
        if config.output_dir:
            tracker = _OutputTracker(config.output_dir)
            err_rows = [
                {
                    "scheme": "si",
                    "basis_count": "",
                    "errors": None,
                    "dof": setup.grid.n_cells,
                    "offline_seconds": 0.0,
                    "online_seconds": reference.wall_time,
                }
            ] + [
                {
                    "scheme": "ms",
                    "basis_count": row.basis_count,
                    "errors": row.errors,
                    "dof": row.dof_coarse,
                    "offline_seconds": row.offline_seconds,
                    "online_seconds": row.online_seconds,
                }
                for row in rows
            ]
            _write_errors_csv(tracker.path("errors.csv"), err_rows, setup.field.n_species)
            outputs = list(tracker.written)

        report = SweepReport(
            preset=config.preset,
            basis_counts=basis_counts,
            rows=rows,
            reference_dof=setup.grid.n_cells,
            reference_seconds=reference.wall_time,
            fingerprint=multiscale.offline_fingerprint(
                setup.grid, setup.subdomains, setup.coarse, setup.field.diffusivity
            ),
            outputs=outputs,
        )
        if config.output_dir:
            with open(os.path.join(config.output_dir, "sweep.json"), "w") as fp:
                fp.write(report.model_dump_json(indent=2))
            report.outputs.append(os.path.join(config.output_dir, "sweep.json"))
        return report
    except ExperimentError:
        raise
    except Exception as exc:
        if tracker is not None:
            tracker.cleanup()
        raise ExperimentError(stage, str(exc)) from exc


def build_basis(config: ExperimentConfig, path: str) -> BasisReport:
    """Offline stage only: build and serialize the multiscale basis."""
    try:
        setup = build_setup(config, need_coarse=True)
        t0 = time.perf_counter()
        basis = multiscale.build_offline(
            setup.grid,
            setup.coarse,
            setup.pou,
            setup.field,
            setup.subdomains,
            config.basis_count,
        )
        offline_seconds = time.perf_counter() - t0
        multiscale.save_offline(path, basis)
        return BasisReport(
            path=str(path),
            fingerprint=basis.fingerprint,
            basis_count=basis.basis_count,
            dof_coarse=[sb.projection.dof for sb in basis.species],
            offline_seconds=offline_seconds,
        )
    except ExperimentError:
        raise
    except Exception as exc:
        raise ExperimentError("offline", str(exc)) from exc


def compare_runs(run_a: str, run_b: str) -> CompareReport:
    """Relative L2 errors of run A's final fields against run B's."""
    a = load_final_state(run_a)
    b = load_final_state(run_b)
    if a["u"].shape != b["u"].shape:
        raise ValueError("runs have different species/cell counts")
    if a["fingerprint"] != b["fingerprint"]:
        raise ValueError("runs used different geometries")
    grid = build_structured_grid(a["nx"], a["ny"], a["extent"][0], a["extent"][1])
    errors = [
        compute_relative_l2(a["u"][k], b["u"][k], grid) for k in range(a["u"].shape[0])
    ]
    return CompareReport(errors=errors, n_cells=grid.n_cells)


def preset_catalog() -> list[PresetInfo]:
    return [PRESETS[name] for name in ("1a", "1b", "2a", "2b")]
