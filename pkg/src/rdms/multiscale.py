"""Coarse-space model reduction built from local spectral basis functions.

Offline, each coarse node's patch gets a local zero-flux diffusion matrix
whose smallest eigenvectors, weighted by the node's partition-of-unity hat,
become rows of a projection matrix P (one per species). The projected
operators A_H = P A P^T and M_H = P M P^T define a small coarse system that
is fixed for the whole simulation. Online, every step reconstructs the fine
field through P^T, evaluates the reaction there, projects it back, and
solves the coarse system. The basis depends only on the diffusion operator,
never on reaction coefficients or step size.
"""

from __future__ import annotations

import hashlib
import json
import time
from dataclasses import dataclass, field

import numpy as np
import scipy.sparse as sp

from .fvm import (
    CellCoefficients,
    CoefficientField,
    assemble_diffusion,
    assemble_mass,
    assemble_transmissibilities,
    reaction_rates,
)
from .grid import CoarseGrid, FineGrid, PartitionOfUnity, SubdomainMap, geometry_fingerprint
from .linalg import BoundSolver, LinearSolveError, LinearSolveSpec, eig_sym_smallest
from .metrics import SubdomainAverager
from .timestepping import NonFiniteStateError, StepReport, TimeSteppingConfig, TimeSteppingError

ARTIFACT_FORMAT_VERSION = 1


@dataclass(frozen=True)
class LocalSpectralResult:
    """Ascending eigenpairs of one local domain's diffusion matrix."""

    domain_index: int
    eigenvalues: np.ndarray  # (m,)
    eigenvectors: np.ndarray  # (n_local_cells, m), unit-norm columns


@dataclass(frozen=True)
class ProjectionMatrix:
    """Sparse map from coarse coefficients to fine cells, one row per basis.

    Row r is the partition-of-unity hat of node ``row_node[r]`` multiplied
    entrywise with that node's eigenvector ``row_basis[r]``.
    """

    matrix: sp.csr_matrix  # (dof, n_fine_cells)
    row_node: np.ndarray
    row_basis: np.ndarray

    @property
    def dof(self) -> int:
        return self.matrix.shape[0]


@dataclass(frozen=True)
class CoarseSystem:
    diffusion: sp.csr_matrix  # A_H
    mass: sp.csr_matrix  # M_H


@dataclass
class SpeciesBasis:
    projection: ProjectionMatrix
    coarse: CoarseSystem
    eigenvalues: list[np.ndarray]  # per coarse node


@dataclass
class OfflineBasis:
    """Everything the online stage needs, reusable across reaction configs."""

    fingerprint: str
    basis_count: int
    species: list[SpeciesBasis]

    @property
    def n_species(self) -> int:
        return len(self.species)


def assemble_local_diffusion(
    grid: FineGrid, transmissibilities: np.ndarray, cells: np.ndarray
) -> sp.csr_matrix:
    """Restriction of the TPFA stencil to a patch, dropping exterior faces.

    Dropping the faces that cross the patch boundary imposes a local
    zero-flux condition, so the restricted matrix keeps zero row sums.
    """
    cells = np.asarray(cells)
    if cells.size == 0:
        raise ValueError("local domain is empty")
    local = np.full(grid.n_cells, -1, dtype=np.intp)
    local[cells] = np.arange(cells.size)
    li = local[grid.face_i]
    lj = local[grid.face_j]
    keep = (li >= 0) & (lj >= 0)
    li, lj = li[keep], lj[keep]
    t = np.asarray(transmissibilities)[keep]
    n = cells.size
    rows = np.concatenate([li, lj, li, lj])
    cols = np.concatenate([lj, li, li, lj])
    vals = np.concatenate([-t, -t, t, t])
    a = sp.coo_matrix((vals, (rows, cols)), shape=(n, n)).tocsr()
    a.sum_duplicates()
    a.sort_indices()
    return a


def solve_local_spectral(
    a_local: sp.spmatrix | np.ndarray, m: int, domain_index: int = 0
) -> LocalSpectralResult:
    """Smallest-m eigenpairs of a local diffusion matrix (dense backend)."""
    dense = a_local.toarray() if sp.issparse(a_local) else np.asarray(a_local, dtype=float)
    if m > dense.shape[0]:
        raise ValueError(
            f"requested {m} basis functions from a {dense.shape[0]}-cell domain"
        )
    values, vectors = eig_sym_smallest(dense, m)
    return LocalSpectralResult(domain_index, values, vectors)


def build_projection(
    results: list[LocalSpectralResult], pou: PartitionOfUnity, n_fine_cells: int
) -> ProjectionMatrix:
    """Assemble P from per-node eigenvectors, node-major then basis-minor."""
    rows, cols, vals = [], [], []
    row_node, row_basis = [], []
    r = 0
    for res in results:
        cells, weights = pou.node_weights(res.domain_index)
        for l in range(res.eigenvalues.size):
            rows.append(np.full(cells.size, r))
            cols.append(cells)
            vals.append(weights * res.eigenvectors[:, l])
            row_node.append(res.domain_index)
            row_basis.append(l)
            r += 1
    matrix = sp.coo_matrix(
        (np.concatenate(vals), (np.concatenate(rows), np.concatenate(cols))),
        shape=(r, n_fine_cells),
    ).tocsr()
    matrix.sort_indices()
    return ProjectionMatrix(
        matrix=matrix,
        row_node=np.asarray(row_node),
        row_basis=np.asarray(row_basis),
    )


def assemble_coarse(
    projection: ProjectionMatrix, diffusion: sp.spmatrix, mass: sp.spmatrix
) -> CoarseSystem:
    """Galerkin triple products A_H = P A P^T and M_H = P M P^T."""
    p = projection.matrix
    a_h = (p @ diffusion @ p.T).tocsr()
    m_h = (p @ mass @ p.T).tocsr()
    a_h.sort_indices()
    m_h.sort_indices()
    return CoarseSystem(diffusion=a_h, mass=m_h)


def project_initial(
    u0: np.ndarray,
    projection: ProjectionMatrix,
    mass: sp.spmatrix,
    mass_coarse: sp.spmatrix,
) -> np.ndarray:
    """Mass-weighted projection: solve M_H u_H = P M u0.

    This is the least-squares-in-mass-norm coarse representation, so fields
    already in the coarse space (constants in particular) are reproduced.
    """
    rhs = projection.matrix @ (mass @ np.asarray(u0, dtype=float))
    solver = BoundSolver(mass_coarse.tocsr(), LinearSolveSpec(method="direct"))
    u_h, _ = solver.solve(rhs)
    return u_h


def reconstruct_fine(u_h: np.ndarray, projection: ProjectionMatrix) -> np.ndarray:
    """Fine-grid field represented by a coarse coefficient vector."""
    return projection.matrix.T @ np.asarray(u_h, dtype=float)


def offline_fingerprint(
    grid: FineGrid,
    subdomains: SubdomainMap,
    coarse: CoarseGrid,
    diffusivity: np.ndarray,
) -> str:
    """Hash of everything the offline stage depends on (reaction excluded)."""
    payload = {
        "geometry": geometry_fingerprint(grid, subdomains),
        "coarse": [coarse.kx, coarse.ky],
        "diffusivity": np.asarray(diffusivity, dtype=float).tolist(),
    }
    return hashlib.sha256(json.dumps(payload, sort_keys=True).encode()).hexdigest()


def build_offline(
    grid: FineGrid,
    coarse: CoarseGrid,
    pou: PartitionOfUnity,
    field_values: CoefficientField,
    subdomains: SubdomainMap,
    basis_count: int,
) -> OfflineBasis:
    """Solve all local spectral problems and assemble per-species coarse systems.

    Truncated boundary patches smaller than ``basis_count`` contribute as many
    basis functions as they have cells.
    """
    if basis_count < 1:
        raise ValueError("basis_count must be at least 1")
    coeff = CellCoefficients.from_field(field_values, subdomains.labels)
    mass = assemble_mass(grid)
    species: list[SpeciesBasis] = []
    for k in range(field_values.n_species):
        t = assemble_transmissibilities(grid, coeff, k)
        diffusion = assemble_diffusion(grid, t)
        results = []
        for node in range(coarse.n_nodes):
            cells = coarse.node_fine_cells[node]
            a_local = assemble_local_diffusion(grid, t, cells)
            m_node = min(basis_count, cells.size)
            results.append(solve_local_spectral(a_local, m_node, domain_index=node))
        projection = build_projection(results, pou, grid.n_cells)
        coarse_sys = assemble_coarse(projection, diffusion, mass)
        species.append(
            SpeciesBasis(
                projection=projection,
                coarse=coarse_sys,
                eigenvalues=[res.eigenvalues for res in results],
            )
        )
    return OfflineBasis(
        fingerprint=offline_fingerprint(grid, subdomains, coarse, field_values.diffusivity),
        basis_count=basis_count,
        species=species,
    )


def truncate_offline(basis: OfflineBasis, basis_count: int) -> OfflineBasis:
    """Reduce to the first ``basis_count`` basis functions of every node.

    The truncated space is nested inside the original one, which makes
    accuracy monotone across a basis-count sweep. Eigenvalues match a direct
    rebuild at the smaller count; inside degenerate eigenvalue clusters the
    individual vectors may differ from a direct rebuild by a rotation.
    """
    if basis_count > basis.basis_count:
        raise ValueError(
            f"cannot truncate to {basis_count} from a basis built with "
            f"{basis.basis_count}"
        )
    if basis_count == basis.basis_count:
        return basis
    species = []
    for sb in basis.species:
        keep = sb.projection.row_basis < basis_count
        matrix = sb.projection.matrix[keep]
        projection = ProjectionMatrix(
            matrix=matrix.tocsr(),
            row_node=sb.projection.row_node[keep],
            row_basis=sb.projection.row_basis[keep],
        )
        coarse_sys = CoarseSystem(
            diffusion=sb.coarse.diffusion[keep][:, keep].tocsr(),
            mass=sb.coarse.mass[keep][:, keep].tocsr(),
        )
        species.append(
            SpeciesBasis(
                projection=projection,
                coarse=coarse_sys,
                eigenvalues=[ev[:basis_count] for ev in sb.eigenvalues],
            )
        )
    return OfflineBasis(
        fingerprint=basis.fingerprint, basis_count=basis_count, species=species
    )


def save_offline(path, basis: OfflineBasis) -> None:
    """Serialize an offline basis to a versioned .npz artifact."""
    payload = {
        "format_version": np.int64(ARTIFACT_FORMAT_VERSION),
        "fingerprint": basis.fingerprint,
        "basis_count": np.int64(basis.basis_count),
        "n_species": np.int64(basis.n_species),
    }
    for k, sb in enumerate(basis.species):
        p = sb.projection.matrix.tocsr()
        payload[f"p{k}_data"] = p.data
        payload[f"p{k}_indices"] = p.indices
        payload[f"p{k}_indptr"] = p.indptr
        payload[f"p{k}_shape"] = np.asarray(p.shape)
        payload[f"p{k}_row_node"] = sb.projection.row_node
        payload[f"p{k}_row_basis"] = sb.projection.row_basis
        for name, mat in (("ah", sb.coarse.diffusion), ("mh", sb.coarse.mass)):
            m = mat.tocsr()
            payload[f"{name}{k}_data"] = m.data
            payload[f"{name}{k}_indices"] = m.indices
            payload[f"{name}{k}_indptr"] = m.indptr
            payload[f"{name}{k}_shape"] = np.asarray(m.shape)
        payload[f"eig{k}_values"] = np.concatenate(sb.eigenvalues)
        payload[f"eig{k}_offsets"] = np.cumsum([0] + [ev.size for ev in sb.eigenvalues])
    np.savez(path, **payload)


def _load_csr(data: dict, prefix: str) -> sp.csr_matrix:
    return sp.csr_matrix(
        (data[f"{prefix}_data"], data[f"{prefix}_indices"], data[f"{prefix}_indptr"]),
        shape=tuple(data[f"{prefix}_shape"]),
    )


def load_offline(path, expected_fingerprint: str | None = None) -> OfflineBasis:
    """Load a serialized offline basis, refusing fingerprint mismatches."""
    with np.load(path, allow_pickle=False) as data:
        version = int(data["format_version"])
        if version != ARTIFACT_FORMAT_VERSION:
            raise ValueError(f"unsupported artifact format version {version}")
        fingerprint = str(data["fingerprint"])
        if expected_fingerprint is not None and fingerprint != expected_fingerprint:
            raise ValueError(
                "offline artifact does not match the requested geometry/diffusivity "
                f"(artifact {fingerprint[:12]}..., expected {expected_fingerprint[:12]}...)"
            )
        species = []
        for k in range(int(data["n_species"])):
            offsets = data[f"eig{k}_offsets"]
            values = data[f"eig{k}_values"]
            eigenvalues = [
                values[offsets[i] : offsets[i + 1]] for i in range(offsets.size - 1)
            ]
            species.append(
                SpeciesBasis(
                    projection=ProjectionMatrix(
                        matrix=_load_csr(data, f"p{k}"),
                        row_node=data[f"p{k}_row_node"],
                        row_basis=data[f"p{k}_row_basis"],
                    ),
                    coarse=CoarseSystem(
                        diffusion=_load_csr(data, f"ah{k}"),
                        mass=_load_csr(data, f"mh{k}"),
                    ),
                    eigenvalues=eigenvalues,
                )
            )
        return OfflineBasis(
            fingerprint=fingerprint,
            basis_count=int(data["basis_count"]),
            species=species,
        )


@dataclass
class MsTransientResult:
    u_fine: np.ndarray  # (L, N) reconstructed final field
    u_coarse: list[np.ndarray]
    reports: list[StepReport]
    averages: np.ndarray  # (n_steps+1, L, 2)
    wall_time: float


class MultiscaleStepper:
    """Online stage: coarse solves with fine-grid reaction reconstruction.

    Every step reconstructs all species on the fine grid from the previous
    coarse state, evaluates the reaction there, projects it to the coarse
    space, and solves the fixed system (M_H/dt + A_H) per species.
    """

    def __init__(
        self,
        grid: FineGrid,
        coeff: CellCoefficients,
        basis: OfflineBasis,
        cfg: TimeSteppingConfig,
    ):
        if basis.n_species != coeff.n_species:
            raise ValueError("offline basis species count does not match coefficients")
        self.volumes = grid.cell_volume
        self.coeff = coeff
        self.cfg = cfg
        self.basis = basis
        self.solvers = [
            BoundSolver(
                sb.coarse.mass / cfg.dt + sb.coarse.diffusion,
                cfg.linear,
                symmetric=True,
            )
            for sb in basis.species
        ]
        # cached CSR transposes: reconstruction runs every step
        self._p_t = [sb.projection.matrix.T.tocsr() for sb in basis.species]

    def reconstruct(self, u_h: list[np.ndarray]) -> np.ndarray:
        return np.vstack([self._p_t[k] @ u_h[k] for k in range(len(u_h))])

    def step(
        self, u_h: list[np.ndarray], u_fine_prev: np.ndarray
    ) -> tuple[list[np.ndarray], np.ndarray, StepReport]:
        t0 = time.perf_counter()
        rates = reaction_rates(u_fine_prev, self.coeff) * self.volumes
        u_h_new = []
        linear_total = 0
        for k, sb in enumerate(self.basis.species):
            rhs = sb.coarse.mass @ u_h[k] / self.cfg.dt + sb.projection.matrix @ rates[k]
            try:
                x, iters = self.solvers[k].solve(rhs)
            except LinearSolveError as exc:
                err = TimeSteppingError(f"species {k}: {exc}")
                err.species = k
                raise err from exc
            u_h_new.append(x)
            linear_total += iters
        u_fine = self.reconstruct(u_h_new)
        if not np.isfinite(u_fine).all():
            raise NonFiniteStateError(
                int(np.flatnonzero(~np.isfinite(u_fine).all(axis=1))[0])
            )
        return u_h_new, u_fine, StepReport(0, linear_total, 0.0, time.perf_counter() - t0)


def step_ms(
    u_h: list[np.ndarray],
    grid: FineGrid,
    coeff: CellCoefficients,
    basis: OfflineBasis,
    cfg: TimeSteppingConfig,
) -> tuple[list[np.ndarray], np.ndarray, StepReport]:
    """Single multiscale step (functional form; builds a fresh stepper)."""
    stepper = MultiscaleStepper(grid, coeff, basis, cfg)
    return stepper.step(u_h, stepper.reconstruct(u_h))


def solve_transient_ms(
    grid: FineGrid,
    subdomains: SubdomainMap,
    coeff: CellCoefficients,
    basis: OfflineBasis,
    cfg: TimeSteppingConfig,
    initial,
    snapshot_hook=None,
) -> MsTransientResult:
    """Advance the coarse system cfg.n_steps times from a fine initial field."""
    n = grid.n_cells
    initial = np.asarray(initial, dtype=float)
    if initial.ndim == 1 and initial.size == coeff.n_species:
        u0 = np.repeat(initial[:, None], n, axis=1)
    else:
        u0 = np.atleast_2d(initial)

    t0 = time.perf_counter()
    mass = assemble_mass(grid)
    stepper = MultiscaleStepper(grid, coeff, basis, cfg)
    u_h = [
        project_initial(u0[k], sb.projection, mass, sb.coarse.mass)
        for k, sb in enumerate(basis.species)
    ]
    u_fine = stepper.reconstruct(u_h)
    setup_time = time.perf_counter() - t0

    averager = SubdomainAverager(grid, subdomains)
    averages = np.empty((cfg.n_steps + 1, coeff.n_species, 2))
    averages[0] = averager(u_fine)
    if snapshot_hook is not None:
        snapshot_hook(0, u_fine)

    reports: list[StepReport] = []
    for step in range(1, cfg.n_steps + 1):
        try:
            u_h, u_fine, report = stepper.step(u_h, u_fine)
        except Exception as exc:
            err = TimeSteppingError(f"step {step} failed: {exc}")
            err.step = step
            raise err from exc
        reports.append(report)
        averages[step] = averager(u_fine)
        if snapshot_hook is not None:
            snapshot_hook(step, u_fine)

    return MsTransientResult(
        u_fine=u_fine,
        u_coarse=u_h,
        reports=reports,
        averages=averages,
        wall_time=setup_time + sum(r.wall_time for r in reports),
    )
