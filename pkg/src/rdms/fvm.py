"""Finite-volume operators: transmissibilities, diffusion/mass matrices, reaction terms.

Diffusion uses the two-point flux approximation: the flux through an interior
face equals T_ij (u_i - u_j) with transmissibility T_ij built from the
harmonic face diffusivity and the face geometry. Reaction rates are evaluated
pointwise at cell averages; volume factors are applied by the steppers.
"""

from __future__ import annotations

import logging
from dataclasses import dataclass

import numpy as np
import scipy.sparse as sp

from .grid import FineGrid

logger = logging.getLogger(__name__)


@dataclass(frozen=True)
class CoefficientField:
    """Piecewise-constant model coefficients per species and subdomain.

    Column 0 holds the background value, column 1 the inclusion value.
    ``competition[k, l]`` is the pressure species l exerts on species k; the
    diagonal is unused and must be zero.
    """

    diffusivity: np.ndarray  # (L, 2), strictly positive
    growth: np.ndarray  # (L, 2)
    competition: np.ndarray  # (L, L, 2), zero diagonal

    def __post_init__(self):
        diffusivity = np.asarray(self.diffusivity, dtype=float)
        growth = np.asarray(self.growth, dtype=float)
        competition = np.asarray(self.competition, dtype=float)
        object.__setattr__(self, "diffusivity", diffusivity)
        object.__setattr__(self, "growth", growth)
        object.__setattr__(self, "competition", competition)

        L = diffusivity.shape[0]
        if diffusivity.shape != (L, 2) or growth.shape != (L, 2):
            raise ValueError("diffusivity and growth must have shape (n_species, 2)")
        if competition.shape != (L, L, 2):
            raise ValueError("competition must have shape (n_species, n_species, 2)")
        if not np.all(np.isfinite(diffusivity)) or np.any(diffusivity <= 0):
            raise ValueError("diffusivity values must be finite and strictly positive")
        if not (np.all(np.isfinite(growth)) and np.all(np.isfinite(competition))):
            raise ValueError("growth and competition values must be finite")
        if np.any(competition[np.arange(L), np.arange(L)] != 0):
            raise ValueError("competition diagonal must be zero")
        if np.any(growth < 0) or np.any(competition < 0):
            logger.warning("negative growth or competition coefficients supplied")

    @property
    def n_species(self) -> int:
        return self.diffusivity.shape[0]


@dataclass(frozen=True)
class CellCoefficients:
    """Coefficients resolved onto fine cells through a subdomain labeling."""

    diffusivity: np.ndarray  # (L, N)
    growth: np.ndarray  # (L, N)
    competition: np.ndarray  # (L, L, N)

    @classmethod
    def from_field(cls, field: CoefficientField, labels: np.ndarray) -> "CellCoefficients":
        lab = np.asarray(labels, dtype=np.intp)
        return cls(
            diffusivity=field.diffusivity[:, lab],
            growth=field.growth[:, lab],
            competition=field.competition[:, :, lab],
        )

    @property
    def n_species(self) -> int:
        return self.diffusivity.shape[0]

    @property
    def n_cells(self) -> int:
        return self.diffusivity.shape[1]


@dataclass
class SpeciesState:
    """Per-species cell averages at the current and previous time level."""

    u: np.ndarray  # (L, N)
    u_prev: np.ndarray  # (L, N)

    @classmethod
    def uniform(cls, values, n_cells: int) -> "SpeciesState":
        vals = np.atleast_1d(np.asarray(values, dtype=float))
        u = np.repeat(vals[:, None], n_cells, axis=1)
        return cls(u=u.copy(), u_prev=u.copy())

    @property
    def n_species(self) -> int:
        return self.u.shape[0]

    def advance(self, u_new: np.ndarray) -> None:
        self.u_prev = self.u
        self.u = u_new


def harmonic_average(a, b):
    """Harmonic mean 2 / (1/a + 1/b); accepts scalars or arrays."""
    a = np.asarray(a, dtype=float)
    b = np.asarray(b, dtype=float)
    if np.any(a <= 0) or np.any(b <= 0):
        raise ValueError("harmonic average requires strictly positive inputs")
    out = 2.0 / (1.0 / a + 1.0 / b)
    return float(out) if out.ndim == 0 else out


def assemble_transmissibilities(
    grid: FineGrid, coeff: CellCoefficients, species: int
) -> np.ndarray:
    """One transmissibility per interior face for the given species."""
    eps = coeff.diffusivity[species]
    face_eps = harmonic_average(eps[grid.face_i], eps[grid.face_j])
    return face_eps * grid.face_length / grid.face_distance


def assemble_diffusion(grid: FineGrid, transmissibilities: np.ndarray) -> sp.csr_matrix:
    """TPFA diffusion matrix: diagonal sum of face couplings, -T off-diagonal.

    Symmetric with zero row sums, which encodes the zero-flux boundary.
    """
    t = np.asarray(transmissibilities, dtype=float)
    n = grid.n_cells
    rows = np.concatenate([grid.face_i, grid.face_j, grid.face_i, grid.face_j])
    cols = np.concatenate([grid.face_j, grid.face_i, grid.face_i, grid.face_j])
    vals = np.concatenate([-t, -t, t, t])
    a = sp.coo_matrix((vals, (rows, cols)), shape=(n, n)).tocsr()
    a.sum_duplicates()
    a.sort_indices()
    return a


def assemble_mass(grid: FineGrid) -> sp.csr_matrix:
    """Diagonal mass matrix of cell volumes."""
    return sp.diags(grid.cell_volume, format="csr")


def reaction_rates(u: np.ndarray, coeff: CellCoefficients) -> np.ndarray:
    """Pointwise competition-logistic rates for all species and cells.

    u is (L, N); the result is (L, N) and carries no volume factor.
    """
    pressure = np.einsum("kln,ln->kn", coeff.competition, u)
    return coeff.growth * u * (1.0 - u) - u * pressure


def reaction_jacobian(u: np.ndarray, coeff: CellCoefficients) -> np.ndarray:
    """Analytic per-cell Jacobian of the reaction rates; shape (L, L, N).

    Entry [k, j, i] is the derivative of species k's rate with respect to
    species j at cell i.
    """
    L = u.shape[0]
    jac = -coeff.competition * u[:, None, :]
    pressure = np.einsum("kln,ln->kn", coeff.competition, u)
    diag = coeff.growth * (1.0 - 2.0 * u) - pressure
    jac[np.arange(L), np.arange(L), :] = diag
    return jac


def eval_reaction(
    u_at_cell: np.ndarray, coeff: CellCoefficients, cell: int, species: int
) -> float:
    """Reaction rate of one species at one cell; u_at_cell is (L,)."""
    if not 0 <= cell < coeff.n_cells:
        raise ValueError(f"cell index {cell} out of range")
    u = np.asarray(u_at_cell, dtype=float)
    pressure = coeff.competition[species, :, cell] @ u
    return float(
        coeff.growth[species, cell] * u[species] * (1.0 - u[species])
        - u[species] * pressure
    )


def eval_reaction_jacobian(
    u_at_cell: np.ndarray, coeff: CellCoefficients, cell: int, species: int
) -> np.ndarray:
    """Row of partial derivatives of one species' rate at one cell; shape (L,)."""
    if not 0 <= cell < coeff.n_cells:
        raise ValueError(f"cell index {cell} out of range")
    u = np.asarray(u_at_cell, dtype=float)
    row = -coeff.competition[species, :, cell] * u[species]
    pressure = coeff.competition[species, :, cell] @ u
    row[species] = coeff.growth[species, cell] * (1.0 - 2.0 * u[species]) - pressure
    return row
