"""Time integration on the fine grid: coupled Newton and semi-implicit schemes.

Both schemes are backward Euler in the diffusion part. The fully implicit
(coupled) scheme also takes the reaction at the new level and resolves the
resulting nonlinear system with Newton iterations over all species at once.
The semi-implicit scheme lags the reaction to the previous level, which
decouples the species: each one solves a fixed symmetric system per step.
"""

from __future__ import annotations

import time
from dataclasses import dataclass, field

import numpy as np
import scipy.sparse as sp

from .fvm import (
    CellCoefficients,
    SpeciesState,
    assemble_diffusion,
    assemble_mass,
    assemble_transmissibilities,
    reaction_jacobian,
    reaction_rates,
)
from .grid import FineGrid, SubdomainMap
from .linalg import BoundSolver, LinearSolveError, LinearSolveSpec
from .metrics import SubdomainAverager, weighted_l2


class TimeSteppingError(RuntimeError):
    """A time step failed; ``step`` is attached by the transient driver."""


class NewtonConvergenceError(TimeSteppingError):
    def __init__(self, message: str, residual: float, iterations: int):
        super().__init__(message)
        self.residual = residual
        self.iterations = iterations


class NonFiniteStateError(TimeSteppingError):
    def __init__(self, species: int):
        super().__init__(f"species {species} produced non-finite values")
        self.species = species


@dataclass
class TimeSteppingConfig:
    dt: float
    n_steps: int
    newton_tol: float = 1e-8
    newton_max_iters: int = 20
    linear: LinearSolveSpec = field(default_factory=LinearSolveSpec)

    def __post_init__(self):
        if self.dt <= 0:
            raise ValueError("dt must be positive")
        if self.n_steps < 0:
            raise ValueError("n_steps must be non-negative")
        if self.newton_tol <= 0:
            raise ValueError("newton_tol must be positive")
        if self.newton_max_iters < 1:
            raise ValueError("newton_max_iters must be at least 1")


@dataclass
class StepReport:
    newton_iterations: int
    linear_iterations: int
    residual_norm: float
    wall_time: float
    update_norms: list[float] = field(default_factory=list)  # per Newton iteration


@dataclass
class FineOperators:
    """Assembled mass and per-species diffusion matrices."""

    mass: sp.csr_matrix
    diffusion: list[sp.csr_matrix]


@dataclass
class TransientResult:
    state: SpeciesState
    reports: list[StepReport]
    averages: np.ndarray  # (n_steps+1, L, 2): background / inclusion means
    wall_time: float  # solve time only; observers and I/O excluded


def build_fine_operators(grid: FineGrid, coeff: CellCoefficients) -> FineOperators:
    diffusion = [
        assemble_diffusion(grid, assemble_transmissibilities(grid, coeff, k))
        for k in range(coeff.n_species)
    ]
    return FineOperators(mass=assemble_mass(grid), diffusion=diffusion)


def _check_finite(u: np.ndarray) -> None:
    if not np.isfinite(u).all():
        bad = np.flatnonzero(~np.isfinite(u).all(axis=1))
        raise NonFiniteStateError(int(bad[0]))


class SemiImplicitStepper:
    """Per-species solves of (M/dt + A) u = M u_prev/dt + R(u_prev) |K|.

    The matrices never change, so the per-species solvers (and their
    factorizations or preconditioners) are built once and reused; species
    systems are independent of each other.
    """

    def __init__(
        self,
        grid: FineGrid,
        ops: FineOperators,
        coeff: CellCoefficients,
        cfg: TimeSteppingConfig,
    ):
        self.volumes = grid.cell_volume
        self.coeff = coeff
        self.cfg = cfg
        self.solvers = [
            BoundSolver(ops.mass / cfg.dt + a, cfg.linear, symmetric=True)
            for a in ops.diffusion
        ]

    def step(self, state: SpeciesState) -> StepReport:
        t0 = time.perf_counter()
        u_prev = state.u
        rates = reaction_rates(u_prev, self.coeff) * self.volumes
        u_new = np.empty_like(u_prev)
        linear_total = 0
        for k, solver in enumerate(self.solvers):
            b = self.volumes * u_prev[k] / self.cfg.dt + rates[k]
            try:
                u_new[k], iters = solver.solve(b)
            except LinearSolveError as exc:
                err = TimeSteppingError(f"species {k}: {exc}")
                err.species = k
                raise err from exc
            linear_total += iters
        _check_finite(u_new)
        state.advance(u_new)
        return StepReport(0, linear_total, 0.0, time.perf_counter() - t0)


class FullyImplicitStepper:
    """Coupled Newton solve of the backward-Euler system over all species.

    Unknowns are interleaved per cell (index = cell * L + species) so the
    reaction coupling forms dense L-by-L blocks on the diagonal. The
    diffusion/mass part of the Jacobian is constant and assembled once; the
    reaction part is rebuilt each Newton iteration.
    """

    def __init__(
        self,
        grid: FineGrid,
        ops: FineOperators,
        coeff: CellCoefficients,
        cfg: TimeSteppingConfig,
    ):
        self.volumes = grid.cell_volume
        self.coeff = coeff
        self.cfg = cfg
        self.ops = ops
        L, n = coeff.n_species, grid.n_cells
        self.n_species, self.n_cells = L, n

        rows, cols, vals = [], [], []
        for k, a in enumerate(ops.diffusion):
            coo = a.tocoo()
            rows.append(coo.row * L + k)
            cols.append(coo.col * L + k)
            vals.append(coo.data)
            diag = np.arange(n) * L + k
            rows.append(diag)
            cols.append(diag)
            vals.append(self.volumes / cfg.dt)
        self._jac_const = sp.coo_matrix(
            (np.concatenate(vals), (np.concatenate(rows), np.concatenate(cols))),
            shape=(L * n, L * n),
        ).tocsr()
        self._jac_const.sum_duplicates()

        cell_base = np.arange(n)[None, None, :] * L
        shape = (L, L, n)
        self._block_rows = np.broadcast_to(
            cell_base + np.arange(L)[:, None, None], shape
        ).ravel()
        self._block_cols = np.broadcast_to(
            cell_base + np.arange(L)[None, :, None], shape
        ).ravel()

    def _residual(self, u: np.ndarray, u_prev: np.ndarray) -> np.ndarray:
        rates = reaction_rates(u, self.coeff)
        res = np.empty_like(u)
        for k, a in enumerate(self.ops.diffusion):
            res[k] = (
                self.volumes * (u[k] - u_prev[k]) / self.cfg.dt
                + a @ u[k]
                - self.volumes * rates[k]
            )
        return res

    def _jacobian(self, u: np.ndarray) -> sp.csr_matrix:
        blocks = -(self.volumes * reaction_jacobian(u, self.coeff))
        reac = sp.coo_matrix(
            (blocks.ravel(), (self._block_rows, self._block_cols)),
            shape=self._jac_const.shape,
        ).tocsr()
        return self._jac_const + reac

    def step(self, state: SpeciesState) -> StepReport:
        t0 = time.perf_counter()
        cfg = self.cfg
        u_prev = state.u
        u = u_prev.copy()
        linear_total = 0
        update_norm = np.inf
        update_norms: list[float] = []
        for iteration in range(1, cfg.newton_max_iters + 1):
            jac = self._jacobian(u)
            rhs = -self._residual(u, u_prev).T.ravel()
            solver = BoundSolver(jac, cfg.linear, symmetric=False)
            delta_flat, iters = solver.solve(rhs)
            linear_total += iters
            delta = delta_flat.reshape(self.n_cells, self.n_species).T
            u = u + delta
            update_norm = max(
                weighted_l2(delta[k], self.volumes) for k in range(self.n_species)
            )
            update_norms.append(update_norm)
            if update_norm < cfg.newton_tol:
                break
        else:
            raise NewtonConvergenceError(
                f"Newton did not converge in {cfg.newton_max_iters} iterations "
                f"(last update norm {update_norm:.3e})",
                update_norm,
                cfg.newton_max_iters,
            )
        _check_finite(u)
        state.advance(u)
        return StepReport(
            iteration, linear_total, update_norm, time.perf_counter() - t0, update_norms
        )


def step_si(
    state: SpeciesState,
    ops: FineOperators,
    coeff: CellCoefficients,
    cfg: TimeSteppingConfig,
    grid: FineGrid,
) -> tuple[SpeciesState, StepReport]:
    """Single semi-implicit step (functional form; builds a fresh stepper)."""
    report = SemiImplicitStepper(grid, ops, coeff, cfg).step(state)
    return state, report


def step_fi(
    state: SpeciesState,
    ops: FineOperators,
    coeff: CellCoefficients,
    cfg: TimeSteppingConfig,
    grid: FineGrid,
) -> tuple[SpeciesState, StepReport]:
    """Single fully implicit step (functional form; builds a fresh stepper)."""
    report = FullyImplicitStepper(grid, ops, coeff, cfg).step(state)
    return state, report


def solve_transient(
    scheme: str,
    grid: FineGrid,
    subdomains: SubdomainMap,
    coeff: CellCoefficients,
    cfg: TimeSteppingConfig,
    initial,
    snapshot_hook=None,
) -> TransientResult:
    """Advance the fine-grid system cfg.n_steps times with the chosen scheme.

    ``initial`` is either a per-species value vector or a SpeciesState.
    ``snapshot_hook(step, u)`` is called outside the timed region.
    """
    if scheme not in ("fi", "si"):
        raise ValueError(f"unknown scheme {scheme!r}; expected 'fi' or 'si'")
    if isinstance(initial, SpeciesState):
        state = initial
    else:
        state = SpeciesState.uniform(initial, grid.n_cells)

    t_setup = time.perf_counter()
    ops = build_fine_operators(grid, coeff)
    stepper_cls = FullyImplicitStepper if scheme == "fi" else SemiImplicitStepper
    stepper = stepper_cls(grid, ops, coeff, cfg)
    setup_time = time.perf_counter() - t_setup
    averager = SubdomainAverager(grid, subdomains)

    averages = np.empty((cfg.n_steps + 1, coeff.n_species, 2))
    averages[0] = averager(state.u)
    if snapshot_hook is not None:
        snapshot_hook(0, state.u)

    reports: list[StepReport] = []
    for step in range(1, cfg.n_steps + 1):
        try:
            reports.append(stepper.step(state))
        except Exception as exc:
            err = TimeSteppingError(f"step {step} failed: {exc}")
            err.step = step
            raise err from exc
        averages[step] = averager(state.u)
        if snapshot_hook is not None:
            snapshot_hook(step, state.u)

    return TransientResult(
        state=state,
        reports=reports,
        averages=averages,
        wall_time=setup_time + sum(r.wall_time for r in reports),
    )


def solve_ode_reference(
    growth: np.ndarray,
    competition: np.ndarray,
    u0,
    t_max: float,
    n_steps: int,
) -> np.ndarray:
    """Classic fixed-step RK4 for the no-diffusion system du/dt = R(u).

    ``growth`` is (L,), ``competition`` (L, L) with zero diagonal: the
    coefficients of a single subdomain. Returns the (n_steps+1, L) trajectory.
    """
    growth = np.asarray(growth, dtype=float)
    competition = np.asarray(competition, dtype=float)
    u = np.atleast_1d(np.asarray(u0, dtype=float)).copy()

    def rate(v):
        return growth * v * (1.0 - v) - v * (competition @ v)

    h = t_max / n_steps
    out = np.empty((n_steps + 1, u.size))
    out[0] = u
    for i in range(1, n_steps + 1):
        k1 = rate(u)
        k2 = rate(u + 0.5 * h * k1)
        k3 = rate(u + 0.5 * h * k2)
        k4 = rate(u + h * k3)
        u = u + (h / 6.0) * (k1 + 2.0 * k2 + 2.0 * k3 + k4)
        out[i] = u
    return out
