import numpy as np
import pytest

from rdms.fvm import CellCoefficients, CoefficientField, SpeciesState
from rdms.grid import build_structured_grid, mark_inclusions
from rdms.linalg import LinearSolveSpec
from rdms.metrics import compute_relative_l2
from rdms.timestepping import (
    NewtonConvergenceError,
    SemiImplicitStepper,
    TimeSteppingConfig,
    TimeSteppingError,
    build_fine_operators,
    solve_ode_reference,
    solve_transient,
    step_fi,
    step_si,
)

TEST1_GROWTH = [[0.15, 0.1], [0.1, 0.15]]
TEST1_COMPETITION = [[[0.0, 0.0], [0.055, 0.05]], [[0.05, 0.055], [0.0, 0.0]]]


CIRCLES = [(0.3, 0.3, 0.16), (0.7, 0.65, 0.14)]


def no_reaction_setup(nx=8, ny=8):
    grid = build_structured_grid(nx, ny)
    sub = mark_inclusions(grid, CIRCLES)
    field = CoefficientField(
        diffusivity=[[1e-4, 1e-2], [1e-2, 1e-4]],
        growth=np.zeros((2, 2)),
        competition=np.zeros((2, 2, 2)),
    )
    coeff = CellCoefficients.from_field(field, sub.labels)
    return grid, sub, coeff


def reacting_setup(nx=8, ny=8):
    grid = build_structured_grid(nx, ny)
    sub = mark_inclusions(grid, CIRCLES)
    field = CoefficientField(
        diffusivity=[[1e-3, 1e-1], [1e-1, 1e-3]],
        growth=TEST1_GROWTH,
        competition=TEST1_COMPETITION,
    )
    coeff = CellCoefficients.from_field(field, sub.labels)
    return grid, sub, coeff


def single_cell_setup(growth=0.15):
    grid = build_structured_grid(1, 1)
    sub = mark_inclusions(grid, [])
    field = CoefficientField(
        diffusivity=[[1.0, 1.0]], growth=[[growth, growth]], competition=[[[0.0, 0.0]]]
    )
    return grid, sub, CellCoefficients.from_field(field, sub.labels)


def cfg(dt, n_steps=1, **kw):
    return TimeSteppingConfig(dt=dt, n_steps=n_steps, **kw)


class TestSemiImplicit:
    def test_constant_field_is_stationary_without_reaction(self):
        grid, _, coeff = no_reaction_setup()
        state = SpeciesState.uniform([0.7, 0.4], grid.n_cells)
        ops = build_fine_operators(grid, coeff)
        step_si(state, ops, coeff, cfg(0.5), grid)
        np.testing.assert_allclose(state.u[0], 0.7, atol=1e-12)
        np.testing.assert_allclose(state.u[1], 0.4, atol=1e-12)

    def test_single_cell_explicit_reaction_update(self):
        # no diffusion on one cell: u = 0.5 + tau * r * 0.5 * (1 - 0.5)
        grid, _, coeff = single_cell_setup(growth=0.15)
        state = SpeciesState.uniform([0.5], grid.n_cells)
        ops = build_fine_operators(grid, coeff)
        step_si(state, ops, coeff, cfg(0.5), grid)
        assert state.u[0, 0] == pytest.approx(0.51875, abs=1e-14)

    def test_mass_conserved_per_step(self, rng):
        grid, _, coeff = no_reaction_setup()
        u0 = rng.uniform(0.0, 1.0, size=(2, grid.n_cells))
        state = SpeciesState(u=u0.copy(), u_prev=u0.copy())
        ops = build_fine_operators(grid, coeff)
        mass_before = (grid.cell_volume * state.u).sum(axis=1)
        step_si(state, ops, coeff, cfg(0.5), grid)
        mass_after = (grid.cell_volume * state.u).sum(axis=1)
        np.testing.assert_allclose(mass_after, mass_before, rtol=1e-12)

    def test_comparison_principle_without_reaction(self, rng):
        grid, sub, coeff = no_reaction_setup()
        u0 = rng.uniform(0.0, 1.0, size=(2, grid.n_cells))
        state = SpeciesState(u=u0.copy(), u_prev=u0.copy())
        stepper = SemiImplicitStepper(grid, build_fine_operators(grid, coeff), coeff, cfg(0.5))
        for _ in range(5):
            lo, hi = state.u.min(axis=1), state.u.max(axis=1)
            stepper.step(state)
            assert np.all(state.u.min(axis=1) >= lo - 1e-12)
            assert np.all(state.u.max(axis=1) <= hi + 1e-12)

    def test_nonfinite_state_aborts_with_species(self):
        grid, sub, _ = single_cell_setup()
        field = CoefficientField(
            diffusivity=[[1.0, 1.0]], growth=[[1e308, 1e308]], competition=[[[0.0, 0.0]]]
        )
        coeff = CellCoefficients.from_field(field, sub.labels)
        with pytest.raises(TimeSteppingError) as err:
            solve_transient("si", grid, sub, coeff, cfg(10.0, n_steps=3), [0.5])
        assert getattr(err.value, "step", None) is not None


class TestFullyImplicit:
    def test_linear_problem_converges_in_two_iterations(self, rng):
        grid, _, coeff = no_reaction_setup()
        u0 = rng.uniform(0.0, 1.0, size=(2, grid.n_cells))
        state = SpeciesState(u=u0.copy(), u_prev=u0.copy())
        ops = build_fine_operators(grid, coeff)
        _, report = step_fi(state, ops, coeff, cfg(0.5), grid)
        # the first iteration solves the linear system exactly, the second
        # only confirms convergence
        assert report.newton_iterations == 2
        assert report.residual_norm < 1e-12

    def test_matches_semi_implicit_without_reaction(self, rng):
        grid, _, coeff = no_reaction_setup()
        u0 = rng.uniform(0.0, 1.0, size=(2, grid.n_cells))
        si_state = SpeciesState(u=u0.copy(), u_prev=u0.copy())
        fi_state = SpeciesState(u=u0.copy(), u_prev=u0.copy())
        ops = build_fine_operators(grid, coeff)
        step_si(si_state, ops, coeff, cfg(0.5), grid)
        step_fi(fi_state, ops, coeff, cfg(0.5), grid)
        np.testing.assert_allclose(fi_state.u, si_state.u, atol=1e-10)

    def test_single_cell_implicit_logistic_root(self):
        # u - 0.5 = tau r u (1 - u) with tau = 0.5, r = 0.15
        grid, _, coeff = single_cell_setup(growth=0.15)
        state = SpeciesState.uniform([0.5], grid.n_cells)
        ops = build_fine_operators(grid, coeff)
        step_fi(state, ops, coeff, cfg(0.5, newton_tol=1e-14), grid)
        roots = np.roots([0.075, 0.925, -0.5])
        expected = roots[(roots > 0) & (roots < 1)][0]
        assert state.u[0, 0] == pytest.approx(expected, abs=1e-12)
        assert state.u[0, 0] == pytest.approx(0.5187237067105264, abs=1e-9)

    def test_newton_updates_strictly_decrease(self):
        grid, _, coeff = reacting_setup()
        state = SpeciesState.uniform([0.5, 0.5], grid.n_cells)
        ops = build_fine_operators(grid, coeff)
        _, report = step_fi(state, ops, coeff, cfg(0.5), grid)
        norms = report.update_norms
        assert len(norms) >= 2
        assert all(b < a for a, b in zip(norms, norms[1:]))

    def test_newton_cap_raises(self):
        grid, _, coeff = reacting_setup()
        state = SpeciesState.uniform([0.5, 0.5], grid.n_cells)
        ops = build_fine_operators(grid, coeff)
        with pytest.raises(NewtonConvergenceError) as err:
            step_fi(state, ops, coeff, cfg(0.5, newton_tol=1e-30, newton_max_iters=2), grid)
        assert err.value.iterations == 2
        assert err.value.residual > 0


class TestSolveTransient:
    def test_zero_steps_returns_initial(self):
        grid, sub, coeff = reacting_setup()
        result = solve_transient("si", grid, sub, coeff, cfg(0.5, n_steps=0), [0.5, 0.5])
        assert result.reports == []
        np.testing.assert_array_equal(result.state.u, 0.5)
        assert result.averages.shape == (1, 2, 2)

    def test_records_averages_each_step(self):
        grid, sub, coeff = reacting_setup()
        result = solve_transient("si", grid, sub, coeff, cfg(0.5, n_steps=4), [0.5, 0.5])
        assert result.averages.shape == (5, 2, 2)
        np.testing.assert_allclose(result.averages[0], 0.5, atol=1e-14)
        assert len(result.reports) == 4

    def test_snapshot_hook_called_outside_solver(self):
        grid, sub, coeff = reacting_setup()
        seen = []
        solve_transient(
            "si", grid, sub, coeff, cfg(0.5, n_steps=3), [0.5, 0.5],
            snapshot_hook=lambda step, u: seen.append((step, u[0, 0])),
        )
        assert [s for s, _ in seen] == [0, 1, 2, 3]

    def test_total_mass_conserved_over_run(self, rng):
        grid, sub, coeff = no_reaction_setup()
        u0 = rng.uniform(0.0, 1.0, size=(2, grid.n_cells))
        state = SpeciesState(u=u0.copy(), u_prev=u0.copy())
        result = solve_transient("si", grid, sub, coeff, cfg(0.5, n_steps=20), state)
        mass0 = (grid.cell_volume * u0).sum(axis=1)
        mass1 = (grid.cell_volume * result.state.u).sum(axis=1)
        assert np.abs(mass1 / mass0 - 1.0).max() < 1e-12

    def test_semi_implicit_first_order_self_convergence(self):
        grid, sub, coeff = reacting_setup(nx=12, ny=12)
        t_max = 10.0

        def final(scheme, n):
            return solve_transient(
                scheme, grid, sub, coeff, cfg(t_max / n, n_steps=n), [0.5, 0.5]
            ).state.u

        reference = final("fi", 160)
        e_coarse = compute_relative_l2(final("si", 20)[0], reference[0], grid)
        e_fine = compute_relative_l2(final("si", 40)[0], reference[0], grid)
        assert 1.3 < e_coarse / e_fine < 2.7

    def test_unknown_scheme_rejected(self):
        grid, sub, coeff = reacting_setup()
        with pytest.raises(ValueError):
            solve_transient("imex", grid, sub, coeff, cfg(0.5), [0.5, 0.5])

    def test_step_failure_carries_step_index(self):
        grid, sub, coeff = reacting_setup()
        bad = cfg(0.5, n_steps=3, newton_tol=1e-30, newton_max_iters=1)
        with pytest.raises(TimeSteppingError) as err:
            solve_transient("fi", grid, sub, coeff, bad, [0.5, 0.5])
        assert err.value.step == 1


class TestIterativeSolverPath:
    def test_linear_failure_names_the_species(self):
        grid, sub, coeff = reacting_setup()
        starved = cfg(
            0.5,
            linear=LinearSolveSpec(
                method="iterative", preconditioner="none", rel_tol=1e-14, max_iters=1
            ),
        )
        state = SpeciesState.uniform([0.5, 0.5], grid.n_cells)
        ops = build_fine_operators(grid, coeff)
        with pytest.raises(TimeSteppingError) as err:
            SemiImplicitStepper(grid, ops, coeff, starved).step(state)
        assert err.value.species == 0
        assert "species 0" in str(err.value)

    def test_si_with_jacobi_cg_matches_direct(self):
        grid, sub, coeff = reacting_setup()
        direct = solve_transient("si", grid, sub, coeff, cfg(0.5, n_steps=3), [0.5, 0.5])
        iterative = solve_transient(
            "si", grid, sub, coeff,
            cfg(0.5, n_steps=3, linear=LinearSolveSpec(method="iterative", preconditioner="jacobi")),
            [0.5, 0.5],
        )
        np.testing.assert_allclose(iterative.state.u, direct.state.u, atol=1e-9)
        assert sum(r.linear_iterations for r in iterative.reports) > 3

    def test_fi_with_gmres_ilu_matches_direct(self):
        grid, sub, coeff = reacting_setup()
        direct = solve_transient("fi", grid, sub, coeff, cfg(0.5, n_steps=2), [0.5, 0.5])
        iterative = solve_transient(
            "fi", grid, sub, coeff,
            cfg(0.5, n_steps=2, linear=LinearSolveSpec(method="iterative", preconditioner="ilu")),
            [0.5, 0.5],
        )
        np.testing.assert_allclose(iterative.state.u, direct.state.u, atol=1e-9)


class TestOdeReference:
    def test_fixed_point_stays_fixed(self):
        growth = np.array([0.15, 0.1])
        competition = np.array([[0.0, 0.055], [0.05, 0.0]])
        traj = solve_ode_reference(growth, competition, [0.0, 0.0], 50.0, 100)
        np.testing.assert_array_equal(traj, 0.0)

    def test_logistic_monotone_approach_to_capacity(self):
        traj = solve_ode_reference([0.2], np.zeros((1, 1)), [0.5], 100.0, 400)
        assert np.all(np.diff(traj[:, 0]) >= -1e-15)
        assert traj[-1, 0] == pytest.approx(1.0, abs=1e-6)

    def test_two_species_coexistence_equilibrium(self):
        # interior equilibrium solves r_k (1 - u_k) = sum_l a_kl u_l
        growth = np.array([0.15, 0.1])
        competition = np.array([[0.0, 0.055], [0.05, 0.0]])
        equilibrium = np.linalg.solve(
            np.array([[growth[0], competition[0, 1]], [competition[1, 0], growth[1]]]),
            growth,
        )
        np.testing.assert_allclose(equilibrium, [0.095 / 0.1225, 1 - 0.5 * 0.095 / 0.1225])
        traj = solve_ode_reference(growth, competition, [0.5, 0.5], 500.0, 5000)
        assert np.abs(traj[-1] - equilibrium).max() < 1e-3
