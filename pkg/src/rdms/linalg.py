"""Sparse kernels, linear solvers, and the dense symmetric eigensolver.

Solvers are thin, contract-checked wrappers over scipy: Krylov iterations
(CG for symmetric systems under none/Jacobi preconditioning, GMRES
otherwise) or a cached direct factorization. A solver instance is bound to
one matrix so factorizations and preconditioners are built once and reused
across time steps.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np
import scipy.sparse as sp
import scipy.sparse.linalg as spla
from scipy.linalg import eigh


class LinearSolveError(RuntimeError):
    """Linear solve failed to reach the requested tolerance."""

    def __init__(self, message: str, residual: float, iterations: int):
        super().__init__(message)
        self.residual = residual
        self.iterations = iterations


@dataclass
class LinearSolveSpec:
    """How linear systems are solved: method, preconditioner, tolerances.

    The default is a cached direct factorization: every shipped system is
    solved many times against one matrix, and at these sizes factorization
    beats Krylov iteration while staying bit-deterministic. The iterative
    path (CG for symmetric systems under none/Jacobi preconditioning, GMRES
    otherwise) honors the same residual contract.
    """

    method: str = "direct"  # "iterative" | "direct"
    preconditioner: str = "ilu"  # "none" | "jacobi" | "ilu" (iterative only)
    rel_tol: float = 1e-10
    max_iters: int = 2000

    def __post_init__(self):
        if self.method not in ("iterative", "direct"):
            raise ValueError(f"unknown method {self.method!r}")
        if self.preconditioner not in ("none", "jacobi", "ilu"):
            raise ValueError(f"unknown preconditioner {self.preconditioner!r}")
        if not 0.0 < self.rel_tol < 1.0:
            raise ValueError("rel_tol must lie in (0, 1)")
        if self.max_iters < 1:
            raise ValueError("max_iters must be at least 1")


def spmv(a: sp.spmatrix, x: np.ndarray) -> np.ndarray:
    """Sparse matrix-vector product with a dimension check."""
    x = np.asarray(x)
    if a.shape[1] != x.shape[0]:
        raise ValueError(f"dimension mismatch: matrix {a.shape}, vector {x.shape}")
    return a @ x


class BoundSolver:
    """Solver bound to one matrix; factorization/preconditioner built lazily once."""

    def __init__(self, a: sp.spmatrix, spec: LinearSolveSpec, symmetric: bool = False):
        if a.shape[0] != a.shape[1]:
            raise ValueError("matrix must be square")
        self.a = a.tocsr()
        self.spec = spec
        self.symmetric = symmetric
        self._factor = None
        self._precond = None

    def _preconditioner(self):
        if self.spec.preconditioner == "none":
            return None
        if self._precond is None:
            if self.spec.preconditioner == "jacobi":
                d = self.a.diagonal()
                if np.any(d == 0):
                    raise LinearSolveError("zero diagonal entry; Jacobi unusable", np.inf, 0)
                inv = 1.0 / d
                self._precond = spla.LinearOperator(self.a.shape, matvec=lambda x: inv * x)
            else:
                ilu = spla.spilu(self.a.tocsc(), drop_tol=1e-5, fill_factor=10)
                self._precond = spla.LinearOperator(self.a.shape, matvec=ilu.solve)
        return self._precond

    def solve(self, b: np.ndarray, x0: np.ndarray | None = None) -> tuple[np.ndarray, int]:
        """Solve to ||b - A x|| <= rel_tol ||b||; returns (x, iterations)."""
        b = np.asarray(b, dtype=float)
        if b.shape[0] != self.a.shape[0]:
            raise ValueError("right-hand side has wrong length")
        norm_b = np.linalg.norm(b)
        if norm_b == 0.0:
            return np.zeros_like(b), 0

        if self.spec.method == "direct":
            if self._factor is None:
                self._factor = spla.factorized(self.a.tocsc())
            return self._factor(b), 1

        return self._solve_krylov(b, norm_b, x0)

    def _solve_krylov(
        self, b: np.ndarray, norm_b: float, x0: np.ndarray | None
    ) -> tuple[np.ndarray, int]:
        spec = self.spec
        m = self._preconditioner()
        use_cg = self.symmetric and spec.preconditioner in ("none", "jacobi")
        count = [0]

        def tick(_):
            count[0] += 1

        x, rtol = None, spec.rel_tol
        # GMRES measures the preconditioned residual; verify the true one and
        # restart tighter if the contract is not yet met.
        for attempt in range(3):
            if use_cg:
                x, info = spla.cg(
                    self.a, b, x0=x0, rtol=rtol, atol=0.0,
                    maxiter=spec.max_iters, M=m, callback=tick,
                )
            else:
                x, info = spla.gmres(
                    self.a, b, x0=x0, rtol=rtol, atol=0.0, restart=30,
                    maxiter=spec.max_iters, M=m, callback=tick,
                    callback_type="pr_norm",
                )
            residual = np.linalg.norm(b - self.a @ x) / norm_b
            if info == 0 and residual <= spec.rel_tol:
                return x, count[0]
            if info != 0:
                break
            x0, rtol = x, rtol * 1e-2
        raise LinearSolveError(
            f"Krylov solve did not reach rel_tol={spec.rel_tol:g} "
            f"(achieved {residual:.3e} in {count[0]} iterations)",
            residual,
            count[0],
        )


def solve_linear(
    a: sp.spmatrix,
    b: np.ndarray,
    spec: LinearSolveSpec | None = None,
    symmetric: bool = False,
) -> tuple[np.ndarray, int]:
    """One-shot linear solve; see BoundSolver for the reusable form."""
    return BoundSolver(a, spec or LinearSolveSpec(), symmetric=symmetric).solve(b)


def eig_sym_smallest(a: np.ndarray, m: int) -> tuple[np.ndarray, np.ndarray]:
    """Smallest m eigenpairs of a dense symmetric matrix, ascending.

    Eigenvectors are orthonormal columns, sign-normalized so the
    largest-magnitude entry is positive. Exact eigenvalue ties are ordered by
    lexicographic comparison of the normalized vectors.
    """
    a = np.asarray(a, dtype=float)
    if a.ndim != 2 or a.shape[0] != a.shape[1]:
        raise ValueError("matrix must be square")
    n = a.shape[0]
    if not 1 <= m <= n:
        raise ValueError(f"requested {m} eigenpairs from a {n}x{n} matrix")
    scale = max(1.0, float(np.abs(a).max()))
    if np.abs(a - a.T).max() > 1e-12 * scale:
        raise ValueError("matrix is not symmetric")

    vals, vecs = eigh(a, subset_by_index=(0, m - 1))

    for c in range(m):
        lead = np.argmax(np.abs(vecs[:, c]))
        if vecs[lead, c] < 0:
            vecs[:, c] = -vecs[:, c]

    # stable secondary order inside exact ties
    start = 0
    while start < m:
        stop = start + 1
        while stop < m and vals[stop] == vals[start]:
            stop += 1
        if stop - start > 1:
            order = sorted(range(start, stop), key=lambda c: tuple(vecs[:, c]))
            vals[start:stop] = vals[order]
            vecs[:, start:stop] = vecs[:, order]
        start = stop

    return vals, vecs
