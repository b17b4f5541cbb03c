"""Leap-frog field stepper: explicit magnetic update, implicit-mass electric
update behind a warm-started conjugate-gradient solve, and the Courant
limit estimate from the largest generalized eigenvalue of the curl-curl
operator pair.

Boundary condition is perfect electric conductor: boundary-edge electric
DoFs are pinned to zero and removed from the solve; magnetic DoFs are
unconstrained.
"""
from __future__ import annotations

import logging
from dataclasses import dataclass

import numpy as np
import scipy.sparse as sp
import scipy.sparse.linalg as spla

from ._cg import FastCsr, cg_jacobi
from .mesh import Mesh

logger = logging.getLogger(__name__)


class SolveError(RuntimeError):
    """Implicit electric-field solve failed to converge."""


class CourantEstimateError(RuntimeError):
    """Power iteration for the stability limit failed to converge."""


@dataclass
class SolverConfig:
    dt: float
    cg_rel_tol: float = 1e-12
    cg_max_iter: int = 2000
    courant_safety: float = 0.9

    def __post_init__(self):
        if self.dt <= 0.0:
            raise ValueError(f"dt must be positive, got {self.dt}")
        if not 0.0 < self.cg_rel_tol < 1.0:
            raise ValueError(f"cg_rel_tol must be in (0, 1), got {self.cg_rel_tol}")


@dataclass
class FieldState:
    """Degree-of-freedom arrays with their time-staggering tags.

    ``e`` lives at integer steps ``n``; ``b`` and ``i`` at half-integer
    steps (``half_step = k`` means time ``(k + 1/2) dt``).
    """

    e: np.ndarray             # (E,) volts
    b: np.ndarray             # (F,) webers
    i: np.ndarray             # (E,) amperes
    step: int = 0             # e is at this integer step
    half_step: int = -1       # b, i are at half_step + 1/2

    @classmethod
    def zeros(cls, mesh: Mesh) -> "FieldState":
        return cls(
            e=np.zeros(mesh.num_edges),
            b=np.zeros(mesh.num_faces),
            i=np.zeros(mesh.num_edges),
        )

    def check_finite(self):
        if not (np.all(np.isfinite(self.e)) and np.all(np.isfinite(self.b))
                and np.all(np.isfinite(self.i))):
            raise FloatingPointError(
                f"non-finite field DoF at step {self.step}"
            )


class MaxwellStepper:
    """Owns the assembled operators and advances one FieldState."""

    def __init__(self, mesh: Mesh, curl: sp.csr_matrix, star_eps: sp.csr_matrix,
                 star_mu_inv: sp.csr_matrix, config: SolverConfig):
        self.mesh = mesh
        self.config = config
        self.curl = curl.astype(np.float64).tocsr()
        self.star_eps = star_eps.tocsr()
        self.star_mu_inv = star_mu_inv.tocsr()
        # C^T [star_mu_inv] precomputed: edge-vector from face-vector.
        self.curlT_mu = (self.curl.T @ self.star_mu_inv).tocsr()
        self._curl_fast = FastCsr(self.curl)
        self._curlT_mu_fast = FastCsr(self.curlT_mu)
        self._star_eps_fast = FastCsr(self.star_eps)

        self.interior_edges = np.flatnonzero(~mesh.boundary_edge)
        a_int = self.star_eps[self.interior_edges][:, self.interior_edges].tocsr()
        a_int.sort_indices()
        self._a_indptr = a_int.indptr
        self._a_indices = a_int.indices
        self._a_data = a_int.data
        self._diag_inv = 1.0 / a_int.diagonal()
        self.last_iterations = 0
        self.last_residual = 0.0

    def step_b(self, state: FieldState, dt: float) -> None:
        """Explicit update ``b <- b - dt * C e`` (half step n-1/2 -> n+1/2)."""
        state.b -= dt * (self._curl_fast @ state.e)
        state.half_step += 1

    def step_e(self, state: FieldState, dt: float) -> None:
        """Implicit-mass update of ``e`` to step n+1 from ``b``, ``i`` at
        n+1/2, solving the SPD system with CG warm-started from the current
        ``e``."""
        rhs_full = self._star_eps_fast @ state.e + dt * (
            self._curlT_mu_fast @ state.b - state.i)
        if not np.all(np.isfinite(rhs_full)):
            raise FloatingPointError(
                f"non-finite field DoF entering the electric solve at step "
                f"{state.step}")
        rhs = rhs_full[self.interior_edges]
        x = state.e[self.interior_edges].copy()
        iters, res, ok = cg_jacobi(
            self._a_indptr, self._a_indices, self._a_data,
            rhs, x, self._diag_inv,
            self.config.cg_rel_tol, self.config.cg_max_iter,
        )
        self.last_iterations = int(iters)
        self.last_residual = float(res)
        if not ok:
            raise SolveError(
                f"electric solve did not converge at step {state.step}: "
                f"residual {res:.3e} after {iters} iterations"
            )
        state.e[:] = 0.0
        state.e[self.interior_edges] = x
        state.step += 1
        state.check_finite()

    def virtual_next_b(self, state: FieldState, dt: float) -> np.ndarray:
        """The b array one more half step ahead, without mutating state
        (used by the discrete energy balance)."""
        return state.b - dt * (self._curl_fast @ state.e)


def estimate_courant(curl, star_eps, star_mu_inv, rel_tol: float = 1e-8,
                     max_iter: int = 10000) -> float:
    """Largest stable time step ``2 / sqrt(lambda_max)`` where
    ``lambda_max`` is the top generalized eigenvalue of
    ``C^T [star_mu_inv] C`` against ``[star_eps]``.

    Power iteration with inner SPD solves (sparse LU, factorized once).
    """
    c = sp.csr_matrix(curl).astype(np.float64)
    a = (c.T @ sp.csr_matrix(star_mu_inv) @ c).tocsr()
    b = sp.csc_matrix(star_eps)
    solve = spla.factorized(b)

    rng = np.random.Generator(np.random.Philox(20240215))
    x = rng.standard_normal(a.shape[0])
    x /= np.linalg.norm(x)
    lam_prev = 0.0
    for it in range(max_iter):
        y = a @ x
        lam = float(x @ y) / float(x @ (b @ x))
        if it > 0 and abs(lam - lam_prev) <= rel_tol * abs(lam):
            if lam <= 0.0:
                raise CourantEstimateError("curl-curl operator has no positive mode")
            return 2.0 / np.sqrt(lam)
        lam_prev = lam
        x = solve(y)
        nrm = np.linalg.norm(x)
        if nrm == 0.0:
            raise CourantEstimateError("power iteration collapsed to zero vector")
        x /= nrm
    raise CourantEstimateError(
        f"power iteration did not converge within {max_iter} iterations"
    )
