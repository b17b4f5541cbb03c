"""Per-step conservation checks: discrete continuity, Gauss-law residual,
energy balance, and charge totals.

The energy balance uses the time-centered products under which the
leap-frog update satisfies the discrete identity exactly (up to the
solver residual): electric energy from same-step quadratic forms,
magnetic energy from products of adjacent half-step arrays, and the
source power against the mean of the two electric arrays.
"""
from __future__ import annotations

import logging
from dataclasses import dataclass

import numpy as np

logger = logging.getLogger(__name__)

GAUSS_LAW_MAGNETIC_TRIVIAL = True
# No volume cells exist in 2-D, so the primal magnetic divergence is empty
# and Gauss's law for magnetism holds identically; logged as a constant.


@dataclass
class DiagnosticsRecord:
    step: int
    time: float
    continuity_residual_inf: float   # C/s, interior vertices
    gauss_residual_inf: float        # C, interior vertices
    We: float                        # J
    Wm: float                        # J
    Ps_dt: float                     # J
    energy_balance_residual: float   # J
    total_charge: float              # C
    max_speed: float                 # m/s
    cg_iterations: int = 0

    def check_finite(self):
        for name in ("continuity_residual_inf", "gauss_residual_inf", "We",
                     "Wm", "Ps_dt", "energy_balance_residual", "total_charge",
                     "max_speed"):
            if not np.isfinite(getattr(self, name)):
                raise FloatingPointError(f"diagnostic {name} is not finite "
                                         f"at step {self.step}")

    CSV_FIELDS = ("step", "time", "continuity_residual_inf",
                  "gauss_residual_inf", "We", "Wm", "Ps_dt",
                  "energy_balance_residual", "total_charge", "max_speed",
                  "cg_iterations")

    def csv_row(self) -> str:
        return ",".join(repr(getattr(self, f)) for f in self.CSV_FIELDS)


def continuity_residual(q_prev: np.ndarray, q_next: np.ndarray,
                        i: np.ndarray, stilde, dt: float) -> np.ndarray:
    """Per-vertex residual of the discrete continuity equation
    ``(q^{n+1} - q^n) / dt + Stilde i^{n+1/2}``."""
    return (q_next - q_prev) / dt + stilde @ i


def gauss_residual(e: np.ndarray, q: np.ndarray, stilde, star_eps) -> np.ndarray:
    """Per-vertex residual of the discrete Gauss law
    ``Stilde [star_eps] e - q`` (all vertices; callers typically restrict
    to interior rows since boundary rows see the conductor)."""
    return stilde @ (star_eps @ e) - q


def energy_balance(e_prev, e_next, b_prev, b_next, b_after, i, star_eps,
                   star_mu_inv, dt: float):
    """Energy bookkeeping of one update interval.

    ``b_prev``, ``b_next``, ``b_after`` are the magnetic arrays at the
    three half steps surrounding the interval (the caller forms
    ``b_after`` from the next explicit update).  Returns
    ``(dWe, dWm, ps_dt, residual)`` where ``residual = dWe + dWm + ps_dt``
    vanishes identically for the leap-frog pair up to the electric solve
    residual.
    """
    dwe = 0.5 * (e_next @ (star_eps @ e_next) - e_prev @ (star_eps @ e_prev))
    wm_next = 0.5 * (b_next @ (star_mu_inv @ b_after))
    wm_prev = 0.5 * (b_prev @ (star_mu_inv @ b_next))
    dwm = wm_next - wm_prev
    ps_dt = 0.5 * ((e_prev + e_next) @ i) * dt
    return dwe, dwm, ps_dt, dwe + dwm + ps_dt


def electric_energy(e, star_eps) -> float:
    return 0.5 * float(e @ (star_eps @ e))


def magnetic_energy(b_prev, b_next, star_mu_inv) -> float:
    """Time-centered magnetic energy: the product of adjacent half-step
    arrays (the quantity the leap-frog scheme conserves)."""
    return 0.5 * float(b_prev @ (star_mu_inv @ b_next))


def watch_vertices(records, vertices):
    """Expand a stream of ``(step, gauss_lhs_vector, q_vector)`` snapshots
    into per-vertex table rows ``(step, vertex, lhs, rhs, residual)`` for
    the watched vertices."""
    vertices = [int(v) for v in vertices]
    rows = []
    for step, lhs, q in records:
        n = len(lhs)
        for v in vertices:
            if not 0 <= v < n:
                raise IndexError(f"watched vertex {v} not in mesh (0..{n - 1})")
            rows.append((step, v, float(lhs[v]), float(q[v]),
                         float(lhs[v] - q[v])))
    return rows
