"""Non-relativistic particle update: the implicit rotation form of the
discretized Lorentz-Newton equation and the explicit position push.

The velocity map is ``v -> N^-1 N^T v + (q dt / m) N^-1 E`` with
``N = I + [h]x``, ``h = (q dt / 2 m) * B_avg`` and ``B_avg`` the mean of
the two half-step magnetic fields at the particle.  ``N^-1 N^T`` is a pure
rotation (Cayley transform), so speed is exactly preserved when E = 0.
"""
from __future__ import annotations

import logging
from dataclasses import dataclass, field

import numpy as np

logger = logging.getLogger(__name__)

C_LIGHT = 299792458.0
SPEED_WARN_FRACTION = 0.3


@dataclass
class Species:
    """One particle species stored as arrays (positions at integer steps,
    velocities at half steps)."""

    name: str
    q: float                 # coulombs, per particle
    m: float                 # kilograms
    pos: np.ndarray          # (N, 2) meters
    vel: np.ndarray          # (N, 3) m/s
    cell: np.ndarray         # (N,) face index cache
    alive: np.ndarray        # (N,) bool
    immobile: bool = False
    lam: np.ndarray = field(default=None, repr=False)  # (N, 3) cached barycentric

    def __post_init__(self):
        if self.m <= 0.0:
            raise ValueError(f"species {self.name}: mass must be positive")
        speeds = np.linalg.norm(self.vel, axis=1)
        fastest = speeds.max(initial=0.0)
        if fastest > SPEED_WARN_FRACTION * C_LIGHT:
            logger.warning(
                "species %s initialized at %.3g c; the push is non-relativistic",
                self.name, fastest / C_LIGHT,
            )

    @property
    def count(self) -> int:
        return self.pos.shape[0]


def build_n_matrix(q: float, m: float, dt: float,
                   b_half_prev, b_half_next) -> np.ndarray:
    """The unitless 3x3 implicit matrix ``I + [h]x`` built from the
    averaged magnetic field ``B = (B^{n+1/2} + B^{n-1/2}) / 2``."""
    if dt <= 0.0 or m <= 0.0:
        raise ValueError("dt and m must be positive")
    b = 0.5 * (np.asarray(b_half_prev, dtype=float)
               + np.asarray(b_half_next, dtype=float))
    hx, hy, hz = (q * dt / (2.0 * m)) * b
    return np.array([
        [1.0, -hz, hy],
        [hz, 1.0, -hx],
        [-hy, hx, 1.0],
    ])


def _cross(a: np.ndarray, b: np.ndarray) -> np.ndarray:
    # last-axis cross product; np.cross has too much call overhead here
    out = np.empty(np.broadcast(a, b).shape)
    out[..., 0] = a[..., 1] * b[..., 2] - a[..., 2] * b[..., 1]
    out[..., 1] = a[..., 2] * b[..., 0] - a[..., 0] * b[..., 2]
    out[..., 2] = a[..., 0] * b[..., 1] - a[..., 1] * b[..., 0]
    return out


def _apply_n_inverse(h: np.ndarray, x: np.ndarray, h2: np.ndarray) -> np.ndarray:
    """``(I + [h]x)^-1 x = (x - h cross x + h (h . x)) / (1 + |h|^2)``,
    broadcasting over leading axes."""
    hdx = np.sum(h * x, axis=-1, keepdims=True)
    return (x - _cross(h, x) + h * hdx) / (1.0 + h2)


def accelerate(vel: np.ndarray, e_field: np.ndarray, q: float, m: float,
               dt: float, b_half_prev: np.ndarray,
               b_half_next: np.ndarray) -> np.ndarray:
    """Velocity update over one step.  Works on single (3,) vectors or
    (N, 3) batches; the magnetic field arguments broadcast the same way."""
    vel = np.asarray(vel, dtype=float)
    e_field = np.asarray(e_field, dtype=float)
    b_avg = 0.5 * (np.asarray(b_half_prev, dtype=float)
                   + np.asarray(b_half_next, dtype=float))
    h = (q * dt / (2.0 * m)) * b_avg
    h2 = np.sum(h * h, axis=-1, keepdims=True)
    v_prime = vel - _cross(h, vel)          # N^T v
    rotated = _apply_n_inverse(h, v_prime, h2)
    kick = (q * dt / m) * _apply_n_inverse(h, e_field, h2)
    return rotated + kick


def push_positions(pos: np.ndarray, vel: np.ndarray, dt: float) -> np.ndarray:
    """Explicit position update ``r <- r + dt v`` (in-plane components)."""
    return pos + dt * vel[..., :2]


def push(pos, vel, cell: int, dt: float, mesh):
    """Advance one particle position and revalidate its cell by walking the
    mesh from the previous cell.

    Returns ``(new_pos, new_cell)``; the caller keeps the straight segment
    ``(pos, new_pos)`` for current deposition.  Raises
    :class:`wpic.mesh.WalkEscapedDomain` when the new position is outside
    the mesh (the engine then truncates the deposit at the boundary).
    """
    new_pos = push_positions(np.asarray(pos, dtype=float), np.asarray(vel), dt)
    new_cell = mesh.locate(cell, new_pos)
    return new_pos, new_cell
