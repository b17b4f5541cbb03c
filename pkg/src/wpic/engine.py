"""Simulation orchestration: initial conditions, the per-step update
sequence, and whole-run execution with diagnostics and snapshot output.

Each step executes, in order: magnetic update, field gathers at the old
positions, velocity update, position push with cell walking, current
scatter along the produced trajectory segments, electric update; then the
vertex charge array is rebuilt from scratch and diagnostics are emitted.
"""
from __future__ import annotations

import json
import logging
import os
import time
from dataclasses import dataclass, field as dc_field
from pathlib import Path

import numpy as np

from . import deposit, diagnostics, hodge, pusher
from ._cg import FastCsr
from .maxwell import (FieldState, MaxwellStepper, SolveError, SolverConfig,
                      estimate_courant)
from .mesh import BARY_TOL, Mesh, build_incidence, load_mesh
from .scenario import Scenario, ScenarioError, SpeciesSpec

logger = logging.getLogger(__name__)

CONTINUITY_TOL_FACTOR = 1e-12   # bound is this times max|Q|/dt
TOTAL_CHARGE_ULPS = 4


class InitializationError(RuntimeError):
    """Scenario initial conditions are inconsistent."""


class InvariantViolation(RuntimeError):
    """A conservation bound failed during a strict run."""


@dataclass
class SimulationState:
    mesh: Mesh
    incidence: object
    operators: hodge.HodgeOperators
    stepper: MaxwellStepper
    fields: FieldState
    species: list[pusher.Species]
    dt: float
    dt_courant: float
    q_nodes: np.ndarray           # vertex charges at the current integer step
    watched: list[int] = dc_field(default_factory=list)
    step: int = 0
    interior_vertices: np.ndarray = None
    max_abs_charge: float = 0.0   # largest per-particle |Q| (for tolerances)
    # numba-backed operator wrappers for the per-step diagnostics
    stilde_fast: FastCsr = None
    star_eps_fast: FastCsr = None
    star_mu_inv_fast: FastCsr = None

    def rebuild_charges(self) -> np.ndarray:
        """Vertex charge array as a function of current particle positions
        (from the cached barycentric triples of the containing cells)."""
        q = np.zeros(self.mesh.num_vertices)
        for sp in self.species:
            mask = sp.alive
            if mask.any():
                deposit.scatter_charge(self.mesh, q, sp.q,
                                       sp.cell[mask], sp.lam[mask])
        return q

    def alive_charge(self) -> float:
        return sum(sp.q * int(sp.alive.sum()) for sp in self.species)


def _species_rng(scenario_seed: int, spec_seed: int | None, index: int):
    key = [scenario_seed, index] if spec_seed is None else [spec_seed]
    return np.random.Generator(np.random.Philox(key))


def _sample_positions(spec: SpeciesSpec, rng, by_name) -> np.ndarray:
    kind = spec.positions[0]
    if kind == "point":
        return np.tile(np.asarray(spec.positions[1:], dtype=float),
                       (spec.count, 1))
    if kind == "copy":
        src = by_name[spec.positions[1]]
        if src.count != spec.count:
            raise InitializationError(
                f"species {spec.name!r} copies {src.name!r} but counts differ "
                f"({spec.count} vs {src.count})")
        return src.pos.copy()
    cx, cy, radius = spec.positions[1:]
    pts = np.empty((spec.count, 2))
    filled = 0
    while filled < spec.count:  # uniform in the disk by rejection
        u = rng.random(2) * 2.0 - 1.0
        if u[0] * u[0] + u[1] * u[1] <= 1.0:
            pts[filled, 0] = cx + radius * u[0]
            pts[filled, 1] = cy + radius * u[1]
            filled += 1
    return pts


def _sample_velocities(spec: SpeciesSpec, rng) -> np.ndarray:
    kind = spec.velocities[0]
    if kind == "zero":
        return np.zeros((spec.count, 3))
    if kind == "fixed":
        return np.tile(np.asarray(spec.velocities[1:], dtype=float),
                       (spec.count, 1))
    vth = spec.velocities[1]
    vel = np.zeros((spec.count, 3))
    for k in range(spec.count):  # Box-Muller pair per particle, in-plane
        u1, u2 = rng.random(2)
        radius = np.sqrt(-2.0 * np.log(1.0 - u1))
        vel[k, 0] = vth * radius * np.cos(2.0 * np.pi * u2)
        vel[k, 1] = vth * radius * np.sin(2.0 * np.pi * u2)
    return vel


def initialize(scenario: Scenario, mesh: Mesh | None = None) -> SimulationState:
    """Build the full simulation state: mesh and operators, zeroed or
    configured fields, sampled particles, and the verified initial Gauss
    condition."""
    if mesh is None:
        mesh = load_mesh(scenario.mesh_path)
    inc = build_incidence(mesh)
    ops = hodge.assemble(mesh, scenario.epsilon, scenario.mu)

    dt_c = estimate_courant(inc.C, ops.star_eps, ops.star_mu_inv)
    if scenario.dt is None:
        dt = scenario.courant_safety * dt_c
    else:
        dt = scenario.dt
        if dt > dt_c and not scenario.allow_unstable:
            raise ScenarioError(
                f"dt = {dt:.6g} s exceeds the Courant limit {dt_c:.6g} s "
                "(pass --allow-unstable to run anyway)")

    config = SolverConfig(dt=dt, cg_rel_tol=scenario.cg_rel_tol,
                          cg_max_iter=scenario.cg_max_iter,
                          courant_safety=scenario.courant_safety)
    stepper = MaxwellStepper(mesh, inc.C, ops.star_eps, ops.star_mu_inv, config)

    fields = FieldState.zeros(mesh)
    # Static external B_z lives in the face DoFs: b_f = area_f * B_z.
    if scenario.bz != 0.0:
        fields.b[:] = mesh.area * scenario.bz

    species: list[pusher.Species] = []
    by_name: dict[str, pusher.Species] = {}
    for idx, spec in enumerate(scenario.species):
        rng = _species_rng(scenario.seed, spec.seed, idx)
        pos = _sample_positions(spec, rng, by_name)
        vel = _sample_velocities(spec, rng)
        if spec.positions[0] == "copy":
            src = by_name[spec.positions[1]]
            cell = src.cell.copy()
            lam = src.lam.copy()
        else:
            cell = np.empty(spec.count, dtype=np.int64)
            lam = np.empty((spec.count, 3))
            guess = 0
            for k in range(spec.count):
                guess = mesh.locate(guess, pos[k])
                cell[k] = guess
            lam[:] = mesh.barycentric_many(cell, pos)
        sp = pusher.Species(name=spec.name, q=spec.q, m=spec.m, pos=pos,
                            vel=vel, cell=cell,
                            alive=np.ones(spec.count, dtype=bool),
                            immobile=spec.immobile, lam=lam)
        species.append(sp)
        by_name[spec.name] = sp

    if scenario.half_step_backpush:
        # Rotate configured velocities back half a step in the initial B.
        for sp in species:
            if sp.immobile or sp.count == 0:
                continue
            bz = deposit.gather_B(mesh, fields.b, sp.cell)
            b3 = np.zeros((sp.count, 3))
            b3[:, 2] = bz
            sp.vel = pusher.accelerate(sp.vel, np.zeros((sp.count, 3)),
                                       sp.q, sp.m, -0.5 * dt, b3, b3)

    state = SimulationState(
        mesh=mesh, incidence=inc, operators=ops, stepper=stepper,
        fields=fields, species=species, dt=dt, dt_courant=dt_c,
        q_nodes=np.zeros(mesh.num_vertices),
        watched=list(scenario.watched_vertices),
        interior_vertices=np.flatnonzero(~mesh.boundary_vertex),
        max_abs_charge=max((abs(s.q) for s in species), default=0.0),
        stilde_fast=FastCsr(inc.Stilde),
        star_eps_fast=FastCsr(ops.star_eps),
        star_mu_inv_fast=FastCsr(ops.star_mu_inv),
    )
    state.q_nodes = state.rebuild_charges()

    for v in state.watched:
        if not 0 <= v < mesh.num_vertices:
            raise ScenarioError(f"watched vertex {v} not in mesh")
        if mesh.boundary_vertex[v]:
            logger.warning("watched vertex %d lies on the boundary; Gauss "
                           "rows there see the conductor", v)

    residual = diagnostics.gauss_residual(fields.e, state.q_nodes,
                                          inc.Stilde, ops.star_eps)
    # Scale against the gross deposited charge: overlapped +/- pairs cancel
    # the net charge only to rounding once several particles share a vertex.
    q_gross = np.zeros(mesh.num_vertices)
    for sp in species:
        if sp.count:
            deposit.scatter_charge(mesh, q_gross, abs(sp.q), sp.cell, sp.lam)
    scale = max(float(np.max(q_gross, initial=0.0)),
                float(np.max(np.abs(ops.star_eps @ fields.e), initial=0.0)))
    worst = float(np.max(np.abs(residual[state.interior_vertices]),
                         initial=0.0))
    if scale > 0.0 and worst > 1e-12 * scale:
        raise InitializationError(
            f"initial Gauss condition violated: |Stilde star_eps e0 - q0| = "
            f"{worst:.3e} (charge layout needs a consistent e0; overlap "
            "opposite charges or start from zero net charge)")

    logger.info("initialized: dt=%.6g s (Courant limit %.6g s), %d species, "
                "%d particles", dt, dt_c,
                len(species), sum(s.count for s in species))
    return state


def run_step(state: SimulationState) -> diagnostics.DiagnosticsRecord:
    """Advance one full step and return its diagnostics record."""
    mesh = state.mesh
    fields = state.fields
    stepper = state.stepper
    dt = state.dt

    e_prev = fields.e.copy()
    b_prev = fields.b.copy()

    # 1) magnetic update to the next half step
    stepper.step_b(fields, dt)

    fields.i[:] = 0.0
    chains: list[deposit.SegmentChain] = []
    for sp in state.species:
        if sp.immobile or sp.count == 0:
            continue
        mask = sp.alive
        if not mask.any():
            continue
        idx = np.flatnonzero(mask)
        cells = sp.cell[idx]
        lam = sp.lam[idx]

        # 2, 3) gathers at the pre-push positions
        e2 = deposit.gather_E(mesh, fields.e, cells, lam)
        e3 = np.zeros((idx.size, 3))
        e3[:, :2] = e2
        b3_next = np.zeros((idx.size, 3))
        b3_next[:, 2] = deposit.gather_B(mesh, fields.b, cells)
        b3_prev = np.zeros((idx.size, 3))
        b3_prev[:, 2] = deposit.gather_B(mesh, b_prev, cells)

        # 4) velocity update
        vel = pusher.accelerate(sp.vel[idx], e3, sp.q, sp.m, dt,
                                b3_prev, b3_next)
        sp.vel[idx] = vel

        # 5) position push
        new_pos = pusher.push_positions(sp.pos[idx], vel, dt)
        lam_new = mesh.barycentric_many(cells, new_pos)
        inside = np.all(lam_new >= -BARY_TOL, axis=1)

        # 6) current scatter along the produced segments
        ins = np.flatnonzero(inside)
        if ins.size:
            deposit.scatter_current_single(
                mesh, fields.i, sp.q, cells[ins], lam[ins], lam_new[ins], dt)
            sel = idx[ins]
            sp.pos[sel] = new_pos[ins]
            sp.lam[sel] = lam_new[ins]

        for k in np.flatnonzero(~inside):
            p = idx[k]
            chain = deposit.split_segment(mesh, cells[k], sp.pos[p],
                                          new_pos[k], lam_from=lam[k])
            deposit.scatter_current(mesh, fields.i, sp.q, chain, dt)
            chains.append(chain)
            sp.cell[p] = chain.final_face
            sp.lam[p] = chain.final_lam
            if chain.escaped:
                sp.pos[p] = chain.final_point
                sp.vel[p] = 0.0
                sp.alive[p] = False
                logger.info("%s particle %d left the domain at step %d",
                            sp.name, p, state.step)
            else:
                sp.pos[p] = new_pos[k]

    assert all(c.consumed for c in chains), \
        "scatter must consume every trajectory produced by this step's push"

    # 7) electric update
    stepper.step_e(fields, dt)

    q_next = state.rebuild_charges()
    interior = state.interior_vertices

    cont = diagnostics.continuity_residual(state.q_nodes, q_next, fields.i,
                                           state.stilde_fast, dt)
    gauss = diagnostics.gauss_residual(fields.e, q_next, state.stilde_fast,
                                       state.star_eps_fast)
    b_after = stepper.virtual_next_b(fields, dt)
    _dwe, _dwm, ps_dt, bal = diagnostics.energy_balance(
        e_prev, fields.e, b_prev, fields.b, b_after, fields.i,
        state.star_eps_fast, state.star_mu_inv_fast, dt)

    max_speed = 0.0
    for sp in state.species:
        if not sp.immobile and sp.alive.any():
            max_speed = max(max_speed, float(
                np.max(np.linalg.norm(sp.vel[sp.alive], axis=1))))

    state.step += 1
    state.q_nodes = q_next
    record = diagnostics.DiagnosticsRecord(
        step=state.step,
        time=state.step * dt,
        continuity_residual_inf=float(
            np.max(np.abs(cont[interior]), initial=0.0)),
        gauss_residual_inf=float(np.max(np.abs(gauss[interior]), initial=0.0)),
        We=diagnostics.electric_energy(fields.e, state.star_eps_fast),
        Wm=diagnostics.magnetic_energy(
            fields.b, b_after, state.star_mu_inv_fast),
        Ps_dt=float(ps_dt),
        energy_balance_residual=float(bal),
        total_charge=float(q_next.sum()),
        max_speed=max_speed,
        cg_iterations=stepper.last_iterations,
    )
    record.check_finite()
    assert state.fields.step == state.step and \
        state.fields.half_step + 1 == state.step, "staggering desynchronized"
    return record


def _atomic_write(path: Path, text: str) -> None:
    tmp = path.with_name(path.name + ".tmp")
    with open(tmp, "w", encoding="utf-8") as fh:
        fh.write(text)
    os.replace(tmp, path)


class _OutputWriter:
    """Collects per-run CSV tables and writes them atomically at the end."""

    def __init__(self, out_dir: Path | None, cadence: int):
        self.out_dir = Path(out_dir) if out_dir is not None else None
        self.cadence = cadence
        self.diag_rows: list[str] = []
        self.watch_rows: list[tuple] = []
        self.particle_rows: list[str] = []
        self.field_rows: list[str] = []

    def want_snapshot(self, step: int) -> bool:
        return (self.out_dir is not None and self.cadence > 0
                and step % self.cadence == 0)

    def add_record(self, rec: diagnostics.DiagnosticsRecord):
        if self.out_dir is not None:
            self.diag_rows.append(rec.csv_row())

    def add_watch(self, rows):
        if self.out_dir is not None:
            self.watch_rows.extend(rows)

    def snapshot(self, state: SimulationState):
        step = state.step
        for sp in state.species:
            for k in range(sp.count):
                self.particle_rows.append(
                    f"{step},{sp.name},{k},{float(sp.pos[k, 0])!r},"
                    f"{float(sp.pos[k, 1])!r},{float(sp.vel[k, 0])!r},"
                    f"{float(sp.vel[k, 1])!r},{float(sp.vel[k, 2])!r},"
                    f"{sp.cell[k]}")
        for idx, val in enumerate(state.fields.e):
            self.field_rows.append(f"{step},e,{idx},{float(val)!r}")
        for idx, val in enumerate(state.fields.b):
            self.field_rows.append(f"{step},b,{idx},{float(val)!r}")

    def flush(self):
        if self.out_dir is None:
            return
        self.out_dir.mkdir(parents=True, exist_ok=True)
        header = ",".join(diagnostics.DiagnosticsRecord.CSV_FIELDS)
        _atomic_write(self.out_dir / "diagnostics.csv",
                      "\n".join([header] + self.diag_rows) + "\n")
        watch = ["step,vertex,gauss_lhs,charge,residual"]
        watch += [f"{s},{v},{lhs!r},{rhs!r},{res!r}"
                  for s, v, lhs, rhs, res in self.watch_rows]
        _atomic_write(self.out_dir / "watched_vertices.csv",
                      "\n".join(watch) + "\n")
        particles = ["step,species,id,x,y,vx,vy,vz,cell"] + self.particle_rows
        _atomic_write(self.out_dir / "particles.csv",
                      "\n".join(particles) + "\n")
        fields_csv = ["step,kind,index,value"] + self.field_rows
        _atomic_write(self.out_dir / "fields.csv",
                      "\n".join(fields_csv) + "\n")


def run(scenario: Scenario, out_dir=None, strict: bool = False,
        steps_override: int | None = None) -> dict:
    """Initialize and execute a scenario; write outputs; return the summary.

    In strict mode any per-step conservation-bound violation raises
    :class:`InvariantViolation` after the summary is written.
    """
    t0 = time.perf_counter()
    state = initialize(scenario)
    steps = scenario.steps if steps_override is None else steps_override
    writer = _OutputWriter(out_dir, scenario.cadence)

    cont_bound = (CONTINUITY_TOL_FACTOR * state.max_abs_charge / state.dt
                  if state.max_abs_charge > 0.0 else 0.0)
    violations: list[str] = []
    max_cont = 0.0
    max_gauss = 0.0
    max_energy_resid = 0.0
    record = None

    for _ in range(steps):
        try:
            record = run_step(state)
        except (FloatingPointError, SolveError):
            # dump the offending state for post-mortem before aborting
            if out_dir is not None:
                writer.snapshot(state)
                writer.flush()
            raise
        writer.add_record(record)
        max_cont = max(max_cont, record.continuity_residual_inf)
        max_gauss = max(max_gauss, record.gauss_residual_inf)
        max_energy_resid = max(max_energy_resid,
                               abs(record.energy_balance_residual))

        if state.watched:
            lhs = state.stilde_fast @ (
                state.star_eps_fast @ state.fields.e)
            writer.add_watch(diagnostics.watch_vertices(
                [(state.step, lhs, state.q_nodes)], state.watched))

        if cont_bound and record.continuity_residual_inf > cont_bound:
            violations.append(
                f"step {state.step}: continuity residual "
                f"{record.continuity_residual_inf:.3e} > {cont_bound:.3e}")
        total_expected = state.alive_charge()
        charge_scale = sum(abs(s.q) * s.count for s in state.species)
        if abs(record.total_charge - total_expected) > \
                TOTAL_CHARGE_ULPS * np.finfo(float).eps * max(charge_scale, 1e-300):
            violations.append(
                f"step {state.step}: total charge {record.total_charge!r} "
                f"!= {total_expected!r}")

        if writer.want_snapshot(state.step):
            writer.snapshot(state)

    wall = time.perf_counter() - t0
    summary = {
        "steps": steps,
        "wall_time_s": wall,
        "dt": state.dt,
        "dt_courant": state.dt_courant,
        "particles_alive": int(sum(int(s.alive.sum()) for s in state.species)),
        "total_charge": state.alive_charge() if record is None
        else record.total_charge,
        "max_continuity_residual_inf": max_cont,
        "max_gauss_residual_inf": max_gauss,
        "max_energy_balance_residual": max_energy_resid,
        "final_max_speed": 0.0 if record is None else record.max_speed,
        "violations": violations,
    }
    if out_dir is not None:
        writer.flush()
        _atomic_write(Path(out_dir) / "summary.json",
                      json.dumps(summary, indent=2) + "\n")
    if strict and violations:
        raise InvariantViolation("; ".join(violations))
    logger.info("run finished: %d steps in %.2f s", steps, wall)
    return summary
