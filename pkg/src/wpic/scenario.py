"""Scenario files: INI sections describing mesh, materials, initial fields,
species, time stepping, output, and solver settings.  All physical
quantities are SI.
"""
from __future__ import annotations

import configparser
from dataclasses import dataclass, field
from pathlib import Path

EPS0 = 8.8541878128e-12   # F/m
MU0 = 1.25663706212e-6    # H/m


class ScenarioError(ValueError):
    """Raised for unreadable or inconsistent scenario files."""


@dataclass
class SpeciesSpec:
    name: str
    q: float
    m: float
    count: int
    immobile: bool
    positions: tuple     # ("point", x, y) | ("disk", cx, cy, r) | ("copy", name)
    velocities: tuple    # ("zero",) | ("fixed", vx, vy, vz) | ("maxwellian", vth)
    seed: int | None = None


@dataclass
class Scenario:
    mesh_path: Path
    eps_r: float = 1.0
    mu_r: float = 1.0
    bz: float = 0.0
    species: list[SpeciesSpec] = field(default_factory=list)
    dt: float | None = None          # None: derive from the Courant limit
    steps: int = 0
    courant_safety: float = 0.9
    half_step_backpush: bool = False
    cadence: int = 0                 # snapshot interval; 0 disables snapshots
    watched_vertices: list[int] = field(default_factory=list)
    cg_rel_tol: float = 1e-12
    cg_max_iter: int = 2000
    seed: int = 1
    allow_unstable: bool = False

    @property
    def epsilon(self) -> float:
        return self.eps_r * EPS0

    @property
    def mu(self) -> float:
        return self.mu_r * MU0


def _parse_positions(text: str) -> tuple:
    parts = text.split()
    kind = parts[0] if parts else ""
    try:
        if kind == "point" and len(parts) == 3:
            return ("point", float(parts[1]), float(parts[2]))
        if kind == "disk" and len(parts) == 4:
            return ("disk", float(parts[1]), float(parts[2]), float(parts[3]))
        if kind == "copy" and len(parts) == 2:
            return ("copy", parts[1])
    except ValueError:
        pass
    raise ScenarioError(
        f"bad positions spec {text!r}: expected 'point X Y', "
        "'disk CX CY R', or 'copy SPECIES'"
    )


def _parse_velocities(text: str) -> tuple:
    parts = text.split()
    kind = parts[0] if parts else ""
    try:
        if kind == "zero" and len(parts) == 1:
            return ("zero",)
        if kind == "fixed" and len(parts) == 4:
            return ("fixed", float(parts[1]), float(parts[2]), float(parts[3]))
        if kind == "maxwellian" and len(parts) == 2:
            return ("maxwellian", float(parts[1]))
    except ValueError:
        pass
    raise ScenarioError(
        f"bad velocities spec {text!r}: expected 'zero', 'fixed VX VY VZ', "
        "or 'maxwellian VTH'"
    )


def load_scenario(path) -> Scenario:
    """Parse a scenario INI file.  Relative mesh paths resolve against the
    scenario file's directory."""
    path = Path(path)
    if not path.is_file():
        raise ScenarioError(f"scenario file not found: {path}")
    cp = configparser.ConfigParser(inline_comment_prefixes=("#", ";"))
    try:
        with open(path, "r", encoding="utf-8") as fh:
            cp.read_file(fh)
    except (configparser.Error, OSError) as exc:
        raise ScenarioError(f"{path}: {exc}") from exc

    try:
        mesh_rel = cp.get("mesh", "path")
    except (configparser.NoSectionError, configparser.NoOptionError) as exc:
        raise ScenarioError(f"{path}: missing [mesh] path") from exc
    mesh_path = (path.parent / mesh_rel).resolve()

    sc = Scenario(mesh_path=mesh_path)
    if cp.has_section("materials"):
        sc.eps_r = cp.getfloat("materials", "epsilon_r", fallback=1.0)
        sc.mu_r = cp.getfloat("materials", "mu_r", fallback=1.0)
        if sc.eps_r <= 0 or sc.mu_r <= 0:
            raise ScenarioError(f"{path}: material parameters must be positive")
    if cp.has_section("fields"):
        sc.bz = cp.getfloat("fields", "bz", fallback=0.0)
    if cp.has_section("time"):
        if cp.has_option("time", "dt"):
            sc.dt = cp.getfloat("time", "dt")
        sc.steps = cp.getint("time", "steps", fallback=0)
        sc.courant_safety = cp.getfloat("time", "courant_safety", fallback=0.9)
        sc.half_step_backpush = cp.getboolean(
            "time", "half_step_backpush", fallback=False)
    if cp.has_section("output"):
        sc.cadence = cp.getint("output", "cadence", fallback=0)
        raw = cp.get("output", "watched_vertices", fallback="").strip()
        if raw:
            sc.watched_vertices = [int(t) for t in raw.replace(",", " ").split()]
    if cp.has_section("solver"):
        sc.cg_rel_tol = cp.getfloat("solver", "cg_rel_tol", fallback=1e-12)
        sc.cg_max_iter = cp.getint("solver", "cg_max_iter", fallback=2000)
    if cp.has_section("rng"):
        sc.seed = cp.getint("rng", "seed", fallback=1)

    names = set()
    for section in cp.sections():
        if not section.startswith("species."):
            continue
        name = section.split(".", 1)[1]
        if name in names:
            raise ScenarioError(f"{path}: duplicate species {name!r}")
        names.add(name)
        try:
            spec = SpeciesSpec(
                name=name,
                q=cp.getfloat(section, "q"),
                m=cp.getfloat(section, "m"),
                count=cp.getint(section, "count"),
                immobile=cp.getboolean(section, "immobile", fallback=False),
                positions=_parse_positions(cp.get(section, "positions")),
                velocities=_parse_velocities(cp.get(section, "velocities")),
                seed=cp.getint(section, "seed", fallback=None),
            )
        except (configparser.NoOptionError, ValueError) as exc:
            raise ScenarioError(f"{path}: [{section}]: {exc}") from exc
        if spec.count < 0:
            raise ScenarioError(f"{path}: [{section}]: count must be >= 0")
        if spec.m <= 0:
            raise ScenarioError(f"{path}: [{section}]: mass must be positive")
        sc.species.append(spec)

    for spec in sc.species:
        if spec.positions[0] == "copy":
            src = spec.positions[1]
            if src not in names or src == spec.name:
                raise ScenarioError(
                    f"{path}: species {spec.name!r} copies unknown species {src!r}")

    if sc.steps < 0:
        raise ScenarioError(f"{path}: steps must be >= 0")
    if sc.dt is not None and sc.dt <= 0:
        raise ScenarioError(f"{path}: dt must be positive")
    if not 0 < sc.courant_safety <= 1:
        raise ScenarioError(f"{path}: courant_safety must be in (0, 1]")
    return sc
