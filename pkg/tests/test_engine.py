"""Scenario parsing, initialization, the step sequence, and whole runs."""
import numpy as np
import pytest

from wpic import deposit, diagnostics, engine
from wpic.engine import InitializationError, InvariantViolation
from wpic.scenario import ScenarioError, load_scenario

SCENARIOS = "scenarios"


def write_minimal_scenario(tmp_path, mesh_text_lines, body):
    mesh_file = tmp_path / "mesh.txt"
    mesh_file.write_text(mesh_text_lines)
    path = tmp_path / "case.ini"
    path.write_text(f"[mesh]\npath = mesh.txt\n{body}")
    return path


MESH_2TRI = "4 2\n1 0 0\n2 1 0\n3 0 1\n4 1 1\n2 3\n1 1 2 3\n2 2 4 3\n"


class TestScenarioParsing:
    def test_cyclotron_file(self):
        sc = load_scenario(f"{SCENARIOS}/cyclotron.ini")
        assert sc.bz == pytest.approx(2.275e-3)
        assert sc.dt == pytest.approx(1e-10)
        assert sc.steps == 200
        assert len(sc.species) == 2
        electron = sc.species[0]
        assert electron.q == pytest.approx(-1.6e-19)
        assert electron.velocities == ("fixed", 0.0, 1e8, 0.0)
        assert sc.species[1].immobile

    def test_missing_file(self, tmp_path):
        with pytest.raises(ScenarioError, match="not found"):
            load_scenario(tmp_path / "nope.ini")

    def test_missing_mesh_section(self, tmp_path):
        path = tmp_path / "bad.ini"
        path.write_text("[time]\nsteps = 5\n")
        with pytest.raises(ScenarioError, match="mesh"):
            load_scenario(path)

    def test_bad_positions_spec(self, tmp_path):
        path = write_minimal_scenario(tmp_path, MESH_2TRI, """
[species.x]
q = 1e-19
m = 1e-30
count = 1
positions = sphere 0 0 1
velocities = zero
""")
        with pytest.raises(ScenarioError, match="positions"):
            load_scenario(path)

    def test_copy_unknown_species(self, tmp_path):
        path = write_minimal_scenario(tmp_path, MESH_2TRI, """
[species.x]
q = 1e-19
m = 1e-30
count = 1
positions = copy ghost
velocities = zero
""")
        with pytest.raises(ScenarioError, match="ghost"):
            load_scenario(path)


class TestInitialize:
    def test_cyclotron_overlapped_pair(self):
        sc = load_scenario(f"{SCENARIOS}/cyclotron.ini")
        state = engine.initialize(sc)
        electron, ion = state.species
        np.testing.assert_array_equal(electron.pos, ion.pos)
        np.testing.assert_array_equal(electron.cell, ion.cell)
        np.testing.assert_array_equal(state.q_nodes, 0.0)
        np.testing.assert_array_equal(state.fields.e, 0.0)
        # static B_z folded into face DoFs
        np.testing.assert_allclose(state.fields.b,
                                   state.mesh.area * sc.bz, rtol=1e-15)

    def test_empty_scenario_all_zero(self, tmp_path):
        path = write_minimal_scenario(tmp_path, MESH_2TRI,
                                      "[time]\nsteps = 0\n")
        state = engine.initialize(load_scenario(path))
        assert not state.species
        np.testing.assert_array_equal(state.fields.b, 0.0)
        np.testing.assert_array_equal(state.q_nodes, 0.0)

    def test_unpaired_charge_rejected(self, tmp_path):
        # needs a mesh with interior vertices: the Gauss check skips
        # boundary rows (conductor)
        from conftest import structured_rect
        from wpic.mesh import save_mesh
        save_mesh(structured_rect(4, 4), tmp_path / "mesh.txt")
        path = tmp_path / "case.ini"
        path.write_text("""
[mesh]
path = mesh.txt

[species.lonely]
q = -1.6e-19
m = 9.1e-31
count = 1
positions = point 0.4 0.3
velocities = zero

[time]
steps = 1
""")
        with pytest.raises(InitializationError, match="Gauss"):
            engine.initialize(load_scenario(path))

    def test_dt_above_courant_rejected(self, tmp_path):
        path = write_minimal_scenario(tmp_path, MESH_2TRI, """
[time]
dt = 1.0
steps = 1
""")
        with pytest.raises(ScenarioError, match="Courant"):
            engine.initialize(load_scenario(path))
        sc = load_scenario(path)
        sc.allow_unstable = True
        engine.initialize(sc)  # permitted with the override

    def test_auto_dt_from_courant(self, tmp_path):
        path = write_minimal_scenario(tmp_path, MESH_2TRI, """
[time]
steps = 1
courant_safety = 0.5
""")
        state = engine.initialize(load_scenario(path))
        assert state.dt == pytest.approx(0.5 * state.dt_courant)

    def test_disk_sampling_inside_radius(self, tmp_path):
        path = write_minimal_scenario(tmp_path, MESH_2TRI, """
[species.e]
q = -1.6e-19
m = 9.1e-31
count = 50
positions = disk 0.5 0.5 0.2
velocities = maxwellian 1e5

[species.i]
q = 1.6e-19
m = 1e-27
count = 50
immobile = true
positions = copy e
velocities = zero

[time]
steps = 1
""")
        state = engine.initialize(load_scenario(path))
        r = np.linalg.norm(state.species[0].pos - [0.5, 0.5], axis=1)
        assert np.all(r <= 0.2)
        assert state.species[0].vel[:, 2].max() == 0.0

    def test_seed_reproducibility(self, tmp_path):
        body = """
[species.e]
q = -1.6e-19
m = 9.1e-31
count = 20
positions = disk 0.5 0.5 0.2
velocities = maxwellian 1e5

[species.i]
q = 1.6e-19
m = 1e-27
count = 20
immobile = true
positions = copy e
velocities = zero

[time]
steps = 1

[rng]
seed = 99
"""
        path = write_minimal_scenario(tmp_path, MESH_2TRI, body)
        a = engine.initialize(load_scenario(path))
        b = engine.initialize(load_scenario(path))
        np.testing.assert_array_equal(a.species[0].pos, b.species[0].pos)
        np.testing.assert_array_equal(a.species[0].vel, b.species[0].vel)


class TestRunStep:
    def test_empty_step_leaves_state(self, tmp_path):
        path = write_minimal_scenario(tmp_path, MESH_2TRI,
                                      "[time]\nsteps = 1\n")
        state = engine.initialize(load_scenario(path))
        rec = engine.run_step(state)
        assert state.step == 1
        assert rec.total_charge == 0.0
        assert rec.We == 0.0
        np.testing.assert_array_equal(state.fields.e, 0.0)

    def test_step_sequence_against_manual_composition(self):
        # one engine step must equal the seven-stage sequence composed by
        # hand from the module operations
        sc = load_scenario(f"{SCENARIOS}/cyclotron.ini")
        s1 = engine.initialize(sc)
        s2 = engine.initialize(sc)

        mesh, stepper, dt = s1.mesh, s1.stepper, s1.dt
        electron = s2.species[0]
        b_before = s2.fields.b.copy()
        stepper2 = s2.stepper
        stepper2.step_b(s2.fields, dt)
        lam = electron.lam
        e2 = deposit.gather_E(mesh, s2.fields.e, electron.cell, lam)
        e3 = np.zeros((1, 3))
        e3[:, :2] = e2
        b3n = np.zeros((1, 3))
        b3n[:, 2] = deposit.gather_B(mesh, s2.fields.b, electron.cell)
        b3p = np.zeros((1, 3))
        b3p[:, 2] = deposit.gather_B(mesh, b_before, electron.cell)
        from wpic import pusher
        vel = pusher.accelerate(electron.vel, e3, electron.q, electron.m,
                                dt, b3p, b3n)
        new_pos = pusher.push_positions(electron.pos, vel, dt)
        chain = deposit.split_segment(mesh, int(electron.cell[0]),
                                      electron.pos[0], new_pos[0],
                                      lam_from=electron.lam[0])
        i_manual = np.zeros(mesh.num_edges)
        deposit.scatter_current(mesh, i_manual, electron.q, chain, dt)
        s2.fields.i[:] = i_manual
        stepper2.step_e(s2.fields, dt)

        engine.run_step(s1)
        np.testing.assert_array_equal(s1.fields.e, s2.fields.e)
        np.testing.assert_array_equal(s1.fields.b, s2.fields.b)
        np.testing.assert_array_equal(s1.fields.i, i_manual)
        np.testing.assert_array_equal(s1.species[0].vel, vel)
        np.testing.assert_array_equal(s1.species[0].pos, new_pos)

    def test_continuity_bound_over_run(self):
        sc = load_scenario(f"{SCENARIOS}/cyclotron.ini")
        state = engine.initialize(sc)
        bound = 1e-12 * 1.6e-19 / state.dt
        for _ in range(300):
            rec = engine.run_step(state)
            assert rec.continuity_residual_inf <= bound

    def test_engine_diagnostics_match_reference_formulas(self):
        # the optimized per-step path reports exactly what the reference
        # diagnostics functions compute from the same state
        sc = load_scenario(f"{SCENARIOS}/cyclotron.ini")
        state = engine.initialize(sc)
        for _ in range(5):
            engine.run_step(state)
        q_prev = state.q_nodes.copy()
        e_prev = state.fields.e.copy()
        b_prev = state.fields.b.copy()
        rec = engine.run_step(state)
        inc, ops = state.incidence, state.operators
        cont = diagnostics.continuity_residual(
            q_prev, state.q_nodes, state.fields.i, inc.Stilde, state.dt)
        gauss = diagnostics.gauss_residual(
            state.fields.e, state.q_nodes, inc.Stilde, ops.star_eps)
        interior = state.interior_vertices
        assert rec.continuity_residual_inf == pytest.approx(
            float(np.abs(cont[interior]).max()), rel=1e-12, abs=1e-300)
        assert rec.gauss_residual_inf == pytest.approx(
            float(np.abs(gauss[interior]).max()), rel=1e-12, abs=1e-300)
        b_after = state.stepper.virtual_next_b(state.fields, state.dt)
        _, _, ps_dt, bal = diagnostics.energy_balance(
            e_prev, state.fields.e, b_prev, state.fields.b, b_after,
            state.fields.i, ops.star_eps, ops.star_mu_inv, state.dt)
        assert rec.Ps_dt == pytest.approx(float(ps_dt), rel=1e-9, abs=1e-60)
        assert rec.energy_balance_residual == pytest.approx(
            float(bal), rel=1e-9, abs=1e-45)

    def test_particle_exits_domain_and_deactivates(self, tmp_path):
        path = write_minimal_scenario(tmp_path, MESH_2TRI, """
[species.runner]
q = -1.6e-19
m = 9.1e-31
count = 1
positions = point 0.05 0.3
velocities = fixed -6.0e7 0.0 0.0

[species.anchor]
q = 1.6e-19
m = 1e-27
count = 1
immobile = true
positions = copy runner
velocities = zero

[time]
dt = 1.0e-9
steps = 2
""")
        state = engine.initialize(load_scenario(path))
        engine.run_step(state)  # moves -0.06 m per step: exits through x=0
        runner = state.species[0]
        assert not runner.alive[0]
        assert runner.pos[0, 0] == pytest.approx(0.0, abs=1e-12)
        # interior continuity still holds on the exit step; totals reflect
        # that the charge left
        rec = engine.run_step(state)
        assert rec.total_charge == pytest.approx(1.6e-19, rel=1e-12)


class TestRun:
    def test_zero_step_run(self, tmp_path):
        path = write_minimal_scenario(tmp_path, MESH_2TRI,
                                      "[time]\nsteps = 0\n")
        summary = engine.run(load_scenario(path), out_dir=tmp_path / "out")
        assert summary["steps"] == 0
        assert (tmp_path / "out" / "summary.json").exists()
        assert (tmp_path / "out" / "diagnostics.csv").read_text().count("\n") == 1

    def test_cyclotron_outputs(self, tmp_path):
        sc = load_scenario(f"{SCENARIOS}/cyclotron.ini")
        sc.steps = 60
        out = tmp_path / "out"
        summary = engine.run(sc, out_dir=out)
        assert summary["violations"] == []
        assert abs(summary["total_charge"]) < 1e-33
        diag = (out / "diagnostics.csv").read_text().strip().splitlines()
        assert len(diag) == 61
        watched = (out / "watched_vertices.csv").read_text().strip().splitlines()
        assert len(watched) == 1 + 60 * 2  # two watched vertices
        parts = (out / "particles.csv").read_text().strip().splitlines()
        assert parts[0] == "step,species,id,x,y,vx,vy,vz,cell"
        assert len(parts) == 1 + 2 * 1  # cadence 50: snapshot at step 50

    def test_determinism_bitwise_csv(self, tmp_path):
        sc = load_scenario(f"{SCENARIOS}/plasma_ball.ini")
        sc.steps = 40
        sc.cadence = 10
        a = tmp_path / "a"
        b = tmp_path / "b"
        engine.run(sc, out_dir=a)
        engine.run(sc, out_dir=b)
        for name in ("diagnostics.csv", "particles.csv", "fields.csv",
                     "watched_vertices.csv"):
            assert (a / name).read_bytes() == (b / name).read_bytes()

    def test_strict_mode_raises_on_violation(self, tmp_path, monkeypatch):
        sc = load_scenario(f"{SCENARIOS}/cyclotron.ini")
        sc.steps = 3
        monkeypatch.setattr(engine, "CONTINUITY_TOL_FACTOR", 1e-40)
        with pytest.raises(InvariantViolation):
            engine.run(sc, strict=True)

    def test_nan_aborts_with_state_dump(self, tmp_path):
        sc = load_scenario(f"{SCENARIOS}/cyclotron.ini")
        sc.steps = 5
        out = tmp_path / "out"

        orig = engine.run_step

        def poisoned(state):
            state.fields.b[0] = np.nan
            return orig(state)

        import unittest.mock as mock
        with mock.patch.object(engine, "run_step", side_effect=poisoned):
            with pytest.raises(FloatingPointError):
                engine.run(sc, out_dir=out)
        # the crash left a snapshot of the bad state behind
        assert (out / "fields.csv").exists()

    def test_no_temp_files_after_run(self, tmp_path):
        sc = load_scenario(f"{SCENARIOS}/cyclotron.ini")
        sc.steps = 5
        out = tmp_path / "out"
        engine.run(sc, out_dir=out)
        assert not list(out.glob("*.tmp"))

    def test_cg_iterations_stay_bounded(self):
        # warm-started solves must not trend upward over a run
        sc = load_scenario(f"{SCENARIOS}/cyclotron.ini")
        state = engine.initialize(sc)
        iters = [engine.run_step(state).cg_iterations for _ in range(600)]
        early = np.mean(iters[100:200])
        late = np.mean(iters[-100:])
        assert late <= max(2.0 * early, early + 5)
