"""Command-line interface: subcommands, exit codes, output files."""
import json

from conftest import structured_rect
from wpic.cli import main
from wpic.mesh import save_mesh

SCENARIOS = "scenarios"


class TestRun:
    def test_cyclotron_short(self, tmp_path, capsys):
        out = tmp_path / "out"
        code = main(["run", f"{SCENARIOS}/cyclotron.ini",
                     "--out", str(out), "--steps", "30"])
        assert code == 0
        summary = json.loads((out / "summary.json").read_text())
        assert summary["steps"] == 30
        assert abs(summary["total_charge"]) < 1e-33  # pair sums to zero
        assert summary["violations"] == []
        printed = json.loads(capsys.readouterr().out)
        assert printed["steps"] == 30

    def test_zero_steps(self, tmp_path):
        out = tmp_path / "out"
        code = main(["run", f"{SCENARIOS}/cyclotron.ini",
                     "--out", str(out), "--steps", "0"])
        assert code == 0
        assert (out / "diagnostics.csv").exists()

    def test_missing_scenario(self, capsys):
        code = main(["run", "missing.ini"])
        assert code == 1
        assert "error" in capsys.readouterr().err

    def test_no_scenario_argument(self, capsys):
        code = main(["run"])
        assert code == 1

    def test_scenario_flag_alias(self, tmp_path):
        code = main(["run", "--scenario", f"{SCENARIOS}/cyclotron.ini",
                     "--out", str(tmp_path / "o"), "--steps", "1"])
        assert code == 0

    def test_unstable_dt_refused_then_allowed(self, tmp_path):
        mesh_path = tmp_path / "m.txt"
        save_mesh(structured_rect(3, 3), mesh_path)
        scen = tmp_path / "s.ini"
        scen.write_text(
            "[mesh]\npath = m.txt\n[time]\ndt = 1.0\nsteps = 0\n")
        assert main(["run", str(scen)]) == 1
        assert main(["run", str(scen), "--allow-unstable"]) == 0


class TestCheckMesh:
    def test_good_mesh(self, capsys):
        assert main(["check-mesh", "meshes/square_1p1m_9.txt"]) == 0
        assert "OK" in capsys.readouterr().out

    def test_flipped_orientation_normalized(self, tmp_path, capsys):
        path = tmp_path / "flipped.txt"
        path.write_text("3 2\n1 0 0\n2 1 0\n3 0 1\n1 3\n1 1 3 2\n")
        assert main(["check-mesh", str(path)]) == 0

    def test_corrupt_mesh(self, tmp_path, capsys):
        path = tmp_path / "bad.txt"
        path.write_text("3 2\n1 0 0\n2 1 0\n")
        assert main(["check-mesh", str(path)]) == 1
        assert "error" in capsys.readouterr().err


class TestCourant:
    def test_scenario_input(self, capsys):
        assert main(["courant", f"{SCENARIOS}/cyclotron.ini"]) == 0
        out = capsys.readouterr().out
        assert "dt_c" in out and "suggested dt" in out
        dt_c = float(out.splitlines()[0].split("=")[1].split()[0])
        assert 1.0e-10 < dt_c < 2.0e-10

    def test_bare_mesh_input(self, capsys):
        assert main(["courant", "meshes/square_0p4m_20.txt"]) == 0

    def test_single_triangle_smoke(self, tmp_path, capsys):
        path = tmp_path / "tri.txt"
        path.write_text("3 2\n1 0 0\n2 1 0\n3 0 1\n1 3\n1 1 2 3\n")
        assert main(["courant", str(path)]) == 0
        dt_c = float(capsys.readouterr().out.splitlines()[0]
                     .split("=")[1].split()[0])
        assert dt_c > 0

    def test_finer_mesh_smaller_dtc(self, tmp_path, capsys):
        coarse = tmp_path / "coarse.txt"
        fine = tmp_path / "fine.txt"
        save_mesh(structured_rect(4, 4), coarse)
        save_mesh(structured_rect(8, 8), fine)

        def dtc(p):
            main(["courant", str(p)])
            return float(capsys.readouterr().out.splitlines()[0]
                         .split("=")[1].split()[0])

        assert dtc(fine) < dtc(coarse)


class TestVerify:
    def test_reference_scenario_passes(self, capsys):
        assert main(["verify", f"{SCENARIOS}/cyclotron.ini"]) == 0
        out = capsys.readouterr().out
        assert "PASS" in out and "FAIL" not in out

    def test_corrupted_incidence_fails(self, capsys):
        code = main(["verify", f"{SCENARIOS}/cyclotron.ini",
                     "--corrupt-incidence"])
        assert code == 2
        assert "FAIL" in capsys.readouterr().out


class TestDumpMatrices:
    def test_writes_triplet_files(self, tmp_path):
        out = tmp_path / "mats"
        code = main(["dump-matrices", "meshes/square_1p1m_9.txt",
                     "--out", str(out)])
        assert code == 0
        for name in ("curl.txt", "div_dual.txt", "star_eps.txt",
                     "star_mu_inv.txt"):
            text = (out / name).read_text()
            assert text.startswith("#")
            assert len(text.strip().splitlines()) > 1
