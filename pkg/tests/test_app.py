import csv
import json

import numpy as np
import pytest

from mhdfem.app import cli
from mhdfem.app.experiments import (ExperimentReport, cavity_cell, coupling_tables, rate, run_convergence,
                                    run_coupling_study)
from mhdfem.app.problems import cavity
from mhdfem.app.vtk import export_vtk, point_fields, read_vtk_point_count
from mhdfem.assembly import MhdState
from mhdfem.solver import picard_solve
from conftest import assembler_for, spaces_for


def test_rate():
    assert rate(4.0, 1.0) == pytest.approx(2.0)
    assert rate(None, 1.0) is None


def test_cavity_cell_format():
    assert cavity_cell(6, 51.46, False) == "6x51.5"
    assert cavity_cell(7, 200.0, True) == ">7x200.0"


def test_single_level_has_no_order(tmp_path):
    rep = run_convergence([2])
    assert len(rep.rows) == 1 and rep.rows[0]["order_u"] is None
    path = rep.write(tmp_path)
    rows = list(csv.DictReader(open(path)))
    assert rows[0]["order_u"] == ""
    side = json.loads((tmp_path / "convergence.json").read_text())
    assert side["config"]["levels"] == [2] and side["config"]["params"]["Re"] == 1.0


def test_convergence_levels_must_ascend():
    with pytest.raises(ValueError):
        run_convergence([4, 2])


def test_csv_deterministic(tmp_path):
    a = run_coupling_study(sigmas=[1.0], couplings=[(1.0, 1.0)], levels=[2])
    b = run_coupling_study(sigmas=[1.0], couplings=[(1.0, 1.0)], levels=[2])
    pa, pb = a.write(tmp_path / "a"), b.write(tmp_path / "b")
    assert pa.read_text() == pb.read_text()
    tables = coupling_tables(a)
    assert list(tables) == [1.0]
    assert tables[1.0].columns == ["n", "h", "S=1,Rm=1"]


def test_vtk_zero_state(tmp_path):
    s = spaces_for(2)
    path = export_vtk(MhdState.zeros(s), s, tmp_path / "z.vtk")
    assert read_vtk_point_count(path) == s.mesh.n_vertices
    text = path.read_text()
    assert "CELL_TYPES 48" in text and "VECTORS velocity double" in text and "SCALARS Bmag double 1" in text
    body = text.split("POINT_DATA")[1].splitlines()
    nums = [float(v) for line in body[1:] if line and line[0] in "-0123456789" for v in line.split()]
    assert len(nums) == 8 * s.mesh.n_vertices and not any(nums)


def test_vtk_unwritable(tmp_path):
    s = spaces_for(1)
    with pytest.raises(OSError):
        export_vtk(MhdState.zeros(s), s, tmp_path / "missing" / "x.vtk")


def test_vtk_constant_B_projection():
    s = spaces_for(2)
    st = MhdState.zeros(s)
    from mhdfem.space import interpolate
    st.xb = interpolate(lambda x: np.tile([0.3, -1.0, 2.0], (len(x), 1)), s.magnetic, s.mesh)
    f = point_fields(st, s)
    assert np.allclose(f["B"], [0.3, -1.0, 2.0])
    assert np.allclose(f["Bmag"], np.sqrt(0.09 + 1 + 4))


@pytest.mark.slow
def test_cavity_lid_velocity_in_vtk(tmp_path):
    from conftest import cavity_run
    st, rep = cavity_run(8, "with_bubv")
    f = point_fields(st, spaces_for(8))
    speed = np.linalg.norm(f["velocity"], axis=1)
    assert 0.9 <= speed.max() <= 1.0


def test_config_file_and_flag_precedence(tmp_path):
    cfg_file = tmp_path / "run.cfg"
    cfg_file.write_text("# comment\nre = 5\nprecond.variant = without_bubv\nn = 2 3\ntol-outer = 1e-7\n")
    args = cli.build_parser().parse_args(["solve", "--config", str(cfg_file), "--re", "7"])
    cfg = cli.resolve("solve", args)
    assert cfg["re"] == 7.0 and cfg["variant"] == "without_bubv" and cfg["n"] == [2, 3]
    assert cfg["tol_outer"] == 1e-7


def test_config_errors(tmp_path):
    bad = tmp_path / "bad.cfg"
    bad.write_text("nonsense line\n")
    assert cli.main(["solve", "--config", str(bad)]) == 2
    bad.write_text("colour = blue\n")
    assert cli.main(["solve", "--config", str(bad)]) == 2


def test_cli_solve_manufactured(tmp_path, capsys):
    rc = cli.main(["solve", "--problem", "manufactured", "--n", "2", "--out", str(tmp_path), "--vtk"])
    assert rc == 0
    out = json.loads(capsys.readouterr().out.strip().splitlines()[-1])
    assert out["converged"] and out["errors"]["u_H1"] < 0.1
    assert (tmp_path / "manufactured_n2.vtk").exists()
    assert json.loads((tmp_path / "solve_manufactured_n2.json").read_text())["config"]["n"] == [2]


def test_cli_coupling_and_exit_code(tmp_path, capsys):
    rc = cli.main(["coupling", "--n", "2", "--s", "1", "--sigma", "1", "--out", str(tmp_path)])
    assert rc == 0
    assert (tmp_path / "coupling_with_bubv.csv").exists()
    assert (tmp_path / "coupling_with_bubv_sigma=1.csv").exists()
    rc = cli.main(["coupling", "--n", "2", "--s", "100", "--sigma", "1", "--gmres-maxit", "2",
                   "--out", str(tmp_path)])
    assert rc == 1


def test_cli_cavity_smoke(tmp_path):
    rc = cli.main(["cavity", "--n", "2", "--variant", "with_bubv", "--out", str(tmp_path), "--vtk"])
    assert rc == 0
    rows = list(csv.DictReader(open(tmp_path / "cavity.csv")))
    assert rows[0]["variant"] == "with_bubv" and rows[0]["cell"].count("x") == 1
    assert (tmp_path / "cavity_n2_with_bubv.vtk").exists()


def test_n4_cavity_smoke_under_a_minute():
    import time
    t = time.perf_counter()
    prob = cavity(4)
    _, rep = picard_solve(prob, prob.params, spaces=spaces_for(4), assembler=assembler_for(4))
    assert rep.converged
    assert time.perf_counter() - t < 60.0
