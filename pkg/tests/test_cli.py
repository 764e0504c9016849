import csv
import json

import numpy as np
import pytest

from biphoton.cli import ANALYZE_COLUMNS, main
from biphoton.io import TABLE_COLUMNS, read_bpgm, read_rows_csv, write_bpfs, write_projection_csv
from biphoton.reconstruction import ProjectionImage, ProjectionKind
from biphoton.simulator import CameraSpec, FrameStack, ImagingMode

SMALL = """\
scenario.name = small
scenario.mode = {mode}
scenario.frames = 400
scenario.seed = 3
model.sigma_r_um = 7.9
camera.width = 24
camera.height = 24
"""


@pytest.fixture
def cfg(tmp_path):
    def make(mode="momentum", extra=""):
        path = tmp_path / f"{mode}.cfg"
        path.write_text(SMALL.format(mode=mode) + extra)
        return str(path)
    return make


def run(*args):
    return main([str(a) for a in args])


def test_simulate_is_deterministic(tmp_path, cfg):
    c = cfg()
    assert run("simulate", c, "--reproducible", "--out", tmp_path / "a.bpfs") == 0
    assert run("simulate", c, "--reproducible", "--out", tmp_path / "b.bpfs") == 0
    assert (tmp_path / "a.bpfs").read_bytes() == (tmp_path / "b.bpfs").read_bytes()
    side_a = (tmp_path / "a.bpfs.json").read_text()
    side_b = (tmp_path / "b.bpfs.json").read_text().replace("b.bpfs", "a.bpfs")
    assert side_a == side_b
    meta = json.loads(side_a)
    assert meta["resolved"]["scenario.frames"] == 400 and meta["seed"] == 3
    assert "python" not in meta


def test_seed_flag_changes_output(tmp_path, cfg):
    c = cfg()
    run("simulate", c, "--out", tmp_path / "a.bpfs")
    run("simulate", c, "--seed", 4, "--out", tmp_path / "b.bpfs")
    assert (tmp_path / "a.bpfs").read_bytes() != (tmp_path / "b.bpfs").read_bytes()


def test_pipeline_to_sigma_k_row(tmp_path, cfg):
    c = cfg(extra="model.sigma_k_rad_per_mm = 9.7\n")
    assert run("simulate", c, "--set", "scenario.frames=3000", "--out", tmp_path / "s.bpfs") == 0
    assert run("reconstruct", tmp_path / "s.bpfs", "--out", tmp_path / "g.bpgm") == 0
    assert run("project", tmp_path / "g.bpgm", "--kind", "sum", "--out", tmp_path / "sum.csv",
               "--pgm", tmp_path / "sum.pgm") == 0
    assert run("project", tmp_path / "g.bpgm", "--kind", "MINUS", "--out", tmp_path / "minus.csv") == 0
    assert (tmp_path / "sum.pgm").read_bytes().startswith(b"P5")
    assert run("analyze", tmp_path / "sum.csv", tmp_path / "minus.csv", "--out", tmp_path / "w.csv") == 0
    rows = read_rows_csv(tmp_path / "w.csv")
    assert list(rows[0]) == ANALYZE_COLUMNS
    sk = next(r for r in rows if r["quantity"] == "sigma_k")
    assert sk["unit"] == "rad/mm" and float(sk["value"]) == pytest.approx(9.7, rel=0.1)


def test_identical_two_frame_stack_gives_zero_gamma(tmp_path):
    spec = CameraSpec.momentum(5, 4)
    frame = np.arange(20, dtype=np.uint16).reshape(4, 5)
    write_bpfs(tmp_path / "s.bpfs", FrameStack(spec, ImagingMode.MOMENTUM, np.stack([frame, frame])))
    assert run("reconstruct", tmp_path / "s.bpfs", "--out", tmp_path / "g.bpgm") == 0
    assert not read_bpgm(tmp_path / "g.bpgm").raw.any()


def test_exit_code_config_errors(tmp_path, cfg, capsys):
    bad = tmp_path / "bad.cfg"
    bad.write_text("scenario.frames = 10\nunknown.key = 3\n")
    assert run("simulate", bad, "--out", tmp_path / "x.bpfs") == 2
    assert "bad.cfg:2" in capsys.readouterr().err
    assert run("simulate", cfg(), "--set", "scenario.frames=0", "--out", tmp_path / "x.bpfs") == 2
    assert run("simulate", cfg(), "--set", "noequals", "--out", tmp_path / "x.bpfs") == 2
    assert run("simulate", cfg()) == 2   # no --out
    with pytest.raises(SystemExit) as exc:
        run("simulate")
    assert exc.value.code == 2


def test_exit_code_format_errors(tmp_path):
    (tmp_path / "junk.bpfs").write_bytes(b"NOPE" + bytes(40))
    assert run("reconstruct", tmp_path / "junk.bpfs", "--out", tmp_path / "g.bpgm") == 3
    assert run("project", tmp_path / "junk.bpfs", "--kind", "SUM", "--out", tmp_path / "p.csv") == 3
    assert run("reconstruct", tmp_path / "missing.bpfs", "--out", tmp_path / "g.bpgm") == 3


def test_exit_code_mode_mismatch(tmp_path, cfg):
    run("simulate", cfg("position"), "--out", tmp_path / "p.bpfs")
    run("reconstruct", tmp_path / "p.bpfs", "--out", tmp_path / "p.bpgm")
    assert run("project", tmp_path / "p.bpgm", "--kind", "XPLUS", "--out", tmp_path / "x.csv") == 4
    assert run("project", tmp_path / "p.bpgm", "--kind", "XMINUS", "--out", tmp_path / "x.csv") == 0
    assert run("analyze", tmp_path / "x.csv") == 4


def test_strict_non_convergence(tmp_path):
    flat = ProjectionImage(ProjectionKind.SUM, np.ones((15, 15)), -7.0, 1.0, -7.0, 1.0, ImagingMode.MOMENTUM)
    write_projection_csv(tmp_path / "flat.csv", flat)
    assert run("analyze", tmp_path / "flat.csv", "--out", tmp_path / "a.csv") == 0
    assert read_rows_csv(tmp_path / "a.csv")[0]["converged"] == "0"
    assert run("analyze", tmp_path / "flat.csv", "--strict", "--out", tmp_path / "b.csv") == 5


def test_help_documents_columns(capsys):
    with pytest.raises(SystemExit):
        run("--help")
    out = capsys.readouterr().out
    for col in TABLE_COLUMNS + ANALYZE_COLUMNS:
        assert col in out
    for code in ("2 configuration", "3 file format", "4 imaging-mode", "5 fit"):
        assert code in out


@pytest.mark.slow
def test_table1_small_campaign(tmp_path, capsys):
    sets = ["pump.model=gaussian_schell", "camera.width=32", "camera.height=32"]
    args = ["table1", "--frames", "2000", "--reproducible", "--out", tmp_path / "t"]
    for s in sets:
        args += ["--set", s]
    assert run(*args) == 0
    with open(tmp_path / "t" / "table1.csv") as fh:
        reader = csv.DictReader(fh)
        assert reader.fieldnames == TABLE_COLUMNS
        rows = list(reader)
    assert [r["scenario"] for r in rows] == ["coherent", "diffuser_1", "diffuser_2", "diffuser_3"]
    assert "documented discrepancy" in capsys.readouterr().out
    manifest = json.loads((tmp_path / "t" / "manifest.json").read_text())
    assert all("sha256" in v for v in manifest["outputs"].values())
    for name in ("table1.csv", "regression.csv", "regression_fit.csv"):
        assert "np." not in (tmp_path / "t" / name).read_text()


def test_sweep(tmp_path, cfg):
    c = cfg(extra="model.sigma_k_rad_per_mm = 12\n")
    assert run("sweep", c, "--key", "scenario.frames", "--values", "300,400", "--out", tmp_path / "s") == 0
    rows = read_rows_csv(tmp_path / "s" / "sweep.csv")
    assert [r["value"] for r in rows] == ["300", "400"]
    assert run("sweep", c, "--key", "no.such", "--values", "1", "--out", tmp_path / "s") == 2
