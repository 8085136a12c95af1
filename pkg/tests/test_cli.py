import hashlib
import json
import subprocess
import sys

import numpy as np
import pytest

from biflab import cli, gridio

SMALL = """
seed = 11
tasks = sweep, ddc, volume, cycles, misiurewicz, census
family.preset = quadratic
domain.center = -1
domain.half_width = 1.5
domain.nx = 12
sweep.depth = 12
sweep.count = 64
ddc.baseline.center = -0.1
ddc.baseline.side = 0.2
ddc.baseline.n = 6
volume.center = -2
volume.side = 0.2
volume.n_min = 2
volume.n_max = 8
cycles.periods = 1
cycles.base_lam = 0
misiurewicz.n0_max = 3
census.center = 1
census.radius = 0.3
census.rho = 1
census.n = 2, 3
"""


def write(tmp_path, text, name="run.cfg"):
    p = tmp_path / name
    p.write_text(text)
    return p


def artifacts(outdir):
    return {p.name: p.read_bytes() for p in sorted(outdir.iterdir()) if p.name != "manifest.json"}


def test_full_run_outputs(tmp_path):
    out = tmp_path / "out"
    assert cli.main(["run", str(write(tmp_path, SMALL)), "-o", str(out)]) == 0
    man = json.loads((out / "manifest.json").read_text())
    assert man["exit_status"] == 0 and man["seed"] == 11
    assert all(rec["status"] == "ok" for rec in man["tasks"].values())
    names = {a["file"] for a in man["artifacts"]}
    for f in ("L_grid.csv", "L_stderr.csv", "L_grid.pgm", "ddc.csv", "ddc.pgm", "volume.json",
              "tracks.json", "hits.json", "census.json"):
        assert f in names
    values, header = gridio.read_grid(out / "L_grid.csv")
    assert values.shape == (12, 12) and np.all(np.isfinite(values))
    hits = json.loads((out / "hits.json").read_text())
    lams = [complex(*h["lam_star"]) for h in hits["hits"]]
    assert any(abs(l + 2) < 1e-8 for l in lams)


def test_manifest_digests_match_files(tmp_path):
    out = tmp_path / "out"
    cli.main(["run", str(write(tmp_path, SMALL)), "-o", str(out)])
    man = json.loads((out / "manifest.json").read_text())
    for a in man["artifacts"]:
        data = (out / a["file"]).read_bytes()
        assert hashlib.sha256(data).hexdigest() == a["sha256"] and len(data) == a["bytes"]
    listed = {a["file"] for a in man["artifacts"]}
    assert listed == {p.name for p in out.iterdir()} - {"manifest.json"}


def test_identical_across_thread_counts(tmp_path):
    cfgp = write(tmp_path, SMALL)
    cli.main(["--threads", "1", "run", str(cfgp), "-o", str(tmp_path / "a")])
    cli.main(["run", str(cfgp), "-o", str(tmp_path / "b"), "--threads", "8"])
    assert artifacts(tmp_path / "a") == artifacts(tmp_path / "b")


def test_seed_override_changes_sweep(tmp_path):
    cfgp = write(tmp_path, SMALL.replace("ddc, volume, cycles, misiurewicz, census", "ddc"))
    cli.main(["run", str(cfgp), "-o", str(tmp_path / "a")])
    cli.main(["run", str(cfgp), "-o", str(tmp_path / "b"), "--seed", "12"])
    assert (tmp_path / "a" / "L_grid.csv").read_bytes() != (tmp_path / "b" / "L_grid.csv").read_bytes()
    assert json.loads((tmp_path / "b" / "manifest.json").read_text())["seed"] == 12


def test_missing_seed_exit_1(tmp_path, capsys):
    cfgp = write(tmp_path, SMALL.replace("seed = 11", ""))
    assert cli.main(["run", str(cfgp), "-o", str(tmp_path / "o")]) == 1
    assert "seed" in capsys.readouterr().err
    assert not (tmp_path / "o").exists()


def test_small_escape_radius_exit_2(tmp_path, capsys):
    cfgp = write(tmp_path, SMALL + "family.escape_radius = 1.0\n")
    assert cli.main(["run", str(cfgp), "-o", str(tmp_path / "o")]) == 2
    assert "NoEscapeCertificate" in capsys.readouterr().err


def test_numeric_failure_exit_3(tmp_path):
    text = SMALL.replace("census.center = 1", "census.center = 2.9")
    out = tmp_path / "o"
    assert cli.main(["run", str(write(tmp_path, text)), "-o", str(out)]) == 3
    man = json.loads((out / "manifest.json").read_text())
    assert man["tasks"]["census"]["status"] == "failed"
    assert "PreconditionError" in man["tasks"]["census"]["error"]
    assert man["tasks"]["sweep"]["status"] == "ok" and man["exit_status"] == 3


def test_sweep_cache(tmp_path, monkeypatch):
    monkeypatch.setenv(cli.CACHE_ENV, str(tmp_path / "cache"))
    cfgp = write(tmp_path, SMALL.replace("ddc, volume, cycles, misiurewicz, census", "ddc"))
    cli.main(["run", str(cfgp), "-o", str(tmp_path / "a")])
    assert any((tmp_path / "cache").iterdir())
    cli.main(["run", str(cfgp), "-o", str(tmp_path / "b")])
    assert artifacts(tmp_path / "a") == artifacts(tmp_path / "b")
    man = json.loads((tmp_path / "b" / "manifest.json").read_text())
    assert man["tasks"]["sweep"]["info"]["cache_hit"]


def test_render_subcommand(tmp_path):
    src = tmp_path / "g.csv"
    gridio.write_grid(src, np.full((2, 3), 4.0), 0, 0, 1)
    assert cli.main(["render", str(src), "--scale", "signed", "-o", str(tmp_path / "s.pgm")]) == 0
    assert np.all(gridio.read_pgm(tmp_path / "s.pgm") == 128)
    assert cli.main(["render", str(src), "-o", str(tmp_path / "l.pgm")]) == 0
    assert np.all(gridio.read_pgm(tmp_path / "l.pgm") == 0)
    bad = tmp_path / "bad.csv"
    bad.write_text("1,2\n")
    assert cli.main(["render", str(bad), "-o", str(tmp_path / "x.pgm")]) == 1


def test_module_entry_point(tmp_path):
    src = tmp_path / "g.csv"
    gridio.write_grid(src, np.array([[0.0, 1.0], [2.0, 3.0]]), 0, 0, 1)
    proc = subprocess.run([sys.executable, "-m", "biflab", "render", str(src), "-o", str(tmp_path / "g.pgm")],
                          capture_output=True, text=True)
    assert proc.returncode == 0
    assert gridio.read_pgm(tmp_path / "g.pgm").ravel().tolist() == [0, 85, 170, 255]
