import json
import subprocess
import sys

import pytest

from riskbias.cli import UsageError, main, parse_cli, read_config_file
from riskbias.experiments import EXPERIMENTS, GPD_DATASETS, PRESETS, read_csv

IDS = ["fig1", "fig2", "fig3", "fig4", "fig5", "fig6", "fig8", "table1", "table2"]


def test_list_prints_nine_experiments(capsys):
    assert main(["list"]) == 0
    lines = capsys.readouterr().out.strip().splitlines()
    assert [ln.split()[0] for ln in lines] == IDS
    assert sorted(EXPERIMENTS) == sorted(IDS)


@pytest.mark.parametrize("argv", [["run", "fig7"], ["run", "fig1", "--scale", "ten"], ["frobnicate"], [],
                                  ["run", "fig1", "--bogus"], ["run", "fig1", "--bootstrap", "5"]])
def test_usage_errors_exit_2(argv, capsys):
    assert main(argv) == 2
    assert "error" in capsys.readouterr().err


def test_console_script_entry_point():
    r = subprocess.run([sys.executable, "-m", "riskbias.cli", "run", "nope"], capture_output=True, text=True)
    assert r.returncode == 2


def test_config_file_overridden_by_flags(tmp_path):
    cfg = tmp_path / "run.cfg"
    cfg.write_text("# desk run\nscale = 3000\nseed=11\nbootstrap=2000\nsvg = yes\n")
    c = parse_cli(["run", "fig1", "--config", str(cfg), "--seed", "5"])
    assert (c.scale, c.seed, c.bootstrap, c.svg) == (3000, 5, 2000, True)
    assert read_config_file(str(cfg))["seed"] == 11
    bad = tmp_path / "bad.cfg"
    bad.write_text("colour = red\n")
    with pytest.raises(UsageError):
        parse_cli(["run", "fig1", "--config", str(bad)])


def test_infinite_mean_dataset_rejected_for_es(tmp_path, capsys):
    rc = main(["run", "table2", "--datasets", "3", "--scale", "300", "--bootstrap", "500", "--out", str(tmp_path)])
    assert rc == 2
    assert "configuration error" in capsys.readouterr().err


def test_small_convergence_scale_rejected(tmp_path):
    assert main(["run", "fig1", "--scale", "500", "--out", str(tmp_path)]) == 2


def test_preset_constants():
    d1, d2, d3 = GPD_DATASETS
    assert (d1.law.u, d1.law.xi, d1.law.beta, d1.level, d1.window) == (-0.978, 0.212, 0.869, 0.05, 50)
    assert (d2.law.u, d2.law.xi, d2.law.beta, d2.level, d2.window) == (-2.2, 0.388, 0.545, 0.075, 50)
    assert (d3.law.u, d3.law.xi, d3.law.beta, d3.level, d3.window) == (-0.40028, 1.19, 0.774, 0.10, 42)
    assert d3.infinite_mean and not d1.infinite_mean and not d2.infinite_mean
    g = PRESETS["garch"].law
    assert (g.mu, g.omega, g.alpha, g.beta) == (0.0, 1e-4, 0.1, 0.8)
    assert PRESETS["gaussian_var"].level == 0.01 and PRESETS["gaussian_es"].level == 0.025
    assert PRESETS["gaussian_var"].window == 250
    assert PRESETS["gaussian_evar"].level == 0.00145
    assert PRESETS["t5_evar"].law.nu == 5.0
    t = PRESETS["gpd_tail_var"].law
    assert (t.u, t.xi, t.beta, t.p) == (-1.0, 0.05, 0.7, 0.2)


def test_manifest_records_presets_and_repeat_runs_identical(tmp_path, capsys):
    argv = ["run", "table1", "--seed", "7", "--scale", "300", "--bootstrap", "500"]
    assert main(argv + ["--out", str(tmp_path / "a")]) == 0
    assert main(argv + ["--out", str(tmp_path / "b")]) == 0
    capsys.readouterr()
    a, b = tmp_path / "a" / "table1", tmp_path / "b" / "table1"
    assert (a / "table1.csv").read_bytes() == (b / "table1.csv").read_bytes()
    man = json.loads((a / "manifest.json").read_text())
    assert man["seed"] == 7 and man["scale"] == 300 and man["bootstrap"] == 500
    assert man["errors"] == []
    assert {"wall_time_s", "versions", "anchor"} <= set(man)
    rec = man["presets"]
    assert [rec[k][f] for k in ("dataset1", "dataset2", "dataset3") for f in ("u", "xi", "beta", "level", "window")] == [
        -0.978, 0.212, 0.869, 0.05, 50, -2.2, 0.388, 0.545, 0.075, 50, -0.40028, 1.19, 0.774, 0.10, 42]
    assert rec["dataset3"]["infinite_mean"] is True
    lines = (a / "table1.csv").read_text().splitlines()
    assert lines[0] == "# table=1"
    assert lines[1] == "dataset,estimator,T,S,NGZ,DM,DM_p,MR,SD"
    rows = read_csv(a / "table1.csv")
    assert len(rows) == 15


def test_every_csv_has_anchor_and_svg(tmp_path):
    assert main(["run", "fig1", "--scale", "1000", "--svg", "--out", str(tmp_path)]) == 0
    out = tmp_path / "fig1"
    csvs = list(out.glob("*.csv"))
    assert csvs and all(p.read_text().startswith("# figure=1\nm,estimator,statistic,value\n") for p in csvs)
    svgs = list(out.glob("*.svg"))
    assert svgs and svgs[0].read_text().lstrip().startswith("<?xml")
    man = json.loads((out / "manifest.json").read_text())
    assert man["presets"]["gaussian_var"]["level"] == 0.01
