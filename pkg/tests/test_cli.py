import csv
import json

import pytest

from multirate.cli import (
    ConfigError,
    RunConfig,
    emit_reports,
    main,
    parse_config_text,
    render_time_mesh,
    run_experiment,
)
from multirate.time_grid import uniform_partition


def test_minimal_config_defaults():
    cfg = parse_config_text("experiment = primal\n")
    assert (cfg.nu, cfg.lam, cfg.delta, cfg.gamma, cfg.beta) == (0.001, 1000.0, 0.1, 1000.0, (2.0, 0.0))


def test_vectors_comments_aliases():
    cfg = parse_config_text("# header\nbeta = 1.5, -2  # trailing\nlambda = 50\nlevels = 10,20,40\n")
    assert cfg.beta == (1.5, -2.0) and cfg.lam == 50.0 and cfg.levels == (10, 20, 40)


@pytest.mark.parametrize(
    "text, line, words",
    [
        ("experiment = primal\nnu = -1\n", 2, "nu"),
        ("M = 0\n", 1, "M"),
        ("colour = red\n", 1, "unknown key"),
        ("N = ten\n", 1, "bad value"),
        ("h = 0.3\n", 1, "cell width"),
        ("just words\n", 1, "key = value"),
    ],
)
def test_config_errors_name_line(text, line, words):
    with pytest.raises(ConfigError, match=f"line {line}") as err:
        parse_config_text(text)
    assert words in str(err.value)


def test_render_counts():
    svg = render_time_mesh(uniform_partition(1.0, 4, 2, 1))
    assert svg.count('class="tick fluid"') == 9
    assert svg.count('class="tick macro"') == 5
    assert svg.count('class="tick solid"') == 5


def small(**kw):
    base = dict(h=0.5, N=6, levels=(4, 8, 16), ref_levels=(4, 8, 16), steps=2)
    base.update(kw)
    return RunConfig(**base)


def test_convergence_csv_schema(tmp_path):
    report = run_experiment(small(experiment="convergence"))
    emit_reports(report, tmp_path)
    lines = (tmp_path / "convergence.csv").read_text().splitlines()
    assert lines[0] == "# multirate convergence v1"
    rows = list(csv.DictReader(lines[1:]))
    assert list(rows[0]) == [
        "N", "M", "L", "theta_f", "theta_s", "vartheta_f", "vartheta_s",
        "sigma", "J", "Jref_minus_J", "eff",
    ]
    # full round-trip precision
    for row, rec in zip(rows, report.convergence):
        assert float(row["sigma"]) == rec["sigma"]
        assert float(row["J"]) == rec["J"]


def test_reports_bit_identical(tmp_path):
    for kind in ("convergence", "adaptive", "decoupler-compare"):
        a, b = tmp_path / f"{kind}a", tmp_path / f"{kind}b"
        emit_reports(run_experiment(small(experiment=kind)), a)
        emit_reports(run_experiment(small(experiment=kind)), b)
        for f in sorted(a.iterdir()):
            assert f.read_bytes() == (b / f.name).read_bytes(), f.name


def test_decoupler_compare_rows(tmp_path):
    report = run_experiment(RunConfig(experiment="decoupler-compare", N=50, h=0.25))
    emit_reports(report, tmp_path)
    rows = list(csv.DictReader((tmp_path / "decoupler.csv").read_text().splitlines()[1:]))
    assert len(rows) == 100
    shoot = [int(r["evaluations"]) for r in rows if r["method"] == "shooting"]
    relax = [int(r["evaluations"]) for r in rows if r["method"] == "relaxation"]
    assert len(shoot) == len(relax) == 50
    # the first step has zero data until the source switches on the solution
    assert max(shoot) <= 8
    assert min(relax[1:]) >= 12
    assert report.summary["max_difference"] <= 1e-7


def test_main_end_to_end(tmp_path, capsys):
    cfg = tmp_path / "run.cfg"
    cfg.write_text("h = 0.5\nN = 4\nM = 2\nsteps = 1\nref_levels = 4, 8, 16\n")
    out = tmp_path / "out"
    assert main(["render-mesh", str(cfg), "--out", str(out)]) == 0
    assert (out / "mesh_step0.svg").exists()
    assert main(["adapt", str(cfg), "--out", str(out), "--seed", "3"]) == 0
    data = json.loads((out / "report.json").read_text())
    assert data["experiment"] == "adaptive" and data["config"]["seed"] == 3
    assert (out / "mesh_step1.svg").exists()
    bad = tmp_path / "bad.cfg"
    bad.write_text("nu = -1\n")
    assert main(["solve", str(bad)]) == 2
    assert "line 1" in capsys.readouterr().err
