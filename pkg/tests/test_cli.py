from __future__ import annotations

import textwrap

import pytest

from pphom.cli import EXIT_CONFIG, EXIT_OK, load_config, main

DISK = """
geometry: {hole_shape: disk, hole_radius: 0.25, resolution: 8}
coefficients:
  N: 1
  entries: {M.11: "1", E.11: "1", E.22: "1", H.1: "1", L.11: "1", G.11: "1"}
time: {T: 0.02, dt: 0.01}
epsilon: 0.25
"""


def write(tmp_path, text, name="run.yaml"):
    p = tmp_path / name
    p.write_text(textwrap.dedent(text))
    return str(p)


def test_cell_deterministic(tmp_path, capsys):
    cfg = write(tmp_path, DISK)
    assert main(["cell", "--config", cfg, "--out", str(tmp_path / "a")]) == EXIT_OK
    assert main(["cell", "--config", cfg, "--out", str(tmp_path / "b")]) == EXIT_OK
    for name in ("effective.csv", "cell_functions.csv"):
        assert (tmp_path / "a" / name).read_bytes() == (tmp_path / "b" / name).read_bytes()


def test_cell_plain_reports_identity(tmp_path, capsys):
    cfg = write(tmp_path, DISK.replace("hole_shape: disk", "hole_shape: none"))
    assert main(["cell", "--config", cfg, "--out", str(tmp_path / "o")]) == EXIT_OK
    head, row = (tmp_path / "o" / "effective.csv").read_text().splitlines()[:2]
    vals = dict(zip(head.split(","), map(float, row.split(","))))
    assert vals["E*11"] == pytest.approx(1.0, abs=1e-9) and vals["E*12"] == pytest.approx(0.0, abs=1e-9)


def test_unknown_key_rejected(tmp_path, capsys):
    cfg = write(tmp_path, DISK + "geometry_typo: 1\n")
    assert main(["cell", "--config", cfg, "--out", str(tmp_path / "o")]) == EXIT_CONFIG
    assert "geometry_typo" in capsys.readouterr().err
    with pytest.raises(ValueError, match="unknown key"):
        load_config(DISK.replace("resolution: 8", "resolution: 8, holes: 2"), is_text=True)


def test_malformed_yaml(tmp_path, capsys):
    cfg = write(tmp_path, "geometry: [unclosed\n")
    assert main(["cell", "--config", cfg]) == EXIT_CONFIG


def test_epsilon_must_tile(tmp_path):
    cfg = write(tmp_path, DISK.replace("epsilon: 0.25", "epsilon: 0.3"))
    assert main(["fine", "--config", cfg, "--out", str(tmp_path / "o")]) == EXIT_CONFIG


def test_constants_infeasible_triple(tmp_path, capsys):
    cfg = write(tmp_path, """
    coefficients:
      N: 1
      entries: {M.11: "1", E.11: "1", E.22: "1", D.211: "1.6"}
    """)
    assert main(["constants", "--config", cfg, "--out", str(tmp_path / "o")]) == EXIT_CONFIG
    assert "(2, 1, 1)" in capsys.readouterr().err


def test_constants_no_coupling_zero_mu(tmp_path, capsys):
    cfg = write(tmp_path, DISK + "constants: {grid: 5}\n")
    assert main(["constants", "--config", cfg, "--out", str(tmp_path / "o")]) == EXIT_OK
    rows = {ln.split("=")[0].strip(): float(ln.split("=")[1].split("#")[0])
            for ln in (tmp_path / "o" / "constants.txt").read_text().splitlines()}
    assert rows["mu"] == 0.0 and rows["kappa"] == 0.0


def test_fine_macro_and_single_eps_sweep(tmp_path, capsys):
    cfg = write(tmp_path, DISK + "epsilons: [0.25]\n")
    for cmd in ("fine", "macro", "sweep"):
        assert main([cmd, "--config", cfg, "--out", str(tmp_path / cmd)]) == EXIT_OK, cmd
    report = (tmp_path / "sweep" / "corrector_report.csv").read_text()
    assert "status=insufficient points" in report
    assert (tmp_path / "fine" / "manifest.yaml").exists()


def test_oscillation_and_corrosion_without_config(tmp_path, capsys):
    assert main(["oscillation", "--out", str(tmp_path)]) == EXIT_OK
    assert main(["corrosion", "--out", str(tmp_path)]) == EXIT_OK
    assert "det G~ = 1.5" in capsys.readouterr().out


def test_missing_config_and_bad_command(tmp_path, capsys):
    assert main(["cell"]) == EXIT_CONFIG
    with pytest.raises(SystemExit):
        main(["bogus"])
