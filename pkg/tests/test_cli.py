import json
import math
from pathlib import Path

import pytest

from boxgas.cli import main

CONFIGS = Path(__file__).resolve().parents[1] / "configs"


def run(argv, capsys):
    code = main([str(a) for a in argv])
    out, err = capsys.readouterr()
    return code, out, err


def test_exact_single_site(capsys):
    code, out, _ = run(["exact-z", "--config", CONFIGS / "single_site.yaml"], capsys)
    rec = json.loads(out)
    assert code == 0 and rec["schema"] == "boxgas.partition/1"
    assert rec["z"] == pytest.approx(0.0676676, abs=1e-7)
    code, out, _ = run(["exact-z", "--config", CONFIGS / "single_site.yaml", "--conditional"], capsys)
    assert json.loads(out)["z"] == pytest.approx(0.1115651, abs=1e-7)


def test_exact_flags_override_config(capsys):
    code, out, _ = run(["exact-z", "--config", CONFIGS / "single_site.yaml", "--N", "0"], capsys)
    assert code == 0 and json.loads(out)["z"] == pytest.approx(math.exp(-1), abs=1e-15)


def test_exact_oracle(capsys, tmp_path):
    code, out, _ = run(["exact-z", "--model", CONFIGS / "free_d1.yaml", "--box=-2,2", "--N", "5", "--oracle"], capsys)
    rec = json.loads(out)
    assert code == 0 and rec["oracle_rel_err"] <= 1e-12
    code, _, err = run(["exact-z", "--config", CONFIGS / "single_site.yaml", "--oracle"], capsys)
    assert code == 2 and "v = 0" in err


def test_exact_pinned(capsys):
    code, out, _ = run(["exact-z", "--config", CONFIGS / "pinned.yaml"], capsys)
    rec = json.loads(out)
    assert code == 0 and rec["variant"] == "pinned"
    assert rec["z"] == pytest.approx(math.exp(-6.5) * 0.5 * (math.exp(-5) + 2 * math.exp(-4)), rel=1e-12)


def test_missing_setting_exit_code(capsys):
    code, _, err = run(["exact-z", "--config", CONFIGS / "single_site.yaml", "--pinned", "1"], capsys)
    assert code == 2 and "error" in err


def test_bad_config_exit_code(capsys, tmp_path):
    bad = tmp_path / "bad.yaml"
    bad.write_text("box: [0, \n")
    code, _, _ = run(["exact-z", "--config", bad], capsys)
    assert code == 2


def test_sample_reproducible(capsys, tmp_path):
    args = ["sample", "--config", CONFIGS / "sample_3sites.yaml", "--sweeps", "500", "--burnin", "50"]
    a, b = tmp_path / "a.csv", tmp_path / "b.csv"
    assert run(args + ["--out", a], capsys)[0] == 0
    assert run(args + ["--out", b], capsys)[0] == 0
    assert a.read_bytes() == b.read_bytes()
    summary = json.loads((tmp_path / "a.summary.json").read_text())
    assert summary["schema"].startswith("boxgas.") and summary["N"] == 3
    header = a.read_text().splitlines()[1]
    assert header.startswith("sweep,energy_density,m_1") and "psi_0" in header


def test_sample_empty(capsys, tmp_path):
    out = tmp_path / "e.csv"
    code, _, _ = run(["sample", "--config", CONFIGS / "sample_3sites.yaml", "--N", "0", "--sweeps", "20",
                      "--out", out], capsys)
    rows = out.read_text().splitlines()[2:]
    assert code == 0 and len(rows) == 20
    assert len({r.split(",", 1)[1] for r in rows}) == 1


def test_free_energy_reference(capsys):
    code, out, _ = run(["free-energy", "--model", CONFIGS / "reference_d1.yaml", "--rho", "1"], capsys)
    rec = json.loads(out)
    assert code == 0 and rec["schema"].startswith("boxgas.")
    assert rec["chi_free"] == pytest.approx(0.1126897, abs=1e-6)
    assert rec["alpha"] == pytest.approx(-0.2692763, abs=1e-6)
    assert rec["bounds"]["lower"] == pytest.approx(2.1126897, abs=1e-6)
    assert rec["dchi_free_minus_alpha"] == pytest.approx(0.0, abs=1e-6)


def test_free_energy_sweep(capsys):
    code, out, _ = run(["free-energy", "--model", CONFIGS / "free_d1.yaml", "--rho-grid", "0.2,1.8,0.2"], capsys)
    rec = json.loads(out)
    assert code == 0 and len(rec["records"]) == 9
    assert all(r["bounds"]["lower"] == r["bounds"]["upper"] for r in rec["records"])
    assert rec["convexity_audit"]["min_second_difference_chi_free"] >= -1e-12


def test_structure_named(capsys, tmp_path):
    code, out, _ = run(["structure", "--curve", "synthetic", "--rho-c", "2", "--vbar", "1"], capsys)
    rec = json.loads(out)
    assert code == 0 and abs(rec["rho_t"] - 2.452) < 1e-3
    code, out, _ = run(["structure", "--curve", "quadratic", "--rho-c", "2", "--vbar", "1"], capsys)
    assert json.loads(out)["rho_t"] == pytest.approx(2.0, abs=1e-9)


def test_structure_files_and_sampled_curve(capsys, tmp_path):
    curve = tmp_path / "chi.csv"
    curve.write_text("rho,chi\n" + "".join(f"{i / 1000},{(i / 1000) ** 2 + math.exp(-i / 1000)}\n" for i in range(2001)))
    outdir = tmp_path / "out"
    code, _, _ = run(["structure", "--curve", curve, "--rho-c", "2", "--vbar", "1", "--out", outdir], capsys)
    assert code == 0
    report = json.loads((outdir / "report.json").read_text())
    assert abs(report["rho_t"] - 2.452) < 1e-3
    mass = (outdir / "mass_curves.csv").read_text().splitlines()
    assert mass[0].startswith("# schema=")
    row = next(line for line in mass[2:] if float(line.split(",")[0]) == 4.0)
    assert row == "4.0,2.0,2.0"


def test_structure_rejection(capsys):
    code, _, err = run(["structure", "--curve", "linear:0.5", "--rho-c", "2", "--vbar", "1"], capsys)
    assert code == 4 and "chi(rho_c - 1) + (2 rho_c - 1) vbar >= chi(rho_c)" in err
