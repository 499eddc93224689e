import subprocess
import sys

import numpy as np
import pytest
import yaml

from ppcoupling.cli import main
from ppcoupling.io import load_report, read_sweep_csv

TWO_MODE = """
extrinsic_damping: 0.02
modes:
  - {label: A, intrinsic_damping: 0.02, law: fixed, omega: 5.0, size_mm: 8.0}
  - {label: B, intrinsic_damping: 0.03, law: inverse, a: 40.0, b: 0.0}
couplings:
  - {modes: [A, B], coherent: COUPLING}
grid: {start: 4.5, stop: 5.5, points: 401}
sweep: {start: 7.6, stop: 8.4, step: 0.1}
fit:
  starts: 3
  free:
    - {name: coupling.A-B.re, initial: 0.05, lower: 0.0, upper: 0.3}
    - {name: gamma, initial: 0.05, lower: 0.001, upper: 0.1}
"""


def config(tmp_path, coupling=0.1, name="c.yaml", **extra):
    doc = yaml.safe_load(TWO_MODE.replace("COUPLING", str(coupling)))
    doc.update(extra)
    p = tmp_path / name
    p.write_text(yaml.safe_dump(doc))
    return str(p)


def test_presets_lists_builtin(capsys):
    assert main(["presets"]) == 0
    assert "paper-fig4" in capsys.readouterr().out


def test_simulate_preset_at_degeneracy(tmp_path, capsys):
    out = tmp_path / "t.csv"
    assert main(["simulate", "--config", "paper-fig4", "--l", "8", "--out", str(out)]) == 0
    table = capsys.readouterr().out.strip().splitlines()
    assert table[0].split() == ["freq_GHz", "depth", "width_GHz"]
    assert len(table) == 4  # header plus three dips
    assert out.read_text().startswith("freq_GHz,mag,mag_dB,phase_deg\n")


def test_simulate_errors(tmp_path, capsys):
    out = str(tmp_path / "t.csv")
    assert main(["simulate", "--config", str(tmp_path / "none.yaml"), "--l", "8", "--out", out]) == 2
    assert main(["simulate", "--config", "paper-fig4", "--l", "99", "--out", out]) == 2
    assert "outside the declared domain" in capsys.readouterr().err
    assert main(["simulate", "--config", "paper-fig4", "--l", "20", "--out", out]) == 2
    assert main(["simulate", "--config", "paper-fig4", "--l", "20", "--out", out, "--force-domain"]) == 0
    # forcing cannot rescue a law that turns non-physical
    assert main(["simulate", "--config", "paper-fig4", "--l", "99", "--out", out, "--force-domain"]) == 2


def test_bad_config_exit_2(tmp_path, capsys):
    p = tmp_path / "bad.yaml"
    p.write_text("modes: []\ngrid: {start: 1, stop: 2, points: 3}\n")
    assert main(["sweep", "--config", str(p), "--out", str(tmp_path / "s.csv")]) == 2
    assert "extrinsic_damping" in capsys.readouterr().err


def test_sweep_and_classify_preset(tmp_path, capsys):
    s, tr = tmp_path / "s.csv", tmp_path / "tr.csv"
    assert main(["sweep", "--config", "paper-fig4", "--out", str(s), "--tracks", str(tr), "--workers", "2"]) == 0
    assert read_sweep_csv(s).l_values.size == 71
    assert tr.read_text().startswith("track,L_mm,freq_GHz")
    capsys.readouterr()
    assert main(["classify", "--in", str(s), "--region", "6:9"]) == 0
    low = yaml.safe_load(capsys.readouterr().out)
    assert low["result"]["classification"] == "repulsion"
    assert main(["classify", "--in", str(s), "--region", "13:16", "--out", str(tmp_path / "r.yaml")]) == 0
    high = yaml.safe_load(capsys.readouterr().out)
    assert high["result"]["classification"] == "attraction"
    assert load_report(tmp_path / "r.yaml")[0].classification == "attraction"


def test_classify_db_scale(tmp_path, capsys):
    s = tmp_path / "s.csv"
    assert main(["sweep", "--config", "paper-fig4", "--out", str(s), "--scale", "dB"]) == 0
    assert s.read_text().startswith("L_mm,freq_GHz,mag_dB\n")
    assert main(["classify", "--in", str(s), "--region", "6:9", "--scale", "dB"]) == 0
    assert "repulsion" in capsys.readouterr().out
    # undeclared scale is a data error, never a guess
    assert main(["classify", "--in", str(s), "--region", "6:9"]) == 3


def test_classify_malformed_region(tmp_path):
    with pytest.raises(SystemExit) as exc:
        main(["classify", "--in", "x.csv", "--region", "6-9"])
    assert exc.value.code == 2
    with pytest.raises(SystemExit) as exc:
        main(["classify", "--in", "x.csv", "--region", "9:6"])
    assert exc.value.code == 2


def test_zero_coupling_tracks_equal_bare_laws(tmp_path):
    cfg = config(tmp_path, 0.0)
    tr = tmp_path / "tr.csv"
    assert main(["sweep", "--config", cfg, "--out", str(tmp_path / "s.csv"), "--tracks", str(tr)]) == 0
    rows = [line.split(",") for line in tr.read_text().splitlines()[1:]]
    # uncoupled lines still overlap on the shared feedline, which pulls each dip
    # slightly; a tenth of the 0.1 GHz linewidth bounds that pull here
    for track, l, f, _, _, shared in rows:
        if track.startswith("branch") and shared == "0":
            assert min(abs(float(f) - 5.0), abs(float(f) - 40.0 / float(l))) < 0.01


def test_single_l_sweep_matches_simulate(tmp_path):
    cfg = config(tmp_path, sweep={"values": [8.0]})
    s = tmp_path / "s.csv"
    assert main(["sweep", "--config", cfg, "--out", str(s), "--tracks", str(tmp_path / "tr.csv")]) == 0
    t = tmp_path / "t.csv"
    assert main(["simulate", "--config", cfg, "--l", "8", "--out", str(t)]) == 0
    sw = read_sweep_csv(s)
    mags = np.array([float(line.split(",")[1]) for line in t.read_text().splitlines()[1:]])
    assert sw.traces[0].magnitude == pytest.approx(mags, rel=1e-9)


def test_fit_self_generated(tmp_path):
    cfg = config(tmp_path)
    data, report = tmp_path / "d.csv", tmp_path / "r.yaml"
    assert main(["sweep", "--config", cfg, "--out", str(data)]) == 0
    assert main(["fit", "--config", cfg, "--data", str(data), "--out", str(report)]) == 0
    result, inputs = load_report(report)
    assert result.residual_rms < 1e-8
    assert result.values["coupling.A-B.re"] == pytest.approx(0.1, rel=1e-6)
    assert inputs["seed"] == 0 and inputs["config"]["extrinsic_damping"] == 0.02
    overlay = (tmp_path / "r.overlay.csv").read_text().splitlines()
    assert overlay[0] == "L_mm,freq_GHz,mag_data,mag_model"
    assert len(overlay) == 1 + 9 * 401


def test_fit_noisy_within_five_percent(tmp_path):
    cfg = config(tmp_path)
    data, report = tmp_path / "d.csv", tmp_path / "r.yaml"
    main(["sweep", "--config", cfg, "--out", str(data)])
    rng = np.random.default_rng(3)
    lines = data.read_text().splitlines()
    noisy = [lines[0]]
    for line in lines[1:]:
        l, f, m = line.split(",")
        noisy.append(f"{l},{f},{float(m) + rng.normal(0, 0.01):.10g}")
    data.write_text("\n".join(noisy) + "\n")
    assert main(["--seed", "4", "fit", "--config", cfg, "--data", str(data), "--out", str(report)]) == 0
    result, inputs = load_report(report)
    assert inputs["seed"] == 4
    assert result.values["coupling.A-B.re"] == pytest.approx(0.1, rel=0.05)
    assert result.values["gamma"] == pytest.approx(0.02, rel=0.05)


def test_fit_single_branch_exit_3(tmp_path, capsys):
    # B stays far outside the grid, so each trace holds one dip
    cfg = config(tmp_path, grid={"start": 4.8, "stop": 5.2, "points": 201},
                 sweep={"start": 4.0, "stop": 5.0, "step": 0.25})
    data = tmp_path / "d.csv"
    assert main(["sweep", "--config", cfg, "--out", str(data)]) == 0
    assert main(["fit", "--config", cfg, "--data", str(data), "--out", str(tmp_path / "r.yaml")]) == 3
    assert "branch" in capsys.readouterr().err


def test_fit_nonconvergence_exit_4_writes_report(tmp_path, monkeypatch):
    import ppcoupling.cli as cli

    real_fit = cli.fit

    def stalled(*args, **kwargs):
        result = real_fit(*args, **kwargs)
        result.converged = False
        return result

    monkeypatch.setattr(cli, "fit", stalled)
    cfg = config(tmp_path)
    data, report = tmp_path / "d.csv", tmp_path / "r.yaml"
    main(["sweep", "--config", cfg, "--out", str(data)])
    assert main(["fit", "--config", cfg, "--data", str(data), "--out", str(report)]) == 4
    assert load_report(report)[0].converged is False


def test_fit_region_subset(tmp_path):
    cfg = config(tmp_path)
    data, report = tmp_path / "d.csv", tmp_path / "r.yaml"
    main(["sweep", "--config", cfg, "--out", str(data)])
    assert main(["fit", "--config", cfg, "--data", str(data), "--region", "7.7:8.3", "--out", str(report)]) == 0
    overlay = (tmp_path / "r.overlay.csv").read_text().splitlines()
    assert {line.split(",")[0] for line in overlay[1:]} == {"7.7", "7.8", "7.9", "8", "8.1", "8.2", "8.3"}


def test_verbose_prints_resolved_parameters(tmp_path, capsys):
    out = str(tmp_path / "t.csv")
    assert main(["--verbose", "simulate", "--config", "paper-fig4", "--l", "8", "--out", out]) == 0
    err = capsys.readouterr().err
    assert "extrinsic_damping: 0.03" in err and "intrinsic_damping: 0.02387" in err
    assert main(["simulate", "--config", "paper-fig4", "--l", "8", "--out", out]) == 0
    assert capsys.readouterr().err == ""


def test_outputs_are_deterministic(tmp_path):
    a, b = tmp_path / "a.csv", tmp_path / "b.csv"
    main(["sweep", "--config", "paper-fig4", "--out", str(a)])
    main(["sweep", "--config", "paper-fig4", "--out", str(b), "--workers", "4"])
    assert a.read_bytes() == b.read_bytes()


def test_console_entry_point(tmp_path):
    proc = subprocess.run(
        [sys.executable, "-m", "ppcoupling.cli", "presets"], capture_output=True, text=True
    )
    assert proc.returncode == 0 and "paper-fig4" in proc.stdout
