import json
import math

import numpy as np
import pytest

from penning.cli import main
from penning.dynamics import PhotonRecord


def kv(text):
    out = {}
    for line in text.splitlines():
        key, sep, value = line.partition("=")
        if sep:
            out[key] = value
    return out


def run_cli(capsys, *argv):
    code = main([str(a) for a in argv])
    cap = capsys.readouterr()
    return code, cap.out, cap.err


def pulsed_stream(freq, rate, duration, seed, kappa=20.0):
    """At most one photon per drive cycle, von Mises distributed in phase."""
    rng = np.random.default_rng(seed)
    cycles = np.flatnonzero(rng.uniform(size=int(duration * freq)) < rate / freq)
    return (cycles + 0.5 + rng.vonmises(0.0, kappa, cycles.size) / (2 * np.pi)) / freq


def write_photons(path, times):
    PhotonRecord(np.sort(times), float(np.max(times))).write_binary(path)
    return path


def test_frequencies(capsys):
    code, out, _ = run_cli(capsys, "frequencies")
    assert code == 0
    v = kv(out)
    assert float(v["f_c_hz"]) == pytest.approx(640237.267, rel=1e-8)
    assert float(v["f_m_hz"]) == pytest.approx(31467.776, rel=1e-7)
    assert float(v["omega_z_per_s"]) == pytest.approx(2 * math.pi * float(v["f_z_hz"]), rel=1e-15)


def test_frequencies_for_magnetron_target(capsys):
    code, out, _ = run_cli(capsys, "frequencies", "--f-m", 31.6e3, "--set", "trap.b_tesla=1.0")
    v = kv(out)
    assert code == 0
    assert float(v["v_volts"]) == pytest.approx(4.7187237, rel=1e-7)
    assert float(v["f_m_hz"]) == pytest.approx(31.6e3, rel=1e-9)


def test_envelope_to_stdout_and_file(capsys, tmp_path):
    code, out, _ = run_cli(capsys, "envelope", "--set", "envelope.duration_s=1e-3",
                           "--set", "envelope.dt_s=1e-4")
    lines = out.splitlines()
    assert code == 0 and lines[0] == "t_s,r_c_m,r_m_m,regime"
    assert len(lines) == 12
    t, rc, rm, regime = lines[-1].split(",")
    assert regime == "cycling"
    assert float(rc) ** 2 + float(rm) ** 2 == pytest.approx(50e-6 ** 2, rel=1e-12)
    code, out, _ = run_cli(capsys, "envelope", "-o", tmp_path / "env.csv")
    v = kv(out)
    assert v["regime"] == "cycling" and float(v["lambda_1_im"]) == pytest.approx(1000.0)
    assert (tmp_path / "env.csv").exists()


def test_simulate_image_spot_size(capsys, tmp_path):
    out_dir = tmp_path / "sim"
    code, out, err = run_cli(capsys, "simulate", "-o", out_dir, "--set", "sim.duration_s=2e-4",
                             "--set", "sim.detection_efficiency=1.0")
    assert code == 0, err
    v = kv(out)
    rec = PhotonRecord.read_binary(out_dir / "photons.bin")
    assert int(v["photons"]) == len(rec) > 0
    manifest = json.loads((out_dir / "manifest.json").read_text())
    assert manifest["config"]["sim.duration_s"] == 2e-4
    assert set(manifest["outputs"]) == {"photons.bin", "trajectory.csv"}

    code, out, err = run_cli(capsys, "image", out_dir / "trajectory.csv", "-o", tmp_path / "im.pgm")
    assert code == 0, err
    assert float(kv(out)["total_weight"]) > 0

    code, out, err = run_cli(capsys, "spot-size", tmp_path / "im.pgm", "--mode-hz", 196e3)
    assert code == 0, err
    v = kv(out)
    assert float(v["rms_z_m"]) > 0
    assert v["upper_limit"] in ("true", "false")


def test_correlate_single_emitter(capsys, tmp_path):
    path = write_photons(tmp_path / "p.bin", pulsed_stream(63e3, 3e3, 2.0, seed=1))
    code, out, err = run_cli(capsys, "correlate", path, "--fraction-at", 63e3,
                             "--hist-out", tmp_path / "h.csv", "--fft-out", tmp_path / "f.csv")
    assert code == 0, err
    v = kv(out)
    peaks = json.loads(v["peaks_hz"])
    res = float(v["resolution_hz"])
    assert any(abs(p - 63e3) <= res for p in peaks)
    assert float(v["fraction_at_63000_hz"]) == pytest.approx(0.95, abs=0.15)
    assert (tmp_path / "h.csv").read_text().startswith("lag_s,counts,detrended")


def test_phase_scan(capsys, tmp_path):
    gamma, f0 = 2 * math.pi * 300, 30e3
    rng = np.random.default_rng(3)
    points = []
    for i, df in enumerate(np.linspace(-1200, 1200, 9)):
        w = 2 * math.pi * (f0 + df)
        phi = 0.3 - math.atan((w - 2 * math.pi * f0) / gamma)
        cycles = np.sort(rng.choice(200000, 4000, replace=False))
        t = (cycles + rng.vonmises(phi, 2.0, cycles.size) / (2 * np.pi)) / (w / (2 * np.pi))
        t = t[t > 0]
        write_photons(tmp_path / f"s{i}.bin", t)
        points.append(f"{tmp_path / f's{i}.bin'}:{f0 + df}")
    code, out, err = run_cli(capsys, "phase-scan", *points, "-o", tmp_path / "scan.csv")
    assert code == 0, err
    v = kv(out)
    assert float(v["gamma_per_s"]) == pytest.approx(gamma, rel=0.1)
    assert float(v["f0_hz"]) == pytest.approx(f0, abs=30)
    assert int(v["sense"]) == 1


def test_scenario_list_and_manifest(capsys, tmp_path):
    code, out, _ = run_cli(capsys, "scenario", "--list")
    assert code == 0 and "fig2-cycling:" in out
    code, out, err = run_cli(capsys, "scenario", "fig2-cycling", "-o", tmp_path / "a",
                             "--set", "sim.duration_s=2e-4")
    assert code == 0, err
    code, out, err = run_cli(capsys, "scenario", "--manifest", tmp_path / "a", "-o", tmp_path / "b")
    assert code == 0, err
    assert kv(out)["reproduced"] == "true"


def test_sweep_reports_failed_points(capsys, tmp_path):
    code, out, err = run_cli(capsys, "sweep", "fig2-cycling", "--grid", "trap.v_volts=[4.7, 1e4]",
                             "--set", "sim.duration_s=2e-4", "-o", tmp_path)
    assert code == 0, err
    assert kv(out.splitlines()[0] + "\n")["points"] == "2"
    assert "error code=unstable_trap" in out
    assert (tmp_path / "summary.csv").exists()


@pytest.mark.parametrize("argv,code_name", [
    (["frequencies", "--set", "trap.v_volts=1e4"], "unstable_trap"),
    (["frequencies", "--set", "trap.nope=1"], "config_error"),
    (["correlate", "/nonexistent/photons.bin"], "io_error"),
    (["phase-scan", "x.bin:abc"], "config_error"),
    (["scenario"], "config_error"),
])
def test_error_line_format(capsys, argv, code_name):
    code, out, err = run_cli(capsys, *argv)
    assert code == 1
    line = err.strip().splitlines()[-1]
    assert line.startswith(f"error code={code_name} message=\"")
    json.loads(line.split("message=", 1)[1])


def test_too_few_photons_is_reported(capsys, tmp_path):
    path = write_photons(tmp_path / "p.bin", np.array([1e-3, 2e-3]))
    code, _, err = run_cli(capsys, "phase-scan", f"{path}:30000")
    assert code == 1 and "error code=" in err


def test_usage_errors_exit_2(capsys):
    with pytest.raises(SystemExit) as info:
        main(["frobnicate"])
    assert info.value.code == 2
    with pytest.raises(SystemExit) as info:
        main(["simulate"])
    assert info.value.code == 2
