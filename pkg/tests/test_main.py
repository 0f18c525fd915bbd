import numpy as np
import pytest

from config import load_run_config
from experiments import build_channel_state, calibrate
from main import run_cli
from qubo import build_qubo, read_qubo
from reporting import read_csv

# Without a surface anchor the calibration skips the optimizer-driven fits.
FAST_INI = """
[calibration]
ris_anchor_elements = 0

[sweep]
elevations_deg = 30, 60
ris_sizes = 0, 16
"""


@pytest.fixture(autouse=True)
def clean_env(monkeypatch):
    for name in ("RIS_SEED", "RIS_OUTPUT_DIR", "RIS_LOG_LEVEL"):
        monkeypatch.delenv(name, raising=False)


@pytest.fixture
def fast_ini(tmp_path):
    path = tmp_path / "fast.ini"
    path.write_text(FAST_INI)
    return str(path)


def _run(ini, out, *args):
    return run_cli(["--config", ini, "--output-dir", str(out), *args])


def test_bad_flag_is_a_usage_error():
    assert run_cli(["--bogus"]) == 2
    assert run_cli([]) == 2


def test_missing_config_is_a_usage_error(tmp_path):
    assert run_cli(["--config", str(tmp_path / "absent.ini"), "calibrate"]) == 2


def test_failed_calibration_exit_code(tmp_path):
    ini = tmp_path / "bad.ini"
    ini.write_text("[calibration]\nris_anchor_elements = 0\nqber_low = 0.005\n")
    assert _run(str(ini), tmp_path / "out", "calibrate") == 3


def test_link_budget_prints_the_metrics(fast_ini, tmp_path, capsys):
    assert _run(fast_ini, tmp_path, "link-budget", "--elevation", "45") == 0
    out = capsys.readouterr().out
    assert "elevation 45 deg, N=0" in out
    assert "SNR" in out and "QBER" in out and "SKR" in out


def test_calibrate_writes_its_constants(fast_ini, tmp_path):
    assert _run(fast_ini, tmp_path, "--no-timestamp", "calibrate") == 0
    values = {row["constant"]: row["value"] for row in read_csv(tmp_path / "calibration.csv")}
    assert float(values["element_amp_scale"]) == 1.0
    assert float(values["ref_amplitude"]) > 0


def test_qubo_export_matches_a_fresh_build(fast_ini, tmp_path):
    target = tmp_path / "model.qubo"
    assert _run(fast_ini, tmp_path, "qubo-export", "--n", "2", "--output", str(target)) == 0
    cfg = load_run_config(fast_ini)
    cal = calibrate(cfg)
    expected = build_qubo(build_channel_state(cfg, cal, 80.0, 2), cfg.weights, cal)
    loaded = read_qubo(target)
    assert loaded.dim == expected.dim == 8
    assert loaded.offset == expected.offset
    assert np.array_equal(loaded.linear, expected.linear)
    assert (loaded.quad != expected.quad).nnz == 0
    assert "# elevation_deg=80" in target.read_text()


def test_qubo_export_default_name_and_report(fast_ini, tmp_path, capsys):
    assert _run(fast_ini, tmp_path, "qubo-export", "--n", "1", "--report", "--samples", "50") == 0
    assert (tmp_path / "qubo_n1.txt").exists()
    out = capsys.readouterr().out
    assert "small-angle" in out and "90-degree-step" in out


def test_optimize_prints_the_answer_and_writes_a_trace(fast_ini, tmp_path, capsys):
    assert _run(fast_ini, tmp_path, "optimize", "--n", "2", "--solver", "brute") == 0
    out = capsys.readouterr().out
    line = next(text for text in out.splitlines() if text.startswith("x* = "))
    assert len(line) == len("x* = ") + 8
    assert read_csv(tmp_path / "trace.csv")


def test_optimize_with_relinearization(fast_ini, tmp_path):
    assert _run(fast_ini, tmp_path, "optimize", "--n", "2", "--solver", "tabu", "--relinearize", "2") == 0


def test_sweep_is_byte_identical_across_runs(fast_ini, tmp_path):
    first, second = tmp_path / "a", tmp_path / "b"
    assert _run(fast_ini, first, "--no-timestamp", "sweep") == 0
    assert _run(fast_ini, second, "--no-timestamp", "sweep") == 0
    assert (first / "sweep.csv").read_bytes() == (second / "sweep.csv").read_bytes()
    assert len(read_csv(first / "sweep.csv")) == 4
    assert (first / "snr_vs_elevation.gp").exists()


def test_histogram_counts_every_element(tmp_path):
    ini = tmp_path / "hist.ini"
    ini.write_text("[ris]\nn_elements = 16\n[calibration]\nris_anchor_elements = 0\n")
    assert _run(str(ini), tmp_path, "histogram") == 0
    rows = read_csv(tmp_path / "histogram.csv")
    assert sum(int(row["count"]) for row in rows if float(row["att"]) == 1.0) == 16
