import csv
import json

import numpy as np
import pytest

from seqsoc.cli import EXIT_OK, EXIT_RUNTIME, EXIT_VALIDATION, main
from seqsoc.config import load_config
from seqsoc.harness import resolve_drive
from seqsoc.pipeline import simulate_sequential_data

DATA_FILES = ("step1.csv", "gap1.csv", "step2.csv", "gap2.csv", "step3.csv", "full_run.csv", "drive.csv")


def run(*argv):
    return main([str(a) for a in argv])


def read_csv(path):
    with open(path, newline="") as fh:
        return list(csv.DictReader(fh))


@pytest.fixture(scope="module")
def simulated(tmp_path_factory):
    out = tmp_path_factory.mktemp("sim")
    assert run("simulate", "--out", out, "--seed", 4, "--no-plots") == EXIT_OK
    return out


def csv_config(tmp_path, sim_dir, step1=None):
    cfg = tmp_path / "cfg.yaml"
    cfg.write_text(
        "data:\n  source: csv\n"
        f"  step1: {step1 or sim_dir / 'step1.csv'}\n"
        f"  step2: {sim_dir / 'step2.csv'}\n"
        f"  step3: {sim_dir / 'step3.csv'}\n"
    )
    return cfg


class TestSimulate:
    def test_files_and_summary(self, simulated):
        for name in (*DATA_FILES, "simulate_summary.json"):
            assert (simulated / name).exists()
        assert not list(simulated.glob("*.png"))
        summary = json.loads((simulated / "simulate_summary.json").read_text())
        assert summary["seed"] == 4
        assert summary["blocks"]["step2"]["t_start_s"] == pytest.approx(287.0)

    def test_plots_rendered(self, tmp_path):
        assert run("simulate", "--out", tmp_path) == EXIT_OK
        png = tmp_path / "timeline.png"
        assert png.read_bytes()[:8] == b"\x89PNG\r\n\x1a\n"

    def test_byte_identical(self, simulated, tmp_path):
        assert run("simulate", "--out", tmp_path, "--seed", 4, "--no-plots") == EXIT_OK
        for name in DATA_FILES:
            assert (tmp_path / name).read_bytes() == (simulated / name).read_bytes()

    def test_seed_changes_data(self, simulated, tmp_path):
        assert run("simulate", "--out", tmp_path, "--seed", 5, "--no-plots") == EXIT_OK
        assert (tmp_path / "step3.csv").read_bytes() != (simulated / "step3.csv").read_bytes()

    def test_zero_noise_matches_clean_model(self, tmp_path):
        cfg = tmp_path / "cfg.yaml"
        cfg.write_text("cell:\n  sigma_v: 0.0\n")
        assert run("simulate", "--config", cfg, "--out", tmp_path / "o", "--seed", 2, "--no-plots") == EXIT_OK
        config = load_config(cfg)
        spec = config.cell_spec()
        data = simulate_sequential_data(spec, config.step_plans(), resolve_drive(config, spec, 2), 2, config.z0)
        for name in ("step1", "step2", "step3"):
            v = np.array([float(r["v_V"]) for r in read_csv(tmp_path / "o" / f"{name}.csv")])
            assert np.array_equal(v, data[name].v_clean)

    def test_forty_degree_preset(self, tmp_path):
        cfg = tmp_path / "cfg.yaml"
        cfg.write_text("cell:\n  preset: samsung-18650-40C\n")
        assert run("simulate", "--config", cfg, "--out", tmp_path / "o", "--no-plots") == EXIT_OK
        assert json.loads((tmp_path / "o" / "simulate_summary.json").read_text())["cell"].endswith("40C")


class TestEstimate:
    def test_csv_matches_simulation(self, simulated, tmp_path):
        assert run("estimate", "--config", csv_config(tmp_path, simulated), "--out", tmp_path / "a", "--no-plots") == EXIT_OK
        assert run("estimate", "--seed", 4, "--out", tmp_path / "b", "--no-plots") == EXIT_OK
        a = json.loads((tmp_path / "a" / "estimate_summary.json").read_text())
        b = json.loads((tmp_path / "b" / "estimate_summary.json").read_text())
        assert a["estimates"] == b["estimates"]
        assert a["data_source"] == "csv" and b["data_source"] == "simulate"

    def test_trace_files(self, simulated, tmp_path):
        assert run("estimate", "--seed", 4, "--out", tmp_path) == EXIT_OK
        for step in ("step1", "step2", "step3"):
            rows = read_csv(tmp_path / f"trace_{step}.csv")
            assert rows and "innovation_V" in rows[0]
        assert "soc_true" in read_csv(tmp_path / "trace_step3.csv")[0]
        assert (tmp_path / "estimation.png").exists()

    def test_missing_voltage_column(self, simulated, tmp_path, capsys):
        stripped = tmp_path / "step1_nov.csv"
        stripped.write_text("".join(",".join(line.split(",")[:2]) + "\n" for line in (simulated / "step1.csv").read_text().splitlines()))
        code = run("estimate", "--config", csv_config(tmp_path, simulated, stripped), "--out", tmp_path / "o")
        assert code == EXIT_VALIDATION
        assert "v_V" in capsys.readouterr().err
        assert not (tmp_path / "o").exists()

    def test_degenerate_excitation_is_runtime(self, simulated, tmp_path, capsys):
        rows = read_csv(simulated / "step1.csv")
        flat = tmp_path / "flat.csv"
        flat.write_text("t_s,i_A,v_V\n" + "".join(f"{r['t_s']},0.0,{r['v_V']}\n" for r in rows))
        code = run("estimate", "--config", csv_config(tmp_path, simulated, flat), "--out", tmp_path / "o", "--no-plots")
        assert code == EXIT_RUNTIME
        assert "step1" in capsys.readouterr().err

    def test_missing_data_file(self, simulated, tmp_path):
        code = run("estimate", "--config", csv_config(tmp_path, simulated, tmp_path / "none.csv"), "--out", tmp_path / "o")
        assert code == EXIT_VALIDATION


class TestValidation:
    def test_unknown_key_reports_line(self, tmp_path, capsys):
        cfg = tmp_path / "cfg.yaml"
        cfg.write_text("seed: 1\nnoise:\n  sigma_vv: 0.1\n")
        assert run("simulate", "--config", cfg, "--out", tmp_path / "o") == EXIT_VALIDATION
        assert f"{cfg}:3:" in capsys.readouterr().err

    def test_missing_config(self, tmp_path):
        assert run("simulate", "--config", tmp_path / "nope.yaml") == EXIT_VALIDATION

    def test_drive_csv_too_short(self, tmp_path, capsys):
        drive = tmp_path / "drive.csv"
        drive.write_text("t_s,i_A\n0,1\n1,1\n2,1\n")
        cfg = tmp_path / "cfg.yaml"
        cfg.write_text("drive:\n  source: csv\n  path: drive.csv\n")
        assert run("simulate", "--config", cfg, "--out", tmp_path / "o") == EXIT_VALIDATION
        assert "drive" in capsys.readouterr().err


class TestAnalyze:
    def test_empty_frequency_list_writes_nothing(self, tmp_path, capsys):
        cfg = tmp_path / "cfg.yaml"
        cfg.write_text("analyze:\n  frequencies: []\n")
        assert run("analyze", "--config", cfg, "--out", tmp_path / "o") == EXIT_OK
        assert not (tmp_path / "o").exists()
        assert "no frequencies" in capsys.readouterr().out

    def test_single_frequency(self, tmp_path):
        cfg = tmp_path / "cfg.yaml"
        cfg.write_text("analyze:\n  frequencies: [0.4]\n")
        assert run("analyze", "--config", cfg, "--out", tmp_path / "o") == EXIT_OK
        rows = read_csv(tmp_path / "o" / "breakdown_amplitudes.csv")
        assert len(rows) == 1 and float(rows[0]["ohmic_over_rc"]) > 100
        assert (tmp_path / "o" / "breakdown_0.4Hz.png").exists()
        assert set(read_csv(tmp_path / "o" / "breakdown_0.4Hz.csv")[0]) == {"t_s", "init_V", "socvar_V", "ohmic_V", "rc_V"}


class TestCompare:
    def test_small_run(self, tmp_path):
        cfg = tmp_path / "cfg.yaml"
        cfg.write_text("compare:\n  seeds: 2\n  duration: 300\n")
        assert run("compare", "--config", cfg, "--out", tmp_path / "o") == EXIT_OK
        rows = read_csv(tmp_path / "o" / "compare_seeds.csv")
        assert [(r["seed"], r["arm"]) for r in rows] == [("0", "sequential"), ("0", "concurrent"), ("1", "sequential"), ("1", "concurrent")]
        summary = json.loads((tmp_path / "o" / "compare_summary.json").read_text())
        assert summary["seeds"] == [0, 1]
        assert set(summary["summary"]) >= {"sequential", "concurrent"}
        assert (tmp_path / "o" / "compare.png").exists()

    def test_parallel_matches_serial(self, tmp_path):
        for jobs in (1, 2):
            cfg = tmp_path / f"cfg{jobs}.yaml"
            cfg.write_text(f"compare:\n  seeds: 2\n  duration: 300\n  jobs: {jobs}\n")
            assert run("compare", "--config", cfg, "--out", tmp_path / f"o{jobs}", "--no-plots") == EXIT_OK
        assert (tmp_path / "o1" / "compare_seeds.csv").read_bytes() == (tmp_path / "o2" / "compare_seeds.csv").read_bytes()
