import dataclasses
import json

import numpy as np
import pytest
from hypothesis import given
from hypothesis import strategies as st

from seqsoc.cell import BatteryState, preset, simulate
from seqsoc.config import (
    ConfigError,
    ScenarioConfig,
    config_to_dict,
    dump_config,
    load_config,
    parse_config,
)
from seqsoc.io import (
    CsvSchemaError,
    check_uniform,
    ingest_csv,
    read_measurement_csv,
    read_profile_csv,
    read_table,
    write_json,
    write_measurement_csv,
    write_profile_csv,
    write_rows,
    write_trace_csv,
)
from seqsoc.pipeline import EstimationTrace
from seqsoc.signals import CurrentProfile, drive_cycle_profile

finite = st.floats(-1e6, 1e6, allow_nan=False, allow_infinity=False)


@pytest.fixture
def meas():
    return simulate(preset("samsung-18650-20C"), drive_cycle_profile(1.0, 120.0, 2.47, 0), BatteryState(0.0, 0.8), 0)


class TestCsvRoundTrip:
    def test_measurement_bit_exact(self, tmp_path, meas):
        path = write_measurement_csv(tmp_path / "m.csv", meas)
        back = read_measurement_csv(path)
        for attr in ("t", "i", "v", "z_true", "vc_true"):
            assert np.array_equal(getattr(back, attr), getattr(meas, attr))
        assert back.t_s == meas.t_s

    def test_measurement_without_truth(self, tmp_path, meas):
        path = write_measurement_csv(tmp_path / "m.csv", meas, truth=False)
        assert path.read_text().splitlines()[0] == "t_s,i_A,v_V"
        assert not read_measurement_csv(path).has_truth

    @given(st.lists(finite, min_size=2, max_size=40), st.sampled_from([0.1, 1.0, 0.25]))
    def test_profile_bit_exact(self, tmp_path_factory, samples, t_s):
        path = write_profile_csv(tmp_path_factory.mktemp("p") / "p.csv", CurrentProfile(t_s, np.array(samples)))
        back = read_profile_csv(path)
        assert np.array_equal(back.samples, samples)
        assert back.t_s == pytest.approx(t_s, rel=1e-12)

    def test_permuted_headers(self, tmp_path):
        path = tmp_path / "m.csv"
        path.write_text("v_V,extra,t_s,i_A\n3.9,x,0.0,1.0\n3.8,y,1.0,2.0\n")
        m = read_measurement_csv(path)
        assert np.array_equal(m.v, [3.9, 3.8])
        assert np.array_equal(m.i, [1.0, 2.0])

    def test_ingest_detects_kind(self, tmp_path, meas):
        m = write_measurement_csv(tmp_path / "m.csv", meas)
        p = write_profile_csv(tmp_path / "p.csv", CurrentProfile(1.0, np.ones(5)))
        assert isinstance(ingest_csv(p), CurrentProfile)
        assert np.array_equal(ingest_csv(m).v, meas.v)
        with pytest.raises(ValueError):
            ingest_csv(p, kind="weird")

    def test_rows_cells(self, tmp_path):
        path = write_rows(tmp_path / "r.csv", ("a", "b", "c"), [{"a": True, "b": None, "c": 0.1}, (1, "x", np.float64(2.5))])
        assert path.read_text() == "a,b,c\n1,,0.1\n1,x,2.5\n"

    def test_json_numpy(self, tmp_path):
        path = write_json(tmp_path / "s.json", {"b": np.float64(1.5), "a": np.arange(2)})
        assert json.loads(path.read_text()) == {"a": [0, 1], "b": 1.5}
        assert path.read_text().index('"a"') < path.read_text().index('"b"')

    def test_atomic_write_leaves_no_temp(self, tmp_path):
        write_profile_csv(tmp_path / "p.csv", CurrentProfile(1.0, np.ones(3)))
        assert [p.name for p in tmp_path.iterdir()] == ["p.csv"]

    def test_trace_columns(self, tmp_path):
        tr = EstimationTrace(
            "step1", ("r_s",), np.arange(3.0), np.full((3, 1), 0.1), np.full((3, 1), 1e-4), np.zeros(3),
            truth={"r_s": np.full(3, 0.1)},
        )
        header = write_trace_csv(tmp_path / "t.csv", tr).read_text().splitlines()[0]
        assert header == "t_s,r_s,var_r_s,innovation_V,r_s_true"


class TestCsvSchema:
    def test_missing_voltage_named(self, tmp_path):
        path = tmp_path / "m.csv"
        path.write_text("t_s,i_A\n0,1\n1,1\n")
        with pytest.raises(CsvSchemaError, match="v_V") as info:
            read_measurement_csv(path)
        assert info.value.column == "v_V"

    @pytest.mark.parametrize("bad_index", [1, 5, 9])
    def test_jitter_reports_row(self, tmp_path, bad_index):
        t = np.arange(10.0)
        t[bad_index] += 0.01
        path = tmp_path / "p.csv"
        path.write_text("t_s,i_A\n" + "".join(f"{float(x)!r},0.0\n" for x in t))
        with pytest.raises(CsvSchemaError) as info:
            read_profile_csv(path)
        assert info.value.row == bad_index + 2
        assert f"row {bad_index + 2}" in str(info.value)

    def test_jitter_within_tolerance(self):
        t = np.arange(10.0) * 0.1
        t[3] += 5e-7
        assert check_uniform(t) == pytest.approx(0.1)

    def test_bad_value_row(self, tmp_path):
        path = tmp_path / "p.csv"
        path.write_text("t_s,i_A\n0,1\n1,abc\n")
        with pytest.raises(CsvSchemaError) as info:
            read_table(path, ("t_s", "i_A"))
        assert info.value.row == 3 and info.value.column == "i_A"

    @pytest.mark.parametrize("text", ["", "t_s,i_A\n", "t_s,i_A\n0,1\n", "t_s,i_A\n1,0\n0,0\n"])
    def test_degenerate_files(self, tmp_path, text):
        path = tmp_path / "p.csv"
        path.write_text(text)
        with pytest.raises(CsvSchemaError):
            read_profile_csv(path)


configs = st.builds(
    lambda seed, z0, sigma, seeds, drift, freqs: dataclasses.replace(
        ScenarioConfig(seed=seed, z0=z0),
        cell=dataclasses.replace(ScenarioConfig().cell, sigma_v=sigma),
        compare=dataclasses.replace(ScenarioConfig().compare, seeds=seeds),
        estimator=dataclasses.replace(ScenarioConfig().estimator, soc_drift=drift),
        analyze=dataclasses.replace(ScenarioConfig().analyze, frequencies=freqs),
    ),
    st.integers(0, 2**31),
    st.floats(0.05, 0.95),
    st.none() | st.floats(0.0, 0.1),
    st.integers(1, 50),
    st.booleans(),
    st.lists(st.floats(1e-4, 1.0), max_size=4).map(tuple),
)


class TestConfig:
    def test_empty_is_default(self):
        assert parse_config("") == ScenarioConfig()

    @pytest.mark.parametrize("fmt", ["yaml", "json"])
    def test_default_round_trip(self, fmt):
        assert parse_config(dump_config(ScenarioConfig(), fmt), fmt=fmt) == ScenarioConfig()

    @given(configs, st.sampled_from(["yaml", "json"]))
    def test_round_trip_property(self, config, fmt):
        assert parse_config(dump_config(config, fmt), fmt=fmt) == config

    def test_load_by_suffix(self, tmp_path):
        cfg = ScenarioConfig(seed=7)
        (tmp_path / "a.json").write_text(dump_config(cfg, "json"))
        (tmp_path / "a.yaml").write_text(dump_config(cfg, "yaml"))
        assert load_config(tmp_path / "a.json") == load_config(tmp_path / "a.yaml") == cfg

    def test_unknown_key_line(self):
        with pytest.raises(ConfigError, match="bogus") as info:
            parse_config("seed: 1\ncompare:\n  seeds: 3\n  bogus: 2\n", source="s.yaml")
        assert info.value.line == 4
        assert str(info.value).startswith("s.yaml:4:")

    def test_bad_preset_line(self):
        with pytest.raises(ConfigError) as info:
            parse_config("seed: 1\ncell:\n  preset: nope\n")
        assert info.value.line == 3

    def test_wrong_type_line(self):
        with pytest.raises(ConfigError) as info:
            parse_config("seed: 1\nz0: high\n")
        assert info.value.line == 2

    @pytest.mark.parametrize(
        "text",
        [
            "z0: 1.5\n",
            "drive:\n  source: tape\n",
            "drive:\n  source: csv\n",
            "data:\n  source: csv\n",
            "compare:\n  seeds: 0\n",
            "estimator:\n  rc_sensitivity: deep\n",
            "analyze:\n  frequencies: [0.1, -1]\n",
            "cell:\n  preset: null\n  q_b: 2.0\n",
            "plans:\n  step1:\n    duration: 10\n    t_s: 1\n    frequencies: [0.9]\n    amplitudes: [1]\n",
        ],
    )
    def test_invalid_values(self, text):
        with pytest.raises(ConfigError):
            parse_config(text)

    def test_inline_cell(self):
        cfg = parse_config(
            "cell:\n  preset: null\n  q_b: 3.0\n  eta: 0.99\n  r_s: 0.05\n  r_t: 0.02\n  tau: 10\n"
            "  ocv: [4.14, 0.015, 0.1, 0.01, -0.03]\n"
        )
        spec = cfg.cell_spec()
        assert spec.q_b == 3.0 and spec.ecm.tau == 10.0

    def test_preset_override(self):
        spec = parse_config("cell:\n  preset: samsung-18650-40C\n  sigma_v: 0.0\n").cell_spec()
        assert spec.q_b == 2.62 and spec.sigma_v == 0.0

    def test_dict_is_json_ready(self):
        json.dumps(config_to_dict(ScenarioConfig()))
