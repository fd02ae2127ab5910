import math

import numpy as np
import pytest
from hypothesis import given
from hypothesis import strategies as st
from hypothesis.extra.numpy import arrays

from seqsoc.cell import BatteryState, linearize_ocv, preset, simulate
from seqsoc.signals import (
    CurrentProfile,
    NyquistError,
    ProfileMismatchError,
    analysis_duration,
    analysis_sample_period,
    apply_filter,
    component_amplitude_oracle,
    component_breakdown,
    design_highpass,
    drive_cycle_profile,
    f3db_from_tc,
    initial_soc_decay,
    multisine_profile,
    sine_profile,
    sum_profiles,
    zero_profile,
)

HALF_C = 0.5 * 2.47
finite = st.floats(-10, 10, allow_nan=False, allow_infinity=False)


class TestProfiles:
    def test_step1_injection(self):
        p = sine_profile(HALF_C, 0.5, 0.1, 200)
        assert p.samples[0] == pytest.approx(1.235)
        assert p.samples[20] == pytest.approx(1.235)
        assert p.samples[10] == pytest.approx(-1.235)
        assert len(p) == 2000

    def test_zero_amplitude(self):
        assert not np.any(sine_profile(0.0, 0.1, 1.0, 100).samples)

    def test_two_tone_is_pointwise_sum(self):
        a = sine_profile(HALF_C, 0.02, 1.0, 900)
        b = sine_profile(HALF_C, 0.004, 1.0, 900)
        two = multisine_profile([HALF_C, HALF_C], [0.02, 0.004], 1.0, 900)
        assert np.array_equal(two.samples, a.samples + b.samples)

    @pytest.mark.parametrize("f, t_s", [(0.5, 1.0), (5.0, 0.1)])
    def test_nyquist(self, f, t_s):
        with pytest.raises(NyquistError):
            sine_profile(1.0, f, t_s, 100)

    def test_nonpositive_frequency(self):
        with pytest.raises(ValueError):
            sine_profile(1.0, 0.0, 1.0, 100)

    def test_too_short(self):
        with pytest.raises(ValueError):
            sine_profile(1.0, 0.001, 1.0, 100)

    def test_additive_identity(self):
        p = sine_profile(1.0, 0.05, 1.0, 100)
        assert np.array_equal(sum_profiles([p, zero_profile(1.0, 100)]).samples, p.samples)

    def test_three_tone_peak_bound(self):
        p = multisine_profile([HALF_C] * 3, [0.01, 0.05, 0.1], 1.0, 3600)
        assert np.max(np.abs(p.samples)) <= 3 * HALF_C + 1e-12

    def test_commutative(self):
        a = sine_profile(1.0, 0.05, 1.0, 100)
        b = drive_cycle_profile(1.0, 100, 2.0, seed=1)
        assert np.array_equal(sum_profiles([a, b]).samples, sum_profiles([b, a]).samples)

    @pytest.mark.parametrize("other", [zero_profile(0.5, 100), zero_profile(1.0, 50)])
    def test_mismatch(self, other):
        with pytest.raises(ProfileMismatchError):
            sum_profiles([zero_profile(1.0, 100), other])

    def test_profile_invariants(self):
        with pytest.raises(ValueError):
            CurrentProfile(0.0, [1.0])
        with pytest.raises(ValueError):
            CurrentProfile(1.0, [])
        p = CurrentProfile(1.0, [1.0, 2.0])
        with pytest.raises(ValueError):
            p.samples[0] = 5.0


class TestDriveCycle:
    def test_deterministic(self):
        assert drive_cycle_profile(1.0, 1800, 2.47, 3) == drive_cycle_profile(1.0, 1800, 2.47, 3)
        assert drive_cycle_profile(1.0, 1800, 2.47, 3) != drive_cycle_profile(1.0, 1800, 2.47, 4)

    @given(st.integers(0, 10_000), st.floats(0.1, 5.0))
    def test_peak_and_net_discharge(self, seed, peak):
        p = drive_cycle_profile(1.0, 1200, peak, seed)
        assert np.max(np.abs(p.samples)) == pytest.approx(peak, rel=1e-12)
        assert p.samples.mean() > 0
        assert np.any(p.samples < 0)  # regen present


class TestHighPass:
    @pytest.mark.parametrize("f_3db, t_s", [(0.05, 0.1), (0.002, 1.0)])
    def test_minus_3db_point(self, f_3db, t_s):
        filt = design_highpass(f_3db, t_s)
        gain = abs(filt.frequency_response(f_3db))
        assert gain == pytest.approx(1 / math.sqrt(2), rel=1e-6)
        # the same gain from the coefficients on the unit circle, written out
        w = 2 * math.pi * f_3db * t_s
        num = filt.b0 + filt.b1 * complex(math.cos(w), -math.sin(w))
        den = 1 - filt.a1 * complex(math.cos(w), -math.sin(w))
        assert abs(num / den) == pytest.approx(0.7071, abs=1e-4)

    @pytest.mark.parametrize("f_3db, t_s", [(0.05, 0.1), (0.002, 1.0), (0.3, 1.0)])
    def test_dc_gain_is_zero(self, f_3db, t_s):
        filt = design_highpass(f_3db, t_s)
        assert filt.b0 + filt.b1 == 0.0
        assert abs(filt.frequency_response(0.0)) == 0.0

    @pytest.mark.parametrize("f_3db, t_s", [(0.0, 1.0), (0.5, 1.0), (6.0, 0.1)])
    def test_nyquist(self, f_3db, t_s):
        with pytest.raises(NyquistError):
            design_highpass(f_3db, t_s)

    @pytest.mark.parametrize("f_3db, t_s", [(0.05, 0.1), (0.002, 1.0)])
    @pytest.mark.parametrize("level", [1.0, -3.7, 1e3])
    def test_step_rejected_after_five_time_constants(self, f_3db, t_s, level):
        filt = design_highpass(f_3db, t_s, at_rest=True)
        n = int(math.ceil(5 * filt.t_c / t_s))
        y = filt.run(np.full(n + 1, level))
        assert abs(y[0]) == pytest.approx(abs(level) * filt.b0)
        assert abs(y[n]) < 0.01 * abs(level)

    def test_seeded_state_gives_zero_first_output(self):
        filt = design_highpass(0.05, 0.1)
        assert apply_filter(filt, 3.6) == 0.0
        assert np.all(design_highpass(0.05, 0.1).run(np.full(50, 3.6)) == 0.0)

    def test_zero_in_zero_out(self):
        assert not np.any(design_highpass(0.05, 0.1).run(np.zeros(100)))

    @given(arrays(float, 64, elements=finite), arrays(float, 64, elements=finite), finite, finite)
    def test_lti(self, x, y, alpha, beta):
        filt = design_highpass(0.05, 0.1, at_rest=True)
        lhs = filt.clone().run(alpha * x + beta * y)
        rhs = alpha * filt.clone().run(x) + beta * filt.clone().run(y)
        assert np.allclose(lhs, rhs, rtol=0, atol=1e-12 * max(1.0, np.max(np.abs(lhs))))

    @given(arrays(float, 40, elements=finite))
    def test_streaming_equals_batch(self, x):
        a = design_highpass(0.002, 1.0)
        b = a.clone()
        streamed = np.array([apply_filter(a, v) for v in x])
        batched = np.concatenate([b.run(x[:13]), b.run(x[13:])])
        assert np.allclose(streamed, batched, rtol=0, atol=1e-12)

    def test_passband_amplitude(self):
        filt = design_highpass(0.05, 0.1)
        p = sine_profile(1.0, 1.0, 0.1, 200)
        y = filt.run(p.samples)
        assert np.max(np.abs(y[-200:])) == pytest.approx(1.0, rel=0.02)

    def test_clone_is_independent(self):
        a = design_highpass(0.05, 0.1)
        a.step(1.0)
        b = a.clone()
        b.step(5.0)
        assert a.step(1.0) != b.step(1.0)

    def test_tc_relation(self):
        assert design_highpass(f3db_from_tc(80.0), 1.0).t_c == pytest.approx(80.0)


class TestInitialSocDecay:
    def test_values(self):
        assert initial_soc_decay(2.9, 1.3, 0.8, 80.0, 0.0) == pytest.approx(2.9 * 0.8 + 1.3)
        factor = initial_soc_decay(1.0, 0.0, 1.0, 80.0, 360.0)
        assert factor == pytest.approx(math.exp(-4.5))
        assert factor == pytest.approx(0.0111, abs=1e-4)
        assert initial_soc_decay(2.9, 1.3, 0.8, 80.0, 1e6) == pytest.approx(0.0, abs=1e-300)


@pytest.fixture(scope="module")
def slope():
    return linearize_ocv(preset("samsung-18650-20C").ocv, 0.3, 0.9)


class TestComponentBreakdown:
    @pytest.mark.parametrize("f", [0.4, 0.004, 0.0004])
    def test_matches_transfer_function_oracle(self, f, slope):
        spec = preset("samsung-18650-20C")
        a, b = slope
        bd = component_breakdown(
            spec, a, f, 1.0, 80.0, analysis_duration(f, 80.0, spec.ecm.tau), analysis_sample_period(f), b=b
        )
        oracle = component_amplitude_oracle(spec, a, f, 1.0, 80.0)
        for name in ("socvar", "ohmic", "rc"):
            assert bd.amplitudes[name] == pytest.approx(oracle[name], rel=0.01), name

    def test_transfer_magnitudes_by_hand(self):
        spec = preset("samsung-18650-20C")
        oracle = component_amplitude_oracle(spec, 2.9, 0.4, 1.0, 1e9)
        assert oracle["rc"] == pytest.approx(0.03 / 37.71, rel=1e-3)
        assert oracle["ohmic"] == pytest.approx(0.1, rel=1e-9)
        oracle = component_amplitude_oracle(spec, 2.9, 0.004, 1.0, 1e9)
        assert oracle["rc"] == pytest.approx(0.0281, abs=1e-4)

    def test_sum_reconstructs_filtered_linear_cell(self, slope):
        a, b = slope
        spec = preset("samsung-18650-20C").with_noise(0.0)
        f, t_s, z0 = 0.004, 1.0, 0.8
        bd = component_breakdown(spec, a, f, 1.0, 80.0, 1500.0, t_s, z0=z0, b=b)
        # independent path: simulate the cell, swap in the affine OCV, filter at rest
        m = simulate(spec, sine_profile(1.0, f, t_s, 1500.0), BatteryState(0.0, z0), seed=0)
        v_lin = a * m.z_true + b - spec.ecm.r_s * m.i - m.vc_true
        filt = design_highpass(f3db_from_tc(80.0), t_s, at_rest=True)
        assert np.max(np.abs(bd.total - filt.run(v_lin))) < 1e-9

    def test_zero_current(self, slope):
        spec = preset("samsung-18650-20C")
        bd = component_breakdown(spec, slope[0], 0.01, 0.0, 80.0, 400.0, 1.0)
        for name in ("socvar", "ohmic", "rc"):
            assert not np.any(getattr(bd, name))

    def test_frequency_ordering(self, slope):
        spec = preset("samsung-18650-20C")
        fs = np.logspace(-4, 0, 25)
        ratios = [
            component_amplitude_oracle(spec, slope[0], f, 1.0, 80.0)["ohmic"]
            / component_amplitude_oracle(spec, slope[0], f, 1.0, 80.0)["rc"]
            for f in fs
        ]
        assert np.all(np.diff(ratios) > 0)
        for f in (0.0004, 0.004, 0.04, 0.4):
            bd_ratio = component_breakdown(
                spec, slope[0], f, 1.0, 80.0, analysis_duration(f, 80.0, 15.0), analysis_sample_period(f)
            ).ratio("ohmic", "rc")
            assert bd_ratio == pytest.approx(
                np.interp(np.log10(f), np.log10(fs), ratios), rel=0.05
            )
