import math

import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from boltrom.dynamics import REF_LO, REF_SYSTEM
from boltrom.sigproc import TimeSeries
from boltrom.synth import (
    FAST_RATE, PRETRIGGER, PULSE_WIDTH, MeasurementCase, NoiseSpec, amplitude_for_drop,
    case_seed, impulse_force, relative_velocity_moment, synth_campaign, synth_case,
    synth_uncoupled_case,
)

SHORT = 1.5


class TestImpulse:
    @given(st.floats(0.1, 2000.0), st.floats(5e-4, 5e-3))
    def test_integral(self, amp, width):
        # half-sine area 2Aw/π; fine sampling keeps the trapezoid error small
        f = impulse_force(amp, width, fs=1e6)
        area = np.trapezoid(f.values, f.times)
        assert area == pytest.approx(2 * amp * width / math.pi, rel=1e-5)

    def test_support_and_peak(self):
        f = impulse_force(30.0, duration=1.0)
        nonzero = f.times[f.values > 0]
        assert nonzero.min() > PRETRIGGER and nonzero.max() < PRETRIGGER + PULSE_WIDTH
        assert f.values.max() == pytest.approx(30.0, rel=1e-2)
        assert f.times[-1] == pytest.approx(1.0)
        assert np.all(f.values >= 0)

    @pytest.mark.parametrize("kw", [dict(amplitude=-1.0), dict(amplitude=1.0, width=0.0),
                                    dict(amplitude=1.0, fs=0.0), dict(amplitude=1.0, t0=-1.0)])
    def test_invalid(self, kw):
        with pytest.raises(ValueError):
            impulse_force(**kw)


class TestNoiseSpec:
    def test_negative_rejected(self):
        with pytest.raises(ValueError):
            NoiseSpec(level=-0.1)
        with pytest.raises(ValueError):
            NoiseSpec(ambient_tone=(0.0, 1.0))

    def test_is_zero(self):
        assert NoiseSpec().is_zero and NoiseSpec(ambient_tone=(50.0, 0.0)).is_zero
        assert not NoiseSpec(level=0.01).is_zero


class TestSynthCase:
    def test_shapes_and_rates(self):
        case = synth_case(REF_SYSTEM, 1018.0, impulse_force(30.0), duration=SHORT)
        n = int(SHORT * FAST_RATE) + 1
        assert len(case.accel_lo) == len(case.accel_so) == case.force.times.size == n
        assert case.tension.dt == pytest.approx(4 / FAST_RATE)
        assert len(case.tension) == (n - 1) // 4 + 1
        assert case.amplitude == pytest.approx(30.0, rel=1e-2)

    def test_quiet_before_impact(self):
        case = synth_case(REF_SYSTEM, 1018.0, impulse_force(30.0), duration=SHORT)
        before = case.accel_lo.time < PRETRIGGER
        assert np.all(case.accel_lo.values[before] == 0.0)
        assert np.all(case.tension.values[case.tension.time < PRETRIGGER] == 1018.0)

    def test_deterministic(self):
        noise = NoiseSpec(accel_rms=0.01, tension_rms=0.1, seed=4)
        a = synth_case(REF_SYSTEM, 500.0, impulse_force(30.0), noise, duration=SHORT)
        b = synth_case(REF_SYSTEM, 500.0, impulse_force(30.0), noise, duration=SHORT)
        np.testing.assert_array_equal(a.accel_lo.values, b.accel_lo.values)
        np.testing.assert_array_equal(a.tension.values, b.tension.values)

    def test_seed_changes_noise(self):
        a = synth_case(REF_SYSTEM, 500.0, impulse_force(30.0), NoiseSpec(accel_rms=0.01, seed=1),
                       duration=SHORT)
        b = synth_case(REF_SYSTEM, 500.0, impulse_force(30.0), NoiseSpec(accel_rms=0.01, seed=2),
                       duration=SHORT)
        assert not np.array_equal(a.accel_lo.values, b.accel_lo.values)

    def test_level_is_fraction_of_signal_std(self):
        clean = synth_case(REF_SYSTEM, 500.0, impulse_force(30.0), duration=SHORT)
        noisy = synth_case(REF_SYSTEM, 500.0, impulse_force(30.0),
                           NoiseSpec(level=0.02, seed=3), duration=SHORT)
        for c, n in ((clean.accel_lo, noisy.accel_lo), (clean.accel_so, noisy.accel_so)):
            added = np.std(n.values - c.values)
            # sample std of 28801 draws is within a few percent of sigma
            assert added == pytest.approx(0.02 * np.std(c.values), rel=0.03)

    def test_ambient_tone(self):
        clean = synth_case(REF_SYSTEM, 500.0, impulse_force(0.0), duration=SHORT)
        toned = synth_case(REF_SYSTEM, 500.0, impulse_force(0.0),
                           NoiseSpec(ambient_tone=(60.0, 0.5)), duration=SHORT)
        diff = toned.accel_lo.values - clean.accel_lo.values
        assert np.max(np.abs(diff)) == pytest.approx(0.5, rel=1e-3)

    def test_rate_ratio_checked(self):
        with pytest.raises(ValueError, match="integer multiple"):
            synth_case(REF_SYSTEM, 500.0, impulse_force(30.0), duration=SHORT,
                       fs_tension=5000.0)

    def test_duration_checked(self):
        with pytest.raises(ValueError):
            synth_case(REF_SYSTEM, 500.0, impulse_force(30.0), duration=0.4)

    def test_unknown_test_type(self):
        with pytest.raises(ValueError):
            synth_case(REF_SYSTEM, 500.0, impulse_force(30.0), duration=SHORT,
                       test_type="bogus")

    def test_uncoupled_response_only_on_lo(self):
        case = synth_uncoupled_case(REF_LO, impulse_force(30.0), duration=SHORT)
        assert case.test_type == "uncoupled" and case.preload == 0.0
        assert np.max(np.abs(case.accel_so.values)) < 1e-9 * np.max(np.abs(case.accel_lo.values))


class TestCampaign:
    def test_ids_and_seeds(self):
        cases = synth_campaign(REF_SYSTEM, [100.0, 200.0, 300.0], [30.0],
                               NoiseSpec(accel_rms=0.01, seed=10), duration=0.6)
        assert [c.case_id for c in cases] == ["low000", "low001", "low002"]
        assert [c.seed for c in cases] == [case_seed(10, i) for i in range(3)]
        assert [c.preload for c in cases] == [100.0, 200.0, 300.0]

    def test_cartesian_order(self):
        cases = synth_campaign(REF_SYSTEM, [100.0, 200.0], [10.0, 20.0], pairing="cartesian",
                               duration=0.6, id_prefix="x")
        assert [(c.preload, round(c.amplitude)) for c in cases] == \
            [(100.0, 10), (100.0, 20), (200.0, 10), (200.0, 20)]
        assert cases[0].case_id == "x000"

    @pytest.mark.parametrize("args,kw", [(([], [1.0]), {}), (([1.0], []), {}),
                                         (([1.0, 2.0], [1.0, 2.0, 3.0]), {}),
                                         (([1.0], [1.0]), dict(pairing="zip"))])
    def test_invalid_grids(self, args, kw):
        with pytest.raises(ValueError):
            synth_campaign(REF_SYSTEM, *args, duration=0.6, **kw)


class TestAmplitudeForDrop:
    def test_moment_positive_and_grows_with_window(self):
        short = relative_velocity_moment(REF_SYSTEM, 300.0, t_end=1.0)
        long = relative_velocity_moment(REF_SYSTEM, 300.0, t_end=2.0)
        assert 0 < short <= long

    def test_achieves_drop(self):
        preload = 300.0
        amp = amplitude_for_drop(REF_SYSTEM, preload, 1e-3)
        case = synth_case(REF_SYSTEM, preload, impulse_force(amp), duration=8.5,
                          test_type="loosening")
        final = np.mean(case.tension.values[case.tension.time > 2.0])
        assert (preload - final) / preload == pytest.approx(1e-3, rel=0.05)

    @pytest.mark.parametrize("drop", [0.0, 1.0, -0.1])
    def test_invalid_fraction(self, drop):
        with pytest.raises(ValueError):
            amplitude_for_drop(REF_SYSTEM, 300.0, drop)

    def test_needs_loosening(self):
        with pytest.raises(ValueError):
            amplitude_for_drop(REF_SYSTEM.with_gamma(-1.0), 300.0, 1e-3)


class TestMeasurementCase:
    def test_length_mismatch(self):
        case = synth_case(REF_SYSTEM, 500.0, impulse_force(30.0), duration=0.6)
        with pytest.raises(ValueError, match="length"):
            short = TimeSeries(case.accel_so.values[:-1], dt=case.accel_so.dt)
            MeasurementCase(case.case_id, case.test_type, case.force, case.accel_lo, short,
                            case.tension, 500.0)
