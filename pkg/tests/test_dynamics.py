import math

import numpy as np
import pytest
from hypothesis import given, settings, strategies as st
from scipy.integrate import cumulative_trapezoid

from boltrom.dynamics import (
    REF_SYSTEM, ForceSignal, OscillatorParams, SimulationError, State, SystemModel,
    Trajectory, available_backends, eom_rhs, interpolate_force, simulate, tension_change,
    tension_change_series, window_mean,
)
from boltrom.joint_models import DampingModel, StiffnessModel
from boltrom.synth import impulse_force

BACKENDS = available_backends()
compiled_only = pytest.mark.skipif("compiled" not in BACKENDS, reason="extension not built")

FREE_MASS = OscillatorParams(2.0, 1e-12, 0.0)
NO_COUPLING = StiffnessModel(1e-12, 0.0, 0.0)
NO_DAMPING = DampingModel(0.0, 0.0, 0.0)


def free_system(gamma):
    """LO and SO unrestrained and uncoupled: after a pulse, v_LO is constant."""
    return SystemModel(FREE_MASS, FREE_MASS, NO_COUPLING, NO_DAMPING, gamma_override=gamma)


class TestEomRhs:
    def test_equilibrium(self):
        d = eom_rhs(REF_SYSTEM, 0.0, State(0, 0, 0, 0, 500.0), ForceSignal.zero())
        assert all(v == 0 for v in d)

    @given(st.floats(-5, 5), st.floats(0, 5000))
    def test_no_relative_velocity_no_loosening(self, v, t):
        d = eom_rhs(REF_SYSTEM, 0.0, State(0.01, v, -0.02, v, t), ForceSignal.zero())
        assert d.tension == 0

    @given(st.floats(-5, 5), st.floats(-5, 5))
    def test_zero_tension_stays(self, v1, v2):
        d = eom_rhs(REF_SYSTEM, 0.0, State(0.0, v1, 0.0, v2, 0.0), ForceSignal.zero())
        assert d.tension == 0

    def test_hand_computed_values(self):
        s = State(1e-3, 0.2, -2e-3, -0.1, 100.0)
        f = ForceSignal(np.array([0.0, 1.0]), np.array([10.0, 10.0]))
        d = eom_rhs(REF_SYSTEM, 0.5, s, f)
        sm, dm = REF_SYSTEM.stiffness_model, REF_SYSTEM.damping_model
        kc = sm.k_I / (1 + math.exp(sm.alpha * (100 - sm.beta)))
        cc = dm.c_D - dm.c_I / (1 + math.exp(dm.eta * 100))
        lo, so = REF_SYSTEM.lo, REF_SYSTEM.so
        a_lo = (10 - lo.damping * 0.2 - cc * 0.3 - lo.stiffness * 1e-3 - kc * 3e-3) / lo.mass
        a_so = (-so.damping * -0.1 + cc * 0.3 - so.stiffness * -2e-3 + kc * 3e-3) / so.mass
        t_dot = -REF_SYSTEM.gamma(100.0) * 0.3 ** 4 * 100
        assert d.v_lo == pytest.approx(a_lo, rel=1e-13)
        assert d.v_so == pytest.approx(a_so, rel=1e-13)
        assert d.tension == pytest.approx(t_dot, rel=1e-12)
        assert (d.x_lo, d.x_so) == (0.2, -0.1)

    def test_non_finite_state_rejected(self):
        with pytest.raises(ValueError):
            eom_rhs(REF_SYSTEM, 0.0, State(math.nan, 0, 0, 0, 1.0), ForceSignal.zero())

    def test_vectorized(self):
        n = 5
        s = State(*(np.linspace(0, 1e-3, n) for _ in range(4)), np.full(n, 100.0))
        d = eom_rhs(REF_SYSTEM, np.zeros(n), s, ForceSignal.zero())
        assert np.shape(d.v_lo) == (n,)


class TestForce:
    f = ForceSignal(np.array([1.0, 2.0, 3.0]), np.array([10.0, 20.0, 5.0]))

    def test_outside_support(self):
        assert interpolate_force(self.f, 0.5) == 0.0
        assert interpolate_force(self.f, 3.5) == 0.0

    def test_node_and_midpoint(self):
        assert interpolate_force(self.f, 2.0) == 20.0
        assert interpolate_force(self.f, 1.5) == 15.0

    def test_unsorted_times_rejected(self):
        with pytest.raises(ValueError):
            ForceSignal(np.array([0.0, 0.0]), np.array([1.0, 2.0]))

    def test_support(self):
        pulse = impulse_force(100.0, 2e-3, 0.5, 19200.0, 1.0)
        lo, hi = pulse.support()
        assert 0.4999 < lo <= 0.5 and 0.502 < hi < 0.5022


class TestSimulate:
    def test_zero_force_equilibrium_exact(self):
        traj = simulate(REF_SYSTEM, ForceSignal.zero(), 1018.0, (0.0, 2.0), output_rate=100)
        assert np.all(traj.states[:, :4] == 0)
        assert np.all(traj.tension == 1018.0)

    @pytest.mark.parametrize("backend", BACKENDS)
    def test_tension_closed_form_constant_velocity(self, backend):
        # after the pulse v_LO = impulse / m and v_SO = 0, so T = T_a exp(-γ v⁴ (t - t_a))
        pulse = impulse_force(200.0, 2e-3, 0.1, 19200.0)
        v = np.trapezoid(pulse.values, pulse.times) / FREE_MASS.mass
        gamma = 5.0 / v ** 4  # decay constant 0.2 s
        t = np.linspace(0.2, 1.2, 501)
        traj = simulate(free_system(gamma), pulse, 100.0, (0.0, 1.2), tol=(1e-11, 1e-13),
                        t_eval=t, backend=backend)
        assert np.allclose(traj.v_lo, v, rtol=1e-12)
        expected = traj.tension[0] * np.exp(-gamma * v ** 4 * (t - t[0]))
        assert np.max(np.abs(traj.tension / expected - 1)) < 1e-6
        assert traj.tension[-1] / traj.tension[0] == pytest.approx(math.exp(-5), rel=1e-6)

    @pytest.mark.parametrize("preload", [5.9, 1018.0, 3013.0])
    def test_low_amplitude_conservation(self, preload):
        pulse = impulse_force(30.0, 2e-3, 0.5, 19200.0)
        traj = simulate(REF_SYSTEM, pulse, preload, (0.0, 8.5), output_rate=4800)
        _, t_final, delta = tension_change(traj, 0.5)
        assert abs(delta) < 1e-4

    @settings(max_examples=15)
    @given(st.floats(1.0, 3000.0), st.floats(50.0, 2000.0))
    def test_tension_positive_and_non_increasing(self, preload, amp):
        pulse = impulse_force(amp, 2e-3, 0.1, 19200.0)
        traj = simulate(REF_SYSTEM, pulse, preload, (0.0, 1.0), output_rate=2000)
        assert np.min(traj.tension) > 0
        assert np.all(np.diff(traj.tension) <= 10 * 1e-10)

    def test_tolerance_halving_converges(self):
        pulse = impulse_force(1600.0, 2e-3, 0.5, 19200.0)
        finals = []
        for rtol, atol in ((1e-8, 1e-10), (5e-9, 5e-11)):
            traj = simulate(REF_SYSTEM, pulse, 300.0, (0.0, 3.0), tol=(rtol, atol),
                            output_rate=100)
            finals.append(traj.tension[-1])
        budget = 1e-8 * finals[0] + 1e-10
        assert abs(finals[0] - finals[1]) < 100 * budget
        assert finals[0] < 300.0

    def test_undamped_energy_conserved(self):
        lo = OscillatorParams(8.625, 8963.6, 0.0)
        so = OscillatorParams(0.9888, 91800.0, 0.0)
        sys_ = SystemModel(lo, so, StiffnessModel(5e4, 0.0, 0.0), NO_DAMPING)
        pulse = impulse_force(30.0, 2e-3, 0.0, 19200.0)
        t = np.linspace(0.01, 0.01 + 10 / 5.0, 2001)
        traj = simulate(sys_, pulse, 100.0, (0.0, t[-1]), tol=(1e-11, 1e-14), t_eval=t)
        kc = 5e4 / 2
        energy = (0.5 * lo.mass * traj.v_lo ** 2 + 0.5 * so.mass * traj.v_so ** 2
                  + 0.5 * lo.stiffness * traj.x_lo ** 2 + 0.5 * so.stiffness * traj.x_so ** 2
                  + 0.5 * kc * (traj.x_lo - traj.x_so) ** 2)
        assert np.ptp(energy) / energy[0] < 1e-8

    def test_record_steps_merged(self):
        pulse = impulse_force(30.0, 2e-3, 0.1, 19200.0)
        traj = simulate(REF_SYSTEM, pulse, 100.0, (0.0, 0.3), output_rate=100,
                        record_steps=True)
        assert len(traj) > 31 and np.all(np.diff(traj.times) > 0)
        steps = simulate(REF_SYSTEM, pulse, 100.0, (0.0, 0.3))
        assert not steps.dense and steps.times[0] == 0.0 and steps.times[-1] == 0.3

    def test_impulse_not_stepped_over(self):
        pulse = impulse_force(100.0, 2e-3, 1.0, 19200.0)
        traj = simulate(REF_SYSTEM.without_loosening(), pulse, 500.0, (0.0, 1.1),
                        t_eval=np.array([1.1]))
        assert abs(traj.x_lo[0]) > 1e-6

    @pytest.mark.parametrize("bad", [dict(T0=-1.0), dict(t_span=(1.0, 0.0)),
                                     dict(tol=(0.0, 1e-10))])
    def test_invalid_arguments(self, bad):
        kw = dict(T0=10.0, t_span=(0.0, 1.0), tol=(1e-8, 1e-10)) | bad
        with pytest.raises(ValueError):
            simulate(REF_SYSTEM, ForceSignal.zero(), kw["T0"], kw["t_span"], kw["tol"])

    def test_tension_overflow_raises_with_state(self):
        pulse = impulse_force(1600.0, 2e-3, 0.01, 19200.0)
        with pytest.raises(SimulationError) as info:
            simulate(REF_SYSTEM.with_gamma(-1e12), pulse, 100.0, (0.0, 1.0))
        assert info.value.t > 0.0 and isinstance(info.value.state, State)

    def test_zero_tension_with_loosening(self):
        pulse = impulse_force(1600.0, 2e-3, 0.01, 19200.0)
        traj = simulate(REF_SYSTEM, pulse, 0.0, (0.0, 0.2), output_rate=1000)
        assert np.all(traj.tension == 0)


@compiled_only
class TestBackendEquivalence:
    @pytest.mark.parametrize("preload,amp", [(5.8, 1600.0), (300.0, 30.0), (3013.0, 1600.0)])
    def test_compiled_matches_python(self, preload, amp):
        pulse = impulse_force(amp, 2e-3, 0.05, 19200.0)
        kw = dict(t_span=(0.0, 0.4), output_rate=2000)
        a = simulate(REF_SYSTEM, pulse, preload, backend="compiled", **kw)
        b = simulate(REF_SYSTEM, pulse, preload, backend="python", **kw)
        assert a.stats["n_accepted"] == b.stats["n_accepted"]
        np.testing.assert_allclose(a.states, b.states, rtol=1e-11, atol=1e-15)

    def test_same_failure(self):
        pulse = impulse_force(1600.0, 2e-3, 0.01, 19200.0)
        msgs = []
        for backend in ("compiled", "python"):
            with pytest.raises(SimulationError) as info:
                simulate(REF_SYSTEM.with_gamma(-1e12), pulse, 100.0, (0.0, 1.0),
                         backend=backend)
            msgs.append(info.value.status)
        assert msgs[0] == msgs[1]


class TestTensionChange:
    def test_constant(self):
        t = np.linspace(0, 10, 10001)
        traj = Trajectory(t, np.column_stack([np.zeros((t.size, 4)), np.full(t.size, 500.0)]))
        assert tension_change(traj, 0.5) == (500.0, 500.0, 0.0)

    def test_piecewise(self):
        t = np.linspace(0, 10, 10001)
        tension = np.interp(t, [0.0, 0.5, 1.0, 10.0], [100.0, 100.0, 90.0, 90.0])
        t0, t1, d = tension_change_series(t, tension, 0.5)
        assert (t0, t1) == pytest.approx((100.0, 90.0), abs=1e-12)
        assert d == pytest.approx(-10.0, abs=1e-12)

    def test_insufficient_coverage(self):
        t = np.linspace(0, 5, 101)
        with pytest.raises(ValueError, match="does not cover"):
            tension_change_series(t, np.ones_like(t), 0.5)

    def test_empty_window(self):
        with pytest.raises(ValueError):
            window_mean(np.array([0.0, 1.0]), np.array([1.0, 1.0]), 0.2, 0.8)

    def test_delta_matches_quadrature_of_rate(self):
        # integrate dT/dt along the stored trajectory independently of the solver;
        # the grid is 4x the record rate so trapezoid error stays below 1e-7 N
        pulse = impulse_force(1000.0, 2e-3, 0.5, 19200.0)
        t = np.arange(int(8.0 * 76800) + 1) / 76800
        traj = simulate(REF_SYSTEM, pulse, 300.0, (0.0, 8.0), tol=(1e-10, 1e-12), t_eval=t)
        rate = eom_rhs(REF_SYSTEM, t, State(*traj.states.T), pulse).tension
        quad = traj.tension[0] + cumulative_trapezoid(rate, t, initial=0.0)
        _, _, d_sim = tension_change(traj, 0.5)
        _, _, d_quad = tension_change_series(t, quad, 0.5)
        assert d_sim < -1e-3
        assert abs(d_sim - d_quad) < 1e-6
