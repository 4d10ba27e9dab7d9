import math

import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from demul.synthgen import (
    EventSpec,
    GatherGeometry,
    GeneratorError,
    ParamSpace,
    WaveletSpec,
    _ref_velocity,
    _trajectory,
    hyperbolic_time,
    make_pair,
    make_wavelet,
    moveout_at_offset,
    nmo_correct,
    nmo_profile,
    pair_seed,
    synth_prestack,
    velocity_for_moveout,
)


GEO = GatherGeometry()
SPACE = ParamSpace()


class TestWavelet:
    def test_zero_phase_is_symmetric_with_center_peak(self):
        w = make_wavelet(WaveletSpec(phase_deg=0.0), GEO.dt)
        assert len(w) % 2 == 1
        np.testing.assert_allclose(w, w[::-1], atol=1e-12)
        assert np.argmax(np.abs(w)) == len(w) // 2
        assert w[len(w) // 2] == 1.0

    def test_polarity_negates(self):
        spec = WaveletSpec(phase_deg=17.0, f_center=35.0)
        wp = make_wavelet(spec, GEO.dt)
        wn = make_wavelet(WaveletSpec(polarity=-1, phase_deg=17.0, f_center=35.0), GEO.dt)
        np.testing.assert_array_equal(wn, -wp)

    @pytest.mark.parametrize("fc,decay,at", [(30.0, 0.0, 0.0), (40.0, 0.2, 0.8), (25.0, 0.25, 0.5)])
    def test_fft_peak_near_effective_frequency(self, fc, decay, at):
        spec = WaveletSpec(f_center=fc, bandwidth=18.0, f_decay=decay)
        w = make_wavelet(spec, GEO.dt, at_time=at)
        pad = np.zeros(4096)
        pad[: len(w)] = w
        freqs = np.fft.rfftfreq(len(pad), GEO.dt)
        peak = freqs[np.argmax(np.abs(np.fft.rfft(pad)))]
        f_eff = fc * (1 - decay * at)
        bin_width = 1.0 / (len(w) * GEO.dt)  # one bin of the wavelet-length DFT
        assert abs(peak - f_eff) <= bin_width

    def test_decayed_frequency_must_stay_positive(self):
        spec = WaveletSpec(f_center=10.0, f_decay=0.9)
        with pytest.raises(GeneratorError, match="effective"):
            make_wavelet(spec, GEO.dt, at_time=1.2)


class TestSynthPrestack:
    def test_no_events_zero_gather(self):
        g = synth_prestack([], WaveletSpec(), GEO)
        assert not g.data.any()

    def test_zero_offset_spike_at_t0(self):
        ev = EventSpec("primary", t0=0.5, amplitude=1.0, velocity=2000.0)
        g = synth_prestack([ev], WaveletSpec(phase_deg=0.0), GEO)
        assert abs(np.argmax(np.abs(g.data[0])) - round(0.5 / GEO.dt)) <= 1

    def test_apex_times_match_hyperbola(self):
        ev = EventSpec("primary", t0=0.4, amplitude=1.0, velocity=2200.0)
        g = synth_prestack([ev], WaveletSpec(phase_deg=0.0), GEO)
        want = hyperbolic_time(0.4, GEO.offsets, 2200.0)
        for tr in range(0, GEO.n_traces, 7):
            if want[tr] < GEO.record_length - 0.05:
                peak = np.argmax(np.abs(g.data[tr])) * GEO.dt
                assert abs(peak - want[tr]) <= GEO.dt / 2

    def test_far_offset_clipping_flagged(self):
        ev = EventSpec("primary", t0=0.95, amplitude=1.0, velocity=1500.0)
        g = synth_prestack([ev], WaveletSpec(), GEO)
        assert g.meta["clipped"] == [0]

    def test_t0_outside_record_rejected(self):
        with pytest.raises(GeneratorError, match="outside"):
            synth_prestack([EventSpec("primary", 2.0, 1.0, 2000.0)], WaveletSpec(), GEO)


class TestNmoCorrect:
    def test_exact_velocity_flattens(self):
        v = 2400.0
        t0 = 0.6
        ev = EventSpec("primary", t0=t0, amplitude=1.0, velocity=v)
        g = synth_prestack([ev], WaveletSpec(phase_deg=0.0), GEO)
        out = nmo_correct(g, np.full(GEO.n_samples, v), stretch_limit=1.5)
        t0_idx = round(t0 / GEO.dt)
        # live = the event sample itself survives the stretch mute
        stretch = np.sqrt(t0**2 + (GEO.offsets / v) ** 2) / t0
        live = np.nonzero(stretch <= 1.5)[0]
        assert len(live) > GEO.n_traces // 3
        for tr in live:
            assert abs(int(np.argmax(np.abs(out.data[tr]))) - t0_idx) <= 1

    def test_undercorrection_curves_down(self):
        # v_nmo > v_event means positive residual move-out (later at far offset)
        v_ev, v_nmo = 2000.0, 2300.0
        ev = EventSpec("multiple", t0=0.5, amplitude=1.0, velocity=v_ev)
        g = synth_prestack([ev], WaveletSpec(phase_deg=0.0), GEO)
        out = nmo_correct(g, np.full(GEO.n_samples, v_nmo), stretch_limit=2.5)
        sign_oracle = hyperbolic_time(0.5, GEO.offsets, v_ev) - hyperbolic_time(0.5, GEO.offsets, v_nmo)
        assert np.all(sign_oracle[1:] > 0)
        t_near = np.argmax(np.abs(out.data[0]))
        tr_far = GEO.n_traces // 2
        t_far = np.argmax(np.abs(out.data[tr_far]))
        assert t_far > t_near

    def test_stretch_mutes_shallow_far_offsets(self):
        ev = EventSpec("primary", t0=0.12, amplitude=1.0, velocity=1850.0)
        g = synth_prestack([ev], WaveletSpec(phase_deg=0.0), GEO)
        out = nmo_correct(g, np.full(GEO.n_samples, 1850.0), stretch_limit=1.5)
        tau = 0.12
        stretch = np.sqrt(tau**2 + (GEO.offsets / 1850.0) ** 2) / tau
        muted = stretch > 1.5
        assert muted.any()
        assert np.abs(out.data[muted, round(tau / GEO.dt)]).max() == 0.0


class TestMoveoutAlgebra:
    @given(st.floats(0.1, 0.9), st.floats(-0.01, 0.09), st.floats(1600.0, 3000.0))
    @settings(max_examples=50, deadline=None)
    def test_velocity_solver_roundtrip(self, t0, mo, v_ref):
        v = velocity_for_moveout(t0, mo, v_ref, 3000.0)
        assert abs(moveout_at_offset(t0, v, v_ref, 3000.0) - mo) < 1e-9

    def test_positive_moveout_means_slower(self):
        v = velocity_for_moveout(0.5, 0.02, 2200.0, 3000.0)
        assert v < 2200.0


class TestMakePair:
    def test_zero_multiples_means_x_equals_y(self):
        space = ParamSpace(n_multiples=(0, 0))
        pair = make_pair(space, GEO, 3)
        np.testing.assert_array_equal(pair.x.data, pair.y.data)
        assert not pair.m.data.any()

    def test_fixed_seed_bitwise_identical(self):
        a = make_pair(SPACE, GEO, 11)
        b = make_pair(SPACE, GEO, 11)
        np.testing.assert_array_equal(a.x.data, b.x.data)
        np.testing.assert_array_equal(a.y.data, b.y.data)
        np.testing.assert_array_equal(a.m.data, b.m.data)

    @pytest.mark.parametrize("seed", range(8))
    def test_linearity_exact(self, seed):
        pair = make_pair(SPACE, GEO, seed)
        np.testing.assert_array_equal(pair.x.data - pair.y.data, pair.m.data)

    @pytest.mark.parametrize("seed", range(8))
    def test_normalization_exact(self, seed):
        pair = make_pair(SPACE, GEO, seed)
        assert np.abs(pair.x.data).max() == np.float32(1.0)

    @pytest.mark.parametrize("seed", range(12))
    def test_multiple_moveout_at_least_q_min(self, seed):
        pair = make_pair(SPACE, GEO, seed)
        for ev in pair.meta["multiples"]:
            v_ref = _ref_velocity(SPACE, GEO, pair.meta["nmo_perturb_pct"], ev.t0)
            q = moveout_at_offset(ev.t0, ev.velocity, v_ref, GEO.far_offset) / GEO.dt
            assert q >= SPACE.q_min - 1e-6
            assert ev.velocity < v_ref

    @pytest.mark.parametrize("seed", range(12))
    def test_primary_moveout_capped(self, seed):
        pair = make_pair(SPACE, GEO, seed)
        for ev in pair.meta["primaries"]:
            v_ref = _ref_velocity(SPACE, GEO, pair.meta["nmo_perturb_pct"], ev.t0)
            q = moveout_at_offset(ev.t0, ev.velocity, v_ref, GEO.far_offset) / GEO.dt
            assert abs(q) <= SPACE.primary_rmo_cap + 1e-6
            assert abs(q) < SPACE.q_min

    @pytest.mark.parametrize("seed", range(12))
    def test_crossing_guarantee(self, seed):
        pair = make_pair(SPACE, GEO, seed)
        pct = pair.meta["nmo_perturb_pct"]
        found = False
        for m in pair.meta["multiples"]:
            tm = _trajectory(m, _ref_velocity(SPACE, GEO, pct, m.t0), GEO)
            for p in pair.meta["primaries"]:
                tp = _trajectory(p, _ref_velocity(SPACE, GEO, pct, p.t0), GEO)
                d = tm - tp
                if np.any(d <= 0) and np.any(d >= 0):
                    found = True
        assert found

    def test_unsatisfiable_space_raises(self):
        with pytest.raises(GeneratorError):
            make_pair(ParamSpace(q_min=500.0, q_max=600.0), GEO, 0)

    def test_cap_must_stay_below_q_min(self):
        with pytest.raises(GeneratorError, match="primary_rmo_cap"):
            ParamSpace(primary_rmo_cap=5.0, q_min=3.0).validate(GEO)


class TestPerIndexSeeding:
    def test_pair_regenerates_in_isolation(self):
        i = 5
        full = [make_pair(SPACE, GEO, pair_seed(123, k)) for k in range(8)]
        alone = make_pair(SPACE, GEO, pair_seed(123, i))
        np.testing.assert_array_equal(full[i].x.data, alone.x.data)
        np.testing.assert_array_equal(full[i].m.data, alone.m.data)


def test_nmo_profile_positive_and_increasing():
    v = nmo_profile(SPACE, GEO, 0.0)
    assert v.shape == (GEO.n_samples,)
    assert np.all(v > 0) and np.all(np.diff(v) >= 0)


def test_geometry_validation():
    with pytest.raises(GeneratorError):
        GatherGeometry(offsets=np.array([0.0, 1.0]))
    with pytest.raises(GeneratorError):
        GatherGeometry(dt=-1.0)
