"""Feature pipeline: scaling, derivatives, resampling, and bundles."""

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from resfno import features as F


def make_sample(b, f=1e5, temp=25.0, h=None):
    return F.WaveformSample(b=np.asarray(b, dtype=float), h=h, f=f, temp=temp)


# --- scaler ---------------------------------------------------------------


def test_scaler_fit_records_extrema():
    s1 = make_sample(np.linspace(-0.2, 0.2, 16))
    s2 = make_sample(np.linspace(-0.1, 0.1, 16))
    state = F.scaler_fit([s1, s2])
    assert state.mins["b"] == -0.2 and state.maxs["b"] == 0.2


def test_scaler_fit_frequency_range():
    samples = [make_sample(np.sin(np.linspace(0, 2 * np.pi, 32)), f=f)
               for f in (50e3, 800e3)]
    state = F.scaler_fit(samples)
    assert (state.mins["f"], state.maxs["f"]) == (50e3, 800e3)


def test_scaler_flags_constant_feature():
    samples = [make_sample(np.sin(np.linspace(0, 2 * np.pi, 32)), temp=25.0)
               for _ in range(3)]
    state = F.scaler_fit(samples)
    assert "temp" in state.constant
    assert float(state.scale(25.0, "temp")) == 0.0


def test_scaler_fit_rejects_empty():
    with pytest.raises(F.ScalerError, match="empty"):
        F.scaler_fit([])


def test_scale_endpoints_and_midpoint():
    state = F.ScalerState(mins={"b": -2.0}, maxs={"b": 6.0})
    assert float(state.scale(-2.0, "b")) == -1.0
    assert float(state.scale(6.0, "b")) == 1.0
    assert float(state.scale(2.0, "b")) == 0.0


def test_scale_hand_value():
    state = F.ScalerState(mins={"b": 0.0}, maxs={"b": 2.0})
    # 2*(0.5 - 0)/(2 - 0) - 1 = -0.5
    assert float(state.scale(0.5, "b")) == -0.5


def test_scale_does_not_clamp():
    state = F.ScalerState(mins={"b": 0.0}, maxs={"b": 1.0})
    assert float(state.scale(2.0, "b")) == 3.0


@settings(max_examples=50, deadline=None)
@given(lo=st.floats(-10, 10), width=st.floats(0.1, 20),
       x=st.floats(-30, 30))
def test_scale_unscale_roundtrip(lo, width, x):
    state = F.ScalerState(mins={"b": lo}, maxs={"b": lo + width})
    back = float(state.unscale(state.scale(x, "b"), "b"))
    assert abs(back - x) < 1e-12 * max(1.0, abs(x))


# --- derivative -----------------------------------------------------------


def test_db_dt_constant_is_zero():
    assert np.allclose(F.db_dt(np.full(32, 0.3), 1e5), 0.0)


def test_db_dt_sine_matches_analytic():
    n = 256
    t = np.arange(n) / n
    b = np.sin(2 * np.pi * t)
    d = F.db_dt(b, 1.0)
    assert np.max(np.abs(d - 2 * np.pi * np.cos(2 * np.pi * t))) < 1e-3


def test_db_dt_triangle_slopes():
    n, bp, f = 400, 0.15, 2e5
    phase = np.arange(n) / n
    b = np.where(phase < 0.25, 4 * bp * phase,
                 np.where(phase < 0.75, bp * (2 - 4 * phase),
                          4 * bp * (phase - 1)))
    d = F.db_dt(b, f)
    ramp_up = (phase > 0.02) & (phase < 0.23)
    ramp_down = (phase > 0.27) & (phase < 0.73)
    assert np.allclose(d[ramp_up], 4 * bp * f, rtol=1e-9)
    assert np.allclose(d[ramp_down], -4 * bp * f, rtol=1e-9)


def test_db_dt_periodic_mean_is_zero(rng):
    b = rng.uniform(-1, 1, 205)
    assert abs(F.db_dt(b, 3e5).mean()) < 1e-9 * 3e5 * 205


def test_db_dt_rejects_bad_frequency():
    with pytest.raises(ValueError, match="positive"):
        F.db_dt(np.zeros(8), 0.0)


def test_db_dt_commutes_with_downsampling_for_band_limited(rng):
    # central-difference truncation is O((m/N)^2), so keep modes low enough
    # for both grids to sit within the 1e-3 discretization tolerance
    n_fine, factor, modes = 2048, 2, 8
    spec = np.zeros(n_fine // 2 + 1, dtype=np.complex128)
    spec[1:modes] = rng.uniform(-1, 1, modes - 1) + 1j * rng.uniform(-1, 1, modes - 1)
    b = np.fft.irfft(spec, n=n_fine)
    f = 1e5
    coarse_of_deriv = F.db_dt(b, f)[::factor]
    deriv_of_coarse = F.db_dt(b[::factor], f)
    scale = np.max(np.abs(coarse_of_deriv))
    assert np.max(np.abs(coarse_of_deriv - deriv_of_coarse)) / scale < 1e-3


# --- delta-B --------------------------------------------------------------


def test_delta_b_sine():
    t = np.linspace(0, 2 * np.pi, 512, endpoint=False)
    assert abs(F.delta_b(0.1 * np.sin(t)) - 0.2) < 1e-6


def test_delta_b_constant():
    assert F.delta_b(np.full(8, 1.5)) == 0.0


def test_delta_b_asymmetric_uses_peak_to_peak():
    b = np.concatenate([np.linspace(-0.05, 0.15, 32),
                        np.linspace(0.15, -0.05, 32)])
    assert abs(F.delta_b(b) - 0.2) < 1e-12  # not 2*max|b| = 0.3


@settings(max_examples=40, deadline=None)
@given(offset_eighths=st.integers(-40, 40))
def test_delta_b_dc_invariant(offset_eighths):
    # exact binary fractions so b + offset carries no roundoff; the
    # invariance then holds bit-exactly
    b = np.array([0.125, -0.25, 0.5, 0.0])
    offset = offset_eighths / 8.0
    assert F.delta_b(b + offset) == F.delta_b(b)


# --- resampling -----------------------------------------------------------


def test_downsample_1024_to_205_uses_stride_5():
    x = np.arange(1024.0)
    out = F.downsample_stride(x, 205)
    assert len(out) == 205
    assert out[1] - out[0] == 5.0
    assert out[-1] == 1020.0


def test_downsample_identity_when_equal():
    x = np.arange(17.0)
    assert np.array_equal(F.downsample_stride(x, 17), x)


def test_downsample_small_case():
    assert np.array_equal(F.downsample_stride(np.arange(5.0), 3),
                          [0.0, 2.0, 4.0])


def test_downsample_rejects_upsampling():
    with pytest.raises(ValueError, match="exceeds"):
        F.downsample_stride(np.arange(4.0), 8)


def test_resample_linear_hand_case():
    out = F.resample_linear([0.0, 1.0, 2.0, 3.0], 7)
    assert np.allclose(out, [0.0, 0.5, 1.0, 1.5, 2.0, 2.5, 3.0], atol=1e-15)


def test_resample_linear_identity():
    x = np.array([3.0, 1.0, 4.0, 1.0, 5.0])
    assert np.array_equal(F.resample_linear(x, 5), x)


def test_resample_linear_constant():
    assert np.allclose(F.resample_linear(np.full(10, 2.5), 23), 2.5)


def test_resample_linear_preserves_endpoints(rng):
    x = rng.uniform(-1, 1, 37)
    out = F.resample_linear(x, 101)
    assert out[0] == x[0] and out[-1] == x[-1]


def test_resample_rejects_degenerate():
    with pytest.raises(ValueError, match="degenerate"):
        F.resample_linear([1.0], 5)


# --- bundles --------------------------------------------------------------


def _training_samples(rng, n_raw=1024, count=6):
    samples = []
    for i in range(count):
        t = np.arange(n_raw) / n_raw
        b = (0.1 + 0.02 * i) * np.sin(2 * np.pi * t)
        h = 40.0 * np.sin(2 * np.pi * t - 0.4)
        samples.append(F.WaveformSample(b=b, h=h, f=1e5 * (i + 1), temp=25.0 + i))
    return samples


def test_bundle_material79_pipeline(rng):
    samples = _training_samples(rng)
    prepped = [F.preprocess(s, 205) for s in samples]
    scaler = F.scaler_fit(prepped)
    fb = F.make_bundle(samples[0], scaler, 205)
    assert fb.seq.shape == (3, 205)
    assert fb.scalars.shape == (3,)
    assert fb.h_norm.shape == (205,)


def test_bundle_3c90_pipeline(rng):
    t = np.arange(1000) / 1000.0
    s = F.WaveformSample(b=0.1 * np.sin(2 * np.pi * t),
                         h=30 * np.sin(2 * np.pi * t - 0.3), f=2e5, temp=50.0)
    prepped = F.preprocess(s, 504, resample_to=2016)
    assert len(prepped.b) == 504
    scaler = F.scaler_fit([prepped])
    fb = F.make_bundle(s, scaler, 504, resample_to=2016)
    assert fb.seq.shape == (3, 504)


def test_bundle_drops_dbdt_channel(rng):
    samples = _training_samples(rng)
    prepped = [F.preprocess(s, 205) for s in samples]
    scaler = F.scaler_fit(prepped)
    fb = F.make_bundle(samples[0], scaler, 205, include_dbdt=False)
    assert fb.seq.shape == (2, 205)


def test_bundle_time_channel_exact(rng):
    samples = _training_samples(rng)
    prepped = [F.preprocess(s, 205) for s in samples]
    scaler = F.scaler_fit(prepped)
    fb = F.make_bundle(samples[0], scaler, 205)
    assert np.array_equal(fb.seq[2], np.arange(205) / 205)


def test_bundle_training_values_within_unit_range(rng):
    samples = _training_samples(rng)
    prepped = [F.preprocess(s, 205) for s in samples]
    scaler = F.scaler_fit(prepped)
    for s in prepped:
        fb = F.make_bundle(s, scaler, 205)
        assert fb.seq[0].min() >= -1 - 1e-9 and fb.seq[0].max() <= 1 + 1e-9
        assert fb.seq[1].min() >= -1 - 1e-9 and fb.seq[1].max() <= 1 + 1e-9
        assert np.all(np.abs(fb.scalars) <= 1 + 1e-9)
        assert fb.h_norm.min() >= -1 - 1e-9 and fb.h_norm.max() <= 1 + 1e-9
