import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from base.errors import SignalError
from base.signal_core import (
    RawRecording,
    SignalWindow,
    WindowRecord,
    batch_intensity,
    euclidean_norm,
    resample_linear,
    segment_labels,
    segment_windows,
    window_intensity,
    window_length,
)


class TestSignalWindow:
    def test_rejects_wrong_channel_count(self):
        with pytest.raises(SignalError, match=r"\(3, T\)"):
            SignalWindow(np.zeros((2, 300)))

    def test_rejects_length_mismatch(self):
        with pytest.raises(SignalError, match="rate 30"):
            SignalWindow(np.zeros((3, 299)))

    def test_non_finite_names_channel_and_timestep(self):
        samples = np.zeros((3, 300))
        samples[1, 5] = np.nan
        with pytest.raises(SignalError, match="channel y .*timestep 5"):
            SignalWindow(samples)

    def test_negative_intensity_rejected(self):
        with pytest.raises(SignalError):
            WindowRecord(SignalWindow(np.zeros((3, 300))), "s", 0, intensity=-1.0)


class TestResample:
    def test_sixty_seconds_at_100hz_gives_six_windows(self):
        rng = np.random.default_rng(0)
        rec = RawRecording(rng.standard_normal((3, 6000)), 100.0)
        out = resample_linear(rec, 30)
        assert out.length == 1800
        assert len(segment_windows(out, 10)) == 6

    def test_linear_signal_is_reproduced(self):
        t = np.arange(1000) / 50.0
        rec = RawRecording(np.stack([t, 2 * t, -t]), 50.0)
        out = resample_linear(rec, 30)
        t_out = np.linspace(0.0, t[-1], out.length)
        np.testing.assert_allclose(out.samples[0], t_out, atol=1e-12)
        np.testing.assert_allclose(out.samples[1], 2 * t_out, atol=1e-12)

    def test_ramp_keeps_its_endpoints(self):
        ramp = np.linspace(0.0, 1.0, 101)
        out = resample_linear(RawRecording(np.stack([ramp, ramp, ramp]), 100.0), 30.0)
        assert out.length == 30
        assert out.samples[0, 0] == 0.0
        assert out.samples[0, -1] == pytest.approx(1.0, abs=1e-12)
        assert np.max(np.abs(out.samples[0] - np.linspace(0.0, 1.0, 30))) < 1e-6

    def test_same_rate_is_a_copy(self):
        samples = np.ones((3, 10))
        out = resample_linear(RawRecording(samples, 30.0), 30.0)
        np.testing.assert_array_equal(out.samples, samples)
        assert out.samples is not samples

    def test_labels_follow_nearest_sample(self):
        labels = np.array([0] * 50 + [1] * 50)
        out = resample_linear(RawRecording(np.zeros((3, 100)), 100.0, labels=labels), 10.0)
        assert out.labels.tolist() == [0] * 5 + [1] * 5

    def test_non_positive_rate_rejected(self):
        with pytest.raises(SignalError):
            resample_linear(RawRecording(np.zeros((3, 10)), 30.0), 0)


class TestSegmentation:
    def test_window_length_must_be_integral(self):
        assert window_length(30, 10) == 300
        with pytest.raises(SignalError):
            window_length(12.5, 0.3)

    def test_trailing_partial_window_dropped(self):
        rec = RawRecording(np.zeros((3, 650)), 30.0)
        windows = segment_windows(rec, 10)
        assert len(windows) == 2
        assert all(w.length == 300 for w in windows)

    def test_majority_label_ties_to_smallest(self):
        labels = np.array([2] * 150 + [1] * 150 + [3] * 200 + [1] * 100)
        rec = RawRecording(np.zeros((3, 600)), 30.0, labels=labels)
        assert segment_labels(rec, 10) == [1, 3]

    def test_segment_labels_needs_labels(self):
        with pytest.raises(SignalError, match="no labels"):
            segment_labels(RawRecording(np.zeros((3, 300)), 30.0))


class TestIntensity:
    def test_constant_vector_has_zero_intensity(self):
        w = SignalWindow(np.tile(np.array([[0.0], [0.6], [0.8]]), (1, 300)))
        np.testing.assert_allclose(euclidean_norm(w), 1.0)
        assert window_intensity(w) == pytest.approx(0.0, abs=1e-12)

    @settings(max_examples=25, deadline=None)
    @given(st.integers(0, 2**31 - 1))
    def test_batch_matches_single(self, seed):
        rng = np.random.default_rng(seed)
        windows = rng.standard_normal((4, 3, 300))
        expected = [window_intensity(SignalWindow(w)) for w in windows]
        np.testing.assert_allclose(batch_intensity(windows), expected, rtol=1e-12)
        assert (batch_intensity(windows) >= 0).all()
