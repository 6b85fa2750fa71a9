import numpy as np
import pytest

from base.wavelet import MIN_FREQUENCY, cwt_coefficients, cwt_morlet, scale_to_frequency


class TestCwtMorlet:
    def test_shape_and_frequency_range(self):
        s = cwt_morlet(np.random.default_rng(0).standard_normal(300), 30.0)
        assert s.magnitudes.shape == (48, 300)
        assert s.frequencies[0] == pytest.approx(15.0)
        assert s.frequencies[-1] == pytest.approx(MIN_FREQUENCY)
        assert (np.diff(s.frequencies) < 0).all()
        np.testing.assert_allclose(scale_to_frequency(s.scales), s.frequencies)

    @pytest.mark.parametrize("freq", [1.0, 2.0, 5.0])
    def test_tone_peaks_at_its_frequency(self, freq):
        t = np.arange(300) / 30.0
        s = cwt_morlet(np.sin(2 * np.pi * freq * t), 30.0)
        # ignore edge effects
        energy = s.magnitudes[:, 100:200].mean(axis=1)
        peak = s.frequencies[int(np.argmax(energy))]
        assert abs(peak - freq) / freq < 0.1

    def test_zero_series(self):
        s = cwt_morlet(np.zeros(64), 30.0, n_scales=8)
        assert (s.magnitudes == 0).all()

    def test_frame(self):
        frame = cwt_morlet(np.ones(300), 30.0, n_scales=4).to_frame()
        assert list(frame.columns) == ["t", "scale", "frequency", "value"]
        assert len(frame) == 4 * 300

    def test_rejects_short_or_2d(self):
        with pytest.raises(ValueError):
            cwt_morlet(np.zeros(4), 30.0)
        with pytest.raises(ValueError):
            cwt_morlet(np.zeros((3, 300)), 30.0)
        with pytest.raises(ValueError):
            cwt_morlet(np.zeros(300), 30.0, n_scales=0)


class TestCwtStructure:
    def test_coefficients_are_linear(self):
        rng = np.random.default_rng(1)
        x, y = rng.standard_normal(300), rng.standard_normal(300)
        cx, _ = cwt_coefficients(x, 30.0, n_scales=16)
        cy, _ = cwt_coefficients(y, 30.0, n_scales=16)
        cxy, _ = cwt_coefficients(2.5 * x - 0.75 * y, 30.0, n_scales=16)
        np.testing.assert_allclose(cxy, 2.5 * cx - 0.75 * cy, atol=1e-9)

    def test_magnitudes_scale_with_amplitude(self):
        x = np.random.default_rng(2).standard_normal(300)
        np.testing.assert_allclose(
            cwt_morlet(-3.0 * x, 30.0).magnitudes, 3.0 * cwt_morlet(x, 30.0).magnitudes, rtol=1e-9, atol=1e-12
        )

    @pytest.mark.parametrize("shift", [1, 20, 45])
    def test_shifted_burst_gives_shifted_scalogram(self, shift):
        t = np.arange(300)
        burst = np.exp(-(((t - 120) / 15.0) ** 2)) * np.sin(2 * np.pi * 3.0 * t / 30.0)
        moved = np.zeros(300)
        moved[shift:] = burst[: 300 - shift]
        a = cwt_morlet(burst, 30.0).magnitudes
        b = cwt_morlet(moved, 30.0).magnitudes
        # edge columns excluded
        np.testing.assert_allclose(b[:, shift + 20:280], a[:, 20:280 - shift], atol=1e-9)
