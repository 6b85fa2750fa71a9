"""
Continuous wavelet transform with the analytic Morlet wavelet.
"""
import logging
from dataclasses import dataclass
from typing import Tuple

import numpy as np
import pandas as pd

logger = logging.getLogger(__name__)

MIN_FREQUENCY = 0.5


@dataclass(frozen=True, eq=False)
class Scalogram:
    # (n_scales, T), |CWT|
    magnitudes: np.ndarray
    scales: np.ndarray
    # Hz, descending as scale grows
    frequencies: np.ndarray
    omega0: float = 6.0

    def to_frame(self) -> pd.DataFrame:
        n_scales, T = self.magnitudes.shape
        return pd.DataFrame({
            "t": np.tile(np.arange(T), n_scales),
            "scale": np.repeat(np.arange(n_scales), T),
            "frequency": np.repeat(self.frequencies, T),
            "value": self.magnitudes.reshape(-1),
        })


def fourier_factor(omega0: float) -> float:
    """Frequency x scale product of the Morlet wavelet"""
    return (omega0 + np.sqrt(2.0 + omega0**2)) / (4.0 * np.pi)


def scale_to_frequency(scales: np.ndarray, omega0: float = 6.0) -> np.ndarray:
    return fourier_factor(omega0) / np.asarray(scales, dtype=np.float64)


def cwt_coefficients(
    series: np.ndarray, rate: float, n_scales: int = 48, omega0: float = 6.0
) -> Tuple[np.ndarray, np.ndarray]:
    """
    Complex CWT coefficients (n_scales, T) and their scales, log-spaced over [0.5 Hz, rate/2].

    The convolution is a product in the frequency domain after zero-padding to
    the next power of two, so the coefficients are linear in the series.
    """
    x = np.asarray(series, dtype=np.float64)
    if x.ndim != 1 or x.size < 8:
        raise ValueError(f"cwt_morlet needs a 1D series of at least 8 samples, got shape {x.shape}")
    if n_scales < 1:
        raise ValueError(f"n_scales must be >= 1, got {n_scales}")
    dt = 1.0 / rate
    T = x.size

    factor = fourier_factor(omega0)
    scales = np.geomspace(factor / (rate / 2.0), factor / MIN_FREQUENCY, n_scales)

    N = int(2 ** np.ceil(np.log2(T)))
    x_hat = np.fft.fft(np.concatenate([x, np.zeros(N - T)]))
    omega = 2.0 * np.pi * np.fft.fftfreq(N, d=dt)

    coefficients = np.empty((n_scales, T), dtype=np.complex128)
    for i, s in enumerate(scales):
        psi_hat = np.pi**-0.25 * np.exp(-0.5 * (s * omega - omega0) ** 2) * (omega > 0)
        psi_hat *= np.sqrt(2.0 * np.pi * s / dt)
        coefficients[i] = np.fft.ifft(x_hat * psi_hat)[:T]
    return coefficients, scales


def cwt_morlet(series: np.ndarray, rate: float, n_scales: int = 48, omega0: float = 6.0) -> Scalogram:
    """|CWT| of a series; see cwt_coefficients"""
    coefficients, scales = cwt_coefficients(series, rate, n_scales, omega0)
    factor = fourier_factor(omega0)
    return Scalogram(magnitudes=np.abs(coefficients), scales=scales, frequencies=factor / scales, omega0=omega0)
