"""
Hand-crafted window features for the random-forest baseline.
"""
import logging
from dataclasses import astuple, dataclass, fields
from typing import Iterable, Tuple

import numpy as np
import pandas as pd
from scipy import stats

from base.signal_core import SignalWindow, euclidean_norm

logger = logging.getLogger(__name__)

# Power below this fraction of the peak counts as an exact tie
_POWER_TIE_FLOOR = 1e-12


@dataclass(frozen=True)
class FeatureVector:
    x_mean: float
    x_std: float
    x_range: float
    y_mean: float
    y_std: float
    y_range: float
    z_mean: float
    z_std: float
    z_range: float
    corr_xy: float
    corr_xz: float
    corr_yz: float
    norm_mean: float
    norm_std: float
    norm_range: float
    norm_mad: float
    norm_kurtosis: float
    norm_skew: float
    dominant_freq_1: float
    dominant_freq_2: float

    def to_array(self) -> np.ndarray:
        return np.array(astuple(self), dtype=np.float64)


FEATURE_NAMES: Tuple[str, ...] = tuple(f.name for f in fields(FeatureVector))
FEATURE_COUNT = len(FEATURE_NAMES)


def _pearson(a: np.ndarray, b: np.ndarray) -> float:
    if np.ptp(a) == 0 or np.ptp(b) == 0:
        return 0.0
    r = np.corrcoef(a, b)[0, 1]
    return float(np.clip(r, -1.0, 1.0))


def _moment_shape(series: np.ndarray) -> Tuple[float, float]:
    """Fisher excess kurtosis and skew; both 0 for a constant series"""
    if np.ptp(series) == 0:
        return 0.0, 0.0
    kurtosis = stats.kurtosis(series, fisher=True, bias=True)
    skew = stats.skew(series, bias=True)
    return float(kurtosis), float(skew)


def dominant_frequencies(series: np.ndarray, rate: float) -> Tuple[float, float]:
    """
    Top two non-DC peaks of the mean-removed periodogram.

    Ties are broken toward the lower frequency, so a flat spectrum yields the
    first two non-DC bins.
    """
    series = np.asarray(series, dtype=np.float64)
    if series.size < 4:
        raise ValueError(f"dominant_frequencies needs at least 4 samples, got {series.size}")
    if np.ptp(series) == 0:
        centred = np.zeros_like(series)
    else:
        centred = series - series.mean()
    power = np.abs(np.fft.rfft(centred)) ** 2
    freqs = np.fft.rfftfreq(series.size, d=1.0 / rate)
    power, freqs = power[1:], freqs[1:]
    peak = power.max()
    if peak > 0:
        power = np.where(power <= peak * _POWER_TIE_FLOOR, 0.0, power)
    order = np.argsort(-power, kind="stable")
    return float(freqs[order[0]]), float(freqs[order[1]])


def extract_features(w: SignalWindow) -> FeatureVector:
    samples = w.samples.astype(np.float64)
    x, y, z = samples
    norm = euclidean_norm(w)
    kurtosis, skew = _moment_shape(norm)
    f1, f2 = dominant_frequencies(norm, w.rate)
    return FeatureVector(
        x_mean=float(x.mean()), x_std=float(x.std()), x_range=float(np.ptp(x)),
        y_mean=float(y.mean()), y_std=float(y.std()), y_range=float(np.ptp(y)),
        z_mean=float(z.mean()), z_std=float(z.std()), z_range=float(np.ptp(z)),
        corr_xy=_pearson(x, y), corr_xz=_pearson(x, z), corr_yz=_pearson(y, z),
        norm_mean=float(norm.mean()),
        norm_std=float(norm.std()),
        norm_range=float(np.ptp(norm)),
        norm_mad=float(stats.median_abs_deviation(norm, scale=1.0)),
        norm_kurtosis=kurtosis,
        norm_skew=skew,
        dominant_freq_1=f1,
        dominant_freq_2=f2,
    )


def feature_matrix(windows: Iterable[SignalWindow]) -> np.ndarray:
    rows = [extract_features(w).to_array() for w in windows]
    if not rows:
        return np.zeros((0, FEATURE_COUNT))
    return np.vstack(rows)


def features_frame(windows: Iterable[SignalWindow]) -> pd.DataFrame:
    """Feature matrix with the documented 20-column header"""
    return pd.DataFrame(feature_matrix(windows), columns=list(FEATURE_NAMES))
