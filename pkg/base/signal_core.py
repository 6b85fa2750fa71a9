"""
Signal core - canonical accelerometer types, resampling, windowing, intensity
"""
import logging
from dataclasses import dataclass, field
from typing import List, Optional

import numpy as np

from base.errors import SignalError
from config.settings import TARGET_RATE, WINDOW_SECONDS

logger = logging.getLogger(__name__)

N_CHANNELS = 3
CHANNEL_NAMES = ("x", "y", "z")


def _check_finite(samples: np.ndarray, what: str):
    bad = ~np.isfinite(samples)
    if bad.any():
        channel, timestep = np.argwhere(bad)[0]
        raise SignalError(
            f"{what}: non-finite value at channel {CHANNEL_NAMES[channel]} "
            f"(index {channel}), timestep {timestep}"
        )


@dataclass(frozen=True)
class SignalWindow:
    """Fixed-length tri-axial window, channels x timesteps, units of g"""
    samples: np.ndarray
    rate: int = TARGET_RATE
    duration: int = WINDOW_SECONDS

    def __post_init__(self):
        samples = np.asarray(self.samples)
        if samples.ndim != 2 or samples.shape[0] != N_CHANNELS:
            raise SignalError(f"SignalWindow needs shape (3, T), got {samples.shape}")
        if samples.shape[1] != self.rate * self.duration:
            raise SignalError(
                f"SignalWindow length {samples.shape[1]} != rate {self.rate} x duration {self.duration}"
            )
        _check_finite(samples, "SignalWindow")
        object.__setattr__(self, "samples", samples)

    @property
    def length(self) -> int:
        return self.samples.shape[1]

    def with_samples(self, samples: np.ndarray) -> "SignalWindow":
        return SignalWindow(samples, rate=self.rate, duration=self.duration)


@dataclass(frozen=True)
class RawRecording:
    """Variable-length recording of one subject-day"""
    samples: np.ndarray
    rate: float
    subject_id: str = ""
    day_index: int = 0
    labels: Optional[np.ndarray] = field(default=None, compare=False)

    def __post_init__(self):
        samples = np.asarray(self.samples)
        if samples.ndim != 2 or samples.shape[0] != N_CHANNELS:
            raise SignalError(f"RawRecording needs shape (3, N), got {samples.shape}")
        if samples.shape[1] < 2:
            raise SignalError(f"RawRecording needs at least 2 samples, got {samples.shape[1]}")
        if not self.rate > 0:
            raise SignalError(f"RawRecording rate must be positive, got {self.rate}")
        if self.day_index < 0:
            raise SignalError(f"day_index must be >= 0, got {self.day_index}")
        _check_finite(samples, f"RawRecording {self.subject_id!r} day {self.day_index}")
        object.__setattr__(self, "samples", samples)
        if self.labels is not None and len(self.labels) != samples.shape[1]:
            raise SignalError(
                f"RawRecording has {samples.shape[1]} samples but {len(self.labels)} labels"
            )

    @property
    def length(self) -> int:
        return self.samples.shape[1]


@dataclass(frozen=True)
class WindowRecord:
    window: SignalWindow
    subject_id: str
    day_index: int
    label: Optional[int] = None
    intensity: float = 0.0

    def __post_init__(self):
        if not self.intensity >= 0:
            raise SignalError(f"intensity must be >= 0, got {self.intensity}")


# =====================================================
# RESAMPLING
# =====================================================
def resample_linear(rec: RawRecording, target_rate: float) -> RawRecording:
    """
    Linearly resample a recording onto a uniform grid spanning the source duration.

    The first and last output samples coincide with the first and last source
    samples, so a ramp keeps its endpoints.

    Labels, when present, follow the nearest source sample.
    """
    if not target_rate > 0:
        raise SignalError(f"target_rate must be positive, got {target_rate}")
    _check_finite(rec.samples, f"resample_linear input {rec.subject_id!r}")

    if target_rate == rec.rate:
        return RawRecording(
            rec.samples.copy(), rec.rate, rec.subject_id, rec.day_index,
            None if rec.labels is None else rec.labels.copy(),
        )

    n_in = rec.length
    n_out = int(round(n_in * target_rate / rec.rate))
    if n_out < 2:
        raise SignalError(
            f"Resampling {n_in} samples from {rec.rate} Hz to {target_rate} Hz leaves {n_out} samples"
        )
    t_in = np.arange(n_in) / rec.rate
    t_out = np.linspace(0.0, t_in[-1], n_out)
    out = np.empty((N_CHANNELS, n_out))
    for c in range(N_CHANNELS):
        out[c] = np.interp(t_out, t_in, rec.samples[c])
    if rec.samples.dtype.kind == "f":
        out = out.astype(rec.samples.dtype, copy=False)

    labels = None
    if rec.labels is not None:
        nearest = np.clip(np.rint(t_out * rec.rate).astype(np.int64), 0, n_in - 1)
        labels = np.asarray(rec.labels)[nearest]

    return RawRecording(out, target_rate, rec.subject_id, rec.day_index, labels)


# =====================================================
# WINDOWING
# =====================================================
def window_length(rate: float, duration_s: float) -> int:
    length = rate * duration_s
    if abs(length - round(length)) > 1e-9:
        raise SignalError(f"rate {rate} x duration {duration_s} is not an integer number of samples")
    return int(round(length))


def segment_windows(rec: RawRecording, duration_s: int = WINDOW_SECONDS) -> List[SignalWindow]:
    """Non-overlapping consecutive windows; a trailing partial window is dropped"""
    length = window_length(rec.rate, duration_s)
    count = rec.length // length
    rate = int(round(rec.rate))
    windows = [
        SignalWindow(rec.samples[:, i * length:(i + 1) * length].copy(), rate=rate, duration=duration_s)
        for i in range(count)
    ]
    dropped = rec.length - count * length
    if dropped:
        logger.debug(f"segment_windows: dropped {dropped} trailing samples of {rec.subject_id!r}")
    return windows


def segment_labels(rec: RawRecording, duration_s: int = WINDOW_SECONDS) -> List[int]:
    """Majority label per window, ties to the smallest class id"""
    if rec.labels is None:
        raise SignalError(f"Recording {rec.subject_id!r} carries no labels")
    length = window_length(rec.rate, duration_s)
    count = rec.length // length
    labels = np.asarray(rec.labels, dtype=np.int64)
    result = []
    for i in range(count):
        chunk = labels[i * length:(i + 1) * length]
        values, counts = np.unique(chunk, return_counts=True)
        result.append(int(values[np.argmax(counts)]))
    return result


# =====================================================
# INTENSITY
# =====================================================
def euclidean_norm(w: SignalWindow) -> np.ndarray:
    return np.sqrt(np.sum(np.square(w.samples, dtype=np.float64), axis=0))


def window_intensity(w: SignalWindow) -> float:
    """Population standard deviation of the acceleration norm"""
    return float(np.std(euclidean_norm(w)))


def batch_intensity(windows: np.ndarray) -> np.ndarray:
    """window_intensity over an (n, 3, T) array"""
    norms = np.sqrt(np.sum(np.square(windows, dtype=np.float64), axis=1))
    return norms.std(axis=1)
