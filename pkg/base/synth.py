"""
Synthetic accelerometer corpus used as the desk-scale test substrate.

Each class is a periodic movement: a sawtooth (time-asymmetric, so reversal is
detectable) plus sine harmonics plus white noise, riding on 1 g of gravity.
Static windows are gravity plus tiny noise. The generator is versioned so that
stores produced from the same SynthSpec never change.
"""
import logging
from typing import List, Tuple

import numpy as np
from pydantic import BaseModel, ConfigDict, Field, model_validator

from base.rng import make_rng
from base.signal_core import N_CHANNELS
from base.store import WindowStore
from config.settings import TARGET_RATE, WINDOW_SECONDS

logger = logging.getLogger(__name__)

SYNTH_VERSION = 1
STATIC_NOISE = 0.002
GRAVITY = np.array([0.0, 0.0, 1.0])


class ClassWaveform(BaseModel):
    model_config = ConfigDict(frozen=True, extra="forbid")

    name: str
    frequency: float = Field(gt=0)
    # amplitude (g) of the rising-ramp sawtooth at the fundamental
    sawtooth: float = Field(default=0.5, ge=0)
    # sine amplitudes (g) at 1x, 2x, ... the fundamental
    harmonics: Tuple[float, ...] = ()
    noise: float = Field(default=0.03, ge=0)
    # dominant axis of the movement
    axis: int = Field(default=0, ge=0, lt=N_CHANNELS)


DEFAULT_CLASSES = (
    ClassWaveform(name="walk", frequency=1.8, sawtooth=0.5, harmonics=(0.15, 0.05), noise=0.03, axis=0),
    ClassWaveform(name="run", frequency=2.7, sawtooth=0.9, harmonics=(0.2,), noise=0.05, axis=2),
    ClassWaveform(name="cycle", frequency=1.2, sawtooth=0.3, harmonics=(0.35, 0.0, 0.1), noise=0.03, axis=1),
)


class SynthSpec(BaseModel):
    model_config = ConfigDict(frozen=True, extra="forbid")

    version: int = SYNTH_VERSION
    n_subjects: int = Field(default=20, ge=1)
    days_per_subject: int = Field(default=2, ge=1)
    windows_per_day: int = Field(default=128, ge=1)
    classes: Tuple[ClassWaveform, ...] = DEFAULT_CLASSES
    static_fraction: float = Field(default=0.0, ge=0.0, lt=1.0)
    # std of the per-subject multiplicative gain on the movement component
    gain_jitter: float = Field(default=0.1, ge=0.0, lt=0.5)
    labelled: bool = True
    rate: int = TARGET_RATE
    duration: int = WINDOW_SECONDS
    seed: int = 0

    @model_validator(mode="after")
    def _check(self):
        if self.version != SYNTH_VERSION:
            raise ValueError(f"unsupported synth version {self.version}; this build generates version {SYNTH_VERSION}")
        if not self.classes:
            raise ValueError("at least one class waveform is required")
        if not any(c.sawtooth > 0 for c in self.classes):
            raise ValueError(
                "every class waveform is time-symmetric (sawtooth=0); the arrow-of-time task "
                "cannot be learned, give at least one class a nonzero sawtooth component"
            )
        return self

    @property
    def static_label(self) -> int:
        return len(self.classes)

    @property
    def window_length(self) -> int:
        return self.rate * self.duration


def sawtooth(phase: np.ndarray) -> np.ndarray:
    """Rising ramp in [-1, 1) with a sharp drop at every whole cycle"""
    return 2.0 * (phase - np.floor(phase)) - 1.0


def _movement(wave: ClassWaveform, t: np.ndarray, gain: float, rng: np.random.Generator) -> np.ndarray:
    # +-5% tempo and a random phase per window
    f = wave.frequency * (1.0 + 0.05 * (2.0 * rng.random() - 1.0))
    phase = f * t + rng.random()
    signal = wave.sawtooth * sawtooth(phase)
    for k, amplitude in enumerate(wave.harmonics, start=1):
        signal = signal + amplitude * np.sin(2.0 * np.pi * k * phase)
    weights = np.full(N_CHANNELS, 0.3)
    weights[wave.axis] = 1.0
    motion = gain * weights[:, None] * signal[None, :]
    return motion + wave.noise * rng.standard_normal((N_CHANNELS, t.size))


def _day(spec: SynthSpec, gain: float, rng: np.random.Generator) -> Tuple[np.ndarray, List[int]]:
    T = spec.window_length
    t = np.arange(T) / spec.rate
    n_static = int(round(spec.static_fraction * spec.windows_per_day))
    is_static = np.zeros(spec.windows_per_day, dtype=bool)
    is_static[rng.permutation(spec.windows_per_day)[:n_static]] = True

    windows = np.empty((spec.windows_per_day, N_CHANNELS, T))
    labels = []
    for i in range(spec.windows_per_day):
        if is_static[i]:
            windows[i] = GRAVITY[:, None] + STATIC_NOISE * rng.standard_normal((N_CHANNELS, T))
            labels.append(spec.static_label)
        else:
            c = int(rng.integers(len(spec.classes)))
            windows[i] = GRAVITY[:, None] + _movement(spec.classes[c], t, gain, rng)
            labels.append(c)
    return windows, labels


def generate(spec: SynthSpec) -> WindowStore:
    """Deterministic store for a spec; one RNG stream per subject"""
    windows, subjects, days, labels = [], [], [], []
    for s in range(spec.n_subjects):
        subject = f"S{s:03d}"
        rng = make_rng(spec.seed, f"synth/v{spec.version}/{subject}")
        gain = float(np.clip(1.0 + spec.gain_jitter * rng.standard_normal(), 0.5, 1.5))
        for d in range(spec.days_per_subject):
            day_windows, day_labels = _day(spec, gain, rng)
            windows.append(day_windows)
            subjects.extend([subject] * len(day_labels))
            days.extend([d] * len(day_labels))
            labels.extend(day_labels)

    store = WindowStore.build(
        np.concatenate(windows).astype(np.float32), subjects, days,
        labels if spec.labelled else None, rate=spec.rate,
    )
    logger.info(
        f"Synthetic store v{spec.version}: {len(store)} windows, {spec.n_subjects} subjects, "
        f"static fraction {spec.static_fraction:.2f}"
    )
    return store
