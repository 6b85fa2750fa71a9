"""
Pretext transformations (arrow of time, permutation, time warp) and
orientation augmentation.

All functions are pure given an explicit numpy Generator.
"""
import logging
from dataclasses import dataclass
from typing import Iterable, Optional, Tuple

import numpy as np
from pydantic import BaseModel, ConfigDict, Field, field_validator
from scipy.interpolate import CubicSpline
from scipy.spatial.transform import Rotation

from base.errors import TransformConfigError
from base.signal_core import SignalWindow

logger = logging.getLogger(__name__)

TASKS = ("aot", "permutation", "time_warp")
SPEED_MIN = 0.2
SPEED_MAX = 2.0


class TransformConfig(BaseModel):
    model_config = ConfigDict(extra="forbid", frozen=True)

    n_chunks: int = Field(4, ge=1)
    min_chunk_len: int = Field(10, ge=1)
    tw_knots: int = Field(4, ge=1)
    tw_sigma: float = 0.2
    apply_prob: float = Field(0.5, ge=0.0, le=1.0)

    @field_validator("tw_sigma")
    @classmethod
    def _sigma_range(cls, v: float) -> float:
        if not 0.0 < v <= 0.5:
            raise ValueError(f"tw_sigma must lie in (0, 0.5], got {v}")
        return v

    def validate_for(self, length: int):
        if self.n_chunks < 2:
            raise TransformConfigError(
                f"n_chunks={self.n_chunks}: a non-identity chunk order needs at least 2 chunks"
            )
        if self.n_chunks * self.min_chunk_len > length:
            raise TransformConfigError(
                f"{self.n_chunks} chunks of at least {self.min_chunk_len} samples do not fit in {length}"
            )


@dataclass(frozen=True)
class PretextLabel:
    aot_applied: bool = False
    permutation_applied: bool = False
    tw_applied: bool = False

    def as_tuple(self) -> Tuple[int, int, int]:
        return int(self.aot_applied), int(self.permutation_applied), int(self.tw_applied)

    def for_task(self, task: str) -> bool:
        return bool(self.as_tuple()[TASKS.index(task)])

    @property
    def raw(self) -> bool:
        return not any(self.as_tuple())


# =====================================================
# ARROW OF TIME
# =====================================================
def reverse_time(w: SignalWindow) -> SignalWindow:
    return w.with_samples(w.samples[:, ::-1].copy())


# =====================================================
# PERMUTATION
# =====================================================
def sample_chunk_lengths(length: int, cfg: TransformConfig, rng: np.random.Generator) -> np.ndarray:
    """Uniform draw over all compositions of length into n_chunks parts >= min_chunk_len"""
    cfg.validate_for(length)
    n = cfg.n_chunks
    free = length - n * cfg.min_chunk_len
    # stars and bars: n-1 bars among free + n-1 slots
    bars = np.sort(rng.choice(free + n - 1, size=n - 1, replace=False))
    edges = np.concatenate(([-1], bars, [free + n - 1]))
    extra = np.diff(edges) - 1
    return cfg.min_chunk_len + extra


def non_identity_order(n: int, rng: np.random.Generator) -> np.ndarray:
    identity = np.arange(n)
    while True:
        order = rng.permutation(n)
        if not np.array_equal(order, identity):
            return order


def permute_chunks(w: SignalWindow, cfg: TransformConfig, rng: np.random.Generator) -> SignalWindow:
    lengths = sample_chunk_lengths(w.length, cfg, rng)
    bounds = np.concatenate(([0], np.cumsum(lengths)))
    order = non_identity_order(cfg.n_chunks, rng)
    pieces = [w.samples[:, bounds[i]:bounds[i + 1]] for i in order]
    return w.with_samples(np.concatenate(pieces, axis=1))


# =====================================================
# TIME WARP
# =====================================================
def sample_speeds(cfg: TransformConfig, rng: np.random.Generator) -> np.ndarray:
    speeds = rng.normal(loc=1.0, scale=cfg.tw_sigma, size=cfg.tw_knots + 2)
    return np.clip(speeds, SPEED_MIN, SPEED_MAX)


def warp_path(speeds: np.ndarray, length: int) -> np.ndarray:
    """
    Monotone warp path spanning [0, length-1] from speed values at uniform anchors.

    The spline-interpolated speed curve is clamped to [SPEED_MIN, SPEED_MAX]
    so the cumulative path stays strictly increasing.
    """
    anchors = np.linspace(0, length - 1, len(speeds))
    curve = CubicSpline(anchors, speeds)(np.arange(length))
    curve = np.clip(curve, SPEED_MIN, SPEED_MAX)
    cumulative = np.cumsum(curve)
    cumulative -= cumulative[0]
    path = cumulative / cumulative[-1] * (length - 1)
    path[-1] = length - 1
    return path


def warp_along(w: SignalWindow, path: np.ndarray) -> SignalWindow:
    grid = np.arange(w.length)
    out = np.empty_like(w.samples)
    for c in range(w.samples.shape[0]):
        out[c] = np.interp(path, grid, w.samples[c])
    return w.with_samples(out)


def time_warp(w: SignalWindow, cfg: TransformConfig, rng: np.random.Generator) -> SignalWindow:
    return warp_along(w, warp_path(sample_speeds(cfg, rng), w.length))


# =====================================================
# ORIENTATION AUGMENTATION
# =====================================================
def random_rotation_matrix(rng: np.random.Generator) -> np.ndarray:
    """R = P . S . Q: axis permutation, axis sign flips, uniform axis-angle rotation"""
    permutation = np.eye(3)[rng.permutation(3)]
    signs = np.diag(rng.choice([-1.0, 1.0], size=3))
    axis = rng.normal(size=3)
    axis /= np.linalg.norm(axis)
    angle = rng.uniform(0.0, 2.0 * np.pi)
    rotation = Rotation.from_rotvec(axis * angle).as_matrix()
    return permutation @ signs @ rotation


def rotate(w: SignalWindow, matrix: np.ndarray) -> SignalWindow:
    out = (matrix @ w.samples.astype(np.float64)).astype(w.samples.dtype, copy=False)
    return w.with_samples(out)


def random_rotation(w: SignalWindow, rng: np.random.Generator) -> SignalWindow:
    return rotate(w, random_rotation_matrix(rng))


# =====================================================
# PRETEXT COMPOSITION
# =====================================================
def apply_pretext(
    w: SignalWindow,
    cfg: TransformConfig,
    rng: np.random.Generator,
    tasks: Iterable[str] = TASKS,
    force: Optional[bool] = None,
) -> Tuple[SignalWindow, PretextLabel]:
    """
    Apply each active transform independently with probability apply_prob,
    in the fixed order permutation -> time warp -> reversal.

    force=True/False applies all / none of the active transforms.
    """
    active = set(tasks)
    unknown = active - set(TASKS)
    if unknown:
        raise TransformConfigError(f"unknown pretext tasks {sorted(unknown)}")
    draws = rng.random(3) < cfg.apply_prob
    if force is not None:
        draws[:] = force
    do_aot = bool(draws[0]) and "aot" in active
    do_perm = bool(draws[1]) and "permutation" in active
    do_tw = bool(draws[2]) and "time_warp" in active

    out = w
    if do_perm:
        out = permute_chunks(out, cfg, rng)
    if do_tw:
        out = time_warp(out, cfg, rng)
    if do_aot:
        out = reverse_time(out)
    return out, PretextLabel(aot_applied=do_aot, permutation_applied=do_perm, tw_applied=do_tw)
