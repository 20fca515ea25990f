"""Sequence-index baselines: additive sinusoidal encoding and 2-D rotary encoding."""

from __future__ import annotations

import enum
from dataclasses import dataclass

import numpy as np


class BaselineError(ValueError):
    pass


class RopeVariant(str, enum.Enum):
    # theta_i = base ** (-(2i - 1) / dim), the default here
    PRINTED = "printed"
    # theta_i = base ** (-2 (i - 1) / dim), as in the original RoFormer code
    CANONICAL = "canonical"


def _check_even(dim: int) -> None:
    if dim < 2 or dim % 2:
        raise BaselineError(f"dim must be a positive even integer, got {dim}")


def sinusoidal_encoding(m: float, dim: int, base: float = 10000.0) -> np.ndarray:
    """Absolute encoding of position ``m``: sin at even slots, cos at odd slots.

    Slot pair ``(2t, 2t+1)`` uses angle ``m / base ** (2t / dim)``.
    """
    _check_even(dim)
    if m < 0:
        raise BaselineError(f"position must be non-negative, got {m}")
    t = np.arange(dim // 2, dtype=np.float64)
    angle = m / base ** (2.0 * t / dim)
    out = np.empty(dim)
    out[0::2] = np.sin(angle)
    out[1::2] = np.cos(angle)
    return out


@dataclass(frozen=True, eq=False)
class SinusoidalTable:
    dim: int
    max_positions: int
    values: np.ndarray


def sinusoidal_table(max_positions: int, dim: int, base: float = 10000.0) -> SinusoidalTable:
    if max_positions < 1:
        raise BaselineError(f"max_positions must be >= 1, got {max_positions}")
    _check_even(dim)
    m = np.arange(max_positions, dtype=np.float64)[:, None]
    t = np.arange(dim // 2, dtype=np.float64)
    angle = m / base ** (2.0 * t / dim)
    values = np.empty((max_positions, dim))
    values[:, 0::2] = np.sin(angle)
    values[:, 1::2] = np.cos(angle)
    values.flags.writeable = False
    return SinusoidalTable(dim, max_positions, values)


def rope_theta(i: int, dim: int, variant: RopeVariant = RopeVariant.PRINTED, base: float = 10000.0) -> float:
    """Rotation frequency of 2-D block ``i`` (1-based)."""
    _check_even(dim)
    if not 1 <= i <= dim // 2:
        raise BaselineError(f"block index {i} outside 1..{dim // 2}")
    if RopeVariant(variant) is RopeVariant.PRINTED:
        return base ** (-(2 * i - 1) / dim)
    return base ** (-2 * (i - 1) / dim)


@dataclass(frozen=True, eq=False)
class RopeSchedule:
    dim: int
    thetas: np.ndarray

    def __post_init__(self):
        _check_even(self.dim)
        th = np.array(self.thetas, dtype=np.float64)
        if th.shape != (self.dim // 2,):
            raise BaselineError(f"need {self.dim // 2} frequencies for dim={self.dim}, got {th.shape}")
        if np.any(th <= 0):
            raise BaselineError("frequencies must be positive")
        th.flags.writeable = False
        object.__setattr__(self, "thetas", th)


def rope_schedule(dim: int, variant: RopeVariant = RopeVariant.PRINTED, base: float = 10000.0) -> RopeSchedule:
    return RopeSchedule(dim, [rope_theta(i, dim, variant, base) for i in range(1, dim // 2 + 1)])


def rope_blocks(m, schedule: RopeSchedule) -> np.ndarray:
    """2x2 rotation blocks for positions ``m`` (any shape) -> ``m.shape + (dim/2, 2, 2)``."""
    angle = np.asarray(m, dtype=np.float64)[..., None] * schedule.thetas
    c, s = np.cos(angle), np.sin(angle)
    out = np.empty(angle.shape + (2, 2))
    out[..., 0, 0] = c
    out[..., 0, 1] = -s
    out[..., 1, 0] = s
    out[..., 1, 1] = c
    return out


def rotate_pairs(blocks: np.ndarray, v: np.ndarray, transpose: bool = False) -> np.ndarray:
    """Apply (..., nb, 2, 2) blocks to consecutive pairs of ``v`` (..., 2 * nb)."""
    nb = blocks.shape[-3]
    w = v.reshape(v.shape[:-1] + (nb, 2))
    x, y = w[..., 0], w[..., 1]
    c, s = blocks[..., 0, 0], blocks[..., 1, 0]
    if transpose:
        s = -s
    return np.stack([c * x - s * y, s * x + c * y], axis=-1).reshape(v.shape)


def rope_rotate(v, m: float, schedule: RopeSchedule) -> np.ndarray:
    """Rotate each pair ``(v[2i], v[2i+1])`` by ``m * theta_i``."""
    v = np.asarray(v, dtype=np.float64)
    if v.shape[-1] != schedule.dim:
        raise BaselineError(f"vector length {v.shape[-1]} does not match schedule dim {schedule.dim}")
    return rotate_pairs(rope_blocks(m, schedule), v)
