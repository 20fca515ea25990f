"""Spherical rotary position encoding.

A geotoken at (lat, lon) is encoded by a block-diagonal matrix whose 3x3 blocks
are rotations ``Rz(lon) @ Rx(lat)``. Queries and keys are multiplied by that
matrix before the dot product, so a query/key score only sees the relative
rotation between the two positions.

Coordinate convention: the z-axis angle ``theta`` is longitude and the x-axis
angle ``phi`` is latitude.
"""

from __future__ import annotations

import enum
import math
from dataclasses import dataclass

import numpy as np

from .geo import GeoPosition


class EncodingError(ValueError):
    """Bad encoding configuration or incompatible operands."""


class Mode(str, enum.Enum):
    UNIFORM = "uniform"
    MULTIFREQ = "multifreq"
    AS_PRINTED = "as-printed"


class PadPolicy(str, enum.Enum):
    REJECT = "reject"
    ZERO = "zero"


def _check_finite(*angles: float) -> None:
    for a in angles:
        if not np.all(np.isfinite(a)):
            raise EncodingError(f"rotation angle must be finite, got {a!r}")


def euler_rotation(phi: float, psi: float, theta: float) -> np.ndarray:
    """General rotation from x/y/z Euler angles (phi about x, psi about y, theta about z).

    Equals ``Rz(theta) @ Ry(psi) @ Rx(phi)``.
    """
    _check_finite(phi, psi, theta)
    # same ufuncs as spherical_blocks so the psi=0 reduction is exact
    cf, sf = np.cos(phi), np.sin(phi)
    cp, sp = np.cos(psi), np.sin(psi)
    ct, st = np.cos(theta), np.sin(theta)
    return np.array(
        [
            [cp * ct, -cf * st + sf * sp * ct, sf * st + cf * sp * ct],
            [cp * st, cf * ct + sf * sp * st, -sf * ct + cf * sp * st],
            [-sp, sf * cp, cf * cp],
        ]
    )


def rot_x(angle: float) -> np.ndarray:
    c, s = math.cos(angle), math.sin(angle)
    return np.array([[1.0, 0.0, 0.0], [0.0, c, -s], [0.0, s, c]])


def rot_z(angle: float) -> np.ndarray:
    c, s = math.cos(angle), math.sin(angle)
    return np.array([[c, -s, 0.0], [s, c, 0.0], [0.0, 0.0, 1.0]])


def spherical_blocks(theta, phi) -> np.ndarray:
    """Vectorised rotation blocks ``Rz(theta) @ Rx(phi)``; shape ``theta.shape + (3, 3)``."""
    theta = np.asarray(theta, dtype=np.float64)
    phi = np.asarray(phi, dtype=np.float64)
    _check_finite(theta, phi)
    ct, st = np.cos(theta), np.sin(theta)
    cp, sp = np.cos(phi), np.sin(phi)
    out = np.empty(np.broadcast_shapes(theta.shape, phi.shape) + (3, 3))
    out[..., 0, 0] = ct
    out[..., 0, 1] = -cp * st
    out[..., 0, 2] = sp * st
    out[..., 1, 0] = st
    out[..., 1, 1] = cp * ct
    out[..., 1, 2] = -sp * ct
    out[..., 2, 0] = 0.0
    out[..., 2, 1] = sp
    out[..., 2, 2] = cp
    return out


def as_printed_blocks(theta, phi) -> np.ndarray:
    """Vectorised variant with the printed middle row ``[sin t, -cos p cos t, -sin p cos t]``.

    Not a rotation in general; it exists so the sign discrepancy can be measured.
    """
    out = spherical_blocks(theta, phi)
    out[..., 1, 1] = -out[..., 1, 1]
    return out


def spherical_block(theta: float, phi: float) -> np.ndarray:
    """Single 3x3 rotation for longitude angle ``theta`` and latitude angle ``phi``."""
    return spherical_blocks(theta, phi)


def as_printed_block(theta: float, phi: float) -> np.ndarray:
    return as_printed_blocks(theta, phi)


def orthogonality_defect(block) -> float:
    """``max |B^T B - I|`` over the trailing 3x3 (works on stacks too)."""
    b = np.asarray(block)
    gram = np.swapaxes(b, -1, -2) @ b
    return float(np.max(np.abs(gram - np.eye(b.shape[-1]))))


@dataclass(frozen=True)
class EncodingConfig:
    dim: int
    mode: Mode = Mode.UNIFORM
    base: float = 10000.0
    pad: PadPolicy = PadPolicy.REJECT

    def __post_init__(self):
        object.__setattr__(self, "mode", Mode(self.mode))
        object.__setattr__(self, "pad", PadPolicy(self.pad))
        if int(self.dim) != self.dim or self.dim < 1:
            raise EncodingError(f"dim must be a positive integer, got {self.dim!r}")
        if self.pad is PadPolicy.REJECT and self.dim % 3 != 0:
            raise EncodingError(
                f"dim={self.dim} is not a multiple of 3; spherical encoding needs "
                "3-wide blocks (enable zero padding to allow it)"
            )
        if self.mode is Mode.MULTIFREQ and not self.base > 1.0:
            raise EncodingError(f"multi-frequency base must be > 1, got {self.base!r}")

    @property
    def n_blocks(self) -> int:
        return -(-self.dim // 3)

    @property
    def padded_dim(self) -> int:
        return 3 * self.n_blocks


@dataclass(frozen=True)
class FrequencySchedule:
    lambdas: np.ndarray


def frequency_schedule(config: EncodingConfig) -> FrequencySchedule:
    """Per-block angle multipliers: all ones, or ``base ** (-3 (i-1) / dim)``."""
    i = np.arange(config.n_blocks, dtype=np.float64)
    if config.mode is Mode.MULTIFREQ:
        lam = config.base ** (-3.0 * i / config.dim)
    else:
        lam = np.ones_like(i)
    lam.flags.writeable = False
    return FrequencySchedule(lam)


def encoding_blocks(lat, lon, config: EncodingConfig) -> np.ndarray:
    """Blocks for arrays of raw angles: shape ``lat.shape + (n_blocks, 3, 3)``.

    Angles are used as given (no longitude wrapping), which is what the
    periodicity checks rely on.
    """
    lat = np.asarray(lat, dtype=np.float64)[..., None]
    lon = np.asarray(lon, dtype=np.float64)[..., None]
    lam = frequency_schedule(config).lambdas
    make = as_printed_blocks if config.mode is Mode.AS_PRINTED else spherical_blocks
    blocks = make(lam * lon, lam * lat)
    if config.dim % 3:
        # trailing partial block passes its coordinates through untouched
        blocks[..., -1, :, :] = np.eye(3)
    return blocks


@dataclass(frozen=True, eq=False)
class SphericalEncoding:
    """Block-diagonal encoding matrix stored as its (n_blocks, 3, 3) diagonal blocks."""

    blocks: np.ndarray
    config: EncodingConfig

    def __post_init__(self):
        b = np.array(self.blocks, dtype=np.float64)
        if b.shape != (self.config.n_blocks, 3, 3):
            raise EncodingError(
                f"expected {self.config.n_blocks} blocks of 3x3 for dim={self.config.dim}, got {b.shape}"
            )
        b.flags.writeable = False
        object.__setattr__(self, "blocks", b)

    @property
    def dim(self) -> int:
        return self.config.dim

    def __len__(self) -> int:
        return self.blocks.shape[0]

    def matrix(self) -> np.ndarray:
        """The dense ``dim x dim`` matrix (O(dim^2) memory)."""
        nb = len(self)
        m = np.zeros((nb, 3, nb, 3))
        idx = np.arange(nb)
        m[idx, :, idx, :] = self.blocks
        d = self.config.dim
        return m.reshape(3 * nb, 3 * nb)[:d, :d]


def encoding_from_angles(lat: float, lon: float, config: EncodingConfig) -> SphericalEncoding:
    return SphericalEncoding(encoding_blocks(lat, lon, config), config)


def build_encoding(pos: GeoPosition, config: EncodingConfig) -> SphericalEncoding:
    return encoding_from_angles(pos.lat, pos.lon, config)


def identity_encoding(config: EncodingConfig) -> SphericalEncoding:
    return SphericalEncoding(np.broadcast_to(np.eye(3), (config.n_blocks, 3, 3)), config)


def _check_vector(enc: SphericalEncoding, v) -> np.ndarray:
    v = np.asarray(v, dtype=np.float64)
    if v.ndim == 0 or v.shape[-1] != enc.dim:
        raise EncodingError(f"vector length {v.shape[-1] if v.ndim else 0} does not match encoding dim {enc.dim}")
    return v


def apply_dense(enc: SphericalEncoding, v) -> np.ndarray:
    """Reference path: materialise the full matrix and multiply. ``v`` may be batched (..., dim)."""
    v = _check_vector(enc, v)
    return v @ enc.matrix().T


def rotate_blocks(blocks: np.ndarray, v: np.ndarray, transpose: bool = False) -> np.ndarray:
    """Multiply each 3-wide slice of ``v`` by its block (9 multiplies, 6 adds per block).

    ``blocks`` has shape (..., nb, 3, 3) and broadcasts against ``v`` of shape
    (..., 3 * nb). With ``transpose`` the blocks act as ``B^T``.
    """
    nb = blocks.shape[-3]
    w = v.reshape(v.shape[:-1] + (nb, 3))
    if transpose:
        blocks = np.swapaxes(blocks, -1, -2)
    x, y, z = w[..., 0], w[..., 1], w[..., 2]
    out = np.empty(np.broadcast_shapes(w.shape, blocks.shape[:-1]))
    for i in range(3):
        row = blocks[..., i, :]
        np.multiply(row[..., 0], x, out=out[..., i])
        out[..., i] += row[..., 1] * y
        out[..., i] += row[..., 2] * z
    return out.reshape(out.shape[:-2] + (3 * nb,))


def pad_to(v: np.ndarray, width: int) -> np.ndarray:
    extra = width - v.shape[-1]
    if extra == 0:
        return v
    return np.concatenate([v, np.zeros(v.shape[:-1] + (extra,))], axis=-1)


def apply_blockwise(enc: SphericalEncoding, v) -> np.ndarray:
    """O(dim) path: rotate each 3-wide slice in place of the dense product."""
    v = _check_vector(enc, v)
    d = enc.dim
    return rotate_blocks(enc.blocks, pad_to(v, enc.config.padded_dim))[..., :d]


def relative_rotation(a: SphericalEncoding, b: SphericalEncoding) -> SphericalEncoding:
    """Blockwise ``a_i^T b_i``, so that ``<A q, B k> = <q, rel(a, b) k>``."""
    if a.config != b.config:
        raise EncodingError(f"encodings built with different configs: {a.config} vs {b.config}")
    return SphericalEncoding(np.swapaxes(a.blocks, -1, -2) @ b.blocks, a.config)
