"""Fixed scalar quantization grids and mixed-radix token packing.

Each dimension j is quantized onto L_j uniformly spaced points covering
[-1, 1], i.e. the grid {2*i/(L-1) - 1 : i = 0..L-1}; an L=2 grid is exactly
{-1, +1}. Inputs are hard-clamped to [-1, 1] and snapped to the nearest grid
point, with exact midpoints rounding toward the higher code. Per-dimension
codes pack into one composite index per stage in mixed radix with dimension 0
least significant, so the emotion sub-index is a modulus and the acoustic
sub-index a quotient of the same token.
"""

import math
from dataclasses import dataclass, field

import numpy as np

from .errors import NonFiniteDataError, ShapeMismatchError, ValidationError

# Largest code space packable into int64 arrays.
_MAX_PACKABLE = 1 << 62


@dataclass(frozen=True)
class LevelSpec:
    """Per-dimension level counts plus the emotion/acoustic dimension split.

    Parameters
    ----------
    levels : sequence of int
        Level count L_j >= 2 for each quantized dimension.
    emotion_dims : int
        Number of leading dimensions belonging to the emotion partition.
    """

    levels: tuple = ()
    emotion_dims: int = 0
    codes_per_stage: int = field(init=False)
    bits_per_stage: float = field(init=False)

    def __post_init__(self):
        levels = tuple(int(v) for v in self.levels)
        object.__setattr__(self, "levels", levels)
        if len(levels) == 0:
            raise ValidationError("levels must be nonempty")
        if any(v < 2 for v in levels):
            raise ValidationError(f"every level count must be >= 2, got {levels}")
        if not 0 <= self.emotion_dims <= len(levels):
            raise ValidationError(
                f"emotion_dims must be in [0, {len(levels)}], got {self.emotion_dims}"
            )
        codes = 1
        for v in levels:
            codes *= v
        object.__setattr__(self, "codes_per_stage", codes)
        object.__setattr__(self, "bits_per_stage", math.log2(codes))
        if codes > _MAX_PACKABLE:
            raise ValidationError("code space too large to pack into 64-bit indices")

    def __len__(self):
        return len(self.levels)

    @property
    def emotion_codes(self) -> int:
        """Size of the emotion sub-index space (product of leading levels)."""
        codes = 1
        for v in self.levels[: self.emotion_dims]:
            codes *= v
        return codes

    @property
    def acoustic_codes(self) -> int:
        codes = 1
        for v in self.levels[self.emotion_dims:]:
            codes *= v
        return codes

    def place_values(self) -> np.ndarray:
        """Mixed-radix place value of each dimension (dim 0 least significant)."""
        out = np.empty(len(self.levels), dtype=np.int64)
        acc = 1
        for j, v in enumerate(self.levels):
            out[j] = acc
            acc *= v
        return out


def quantize_dim(x: float, levels: int):
    """Quantize one scalar onto an L-point grid.

    Returns
    -------
    (code, value) : (int, float)
        ``code`` in [0, L-1] and ``value`` the grid point 2*code/(L-1) - 1,
        the nearest grid point to clamp(x, -1, 1) (midpoints round up).
    """
    if levels < 2:
        raise ValidationError(f"level count must be >= 2, got {levels}")
    if not math.isfinite(x):
        raise NonFiniteDataError(f"cannot quantize non-finite value {x!r}")
    clamped = min(max(float(x), -1.0), 1.0)
    scaled = (clamped + 1.0) * (levels - 1) / 2.0
    code = int(math.floor(scaled + 0.5))
    code = min(max(code, 0), levels - 1)
    return code, 2.0 * code / (levels - 1) - 1.0


def _check_last_axis(arr: np.ndarray, spec: LevelSpec, what: str):
    if arr.shape[-1] != len(spec):
        raise ShapeMismatchError(
            f"{what} has {arr.shape[-1]} dims on the last axis, spec declares {len(spec)}"
        )


def quantize_vector(z, spec: LevelSpec):
    """Element-wise quantization along the last axis.

    Accepts a length-f vector or any (..., f) array; returns (codes, values)
    of the same shape.
    """
    z = np.asarray(z, dtype=np.float64)
    _check_last_axis(z, spec, "input")
    if not np.all(np.isfinite(z)):
        raise NonFiniteDataError("cannot quantize non-finite values")
    levels = np.asarray(spec.levels, dtype=np.float64)
    clamped = np.clip(z, -1.0, 1.0)
    scaled = (clamped + 1.0) * (levels - 1.0) / 2.0
    codes = np.floor(scaled + 0.5).astype(np.int64)
    np.clip(codes, 0, np.asarray(spec.levels, dtype=np.int64) - 1, out=codes)
    return codes, codes_to_values(codes, spec)


def codes_to_values(codes, spec: LevelSpec) -> np.ndarray:
    """Map integer codes to their grid values 2*code/(L-1) - 1."""
    codes = np.asarray(codes, dtype=np.int64)
    _check_last_axis(codes, spec, "codes")
    levels = np.asarray(spec.levels, dtype=np.int64)
    if np.any(codes < 0) or np.any(codes >= levels):
        raise ValidationError("code out of range for its level count")
    return 2.0 * codes / (levels.astype(np.float64) - 1.0) - 1.0


def pack_index(codes, spec: LevelSpec):
    """Pack per-dimension codes into one composite mixed-radix index.

    Dimension 0 is the least significant digit, so
    ``index % spec.emotion_codes`` recovers the emotion sub-index and
    ``index // spec.emotion_codes`` the acoustic sub-index.
    """
    codes = np.asarray(codes, dtype=np.int64)
    _check_last_axis(codes, spec, "codes")
    levels = np.asarray(spec.levels, dtype=np.int64)
    if np.any(codes < 0) or np.any(codes >= levels):
        raise ValidationError("code out of range for its level count")
    packed = codes @ spec.place_values()
    if codes.ndim == 1:
        return int(packed)
    return packed


def unpack_index(index, spec: LevelSpec):
    """Invert :func:`pack_index`; returns per-dimension codes."""
    arr = np.asarray(index, dtype=np.int64)
    if np.any(arr < 0) or np.any(arr >= spec.codes_per_stage):
        raise ValidationError(
            f"composite index out of range [0, {spec.codes_per_stage})"
        )
    out = np.empty(arr.shape + (len(spec),), dtype=np.int64)
    rem = arr.copy()
    for j, v in enumerate(spec.levels):
        out[..., j] = rem % v
        rem //= v
    return out


def split_index(index, spec: LevelSpec):
    """Split composite indices into (emotion, acoustic) sub-indices."""
    arr = np.asarray(index, dtype=np.int64)
    if np.any(arr < 0) or np.any(arr >= spec.codes_per_stage):
        raise ValidationError(
            f"composite index out of range [0, {spec.codes_per_stage})"
        )
    base = spec.emotion_codes
    return arr % base, arr // base
