"""Frame-major feature matrices and their binary container.

A :class:`FeatureMatrix` is a T x D array of finite 32-bit floats, one row
per frame. It is the I/O currency of the whole package: encoder latents,
emotion features, probe targets and decoded latents all travel as feature
matrices.

AFCT container layout (all integers little-endian):

    bytes 0-3   magic "AFCT"
    byte  4     version (1)
    bytes 5-8   frame count T, u32
    bytes 9-12  feature dim D, u32
    then        T*D float32 values, row-major (frame-major)

Total size is 13 + 4*T*D bytes. Values are stored exactly as the float32
payload, so write/read round trips are bit-exact.
"""

import struct

import numpy as np

from .errors import (
    BadMagicError,
    BadVersionError,
    NonFiniteDataError,
    PayloadShapeError,
    TruncatedPayloadError,
    ValidationError,
)
from .rng import Rng

_MAGIC = b"AFCT"
_VERSION = 1
_HEADER = struct.Struct("<4sBII")


class FeatureMatrix:
    """Immutable T x D matrix of finite float32 values (row = frame)."""

    __slots__ = ("data",)

    def __init__(self, data):
        with np.errstate(over="ignore"):
            arr = np.asarray(data, dtype=np.float32)
        if arr.ndim != 2:
            raise ValidationError(f"feature matrix must be 2-D, got shape {arr.shape}")
        if arr.shape[1] < 1:
            raise ValidationError("feature dim must be >= 1")
        if not np.all(np.isfinite(arr)):
            raise NonFiniteDataError("feature matrix contains non-finite values")
        arr = np.ascontiguousarray(arr)
        arr.setflags(write=False)
        object.__setattr__(self, "data", arr)

    def __setattr__(self, name, value):
        raise AttributeError("FeatureMatrix is immutable")

    @property
    def frames(self) -> int:
        return self.data.shape[0]

    @property
    def dim(self) -> int:
        return self.data.shape[1]

    @property
    def shape(self):
        return self.data.shape

    def equals(self, other) -> bool:
        """Element-for-element equality on the stored float32 values."""
        if not isinstance(other, FeatureMatrix):
            return NotImplemented
        return self.shape == other.shape and bool(np.array_equal(self.data, other.data))

    def __repr__(self):
        return f"FeatureMatrix(frames={self.frames}, dim={self.dim})"


def as_features(x) -> FeatureMatrix:
    """Coerce an array-like into a validated FeatureMatrix."""
    if isinstance(x, FeatureMatrix):
        return x
    return FeatureMatrix(x)


def write_feature_file(m, path) -> None:
    """Write a feature matrix to an AFCT container at ``path``."""
    m = as_features(m)
    payload = np.ascontiguousarray(m.data, dtype="<f4").tobytes()
    with open(path, "wb") as fh:
        fh.write(_HEADER.pack(_MAGIC, _VERSION, m.frames, m.dim))
        fh.write(payload)


def read_feature_file(path) -> FeatureMatrix:
    """Read an AFCT container, validating magic, version, shape and finiteness."""
    with open(path, "rb") as fh:
        raw = fh.read()
    if len(raw) < _HEADER.size:
        raise TruncatedPayloadError(f"{path}: file shorter than the {_HEADER.size}-byte header")
    magic, version, frames, dim = _HEADER.unpack_from(raw)
    if magic != _MAGIC:
        raise BadMagicError(f"{path}: expected magic {_MAGIC!r}, found {magic!r}")
    if version != _VERSION:
        raise BadVersionError(f"{path}: unsupported version {version}")
    if dim < 1:
        raise PayloadShapeError(f"{path}: header declares dim {dim} < 1")
    expected = 4 * frames * dim
    body = raw[_HEADER.size:]
    if len(body) < expected:
        raise TruncatedPayloadError(
            f"{path}: payload holds {len(body) // 4} values, header declares {frames}x{dim}"
        )
    if len(body) > expected:
        raise PayloadShapeError(
            f"{path}: payload holds {len(body) // 4} values, header declares {frames}x{dim}"
        )
    values = np.frombuffer(body, dtype="<f4").reshape(frames, dim)
    if not np.all(np.isfinite(values)):
        raise NonFiniteDataError(f"{path}: stored values contain NaN or infinity")
    return FeatureMatrix(values)


def gaussian_features(rng: Rng, frames: int, dim: int, stddev: float = 1.0) -> FeatureMatrix:
    """Synthetic i.i.d. zero-mean normal features, deterministic under seed."""
    if frames < 0:
        raise ValidationError("frames must be nonnegative")
    if dim < 1:
        raise ValidationError("dim must be >= 1")
    if not stddev > 0:
        raise ValidationError(f"stddev must be > 0, got {stddev}")
    values = rng.normals(frames * dim).reshape(frames, dim) * float(stddev)
    return FeatureMatrix(values)
