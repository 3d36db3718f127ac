"""Token stream container and bitrate accounting.

AFTK container layout (little-endian):

    bytes 0-3  magic "AFTK"
    byte  4    version (1)
    byte  5    encoded stage count K
    byte  6    emotion FSQ dims f_e
    byte  7    acoustic FSQ dims f_a
    next       f_e + f_a level counts, one byte each
    u16        frame rate in Hz
    u32        frame count T
    payload    T * K u16 composite tokens, frame-major (stage-minor)

Tokens are stored as 16-bit words, so the per-stage code space must fit in
65536 codes; the default 2^15 space leaves the top bit zero. The 1 bit
per token of container slack is file overhead, not codec bitrate --
:func:`bitrate` reports the information-theoretic figure from the level
products. Reading with ``max_stages`` keeps only the leading token columns,
which is exactly variable-bitrate decoding by stage truncation.
"""

import math
import struct
from dataclasses import dataclass, field

import numpy as np

from .errors import (
    BadMagicError,
    BadVersionError,
    PayloadShapeError,
    ShapeMismatchError,
    TokenRangeError,
    TruncatedPayloadError,
    ValidationError,
)
from .grid import LevelSpec
from .quantizer import QuantizerConfig

_MAGIC = b"AFTK"
_VERSION = 1
_PREFIX = struct.Struct("<4sBBBB")
_RATE_T = struct.Struct("<HI")
_MAX_CODES = 1 << 16


@dataclass(frozen=True)
class TokenStream:
    """Self-describing matrix of per-frame, per-stage composite indices."""

    tokens: np.ndarray   # (T, K) int64
    f_e: int
    f_a: int
    levels: tuple
    frame_rate_hz: int
    level_spec: LevelSpec = field(init=False, repr=False, compare=False)

    def __post_init__(self):
        levels = tuple(int(v) for v in self.levels)
        object.__setattr__(self, "levels", levels)
        if self.f_e < 0 or self.f_a < 0 or len(levels) != self.f_e + self.f_a:
            raise ValidationError(
                f"levels has length {len(levels)}, header declares f_e + f_a = {self.f_e + self.f_a}"
            )
        if any(not 2 <= v <= 255 for v in levels):
            raise ValidationError("level counts must fit in one byte and be >= 2")
        spec = LevelSpec(levels, emotion_dims=self.f_e)
        object.__setattr__(self, "level_spec", spec)
        if spec.codes_per_stage > _MAX_CODES:
            raise ValidationError(
                f"code space {spec.codes_per_stage} exceeds the 16-bit token container"
            )
        if not 1 <= int(self.frame_rate_hz) <= 0xFFFF:
            raise ValidationError(f"frame_rate_hz must fit in u16, got {self.frame_rate_hz}")
        object.__setattr__(self, "frame_rate_hz", int(self.frame_rate_hz))
        arr = np.asarray(self.tokens, dtype=np.int64)
        if arr.ndim != 2:
            raise ShapeMismatchError(f"tokens must be 2-D, got shape {arr.shape}")
        if not 1 <= arr.shape[1] <= 255:
            raise ValidationError(f"stage count {arr.shape[1]} must be in [1, 255]")
        if arr.size and (arr.min() < 0 or arr.max() >= spec.codes_per_stage):
            raise TokenRangeError(
                f"token outside [0, {spec.codes_per_stage}) in stream"
            )
        arr = np.ascontiguousarray(arr)
        arr.setflags(write=False)
        object.__setattr__(self, "tokens", arr)

    @property
    def frames(self) -> int:
        return self.tokens.shape[0]

    @property
    def stages(self) -> int:
        return self.tokens.shape[1]

    @classmethod
    def from_config(cls, tokens, config: QuantizerConfig) -> "TokenStream":
        return cls(
            tokens=tokens,
            f_e=config.f_e,
            f_a=config.f_a,
            levels=config.levels,
            frame_rate_hz=config.frame_rate_hz,
        )

    def matches_config(self, config: QuantizerConfig) -> bool:
        return (self.levels == config.levels
                and self.f_e == config.f_e
                and self.f_a == config.f_a)


@dataclass(frozen=True)
class BitrateReport:
    """Exact bit accounting at a given number of active stages."""

    active_stages: int
    bits_per_frame_per_stage: float
    total_kbps: float
    emotion_bits_per_frame: float
    acoustic_bits_per_frame: float
    emotion_ratio: float


def bitrate(config: QuantizerConfig, active_stages: int) -> BitrateReport:
    """Information-theoretic bitrate of the first ``active_stages`` stages.

    Bits per frame per stage is log2 of the code-space size; the partition
    split follows from the per-partition level products and is therefore
    structurally identical at every stage.
    """
    k = int(active_stages)
    if not 1 <= k <= config.K:
        raise ValidationError(f"active_stages must be in [1, {config.K}], got {k}")
    spec = config.level_spec
    bits_stage = spec.bits_per_stage
    emo_bits = math.log2(spec.emotion_codes) * k
    aco_bits = math.log2(spec.acoustic_codes) * k
    total_bps = bits_stage * k * config.frame_rate_hz
    return BitrateReport(
        active_stages=k,
        bits_per_frame_per_stage=bits_stage,
        total_kbps=total_bps / 1000.0,
        emotion_bits_per_frame=emo_bits,
        acoustic_bits_per_frame=aco_bits,
        emotion_ratio=emo_bits / (emo_bits + aco_bits),
    )


def write_tokens(stream: TokenStream, path) -> None:
    """Serialize a token stream to an AFTK container."""
    header = _PREFIX.pack(_MAGIC, _VERSION, stream.stages, stream.f_e, stream.f_a)
    header += bytes(stream.levels)
    header += _RATE_T.pack(stream.frame_rate_hz, stream.frames)
    payload = stream.tokens.astype("<u2").tobytes()
    with open(path, "wb") as fh:
        fh.write(header)
        fh.write(payload)


def read_tokens(path, max_stages=None) -> TokenStream:
    """Read an AFTK container, optionally truncated to the first stages.

    ``max_stages`` keeps only the leading token columns; the result equals
    the corresponding prefix of a full read.
    """
    with open(path, "rb") as fh:
        raw = fh.read()
    if len(raw) < _PREFIX.size:
        raise TruncatedPayloadError(f"{path}: file shorter than the fixed header")
    magic, version, k_encoded, f_e, f_a = _PREFIX.unpack_from(raw)
    if magic != _MAGIC:
        raise BadMagicError(f"{path}: expected magic {_MAGIC!r}, found {magic!r}")
    if version != _VERSION:
        raise BadVersionError(f"{path}: unsupported version {version}")
    n_dims = f_e + f_a
    offset = _PREFIX.size
    if len(raw) < offset + n_dims + _RATE_T.size:
        raise TruncatedPayloadError(f"{path}: header ends before level table")
    levels = tuple(raw[offset:offset + n_dims])
    offset += n_dims
    rate, frames = _RATE_T.unpack_from(raw, offset)
    offset += _RATE_T.size
    expected = 2 * frames * k_encoded
    body = raw[offset:]
    if len(body) < expected:
        raise TruncatedPayloadError(
            f"{path}: payload holds {len(body) // 2} tokens, header declares {frames}x{k_encoded}"
        )
    if len(body) > expected:
        raise PayloadShapeError(
            f"{path}: payload holds {len(body) // 2} tokens, header declares {frames}x{k_encoded}"
        )
    if k_encoded < 1:
        raise PayloadShapeError(f"{path}: header declares zero stages")
    tokens = np.frombuffer(body, dtype="<u2").astype(np.int64).reshape(frames, k_encoded)
    if max_stages is not None:
        k = int(max_stages)
        if not 1 <= k <= k_encoded:
            raise ValidationError(
                f"max_stages must be in [1, {k_encoded}] for this file, got {k}"
            )
        tokens = tokens[:, :k]
    return TokenStream(tokens=tokens, f_e=f_e, f_a=f_a, levels=levels, frame_rate_hz=rate)
