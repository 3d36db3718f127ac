import struct

import numpy as np
import pytest

from blockfsq import (
    BadMagicError,
    BadVersionError,
    PayloadShapeError,
    QuantizerConfig,
    TokenRangeError,
    TokenStream,
    TruncatedPayloadError,
    ValidationError,
    bitrate,
    read_tokens,
    write_tokens,
)


def default_stream(frames=10, stages=8, seed=0):
    config = QuantizerConfig()
    rng = np.random.default_rng(seed)
    tokens = rng.integers(0, config.level_spec.codes_per_stage, size=(frames, stages))
    return TokenStream.from_config(tokens, config), config


class TestBitrate:
    def test_flagship_table(self):
        config = QuantizerConfig()
        expected = {
            2: (1.5, 6.0, 24.0, 0.20),
            4: (3.0, 12.0, 48.0, 0.20),
            8: (6.0, 24.0, 96.0, 0.20),
        }
        for stages, (kbps, emo, aco, ratio) in expected.items():
            report = bitrate(config, stages)
            assert report.total_kbps == kbps
            assert report.emotion_bits_per_frame == emo
            assert report.acoustic_bits_per_frame == aco
            assert report.emotion_ratio == pytest.approx(ratio, abs=1e-12)
            assert report.bits_per_frame_per_stage == 15.0

    def test_tiny_config_by_formula(self):
        config = QuantizerConfig(K=1, d_e=1, d_a=1, f_e=1, f_a=1, levels=(2, 2),
                                 frame_rate_hz=1)
        report = bitrate(config, 1)
        assert report.total_kbps == pytest.approx(0.002)  # 2 bps
        assert report.emotion_bits_per_frame == 1.0
        assert report.acoustic_bits_per_frame == 1.0
        assert report.emotion_ratio == 0.5

    def test_linear_in_stage_count(self):
        config = QuantizerConfig()
        one = bitrate(config, 1)
        for k in range(2, 9):
            report = bitrate(config, k)
            assert report.total_kbps == pytest.approx(k * one.total_kbps)
            assert report.emotion_ratio == pytest.approx(one.emotion_ratio)

    def test_stage_bounds(self):
        config = QuantizerConfig()
        with pytest.raises(ValidationError):
            bitrate(config, 0)
        with pytest.raises(ValidationError):
            bitrate(config, 9)


class TestTokenStream:
    def test_rejects_out_of_range_token(self):
        config = QuantizerConfig()
        tokens = np.zeros((2, 3), dtype=np.int64)
        tokens[1, 2] = 32768
        with pytest.raises(TokenRangeError):
            TokenStream.from_config(tokens, config)

    def test_rejects_oversized_code_space(self):
        tokens = np.zeros((1, 1), dtype=np.int64)
        with pytest.raises(ValidationError):
            TokenStream(tokens=tokens, f_e=1, f_a=2, levels=(64, 64, 32),
                        frame_rate_hz=50)

    def test_tokens_read_only(self):
        stream, _ = default_stream()
        with pytest.raises((ValueError, AttributeError)):
            stream.tokens[0, 0] = 1


class TestContainerRoundTrip:
    def test_round_trip_default_stream(self, tmp_path):
        stream, _ = default_stream(frames=10, stages=8)
        path = tmp_path / "t.aftk"
        write_tokens(stream, path)
        back = read_tokens(path)
        assert np.array_equal(back.tokens, stream.tokens)
        assert back.levels == stream.levels
        assert back.f_e == stream.f_e and back.f_a == stream.f_a
        assert back.frame_rate_hz == stream.frame_rate_hz

    def test_round_trip_empty_stream(self, tmp_path):
        stream, _ = default_stream(frames=0)
        path = tmp_path / "empty.aftk"
        write_tokens(stream, path)
        back = read_tokens(path)
        assert back.frames == 0 and back.stages == 8

    def test_truncated_read_is_prefix_of_full_read(self, tmp_path):
        stream, _ = default_stream(frames=25, stages=8, seed=3)
        path = tmp_path / "t.aftk"
        write_tokens(stream, path)
        full = read_tokens(path)
        short = read_tokens(path, max_stages=2)
        assert short.stages == 2
        assert np.array_equal(short.tokens, full.tokens[:, :2])

    def test_max_stages_bounds(self, tmp_path):
        stream, _ = default_stream()
        path = tmp_path / "t.aftk"
        write_tokens(stream, path)
        with pytest.raises(ValidationError):
            read_tokens(path, max_stages=9)
        with pytest.raises(ValidationError):
            read_tokens(path, max_stages=0)

    def test_many_random_streams_bit_exact(self, tmp_path):
        rng = np.random.default_rng(11)
        for trial in range(15):
            f_e = int(rng.integers(1, 3))
            f_a = int(rng.integers(1, 4))
            levels = tuple(int(v) for v in rng.integers(2, 6, size=f_e + f_a))
            spec_product = int(np.prod(levels))
            frames = int(rng.integers(0, 30))
            stages = int(rng.integers(1, 6))
            tokens = rng.integers(0, spec_product, size=(frames, stages))
            stream = TokenStream(tokens=tokens, f_e=f_e, f_a=f_a, levels=levels,
                                 frame_rate_hz=int(rng.integers(1, 1000)))
            path = tmp_path / f"s{trial}.aftk"
            write_tokens(stream, path)
            back = read_tokens(path)
            assert np.array_equal(back.tokens, stream.tokens)
            assert back.levels == stream.levels


class TestContainerErrors:
    def _valid_bytes(self):
        stream, _ = default_stream(frames=2, stages=2)
        import tempfile
        import os
        fd, path = tempfile.mkstemp()
        os.close(fd)
        write_tokens(stream, path)
        with open(path, "rb") as fh:
            raw = fh.read()
        os.unlink(path)
        return raw

    def test_bad_magic(self, tmp_path):
        raw = self._valid_bytes()
        path = tmp_path / "bad.aftk"
        path.write_bytes(b"XXXX" + raw[4:])
        with pytest.raises(BadMagicError):
            read_tokens(path)

    def test_bad_version(self, tmp_path):
        raw = bytearray(self._valid_bytes())
        raw[4] = 9
        path = tmp_path / "v9.aftk"
        path.write_bytes(bytes(raw))
        with pytest.raises(BadVersionError):
            read_tokens(path)

    def test_truncated_payload(self, tmp_path):
        raw = self._valid_bytes()
        path = tmp_path / "short.aftk"
        path.write_bytes(raw[:-2])
        with pytest.raises(TruncatedPayloadError):
            read_tokens(path)

    def test_trailing_garbage(self, tmp_path):
        raw = self._valid_bytes()
        path = tmp_path / "long.aftk"
        path.write_bytes(raw + b"\x00\x00")
        with pytest.raises(PayloadShapeError):
            read_tokens(path)

    def test_zero_declared_stages_rejected(self, tmp_path):
        header = struct.pack("<4sBBBB", b"AFTK", 1, 0, 1, 1)
        header += bytes((2, 2))
        header += struct.pack("<HI", 50, 3)
        path = tmp_path / "zero.aftk"
        path.write_bytes(header)
        with pytest.raises(PayloadShapeError):
            read_tokens(path)

    def test_stored_token_out_of_range(self, tmp_path):
        # hand-build a file whose payload holds 32768 under the default levels
        header = struct.pack("<4sBBBB", b"AFTK", 1, 1, 3, 6)
        header += bytes((2, 2, 2, 4, 4, 4, 4, 4, 4))
        header += struct.pack("<HI", 50, 1)
        payload = struct.pack("<H", 32768)
        path = tmp_path / "oob.aftk"
        path.write_bytes(header + payload)
        with pytest.raises(TokenRangeError):
            read_tokens(path)
