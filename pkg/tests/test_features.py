import struct

import numpy as np
import pytest

from blockfsq import (
    BadMagicError,
    BadVersionError,
    FeatureMatrix,
    NonFiniteDataError,
    PayloadShapeError,
    Rng,
    TruncatedPayloadError,
    ValidationError,
    gaussian_features,
    read_feature_file,
    write_feature_file,
)


def test_write_read_round_trip_small(tmp_path):
    m = FeatureMatrix(np.arange(6, dtype=np.float32).reshape(3, 2))
    path = tmp_path / "m.afct"
    write_feature_file(m, path)
    back = read_feature_file(path)
    assert back.equals(m)


def test_bad_magic(tmp_path):
    path = tmp_path / "bad.afct"
    path.write_bytes(b"XXXX" + bytes(9))
    with pytest.raises(BadMagicError):
        read_feature_file(path)


def test_truncated_payload(tmp_path):
    # header says 4x4 but payload holds 15 values
    path = tmp_path / "short.afct"
    payload = struct.pack("<15f", *range(15))
    path.write_bytes(struct.pack("<4sBII", b"AFCT", 1, 4, 4) + payload)
    with pytest.raises(TruncatedPayloadError):
        read_feature_file(path)


def test_oversized_payload_is_distinct_error(tmp_path):
    path = tmp_path / "long.afct"
    payload = struct.pack("<5f", *range(5))
    path.write_bytes(struct.pack("<4sBII", b"AFCT", 1, 2, 2) + payload)
    with pytest.raises(PayloadShapeError):
        read_feature_file(path)


def test_bad_version(tmp_path):
    path = tmp_path / "v9.afct"
    path.write_bytes(struct.pack("<4sBII", b"AFCT", 9, 0, 1))
    with pytest.raises(BadVersionError):
        read_feature_file(path)


def test_stored_nonfinite_rejected(tmp_path):
    path = tmp_path / "nan.afct"
    path.write_bytes(struct.pack("<4sBII", b"AFCT", 1, 1, 1) + struct.pack("<f", float("nan")))
    with pytest.raises(NonFiniteDataError):
        read_feature_file(path)


def test_empty_matrix_is_header_only(tmp_path):
    m = FeatureMatrix(np.empty((0, 8), dtype=np.float32))
    path = tmp_path / "empty.afct"
    write_feature_file(m, path)
    assert path.stat().st_size == 13
    back = read_feature_file(path)
    assert back.frames == 0 and back.dim == 8


def test_payload_is_little_endian_float32(tmp_path):
    path = tmp_path / "half.afct"
    write_feature_file(FeatureMatrix([[0.5]]), path)
    raw = path.read_bytes()
    assert raw[13:] == struct.pack("<f", 0.5)
    assert len(raw) == 13 + 4


def test_write_refuses_nonfinite():
    with pytest.raises(NonFiniteDataError):
        FeatureMatrix([[np.inf]])
    with pytest.raises(NonFiniteDataError):
        FeatureMatrix([[np.nan, 1.0]])


def test_zero_dim_rejected():
    with pytest.raises(ValidationError):
        FeatureMatrix(np.empty((3, 0)))


def test_round_trip_random_matrices(tmp_path):
    rng = np.random.default_rng(7)
    for trial in range(20):
        frames = int(rng.integers(0, 40))
        dim = int(rng.integers(1, 12))
        m = FeatureMatrix(rng.normal(size=(frames, dim)).astype(np.float32))
        path = tmp_path / f"t{trial}.afct"
        write_feature_file(m, path)
        back = read_feature_file(path)
        assert back.equals(m)
        assert np.array_equal(back.data.view(np.int32), m.data.view(np.int32))


def test_matrix_is_immutable():
    m = FeatureMatrix([[1.0, 2.0]])
    with pytest.raises((ValueError, AttributeError)):
        m.data[0, 0] = 5.0
    with pytest.raises(AttributeError):
        m.data = None


def test_gaussian_deterministic_under_seed():
    a = gaussian_features(Rng(7), 100, 16, 1.0)
    b = gaussian_features(Rng(7), 100, 16, 1.0)
    assert a.equals(b)


def test_gaussian_rejects_bad_stddev():
    with pytest.raises(ValidationError):
        gaussian_features(Rng(7), 10, 4, 0.0)
    with pytest.raises(ValidationError):
        gaussian_features(Rng(7), 10, 4, -1.0)


def test_gaussian_moments_large_sample():
    # 10000 frames: sample mean s.e. is 0.01, so 0.05 is a 5-sigma band
    m = gaussian_features(Rng(7), 10000, 4, 1.0)
    means = m.data.mean(axis=0)
    stds = m.data.std(axis=0)
    assert np.all(np.abs(means) < 0.05)
    assert np.all(np.abs(stds - 1.0) < 0.05)


def test_gaussian_stddev_scales():
    m = gaussian_features(Rng(11), 20000, 2, 3.0)
    assert np.all(np.abs(m.data.std(axis=0) - 3.0) < 0.15)
