"""Built-in consistency checks for the ``selftest`` CLI command.

Each check returns (name, passed, detail). The partition-separation suite
runs seeded random trials; the fixture checks pin the reference
rate-distortion front and the exact bitrate table.
"""

import math
import time

import numpy as np

from .analysis import ParetoPoint, marginal_efficiency, select_operating_point
from .bitstream import bitrate
from .errors import BlockFSQError
from .features import FeatureMatrix
from .grid import LevelSpec, codes_to_values, pack_index, quantize_vector, unpack_index
from .quantizer import QuantizerConfig, encode, init_params
from .rng import Rng

# Reference rate-distortion front at 2 stages: (dims, levels, mse, cosine),
# expected efficiencies in 1e-3 mse/bit, knee at index 2, selected at 3.
REFERENCE_FRONT = (
    (1, 2, 0.4789, 0.9979),
    (1, 3, 0.4560, 0.9980),
    (2, 2, 0.2059, 0.9993),
    (3, 2, 0.1516, 0.9995),
    (4, 2, 0.1040, 0.9996),
    (3, 4, 0.0813, 0.9997),
    (4, 3, 0.0634, 0.9998),
)
REFERENCE_EFFICIENCIES = (None, 19.6, 301.2, 27.2, 23.8, 5.7, 26.3)
REFERENCE_STAGES = 2
REFERENCE_KNEE = 2
REFERENCE_SELECTED = 3

# Exact bitrate table for the default config:
# (active stages, kbps, emotion bits/frame, acoustic bits/frame, ratio).
BITRATE_TABLE = (
    (2, 1.5, 6.0, 24.0, 0.20),
    (4, 3.0, 12.0, 48.0, 0.20),
    (8, 6.0, 24.0, 96.0, 0.20),
)


def reference_front_points(rows=REFERENCE_FRONT, stages=REFERENCE_STAGES):
    """Build ParetoPoint rows with exact (unrounded) bits."""
    return [
        ParetoPoint(dims=d, levels_per_dim=lv, bits=stages * d * math.log2(lv),
                    mse=mse, cosine=cos)
        for d, lv, mse, cos in rows
    ]


def _same_bits(x, y):
    return np.array_equal(x.view(np.int64), y.view(np.int64))


def check_partition_separation(cases=1000, seed=20240, frames=64, total_latent=32, stages=4):
    """Perturbing one partition's inputs never changes the other partition's
    sub-indices, residual rows or reconstruction rows, bit for bit."""
    master = Rng(seed)
    start = time.monotonic()
    for case in range(cases):
        rng = master.spawn(case)
        d_e = 1 + rng.below(total_latent - 1)
        d_a = total_latent - d_e
        f_e = 1 + rng.below(3)
        f_a = 1 + rng.below(4)
        levels = tuple(2 + rng.below(4) for _ in range(f_e + f_a))
        config = QuantizerConfig(K=stages, d_e=d_e, d_a=d_a, f_e=f_e, f_a=f_a,
                                 levels=levels)
        params = init_params(config, rng)
        fe = FeatureMatrix(rng.normal_matrix(frames, d_e))
        fa = FeatureMatrix(rng.normal_matrix(frames, d_a))
        fa2 = FeatureMatrix(fa.data + rng.normal_matrix(frames, d_a).astype(np.float32))
        fe2 = FeatureMatrix(fe.data + rng.normal_matrix(frames, d_e).astype(np.float32))

        base = encode(fe, fa, params, config)
        acoustic_perturbed = encode(fe, fa2, params, config)
        emotion_perturbed = encode(fe2, fa, params, config)

        emo_codes = config.level_spec.emotion_codes
        if not np.array_equal(base.tokens % emo_codes, acoustic_perturbed.tokens % emo_codes):
            return False, f"case {case}: emotion sub-indices changed under acoustic perturbation"
        if not np.array_equal(base.tokens // emo_codes, emotion_perturbed.tokens // emo_codes):
            return False, f"case {case}: acoustic sub-indices changed under emotion perturbation"
        for k in range(stages):
            a = base.cache.stages[k]
            b = acoustic_perturbed.cache.stages[k]
            c = emotion_perturbed.cache.stages[k]
            if not (_same_bits(a.r_prev[:, :d_e], b.r_prev[:, :d_e])
                    and _same_bits(a.z_denorm[:, :f_e], b.z_denorm[:, :f_e])):
                return False, f"case {case}: emotion rows changed at stage {k}"
            if not (_same_bits(a.r_prev[:, d_e:], c.r_prev[:, d_e:])
                    and _same_bits(a.z_denorm[:, f_e:], c.z_denorm[:, f_e:])):
                return False, f"case {case}: acoustic rows changed at stage {k}"
    elapsed = time.monotonic() - start
    return True, f"{cases} cases in {elapsed:.1f}s"


def check_index_round_trip():
    """Exhaustive pack/unpack over the full default code space, plus
    quantize(codes_to_values) idempotence."""
    spec = LevelSpec((2, 2, 2, 4, 4, 4, 4, 4, 4), emotion_dims=3)
    everything = np.arange(spec.codes_per_stage, dtype=np.int64)
    codes = unpack_index(everything, spec)
    repacked = pack_index(codes, spec)
    if not np.array_equal(repacked, everything):
        return False, "pack(unpack(i)) != i"
    values = codes_to_values(codes, spec)
    requantized, _ = quantize_vector(values, spec)
    if not np.array_equal(requantized, codes):
        return False, "quantize(codes_to_values(codes)) != codes"
    return True, f"all {spec.codes_per_stage} indices"


def check_reference_front(points=None):
    """Recomputed efficiencies match the reference column within 0.5, and
    knee/selection land on the expected rows."""
    if points is None:
        points = reference_front_points()
    annotated = marginal_efficiency(points)
    for point, expected in zip(annotated, REFERENCE_EFFICIENCIES):
        if expected is None:
            if point.marginal_efficiency is not None:
                return False, "first point should have no efficiency"
            continue
        if abs(point.marginal_efficiency - expected) > 0.5:
            return False, (
                f"efficiency {point.marginal_efficiency:.2f} departs from {expected} "
                f"at (d={point.dims}, L={point.levels_per_dim})"
            )
    knee, selected = select_operating_point(points)
    if knee != REFERENCE_KNEE:
        return False, f"knee at index {knee}, expected {REFERENCE_KNEE}"
    if selected != REFERENCE_SELECTED:
        return False, f"selected index {selected}, expected {REFERENCE_SELECTED}"
    front = annotated
    return True, (
        f"knee (d={front[knee].dims}, L={front[knee].levels_per_dim}), "
        f"selected (d={front[selected].dims}, L={front[selected].levels_per_dim})"
    )


def check_bitrate_table():
    """The default config's bit accounting matches the exact table."""
    config = QuantizerConfig()
    for stages, kbps, emo, aco, ratio in BITRATE_TABLE:
        report = bitrate(config, stages)
        if (report.total_kbps != kbps or report.emotion_bits_per_frame != emo
                or report.acoustic_bits_per_frame != aco
                or abs(report.emotion_ratio - ratio) > 1e-12):
            return False, f"row K'={stages} disagrees: {report}"
    return True, f"{len(BITRATE_TABLE)} rows exact"


def run_all(front_points=None):
    """Run every check; yields (name, passed, detail)."""
    checks = [
        ("partition-separation", check_partition_separation),
        ("index-round-trip", check_index_round_trip),
        ("reference-front", lambda: check_reference_front(front_points)),
        ("bitrate-table", check_bitrate_table),
    ]
    results = []
    for name, fn in checks:
        try:
            passed, detail = fn()
        except BlockFSQError as exc:
            passed, detail = False, f"{type(exc).__name__}: {exc}"
        results.append((name, passed, detail))
    return results
