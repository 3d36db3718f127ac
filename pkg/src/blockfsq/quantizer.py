"""Partition-preserving residual FSQ pipeline.

The quantizer chains K stages over a latent that is the concatenation of an
emotion partition (first d_e rows) and an acoustic partition (remaining d_a).
Each stage projects the current residual into a compact f-dimensional space,
applies a learnable per-dimension affine (scale = softplus(ell) + epsilon,
then bias), snaps every dimension onto its scalar grid, inverts the affine,
and projects back; the stage reconstruction is subtracted from the residual
before the next stage. In block-diagonal mode the stage projections have no
cross-partition entries at all -- the emotion half of every residual,
reconstruction and token is a pure function of the emotion input -- while
dense mode (a config flag used by the analysis baselines) uses unconstrained
f x d matrices.

Decoding needs only the composite token indices and fixed parameters: the
affine inverse uses model weights, never per-sample statistics, so
``decode_indices`` reproduces the encoder's quantized latent bit-exactly.

Gradients follow the straight-through convention: the rounding step is
treated as identity in the backward pass, everything else is differentiated
exactly. ``ste_backward`` is a hand-written reverse pass over the cached
forward; no general autodiff is involved.
"""

from dataclasses import dataclass, field

import numpy as np

from .errors import ShapeMismatchError, TokenRangeError, ValidationError
from .features import FeatureMatrix, as_features
from .grid import LevelSpec, codes_to_values, quantize_vector, unpack_index
from .rng import Rng


def softplus(x):
    return np.logaddexp(0.0, x)


def _sigmoid(x):
    x = np.asarray(x, dtype=np.float64)
    out = np.empty_like(x)
    pos = x >= 0
    out[pos] = 1.0 / (1.0 + np.exp(-x[pos]))
    ex = np.exp(x[~pos])
    out[~pos] = ex / (1.0 + ex)
    return out


@dataclass(frozen=True)
class QuantizerConfig:
    """Structural description of the quantizer.

    Parameters
    ----------
    K : int
        Number of residual stages.
    d_e, d_a : int
        Latent partition sizes (emotion, acoustic). ``d_a = 0`` is legal only
        for dense (non-block-diagonal) configurations.
    f_e, f_a : int
        Compact FSQ partition sizes.
    levels : tuple of int
        Per-dimension level counts, length ``f_e + f_a``.
    epsilon : float
        Positive floor added to the softplus-parameterized scale.
    frame_rate_hz : int
        Frames per second, used by bitrate accounting.
    block_diagonal : bool
        Structurally separate partitions (the default). Dense mode is for
        analysis baselines only and cannot be serialized.
    """

    K: int = 8
    d_e: int = 256
    d_a: int = 768
    f_e: int = 3
    f_a: int = 6
    levels: tuple = (2, 2, 2, 4, 4, 4, 4, 4, 4)
    epsilon: float = 0.1
    frame_rate_hz: int = 50
    block_diagonal: bool = True
    level_spec: LevelSpec = field(init=False, repr=False, compare=False)

    def __post_init__(self):
        object.__setattr__(self, "levels", tuple(int(v) for v in self.levels))
        if self.K < 1:
            raise ValidationError(f"K must be >= 1, got {self.K}")
        if self.d_e < 1 or self.f_e < 1:
            raise ValidationError("emotion partition sizes d_e, f_e must be >= 1")
        low = 1 if self.block_diagonal else 0
        if self.d_a < low or self.f_a < low:
            kind = "block-diagonal" if self.block_diagonal else "dense"
            raise ValidationError(
                f"acoustic partition sizes must be >= {low} for a {kind} config"
            )
        if len(self.levels) != self.f_e + self.f_a:
            raise ValidationError(
                f"levels has length {len(self.levels)}, expected f_e + f_a = {self.f_e + self.f_a}"
            )
        if not self.epsilon > 0:
            raise ValidationError(f"epsilon must be > 0, got {self.epsilon}")
        if not 1 <= int(self.frame_rate_hz) <= 0xFFFF:
            raise ValidationError(f"frame_rate_hz must be in [1, 65535], got {self.frame_rate_hz}")
        object.__setattr__(self, "frame_rate_hz", int(self.frame_rate_hz))
        object.__setattr__(
            self, "level_spec", LevelSpec(self.levels, emotion_dims=self.f_e)
        )

    @property
    def d(self) -> int:
        return self.d_e + self.d_a

    @property
    def f(self) -> int:
        return self.f_e + self.f_a


def _check_shape(arr, shape, name):
    if not isinstance(arr, np.ndarray) or arr.shape != shape:
        found = arr.shape if isinstance(arr, np.ndarray) else type(arr).__name__
        raise ShapeMismatchError(f"{name} has shape {found}, expected {shape}")


@dataclass
class StageParams:
    """One block-diagonal stage: two projection blocks per direction plus
    the affine parameters. Cross-partition entries are structurally absent.
    """

    in_e: np.ndarray   # (f_e, d_e)
    in_a: np.ndarray   # (f_a, d_a)
    out_e: np.ndarray  # (d_e, f_e)
    out_a: np.ndarray  # (d_a, f_a)
    ell: np.ndarray    # (f,) raw scale, s = softplus(ell) + epsilon
    bias: np.ndarray   # (f,)

    block_diagonal = True

    def scale(self, epsilon: float) -> np.ndarray:
        return softplus(self.ell) + epsilon

    def project_in(self, r: np.ndarray) -> np.ndarray:
        d_e = self.in_e.shape[1]
        return np.concatenate(
            [r[:, :d_e] @ self.in_e.T, r[:, d_e:] @ self.in_a.T], axis=1
        )

    def project_out(self, z: np.ndarray) -> np.ndarray:
        f_e = self.out_e.shape[1]
        return np.concatenate(
            [z[:, :f_e] @ self.out_e.T, z[:, f_e:] @ self.out_a.T], axis=1
        )

    def backward_in(self, g_z: np.ndarray) -> np.ndarray:
        f_e = self.in_e.shape[0]
        return np.concatenate(
            [g_z[:, :f_e] @ self.in_e, g_z[:, f_e:] @ self.in_a], axis=1
        )

    def backward_out(self, g_u: np.ndarray) -> np.ndarray:
        d_e = self.out_e.shape[0]
        return np.concatenate(
            [g_u[:, :d_e] @ self.out_e, g_u[:, d_e:] @ self.out_a], axis=1
        )

    def input_grads(self, g_z, r_prev):
        f_e = self.in_e.shape[0]
        d_e = self.in_e.shape[1]
        return {
            "in_e": g_z[:, :f_e].T @ r_prev[:, :d_e],
            "in_a": g_z[:, f_e:].T @ r_prev[:, d_e:],
        }

    def output_grads(self, g_u, z_denorm):
        d_e = self.out_e.shape[0]
        f_e = self.out_e.shape[1]
        return {
            "out_e": g_u[:, :d_e].T @ z_denorm[:, :f_e],
            "out_a": g_u[:, d_e:].T @ z_denorm[:, f_e:],
        }

    def full_input_matrix(self) -> np.ndarray:
        """Materialize the implied f x d projection (derived, never stored)."""
        f_e, d_e = self.in_e.shape
        f_a, d_a = self.in_a.shape
        full = np.zeros((f_e + f_a, d_e + d_a))
        full[:f_e, :d_e] = self.in_e
        full[f_e:, d_e:] = self.in_a
        return full

    def full_output_matrix(self) -> np.ndarray:
        d_e, f_e = self.out_e.shape
        d_a, f_a = self.out_a.shape
        full = np.zeros((d_e + d_a, f_e + f_a))
        full[:d_e, :f_e] = self.out_e
        full[d_e:, f_e:] = self.out_a
        return full

    def param_arrays(self):
        return {
            "in_e": self.in_e, "in_a": self.in_a,
            "out_e": self.out_e, "out_a": self.out_a,
            "ell": self.ell, "bias": self.bias,
        }

    def clone(self) -> "StageParams":
        return StageParams(*(v.copy() for v in (
            self.in_e, self.in_a, self.out_e, self.out_a, self.ell, self.bias)))

    def check_shapes(self, config: QuantizerConfig):
        _check_shape(self.in_e, (config.f_e, config.d_e), "in_e")
        _check_shape(self.in_a, (config.f_a, config.d_a), "in_a")
        _check_shape(self.out_e, (config.d_e, config.f_e), "out_e")
        _check_shape(self.out_a, (config.d_a, config.f_a), "out_a")
        _check_shape(self.ell, (config.f,), "ell")
        _check_shape(self.bias, (config.f,), "bias")


@dataclass
class DenseStageParams:
    """Dense (unconstrained) stage used by analysis baselines and the
    single-stream rate-distortion cells; offers no partition guarantee.
    """

    w_in: np.ndarray   # (f, d)
    w_out: np.ndarray  # (d, f)
    ell: np.ndarray
    bias: np.ndarray

    block_diagonal = False

    def scale(self, epsilon: float) -> np.ndarray:
        return softplus(self.ell) + epsilon

    def project_in(self, r):
        return r @ self.w_in.T

    def project_out(self, z):
        return z @ self.w_out.T

    def backward_in(self, g_z):
        return g_z @ self.w_in

    def backward_out(self, g_u):
        return g_u @ self.w_out

    def input_grads(self, g_z, r_prev):
        return {"w_in": g_z.T @ r_prev}

    def output_grads(self, g_u, z_denorm):
        return {"w_out": g_u.T @ z_denorm}

    def full_input_matrix(self):
        return self.w_in.copy()

    def full_output_matrix(self):
        return self.w_out.copy()

    def param_arrays(self):
        return {"w_in": self.w_in, "w_out": self.w_out, "ell": self.ell, "bias": self.bias}

    def clone(self) -> "DenseStageParams":
        return DenseStageParams(*(v.copy() for v in (self.w_in, self.w_out, self.ell, self.bias)))

    def check_shapes(self, config: QuantizerConfig):
        _check_shape(self.w_in, (config.f, config.d), "w_in")
        _check_shape(self.w_out, (config.d, config.f), "w_out")
        _check_shape(self.ell, (config.f,), "ell")
        _check_shape(self.bias, (config.f,), "bias")


@dataclass
class QuantizerParams:
    """Learnable state: pre-projections, K stages, optional post projection."""

    pre_e: np.ndarray          # (d_e, D_e)
    pre_a: np.ndarray | None   # (d_a, D_a); None when d_a == 0
    stages: list
    post: np.ndarray | None = None  # (d, d); None means identity

    @property
    def input_dims(self):
        d_a_in = 0 if self.pre_a is None else self.pre_a.shape[1]
        return (self.pre_e.shape[1], d_a_in)

    def clone(self) -> "QuantizerParams":
        return QuantizerParams(
            pre_e=self.pre_e.copy(),
            pre_a=None if self.pre_a is None else self.pre_a.copy(),
            stages=[s.clone() for s in self.stages],
            post=None if self.post is None else self.post.copy(),
        )

    def validate(self, config: QuantizerConfig):
        if self.pre_e.ndim != 2 or self.pre_e.shape[0] != config.d_e:
            raise ShapeMismatchError(
                f"pre_e has shape {self.pre_e.shape}, expected ({config.d_e}, D_e)"
            )
        if config.d_a == 0:
            if self.pre_a is not None:
                raise ShapeMismatchError("pre_a must be absent when d_a == 0")
        else:
            if self.pre_a is None or self.pre_a.ndim != 2 or self.pre_a.shape[0] != config.d_a:
                shape = None if self.pre_a is None else self.pre_a.shape
                raise ShapeMismatchError(
                    f"pre_a has shape {shape}, expected ({config.d_a}, D_a)"
                )
        if len(self.stages) != config.K:
            raise ShapeMismatchError(
                f"params hold {len(self.stages)} stages, config declares K={config.K}"
            )
        for k, stage in enumerate(self.stages):
            if stage.block_diagonal != config.block_diagonal:
                raise ValidationError(
                    f"stage {k} kind does not match config.block_diagonal={config.block_diagonal}"
                )
            stage.check_shapes(config)
        if self.post is not None:
            _check_shape(self.post, (config.d, config.d), "post")


def init_params(config: QuantizerConfig, rng: Rng, input_dims=None) -> QuantizerParams:
    """Fresh parameters: zero affine (scale ln2 + epsilon at init, identity
    bias), fan-in-scaled Gaussian projection blocks, identity post projection.

    ``input_dims`` are the raw feature widths (D_e, D_a) ahead of the
    pre-projections; they default to the latent partition sizes.
    """
    if input_dims is None:
        input_dims = (config.d_e, config.d_a)
    d_in_e, d_in_a = (int(v) for v in input_dims)
    if d_in_e < 1:
        raise ValidationError("emotion input dim must be >= 1")
    if (d_in_a == 0) != (config.d_a == 0):
        raise ValidationError(
            "acoustic input dim must be 0 exactly when the config has d_a == 0"
        )
    pre_e = rng.normal_matrix(config.d_e, d_in_e, d_in_e ** -0.5)
    pre_a = None
    if config.d_a:
        pre_a = rng.normal_matrix(config.d_a, d_in_a, d_in_a ** -0.5)
    stages = []
    f = config.f
    for _ in range(config.K):
        if config.block_diagonal:
            stages.append(StageParams(
                in_e=rng.normal_matrix(config.f_e, config.d_e, config.d_e ** -0.5),
                in_a=rng.normal_matrix(config.f_a, config.d_a, config.d_a ** -0.5),
                out_e=rng.normal_matrix(config.d_e, config.f_e, config.f_e ** -0.5),
                out_a=rng.normal_matrix(config.d_a, config.f_a, config.f_a ** -0.5),
                ell=np.zeros(f),
                bias=np.zeros(f),
            ))
        else:
            stages.append(DenseStageParams(
                w_in=rng.normal_matrix(f, config.d, config.d ** -0.5),
                w_out=rng.normal_matrix(config.d, f, f ** -0.5),
                ell=np.zeros(f),
                bias=np.zeros(f),
            ))
    params = QuantizerParams(pre_e=pre_e, pre_a=pre_a, stages=stages, post=None)
    params.validate(config)
    return params


@dataclass
class _StageCache:
    r_prev: np.ndarray    # residual entering the stage (T, d)
    z: np.ndarray         # projected residual (T, f)
    z_tilde: np.ndarray   # normalized pre-quantization values (T, f)
    z_q: np.ndarray       # quantized grid values (T, f)
    z_denorm: np.ndarray  # de-normalized quantized values (T, f)
    scale: np.ndarray     # (f,)


@dataclass
class EncodeCache:
    config: QuantizerConfig
    params: QuantizerParams
    active_stages: int
    frames: int
    latent: np.ndarray    # U, the pre-projected input (T, d) float64
    accum: np.ndarray     # summed stage reconstructions (T, d) float64
    residual: np.ndarray  # final residual (T, d) float64
    stages: list          # per-stage _StageCache


@dataclass
class EncodeResult:
    """Everything the forward pass produced.

    ``quantized`` is the accumulated latent before the optional post
    projection; ``decode_indices(tokens)`` reproduces ``apply_post(params,
    quantized)`` bit-exactly.
    """

    tokens: np.ndarray                 # (T, active_stages) int64
    quantized: FeatureMatrix           # (T, d)
    residual_final: FeatureMatrix      # (T, d)
    per_stage_cumulative: dict         # stage m -> FeatureMatrix
    commitment: float
    cache: EncodeCache


def encode(features_e, features_a, params: QuantizerParams, config: QuantizerConfig,
           active_stages=None, collect_cumulative_at=None) -> EncodeResult:
    """Run the residual quantizer over per-frame features.

    Parameters
    ----------
    features_e : FeatureMatrix or array, T x D_e
        Emotion-side input features.
    features_a : FeatureMatrix or array or None, T x D_a
        Acoustic-side input features; must be None exactly when the config
        has ``d_a == 0``.
    active_stages : int, optional
        Encode only the first K' stages (defaults to all K). Tokens emitted
        at K' stages are a prefix of the tokens at K stages.
    collect_cumulative_at : iterable of int, optional
        Stage counts m at which to snapshot the cumulative reconstruction.
    """
    params.validate(config)
    k_active = config.K if active_stages is None else int(active_stages)
    if not 1 <= k_active <= config.K:
        raise ValidationError(f"active_stages must be in [1, {config.K}], got {k_active}")
    fe = as_features(features_e)
    if fe.dim != params.input_dims[0]:
        raise ShapeMismatchError(
            f"emotion features have dim {fe.dim}, pre-projection expects {params.input_dims[0]}"
        )
    frames = fe.frames
    latent = fe.data.astype(np.float64) @ params.pre_e.T
    if config.d_a == 0:
        if features_a is not None:
            raise ValidationError("features_a must be None for a config with d_a == 0")
    else:
        fa = as_features(features_a)
        if fa.frames != frames:
            raise ShapeMismatchError(
                f"frame counts differ: emotion {frames}, acoustic {fa.frames}"
            )
        if fa.dim != params.input_dims[1]:
            raise ShapeMismatchError(
                f"acoustic features have dim {fa.dim}, pre-projection expects {params.input_dims[1]}"
            )
        latent = np.concatenate([latent, fa.data.astype(np.float64) @ params.pre_a.T], axis=1)

    spec = config.level_spec
    place = spec.place_values()
    wanted = frozenset(int(m) for m in (collect_cumulative_at or ()))
    bad = [m for m in wanted if not 1 <= m <= k_active]
    if bad:
        raise ValidationError(f"cumulative stages {sorted(bad)} outside [1, {k_active}]")

    residual = latent.copy()
    accum = np.zeros_like(latent)
    tokens = np.empty((frames, k_active), dtype=np.int64)
    stage_caches = []
    cumulative = {}
    commit_sq = 0.0
    for k in range(k_active):
        stage = params.stages[k]
        r_prev = residual
        z = stage.project_in(residual)
        s = stage.scale(config.epsilon)
        z_tilde = s * (z - stage.bias)
        codes, z_q = quantize_vector(z_tilde, spec)
        z_denorm = z_q / s + stage.bias
        u_hat = stage.project_out(z_denorm)
        residual = residual - u_hat
        accum = accum + u_hat
        tokens[:, k] = codes @ place
        with np.errstate(over="ignore"):
            commit_sq += float(np.sum((z_q - z_tilde) ** 2))
        stage_caches.append(_StageCache(r_prev, z, z_tilde, z_q, z_denorm, s))
        if k + 1 in wanted:
            cumulative[k + 1] = FeatureMatrix(accum)

    denom = frames * k_active * config.f
    commitment = commit_sq / denom if denom else 0.0
    cache = EncodeCache(config, params, k_active, frames, latent, accum, residual, stage_caches)
    return EncodeResult(
        tokens=tokens,
        quantized=FeatureMatrix(accum),
        residual_final=FeatureMatrix(residual),
        per_stage_cumulative=cumulative,
        commitment=commitment,
        cache=cache,
    )


def stage_forward(r, stage, config: QuantizerConfig):
    """Single-residual view of one stage.

    Returns ``(u_hat, index, z_pre, z_post)`` for a length-d residual vector:
    the stage reconstruction, its composite token, and the normalized values
    before and after quantization.
    """
    r = np.asarray(r, dtype=np.float64)
    if r.shape != (config.d,):
        raise ShapeMismatchError(f"residual has shape {r.shape}, expected ({config.d},)")
    if not np.all(np.isfinite(r)):
        raise ValidationError("residual contains non-finite values")
    spec = config.level_spec
    z = stage.project_in(r[None, :])
    s = stage.scale(config.epsilon)
    z_tilde = s * (z - stage.bias)
    codes, z_q = quantize_vector(z_tilde, spec)
    z_denorm = z_q / s + stage.bias
    u_hat = stage.project_out(z_denorm)
    index = int(codes[0] @ spec.place_values())
    return u_hat[0], index, z_tilde[0], z_q[0]


def apply_post(params: QuantizerParams, latent) -> FeatureMatrix:
    """Apply the optional post-quantization projection (identity if absent)."""
    latent = as_features(latent)
    if params.post is None:
        return latent
    return FeatureMatrix(latent.data.astype(np.float64) @ params.post.T)


def decode_indices(tokens, params: QuantizerParams, config: QuantizerConfig) -> FeatureMatrix:
    """Reconstruct the quantized latent from composite token indices alone.

    The affine inverse and output projections use fixed parameters only, so
    the result is bit-identical to ``apply_post(params, encode(...).quantized)``
    for the token prefix produced by the same parameters.
    """
    params.validate(config)
    tokens = np.asarray(tokens, dtype=np.int64)
    if tokens.ndim != 2:
        raise ShapeMismatchError(f"tokens must be 2-D (frames x stages), got shape {tokens.shape}")
    frames, k_active = tokens.shape
    if not 1 <= k_active <= config.K:
        raise ValidationError(f"token stream has {k_active} stages, config supports [1, {config.K}]")
    spec = config.level_spec
    if tokens.size and (tokens.min() < 0 or tokens.max() >= spec.codes_per_stage):
        raise TokenRangeError(
            f"token outside [0, {spec.codes_per_stage}) encountered"
        )
    accum = np.zeros((frames, config.d))
    for k in range(k_active):
        stage = params.stages[k]
        codes = unpack_index(tokens[:, k], spec)
        z_q = codes_to_values(codes, spec)
        s = stage.scale(config.epsilon)
        z_denorm = z_q / s + stage.bias
        u_hat = stage.project_out(z_denorm)
        accum = accum + u_hat
    return apply_post(params, FeatureMatrix(accum))


@dataclass
class QuantizerGrads:
    """Straight-through gradients from :func:`ste_backward`.

    ``wrt_latent`` is the gradient with respect to the pre-projected latent U;
    ``stages[k]`` maps each stage parameter name to its gradient array.
    """

    wrt_latent: np.ndarray
    stages: list


def ste_backward(encoded, upstream, commitment_weight: float = 0.0) -> QuantizerGrads:
    """Reverse pass through the cached forward under the STE convention.

    The quantization step is treated as identity, so a stage's Jacobian with
    respect to its input residual is the product of its output and input
    projections (the affine cancels); scale and bias still receive gradients
    through the de-normalization of the actual quantized values, and through
    the commitment term when ``commitment_weight`` is nonzero.
    """
    cache = encoded.cache if isinstance(encoded, EncodeResult) else encoded
    if not isinstance(cache, EncodeCache):
        raise ValidationError("ste_backward requires a cached encode pass")
    config = cache.config
    grad_out = np.asarray(upstream, dtype=np.float64)
    if grad_out.shape != (cache.frames, config.d):
        raise ShapeMismatchError(
            f"upstream gradient has shape {grad_out.shape}, expected {(cache.frames, config.d)}"
        )
    denom = cache.frames * cache.active_stages * config.f
    g_residual = np.zeros_like(grad_out)
    stage_grads = [None] * cache.active_stages
    for k in reversed(range(cache.active_stages)):
        stage = cache.params.stages[k]
        sc = cache.stages[k]
        s = sc.scale
        g_u = grad_out - g_residual
        g_zhat = stage.backward_out(g_u)
        grads = stage.output_grads(g_u, sc.z_denorm)
        g_bias = g_zhat.sum(axis=0)
        g_scale = -(g_zhat * sc.z_q).sum(axis=0) / (s * s)
        g_ztilde = g_zhat / s
        if commitment_weight and denom:
            g_ztilde = g_ztilde + (2.0 * commitment_weight / denom) * (sc.z_tilde - sc.z_q)
        g_z = g_ztilde * s
        g_scale = g_scale + (g_ztilde * (sc.z - stage.bias)).sum(axis=0)
        g_bias = g_bias - g_ztilde.sum(axis=0) * s
        grads.update(stage.input_grads(g_z, sc.r_prev))
        grads["ell"] = g_scale * _sigmoid(stage.ell)
        grads["bias"] = g_bias
        stage_grads[k] = grads
        g_residual = stage.backward_in(g_z) + g_residual
    return QuantizerGrads(wrt_latent=g_residual, stages=stage_grads)


def commitment_loss(encoded) -> float:
    """Mean squared gap between pre- and post-quantization values.

    The quantized side is a constant under differentiation; the value here is
    recomputed from the cache and equals ``EncodeResult.commitment``.
    """
    cache = encoded.cache if isinstance(encoded, EncodeResult) else encoded
    if not isinstance(cache, EncodeCache):
        raise ValidationError("commitment_loss requires a cached encode pass")
    denom = cache.frames * cache.active_stages * cache.config.f
    if denom == 0:
        return 0.0
    total = 0.0
    for sc in cache.stages:
        total += float(np.sum((sc.z_q - sc.z_tilde) ** 2))
    return total / denom
