"""Coarse emotion conditioning math: attentive pooling and FiLM modulation.

Pure deterministic operations over caller-provided weights. Nothing here is
trained by this package; weights either come from the parameter file's
optional ``cem`` section or are identity-initialized.
"""

from dataclasses import dataclass

import numpy as np

from .errors import ShapeMismatchError, ValidationError
from .features import FeatureMatrix, as_features


@dataclass
class AttnPoolWeights:
    """Two-layer score MLP (tanh between layers) for softmax pooling."""

    w1: np.ndarray   # (H, D)
    b1: np.ndarray   # (H,)
    w2: np.ndarray   # (1, H)
    b2: float

    def check_shapes(self):
        h, d = self.w1.shape
        if self.b1.shape != (h,):
            raise ShapeMismatchError(f"b1 has shape {self.b1.shape}, expected ({h},)")
        if self.w2.shape != (1, h):
            raise ShapeMismatchError(f"w2 has shape {self.w2.shape}, expected (1, {h})")
        return d


@dataclass
class FilmWeights:
    """Single linear layers producing the per-channel scale and shift."""

    g: np.ndarray        # (D, D), gamma = g @ e + g_bias
    g_bias: np.ndarray   # (D,)
    h: np.ndarray        # (D, D), beta = h @ e + h_bias
    h_bias: np.ndarray   # (D,)

    @classmethod
    def identity(cls, dim: int) -> "FilmWeights":
        """Weights for which gamma == 1 and beta == 0 on every input."""
        return cls(
            g=np.zeros((dim, dim)),
            g_bias=np.ones(dim),
            h=np.zeros((dim, dim)),
            h_bias=np.zeros(dim),
        )

    def check_shapes(self):
        d = self.g.shape[0]
        for name, arr, shape in (
            ("g", self.g, (d, d)),
            ("g_bias", self.g_bias, (d,)),
            ("h", self.h, (d, d)),
            ("h_bias", self.h_bias, (d,)),
        ):
            if arr.shape != shape:
                raise ShapeMismatchError(f"{name} has shape {arr.shape}, expected {shape}")
        return d


@dataclass
class CemParams:
    """Optional conditioning weights; either group may be absent."""

    attn_pool: AttnPoolWeights | None = None
    film: FilmWeights | None = None


def attention_weights(features, weights: AttnPoolWeights) -> np.ndarray:
    """Per-frame softmax weights used by :func:`attentive_pool`.

    Always a probability vector: positive entries summing to one.
    """
    m = as_features(features)
    if m.frames < 1:
        raise ValidationError("attentive pooling requires at least one frame")
    d = weights.check_shapes()
    if m.dim != d:
        raise ShapeMismatchError(f"features have dim {m.dim}, weights expect {d}")
    frames = m.data.astype(np.float64)
    hidden = np.tanh(frames @ weights.w1.T + weights.b1)
    scores = (hidden @ weights.w2.T).ravel() + float(weights.b2)
    scores -= scores.max()
    alpha = np.exp(scores)
    alpha /= alpha.sum()
    return alpha


def attentive_pool(features, weights: AttnPoolWeights) -> np.ndarray:
    """Softmax-weighted temporal pooling of frame features.

    Scores are ``w2 @ tanh(w1 @ frame + b1) + b2``; the output is the
    score-softmax convex combination of the input frames, so it always lies
    component-wise between the per-column min and max.
    """
    m = as_features(features)
    alpha = attention_weights(m, weights)
    return alpha @ m.data.astype(np.float64)


def film_modulate(features, embedding, weights: FilmWeights) -> FeatureMatrix:
    """Apply per-channel scale and shift computed once from ``embedding``."""
    m = as_features(features)
    d = weights.check_shapes()
    e = np.asarray(embedding, dtype=np.float64).ravel()
    if m.dim != d or e.shape != (d,):
        raise ShapeMismatchError(
            f"features dim {m.dim}, embedding shape {e.shape}, weights expect dim {d}"
        )
    gamma = weights.g @ e + weights.g_bias
    beta = weights.h @ e + weights.h_bias
    return FeatureMatrix(m.data.astype(np.float64) * gamma + beta)
