"""Loss functions and combiners for the multi-rate training objective.

Spectral, adversarial and feature-matching terms need audio backbones this
package does not ship, so they enter as caller-supplied scalars; everything
that operates on feature matrices or embeddings is computed here.
"""

import math
from dataclasses import dataclass

import numpy as np

from .errors import MissingTermError, ShapeMismatchError, ValidationError
from .features import as_features


@dataclass(frozen=True)
class LossWeights:
    """Weighting coefficients of the combined objective."""

    mel: float = 15.0
    gen: float = 1.0
    feat: float = 2.0
    commit: float = 0.25
    emo: float = 25.0
    cycle: float = 25.0
    mr: float = 1.0

    def __post_init__(self):
        for name, value in vars(self).items():
            if value < 0:
                raise ValidationError(f"loss weight {name} must be nonnegative, got {value}")


@dataclass(frozen=True)
class MultiRateSchedule:
    """Per-stage supervision weights for intermediate bitrate operating points.

    ``entries`` holds ``(stage, mel_weight, cycle_weight)`` triples with
    strictly increasing stages. ``eta`` records the single cycle coefficient
    when the schedule was built via :meth:`from_eta`; the split-weight form
    is the default.
    """

    entries: tuple = ((2, 0.5, 0.5), (4, 0.3, 0.3), (8, 0.0, 0.0))
    eta: float | None = None

    def __post_init__(self):
        entries = tuple((int(m), float(wm), float(wc)) for m, wm, wc in self.entries)
        object.__setattr__(self, "entries", entries)
        stages = [m for m, _, _ in entries]
        if any(b <= a for a, b in zip(stages, stages[1:])):
            raise ValidationError(f"schedule stages must be strictly increasing, got {stages}")
        if any(m < 1 for m in stages):
            raise ValidationError("schedule stages must be >= 1")
        if any(wm < 0 or wc < 0 for _, wm, wc in entries):
            raise ValidationError("schedule weights must be nonnegative")

    @classmethod
    def from_eta(cls, stage_weights, eta: float) -> "MultiRateSchedule":
        """Build the single-coefficient form: weight w_m on mel, w_m * eta on cycle."""
        if eta < 0:
            raise ValidationError(f"eta must be nonnegative, got {eta}")
        entries = tuple((int(m), float(w), float(w) * float(eta)) for m, w in stage_weights)
        return cls(entries=entries, eta=float(eta))

    def stages(self):
        return tuple(m for m, _, _ in self.entries)


def emotion_feature_loss(predicted, target) -> float:
    """Mean squared element difference between two feature matrices."""
    p = as_features(predicted)
    t = as_features(target)
    if p.shape != t.shape:
        raise ShapeMismatchError(f"shapes differ: {p.shape} vs {t.shape}")
    diff = p.data.astype(np.float64) - t.data.astype(np.float64)
    return float(np.mean(diff * diff)) if diff.size else 0.0


def mean_pool(features) -> np.ndarray:
    """Temporal mean of a feature matrix, for embedding-level losses."""
    m = as_features(features)
    if m.frames < 1:
        raise ValidationError("mean pooling requires at least one frame")
    return m.data.astype(np.float64).mean(axis=0)


def cycle_loss(predicted_embedding, target_embedding) -> float:
    """Cosine distance (1 - cos) between two nonzero embedding vectors."""
    a = np.asarray(predicted_embedding, dtype=np.float64).ravel()
    b = np.asarray(target_embedding, dtype=np.float64).ravel()
    if a.shape != b.shape:
        raise ShapeMismatchError(f"embedding lengths differ: {a.shape} vs {b.shape}")
    na = math.sqrt(float(a @ a))
    nb = math.sqrt(float(b @ b))
    if na == 0.0 or nb == 0.0:
        raise ValidationError("cycle loss is undefined for zero embeddings")
    return 1.0 - float(a @ b) / (na * nb)


def multirate_loss(per_stage_terms, schedule: MultiRateSchedule) -> float:
    """Weighted sum of per-stage (mel, cycle) terms under the schedule.

    Stages whose mel and cycle weights are both zero may be omitted from the
    map; any scheduled stage with a nonzero weight must be supplied.
    """
    total = 0.0
    for stage, w_mel, w_cycle in schedule.entries:
        if stage not in per_stage_terms:
            if w_mel == 0.0 and w_cycle == 0.0:
                continue
            raise MissingTermError(f"schedule requires a term for stage {stage}")
        mel, cycle = per_stage_terms[stage]
        total += w_mel * float(mel) + w_cycle * float(cycle)
    return total


def combine_reconstruction(mel: float, gen: float, feat: float,
                           weights: LossWeights = LossWeights()) -> float:
    """Fold externally computed mel / generator / feature-matching scalars
    into the single reconstruction term."""
    return weights.mel * float(mel) + weights.gen * float(gen) + weights.feat * float(feat)


def total_loss(rec: float, commit: float, emo: float, cycle: float, mr: float,
               weights: LossWeights = LossWeights()) -> float:
    """Combined objective: rec + a*commit + b*emo + l*cycle + d*mr."""
    terms = (rec, commit, emo, cycle, mr)
    if not all(math.isfinite(float(v)) for v in terms):
        raise ValidationError(f"loss terms must be finite, got {terms}")
    return (float(rec)
            + weights.commit * float(commit)
            + weights.emo * float(emo)
            + weights.cycle * float(cycle)
            + weights.mr * float(mr))
