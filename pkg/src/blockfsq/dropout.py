"""Biased stage dropout: sampling the active stage count during training.

With probability ``dropout_probability`` the stage count is drawn from a
categorical distribution biased toward fewer stages; otherwise all stages
stay active. The categorical targets must line up with the multi-rate
supervision stages so every operating bitrate gets both training coverage
and its supervision signal.
"""

from dataclasses import dataclass

from .errors import MisalignedScheduleError, ValidationError
from .losses import MultiRateSchedule
from .rng import Rng

_PROB_TOL = 1e-9


@dataclass(frozen=True)
class DropoutConfig:
    """Sampling distribution over active stage counts."""

    full_K: int = 8
    dropout_probability: float = 0.75
    categorical: tuple = ((2, 0.50), (4, 0.30), (8, 0.20))

    def __post_init__(self):
        cat = tuple((int(m), float(p)) for m, p in self.categorical)
        object.__setattr__(self, "categorical", cat)
        if self.full_K < 1:
            raise ValidationError(f"full_K must be >= 1, got {self.full_K}")
        if not 0.0 <= self.dropout_probability <= 1.0:
            raise ValidationError(
                f"dropout_probability must be in [0, 1], got {self.dropout_probability}"
            )
        if not cat:
            # an empty categorical is only reachable when it is never drawn
            if self.dropout_probability != 0.0:
                raise ValidationError(
                    "empty categorical requires dropout_probability == 0"
                )
            return
        for stage, prob in cat:
            if not 1 <= stage <= self.full_K:
                raise ValidationError(f"categorical stage {stage} outside [1, {self.full_K}]")
            if prob < 0:
                raise ValidationError(f"categorical probability must be >= 0, got {prob}")
        total = sum(p for _, p in cat)
        if abs(total - 1.0) > _PROB_TOL:
            raise ValidationError(f"categorical probabilities sum to {total!r}, expected 1")

    def stages(self):
        return tuple(m for m, _ in self.categorical)


def sample_active_stages(config: DropoutConfig, rng: Rng) -> int:
    """One draw of the active stage count; deterministic under seed."""
    if rng.uniform() < config.dropout_probability:
        u = rng.uniform()
        acc = 0.0
        for stage, prob in config.categorical:
            acc += prob
            if u < acc:
                return stage
        return config.categorical[-1][0]
    return config.full_K


def marginal_probabilities(config: DropoutConfig) -> dict:
    """Closed-form marginal p*cat(m) + (1-p)*[m == full_K] per stage count."""
    p = config.dropout_probability
    out = {}
    for stage, prob in config.categorical:
        out[stage] = out.get(stage, 0.0) + p * prob
    out[config.full_K] = out.get(config.full_K, 0.0) + (1.0 - p)
    return dict(sorted(out.items()))


def supervision_points(config: DropoutConfig, schedule: MultiRateSchedule) -> tuple:
    """Stages appearing in both the dropout targets and the multi-rate schedule.

    The two stage sets are required to agree; a mismatch raises with the
    offending stages named, since misaligned configuration silently starves
    one operating point of either training coverage or supervision.
    """
    dropout_stages = set(config.stages())
    schedule_stages = set(schedule.stages())
    if dropout_stages != schedule_stages:
        missing = sorted(dropout_stages ^ schedule_stages)
        raise MisalignedScheduleError(
            f"dropout targets {sorted(dropout_stages)} and schedule stages "
            f"{sorted(schedule_stages)} disagree on {missing}"
        )
    return tuple(sorted(dropout_stages | schedule_stages))
