"""Desk-scale analyses: linear leakage probe, STE trainer, rate-distortion
sweep with Pareto front and knee detection.

The trainer is intentionally minimal -- adaptive-moment updates on the stage
parameters of a quantizer, driven by :func:`blockfsq.quantizer.ste_backward`
-- just enough to run the rate-distortion cells and the probe baselines on
synthetic data. Pre- and post-projections stay frozen.
"""

import csv
import io
import math
from dataclasses import dataclass, replace

import numpy as np

from .bitstream import TokenStream
from .errors import (
    NonFiniteDataError,
    ProbeError,
    ShapeMismatchError,
    TrainingDivergedError,
    ValidationError,
)
from .features import FeatureMatrix, as_features
from .grid import LevelSpec, codes_to_values, unpack_index
from .quantizer import QuantizerConfig, encode, init_params, ste_backward
from .rng import Rng

_TIKHONOV = 1e-8


# ---------------------------------------------------------------------------
# trainer


@dataclass(frozen=True)
class TrainConfig:
    """Optimization settings for the compact quantizer trainer."""

    iterations: int = 3000
    learning_rate: float = 1e-3
    batch_size: int | None = 1024  # None = full batch
    seed: int = 0
    beta1: float = 0.9
    beta2: float = 0.999
    adam_epsilon: float = 1e-8
    commitment_weight: float = 0.25

    def __post_init__(self):
        if self.iterations < 0:
            raise ValidationError("iterations must be nonnegative")
        if not self.learning_rate > 0:
            raise ValidationError("learning_rate must be positive")
        if self.batch_size is not None and self.batch_size < 1:
            raise ValidationError("batch_size must be >= 1 or None")
        if not (0.0 <= self.beta1 < 1.0 and 0.0 <= self.beta2 < 1.0):
            raise ValidationError("moment decay rates must lie in [0, 1)")
        if not self.adam_epsilon > 0:
            raise ValidationError("adam_epsilon must be positive")
        if self.commitment_weight < 0:
            raise ValidationError("commitment_weight must be nonnegative")


class _Adam:
    """Adaptive-moment updates, one slot pair per named parameter array."""

    def __init__(self, cfg: TrainConfig):
        self.cfg = cfg
        self.first = {}
        self.second = {}
        self.t = 0

    def step(self, named_params, named_grads):
        cfg = self.cfg
        self.t += 1
        corr1 = 1.0 - cfg.beta1 ** self.t
        corr2 = 1.0 - cfg.beta2 ** self.t
        for key, param in named_params.items():
            grad = named_grads[key]
            if key not in self.first:
                self.first[key] = np.zeros_like(param)
                self.second[key] = np.zeros_like(param)
            m = self.first[key]
            v = self.second[key]
            m *= cfg.beta1
            m += (1.0 - cfg.beta1) * grad
            v *= cfg.beta2
            v += (1.0 - cfg.beta2) * grad * grad
            param -= cfg.learning_rate * (m / corr1) / (np.sqrt(v / corr2) + cfg.adam_epsilon)


def _split_inputs(data: FeatureMatrix, params):
    d_in_e, d_in_a = params.input_dims
    if data.dim != d_in_e + d_in_a:
        raise ShapeMismatchError(
            f"data dim {data.dim} does not match pre-projection inputs {d_in_e}+{d_in_a}"
        )
    fe = FeatureMatrix(data.data[:, :d_in_e])
    fa = None if d_in_a == 0 else FeatureMatrix(data.data[:, d_in_e:])
    return fe, fa


def train_quantizer(data, params, config: QuantizerConfig, train_cfg: TrainConfig = TrainConfig()):
    """Gradient steps on stage parameters to reconstruct ``data`` through
    the quantizer.

    The loss is mean squared reconstruction error of the latent plus the
    weighted commitment term; gradients flow through the straight-through
    backward pass. Returns ``(trained_params, loss_curve)`` where the curve
    holds the loss seen before each update. The input params are cloned,
    never mutated.
    """
    data = as_features(data)
    if data.frames < 1:
        raise ValidationError("training data must contain at least one frame")
    params = params.clone()
    params.validate(config)
    fe_full, fa_full = _split_inputs(data, params)
    d_in_e = fe_full.dim
    rng = Rng(train_cfg.seed)
    opt = _Adam(train_cfg)
    curve = []
    frames = data.frames
    batch = train_cfg.batch_size
    for it in range(train_cfg.iterations):
        if batch is None or batch >= frames:
            fe, fa = fe_full, fa_full
        else:
            idx = np.minimum((rng.uniforms(batch) * frames).astype(np.int64), frames - 1)
            fe = FeatureMatrix(data.data[idx, :d_in_e])
            fa = None if fa_full is None else FeatureMatrix(data.data[idx, d_in_e:])
        try:
            result = encode(fe, fa, params, config)
        except NonFiniteDataError:
            # parameters blew up far enough that the forward pass overflows
            raise TrainingDivergedError(it, float("inf")) from None
        err = result.cache.accum - result.cache.latent
        loss = float(np.mean(err * err)) + train_cfg.commitment_weight * result.commitment
        if not math.isfinite(loss):
            raise TrainingDivergedError(it, loss)
        curve.append(loss)
        grads = ste_backward(result, (2.0 / err.size) * err,
                             commitment_weight=train_cfg.commitment_weight)
        named_params = {}
        named_grads = {}
        for k, (stage, g) in enumerate(zip(params.stages, grads.stages)):
            for name, arr in stage.param_arrays().items():
                named_params[(k, name)] = arr
                named_grads[(k, name)] = g[name]
        opt.step(named_params, named_grads)
    return params, curve


@dataclass(frozen=True)
class QuantizerMetrics:
    mse: float
    cosine: float
    commitment: float
    zero_norm_frames: int


def quantizer_metrics(data, params, config: QuantizerConfig, active_stages=None) -> QuantizerMetrics:
    """Reconstruction MSE, mean per-frame cosine similarity and commitment
    of the quantizer on ``data``. Zero-norm frames are skipped in the cosine
    average and counted."""
    data = as_features(data)
    fe, fa = _split_inputs(data, params)
    result = encode(fe, fa, params, config, active_stages=active_stages)
    latent = result.cache.latent
    accum = result.cache.accum
    err = accum - latent
    mse = float(np.mean(err * err)) if err.size else 0.0
    norms_a = np.linalg.norm(accum, axis=1)
    norms_b = np.linalg.norm(latent, axis=1)
    keep = (norms_a > 0) & (norms_b > 0)
    skipped = int(latent.shape[0] - keep.sum())
    if keep.any():
        dots = np.sum(accum[keep] * latent[keep], axis=1)
        cosine = float(np.mean(dots / (norms_a[keep] * norms_b[keep])))
    else:
        cosine = float("nan")
    return QuantizerMetrics(mse=mse, cosine=cosine, commitment=result.commitment,
                            zero_norm_frames=skipped)


# ---------------------------------------------------------------------------
# rate-distortion sweep


@dataclass
class RdCell:
    """One trained configuration of the rate-distortion sweep."""

    dims: int
    levels_per_dim: int
    bits: float
    mse: float | None = None
    cosine: float | None = None
    initial_loss: float | None = None
    final_loss: float | None = None
    error: str | None = None


def rd_search(data, dims, levels, stages: int = 2,
              train_cfg: TrainConfig = TrainConfig()) -> list:
    """Train every (dims, levels) combination in isolation and score it.

    Each cell is a dense single-stream quantizer over the raw features
    (identity pre-projection) with ``dims`` grid dimensions of
    ``levels_per_dim`` levels and ``stages`` residual stages. Bits are the
    exact ``stages * dims * log2(levels)`` -- unrounded, as the efficiency
    column needs them. Trainer failures are recorded per cell and do not
    abort the sweep.
    """
    data = as_features(data)
    dim_list = sorted({int(v) for v in dims})
    level_list = sorted({int(v) for v in levels})
    if not dim_list or not level_list:
        raise ValidationError("dims and levels must be nonempty")
    if any(v < 1 for v in dim_list):
        raise ValidationError("grid dims must be >= 1")
    if any(v < 2 for v in level_list):
        raise ValidationError("levels must be >= 2")
    if stages < 1:
        raise ValidationError("stages must be >= 1")
    base = Rng(train_cfg.seed)
    cells = []
    index = 0
    for d_q in dim_list:
        for lv in level_list:
            bits = stages * d_q * math.log2(lv)
            cell_rng = base.spawn(index)
            index += 1
            config = QuantizerConfig(
                K=stages, d_e=data.dim, d_a=0, f_e=d_q, f_a=0,
                levels=(lv,) * d_q, epsilon=0.1, frame_rate_hz=50,
                block_diagonal=False,
            )
            params = init_params(config, cell_rng, input_dims=(data.dim, 0))
            params.pre_e = np.eye(data.dim)  # quantize the features themselves
            cell_cfg = replace(train_cfg, seed=cell_rng.seed)
            try:
                before = quantizer_metrics(data, params, config)
                initial = before.mse + train_cfg.commitment_weight * before.commitment
                trained, _ = train_quantizer(data, params, config, cell_cfg)
                after = quantizer_metrics(data, trained, config)
                final = after.mse + train_cfg.commitment_weight * after.commitment
                cells.append(RdCell(d_q, lv, bits, mse=after.mse, cosine=after.cosine,
                                    initial_loss=initial, final_loss=final))
            except TrainingDivergedError as exc:
                cells.append(RdCell(d_q, lv, bits, error=str(exc)))
    return cells


# ---------------------------------------------------------------------------
# Pareto front and knee


@dataclass(frozen=True)
class ParetoPoint:
    """(bits, mse) point with its sweep coordinates and efficiency."""

    dims: int | None
    levels_per_dim: int | None
    bits: float
    mse: float
    cosine: float | None = None
    marginal_efficiency: float | None = None


def _as_point(p) -> ParetoPoint:
    if isinstance(p, ParetoPoint):
        return p
    if isinstance(p, RdCell):
        if p.error is not None or p.mse is None:
            raise ValidationError(f"cell ({p.dims}, {p.levels_per_dim}) has no score")
        return ParetoPoint(p.dims, p.levels_per_dim, p.bits, p.mse, p.cosine)
    raise ValidationError(f"cannot interpret {type(p).__name__} as a rate-distortion point")


def pareto_front(points) -> list:
    """Non-dominated subset under (bits up, mse down), sorted by bits.

    A point is dominated when another point has no more bits and no more
    mse, strictly better in at least one; exact duplicates keep their first
    occurrence. The result has strictly increasing bits and strictly
    decreasing mse.
    """
    pts = []
    seen = set()
    for p in points:
        if isinstance(p, RdCell) and p.error is not None:
            continue
        q = _as_point(p)
        key = (q.bits, q.mse)
        if key in seen:
            continue
        seen.add(key)
        pts.append(q)
    front = []
    for p in pts:
        dominated = any(
            q.bits <= p.bits and q.mse <= p.mse and (q.bits < p.bits or q.mse < p.mse)
            for q in pts
        )
        if not dominated:
            front.append(p)
    front.sort(key=lambda p: p.bits)
    return front


def marginal_efficiency(front) -> list:
    """Annotate a bits-sorted front with mse reduction per extra bit.

    Efficiency of point i (i >= 1) is ``(mse[i-1] - mse[i]) / (bits[i] -
    bits[i-1]) * 1e3``, i.e. in 1e-3 mse-per-bit units; the first point has
    none.
    """
    pts = [_as_point(p) for p in front]
    if len(pts) < 2:
        raise ValidationError("marginal efficiency needs at least 2 points")
    out = [replace(pts[0], marginal_efficiency=None)]
    for prev, cur in zip(pts, pts[1:]):
        if not cur.bits > prev.bits:
            raise ValidationError("front must be sorted with strictly increasing bits")
        eff = (prev.mse - cur.mse) / (cur.bits - prev.bits) * 1e3
        out.append(replace(cur, marginal_efficiency=eff))
    return out


def find_knee(front) -> int | None:
    """Index of the first interior point whose efficiency at least doubles
    the next point's, i.e. where efficiency drops by more than half; None
    when no such drop exists."""
    if len(front) < 3:
        raise ValidationError("knee detection needs at least 3 points")
    annotated = marginal_efficiency(front)
    effs = [p.marginal_efficiency for p in annotated]
    for i in range(1, len(annotated) - 1):
        if effs[i] >= 2.0 * effs[i + 1]:
            return i
    return None


def select_operating_point(front):
    """(knee index, selected index): the selection is one step past the knee."""
    knee = find_knee(front)
    if knee is None:
        return None, None
    selected = knee + 1 if knee + 1 < len(front) else None
    return knee, selected


# ---------------------------------------------------------------------------
# linear probe


@dataclass(frozen=True)
class ProbeReport:
    """Held-out R-squared of the intercept-augmented least-squares probe."""

    r2_global: float
    r2_per_target_mean: float
    r2_per_target_median: float
    r2_random_baseline: float
    n_train: int
    n_test: int
    n_features: int
    r2_train_global: float
    excluded_targets: int
    notes: tuple = ()


def _design(x):
    return np.concatenate([np.ones((x.shape[0], 1)), x], axis=1)


def _fit_ols(x_train, y_train):
    a = _design(x_train)
    gram = a.T @ a + _TIKHONOV * np.eye(a.shape[1])
    try:
        beta = np.linalg.solve(gram, a.T @ y_train)
    except np.linalg.LinAlgError as exc:
        raise ProbeError(f"normal equations could not be solved: {exc}") from None
    if not np.all(np.isfinite(beta)):
        raise ProbeError("probe solution is non-finite")
    return beta


def _evaluate_r2(beta, x, y):
    pred = _design(x) @ beta
    sse = np.sum((y - pred) ** 2, axis=0)
    sst = np.sum((y - y.mean(axis=0)) ** 2, axis=0)
    total_sst = float(sst.sum())
    if total_sst <= 0:
        raise ProbeError("every target column is constant; R^2 undefined")
    global_r2 = 1.0 - float(sse.sum()) / total_sst
    keep = sst > 0
    per_target = 1.0 - sse[keep] / sst[keep]
    return global_r2, per_target, int((~keep).sum())


def ols_r2(x, y, split: float = 0.8, rng: Rng = None) -> ProbeReport:
    """Fit x -> y by least squares on a train split, score R^2 held out.

    The fit is intercept-augmented with a 1e-8 Tikhonov guard on the normal
    equations; the global R^2 pools error and variance over all targets. The
    random baseline refits after independently permuting every column of x,
    destroying any linear relation while keeping the marginals.
    """
    if rng is None:
        raise ValidationError("ols_r2 requires an Rng for the split and baseline")
    x = as_features(x).data.astype(np.float64)
    y = as_features(y).data.astype(np.float64)
    n, p = x.shape
    if y.shape[0] != n:
        raise ShapeMismatchError(f"x has {n} rows, y has {y.shape[0]}")
    if n < p + 2:
        raise ValidationError(f"need at least p + 2 = {p + 2} samples, got {n}")
    if not 0.0 < split < 1.0:
        raise ValidationError(f"split must be in (0, 1), got {split}")
    perm = rng.permutation(n)
    n_train = int(round(n * split))
    n_train = min(max(n_train, p + 1), n - 1)
    train_idx = perm[:n_train]
    test_idx = perm[n_train:]

    notes = []
    rank = np.linalg.matrix_rank(_design(x[train_idx]))
    if rank < p + 1:
        notes.append(f"rank-deficient design: rank {rank} < {p + 1}; Tikhonov guard applied")

    beta = _fit_ols(x[train_idx], y[train_idx])
    r2_global, per_target, excluded = _evaluate_r2(beta, x[test_idx], y[test_idx])
    r2_train, _, _ = _evaluate_r2(beta, x[train_idx], y[train_idx])
    if excluded:
        notes.append(f"{excluded} constant target column(s) excluded from per-target stats")

    shuffled = np.empty_like(x)
    for j in range(p):
        shuffled[:, j] = x[rng.permutation(n), j]
    beta_b = _fit_ols(shuffled[train_idx], y[train_idx])
    r2_baseline, _, _ = _evaluate_r2(beta_b, shuffled[test_idx], y[test_idx])

    if per_target.size:
        per_mean = float(np.mean(per_target))
        per_median = float(np.median(per_target))
    else:
        per_mean = per_median = float("nan")
    return ProbeReport(
        r2_global=r2_global,
        r2_per_target_mean=per_mean,
        r2_per_target_median=per_median,
        r2_random_baseline=r2_baseline,
        n_train=int(n_train),
        n_test=int(n - n_train),
        n_features=int(p),
        r2_train_global=r2_train,
        excluded_targets=excluded,
        notes=tuple(notes),
    )


def extract_probe_features(stream: TokenStream, require_binary: bool = True) -> FeatureMatrix:
    """Per-frame emotion-partition code values, concatenated stage-major.

    With two-level emotion dims the features are exactly +/-1 per dimension
    per stage (the classic binary probe input); other level counts emit the
    general grid values and require ``require_binary=False``.
    """
    spec = stream.level_spec
    f_e = spec.emotion_dims
    if f_e < 1:
        raise ValidationError("token stream has no emotion partition")
    emo_levels = spec.levels[:f_e]
    if require_binary and any(v != 2 for v in emo_levels):
        raise ValidationError(
            f"emotion levels {emo_levels} are not all 2; pass require_binary=False "
            "to probe general grid values"
        )
    sub_spec = LevelSpec(emo_levels, emotion_dims=f_e)
    emotion_index = stream.tokens % sub_spec.codes_per_stage
    codes = unpack_index(emotion_index, sub_spec)       # (T, K, f_e)
    values = codes_to_values(codes, sub_spec)
    return FeatureMatrix(values.reshape(stream.frames, stream.stages * f_e))


# ---------------------------------------------------------------------------
# report rendering


def probe_report_csv(report: ProbeReport) -> str:
    buf = io.StringIO()
    writer = csv.writer(buf)
    fields = ("r2_global", "r2_per_target_mean", "r2_per_target_median",
              "r2_random_baseline", "r2_train_global", "n_train", "n_test",
              "n_features", "excluded_targets")
    writer.writerow(fields)
    writer.writerow([repr(getattr(report, f)) if isinstance(getattr(report, f), float)
                     else getattr(report, f) for f in fields])
    return buf.getvalue()


def probe_report_text(report: ProbeReport) -> str:
    rows = [
        ("R^2 (global, test)", f"{report.r2_global: .6f}"),
        ("R^2 (per-target mean)", f"{report.r2_per_target_mean: .6f}"),
        ("R^2 (per-target median)", f"{report.r2_per_target_median: .6f}"),
        ("R^2 (random baseline)", f"{report.r2_random_baseline: .6f}"),
        ("R^2 (global, train)", f"{report.r2_train_global: .6f}"),
        ("train/test frames", f"{report.n_train}/{report.n_test}"),
        ("probe features", f"{report.n_features}"),
    ]
    if report.excluded_targets:
        rows.append(("excluded targets", str(report.excluded_targets)))
    width = max(len(name) for name, _ in rows)
    lines = [f"{name.ljust(width)}  {value}" for name, value in rows]
    lines.extend(f"note: {note}" for note in report.notes)
    return "\n".join(lines) + "\n"


def _fmt(value, digits=4, width=None):
    if value is None:
        text = "-"
    elif isinstance(value, float):
        text = f"{value:.{digits}f}"
    else:
        text = str(value)
    return text if width is None else text.rjust(width)


def annotate_cells(cells):
    """(front with efficiencies, knee index, selected index) for a sweep."""
    front = pareto_front(cells)
    if len(front) >= 2:
        front = marginal_efficiency(front)
    knee = selected = None
    if len(front) >= 3:
        knee, selected = select_operating_point(front)
    return front, knee, selected


def rd_table_text(cells) -> str:
    """Aligned table in (d, L, bits, mse, cosine, efficiency) column order;
    the knee row is starred, the selected row flagged, dominated rows plain."""
    front, knee, selected = annotate_cells(cells)
    position = {(p.bits, p.mse): i for i, p in enumerate(front)}
    header = f"{'':2} {'d':>3} {'L':>3} {'bits':>9} {'mse':>10} {'cosine':>8} {'eff':>8}"
    lines = [header]
    for cell in cells:
        if cell.error is not None:
            lines.append(f"{'':2} {cell.dims:>3} {cell.levels_per_dim:>3} "
                         f"{_fmt(cell.bits, 4, 9)} {'failed':>10} {'-':>8} {'-':>8}  {cell.error}")
            continue
        idx = position.get((cell.bits, cell.mse))
        marker = "  "
        eff = None
        if idx is not None:
            eff = front[idx].marginal_efficiency
            if idx == knee:
                marker = "* "
            elif idx == selected:
                marker = "> "
        lines.append(
            f"{marker}{cell.dims:>3} {cell.levels_per_dim:>3} {_fmt(cell.bits, 4, 9)} "
            f"{_fmt(cell.mse, 4, 10)} {_fmt(cell.cosine, 4, 8)} {_fmt(eff, 1, 8)}"
        )
    if knee is not None:
        lines.append(f"knee: (d={front[knee].dims}, L={front[knee].levels_per_dim})")
    if selected is not None:
        lines.append(f"selected: (d={front[selected].dims}, L={front[selected].levels_per_dim})")
    return "\n".join(lines) + "\n"


def rd_table_csv(cells) -> str:
    front, knee, selected = annotate_cells(cells)
    position = {(p.bits, p.mse): i for i, p in enumerate(front)}
    buf = io.StringIO()
    writer = csv.writer(buf)
    writer.writerow(["d", "L", "bits", "mse", "cosine", "on_front",
                     "marginal_efficiency", "knee", "selected", "error"])
    for cell in cells:
        idx = None
        if cell.error is None:
            idx = position.get((cell.bits, cell.mse))
        eff = front[idx].marginal_efficiency if idx is not None else None
        writer.writerow([
            cell.dims, cell.levels_per_dim, repr(cell.bits),
            "" if cell.mse is None else repr(cell.mse),
            "" if cell.cosine is None else repr(cell.cosine),
            int(idx is not None),
            "" if eff is None else repr(eff),
            int(idx is not None and idx == knee),
            int(idx is not None and idx == selected),
            cell.error or "",
        ])
    return buf.getvalue()
