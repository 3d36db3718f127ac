"""Quantizer parameter file: a JSON text document.

Top-level fields are exactly ``config``, ``pre_e``, ``pre_a``, ``post`` and
``stages`` plus an optional ``cem`` section; unknown fields are rejected so
typos fail loudly. Matrices are nested row-major arrays of decimal numbers.
``post: null`` encodes the identity post-projection. Only block-diagonal
parameters are serializable; dense analysis baselines live in memory only.
"""

import json

import numpy as np

from .conditioning import AttnPoolWeights, CemParams, FilmWeights
from .errors import ValidationError
from .quantizer import QuantizerConfig, QuantizerParams, StageParams

_CONFIG_FIELDS = ("K", "d_e", "d_a", "f_e", "f_a", "levels", "epsilon", "frame_rate_hz")
_STAGE_FIELDS = ("in_e", "in_a", "out_e", "out_a", "ell", "bias")


class ParamsDocument:
    """Config, parameters and optional conditioning weights, as one unit."""

    def __init__(self, config: QuantizerConfig, params: QuantizerParams, cem=None):
        params.validate(config)
        if not config.block_diagonal:
            raise ValidationError("dense parameters cannot be serialized")
        self.config = config
        self.params = params
        self.cem = cem


def _check_keys(obj, allowed, required, where):
    unknown = set(obj) - set(allowed)
    if unknown:
        raise ValidationError(f"unknown field(s) {sorted(unknown)} in {where}")
    missing = set(required) - set(obj)
    if missing:
        raise ValidationError(f"missing field(s) {sorted(missing)} in {where}")


def _matrix(obj, where):
    try:
        arr = np.array(obj, dtype=np.float64)
    except (TypeError, ValueError) as exc:
        raise ValidationError(f"{where} is not a numeric array: {exc}") from None
    if not np.all(np.isfinite(arr)):
        raise ValidationError(f"{where} contains non-finite values")
    return arr


def _listify(arr):
    return np.asarray(arr, dtype=np.float64).tolist()


def params_to_dict(doc: ParamsDocument) -> dict:
    config, params = doc.config, doc.params
    out = {
        "config": {
            "K": config.K,
            "d_e": config.d_e,
            "d_a": config.d_a,
            "f_e": config.f_e,
            "f_a": config.f_a,
            "levels": list(config.levels),
            "epsilon": config.epsilon,
            "frame_rate_hz": config.frame_rate_hz,
        },
        "pre_e": _listify(params.pre_e),
        "pre_a": _listify(params.pre_a),
        "post": None if params.post is None else _listify(params.post),
        "stages": [
            {name: _listify(getattr(stage, name)) for name in _STAGE_FIELDS}
            for stage in params.stages
        ],
    }
    if doc.cem is not None:
        cem = {}
        if doc.cem.attn_pool is not None:
            w = doc.cem.attn_pool
            cem["attn_pool"] = {
                "w1": _listify(w.w1), "b1": _listify(w.b1),
                "w2": _listify(w.w2), "b2": float(w.b2),
            }
        if doc.cem.film is not None:
            w = doc.cem.film
            cem["film"] = {
                "g": _listify(w.g), "g_bias": _listify(w.g_bias),
                "h": _listify(w.h), "h_bias": _listify(w.h_bias),
            }
        out["cem"] = cem
    return out


def params_from_dict(obj: dict) -> ParamsDocument:
    if not isinstance(obj, dict):
        raise ValidationError("parameter document must be a JSON object")
    _check_keys(obj, ("config", "pre_e", "pre_a", "post", "stages", "cem"),
                ("config", "pre_e", "pre_a", "post", "stages"), "parameter document")
    cfg_obj = obj["config"]
    if not isinstance(cfg_obj, dict):
        raise ValidationError("config must be a JSON object")
    _check_keys(cfg_obj, _CONFIG_FIELDS, _CONFIG_FIELDS, "config")
    config = QuantizerConfig(
        K=int(cfg_obj["K"]),
        d_e=int(cfg_obj["d_e"]),
        d_a=int(cfg_obj["d_a"]),
        f_e=int(cfg_obj["f_e"]),
        f_a=int(cfg_obj["f_a"]),
        levels=tuple(int(v) for v in cfg_obj["levels"]),
        epsilon=float(cfg_obj["epsilon"]),
        frame_rate_hz=int(cfg_obj["frame_rate_hz"]),
    )
    stages_obj = obj["stages"]
    if not isinstance(stages_obj, list):
        raise ValidationError("stages must be a JSON array")
    stages = []
    for k, stage_obj in enumerate(stages_obj):
        where = f"stages[{k}]"
        if not isinstance(stage_obj, dict):
            raise ValidationError(f"{where} must be a JSON object")
        _check_keys(stage_obj, _STAGE_FIELDS, _STAGE_FIELDS, where)
        stages.append(StageParams(**{
            name: _matrix(stage_obj[name], f"{where}.{name}") for name in _STAGE_FIELDS
        }))
    post = obj["post"]
    params = QuantizerParams(
        pre_e=_matrix(obj["pre_e"], "pre_e"),
        pre_a=_matrix(obj["pre_a"], "pre_a"),
        stages=stages,
        post=None if post is None else _matrix(post, "post"),
    )
    cem = None
    if "cem" in obj:
        cem_obj = obj["cem"]
        if not isinstance(cem_obj, dict):
            raise ValidationError("cem must be a JSON object")
        _check_keys(cem_obj, ("attn_pool", "film"), (), "cem")
        attn = None
        if "attn_pool" in cem_obj:
            a = cem_obj["attn_pool"]
            _check_keys(a, ("w1", "b1", "w2", "b2"), ("w1", "b1", "w2", "b2"), "cem.attn_pool")
            attn = AttnPoolWeights(
                w1=_matrix(a["w1"], "cem.attn_pool.w1"),
                b1=_matrix(a["b1"], "cem.attn_pool.b1"),
                w2=_matrix(a["w2"], "cem.attn_pool.w2"),
                b2=float(a["b2"]),
            )
            attn.check_shapes()
        film = None
        if "film" in cem_obj:
            f = cem_obj["film"]
            _check_keys(f, ("g", "g_bias", "h", "h_bias"), ("g", "g_bias", "h", "h_bias"), "cem.film")
            film = FilmWeights(
                g=_matrix(f["g"], "cem.film.g"),
                g_bias=_matrix(f["g_bias"], "cem.film.g_bias"),
                h=_matrix(f["h"], "cem.film.h"),
                h_bias=_matrix(f["h_bias"], "cem.film.h_bias"),
            )
            film.check_shapes()
        cem = CemParams(attn_pool=attn, film=film)
    return ParamsDocument(config=config, params=params, cem=cem)


def write_params_file(doc: ParamsDocument, path) -> None:
    with open(path, "w", encoding="utf-8") as fh:
        json.dump(params_to_dict(doc), fh, indent=1)
        fh.write("\n")


def read_params_file(path) -> ParamsDocument:
    with open(path, "r", encoding="utf-8") as fh:
        try:
            obj = json.load(fh)
        except json.JSONDecodeError as exc:
            raise ValidationError(f"{path}: not valid JSON: {exc}") from None
    return params_from_dict(obj)
