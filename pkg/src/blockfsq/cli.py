"""Command-line interface.

Subcommands: init, encode, decode, bitrate, probe, rdsearch,
sample-dropout, selftest. Exit codes: 0 success, 1 validation or usage
error, 2 runtime or data error. Every randomized command takes an explicit
--seed so reported numbers are reproducible; no command mutates its inputs.
"""

import argparse
import csv
import io
import json
import math
import sys
from pathlib import Path

from . import selftest as _selftest
from .analysis import (
    RdCell,
    TrainConfig,
    extract_probe_features,
    ols_r2,
    probe_report_csv,
    probe_report_text,
    rd_search,
    rd_table_csv,
    rd_table_text,
)
from .bitstream import TokenStream, bitrate, read_tokens, write_tokens
from .dropout import DropoutConfig, marginal_probabilities, sample_active_stages
from .errors import BlockFSQError, FormatError, ValidationError
from .features import gaussian_features, read_feature_file, write_feature_file
from .params_io import ParamsDocument, read_params_file, write_params_file
from .quantizer import QuantizerConfig, decode_indices, encode, init_params
from .rng import Rng

_CONFIG_KEYS = ("K", "d_e", "d_a", "f_e", "f_a", "levels", "epsilon", "frame_rate_hz")


class _Parser(argparse.ArgumentParser):
    # usage problems are validation errors: exit 1, not argparse's default 2
    def error(self, message):
        self.exit(1, f"{self.prog}: error: {message}\n")


def _load_config_json(path):
    with open(path, "r", encoding="utf-8") as fh:
        try:
            obj = json.load(fh)
        except json.JSONDecodeError as exc:
            raise ValidationError(f"{path}: not valid JSON: {exc}") from None
    if not isinstance(obj, dict):
        raise ValidationError(f"{path}: config document must be a JSON object")
    unknown = set(obj) - set(_CONFIG_KEYS) - {"input_dims"}
    if unknown:
        raise ValidationError(f"{path}: unknown config field(s) {sorted(unknown)}")
    input_dims = obj.pop("input_dims", None)
    config = QuantizerConfig(**obj)
    if input_dims is not None:
        if (not isinstance(input_dims, (list, tuple))) or len(input_dims) != 2:
            raise ValidationError("input_dims must be a pair [D_e, D_a]")
        input_dims = (int(input_dims[0]), int(input_dims[1]))
    return config, input_dims


def _parse_int_list(text, what):
    """Accept '2,4,8' or '1-4' style specs."""
    values = []
    for part in text.split(","):
        part = part.strip()
        if not part:
            continue
        if "-" in part[1:]:
            lo, hi = part.split("-", 1)
            lo, hi = int(lo), int(hi)
            if hi < lo:
                raise ValidationError(f"bad range '{part}' in {what}")
            values.extend(range(lo, hi + 1))
        else:
            values.append(int(part))
    if not values:
        raise ValidationError(f"{what} must be a nonempty list")
    return values


def _num(x) -> str:
    text = f"{x:.6g}"
    return text if ("." in text or "e" in text or "inf" in text) else text + ".0"


def _write_text(path, text):
    with open(path, "w", encoding="utf-8") as fh:
        fh.write(text)


# ---------------------------------------------------------------------------
# commands


def _cmd_init(args):
    config, input_dims = _load_config_json(args.config)
    params = init_params(config, Rng(args.seed), input_dims=input_dims)
    write_params_file(ParamsDocument(config, params), args.out)
    print(f"wrote {args.out}: K={config.K}, latent {config.d_e}+{config.d_a}, "
          f"grid {config.f_e}+{config.f_a}, levels {list(config.levels)}")
    return 0


def _cmd_encode(args):
    doc = read_params_file(args.params)
    emotion = read_feature_file(args.emotion)
    acoustic = read_feature_file(args.acoustic)
    stages = args.stages if args.stages is not None else doc.config.K
    cumulative = _parse_int_list(args.cumulative, "--cumulative") if args.cumulative else ()
    result = encode(emotion, acoustic, doc.params, doc.config,
                    active_stages=stages, collect_cumulative_at=cumulative)
    stream = TokenStream.from_config(result.tokens, doc.config)
    write_tokens(stream, args.out)
    prefix = args.cumulative_prefix or str(Path(args.out).with_suffix(""))
    for m, latent in sorted(result.per_stage_cumulative.items()):
        path = f"{prefix}.stage{m}.afct"
        write_feature_file(latent, path)
        print(f"wrote cumulative latent {path}")
    print(f"wrote {args.out}: {stream.frames} frames x {stream.stages} stages, "
          f"commitment {result.commitment:.6g}")
    return 0


def _cmd_decode(args):
    doc = read_params_file(args.params)
    stream = read_tokens(args.tokens, max_stages=args.stages)
    if not stream.matches_config(doc.config):
        raise ValidationError(
            "token stream header (levels/partition) does not match the parameter file"
        )
    latent = decode_indices(stream.tokens, doc.params, doc.config)
    write_feature_file(latent, args.out)
    print(f"wrote {args.out}: {latent.frames} frames x {latent.dim} dims "
          f"from {stream.stages} stages")
    return 0


def _cmd_bitrate(args):
    if not args.params and not args.config:
        raise ValidationError("one of --params or --config is required")
    if args.params:
        config = read_params_file(args.params).config
    else:
        config, _ = _load_config_json(args.config)
    stage_counts = [args.stages] if args.stages is not None else list(range(1, config.K + 1))
    rows = [bitrate(config, k) for k in stage_counts]
    header = f"{'stages':>6} {'kbps':>8} {'emo bits/frame':>15} {'aco bits/frame':>15} {'emo ratio':>10}"
    lines = [header]
    for r in rows:
        lines.append(f"{r.active_stages:>6} {_num(r.total_kbps):>8} "
                     f"{_num(r.emotion_bits_per_frame):>15} {_num(r.acoustic_bits_per_frame):>15} "
                     f"{r.emotion_ratio * 100:>9.4g}%")
    print("\n".join(lines))
    if args.csv:
        buf = io.StringIO()
        w = csv.writer(buf)
        w.writerow(["stages", "kbps", "bits_per_frame_per_stage",
                    "emotion_bits_per_frame", "acoustic_bits_per_frame", "emotion_ratio"])
        for r in rows:
            w.writerow([r.active_stages, repr(r.total_kbps), repr(r.bits_per_frame_per_stage),
                        repr(r.emotion_bits_per_frame), repr(r.acoustic_bits_per_frame),
                        repr(r.emotion_ratio)])
        _write_text(args.csv, buf.getvalue())
        print(f"wrote {args.csv}")
    return 0


def _cmd_probe(args):
    stream = read_tokens(args.tokens)
    target = read_feature_file(args.target)
    if target.frames != stream.frames:
        raise ValidationError(
            f"frame counts differ: tokens {stream.frames}, target {target.frames}"
        )
    notes = []
    try:
        features = extract_probe_features(stream)
    except ValidationError:
        features = extract_probe_features(stream, require_binary=False)
        notes.append("emotion dims are not all binary; probing general grid values")
    report = ols_r2(features, target, split=args.split, rng=Rng(args.seed))
    for note in notes:
        print(f"note: {note}")
    print(probe_report_text(report), end="")
    if args.csv:
        _write_text(args.csv, probe_report_csv(report))
        print(f"wrote {args.csv}")
    return 0


def _read_rd_csv(path, stages):
    with open(path, "r", encoding="utf-8", newline="") as fh:
        reader = csv.DictReader(fh)
        if reader.fieldnames is None:
            raise ValidationError(f"{path}: empty CSV")
        fields = {name.strip().lower(): name for name in reader.fieldnames}
        for required in ("d", "l", "mse"):
            if required not in fields:
                raise ValidationError(f"{path}: missing column '{required}'")
        cells = []
        for row in reader:
            d = int(row[fields["d"]])
            lv = int(row[fields["l"]])
            mse = float(row[fields["mse"]])
            cosine = None
            if "cosine" in fields and row[fields["cosine"]] not in (None, ""):
                cosine = float(row[fields["cosine"]])
            cells.append(RdCell(dims=d, levels_per_dim=lv,
                                bits=stages * d * math.log2(lv),
                                mse=mse, cosine=cosine))
    if not cells:
        raise ValidationError(f"{path}: no data rows")
    return cells


def _cmd_rdsearch(args):
    if args.from_csv:
        cells = _read_rd_csv(args.from_csv, args.stages)
    else:
        if bool(args.data) == bool(args.synthetic):
            raise ValidationError("exactly one of --data or --synthetic is required")
        if args.seed is None:
            raise ValidationError("--seed is required when training")
        if args.data:
            data = read_feature_file(args.data)
        else:
            try:
                frames, dim = (int(v) for v in args.synthetic.lower().split("x"))
            except ValueError:
                raise ValidationError("--synthetic expects FRAMESxDIM, e.g. 20000x16") from None
            data = gaussian_features(Rng(args.seed).spawn(0xDA7A), frames, dim, 1.0)
        dims = _parse_int_list(args.dims, "--dims")
        levels = _parse_int_list(args.levels, "--levels")
        cfg = TrainConfig(iterations=args.iters, learning_rate=args.lr,
                          batch_size=args.batch, seed=args.seed)
        cells = rd_search(data, dims, levels, stages=args.stages, train_cfg=cfg)
    print(rd_table_text(cells), end="")
    if args.csv:
        _write_text(args.csv, rd_table_csv(cells))
        print(f"wrote {args.csv}")
    return 0


def _load_dropout_config(path):
    with open(path, "r", encoding="utf-8") as fh:
        try:
            obj = json.load(fh)
        except json.JSONDecodeError as exc:
            raise ValidationError(f"{path}: not valid JSON: {exc}") from None
    allowed = {"full_K", "dropout_probability", "categorical"}
    unknown = set(obj) - allowed
    if unknown:
        raise ValidationError(f"{path}: unknown field(s) {sorted(unknown)}")
    if "categorical" in obj:
        obj["categorical"] = tuple((int(m), float(p)) for m, p in obj["categorical"])
    return DropoutConfig(**obj)


def _cmd_sample_dropout(args):
    config = _load_dropout_config(args.config) if args.config else DropoutConfig()
    rng = Rng(args.seed)
    counts = {}
    for _ in range(args.n):
        k = sample_active_stages(config, rng)
        counts[k] = counts.get(k, 0) + 1
    expected = marginal_probabilities(config)
    print(f"{'stages':>6} {'count':>10} {'frequency':>10} {'expected':>10}")
    for stage in sorted(set(counts) | set(expected)):
        n = counts.get(stage, 0)
        freq = n / args.n if args.n else 0.0
        print(f"{stage:>6} {n:>10} {freq:>10.5f} {expected.get(stage, 0.0):>10.5f}")
    return 0


def _cmd_selftest(args):
    front_points = None
    results = []
    if args.table5_csv:
        try:
            cells = _read_rd_csv(args.table5_csv, _selftest.REFERENCE_STAGES)
            front_points = _selftest.reference_front_points(
                rows=[(c.dims, c.levels_per_dim, c.mse, c.cosine) for c in cells]
            )
        except (BlockFSQError, OSError, ValueError) as exc:
            results.append(("reference-front", False, f"fixture unreadable: {exc}"))
    results.extend(_selftest.run_all(front_points))
    failed = 0
    for name, passed, detail in results:
        status = "PASS" if passed else "FAIL"
        failed += 0 if passed else 1
        print(f"[{status}] {name}: {detail}")
    print(f"{len(results) - failed}/{len(results)} checks passed")
    return 0 if failed == 0 else 1


# ---------------------------------------------------------------------------
# parser


def build_parser():
    parser = _Parser(prog="blockfsq",
                     description="Partition-preserving residual FSQ tokenizer and analyses")
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("init", parents=[], help="initialize a parameter file")
    p.add_argument("--config", required=True, help="JSON config document")
    p.add_argument("--seed", required=True, type=int)
    p.add_argument("--out", required=True)
    p.set_defaults(func=_cmd_init)

    p = sub.add_parser("encode", help="encode feature files into a token stream")
    p.add_argument("--params", required=True)
    p.add_argument("--emotion", required=True, help="AFCT emotion features")
    p.add_argument("--acoustic", required=True, help="AFCT acoustic features")
    p.add_argument("--stages", type=int, default=None, help="active stages K' (default: all)")
    p.add_argument("--out", required=True, help="AFTK output path")
    p.add_argument("--cumulative", default=None,
                   help="comma list of stage counts whose cumulative latents to dump")
    p.add_argument("--cumulative-prefix", default=None)
    p.set_defaults(func=_cmd_encode)

    p = sub.add_parser("decode", help="decode a token stream to the quantized latent")
    p.add_argument("--params", required=True)
    p.add_argument("--tokens", required=True, help="AFTK input path")
    p.add_argument("--stages", type=int, default=None, help="decode only the first K' stages")
    p.add_argument("--out", required=True, help="AFCT output path")
    p.set_defaults(func=_cmd_decode)

    p = sub.add_parser("bitrate", help="exact bit accounting per active stage count")
    p.add_argument("--params", default=None)
    p.add_argument("--config", default=None)
    p.add_argument("--stages", type=int, default=None)
    p.add_argument("--csv", default=None)
    p.set_defaults(func=_cmd_bitrate)

    p = sub.add_parser("probe", help="linear probe from emotion codes to a target")
    p.add_argument("--tokens", required=True)
    p.add_argument("--target", required=True, help="AFCT target features")
    p.add_argument("--split", type=float, default=0.8)
    p.add_argument("--seed", required=True, type=int)
    p.add_argument("--csv", default=None)
    p.set_defaults(func=_cmd_probe)

    p = sub.add_parser("rdsearch", help="rate-distortion sweep with Pareto/knee report")
    p.add_argument("--data", default=None, help="AFCT feature file")
    p.add_argument("--synthetic", default=None, help="FRAMESxDIM Gaussian stand-in")
    p.add_argument("--dims", default="1-4")
    p.add_argument("--levels", default="2,3,4")
    p.add_argument("--stages", type=int, default=2)
    p.add_argument("--iters", type=int, default=3000)
    p.add_argument("--lr", type=float, default=1e-3)
    p.add_argument("--batch", type=int, default=None)
    p.add_argument("--seed", type=int, default=None)
    p.add_argument("--csv", default=None)
    p.add_argument("--from-csv", dest="from_csv", default=None,
                   help="recompute efficiency/knee from an existing d,L,mse CSV (no training)")
    p.set_defaults(func=_cmd_rdsearch)

    p = sub.add_parser("sample-dropout", help="empirical stage-dropout frequencies")
    p.add_argument("--n", required=True, type=int)
    p.add_argument("--seed", required=True, type=int)
    p.add_argument("--config", default=None, help="JSON dropout config")
    p.set_defaults(func=_cmd_sample_dropout)

    p = sub.add_parser("selftest", help="run built-in consistency checks")
    p.add_argument("--table5-csv", dest="table5_csv", default=None,
                   help="override the reference front fixture")
    p.set_defaults(func=_cmd_selftest)

    return parser


def main(argv=None) -> int:
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
    except SystemExit as exc:
        return int(exc.code or 0)
    try:
        return args.func(args)
    except FormatError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 2
    except ValidationError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 1
    except (BlockFSQError, OSError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 2


if __name__ == "__main__":
    sys.exit(main())
