"""``idgeom`` command line.

Every subcommand reads files (``-`` is stdin), writes plot-ready tables, and
exits 0 unless a fatal error occurred. Row-level failures become null cells
and an ``error`` column instead of aborting the run. Fatal errors print one
JSON object on stderr and exit 2.
"""

from __future__ import annotations

import argparse
import csv
import io
import json
import math
import sys
from pathlib import Path
from typing import Any, Sequence

import numpy as np

from . import __version__
from .analysis import CORRELATIONS, metric_matrix
from .core import PointCloud, RngSpec, get_threads, parallel_map, thread_limit
from .errors import IdGeomError, InvalidArgument, InvalidInput
from .estimators import DEFAULT_WINDOW, METHODS, EstimatorConfig, PhdConfig, estimate_all
from .formats import encode, read_jsonl, read_matrices, read_path, write_jsonl
from .perturb import DEFAULT_P, KINDS as PERTURB_KINDS, HomoglyphMap, transform
from .report import Report, config_hash, merge
from .reprops import (
    AGGREGATIONS,
    SaeWeights,
    SteeringSpec,
    Unembedding,
    aggregate_feature,
    entropy_scale_sweep,
    mean_entropy,
    sae_forward,
    sign_flip_construction,
    steer,
)
from .spectral import anisotropy
from .synth import KINDS as SYNTH_KINDS, sample_manifold
from .textstats import GZIP_LEVEL, Document, default_function_words, document_metrics, parse_word_list

SHORT_LIMIT = 150
EXIT_FATAL = 2

ANNOTATION_KEYS = ("tokens", "lemmas", "pos", "sentences")


class Fatal(Exception):
    """Abort the run with a structured diagnostic."""

    def __init__(self, message: str, **context):
        super().__init__(message)
        self.context = context


# ----------------------------------------------------------------------------
# helpers
# ----------------------------------------------------------------------------


def _int_list(text: str) -> list[int]:
    try:
        return [int(t) for t in text.split(",") if t.strip()]
    except ValueError:
        raise argparse.ArgumentTypeError(f"expected comma-separated integers, got {text!r}")


def _float_list(text: str) -> list[float]:
    try:
        return [float(t) for t in text.split(",") if t.strip()]
    except ValueError:
        raise argparse.ArgumentTypeError(f"expected comma-separated numbers, got {text!r}")


def _methods(text: str) -> tuple[str, ...]:
    methods = tuple(m.strip() for m in text.split(",") if m.strip())
    bad = [m for m in methods if m not in METHODS]
    if bad or not methods:
        raise argparse.ArgumentTypeError(f"methods must be drawn from {','.join(METHODS)}")
    return methods


def _window(text: str):
    if text.lower() == "none":
        return None
    vals = _float_list(text)
    if len(vals) != 2 or not vals[0] < vals[1]:
        raise argparse.ArgumentTypeError("window must be 'lo,hi' with lo < hi, or 'none'")
    return (vals[0], vals[1])


def _source_name(path: str) -> str:
    return "stdin" if path == "-" else path


def _read(path: str) -> bytes:
    try:
        return read_path(path)
    except OSError as exc:
        raise Fatal(f"cannot read {path}: {exc.strerror or exc}", path=path)


def _read_text(path: str) -> str:
    try:
        return _read(path).decode("utf-8")
    except UnicodeDecodeError as exc:
        raise Fatal(f"{path} is not UTF-8: {exc}", path=path)


def _read_records(paths: Sequence[str]):
    records = []
    for path in paths:
        try:
            records.extend(read_matrices(_read(path), _source_name(path)))
        except InvalidInput as exc:
            raise Fatal(str(exc), path=path)
    return records


def _single_matrix(path: str, what: str) -> np.ndarray:
    records = _read_records([path])
    if not records:
        raise Fatal(f"no matrix parsed from {what} file", path=path)
    return records[0].matrix


def _write_bytes(path: str, payload: bytes) -> None:
    if path == "-":
        sys.stdout.buffer.write(payload)
        sys.stdout.buffer.flush()
    else:
        Path(path).write_bytes(payload)


def _write_text(path: str, text: str) -> None:
    _write_bytes(path, text.encode("utf-8"))


def _emit(report: Report, out: str | None, fmt: str) -> None:
    """``--out stem`` writes JSON and CSV side by side; otherwise stdout."""
    if out and out != "-":
        report.write(out)
    else:
        _write_text("-", report.to_json() if fmt == "json" else report.to_csv())


def _metadata(command: str, config: dict, seed: int | None, metrics: list[str]) -> dict:
    return {"command": command, "config_hash": config_hash(config), "config": config,
            "seed": seed, "tool_version": __version__, "metrics": metrics}


def _pool(items: list) -> tuple[int, int | None]:
    """Split the worker budget: items in parallel, or estimators in parallel."""
    total = get_threads()
    if len(items) > 1 and total > 1:
        return min(total, len(items)), 1
    return 1, None


# ----------------------------------------------------------------------------
# subcommands
# ----------------------------------------------------------------------------


def cmd_estimate(args) -> int:
    records = _read_records(args.inputs)
    if not records:
        raise Fatal("no clouds parsed", inputs=list(args.inputs))
    phd = PhdConfig(sizes=tuple(args.phd_sizes) if args.phd_sizes else None,
                    restarts=args.phd_restarts, rng=RngSpec(args.seed))
    config = EstimatorConfig(methods=args.methods, phd=phd, twonn_discard=args.discard,
                             mle_k=args.k, tle_k=args.k, window=args.window)
    outer, inner = _pool(records)

    def run(rec) -> dict[str, Any]:
        row: dict[str, Any] = {"n": int(rec.matrix.shape[0]), "D": int(rec.matrix.shape[1]),
                               "short": rec.matrix.shape[0] < SHORT_LIMIT}
        try:
            cloud = PointCloud(rec.matrix, label=rec.label)
        except IdGeomError as exc:
            ests = {}
            row["error"] = f"{type(exc).__name__}: {exc}"
        else:
            ests = estimate_all(cloud, config, threads=inner)
            errors = [f"{m}: {e.diagnostics['error']}" for m, e in ests.items()
                      if "error" in e.diagnostics]
            row["error"] = "; ".join(errors) or None
        for m in config.methods:
            e = ests.get(m)
            row[m] = e.value if e is not None else None
            row[f"{m}_valid"] = e.valid if e is not None else False
            if m == "phd":
                samples = [s for s in (e.samples if e else ()) if math.isfinite(s)]
                row["phd_restart_std"] = float(np.std(samples)) if len(samples) > 1 else None
        return row

    rows = parallel_map(run, records, outer)
    cfg = {"methods": list(config.methods), "seed": args.seed, "k": args.k,
           "phd_sizes": args.phd_sizes, "phd_restarts": args.phd_restarts,
           "discard": args.discard, "window": list(args.window) if args.window else None}
    report = Report(metadata=_metadata("estimate", cfg, args.seed, list(config.methods)))
    for rec, row in zip(records, rows):
        report.add_row(rec.label, row)
    _emit(report, args.out, args.format)
    return 0


def cmd_spectral(args) -> int:
    records = _read_records(args.inputs)
    if not records:
        raise Fatal("no clouds parsed", inputs=list(args.inputs))
    centered = {"mixed": None, "centered": True, "raw": False}[args.mode]
    ev_cols = [f"ev_{k}" for k in args.ks]
    metrics = ["mev", *ev_cols, "schatten2", "effective_rank", "resultant_length"]

    def run(rec) -> dict[str, Any]:
        row: dict[str, Any] = {"n": int(rec.matrix.shape[0]), "D": int(rec.matrix.shape[1]),
                               "short": rec.matrix.shape[0] < SHORT_LIMIT}
        row.update(dict.fromkeys([*metrics, "zero_norm_rows", "ev_curve"]))
        try:
            rec_ = anisotropy(PointCloud(rec.matrix), ks=args.ks, centered=centered,
                              k_max=args.k_max)
        except IdGeomError as exc:
            row["error"] = f"{type(exc).__name__}: {exc}"
            return row
        row.update({k: rec_[k] for k in ("mev", "schatten2", "effective_rank",
                                         "resultant_length", "zero_norm_rows", "ev_curve")})
        row.update({f"ev_{k}": v for k, v in rec_["ev"].items()})
        row["error"] = None
        return row

    rows = parallel_map(run, records)
    cfg = {"ks": args.ks, "mode": args.mode, "k_max": args.k_max}
    report = Report(metadata=_metadata("spectral", cfg, None, metrics))
    for rec, row in zip(records, rows):
        report.add_row(rec.label, row)
    if args.curve:
        buf = io.StringIO()
        w = csv.writer(buf, lineterminator="\n")
        w.writerow(["id", "k", "ev"])
        for rid, row in report.rows.items():
            for k, v in enumerate(row["ev_curve"] or [], 1):
                w.writerow([rid, k, repr(v)])
        _write_text(args.curve, buf.getvalue())
    _emit(report, args.out, args.format)
    return 0


def _corpus(path: str):
    lines = read_jsonl(_read_text(path))
    if not lines:
        raise Fatal("no documents parsed", path=path)
    return lines


def cmd_textstats(args) -> int:
    lines = _corpus(args.corpus)
    fw = (parse_word_list(_read_text(args.function_words)) if args.function_words
          else default_function_words())

    def run(line) -> tuple[str, dict[str, Any]]:
        if line.record is None:
            return f"line{line.lineno}", {"error": line.error}
        rid = str(line.record.get("id", f"line{line.lineno}"))
        try:
            doc = Document.from_dict(line.record)
            # a list carried by the document itself wins over the run-wide one
            own = doc.function_words is not None
            row = document_metrics(doc, function_words=None if own else fw,
                                   mattr_window=args.mattr_window)
        except IdGeomError as exc:
            return rid, {"error": f"{type(exc).__name__}: {exc}"}
        n = row["n_tokens"] if row["n_tokens"] is not None else len(doc.text.split())
        row["short"] = n < SHORT_LIMIT
        row["error"] = None
        return rid, row

    results = parallel_map(run, lines)
    metric_cols = [c for c in next((r for _, r in results if "cr" in r), {})
                   if c not in ("n_tokens", "short", "error")]
    cfg = {"function_words": "custom" if args.function_words else "default",
           "mattr_window": args.mattr_window,
           "compression": {"codec": "gzip", "level": GZIP_LEVEL, "input": "utf-8 bytes"}}
    report = Report(metadata=_metadata("textstats", cfg, None, metric_cols))
    for rid, row in results:
        try:
            report.add_row(rid, row)
        except InvalidInput as exc:
            raise Fatal(str(exc), path=args.corpus)
    _emit(report, args.out, args.format)
    return 0


def cmd_perturb(args) -> int:
    lines = _corpus(args.corpus)
    mapping = None
    if args.map:
        try:
            mapping = HomoglyphMap.parse(_read_text(args.map))
        except IdGeomError as exc:
            raise Fatal(str(exc), path=args.map)

    def run(item):
        i, line = item
        if line.record is None:
            return None, {"line": line.lineno, "error": line.error}
        rec = line.record
        if not isinstance(rec.get("text"), str):
            return None, {"line": line.lineno, "error": "record has no 'text' string"}
        out = {k: v for k, v in rec.items() if k not in ANNOTATION_KEYS}
        out["text"] = transform(rec["text"], args.kind, args.p, RngSpec(args.seed, i), mapping)
        return out, None

    results = parallel_map(run, list(enumerate(lines)))
    for _, problem in results:
        if problem is not None:
            sys.stderr.write(json.dumps(problem) + "\n")
    _write_text(args.out, write_jsonl(r for r, _ in results if r is not None))
    return 0


def cmd_synth(args) -> int:
    cloud = sample_manifold(args.kind, args.d, args.D, args.n, args.noise, RngSpec(args.seed))
    if args.format == "csv":
        buf = io.StringIO()
        w = csv.writer(buf, lineterminator="\n")
        w.writerow([f"x{i}" for i in range(cloud.D)])
        w.writerows([[repr(v) for v in row] for row in cloud.data.tolist()])
        _write_text(args.out, buf.getvalue())
    else:
        _write_bytes(args.out, encode([cloud.data]))
    return 0


def _load_report(path: str) -> Report:
    try:
        text = _read_text(path)
        if path.lower().endswith(".csv"):
            return Report.from_csv(text)
        return Report.from_json(text)
    except InvalidInput as exc:
        raise Fatal(str(exc), path=path)


def cmd_correlate(args) -> int:
    reports = [_load_report(p) for p in args.reports]
    report = reports[0] if len(reports) == 1 else merge(reports)
    names, m = metric_matrix(report, args.method, columns=args.columns,
                             include_invalid=args.include_invalid,
                             include_short=args.include_short)
    buf = io.StringIO()
    w = csv.writer(buf, lineterminator="\n")
    w.writerow(["metric", *names])
    for name, row in zip(names, m.tolist()):
        w.writerow([name, *("" if math.isnan(v) else repr(v) for v in row)])
    _write_text(args.out, buf.getvalue())
    return 0


def cmd_entropy_demo(args) -> int:
    if args.sign_flip:
        hidden, un = sign_flip_construction(args.n, args.m, args.vocab, RngSpec(args.seed))
        hidden = hidden.data
    elif args.hidden or args.unembed:
        if not (args.hidden and args.unembed):
            raise Fatal("--hidden and --unembed must be given together")
        hidden = _single_matrix(args.hidden, "hidden-state")
        U = _single_matrix(args.unembed, "unembedding")
        b = _single_matrix(args.bias, "bias").ravel() if args.bias else None
        un = Unembedding(U, b)
    else:
        gen = RngSpec(args.seed, 1).generator()
        hidden = gen.standard_normal((args.n, args.m))
        un = Unembedding(gen.standard_normal((args.vocab, args.m)))
    config = EstimatorConfig(methods=args.methods, phd=PhdConfig(rng=RngSpec(args.seed)),
                             window=args.window)
    log_v = math.log(un.vocab_size)
    report = Report()
    if args.sign_flip:
        for name, h in (("positive", hidden), ("negated", -hidden)):
            cloud = PointCloud(h)
            ests = estimate_all(cloud, config)
            ent = mean_entropy(cloud, un)
            report.add_row(name, {"mean_entropy": ent, "entropy_fraction": ent / log_v,
                                  **{m: e.value for m, e in ests.items()}})
    else:
        rows = entropy_scale_sweep(hidden, un, args.alphas, config)
        for r in rows:
            report.add_row(f"alpha={r.alpha!r}", {
                "alpha": r.alpha, "mean_entropy": r.mean_entropy,
                "entropy_fraction": r.mean_entropy / log_v,
                **{m: e.value for m, e in r.estimates.items()}})
    cfg = {"alphas": args.alphas, "methods": list(args.methods), "sign_flip": args.sign_flip,
           "seed": args.seed, "window": list(args.window) if args.window else None}
    report.metadata = _metadata("entropy-demo", cfg, args.seed,
                                ["mean_entropy", *args.methods])
    report.metadata["log_vocab"] = log_v
    _emit(report, args.out, args.format)
    return 0


def _load_sae(directory: str, activation: str | None) -> SaeWeights:
    root = Path(directory)
    if not root.is_dir():
        raise Fatal(f"weights directory {directory} not found", path=directory)
    parts = {}
    for name in ("W_enc", "b_enc", "W_dec", "b_dec", "threshold"):
        path = root / f"{name}.emb"
        if path.exists():
            parts[name] = _single_matrix(str(path), name)
        elif name != "threshold":
            raise Fatal(f"missing {name}.emb in {directory}", path=str(path))
    if activation is None:
        activation = "jump_relu" if "threshold" in parts else "relu"
    try:
        return SaeWeights(parts["W_enc"], parts["b_enc"], parts["W_dec"], parts["b_dec"],
                          activation, parts.get("threshold"))
    except IdGeomError as exc:
        raise Fatal(str(exc), path=directory)


def _steer_spec(text: str) -> SteeringSpec:
    vals = text.split(",")
    if len(vals) != 3:
        raise argparse.ArgumentTypeError("--steer takes feature,lambda,A")
    try:
        return SteeringSpec(int(vals[0]), float(vals[1]), float(vals[2]))
    except (ValueError, IdGeomError) as exc:
        raise argparse.ArgumentTypeError(f"bad --steer value {text!r}: {exc}")


def cmd_sae(args) -> int:
    w = _load_sae(args.weights, args.activation)
    records = _read_records([args.acts])
    if not records:
        raise Fatal("no activation matrices parsed", path=args.acts)
    features = args.features if args.features is not None else list(range(w.n_features))
    if any(not 0 <= f < w.n_features for f in features):
        raise Fatal(f"feature indices must lie in [0, {w.n_features})")
    codes, recons, steered = [], [], []
    report = Report()
    for rec in records:
        row: dict[str, Any] = {"tokens": int(rec.matrix.shape[0])}
        try:
            f, x_hat = sae_forward(rec.matrix, w)
            if args.steer is not None:
                steered.append(steer(rec.matrix, w, args.steer))
        except IdGeomError as exc:
            row["error"] = f"{type(exc).__name__}: {exc}"
            row.update({f"f{i}": None for i in features})
            report.add_row(rec.label, row)
            continue
        codes.append(f)
        recons.append(x_hat)
        row["error"] = None
        for i in features:
            row[f"f{i}"] = aggregate_feature(f, i, args.aggregate) if f.shape[0] else None
        report.add_row(rec.label, row)
    if args.codes:
        _write_bytes(args.codes, encode(codes))
    if args.recon:
        _write_bytes(args.recon, encode(recons))
    if args.steered:
        if args.steer is None:
            raise Fatal("--steered needs --steer")
        _write_bytes(args.steered, encode(steered))
    cfg = {"activation": w.activation, "aggregate": args.aggregate, "features": features,
           "steer": None if args.steer is None else
           [args.steer.feature, args.steer.strength, args.steer.scale]}
    report.metadata = _metadata("sae", cfg, None, [f"f{i}" for i in features])
    _emit(report, args.out, args.format)
    return 0


# ----------------------------------------------------------------------------
# parser
# ----------------------------------------------------------------------------


def _report_flags(p: argparse.ArgumentParser) -> None:
    p.add_argument("--out", help="write <stem>.json and <stem>.csv (default: stdout)")
    p.add_argument("--format", choices=("json", "csv"), default="json",
                   help="stdout format when --out is not given")


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="idgeom", description=__doc__.splitlines()[0])
    parser.add_argument("--version", action="version", version=f"%(prog)s {__version__}")
    common = argparse.ArgumentParser(add_help=False)
    common.add_argument("--threads", type=int, help="worker threads (default: $IDGEOM_THREADS or CPU count)")
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("estimate", parents=[common], help="intrinsic dimension of point clouds")
    p.add_argument("inputs", nargs="*", default=["-"], help="EMB1 or CSV files (default stdin)")
    p.add_argument("--methods", type=_methods, default=METHODS)
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--k", type=int, default=20, help="neighbours for mle and tle")
    p.add_argument("--phd-sizes", type=_int_list)
    p.add_argument("--phd-restarts", type=int, default=15)
    p.add_argument("--discard", type=float, default=0.1, help="TwoNN censored fraction")
    p.add_argument("--window", type=_window, default=DEFAULT_WINDOW,
                   help="validity window 'lo,hi' or 'none' (default 2,18)")
    _report_flags(p)
    p.set_defaults(func=cmd_estimate)

    p = sub.add_parser("spectral", parents=[common], help="anisotropy and explained variance")
    p.add_argument("inputs", nargs="*", default=["-"])
    p.add_argument("--ks", type=_int_list, default=[1, 20, 60])
    mode = p.add_mutually_exclusive_group()
    mode.add_argument("--centered", dest="mode", action="store_const", const="centered",
                      help="use the centred spectrum for every metric")
    mode.add_argument("--raw", dest="mode", action="store_const", const="raw",
                      help="use the uncentred spectrum for every metric")
    p.set_defaults(mode="mixed")
    p.add_argument("--k-max", type=int, help="truncate the EV-k curve")
    p.add_argument("--curve", help="write the EV-k curve as long-format CSV")
    _report_flags(p)
    p.set_defaults(func=cmd_spectral)

    p = sub.add_parser("textstats", parents=[common], help="compression and lexical metrics")
    p.add_argument("corpus", help="JSON Lines corpus")
    p.add_argument("--function-words", help="word list, one per line")
    p.add_argument("--mattr-window", type=int, default=50)
    _report_flags(p)
    p.set_defaults(func=cmd_textstats)

    p = sub.add_parser("perturb", parents=[common], help="homoglyph and shuffle transforms")
    p.add_argument("corpus")
    p.add_argument("--kind", choices=PERTURB_KINDS, required=True)
    p.add_argument("--p", type=float, default=DEFAULT_P)
    p.add_argument("--map", help="homoglyph table, two tab-separated characters per line")
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--out", default="-")
    p.set_defaults(func=cmd_perturb)

    p = sub.add_parser("synth", parents=[common], help="sample a synthetic manifold")
    p.add_argument("--kind", choices=SYNTH_KINDS, required=True)
    p.add_argument("--d", type=int, required=True)
    p.add_argument("--D", type=int, required=True)
    p.add_argument("--n", type=int, required=True)
    p.add_argument("--noise", type=float, default=0.0)
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--format", choices=("emb", "csv"), default="emb")
    p.add_argument("--out", default="-")
    p.set_defaults(func=cmd_synth)

    p = sub.add_parser("correlate", parents=[common], help="correlation matrix of report metrics")
    p.add_argument("reports", nargs="+", help="one or two reports (JSON or CSV)")
    p.add_argument("--method", choices=CORRELATIONS, default="pearson")
    p.add_argument("--columns", type=lambda s: [c for c in s.split(",") if c])
    p.add_argument("--include-invalid", action="store_true")
    p.add_argument("--include-short", action="store_true")
    p.add_argument("--out", default="-")
    p.set_defaults(func=cmd_correlate)

    p = sub.add_parser("entropy-demo", parents=[common],
                       help="entropy versus ID under rescaling of hidden states")
    p.add_argument("--hidden")
    p.add_argument("--unembed")
    p.add_argument("--bias")
    p.add_argument("--alphas", type=_float_list,
                   default=[float(10.0 ** e) for e in np.arange(-3, 3.5, 0.5)])
    p.add_argument("--sign-flip", action="store_true", help="compare h with -h instead of sweeping")
    p.add_argument("--n", type=int, default=500)
    p.add_argument("--m", type=int, default=32)
    p.add_argument("--vocab", type=int, default=1000)
    p.add_argument("--methods", type=_methods, default=METHODS)
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--window", type=_window, default=DEFAULT_WINDOW)
    _report_flags(p)
    p.set_defaults(func=cmd_entropy_demo)

    p = sub.add_parser("sae", parents=[common], help="sparse-autoencoder codes and steering")
    p.add_argument("--weights", required=True,
                   help="directory with W_enc/b_enc/W_dec/b_dec[.threshold].emb")
    p.add_argument("--acts", required=True, help="EMB1 activations, one record per sequence")
    p.add_argument("--activation", choices=("relu", "jump_relu"))
    p.add_argument("--features", type=_int_list)
    p.add_argument("--aggregate", choices=AGGREGATIONS, default="sum")
    p.add_argument("--steer", type=_steer_spec, help="feature,lambda,A")
    p.add_argument("--codes", help="write feature codes (EMB1)")
    p.add_argument("--recon", help="write reconstructions (EMB1)")
    p.add_argument("--steered", help="write steered activations (EMB1)")
    _report_flags(p)
    p.set_defaults(func=cmd_sae)
    return parser


def _fail(message: str, kind: str, **context) -> int:
    sys.stderr.write(json.dumps({"error": message, "kind": kind, **context}) + "\n")
    return EXIT_FATAL


def main(argv: Sequence[str] | None = None) -> int:
    args = build_parser().parse_args(argv)
    try:
        if args.threads is not None:
            if args.threads < 1:
                raise InvalidArgument("--threads must be >= 1")
            with thread_limit(args.threads):
                return args.func(args)
        return args.func(args)
    except Fatal as exc:
        return _fail(str(exc), "input", **exc.context)
    except IdGeomError as exc:
        return _fail(str(exc), type(exc).__name__)
    except BrokenPipeError:
        return 0


if __name__ == "__main__":
    sys.exit(main())
