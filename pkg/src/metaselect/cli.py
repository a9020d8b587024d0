"""Command-line surface: validate, characterize, select, report, synth.

Exit codes: 0 success, 1 validation or data failure, 2 usage error.  All
diagnostics go to stderr; machine-readable output goes only to the files
named by flags.  A JSON config file can supply any long-option value;
explicit flags win over the file.
"""

import argparse
import json
import math
import sys

import numpy as np

from .bundle import load_bundle, resolve_labels, write_bundle
from .errors import (
    BudgetExceedsN,
    BundleError,
    CoordShapeMismatch,
    MeasureError,
    SelectionError,
    UnknownMeasure,
    UnknownMethod,
)
from .measures import (
    DEFAULT_KNN_K,
    REGISTRY_NAMES,
    compute_all,
    correctness,
    measure_spec,
)
from .oracle import SynthConfig, generate_bundle
from .selection import (
    DEFAULT_BETA,
    MODES,
    METHODS,
    TOPK_PREFIX,
    save_result,
    select,
)
from .space import correlation, correlation_csv, load_features, normalize, \
    project2d, write_features


class UsageError(Exception):
    """Bad flag combination or value; maps to exit code 2."""


def _log(msg):
    print(msg, file=sys.stderr)


def build_parser():
    parser = argparse.ArgumentParser(
        prog="metaselect",
        description="Per-sample data measures and diversity-aware subset "
                    "selection over serialized model outputs.",
    )
    sub = parser.add_subparsers(dest="command", required=True)

    p_val = sub.add_parser("validate", help="check a run bundle directory")
    p_val.add_argument("bundle_dir")

    p_chr = sub.add_parser("characterize", help="compute measures and the "
                           "normalized feature space")
    p_chr.add_argument("bundle_dir")
    p_chr.add_argument("--out", help="output features directory")
    p_chr.add_argument("--measures",
                       help="comma-separated measure names, or 'all'")
    p_chr.add_argument("--knn-k", type=int)
    p_chr.add_argument("--corr", help="also write a correlation CSV here")
    p_chr.add_argument("--pll-mean", action=argparse.BooleanOptionalAction,
                       help="report per-token mean instead of the sum")
    p_chr.add_argument("--config", help="JSON file with option values")

    p_sel = sub.add_parser("select", help="pick a subset from a features "
                           "directory")
    p_sel.add_argument("features_dir")
    p_sel.add_argument("--mode", choices=MODES)
    p_sel.add_argument("--method",
                       help="dpp, random, topk:<measure>, coreset, kmeans, "
                            "or density")
    p_sel.add_argument("--budget", type=int)
    p_sel.add_argument("--ratio", type=float)
    p_sel.add_argument("--seed", type=int)
    p_sel.add_argument("--beta", type=float)
    p_sel.add_argument("--knn-k", type=int)
    p_sel.add_argument("--space", choices=("feature", "embedding"),
                       help="geometry for coreset/kmeans/density baselines")
    p_sel.add_argument("--bundle", help="bundle directory, required with "
                       "--space embedding")
    p_sel.add_argument("--ascending", action=argparse.BooleanOptionalAction,
                       help="sort topk:<measure> ascending")
    p_sel.add_argument("--out", help="selection JSON path")
    p_sel.add_argument("--config", help="JSON file with option values")

    p_rep = sub.add_parser("report", help="emit the data-map CSV")
    p_rep.add_argument("features_dir")
    p_rep.add_argument("--coords", help="external 2-D coordinates CSV")
    p_rep.add_argument("--out", help="data-map CSV path")

    p_syn = sub.add_parser("synth", help="generate a synthetic bundle")
    p_syn.add_argument("--out", help="bundle output directory")
    p_syn.add_argument("--n-samples", type=int)
    p_syn.add_argument("--n-classes", type=int)
    p_syn.add_argument("--epochs", type=int)
    p_syn.add_argument("--seed-models", type=int)
    p_syn.add_argument("--mc-passes", type=int)
    p_syn.add_argument("--clf-dim", type=int)
    p_syn.add_argument("--sent-dim", type=int)
    p_syn.add_argument("--separation", type=float)
    p_syn.add_argument("--noise-fraction", type=float,
                       dest="planted_noise_fraction")
    p_syn.add_argument("--rng-seed", type=int)
    p_syn.add_argument("--config", help="JSON file with option values")
    return parser


def _merged(args, defaults):
    """defaults < config file < explicit flags."""
    merged = dict(defaults)
    config_path = getattr(args, "config", None)
    if config_path:
        try:
            with open(config_path, encoding="utf-8") as fh:
                loaded = json.load(fh)
        except (OSError, json.JSONDecodeError) as exc:
            raise UsageError(f"--config: cannot read {config_path}: {exc}")
        if not isinstance(loaded, dict):
            raise UsageError("--config: top level must be a JSON object")
        for key, value in loaded.items():
            if key not in defaults:
                raise UsageError(f"--config: unknown key {key!r}")
            merged[key] = value
    for key in defaults:
        value = getattr(args, key, None)
        if value is not None:
            merged[key] = value
    return merged


def _cmd_validate(args):
    bundle = load_bundle(args.bundle_dir)
    _log(f"ok: {bundle.n_samples} samples, {bundle.n_classes} classes, "
         f"{bundle.n_epochs} epochs, {bundle.n_seed_models} seed models, "
         f"{bundle.n_mc_passes} mc passes, labels="
         f"{'gold' if bundle.has_labels else 'pseudo'}")
    return 0


def _parse_measures(raw):
    if raw is None or raw == "all":
        return None
    names = [part.strip() for part in raw.split(",") if part.strip()]
    if not names:
        raise UsageError("--measures: empty measure list")
    for name in names:
        measure_spec(name)
    return names


def _cmd_characterize(args):
    defaults = {
        "out": None,
        "measures": "all",
        "knn_k": DEFAULT_KNN_K,
        "corr": None,
        "pll_mean": False,
    }
    opts = _merged(args, defaults)
    if not opts["out"]:
        raise UsageError("--out is required")
    wanted = _parse_measures(opts["measures"])

    bundle = load_bundle(args.bundle_dir)
    matrix = compute_all(bundle, measures=wanted, knn_k=opts["knn_k"],
                         pll_mean=bool(opts["pll_mean"]))
    for name, missing in matrix.skipped:
        _log(f"skipped {name}: bundle has no {missing}")
    features = normalize(matrix)
    labels = resolve_labels(bundle)
    correct = correctness(bundle.epoch_logprobs, labels)
    write_features(opts["out"], matrix, features, labels, correct,
                   opts["knn_k"])
    if opts["corr"]:
        correlation_csv(correlation(matrix), opts["corr"])
    _log(f"characterized {bundle.n_samples} samples into "
         f"{features.values.shape[1]} features at {opts['out']}")
    return 0


def _resolve_budget(opts, n):
    budget = opts["budget"]
    ratio = opts["ratio"]
    if (budget is None) == (ratio is None):
        raise UsageError("exactly one of --budget and --ratio is required")
    if budget is not None:
        if budget < 1:
            raise UsageError("--budget must be >= 1")
        return int(budget)
    if not 0.0 < ratio < 1.0:
        raise UsageError("--ratio must be strictly between 0 and 1")
    return max(1, math.floor(ratio * n))


def _check_method(method, artifact):
    if method in METHODS:
        return
    if method.startswith(TOPK_PREFIX):
        name = method[len(TOPK_PREFIX):]
        measure_spec(name)
        if name not in artifact.features.names:
            raise MeasureError(
                f"measure '{name}' is not present in the features artifact"
            )
        return
    raise UnknownMethod(f"--method: unknown method {method!r}")


def _cmd_select(args):
    defaults = {
        "mode": None,
        "method": None,
        "budget": None,
        "ratio": None,
        "seed": 0,
        "beta": DEFAULT_BETA,
        "knn_k": DEFAULT_KNN_K,
        "space": "feature",
        "bundle": None,
        "ascending": False,
        "out": None,
    }
    opts = _merged(args, defaults)
    for required in ("mode", "method", "out"):
        if not opts[required]:
            raise UsageError(f"--{required} is required")
    if opts["mode"] not in MODES:
        raise UsageError(f"--mode must be one of {MODES}")

    artifact = load_features(args.features_dir)
    n = artifact.features.values.shape[0]
    budget = _resolve_budget(opts, n)
    _check_method(opts["method"], artifact)

    points = None
    if opts["space"] == "embedding":
        if not opts["bundle"]:
            raise UsageError("--space embedding requires --bundle")
        bundle = load_bundle(opts["bundle"])
        if bundle.n_samples != n:
            raise BundleError(
                f"--bundle has {bundle.n_samples} samples but the features "
                f"artifact has {n}"
            )
        points = bundle.clf_embedding.astype(np.float64)

    result = select(
        artifact.features,
        artifact.labels,
        mode=opts["mode"],
        budget=budget,
        method=opts["method"],
        seed=int(opts["seed"]),
        beta=float(opts["beta"]),
        knn_k=int(opts["knn_k"]),
        points=points,
        ascending=bool(opts["ascending"]),
    )
    save_result(result, opts["out"])
    _log(f"selected {len(result.indices)} of {n} by {result.method} "
         f"({result.mode}), total_logdet={result.total_logdet:.6f}")
    return 0


def _read_coords(path):
    rows = []
    try:
        with open(path, encoding="utf-8") as fh:
            lines = [ln.strip() for ln in fh if ln.strip()]
    except OSError as exc:
        raise CoordShapeMismatch(f"cannot read coordinates: {exc}") from exc
    for ln in lines:
        parts = [p.strip() for p in ln.split(",")]
        try:
            rows.append([float(parts[0]), float(parts[1])])
        except (ValueError, IndexError):
            if not rows:
                continue  # header line
            raise CoordShapeMismatch(f"bad coordinate row: {ln!r}") from None
    return np.asarray(rows, dtype=np.float64)


def _cmd_report(args):
    if not args.out:
        raise UsageError("--out is required")
    artifact = load_features(args.features_dir)
    names = artifact.measures.names
    for needed in ("avg_confidence", "variability"):
        if needed not in names:
            raise MeasureError(
                f"features artifact lacks '{needed}', needed for the data map"
            )
    coords = _read_coords(args.coords) if args.coords else None
    proj = project2d(artifact.features, coords)

    avg = artifact.measures.column("avg_confidence")
    var = artifact.measures.column("variability")
    with open(args.out, "w", encoding="utf-8") as fh:
        fh.write("index,avg_confidence,variability,correctness,proj_x,proj_y\n")
        for i in range(proj.shape[0]):
            fh.write(
                f"{i},{float(avg[i])!r},{float(var[i])!r},"
                f"{float(artifact.correctness[i])!r},"
                f"{float(proj[i, 0])!r},{float(proj[i, 1])!r}\n"
            )
    _log(f"wrote data map for {proj.shape[0]} samples to {args.out}")
    return 0


def _cmd_synth(args):
    defaults = {
        "out": None,
        "n_samples": 48,
        "n_classes": 2,
        "epochs": 4,
        "seed_models": 3,
        "mc_passes": 3,
        "clf_dim": 16,
        "sent_dim": 12,
        "separation": 4.0,
        "planted_noise_fraction": 0.0,
        "rng_seed": 0,
    }
    opts = _merged(args, defaults)
    if not opts["out"]:
        raise UsageError("--out is required")
    out = opts.pop("out")
    try:
        cfg = SynthConfig(**opts)
    except (TypeError, ValueError) as exc:
        raise UsageError(f"invalid synth configuration: {exc}")
    bundle = generate_bundle(cfg)
    write_bundle(bundle, out)
    _log(f"wrote synthetic bundle ({cfg.n_samples} samples, "
         f"{cfg.n_classes} classes) to {out}")
    return 0


_COMMANDS = {
    "validate": _cmd_validate,
    "characterize": _cmd_characterize,
    "select": _cmd_select,
    "report": _cmd_report,
    "synth": _cmd_synth,
}


def main(argv=None):
    parser = build_parser()
    args = parser.parse_args(argv)
    try:
        return _COMMANDS[args.command](args)
    except (UsageError, UnknownMethod, UnknownMeasure, BudgetExceedsN) as exc:
        _log(f"error: {exc}")
        return 2
    except (BundleError, MeasureError, SelectionError,
            CoordShapeMismatch) as exc:
        _log(f"error: {exc}")
        return 1


if __name__ == "__main__":
    sys.exit(main())
