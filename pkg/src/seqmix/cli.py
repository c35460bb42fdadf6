"""``seqmix`` command line.

Exit status is 0 on success, 1 when a computation fails and 2 for usage or
input errors. Every command that writes files also writes
``run_manifest.json`` next to them; it is the only output holding the wall
time, so all other outputs are byte-identical across repeated runs.
"""

from __future__ import annotations

import argparse
import json
import logging
import os
import platform
import sys
import time
from pathlib import Path

import numpy as np

from . import __version__
from .dataset import DatasetError, PreprocessConfig, TimestampedDataset, load_dataset, preprocess, save_dataset
from .em import FitConfig, FitError, FitReport, fit
from .evaluation import (
    adjusted_rand_index,
    aggregate_onset_histogram,
    match_onsets,
    onset_entropy,
    precision,
    recall,
    write_metric_table,
)
from .hits import HitDetectorConfig, HitDetector, iter_samples, write_hits
from .model import proportions
from .selection import sweep_k
from .synthetic import GroundTruth, MixtureSpec, generate_dataset, default_spec, write_dataset_with_truth

logger = logging.getLogger("seqmix")

SEED_ENV = "SEQMIX_SEED"


class UsageError(Exception):
    """Bad arguments or unreadable input (exit status 2)."""


# --- helpers ---------------------------------------------------------------------


def _default_seed() -> int:
    raw = os.environ.get(SEED_ENV)
    if raw is None:
        return 0
    try:
        return int(raw)
    except ValueError:
        raise UsageError(f"{SEED_ENV} must be an integer, got {raw!r}") from None


def _write_json(path: Path, payload) -> None:
    path.write_text(json.dumps(payload, indent=1, allow_nan=True) + "\n", encoding="utf-8")


def _versions() -> dict:
    import scipy
    import sklearn

    return {"seqmix": __version__, "python": platform.python_version(), "numpy": np.__version__,
            "scipy": scipy.__version__, "scikit-learn": sklearn.__version__}


def _manifest(out_dir: Path, args, config, inputs, outputs, started):
    payload = {
        "command": args.command,
        "argv": list(args.argv),
        "seed": getattr(args, "seed", None),
        "config": config,
        "inputs": [str(p) for p in inputs],
        "outputs": [str(p) for p in outputs],
        "versions": _versions(),
        "wall_time_s": time.perf_counter() - started,
    }
    _write_json(out_dir / "run_manifest.json", payload)


def _load(path, allow_ties=False) -> TimestampedDataset:
    try:
        return load_dataset(path, allow_ties=allow_ties)
    except FileNotFoundError as exc:
        raise UsageError(f"no such file: {exc.filename or path}") from None
    except (DatasetError, ValueError) as exc:
        raise UsageError(str(exc)) from None


def _read_json(path):
    try:
        return json.loads(Path(path).read_text(encoding="utf-8"))
    except FileNotFoundError:
        raise UsageError(f"no such file: {path}") from None
    except json.JSONDecodeError as exc:
        raise UsageError(f"{path}: invalid JSON: {exc}") from None


def _out_dir(path) -> Path:
    out = Path(path)
    try:
        out.mkdir(parents=True, exist_ok=True)
    except OSError as exc:
        raise UsageError(f"cannot create {out}: {exc}") from None
    return out


def _parse_prior(text):
    """``"1:120.5,3:900"`` to (components, taus)."""
    comps, taus = [], []
    for item in text.split(","):
        try:
            c, v = item.split(":")
            comps.append(int(c))
            taus.append(float(v))
        except ValueError:
            raise UsageError(f"bad prior onset {item!r}; expected COMPONENT:TIME") from None
    return tuple(comps), tuple(taus)


def _parse_range(text):
    for sep in ("..", ":", "-"):
        if sep in text:
            lo, _, hi = text.partition(sep)
            try:
                lo, hi = int(lo), int(hi)
            except ValueError:
                break
            if lo < 1 or hi < lo:
                break
            return lo, hi
    raise UsageError(f"bad K range {text!r}; expected e.g. 2..10")


FIT_FLAGS = {
    "max_em_iters": int,
    "loglik_rel_tol": float,
    "restarts": int,
    "init_scheme": str,
    "inner_max_iters": int,
    "inner_grad_tol": float,
    "covariance_floor": float,
}


def _add_fit_flags(p):
    p.add_argument("--config", help="JSON file of fit settings; flags override it")
    for name, typ in FIT_FLAGS.items():
        kw = {"choices": ("all", "gmm", "kmeans", "time_blocks")} if name == "init_scheme" else {}
        p.add_argument("--" + name.replace("_", "-"), dest=name, type=typ, default=None, **kw)
    p.add_argument("--shared-gamma", dest="shared_gamma", action="store_true", default=None)
    p.add_argument("--prior-onsets", help="COMPONENT:TIME pairs, comma separated (components 1..K-1)")
    p.add_argument("--prior-strength", type=float, default=None)


def _fit_config(args) -> FitConfig:
    payload = {}
    if args.config:
        payload = _read_json(args.config)
        if not isinstance(payload, dict):
            raise UsageError(f"{args.config}: expected a JSON object")
    for name in list(FIT_FLAGS) + ["shared_gamma"]:
        v = getattr(args, name)
        if v is not None:
            payload[name] = v
    if args.prior_onsets or args.prior_strength is not None:
        prior = dict(payload.get("onset_prior") or {})
        if args.prior_onsets:
            prior["components"], prior["tau"] = _parse_prior(args.prior_onsets)
        if args.prior_strength is not None:
            prior["strength"] = args.prior_strength
        prior.setdefault("strength", 1.0)
        if "components" not in prior:
            raise UsageError("--prior-strength needs --prior-onsets")
        payload["onset_prior"] = prior
    payload["seed"] = args.seed
    payload["n_jobs"] = args.threads
    try:
        return FitConfig.from_dict(payload)
    except (TypeError, ValueError) as exc:
        raise UsageError(f"invalid fit settings: {exc}") from None


def _config_snapshot(config: FitConfig) -> dict:
    snap = config.to_dict()
    snap.pop("n_jobs")  # does not affect results
    return snap


# --- commands --------------------------------------------------------------------


def cmd_generate(args, started):
    if args.paper_default == bool(args.spec):
        raise UsageError("give exactly one of --paper-default or --spec")
    if args.spec:
        try:
            spec = MixtureSpec.from_dict(_read_json(args.spec))
        except (KeyError, TypeError, ValueError) as exc:
            raise UsageError(f"invalid spec: {exc}") from None
    else:
        spec = default_spec()
    out = _out_dir(args.out)
    ds, truth = generate_dataset(spec, args.seed, sampling=args.sampling)
    paths = write_dataset_with_truth(ds, truth, out, args.stem)
    _manifest(out, args, {"spec": spec.to_dict(), "sampling": args.sampling},
              [args.spec] if args.spec else [], paths, started)


def cmd_preprocess(args, started):
    try:
        config = PreprocessConfig(args.median_window, args.variance_target, not args.no_standardize)
    except ValueError as exc:
        raise UsageError(str(exc)) from None
    ds = _load(args.data, args.allow_ties)
    out = _out_dir(args.out)
    reduced, pre = preprocess(ds, config)
    data_path, proj_path = out / "features.csv", out / "projection.csv"
    save_dataset(reduced, data_path)
    pre.save_projection(proj_path)
    snap = {"median_window": config.median_window, "pca_variance_target": config.pca_variance_target,
            "standardize": config.standardize}
    _manifest(out, args, snap, [args.data], [data_path, proj_path], started)


def _write_curves(path, t, model):
    pi = proportions(t, model.sigmoids)
    with open(path, "w", encoding="utf-8") as fh:
        fh.write(",".join(["t"] + [f"pi{k}" for k in range(model.n_components)]) + "\n")
        for ti, row in zip(t, pi):
            fh.write(",".join([repr(float(ti))] + [repr(float(v)) for v in row]) + "\n")


def cmd_fit(args, started):
    config = _fit_config(args)
    ds = _load(args.data, args.allow_ties)
    if not 1 <= args.K <= ds.n_samples:
        raise UsageError(f"K must lie in 1..{ds.n_samples}")
    out = _out_dir(args.out)
    report = fit(ds.features, ds.timestamps, args.K, config)
    report_path, curve_path = out / "fit_report.json", out / "proportions.csv"
    _write_json(report_path, report.to_dict())
    _write_curves(curve_path, ds.timestamps, report.model)
    if not report.converged:
        logger.warning("EM hit the iteration cap before converging")
    _manifest(out, args, _config_snapshot(config), [args.data], [report_path, curve_path], started)


def cmd_sweep(args, started):
    lo, hi = _parse_range(args.k_range)
    config = _fit_config(args)
    ds = _load(args.data, args.allow_ties)
    if hi > ds.n_samples:
        raise UsageError(f"K range exceeds N={ds.n_samples}")
    out = _out_dir(args.out)
    sel = sweep_k(ds.features, ds.timestamps, lo, hi, config)
    json_path, csv_path = out / "selection.json", out / "criteria.csv"
    sel.write_json(json_path, include_reports=True)
    sel.write_csv(csv_path)
    _manifest(out, args, _config_snapshot(config), [args.data], [json_path, csv_path], started)
    if not any(e.ok for e in sel.entries):
        raise FitError("every K failed")


def _truth(args):
    """(labels or None, onsets) from a ground-truth sidecar or a plain onset list."""
    payload = _read_json(args.truth)
    if isinstance(payload, list):
        return None, np.asarray(payload, dtype=float)
    if "onsets" in payload:
        labels = payload.get("labels")
        return (None if labels is None else np.asarray(labels, dtype=int)), np.asarray(payload["onsets"], dtype=float)
    try:
        truth = GroundTruth.from_dict(payload)
    except (KeyError, TypeError, ValueError) as exc:
        raise UsageError(f"{args.truth}: unrecognized truth file ({exc})") from None
    # the reference cluster's onset is its first labelled observation, if times are known
    ref = np.nan
    zero = np.flatnonzero(truth.labels == 0)
    if args.data and zero.size:
        ref = float(_load(args.data).timestamps[zero[0]])
    onsets = np.concatenate([[ref], truth.model.sigmoids.tau])
    return truth.labels, onsets[np.isfinite(onsets)]


def cmd_evaluate(args, started):
    labels, truth_onsets = _truth(args)
    if truth_onsets.size == 0:
        raise UsageError("truth has no onsets")
    k_norm = args.k_norm or max(2, truth_onsets.size)
    rows, reports = [], []
    for item in args.report:
        name, _, path = item.rpartition("=")
        payload = _read_json(path)
        try:
            rep = FitReport.from_dict(payload)
        except (KeyError, TypeError, ValueError) as exc:
            raise UsageError(f"{path}: not a fit report ({exc})") from None
        reports.append(rep)
        est = rep.onsets()
        m = match_onsets(est, truth_onsets, args.tol)
        ent = onset_entropy(m.per_level_hits, k_norm, m.n_estimated)
        ari = float("nan")
        if labels is not None:
            if rep.responsibilities.shape[0] != labels.size:
                raise UsageError(f"{path}: {rep.responsibilities.shape[0]} labels but truth has {labels.size}")
            ari = adjusted_rand_index(labels, rep.labels)
        rows.append((name or Path(path).stem, precision(m), recall(m), ent, ari))
    out = _out_dir(args.out)
    metrics_path = out / "metrics.csv"
    write_metric_table(rows, metrics_path)
    outputs = [metrics_path]
    if args.bin_width:
        T = args.horizon or max((r.model.horizon for r in reports), default=1.0)
        hist = aggregate_onset_histogram(reports, args.bin_width, T)
        hist_path = out / "onset_histogram.csv"
        hist.write_csv(hist_path)
        outputs.append(hist_path)
        logger.info("histogram holds %d onsets", hist.count)
    _manifest(out, args, {"tol": args.tol, "k_norm": k_norm, "bin_width": args.bin_width},
              [args.truth] + [r.rpartition("=")[2] for r in args.report], outputs, started)


def cmd_detect_hits(args, started):
    try:
        config = HitDetectorConfig(args.sample_rate, args.threshold, args.hdt_us, args.hlt_us)
    except ValueError as exc:
        raise UsageError(str(exc)) from None
    if not Path(args.samples).exists():
        raise UsageError(f"no such file: {args.samples}")
    if args.chunk_size < 1:
        raise UsageError("--chunk-size must be >= 1")
    det = HitDetector(config)
    hits = []
    try:
        for chunk in iter_samples(args.samples, args.format, args.chunk_size):
            hits.extend(det.process(chunk))
    except ValueError as exc:
        raise UsageError(str(exc)) from None
    hits.extend(det.finish())
    out = _out_dir(args.out)
    path = out / "hits.csv"
    write_hits(hits, path)
    snap = {"sample_rate": config.sample_rate, "threshold": config.threshold, "hdt_us": config.hdt_us,
            "hlt_us": config.hlt_us, "hdt_samples": config.hdt_samples, "hlt_samples": config.hlt_samples}
    _manifest(out, args, snap, [args.samples], [path], started)


# --- parser ----------------------------------------------------------------------


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="seqmix", description="Sequential Gaussian mixture toolkit.")
    parser.add_argument("--version", action="version", version=f"%(prog)s {__version__}")
    parser.add_argument("-v", "--verbose", action="count", default=0)
    sub = parser.add_subparsers(dest="command", required=True)

    def common(p, seed=True, threads=False):
        p.add_argument("--out", required=True, help="output directory")
        if seed:
            p.add_argument("--seed", type=int, default=None, help=f"default: ${SEED_ENV} or 0")
        if threads:
            p.add_argument("--threads", type=int, default=None,
                           help="maximum concurrent restarts (default: all cores)")

    p = sub.add_parser("generate", help="simulate a stream with known onsets")
    p.add_argument("--paper-default", action="store_true", help="four 2-D clusters, 6000 observations")
    p.add_argument("--spec", help="JSON mixture description")
    p.add_argument("--sampling", choices=("categorical", "budget"), default="categorical")
    p.add_argument("--stem", default="data")
    common(p)

    p = sub.add_parser("preprocess", help="running median, standardization and PCA")
    p.add_argument("data")
    p.add_argument("--median-window", type=int, default=31)
    p.add_argument("--variance-target", type=float, default=0.99)
    p.add_argument("--no-standardize", action="store_true")
    p.add_argument("--allow-ties", action="store_true")
    common(p, seed=False)

    p = sub.add_parser("fit", help="fit one model")
    p.add_argument("data")
    p.add_argument("-K", "--n-components", dest="K", type=int, required=True)
    p.add_argument("--allow-ties", action="store_true")
    _add_fit_flags(p)
    common(p, threads=True)

    p = sub.add_parser("sweep", help="fit a range of K and score each")
    p.add_argument("data")
    p.add_argument("--k-range", default="2..10")
    p.add_argument("--allow-ties", action="store_true")
    _add_fit_flags(p)
    common(p, threads=True)

    p = sub.add_parser("evaluate", help="onset and ARI metrics for fitted models")
    p.add_argument("--truth", required=True, help="ground-truth sidecar JSON or a JSON list of onsets")
    p.add_argument("--report", nargs="*", default=[], help="fit report JSON, optionally NAME=PATH")
    p.add_argument("--data", help="dataset, used to locate the reference cluster's true onset")
    p.add_argument("--tol", type=float, default=0.5)
    p.add_argument("--k-norm", type=int, default=None)
    p.add_argument("--bin-width", type=float, default=None, help="also write an onset histogram")
    p.add_argument("--horizon", type=float, default=None)
    common(p, seed=False)

    p = sub.add_parser("detect-hits", help="threshold hit detection on a sample stream")
    p.add_argument("samples")
    p.add_argument("--sample-rate", type=float, required=True, help="Hz")
    p.add_argument("--threshold", type=float, default=1.2e-3, help="volts")
    p.add_argument("--hdt-us", type=float, default=1100.0)
    p.add_argument("--hlt-us", type=float, default=80.0)
    p.add_argument("--format", choices=("csv", "f32"), default=None)
    p.add_argument("--chunk-size", type=int, default=1 << 20)
    common(p, seed=False)
    return parser


COMMANDS = {
    "generate": cmd_generate,
    "preprocess": cmd_preprocess,
    "fit": cmd_fit,
    "sweep": cmd_sweep,
    "evaluate": cmd_evaluate,
    "detect-hits": cmd_detect_hits,
}


def main(argv=None) -> int:
    argv = sys.argv[1:] if argv is None else list(argv)
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
    except SystemExit as exc:
        return int(exc.code or 0)
    args.argv = argv
    logging.basicConfig(level=logging.WARNING - 10 * min(args.verbose, 2),
                        format="%(levelname)s %(name)s: %(message)s", stream=sys.stderr)
    started = time.perf_counter()
    try:
        if hasattr(args, "seed") and args.seed is None:
            args.seed = _default_seed()
        if hasattr(args, "threads"):
            if args.threads is None:
                args.threads = os.cpu_count() or 1
            elif args.threads < 1:
                raise UsageError("--threads must be >= 1")
        COMMANDS[args.command](args, started)
    except UsageError as exc:
        print(f"seqmix {args.command}: {exc}", file=sys.stderr)
        return 2
    except (FitError, ArithmeticError, np.linalg.LinAlgError, ValueError, RuntimeError) as exc:
        print(f"seqmix {args.command}: {type(exc).__name__}: {exc}", file=sys.stderr)
        return 1
    return 0


if __name__ == "__main__":  # pragma: no cover
    sys.exit(main())
