"""Batch command line: ``convnilm {synth,extract-gt,train,predict,eval}``.

Every command writes a JSON run manifest next to its outputs. Exit codes:
0 success, 1 usage or configuration error, 2 data error, 3 numeric abort.
"""

from __future__ import annotations

import argparse
import contextlib
import dataclasses
import hashlib
import json
import logging
import subprocess
import sys
import time
from pathlib import Path

import numpy as np

from . import __version__, dataio, metrics, pipeline
from .checkpoint import load_checkpoint, save_checkpoint
from .config import model_config_from, read_config, synth_config_from, train_config_from
from .dataio import ActivationProfile
from .errors import ConfigError, DataError, NumericError, StateError, StructuralError
from .synth import synth_household
from .train import format_history

log = logging.getLogger("convnilm")

EXIT_OK, EXIT_CONFIG, EXIT_DATA, EXIT_NUMERIC = 0, 1, 2, 3


class UsageError(Exception):
    pass


class _Parser(argparse.ArgumentParser):
    # argparse exits with 2 on bad usage; 2 is reserved for data errors here
    def error(self, message):
        raise UsageError(f"{self.prog}: {message}")


# --------------------------------------------------------------------------- #
# Manifest
# --------------------------------------------------------------------------- #


def sha256_file(path) -> str:
    h = hashlib.sha256()
    with open(path, "rb") as fh:
        for chunk in iter(lambda: fh.read(1 << 20), b""):
            h.update(chunk)
    return h.hexdigest()


def artifact_version() -> str:
    """Package version, with ``git describe`` appended when run from a checkout."""
    try:
        out = subprocess.run(
            ["git", "describe", "--tags", "--always", "--dirty"],
            cwd=Path(__file__).resolve().parent, capture_output=True, text=True, timeout=5,
        )
        if out.returncode == 0 and out.stdout.strip():
            return f"{__version__}+{out.stdout.strip()}"
    except (OSError, subprocess.SubprocessError):
        pass
    return __version__


def _digest_paths(paths) -> dict[str, str | None]:
    out = {}
    for p in paths:
        p = Path(p)
        if p.is_dir():
            for f in sorted(p.rglob("*")):
                if f.is_file() and f.suffix != ".tmp" and not f.name.endswith("manifest.json"):
                    out[str(f)] = sha256_file(f)
        elif p.exists():
            out[str(p)] = sha256_file(p)
    return out


def write_manifest(path, command: str, args: argparse.Namespace, inputs, outputs, started: float,
                   summary: dict | None = None) -> dict:
    arg_dict = {k: (str(v) if isinstance(v, Path) else v) for k, v in vars(args).items() if k != "func"}
    doc = {
        "command": command,
        "args": arg_dict,
        "config": arg_dict.get("config"),
        "seed": arg_dict.get("seed"),
        "deterministic": arg_dict.get("deterministic", False),
        "version": artifact_version(),
        "inputs": _digest_paths(inputs),
        "outputs": _digest_paths(outputs),
        "timings": {"started": started, "wall_seconds": round(time.time() - started, 3)},
        "summary": summary or {},
    }
    Path(path).write_text(json.dumps(doc, indent=2, sort_keys=True) + "\n")
    return doc


def _manifest_path(args, default: Path) -> Path:
    return Path(args.manifest) if args.manifest else default


@contextlib.contextmanager
def _single_thread(enabled: bool):
    """Pin BLAS to one thread so float reductions happen in a fixed order."""
    if not enabled:
        yield
        return
    from threadpoolctl import threadpool_limits

    with threadpool_limits(limits=1):
        yield


# --------------------------------------------------------------------------- #
# Commands
# --------------------------------------------------------------------------- #


def _activation_count(states: np.ndarray) -> int:
    return int(np.count_nonzero(np.diff(states.astype(np.int8), prepend=0) == 1))


def _profile_summary(profiles: list[ActivationProfile]) -> dict:
    states = np.concatenate([p.states for p in profiles])
    return {
        "samples": int(states.size),
        "on_samples": int(states.sum()),
        "on_fraction": float(states.mean()),
        "activations": sum(_activation_count(p.states) for p in profiles),
    }


def cmd_synth(args) -> int:
    started = time.time()
    cp = read_config(args.config)
    cfg, codes = synth_config_from(cp, args.hours)
    table = dataio.read_load_params(args.load_params)
    household = synth_household(cfg, args.seed)
    profiles = {}
    for name, code in codes.items():
        if name not in household.loads:
            raise ConfigError(f"load code given for unknown appliance {name!r}")
        profiles[name] = dataio.extract_activation_profile(household.loads[name], dataio.resolve_load(table, code))
    out = Path(args.out)
    sizes = pipeline.write_household(household, out, profiles)
    summary = {
        "folds": sizes,
        "loads": {name: {"load_code": codes.get(name), **_profile_summary([p])} for name, p in profiles.items()},
    }
    print(json.dumps(summary, indent=2))
    inputs = [p for p in (args.config, args.load_params) if p]
    write_manifest(_manifest_path(args, out / "manifest.json"), "synth", args, inputs, [out], started, summary)
    return EXIT_OK


def cmd_extract_gt(args) -> int:
    started = time.time()
    table = dataio.read_load_params(args.load_params)
    lp = dataio.resolve_load(table, args.load)
    pieces, report = dataio.ingest_csv(args.submeter, args.sample_period, args.max_gap)
    if args.upsample_to:
        pieces = [dataio.forward_fill_resample(s, args.upsample_to) for s in pieces]
    profiles = [dataio.extract_activation_profile(s, lp) for s in pieces]
    out = Path(args.out)
    dataio.write_profiles(out, profiles)
    summary = {"load": lp.code, **_profile_summary(profiles), "ingest": report.as_dict()}
    print(json.dumps(summary, indent=2))
    inputs = [p for p in (args.submeter, args.load_params) if p]
    write_manifest(_manifest_path(args, Path(f"{out}.manifest.json")), "extract-gt", args, inputs, [out],
                   started, summary)
    return EXIT_OK


def cmd_train(args) -> int:
    started = time.time()
    cp = read_config(args.config)
    model_cfg = model_config_from(cp, args.preset, window_len=args.window_len)
    run_cfg = train_config_from(cp, epochs=args.epochs, seed=args.seed, batch_size=args.batch_size,
                                patience=args.patience, lr=args.lr)
    args.seed = run_cfg.seed
    dtype = np.float64 if args.deterministic else np.float32

    train_pairs = pipeline.load_fold(args.dataset, "train", args.target, args.max_gap)
    val_pairs = pipeline.load_fold(args.dataset, "val", args.target, args.max_gap)
    if not train_pairs:
        raise DataError(f"{args.dataset}/train/aggregate.csv missing")
    data = pipeline.prepare_segments(train_pairs, val_pairs, model_cfg.window_len)
    log.info("train %d segments, val %d segments, K=%d", len(data.train),
             0 if data.val is None else len(data.val), model_cfg.window_len)

    with _single_thread(args.deterministic):
        result = pipeline.train_model(model_cfg, data, run_cfg, dtype)

    out = Path(args.out)
    out.parent.mkdir(parents=True, exist_ok=True)
    metadata = {
        "target": args.target,
        "preset": args.preset or (cp["model"].get("preset") if cp.has_section("model") else None) or "desk",
        "run": dataclasses.asdict(run_cfg),
        "best_epoch": result.best_epoch,
        "epochs_run": len(result.history),
        "sample_period": train_pairs[0][0].sample_period,
        "deterministic": bool(args.deterministic),
        "aborted": result.aborted,
    }
    save_checkpoint(result.model, out, metadata)
    history = Path(args.history) if args.history else out.with_name(out.name + ".history.tsv")
    history.write_text(format_history(result.history))
    summary = {
        "best_epoch": result.best_epoch,
        "epochs_run": len(result.history),
        "parameters": result.model.num_parameters(),
        "aborted": result.aborted,
        "checkpoint_sha256": sha256_file(out),
    }
    if result.history:
        summary["initial_val_loss"] = result.history[0].val_loss
        summary["final_val_loss"] = result.history[-1].val_loss
    print(json.dumps(summary, indent=2))
    inputs = [p for p in (args.dataset, args.config) if p]
    write_manifest(_manifest_path(args, Path(f"{out}.manifest.json")), "train", args, inputs, [out, history],
                   started, summary)
    if result.aborted:
        log.error("training aborted: %s (last good parameters saved to %s)", result.aborted, out)
        return EXIT_NUMERIC
    return EXIT_OK


def cmd_predict(args) -> int:
    started = time.time()
    model, header = load_checkpoint(args.checkpoint)
    pieces, report = dataio.ingest_csv(args.aggregate, args.sample_period, args.max_gap)
    period = header.get("metadata", {}).get("sample_period")
    if period is not None and abs(pieces[0].sample_period - period) > 1e-9:
        raise DataError(f"aggregate period {pieces[0].sample_period}s differs from the training period {period}s")
    profiles, posteriors = [], []
    for s in pieces:
        post, states = pipeline.predict_series(model, s, args.batch_size)
        profiles.append(ActivationProfile(states, s.sample_period, s.start_time,
                                          header.get("metadata", {}).get("target", "")))
        posteriors.append(post)
    out = Path(args.out)
    dataio.write_profiles(out, profiles, posteriors)
    summary = {**_profile_summary(profiles), "pieces": len(pieces)}
    print(json.dumps(summary, indent=2))
    write_manifest(_manifest_path(args, Path(f"{out}.manifest.json")), "predict", args,
                   [args.checkpoint, args.aggregate], [out], started, summary)
    return EXIT_OK


def _join(pred_path, truth_path):
    """Predicted and true states on the predicted timestamps (ms resolution)."""
    pt, ps = dataio.read_state_table(pred_path)
    tt, ts = dataio.read_state_table(truth_path)
    pk = np.round(pt * 1000).astype(np.int64)
    tk = np.round(tt * 1000).astype(np.int64)
    idx = np.searchsorted(tk, pk)
    ok = (idx < len(tk)) & (tk[np.minimum(idx, len(tk) - 1)] == pk)
    if not ok.all():
        first = pt[np.argmin(ok)]
        raise DataError(f"{int((~ok).sum())} predicted timestamps (first {first}) have no ground truth")
    return ps, ts[idx]


def cmd_eval(args) -> int:
    started = time.time()
    pred, truth = _join(args.predicted, args.truth)
    table = metrics.tabulate(pred, truth)
    report = metrics.compute_report(table)
    out = Path(args.out)
    doc = json.loads(metrics.format_json(report, table, args.label))
    if args.audit and 0 < report.rn < 1:
        doc["audit"] = {
            name: {col: getattr(r, attr) for col, attr in metrics.REPORT_COLUMNS}
            for name, r in metrics.trivial_classifier_audit(report.rn, table.n).items()
        }
    out.write_text(json.dumps(doc, indent=2) + "\n")
    tsv = Path(args.tsv) if args.tsv else out.with_suffix(".tsv")
    tsv.write_text(metrics.format_tsv(report, table, args.label))
    sys.stdout.write(tsv.read_text())
    write_manifest(_manifest_path(args, Path(f"{out}.manifest.json")), "eval", args,
                   [args.predicted, args.truth], [out, tsv], started, doc["metrics"])
    return EXIT_OK


# --------------------------------------------------------------------------- #
# Parser
# --------------------------------------------------------------------------- #


def build_parser() -> argparse.ArgumentParser:
    ap = _Parser(prog="convnilm", description="Appliance on/off detection from aggregate power.")
    ap.add_argument("--version", action="version", version=f"%(prog)s {__version__}")
    ap.add_argument("-q", "--quiet", action="store_true", help="only log warnings and errors")
    sub = ap.add_subparsers(dest="command", required=True, parser_class=_Parser)

    def common(p):
        p.add_argument("--manifest", help="manifest path (default: next to the output)")

    p = sub.add_parser("synth", help="generate a synthetic fold-tagged household dataset")
    p.add_argument("--config", help="INI file with [household] and [appliance:NAME] sections")
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--hours", type=float, help="override the household duration")
    p.add_argument("--load-params", help="load parameter CSV (default: shipped table)")
    p.add_argument("--out", required=True, help="output dataset directory")
    common(p)
    p.set_defaults(func=cmd_synth)

    p = sub.add_parser("extract-gt", help="ground-truth activation profile from a sub-metered CSV")
    p.add_argument("submeter", help="timestamp,watts CSV of one appliance")
    p.add_argument("--load", required=True, help="load code or name in the parameter table")
    p.add_argument("--load-params", help="load parameter CSV (default: shipped table)")
    p.add_argument("--upsample-to", type=float, help="forward-fill to this sample period (s) first")
    p.add_argument("--sample-period", type=float, help="input period (default: inferred)")
    p.add_argument("--max-gap", type=float, default=180.0)
    p.add_argument("--out", required=True)
    common(p)
    p.set_defaults(func=cmd_extract_gt)

    p = sub.add_parser("train", help="train a model on a fold-tagged dataset directory")
    p.add_argument("dataset")
    p.add_argument("--target", required=True, help="load name, matching profile_<target>.csv")
    p.add_argument("--preset", choices=["desk", "paper", "tiny"])
    p.add_argument("--config", help="INI file with [model] and [train] sections")
    p.add_argument("--window-len", type=int)
    p.add_argument("--epochs", type=int)
    p.add_argument("--batch-size", type=int)
    p.add_argument("--patience", type=int)
    p.add_argument("--lr", type=float)
    p.add_argument("--seed", type=int)
    p.add_argument("--deterministic", action="store_true",
                   help="64-bit arithmetic on a single BLAS thread (bit-reproducible)")
    p.add_argument("--max-gap", type=float, default=180.0)
    p.add_argument("--history", help="history TSV path (default: <out>.history.tsv)")
    p.add_argument("--out", required=True, help="checkpoint path")
    common(p)
    p.set_defaults(func=cmd_train)

    p = sub.add_parser("predict", help="posterior and on/off state for an aggregate CSV")
    p.add_argument("checkpoint")
    p.add_argument("aggregate")
    p.add_argument("--batch-size", type=int, default=16)
    p.add_argument("--sample-period", type=float)
    p.add_argument("--max-gap", type=float, default=180.0)
    p.add_argument("--out", required=True)
    common(p)
    p.set_defaults(func=cmd_predict)

    p = sub.add_parser("eval", help="metric report of a predicted against a true profile")
    p.add_argument("predicted")
    p.add_argument("truth")
    p.add_argument("--label", default="", help="load label for the report")
    p.add_argument("--audit", action="store_true", help="add always-off/always-on baselines")
    p.add_argument("--tsv", help="TSV report path (default: <out> with .tsv suffix)")
    p.add_argument("--out", required=True, help="JSON report path")
    common(p)
    p.set_defaults(func=cmd_eval)
    return ap


def main(argv=None) -> int:
    try:
        args = build_parser().parse_args(argv)
    except UsageError as exc:
        print(exc, file=sys.stderr)
        return EXIT_CONFIG
    logging.basicConfig(level=logging.WARNING if args.quiet else logging.INFO,
                        format="%(levelname)s %(name)s: %(message)s", stream=sys.stderr)
    try:
        return args.func(args)
    except (ConfigError, StructuralError, StateError) as exc:
        log.error("%s", exc)
        return EXIT_CONFIG
    except (DataError, OSError) as exc:
        log.error("%s", exc)
        return EXIT_DATA
    except (NumericError, FloatingPointError) as exc:
        log.error("%s", exc)
        return EXIT_NUMERIC


if __name__ == "__main__":
    sys.exit(main())
