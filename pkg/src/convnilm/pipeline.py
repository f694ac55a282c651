"""End-to-end steps shared by the CLI and the acceptance tests.

Dataset directories are fold-tagged::

    DATASET/
      train/aggregate.csv          timestamp,watts (1 Hz input)
      train/submeter_<load>.csv    timestamp,watts (reference meter)
      train/profile_<load>.csv     timestamp,state (ground truth)
      val/...                      same files
      eval/...                     same files
"""

from __future__ import annotations

import logging
from dataclasses import dataclass
from pathlib import Path

import numpy as np

from . import dataio
from .dataio import ActivationProfile, SegmentSet, SignalSeries, Standardizer
from .errors import DataError, StructuralError
from .model import Model, ModelConfig, build_model, decide
from .nncore import OpMode
from .synth import Household
from .train import TrainResult, TrainRunConfig, train_loop

log = logging.getLogger(__name__)

FOLDS = ("train", "val", "eval")


def split_folds(n: int, fractions=(0.7, 0.15, 0.15)) -> list[tuple[int, int]]:
    """Contiguous [start, stop) index ranges for the train/val/eval folds."""
    if len(fractions) != 3 or any(f < 0 for f in fractions) or sum(fractions) <= 0:
        raise DataError(f"bad fold fractions {fractions}")
    total = sum(fractions)
    bounds = [0]
    acc = 0.0
    for f in fractions[:-1]:
        acc += f / total
        bounds.append(int(round(acc * n)))
    bounds.append(n)
    return [(bounds[i], bounds[i + 1]) for i in range(3)]


def write_household(household: Household, out_dir, profiles: dict[str, ActivationProfile] | None = None,
                    fractions=(0.7, 0.15, 0.15)) -> dict[str, int]:
    """Write a synthetic household as a fold-tagged dataset directory."""
    out_dir = Path(out_dir)
    sizes = {}
    for fold, (a, b) in zip(FOLDS, split_folds(len(household.aggregate), fractions)):
        d = out_dir / fold
        d.mkdir(parents=True, exist_ok=True)
        dataio.write_series(d / "aggregate.csv", household.aggregate.slice(a, b))
        for name, s in household.loads.items():
            dataio.write_series(d / f"submeter_{name}.csv", s.slice(a, b))
        for name, prof in (profiles or {}).items():
            part = ActivationProfile(prof.states[a:b], prof.sample_period,
                                     prof.start_time + a * prof.sample_period, prof.load_id)
            dataio.write_profile(d / f"profile_{name}.csv", part)
        sizes[fold] = b - a
    return sizes


def _align(series: SignalSeries, profile: ActivationProfile) -> ActivationProfile:
    """Slice ``profile`` to the span of ``series`` (matching sample grids)."""
    if abs(series.sample_period - profile.sample_period) > 1e-9:
        raise DataError(
            f"aggregate period {series.sample_period}s differs from profile period {profile.sample_period}s"
        )
    off = int(round((series.start_time - profile.start_time) / series.sample_period))
    if off < 0 or off + len(series) > len(profile):
        raise DataError("ground-truth profile does not cover the aggregate series")
    return ActivationProfile(profile.states[off : off + len(series)], profile.sample_period,
                             series.start_time, profile.load_id)


def load_fold(dataset_dir, fold: str, target: str, max_gap: float = 180.0):
    """``[(aggregate_piece, aligned_profile), ...]`` for one fold, or [] if the fold is absent."""
    d = Path(dataset_dir) / fold
    agg_path = d / "aggregate.csv"
    if not agg_path.exists():
        return []
    prof_path = d / f"profile_{target}.csv"
    if not prof_path.exists():
        raise DataError(f"{prof_path} missing; run extract-gt on submeter_{target}.csv first")
    pieces, _ = dataio.ingest_csv(agg_path, max_gap=max_gap)
    profile = dataio.read_profile(prof_path)
    return [(p, _align(p, profile)) for p in pieces]


@dataclass
class PreparedData:
    train: SegmentSet
    val: SegmentSet | None
    stats: Standardizer


def prepare_segments(train_pairs, val_pairs, K: int) -> PreparedData:
    if not train_pairs:
        raise DataError("no training data")
    stats = Standardizer.fit(np.concatenate([x.samples for x, _ in train_pairs]))
    train = dataio.make_segment_set(train_pairs, K, stats, "train")
    val = dataio.make_segment_set(val_pairs, K, stats, "val") if val_pairs else None
    return PreparedData(train, val, stats)


def train_model(model_cfg: ModelConfig, data: PreparedData, run_cfg: TrainRunConfig,
                dtype=np.float32) -> TrainResult:
    model = build_model(model_cfg, run_cfg.seed, dtype)
    model.standardizer = data.stats.to_dict()
    result = train_loop(model, data.train, data.val, run_cfg)
    result.model.standardizer = data.stats.to_dict()
    return result


def predict_series(model: Model, series: SignalSeries, batch_size: int = 16):
    """Posterior and decided states for a whole series of any length.

    The series is cut into consecutive windows of the model length; the last
    partial window is zero-padded after standardization and its padding is
    dropped from the output.
    """
    if model.standardizer is None:
        raise StructuralError("model has no stored input standardization")
    stats = Standardizer.from_dict(model.standardizer)
    K = model.config.window_len
    n = len(series)
    if n == 0:
        raise DataError("empty input series")
    n_win = -(-n // K)
    z = np.zeros(n_win * K)
    z[:n] = stats.apply(series.samples)
    windows = z.reshape(n_win, K)
    post = np.empty((n_win, K), dtype=np.float64)
    for i in range(0, n_win, batch_size):
        post[i : i + batch_size] = model.forward(windows[i : i + batch_size], OpMode.INFER)[:, 0, :]
    post = post.reshape(-1)[:n]
    return post, decide(post)


def segment_predictions(model: Model, segments: SegmentSet, batch_size: int = 16) -> np.ndarray:
    out = []
    for i in range(0, len(segments), batch_size):
        p = model.forward(segments.inputs[i : i + batch_size], OpMode.INFER)
        out.append(decide(p[:, 0, :]))
    return np.concatenate(out)
