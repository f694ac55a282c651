"""Power series I/O, ground-truth activation profiles, windowing and scaling."""

from __future__ import annotations

import csv
import hashlib
import io
import logging
import math
import os
from dataclasses import dataclass, field, replace
from importlib import resources
from pathlib import Path

import numpy as np

from .errors import ConfigError, DataError

log = logging.getLogger(__name__)


@dataclass
class SignalSeries:
    """Uniformly sampled real power in watts."""

    samples: np.ndarray
    sample_period: float = 1.0  # seconds
    start_time: float = 0.0  # unix seconds

    def __post_init__(self):
        self.samples = np.asarray(self.samples, dtype=np.float64)
        if self.samples.ndim != 1:
            raise DataError("a power series must be one-dimensional")
        if not self.sample_period > 0:
            raise ConfigError(f"sample period must be positive, got {self.sample_period}")

    def __len__(self):
        return len(self.samples)

    @property
    def has_negative(self) -> bool:
        return bool((self.samples < 0).any())

    def timestamps(self) -> np.ndarray:
        return self.start_time + self.sample_period * np.arange(len(self.samples))

    def slice(self, start: int, stop: int) -> "SignalSeries":
        return SignalSeries(
            self.samples[start:stop], self.sample_period, self.start_time + start * self.sample_period
        )


@dataclass
class ActivationProfile:
    """Binary on/off states aligned sample-for-sample with a power series."""

    states: np.ndarray
    sample_period: float = 1.0
    start_time: float = 0.0
    load_id: str = ""

    def __post_init__(self):
        self.states = np.asarray(self.states).astype(np.int8)
        if self.states.size and not np.isin(self.states, (0, 1)).all():
            raise DataError("activation states must be 0 or 1")

    def __len__(self):
        return len(self.states)

    def timestamps(self) -> np.ndarray:
        return self.start_time + self.sample_period * np.arange(len(self.states))


@dataclass(frozen=True)
class LoadParams:
    """Thresholds (watts) and minimum durations (seconds) of the on/off estimator."""

    code: str
    p_on: float
    p_off: float
    n_on: float
    n_off: float
    name: str = ""

    def __post_init__(self):
        if not self.p_on >= self.p_off >= 0:
            raise ConfigError(f"{self.code}: need p_on >= p_off >= 0")
        if self.n_on <= 0 or self.n_off <= 0:
            raise ConfigError(f"{self.code}: durations must be positive")

    def samples(self, sample_period: float) -> tuple[int, int]:
        """Durations converted to sample counts (nearest integer)."""
        out = []
        for label, dur in (("n_on", self.n_on), ("n_off", self.n_off)):
            if dur < sample_period - 1e-9:
                raise ConfigError(
                    f"{self.code}: {label}={dur}s is shorter than one sample ({sample_period}s)"
                )
            out.append(max(1, int(math.floor(dur / sample_period + 0.5))))
        return out[0], out[1]


# --------------------------------------------------------------------------- #
# Load parameter files
# --------------------------------------------------------------------------- #

LOAD_FIELDS = ("code", "name", "p_on", "p_off", "n_on", "n_off")


def read_load_params(path: str | os.PathLike | None = None) -> dict[str, LoadParams]:
    """Read a load parameter CSV (``code,name,p_on,p_off,n_on,n_off``; seconds, watts).

    Without ``path`` the shipped default table is returned.
    """
    if path is None:
        text = resources.files("convnilm").joinpath("data/loads.csv").read_text()
    else:
        text = Path(path).read_text()
    rows = [r for r in text.splitlines() if r.strip() and not r.lstrip().startswith("#")]
    reader = csv.DictReader(rows)
    if reader.fieldnames is None or set(LOAD_FIELDS) - set(f.strip() for f in reader.fieldnames):
        raise DataError(f"load parameter file must have columns {', '.join(LOAD_FIELDS)}")
    table = {}
    for row in reader:
        row = {k.strip(): (v or "").strip() for k, v in row.items()}
        try:
            lp = LoadParams(
                row["code"], float(row["p_on"]), float(row["p_off"]),
                float(row["n_on"]), float(row["n_off"]), row["name"],
            )
        except ValueError as exc:
            raise DataError(f"bad load parameter row {row}: {exc}") from exc
        table[lp.code] = lp
    return table


def default_load_params() -> dict[str, LoadParams]:
    return read_load_params(None)


def resolve_load(table: dict[str, LoadParams], key: str) -> LoadParams:
    """Look a load up by code or (case-insensitive) name."""
    if key in table:
        return table[key]
    for lp in table.values():
        if lp.name.lower() == key.lower() or lp.code.lower() == key.lower():
            return lp
    raise ConfigError(f"unknown load {key!r}; known: {', '.join(sorted(table))}")


# --------------------------------------------------------------------------- #
# Ground truth
# --------------------------------------------------------------------------- #


def _window_all(mask: np.ndarray, width: int) -> np.ndarray:
    """``out[n]`` is True iff ``mask[n:n+width]`` is all True and fully inside the series."""
    n = len(mask)
    out = np.zeros(n, dtype=bool)
    if width > n:
        return out
    c = np.concatenate(([0], np.cumsum(mask, dtype=np.int64)))
    out[: n - width + 1] = (c[width:] - c[:-width]) == width
    return out


def extract_activation_profile(x: SignalSeries, p: LoadParams) -> ActivationProfile:
    """Threshold-and-hold estimate of a load's on/off states from its own power.

    Sample ``n`` is on if the next ``n_on`` samples (``n`` included) all reach
    ``p_on``; off if the next ``n_off`` samples all stay at or below ``p_off``;
    otherwise it keeps the previous state, starting from off. A window that
    would run past the end of the series certifies nothing. When both
    conditions hold the on-state wins.
    """
    n_on, n_off = p.samples(x.sample_period)
    s = x.samples
    on = _window_all(s >= p.p_on, n_on)
    off = _window_all(s <= p.p_off, n_off)
    decided = on | off
    # forward-fill the last decision; before any decision the state is off
    last = np.where(decided, np.arange(len(s)), -1)
    np.maximum.accumulate(last, out=last)
    states = np.where(last >= 0, on[np.maximum(last, 0)], False)
    return ActivationProfile(states.astype(np.int8), x.sample_period, x.start_time, p.code)


# --------------------------------------------------------------------------- #
# Resampling, segments, scaling
# --------------------------------------------------------------------------- #


def _integer_factor(source: float, target: float) -> int:
    ratio = source / target
    factor = int(round(ratio))
    if factor < 1 or abs(ratio - factor) > 1e-9 * max(1.0, ratio):
        raise ConfigError(f"target period {target}s does not divide source period {source}s")
    return factor


def forward_fill_resample(s, target_period: float):
    """Up-sample a series or profile by repeating each sample (integer factor only)."""
    factor = _integer_factor(s.sample_period, target_period)
    if isinstance(s, ActivationProfile):
        return replace(s, states=np.repeat(s.states, factor), sample_period=target_period)
    return replace(s, samples=np.repeat(s.samples, factor), sample_period=target_period)


def downsample_first(s: SignalSeries, factor: int) -> SignalSeries:
    """Keep every ``factor``-th sample, starting with the first."""
    return replace(s, samples=s.samples[::factor].copy(), sample_period=s.sample_period * factor)


@dataclass
class Standardizer:
    """Global affine scaling fitted on the training fold only."""

    mean: float
    std: float

    def __post_init__(self):
        if not (np.isfinite(self.mean) and np.isfinite(self.std)) or self.std <= 0:
            raise ConfigError(f"standardizer needs a positive finite std, got {self.std}")

    @classmethod
    def fit(cls, samples: np.ndarray) -> "Standardizer":
        samples = np.asarray(samples, dtype=np.float64)
        if samples.size == 0:
            raise DataError("cannot fit a standardizer on no data")
        return cls(float(samples.mean()), float(samples.std()))

    def apply(self, x):
        return (np.asarray(x, dtype=np.float64) - self.mean) / self.std

    def inverse(self, z):
        return np.asarray(z, dtype=np.float64) * self.std + self.mean

    def to_dict(self) -> dict:
        return {"mean": self.mean, "std": self.std, "checksum": self.checksum()}

    @classmethod
    def from_dict(cls, d: dict) -> "Standardizer":
        st = cls(float(d["mean"]), float(d["std"]))
        if "checksum" in d and d["checksum"] != st.checksum():
            raise DataError("stored standardizer statistics fail their checksum")
        return st

    def checksum(self) -> str:
        return hashlib.sha256(np.array([self.mean, self.std], "<f8").tobytes()).hexdigest()[:16]


def standardize(window, stats: Standardizer):
    return stats.apply(window)


@dataclass
class SegmentSet:
    inputs: np.ndarray  # (N_K, K) standardized aggregate
    targets: np.ndarray  # (N_K, K) binary states
    fold: str = "train"
    offsets: np.ndarray = field(default_factory=lambda: np.zeros(0, dtype=np.int64))

    def __len__(self):
        return len(self.inputs)


def make_segments(
    x: SignalSeries, omega: ActivationProfile, K: int, stats: Standardizer, fold: str = "train"
) -> SegmentSet:
    """Cut aligned series into ``floor(N/K)`` non-overlapping windows from offset 0."""
    if K < 1:
        raise ConfigError("window length must be positive")
    N = len(x)
    if len(omega) != N:
        raise DataError(f"aggregate ({N}) and profile ({len(omega)}) lengths differ")
    n_k = N // K
    if n_k == 0:
        raise DataError(f"series of {N} samples is shorter than one window ({K})")
    used = n_k * K
    inputs = stats.apply(x.samples[:used]).reshape(n_k, K)
    targets = omega.states[:used].reshape(n_k, K).astype(np.float64)
    return SegmentSet(inputs, targets, fold, np.arange(n_k, dtype=np.int64) * K)


def make_segment_set(pairs, K: int, stats: Standardizer, fold: str) -> SegmentSet:
    """Concatenate the segments of several (aggregate, profile) pieces."""
    sets = [make_segments(x, w, K, stats, fold) for x, w in pairs if len(x) >= K]
    if not sets:
        raise DataError(f"{fold} fold has no series of at least {K} samples")
    return SegmentSet(
        np.concatenate([s.inputs for s in sets]),
        np.concatenate([s.targets for s in sets]),
        fold,
        np.concatenate([s.offsets for s in sets]),
    )


# --------------------------------------------------------------------------- #
# CSV
# --------------------------------------------------------------------------- #


@dataclass
class IngestReport:
    rows: int = 0
    bad_rows: int = 0
    gaps_filled: int = 0
    samples_filled: int = 0
    splits: int = 0
    span_seconds: float = 0.0
    sample_period: float = 0.0

    def as_dict(self) -> dict:
        return dict(self.__dict__)


def _split_row(line: str) -> list[str]:
    return line.replace(",", " ").split()


def ingest_csv(
    path: str | os.PathLike,
    sample_period: float | None = None,
    max_gap: float = 180.0,
    max_bad_rows: int = 0,
) -> tuple[list[SignalSeries], IngestReport]:
    """Parse ``timestamp watts`` rows (comma or whitespace separated).

    Gaps up to ``max_gap`` seconds are forward-filled; longer gaps start a new
    series. The period is inferred from the median spacing unless given. A
    header line is tolerated. Returns ``(series_list, report)``.
    """
    text = Path(path).read_text()
    ts, vals = [], []
    report = IngestReport()
    for lineno, line in enumerate(io.StringIO(text), start=1):
        if not line.strip() or line.lstrip().startswith("#"):
            continue
        parts = _split_row(line)
        try:
            t, v = float(parts[0]), float(parts[1])
            if not (math.isfinite(t) and math.isfinite(v)):
                raise ValueError
        except (ValueError, IndexError):
            if not ts and report.bad_rows == 0 and lineno == 1:
                continue  # header
            report.bad_rows += 1
            if report.bad_rows > max_bad_rows:
                raise DataError(f"{path}:{lineno}: unparseable row {line.strip()!r}")
            continue
        if ts and t <= ts[-1]:
            raise DataError(f"{path}:{lineno}: timestamp {t} does not increase (previous {ts[-1]})")
        ts.append(t)
        vals.append(v)
    report.rows = len(ts)
    if not ts:
        raise DataError(f"{path}: no data rows")

    t = np.asarray(ts)
    v = np.asarray(vals)
    if sample_period is None:
        sample_period = float(np.median(np.diff(t))) if len(t) > 1 else 1.0
    report.sample_period = sample_period
    report.span_seconds = float(t[-1] - t[0])

    series = []
    cur_vals = [v[0]]
    cur_start = t[0]
    for i in range(1, len(t)):
        steps = int(round((t[i] - t[i - 1]) / sample_period))
        if steps <= 1:
            cur_vals.append(v[i])
        elif (t[i] - t[i - 1]) <= max_gap:
            report.gaps_filled += 1
            report.samples_filled += steps - 1
            cur_vals.extend([cur_vals[-1]] * (steps - 1))
            cur_vals.append(v[i])
        else:
            report.splits += 1
            series.append(SignalSeries(np.asarray(cur_vals), sample_period, cur_start))
            cur_vals, cur_start = [v[i]], t[i]
    series.append(SignalSeries(np.asarray(cur_vals), sample_period, cur_start))
    for s in series:
        if s.has_negative:
            log.warning("%s: series starting at %s contains negative power readings", path, s.start_time)
    return series, report


def read_series(path, sample_period=None, max_gap=180.0) -> SignalSeries:
    """Single contiguous series; raises if the file splits into several."""
    series, report = ingest_csv(path, sample_period, max_gap)
    if len(series) != 1:
        raise DataError(f"{path}: {report.splits} gaps exceed max_gap={max_gap}s; split the file first")
    return series[0]


def _fmt_time(t: float) -> str:
    return f"{t:.3f}".rstrip("0").rstrip(".")


def write_series(path, s: SignalSeries) -> None:
    with open(path, "w", newline="") as fh:
        fh.write("timestamp,watts\n")
        for t, v in zip(s.timestamps(), s.samples):
            fh.write(f"{_fmt_time(t)},{float(v)!r}\n")


def write_profile(path, p: ActivationProfile, posterior: np.ndarray | None = None) -> None:
    write_profiles(path, [p], None if posterior is None else [posterior])


def write_profiles(path, profiles: list[ActivationProfile], posteriors: list[np.ndarray] | None = None) -> None:
    """Write several profile pieces (e.g. split at gaps) into one CSV, in order."""
    with open(path, "w", newline="") as fh:
        fh.write("timestamp,state\n" if posteriors is None else "timestamp,posterior,state\n")
        for i, p in enumerate(profiles):
            if posteriors is None:
                for t, w in zip(p.timestamps(), p.states):
                    fh.write(f"{_fmt_time(t)},{int(w)}\n")
            else:
                for t, q, w in zip(p.timestamps(), posteriors[i], p.states):
                    fh.write(f"{_fmt_time(t)},{float(q)!r},{int(w)}\n")


def read_state_table(path) -> tuple[np.ndarray, np.ndarray]:
    """Raw ``(timestamps, states)`` of a profile CSV; rows need not be contiguous."""
    with open(path, newline="") as fh:
        reader = csv.reader(fh)
        header = next(reader, None)
        if header is None:
            raise DataError(f"{path}: empty profile file")
        header = [h.strip() for h in header]
        if "state" not in header or "timestamp" not in header:
            raise DataError(f"{path}: profile needs timestamp and state columns")
        ti, si = header.index("timestamp"), header.index("state")
        ts, st = [], []
        for lineno, row in enumerate(reader, start=2):
            if not row:
                continue
            try:
                ts.append(float(row[ti]))
                st.append(int(row[si]))
            except (ValueError, IndexError) as exc:
                raise DataError(f"{path}:{lineno}: bad row {row}") from exc
    if not st:
        raise DataError(f"{path}: no profile rows")
    states = np.asarray(st)
    if not np.isin(states, (0, 1)).all():
        raise DataError(f"{path}: states must be 0 or 1")
    ts = np.asarray(ts)
    if len(ts) > 1 and not (np.diff(ts) > 0).all():
        raise DataError(f"{path}: timestamps must increase")
    return ts, states


def read_profile(path) -> ActivationProfile:
    """Read a profile CSV on a uniform grid; the ``state`` column is used when several are present."""
    ts, st = read_state_table(path)
    period = float(np.median(np.diff(ts))) if len(ts) > 1 else 1.0
    grid = ts[0] + period * np.arange(len(ts))
    if np.abs(ts - grid).max() > 1e-3 * period:
        raise DataError(f"{path}: profile timestamps are not on a uniform {period}s grid")
    return ActivationProfile(st, period, ts[0])
