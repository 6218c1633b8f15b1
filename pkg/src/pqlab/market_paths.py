"""Daily price series handling: ingestion, synthesis, windowing, conditioning.

Conventions used throughout the package:

* A series stores one row per calendar day; ``is_trading_day`` flags the
  days on which the close actually moves.  Non-trading days carry the
  previous close forward.
* Log returns are defined between consecutive trading days,
  ``r_t = ln(S_t / S_{t-1})``.
* Day counts between dates ``s < t``: calendar days ``CD(s, t) = t - s``
  (start inclusive, end exclusive) and trading days ``TD(s, t)`` = number
  of trading days in ``(s, t]``.  A slice starting on trading day ``s``
  with a ``w``-calendar-day window therefore has ``CD = w`` and its valid
  log returns are exactly the ``TD(s, s+w)`` returns ending inside the
  window, so prices rebuild from ``s0`` by exponentiating the cumulative
  sum.
* Annualization uses 365 calendar days and 252 trading days per year.
"""

from __future__ import annotations

import csv
import math
from collections import Counter
from dataclasses import dataclass

import numpy as np

from .errors import ConfigError, DataError

TRADING_DAYS_PER_YEAR = 252
CALENDAR_DAYS_PER_YEAR = 365

# Historical-volatility lookback: up to one trading year strictly before
# the slice start, rejecting slices with fewer than 60 prior trading days.
SIGMA_HIST_DAYS = 252
SIGMA_HIST_MIN_DAYS = 60


@dataclass(frozen=True)
class DailySeries:
    """One row per calendar day; closes carry forward over non-trading days."""

    dates: np.ndarray  # datetime64[D], strictly increasing
    closes: np.ndarray  # float, > 0
    is_trading_day: np.ndarray  # bool

    def __post_init__(self) -> None:
        dates = np.asarray(self.dates, dtype="datetime64[D]")
        closes = np.asarray(self.closes, dtype=float)
        trading = np.asarray(self.is_trading_day, dtype=bool)
        if not (len(dates) == len(closes) == len(trading)):
            raise DataError("series columns must have equal length")
        if len(dates) > 1 and not np.all(np.diff(dates).astype(int) > 0):
            raise DataError("series dates must be strictly increasing")
        if not np.all(np.isfinite(closes)) or np.any(closes <= 0.0):
            raise DataError("series closes must be finite and positive")
        if int(trading.sum()) < 2:
            raise DataError("series needs at least 2 trading days")
        object.__setattr__(self, "dates", dates)
        object.__setattr__(self, "closes", closes)
        object.__setattr__(self, "is_trading_day", trading)

    @property
    def trading_dates(self) -> np.ndarray:
        return self.dates[self.is_trading_day]

    @property
    def trading_closes(self) -> np.ndarray:
        return self.closes[self.is_trading_day]


@dataclass(frozen=True)
class RateTable:
    """Annualized risk-free rate per date for a single tenor, forward-filled."""

    tenor_days: int
    dates: np.ndarray  # datetime64[D], strictly increasing
    rates: np.ndarray  # float, finite

    def __post_init__(self) -> None:
        dates = np.asarray(self.dates, dtype="datetime64[D]")
        rates = np.asarray(self.rates, dtype=float)
        if len(dates) != len(rates) or len(dates) == 0:
            raise DataError("rate table must be non-empty with equal columns")
        if len(dates) > 1 and not np.all(np.diff(dates).astype(int) > 0):
            raise DataError("rate table dates must be strictly increasing")
        if not np.all(np.isfinite(rates)):
            raise DataError("rates must be finite")
        object.__setattr__(self, "dates", dates)
        object.__setattr__(self, "rates", rates)

    def rate_at(self, date: np.datetime64) -> float:
        """Most recent rate at or before `date` (forward fill by date)."""
        idx = int(np.searchsorted(self.dates, np.datetime64(date, "D"), side="right")) - 1
        if idx < 0:
            raise DataError(
                f"no {self.tenor_days}-day rate available on or before {date}"
            )
        return float(self.rates[idx])


@dataclass(frozen=True)
class ConditionVector:
    """Per-slice conditioning features.

    sigma_hist  annualized volatility over the lookback year before start
    r           matched risk-free rate (tenor == window calendar days)
    t_calendar  CD(start, end) / 365
    t_trading   TD(start, end) / 252
    n_trading   trading days in the slice (== number of valid returns)
    """

    sigma_hist: float
    r: float
    t_calendar: float
    t_trading: float
    n_trading: int

    def __post_init__(self) -> None:
        if self.sigma_hist < 0.0:
            raise DataError("sigma_hist must be non-negative")
        if self.n_trading < 1:
            raise DataError("slice needs at least one trading day")
        if self.t_trading > self.t_calendar + 1e-12:
            raise DataError("t_trading exceeds t_calendar")

    def as_array(self) -> np.ndarray:
        """Model-input feature vector; n_trading shares t_trading's scale."""
        return np.array(
            [
                self.sigma_hist,
                self.r,
                self.t_calendar,
                self.t_trading,
                self.n_trading / TRADING_DAYS_PER_YEAR,
            ]
        )


COND_DIM = 5


@dataclass(frozen=True)
class PathSlice:
    """One training/test sample: masked log-return sequence plus features."""

    s0: float
    log_returns: np.ndarray  # valid returns only, length == condition.n_trading
    mask: np.ndarray  # bool, length L_max, contiguous true prefix
    condition: ConditionVector
    window_calendar_days: int
    start_date: np.datetime64

    def __post_init__(self) -> None:
        lr = np.asarray(self.log_returns, dtype=float)
        mask = np.asarray(self.mask, dtype=bool)
        n = int(mask.sum())
        if n != len(lr):
            raise DataError("mask true-count must equal number of valid returns")
        if n and not mask[:n].all():
            raise DataError("mask must be a contiguous true prefix")
        object.__setattr__(self, "log_returns", lr)
        object.__setattr__(self, "mask", mask)

    def padded_returns(self) -> np.ndarray:
        """Returns zero-padded to the mask length."""
        out = np.zeros(len(self.mask))
        out[: len(self.log_returns)] = self.log_returns
        return out


@dataclass(frozen=True)
class SplitSlices:
    """slice_dataset output: train/test partition plus skip diagnostics."""

    train: list
    test: list
    skipped: Counter
    l_max: int


def log_return(p_prev: float, p_curr: float) -> float:
    """r = ln(p_curr / p_prev); prices must be strictly positive."""
    if p_prev <= 0.0 or p_curr <= 0.0:
        raise DataError("log return requires strictly positive prices")
    return math.log(p_curr / p_prev)


def log_returns(closes: np.ndarray) -> np.ndarray:
    """Vectorized log returns between consecutive entries."""
    closes = np.asarray(closes, dtype=float)
    if np.any(closes <= 0.0):
        raise DataError("log returns require strictly positive prices")
    return np.diff(np.log(closes))


def to_prices(s0: float, returns: np.ndarray) -> np.ndarray:
    """Rebuild the price path from the initial price and log returns.

    The result excludes s0 itself: element i is the close after i+1
    return steps, so len(out) == len(returns).
    """
    if s0 <= 0.0:
        raise DataError("initial price must be strictly positive")
    return s0 * np.exp(np.cumsum(np.asarray(returns, dtype=float)))


def annualized_volatility(returns: np.ndarray) -> float:
    """Sample standard deviation of log returns scaled by sqrt(252)."""
    returns = np.asarray(returns, dtype=float)
    if returns.size < 2:
        raise DataError("volatility needs at least 2 returns")
    return float(np.std(returns, ddof=1) * math.sqrt(TRADING_DAYS_PER_YEAR))


def load_series_csv(path) -> DailySeries:
    """Read a `date,close,is_trading_day` CSV into a DailySeries."""
    dates, closes, trading = [], [], []
    with open(path, newline="") as fh:
        reader = csv.DictReader(fh)
        required = {"date", "close", "is_trading_day"}
        if reader.fieldnames is None or not required.issubset(reader.fieldnames):
            raise DataError(f"{path}: expected header date,close,is_trading_day")
        for row in reader:
            try:
                dates.append(np.datetime64(row["date"], "D"))
                closes.append(float(row["close"]))
                trading.append(bool(int(row["is_trading_day"])))
            except (ValueError, TypeError) as exc:
                raise DataError(f"{path}: bad row {row}: {exc}") from exc
    if not dates:
        raise DataError(f"{path}: no data rows")
    return DailySeries(np.array(dates), np.array(closes), np.array(trading))


def load_rates_csv(path) -> dict:
    """Read a `date,tenor_days,rate` CSV into {tenor_days: RateTable}."""
    rows = {}
    with open(path, newline="") as fh:
        reader = csv.DictReader(fh)
        required = {"date", "tenor_days", "rate"}
        if reader.fieldnames is None or not required.issubset(reader.fieldnames):
            raise DataError(f"{path}: expected header date,tenor_days,rate")
        for row in reader:
            try:
                tenor = int(row["tenor_days"])
                date = np.datetime64(row["date"], "D")
                rate = float(row["rate"])
            except (ValueError, TypeError) as exc:
                raise DataError(f"{path}: bad row {row}: {exc}") from exc
            rows.setdefault(tenor, []).append((date, rate))
    if not rows:
        raise DataError(f"{path}: no data rows")
    tables = {}
    for tenor, pairs in rows.items():
        pairs.sort(key=lambda p: p[0])
        dates = np.array([p[0] for p in pairs], dtype="datetime64[D]")
        rates = np.array([p[1] for p in pairs], dtype=float)
        tables[tenor] = RateTable(tenor, dates, rates)
    return tables


def _sigma_hist_at(series: DailySeries, start_idx_t: int) -> float | None:
    """Annualized vol from the closes of up to the last 252 trading days
    strictly before the start; None if fewer than 60 are available."""
    lo = max(0, start_idx_t - SIGMA_HIST_DAYS)
    closes = series.trading_closes[lo:start_idx_t]
    if len(closes) < SIGMA_HIST_MIN_DAYS:
        return None
    return annualized_volatility(log_returns(closes))


def slice_dataset(
    series: DailySeries,
    rates: dict,
    windows,
    split_date,
    stride: int = 1,
) -> SplitSlices:
    """Cut sliding windows from a daily series and split by start date.

    A slice starts on each trading day (stride in trading days) and spans
    `window` calendar days.  Slices starting before `split_date` belong to
    the training set but are dropped if any price they would touch falls on
    or after the split (look-ahead prevention); slices starting on or after
    the split form the test set.  Returns are padded to the longest slice
    and masked.

    Skip reasons (counted, not fatal): window running off the end of the
    series, not enough history for sigma_hist, trading-day density above
    252/365 (which would break t_trading <= t_calendar), split straddle.

    Raises DataError if a window has no rate table of matching tenor.
    """
    windows = sorted(set(int(w) for w in windows))
    if not windows:
        raise ConfigError("need at least one window length")
    for w in windows:
        if w not in rates:
            raise DataError(f"no rate table with tenor {w} days")
    split = np.datetime64(split_date, "D")
    if not (series.dates[0] < split <= series.dates[-1]):
        raise DataError("split date must fall inside the series")

    t_dates = series.trading_dates
    t_closes = series.trading_closes
    skipped: Counter = Counter()
    raw = []  # (start_idx_t, window, returns, cond, is_train)
    for start_idx in range(0, len(t_dates), stride):
        start = t_dates[start_idx]
        for w in windows:
            end = start + np.timedelta64(w, "D")
            if end > series.dates[-1]:
                skipped["window_past_series_end"] += 1
                continue
            is_train = start < split
            if is_train and end >= split:
                # Training slices must not touch any price dated >= split.
                skipped["straddles_split"] += 1
                continue
            stop_idx = int(np.searchsorted(t_dates, end, side="right"))
            n_trading = stop_idx - (start_idx + 1)
            if n_trading < 1:
                skipped["no_trading_days"] += 1
                continue
            if n_trading * CALENDAR_DAYS_PER_YEAR > w * TRADING_DAYS_PER_YEAR:
                skipped["trading_density_too_high"] += 1
                continue
            sigma = _sigma_hist_at(series, start_idx)
            if sigma is None:
                skipped["insufficient_history"] += 1
                continue
            rate = rates[w].rate_at(start)
            cond = ConditionVector(
                sigma_hist=sigma,
                r=rate,
                t_calendar=w / CALENDAR_DAYS_PER_YEAR,
                t_trading=n_trading / TRADING_DAYS_PER_YEAR,
                n_trading=n_trading,
            )
            rets = log_returns(t_closes[start_idx:stop_idx])
            raw.append((start_idx, w, rets, cond, is_train))

    l_max = max((len(r[2]) for r in raw), default=0)
    train, test = [], []
    for start_idx, w, rets, cond, is_train in raw:
        mask = np.zeros(l_max, dtype=bool)
        mask[: len(rets)] = True
        sl = PathSlice(
            s0=float(t_closes[start_idx]),
            log_returns=rets,
            mask=mask,
            condition=cond,
            window_calendar_days=w,
            start_date=t_dates[start_idx],
        )
        (train if is_train else test).append(sl)
    return SplitSlices(train=train, test=test, skipped=skipped, l_max=l_max)


@dataclass(frozen=True)
class GeneratorConfig:
    """Two-regime GBM generator settings (annualized drift/vol)."""

    n_days: int  # calendar days
    s0: float = 100.0
    mu1: float = 0.05
    mu2: float = 0.05
    sigma1: float = 0.15
    sigma2: float = 0.45
    p_switch: float = 0.02  # per-trading-day regime switch probability
    start_date: str = "2015-01-01"

    def __post_init__(self) -> None:
        if self.n_days < 2:
            raise ConfigError("generator needs at least 2 days")
        if self.s0 <= 0.0:
            raise ConfigError("generator s0 must be positive")
        if self.sigma1 < 0.0 or self.sigma2 < 0.0:
            raise ConfigError("generator volatilities must be non-negative")
        if not 0.0 <= self.p_switch <= 1.0:
            raise ConfigError("p_switch must be a probability")


# Every 10th weekday is a synthetic exchange holiday.  This keeps the
# trading-day density at 9/14 < 252/365 in every window, like a real
# holiday calendar, so trading maturities never exceed calendar ones.
_HOLIDAY_EVERY_N_WEEKDAYS = 10


def synthesize_series(cfg: GeneratorConfig, seed: int) -> DailySeries:
    """Generate a daily close series from a two-regime discrete GBM.

    Trading days are weekdays minus periodic synthetic holidays; closes
    carry forward over non-trading days.  The regime (drift, vol) pair
    follows a symmetric two-state Markov chain sampled per trading day,
    which produces volatility clustering.  Deterministic for fixed seed.
    """
    rng = np.random.default_rng([int(seed), 0xDA7A])
    dates = np.datetime64(cfg.start_date, "D") + np.arange(cfg.n_days)
    weekday = (dates.astype("datetime64[D]").view("int64") - 4) % 7  # 0=Mon
    is_weekday = weekday < 5
    weekday_no = np.cumsum(is_weekday)  # 1-based among weekdays
    is_holiday = is_weekday & (weekday_no % _HOLIDAY_EVERY_N_WEEKDAYS == 0)
    trading = is_weekday & ~is_holiday

    n_t = int(trading.sum())
    dt = 1.0 / TRADING_DAYS_PER_YEAR
    regime = np.empty(n_t, dtype=np.int64)
    state = 0
    switches = rng.random(n_t)
    for i in range(n_t):
        if switches[i] < cfg.p_switch:
            state = 1 - state
        regime[i] = state
    mu = np.where(regime == 0, cfg.mu1, cfg.mu2)
    sigma = np.where(regime == 0, cfg.sigma1, cfg.sigma2)
    z = rng.standard_normal(n_t)
    steps = (mu - 0.5 * sigma**2) * dt + sigma * math.sqrt(dt) * z
    t_closes = cfg.s0 * np.exp(np.cumsum(steps))

    closes = np.empty(cfg.n_days)
    last = cfg.s0
    j = 0
    for i in range(cfg.n_days):
        if trading[i]:
            last = t_closes[j]
            j += 1
        closes[i] = last
    return DailySeries(dates, closes, trading)


SLICES_VERSION = "PQLAB-SLICES v1"

_SLICE_GROUPS = ("train", "test")


def _pack_group(slices) -> dict:
    returns = (
        np.concatenate([s.log_returns for s in slices]) if slices else np.empty(0)
    )
    offsets = np.zeros(len(slices) + 1, dtype=np.int64)
    for i, s in enumerate(slices):
        offsets[i + 1] = offsets[i] + len(s.log_returns)
    return {
        "s0": np.array([s.s0 for s in slices], dtype=np.float64),
        "start": np.array([s.start_date for s in slices], dtype="datetime64[D]"),
        "window": np.array([s.window_calendar_days for s in slices], dtype=np.int64),
        "sigma": np.array([s.condition.sigma_hist for s in slices], dtype=np.float64),
        "r": np.array([s.condition.r for s in slices], dtype=np.float64),
        "tcal": np.array([s.condition.t_calendar for s in slices], dtype=np.float64),
        "ttrad": np.array([s.condition.t_trading for s in slices], dtype=np.float64),
        "returns": returns.astype(np.float64),
        "offsets": offsets,
    }


def _unpack_group(archive, group: str, l_max: int) -> list:
    offsets = archive[f"{group}_offsets"]
    returns = archive[f"{group}_returns"]
    slices = []
    for i in range(len(offsets) - 1):
        rets = returns[offsets[i] : offsets[i + 1]]
        n = len(rets)
        mask = np.zeros(l_max, dtype=bool)
        mask[:n] = True
        cond = ConditionVector(
            sigma_hist=float(archive[f"{group}_sigma"][i]),
            r=float(archive[f"{group}_r"][i]),
            t_calendar=float(archive[f"{group}_tcal"][i]),
            t_trading=float(archive[f"{group}_ttrad"][i]),
            n_trading=n,
        )
        slices.append(
            PathSlice(
                s0=float(archive[f"{group}_s0"][i]),
                log_returns=rets.copy(),
                mask=mask,
                condition=cond,
                window_calendar_days=int(archive[f"{group}_window"][i]),
                start_date=archive[f"{group}_start"][i],
            )
        )
    return slices


def save_slices(path, split: SplitSlices) -> None:
    """Persist a SplitSlices partition as a versioned npz slice store."""
    payload = {
        "version": np.array(SLICES_VERSION),
        "l_max": np.array(split.l_max, dtype=np.int64),
        "skipped_names": np.array(sorted(split.skipped)),
        "skipped_counts": np.array(
            [split.skipped[k] for k in sorted(split.skipped)], dtype=np.int64
        ),
    }
    for group, slices in (("train", split.train), ("test", split.test)):
        for key, arr in _pack_group(slices).items():
            payload[f"{group}_{key}"] = arr
    np.savez(path, **payload)


def load_slices(path) -> SplitSlices:
    """Load a slice store written by save_slices."""
    try:
        archive = np.load(path)
    except (OSError, ValueError) as exc:
        raise DataError(f"cannot read slice store {path}: {exc}") from exc
    with archive:
        if str(archive["version"]) != SLICES_VERSION:
            raise DataError(f"unsupported slice store version {archive['version']!r}")
        l_max = int(archive["l_max"])
        skipped = Counter(
            {
                str(name): int(count)
                for name, count in zip(archive["skipped_names"], archive["skipped_counts"])
            }
        )
        return SplitSlices(
            train=_unpack_group(archive, "train", l_max),
            test=_unpack_group(archive, "test", l_max),
            skipped=skipped,
            l_max=l_max,
        )


def write_manifest(path, entries: dict) -> None:
    """Plain-text key=value manifest, keys written in sorted order."""
    lines = [f"{k}={entries[k]}\n" for k in sorted(entries)]
    with open(path, "w") as fh:
        fh.writelines(lines)


def read_manifest(path) -> dict:
    entries = {}
    with open(path) as fh:
        for line in fh:
            line = line.strip()
            if not line or line.startswith("#"):
                continue
            if "=" not in line:
                raise DataError(f"{path}: bad manifest line {line!r}")
            key, value = line.split("=", 1)
            entries[key] = value
    return entries
