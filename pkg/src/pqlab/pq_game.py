"""The trader vs market-maker quoting game on held-out slices.

Per test slice, Q computes a risk-neutral GBM Monte Carlo value from the
slice's condition (s0, sigma_hist, matched r, horizon) and quotes a band
around it; P values the same contract over its own path measure.  A trade
fires only when P's value clears the quote by more than the threshold, and
settles against the realized historical path.  Accounting is zero-sum:
Q's P&L is minus P's, bit for bit.

Quotes widen with the greediness level: relative levels scale by |fair| so
the band stays ordered around negative fair values too, absolute levels add
level * notional.  Snowballs quote absolute spreads; everything else quotes
relative ones.
"""

from __future__ import annotations

import csv
import math
from collections import defaultdict
from dataclasses import dataclass

import numpy as np

from .errors import ConfigError, DataError
from .market_paths import TRADING_DAYS_PER_YEAR, PathSlice
from .payoffs import ContractSpec, Snowball, contract_cashflows, discount_value, linear_calendar_fraction
from .q_pricer import DEFAULT_GAME_PATHS, GbmParams, p_price, price

EPS_DEN = 1e-9
DEFAULT_THRESHOLD = 0.10
RELATIVE_LEVELS = (0.0, 0.10, 0.20, 0.30, 0.40)
ABSOLUTE_LEVELS = (0.0, 0.005, 0.01, 0.015, 0.02)

GAME_CSV_HEADER = "level,cum_pnl,trades,longs,shorts,win_rate,sharpe"

LONG = "long"
SHORT = "short"
NONE = "none"


@dataclass(frozen=True)
class Quote:
    """Q's two-sided market around its Monte Carlo fair value."""

    fair: float
    bid: float
    ask: float
    mode: str

    def __post_init__(self) -> None:
        if self.mode not in ("relative", "absolute"):
            raise ConfigError(f"quote mode must be relative or absolute, got {self.mode!r}")
        if not (self.bid <= self.fair <= self.ask):
            raise DataError(
                f"quote must satisfy bid <= fair <= ask, got {self.bid}, {self.fair}, {self.ask}"
            )


@dataclass(frozen=True)
class TradeRecord:
    """One executed trade and its settlement."""

    contract: ContractSpec
    side: str
    exec_price: float
    p_value: float
    realized: float
    pnl_p: float
    pnl_q: float
    start_date: np.datetime64


@dataclass(frozen=True)
class GameReport:
    """Aggregate row for one greediness level; sharpe None means N/A."""

    level: float
    cum_pnl: float
    trades: int
    longs: int
    shorts: int
    win_rate: float
    sharpe: float | None

    def __post_init__(self) -> None:
        if self.trades != self.longs + self.shorts:
            raise DataError("trades must equal longs + shorts")
        if not 0.0 <= self.win_rate <= 1.0:
            raise DataError("win_rate must lie in [0, 1]")


@dataclass(frozen=True)
class LevelOutcome:
    report: GameReport
    records: tuple[TradeRecord, ...]


@dataclass(frozen=True)
class GameConfig:
    """Run settings.

    discount toggles whether the realized leg is discounted to trade date
    before settling (quotes and P values are always present values).
    """

    threshold: float = DEFAULT_THRESHOLD
    q_paths: int = DEFAULT_GAME_PATHS
    seed: int = 0
    discount: bool = True
    threads: int = 1

    def __post_init__(self) -> None:
        if self.threshold < 0.0:
            raise ConfigError(f"threshold must be >= 0, got {self.threshold}")
        if self.q_paths < 1:
            raise ConfigError(f"q_paths must be >= 1, got {self.q_paths}")
        if self.threads < 1:
            raise ConfigError(f"threads must be >= 1, got {self.threads}")


def quote_mode(contract: ContractSpec) -> str:
    return "absolute" if isinstance(contract, Snowball) else "relative"


def default_levels(contract: ContractSpec) -> tuple[float, ...]:
    return ABSOLUTE_LEVELS if isinstance(contract, Snowball) else RELATIVE_LEVELS


def make_quote(fair: float, level: float, mode: str = "relative",
               notional: float = 1.0) -> Quote:
    """Two-sided quote at one greediness level.

    Relative: ask/bid = fair +/- level * |fair| (the absolute value keeps
    the band ordered when fair is negative, and matches fair*(1 +/- level)
    for positive fair).  Absolute: fair +/- level * notional.
    """
    if not math.isfinite(fair):
        raise DataError(f"fair value must be finite, got {fair}")
    if level < 0.0:
        raise ConfigError(f"greediness level must be >= 0, got {level}")
    if mode == "relative":
        half = level * abs(fair)
    elif mode == "absolute":
        if notional <= 0.0:
            raise ConfigError(f"notional must be > 0, got {notional}")
        half = level * notional
    else:
        raise ConfigError(f"quote mode must be relative or absolute, got {mode!r}")
    return Quote(fair=fair, bid=fair - half, ask=fair + half, mode=mode)


def decide_trade(p_value: float, quote: Quote,
                 threshold: float = DEFAULT_THRESHOLD) -> str:
    """Gap rule: trade only when P's value clears the actionable quote.

    Long when (p - ask)/max(|ask|, eps) > threshold, short when
    (bid - p)/max(|bid|, eps) > threshold; ties stay flat.  With
    bid <= ask and threshold >= 0 at most one side can fire.
    """
    if not math.isfinite(p_value):
        raise DataError(f"p_value must be finite, got {p_value}")
    gap_long = (p_value - quote.ask) / max(abs(quote.ask), EPS_DEN)
    if gap_long > threshold:
        return LONG
    gap_short = (quote.bid - p_value) / max(abs(quote.bid), EPS_DEN)
    if gap_short > threshold:
        return SHORT
    return NONE


def settle(side: str, exec_price: float, realized: float) -> tuple[float, float]:
    """Zero-sum settlement; pnl_q is the exact negation of pnl_p."""
    if side == LONG:
        pnl_p = realized - exec_price
    elif side == SHORT:
        pnl_p = exec_price - realized
    else:
        raise ConfigError(f"cannot settle side {side!r}")
    return pnl_p, -pnl_p


def sharpe_annualized(pnl_by_start_date) -> float | None:
    """mean/std(ddof=1) of the daily P&L series, scaled by sqrt(252).

    Zero variance (including an all-zero series) has no defined ratio and
    returns None.
    """
    series = np.asarray(pnl_by_start_date, dtype=np.float64)
    if series.size < 2:
        raise DataError("sharpe needs at least 2 dated P&L entries")
    std = float(series.std(ddof=1))
    if std == 0.0:
        return None
    return float(series.mean() / std * math.sqrt(TRADING_DAYS_PER_YEAR))


def _q_seed(base_seed: int, slice_idx: int) -> int:
    state = np.random.SeedSequence([base_seed, slice_idx]).generate_state(1)
    return int(state[0])


def _realized_value(contract: ContractSpec, s: PathSlice, discount: bool) -> float:
    prices = s.s0 * np.exp(np.cumsum(s.log_returns))
    cond = s.condition
    cal_frac = None
    if isinstance(contract, Snowball):
        cal_frac = linear_calendar_fraction(cond.n_trading, cond.t_calendar)
    flows = contract_cashflows(contract, prices, s.s0, cal_frac)
    if discount:
        return discount_value(flows, cond.r)
    return float(np.sum(flows.amounts))


def run_game(test_slices, contract: ContractSpec, p_source,
             levels=None, config: GameConfig | None = None) -> tuple[LevelOutcome, ...]:
    """Play every greediness level over the test slices.

    p_source(slice, q_params) must return a (n_paths, n_days) array of
    price paths for P's valuation; q_params carries the slice's s0, matched
    rate, historical sigma, horizon and the per-slice Q seed, so a source
    that simply simulates GBM from q_params reproduces Q's value exactly.

    Q's fair value, P's value and the realized settlement value are
    computed once per slice and shared across levels.
    """
    if config is None:
        config = GameConfig()
    test_slices = list(test_slices)
    if not test_slices:
        raise DataError("no test slices to play")
    if levels is None:
        levels = default_levels(contract)
    levels = [float(level) for level in levels]
    mode = quote_mode(contract)
    notional = contract.notional if isinstance(contract, Snowball) else 1.0

    valuations = []
    for idx, s in enumerate(test_slices):
        cond = s.condition
        params = GbmParams(
            s0=s.s0, r=cond.r, sigma=cond.sigma_hist, n_days=cond.n_trading,
            n_paths=config.q_paths, seed=_q_seed(config.seed, idx),
        )
        fair = price(contract, params, t_calendar=cond.t_calendar,
                     threads=config.threads).value
        paths = np.asarray(p_source(s, params), dtype=np.float64)
        if paths.ndim != 2 or paths.shape[1] != cond.n_trading:
            raise DataError(
                f"slice {idx}: P paths must be (n, {cond.n_trading}), got {paths.shape}"
            )
        p_value = p_price(contract, paths, s.s0, cond.r,
                          t_calendar=cond.t_calendar, discount=True).value
        realized = _realized_value(contract, s, config.discount)
        valuations.append((fair, p_value, realized, s.start_date))

    all_dates = sorted({v[3] for v in valuations})
    outcomes = []
    for level in levels:
        records = []
        pnl_by_date: defaultdict = defaultdict(float)
        for fair, p_value, realized, start_date in valuations:
            quote = make_quote(fair, level, mode, notional)
            side = decide_trade(p_value, quote, config.threshold)
            if side == NONE:
                continue
            exec_price = quote.ask if side == LONG else quote.bid
            pnl_p, pnl_q = settle(side, exec_price, realized)
            pnl_by_date[start_date] += pnl_p
            records.append(TradeRecord(
                contract=contract, side=side, exec_price=exec_price,
                p_value=p_value, realized=realized, pnl_p=pnl_p, pnl_q=pnl_q,
                start_date=start_date,
            ))
        trades = len(records)
        longs = sum(1 for rec in records if rec.side == LONG)
        wins = sum(1 for rec in records if rec.pnl_p > 0.0)
        daily = [pnl_by_date[d] for d in all_dates]
        sharpe = sharpe_annualized(daily) if len(daily) >= 2 else None
        report = GameReport(
            level=level,
            cum_pnl=math.fsum(rec.pnl_p for rec in records),
            trades=trades,
            longs=longs,
            shorts=trades - longs,
            win_rate=(wins / trades) if trades else 0.0,
            sharpe=sharpe,
        )
        outcomes.append(LevelOutcome(report=report, records=tuple(records)))
    return tuple(outcomes)


def gbm_p_source(s: PathSlice, q_params: GbmParams) -> np.ndarray:
    """P path source that reuses Q's own simulation; useful as a null model."""
    from .q_pricer import simulate_gbm

    return simulate_gbm(q_params)


# ---------------------------------------------------------------------------
# reporting


def _sharpe_text(sharpe: float | None) -> str:
    return "NA" if sharpe is None else repr(float(sharpe))


def write_game_csv(path, reports) -> None:
    """One CSV row per greediness level; repr() keeps floats lossless."""
    with open(path, "w", newline="") as fh:
        writer = csv.writer(fh)
        writer.writerow(GAME_CSV_HEADER.split(","))
        for rep in reports:
            writer.writerow([
                repr(float(rep.level)), repr(float(rep.cum_pnl)), rep.trades,
                rep.longs, rep.shorts, repr(float(rep.win_rate)),
                _sharpe_text(rep.sharpe),
            ])


def format_game_table(reports, title: str = "") -> str:
    """Aligned text table over the same columns as the CSV."""
    header = GAME_CSV_HEADER.split(",")
    rows = [header]
    for rep in reports:
        rows.append([
            f"{rep.level:g}", f"{rep.cum_pnl:.4f}", str(rep.trades),
            str(rep.longs), str(rep.shorts), f"{rep.win_rate:.3f}",
            "NA" if rep.sharpe is None else f"{rep.sharpe:.3f}",
        ])
    widths = [max(len(row[i]) for row in rows) for i in range(len(header))]
    lines = [] if not title else [title]
    for row in rows:
        lines.append("  ".join(cell.rjust(widths[i]) for i, cell in enumerate(row)))
    return "\n".join(lines) + "\n"
