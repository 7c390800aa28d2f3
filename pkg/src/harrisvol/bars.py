"""Minute-bar handling: CSV I/O, cleaning, return grids, synthetic data.

Calendar convention: trading time only. Session day ``d`` maps to the model
interval [d, d+1) (times scaled by ``day_length``), so overnight gaps carry
one grid step of model time and are excluded from within-day return windows.
"""
from __future__ import annotations

import datetime as _dt
from dataclasses import dataclass, field
from typing import Optional

import numpy as np
import pandas as pd

from .errors import StageError, ValidationError
from .harris import SfHarrisParams, Trajectory, integrate_grid, simulate

BAR_COLUMNS = ["timestamp", "open", "high", "low", "close", "volume"]


@dataclass(frozen=True)
class TradingSession:
    open_minute: int = 9 * 60 + 30
    close_minute: int = 16 * 60

    @property
    def minutes_per_day(self) -> int:
        return self.close_minute - self.open_minute


def load_bars_csv(path) -> pd.DataFrame:
    df = pd.read_csv(path)
    missing = [c for c in BAR_COLUMNS if c not in df.columns]
    if missing:
        raise ValidationError(f"bar CSV missing columns {missing}")
    df["timestamp"] = pd.to_datetime(df["timestamp"])
    return df[BAR_COLUMNS]


def save_bars_csv(df: pd.DataFrame, path):
    out = df.copy()
    out["timestamp"] = pd.to_datetime(out["timestamp"]).dt.strftime("%Y-%m-%dT%H:%M:%S")
    out[BAR_COLUMNS].to_csv(path, index=False)


def validate_bars(df: pd.DataFrame):
    o, h, l, c = (df[k].to_numpy(float) for k in ("open", "high", "low", "close"))
    if np.any(l > np.minimum(o, c)) or np.any(h < np.maximum(o, c)):
        raise ValidationError("bar invariant low <= min(o,c) <= max(o,c) <= high violated")
    ts = pd.to_datetime(df["timestamp"])
    by_day = ts.groupby(ts.dt.normalize())
    for _, grp in by_day:
        if grp.duplicated().any() or not grp.is_monotonic_increasing:
            raise ValidationError("timestamps must be strictly increasing within a session")


# ---------------------------------------------------------------------------
# Cleaning
# ---------------------------------------------------------------------------

def _minute_of_session(ts: pd.Series, session: TradingSession) -> np.ndarray:
    return (ts.dt.hour * 60 + ts.dt.minute - session.open_minute).to_numpy()


def _rolling_exclude_self(vals: np.ndarray, half: int = 25):
    """Centered rolling median / mean-absolute-deviation over up to ``half``
    neighbours per side, excluding the centre point (vectorized, NaN-padded)."""
    n = vals.size
    width = 2 * half + 1
    padded = np.concatenate([np.full(half, np.nan), vals, np.full(half, np.nan)])
    win = np.lib.stride_tricks.sliding_window_view(padded, width).copy()
    win[:, half] = np.nan
    count = np.sum(~np.isnan(win), axis=1)
    with np.errstate(all="ignore"):
        med = np.nanmedian(win, axis=1)
        mad = np.nanmean(np.abs(win - med[:, None]), axis=1)
    med = np.where(count > 0, med, vals)
    mad = np.where(count > 0, mad, 0.0)
    return med, mad, count


def clean_bars(
    df: pd.DataFrame,
    session: TradingSession = TradingSession(),
) -> tuple[pd.DataFrame, dict]:
    """Filter raw bars and return (cleaned bars with ``average_price``, audit).

    Steps: drop duplicate timestamps, drop non-positive prices, drop bars
    outside the session, drop bars whose average price exceeds 50x the day
    median, and replace bars deviating more than 10 mean absolute deviations
    from a same-day rolling centered median of 50 neighbours (25 either side,
    excluding the bar itself).
    """
    audit = {
        "duplicates_dropped": 0,
        "nonpositive_dropped": 0,
        "out_of_session_dropped": 0,
        "day_median_dropped": 0,
        "rolling_median_replaced": 0,
        "empty_days_dropped": 0,
    }
    out = df.copy()
    out["timestamp"] = pd.to_datetime(out["timestamp"])
    out = out.sort_values("timestamp", kind="stable").reset_index(drop=True)

    dup = out["timestamp"].duplicated(keep="first")
    audit["duplicates_dropped"] = int(dup.sum())
    out = out[~dup]

    bad = (out[["open", "high", "low", "close"]] <= 0.0).any(axis=1)
    audit["nonpositive_dropped"] = int(bad.sum())
    out = out[~bad]

    minute = _minute_of_session(out["timestamp"], session)
    inside = (minute >= 0) & (minute < session.minutes_per_day)
    audit["out_of_session_dropped"] = int((~inside).sum())
    out = out[inside].reset_index(drop=True)

    out["average_price"] = 0.5 * (out["open"] + out["close"])
    day = out["timestamp"].dt.normalize()

    med = out.groupby(day)["average_price"].transform("median")
    spike = out["average_price"] > 50.0 * med
    audit["day_median_dropped"] = int(spike.sum())
    out = out[~spike].reset_index(drop=True)
    day = out["timestamp"].dt.normalize()

    # same-day rolling centered median filter, excluding the observation
    avg = out["average_price"].to_numpy(float).copy()
    replaced = 0
    for _, idx in out.groupby(day).indices.items():
        vals = avg[idx]
        med_i, mad, count = _rolling_exclude_self(vals, half=25)
        ok = (count >= 10) & (mad > 0.0)
        hit = ok & (np.abs(vals - med_i) > 10.0 * mad)
        if hit.any():
            avg[idx[hit]] = med_i[hit]
            replaced += int(hit.sum())
    audit["rolling_median_replaced"] = replaced
    out["average_price"] = avg

    sizes = out.groupby(day).size()
    empty = sizes[sizes == 0]
    audit["empty_days_dropped"] = int(empty.size)
    out = out.reset_index(drop=True)
    return out, audit


# ---------------------------------------------------------------------------
# Return grids
# ---------------------------------------------------------------------------

@dataclass
class ReturnSeries:
    """Log average-price differences on a within-day sampling grid.

    ``times`` are model-time endpoints of each return; ``day_index`` and
    ``end_minute`` locate each return inside its session. Overnight
    transitions never appear as returns.
    """

    times: np.ndarray
    returns: np.ndarray
    day_index: np.ndarray
    end_minute: np.ndarray
    grid_step: float
    sampling_minutes: int
    minutes_per_day: int
    day_length: float
    n_days: int
    days: Optional[np.ndarray] = None
    meta: dict = field(default_factory=dict)

    def __post_init__(self):
        if self.times.size != self.returns.size:
            raise ValidationError("times and returns must align")

    @property
    def n(self) -> int:
        return int(self.returns.size)

    def subset(self, keep_mask: np.ndarray) -> "ReturnSeries":
        return ReturnSeries(
            times=self.times[keep_mask],
            returns=self.returns[keep_mask],
            day_index=self.day_index[keep_mask],
            end_minute=self.end_minute[keep_mask],
            grid_step=self.grid_step,
            sampling_minutes=self.sampling_minutes,
            minutes_per_day=self.minutes_per_day,
            day_length=self.day_length,
            n_days=self.n_days,
            days=self.days,
            meta=dict(self.meta),
        )


def compute_returns(
    bars: pd.DataFrame,
    sampling_minutes: int = 1,
    session: TradingSession = TradingSession(),
    day_length: float = 1.0,
) -> ReturnSeries:
    """Difference log average prices on the sampling grid, day by day.

    Missing grid points are forward-filled from the last available bar of the
    same day (counted in ``meta['forward_filled']``); grid points before the
    first bar of a day are dropped.
    """
    if "average_price" not in bars.columns:
        bars = bars.copy()
        bars["average_price"] = 0.5 * (bars["open"] + bars["close"])
    mpd = session.minutes_per_day
    if sampling_minutes < 1 or sampling_minutes >= mpd:
        raise ValidationError("sampling_minutes must lie in [1, minutes_per_day)")
    ts = pd.to_datetime(bars["timestamp"])
    day_keys = ts.dt.normalize()
    unique_days = day_keys.drop_duplicates().to_numpy()
    day_lookup = {d: i for i, d in enumerate(unique_days)}
    minute = _minute_of_session(ts, session)

    grid = np.arange(0, mpd, sampling_minutes)
    all_times, all_rets, all_day, all_end = [], [], [], []
    ffilled = 0
    avg = bars["average_price"].to_numpy(float)
    for d, idx in bars.groupby(day_keys).indices.items():
        di = day_lookup[d]
        mins = minute[idx]
        prices = avg[idx]
        pos = np.searchsorted(mins, grid, side="right") - 1
        ok = pos >= 0
        if ok.sum() < 2:
            continue
        gpts = grid[ok]
        gprice = prices[pos[ok]]
        ffilled += int(np.sum(mins[pos[ok]] != gpts))
        logp = np.log(gprice)
        rets = np.diff(logp)
        ends = gpts[1:]
        all_rets.append(rets)
        all_end.append(ends)
        all_day.append(np.full(ends.size, di))
        all_times.append((di + ends / mpd) * day_length)

    if not all_rets:
        raise StageError("returns", "no day produced at least two grid prices")
    rs = ReturnSeries(
        times=np.concatenate(all_times),
        returns=np.concatenate(all_rets),
        day_index=np.concatenate(all_day),
        end_minute=np.concatenate(all_end),
        grid_step=sampling_minutes / mpd * day_length,
        sampling_minutes=sampling_minutes,
        minutes_per_day=mpd,
        day_length=day_length,
        n_days=len(unique_days),
        days=unique_days,
    )
    rs.meta["forward_filled"] = ffilled
    return rs


# ---------------------------------------------------------------------------
# Synthetic bars
# ---------------------------------------------------------------------------

def u_shape_factors(minutes_per_day: int, cycle_days: int = 5,
                    amplitude: float = 0.3, day_slope: float = 0.0) -> np.ndarray:
    """Unit-mean per-day intraday factor grid with a classic open/close hump."""
    k = np.arange(minutes_per_day)
    base = np.cos(2.0 * np.pi * k / minutes_per_day)
    out = np.empty((cycle_days, minutes_per_day))
    for d in range(cycle_days):
        amp = amplitude * (1.0 + day_slope * (d - (cycle_days - 1) / 2.0))
        f = 1.0 + amp * base
        out[d] = f / f.mean()
    return out


def make_synthetic_bars(
    mu: float,
    beta: float,
    spot_params: SfHarrisParams,
    n_days: int,
    rng: np.random.Generator,
    session: TradingSession = TradingSession(),
    day_length: float = 1.0,
    factors: Optional[np.ndarray] = None,
    cycle_days: int = 5,
    jump_minutes: Optional[np.ndarray] = None,
    jump_sizes: Optional[np.ndarray] = None,
    start_price: float = 100.0,
    start_date: str = "2012-01-02",
) -> tuple[pd.DataFrame, dict]:
    """Generate minute bars from the time-changed Gaussian log-price model.

    The spot volatility path is a Harris jump process (deseasonalized),
    optionally multiplied by a per-minute periodic factor grid of shape
    (cycle_days, minutes_per_day). Bars carry a single price point each
    (open = close), so the average price equals the model price exactly.
    Returns (bars, truth) where truth holds the spot trajectory, per-minute
    variance increments, and jump bookkeeping.
    """
    mpd = session.minutes_per_day
    horizon = n_days * day_length
    traj = simulate(spot_params, horizon * (1.0 + 1e-9), rng)

    day_idx = np.repeat(np.arange(n_days), mpd)
    minute_idx = np.tile(np.arange(mpd), n_days)
    tgrid = (day_idx + minute_idx / mpd) * day_length
    # integral of the deseasonalized spot up to each grid point
    integral = integrate_grid(traj, tgrid)
    d_int = np.diff(np.append(integral, integrate_grid(traj, np.array([horizon]))))
    if factors is not None:
        fgrid = factors[day_idx % cycle_days, minute_idx]
    else:
        fgrid = np.ones(tgrid.size)
    d_var = fgrid * d_int

    dt = np.full(tgrid.size, day_length / mpd)
    rets = mu * dt + beta * d_var + np.sqrt(d_var) * rng.standard_normal(tgrid.size)

    jump_flags = np.zeros(tgrid.size, dtype=bool)
    if jump_minutes is not None:
        jump_minutes = np.asarray(jump_minutes, dtype=int)
        jump_sizes = np.asarray(jump_sizes, dtype=float)
        rets[jump_minutes] += jump_sizes
        jump_flags[jump_minutes] = True

    # rets[i] moves the log price over minute i; bar i records the price at
    # the START of its minute
    logp = np.log(start_price) + np.concatenate([[0.0], np.cumsum(rets[:-1])])
    price = np.exp(logp)

    days = pd.bdate_range(start=start_date, periods=n_days)
    base = days[day_idx] + pd.to_timedelta(session.open_minute + minute_idx, unit="m")
    bars = pd.DataFrame(
        {
            "timestamp": base,
            "open": price,
            "high": price,
            "low": price,
            "close": price,
            "volume": np.full(price.size, 100, dtype=int),
        }
    )
    truth = {
        "trajectory": traj,
        "grid_times": tgrid,
        "d_var": d_var,
        "d_int": d_int,
        "factors": fgrid,
        "returns": rets,
        "jump_flags": jump_flags,
        "mu": mu,
        "beta": beta,
        "horizon": horizon,
        "day_length": day_length,
    }
    return bars, truth
