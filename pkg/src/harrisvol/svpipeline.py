"""Volatility measurement and estimation pipeline for minute bars.

Stages: realized variance and bipower variation per intraday window, jump
detection by their positive difference, right-derivative spot filtering with
a noise-collapse rule, periodic-factor extraction, rate/marginal estimation
on the adjusted spot series, a conjugate Gaussian posterior for drift and
risk premium, and forward simulation for interval forecasts.
"""
from __future__ import annotations

import json
import math
from dataclasses import dataclass, field, replace
from typing import Optional, Sequence

import numpy as np
import pandas as pd

from .bars import ReturnSeries, TradingSession, clean_bars, compute_returns
from .errors import DomainError, StageError, ValidationError
from .gig import GigParams
from .harris import GigMarginal, SfHarrisParams, integrate_grid, simulate
from .inference import (
    GigFamily,
    ObservationSeries,
    PosteriorChains,
    Priors,
    gibbs_b,
    hpd_interval,
    posterior_mode,
)

_PI_HALF = math.pi / 2.0


# ---------------------------------------------------------------------------
# Windowed realized measures
# ---------------------------------------------------------------------------

@dataclass
class WindowedSeries:
    """Per-window values on the (day, window-of-day) grid."""

    start_times: np.ndarray
    values: np.ndarray
    day_index: np.ndarray
    window_index: np.ndarray
    duration: float
    window_minutes: int
    day_length: float
    windows_per_day: int
    meta: dict = field(default_factory=dict)

    @property
    def n(self) -> int:
        return int(self.values.size)


def _window_of(rs: ReturnSeries, window_minutes: int) -> np.ndarray:
    return (rs.end_minute - 1) // window_minutes


def _full_window_count(rs: ReturnSeries, window_minutes: int) -> int:
    if window_minutes % rs.sampling_minutes != 0:
        raise ValidationError("window_minutes must be a multiple of the sampling step")
    return window_minutes // rs.sampling_minutes


def _structural_windows(rs: ReturnSeries, window_minutes: int) -> int:
    """Windows per day fully covered by the sampling grid."""
    last_end = ((rs.minutes_per_day - 1) // rs.sampling_minutes) * rs.sampling_minutes
    return last_end // window_minutes


def _aggregate(rs: ReturnSeries, window_minutes: int, how: str) -> WindowedSeries:
    per_window = _full_window_count(rs, window_minutes)
    n_win = _structural_windows(rs, window_minutes)
    if n_win < 1:
        raise ValidationError("window_minutes exceeds the usable session")
    win = _window_of(rs, window_minutes)
    keep = win < n_win
    day = rs.day_index[keep]
    win = win[keep]
    r = rs.returns[keep]
    key = day * n_win + win
    order = np.argsort(key, kind="stable")
    key_s, r_s = key[order], r[order]
    uniq, starts = np.unique(key_s, return_index=True)
    bounds = np.append(starts, key_s.size)
    vals = np.empty(uniq.size)
    for i in range(uniq.size):
        seg = r_s[bounds[i]:bounds[i + 1]]
        if how == "rv":
            vals[i] = float(np.sum(seg * seg))
        else:
            if seg.size < 2:
                raise ValidationError("bipower variation needs >= 2 returns per window")
            vals[i] = _PI_HALF * float(np.sum(np.abs(seg[1:]) * np.abs(seg[:-1])))
    day_u = (uniq // n_win).astype(int)
    win_u = (uniq % n_win).astype(int)
    duration = window_minutes / rs.minutes_per_day * rs.day_length
    start_times = (day_u + win_u * window_minutes / rs.minutes_per_day) * rs.day_length
    return WindowedSeries(
        start_times=start_times,
        values=vals,
        day_index=day_u,
        window_index=win_u,
        duration=duration,
        window_minutes=window_minutes,
        day_length=rs.day_length,
        windows_per_day=n_win,
        meta={"returns_per_window": per_window},
    )


def realized_variance(rs: ReturnSeries, window_minutes: int) -> WindowedSeries:
    """Sum of squared returns per window."""
    if rs.n == 0:
        raise ValidationError("empty return series")
    return _aggregate(rs, window_minutes, "rv")


def bipower_variation(rs: ReturnSeries, window_minutes: int) -> WindowedSeries:
    """(pi/2) times the sum of adjacent absolute return products per window."""
    if rs.n == 0:
        raise ValidationError("empty return series")
    return _aggregate(rs, window_minutes, "bpv")


# ---------------------------------------------------------------------------
# Jump detection
# ---------------------------------------------------------------------------

def detect_jumps(
    rs: ReturnSeries,
    window_minutes: int = 15,
    top_frac: float = 0.001,
    passes: int = 2,
) -> tuple[np.ndarray, dict]:
    """Mark one return per flagged window as a jump, delete, and repeat.

    Per pass the statistic max(RV - BPV, 0) ranks the windows; the top
    ``top_frac`` fraction (at least one window) is flagged, and inside each
    flagged window the return farthest from the window mean is marked.
    Returns (indices into ``rs`` marked as jumps, audit).
    """
    audit = {"passes": [], "warned_small_sample": False}
    n_win = _structural_windows(rs, window_minutes)
    win = _window_of(rs, window_minutes)
    key_all = rs.day_index * n_win + win
    alive = np.ones(rs.n, dtype=bool)
    alive[win >= n_win] = True  # tail returns are never windowed but survive
    windowed = win < n_win
    marked: list[int] = []
    n_windows_total = np.unique(key_all[windowed]).size
    quota = max(1, math.ceil(top_frac * n_windows_total))
    if n_windows_total < 1.0 / top_frac:
        audit["warned_small_sample"] = True

    for p in range(passes):
        live = alive & windowed
        keys = key_all[live]
        rets = rs.returns[live]
        idxs = np.flatnonzero(live)
        order = np.argsort(keys, kind="stable")
        keys_s, rets_s, idxs_s = keys[order], rets[order], idxs[order]
        uniq, starts = np.unique(keys_s, return_index=True)
        bounds = np.append(starts, keys_s.size)
        stat = np.zeros(uniq.size)
        for i in range(uniq.size):
            seg = rets_s[bounds[i]:bounds[i + 1]]
            if seg.size < 2:
                continue
            rv = float(np.sum(seg * seg))
            bpv = _PI_HALF * float(np.sum(np.abs(seg[1:]) * np.abs(seg[:-1])))
            stat[i] = max(rv - bpv, 0.0)
        top = np.argsort(-stat, kind="stable")[:quota]
        pass_marks = []
        for i in top:
            seg = rets_s[bounds[i]:bounds[i + 1]]
            seg_idx = idxs_s[bounds[i]:bounds[i + 1]]
            if seg.size == 0:
                continue
            far = int(np.argmax(np.abs(seg - seg.mean())))
            gidx = int(seg_idx[far])
            alive[gidx] = False
            pass_marks.append(gidx)
        marked.extend(pass_marks)
        audit["passes"].append({"flagged_windows": int(len(top)),
                                "marked": len(pass_marks)})
    return np.asarray(sorted(marked), dtype=int), audit


def delete_returns(rs: ReturnSeries, indices: np.ndarray) -> ReturnSeries:
    keep = np.ones(rs.n, dtype=bool)
    keep[np.asarray(indices, dtype=int)] = False
    out = rs.subset(keep)
    out.meta["deleted_jumps"] = int(len(indices))
    return out


# ---------------------------------------------------------------------------
# Spot volatility filtering
# ---------------------------------------------------------------------------

@dataclass
class VolSeries:
    """Integrated and spot volatility on the window grid."""

    times: np.ndarray
    integrated: np.ndarray
    spot: np.ndarray
    day_index: np.ndarray
    window_index: np.ndarray
    duration: float
    windows_per_day: int
    day_length: float
    meta: dict = field(default_factory=dict)

    @property
    def n(self) -> int:
        return int(self.spot.size)


def collapse_runs(values: np.ndarray, eps: float,
                  relative: bool = False) -> tuple[np.ndarray, int]:
    """Chained noise collapse: maximal runs of consecutive values whose
    neighbour gaps stay below the threshold are replaced by the run mean.

    With ``relative=True`` the threshold scales with the local level
    (``eps`` times the pair mean), matching multiplicative measurement noise.
    """
    x = np.asarray(values, dtype=float).copy()
    if x.size < 2 or eps <= 0.0:
        return x, 0
    gaps = np.abs(np.diff(x))
    if relative:
        same = gaps < eps * 0.5 * np.abs(x[1:] + x[:-1])
    else:
        same = gaps < eps
    merged = 0
    i = 0
    while i < x.size - 1:
        if same[i]:
            j = i + 1
            while j < x.size - 1 and same[j]:
                j += 1
            x[i:j + 1] = x[i:j + 1].mean()
            merged += j - i
            i = j + 1
        else:
            i += 1
    return x, merged


def spot_vol_filter(
    iv: WindowedSeries,
    collapse_eps: float = 1e-5,
    positivity_floor: float = 1e-12,
) -> VolSeries:
    """Right-derivative spot estimates from per-window integrated volatility.

    Non-positive increments are floored (and counted); consecutive spot values
    within ``collapse_eps`` merge to their running mean.
    """
    spot = iv.values / iv.duration
    floored = int(np.sum(spot <= 0.0))
    spot = np.maximum(spot, positivity_floor)
    spot, merged = collapse_runs(spot, collapse_eps)
    out = VolSeries(
        times=iv.start_times.copy(),
        integrated=np.cumsum(iv.values),
        spot=spot,
        day_index=iv.day_index.copy(),
        window_index=iv.window_index.copy(),
        duration=iv.duration,
        windows_per_day=iv.windows_per_day,
        day_length=iv.day_length,
    )
    out.meta["floored"] = floored
    out.meta["collapsed"] = merged
    return out


# ---------------------------------------------------------------------------
# Periodicity
# ---------------------------------------------------------------------------

@dataclass
class PeriodicityFunction:
    """Positive factor per (cycle day, window-of-day), unit mean each day."""

    factors: np.ndarray  # (cycle_days, windows_per_day)
    cycle_days: int
    windows_per_day: int
    meta: dict = field(default_factory=dict)

    def lookup(self, day_index, window_index) -> np.ndarray:
        return self.factors[np.asarray(day_index) % self.cycle_days,
                            np.asarray(window_index)]

    def to_csv(self, path):
        with open(path, "w") as fh:
            fh.write("cycle_day,window,factor\n")
            for d in range(self.cycle_days):
                for w in range(self.windows_per_day):
                    fh.write(f"{d},{w},{float(self.factors[d, w])!r}\n")

    @classmethod
    def from_csv(cls, path) -> "PeriodicityFunction":
        rows = np.genfromtxt(path, delimiter=",", skip_header=1)
        rows = np.atleast_2d(rows)
        L = int(rows[:, 0].max()) + 1
        W = int(rows[:, 1].max()) + 1
        fac = np.empty((L, W))
        fac[rows[:, 0].astype(int), rows[:, 1].astype(int)] = rows[:, 2]
        return cls(factors=fac, cycle_days=L, windows_per_day=W)


def flat_periodicity(cycle_days: int, windows_per_day: int) -> PeriodicityFunction:
    return PeriodicityFunction(np.ones((cycle_days, windows_per_day)),
                               cycle_days, windows_per_day)


def estimate_periodicity(vs: VolSeries, cycle_days: int = 5) -> PeriodicityFunction:
    """Sample-mean estimate of the within-cycle volatility factor.

    Each spot value is normalized by its own day's average spot; positions
    whose dispersion exceeds the whole-sample dispersion are averaged over
    their values below the 0.9 quantile; the grid is rescaled to unit mean
    per cycle day. Empty positions are filled by linear interpolation along
    the day and flagged.
    """
    W = vs.windows_per_day
    day_mean = np.zeros(int(vs.day_index.max()) + 1)
    for d in np.unique(vs.day_index):
        day_mean[d] = vs.spot[vs.day_index == d].mean()
    if np.any(day_mean[np.unique(vs.day_index)] <= 0.0):
        raise StageError("periodicity", "day with non-positive average spot")
    norm = vs.spot / day_mean[vs.day_index]
    whole_sd = float(np.std(norm))
    cyc = vs.day_index % cycle_days

    factors = np.full((cycle_days, W), np.nan)
    interpolated = []
    for d in range(cycle_days):
        for w in range(W):
            sel = norm[(cyc == d) & (vs.window_index == w)]
            if sel.size == 0:
                interpolated.append((d, w))
                continue
            if sel.size > 1 and np.std(sel) > whole_sd:
                cut = np.quantile(sel, 0.9)
                trimmed = sel[sel < cut]
                if trimmed.size:
                    sel = trimmed
            factors[d, w] = sel.mean()
    for d, w in interpolated:
        row = factors[d]
        good = np.flatnonzero(~np.isnan(row))
        if good.size == 0:
            row[:] = 1.0
        else:
            row[np.isnan(row)] = np.interp(
                np.flatnonzero(np.isnan(row)), good, row[good]
            )
    # unit mean on each cycle day
    factors /= factors.mean(axis=1, keepdims=True)
    factors = np.maximum(factors, 1e-10)
    out = PeriodicityFunction(factors=factors, cycle_days=cycle_days,
                              windows_per_day=W)
    out.meta["interpolated"] = interpolated
    return out


def deseasonalize(vs: VolSeries, f: PeriodicityFunction) -> VolSeries:
    """Divide spot values by their cycle-position factor; integrated values
    are rebuilt from the adjusted spot."""
    fac = f.lookup(vs.day_index, vs.window_index)
    if np.any(fac <= 0.0):
        raise DomainError("periodicity factors must be positive")
    spot = vs.spot / fac
    return VolSeries(
        times=vs.times.copy(),
        integrated=np.cumsum(spot * vs.duration),
        spot=spot,
        day_index=vs.day_index.copy(),
        window_index=vs.window_index.copy(),
        duration=vs.duration,
        windows_per_day=vs.windows_per_day,
        day_length=vs.day_length,
        meta={"deseasonalized": True},
    )


# ---------------------------------------------------------------------------
# Drift / risk-premium posterior
# ---------------------------------------------------------------------------

@dataclass(frozen=True)
class GaussianPairPriors:
    m_mu: float = 0.0
    s2_mu: float = 4.0
    m_beta: float = 0.0
    s2_beta: float = 4.0


@dataclass
class MuBetaPosterior:
    mu_mean: float
    mu_var: float
    beta_mean: float
    beta_var: float
    cross: float  # posterior covariance of (mu, beta)

    def sample(self, n: int, rng: np.random.Generator) -> np.ndarray:
        cov = np.array([[self.mu_var, self.cross], [self.cross, self.beta_var]])
        mean = np.array([self.mu_mean, self.beta_mean])
        return rng.multivariate_normal(mean, cov, size=n)


def posterior_mu_beta(
    returns: np.ndarray,
    iv_increments: np.ndarray,
    h: float,
    priors: GaussianPairPriors = GaussianPairPriors(),
) -> MuBetaPosterior:
    """Conjugate Gaussian posterior of (drift, risk premium) on an
    equidistant window grid.

    The Gaussian likelihood R_i ~ N(mu h + beta V_i, V_i) plus independent
    normal priors gives a bivariate normal posterior; the quadratic-form
    coefficients use raw per-observation sums.
    """
    r = np.asarray(returns, dtype=float)
    v = np.asarray(iv_increments, dtype=float)
    if r.size != v.size:
        raise ValidationError("returns and increments must align")
    if np.any(v <= 0.0):
        raise DomainError("integrated-volatility increments must be positive")
    n = r.size
    a = h * h * float(np.sum(1.0 / v)) + 1.0 / priors.s2_mu
    b = h * float(np.sum(r / v)) + priors.m_mu / priors.s2_mu
    c = h * n
    d = float(np.sum(v)) + 1.0 / priors.s2_beta
    e = float(np.sum(r)) + priors.m_beta / priors.s2_beta
    f = a * d - c * c
    if f <= 0.0:
        raise StageError("mu_beta", f"degenerate information matrix (F={f})")
    return MuBetaPosterior(
        mu_mean=(d * b - e * c) / f,
        mu_var=d / f,
        beta_mean=(e * a - b * c) / f,
        beta_var=a / f,
        cross=-c / f,
    )


# ---------------------------------------------------------------------------
# Full fit
# ---------------------------------------------------------------------------

@dataclass(frozen=True)
class SvFitConfig:
    sampling_minutes: int = 1
    window_minutes: int = 15
    day_length: float = 1.0
    cycle_days: int = 5
    top_frac: float = 0.001
    passes: int = 2
    collapse_eps: float = 1e-5
    collapse_relative: bool = False
    estimate_periodic: bool = True
    gibbs_iters: int = 4000
    gibbs_burn_in: int = 1000
    priors: Priors = Priors()
    mu_beta_priors: GaussianPairPriors = GaussianPairPriors()
    session: TradingSession = TradingSession()


@dataclass
class SvFitResult:
    config: SvFitConfig
    chains: PosteriorChains
    alpha_hat: float
    gig_hat: GigParams
    periodicity: PeriodicityFunction
    mu_beta: MuBetaPosterior
    vol: VolSeries
    adjusted: VolSeries
    audit: dict
    last_log_price: float
    last_day_index: int
    window_returns: np.ndarray
    window_iv: np.ndarray

    @property
    def sv_params(self) -> SfHarrisParams:
        return SfHarrisParams(alpha=self.alpha_hat,
                              marginal=GigMarginal(self.gig_hat))


def fit_sv(
    bars: pd.DataFrame,
    config: SvFitConfig,
    rng: np.random.Generator,
) -> SvFitResult:
    """Run the full measurement-and-estimation pipeline on minute bars."""
    audit: dict = {}
    try:
        cleaned, clean_audit = clean_bars(bars, config.session)
    except Exception as exc:  # noqa: BLE001
        raise StageError("clean", str(exc)) from exc
    audit["clean"] = clean_audit

    rs = compute_returns(cleaned, config.sampling_minutes, config.session,
                         config.day_length)
    audit["returns"] = {"n": rs.n, **rs.meta}
    if rs.n_days < config.cycle_days:
        raise StageError("returns", "need at least one full cycle of days")

    jumps, jump_audit = detect_jumps(rs, config.window_minutes,
                                     config.top_frac, config.passes)
    rs_clean = delete_returns(rs, jumps)
    audit["jumps"] = {"marked": int(jumps.size), **jump_audit}

    iv = realized_variance(rs_clean, config.window_minutes)
    vol = spot_vol_filter(iv, collapse_eps=0.0)
    audit["spot"] = dict(vol.meta)

    if config.estimate_periodic:
        periodicity = estimate_periodicity(vol, config.cycle_days)
    else:
        periodicity = flat_periodicity(config.cycle_days, vol.windows_per_day)
    adjusted = deseasonalize(vol, periodicity)

    collapsed, merged = collapse_runs(adjusted.spot, config.collapse_eps,
                                      relative=config.collapse_relative)
    adjusted.spot = collapsed
    adjusted.integrated = np.cumsum(collapsed * adjusted.duration)
    audit["collapse"] = {"eps": config.collapse_eps,
                         "relative": config.collapse_relative,
                         "merged": merged}

    obs = ObservationSeries(times=adjusted.times, values=adjusted.spot)
    chains = gibbs_b(obs, config.priors, GigFamily(), config.gibbs_iters, rng,
                     burn_in=config.gibbs_burn_in)
    point = posterior_mode(chains)
    audit["gibbs"] = {"n_obs": obs.n + 1, "iters": config.gibbs_iters}

    # drift and risk premium from window returns against measured increments;
    # jump returns stay deleted on both sides
    window_returns = _sum_by_window(rs_clean, iv)
    window_iv = iv.values.copy()
    mu_beta = posterior_mu_beta(window_returns, np.maximum(window_iv, 1e-12),
                                vol.duration, config.mu_beta_priors)

    return SvFitResult(
        config=config,
        chains=chains,
        alpha_hat=point.alpha,
        gig_hat=point.q_params,
        periodicity=periodicity,
        mu_beta=mu_beta,
        vol=vol,
        adjusted=adjusted,
        audit=audit,
        last_log_price=float(np.log(cleaned["average_price"].iloc[-1])),
        last_day_index=int(vol.day_index.max()),
        window_returns=window_returns,
        window_iv=window_iv,
    )


# ---------------------------------------------------------------------------
# Forecasting
# ---------------------------------------------------------------------------

def forecast_log_price_paths(
    fit: SvFitResult,
    n_windows: int,
    m_paths: int,
    rng: np.random.Generator,
) -> np.ndarray:
    """Simulate forward log-price increments on the window grid.

    Per path: one posterior draw of (rate, marginal), a fresh deseasonalized
    spot path started at the last adjusted spot value, the periodic factor
    re-applied per window, and Gaussian returns from a (mu, beta) draw.
    Returns an (m_paths, n_windows) matrix of cumulative log-price changes.
    """
    W = fit.adjusted.windows_per_day
    dur = fit.adjusted.duration
    last_day = int(fit.adjusted.day_index[-1])
    last_win = int(fit.adjusted.window_index[-1])
    flat_next = last_day * W + last_win + 1
    fut_day = (flat_next + np.arange(n_windows)) // W
    fut_win = (flat_next + np.arange(n_windows)) % W
    factors = fit.periodicity.lookup(fut_day, fut_win)
    x_last = float(fit.adjusted.spot[-1])
    horizon = n_windows * dur * (1.0 + 1e-9) + 1e-12

    idx = rng.integers(0, len(fit.chains), m_paths)
    mb = fit.mu_beta.sample(m_paths, rng)
    grid = np.arange(n_windows + 1) * dur
    out = np.empty((m_paths, n_windows))
    for p in range(m_paths):
        i = int(idx[p])
        par = SfHarrisParams(alpha=float(fit.chains.alpha[i]),
                             marginal=GigMarginal(fit.chains.gig_at(i)))
        traj = simulate(par, horizon, rng, start=x_last)
        d_int = np.diff(integrate_grid(traj, grid))
        d_var = np.maximum(factors * d_int, 1e-300)
        mu_p, beta_p = mb[p]
        rets = mu_p * dur + beta_p * d_var + np.sqrt(d_var) * rng.standard_normal(n_windows)
        out[p] = np.cumsum(rets)
    return out


def _sum_by_window(rs: ReturnSeries, windows: WindowedSeries) -> np.ndarray:
    """Sum returns into the (day, window) cells of an existing window grid."""
    W = windows.windows_per_day
    key = rs.day_index * W + _window_of(rs, windows.window_minutes)
    wkey = windows.day_index * W + windows.window_index
    pos = np.searchsorted(wkey, key)
    pos = np.clip(pos, 0, wkey.size - 1)
    ok = wkey[pos] == key
    out = np.zeros(wkey.size)
    np.add.at(out, pos[ok], rs.returns[ok])
    return out


def holdout_window_returns(
    bars: pd.DataFrame,
    config: SvFitConfig,
) -> np.ndarray:
    """Window-level log returns of a holdout bar set under the fit's grid."""
    cleaned, _ = clean_bars(bars, config.session)
    rs = compute_returns(cleaned, config.sampling_minutes, config.session,
                         config.day_length)
    iv_like = realized_variance(rs, config.window_minutes)
    return _sum_by_window(rs, iv_like)


def forecast_coverage(
    fit: SvFitResult,
    holdout_returns: np.ndarray,
    probs: Sequence[float] = (0.25, 0.50, 0.75, 0.85, 0.90, 0.95),
    m_paths: int = 1000,
    rng: Optional[np.random.Generator] = None,
) -> dict:
    """Fraction of the holdout path inside per-time HPD intervals.

    ``holdout_returns`` are window-level log returns immediately following
    the estimation sample. Returns {p: coverage} plus the interval table.
    """
    if rng is None:
        rng = np.random.default_rng()
    hr = np.asarray(holdout_returns, dtype=float)
    if hr.size == 0:
        raise ValidationError("holdout is empty")
    paths = forecast_log_price_paths(fit, hr.size, m_paths, rng)
    actual = np.cumsum(hr)
    table = {}
    coverage = {}
    for p in probs:
        inside = np.empty(hr.size, dtype=bool)
        bounds = np.empty((hr.size, 2))
        for t in range(hr.size):
            lo, hi = hpd_interval(paths[:, t], p)
            inside[t] = lo <= actual[t] <= hi
            bounds[t] = (lo, hi)
        coverage[float(p)] = float(inside.mean())
        table[float(p)] = bounds
    return {"coverage": coverage, "bounds": table, "actual": actual}


def save_coverage(result: dict, csv_path, json_path=None):
    with open(csv_path, "w") as fh:
        fh.write("p,coverage\n")
        for p, c in sorted(result["coverage"].items()):
            fh.write(f"{p},{c}\n")
    if json_path is not None:
        with open(json_path, "w") as fh:
            json.dump({"coverage": result["coverage"]}, fh, indent=2)
