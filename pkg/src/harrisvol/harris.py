"""The piecewise-constant Harris jump process and its extensions.

A path holds its value until an exponential clock rings, then redraws from
the marginal law Q. Paths are stored as jump skeletons (times + states) and
evaluated lazily; semi-Markov and mixture variants swap the holding-time law.
"""
from __future__ import annotations

import json
import math
from dataclasses import dataclass, field
from typing import Callable, Optional, Sequence

import numpy as np

from .errors import DomainError, ValidationError
from .gig import GigParams, gig_logpdf, gig_moments, gig_sample
from .numerics import quad_integrate


# ---------------------------------------------------------------------------
# Marginal law handles
# ---------------------------------------------------------------------------

@dataclass(frozen=True)
class GigMarginal:
    """GIG marginal with positive support."""

    params: GigParams
    is_discrete: bool = False

    def sample(self, n: int, rng: np.random.Generator) -> np.ndarray:
        return gig_sample(self.params, n, rng)

    def logpdf(self, x):
        return gig_logpdf(self.params, x)

    def mean(self) -> float:
        return gig_moments(self.params)[0]

    @property
    def support(self):
        return (0.0, np.inf)


@dataclass(frozen=True)
class DiscreteUniformMarginal:
    """Uniform law on a finite set of values."""

    values: tuple
    is_discrete: bool = True

    def __post_init__(self):
        if len(self.values) == 0:
            raise ValidationError("discrete uniform marginal needs >= 1 value")

    def sample(self, n: int, rng: np.random.Generator) -> np.ndarray:
        vals = np.asarray(self.values, dtype=float)
        return vals[rng.integers(0, vals.size, n)]

    def logpmf(self, x):
        vals = np.asarray(self.values, dtype=float)
        xa = np.asarray(x, dtype=float)
        hit = np.isin(xa, vals)
        out = np.where(hit, -math.log(vals.size), -np.inf)
        return float(out) if np.isscalar(x) else out

    # estimators treat densities and pmfs uniformly through this name
    def logpdf(self, x):
        return self.logpmf(x)

    def mean(self) -> float:
        return float(np.mean(self.values))

    @property
    def support(self):
        return tuple(sorted(self.values))


@dataclass(frozen=True)
class CallableMarginal:
    """User-supplied marginal: a sampler plus optional density and mean."""

    sampler: Callable[[int, np.random.Generator], np.ndarray]
    logpdf_fn: Optional[Callable] = None
    mean_value: Optional[float] = None
    support_interval: tuple = (-np.inf, np.inf)
    is_discrete: bool = False

    def sample(self, n, rng):
        return np.asarray(self.sampler(n, rng), dtype=float)

    def logpdf(self, x):
        if self.logpdf_fn is None:
            raise DomainError("this marginal has no density handle")
        return self.logpdf_fn(x)

    def mean(self) -> float:
        if self.mean_value is None:
            raise DomainError("this marginal has no mean handle")
        return self.mean_value

    @property
    def support(self):
        return self.support_interval


def uniform5() -> DiscreteUniformMarginal:
    return DiscreteUniformMarginal(values=(1.0, 2.0, 3.0, 4.0, 5.0))


# ---------------------------------------------------------------------------
# Process parameterizations
# ---------------------------------------------------------------------------

@dataclass(frozen=True)
class SfHarrisParams:
    """Jump rate plus marginal law; ``constant=True`` encodes the infinite
    rate convention of frozen (constant) paths."""

    alpha: float
    marginal: object
    constant: bool = False

    def __post_init__(self):
        if not self.constant and not self.alpha > 0.0:
            raise ValidationError(f"alpha must be positive, got {self.alpha}")


@dataclass(frozen=True)
class ExponentialHolding:
    rate: float

    def sample(self, n, rng):
        return rng.exponential(1.0 / self.rate, n)

    def cdf(self, t):
        return -np.expm1(-self.rate * np.asarray(t, dtype=float))


@dataclass(frozen=True)
class ParetoHolding:
    """Pareto holding times on [scale, inf)."""

    shape: float
    scale: float = 1.0

    def sample(self, n, rng):
        return self.scale * (1.0 - rng.random(n)) ** (-1.0 / self.shape)

    def cdf(self, t):
        ta = np.asarray(t, dtype=float)
        return np.where(ta < self.scale, 0.0, 1.0 - (self.scale / np.maximum(ta, self.scale)) ** self.shape)


@dataclass(frozen=True)
class CallableHolding:
    sampler: Callable[[int, np.random.Generator], np.ndarray]
    cdf_fn: Callable

    def sample(self, n, rng):
        return np.asarray(self.sampler(n, rng), dtype=float)

    def cdf(self, t):
        return self.cdf_fn(t)


@dataclass(frozen=True)
class SemiMarkovSpec:
    holding_law: object
    marginal: object


@dataclass(frozen=True)
class DegenerateRate:
    value: float

    def sample(self, n, rng):
        return np.full(n, self.value)

    def laplace(self, t):
        return math.exp(-self.value * t)


@dataclass(frozen=True)
class DiscreteRate:
    values: tuple
    weights: tuple

    def sample(self, n, rng):
        vals = np.asarray(self.values, dtype=float)
        w = np.asarray(self.weights, dtype=float)
        return vals[rng.choice(vals.size, n, p=w / w.sum())]

    def laplace(self, t):
        vals = np.asarray(self.values, dtype=float)
        w = np.asarray(self.weights, dtype=float)
        w = w / w.sum()
        return float(np.sum(w * np.exp(-vals * t)))


@dataclass(frozen=True)
class GammaRate:
    """Gamma rate mixture indexed by the long-memory parameter H in (1/2, 1);
    shape 2(1-H), unit rate, giving the power-law correlation (1+t)^{-2(1-H)}."""

    hurst: float

    def __post_init__(self):
        if not 0.5 < self.hurst < 1.0:
            raise ValidationError(f"hurst must lie in (1/2, 1), got {self.hurst}")

    @property
    def shape(self):
        return 2.0 * (1.0 - self.hurst)

    def sample(self, n, rng):
        return rng.gamma(self.shape, 1.0, n)

    def laplace(self, t):
        return (1.0 + t) ** (-self.shape)


@dataclass(frozen=True)
class CallableRate:
    sampler: Callable[[int, np.random.Generator], np.ndarray]
    laplace_fn: Optional[Callable] = None

    def sample(self, n, rng):
        return np.asarray(self.sampler(n, rng), dtype=float)

    def laplace(self, t):
        if self.laplace_fn is None:
            raise DomainError("rate mixture has no evaluable transform")
        return self.laplace_fn(t)


@dataclass(frozen=True)
class MixtureSpec:
    rate_law: object
    marginal: object


# ---------------------------------------------------------------------------
# Trajectories
# ---------------------------------------------------------------------------

@dataclass
class Trajectory:
    """Jump skeleton of one path on [t0, horizon].

    ``states[k]`` is the value taken at ``jump_times[k]`` (right-continuous);
    the path equals ``start`` before the first jump.
    """

    start: float
    jump_times: np.ndarray
    states: np.ndarray
    horizon: float
    t0: float = 0.0
    meta: dict = field(default_factory=dict)

    def __post_init__(self):
        self.jump_times = np.asarray(self.jump_times, dtype=float)
        self.states = np.asarray(self.states, dtype=float)
        if self.jump_times.size != self.states.size:
            raise ValidationError("jump_times and states must have equal length")
        if self.jump_times.size:
            if np.any(np.diff(self.jump_times) <= 0.0):
                raise ValidationError("jump_times must be strictly increasing")
            if self.jump_times[0] <= self.t0 or self.jump_times[-1] > self.horizon:
                raise ValidationError("jump_times must lie in (t0, horizon]")
        if not self.horizon > self.t0:
            raise ValidationError("horizon must exceed t0")

    @property
    def n_jumps(self) -> int:
        return int(self.jump_times.size)

    def holding_times(self) -> np.ndarray:
        if self.jump_times.size == 0:
            return np.empty(0)
        return np.diff(np.concatenate([[self.t0], self.jump_times]))


def sample_at_times(traj: Trajectory, times) -> np.ndarray:
    """Right-continuous evaluation of the step path at sorted query times."""
    ta = np.atleast_1d(np.asarray(times, dtype=float))
    if np.any(ta < traj.t0) or np.any(ta > traj.horizon):
        raise DomainError("query times must lie in [t0, horizon]")
    idx = np.searchsorted(traj.jump_times, ta, side="right")
    vals = np.concatenate([[traj.start], traj.states])
    out = vals[idx]
    return out if np.ndim(times) else float(out[0])


def integrate(traj: Trajectory, t: float) -> float:
    """Pathwise integral of the step function over [t0, t]."""
    if t < traj.t0 or t > traj.horizon:
        raise DomainError(f"t={t} outside [{traj.t0}, {traj.horizon}]")
    edges = np.concatenate([[traj.t0], traj.jump_times, [traj.horizon]])
    vals = np.concatenate([[traj.start], traj.states])
    widths = np.minimum(edges[1:], t) - np.minimum(edges[:-1], t)
    return float(np.sum(vals * np.maximum(widths, 0.0)))


def integrate_grid(traj: Trajectory, times) -> np.ndarray:
    """Integral evaluated at each element of a sorted time grid."""
    ta = np.asarray(times, dtype=float)
    if ta.size and (ta[0] < traj.t0 or ta[-1] > traj.horizon):
        raise DomainError("grid must lie in [t0, horizon]")
    edges = np.concatenate([[traj.t0], traj.jump_times])
    vals = np.concatenate([[traj.start], traj.states])
    seg_end = np.concatenate([traj.jump_times, [traj.horizon]])
    cum = np.concatenate([[0.0], np.cumsum(vals * (seg_end - edges))])
    idx = np.searchsorted(traj.jump_times, ta, side="right")
    return cum[idx] + vals[idx] * (ta - edges[idx])


# ---------------------------------------------------------------------------
# Transition structure
# ---------------------------------------------------------------------------

def transition_weights(alpha: float, t: float) -> tuple[float, float]:
    """Mixture weights (fresh draw, stay put) of the time-t transition."""
    if t < 0.0:
        raise DomainError(f"t must be non-negative, got {t}")
    if not alpha > 0.0:
        raise DomainError(f"alpha must be positive, got {alpha}")
    w_stay = math.exp(-alpha * t)
    return 1.0 - w_stay, w_stay


def semigroup_apply(p: SfHarrisParams, f: Callable, t: float, x: float) -> float:
    """Expected value of f(H_t) started at x: a two-point mixture of Qf and f(x)."""
    if p.constant:
        return float(f(x))
    w_new, w_stay = transition_weights(p.alpha, t)
    m = p.marginal
    if getattr(m, "is_discrete", False):
        vals = np.asarray(m.support, dtype=float)
        qf = float(np.mean([f(v) for v in vals]))
    else:
        lo, hi = m.support
        qf = quad_integrate(lambda y: f(y) * math.exp(float(m.logpdf(y))), lo, hi, 1e-9)
    if not np.isfinite(qf):
        raise DomainError("Qf is not finite")
    return w_new * qf + w_stay * float(f(x))


# ---------------------------------------------------------------------------
# Simulators
# ---------------------------------------------------------------------------

def simulate(
    p: SfHarrisParams,
    horizon: float,
    rng: np.random.Generator,
    uniformization_epsilon: float = 0.0,
    start: Optional[float] = None,
    t0: float = 0.0,
) -> Trajectory:
    """Simulate one path on [t0, t0 + horizon].

    With epsilon = 0 the skeleton is a Poisson(alpha) clock with fresh draws
    at every ring; with epsilon in (0, 1) the clock runs at alpha/(1-epsilon)
    and each ring keeps the previous state with probability epsilon. The two
    constructions share the same visible law.
    """
    if not horizon > 0.0:
        raise ValidationError(f"horizon must be positive, got {horizon}")
    eps = float(uniformization_epsilon)
    if not 0.0 <= eps < 1.0:
        raise ValidationError("uniformization epsilon must lie in [0, 1)")
    x0 = float(p.marginal.sample(1, rng)[0]) if start is None else float(start)
    end = t0 + horizon
    if p.constant:
        return Trajectory(start=x0, jump_times=[], states=[], horizon=end, t0=t0)
    rate = p.alpha / (1.0 - eps)
    n = rng.poisson(rate * horizon)
    times = t0 + np.sort(rng.random(n)) * horizon
    if eps == 0.0:
        states = p.marginal.sample(n, rng)
    else:
        keep = rng.random(n) < eps
        fresh = p.marginal.sample(n, rng)
        states = np.empty(n)
        prev = x0
        for i in range(n):
            prev = prev if keep[i] else fresh[i]
            states[i] = prev
    return Trajectory(start=x0, jump_times=times, states=states, horizon=end, t0=t0)


def _renewal_times(sample_holdings, horizon, rng, t0=0.0):
    """Draw renewal epochs until the horizon; non-positive holding draws are
    rejected, resampled, and counted."""
    times = []
    rejected = 0
    t = t0
    end = t0 + horizon
    while True:
        v = float(sample_holdings(1, rng)[0])
        if v <= 0.0:
            rejected += 1
            if rejected > 10_000_000:
                raise ValidationError("holding law keeps producing non-positive draws")
            continue
        t += v
        if t > end:
            break
        times.append(t)
    return np.asarray(times), rejected


def simulate_semi_markov(
    spec: SemiMarkovSpec,
    horizon: float,
    rng: np.random.Generator,
    start: Optional[float] = None,
    t0: float = 0.0,
) -> Trajectory:
    """Same skeleton construction with i.i.d. holding times from an arbitrary law."""
    if not horizon > 0.0:
        raise ValidationError(f"horizon must be positive, got {horizon}")
    x0 = float(spec.marginal.sample(1, rng)[0]) if start is None else float(start)
    times, rejected = _renewal_times(spec.holding_law.sample, horizon, rng, t0)
    states = spec.marginal.sample(times.size, rng)
    traj = Trajectory(start=x0, jump_times=times, states=states,
                      horizon=t0 + horizon, t0=t0)
    traj.meta["rejected_holdings"] = rejected
    return traj


def simulate_mixture(
    spec: MixtureSpec,
    horizon: float,
    rng: np.random.Generator,
    start: Optional[float] = None,
    t0: float = 0.0,
) -> Trajectory:
    """Holding times Exp(rho_n) with a fresh mixing rate rho_n per interval."""
    if not horizon > 0.0:
        raise ValidationError(f"horizon must be positive, got {horizon}")
    x0 = float(spec.marginal.sample(1, rng)[0]) if start is None else float(start)
    rejected = 0

    def draw_holding(_, rng_):
        nonlocal rejected
        while True:
            rho = float(spec.rate_law.sample(1, rng_)[0])
            if rho > 0.0:
                return np.array([rng_.exponential(1.0 / rho)])
            rejected += 1
            if rejected > 10_000_000:
                raise ValidationError("rate mixture keeps producing non-positive draws")

    times, _ = _renewal_times(draw_holding, horizon, rng, t0)
    states = spec.marginal.sample(times.size, rng)
    traj = Trajectory(start=x0, jump_times=times, states=states,
                      horizon=t0 + horizon, t0=t0)
    traj.meta["rejected_rates"] = rejected
    return traj


# ---------------------------------------------------------------------------
# Correlation structure
# ---------------------------------------------------------------------------

def autocorrelation(model, h: float) -> float:
    """Correlation between the path value at a renewal origin and at lag h.

    Exponential for the Markov case, survival function of the holding law
    for the semi-Markov case, and the Laplace transform of the rate mixture
    for the mixture case.
    """
    if h < 0.0:
        raise DomainError(f"lag must be non-negative, got {h}")
    if isinstance(model, SfHarrisParams):
        if model.constant:
            return 1.0
        return math.exp(-model.alpha * h)
    if isinstance(model, SemiMarkovSpec):
        return float(1.0 - model.holding_law.cdf(h))
    if isinstance(model, MixtureSpec):
        return float(model.rate_law.laplace(h))
    raise ValidationError(f"unsupported model type {type(model)!r}")


def tv_distance_discrete(alpha: float, t: float, q_probs, x_index: int) -> float:
    """Exact total-variation distance between the time-t transition from state
    ``x_index`` and the marginal, for a finite-support marginal."""
    w_new, w_stay = transition_weights(alpha, t)
    q = np.asarray(q_probs, dtype=float)
    pt = w_new * q
    pt[x_index] += w_stay
    return 0.5 * float(np.sum(np.abs(pt - q)))


# ---------------------------------------------------------------------------
# Serialization
# ---------------------------------------------------------------------------

def trajectory_to_csv(traj: Trajectory, path):
    with open(path, "w") as fh:
        fh.write(f"# start={float(traj.start)!r} horizon={float(traj.horizon)!r} t0={float(traj.t0)!r}\n")
        fh.write("t,value\n")
        for t, v in zip(traj.jump_times, traj.states):
            fh.write(f"{float(t)!r},{float(v)!r}\n")


def trajectory_from_csv(path) -> Trajectory:
    with open(path) as fh:
        header = fh.readline().strip()
        if not header.startswith("#"):
            raise ValidationError("missing skeleton header row")
        fields = dict(tok.split("=") for tok in header[1:].split())
        fh.readline()  # column header
        times, states = [], []
        for line in fh:
            if not line.strip():
                continue
            t, v = line.split(",")
            times.append(float(t))
            states.append(float(v))
    return Trajectory(
        start=float(fields["start"]),
        jump_times=np.asarray(times),
        states=np.asarray(states),
        horizon=float(fields["horizon"]),
        t0=float(fields.get("t0", 0.0)),
    )


def trajectory_to_json(traj: Trajectory, path):
    payload = {
        "start": traj.start,
        "horizon": traj.horizon,
        "t0": traj.t0,
        "jump_times": traj.jump_times.tolist(),
        "states": traj.states.tolist(),
    }
    with open(path, "w") as fh:
        json.dump(payload, fh)


def trajectory_from_json(path) -> Trajectory:
    with open(path) as fh:
        payload = json.load(fh)
    return Trajectory(
        start=payload["start"],
        jump_times=np.asarray(payload["jump_times"]),
        states=np.asarray(payload["states"]),
        horizon=payload["horizon"],
        t0=payload.get("t0", 0.0),
    )
