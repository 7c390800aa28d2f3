"""Special functions, deterministic optimizers, quadrature, and ARMS sampling.

Everything in this module is deterministic given its inputs (and, for the
sampler, the supplied RNG), so callers can rely on bit-identical re-runs.
"""
from __future__ import annotations

import math
from dataclasses import dataclass, field
from typing import Callable, Optional, Sequence

import numpy as np
from scipy import integrate as _integrate
from scipy import special as _special

from .errors import (
    ArmsInitError,
    DomainError,
    NumericalError,
    OverflowRangeError,
    QuadratureError,
)

_LOG_DBL_MAX = math.log(np.finfo(float).max)


# ---------------------------------------------------------------------------
# Modified Bessel function of the second kind, real order
# ---------------------------------------------------------------------------

def bessel_k(order: float, x: float) -> float:
    """Modified Bessel function of the second kind K_nu(x) for real order.

    Uses the symmetry K_{-nu} = K_nu. Raises ``OverflowRangeError`` when the
    value is not representable in double precision; use :func:`log_bessel_k`
    in that regime.
    """
    if not x > 0.0:
        raise DomainError(f"bessel_k requires x > 0, got {x}")
    nu = abs(float(order))
    y = _special.kv(nu, x)
    if np.isfinite(y) and y > 0.0:
        return float(y)
    lk = log_bessel_k(order, x)
    if lk >= _LOG_DBL_MAX:
        raise OverflowRangeError(
            f"K_{order}({x}) exceeds double range (log K = {lk:.3f})"
        )
    if lk <= -_LOG_DBL_MAX:
        return 0.0
    return math.exp(lk)


def log_bessel_k(order: float, x: float) -> float:
    """log K_nu(x), valid far beyond the overflow range of :func:`bessel_k`."""
    if not x > 0.0:
        raise DomainError(f"log_bessel_k requires x > 0, got {x}")
    nu = abs(float(order))
    # kve = exp(x) * K_nu(x) extends the usable range to large x
    y = _special.kve(nu, x)
    if np.isfinite(y) and y > 0.0:
        return float(np.log(y) - x)
    # Large order with small argument overflows doubles; fall back to
    # arbitrary precision.
    import mpmath

    with mpmath.workdps(30):
        return float(mpmath.log(mpmath.besselk(nu, x)))


def bessel_k_ratio(order: float, x: float) -> float:
    """K_{nu+1}(x) / K_nu(x), computed from scaled Bessels to dodge overflow."""
    if not x > 0.0:
        raise DomainError(f"bessel_k_ratio requires x > 0, got {x}")
    a = _special.kve(abs(order + 1.0), x)
    b = _special.kve(abs(order), x)
    if np.isfinite(a) and np.isfinite(b) and b > 0.0:
        return float(a / b)
    return math.exp(log_bessel_k(order + 1.0, x) - log_bessel_k(order, x))


def bessel_k_dorder(order: float, x: float) -> float:
    """Derivative of K_nu(x) with respect to the order nu.

    Central difference with step ``h = max(1e-5, 1e-5 * |nu|)``, Richardson
    extrapolated once. Odd in nu since K is even in its order.
    """
    if not x > 0.0:
        raise DomainError(f"bessel_k_dorder requires x > 0, got {x}")
    nu = float(order)
    h = max(1e-5, 1e-5 * abs(nu))

    def central(step: float) -> float:
        return (bessel_k(nu + step, x) - bessel_k(nu - step, x)) / (2.0 * step)

    d_h = central(h)
    d_h2 = central(h / 2.0)
    return (4.0 * d_h2 - d_h) / 3.0


def log_bessel_k_dorder(order: float, x: float) -> float:
    """Derivative of log K_nu(x) in the order, same scheme as bessel_k_dorder."""
    if not x > 0.0:
        raise DomainError(f"log_bessel_k_dorder requires x > 0, got {x}")
    nu = float(order)
    h = max(1e-5, 1e-5 * abs(nu))

    def central(step: float) -> float:
        return (log_bessel_k(nu + step, x) - log_bessel_k(nu - step, x)) / (2.0 * step)

    d_h = central(h)
    d_h2 = central(h / 2.0)
    return (4.0 * d_h2 - d_h) / 3.0


# ---------------------------------------------------------------------------
# Adaptive quadrature
# ---------------------------------------------------------------------------

def quad_integrate(
    f: Callable[[float], float],
    a: float,
    b: float,
    tol: float = 1e-10,
    return_error: bool = False,
):
    """Adaptive integral of ``f`` over (a, b), b may be ``np.inf``.

    Raises ``QuadratureError`` (carrying the best estimate) when the
    estimated absolute error exceeds ``tol``. With ``return_error`` the
    result is ``(value, error_estimate)``.
    """
    value, err, info = _integrate.quad(f, a, b, epsabs=tol, epsrel=tol,
                                       limit=400, full_output=True)[:3]
    if err > max(tol, abs(value) * tol):
        raise QuadratureError(
            f"quadrature error estimate {err:.3e} exceeds tol {tol:.3e}",
            estimate=value,
            error_estimate=err,
        )
    if return_error:
        return float(value), float(err)
    return float(value)


# ---------------------------------------------------------------------------
# Optimizers
# ---------------------------------------------------------------------------

@dataclass
class OptimizerOptions:
    """Stopping tolerances shared by both optimizers."""

    xtol: float = 1e-8
    ftol: float = 1e-8
    gtol: float = 1e-6
    max_iter: int = 2000


@dataclass
class OptimizerResult:
    argmin: np.ndarray
    value: float
    iterations: int
    converged: bool
    fallback_steps: int = 0
    stalled: bool = False

    def __post_init__(self):
        self.argmin = np.atleast_1d(np.asarray(self.argmin, dtype=float))


def nelder_mead(
    objective: Callable[[np.ndarray], float],
    start: Sequence[float],
    opts: Optional[OptimizerOptions] = None,
) -> OptimizerResult:
    """Downhill simplex minimization.

    Stops when the simplex diameter drops below ``xtol`` or the vertex
    objective spread drops below ``ftol``; always returns the best vertex.
    """
    opts = opts or OptimizerOptions()
    x0 = np.atleast_1d(np.asarray(start, dtype=float))
    d = x0.size
    f0 = float(objective(x0))
    if not np.isfinite(f0):
        raise DomainError("objective is not finite at the start point")

    # scipy-style initial simplex: 5% bumps, absolute bump on zero coords
    simplex = np.tile(x0, (d + 1, 1))
    for i in range(d):
        if simplex[i + 1, i] != 0.0:
            simplex[i + 1, i] *= 1.05
        else:
            simplex[i + 1, i] = 0.00025
    fvals = np.array([f0] + [float(objective(v)) for v in simplex[1:]])
    fvals[~np.isfinite(fvals)] = np.inf

    alpha, gamma, rho, sigma = 1.0, 2.0, 0.5, 0.5
    iterations = 0
    converged = False

    def feval(v):
        y = float(objective(v))
        return y if np.isfinite(y) else np.inf

    while iterations < opts.max_iter:
        order = np.argsort(fvals, kind="stable")
        simplex, fvals = simplex[order], fvals[order]
        diam = np.max(np.abs(simplex[1:] - simplex[0]))
        spread = fvals[-1] - fvals[0]
        if diam <= opts.xtol and spread <= opts.ftol:
            converged = True
            break
        iterations += 1
        centroid = simplex[:-1].mean(axis=0)
        xr = centroid + alpha * (centroid - simplex[-1])
        fr = feval(xr)
        if fvals[0] <= fr < fvals[-2]:
            simplex[-1], fvals[-1] = xr, fr
        elif fr < fvals[0]:
            xe = centroid + gamma * (xr - centroid)
            fe = feval(xe)
            if fe < fr:
                simplex[-1], fvals[-1] = xe, fe
            else:
                simplex[-1], fvals[-1] = xr, fr
        else:
            xc = centroid + rho * (simplex[-1] - centroid)
            fc = feval(xc)
            if fc < fvals[-1]:
                simplex[-1], fvals[-1] = xc, fc
            else:
                simplex[1:] = simplex[0] + sigma * (simplex[1:] - simplex[0])
                fvals[1:] = [feval(v) for v in simplex[1:]]

    best = int(np.argmin(fvals))
    return OptimizerResult(
        argmin=simplex[best].copy(),
        value=float(fvals[best]),
        iterations=iterations,
        converged=converged,
    )


def _fd_gradient(objective, x, fx):
    g = np.empty_like(x)
    for i in range(x.size):
        h = 1e-7 * (1.0 + abs(x[i]))
        xp = x.copy()
        xp[i] += h
        fp = float(objective(xp))
        if not np.isfinite(fp):
            fp = fx
        g[i] = (fp - fx) / h
    return g


def bfgs(
    objective: Callable[[np.ndarray], float],
    start: Sequence[float],
    opts: Optional[OptimizerOptions] = None,
) -> OptimizerResult:
    """BFGS minimization with a forward finite-difference gradient.

    Backtracking Armijo line search; on failure a plain steepest-descent
    step is attempted and counted in ``fallback_steps``. If neither search
    makes progress the result is flagged ``stalled`` (non-smooth point).
    """
    opts = opts or OptimizerOptions()
    x = np.atleast_1d(np.asarray(start, dtype=float)).copy()
    fx = float(objective(x))
    if not np.isfinite(fx):
        raise DomainError("objective is not finite at the start point")
    d = x.size
    hess_inv = np.eye(d)
    g = _fd_gradient(objective, x, fx)
    iterations = 0
    fallback = 0
    stalled = False
    converged = False

    def line_search(x, fx, direction, slope):
        t = 1.0
        for _ in range(40):
            xn = x + t * direction
            fn = float(objective(xn))
            if np.isfinite(fn) and fn <= fx + 1e-4 * t * slope:
                return xn, fn, t
            t *= 0.5
        return None

    while iterations < opts.max_iter:
        gnorm = np.max(np.abs(g))
        if gnorm <= opts.gtol:
            converged = True
            break
        iterations += 1
        direction = -hess_inv @ g
        slope = float(g @ direction)
        if slope >= 0.0:
            hess_inv = np.eye(d)
            direction = -g
            slope = float(g @ direction)
        hit = line_search(x, fx, direction, slope)
        if hit is None:
            # steepest-descent fallback with a conservative scale
            fallback += 1
            sd = -g / max(np.linalg.norm(g), 1e-300)
            hit = line_search(x, fx, sd * max(1.0, np.linalg.norm(x)), -np.linalg.norm(g))
            if hit is None:
                stalled = True
                break
            hess_inv = np.eye(d)
        xn, fn, _ = hit
        s = xn - x
        gn = _fd_gradient(objective, xn, fn)
        y = gn - g
        sy = float(s @ y)
        if sy > 1e-12 * np.linalg.norm(s) * np.linalg.norm(y):
            rho_k = 1.0 / sy
            v = np.eye(d) - rho_k * np.outer(s, y)
            hess_inv = v @ hess_inv @ v.T + rho_k * np.outer(s, s)
        x, fx, g = xn, fn, gn
        if np.max(np.abs(s)) <= opts.xtol:
            converged = True
            break

    return OptimizerResult(
        argmin=x,
        value=fx,
        iterations=iterations,
        converged=converged,
        fallback_steps=fallback,
        stalled=stalled,
    )


def maximize_nelder_mead(objective, start, opts=None) -> OptimizerResult:
    res = nelder_mead(lambda v: -objective(v), start, opts)
    res.value = -res.value
    return res


def maximize_bfgs(objective, start, opts=None) -> OptimizerResult:
    res = bfgs(lambda v: -objective(v), start, opts)
    res.value = -res.value
    return res


# ---------------------------------------------------------------------------
# Adaptive Rejection Metropolis Sampling
# ---------------------------------------------------------------------------

_MAX_ABSCISSAE = 120
_TAIL_SLOPE_FLOOR = 1e-2


@dataclass
class ArmsState:
    """State of an ARMS sampler on one scalar target.

    ``support`` is an open interval (endpoints may be infinite); abscissae
    are kept sorted and strictly inside the support. The envelope is rebuilt
    lazily whenever a point is added. A state is single-owner: do not share
    one instance between chains.
    """

    support: tuple[float, float]
    abscissae: np.ndarray
    logdensity: Callable[[float], float]
    current: Optional[float] = None
    _pieces: Optional[np.ndarray] = field(default=None, repr=False)
    _hvals: Optional[np.ndarray] = field(default=None, repr=False)

    @classmethod
    def initialize(
        cls,
        logdensity: Callable[[float], float],
        support: tuple[float, float],
        points: Sequence[float],
        current: Optional[float] = None,
    ) -> "ArmsState":
        lo, hi = support
        pts = np.unique(np.asarray(points, dtype=float))
        pts = pts[(pts > lo) & (pts < hi)]
        hv = np.array([logdensity(p) for p in pts], dtype=float)
        keep = np.isfinite(hv)
        if not keep.any():
            raise ArmsInitError(
                f"all {len(pts)} initial abscissae have log-density -inf on "
                f"support ({lo}, {hi})"
            )
        pts, hv = pts[keep], hv[keep]
        # widen around the finite nucleus until we have at least 4 points
        attempts = 0
        while pts.size < 4 and attempts < 60:
            attempts += 1
            span = (pts.max() - pts.min()) or max(abs(pts[0]), 1.0)
            cands = [pts.min() - 0.5 * span, pts.max() + 0.5 * span,
                     0.5 * (pts.min() + pts.max()) + span * 0.13]
            for c in cands:
                if lo < c < hi and not np.any(np.isclose(c, pts)):
                    y = logdensity(c)
                    if np.isfinite(y):
                        pts = np.append(pts, c)
                        hv = np.append(hv, y)
            order = np.argsort(pts)
            pts, hv = pts[order], hv[order]
        if pts.size < 4:
            raise ArmsInitError("could not place 4 finite abscissae")
        state = cls(support=(float(lo), float(hi)), abscissae=pts,
                    logdensity=logdensity, current=current)
        state._hvals = hv
        state._ensure_tail_points()
        return state

    # -- envelope construction -------------------------------------------

    def _ensure_tail_points(self):
        """On infinite sides, push the end abscissae out until the boundary
        secants decay, so the envelope proposal is integrable."""
        lo, hi = self.support
        for _ in range(60):
            x, h = self.abscissae, self._hvals
            grown = False
            if np.isinf(lo) and h[0] >= h[1]:
                cand = x[0] - max(x[1] - x[0], 1.0) * 2.0
                y = self.logdensity(cand)
                if np.isfinite(y):
                    self.abscissae = np.insert(x, 0, cand)
                    self._hvals = np.insert(h, 0, y)
                    grown = True
            x, h = self.abscissae, self._hvals
            if np.isinf(hi) and h[-1] >= h[-2]:
                cand = x[-1] + max(x[-1] - x[-2], 1.0) * 2.0
                y = self.logdensity(cand)
                if np.isfinite(y):
                    self.abscissae = np.append(x, cand)
                    self._hvals = np.append(h, y)
                    grown = True
            if not grown:
                break
        self._pieces = None

    def _build(self):
        """Piecewise-linear upper model: rows (lo, hi, a, b), env = a + b x."""
        x, h = self.abscissae, self._hvals
        k = x.size
        slopes = (h[1:] - h[:-1]) / (x[1:] - x[:-1])
        inter = h[:-1] - slopes * x[:-1]

        def line(i):
            return inter[i], slopes[i]

        pieces = []
        lo, hi = self.support
        # left exterior: extend the first secant
        if lo < x[0]:
            a, b = line(0)
            if np.isinf(lo) and b <= _TAIL_SLOPE_FLOOR:
                b = _TAIL_SLOPE_FLOOR
                a = h[0] - b * x[0]
            pieces.append((lo, x[0], a, b))
        for i in range(k - 1):
            cand = [line(i)]
            outer = []
            if i - 1 >= 0:
                outer.append(line(i - 1))
            if i + 1 <= k - 2:
                outer.append(line(i + 1))
            seg = _max_of_chord_and_min(x[i], x[i + 1], cand[0], outer)
            pieces.extend(seg)
        if hi > x[-1]:
            a, b = line(k - 2)
            if np.isinf(hi) and b >= -_TAIL_SLOPE_FLOOR:
                b = -_TAIL_SLOPE_FLOOR
                a = h[-1] - b * x[-1]
            pieces.append((x[-1], hi, a, b))
        arr = np.array(pieces, dtype=float)
        # log-mass of each piece
        logw = np.array([_piece_log_mass(*row) for row in arr])
        ok = np.isfinite(logw)
        self._pieces = (arr[ok], logw[ok])

    def _env_value(self, xq: float) -> float:
        arr, _ = self._pieces
        idx = np.searchsorted(arr[:, 1], xq, side="left")
        idx = min(idx, arr.shape[0] - 1)
        a, b = arr[idx, 2], arr[idx, 3]
        return a + b * xq

    def add_point(self, xq: float, hq: float):
        if not np.isfinite(hq):
            return
        if self.abscissae.size >= _MAX_ABSCISSAE:
            # stay adaptive: evict the lowest interior point (keeping the two
            # outermost on each side so the tail conditions survive)
            interior = np.argsort(self._hvals[2:-2])
            if interior.size == 0:
                return
            drop = int(interior[0]) + 2
            if hq <= self._hvals[drop]:
                return
            self.abscissae = np.delete(self.abscissae, drop)
            self._hvals = np.delete(self._hvals, drop)
        pos = np.searchsorted(self.abscissae, xq)
        tol = 1e-9 * max(abs(xq), 1e-300)
        near = (
            (pos > 0 and xq - self.abscissae[pos - 1] < tol)
            or (pos < self.abscissae.size and self.abscissae[pos] - xq < tol)
        )
        if near:
            return
        self.abscissae = np.insert(self.abscissae, pos, xq)
        self._hvals = np.insert(self._hvals, pos, hq)
        # never let an added endpoint break the tail decay conditions
        self._ensure_tail_points()


def _max_of_chord_and_min(xl, xr, chord, outer):
    """Pieces of max(chord, min(outer lines)) over [xl, xr]."""
    lines = [chord] + list(outer)
    cuts = {xl, xr}
    for i in range(len(lines)):
        for j in range(i + 1, len(lines)):
            a1, b1 = lines[i]
            a2, b2 = lines[j]
            if b1 != b2:
                xc = (a2 - a1) / (b1 - b2)
                if xl < xc < xr:
                    cuts.add(float(xc))
    cuts = sorted(cuts)
    out = []
    for u, v in zip(cuts[:-1], cuts[1:]):
        mid = 0.5 * (u + v)

        def val(ln):
            return ln[0] + ln[1] * mid

        best = chord
        if outer:
            inner = min(outer, key=val)
            if val(inner) > val(best):
                best = inner
        out.append((u, v, best[0], best[1]))
    return out


def _piece_log_mass(lo, hi, a, b):
    """log integral of exp(a + b x) over (lo, hi)."""
    if np.isinf(lo) and np.isinf(hi):
        return np.inf
    if np.isinf(lo):
        return a + b * hi - math.log(b) if b > 0 else np.inf
    if np.isinf(hi):
        return a + b * lo - math.log(-b) if b < 0 else np.inf
    width = hi - lo
    if width <= 0:
        return -np.inf
    z = b * width
    if abs(z) < 1e-12:
        return a + b * lo + math.log(width)
    if b > 0:
        return a + b * hi + math.log1p(-math.exp(-z)) - math.log(b)
    return a + b * lo + math.log1p(-math.exp(z)) - math.log(-b)


def _sample_piece(lo, hi, b, u):
    """Inverse-CDF draw from density proportional to exp(b x) on (lo, hi)."""
    if np.isinf(lo):
        return hi + math.log(u) / b
    if np.isinf(hi):
        return lo + math.log(u) / b
    width = hi - lo
    z = b * width
    if abs(z) < 1e-12:
        return lo + u * width
    # inverse CDF x = lo + log(1 + u (e^z - 1)) / b, split by sign of z so
    # neither branch can overflow
    if z > 0:
        return lo + (z + math.log(u + (1.0 - u) * math.exp(-z))) / b
    return lo + math.log1p(u * math.expm1(z)) / b


def arms_sample(
    logdensity: Callable[[float], float],
    support: tuple[float, float],
    state: ArmsState,
    rng: np.random.Generator,
) -> float:
    """One ARMS draw targeting ``exp(logdensity)`` restricted to ``support``.

    Envelope rejections adapt the abscissae; accepted candidates go through
    a Metropolis step against ``state.current`` so that regions where the
    piecewise envelope underestimates the density remain exactly weighted.
    """
    if state._pieces is None:
        state._build()
    for _ in range(10000):
        arr, logw = state._pieces
        if arr.shape[0] == 0:
            raise ArmsInitError("empty envelope")
        shifted = np.exp(logw - logw.max())
        cdf = np.cumsum(shifted)
        j = int(np.searchsorted(cdf, rng.random() * cdf[-1], side="left"))
        j = min(j, arr.shape[0] - 1)
        lo, hi, _, b = arr[j]
        xq = _sample_piece(lo, hi, b, rng.random())
        if not (state.support[0] < xq < state.support[1]):
            continue
        hq = logdensity(xq)
        env = state._env_value(xq)
        if not np.isfinite(hq):
            state.add_point(xq, hq)
            if state._pieces is None:
                state._build()
            continue
        if math.log(rng.random() + 1e-300) > hq - env:
            # envelope rejection: adapt and retry
            state.add_point(xq, hq)
            state._build()
            continue
        cur = state.current
        if cur is None:
            state.current = float(xq)
            return float(xq)
        hcur = logdensity(cur)
        envcur = state._env_value(cur)
        log_acc = (hq + min(hcur, envcur)) - (hcur + min(hq, env))
        if math.log(rng.random() + 1e-300) <= min(0.0, log_acc):
            state.current = float(xq)
        return float(state.current)
    raise NumericalError("ARMS failed to accept a candidate after 10000 proposals")
