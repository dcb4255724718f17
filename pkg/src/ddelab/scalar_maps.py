"""Feedback nonlinearities, the (H1)-(H3) checks and the interval map x -> zeta*f(x).

A :class:`Nonlinearity` bundles f and its first three derivatives in closed
form, so the Schwarzian never goes through finite differences.  Built-in
families are normalised to f(0) = 0, f'(0) = -1.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from typing import Callable, Optional, Sequence

import numpy as np

from .errors import (
    DivisionByZeroAtCriticalPoint,
    NoCycleFound,
    NonFiniteValue,
    OutOfDomain,
    ToleranceNotReached,
)

RealFn = Callable[[np.ndarray], np.ndarray]

# |f'(x)| below this counts as "at the critical point"
CRITICAL_EPS = 1e-14


@dataclass(frozen=True)
class Nonlinearity:
    eval: RealFn
    d1: RealFn
    d2: RealFn
    d3: RealFn
    lower_bound: float = -math.inf
    critical_point: Optional[float] = None
    family: str = "Custom"
    params: dict = field(default_factory=dict)

    def __call__(self, x):
        return self.eval(x)

    @property
    def tag(self) -> str:
        if not self.params:
            return self.family
        args = ",".join(f"{k}={v:.15g}" for k, v in sorted(self.params.items()))
        return f"{self.family}({args})"


def tanh() -> Nonlinearity:
    """f(x) = -tanh(x), the reference member of the class (Sf = -2 everywhere)."""

    def d1(x):
        return -1.0 / np.cosh(x) ** 2

    def d2(x):
        return 2.0 * np.tanh(x) / np.cosh(x) ** 2

    def d3(x):
        s = 1.0 / np.cosh(x) ** 2
        return 2.0 * s * s - 4.0 * s * np.tanh(x) ** 2

    return Nonlinearity(lambda x: -np.tanh(x), d1, d2, d3,
                        lower_bound=-1.0, critical_point=None, family="Tanh")


def lasota_wazewska_shifted(a: float = 1.0) -> Nonlinearity:
    """Normalised Lasota-Wazewska feedback f(y) = (exp(-a y) - 1)/a.

    The translation to the positive equilibrium removes every trace of the
    gain, so only the rate ``a`` survives.
    """
    if a <= 0:
        raise OutOfDomain(f"rate a must be positive, got {a}")
    return Nonlinearity(
        lambda y: np.expm1(-a * np.asarray(y, dtype=float)) / a,
        lambda y: -np.exp(-a * np.asarray(y, dtype=float)),
        lambda y: a * np.exp(-a * np.asarray(y, dtype=float)),
        lambda y: -a * a * np.exp(-a * np.asarray(y, dtype=float)),
        lower_bound=-1.0 / a,
        family="LasotaWazewskaShifted",
        params={"a": a},
    )


def shifted(G: Sequence[RealFn], xbar: float, family: str, params: dict,
            lower_bound: float = -math.inf,
            critical_point: Optional[float] = None) -> Nonlinearity:
    """Translate a production term G (given with G', G'', G''') to its equilibrium.

    Returns f(y) = (G(xbar + y) - xbar)/|G'(xbar)|, so that f(0) = 0 and
    f'(0) = -1 whenever G'(xbar) < 0.
    """
    g0, g1, g2, g3 = G
    scale = abs(float(g1(xbar)))
    if scale == 0.0:
        raise OutOfDomain("G'(xbar) = 0; the shifted map cannot be normalised")

    return Nonlinearity(
        lambda y: (g0(xbar + np.asarray(y, dtype=float)) - xbar) / scale,
        lambda y: g1(xbar + np.asarray(y, dtype=float)) / scale,
        lambda y: g2(xbar + np.asarray(y, dtype=float)) / scale,
        lambda y: g3(xbar + np.asarray(y, dtype=float)) / scale,
        lower_bound=lower_bound,
        critical_point=critical_point,
        family=family,
        params=dict(params),
    )


def custom(f: RealFn, d1: RealFn, d2: RealFn, d3: RealFn, *,
           lower_bound: float = -math.inf,
           critical_point: Optional[float] = None, **params) -> Nonlinearity:
    return Nonlinearity(f, d1, d2, d3, lower_bound=lower_bound,
                        critical_point=critical_point, family="Custom",
                        params=params)


def linear() -> Nonlinearity:
    """f(x) = -x; turns the delay equation into its own linearisation."""
    return custom(lambda x: -np.asarray(x, dtype=float),
                  lambda x: -np.ones_like(np.asarray(x, dtype=float)),
                  lambda x: np.zeros_like(np.asarray(x, dtype=float)),
                  lambda x: np.zeros_like(np.asarray(x, dtype=float)))


def schwarzian(nl: Nonlinearity, x: float) -> float:
    fp = float(nl.d1(x))
    if abs(fp) < CRITICAL_EPS:
        raise DivisionByZeroAtCriticalPoint(f"f'({x}) = {fp:.3g}; Sf undefined at the critical point")
    r2 = float(nl.d2(x)) / fp
    return float(nl.d3(x)) / fp - 1.5 * r2 * r2


def _schwarzian_array(nl, x):
    fp = nl.d1(x)
    r2 = nl.d2(x) / fp
    return nl.d3(x) / fp - 1.5 * r2 * r2


@dataclass
class HypothesisReport:
    h1_ok: bool
    h2_ok: bool
    h3_ok: bool
    witnesses: list = field(default_factory=list)
    grid: dict = field(default_factory=dict)

    @property
    def ok(self) -> bool:
        return self.h1_ok and self.h2_ok and self.h3_ok

    def to_dict(self) -> dict:
        return {
            "h1_ok": self.h1_ok,
            "h2_ok": self.h2_ok,
            "h3_ok": self.h3_ok,
            "witnesses": [{"x": x, "quantity": q, "value": v} for x, q, v in self.witnesses],
            "grid": dict(self.grid),
        }


def check_hypotheses(nl: Nonlinearity, window=(-10.0, 10.0), n_samples: int = 10_000,
                     max_witnesses: int = 5, norm_tol: float = 1e-12) -> HypothesisReport:
    """Sample (H1)-(H3) on a finite window.

    Violations are returned as witnesses ``(x, quantity, value)``; nothing is
    raised.  At most ``max_witnesses`` are kept per quantity.
    """
    lo, hi = map(float, window)
    if not lo < 0.0 < hi:
        raise OutOfDomain(f"window {window} must contain 0 in its interior")
    if n_samples < 100:
        raise OutOfDomain("n_samples must be at least 100")

    x = np.linspace(lo, hi, n_samples)
    x = x[x != 0.0]
    fx = nl.eval(x)
    d1 = nl.d1(x)
    witnesses = []

    def add(xs, quantity, values):
        for xi, vi in list(zip(xs, values))[:max_witnesses]:
            witnesses.append((float(xi), quantity, float(vi)))

    # H1: sign condition and normalisation at zero
    n_before = len(witnesses)
    xf = x * fx
    bad = ~(xf < 0.0)
    add(x[bad], "x*f(x)", xf[bad])
    f0, fp0 = float(nl.eval(0.0)), float(nl.d1(0.0))
    if abs(f0) > norm_tol:
        witnesses.append((0.0, "f(0)", f0))
    if abs(fp0 + 1.0) > norm_tol:
        witnesses.append((0.0, "f'(0)", fp0))
    h1 = len(witnesses) == n_before

    # H2: bounded below, at most one critical point which is an extremum
    n_before = len(witnesses)
    if not math.isfinite(nl.lower_bound):
        witnesses.append((float("nan"), "lower_bound", float(nl.lower_bound)))
    else:
        below = fx < nl.lower_bound - 1e-12 * max(1.0, abs(nl.lower_bound))
        add(x[below], "f(x)-lower_bound", fx[below] - nl.lower_bound)
    sign = np.sign(d1)
    nz = sign != 0
    xs, ss = x[nz], sign[nz]
    changes = np.nonzero(ss[1:] != ss[:-1])[0]
    if len(changes) > 1:
        add(0.5 * (xs[changes] + xs[changes + 1]), "f'(x) sign change", d1[nz][changes])
    h2 = len(witnesses) == n_before

    # H3: negative Schwarzian away from x*
    n_before = len(witnesses)
    scale = np.max(np.abs(d1))
    away = np.abs(d1) > 1e-8 * scale
    with np.errstate(divide="ignore", invalid="ignore"):
        sf = _schwarzian_array(nl, x[away])
    bad = ~(sf < 0.0)
    add(x[away][bad], "Sf(x)", sf[bad])
    h3 = len(witnesses) == n_before

    return HypothesisReport(h1, h2, h3, witnesses,
                            {"lo": lo, "hi": hi, "n_samples": int(n_samples)})


@dataclass(frozen=True)
class AttractorInterval:
    a: float
    b: float
    zeta: float
    residual: float

    def contains(self, x, pad: float = 0.0) -> bool:
        x = np.asarray(x)
        return bool(np.all((x >= self.a - pad) & (x <= self.b + pad)))


def attractor_interval(nl: Nonlinearity, zeta: float, tol: float = 1e-10,
                       x_max: float = 50.0, max_iter: int = 200) -> AttractorInterval:
    """Global attractor [a, b] of the interval map zeta*f.

    For zeta > 1 the endpoints form the 2-cycle: b > 0 is located by bisection
    on g(b) = zeta*f(zeta*f(b)) - b and a = zeta*f(b).
    """
    if zeta <= 0:
        raise OutOfDomain(f"zeta must be positive, got {zeta}")
    if zeta <= 1.0:
        return AttractorInterval(0.0, 0.0, float(zeta), 0.0)

    def g(b):
        return zeta * nl.eval(zeta * nl.eval(b)) - b

    grid = np.geomspace(1e-10, x_max, 600)
    with np.errstate(all="ignore"):
        gv = g(grid)
    pos = np.isfinite(gv) & (gv > 0)
    neg = np.isfinite(gv) & (gv <= 0)
    idx = np.nonzero(pos[:-1] & neg[1:])[0]
    if len(idx) == 0:
        raise NoCycleFound(f"g(b) has no sign change on (0, {x_max}] for zeta={zeta}")
    lo, hi = float(grid[idx[0]]), float(grid[idx[0] + 1])

    for _ in range(max_iter):
        mid = 0.5 * (lo + hi)
        if mid <= lo or mid >= hi:
            break
        if g(mid) > 0:
            lo = mid
        else:
            hi = mid
    b = 0.5 * (lo + hi)
    a = float(zeta * nl.eval(b))
    residual = max(abs(float(zeta * nl.eval(a)) - b), abs(float(zeta * nl.eval(b)) - a))
    if residual > tol:
        raise ToleranceNotReached(f"2-cycle residual {residual:.3g} > tol {tol:.3g} after {max_iter} bisections")
    return AttractorInterval(a, b, float(zeta), residual)


def iterate_map(nl: Nonlinearity, zeta: float, x0: float, n: int) -> np.ndarray:
    if n < 1:
        raise OutOfDomain("n must be >= 1")
    orbit = np.empty(n + 1)
    orbit[0] = x = float(x0)
    for k in range(1, n + 1):
        x = float(zeta * nl.eval(x))
        if not math.isfinite(x):
            raise NonFiniteValue(f"orbit left the reals at step {k}")
        orbit[k] = x
    return orbit


def amplitude_scaling(nl: Nonlinearity, zetas, tol: float = 1e-10):
    """Rows (zeta, b_zeta, b_zeta/sqrt(zeta-1)) for zeta slightly above 1.

    The supremum of the last column is the empirical K1 of the amplitude
    bound sup|x| <= K1*sqrt(zeta-1).
    """
    rows = []
    for z in zetas:
        if z <= 1.0:
            raise OutOfDomain(f"scaling rows need zeta > 1, got {z}")
        iv = attractor_interval(nl, z, tol=tol)
        rows.append((float(z), iv.b, iv.b / math.sqrt(z - 1.0)))
    return rows


def empirical_k1(rows) -> float:
    return max(abs(r[2]) for r in rows)
