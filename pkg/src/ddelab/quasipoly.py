"""Roots of the characteristic function p(z) = z + 1 + zeta*exp(-z*h).

Roots are located strip by strip, where strip k is the band
2*pi*k/h <= Im z < 2*pi*(k+1)/h of the upper half plane.  Newton refinement
starts from the large-delay asymptotics when zeta == 1, otherwise from local
minima of |p| on a coarse grid.  Every strip is then audited with the
argument principle, and anything Newton missed is recovered by bisecting
the strip rectangle.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np
from scipy.optimize import brentq

from .errors import MissedRoot, NewtonDiverged, OutOfDomain, RootOnBoundary

TWO_PI = 2.0 * math.pi
# below this the strip rectangles span ~ln(1/h)/h and lose float resolution
MIN_DELAY = 1e-8


@dataclass(frozen=True)
class QuasiPoly:
    delay: float
    gain: float = 1.0

    def __post_init__(self):
        if not self.delay >= MIN_DELAY:
            raise OutOfDomain(f"delay must be at least {MIN_DELAY}, got {self.delay}")
        if not self.gain > 0:
            raise OutOfDomain(f"gain must be positive, got {self.gain}")

    def __call__(self, z):
        return z + 1.0 + self.gain * np.exp(-z * self.delay)

    def derivative(self, z):
        return 1.0 - self.gain * self.delay * np.exp(-z * self.delay)

    def strip_bounds(self, k: int):
        return TWO_PI * k / self.delay, TWO_PI * (k + 1) / self.delay


def eval(p: QuasiPoly, z):  # noqa: A001 - mirrors the operation name
    return p(z)


# ---------------------------------------------------------------------------
# argument principle

def _rect_path(rect, t):
    x0, x1, y0, y1 = rect
    side = np.floor(t).astype(int) % 4
    u = t - np.floor(t)
    re = np.select([side == 0, side == 1, side == 2, side == 3],
                   [x0 + u * (x1 - x0), np.full_like(u, x1), x1 - u * (x1 - x0), np.full_like(u, x0)])
    im = np.select([side == 0, side == 1, side == 2, side == 3],
                   [np.full_like(u, y0), y0 + u * (y1 - y0), np.full_like(u, y1), y1 - u * (y1 - y0)])
    return re + 1j * im


def count_roots_rect(p: QuasiPoly, rect, n_boundary: int = 2000,
                     threshold: float = 1e-10, max_points: int = 2_000_000) -> int:
    """Winding number of p around the rectangle (re_lo, re_hi, im_lo, im_hi).

    The boundary sampling is refined until no segment turns the phase by
    more than pi/2.  A degenerate rectangle holds no roots.
    """
    x0, x1, y0, y1 = map(float, rect)
    if x1 <= x0 or y1 <= y0:
        return 0
    w, hgt = x1 - x0, y1 - y0
    per = 2 * (w + hgt)
    n = max(int(n_boundary), 64)
    counts = [max(16, int(round(n * s / per))) for s in (w, hgt, w, hgt)]
    t = np.concatenate([k + np.arange(c) / c for k, c in enumerate(counts)] + [np.array([4.0])])
    r = (x0, x1, y0, y1)

    z = _rect_path(r, t)
    z[-1] = z[0]
    v = p(z)
    for _ in range(60):
        dphi = np.angle(v[1:] / v[:-1])
        bad = np.nonzero(np.abs(dphi) > 0.5 * math.pi)[0]
        if len(bad) == 0:
            break
        if len(t) + len(bad) > max_points:
            raise RootOnBoundary(f"phase refinement did not settle on rect {r}")
        tm = 0.5 * (t[bad] + t[bad + 1])
        t = np.insert(t, bad + 1, tm)
        v = np.insert(v, bad + 1, p(_rect_path(r, tm)))
    else:
        raise RootOnBoundary(f"phase refinement did not settle on rect {r}")

    scale = 1.0 + max(abs(x0), abs(x1), abs(y0), abs(y1))
    if float(np.min(np.abs(v))) < threshold * scale:
        raise RootOnBoundary(f"|p| = {np.min(np.abs(v)):.3g} on the boundary of {r}; inflate the rectangle")
    winding = float(np.sum(dphi)) / TWO_PI
    k = int(round(winding))
    if abs(winding - k) > 1e-6:
        raise RootOnBoundary(f"non-integer winding {winding} on {r}")
    return k


# ---------------------------------------------------------------------------
# root refinement

def refine_root(p: QuasiPoly, seed: complex, k: int = -1, max_iter: int = 100) -> complex:
    with np.errstate(all="ignore"):
        return _newton(p, seed, k, max_iter)


def _newton(p, seed, k, max_iter):
    z = complex(seed)
    for _ in range(max_iter):
        dp = complex(p.derivative(z))
        if dp == 0:
            break
        step = complex(p(z)) / dp
        z -= step
        if not (math.isfinite(z.real) and math.isfinite(z.imag)):
            break
        if abs(step) < 1e-13 * (1.0 + abs(z)):
            return z
    raise NewtonDiverged(k, seed)


def real_roots(p: QuasiPoly) -> list:
    """Real zeros of a + 1 + zeta*exp(-a*h); the function is convex in a."""
    h, g = p.delay, p.gain

    def f(a):
        return a + 1.0 + g * math.exp(-a * h)

    a_star = math.log(g * h) / h
    f_star = a_star + 1.0 + 1.0 / h
    if f_star > 0:
        return []
    if f_star == 0:
        return [a_star]
    # right root lies below -1 since f(a) > a + 1
    right = brentq(f, a_star, -1.0, xtol=1e-15, rtol=1e-15, maxiter=200)
    lo, step = a_star - 1.0, 1.0
    while f(lo) <= 0:
        step *= 2.0
        lo = a_star - step
    left = brentq(f, lo, a_star, xtol=1e-15, rtol=1e-15, maxiter=200)
    return sorted([left, right])


def real_part_window(p: QuasiPoly, im_max: float):
    """Rectangle real-part range guaranteed to hold every root with |Im| <= im_max."""
    h, g = p.delay, p.gain
    hi = max(0.0, g - 1.0) + 0.25
    a, step = 0.0, min(0.05, 0.5 / h)
    # zeta*exp(-a h) = |z + 1| <= |a + 1| + im_max at any root
    while g * math.exp(min(-a * h, 700.0)) <= abs(a + 1.0) + im_max:
        a -= step
        step *= 1.25
    return a - step, hi


def _asymptotic_seed(h: float, k: int) -> complex:
    m = 1 + 2 * k
    return complex(-math.pi ** 2 * m * m / (2.0 * h ** 3), math.pi * m / h)


def _grid_seeds(p: QuasiPoly, rect, n: int = 48, max_seeds: int = 8):
    x0, x1, y0, y1 = rect
    xs = np.linspace(x0, x1, n)
    ys = np.linspace(y0, y1, n)
    Z = xs[None, :] + 1j * ys[:, None]
    with np.errstate(all="ignore"):
        A = np.abs(p(Z))
    inner = A[1:-1, 1:-1]
    is_min = np.ones_like(inner, dtype=bool)
    for di in (-1, 0, 1):
        for dj in (-1, 0, 1):
            if di or dj:
                is_min &= inner <= A[1 + di:n - 1 + di, 1 + dj:n - 1 + dj]
    ii, jj = np.nonzero(is_min)
    order = np.argsort(inner[ii, jj])[:max_seeds]
    return [complex(Z[1 + ii[o], 1 + jj[o]]) for o in order]


def _in_rect(z, rect, closed_top=False):
    x0, x1, y0, y1 = rect
    top_ok = z.imag <= y1 if closed_top else z.imag < y1
    return x0 <= z.real <= x1 and y0 <= z.imag and top_ok


def _dedupe(roots, tol=1e-8):
    out = []
    for r in roots:
        if all(abs(r - q) > tol * (1.0 + abs(q)) for q in out):
            out.append(r)
    return out


def _locate(p: QuasiPoly, rect, n: int, depth: int = 0, max_depth: int = 64):
    """Bisect ``rect`` (known to hold ``n`` roots) until Newton can finish."""
    if n <= 0:
        return []
    x0, x1, y0, y1 = rect
    if n == 1 or depth >= max_depth:
        try:
            z = refine_root(p, complex(0.5 * (x0 + x1), 0.5 * (y0 + y1)))
            if _in_rect(z, rect, closed_top=True):
                return [z]
        except NewtonDiverged:
            pass
        if depth >= max_depth:
            return []
    if (x1 - x0) >= (y1 - y0):
        parts = None
        for frac in (0.5, 0.4871, 0.5137, 0.4619):
            xm = x0 + frac * (x1 - x0)
            try:
                r1, r2 = (x0, xm, y0, y1), (xm, x1, y0, y1)
                parts = [(r1, count_roots_rect(p, r1)), (r2, count_roots_rect(p, r2))]
                break
            except RootOnBoundary:
                continue
    else:
        parts = None
        for frac in (0.5, 0.4871, 0.5137, 0.4619):
            ym = y0 + frac * (y1 - y0)
            try:
                r1, r2 = (x0, x1, y0, ym), (x0, x1, ym, y1)
                parts = [(r1, count_roots_rect(p, r1)), (r2, count_roots_rect(p, r2))]
                break
            except RootOnBoundary:
                continue
    if parts is None:
        return []
    found = []
    for r, c in parts:
        found += _locate(p, r, c, depth + 1, max_depth)
    return found


def strip_rect(p: QuasiPoly, k: int):
    lo_im, hi_im = p.strip_bounds(k)
    re_lo, re_hi = real_part_window(p, hi_im)
    return (re_lo, re_hi, lo_im, hi_im)


def _strip_count(p: QuasiPoly, k: int, rect, n_real: int) -> int:
    if k == 0:
        x0, x1, _, y1 = rect
        total = count_roots_rect(p, (x0, x1, -y1, y1))
        return (total - n_real) // 2
    return count_roots_rect(p, rect)


def strip_roots(p: QuasiPoly, k: int, tol: float = 1e-10, n_real: int = 0) -> list:
    """Roots with 2*pi*k/h < Im z < 2*pi*(k+1)/h, audited by the argument principle."""
    rect = strip_rect(p, k)
    x0, x1, y0, y1 = rect
    inner = (x0, x1, y0 + 1e-12, y1)  # strip 0 excludes the real axis
    seeds = [_asymptotic_seed(p.delay, k)] if p.gain == 1.0 else []
    seeds += _grid_seeds(p, rect)
    found = []
    for s in seeds:
        try:
            z = refine_root(p, s, k)
        except NewtonDiverged:
            continue
        if _in_rect(z, inner) and abs(complex(p(z))) < tol * (1.0 + abs(z)):
            found.append(z)
    found = _dedupe(found)

    expected = _strip_count(p, k, rect, n_real)
    if len(found) < expected:
        extra = [z for z in _locate(p, inner if k else (x0, x1, 1e-9, y1), expected)
                 if abs(complex(p(z))) < tol * (1.0 + abs(z))]
        found = _dedupe(found + extra)
    if len(found) != expected:
        raise MissedRoot(f"strip {k}: argument principle counts {expected} roots, refined {len(found)}")
    return sorted(found, key=lambda z: (z.imag, z.real))


@dataclass
class Spectrum:
    h: float
    zeta: float
    roots: np.ndarray
    residuals: np.ndarray
    dominant: int
    strip_count: int
    strip_sizes: list = field(default_factory=list)

    @property
    def dominant_root(self) -> complex:
        return complex(self.roots[self.dominant])

    def to_dict(self) -> dict:
        d = self.dominant_root
        return {
            "h": self.h,
            "zeta": self.zeta,
            "roots": [{"re": float(r.real), "im": float(r.imag), "residual": float(e)}
                      for r, e in zip(self.roots, self.residuals)],
            "dominant": {"re": d.real, "im": d.imag},
        }


def roots_in_strips(p: QuasiPoly, k_max: int, tol: float = 1e-10) -> Spectrum:
    """All roots with |Im z| < 2*pi*(k_max+1)/h, closed under conjugation."""
    if k_max < 0:
        raise OutOfDomain("k_max must be >= 0")
    reals = real_roots(p)
    upper, sizes = [], []
    for k in range(k_max + 1):
        rk = strip_roots(p, k, tol, n_real=len(reals))
        sizes.append(len(rk))
        upper += rk
    allr = [complex(a, 0.0) for a in reals] + upper + [z.conjugate() for z in upper]
    allr.sort(key=lambda z: (z.imag, z.real))
    roots = np.array(allr, dtype=complex)
    res = np.abs(p(roots))
    dom = int(np.argmax(np.where(roots.imag >= 0, roots.real, -np.inf)))
    return Spectrum(p.delay, p.gain, roots, res, dom, k_max, sizes)


def dominant_root(p: QuasiPoly, k_scan: int = 3, tol: float = 1e-10):
    """Return (sigma, omega): the largest real part and its imaginary part >= 0."""
    k_max = 0 if (p.gain == 1.0 and p.delay >= 1.0) else k_scan
    z = roots_in_strips(p, k_max, tol).dominant_root
    return z.real, abs(z.imag)


# ---------------------------------------------------------------------------
# modulus bounds along vertical lines (unit gain)

@dataclass
class BoundCheck:
    alpha: float
    beta: float
    h: float
    grid: dict
    min_observed: float
    bound: float
    ok: bool


def beta_from_alpha(alpha: float) -> float:
    if not alpha > 2:
        raise OutOfDomain(f"alpha must exceed 2, got {alpha}")
    return (2.0 * alpha + 1.0) / (alpha - 2.0)


def verify_strip_bound(h: float, alpha: float, n_s: int = 400, n_a: int = 50) -> BoundCheck:
    """Grid minimum of |p(a + i s)| on [-pi^2/(alpha h^3), 0] x [0, 2 pi/h] vs pi^2/(beta h^2)."""
    beta = beta_from_alpha(alpha)
    p = QuasiPoly(h, 1.0)
    s = np.linspace(0.0, TWO_PI / h, n_s)
    a = np.linspace(-math.pi ** 2 / (alpha * h ** 3), 0.0, n_a)
    vals = np.abs(p(a[:, None] + 1j * s[None, :]))
    m = float(vals.min())
    bound = math.pi ** 2 / (beta * h * h)
    grid = {"s": [0.0, TWO_PI / h, n_s], "a": [float(a[0]), 0.0, n_a]}
    return BoundCheck(alpha, beta, h, grid, m, bound, m >= bound)


@dataclass(frozen=True)
class SandwichRow:
    s: float
    a: float
    abs_p: float
    lower: float
    upper: float
    ok: bool


def verify_modulus_sandwich(h: float, alpha: float, s_grid) -> list:
    """Check max(s-3, 0) < sqrt((1+a)^2+s^2) - exp(-a h) <= |p(a+is)| < s+3 per s."""
    beta_from_alpha(alpha)
    p = QuasiPoly(h, 1.0)
    a = -math.pi ** 2 / (alpha * h ** 3)
    s_min = TWO_PI / h
    rows = []
    for s in s_grid:
        s = float(s)
        if s < s_min * (1 - 1e-12):
            raise OutOfDomain(f"s={s} below 2*pi/h={s_min}")
        val = abs(complex(p(complex(a, s))))
        lower = math.hypot(1.0 + a, s) - math.exp(-a * h)
        upper = s + 3.0
        ok = max(s - 3.0, 0.0) < lower <= val < upper
        rows.append(SandwichRow(s, a, val, lower, upper, ok))
    return rows


def asymptotic_ratio_table(h_grid):
    """Rows (h, sigma(h), sigma(h)*2h^3/pi^2) for unit gain."""
    rows = []
    for h in h_grid:
        sigma, _ = dominant_root(QuasiPoly(float(h), 1.0))
        rows.append((float(h), sigma, sigma * 2.0 * h ** 3 / math.pi ** 2))
    return rows


def empirical_threshold(passes, h_grid):
    """Smallest grid delay from which ``passes(h)`` holds for the rest of the grid.

    Stands in for the existential thresholds h1, h2, h0.  Returns None when
    the check fails at the last grid point.
    """
    flags = [bool(passes(h)) for h in h_grid]
    thr = None
    for h, ok in zip(reversed(list(h_grid)), reversed(flags)):
        if not ok:
            break
        thr = float(h)
    return thr
