"""Fundamental solution v(t, h) of x'(t) = -x(t) - x(t - h).

v has zero history on [-h, 0) and v(0) = 1.  Three independent routes:

* :func:`fundamental_exact`: on [kh, (k+1)h], v(t) = exp(-t) * Q_k(t - kh)
  with polynomials Q_k from an explicit recurrence, carried in mpmath;
* :func:`fundamental_numeric`: the method-of-steps integrator;
* :func:`contour_value`: inverse Laplace integral along Re z = c.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from typing import Optional

import mpmath
import numpy as np
from scipy.optimize import minimize_scalar
from scipy.special import exp1

from .errors import AbscissaTooLow, InvalidDelay, OutOfDomain, PrecisionLoss
from .quasipoly import QuasiPoly, dominant_root
from .steps import PiecewiseSolution, march, zero_history

MAX_PIECES = 60
_EPS = np.finfo(float).eps


def _check_delay(h: float) -> float:
    if not (isinstance(h, (int, float)) and h > 0 and math.isfinite(h)):
        raise InvalidDelay(f"delay must be positive and finite, got {h}")
    return float(h)


@dataclass
class PiecewiseExpPoly:
    """v(t) = exp(-t) * sum_j pieces[k][j] * (t - k h)^j on [kh, (k+1)h].

    ``pieces`` holds mpmath coefficients (ascending powers) computed with
    ``dps`` digits; ``float_pieces`` are their rounded copies, or None where
    a coefficient overflows a double.
    """

    delay: float
    pieces: list
    t_max: float
    dps: int
    float_pieces: list = field(default_factory=list)

    def __post_init__(self):
        if not self.float_pieces:
            fp = []
            for c in self.pieces:
                arr = np.array([float(x) for x in c])
                fp.append(arr if np.all(np.isfinite(arr)) else None)
            self.float_pieces = fp

    @property
    def n_pieces(self) -> int:
        return len(self.pieces)

    def _piece_index(self, t: float) -> int:
        k = int(math.floor(t / self.delay))
        return min(k, self.n_pieces - 1)

    def _mp_value(self, k: int, s: float, t: float) -> float:
        with mpmath.workdps(self.dps):
            sm = mpmath.mpf(s)
            acc = mpmath.mpf(0)
            mag = mpmath.mpf(0)
            for c in reversed(self.pieces[k]):
                acc = acc * sm + c
            for j, c in enumerate(self.pieces[k]):
                mag += abs(c) * abs(sm) ** j
            val = mpmath.exp(-mpmath.mpf(t)) * acc
            # relative rounding level of the working precision times cancellation
            err = mpmath.mpf(10) ** (-self.dps) * (len(self.pieces[k]) + 2) * mag * mpmath.exp(-mpmath.mpf(t))
        v, e = float(val), float(err)
        if e > max(1e-8 * abs(v), 1e-15):
            raise PrecisionLoss(f"cancellation error {e:.3g} at t={t} exceeds 1e-8 of |v|={abs(v):.3g}")
        return v

    def value(self, t: float) -> float:
        t = float(t)
        if t < 0:
            return 0.0
        if t > self.t_max * (1 + 1e-12):
            raise OutOfDomain(f"t={t} beyond t_max={self.t_max}")
        k = self._piece_index(t)
        s = t - k * self.delay
        c = self.float_pieces[k]
        if c is not None:
            powers = s ** np.arange(len(c))
            terms = c * powers
            q = float(np.sum(terms))
            err = 4 * _EPS * (len(c) + 2) * float(np.sum(np.abs(terms)))
            if math.isfinite(q) and err <= 1e-10 * abs(q):
                return math.exp(-t) * q
        return self._mp_value(k, s, t)

    def __call__(self, t):
        arr = np.asarray(t, dtype=float)
        flat = arr.ravel()
        if np.any(flat > self.t_max * (1 + 1e-12)):
            raise OutOfDomain(f"t beyond t_max={self.t_max}")
        out = np.zeros_like(flat)
        k = np.minimum(np.floor(np.maximum(flat, 0.0) / self.delay).astype(int), self.n_pieces - 1)
        slow = flat >= 0
        for kk in np.unique(k[flat >= 0]):
            c = self.float_pieces[kk]
            if c is None:
                continue
            sel = (k == kk) & (flat >= 0)
            s = flat[sel] - kk * self.delay
            terms = c[None, :] * s[:, None] ** np.arange(len(c))[None, :]
            q = terms.sum(axis=1)
            err = 4 * _EPS * (len(c) + 2) * np.abs(terms).sum(axis=1)
            good = np.isfinite(q) & (err <= 1e-10 * np.abs(q))
            idx = np.nonzero(sel)[0]
            out[idx[good]] = np.exp(-flat[idx[good]]) * q[good]
            slow[idx[good]] = False
        for i in np.nonzero(slow)[0]:
            out[i] = self.value(flat[i])
        out = out.reshape(arr.shape)
        return float(out) if out.ndim == 0 else out

    def coefficient_magnitude(self) -> float:
        """log10 of the largest |coefficient| * h^j over all pieces."""
        with mpmath.workdps(20):
            m = max(abs(c) * mpmath.mpf(self.delay) ** j
                    for piece in self.pieces for j, c in enumerate(piece))
            return float(mpmath.log10(m)) if m > 0 else 0.0


def _recurrence(h, n_pieces: int):
    eh = mpmath.exp(h)
    pieces = [[mpmath.mpf(1)]]
    for _ in range(1, n_pieces):
        prev = pieces[-1]
        at_h = mpmath.polyval(list(reversed(prev)), h)
        pieces.append([at_h] + [-eh * c / (j + 1) for j, c in enumerate(prev)])
    return pieces


def fundamental_exact(h: float, t_max: float, max_steps: int = MAX_PIECES) -> PiecewiseExpPoly:
    h = _check_delay(h)
    if not t_max > 0:
        raise OutOfDomain(f"t_max must be positive, got {t_max}")
    n_pieces = int(math.floor(t_max / h)) + 1
    if n_pieces - 1 > max_steps:
        raise OutOfDomain(f"t_max/h = {t_max / h:.3g} exceeds the degree cap {max_steps}")

    # magnitude pass: size of the largest term decides the working precision
    with mpmath.workdps(20):
        rough = _recurrence(mpmath.mpf(h), n_pieces)
        big = max(abs(c) * mpmath.mpf(h) ** j for piece in rough for j, c in enumerate(piece))
        digits = int(mpmath.ceil(mpmath.log10(big))) if big > 1 else 0
    dps = 30 + digits
    with mpmath.workdps(dps):
        pieces = _recurrence(mpmath.mpf(h), n_pieces)
    return PiecewiseExpPoly(h, pieces, float(t_max), dps)


def fundamental_numeric(h: float, t_max: float, tol: float = 1e-10) -> PiecewiseSolution:
    h = _check_delay(h)

    def hist(s):
        return np.zeros((1, len(s)))

    dt, t, X, DL, DR = march(lambda x: -x, h, hist, [1.0], t_max, tol)
    return PiecewiseSolution(h, dt, t, X[0], DL[0], DR[0], history=zero_history(),
                             meta={"tol": tol})


def _gauss_panels(a: float, b: float, width: float, n: int):
    if b <= a:
        return np.empty(0), np.empty(0)
    m = max(1, int(math.ceil((b - a) / width)))
    x, w = np.polynomial.legendre.leggauss(n)
    edges = np.linspace(a, b, m + 1)
    half = 0.5 * np.diff(edges)
    mid = 0.5 * (edges[:-1] + edges[1:])
    nodes = (mid[:, None] + half[:, None] * x[None, :]).ravel()
    weights = (half[:, None] * w[None, :]).ravel()
    return nodes, weights


def contour_value(h: float, t: float, abscissa: float = 0.1, T: float = 1e4, n: int = 16,
                  sigma: Optional[float] = None) -> float:
    """v(t, h) = (1/pi) * int_0^inf Re[exp((c+is)t) / p(c+is)] ds.

    The integral over [0, T] is split at 2*pi/h and 1 and done by composite
    Gauss-Legendre; beyond T the leading 1/(z+1) part is integrated in
    closed form through the exponential integral E1.
    """
    h = _check_delay(h)
    if not t > 0:
        raise OutOfDomain(f"t must be positive, got {t}")
    if sigma is None:
        sigma, _ = dominant_root(QuasiPoly(h, 1.0))
    if abscissa <= sigma + 1e-3:
        raise AbscissaTooLow(f"abscissa {abscissa} must exceed sigma(h) + 1e-3 = {sigma + 1e-3:.6g}")
    if not T > 1:
        raise OutOfDomain("T must exceed 1")

    c = float(abscissa)
    width = min(0.5, 2 * math.pi / (t + 2 * h + 1))
    b1 = min(2 * math.pi / h, 1.0)
    parts = [_gauss_panels(0.0, b1, width, n), _gauss_panels(b1, 1.0, width, n),
             _gauss_panels(1.0, T, width, n)]
    s = np.concatenate([p[0] for p in parts])
    w = np.concatenate([p[1] for p in parts])
    z = c + 1j * s
    f = np.real(np.exp(z * t) / (z + 1.0 + np.exp(-z * h)))
    body = float(np.dot(w, f))
    tail = float(np.real(math.exp(-t) / 1j * exp1(-(c + 1.0 + 1j * T) * t)))
    return (body + tail) / math.pi


@dataclass
class EnvelopeReport:
    alpha: float
    h: float
    c_hat: float
    t_range: tuple
    n_samples: int
    t_at_max: float
    c_hat_over_ln_h: float

    def to_dict(self) -> dict:
        return {"h": self.h, "alpha": self.alpha, "c_hat": self.c_hat,
                "t_range": list(self.t_range), "n_samples": self.n_samples,
                "t_at_max": self.t_at_max, "c_hat_over_ln_h": self.c_hat_over_ln_h}


def decay_envelope(h: float, alpha: float, t_max: Optional[float] = None, tol: float = 1e-8,
                   per_interval: int = 50) -> EnvelopeReport:
    """Sup over t of |v(t,h)| * exp(pi^2 t / (alpha h^3)) / h."""
    h = _check_delay(h)
    if not alpha > 2:
        raise OutOfDomain(f"alpha must exceed 2, got {alpha}")
    t_max = alpha * h ** 3 if t_max is None else float(t_max)
    rate = math.pi ** 2 / (alpha * h ** 3)
    sol = fundamental_numeric(h, t_max, tol)

    n = int(math.ceil(t_max / h)) * per_interval + 1
    ts = np.linspace(0.0, t_max, n)
    w = np.abs(sol(ts)) * np.exp(rate * ts)
    i = int(np.argmax(w))
    best_t, best = float(ts[i]), float(w[i])

    # polish the top few local maxima between neighbouring samples
    inner = np.nonzero((w[1:-1] >= w[:-2]) & (w[1:-1] >= w[2:]))[0] + 1
    for j in inner[np.argsort(w[inner])[::-1][:5]]:
        res = minimize_scalar(lambda x: -abs(float(sol(x))) * math.exp(rate * x),
                              bounds=(ts[j - 1], ts[j + 1]), method="bounded",
                              options={"xatol": 1e-10})
        if -res.fun > best:
            best, best_t = float(-res.fun), float(res.x)

    c_hat = best / h
    ratio = c_hat / math.log(h) if h > 1 else math.nan
    return EnvelopeReport(float(alpha), h, c_hat, (0.0, t_max), n, best_t, ratio)
