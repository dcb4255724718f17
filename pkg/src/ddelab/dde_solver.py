"""Nonlinear integration, ensemble stability probes and named population models.

All delay integration goes through :func:`ddelab.steps.march`, the same
scheme used for the fundamental solution.
"""

from __future__ import annotations

import enum
import math
from dataclasses import dataclass, field
from typing import Optional, Sequence

import numpy as np
from scipy.integrate import solve_ivp
from scipy.optimize import brentq

from . import scalar_maps as sm
from .errors import (
    BadBracket,
    InvalidDelay,
    NonFiniteState,
    NonNormalizable,
    NoPositiveEquilibrium,
    OutOfDomain,
    WindowTooLong,
)
from .fundamental_solution import fundamental_exact, fundamental_numeric
from .quasipoly import MIN_DELAY, QuasiPoly, dominant_root
from .scalar_maps import Nonlinearity
from .stability_regions import ParameterPoint, to_mu_nu
from .steps import (History, PiecewiseSolution, history_step, march, step_for_tolerance,
                    zero_history)


@dataclass
class Trajectory(PiecewiseSolution):
    zeta: float = 1.0
    tag: str = ""

    @property
    def params(self) -> tuple:
        return (self.zeta, self.delay, self.tag)

    def to_rows(self):
        return list(zip(self.t.tolist(), self.x.tolist()))


def integrate(nl: Nonlinearity, zeta: float, h: float, hist: History, t_end: float,
              tol: float = 1e-10, x0: Optional[float] = None) -> Trajectory:
    """Solve x' = -x + zeta*f(x(t-h)) from history ``hist``.

    ``x0`` overrides the value at t = 0 (a jump from the history is allowed).
    """
    if h < 0 or not math.isfinite(h):
        raise InvalidDelay(f"delay must be non-negative, got {h}")
    x_start = float(hist(0.0, max(h, 1.0))) if x0 is None else float(x0)
    if h == 0:
        return reduce_to_ode(nl, zeta, x_start, t_end, tol=tol)

    def g(x):
        return zeta * nl.eval(x)

    dt, t, X, DL, DR = march(g, h, lambda s: hist(s, h)[None, :], [x_start], t_end, tol,
                             dt_target=history_step(hist, h, tol))
    return Trajectory(h, dt, t, X[0], DL[0], DR[0], history=hist,
                      meta={"tol": tol}, zeta=float(zeta), tag=nl.tag)


def reduce_to_ode(nl: Nonlinearity, zeta: float, x0: float, t_end: float,
                  tol: float = 1e-10) -> Trajectory:
    """The h = 0 limit x' = -x + zeta*f(x), sampled on a uniform grid."""
    if not t_end > 0:
        raise OutOfDomain(f"t_end must be positive, got {t_end}")

    def rhs(_, y):
        return -y + zeta * nl.eval(y)

    dt_target = min(step_for_tolerance(tol), 0.05)
    n = int(math.ceil(t_end / dt_target))
    t = np.linspace(0.0, t_end, n + 1)
    sol = solve_ivp(rhs, (0.0, t_end), [float(x0)], method="DOP853", t_eval=t,
                    rtol=1e-12, atol=1e-14)
    if not sol.success or not np.all(np.isfinite(sol.y)):
        raise NonFiniteState(f"ODE integration failed: {sol.message}")
    x = sol.y[0]
    d = -x + zeta * nl.eval(x)
    return Trajectory(0.0, t[1] - t[0], t, x, d[:-1], d[1:], meta={"tol": tol},
                      zeta=float(zeta), tag=nl.tag)


def dde_residual(traj: Trajectory, nl: Nonlinearity, zeta: float, n_check: int = 2000) -> float:
    """Max |x'(t) + x(t) - zeta*f(x(t-h))| at step quarter points, via dense output."""
    n = len(traj.x) - 1
    j = np.unique(np.linspace(0, n - 1, min(n, n_check)).astype(int))
    t = traj.t[j] + 0.25 * traj.dt
    delayed = traj(t - traj.delay)
    res = traj.derivative(t) + traj(t) - zeta * nl.eval(delayed)
    return float(np.max(np.abs(res)))


def converged(traj, window: float, tol: float) -> bool:
    span = traj.t_end - traj.t_start
    if window > span:
        raise WindowTooLong(f"window {window} exceeds trajectory span {span}")
    tail = traj.window(traj.t_end - window, traj.t_end)
    return bool(np.max(np.abs(tail)) < tol)


# ---------------------------------------------------------------------------
# ensemble probing

class Verdict(str, enum.Enum):
    AllConverged = "AllConverged"
    SomeDiverged = "SomeDiverged"
    Inconclusive = "Inconclusive"


def default_ensemble(seed: int = 7) -> list:
    rng = np.random.default_rng(seed)
    ens = [History.constant(v) for v in (0.1, -0.1, 1.0, -1.0, 5.0, -5.0)]
    ens += [History.linear(-1.0, 1.0), History.linear(1.0, -1.0),
            History.linear(0.0, 2.0), History.linear(-3.0, 0.5)]
    ens += [History.sinusoid(1.0, 1), History.sinusoid(1.0, 3),
            History.sinusoid(3.0, 1), History.sinusoid(-3.0, 3)]
    grid = np.linspace(-1.0, 0.0, 8)
    for _ in range(2):
        ens.append(History.sampled(grid, rng.uniform(-2.0, 2.0, len(grid))))
    return ens


T_END_CAP = 3e4


def convergence_window(h: float) -> float:
    return max(20.0, 4.0 * h)


def probe_t_end(zeta: float, h: float, alpha: float = 3.0, cap: float = T_END_CAP,
                sigma: Optional[float] = None) -> float:
    """50 * max(1, alpha h^3/pi^2, 1/(zeta |sigma|)), capped."""
    if sigma is None:
        # the ODE rate is the h -> 0 limit of the real root
        sigma = -1.0 - zeta if h < MIN_DELAY else dominant_root(QuasiPoly(h, zeta))[0]
    slow = 1.0 / (zeta * abs(sigma)) if sigma != 0 else math.inf
    t = 50.0 * max(1.0, alpha * h ** 3 / math.pi ** 2, slow)
    return float(min(t, cap))


@dataclass
class ProbeReport:
    point: ParameterPoint
    ensemble_size: int
    n_converged: int
    max_final_amplitude: float
    verdict: Verdict
    tail_min: float
    tail_max: float
    t_end: float
    window: float
    final_amplitudes: list = field(default_factory=list)

    def to_dict(self) -> dict:
        return {**self.point.to_dict(), "ensemble_size": self.ensemble_size,
                "n_converged": self.n_converged,
                "max_final_amplitude": self.max_final_amplitude,
                "verdict": self.verdict.value, "t_end": self.t_end, "window": self.window,
                "tail_min": self.tail_min, "tail_max": self.tail_max}


def _ensemble_tails(nl, zeta, h, ensemble, t_end, keep_from, tol):
    """Node values (E, n) on [keep_from, t_end] for every member, None on blow-up."""
    if h < MIN_DELAY:
        # a delay this small is invisible at any resolvable step
        out = []
        for H in ensemble:
            try:
                tr = reduce_to_ode(nl, zeta, float(H(0.0, 1.0)), t_end, tol)
                out.append(tr.x[tr.t >= keep_from - 1e-12])
            except NonFiniteState:
                out.append(None)
        return out

    def g(x):
        return zeta * nl.eval(x)

    def hist_nodes(members):
        return lambda s: np.stack([H(s, h) for H in members])

    x0 = [float(H(0.0, h)) for H in ensemble]
    try:
        with np.errstate(over="ignore", invalid="ignore"):
            _, t, X, _, _ = march(g, h, hist_nodes(ensemble), x0, t_end, tol, keep_from=keep_from)
        sel = t >= keep_from - 1e-12
        return [row[sel] for row in X]
    except NonFiniteState:
        out = []
        for H, v in zip(ensemble, x0):
            try:
                with np.errstate(over="ignore", invalid="ignore"):
                    _, t, X, _, _ = march(g, h, hist_nodes([H]), [v], t_end, tol, keep_from=keep_from)
                out.append(X[0][t >= keep_from - 1e-12])
            except NonFiniteState:
                out.append(None)
        return out


def probe_global_stability(nl: Nonlinearity, zeta: float, h: float,
                           ensemble: Optional[Sequence[History]] = None,
                           t_end: Optional[float] = None, tol: float = 1e-6,
                           integration_tol: float = 1e-8,
                           window: Optional[float] = None, alpha: float = 3.0,
                           cap: float = T_END_CAP) -> ProbeReport:
    """Integrate every history and classify the ensemble.

    A member has converged when max|x| over the final window is below
    ``tol``.  A non-converged member whose final-window amplitude has not
    dropped against the preceding window counts as diverged; if every
    non-converged member is still shrinking the verdict is Inconclusive.
    Without an explicit ``t_end`` the horizon follows ``probe_t_end(alpha,
    cap)`` and an Inconclusive run is repeated with it doubled, up to ``cap``.
    """
    ensemble = list(default_ensemble() if ensemble is None else ensemble)
    if not ensemble:
        raise OutOfDomain("ensemble must be nonempty")
    point = to_mu_nu(zeta, h)
    W = convergence_window(h) if window is None else float(window)
    if t_end is not None:
        return _probe_once(nl, zeta, h, ensemble, max(float(t_end), 2 * W), tol,
                           integration_tol, W, point)
    # the policy horizon is a minimum: extend while every straggler still decays
    t_end = max(probe_t_end(zeta, h, alpha, cap), 2 * W)
    while True:
        rep = _probe_once(nl, zeta, h, ensemble, t_end, tol, integration_tol, W, point)
        if rep.verdict is not Verdict.Inconclusive or t_end >= cap:
            return rep
        t_end = min(2 * t_end, cap)


def _probe_once(nl, zeta, h, ensemble, t_end, tol, integration_tol, W, point) -> ProbeReport:
    keep_from = t_end - 2 * W
    tails = _ensemble_tails(nl, zeta, h, ensemble, t_end, keep_from, integration_tol)

    n_conv, diverged, finals = 0, False, []
    lo, hi = math.inf, -math.inf
    split = t_end - W
    for x in tails:
        if x is None:
            diverged = True
            finals.append(math.inf)
            continue
        n = len(x)
        cut = int(round(n * (split - keep_from) / (t_end - keep_from)))
        prev, last = x[:cut + 1], x[cut:]
        a_fin, a_prev = float(np.max(np.abs(last))), float(np.max(np.abs(prev)))
        finals.append(a_fin)
        lo, hi = min(lo, float(last.min())), max(hi, float(last.max()))
        if a_fin < tol:
            n_conv += 1
        elif a_fin >= a_prev * (1 - 1e-3):
            diverged = True

    if n_conv == len(ensemble):
        verdict = Verdict.AllConverged
    elif diverged:
        verdict = Verdict.SomeDiverged
    else:
        verdict = Verdict.Inconclusive
    return ProbeReport(point, len(ensemble), n_conv, float(max(finals)), verdict,
                       lo, hi, t_end, W, finals)


@dataclass
class HcEstimate:
    estimate: float
    bracket: tuple
    probes: list
    monotone: bool

    def to_dict(self) -> dict:
        return {"estimate": self.estimate, "bracket": list(self.bracket),
                "monotone": self.monotone,
                "probes": [{"h": p.point.delay, "verdict": p.verdict.value} for p in self.probes]}


def estimate_hc(nl: Nonlinearity, zeta: float, h_lo: float, h_hi: float,
                ensemble: Optional[Sequence[History]] = None, t_end: Optional[float] = None,
                n_bisect: int = 8, n_scan: int = 0, **probe_kw) -> HcEstimate:
    """Bisect on h for the AllConverged/not boundary.

    Verdict monotonicity in h is assumed, not known.  With ``n_scan > 0`` an
    equispaced pre-scan of the bracket is probed and ``monotone`` reports
    whether its verdicts switch exactly once.
    """
    if not zeta > 1:
        raise BadBracket(f"threshold search needs zeta > 1, got {zeta}")
    if not h_lo < h_hi:
        raise BadBracket(f"need h_lo < h_hi, got [{h_lo}, {h_hi}]")

    def probe(h):
        return probe_global_stability(nl, zeta, h, ensemble, t_end, **probe_kw)

    probes = []
    lo_rep, hi_rep = probe(h_lo), probe(h_hi)
    probes += [lo_rep, hi_rep]
    if lo_rep.verdict is not Verdict.AllConverged:
        raise BadBracket(f"probe at h_lo={h_lo} is {lo_rep.verdict.value}, not AllConverged")
    if hi_rep.verdict is Verdict.AllConverged:
        raise BadBracket(f"probe at h_hi={h_hi} is AllConverged")

    monotone = True
    if n_scan > 0:
        scan = [probe(h) for h in np.linspace(h_lo, h_hi, n_scan + 2)[1:-1]]
        probes += scan
        flags = [True] + [r.verdict is Verdict.AllConverged for r in scan] + [False]
        monotone = sum(a != b for a, b in zip(flags, flags[1:])) == 1

    lo, hi = float(h_lo), float(h_hi)
    for _ in range(n_bisect):
        mid = 0.5 * (lo + hi)
        rep = probe(mid)
        probes.append(rep)
        if rep.verdict is Verdict.AllConverged:
            lo = mid
        else:
            hi = mid
    # a converged probe above a failing one contradicts monotonicity
    ok = [p.point.delay for p in probes if p.verdict is Verdict.AllConverged]
    bad = [p.point.delay for p in probes if p.verdict is not Verdict.AllConverged]
    if ok and bad and max(ok) > min(bad):
        monotone = False
    return HcEstimate(0.5 * (lo + hi), (lo, hi), probes, monotone)


# ---------------------------------------------------------------------------
# named population models

class ModelFamily(str, enum.Enum):
    MackeyGlass = "MackeyGlass"
    LasotaWazewska = "LasotaWazewska"
    MackeyGlassHill = "MackeyGlassHill"
    Nicholson = "Nicholson"


@dataclass(frozen=True)
class NamedModel:
    """x' = -x + G(x(t-h)) with one of four production terms G."""

    family: ModelFamily
    zeta: float
    a: float = 1.0
    n: float = 2.0

    def __post_init__(self):
        object.__setattr__(self, "family", ModelFamily(self.family))
        if not (self.zeta > 0 and self.a > 0):
            raise OutOfDomain("zeta and a must be positive")
        if self.family in (ModelFamily.MackeyGlass, ModelFamily.MackeyGlassHill) and not self.n > 1:
            raise OutOfDomain(f"Hill exponent must exceed 1, got {self.n}")

    def production(self):
        """(G, G', G'', G''') as vectorised callables."""
        z, a, n = self.zeta, self.a, self.n
        an = a ** n
        fam = self.family
        if fam is ModelFamily.LasotaWazewska:
            return (lambda x: z * np.exp(-a * x), lambda x: -a * z * np.exp(-a * x),
                    lambda x: a * a * z * np.exp(-a * x), lambda x: -a ** 3 * z * np.exp(-a * x))
        if fam is ModelFamily.Nicholson:
            return (lambda x: z * x * np.exp(-a * x),
                    lambda x: z * np.exp(-a * x) * (1 - a * x),
                    lambda x: z * np.exp(-a * x) * (a * a * x - 2 * a),
                    lambda x: z * np.exp(-a * x) * (3 * a * a - a ** 3 * x))

        # derivatives of r = 1/(a^n + |x|^n)
        def D(x):
            return an + np.abs(x) ** n

        def D1(x):
            return n * np.abs(x) ** (n - 1) * np.sign(x)

        def D2(x):
            return n * (n - 1) * np.abs(x) ** (n - 2)

        def D3(x):
            return n * (n - 1) * (n - 2) * np.abs(x) ** (n - 3) * np.sign(x)

        def r0(x):
            return 1.0 / D(x)

        def r1(x):
            return -D1(x) / D(x) ** 2

        def r2(x):
            d = D(x)
            return -D2(x) / d ** 2 + 2 * D1(x) ** 2 / d ** 3

        def r3(x):
            d, d1 = D(x), D1(x)
            return -D3(x) / d ** 2 + 6 * d1 * D2(x) / d ** 3 - 6 * d1 ** 3 / d ** 4

        k = z * an
        if fam is ModelFamily.MackeyGlass:
            return (lambda x: k * r0(x), lambda x: k * r1(x), lambda x: k * r2(x), lambda x: k * r3(x))
        return (lambda x: k * x * r0(x), lambda x: k * (r0(x) + x * r1(x)),
                lambda x: k * (2 * r1(x) + x * r2(x)), lambda x: k * (3 * r2(x) + x * r3(x)))

    @property
    def equilibrium(self) -> float:
        G = self.production()[0]
        if self.family in (ModelFamily.MackeyGlassHill, ModelFamily.Nicholson) and self.zeta <= 1:
            # G'(0) = zeta: no positive crossing of the diagonal
            raise NoPositiveEquilibrium(f"{self.family.value} with zeta={self.zeta} <= 1 has only x = 0")

        def phi(x):
            return float(G(x)) - x

        lo = 1e-12
        hi = 1.0
        while phi(hi) > 0:
            hi *= 2
            if hi > 1e12:
                raise NoPositiveEquilibrium("no sign change of G(x) - x found")
        return float(brentq(phi, lo, hi, xtol=1e-15, rtol=4 * np.finfo(float).eps))

    def critical_point(self) -> Optional[float]:
        if self.family is ModelFamily.MackeyGlassHill:
            return self.a * (self.n - 1) ** (-1.0 / self.n)
        if self.family is ModelFamily.Nicholson:
            return 1.0 / self.a
        return None


def normalize_model(m: NamedModel):
    """Translate to the equilibrium and rescale: returns (f, zeta_eff)."""
    xbar = m.equilibrium
    G = m.production()
    slope = float(G[1](xbar))
    if slope >= 0:
        raise NonNormalizable(f"G'(xbar) = {slope:.6g} >= 0 for {m.family.value}")
    scale = -slope
    params = {"zeta": m.zeta, "a": m.a}
    if m.family in (ModelFamily.MackeyGlass, ModelFamily.MackeyGlassHill):
        params["n"] = m.n
    if m.family is ModelFamily.LasotaWazewska:
        return sm.lasota_wazewska_shifted(m.a), scale
    crit = m.critical_point()
    nl = sm.shifted(G, xbar, family=f"{m.family.value}Shifted", params=params,
                    lower_bound=-xbar / scale,
                    critical_point=None if crit is None else crit - xbar)
    return nl, scale


def integrate_model(m: NamedModel, h: float, hist: History, t_end: float,
                    tol: float = 1e-10) -> Trajectory:
    """Direct integration of the unshifted model."""
    G = m.production()[0]
    dt, t, X, DL, DR = march(G, h, lambda s: hist(s, h)[None, :], [float(hist(0.0, h))], t_end, tol,
                             dt_target=history_step(hist, h, tol))
    return Trajectory(h, dt, t, X[0], DL[0], DR[0], history=hist, meta={"tol": tol},
                      zeta=m.zeta, tag=m.family.value)


# ---------------------------------------------------------------------------
# variation of constants

def _breakpoints(h: float, t: float) -> np.ndarray:
    pts = {h, t}
    k = 1
    while k * h < t:
        pts.add(k * h)
        pts.add(t - (k - 1) * h)
        k += 1
    return np.array(sorted(p for p in pts if h <= p <= t))


def voc_residual(nl: Nonlinearity, zeta: float, h: float, x0: float, t_end: float,
                 tol: float = 1e-10, n_check: int = 40, nodes: int = 8,
                 max_width: float = 0.25) -> float:
    """Sup over checkpoints of |z(t) - x0 v(t) - int_h^t v(t-s) a(s) ds|.

    z solves the nonlinear equation with zero history and z(0) = x0, and
    a(s) = zeta f(z(s-h)) + z(s-h) vanishes for s < h.
    """
    if not h > 0:
        raise InvalidDelay(f"delay must be positive, got {h}")
    z = integrate(nl, zeta, h, zero_history(), t_end, tol=tol, x0=x0)
    try:
        v = fundamental_exact(h, t_end)
    except OutOfDomain:
        v = fundamental_numeric(h, t_end, tol)
    gx, gw = np.polynomial.legendre.leggauss(nodes)

    def a_of(s):
        zd = z(s - h)
        return zeta * nl.eval(zd) + zd

    worst = 0.0
    for t in np.linspace(0.0, t_end, n_check + 1)[1:]:
        conv = 0.0
        if t > h:
            bp = _breakpoints(h, t)
            edges = [bp[0]]
            for a, b in zip(bp[:-1], bp[1:]):
                m = max(1, int(math.ceil((b - a) / max_width)))
                edges += list(np.linspace(a, b, m + 1)[1:])
            e = np.array(edges)
            half = 0.5 * np.diff(e)
            mid = 0.5 * (e[:-1] + e[1:])
            s = (mid[:, None] + half[:, None] * gx[None, :]).ravel()
            w = (half[:, None] * gw[None, :]).ravel()
            conv = float(np.dot(w, v(np.clip(t - s, 0.0, None)) * a_of(s)))
        res = abs(float(z(t)) - x0 * float(v(t)) - conv)
        worst = max(worst, res)
    return worst
