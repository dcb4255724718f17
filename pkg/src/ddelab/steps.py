"""Method-of-steps integration of x'(t) = -x(t) + g(x(t - h)).

Steps are aligned with the delay (dt = h/m), so every delayed argument hits
a node or a step midpoint of the previous delay interval.  Midpoint values
come from the cubic Hermite interpolant built on stored node derivatives.
Within one delay interval the forcing g(x(t - h)) is already known, which
makes each classical RK4 step an affine map y -> A*y + u; the whole interval
is then advanced with a single first-order recursive filter.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from typing import Callable, Optional

import numpy as np
from scipy.interpolate import CubicSpline
from scipy.signal import lfilter

from .errors import InvalidDelay, NonFiniteState, OutOfDomain, StepUnderflow

MIN_STEP = 1e-12


@dataclass(frozen=True)
class History:
    """Initial data on [-h, 0] in the normalised coordinate theta = s/h in [-1, 0]."""

    kind: str
    params: tuple = ()

    @classmethod
    def constant(cls, value: float) -> "History":
        return cls("Constant", (float(value),))

    @classmethod
    def linear(cls, v0: float, v1: float) -> "History":
        """Ramp from v0 at s = -h to v1 at s = 0."""
        return cls("Linear", (float(v0), float(v1)))

    @classmethod
    def sinusoid(cls, amplitude: float, cycles: float) -> "History":
        """amplitude*cos(2*pi*cycles*s/h); equals ``amplitude`` at s = 0."""
        return cls("Sinusoid", (float(amplitude), float(cycles)))

    @classmethod
    def sampled(cls, grid, values) -> "History":
        """Cubic-spline data (not-a-knot); ``grid`` is ascending in [-1, 0]."""
        grid = tuple(float(g) for g in grid)
        values = tuple(float(v) for v in values)
        if len(grid) != len(values) or len(grid) < 2:
            raise OutOfDomain("sampled history needs matching grid/values of length >= 2")
        if grid[0] > -1.0 or grid[-1] < 0.0 or any(b <= a for a, b in zip(grid, grid[1:])):
            raise OutOfDomain("sampled grid must be ascending and cover [-1, 0]")
        return cls("Sampled", (grid, values))

    def __call__(self, s, delay: float):
        s = np.asarray(s, dtype=float)
        theta = s / delay if delay > 0 else np.zeros_like(s)
        if self.kind == "Constant":
            out = np.full_like(s, self.params[0])
        elif self.kind == "Linear":
            v0, v1 = self.params
            out = v1 + (v1 - v0) * theta
        elif self.kind == "Sinusoid":
            amp, cyc = self.params
            out = amp * np.cos(2.0 * math.pi * cyc * theta)
        elif self.kind == "Sampled":
            out = self._spline()(np.clip(theta, -1.0, 0.0))
        else:
            raise OutOfDomain(f"unknown history kind {self.kind!r}")
        if not np.all(np.isfinite(out)):
            raise NonFiniteState("history produced non-finite values")
        return out

    def _spline(self):
        grid, values = self.params
        if len(grid) == 2:
            return CubicSpline(grid, values, bc_type="natural")
        return CubicSpline(grid, values)

    def frequency(self, delay: float) -> float:
        """Time-scale of variation, in 1/time units, used to shrink the step."""
        if self.kind == "Sinusoid":
            w = 2.0 * math.pi * abs(self.params[1])
        elif self.kind == "Linear":
            w = abs(self.params[1] - self.params[0])
        elif self.kind == "Sampled":
            sp = self._spline()
            th = np.linspace(-1.0, 0.0, 801)
            w = max(float(np.max(np.abs(sp(th, k)))) ** (1.0 / k) for k in (1, 2, 3))
        else:
            w = 0.0
        return w / delay

    def to_dict(self) -> dict:
        if self.kind == "Sampled":
            return {"kind": self.kind, "grid": list(self.params[0]), "values": list(self.params[1])}
        return {"kind": self.kind, "params": list(self.params)}


def zero_history() -> History:
    return History.constant(0.0)


def step_for_tolerance(tol: float) -> float:
    # RK4 global error ~ dt^4
    return min(0.1, 0.5 * tol ** 0.25)


def history_step(hist: History, delay: float, tol: float) -> float:
    # the dense-output derivative error scales like (dt * frequency)^3
    return step_for_tolerance(tol) / max(1.0, hist.frequency(delay))


def _rk4_affine(dt: float):
    """Coefficients (A, B0, Bm, B1) of one RK4 step for y' = -y + g(t).

    g0, gm, g1 are the forcing at the left node, midpoint and right node.
    Obtained by pushing unit inputs through the RK4 stages.
    """

    def step(y, g0, gm, g1):
        k1 = -y + g0
        k2 = -(y + 0.5 * dt * k1) + gm
        k3 = -(y + 0.5 * dt * k2) + gm
        k4 = -(y + dt * k3) + g1
        return y + dt / 6.0 * (k1 + 2.0 * k2 + 2.0 * k3 + k4)

    return (step(1.0, 0, 0, 0), step(0.0, 1, 0, 0), step(0.0, 0, 1, 0), step(0.0, 0, 0, 1))


@dataclass
class PiecewiseSolution:
    """Dense output: cubic Hermite on each step, history before t = 0.

    ``dl[j]`` and ``dr[j]`` are the one-sided derivatives at the left and
    right end of step j; they differ at the breakpoints k*h when the
    initial data is not smooth.
    """

    delay: float
    dt: float
    t: np.ndarray
    x: np.ndarray
    dl: np.ndarray
    dr: np.ndarray
    history: Optional[History] = None
    t_offset: float = 0.0
    meta: dict = field(default_factory=dict)

    @property
    def t_end(self) -> float:
        return float(self.t[-1])

    @property
    def t_start(self) -> float:
        return float(self.t[0])

    def _locate(self, t):
        t = np.asarray(t, dtype=float)
        n = len(self.x) - 1
        j = np.clip(np.floor((t - self.t[0]) / self.dt).astype(np.int64), 0, n - 1)
        theta = (t - self.t[j]) / self.dt
        return t, j, theta

    def __call__(self, t):
        t, j, th = self._locate(t)
        y0, y1 = self.x[j], self.x[j + 1]
        m0, m1 = self.dl[j] * self.dt, self.dr[j] * self.dt
        th2 = th * th
        th3 = th2 * th
        out = ((2 * th3 - 3 * th2 + 1) * y0 + (th3 - 2 * th2 + th) * m0
               + (-2 * th3 + 3 * th2) * y1 + (th3 - th2) * m1)
        if self.history is not None:
            before = t < self.t_offset
            if np.any(before):
                out = np.where(before, self.history(np.minimum(t - self.t_offset, 0.0), self.delay), out)
        return out

    def derivative(self, t):
        t, j, th = self._locate(t)
        y0, y1 = self.x[j], self.x[j + 1]
        return ((6 * th * th - 6 * th) * (y0 - y1) / self.dt
                + (3 * th * th - 4 * th + 1) * self.dl[j] + (3 * th * th - 2 * th) * self.dr[j])

    def window(self, t0: float, t1: float) -> np.ndarray:
        """Node values with t0 <= t <= t1."""
        sel = (self.t >= t0 - 1e-12) & (self.t <= t1 + 1e-12)
        return self.x[sel]


def march(g: Callable, delay: float, hist_nodes: Callable, x0, t_end: float, tol: float,
          keep_from: float = 0.0, dt_target: Optional[float] = None):
    """Integrate an ensemble of E trajectories of x' = -x + g(x(t - h)).

    ``hist_nodes(s)`` returns history values of shape (E, len(s)) for s in
    [-h, 0]; ``x0`` (shape (E,)) is the value at t = 0, which need not match
    the history.  Returns ``(dt, t, X, DL, DR)`` restricted to the nodes with
    t >= keep_from (rounded down to a node), where X has shape (E, n+1).
    """
    if not delay > 0:
        raise InvalidDelay(f"delay must be positive, got {delay}")
    if not t_end > 0:
        raise OutOfDomain(f"t_end must be positive, got {t_end}")
    dt_target = step_for_tolerance(tol) if dt_target is None else dt_target
    m = max(1, int(math.ceil(delay / dt_target - 1e-9)))
    dt = delay / m
    if dt < MIN_STEP:
        raise StepUnderflow(f"step {dt:.3g} below {MIN_STEP}")
    n_steps = int(math.ceil(t_end / dt - 1e-9))
    n_blocks = int(math.ceil(n_steps / m))

    A, B0, Bm, B1 = _rk4_affine(dt)
    y_start = np.atleast_1d(np.asarray(x0, dtype=float))
    E = y_start.shape[0]

    s_nodes = -delay + dt * np.arange(m + 1)
    s_mid = -delay + dt * (np.arange(m) + 0.5)
    s_nodes[-1] = 0.0
    d_nodes = np.asarray(hist_nodes(s_nodes), dtype=float).reshape(E, m + 1)
    d_mid = np.asarray(hist_nodes(s_mid), dtype=float).reshape(E, m)

    first_kept = max(0, int(math.floor(keep_from / dt + 1e-9)) // m)
    Xs, DLs, DRs = [], [], []
    for b in range(n_blocks):
        gn = g(d_nodes)
        gm = g(d_mid)
        u = B0 * gn[:, :-1] + Bm * gm + B1 * gn[:, 1:]
        y, _ = lfilter([1.0], [1.0, -A], u, axis=1, zi=(A * y_start)[:, None])
        Y = np.concatenate([y_start[:, None], y], axis=1)
        if not np.all(np.isfinite(Y)):
            raise NonFiniteState(f"non-finite state in delay interval {b}")
        DL = -Y[:, :-1] + gn[:, :-1]
        DR = -Y[:, 1:] + gn[:, 1:]
        if b >= first_kept:
            Xs.append(Y if not Xs else Y[:, 1:])
            DLs.append(DL)
            DRs.append(DR)
        # the interval just computed is the delayed input of the next one
        d_nodes = Y
        d_mid = 0.5 * (Y[:, :-1] + Y[:, 1:]) + (dt / 8.0) * (DL - DR)
        y_start = Y[:, -1]

    X = np.concatenate(Xs, axis=1)
    DL = np.concatenate(DLs, axis=1)
    DR = np.concatenate(DRs, axis=1)
    j0 = first_kept * m
    last = n_steps - j0
    X, DL, DR = X[:, :last + 1], DL[:, :last], DR[:, :last]
    t = (np.arange(j0, j0 + last + 1) / m) * delay
    return dt, t, X, DL, DR
