"""The (mu, nu) parameter plane, mu = 1/zeta and nu = exp(-h)/zeta.

Three boundary curves live here:

* ``nu1`` bounds local exponential stability of the linearisation,
* ``nu2`` bounds the classical global-attractivity region,
* ``nu3`` = ln(1 + nu2) bounds robustness against time-varying delays.

``classify`` turns a parameter point into a :class:`RegionLabel`.
"""

from __future__ import annotations

import enum
import math
from dataclasses import dataclass

import numpy as np

from .errors import InvalidCoordinates, OutOfDomain


class RegionLabel(str, enum.Enum):
    AbsolutelyStable = "AbsolutelyStable"
    ProvedGlobal_Nu2 = "ProvedGlobal_Nu2"
    ProvedGlobal_Nu3 = "ProvedGlobal_Nu3"
    ProvedGlobal_Thm1 = "ProvedGlobal_Thm1"
    LocallyStableUnresolved = "LocallyStableUnresolved"
    LocallyUnstable = "LocallyUnstable"

    @property
    def proved_global(self) -> bool:
        return self in (RegionLabel.AbsolutelyStable, RegionLabel.ProvedGlobal_Nu2,
                        RegionLabel.ProvedGlobal_Nu3, RegionLabel.ProvedGlobal_Thm1)


@dataclass(frozen=True)
class ParameterPoint:
    zeta: float
    delay: float
    mu: float
    nu: float

    def to_dict(self) -> dict:
        return {"zeta": self.zeta, "h": self.delay, "mu": self.mu, "nu": self.nu}


@dataclass(frozen=True)
class NearUnitRegion:
    """Explicit stand-in for the existential constants of the near-(1,0) result."""

    K: float = 1.0
    epsilon: float = 0.05

    def __contains__(self, p: ParameterPoint) -> bool:
        d = p.zeta - 1.0
        if not 0.0 <= d <= self.epsilon:
            return False
        if d == 0.0:
            return p.delay >= 0.0
        return 0.0 <= p.delay < self.K * d ** -0.125


def to_mu_nu(zeta: float, delay: float) -> ParameterPoint:
    if not zeta > 0:
        raise InvalidCoordinates(f"zeta must be positive, got {zeta}")
    if not delay >= 0:
        raise InvalidCoordinates(f"delay must be non-negative, got {delay}")
    mu = 1.0 / zeta
    return ParameterPoint(float(zeta), float(delay), mu, math.exp(-delay) * mu)


def from_mu_nu(mu: float, nu: float) -> ParameterPoint:
    if not nu > 0:
        raise InvalidCoordinates(f"nu must be positive, got {nu}")
    if nu > mu:
        raise InvalidCoordinates(f"nu={nu} exceeds mu={mu}; the delay would be negative")
    return ParameterPoint(1.0 / mu, math.log(mu / nu), float(mu), float(nu))


def _exponent1(mu: float) -> float:
    # mu*arccos(-mu)/sqrt(1-mu^2), which is also the boundary delay h*(1/mu)
    return mu * math.acos(-mu) / math.sqrt(1.0 - mu * mu)


def nu1(mu: float) -> float:
    if not 0.0 <= mu < 1.0:
        raise OutOfDomain(f"nu1 needs 0 <= mu < 1, got {mu}")
    if mu == 0.0:
        return 0.0
    return mu * math.exp(-_exponent1(mu))


def nu2(mu: float) -> float:
    if not 0.0 <= mu <= 1.0:
        raise OutOfDomain(f"nu2 needs 0 <= mu <= 1, got {mu}")
    return (mu - mu * mu) / (1.0 + mu * mu)


def nu3(mu: float) -> float:
    return math.log1p(nu2(mu))


def local_boundary_delay(zeta: float) -> float:
    """Delay at which the dominant characteristic pair crosses the imaginary axis."""
    if not zeta > 1.0:
        raise OutOfDomain(f"no finite local boundary for zeta={zeta} <= 1")
    return math.acos(-1.0 / zeta) / math.sqrt(zeta * zeta - 1.0)


def global_bound_delay(zeta: float) -> float:
    """Delay on the nu = nu2 curve: ln(zeta + 1/zeta) - ln(zeta - 1)."""
    if not zeta > 1.0:
        raise OutOfDomain(f"no finite bound for zeta={zeta} <= 1")
    return math.log(zeta + 1.0 / zeta) - math.log(zeta - 1.0)


def classify(p: ParameterPoint, region: NearUnitRegion = NearUnitRegion()) -> RegionLabel:
    mu, nu = p.mu, p.nu
    if mu >= 1.0:
        return RegionLabel.AbsolutelyStable
    if nu >= nu2(mu):
        return RegionLabel.ProvedGlobal_Nu2
    if nu > nu3(mu):
        return RegionLabel.ProvedGlobal_Nu3
    if p in region:
        return RegionLabel.ProvedGlobal_Thm1
    if nu > nu1(mu):
        return RegionLabel.LocallyStableUnresolved
    return RegionLabel.LocallyUnstable


def classification_record(p: ParameterPoint, region: NearUnitRegion = NearUnitRegion()) -> dict:
    return {**p.to_dict(), "label": classify(p, region).value}


def chart(mu_grid):
    """Rows (mu, nu1, nu2, nu3) over a grid in [0, 1)."""
    return [(float(m), nu1(m), nu2(m), nu3(m)) for m in mu_grid]


def curve_ordering(mu_grid) -> dict:
    """Report the observed ordering of the three curves on a grid."""
    rows = np.array(chart(mu_grid))
    inner = (rows[:, 0] > 0) & (rows[:, 0] < 1)
    r = rows[inner]
    return {
        "nu1_lt_nu2": bool(np.all(r[:, 1] < r[:, 2])),
        "nu3_le_nu2": bool(np.all(r[:, 3] <= r[:, 2])),
        "nu3_ge_nu2": bool(np.all(r[:, 3] >= r[:, 2])),
        "max_gap_nu2_minus_nu3": float(np.max(r[:, 2] - r[:, 3])) if len(r) else 0.0,
    }
