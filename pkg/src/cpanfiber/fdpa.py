"""Frequency-dependent power allocation over subcarriers.

Each subcarrier s has a measured utility curve (its achievable rate against
its own launch power). The allocation maximizes the summed utility subject to
a fixed total power by exhaustive search over a simplex grid in dB.
"""
from __future__ import annotations

import itertools
import logging
from dataclasses import dataclass

import numpy as np
from scipy.interpolate import PchipInterpolator

from .core import dbm_to_watt, watt_to_dbm
from .errors import ConfigError, InsufficientCurveSupport

logger = logging.getLogger(__name__)

__all__ = ["UtilityCurve", "FdpaResult", "fdpa_allocate", "symmetric_groups"]


@dataclass(frozen=True)
class UtilityCurve:
    """Rate (any unit) sampled against per-subcarrier power in dBm."""

    power_dbm: np.ndarray
    rate: np.ndarray

    def __post_init__(self):
        p = np.asarray(self.power_dbm, dtype=float)
        r = np.asarray(self.rate, dtype=float)
        if p.ndim != 1 or p.shape != r.shape or p.size < 2:
            raise ConfigError("utility curve needs matching 1-D power and rate arrays")
        order = np.argsort(p)
        if np.any(np.diff(p[order]) <= 0):
            raise ConfigError("utility curve powers must be distinct")
        object.__setattr__(self, "power_dbm", p[order])
        object.__setattr__(self, "rate", r[order])

    @property
    def domain(self) -> tuple[float, float]:
        return float(self.power_dbm[0]), float(self.power_dbm[-1])

    def interpolator(self) -> PchipInterpolator:
        return PchipInterpolator(self.power_dbm, self.rate, extrapolate=False)


@dataclass
class FdpaResult:
    power_dbm: np.ndarray
    rate: float
    uniform_rate: float
    total_power_w: float

    @property
    def power_w(self) -> np.ndarray:
        return dbm_to_watt(self.power_dbm)

    @property
    def weights(self) -> np.ndarray:
        """Powers normalized to unit mean, the form used by the WDM plan."""
        p = self.power_w
        return p / p.mean()


def symmetric_groups(S: int) -> list[tuple[int, ...]]:
    """Pairs (s, S-1-s) of subcarriers tied by the s <-> S+1-s symmetry."""
    groups = [(s, S - 1 - s) for s in range(S // 2)]
    if S % 2:
        groups.append((S // 2,))
    return groups


def fdpa_allocate(curves, total_power_w: float, step_db: float = 0.25,
                  symmetric: bool = True, span_db: float = 6.0) -> FdpaResult:
    """Maximize sum_s U_s(P_s) subject to sum_s P_s = total_power_w.

    Parameters
    ----------
    curves : sequence of UtilityCurve
        One per subcarrier, in subcarrier order.
    total_power_w : float
    step_db : float
        Grid resolution of the free powers.
    symmetric : bool
        Tie subcarriers s and S+1-s to the same power (the outer pairs see
        mirror-image interference).
    span_db : float
        Free powers range over +-span_db around the uniform allocation,
        clipped to the curve domains.

    Raises
    ------
    InsufficientCurveSupport
        If the uniform allocation lies outside a curve's sampled domain or no
        grid point satisfies the constraint inside the domains.
    """
    curves = [c if isinstance(c, UtilityCurve) else UtilityCurve(*c) for c in curves]
    S = len(curves)
    if S == 0:
        raise ConfigError("no utility curves")
    if total_power_w <= 0 or step_db <= 0:
        raise ConfigError("total power and step must be positive")
    groups = symmetric_groups(S) if symmetric else [(s,) for s in range(S)]
    interps = [c.interpolator() for c in curves]
    uniform_dbm = float(watt_to_dbm(total_power_w / S))
    for c in curves:
        lo, hi = c.domain
        if not lo - 1e-9 <= uniform_dbm <= hi + 1e-9:
            raise InsufficientCurveSupport(
                f"uniform power {uniform_dbm:.2f} dBm outside curve domain [{lo:.2f}, {hi:.2f}]")
    uniform_rate = float(sum(f(uniform_dbm) for f in interps))

    dom = []
    for g in groups:
        lo = max(curves[s].domain[0] for s in g)
        hi = min(curves[s].domain[1] for s in g)
        dom.append((max(lo, uniform_dbm - span_db), min(hi, uniform_dbm + span_db)))

    def group_rate(gi, p_dbm):
        out = np.zeros_like(p_dbm)
        for s in groups[gi]:
            out += interps[s](p_dbm)
        return out

    # free groups on a grid anchored at the uniform allocation; the last one
    # absorbs the remaining power
    axes = []
    for lo, hi in dom[:-1]:
        k = np.arange(np.ceil((lo - uniform_dbm) / step_db - 1e-9),
                      np.floor((hi - uniform_dbm) / step_db + 1e-9) + 1)
        axes.append(uniform_dbm + step_db * k)
    mult = np.array([len(g) for g in groups], dtype=float)
    if axes:
        mesh = np.meshgrid(*axes, indexing="ij")
        free = np.stack([m.ravel() for m in mesh], axis=-1)
    else:
        free = np.zeros((1, 0))
    used = (dbm_to_watt(free) * mult[:-1]).sum(axis=-1)
    rest = (total_power_w - used) / mult[-1]
    ok = rest > 0
    last = np.full(rest.shape, -np.inf)
    last[ok] = watt_to_dbm(rest[ok])
    lo, hi = dom[-1]
    ok &= (last >= lo - 1e-9) & (last <= hi + 1e-9)
    if not ok.any():
        raise InsufficientCurveSupport("no feasible allocation inside the curve domains")
    free, last = free[ok], np.clip(last[ok], lo, hi)
    total = group_rate(len(groups) - 1, last)
    for gi in range(len(groups) - 1):
        total = total + group_rate(gi, free[:, gi])
    best = int(np.nanargmax(total))
    per_group = list(free[best]) + [float(last[best])]
    power = np.empty(S)
    for gi, g in enumerate(groups):
        for s in g:
            power[s] = per_group[gi]
    logger.debug("fdpa: %d candidates, gain %.4f", total.size, total[best] - uniform_rate)
    return FdpaResult(power, float(total[best]), uniform_rate, float(total_power_w))
