"""Closed-form wait-versus-abort model for Bamboo against Wound-Wait.

K lock requests per transaction, N concurrent transactions, D data items,
t mean time between lock requests.  The probability approximations leave
[0, 1] outside their validity range; results are clamped and flagged.
"""

from __future__ import annotations

import warnings
from dataclasses import dataclass


@dataclass(frozen=True)
class ModelParams:
    K: float
    N: float
    D: float
    t: float = 1.0

    def __post_init__(self):
        if self.K <= 0 or self.D <= 0 or self.t <= 0 or self.N < 0:
            raise ValueError(f"model parameters must be positive: {self}")
        if self.N * self.K > self.D:
            warnings.warn(f"N*K={self.N * self.K} exceeds D={self.D}; approximations break down",
                          stacklevel=3)


@dataclass(frozen=True)
class Clamped:
    value: float
    raw: float
    clamped: bool

    def __float__(self):
        return self.value


def _clamp(x: float, lo: float = 0.0, hi: float = 1.0) -> Clamped:
    v = min(max(x, lo), hi)
    return Clamped(v, x, v != x)


def p_conflict(p: ModelParams) -> Clamped:
    return _clamp(p.N * p.K ** 2 / (2 * p.D))


def p_deadlock(p: ModelParams) -> Clamped:
    return _clamp(p.N * p.K ** 4 / (4 * p.D ** 2))


def p_cascade_bound(p: ModelParams) -> Clamped:
    """Upper bound N * P_conflict * P_deadlock on the cascading-abort probability."""
    return _clamp(p.N * p_conflict(p).value * p_deadlock(p).value)


@dataclass(frozen=True)
class Benefit:
    holds: bool
    lhs: float
    rhs: float
    note: str = ""

    @property
    def margin(self) -> float:
        return self.rhs - self.lhs


def bamboo_benefit_holds(p: ModelParams) -> Benefit:
    lhs = p.N ** 2 * p.K ** 4 / (2 * p.D ** 2)
    rhs = (p.K - 1) / (p.K + 1)
    note = "single-access transactions gain nothing from retiring" if p.K <= 1 else ""
    return Benefit(lhs < rhs, lhs, rhs, note)


def a_bamboo(K: float) -> float:
    return 1.0 / (K + 1)


A_WOUND_WAIT = 0.5


def throughput_proportional(p: ModelParams, A: float, P_conflict: float,
                            B: float, P_abort: float) -> Clamped:
    for name, v in (("A", A), ("B", B), ("P_conflict", P_conflict), ("P_abort", P_abort)):
        if not 0.0 <= v <= 1.0:
            raise ValueError(f"{name}={v} outside [0, 1]")
    raw = p.N / ((p.K + 1) * p.t) * (1 - A * P_conflict - B * P_abort)
    return Clamped(max(raw, 0.0), raw, raw < 0)


def summary(p: ModelParams) -> dict:
    pc, pd, pcas = p_conflict(p), p_deadlock(p), p_cascade_bound(p)
    ben = bamboo_benefit_holds(p)
    bb = throughput_proportional(p, a_bamboo(p.K), pc.value, 1.0, pcas.value)
    ww = throughput_proportional(p, A_WOUND_WAIT, pc.value, 0.0, 0.0)
    return {
        "K": p.K, "N": p.N, "D": p.D, "t": p.t,
        "p_conflict": pc.value, "p_conflict_clamped": pc.clamped,
        "p_deadlock": pd.value, "p_deadlock_clamped": pd.clamped,
        "p_cascade_bound": pcas.value,
        "benefit_holds": ben.holds, "benefit_lhs": ben.lhs, "benefit_rhs": ben.rhs,
        "benefit_margin": ben.margin,
        "A_bb": a_bamboo(p.K), "A_ww": A_WOUND_WAIT,
        "throughput_bb": bb.value, "throughput_ww": ww.value,
    }
